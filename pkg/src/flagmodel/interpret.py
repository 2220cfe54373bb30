"""Post-fit interpretation: loadings, varimax rotation, factor scores,
scale correlations, and maximal cliques of the estimated conditional graph.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .pseudolik import LoadingMatrix

__all__ = [
    "RotationResult",
    "ScaleKey",
    "loadings_from_L",
    "varimax",
    "varimax_criterion",
    "factor_scores",
    "scale_correlations",
    "maximal_cliques",
    "load_scale_key",
    "write_clique_report",
]


@dataclass(frozen=True)
class RotationResult:
    """Rotated loadings A @ T together with the orthogonal T applied."""

    A_rot: np.ndarray
    T: np.ndarray
    criterion_value: float


@dataclass(frozen=True)
class ScaleKey:
    """Assignment of items to named scales; reverse-scoring is informational."""

    assignment: dict[int, str]
    reverse_scored: frozenset[int] = frozenset()

    @property
    def labels(self) -> list[str]:
        return sorted(set(self.assignment.values()))

    def items_of(self, label: str) -> list[int]:
        return sorted(i for i, lab in self.assignment.items() if lab == label)


def loadings_from_L(l_matrix, k: int) -> LoadingMatrix:
    """Loadings from the top-K eigenpairs of a PSD matrix: A = U_1 D_1^{1/2}.

    Columns are ordered by descending eigenvalue and sign-fixed so each
    column's largest-magnitude entry is positive.
    """
    l_matrix = np.asarray(l_matrix, dtype=np.float64)
    jdim = l_matrix.shape[0]
    if not 0 <= k <= jdim:
        raise ValueError(f"K={k} out of range for J={jdim}")
    w, v = np.linalg.eigh((l_matrix + l_matrix.T) / 2.0)
    order = np.argsort(-w, kind="stable")
    w, v = w[order], v[:, order]
    top = w[:k]
    floor = -1e-8 * max(1.0, float(w[0]) if w.size else 1.0)
    if k and top.min() < floor:
        raise ValueError(f"L has a negative top-{k} eigenvalue: {top.min():.3e}")
    a = v[:, :k] * np.sqrt(np.maximum(top, 0.0))
    return LoadingMatrix(_fix_signs(a))


def _fix_signs(a: np.ndarray) -> np.ndarray:
    a = a.copy()
    for col in range(a.shape[1]):
        if a.shape[0] and a[np.abs(a[:, col]).argmax(), col] < 0:
            a[:, col] = -a[:, col]
    return a


def varimax_criterion(a: np.ndarray, kaiser: bool = False) -> float:
    """Sum over factors of the variance of squared loadings."""
    a = np.asarray(a, dtype=np.float64)
    if kaiser:
        a = _kaiser_normalize(a)[0]
    sq = a * a
    return float((sq * sq).mean(axis=0).sum() - (sq.mean(axis=0) ** 2).sum())


def _kaiser_normalize(a: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    h = np.sqrt((a * a).sum(axis=1))
    scale = np.where(h > 0, h, 1.0)
    return a / scale[:, None], scale


def varimax(a, kaiser: bool = True, tol: float = 1e-8, max_sweeps: int = 1000) -> RotationResult:
    """Rotate loadings to a varimax optimum by pairwise planar rotations.

    Kaiser row normalization (on by default) is applied before the sweeps
    and undone afterwards; the same orthogonal T applies to the raw matrix
    either way.  The criterion is checked to be non-decreasing every sweep.
    """
    if isinstance(a, LoadingMatrix):
        a = a.A
    a = np.asarray(a, dtype=np.float64)
    jdim, k = a.shape
    if k < 1:
        raise ValueError("need at least one factor")
    if k == 1:
        return RotationResult(A_rot=a.copy(), T=np.eye(1), criterion_value=varimax_criterion(a))

    work = _kaiser_normalize(a)[0] if kaiser else a.copy()
    t = np.eye(k)
    crit = varimax_criterion(work)
    for _ in range(max_sweeps):
        for p in range(k - 1):
            for q in range(p + 1, k):
                x, y = work[:, p], work[:, q]
                u = x * x - y * y
                v = 2.0 * x * y
                su, sv = u.sum(), v.sum()
                num = 2.0 * (u * v).sum() - 2.0 * su * sv / jdim
                den = (u * u - v * v).sum() - (su * su - sv * sv) / jdim
                phi = 0.25 * np.arctan2(num, den)
                if abs(phi) < 1e-14:
                    continue
                c, s = np.cos(phi), np.sin(phi)
                rot = np.array([[c, -s], [s, c]])
                work[:, [p, q]] = work[:, [p, q]] @ rot
                t[:, [p, q]] = t[:, [p, q]] @ rot
        new_crit = varimax_criterion(work)
        if new_crit < crit - 1e-12 * max(1.0, abs(crit)):
            raise RuntimeError("varimax criterion decreased during a sweep")
        if new_crit - crit <= tol * max(1.0, abs(crit)):
            crit = new_crit
            break
        crit = new_crit

    a_rot = a @ t
    # deterministic reporting: order columns by descending sum of squares,
    # then make each column's largest-magnitude entry positive
    order = np.argsort(-(a_rot * a_rot).sum(axis=0), kind="stable")
    t = t[:, order]
    a_rot = a_rot[:, order]
    for col in range(k):
        if a_rot[np.abs(a_rot[:, col]).argmax(), col] < 0:
            a_rot[:, col] = -a_rot[:, col]
            t[:, col] = -t[:, col]
    return RotationResult(A_rot=a_rot, T=t, criterion_value=varimax_criterion(a_rot))


def factor_scores(a, data) -> np.ndarray:
    """Posterior-mean factor scores: row i is A' x_i."""
    if isinstance(a, LoadingMatrix):
        a = a.A
    a = np.asarray(a, dtype=np.float64)
    if a.shape[0] != data.n_items:
        raise ValueError(f"A has {a.shape[0]} rows but data has J={data.n_items}")
    return data.x @ a


def scale_correlations(scores: np.ndarray, key: ScaleKey, data) -> np.ndarray:
    """Pearson correlation of each score column with each scale total.

    Columns follow `key.labels` order; undefined correlations (zero
    variance) come back as NaN.
    """
    scores = np.asarray(scores, dtype=np.float64)
    labels = key.labels
    if not labels:
        raise ValueError("scale key has no scales")
    totals = np.column_stack([data.x[:, key.items_of(lab)].sum(axis=1) for lab in labels])
    out = np.full((scores.shape[1], len(labels)), np.nan)
    for i in range(scores.shape[1]):
        si = scores[:, i] - scores[:, i].mean()
        vi = float(si @ si)
        for j in range(len(labels)):
            tj = totals[:, j] - totals[:, j].mean()
            vj = float(tj @ tj)
            if vi > 0 and vj > 0:
                out[i, j] = float(si @ tj) / np.sqrt(vi * vj)
    return out


def maximal_cliques(edge_set, n_vertices: int, min_size: int = 1) -> list[tuple[int, ...]]:
    """All maximal cliques of size >= min_size, canonically ordered.

    Exact enumeration (Bron-Kerbosch with pivoting); every returned clique
    is sorted and the list is sorted lexicographically.  Isolated vertices
    count as maximal cliques of size 1.
    """
    adj: dict[int, set[int]] = {v: set() for v in range(n_vertices)}
    for i, j in edge_set:
        if not (0 <= i < n_vertices and 0 <= j < n_vertices) or i == j:
            raise ValueError(f"bad edge ({i}, {j}) for {n_vertices} vertices")
        adj[i].add(j)
        adj[j].add(i)

    out: list[tuple[int, ...]] = []

    def expand(r: list[int], p: set[int], x: set[int]) -> None:
        if not p and not x:
            out.append(tuple(sorted(r)))
            return
        pivot = max(sorted(p | x), key=lambda v: len(adj[v] & p))
        for v in sorted(p - adj[pivot]):
            expand(r + [v], p & adj[v], x & adj[v])
            p.remove(v)
            x.add(v)

    expand([], set(range(n_vertices)), set())
    return sorted(c for c in out if len(c) >= min_size)


def load_scale_key(path) -> ScaleKey:
    """Read a scale key CSV with columns item_index, scale_label, reverse_flag."""
    assignment: dict[int, str] = {}
    reverse: set[int] = set()
    with open(path, "r", encoding="utf-8") as fh:
        lines = [ln.strip() for ln in fh if ln.strip()]
    for row, ln in enumerate(lines):
        parts = [p.strip() for p in ln.split(",")]
        if row == 0 and not parts[0].lstrip("-").isdigit():
            continue
        if len(parts) < 2:
            raise ValueError(f"scale key row {row + 1}: need item_index,scale_label[,reverse_flag]")
        item = int(parts[0])
        if item in assignment:
            raise ValueError(f"item {item} assigned to more than one scale")
        assignment[item] = parts[1]
        if len(parts) > 2 and parts[2] in ("1", "true", "True"):
            reverse.add(item)
    return ScaleKey(assignment=assignment, reverse_scored=frozenset(reverse))


def write_clique_report(cliques, s_matrix, path, min_size: int = 3) -> None:
    """List cliques of at least `min_size` with their within-clique edge sums,
    strongest first."""
    s_matrix = np.asarray(s_matrix)
    rows = []
    for clique in cliques:
        if len(clique) < min_size:
            continue
        total = sum(
            s_matrix[a, b] for ai, a in enumerate(clique) for b in clique[ai + 1:]
        )
        rows.append((len(clique), total, clique))
    rows.sort(key=lambda r: (-r[0], -r[1], r[2]))
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"maximal cliques with at least {min_size} vertices: {len(rows)}\n")
        for size, total, clique in rows:
            members = " ".join(str(v) for v in clique)
            fh.write(f"size {size}  edge_sum {total:.6g}  items {members}\n")
