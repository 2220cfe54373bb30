"""Data generation: exact sampling from a latent-plus-graph truth, Gibbs
sampling from a fitted marginal model, and the built-in study designs.

A draw from the generating model is (theta, x): theta comes from its exact
marginal via accept/reject under a wide Gaussian proposal, and x given theta
factorizes over the connected components of the graph, each small enough to
enumerate.  The Gibbs sampler targets the marginal model f(x) directly and
is only used where a fitted (L, S) has no block structure to exploit.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import minimize
from scipy.special import expit, logsumexp

from .data import BinaryDataset
from .pseudolik import FlagParams, check_symmetric

__all__ = [
    "SimDesign",
    "SimTruth",
    "GibbsConfig",
    "AcceptRejectInfo",
    "builtin_design",
    "theta_log_density_unnorm",
    "sample_theta",
    "sample_x_given_theta",
    "simulate_dataset",
    "gibbs_sample",
    "gibbs_sample_chains",
    "write_truth_json",
    "load_truth_json",
]

MAX_BLOCK = 20


def _connected_components(s_off: np.ndarray) -> list[tuple[int, ...]]:
    jdim = s_off.shape[0]
    parent = list(range(jdim))

    def find(v):
        while parent[v] != v:
            parent[v] = parent[parent[v]]
            v = parent[v]
        return v

    for i in range(jdim):
        for j in range(i + 1, jdim):
            if s_off[i, j] != 0.0:
                ri, rj = find(i), find(j)
                if ri != rj:
                    parent[max(ri, rj)] = min(ri, rj)
    comps: dict[int, list[int]] = {}
    for v in range(jdim):
        comps.setdefault(find(v), []).append(v)
    return [tuple(sorted(members)) for _, members in sorted(comps.items())]


@dataclass
class SimDesign:
    """Generating truth: loadings A (J x K), symmetric S, and the connected
    components of S's off-diagonal graph (each component capped at 20 items
    so its outcomes can be enumerated exactly)."""

    a: np.ndarray
    s: np.ndarray
    setting: int | None = None
    blocks: list[tuple[int, ...]] = field(init=False)

    def __post_init__(self):
        self.a = np.asarray(self.a, dtype=np.float64)
        if self.a.ndim != 2:
            raise ValueError("A must be 2-D")
        self.s = check_symmetric(self.s, "S")
        if self.s.shape[0] != self.a.shape[0]:
            raise ValueError("A and S disagree on the number of items")
        off = self.s.copy()
        np.fill_diagonal(off, 0.0)
        self.blocks = _connected_components(off)
        worst = max(len(b) for b in self.blocks)
        if worst > MAX_BLOCK:
            raise ValueError(f"a graph component has {worst} items; cap is {MAX_BLOCK}")
        self._block_tables = None
        self._envelope = None

    @property
    def n_items(self) -> int:
        return self.a.shape[0]

    @property
    def k(self) -> int:
        return self.a.shape[1]

    @property
    def l_true(self) -> np.ndarray:
        l = self.a @ self.a.T
        return (l + l.T) / 2.0

    def params(self) -> FlagParams:
        return FlagParams(L=self.l_true, S=self.s)

    def edge_set(self) -> tuple[tuple[int, int], ...]:
        jdim = self.n_items
        return tuple(
            (i, j) for i in range(jdim) for j in range(i + 1, jdim) if self.s[i, j] != 0.0
        )

    def _tables(self):
        # per block: (item indices, outcome matrix 2^b x b, outcome energies)
        if self._block_tables is None:
            tables = []
            for block in self.blocks:
                b = len(block)
                idx = np.arange(1 << b)
                outcomes = ((idx[:, None] >> np.arange(b)) & 1).astype(np.float64)
                sub = self.s[np.ix_(block, block)]
                energies = 0.5 * np.einsum("xi,ij,xj->x", outcomes, sub, outcomes)
                tables.append((np.asarray(block, dtype=np.intp), outcomes, energies))
            self._block_tables = tables
        return self._block_tables


@dataclass(frozen=True)
class SimTruth:
    """What the generator used, kept alongside the dataset for scoring."""

    a: np.ndarray
    s: np.ndarray
    l: np.ndarray
    setting: int | None
    seed: int | None
    thetas: np.ndarray | None = None


@dataclass(frozen=True)
class GibbsConfig:
    burn_in_sweeps: int = 500
    thin_sweeps: int = 5
    seed: int = 0

    def __post_init__(self):
        if self.burn_in_sweeps < 1 or self.thin_sweeps < 1:
            raise ValueError("burn_in_sweeps and thin_sweeps must be at least 1")


@dataclass(frozen=True)
class AcceptRejectInfo:
    n_accepted: int
    n_proposed: int

    @property
    def acceptance_rate(self) -> float:
        return self.n_accepted / self.n_proposed if self.n_proposed else math.nan


DEFAULT_LOADINGS = {1: 0.3, 2: 0.3, 3: 0.45}


def builtin_design(setting: int, edge_strength: float = 1.0,
                   loading: float | None = None) -> SimDesign:
    """The three J=30 study designs.

    Setting 1: one factor, 15 pair edges {0,1}, {2,3}, ...
    Setting 2: one factor, 10 triangle blocks {0,1,2}, {3,4,5}, ...
    Setting 3: two factors on alternating items, same graph as setting 1.

    Per-setting default loadings keep each design comfortably below the
    ordering transition of its coupling graph (a J-item block tolerates
    squared loadings only up to roughly 4/J) while leaving the latent
    eigenvalues large enough to recover; uniform couplings much past that
    collapse the data onto all-zeros/all-ones clusters and make every
    conditional saturate.  Diagonals of S are chosen so every column of
    L + S sums to zero, which makes the marginal model symmetric under
    x -> 1 - x and pins every item mean at exactly one half.
    """
    jdim = 30
    if setting == 1 or setting == 3:
        pairs = [(j, j + 1) for j in range(0, jdim, 2)]
    elif setting == 2:
        pairs = []
        for j in range(0, jdim, 3):
            pairs += [(j, j + 1), (j, j + 2), (j + 1, j + 2)]
    else:
        raise ValueError(f"setting must be 1, 2, or 3, got {setting}")
    if loading is None:
        loading = DEFAULT_LOADINGS[setting]

    if setting == 3:
        a = np.zeros((jdim, 2))
        a[0::2, 0] = loading
        a[1::2, 1] = loading
    else:
        a = np.full((jdim, 1), loading)

    s = np.zeros((jdim, jdim))
    for i, j in pairs:
        s[i, j] = s[j, i] = edge_strength
    m_off = a @ a.T + s
    np.fill_diagonal(m_off, 0.0)
    np.fill_diagonal(s, -m_off.sum(axis=0) - np.diag(a @ a.T))
    return SimDesign(a=a, s=s, setting=setting)


def theta_log_density_unnorm(design: SimDesign, theta) -> float | np.ndarray:
    """Log of the unnormalized marginal density of the latent vector.

    The outcome sum factorizes over graph components, so the cost is
    sum_b 2^{|b|} instead of 2^J.
    """
    theta = np.asarray(theta, dtype=np.float64)
    single = theta.ndim == 1
    th = theta[None, :] if single else theta
    if th.shape[1] != design.k:
        raise ValueError(f"theta must have {design.k} coordinates")
    atheta = th @ design.a.T
    total = -0.5 * (th * th).sum(axis=1)
    for block, outcomes, energies in design._tables():
        scores = outcomes @ atheta[:, block].T + energies[:, None]
        total = total + logsumexp(scores, axis=0)
    return float(total[0]) if single else total


def _theta_log_density_grad(design: SimDesign, th: np.ndarray) -> np.ndarray:
    atheta = th @ design.a.T
    grad = -th.copy()
    for block, outcomes, energies in design._tables():
        scores = outcomes @ atheta[:, block].T + energies[:, None]
        scores -= scores.max(axis=0, keepdims=True)
        w = np.exp(scores)
        w /= w.sum(axis=0, keepdims=True)
        mean_x = w.T @ outcomes
        grad += mean_x @ design.a[block, :]
    return grad


def _envelope(design: SimDesign) -> tuple[float, float]:
    """Proposal sd and log envelope constant for accept/reject.

    Proposal is N(0, c^2 I) with c^2 = 1 + smax(A)^2 J / 4, which dominates
    the target (a unit-variance Gaussian location mixture).  The constant is
    the numerically maximized log ratio, inflated by one percent, and every
    proposal re-checks it at run time.
    """
    if design._envelope is not None:
        return design._envelope
    smax = np.linalg.svd(design.a, compute_uv=False)
    smax = float(smax[0]) if smax.size else 0.0
    c = math.sqrt(1.0 + smax * smax * design.n_items / 4.0)
    k = design.k
    log_q_const = -k * math.log(c * math.sqrt(2.0 * math.pi))

    def neg_ratio(v):
        th = v[None, :]
        val = theta_log_density_unnorm(design, v) - (
            -0.5 * float(v @ v) / (c * c) + log_q_const
        )
        grad = _theta_log_density_grad(design, th)[0] + v / (c * c)
        return -val, -grad

    reach = smax * math.sqrt(design.n_items) + 3.0
    if k == 0:
        design._envelope = (c, float(theta_log_density_unnorm(design, np.zeros(0))) - log_q_const)
        return design._envelope
    axis = np.linspace(-reach, reach, 7)
    if k == 1:
        starts = [np.array([v]) for v in axis]
    else:
        grids = np.meshgrid(*([axis] * k))
        starts = list(np.stack([g.ravel() for g in grids], axis=1))
    best = -math.inf
    for start in starts:
        res = minimize(neg_ratio, start, jac=True, method="L-BFGS-B")
        best = max(best, -float(res.fun))
    design._envelope = (c, best + math.log(1.01))
    return design._envelope


def sample_theta(design: SimDesign, rng, size: int | None = None,
                 return_info: bool = False):
    """Exact draws from the latent marginal by accept/reject.

    Returns a (K,) vector, or an (n, K) array when `size` is given; with
    `return_info`, also the acceptance statistics.  A proposal whose
    density ratio exceeds the envelope aborts loudly, since that falsifies
    the envelope bound.
    """
    c, log_m = _envelope(design)
    k = design.k
    need = 1 if size is None else int(size)
    out = np.empty((need, k))
    got = 0
    proposed = 0
    log_q_const = -k * math.log(c * math.sqrt(2.0 * math.pi))
    while got < need:
        rate_guess = max(0.02, got / proposed) if proposed else 0.2
        batch = max(64, int(1.3 * (need - got) / rate_guess))
        props = rng.standard_normal((batch, k)) * c
        log_u = np.log(rng.random(batch))
        log_q = -0.5 * (props * props).sum(axis=1) / (c * c) + log_q_const
        log_ratio = theta_log_density_unnorm(design, props) - log_q - log_m
        worst = float(log_ratio.max()) if batch else -math.inf
        if worst > 1e-9:
            raise RuntimeError(
                f"accept/reject envelope violated: log ratio {worst:.3e} > 0 at "
                f"theta={props[int(log_ratio.argmax())]}; recompute the envelope"
            )
        acc = props[log_u <= log_ratio]
        take = min(acc.shape[0], need - got)
        out[got: got + take] = acc[:take]
        got += take
        proposed += batch
    result = out[0] if size is None else out
    if return_info:
        return result, AcceptRejectInfo(n_accepted=need, n_proposed=proposed)
    return result


def sample_x_given_theta(design: SimDesign, theta, rng) -> np.ndarray:
    """Exact draw of the responses given theta, one graph component at a time.

    Accepts a single (K,) theta or an (n, K) batch.
    """
    theta = np.asarray(theta, dtype=np.float64)
    single = theta.ndim == 1
    th = theta[None, :] if single else theta
    n = th.shape[0]
    atheta = th @ design.a.T
    x = np.zeros((n, design.n_items), dtype=np.int8)
    for block, outcomes, energies in design._tables():
        scores = outcomes @ atheta[:, block].T + energies[:, None]
        scores -= scores.max(axis=0, keepdims=True)
        probs = np.exp(scores)
        probs /= probs.sum(axis=0, keepdims=True)
        cums = np.cumsum(probs, axis=0)
        u = rng.random(n)
        pick = np.minimum((u[None, :] > cums).sum(axis=0), outcomes.shape[0] - 1)
        x[:, block] = outcomes[pick].astype(np.int8)
    return x[0] if single else x


def _rng_from_seed(seed) -> np.random.Generator:
    if isinstance(seed, np.random.SeedSequence):
        return np.random.Generator(np.random.Philox(seed))
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(int(seed))))


def simulate_dataset(design: SimDesign, n: int, seed) -> tuple[BinaryDataset, SimTruth]:
    """N i.i.d. (theta, x) pairs; returns the responses and the truth used."""
    if n < 0:
        raise ValueError("n must be nonnegative")
    rng = _rng_from_seed(seed)
    if n == 0:
        thetas = np.zeros((0, design.k))
        x = np.zeros((0, design.n_items), dtype=np.int8)
    else:
        thetas = sample_theta(design, rng, size=n)
        x = sample_x_given_theta(design, thetas, rng)
    truth = SimTruth(
        a=design.a.copy(), s=design.s.copy(), l=design.l_true,
        setting=design.setting,
        seed=int(seed) if isinstance(seed, (int, np.integer)) else None,
        thetas=thetas,
    )
    return BinaryDataset(x), truth


def _stable_prob(eta: float) -> float:
    if eta >= 0:
        return 1.0 / (1.0 + math.exp(-eta))
    e = math.exp(eta)
    return e / (1.0 + e)


def gibbs_sample(params: FlagParams, n: int, config: GibbsConfig) -> BinaryDataset:
    """Single-site Gibbs chain targeting f(x) under the combined matrix.

    One chain: uniform random start, `burn_in_sweeps` discarded, then one
    state retained every `thin_sweeps` full sweeps until n states.
    """
    if n < 1:
        raise ValueError("n must be at least 1")
    m = params.M
    jdim = m.shape[0]
    diag = np.diag(m).copy()
    rng = _rng_from_seed(config.seed)
    state = (rng.random(jdim) < 0.5).astype(np.float64)
    v = m @ state
    total_sweeps = config.burn_in_sweeps + n * config.thin_sweeps
    out = np.empty((n, jdim), dtype=np.int8)
    kept = 0
    done = 0
    while done < total_sweeps:
        chunk = min(4096, total_sweeps - done)
        uniforms = rng.random((chunk, jdim))
        for t in range(chunk):
            row = uniforms[t]
            for j in range(jdim):
                eta = v[j] - diag[j] * state[j] + diag[j] / 2.0
                new = 1.0 if row[j] < _stable_prob(float(eta)) else 0.0
                if new != state[j]:
                    v += (new - state[j]) * m[:, j]
                    state[j] = new
            sweep = done + t + 1
            if sweep > config.burn_in_sweeps and (sweep - config.burn_in_sweeps) % config.thin_sweeps == 0:
                out[kept] = state.astype(np.int8)
                kept += 1
        done += chunk
    return BinaryDataset(out)


def gibbs_sample_chains(params: FlagParams, n: int, config: GibbsConfig,
                        n_chains: int) -> np.ndarray:
    """`n_chains` independent Gibbs chains advanced in lockstep.

    Chain b uses its own counter-based stream spawned as (seed, b), so the
    result is deterministic for any chunking or chain count.  Returns an
    (n_chains, n, J) int8 array of retained states.
    """
    if n < 1 or n_chains < 1:
        raise ValueError("n and n_chains must be at least 1")
    m = params.M
    jdim = m.shape[0]
    diag = np.diag(m).copy()
    rngs = [
        np.random.Generator(np.random.Philox(
            np.random.SeedSequence(entropy=int(config.seed), spawn_key=(b,))
        ))
        for b in range(n_chains)
    ]
    state = np.stack([(rng.random(jdim) < 0.5).astype(np.float64) for rng in rngs])
    v = state @ m
    total_sweeps = config.burn_in_sweeps + n * config.thin_sweeps
    out = np.empty((n_chains, n, jdim), dtype=np.int8)
    kept = 0
    done = 0
    max_chunk = max(1, int(4_000_000 / max(1, n_chains * jdim)))
    while done < total_sweeps:
        chunk = min(max_chunk, total_sweeps - done)
        uniforms = np.stack([rng.random((chunk, jdim)) for rng in rngs])
        for t in range(chunk):
            for j in range(jdim):
                eta = v[:, j] - diag[j] * state[:, j] + diag[j] / 2.0
                new = (uniforms[:, t, j] < expit(eta)).astype(np.float64)
                delta = new - state[:, j]
                hit = delta != 0.0
                if hit.any():
                    v[hit] += delta[hit, None] * m[j]
                    state[:, j] = new
            sweep = done + t + 1
            if sweep > config.burn_in_sweeps and (sweep - config.burn_in_sweeps) % config.thin_sweeps == 0:
                out[:, kept] = state.astype(np.int8)
                kept += 1
        done += chunk
    return out


def write_truth_json(truth: SimTruth, path) -> None:
    doc = {
        "L": truth.l.tolist(),
        "S": truth.s.tolist(),
        "A": truth.a.tolist(),
        "setting": truth.setting,
        "seed": truth.seed,
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=1)
        fh.write("\n")


def load_truth_json(path) -> SimTruth:
    with open(path, "r", encoding="utf-8") as fh:
        doc = json.load(fh)
    return SimTruth(
        a=np.asarray(doc["A"], dtype=np.float64),
        s=np.asarray(doc["S"], dtype=np.float64),
        l=np.asarray(doc["L"], dtype=np.float64),
        setting=doc.get("setting"),
        seed=doc.get("seed"),
    )
