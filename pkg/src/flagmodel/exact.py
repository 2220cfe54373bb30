"""Brute-force ground truth for small J: exact joint pmf and conditionals.

Enumeration cost is 2^J, so everything here is capped at J <= 25.  Bit-order
convention: outcome index bit k (least significant first) is item k, i.e.
index = sum_k x_k * 2^k.  This module is the oracle the probabilistic code
is tested against; keep it independent of the fast paths.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .pseudolik import FlagParams, check_symmetric

__all__ = ["ExactPmf", "enumerate_pmf", "ising_normalizer", "exact_conditional", "dump_pmf_csv"]

MAX_ITEMS = 25


@dataclass(frozen=True)
class ExactPmf:
    """All 2^J outcome probabilities plus the log normalizing constant."""

    n_items: int
    probs: np.ndarray
    log_normalizer: float

    def index_of(self, x) -> int:
        """Outcome index of a binary vector under the bit-order convention."""
        x = np.asarray(x)
        return int((x.astype(np.int64) << np.arange(self.n_items)).sum())

    def prob_of(self, x) -> float:
        return float(self.probs[self.index_of(x)])


def _combined(params) -> np.ndarray:
    if isinstance(params, FlagParams):
        return params.M
    return check_symmetric(params, "M")


def _log_weights(m: np.ndarray) -> np.ndarray:
    """log w(x) = x'Mx / 2 for every outcome, without materializing outcomes.

    Holds O(2^J) memory regardless of J by extracting one bit column at a
    time from the outcome index.
    """
    j = m.shape[0]
    if j > MAX_ITEMS:
        raise ValueError(f"J={j} exceeds the enumeration cap of {MAX_ITEMS} (cost is 2^J)")
    idx = np.arange(1 << j, dtype=np.int32)
    lw = np.zeros(1 << j)
    for a in range(j):
        bit_a = ((idx >> a) & 1).astype(np.float64)
        if m[a, a] != 0.0:
            lw += (m[a, a] / 2.0) * bit_a
        for b in range(a + 1, j):
            if m[a, b] != 0.0:
                lw += m[a, b] * (bit_a * ((idx >> b) & 1))
    return lw


def enumerate_pmf(params) -> ExactPmf:
    """Exact pmf of the combined model: probs[x] = exp{x'Mx/2} / z."""
    m = _combined(params)
    lw = _log_weights(m)
    peak = lw.max()
    log_z = peak + np.log(np.exp(lw - peak).sum())
    probs = np.exp(lw - log_z)
    probs.setflags(write=False)
    return ExactPmf(n_items=m.shape[0], probs=probs, log_normalizer=float(log_z))


def ising_normalizer(s) -> float:
    """z(S) = sum_x exp{x'Sx/2} over all binary vectors."""
    s = check_symmetric(s, "S")
    lw = _log_weights(s)
    peak = lw.max()
    return float(np.exp(peak) * np.exp(lw - peak).sum())


def exact_conditional(params, x, j: int) -> float:
    """P(X_j = 1 | x_{-j}) computed as a ratio of enumerated joint probabilities."""
    m = _combined(params)
    jdim = m.shape[0]
    if not 0 <= j < jdim:
        raise IndexError(f"item index {j} out of range for J={jdim}")
    pmf = enumerate_pmf(m)
    x1 = np.asarray(x).copy()
    x1[j] = 1
    x0 = x1.copy()
    x0[j] = 0
    p1 = pmf.prob_of(x1)
    p0 = pmf.prob_of(x0)
    return p1 / (p0 + p1)


def dump_pmf_csv(pmf: ExactPmf, path) -> None:
    """Write (bit string, probability) rows for debugging."""
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("bits,probability\n")
        for idx in range(pmf.probs.size):
            bits = "".join(str((idx >> k) & 1) for k in range(pmf.n_items))
            fh.write(f"{bits},{pmf.probs[idx]:.17g}\n")
