"""Parameter types and the pseudo-likelihood machinery.

The model for a binary vector x is f(x) proportional to exp{x'Mx / 2} with
M = L + S, where L is positive semidefinite (latent part, L = AA') and S is
symmetric with a sparse off-diagonal (graphical part).  Every probabilistic
quantity here is driven by the closed-form conditional of one coordinate
given the rest:

    P(X_j = 1 | x_{-j}) = logistic( m_jj / 2 + sum_{i != j} m_ij x_i ).

The pseudo-likelihood multiplies these conditionals over items and subjects,
and h(M) = -(1/N) log PL is the smooth convex loss every solver minimizes.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit

__all__ = [
    "FlagParams",
    "LoadingMatrix",
    "check_symmetric",
    "conditional_prob",
    "log_pseudo_likelihood",
    "pl_loss",
    "pl_loss_grad_free",
    "pl_loss_value_grad",
    "grad_h",
]

# Relative tolerance for accepting a matrix as symmetric; inputs beyond it
# are rejected rather than silently symmetrized.
SYMMETRY_RTOL = 1e-10

# Eigenvalue cutoff for "numerically zero": relative to the largest
# eigenvalue, floored at 1.
RANK_RTOL = 1e-8


def check_symmetric(m: np.ndarray, name: str = "matrix") -> np.ndarray:
    """Validate that `m` is square and symmetric to SYMMETRY_RTOL (relative)."""
    m = np.asarray(m, dtype=np.float64)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise ValueError(f"{name} must be square, got shape {m.shape}")
    scale = max(1.0, np.abs(m).max()) if m.size else 1.0
    asym = np.abs(m - m.T).max() if m.size else 0.0
    if asym > SYMMETRY_RTOL * scale:
        raise ValueError(
            f"{name} is not symmetric: max |m - m'| = {asym:.3e} "
            f"exceeds {SYMMETRY_RTOL:.0e} * {scale:.3e}"
        )
    return m


def _symmetrize(m: np.ndarray) -> np.ndarray:
    return (m + m.T) / 2.0


@dataclass(frozen=True)
class FlagParams:
    """The (L, S) pair: PSD low-rank latent part plus symmetric sparse part.

    Inputs are validated against SYMMETRY_RTOL and then symmetrized exactly,
    so `L == L.T` and `S == S.T` hold entrywise on the stored arrays.  L must
    be positive semidefinite up to a small relative eigenvalue tolerance.
    """

    L: np.ndarray
    S: np.ndarray

    def __post_init__(self):
        L = _symmetrize(check_symmetric(self.L, "L"))
        S = _symmetrize(check_symmetric(self.S, "S"))
        if L.shape != S.shape:
            raise ValueError(f"L and S shapes differ: {L.shape} vs {S.shape}")
        w = np.linalg.eigvalsh(L)
        floor = -RANK_RTOL * max(1.0, w[-1] if w.size else 1.0)
        if w.size and w[0] < floor:
            raise ValueError(f"L is not positive semidefinite: min eigenvalue {w[0]:.3e}")
        L.setflags(write=False)
        S.setflags(write=False)
        object.__setattr__(self, "L", L)
        object.__setattr__(self, "S", S)

    @property
    def n_items(self) -> int:
        return self.L.shape[0]

    @property
    def M(self) -> np.ndarray:
        """Combined matrix L + S (the only functional of (L, S) the likelihood sees)."""
        return self.L + self.S


@dataclass(frozen=True)
class LoadingMatrix:
    """A J x K loading matrix; A A' reconstructs (an approximation of) L."""

    A: np.ndarray
    K: int = field(init=False)

    def __post_init__(self):
        A = np.asarray(self.A, dtype=np.float64)
        if A.ndim != 2:
            raise ValueError(f"A must be 2-D, got shape {A.shape}")
        if A.shape[1] > A.shape[0]:
            raise ValueError(f"K={A.shape[1]} exceeds J={A.shape[0]}")
        A.setflags(write=False)
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "K", A.shape[1])

    @property
    def n_items(self) -> int:
        return self.A.shape[0]


def _as_combined(params) -> np.ndarray:
    """Accept FlagParams or a bare symmetric matrix; return validated M."""
    if isinstance(params, FlagParams):
        return params.M
    return check_symmetric(params, "M")


def _softplus(t: np.ndarray) -> np.ndarray:
    # log(1 + e^t) = max(t, 0) + log1p(e^{-|t|}), stable on both tails
    return np.maximum(t, 0.0) + np.log1p(np.exp(-np.abs(t)))


def _log_sigmoid(t: np.ndarray) -> np.ndarray:
    return -_softplus(-t)


def conditional_prob(m, x, j: int) -> float:
    """P(X_j = 1 | X_{-j} = x_{-j}) under the combined matrix M.

    `x` is a binary vector of length J whose j-th entry is ignored;
    item indices are 0-based.
    """
    m = _as_combined(m)
    jdim = m.shape[0]
    if not 0 <= j < jdim:
        raise IndexError(f"item index {j} out of range for J={jdim}")
    x = np.asarray(x, dtype=np.float64)
    if x.shape != (jdim,):
        raise ValueError(f"x must have shape ({jdim},), got {x.shape}")
    if not np.isin(x, (0.0, 1.0)).all():
        raise ValueError("x must be binary")
    eta = m[j, j] / 2.0 + m[:, j] @ x - m[j, j] * x[j]
    return float(expit(eta))


def _linear_predictors(m: np.ndarray, x: np.ndarray) -> np.ndarray:
    """eta[i, j] = m_jj/2 + sum_{l != j} m_lj x_il for every subject and item.

    `m` may be asymmetric: column j alone defines item j's predictor, which
    is what makes the loss separable across columns.
    """
    d = np.diag(m)
    return x @ m - x * d + d / 2.0


def log_pseudo_likelihood(params, data) -> float:
    """Sum over subjects and items of the log conditional likelihoods."""
    m = _as_combined(params)
    x = _check_dims(m, data)
    eta = _linear_predictors(m, x)
    # log L_j = log sigma(eta) when x=1, log(1 - sigma(eta)) when x=0
    return float(_log_sigmoid((2.0 * x - 1.0) * eta).sum())


def pl_loss(m: np.ndarray, data) -> float:
    """h(M) = -(1/N) log pseudo-likelihood, as a function of the raw matrix.

    No symmetry check: columns are independent coordinates here, which is
    exactly the form the proximal solver needs.
    """
    x = _check_dims(m, data)
    eta = _linear_predictors(m, x)
    return float(-_log_sigmoid((2.0 * x - 1.0) * eta).sum() / data.n_subjects)


def pl_loss_grad_free(m: np.ndarray, data) -> np.ndarray:
    """Gradient of `pl_loss` treating all J^2 entries as free coordinates.

    Entry (l, j) is the derivative of h with respect to m_lj; only the j-th
    conditional term involves column j.
    """
    x = _check_dims(m, data)
    eta = _linear_predictors(m, x)
    r = expit(eta) - x
    g = (x.T @ r) / data.n_subjects
    np.fill_diagonal(g, 0.5 * r.sum(axis=0) / data.n_subjects)
    return g


def pl_loss_value_grad(m: np.ndarray, data) -> tuple[float, np.ndarray]:
    """`pl_loss` and its free gradient from one pass over the predictors.

    The inner solvers call this thousands of times; sharing eta between the
    value and the gradient halves their cost.
    """
    x = _check_dims(m, data)
    eta = _linear_predictors(m, x)
    f = float(_softplus((1.0 - 2.0 * x) * eta).sum() / data.n_subjects)
    r = expit(eta)
    r -= x
    g = (x.T @ r) / data.n_subjects
    np.fill_diagonal(g, 0.5 * r.sum(axis=0) / data.n_subjects)
    return f, g


def grad_h(m, data) -> np.ndarray:
    """Gradient of h at a symmetric M, with m_ij == m_ji tied.

    Off-diagonal entry (i, j) collects both appearances of m_ij (in the
    i-th and the j-th conditional); the diagonal appears once, with the
    1/2 factor from m_jj/2.
    """
    m = _as_combined(m)
    g = pl_loss_grad_free(m, data)
    out = g + g.T
    np.fill_diagonal(out, np.diag(g))
    return out


def _check_dims(m: np.ndarray, data) -> np.ndarray:
    if data.n_subjects < 1:
        raise ValueError("dataset is empty")
    if m.shape[0] != data.n_items:
        raise ValueError(f"M is {m.shape[0]}x{m.shape[1]} but data has J={data.n_items}")
    return data.x
