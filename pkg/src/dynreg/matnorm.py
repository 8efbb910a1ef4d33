"""Zero-mean matrix normal distribution with Kronecker-structured covariance.

The distribution over N x Q error matrices E is parameterized through the
precisions of its row and column covariances. Each precision is held as a
trainable lower-triangular factor L with Lambda = L L^T, and positivity of
the diagonal is enforced by mapping the raw diagonal through a softplus.
With that convention,

    vec(E) ~ Normal(0, Sigma_Q kron Sigma_N),   Sigma_N = (L_N L_N^T)^-1,

where vec stacks columns. The negative log-likelihood reduces to a Frobenius
norm of K = L_N^T E L_Q plus log-diagonal sums, which is what training uses.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import solve_triangular
from scipy.special import expit

LOG_2PI = float(np.log(2.0 * np.pi))


def softplus(x):
    """ln(1 + e^x), stable for large |x|."""
    return np.logaddexp(0.0, x)


def softplus_inv(y):
    """Inverse of softplus on y > 0: ln(e^y - 1)."""
    y = np.asarray(y, dtype=float)
    if np.any(y <= 0.0):
        raise ValueError("softplus_inv requires positive input")
    # ln(e^y - 1) = y + ln(1 - e^-y)
    return y + np.log1p(-np.exp(-y))


@dataclass(frozen=True)
class TriangularFactor:
    """Raw parameter block for one lower-triangular precision factor.

    Only the lower triangle of ``raw`` is meaningful: strictly-lower entries
    pass through unchanged, the diagonal goes through softplus, and the
    strictly-upper part is ignored (stored as zero).
    """

    dim: int
    raw: np.ndarray = field(default=None)

    def __post_init__(self):
        if self.dim <= 0:
            raise ValueError(f"factor dim must be positive, got {self.dim}")
        raw = self.raw if self.raw is not None else np.zeros((self.dim, self.dim))
        raw = np.array(raw, dtype=float)
        if raw.shape != (self.dim, self.dim):
            raise ValueError(f"raw factor must be {self.dim}x{self.dim}, got {raw.shape}")
        object.__setattr__(self, "raw", np.tril(raw))

    @classmethod
    def identity(cls, dim: int) -> "TriangularFactor":
        """Factor whose effective matrix is the identity."""
        raw = np.zeros((dim, dim))
        np.fill_diagonal(raw, softplus_inv(1.0))
        return cls(dim, raw)


def effective_factor(f: TriangularFactor) -> np.ndarray:
    """Lower-triangular L with softplus-mapped diagonal."""
    lower = np.tril(f.raw, -1)
    lower[np.diag_indices(f.dim)] = softplus(np.diag(f.raw))
    return lower


def log_det_cov(f: TriangularFactor) -> float:
    """log |Sigma| for the covariance induced by precision L L^T."""
    return -2.0 * float(np.sum(np.log(np.diag(effective_factor(f)))))


def covariance(f: TriangularFactor) -> np.ndarray:
    """Dense covariance (L L^T)^-1 via two triangular solves."""
    lower = effective_factor(f)
    inv = solve_triangular(lower, np.eye(f.dim), lower=True)
    return inv.T @ inv


@dataclass(frozen=True)
class MatrixNormalModel:
    """Zero-mean matrix normal over N x Q matrices, precision-parameterized."""

    factor_n: TriangularFactor
    factor_q: TriangularFactor

    @property
    def n(self) -> int:
        return self.factor_n.dim

    @property
    def q(self) -> int:
        return self.factor_q.dim

    @classmethod
    def identity(cls, n: int, q: int) -> "MatrixNormalModel":
        return cls(TriangularFactor.identity(n), TriangularFactor.identity(q))


def _check_input(model: MatrixNormalModel, e: np.ndarray) -> np.ndarray:
    e = np.asarray(e, dtype=float)
    if e.shape[-2:] != (model.n, model.q):
        raise ValueError(
            f"error matrix has shape {e.shape}, expected trailing dims "
            f"({model.n}, {model.q})"
        )
    if not np.all(np.isfinite(e)):
        raise ValueError("error matrix contains non-finite entries")
    return e


def nll(model: MatrixNormalModel, e: np.ndarray, include_constant: bool = False):
    """Negative log-likelihood of e under the model.

    By default the additive constant (N*Q/2) * log(2*pi) is excluded; it does
    not depend on the parameters, so training drops it. Pass
    ``include_constant=True`` when comparing against a dense Gaussian density.

    ``e`` may carry leading batch dimensions, in which case a matching array
    of per-matrix values is returned.
    """
    e = _check_input(model, e)
    l_n = effective_factor(model.factor_n)
    l_q = effective_factor(model.factor_q)
    k = np.swapaxes(l_n, -1, -2) @ e @ l_q
    quad = 0.5 * np.sum(k * k, axis=(-2, -1))
    logdet = model.q * np.sum(np.log(np.diag(l_n))) + model.n * np.sum(np.log(np.diag(l_q)))
    value = quad - logdet
    if include_constant:
        value = value + 0.5 * model.n * model.q * LOG_2PI
    return float(value) if value.ndim == 0 else value


def nll_grad(model: MatrixNormalModel, e: np.ndarray):
    """Analytic gradients of ``nll`` (constant excluded).

    Returns ``(grad_raw_n, grad_raw_q, grad_e)``. The factor gradients are
    with respect to the raw parameter matrices, chained through the softplus
    on the diagonal, with zeros in the unused strictly-upper slots. When ``e``
    is batched the factor gradients are summed over the batch and ``grad_e``
    keeps the batch shape.
    """
    e = _check_input(model, e)
    l_n = effective_factor(model.factor_n)
    l_q = effective_factor(model.factor_q)
    k = np.swapaxes(l_n, -1, -2) @ e @ l_q
    n_batch = int(np.prod(e.shape[:-2])) if e.ndim > 2 else 1

    # quadratic part: d(0.5 ||K||^2) for K = L_N^T E L_Q
    el_q = e @ l_q
    grad_ln = np.sum((el_q @ np.swapaxes(k, -1, -2)).reshape(-1, model.n, model.n), axis=0)
    grad_lq = np.sum(
        (np.swapaxes(e, -1, -2) @ (l_n @ k)).reshape(-1, model.q, model.q), axis=0
    )
    grad_e = (l_n @ k) @ np.swapaxes(l_q, -1, -2)

    # log-determinant part, once per matrix in the batch
    grad_ln[np.diag_indices(model.n)] -= n_batch * model.q / np.diag(l_n)
    grad_lq[np.diag_indices(model.q)] -= n_batch * model.n / np.diag(l_q)

    return (
        _chain_to_raw(model.factor_n, grad_ln),
        _chain_to_raw(model.factor_q, grad_lq),
        grad_e,
    )


def _chain_to_raw(f: TriangularFactor, grad_effective: np.ndarray) -> np.ndarray:
    """Map d/dL to d/draw: identity below the diagonal, softplus' on it."""
    grad = np.tril(grad_effective, -1)
    didx = np.diag_indices(f.dim)
    grad[didx] = grad_effective[didx] * expit(f.raw[didx])
    return grad


def sample(model: MatrixNormalModel, rng, size: int | None = None) -> np.ndarray:
    """Draw E = L_N^-T Z L_Q^-1 with Z i.i.d. standard normal.

    Uses triangular solves on the precision factors, so the covariances are
    never materialized. ``rng`` is either an integer seed or a
    ``numpy.random.Generator``; a given seed always yields the same draw.
    """
    if not isinstance(rng, np.random.Generator):
        rng = np.random.default_rng(rng)
    n, q = model.n, model.q
    m = 1 if size is None else int(size)
    z = rng.standard_normal((m, n, q))
    l_n = effective_factor(model.factor_n)
    l_q = effective_factor(model.factor_q)
    # y = L_N^-T z, column-batched across draws
    y = solve_triangular(l_n, z.transpose(1, 0, 2).reshape(n, m * q), trans="T", lower=True)
    y = y.reshape(n, m, q).transpose(1, 0, 2)
    # e = y L_Q^-1  <=>  L_Q^T e^T = y^T
    et = solve_triangular(l_q, np.swapaxes(y, -1, -2).transpose(1, 0, 2).reshape(q, m * n), trans="T", lower=True)
    e = np.swapaxes(et.reshape(q, m, n).transpose(1, 0, 2), -1, -2)
    return e[0] if size is None else e


def export_factor_csv(f: TriangularFactor, path) -> None:
    """Write the effective factor as a full square CSV matrix."""
    from .serialize import save_matrix

    save_matrix(path, effective_factor(f))


def export_covariance_csv(f: TriangularFactor, path) -> None:
    from .serialize import save_matrix

    save_matrix(path, covariance(f))
