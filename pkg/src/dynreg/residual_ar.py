"""Bilinear seasonal autoregression on matrix-valued residuals.

The residual matrix R_t (N nodes x Q horizon steps) is regressed on its
seasonal predecessor R_{t-delta} through a row coefficient A (N x N) and a
column coefficient B (Q x Q):

    R_t = A R_{t-delta} B + E_t

which is the Kronecker-structured special case of a vector AR on vec(R_t)
with coefficient B^T kron A. The lag must satisfy delta >= Q so that the
lagged residual is fully observable when the current prediction is made.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np


@dataclass(frozen=True)
class ArCoefficients:
    a: np.ndarray
    b: np.ndarray
    seasonal_lag: int

    def __post_init__(self):
        a = np.array(self.a, dtype=float)
        b = np.array(self.b, dtype=float)
        if a.ndim != 2 or a.shape[0] != a.shape[1]:
            raise ValueError(f"A must be square, got {a.shape}")
        if b.ndim != 2 or b.shape[0] != b.shape[1]:
            raise ValueError(f"B must be square, got {b.shape}")
        if not (np.all(np.isfinite(a)) and np.all(np.isfinite(b))):
            raise ValueError("AR coefficients must be finite")
        if self.seasonal_lag < b.shape[0]:
            raise ValueError(
                f"seasonal lag {self.seasonal_lag} must be >= horizon {b.shape[0]}: "
                "the lagged residual is otherwise not observable at prediction time"
            )
        object.__setattr__(self, "a", a)
        object.__setattr__(self, "b", b)

    @property
    def n(self) -> int:
        return self.a.shape[0]

    @property
    def q(self) -> int:
        return self.b.shape[0]

    @classmethod
    def zeros(cls, n: int, q: int, seasonal_lag: int) -> "ArCoefficients":
        return cls(np.zeros((n, n)), np.zeros((q, q)), seasonal_lag)


@dataclass(frozen=True)
class ResidualPair:
    """Aligned residual matrices R_t and R_{t-delta} with observation masks.

    Masked-out entries are stored as zero; the masks record which entries
    were actually observed.
    """

    r_current: np.ndarray
    r_lagged: np.ndarray
    mask_current: np.ndarray = field(default=None)
    mask_lagged: np.ndarray = field(default=None)

    def __post_init__(self):
        cur = np.array(self.r_current, dtype=float)
        lag = np.array(self.r_lagged, dtype=float)
        if cur.shape != lag.shape:
            raise ValueError(f"residual shapes differ: {cur.shape} vs {lag.shape}")
        m_cur = np.ones(cur.shape, bool) if self.mask_current is None else np.array(self.mask_current, bool)
        m_lag = np.ones(lag.shape, bool) if self.mask_lagged is None else np.array(self.mask_lagged, bool)
        if m_cur.shape != cur.shape or m_lag.shape != lag.shape:
            raise ValueError("mask shapes must match residual shapes")
        object.__setattr__(self, "r_current", np.where(m_cur, cur, 0.0))
        object.__setattr__(self, "r_lagged", np.where(m_lag, lag, 0.0))
        object.__setattr__(self, "mask_current", m_cur)
        object.__setattr__(self, "mask_lagged", m_lag)


def _check_shapes(c: ArCoefficients, r: np.ndarray) -> np.ndarray:
    r = np.asarray(r, dtype=float)
    if r.shape[-2:] != (c.n, c.q):
        raise ValueError(f"residual has shape {r.shape}, expected trailing ({c.n}, {c.q})")
    return r


def corrected_error(c: ArCoefficients, p: ResidualPair) -> np.ndarray:
    """E = R_t - A R_{t-delta} B, the error left after the seasonal regression."""
    r_cur = _check_shapes(c, p.r_current)
    r_lag = _check_shapes(c, p.r_lagged)
    return r_cur - c.a @ r_lag @ c.b


def vectorized_coefficient(c: ArCoefficients) -> np.ndarray:
    """B^T kron A, the coefficient acting on column-stacked vec(R)."""
    return np.kron(c.b.T, c.a)


def adjust_prediction(
    c: ArCoefficients,
    base_pred: np.ndarray,
    lagged_residual: np.ndarray,
    lagged_mask: np.ndarray | None = None,
) -> np.ndarray:
    """Corrected point forecast: base prediction plus A (lagged residual) B.

    Missing lagged entries (mask False) are zeroed before the adjustment,
    which shrinks the correction toward the plain base prediction; a warning
    reports how many entries were affected.
    """
    base_pred = _check_shapes(c, base_pred)
    lagged_residual = _check_shapes(c, lagged_residual)
    if lagged_mask is not None:
        lagged_mask = np.asarray(lagged_mask, bool)
        n_missing = int(lagged_residual.size - np.count_nonzero(lagged_mask))
        if n_missing:
            warnings.warn(
                f"{n_missing} missing lagged residual entries zeroed before adjustment",
                stacklevel=2,
            )
            lagged_residual = np.where(lagged_mask, lagged_residual, 0.0)
    return base_pred + c.a @ lagged_residual @ c.b


def l1_penalty(c: ArCoefficients) -> float:
    """Entrywise l1 of both coefficients, normalized by their sizes."""
    return float(np.abs(c.a).sum() / c.n**2 + np.abs(c.b).sum() / c.q**2)


def l1_subgradient(c: ArCoefficients):
    """Sign-based subgradient of ``l1_penalty`` (zero at exact zeros)."""
    return np.sign(c.a) / c.n**2, np.sign(c.b) / c.q**2


def ar_grads(c: ArCoefficients, p: ResidualPair, upstream: np.ndarray):
    """Backpropagate d(loss)/dE through E = R_t - A R_{t-delta} B.

    Returns gradients with respect to A, B, R_t and R_{t-delta}. ``upstream``
    may carry leading batch dimensions, in which case the coefficient
    gradients are summed over the batch.
    """
    upstream = _check_shapes(c, np.asarray(upstream, dtype=float))
    r_lag = _check_shapes(c, p.r_lagged)
    if upstream.shape != np.asarray(p.r_current).shape:
        raise ValueError("upstream shape must match the residual shape")
    a_rl = c.a @ r_lag
    grad_a = -np.sum(
        ((upstream @ c.b.T) @ np.swapaxes(r_lag, -1, -2)).reshape(-1, c.n, c.n), axis=0
    )
    grad_b = -np.sum((np.swapaxes(a_rl, -1, -2) @ upstream).reshape(-1, c.q, c.q), axis=0)
    grad_r_current = upstream
    grad_r_lagged = -np.swapaxes(c.a, -1, -2) @ upstream @ np.swapaxes(c.b, -1, -2)
    return grad_a, grad_b, grad_r_current, grad_r_lagged
