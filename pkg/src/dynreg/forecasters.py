"""Pluggable base forecasters mapping an N x P history to an N x Q forecast.

Three desk-scale models share one contract so the trainer can treat them
uniformly: ``forward`` evaluates the prediction, ``backward`` returns exact
reverse-mode gradients of <upstream, forward(x)> with respect to the packed
parameter vector and the input window.

kinds:
  seasonal_naive   repeat the last observed column Q times (no parameters)
  linear_seq2seq   X @ W (P x Q, shared across nodes) + per-node bias
  mlp              one tanh hidden layer applied per node, weights shared
                   across nodes

An optional weighted adjacency matrix travels with the dataset manifest for
graph-aware forecasters; none of the built-in kinds consume it.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

KINDS = ("seasonal_naive", "linear_seq2seq", "mlp")


@dataclass(frozen=True)
class ForecasterSpec:
    kind: str
    n_nodes: int
    horizon_in: int
    horizon_out: int
    hidden_width: int = 0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown forecaster kind {self.kind!r}, expected one of {KINDS}")
        if min(self.n_nodes, self.horizon_in, self.horizon_out) <= 0:
            raise ValueError("dimensions must be positive")
        if self.kind == "mlp" and self.hidden_width <= 0:
            raise ValueError("mlp requires a positive hidden_width")

    def layout(self):
        """Named parameter blocks in packing order."""
        p, q, n, h = self.horizon_in, self.horizon_out, self.n_nodes, self.hidden_width
        if self.kind == "seasonal_naive":
            return []
        if self.kind == "linear_seq2seq":
            return [("w", (p, q)), ("bias", (n,))]
        return [("w1", (p, h)), ("b1", (h,)), ("w2", (h, q)), ("b2", (q,))]

    @property
    def parameter_count(self) -> int:
        return sum(int(np.prod(shape)) for _, shape in self.layout())


@dataclass
class ParameterVector:
    """Flat float64 parameter storage plus the block layout used to pack it."""

    values: np.ndarray
    layout: list

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        expected = sum(int(np.prod(shape)) for _, shape in self.layout)
        if self.values.shape != (expected,):
            raise ValueError(f"expected {expected} parameters, got {self.values.shape}")

    def block(self, name: str) -> np.ndarray:
        """View of one named block, reshaped; writes flow back to the vector."""
        offset = 0
        for block_name, shape in self.layout:
            size = int(np.prod(shape))
            if block_name == name:
                return self.values[offset : offset + size].reshape(shape)
            offset += size
        raise KeyError(name)

    def unpack(self) -> dict:
        return {name: self.block(name) for name, _ in self.layout}

    @classmethod
    def pack(cls, layout, blocks: dict) -> "ParameterVector":
        parts = [np.asarray(blocks[name], dtype=float).reshape(-1) for name, _ in layout]
        values = np.concatenate(parts) if parts else np.zeros(0)
        return cls(values, list(layout))

    def copy(self) -> "ParameterVector":
        return ParameterVector(self.values.copy(), list(self.layout))


def init_params(spec: ForecasterSpec, scheme: str = "zeros", sigma: float = 0.01, rng_seed=0) -> ParameterVector:
    """Deterministic parameter initialization.

    ``scheme`` is "zeros" or "small_normal"; the latter draws i.i.d.
    N(0, sigma^2) entries from the given seed.
    """
    count = spec.parameter_count
    if scheme == "zeros":
        values = np.zeros(count)
    elif scheme == "small_normal":
        rng = rng_seed if isinstance(rng_seed, np.random.Generator) else np.random.default_rng(rng_seed)
        values = rng.normal(scale=sigma, size=count)
    else:
        raise ValueError(f"unknown init scheme {scheme!r}")
    return ParameterVector(values, spec.layout())


def _check_x(spec: ForecasterSpec, x: np.ndarray) -> tuple[np.ndarray, bool]:
    x = np.asarray(x, dtype=float)
    if x.shape[-2:] != (spec.n_nodes, spec.horizon_in):
        raise ValueError(
            f"history window has shape {x.shape}, expected trailing "
            f"({spec.n_nodes}, {spec.horizon_in})"
        )
    if x.ndim == 2:
        return x[None], True
    if x.ndim == 3:
        return x, False
    raise ValueError(f"history window must be 2- or 3-dimensional, got {x.ndim}")


def forward(spec: ForecasterSpec, params: ParameterVector, x: np.ndarray) -> np.ndarray:
    """Evaluate the forecaster on one window (N x P) or a batch (S x N x P)."""
    x3, squeeze = _check_x(spec, x)
    q = spec.horizon_out
    if spec.kind == "seasonal_naive":
        out = np.repeat(x3[:, :, -1:], q, axis=2)
    elif spec.kind == "linear_seq2seq":
        out = x3 @ params.block("w") + params.block("bias")[:, None]
    else:
        hidden = np.tanh(x3 @ params.block("w1") + params.block("b1"))
        out = hidden @ params.block("w2") + params.block("b2")
    return out[0] if squeeze else out


def backward(spec: ForecasterSpec, params: ParameterVector, x: np.ndarray, upstream: np.ndarray):
    """Gradients of <upstream, forward(x)> wrt parameters and input.

    For batched inputs the parameter gradient is summed over the batch and
    the input gradient keeps the batch shape.
    """
    x3, squeeze = _check_x(spec, x)
    upstream = np.asarray(upstream, dtype=float)
    u3 = upstream[None] if squeeze else upstream
    if u3.shape != x3.shape[:-1] + (spec.horizon_out,):
        raise ValueError(f"upstream has shape {upstream.shape}, incompatible with input")

    grad_x = np.zeros_like(x3)
    if spec.kind == "seasonal_naive":
        grads = {}
        grad_x[:, :, -1] = u3.sum(axis=2)
    elif spec.kind == "linear_seq2seq":
        grads = {
            "w": np.einsum("snp,snq->pq", x3, u3),
            "bias": u3.sum(axis=(0, 2)),
        }
        grad_x = u3 @ params.block("w").T
    else:
        w1, w2 = params.block("w1"), params.block("w2")
        hidden = np.tanh(x3 @ w1 + params.block("b1"))
        d_pre = (u3 @ w2.T) * (1.0 - hidden**2)
        grads = {
            "w1": np.einsum("snp,snh->ph", x3, d_pre),
            "b1": d_pre.sum(axis=(0, 1)),
            "w2": np.einsum("snh,snq->hq", hidden, u3),
            "b2": u3.sum(axis=(0, 1)),
        }
        grad_x = d_pre @ w1.T
    grad_params = ParameterVector.pack(spec.layout(), grads)
    return grad_params, (grad_x[0] if squeeze else grad_x)
