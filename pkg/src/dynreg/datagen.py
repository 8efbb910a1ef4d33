"""Panel ingestion and the synthetic ground-truth generator.

The generator plants a known sinusoidal base signal, a bilinear seasonal AR
process on the residual field, and Kronecker-structured matrix-normal noise,
so recovery experiments can compare trained parameters against truth.

Residuals live on a step-aligned grid: steps are grouped into consecutive
blocks of q columns, and block g regresses on block g - delta/q.  This keeps
every training window consistent with the planted relation, at the price of
requiring delta and t_total to be multiples of q.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from datetime import datetime, timedelta
from pathlib import Path

import numpy as np

from .errors import DataFormatError, NonStationaryError
from .matnorm import MatrixNormalModel, TriangularFactor, covariance, sample, softplus_inv
from .residual_ar import ArCoefficients, vectorized_coefficient
from .serialize import format_float, save_manifest, save_matrix

# seed-stream domains (SeedSequence spawn keys) used by generate()
_DOMAIN_NOISE = 0
_DOMAIN_BURNIN = 1
_DOMAIN_MASK = 2


@dataclass
class SeriesPanel:
    """An N x T observation panel with a missing-value mask.

    Masked-out entries are stored as 0.  ``adjacency`` is an optional
    non-negative N x N proximity matrix carried for graph-aware forecasters;
    nothing in this package consumes it.
    """

    values: np.ndarray
    mask: np.ndarray
    resolution_minutes: int = 5
    node_ids: list = None
    adjacency: np.ndarray = None

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.ndim != 2:
            raise ValueError("panel values must be a 2-d array")
        if self.mask is None:
            self.mask = np.ones(self.values.shape, dtype=bool)
        self.mask = np.asarray(self.mask, dtype=bool)
        if self.mask.shape != self.values.shape:
            raise ValueError("mask shape must match values")
        if self.resolution_minutes <= 0:
            raise ValueError("resolution must be positive")
        if self.node_ids is None:
            self.node_ids = [f"n{i:03d}" for i in range(self.values.shape[0])]
        if len(self.node_ids) != self.values.shape[0]:
            raise ValueError("node_ids length must equal node count")
        self.values = np.where(self.mask, self.values, 0.0)
        if not np.all(np.isfinite(self.values)):
            raise ValueError("observed panel entries must be finite")
        if self.adjacency is not None:
            self.adjacency = np.asarray(self.adjacency, dtype=float)
            n = self.values.shape[0]
            if self.adjacency.shape != (n, n):
                raise ValueError("adjacency must be N x N")
            if not np.all(np.isfinite(self.adjacency)) or np.any(self.adjacency < 0):
                raise ValueError("adjacency must be finite and non-negative")
            if np.any(np.diag(self.adjacency) != 0):
                raise ValueError("adjacency diagonal must be zero")

    @property
    def n_nodes(self) -> int:
        return self.values.shape[0]

    @property
    def n_steps(self) -> int:
        return self.values.shape[1]


def _parse_timestamp(token, row):
    token = token.strip()
    try:
        return float(int(token))
    except ValueError:
        pass
    try:
        stamp = datetime.fromisoformat(token)
    except ValueError:
        raise DataFormatError(f"unparseable timestamp {token!r}", row=row, column=0)
    return stamp.timestamp() / 60.0


def load_csv(path) -> SeriesPanel:
    """Read a panel CSV: header of node ids, first column timestamps.

    Timestamps are ISO-8601 strings or integer minute offsets.  Empty cells
    and the literal NaN are masked.  Resolution is inferred from the first
    two timestamps.
    """
    path = Path(path)
    with open(path, "r") as fh:
        lines = [ln.rstrip("\n") for ln in fh]
    lines = [ln for ln in lines if ln.strip() != ""]
    if len(lines) < 3:
        raise DataFormatError("panel needs a header and at least two data rows", row=0, column=0)
    header = lines[0].split(",")
    node_ids = [h.strip() for h in header[1:]]
    n = len(node_ids)
    if n == 0:
        raise DataFormatError("header lists no nodes", row=0, column=1)

    t = len(lines) - 1
    values = np.zeros((n, t))
    mask = np.ones((n, t), dtype=bool)
    minutes = np.zeros(t)
    for r, line in enumerate(lines[1:]):
        cells = line.split(",")
        if len(cells) != n + 1:
            raise DataFormatError(
                f"row has {len(cells)} cells, expected {n + 1}", row=r + 1, column=len(cells)
            )
        minutes[r] = _parse_timestamp(cells[0], row=r + 1)
        for c, cell in enumerate(cells[1:]):
            cell = cell.strip()
            if cell == "" or cell.lower() == "nan":
                mask[c, r] = False
                continue
            try:
                values[c, r] = float(cell)
            except ValueError:
                raise DataFormatError(f"unparseable value {cell!r}", row=r + 1, column=c + 1)

    steps = np.diff(minutes)
    if np.any(steps <= 0):
        bad = int(np.argmax(steps <= 0)) + 2
        raise DataFormatError("timestamps must be strictly increasing", row=bad, column=0)
    resolution = steps[0]
    if abs(resolution - round(resolution)) > 1e-9 or round(resolution) <= 0:
        raise DataFormatError("timestamp spacing is not a whole positive minute count", row=2, column=0)
    return SeriesPanel(values, mask, resolution_minutes=int(round(resolution)), node_ids=node_ids)


def save_csv(path, panel: SeriesPanel) -> None:
    """Write a panel in the load_csv format (integer minute timestamps)."""
    path = Path(path)
    with open(path, "w") as fh:
        fh.write("time," + ",".join(panel.node_ids) + "\n")
        for t in range(panel.n_steps):
            cells = [str(t * panel.resolution_minutes)]
            for i in range(panel.n_nodes):
                cells.append(format_float(panel.values[i, t]) if panel.mask[i, t] else "")
            fh.write(",".join(cells) + "\n")


@dataclass(frozen=True)
class SignalSpec:
    """Sinusoidal mixture: per-node daily and weekly components plus a level.

    Phases are fixed deterministic functions of the node index so nodes are
    decorrelated without consuming RNG state.
    """

    amplitude_daily: np.ndarray
    amplitude_weekly: np.ndarray
    period_daily: float
    period_weekly: float
    level: float = 0.0

    def evaluate(self, n: int, t_total: int) -> np.ndarray:
        ad = np.broadcast_to(np.asarray(self.amplitude_daily, dtype=float), (n,))
        aw = np.broadcast_to(np.asarray(self.amplitude_weekly, dtype=float), (n,))
        t = np.arange(t_total)
        idx = np.arange(n)
        phase_d = 2.0 * np.pi * idx / max(n, 1)
        phase_w = np.pi * idx / max(n, 1) + 1.0
        daily = ad[:, None] * np.sin(2.0 * np.pi * t[None, :] / self.period_daily + phase_d[:, None])
        weekly = aw[:, None] * np.sin(2.0 * np.pi * t[None, :] / self.period_weekly + phase_w[:, None])
        return self.level + daily + weekly


@dataclass(frozen=True)
class SynthSpec:
    n: int
    p: int
    q: int
    t_total: int
    delta: int
    true_a: np.ndarray
    true_b: np.ndarray
    factor_n: TriangularFactor
    factor_q: TriangularFactor
    signal: SignalSpec
    missing_rate: float = 0.0
    rng_seed: int = 0
    burn_in_steps: int = None
    resolution_minutes: int = 5

    def __post_init__(self):
        if min(self.n, self.p, self.q, self.t_total, self.delta) <= 0:
            raise ValueError("dimensions must be positive")
        if self.delta < self.q:
            raise ValueError("delta must be at least q")
        if self.delta % self.q != 0:
            raise ValueError("delta must be a multiple of q (grid-aligned residual blocks)")
        if self.t_total % self.q != 0:
            raise ValueError("t_total must be a multiple of q")
        if not (0.0 <= self.missing_rate < 1.0):
            raise ValueError("missing_rate must lie in [0, 1)")
        a = np.asarray(self.true_a, dtype=float)
        b = np.asarray(self.true_b, dtype=float)
        if a.shape != (self.n, self.n) or b.shape != (self.q, self.q):
            raise ValueError("true_a / true_b shapes must match n and q")
        if self.burn_in_steps is not None and self.burn_in_steps < 10 * self.delta:
            raise ValueError("burn_in_steps must be at least 10 * delta")

    @property
    def coefficients(self) -> ArCoefficients:
        return ArCoefficients(a=self.true_a, b=self.true_b, seasonal_lag=self.delta)

    @property
    def noise(self) -> MatrixNormalModel:
        return MatrixNormalModel(factor_n=self.factor_n, factor_q=self.factor_q)


def spectral_radius(a: np.ndarray, b: np.ndarray) -> float:
    """Spectral radius of b^T (x) a, the stability measure of the recursion."""
    kron = np.kron(np.asarray(b, dtype=float).T, np.asarray(a, dtype=float))
    return float(np.max(np.abs(np.linalg.eigvals(kron))))


@dataclass
class GroundTruth:
    coefficients: ArCoefficients
    noise: MatrixNormalModel
    signal: np.ndarray
    residuals: np.ndarray
    spec: SynthSpec


def _group_rng(seed, domain, index):
    return np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=(domain, index)))


def simulate_residual_field(
    coeffs: ArCoefficients,
    noise: MatrixNormalModel,
    n_groups: int,
    rng_seed: int = 0,
    burn_in_steps: int = None,
) -> np.ndarray:
    """Simulate the grid-blocked process R_g = A R_{g-k} B + E_g.

    Returns an N x (n_groups * q) field.  Noise blocks are drawn from
    per-block seed streams: production block g always uses the same stream
    regardless of burn-in depth, and burn-in blocks are indexed backwards
    from the production start, so deepening the burn-in only changes the
    (discarded) transient.
    """
    n, q, delta = coeffs.n, coeffs.q, coeffs.seasonal_lag
    if delta % q != 0:
        raise ValueError("seasonal_lag must be a multiple of q")
    k = delta // q
    if burn_in_steps is None:
        burn_in_steps = 10 * delta
    burn_groups = max(k, math.ceil(burn_in_steps / q))

    radius = spectral_radius(coeffs.a, coeffs.b)
    if radius >= 1.0 - 1e-12:
        raise NonStationaryError(
            f"spectral radius of B^T kron A is {radius:.6f}; must be < 1 for a stationary residual process"
        )

    state = {}  # group index -> R matrix, only the last k groups retained
    out = np.zeros((n, n_groups * q))
    for g in range(-burn_groups, n_groups):
        if g < 0:
            rng = _group_rng(rng_seed, _DOMAIN_BURNIN, -g - 1)
        else:
            rng = _group_rng(rng_seed, _DOMAIN_NOISE, g)
        e = sample(noise, rng)
        prev = state.get(g - k)
        r = e if prev is None else coeffs.a @ prev @ coeffs.b + e
        state[g] = r
        state.pop(g - k, None)
        if g >= 0:
            out[:, g * q : (g + 1) * q] = r
    return out


def generate(spec: SynthSpec):
    """Build (panel, truth): signal + planted residual field, masked at random."""
    radius = spectral_radius(spec.true_a, spec.true_b)
    if radius >= 1.0 - 1e-12:
        raise NonStationaryError(
            f"spectral radius of B^T kron A is {radius:.6f}; must be < 1 for a stationary residual process"
        )
    signal = spec.signal.evaluate(spec.n, spec.t_total)
    residuals = simulate_residual_field(
        spec.coefficients,
        spec.noise,
        n_groups=spec.t_total // spec.q,
        rng_seed=spec.rng_seed,
        burn_in_steps=spec.burn_in_steps,
    )
    values = signal + residuals
    if spec.missing_rate > 0.0:
        mask_rng = _group_rng(spec.rng_seed, _DOMAIN_MASK, 0)
        mask = mask_rng.random(values.shape) >= spec.missing_rate
    else:
        mask = np.ones(values.shape, dtype=bool)
    panel = SeriesPanel(values, mask, resolution_minutes=spec.resolution_minutes)
    truth = GroundTruth(
        coefficients=spec.coefficients,
        noise=spec.noise,
        signal=signal,
        residuals=residuals,
        spec=spec,
    )
    return panel, truth


def save_truth(truth: GroundTruth, out_dir) -> None:
    """Persist the ground-truth bundle for later comparison runs."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    save_matrix(out_dir / "a.csv", truth.coefficients.a)
    save_matrix(out_dir / "b.csv", truth.coefficients.b)
    save_matrix(out_dir / "sigma_n.csv", covariance(truth.noise.factor_n))
    save_matrix(out_dir / "sigma_q.csv", covariance(truth.noise.factor_q))
    resid_panel = SeriesPanel(
        truth.residuals,
        np.ones(truth.residuals.shape, dtype=bool),
        resolution_minutes=truth.spec.resolution_minutes,
    )
    save_csv(out_dir / "residuals.csv", resid_panel)
    save_manifest(
        out_dir / "manifest.txt",
        {
            "n": truth.spec.n,
            "p": truth.spec.p,
            "q": truth.spec.q,
            "t_total": truth.spec.t_total,
            "delta": truth.spec.delta,
            "missing_rate": truth.spec.missing_rate,
            "rng_seed": truth.spec.rng_seed,
            "spectral_radius": spectral_radius(truth.coefficients.a, truth.coefficients.b),
            "files": ["a.csv", "b.csv", "sigma_n.csv", "sigma_q.csv", "residuals.csv"],
        },
    )


def factor_from_covariance(cov: np.ndarray) -> TriangularFactor:
    """Raw triangular factor whose induced covariance equals ``cov``.

    Inverts the parameterization: Lambda = cov^{-1} = L L^T with L lower
    triangular, then maps the diagonal back through softplus^{-1}.
    """
    cov = np.asarray(cov, dtype=float)
    precision = np.linalg.inv(cov)
    chol = np.linalg.cholesky(0.5 * (precision + precision.T))
    raw = np.tril(chol, -1) + np.diag(softplus_inv(np.diag(chol)))
    return TriangularFactor(dim=cov.shape[0], raw=raw)


def equicorrelated(dim: int, rho: float, variance: float = 1.0) -> np.ndarray:
    """Covariance with constant off-diagonal correlation rho."""
    if not (-1.0 / max(dim - 1, 1) < rho < 1.0):
        raise ValueError("rho outside the positive-definite range")
    return variance * ((1.0 - rho) * np.eye(dim) + rho * np.ones((dim, dim)))


def banded_covariance(dim: int, rho: float, variance: float = 1.0) -> np.ndarray:
    """Covariance with correlation rho on the first off-diagonal band."""
    cov = variance * np.eye(dim)
    band = variance * rho
    idx = np.arange(dim - 1)
    cov[idx, idx + 1] = band
    cov[idx + 1, idx] = band
    return cov


def sparse_stable_coefficients(
    n: int,
    q: int,
    delta: int,
    radius: float,
    rng_seed: int = 0,
    beta: float = 0.8,
    extra_entries: int = 2,
) -> ArCoefficients:
    """A sparse planted pair: zero-diagonal ring-patterned A, B = beta * I.

    A carries one ring of varying weights plus a few extra off-diagonal
    entries, rescaled so the spectral radius of B^T (x) A equals ``radius``.
    A scalar B keeps the planted relation exact for every training anchor,
    aligned to the residual grid or not; the zero diagonal of A keeps the
    node-shared base forecasters from absorbing the planted structure.
    """
    if n < 2:
        raise ValueError("planted coupling requires at least 2 nodes (A has a zero diagonal)")
    rng = np.random.default_rng(rng_seed)
    a = np.zeros((n, n))
    for i in range(n):
        sign = 1.0 if rng.random() < 0.5 else -1.0
        a[i, (i + 1) % n] = sign * rng.uniform(0.5, 1.0)
    # the ring occupies n of the n * (n - 1) off-diagonal slots
    extra_entries = min(extra_entries, n * (n - 2))
    placed = 0
    while placed < extra_entries:
        i, j = rng.integers(0, n, size=2)
        if i == j or a[i, j] != 0.0:
            continue
        a[i, j] = rng.uniform(-0.5, 0.5)
        placed += 1
    b = beta * np.eye(q)
    current = spectral_radius(a, b)
    if current <= 0.0:
        raise ValueError("degenerate coefficient draw (zero spectral radius)")
    a *= radius / current
    return ArCoefficients(a=a, b=b, seasonal_lag=delta)


def make_synth_spec(
    n: int,
    p: int,
    q: int,
    t_total: int,
    delta: int,
    rng_seed: int = 0,
    radius: float = 0.6,
    missing_rate: float = 0.0,
    noise: str = "identity",
    noise_rho: float = 0.45,
    amp_daily: float = 1.0,
    amp_weekly: float = 0.5,
    period_daily: float = 288.0,
    period_weekly: float = 2016.0,
    level: float = 0.0,
    resolution_minutes: int = 5,
    white: bool = False,
) -> SynthSpec:
    """Assemble a SynthSpec from scalar knobs (the CLI surface)."""
    if white:
        coeffs = ArCoefficients(a=np.zeros((n, n)), b=np.zeros((q, q)), seasonal_lag=delta)
    else:
        coeffs = sparse_stable_coefficients(n, q, delta, radius, rng_seed=rng_seed)
    if noise == "identity":
        factor_n = TriangularFactor.identity(n)
        factor_q = TriangularFactor.identity(q)
    elif noise == "banded":
        factor_n = factor_from_covariance(banded_covariance(n, noise_rho))
        factor_q = TriangularFactor.identity(q)
    elif noise == "equicorrelated":
        factor_n = factor_from_covariance(equicorrelated(n, noise_rho))
        factor_q = TriangularFactor.identity(q)
    else:
        raise ValueError(f"unknown noise kind {noise!r}")
    signal = SignalSpec(
        amplitude_daily=np.full(n, float(amp_daily)),
        amplitude_weekly=np.full(n, float(amp_weekly)),
        period_daily=period_daily,
        period_weekly=period_weekly,
        level=level,
    )
    return SynthSpec(
        n=n,
        p=p,
        q=q,
        t_total=t_total,
        delta=delta,
        true_a=coeffs.a,
        true_b=coeffs.b,
        factor_n=factor_n,
        factor_q=factor_q,
        signal=signal,
        missing_rate=missing_rate,
        rng_seed=rng_seed,
        resolution_minutes=resolution_minutes,
    )
