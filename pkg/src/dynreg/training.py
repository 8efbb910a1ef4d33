"""Joint training of a base forecaster with the residual correction block.

The composed objective is

    total = mae + omega * res + rho * nll

where ``mae`` is the mean absolute corrected error over observed target
entries, ``res`` is the normalized l1 penalty on the AR coefficient pair, and
``nll`` is the mean matrix-normal negative log-likelihood over samples whose
current and lagged target windows are fully observed.

Window convention: an anchor t owns the history columns [t-P+1, t] and the
target columns [t+1, t+Q]; the lagged pair sits delta steps earlier.  Both
window pairs must lie inside the anchor's own chronological split segment.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.stats import norm as _gaussian

from .errors import (
    AnchorError,
    ConfigError,
    DivergenceError,
    DynregError,
    NoValidWindowsError,
    SeriesTooShortError,
)
from .forecasters import ForecasterSpec, ParameterVector, backward, forward, init_params
from .matnorm import (
    MatrixNormalModel,
    TriangularFactor,
    covariance,
    nll,
    nll_grad,
    softplus_inv,
)
from .residual_ar import (
    ArCoefficients,
    ResidualPair,
    adjust_prediction,
    ar_grads,
    l1_penalty,
    l1_subgradient,
)
from .serialize import (
    format_float,
    load_manifest,
    load_matrix,
    load_param_blob,
    save_manifest,
    save_matrix,
    save_param_blob,
)

INIT_SCHEMES_AB = ("random", "zeros", "diagonal")
BASE_INIT_SIGMA = 0.01


@dataclass(frozen=True)
class TrainConfig:
    delta: int
    omega: float = 1.0
    rho: float = 0.001
    lr: float = 0.001
    weight_decay: float = 0.0001
    batch_size: int = 64
    max_epochs: int = 100
    patience: int = 30
    init_scheme_ab: str = "random"
    init_scale: float = 0.001
    split: tuple = (0.6, 0.2, 0.2)
    rng_seed: int = 0
    freeze_ar: bool = False
    dr_lr: float = None

    def __post_init__(self):
        if self.delta < 1:
            raise ConfigError("delta must be a positive step count")
        if self.omega < 0 or self.rho < 0:
            raise ConfigError("loss weights must be non-negative")
        if self.lr <= 0 or (self.dr_lr is not None and self.dr_lr <= 0):
            raise ConfigError("learning rates must be positive")
        if self.batch_size < 1 or self.max_epochs < 1:
            raise ConfigError("batch_size and max_epochs must be positive")
        if not (0 <= self.patience <= self.max_epochs):
            raise ConfigError("patience must lie in [0, max_epochs]")
        if self.init_scheme_ab not in INIT_SCHEMES_AB:
            raise ConfigError(f"init_scheme_ab must be one of {INIT_SCHEMES_AB}")
        if self.init_scale <= 0:
            raise ConfigError("init_scale must be positive")
        s = tuple(float(f) for f in self.split)
        if len(s) != 3 or any(f < 0 for f in s) or abs(sum(s) - 1.0) > 1e-9:
            raise ConfigError("split fractions must be non-negative and sum to 1")
        object.__setattr__(self, "split", s)

    @property
    def effective_dr_lr(self) -> float:
        return self.lr if self.dr_lr is None else self.dr_lr


@dataclass(frozen=True)
class NormStats:
    """Global z-score statistics over observed training entries."""

    mean: float
    std: float

    def __post_init__(self):
        if not (self.std > 0):
            raise DynregError("normalization std must be positive (constant training data?)")

    @classmethod
    def from_observed(cls, values, mask) -> "NormStats":
        observed = np.asarray(values, dtype=float)[np.asarray(mask, dtype=bool)]
        if observed.size == 0:
            raise DynregError("no observed entries to normalize from")
        std = float(observed.std())
        if std == 0.0:
            raise DynregError("normalization std must be positive (constant training data?)")
        return cls(mean=float(observed.mean()), std=std)

    def apply(self, values, mask) -> np.ndarray:
        """Normalize observed entries; masked entries become 0 (the mean)."""
        z = (np.asarray(values, dtype=float) - self.mean) / self.std
        return np.where(np.asarray(mask, dtype=bool), z, 0.0)

    def restore(self, z) -> np.ndarray:
        return np.asarray(z, dtype=float) * self.std + self.mean


@dataclass(frozen=True)
class WindowIndex:
    anchors: np.ndarray
    segment: tuple  # [start, stop) in steps
    p: int
    q: int
    delta: int

    def __post_init__(self):
        object.__setattr__(self, "anchors", np.asarray(self.anchors, dtype=int))
        if self.anchors.size and np.any(np.diff(self.anchors) <= 0):
            raise ValueError("anchors must be strictly increasing")

    def __len__(self):
        return int(self.anchors.size)


def _segment_anchors(panel, start, stop, p, q, delta):
    lo = start + delta + p - 1
    hi = stop - 1 - q
    if hi < lo:
        return np.zeros(0, dtype=int)
    anchors = np.arange(lo, hi + 1)
    # drop anchors whose entire current-target window is missing
    keep = [t for t in anchors if panel.mask[:, t + 1 : t + 1 + q].any()]
    return np.asarray(keep, dtype=int)


def build_windows(panel, cfg: TrainConfig, p: int, q: int):
    """Chronological train/val/test anchor sets with no cross-split leakage."""
    if cfg.delta < q:
        raise ConfigError("delta must be at least the forecast horizon q")
    t_total = panel.n_steps
    required = cfg.delta + p + q
    if t_total < required:
        raise SeriesTooShortError(t_actual=t_total, t_required=required)
    n_train = int(np.floor(t_total * cfg.split[0]))
    n_val = int(np.floor(t_total * cfg.split[1]))
    bounds = [(0, n_train), (n_train, n_train + n_val), (n_train + n_val, t_total)]
    names = ("train", "val", "test")
    out = []
    for (start, stop), name in zip(bounds, names):
        anchors = _segment_anchors(panel, start, stop, p, q, cfg.delta)
        if anchors.size == 0 and stop > start:
            warnings.warn(f"{name} segment of {stop - start} steps admits no windows")
        out.append(WindowIndex(anchors, (start, stop), p, q, cfg.delta))
    return tuple(out)


def gather_batch(values_z, mask, index: WindowIndex, subset=None) -> dict:
    """Stack window arrays for the given anchors.

    Returns float arrays x, y, x_lag, y_lag of shapes (S,N,P)/(S,N,Q) and
    float 0/1 masks for both target windows.
    """
    anchors = index.anchors if subset is None else index.anchors[subset]
    p, q, delta = index.p, index.q, index.delta
    xs, ys, ms, xls, yls, mls = [], [], [], [], [], []
    for t in anchors:
        xs.append(values_z[:, t - p + 1 : t + 1])
        ys.append(values_z[:, t + 1 : t + 1 + q])
        ms.append(mask[:, t + 1 : t + 1 + q])
        s = t - delta
        xls.append(values_z[:, s - p + 1 : s + 1])
        yls.append(values_z[:, s + 1 : s + 1 + q])
        mls.append(mask[:, s + 1 : s + 1 + q])
    return {
        "x": np.asarray(xs, dtype=float),
        "y": np.asarray(ys, dtype=float),
        "mask": np.asarray(ms, dtype=float),
        "x_lag": np.asarray(xls, dtype=float),
        "y_lag": np.asarray(yls, dtype=float),
        "mask_lag": np.asarray(mls, dtype=float),
        "anchors": np.asarray(anchors, dtype=int),
    }


def slice_batch(batch: dict, idx) -> dict:
    return {k: v[idx] for k, v in batch.items()}


def target_windows(panel, index: WindowIndex):
    """Raw (unnormalized) target values and boolean masks per anchor."""
    q = index.q
    ys = np.asarray([panel.values[:, t + 1 : t + 1 + q] for t in index.anchors], dtype=float)
    ms = np.asarray([panel.mask[:, t + 1 : t + 1 + q] for t in index.anchors], dtype=bool)
    return ys, ms


# -------------------------------------------------------------------- dr block


@dataclass
class DrParams:
    """The residual-correction parameter block (all mutable during training)."""

    a: np.ndarray
    b: np.ndarray
    raw_n: np.ndarray
    raw_q: np.ndarray
    delta: int

    @classmethod
    def init(cls, n, q, cfg: TrainConfig, rng) -> "DrParams":
        scale = cfg.init_scale
        if cfg.freeze_ar or cfg.init_scheme_ab == "zeros":
            a = np.zeros((n, n))
            b = np.zeros((q, q))
        elif cfg.init_scheme_ab == "diagonal":
            a = scale * np.eye(n)
            b = scale * np.eye(q)
        else:
            a = scale * rng.standard_normal((n, n))
            b = scale * rng.standard_normal((q, q))
        raw_n = np.tril(scale * rng.standard_normal((n, n)), -1)
        raw_q = np.tril(scale * rng.standard_normal((q, q)), -1)
        np.fill_diagonal(raw_n, softplus_inv(1.0))
        np.fill_diagonal(raw_q, softplus_inv(1.0))
        return cls(a=a, b=b, raw_n=raw_n, raw_q=raw_q, delta=cfg.delta)

    @property
    def n(self) -> int:
        return self.a.shape[0]

    @property
    def q(self) -> int:
        return self.b.shape[0]

    def coefficients(self) -> ArCoefficients:
        return ArCoefficients(a=self.a, b=self.b, seasonal_lag=self.delta)

    def noise_model(self) -> MatrixNormalModel:
        return MatrixNormalModel(
            factor_n=TriangularFactor(dim=self.n, raw=self.raw_n),
            factor_q=TriangularFactor(dim=self.q, raw=self.raw_q),
        )

    def copy(self) -> "DrParams":
        return DrParams(self.a.copy(), self.b.copy(), self.raw_n.copy(), self.raw_q.copy(), self.delta)


# -------------------------------------------------------------------- loss


def _forward_state(batch, fspec, params, dr, cfg):
    f_cur = forward(fspec, params, batch["x"])
    r_cur = batch["mask"] * (batch["y"] - f_cur)
    if cfg.freeze_ar:
        return {"f_cur": f_cur, "r_cur": r_cur, "e": r_cur, "r_lag": None}
    f_lag = forward(fspec, params, batch["x_lag"])
    r_lag = batch["mask_lag"] * (batch["y_lag"] - f_lag)
    e = r_cur - dr.a @ r_lag @ dr.b
    return {"f_cur": f_cur, "r_cur": r_cur, "e": e, "r_lag": r_lag, "f_lag": f_lag}


def _nll_eligible(batch, cfg):
    full_cur = batch["mask"].all(axis=(1, 2))
    if cfg.freeze_ar:
        return full_cur
    return full_cur & batch["mask_lag"].all(axis=(1, 2))


def composed_loss(batch, fspec, params, dr: DrParams, cfg: TrainConfig):
    """Total loss and its parts {mae, res, nll} on one batch (no gradients)."""
    if batch["x"].shape[0] == 0:
        raise ValueError("empty batch")
    state = _forward_state(batch, fspec, params, dr, cfg)
    e = state["e"]
    n_obs = batch["mask"].sum()
    mae = float((np.abs(e) * batch["mask"]).sum() / n_obs) if n_obs > 0 else 0.0
    res = 0.0 if cfg.freeze_ar else l1_penalty(dr.coefficients())
    nll_part = 0.0
    if cfg.rho > 0:
        elig = _nll_eligible(batch, cfg)
        if elig.any():
            e_elig = e[elig]
            if np.all(np.isfinite(e_elig)):
                nll_part = float(np.mean(nll(dr.noise_model(), e_elig)))
            else:
                nll_part = float("nan")
    total = mae + cfg.omega * res + cfg.rho * nll_part
    return total, {"mae": mae, "res": res, "nll": nll_part}


def loss_and_grads(batch, fspec, params, dr: DrParams, cfg: TrainConfig):
    """Loss, parts, and exact gradients for every trainable group.

    Gradient keys: ``params`` (flat base vector), ``a``, ``b``, ``raw_n``,
    ``raw_q``.  Frozen-AR runs return zero gradients for the DR entries.
    """
    if batch["x"].shape[0] == 0:
        raise ValueError("empty batch")
    state = _forward_state(batch, fspec, params, dr, cfg)
    e = state["e"]
    n_obs = batch["mask"].sum()
    mae = float((np.abs(e) * batch["mask"]).sum() / n_obs) if n_obs > 0 else 0.0
    upstream = np.sign(e) * batch["mask"] / n_obs if n_obs > 0 else np.zeros_like(e)

    res = 0.0
    nll_part = 0.0
    grad_a = np.zeros_like(dr.a)
    grad_b = np.zeros_like(dr.b)
    grad_raw_n = np.zeros_like(dr.raw_n)
    grad_raw_q = np.zeros_like(dr.raw_q)

    if cfg.rho > 0:
        elig = _nll_eligible(batch, cfg)
        m_elig = int(elig.sum())
        if m_elig > 0 and np.all(np.isfinite(e[elig])):
            model = dr.noise_model()
            nll_part = float(np.mean(nll(model, e[elig])))
            g_raw_n, g_raw_q, g_e = nll_grad(model, e[elig])
            scale = cfg.rho / m_elig
            grad_raw_n += scale * g_raw_n
            grad_raw_q += scale * g_raw_q
            upstream = upstream.copy()
            upstream[elig] += scale * g_e
        elif m_elig > 0:
            nll_part = float("nan")

    if cfg.freeze_ar:
        grad_f_cur = -(upstream * batch["mask"])
        g_params, _ = backward(fspec, params, batch["x"], grad_f_cur)
        grad_params = g_params.values
    else:
        coeffs = dr.coefficients()
        res = l1_penalty(coeffs)
        pair = ResidualPair(r_current=state["r_cur"], r_lagged=state["r_lag"])
        g_a, g_b, _, grad_r_lag = ar_grads(coeffs, pair, upstream)
        sub_a, sub_b = l1_subgradient(coeffs)
        grad_a += g_a + cfg.omega * sub_a
        grad_b += g_b + cfg.omega * sub_b
        g_cur, _ = backward(fspec, params, batch["x"], -(upstream * batch["mask"]))
        g_lag, _ = backward(fspec, params, batch["x_lag"], -(grad_r_lag * batch["mask_lag"]))
        grad_params = g_cur.values + g_lag.values

    total = mae + cfg.omega * res + cfg.rho * nll_part
    parts = {"mae": mae, "res": res, "nll": nll_part}
    grads = {
        "params": grad_params,
        "a": grad_a,
        "b": grad_b,
        "raw_n": grad_raw_n,
        "raw_q": grad_raw_q,
    }
    return total, parts, grads


# -------------------------------------------------------------------- optimizer


class Adam:
    """Adam with optional decoupled weight decay, applied per named array."""

    def __init__(self, beta1=0.9, beta2=0.999, eps=1e-8):
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self._m = {}
        self._v = {}

    def step(self, params: dict, grads: dict, lr: dict, decay: dict):
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        bias1 = 1.0 - b1**self.t
        bias2 = 1.0 - b2**self.t
        for name in params:
            g = grads[name]
            if name not in self._m:
                self._m[name] = np.zeros_like(g)
                self._v[name] = np.zeros_like(g)
            m, v = self._m[name], self._v[name]
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * g * g
            update = (m / bias1) / (np.sqrt(v / bias2) + self.eps)
            p = params[name]
            p -= lr[name] * update
            if decay.get(name, 0.0):
                p -= lr[name] * decay[name] * p


# -------------------------------------------------------------------- training


@dataclass
class TrainedModel:
    fspec: ForecasterSpec
    params: ParameterVector
    dr: DrParams
    norm: NormStats
    cfg: TrainConfig
    history: np.ndarray  # rows: epoch, train_mae, train_res, train_nll, val_total
    best_epoch: int
    best_val: float

    def coefficients(self) -> ArCoefficients:
        return self.dr.coefficients()

    def noise_model(self) -> MatrixNormalModel:
        return self.dr.noise_model()


def _check_finite(epoch, total, parts):
    if np.isfinite(total) and all(np.isfinite(v) for v in parts.values()):
        return
    for name in ("mae", "res", "nll"):
        if not np.isfinite(parts[name]):
            raise DivergenceError(epoch=epoch, part=name)
    raise DivergenceError(epoch=epoch, part="total")


def train(panel, fspec: ForecasterSpec, cfg: TrainConfig) -> TrainedModel:
    """Jointly fit base and DR parameters; restore the best-validation state."""
    if fspec.n_nodes != panel.n_nodes:
        raise ConfigError("forecaster n_nodes does not match panel")
    if cfg.delta < fspec.horizon_out:
        raise ConfigError("delta must be at least the forecast horizon q")
    train_idx, val_idx, _ = build_windows(panel, cfg, fspec.horizon_in, fspec.horizon_out)
    if len(train_idx) == 0:
        raise NoValidWindowsError("no valid training windows")
    if len(val_idx) == 0:
        raise NoValidWindowsError("no valid validation windows")

    train_slice = slice(*train_idx.segment)
    norm = NormStats.from_observed(panel.values[:, train_slice], panel.mask[:, train_slice])
    values_z = norm.apply(panel.values, panel.mask)

    root = np.random.SeedSequence(cfg.rng_seed)
    base_seq, dr_seq, shuffle_seq = root.spawn(3)
    params = init_params(
        fspec, "small_normal", sigma=BASE_INIT_SIGMA, rng_seed=np.random.default_rng(base_seq)
    )
    dr = DrParams.init(fspec.n_nodes, fspec.horizon_out, cfg, np.random.default_rng(dr_seq))
    shuffle_rng = np.random.default_rng(shuffle_seq)

    train_batch = gather_batch(values_z, panel.mask, train_idx)
    val_batch = gather_batch(values_z, panel.mask, val_idx)

    opt = Adam()
    named = {"params": params.values}
    lr = {"params": cfg.lr}
    decay = {"params": cfg.weight_decay}
    if not cfg.freeze_ar:
        named.update({"a": dr.a, "b": dr.b})
        lr.update({"a": cfg.effective_dr_lr, "b": cfg.effective_dr_lr})
    if cfg.rho > 0:
        named.update({"raw_n": dr.raw_n, "raw_q": dr.raw_q})
        lr.update({"raw_n": cfg.effective_dr_lr, "raw_q": cfg.effective_dr_lr})

    n_train = len(train_idx)
    history = []
    best_val = np.inf
    best_epoch = -1
    best_state = None
    no_improve = 0

    for epoch in range(cfg.max_epochs):
        order = shuffle_rng.permutation(n_train)
        sums = {"mae": 0.0, "res": 0.0, "nll": 0.0}
        n_batches = 0
        for start in range(0, n_train, cfg.batch_size):
            idx = order[start : start + cfg.batch_size]
            minibatch = slice_batch(train_batch, idx)
            total, parts, grads = loss_and_grads(minibatch, fspec, params, dr, cfg)
            _check_finite(epoch, total, parts)
            opt.step(named, {k: grads[k] for k in named}, lr, decay)
            for k in sums:
                sums[k] += parts[k]
            n_batches += 1
        epoch_parts = {k: sums[k] / n_batches for k in sums}

        val_total, val_parts = composed_loss(val_batch, fspec, params, dr, cfg)
        _check_finite(epoch, val_total, val_parts)
        history.append(
            [epoch, epoch_parts["mae"], epoch_parts["res"], epoch_parts["nll"], val_total]
        )

        if val_total < best_val:
            best_val = val_total
            best_epoch = epoch
            best_state = (params.values.copy(), dr.copy())
            no_improve = 0
        else:
            no_improve += 1
        if no_improve >= cfg.patience:
            break

    params.values[:] = best_state[0]
    best_dr = best_state[1]
    dr.a[:], dr.b[:] = best_dr.a, best_dr.b
    dr.raw_n[:], dr.raw_q[:] = best_dr.raw_n, best_dr.raw_q

    return TrainedModel(
        fspec=fspec,
        params=params,
        dr=dr,
        norm=norm,
        cfg=cfg,
        history=np.asarray(history, dtype=float),
        best_epoch=best_epoch,
        best_val=float(best_val),
    )


# -------------------------------------------------------------------- prediction


@dataclass(frozen=True)
class ForecastDistribution:
    """De-normalized corrected forecast with Kronecker-diagonal uncertainty."""

    anchor: int
    mean: np.ndarray
    scale: float
    cov_n: np.ndarray
    cov_q: np.ndarray

    def entry_std(self) -> np.ndarray:
        return self.scale * np.sqrt(np.outer(np.diag(self.cov_n), np.diag(self.cov_q)))

    def interval(self, level: float):
        """Central interval (lo, hi) per entry at the given coverage level."""
        if not (0.0 < level < 1.0):
            raise ValueError("level must lie in (0, 1)")
        z = float(_gaussian.ppf(0.5 + level / 2.0))
        half = z * self.entry_std()
        return self.mean - half, self.mean + half


def predict(model: TrainedModel, panel, index: WindowIndex):
    """Residual-corrected forecast distributions for every anchor in order."""
    p, q = model.fspec.horizon_in, model.fspec.horizon_out
    delta = model.cfg.delta
    if index.delta != delta or index.p != p or index.q != q:
        raise AnchorError("window index geometry does not match the model")
    if len(index) == 0:
        return []
    t0, t1 = int(index.anchors[0]), int(index.anchors[-1])
    if t0 - delta - p + 1 < 0 or t1 + q > panel.n_steps - 1:
        raise AnchorError("anchors fall outside the panel")

    values_z = model.norm.apply(panel.values, panel.mask)
    batch = gather_batch(values_z, panel.mask, index)
    f_cur = forward(model.fspec, model.params, batch["x"])
    f_lag = forward(model.fspec, model.params, batch["x_lag"])
    r_lag = batch["mask_lag"] * (batch["y_lag"] - f_lag)
    corrected = adjust_prediction(
        model.coefficients(), f_cur, r_lag, lagged_mask=batch["mask_lag"].astype(bool)
    )
    means = model.norm.restore(corrected)

    noise = model.noise_model()
    cov_n = covariance(noise.factor_n)
    cov_q = covariance(noise.factor_q)
    return [
        ForecastDistribution(
            anchor=int(t), mean=means[i], scale=model.norm.std, cov_n=cov_n, cov_q=cov_q
        )
        for i, t in enumerate(batch["anchors"])
    ]


# -------------------------------------------------------------------- persistence

_MODEL_FILES = ["A.csv", "B.csv", "L_N.csv", "L_Q.csv", "params.bin", "history.csv"]
_HISTORY_HEADER = "epoch,train_mae,train_res,train_nll,val_total"


def save_model(model: TrainedModel, out_dir) -> None:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    save_matrix(out_dir / "A.csv", model.dr.a)
    save_matrix(out_dir / "B.csv", model.dr.b)
    save_matrix(out_dir / "L_N.csv", model.dr.raw_n)
    save_matrix(out_dir / "L_Q.csv", model.dr.raw_q)
    save_param_blob(out_dir / "params.bin", model.params.values)
    with open(out_dir / "history.csv", "w", encoding="ascii") as fh:
        fh.write(_HISTORY_HEADER + "\n")
        for row in model.history:
            fh.write(
                ",".join([str(int(row[0]))] + [format_float(v) for v in row[1:]]) + "\n"
            )
    cfg = model.cfg
    save_manifest(
        out_dir / "manifest.txt",
        {
            "kind": model.fspec.kind,
            "n_nodes": model.fspec.n_nodes,
            "horizon_in": model.fspec.horizon_in,
            "horizon_out": model.fspec.horizon_out,
            "hidden_width": model.fspec.hidden_width,
            "delta": cfg.delta,
            "omega": float(cfg.omega),
            "rho": float(cfg.rho),
            "lr": float(cfg.lr),
            "dr_lr": "" if cfg.dr_lr is None else float(cfg.dr_lr),
            "weight_decay": float(cfg.weight_decay),
            "batch_size": cfg.batch_size,
            "max_epochs": cfg.max_epochs,
            "patience": cfg.patience,
            "init_scheme_ab": cfg.init_scheme_ab,
            "init_scale": float(cfg.init_scale),
            "split": [float(f) for f in cfg.split],
            "rng_seed": cfg.rng_seed,
            "freeze_ar": cfg.freeze_ar,
            "norm_mean": float(model.norm.mean),
            "norm_std": float(model.norm.std),
            "best_epoch": model.best_epoch,
            "best_val": float(model.best_val),
            "files": _MODEL_FILES,
        },
    )


def load_model(model_dir) -> TrainedModel:
    model_dir = Path(model_dir)
    m = load_manifest(model_dir / "manifest.txt")
    fspec = ForecasterSpec(
        kind=m["kind"],
        n_nodes=int(m["n_nodes"]),
        horizon_in=int(m["horizon_in"]),
        horizon_out=int(m["horizon_out"]),
        hidden_width=int(m["hidden_width"]),
    )
    cfg = TrainConfig(
        delta=int(m["delta"]),
        omega=float(m["omega"]),
        rho=float(m["rho"]),
        lr=float(m["lr"]),
        weight_decay=float(m["weight_decay"]),
        batch_size=int(m["batch_size"]),
        max_epochs=int(m["max_epochs"]),
        patience=int(m["patience"]),
        init_scheme_ab=m["init_scheme_ab"],
        init_scale=float(m["init_scale"]),
        split=tuple(float(f) for f in m["split"].split(",")),
        rng_seed=int(m["rng_seed"]),
        freeze_ar=m["freeze_ar"] == "true",
        dr_lr=None if m["dr_lr"] == "" else float(m["dr_lr"]),
    )
    dr = DrParams(
        a=load_matrix(model_dir / "A.csv"),
        b=load_matrix(model_dir / "B.csv"),
        raw_n=load_matrix(model_dir / "L_N.csv"),
        raw_q=load_matrix(model_dir / "L_Q.csv"),
        delta=cfg.delta,
    )
    values = load_param_blob(model_dir / "params.bin")
    params = ParameterVector(values, fspec.layout())
    history = []
    with open(model_dir / "history.csv", "r", encoding="ascii") as fh:
        lines = [ln.strip() for ln in fh if ln.strip()]
    for line in lines[1:]:
        history.append([float(tok) for tok in line.split(",")])
    return TrainedModel(
        fspec=fspec,
        params=params,
        dr=dr,
        norm=NormStats(mean=float(m["norm_mean"]), std=float(m["norm_std"])),
        cfg=cfg,
        history=np.asarray(history, dtype=float) if history else np.zeros((0, 5)),
        best_epoch=int(m["best_epoch"]),
        best_val=float(m["best_val"]),
    )
