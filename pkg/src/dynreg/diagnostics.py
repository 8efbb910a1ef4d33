"""Residual correlation reports, per-horizon accuracy metrics, and coverage.

Correlations are estimated over anchor samples of vectorized residual windows
(column-major, matching the rest of the package).  All estimators are
pairwise-complete on the observation masks: each matrix entry uses exactly the
samples where both of its channels are observed.  Zero-variance channels are
flagged as undefined instead of propagating NaNs.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import (
    ConfigError,
    EmptyReportError,
    InsufficientSamplesError,
    SeriesTooShortError,
)
from .forecasters import forward
from .serialize import save_matrix

LOW_SAMPLE_COUNT = 30
WHITE_SCORE_CEILING = 0.05
SUMMARY_STEPS = (1, 3, 6, 12)

# diverging colors: negative end, center, positive end
_NEG_COLOR = (33, 102, 172)
_MID_COLOR = (247, 247, 247)
_POS_COLOR = (178, 24, 43)


# ---------------------------------------------------------------- correlation


@dataclass(frozen=True)
class CorrReport:
    """Concurrent and lagged correlation structure of residual windows.

    ``concurrent`` is the NQ x NQ Pearson matrix of the vectorized windows;
    ``lagged[lag]`` holds Corr(past channel i, current channel j) for anchor
    pairs separated by ``lag`` steps.  Entries whose sample pair count or
    variance is too small are zeroed and marked False in the defined masks.
    """

    concurrent: np.ndarray
    concurrent_defined: np.ndarray
    lagged: dict
    lagged_defined: dict
    sample_counts: dict
    n_anchors: int
    low_sample_lags: tuple

    def lags(self) -> tuple:
        return tuple(sorted(self.lagged))


def _vec_stack(resids, masks):
    """(S, N, Q) windows -> (S, NQ) samples, column-major per window."""
    r = np.asarray(resids, dtype=float)
    if r.ndim != 3:
        raise ValueError("residual windows must have shape (samples, nodes, horizon)")
    s, n, q = r.shape
    if masks is None:
        v = np.ones((s, n * q))
    else:
        v = np.asarray(masks, dtype=bool)
        if v.shape != r.shape:
            raise ValueError("mask shape does not match residual windows")
        v = v.reshape(s, n * q, order="F").astype(float)
    x = r.reshape(s, n * q, order="F")
    return x * (v > 0), v


def _pairwise_pearson(x_left, v_left, x_right, v_right):
    """Pearson matrix between left and right channels, pairwise-complete.

    Columns are pre-centered by their own overall masked means, which leaves
    the correlations unchanged but keeps the one-pass moment formulas well
    conditioned.  Returns (corr, defined, pair counts).
    """

    def center(x, v):
        cnt = v.sum(axis=0)
        mean = np.divide(x.sum(axis=0), cnt, out=np.zeros_like(cnt), where=cnt > 0)
        return (x - mean) * v

    xl = center(x_left, v_left)
    xr = center(x_right, v_right)
    n = v_left.T @ v_right
    with np.errstate(invalid="ignore", divide="ignore"):
        mean_l = (xl.T @ v_right) / n
        mean_r = (v_left.T @ xr) / n
        ms_l = ((xl * xl).T @ v_right) / n
        ms_r = (v_left.T @ (xr * xr)) / n
        cov = (xl.T @ xr) / n - mean_l * mean_r
        var_l = ms_l - mean_l**2
        var_r = ms_r - mean_r**2
        corr = cov / np.sqrt(var_l * var_r)
    defined = (
        (n >= 2)
        & (var_l > 1e-12 * np.maximum(ms_l, 1e-300))
        & (var_r > 1e-12 * np.maximum(ms_r, 1e-300))
        & np.isfinite(corr)
    )
    corr = np.clip(np.where(defined, corr, 0.0), -1.0, 1.0)
    return corr, defined, n


def residual_correlations(resids, lags=(), masks=None, anchors=None) -> CorrReport:
    """Concurrent plus lagged Pearson matrices over anchor samples.

    ``anchors`` gives each window's position in steps; a lag pairs the anchors
    exactly that many steps apart.  Defaults to 0..S-1 (consecutive windows).
    """
    x, v = _vec_stack(resids, masks)
    n_anchors = x.shape[0]
    if n_anchors < 2:
        raise InsufficientSamplesError(
            f"need at least 2 anchor samples, got {n_anchors}"
        )
    if anchors is None:
        anchors = np.arange(n_anchors)
    anchors = np.asarray(anchors, dtype=int)
    if anchors.shape != (n_anchors,):
        raise ValueError("anchors must be one position per residual window")
    if np.unique(anchors).size != n_anchors:
        raise ValueError("anchor positions must be distinct")

    concurrent, conc_defined, _ = _pairwise_pearson(x, v, x, v)
    # the formula is symmetric up to rounding; make the invariant exact
    concurrent = 0.5 * (concurrent + concurrent.T)
    conc_defined = conc_defined & conc_defined.T
    diag = np.where(np.diag(conc_defined), 1.0, 0.0)
    np.fill_diagonal(concurrent, diag)

    pos = {int(t): i for i, t in enumerate(anchors)}
    lagged, lagged_defined, counts, low = {}, {}, {}, []
    for lag in lags:
        lag = int(lag)
        if lag <= 0:
            raise ConfigError("candidate lags must be positive step counts")
        cur = [i for i, t in enumerate(anchors) if int(t) - lag in pos]
        past = [pos[int(anchors[i]) - lag] for i in cur]
        if len(cur) < 2:
            raise InsufficientSamplesError(
                f"lag {lag} admits {len(cur)} anchor pairs; need at least 2"
            )
        corr, defined, _ = _pairwise_pearson(x[past], v[past], x[cur], v[cur])
        lagged[lag] = corr
        lagged_defined[lag] = defined
        counts[lag] = len(cur)
        if len(cur) < LOW_SAMPLE_COUNT:
            low.append(lag)
    return CorrReport(
        concurrent=concurrent,
        concurrent_defined=conc_defined,
        lagged=lagged,
        lagged_defined=lagged_defined,
        sample_counts=counts,
        n_anchors=n_anchors,
        low_sample_lags=tuple(low),
    )


def rank_lags(report: CorrReport):
    """Candidate lags ordered by mean |cross-correlation| over defined entries."""
    if not report.lagged:
        raise EmptyReportError("correlation report holds no candidate lags")
    scores = []
    for lag in sorted(report.lagged):
        defined = report.lagged_defined[lag]
        vals = np.abs(report.lagged[lag][defined])
        scores.append((lag, float(vals.mean()) if vals.size else 0.0))
    scores.sort(key=lambda item: (-item[1], item[0]))
    return scores


def format_lag_ranking(ranking, sample_counts=None) -> str:
    """Plain-text ranking table with advice when nothing exceeds noise level."""
    lines = ["lag_steps  score"]
    for lag, score in ranking:
        suffix = ""
        if sample_counts is not None and sample_counts.get(lag, 0) < LOW_SAMPLE_COUNT:
            suffix = f"  (only {sample_counts[lag]} pairs)"
        lines.append(f"{lag:>9d}  {score:.6f}{suffix}")
    if all(score < WHITE_SCORE_CEILING for _, score in ranking):
        lines.append(
            f"all scores below {WHITE_SCORE_CEILING}: residuals look white; "
            "initialize A = 0 and expect no gain from the correction term"
        )
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------- windowing


def residual_windows(model, panel, stride=None):
    """Base-forecaster residual windows over the panel, normalized space.

    Strides anchors by the horizon by default so consecutive target windows
    do not overlap. Returns (residuals, masks, anchors) with masked entries
    zeroed.
    """
    p, q = model.fspec.horizon_in, model.fspec.horizon_out
    stride = q if stride is None else int(stride)
    if stride < 1:
        raise ConfigError("stride must be a positive step count")
    lo, hi = p - 1, panel.n_steps - 1 - q
    if hi < lo:
        raise SeriesTooShortError(t_actual=panel.n_steps, t_required=p + q)
    anchors = np.arange(lo, hi + 1, stride)
    values_z = model.norm.apply(panel.values, panel.mask)
    xs = np.asarray([values_z[:, t - p + 1 : t + 1] for t in anchors])
    f = forward(model.fspec, model.params, xs)
    masks = np.asarray([panel.mask[:, t + 1 : t + 1 + q] for t in anchors])
    ys = np.asarray([values_z[:, t + 1 : t + 1 + q] for t in anchors])
    resids = np.where(masks, ys - f, 0.0)
    return resids, masks, anchors


def series_windows(values, mask, q, stride=None):
    """Chop a stored residual series into horizon-width windows.

    Window i covers columns [start_i, start_i + q); its anchor is start_i, so
    anchor differences equal step differences for lag pairing.
    """
    values = np.asarray(values, dtype=float)
    mask = np.asarray(mask, dtype=bool)
    if values.shape != mask.shape or values.ndim != 2:
        raise ValueError("values and mask must be matching 2-D arrays")
    q = int(q)
    stride = q if stride is None else int(stride)
    if q < 1 or stride < 1:
        raise ConfigError("window width and stride must be positive")
    t_total = values.shape[1]
    if t_total < q:
        raise SeriesTooShortError(t_actual=t_total, t_required=q)
    starts = np.arange(0, t_total - q + 1, stride)
    resids = np.asarray([values[:, s : s + q] for s in starts])
    masks = np.asarray([mask[:, s : s + q] for s in starts])
    return np.where(masks, resids, 0.0), masks, starts


# ---------------------------------------------------------------- metrics


@dataclass(frozen=True)
class MetricTable:
    """Per-horizon-step MAE/RMSE over observed entries."""

    mae: np.ndarray
    rmse: np.ndarray
    counts: np.ndarray

    @property
    def horizon(self) -> int:
        return int(self.mae.size)

    def summary(self) -> dict:
        out = {}
        for step in SUMMARY_STEPS:
            if step <= self.horizon:
                out[f"{step}-step"] = {
                    "mae": float(self.mae[step - 1]),
                    "rmse": float(self.rmse[step - 1]),
                }
        return out

    def to_json_dict(self) -> dict:
        return {
            "horizon": self.horizon,
            "per_step": {
                "mae": [float(v) for v in self.mae],
                "rmse": [float(v) for v in self.rmse],
                "count": [int(c) for c in self.counts],
            },
            "summary": self.summary(),
        }


def metrics(predictions, truths, masks=None) -> MetricTable:
    """MAE and RMSE per forecast step, observed entries only."""
    pred = np.asarray(predictions, dtype=float)
    true = np.asarray(truths, dtype=float)
    if pred.ndim == 2:
        pred, true = pred[None], true[None]
        if masks is not None:
            masks = np.asarray(masks)[None]
    if pred.shape != true.shape or pred.ndim != 3:
        raise ValueError("predictions and truths must be matching (S, N, Q) arrays")
    if masks is None:
        m = np.ones(pred.shape, dtype=bool)
    else:
        m = np.asarray(masks, dtype=bool)
        if m.shape != pred.shape:
            raise ValueError("mask shape does not match predictions")
    diff = np.where(m, pred - true, 0.0)
    counts = m.sum(axis=(0, 1))
    with np.errstate(invalid="ignore", divide="ignore"):
        mae = np.abs(diff).sum(axis=(0, 1)) / counts
        rmse = np.sqrt((diff**2).sum(axis=(0, 1)) / counts)
    mae = np.where(counts > 0, mae, np.nan)
    rmse = np.where(counts > 0, rmse, np.nan)
    return MetricTable(mae=mae, rmse=rmse, counts=counts.astype(int))


def coverage(dists, truths, level, masks=None) -> np.ndarray:
    """Fraction of observed entries inside the central interval, per step."""
    if not (0.0 < level < 1.0):
        raise ValueError("level must lie in (0, 1)")
    true = np.asarray(truths, dtype=float)
    if len(dists) != true.shape[0] or true.ndim != 3:
        raise ValueError("need one forecast distribution per truth window")
    if masks is None:
        m = np.ones(true.shape, dtype=bool)
    else:
        m = np.asarray(masks, dtype=bool)
        if m.shape != true.shape:
            raise ValueError("mask shape does not match truths")
    inside = np.zeros(true.shape, dtype=bool)
    for i, dist in enumerate(dists):
        lo, hi = dist.interval(level)
        inside[i] = (true[i] >= lo) & (true[i] <= hi)
    hits = (inside & m).sum(axis=(0, 1))
    counts = m.sum(axis=(0, 1))
    with np.errstate(invalid="ignore", divide="ignore"):
        frac = hits / counts
    return np.where(counts > 0, frac, np.nan)


# ---------------------------------------------------------------- heatmap


def heatmap(matrix, path, clip=None):
    """Write a diverging-color binary pixmap of the matrix, plus CSV sidecar.

    Colors interpolate from blue (negative) through near-white (zero) to red
    (positive), scaled symmetrically by the largest magnitude.  ``clip``
    limits values to [-clip, clip] first; the sidecar stores the exact
    clipped matrix.  Returns (ppm_path, csv_path).
    """
    m = np.asarray(matrix, dtype=float)
    if m.ndim != 2 or m.size == 0:
        raise ValueError("heatmap needs a non-empty 2-D matrix")
    if not np.isfinite(m).all():
        raise ValueError("heatmap matrix contains non-finite entries")
    if clip is not None:
        clip = float(clip)
        if clip <= 0:
            raise ValueError("clip threshold must be positive")
        m = np.clip(m, -clip, clip)

    path = Path(path)
    csv_path = path.with_suffix(".csv")
    save_matrix(csv_path, m)

    vmax = float(np.abs(m).max())
    t = m / (vmax if vmax > 0 else 1.0)
    mid = np.asarray(_MID_COLOR, dtype=float)
    pos_span = np.asarray(_POS_COLOR, dtype=float) - mid
    neg_span = np.asarray(_NEG_COLOR, dtype=float) - mid
    # each entry lies on one side of zero, so only one span term is active
    pix = (
        mid
        + np.clip(t, 0.0, 1.0)[..., None] * pos_span
        + np.clip(-t, 0.0, 1.0)[..., None] * neg_span
    )
    with open(path, "wb") as fh:
        fh.write(b"P6\n%d %d\n255\n" % (m.shape[1], m.shape[0]))
        fh.write(np.rint(pix).astype(np.uint8).tobytes())
    return path, csv_path
