"""Command-line entry point: synth / train / eval / diagnose.

Every subcommand reads a flat ``key = value`` config file (optional), lets
command-line flags override individual keys, and echoes the fully resolved
config into the output directory as ``config.txt``.  The echoed file is
self-contained: re-running the same subcommand from it (into a fresh
directory) reproduces the artifacts byte for byte.  The output directory
itself is deliberately not part of the config.

Exit codes: 0 success, 2 usage or config problem, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import datagen, diagnostics, figures
from .datagen import load_csv, make_synth_spec, save_csv, save_truth
from .errors import (
    ConfigError,
    DataFormatError,
    DivergenceError,
    DynregError,
    EmptyReportError,
    InsufficientSamplesError,
    NoValidWindowsError,
    SeriesTooShortError,
)
from .forecasters import KINDS, ForecasterSpec
from .serialize import load_manifest, save_manifest, save_matrix
from .training import (
    TrainConfig,
    build_windows,
    load_model,
    predict,
    save_model,
    target_windows,
    train,
)

MINUTES_PER_UNIT = {"d": 1440.0, "w": 10080.0}


# ------------------------------------------------------------------ config


def _bool(text):
    t = str(text).strip().lower()
    if t in ("true", "1", "yes"):
        return True
    if t in ("false", "0", "no"):
        return False
    raise ConfigError(f"expected a boolean, got {text!r}")


def _floats(text):
    return tuple(float(tok) for tok in str(text).split(","))


def _opt_float(text):
    return None if str(text).strip() == "" else float(text)


def _opt_str(text):
    return None if str(text).strip() == "" else str(text)


# (key, caster-from-text, default) per subcommand; flags share the key names.
SYNTH_KEYS = [
    ("n", int, 8),
    ("p", int, 12),
    ("q", int, 4),
    ("t_total", int, 4000),
    ("delta", str, "4"),
    ("rng_seed", int, 0),
    ("radius", float, 0.6),
    ("missing_rate", float, 0.0),
    ("noise", str, "identity"),
    ("noise_rho", float, 0.45),
    ("amp_daily", float, 1.0),
    ("amp_weekly", float, 0.5),
    ("period_daily", float, 288.0),
    ("period_weekly", float, 2016.0),
    ("level", float, 0.0),
    ("resolution_minutes", int, 5),
    ("white", _bool, False),
]

TRAIN_KEYS = [
    ("data", str, ""),
    ("kind", str, "linear_seq2seq"),
    ("p", int, 12),
    ("q", int, 4),
    ("hidden_width", int, 0),
    ("delta", str, "4"),
    ("omega", float, 1.0),
    ("rho", float, 0.001),
    ("lr", float, 0.001),
    ("dr_lr", _opt_float, None),
    ("weight_decay", float, 0.0001),
    ("batch_size", int, 64),
    ("max_epochs", int, 100),
    ("patience", int, 30),
    ("init_scheme_ab", str, "random"),
    ("init_scale", float, 0.001),
    ("split", _floats, (0.6, 0.2, 0.2)),
    ("rng_seed", int, 0),
    ("freeze_ar", _bool, False),
]

EVAL_KEYS = [
    ("model", str, ""),
    ("data", str, ""),
    ("split", str, "test"),
]

DIAGNOSE_KEYS = [
    ("model", _opt_str, None),
    ("data", _opt_str, None),
    ("residuals", _opt_str, None),
    ("q", int, 0),
    ("lags", str, ""),
    ("stride", int, 0),
    ("clip", _opt_float, None),
]


def resolve_config(schema, args):
    """defaults < config file < explicit flags, strict on unknown file keys."""
    cfg = {key: default for key, _, default in schema}
    known = {key for key, _, _ in schema}
    if getattr(args, "config", None):
        loaded = load_manifest(args.config)
        for key in loaded:
            if key not in known:
                raise ConfigError(f"unknown config key {key!r} in {args.config}")
        for key, cast, _ in schema:
            if key in loaded:
                cfg[key] = cast(loaded[key])
    for key, _, _ in schema:
        value = getattr(args, key, None)
        if value is not None:
            cfg[key] = value
    return cfg


def echo_config(cfg, schema, out_dir):
    ordered = {key: cfg[key] for key, _, _ in schema}
    for key, value in ordered.items():
        if value is None:
            ordered[key] = ""
    save_manifest(Path(out_dir) / "config.txt", ordered)


def parse_lag(token, resolution_minutes):
    """A lag as a step count, or 'Nd' / 'Nw' resolved via the panel resolution."""
    text = str(token).strip().lower()
    if not text:
        raise ConfigError("empty lag value")
    if text[-1] in MINUTES_PER_UNIT:
        try:
            value = float(text[:-1])
        except ValueError:
            raise ConfigError(f"bad lag value {token!r}") from None
        steps = value * MINUTES_PER_UNIT[text[-1]] / resolution_minutes
        if steps <= 0 or abs(steps - round(steps)) > 1e-9:
            raise ConfigError(
                f"lag {token!r} is not a whole number of {resolution_minutes}-minute steps"
            )
        return int(round(steps))
    try:
        steps = int(text)
    except ValueError:
        raise ConfigError(
            f"unknown lag {token!r}; use a step count or a 'd'/'w' suffix"
        ) from None
    if steps <= 0:
        raise ConfigError("lags must be positive")
    return steps


def _out_dir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


# ------------------------------------------------------------------ commands


def cmd_synth(args) -> int:
    cfg = resolve_config(SYNTH_KEYS, args)
    cfg["delta"] = parse_lag(cfg["delta"], cfg["resolution_minutes"])
    try:
        spec = make_synth_spec(
            n=cfg["n"],
            p=cfg["p"],
            q=cfg["q"],
            t_total=cfg["t_total"],
            delta=cfg["delta"],
            rng_seed=cfg["rng_seed"],
            radius=cfg["radius"],
            missing_rate=cfg["missing_rate"],
            noise=cfg["noise"],
            noise_rho=cfg["noise_rho"],
            amp_daily=cfg["amp_daily"],
            amp_weekly=cfg["amp_weekly"],
            period_daily=cfg["period_daily"],
            period_weekly=cfg["period_weekly"],
            level=cfg["level"],
            resolution_minutes=cfg["resolution_minutes"],
            white=cfg["white"],
        )
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    panel, truth = datagen.generate(spec)
    out = _out_dir(args)
    save_csv(out / "panel.csv", panel)
    save_truth(truth, out / "truth")
    echo_config(cfg, SYNTH_KEYS, out)
    print(f"wrote panel with {panel.n_nodes} nodes x {panel.n_steps} steps to {out}")
    return 0


def cmd_train(args) -> int:
    cfg = resolve_config(TRAIN_KEYS, args)
    if args.no_nll:
        cfg["rho"] = 0.0
    if args.no_ar:
        cfg["freeze_ar"] = True
    if args.freeze_dr:
        cfg["freeze_ar"] = True
        cfg["rho"] = 0.0
    if not cfg["data"]:
        raise ConfigError("train needs a data panel (key 'data' or --data)")
    panel = load_csv(cfg["data"])
    cfg["delta"] = parse_lag(cfg["delta"], panel.resolution_minutes)

    fspec = ForecasterSpec(
        kind=cfg["kind"],
        n_nodes=panel.n_nodes,
        horizon_in=cfg["p"],
        horizon_out=cfg["q"],
        hidden_width=cfg["hidden_width"],
    )
    tc = TrainConfig(
        delta=cfg["delta"],
        omega=cfg["omega"],
        rho=cfg["rho"],
        lr=cfg["lr"],
        weight_decay=cfg["weight_decay"],
        batch_size=cfg["batch_size"],
        max_epochs=cfg["max_epochs"],
        patience=cfg["patience"],
        init_scheme_ab=cfg["init_scheme_ab"],
        init_scale=cfg["init_scale"],
        split=cfg["split"],
        rng_seed=cfg["rng_seed"],
        freeze_ar=cfg["freeze_ar"],
        dr_lr=cfg["dr_lr"],
    )
    model = train(panel, fspec, tc)
    out = _out_dir(args)
    save_model(model, out)
    figures.render_history(model.history, out / "history.png")
    echo_config(cfg, TRAIN_KEYS, out)
    print(
        f"trained {cfg['kind']} for {model.history.shape[0]} epochs; "
        f"best val {model.best_val:.6f} at epoch {model.best_epoch}; saved to {out}"
    )
    return 0


def _split_index(panel, model, name):
    names = ("train", "val", "test")
    if name not in names:
        raise ConfigError(f"split must be one of {names}")
    windows = build_windows(
        panel, model.cfg, model.fspec.horizon_in, model.fspec.horizon_out
    )
    index = windows[names.index(name)]
    if len(index) == 0:
        raise NoValidWindowsError(f"{name} split admits no forecast windows")
    return index


def cmd_eval(args) -> int:
    cfg = resolve_config(EVAL_KEYS, args)
    if not cfg["model"] or not cfg["data"]:
        raise ConfigError("eval needs a model directory and a data panel")
    model = load_model(cfg["model"])
    panel = load_csv(cfg["data"])
    index = _split_index(panel, model, cfg["split"])
    dists = predict(model, panel, index)
    means = np.asarray([d.mean for d in dists])
    truths, masks = target_windows(panel, index)
    table = diagnostics.metrics(means, truths, masks)

    out = _out_dir(args)
    doc = table.to_json_dict()
    doc["split"] = cfg["split"]
    doc["n_windows"] = len(index)
    with open(out / "metrics.json", "w", encoding="ascii") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")
    with open(out / "metrics.csv", "w", encoding="ascii") as fh:
        fh.write("step,mae,rmse,count\n")
        for i in range(table.horizon):
            fh.write(
                f"{i + 1},{table.mae[i]:.17g},{table.rmse[i]:.17g},{int(table.counts[i])}\n"
            )
    figures.render_metrics(table, out / "metrics.png", title=f"{cfg['split']} split")
    echo_config(cfg, EVAL_KEYS, out)
    summary = ", ".join(
        f"{k} mae={v['mae']:.4f} rmse={v['rmse']:.4f}" for k, v in doc["summary"].items()
    )
    print(f"evaluated {len(index)} windows on {cfg['split']}: {summary}")
    return 0


def cmd_diagnose(args) -> int:
    cfg = resolve_config(DIAGNOSE_KEYS, args)
    if not cfg["lags"]:
        raise ConfigError("diagnose needs candidate lags (key 'lags' or --lags)")

    if cfg["residuals"]:
        panel = load_csv(cfg["residuals"])
        if cfg["q"] < 1:
            raise ConfigError("diagnose on a residual series needs the window width q")
        q = cfg["q"]
        stride = cfg["stride"] if cfg["stride"] > 0 else q
        resids, masks, anchors = diagnostics.series_windows(
            panel.values, panel.mask, q=q, stride=stride
        )
    elif cfg["model"] and cfg["data"]:
        model = load_model(cfg["model"])
        panel = load_csv(cfg["data"])
        q = model.fspec.horizon_out
        stride = cfg["stride"] if cfg["stride"] > 0 else q
        cfg["q"] = q
        resids, masks, anchors = diagnostics.residual_windows(model, panel, stride=stride)
    else:
        raise ConfigError("diagnose needs either a residual CSV or a model + data pair")
    cfg["stride"] = stride

    lags = [parse_lag(tok, panel.resolution_minutes) for tok in str(cfg["lags"]).split(",")]
    cfg["lags"] = ",".join(str(lag) for lag in lags)
    report = diagnostics.residual_correlations(resids, lags, masks=masks, anchors=anchors)
    ranking = diagnostics.rank_lags(report)

    out = _out_dir(args)
    clip = cfg["clip"]
    diagnostics.heatmap(report.concurrent, out / "concurrent.ppm", clip=clip)
    figures.render_heatmap(
        report.concurrent, out / "concurrent.png", clip=clip, title="concurrent correlation"
    )
    for lag in lags:
        diagnostics.heatmap(report.lagged[lag], out / f"lag_{lag}.ppm", clip=clip)
        figures.render_heatmap(
            report.lagged[lag], out / f"lag_{lag}.png", clip=clip,
            title=f"lag {lag} cross-correlation",
        )
    text = diagnostics.format_lag_ranking(ranking, report.sample_counts)
    (out / "lag_ranking.txt").write_text(text, encoding="ascii")
    echo_config(cfg, DIAGNOSE_KEYS, out)
    print(text, end="")
    return 0


# ------------------------------------------------------------------ parser


def _add_config_out(sub):
    sub.add_argument("--config", help="flat key = value config file")
    sub.add_argument("--out", required=True, help="output directory")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="dynreg",
        description="Seasonal residual correction for multistep forecasters.",
    )
    commands = parser.add_subparsers(dest="command", required=True)

    synth = commands.add_parser("synth", help="generate a synthetic panel + ground truth")
    _add_config_out(synth)
    synth.add_argument("--n", type=int)
    synth.add_argument("--p", type=int)
    synth.add_argument("--q", type=int)
    synth.add_argument("--t-total", dest="t_total", type=int)
    synth.add_argument("--delta", type=str, help="steps, or e.g. '1d' / '1w'")
    synth.add_argument("--rng-seed", dest="rng_seed", type=int)
    synth.add_argument("--radius", type=float)
    synth.add_argument("--missing-rate", dest="missing_rate", type=float)
    synth.add_argument("--noise", choices=("identity", "banded", "equicorrelated"))
    synth.add_argument("--noise-rho", dest="noise_rho", type=float)
    synth.add_argument("--amp-daily", dest="amp_daily", type=float)
    synth.add_argument("--amp-weekly", dest="amp_weekly", type=float)
    synth.add_argument("--period-daily", dest="period_daily", type=float)
    synth.add_argument("--period-weekly", dest="period_weekly", type=float)
    synth.add_argument("--level", type=float)
    synth.add_argument("--resolution-minutes", dest="resolution_minutes", type=int)
    synth.add_argument("--white", action="store_true", default=None)
    synth.set_defaults(func=cmd_synth)

    tr = commands.add_parser("train", help="fit a base forecaster + residual correction")
    _add_config_out(tr)
    tr.add_argument("--data", help="panel CSV")
    tr.add_argument("--kind", choices=KINDS)
    tr.add_argument("--p", type=int, help="history window length")
    tr.add_argument("--q", type=int, help="forecast horizon")
    tr.add_argument("--hidden-width", dest="hidden_width", type=int)
    tr.add_argument("--delta", type=str, help="steps, or e.g. '1d' / '1w'")
    tr.add_argument("--omega", type=float)
    tr.add_argument("--rho", type=float)
    tr.add_argument("--lr", type=float)
    tr.add_argument("--dr-lr", dest="dr_lr", type=float)
    tr.add_argument("--weight-decay", dest="weight_decay", type=float)
    tr.add_argument("--batch-size", dest="batch_size", type=int)
    tr.add_argument("--max-epochs", dest="max_epochs", type=int)
    tr.add_argument("--patience", type=int)
    tr.add_argument("--init-scheme-ab", dest="init_scheme_ab", choices=("random", "zeros", "diagonal"))
    tr.add_argument("--init-scale", dest="init_scale", type=float)
    tr.add_argument("--split", type=_floats, help="train,val,test fractions")
    tr.add_argument("--rng-seed", dest="rng_seed", type=int)
    tr.add_argument("--freeze-dr", dest="freeze_dr", action="store_true",
                    help="disable the whole correction block (A = 0, rho = 0)")
    tr.add_argument("--no-ar", dest="no_ar", action="store_true",
                    help="ablation: drop the autoregressive term, keep the likelihood")
    tr.add_argument("--no-nll", dest="no_nll", action="store_true",
                    help="ablation: drop the likelihood term (rho = 0)")
    tr.set_defaults(func=cmd_train, freeze_ar=None)

    ev = commands.add_parser("eval", help="score a trained model on a panel split")
    _add_config_out(ev)
    ev.add_argument("--model", help="model directory from 'train'")
    ev.add_argument("--data", help="panel CSV")
    ev.add_argument("--split", choices=("train", "val", "test"))
    ev.set_defaults(func=cmd_eval)

    dg = commands.add_parser("diagnose", help="residual correlation report + heatmaps")
    _add_config_out(dg)
    dg.add_argument("--model", help="model directory (with --data)")
    dg.add_argument("--data", help="panel CSV to compute residuals on")
    dg.add_argument("--residuals", help="residual series CSV (instead of model+data)")
    dg.add_argument("--q", type=int, help="window width for a residual series")
    dg.add_argument("--lags", help="comma list of lags: steps or 'd'/'w' suffixed")
    dg.add_argument("--stride", type=int, help="anchor stride (default: q)")
    dg.add_argument("--clip", type=float, help="clip heatmap values to [-clip, clip]")
    dg.set_defaults(func=cmd_diagnose)

    return parser


USAGE_ERRORS = (
    ConfigError,
    DataFormatError,
    SeriesTooShortError,
    NoValidWindowsError,
    InsufficientSamplesError,
    EmptyReportError,
    FileNotFoundError,
    NotADirectoryError,
    IsADirectoryError,
)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except USAGE_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (DivergenceError, DynregError, FloatingPointError, ValueError,
            np.linalg.LinAlgError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
