"""Command-line entry point.

Subcommands: train, eval, flops, attn, synth, gradcheck.  Configuration is
a flat ``key = value`` text file mirroring the model/train config fields;
``--set key=value`` flags override file values.  Every run echoes its fully
resolved configuration, and every artifact embeds it.

Exit codes: 0 success, 2 config error, 3 data error, 4 numeric abort.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .attnviz import dump_for_record, export
from .complexity import format_sweep_csv, sweep, write_sweep_csv
from .config import MswConfig
from .data import (
    DatasetHeader,
    SynthSpec,
    fold_split,
    load_dataset,
    save_dataset,
    standardize,
    synth_generate,
)
from .errors import (
    AdmissibilityError,
    ConfigError,
    DataError,
    DimensionError,
    NumericError,
    UndefinedMetricError,
)
from .metrics import EvalBatch, evaluate
from .model import predict
from .params import init_params, load_checkpoint, save_checkpoint
from .train import TrainConfig, finite_difference_audit, train_loop, write_metric_log

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_NUMERIC = 4

GRADCHECK_TOLERANCE = 1e-4

_INT = int
_FLOAT = float


def _int_list(text: str) -> tuple[int, ...]:
    try:
        return tuple(int(p) for p in str(text).replace(" ", "").split(",") if p)
    except ValueError as exc:
        raise ConfigError(f"expected comma-separated integers, got {text!r}") from exc


# Flat-file schema: every model/train field, one parser each.
MODEL_KEYS = {
    "L": _INT,
    "n_leads": _INT,
    "K": _INT,
    "P": _INT,
    "C": _INT,
    "heads": _INT,
    "windows": _int_list,
    "shift": _INT,
    "attn_dropout": _FLOAT,
    "mlp_ratio": _INT,
}
TRAIN_KEYS = {
    "max_epochs": _INT,
    "batch_size": _INT,
    "lr0": _FLOAT,
    "decay_factor": _FLOAT,
    "decay_every": _INT,
    "seed": _INT,
    "report_every": _INT,
}


@dataclass
class CliInvocation:
    """One parsed run: which subcommand, with which settings."""

    subcommand: str
    config_file: str | None = None
    overrides: tuple[str, ...] = ()
    seed: int | None = None

    @classmethod
    def from_args(cls, args) -> "CliInvocation":
        return cls(
            subcommand=args.subcommand,
            config_file=getattr(args, "config", None),
            overrides=tuple(getattr(args, "set", None) or ()),
            seed=getattr(args, "seed", None),
        )


def parse_config_file(path) -> dict:
    """Read ``key = value`` lines; '#' starts a comment."""
    values = {}
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected 'key = value', got {raw!r}")
        key, _, value = line.partition("=")
        values[key.strip()] = value.strip()
    return values


def _typed(values: dict) -> dict:
    out = {}
    for key, raw in values.items():
        if key in MODEL_KEYS:
            out[key] = MODEL_KEYS[key](raw)
        elif key in TRAIN_KEYS:
            out[key] = TRAIN_KEYS[key](raw)
        else:
            raise ConfigError(f"unknown config key: {key!r}")
    return out


def collect_settings(args) -> dict:
    """File values, then --set overrides, then --seed."""
    values = {}
    if getattr(args, "config", None):
        path = Path(args.config)
        if not path.exists():
            raise ConfigError(f"config file not found: {path}")
        values.update(parse_config_file(path))
    for item in getattr(args, "set", None) or []:
        if "=" not in item:
            raise ConfigError(f"--set needs key=value, got {item!r}")
        key, _, value = item.partition("=")
        values[key.strip()] = value.strip()
    out = _typed(values)
    if getattr(args, "seed", None) is not None:
        out["seed"] = args.seed
    return out


def resolve_configs(settings: dict, header: DatasetHeader) -> tuple[MswConfig, TrainConfig]:
    """Build both configs; dataset geometry wins over (and checks) file values."""
    for key, actual in (("L", header.L), ("n_leads", header.n_leads), ("K", header.K)):
        if key in settings and settings[key] != actual:
            raise ConfigError(
                f"config {key}={settings[key]} does not match the dataset ({key}={actual})"
            )
    model_kwargs = {k: v for k, v in settings.items() if k in MODEL_KEYS}
    model_kwargs.update(L=header.L, n_leads=header.n_leads, K=header.K)
    train_kwargs = {k: v for k, v in settings.items() if k in TRAIN_KEYS}
    return MswConfig(**model_kwargs), TrainConfig(**train_kwargs)


def echo_config(config: dict) -> None:
    print("resolved config:")
    for key in sorted(config):
        print(f"  {key} = {config[key]}")


def read_signal_header(signal_file) -> tuple[int, int, int, int]:
    """Cheap peek at (n_leads, L, K, sample_rate) before loading anything."""
    path = Path(signal_file)
    if not path.exists():
        raise DataError(f"signal file not found: {path}")
    with open(path, "rb") as fh:
        parts = fh.readline().decode("ascii", errors="replace").split()
    if len(parts) != 4:
        raise DataError(f"{path}: header line must be 'n_leads L K sample_rate'")
    try:
        n_leads, L, K, rate = (int(p) for p in parts)
    except ValueError as exc:
        raise DataError(f"{path}: non-integer header field") from exc
    return n_leads, L, K, rate


# ---------------------------------------------------------------------------
# Subcommands


def run_train(args) -> int:
    settings = collect_settings(args)
    n_leads, L, K, rate = read_signal_header(args.signals)
    # Admissibility is checked here, before any data or compute.
    cfg, tcfg0 = resolve_configs(
        settings, DatasetHeader(n_leads=n_leads, L=L, K=K, class_names=(), sample_rate=rate)
    )
    out_dir = Path(args.out_dir)
    tcfg = TrainConfig(**{**tcfg0.to_dict(), "checkpoint": str(out_dir / "checkpoint")})
    resolved = {"model": cfg.to_dict(), "train": tcfg.to_dict()}
    echo_config({**cfg.to_dict(), **tcfg.to_dict()})

    ds = standardize(load_dataset(args.signals, args.labels))
    params = init_params(cfg, seed=tcfg.seed)
    result = train_loop(cfg, params, ds, tcfg, verbose=not args.quiet)
    # The log embeds the run config but not the artifact location, so two
    # same-seed runs in different directories produce identical files.
    log_config = {**cfg.to_dict(), **tcfg.to_dict()}
    log_config.pop("checkpoint", None)
    write_metric_log(result.log, out_dir / "metrics.csv", config=log_config)
    if result.best_epoch < 0:
        # No validation fold: retain the final parameters instead.
        save_checkpoint(result.params, tcfg.checkpoint, config=resolved)
        print("no validation fold; retained final-epoch parameters")
    else:
        print(f"best val macro-F1 {result.best_val_macro_f1:.4f} at epoch {result.best_epoch}")
    print(f"wrote {out_dir / 'metrics.csv'} and {tcfg.checkpoint}.json/.bin")
    return EXIT_OK


def run_eval(args) -> int:
    store, saved = load_checkpoint(args.checkpoint)
    model_cfg = saved.get("model")
    if not model_cfg:
        raise ConfigError(f"checkpoint {args.checkpoint} carries no model config")
    cfg = MswConfig.from_dict(model_cfg)
    echo_config(cfg.to_dict())
    ds = standardize(load_dataset(args.signals, args.labels))
    train_recs, val_recs, test_recs = fold_split(ds)
    split = {"train": train_recs, "val": val_recs, "test": test_recs}[args.split]
    if not split:
        raise DataError(f"split {args.split!r} holds no records")
    signals = np.stack([r.signal for r in split])
    labels = np.stack([r.labels for r in split])
    probs = predict(signals, cfg, store)
    report = evaluate(EvalBatch(scores=probs, labels=labels))
    payload = {"split": args.split, "config": saved, "metrics": report.to_dict()}
    text = json.dumps(payload, indent=1)
    print(text)
    if args.out:
        Path(args.out).parent.mkdir(parents=True, exist_ok=True)
        Path(args.out).write_text(text)
        print(f"wrote {args.out}")
    return EXIT_OK


def run_flops(args) -> int:
    windows = _int_list(args.windows)
    lengths = range(args.l_min, args.l_max + 1, args.l_step)
    config = {
        "channels": args.channels,
        "windows": list(windows),
        "unit": args.unit,
        "l_min": args.l_min,
        "l_max": args.l_max,
        "l_step": args.l_step,
    }
    echo_config(config)
    rows = sweep(lengths, args.channels, windows)
    if args.out:
        write_sweep_csv(rows, args.out, args.channels, windows, unit=args.unit)
        print(f"wrote {args.out}")
    else:
        print(format_sweep_csv(rows, args.channels, windows, unit=args.unit), end="")
    first = rows[0]
    print(f"L={first[0]}: global {first[1]} vs windowed {first[2]} (ratio {first[3]:.2f})")
    return EXIT_OK


def run_attn(args) -> int:
    store, saved = load_checkpoint(args.checkpoint)
    model_cfg = saved.get("model")
    if not model_cfg:
        raise ConfigError(f"checkpoint {args.checkpoint} carries no model config")
    cfg = MswConfig.from_dict(model_cfg)
    echo_config(cfg.to_dict())
    ds = standardize(load_dataset(args.signals, args.labels))
    by_id = {r.id: r for r in ds.records}
    if args.record:
        if args.record not in by_id:
            raise DataError(f"record id {args.record!r} not in dataset")
        record = by_id[args.record]
    else:
        record = ds.records[0]
    leads = _int_list(args.leads) if args.leads else ()
    dump, _ = dump_for_record(record, cfg, store)
    written = export(dump, record.signal, args.out_dir, leads=leads,
                     config={"model": cfg.to_dict(), "record_id": record.id})
    for path in written:
        print(f"wrote {path}")
    return EXIT_OK


def run_synth(args) -> int:
    spec = SynthSpec(
        seed=args.seed if args.seed is not None else 0,
        n_records=args.records,
        n_leads=args.n_leads,
        L=args.length,
        noise_std=args.noise_std,
    )
    echo_config(spec.__dict__)
    ds = synth_generate(spec)
    out_dir = Path(args.out_dir)
    signal_file = out_dir / "signals.bin"
    label_file = out_dir / "labels.csv"
    save_dataset(ds, signal_file, label_file)
    # The two data files follow the fixed ingest format; the resolved spec
    # rides along in a sidecar.
    (out_dir / "synth_spec.json").write_text(json.dumps(spec.__dict__, indent=1))
    print(f"wrote {signal_file} ({signal_file.stat().st_size} bytes) and {label_file}")
    return EXIT_OK


def run_gradcheck(args) -> int:
    cfg = MswConfig(L=40, n_leads=2, P=5, C=8, heads=2, windows=(2, 4), K=3)
    echo_config({**cfg.to_dict(), "seed": args.seed or 0, "step": args.step})
    rng = np.random.default_rng(args.seed or 0)
    params = init_params(cfg, seed=args.seed or 0)
    signals = rng.normal(size=(2, cfg.n_leads, cfg.L))
    labels = (rng.random((2, cfg.K)) < 0.5).astype(np.float64)
    worst, per_param = finite_difference_audit(cfg, params, signals, labels, step=args.step)
    for name in sorted(per_param, key=per_param.get, reverse=True)[:5]:
        print(f"  {name}: {per_param[name]:.3e}")
    print(f"max rel error {worst:.3e} over {len(per_param)} parameters "
          f"({'OK' if worst < GRADCHECK_TOLERANCE else 'FAIL'}, tolerance {GRADCHECK_TOLERANCE})")
    return EXIT_OK if worst < GRADCHECK_TOLERANCE else EXIT_NUMERIC


# ---------------------------------------------------------------------------
# Parser


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="mswecg",
        description="Multi-scale windowed-attention ECG classifier toolkit",
    )
    sub = parser.add_subparsers(dest="subcommand", required=True)

    def add_common(p):
        p.add_argument("--config", help="flat key = value config file")
        p.add_argument("--set", action="append", metavar="KEY=VALUE",
                       help="override one config key (repeatable)")
        p.add_argument("--seed", type=int, help="override the seed")

    p_train = sub.add_parser("train", help="train a model and write checkpoint + metric log")
    add_common(p_train)
    p_train.add_argument("--signals", required=True)
    p_train.add_argument("--labels", required=True)
    p_train.add_argument("--out-dir", required=True)
    p_train.add_argument("--quiet", action="store_true")
    p_train.set_defaults(func=run_train)

    p_eval = sub.add_parser("eval", help="evaluate a checkpoint on one fold split")
    p_eval.add_argument("--checkpoint", required=True)
    p_eval.add_argument("--signals", required=True)
    p_eval.add_argument("--labels", required=True)
    p_eval.add_argument("--split", choices=("train", "val", "test"), default="test")
    p_eval.add_argument("--out", help="write the report JSON here")
    p_eval.set_defaults(func=run_eval)

    p_flops = sub.add_parser("flops", help="global vs windowed MAC comparison CSV")
    p_flops.add_argument("--channels", type=int, default=12)
    p_flops.add_argument("--windows", default="5,10,20")
    p_flops.add_argument("--l-min", type=int, default=1000)
    p_flops.add_argument("--l-max", type=int, default=10000)
    p_flops.add_argument("--l-step", type=int, default=1000)
    p_flops.add_argument("--unit", choices=("samples", "tokens"), default="samples",
                         help="how L is to be read; counts are unit-agnostic")
    p_flops.add_argument("--out")
    p_flops.set_defaults(func=run_flops)

    p_attn = sub.add_parser("attn", help="export attention scores for one record")
    p_attn.add_argument("--checkpoint", required=True)
    p_attn.add_argument("--signals", required=True)
    p_attn.add_argument("--labels", required=True)
    p_attn.add_argument("--record", help="record id (default: first record)")
    p_attn.add_argument("--leads", help="comma-separated lead indices for SVG export")
    p_attn.add_argument("--out-dir", required=True)
    p_attn.set_defaults(func=run_attn)

    p_synth = sub.add_parser("synth", help="generate the synthetic dataset files")
    p_synth.add_argument("--out-dir", required=True)
    p_synth.add_argument("--records", type=int, default=750)
    p_synth.add_argument("--n-leads", type=int, default=4)
    p_synth.add_argument("--length", type=int, default=200)
    p_synth.add_argument("--noise-std", type=float, default=0.1)
    p_synth.add_argument("--seed", type=int, default=0)
    p_synth.set_defaults(func=run_synth)

    p_grad = sub.add_parser("gradcheck", help="finite-difference audit of the full model")
    p_grad.add_argument("--seed", type=int, default=0)
    p_grad.add_argument("--step", type=float, default=1e-5)
    p_grad.set_defaults(func=run_gradcheck)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    invocation = CliInvocation.from_args(args)
    try:
        return args.func(args)
    except (ConfigError, AdmissibilityError, DimensionError) as exc:
        print(f"{invocation.subcommand}: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DataError, UndefinedMetricError) as exc:
        print(f"{invocation.subcommand}: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except NumericError as exc:
        print(f"{invocation.subcommand}: numeric abort: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
