"""Command-line entry point.

Subcommands: ``gen`` (synthesize a two-domain dataset), ``train``,
``eval``, ``infer`` (single query against a prototype bank), ``inspect``
(checkpoint summary).  Settings come from a plain ``key=value`` config
file (``#`` starts a comment) with CLI flags taking precedence over the
file, and the file over built-in defaults.  Unknown config keys are
rejected.

Exit codes: 0 success, 2 usage/config, 3 data, 4 numeric, 5 I/O.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .bank import load_bank, save_bank
from .data import SyntheticConfig, generate_synthetic, load_dataset, save_dataset
from .errors import (
    ConfigError,
    DataError,
    Error,
    GraphError,
    NumericError,
    ShapeError,
)
from .losses import KernelConfig
from .model import ACTIVATIONS, DOMAIN_TAPS, load_checkpoint
from .metrics import write_confusion_csv, write_metrics_json
from .optim import ScheduleConfig
from .trainer import TrainConfig, evaluate, train
from .bank import infer_single


@dataclass
class RunConfig:
    """Union of all configurable settings; defaults reproduce the
    reference training configuration and the synthetic benchmark."""

    # synthetic data
    num_classes: int = 4
    dim: int = 16
    samples_per_class: int = 500
    separation_radius: float = 1.5
    covariance_scale: float = 0.5
    shift_magnitude: float = 2.0
    rotation_angle: float = 0.6
    scale_factor: float = 1.5
    # training
    batch_size: int = 64
    epochs: int = 32
    grl_lambda: float = 1.0
    align_lambda: float = 1.0
    lr_max: float = 1e-4
    warmup_epochs: int | None = None  # derived from epochs when unset
    cosine_epochs: int | None = None
    eta_min: float = 0.0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.01
    use_grl: bool = True
    use_coral: bool = True
    use_mmd: bool = True
    use_gat: bool = True
    self_loops: bool = False
    dim_hidden: int = 512
    num_heads: int = 4
    dim_domain_hidden: int = 128
    leaky_slope: float = 0.2
    activation: str = "leaky_relu"
    domain_tap: str = "post_gat"
    mmd_bandwidth: float | None = None  # None = median heuristic
    mmd_unbiased: bool = False
    bank_momentum: float = 0.9
    bank_slots: int = 1
    bank_k: int = 5
    # shared
    seed: int = 0
    source_path: str = ""
    target_path: str = ""
    eval_path: str = ""

    def synthetic_config(self) -> SyntheticConfig:
        return SyntheticConfig(
            num_classes=self.num_classes,
            dim=self.dim,
            samples_per_class=self.samples_per_class,
            separation_radius=self.separation_radius,
            covariance_scale=self.covariance_scale,
            shift_magnitude=self.shift_magnitude,
            rotation_angle=self.rotation_angle,
            scale_factor=self.scale_factor,
            seed=self.seed,
        )

    def schedule_config(self) -> ScheduleConfig:
        warmup = self.warmup_epochs
        cosine = self.cosine_epochs
        if warmup is None and cosine is None:
            warmup = min(5, self.epochs - 1)
            cosine = self.epochs - warmup
        elif warmup is None:
            warmup = self.epochs - cosine
        elif cosine is None:
            cosine = self.epochs - warmup
        return ScheduleConfig(
            lr_max=self.lr_max,
            warmup_epochs=warmup,
            cosine_epochs=cosine,
            total_epochs=self.epochs,
            eta_min=self.eta_min,
        )

    def kernel_config(self) -> KernelConfig:
        return KernelConfig(bandwidth=self.mmd_bandwidth, unbiased=self.mmd_unbiased)

    def train_config(self) -> TrainConfig:
        return TrainConfig(
            batch_size=self.batch_size,
            epochs=self.epochs,
            grl_lambda=self.grl_lambda,
            align_lambda=self.align_lambda,
            schedule=self.schedule_config(),
            beta1=self.beta1,
            beta2=self.beta2,
            eps=self.eps,
            weight_decay=self.weight_decay,
            seed=self.seed,
            use_grl=self.use_grl,
            use_coral=self.use_coral,
            use_mmd=self.use_mmd,
            use_gat=self.use_gat,
            self_loops=self.self_loops,
            dim_hidden=self.dim_hidden,
            num_heads=self.num_heads,
            dim_domain_hidden=self.dim_domain_hidden,
            leaky_slope=self.leaky_slope,
            activation=self.activation,
            domain_tap=self.domain_tap,
            kernel=self.kernel_config(),
            bank_momentum=self.bank_momentum,
            bank_slots=self.bank_slots,
        )


def _parse_bool(raw: str, key: str) -> bool:
    lowered = raw.strip().lower()
    if lowered in ("true", "1", "yes"):
        return True
    if lowered in ("false", "0", "no"):
        return False
    raise ConfigError(f"config key {key}: expected a boolean, got {raw!r}")


def _parse_int(raw: str, key: str) -> int:
    try:
        return int(raw.strip())
    except ValueError as exc:
        raise ConfigError(f"config key {key}: expected an integer, got {raw!r}") from exc


def _parse_float(raw: str, key: str) -> float:
    try:
        return float(raw.strip())
    except ValueError as exc:
        raise ConfigError(f"config key {key}: expected a number, got {raw!r}") from exc


def _parse_bandwidth(raw: str, key: str) -> float | None:
    if raw.strip().lower() == "median":
        return None
    return _parse_float(raw, key)


def _parse_choice(options):
    def parse(raw: str, key: str) -> str:
        value = raw.strip()
        if value not in options:
            raise ConfigError(f"config key {key}: expected one of {options}, got {raw!r}")
        return value

    return parse


def _parse_str(raw: str, key: str) -> str:
    return raw.strip()


_PARSERS = {
    "num_classes": _parse_int,
    "dim": _parse_int,
    "samples_per_class": _parse_int,
    "separation_radius": _parse_float,
    "covariance_scale": _parse_float,
    "shift_magnitude": _parse_float,
    "rotation_angle": _parse_float,
    "scale_factor": _parse_float,
    "batch_size": _parse_int,
    "epochs": _parse_int,
    "grl_lambda": _parse_float,
    "align_lambda": _parse_float,
    "lr_max": _parse_float,
    "warmup_epochs": _parse_int,
    "cosine_epochs": _parse_int,
    "eta_min": _parse_float,
    "beta1": _parse_float,
    "beta2": _parse_float,
    "eps": _parse_float,
    "weight_decay": _parse_float,
    "use_grl": _parse_bool,
    "use_coral": _parse_bool,
    "use_mmd": _parse_bool,
    "use_gat": _parse_bool,
    "self_loops": _parse_bool,
    "dim_hidden": _parse_int,
    "num_heads": _parse_int,
    "dim_domain_hidden": _parse_int,
    "leaky_slope": _parse_float,
    "activation": _parse_choice(ACTIVATIONS),
    "domain_tap": _parse_choice(DOMAIN_TAPS),
    "mmd_bandwidth": _parse_bandwidth,
    "mmd_unbiased": _parse_bool,
    "bank_momentum": _parse_float,
    "bank_slots": _parse_int,
    "bank_k": _parse_int,
    "seed": _parse_int,
    "source_path": _parse_str,
    "target_path": _parse_str,
    "eval_path": _parse_str,
}


def parse_config_file(path) -> dict[str, str]:
    """Raw key=value pairs from a config file; later keys win."""
    values: dict[str, str] = {}
    for lineno, raw_line in enumerate(Path(path).read_text().splitlines(), start=1):
        line = raw_line.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise ConfigError(f"{path}:{lineno}: expected key=value, got {raw_line!r}")
        values[key.strip()] = value.strip()
    return values


def build_config(config_path: str | None, overrides: dict | None = None) -> RunConfig:
    """Layer built-in defaults, then the config file, then CLI overrides."""
    config = RunConfig()
    if config_path:
        for key, raw in parse_config_file(config_path).items():
            if key not in _PARSERS:
                raise ConfigError(f"unknown config key {key!r}")
            setattr(config, key, _PARSERS[key](raw, key))
    for key, value in (overrides or {}).items():
        if value is not None:
            setattr(config, key, value)
    return config


def _train_overrides(args) -> dict:
    overrides = {"seed": args.seed, "epochs": args.epochs, "batch_size": args.batch_size}
    if args.no_grl:
        overrides["use_grl"] = False
    if args.no_coral:
        overrides["use_coral"] = False
    if args.no_mmd:
        overrides["use_mmd"] = False
    if args.no_gat:
        overrides["use_gat"] = False
    return overrides


def _out_dir(args) -> Path:
    out = Path(args.out or ".")
    out.mkdir(parents=True, exist_ok=True)
    return out


def _cmd_gen(args) -> int:
    config = build_config(args.config, {"seed": args.seed})
    synthetic = config.synthetic_config()
    out = _out_dir(args)
    source, target = generate_synthetic(synthetic)
    save_dataset(source, out / "source.bin", "bin")
    save_dataset(target, out / "target.bin", "bin")
    manifest = {f.name: getattr(synthetic, f.name) for f in dataclasses.fields(synthetic)}
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2) + "\n")
    print(f"wrote {len(source)} source and {len(target)} target records to {out}")
    return 0


def _load_required(path: str, role: str):
    if not path:
        raise ConfigError(f"{role}_path is not set")
    return load_dataset(path)


def _cmd_train(args) -> int:
    config = build_config(args.config, _train_overrides(args))
    source = _load_required(config.source_path, "source")
    target = _load_required(config.target_path, "target")
    if config.eval_path:
        eval_dataset = load_dataset(config.eval_path)
    elif target.is_fully_labeled:
        eval_dataset = target  # target labels are read for evaluation only
    else:
        eval_dataset = None
    out = _out_dir(args)

    result = train(
        source,
        target,
        config.train_config(),
        eval_dataset=eval_dataset,
        checkpoint_dir=out,
    )
    result.history.write_csv(out / "history.csv")
    save_bank(result.bank, out / "bank.bin")
    if eval_dataset is not None:
        final = evaluate(result.params, eval_dataset, config.batch_size)
        write_metrics_json(final.metrics, out / "metrics.json")
        write_confusion_csv(final.confusion, out / "confusion.csv")
        print(
            f"trained {config.epochs} epochs; eval accuracy "
            f"{final.metrics.accuracy:.4f} over {final.metrics.n_samples} records"
        )
    else:
        print(f"trained {config.epochs} epochs; no labeled eval set")
    return 0


def _cmd_eval(args) -> int:
    config = build_config(args.config, {"batch_size": args.batch_size})
    params = load_checkpoint(args.checkpoint)
    dataset = load_dataset(args.data)
    out = _out_dir(args)
    result = evaluate(params, dataset, config.batch_size)
    write_metrics_json(result.metrics, out / "metrics.json")
    write_confusion_csv(result.confusion, out / "confusion.csv")
    print(f"accuracy {result.metrics.accuracy:.4f} on {result.metrics.n_samples} records")
    return 0


def _parse_query(args) -> np.ndarray:
    if args.query is not None:
        text = args.query
    elif args.query_file is not None:
        text = Path(args.query_file).read_text()
    else:
        raise ConfigError("provide --query or --query-file")
    tokens = text.replace(",", " ").split()
    if not tokens:
        raise DataError("query vector is empty")
    try:
        return np.array([float(t) for t in tokens])
    except ValueError as exc:
        raise DataError(f"non-numeric value in query: {exc}") from exc


def _cmd_infer(args) -> int:
    config = build_config(args.config, {})
    k = args.k if args.k is not None else config.bank_k
    params = load_checkpoint(args.checkpoint)
    bank = load_bank(args.bank)
    query = _parse_query(args)
    probabilities = infer_single(query, params, bank, k)
    print("probabilities: " + " ".join(repr(float(p)) for p in probabilities))
    print(f"argmax: {int(probabilities.argmax())}")
    return 0


def _cmd_inspect(args) -> int:
    params = load_checkpoint(args.checkpoint)
    print(f"dim_in: {params.dim_in}")
    print(f"dim_hidden: {params.dim_hidden}")
    print(f"num_classes: {params.num_classes}")
    print(f"num_heads: {params.num_heads}")
    print(f"dim_domain_hidden: {params.dim_domain_hidden}")
    print(f"grl_lambda: {params.grl_lambda}")
    print(f"activation: {params.activation}")
    print(f"domain_tap: {params.domain_tap}")
    print(f"use_gat: {params.use_gat}")
    print(f"self_loops: {params.self_loops}")
    print(f"leaky_slope: {params.gat.leaky_slope}")
    for name, tensor in params.tensors():
        norm = float(np.linalg.norm(tensor))
        print(f"{name}  shape={tuple(tensor.shape)}  l2_norm={norm:.6g}")
    return 0


def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", help="key=value config file")
    parser.add_argument("--seed", type=int, help="override the config seed")
    parser.add_argument("--out", help="output directory (default: current)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="ringuda",
        description="Domain adaptation over embedding vectors with ring-graph attention",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    gen = sub.add_parser("gen", help="generate a synthetic two-domain dataset")
    _add_common(gen)
    gen.set_defaults(func=_cmd_gen)

    train_parser = sub.add_parser("train", help="run the adaptation training loop")
    _add_common(train_parser)
    train_parser.add_argument("--epochs", type=int)
    train_parser.add_argument("--batch-size", type=int, dest="batch_size")
    train_parser.add_argument("--no-grl", action="store_true", help="disable the adversarial domain loss")
    train_parser.add_argument("--no-coral", action="store_true", help="disable covariance alignment")
    train_parser.add_argument("--no-mmd", action="store_true", help="disable kernel mean alignment")
    train_parser.add_argument("--no-gat", action="store_true", help="bypass the graph attention stage")
    train_parser.set_defaults(func=_cmd_train)

    eval_parser = sub.add_parser("eval", help="evaluate a checkpoint on a labeled dataset")
    _add_common(eval_parser)
    eval_parser.add_argument("--checkpoint", required=True)
    eval_parser.add_argument("--data", required=True)
    eval_parser.add_argument("--batch-size", type=int, dest="batch_size")
    eval_parser.set_defaults(func=_cmd_eval)

    infer_parser = sub.add_parser("infer", help="classify a single feature vector")
    _add_common(infer_parser)
    infer_parser.add_argument("--checkpoint", required=True)
    infer_parser.add_argument("--bank", required=True)
    infer_parser.add_argument("--query", help="inline comma-separated floats")
    infer_parser.add_argument("--query-file", dest="query_file", help="file of floats")
    infer_parser.add_argument("--k", type=int, help="prototypes to retrieve")
    infer_parser.set_defaults(func=_cmd_infer)

    inspect_parser = sub.add_parser("inspect", help="print a checkpoint summary")
    inspect_parser.add_argument("checkpoint")
    inspect_parser.set_defaults(func=_cmd_inspect)

    return parser


_EXIT_CODES: list[tuple[type, int]] = [
    (ConfigError, 2),
    (ShapeError, 2),
    (GraphError, 2),
    (DataError, 3),
    (NumericError, 4),
    (Error, 4),
    (OSError, 5),
]


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return exc.code if isinstance(exc.code, int) else 2
    try:
        return args.func(args)
    except Exception as exc:  # noqa: BLE001 - mapped to exit codes below
        for exc_type, code in _EXIT_CODES:
            if isinstance(exc, exc_type):
                print(f"error: {exc}", file=sys.stderr)
                return code
        raise


if __name__ == "__main__":
    sys.exit(main())
