"""Command-line entry point: ``vitalgan {filter,train,synthesize,evaluate,check-grad}``.

Exit codes: 0 success, 1 usage or configuration error, 2 data error,
3 numerical failure. Progress goes to standard error; standard output
carries only machine-readable JSON results.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from . import checkpoint, data, evaluation, gan, gradcheck
from .checkpoint import CheckpointError

log = logging.getLogger("vitalgan")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERICAL = 0, 1, 2, 3


class ConfigError(ValueError):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


# ---------------------------------------------------------------------------
# run configuration


@dataclass
class RunConfig:
    channels: list[str]
    architecture: dict = field(default_factory=dict)
    training: dict = field(default_factory=dict)
    hpo: dict = field(default_factory=dict)
    data: dict = field(default_factory=dict)
    paths: dict = field(default_factory=dict)

    def arch(self) -> gan.ArchitectureConfig:
        return gan.ArchitectureConfig(s=len(self.channels), **self.architecture)

    def train_cfg(self) -> gan.TrainConfig:
        return gan.TrainConfig(**self.training)

    def hpo_space(self) -> evaluation.HPOSpace:
        return evaluation.HPOSpace.from_dict(self.hpo)

    @property
    def test_fraction(self) -> float:
        return float(self.data.get("test_fraction", 0.30))

    @property
    def split_seed(self) -> int:
        return int(self.data.get("split_seed", 0))


_SECTION_KEYS = {
    "architecture": {"c", "m", "h"},
    "training": {f.name for f in fields(gan.TrainConfig)},
    "hpo": set(evaluation.HPOSpace.__dataclass_fields__),
    "data": {"test_fraction", "split_seed"},
    "paths": {"input", "checkpoint", "log", "output", "report"},
}


def load_config(path, required_paths: tuple[str, ...] = ()) -> RunConfig:
    try:
        raw = json.loads(Path(path).read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise ConfigError(f"config file {path} not found") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config file {path}: {exc}") from None
    if not isinstance(raw, dict):
        raise ConfigError("config must be a JSON object")
    unknown = set(raw) - {"channels", *_SECTION_KEYS}
    if unknown:
        raise ConfigError(f"unknown config key(s) {sorted(unknown)}")
    if "channels" not in raw:
        raise ConfigError("config needs a 'channels' list")
    for section, allowed in _SECTION_KEYS.items():
        value = raw.get(section, {})
        if not isinstance(value, dict):
            raise ConfigError(f"'{section}' must be an object")
        extra = set(value) - allowed
        if extra:
            raise ConfigError(f"unknown key(s) in '{section}': {sorted(extra)}")
    missing = [p for p in required_paths if p not in raw.get("paths", {})]
    if missing:
        raise ConfigError(f"config 'paths' lacks {missing}")
    cfg = RunConfig(**raw)
    try:
        data.channel_specs(cfg.channels)
        cfg.arch(), cfg.train_cfg(), cfg.hpo_space()
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from None
    base = Path(path).parent
    cfg.paths = {k: str((base / v) if not Path(v).is_absolute() else Path(v)) for k, v in cfg.paths.items()}
    return cfg


def _read_csv(path, channels=None) -> data.LabeledDataset:
    try:
        with open(path, newline="", encoding="utf-8") as fh:
            return data.parse_csv(fh, channels)
    except FileNotFoundError:
        raise data.DataError(f"input file {path} not found") from None


def _write_csv(ds: data.LabeledDataset, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        data.write_csv(ds, fh)


def _emit(obj) -> None:
    sys.stdout.write(json.dumps(obj, sort_keys=True) + "\n")


# ---------------------------------------------------------------------------
# subcommands


def cmd_filter(args) -> int:
    ds = _read_csv(args.input)
    kept = data.filter_ranges(ds)
    _write_csv(kept, args.output)
    print(f"retained {len(kept)} patients, removed {len(ds) - len(kept)}", file=sys.stderr)
    return EXIT_OK


def prepare_real(cfg: RunConfig, path) -> tuple[data.LabeledDataset, data.LabeledDataset]:
    """Parse, range-filter and split real data exactly as training does."""
    ds = data.filter_ranges(_read_csv(path, cfg.channels))
    return data.split_train_test(ds, cfg.test_fraction, cfg.split_seed)


def cmd_train(args) -> int:
    cfg = load_config(args.config, required_paths=("input", "checkpoint"))
    train_raw, _ = prepare_real(cfg, cfg.paths["input"])
    train_ds = data.normalize(train_raw)
    log.info("training on %d series, channels %s", len(train_ds), data.channel_tag(train_ds.channels))
    bundle, records = gan.train(train_ds, cfg.arch(), cfg.train_cfg())
    nbytes = checkpoint.save_file(bundle, cfg.paths["checkpoint"])
    log_path = cfg.paths.get("log", cfg.paths["checkpoint"] + ".log")
    with open(log_path, "w", encoding="utf-8") as fh:
        gan.write_training_log(records, fh)
    _emit({"checkpoint": cfg.paths["checkpoint"], "bytes": nbytes, "log": log_path, "generator_steps": len(records)})
    return EXIT_OK


def cmd_synthesize(args) -> int:
    bundle = checkpoint.load_file(args.checkpoint)
    if bundle.meta.get("kind") != "gan":
        raise ConfigError(f"{args.checkpoint} is not a generator checkpoint")
    proxy = gan.synthesize_balanced(bundle, args.n, clamp=args.clamp, rng=args.seed)
    _write_csv(proxy, args.output)
    _emit({"output": args.output, "series": len(proxy), "channels": data.channel_tag(proxy.channels)})
    return EXIT_OK


def cmd_evaluate(args) -> int:
    cfg = load_config(args.config)
    real_train, real_test = prepare_real(cfg, args.real)
    proxy = _read_csv(args.proxy)
    if proxy.channel_names != real_train.channel_names:
        raise data.ChannelMismatchError(
            f"proxy channels {proxy.channel_names} differ from configured {real_train.channel_names}"
        )
    result = evaluation.evaluate_tstr(real_train, real_test, proxy, cfg.hpo_space())
    with open(args.report, "w", encoding="utf-8") as fh:
        evaluation.dump_reports([result.real, result.proxy], fh)
    _emit([result.real.to_dict(), result.proxy.to_dict()])
    return EXIT_OK


def cmd_check_grad(args) -> int:
    results = gradcheck.run_suite(instances=args.instances, seed=args.seed)
    print(gradcheck.format_results(results))
    return EXIT_OK if all(r.passed for r in results) else EXIT_NUMERICAL


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="vitalgan", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to standard error")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("filter", help="drop patients with any value outside the admissible ranges")
    p.add_argument("input")
    p.add_argument("output")
    p.set_defaults(func=cmd_filter)

    p = sub.add_parser("train", help="filter, split, normalize and train the conditional WGAN-GP")
    p.add_argument("config")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("synthesize", help="write a class-balanced synthetic dataset")
    p.add_argument("checkpoint")
    p.add_argument("n", type=int)
    p.add_argument("output")
    p.add_argument("--clamp", action="store_true", help="clip values to the admissible ranges")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_synthesize)

    p = sub.add_parser("evaluate", help="train-on-synthetic/test-on-real comparison")
    p.add_argument("real")
    p.add_argument("proxy")
    p.add_argument("config")
    p.add_argument("report")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("check-grad", help="finite-difference check of every differentiable operation")
    p.add_argument("--instances", type=int, default=20)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_check_grad)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (data.DataError, CheckpointError, OSError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (gan.NumericalError, FloatingPointError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except (ValueError, TypeError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
