"""Command-line front door: search, sample, validate, params, analyze."""

from __future__ import annotations

import argparse
import csv
import json
import os
import random
import sys
from dataclasses import dataclass, field
from pathlib import Path

from . import analysis, qlearning
from .oracle import (
    OracleUnavailable,
    ProtocolError,
    RemoteOracle,
    SurrogateOracle,
    SurrogateWeights,
    TrainerEndpoint,
)
from .qlearning import QConfig, SearchResult
from .space import (
    ParseError,
    SpaceConfig,
    ValidationError,
    param_count,
    parse,
    serialize,
    spec_from_actions,
    validate,
)

EXIT_OK = 0
EXIT_VIOLATIONS = 1
EXIT_BAD_CONFIG = 2
EXIT_ORACLE_UNREACHABLE = 3
EXIT_BAD_INPUT = 4
EXIT_PARSE_FAILURE = 5

TOP_K = 10


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    space: SpaceConfig = field(default_factory=SpaceConfig)
    qlearn: QConfig = field(default_factory=QConfig)
    oracle: dict = field(default_factory=lambda: {"kind": "surrogate"})
    workers: int = 1
    out: str = "out"
    dataset: str = "cifar10"

    @classmethod
    def load(cls, path: str | None) -> "RunConfig":
        if path is None:
            return cls()
        try:
            with open(path, "r", encoding="utf-8") as handle:
                data = json.load(handle)
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config {path} is not valid JSON: {exc}") from exc
        try:
            return cls(
                space=SpaceConfig.from_dict(data.get("space", {})),
                qlearn=QConfig.from_dict(data.get("qlearn", {})),
                oracle=data.get("oracle", {"kind": "surrogate"}),
                workers=int(data.get("workers", 1)),
                out=data.get("out", "out"),
                dataset=data.get("dataset", "cifar10"),
            )
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"invalid config {path}: {exc}") from exc


def _resolve_seed(args, config: RunConfig) -> int:
    if getattr(args, "seed", None) is not None:
        return args.seed
    env_seed = os.environ.get("METAQNN_SEED")
    if env_seed is not None:
        try:
            return int(env_seed)
        except ValueError as exc:
            raise ConfigError(f"METAQNN_SEED={env_seed!r} is not an integer") from exc
    return config.qlearn.seed


def _replace_qconfig(qcfg: QConfig, **overrides) -> QConfig:
    data = qcfg.to_dict()
    data.update(overrides)
    return QConfig.from_dict(data)


def _build_oracle(config: RunConfig, args, qcfg: QConfig):
    settings = dict(config.oracle)
    kind = getattr(args, "oracle", None) or settings.get("kind", "surrogate")
    if getattr(args, "trainer_cmd", None) or getattr(args, "trainer_addr", None):
        kind = "trainer"
    if kind == "surrogate":
        weights = SurrogateWeights.from_dict(settings.get("weights", {}))
        seed = settings.get("seed")
        return SurrogateOracle(qcfg.seed if seed is None else seed, weights)
    if kind == "trainer":
        cmd = getattr(args, "trainer_cmd", None) or settings.get("cmd")
        addr = getattr(args, "trainer_addr", None) or settings.get("addr")
        endpoint_kwargs = {
            "timeout": float(settings.get("timeout", 600.0)),
            "max_retries": int(settings.get("max_retries", 2)),
        }
        if cmd:
            endpoint = TrainerEndpoint.from_command(cmd, **endpoint_kwargs)
        elif addr:
            endpoint = TrainerEndpoint.from_address(addr, **endpoint_kwargs)
        else:
            raise ConfigError("trainer oracle needs --trainer-cmd or --trainer-addr")
        return RemoteOracle(
            endpoint, config.dataset, config.space.input_size,
            config.space.input_channels, config.space.num_classes,
            epochs=int(settings.get("budget_epochs", 20)))
    raise ConfigError(f"unknown oracle kind {kind!r}")


# ---------------------------------------------------------------------------
# search
# ---------------------------------------------------------------------------

def _write_outputs(out_dir: Path, result: SearchResult, space: SpaceConfig) -> None:
    qlearning.save_snapshot(result.qtable, out_dir / "qtable.json")
    qlearning.save_dictionary(result.dictionary, out_dir / "replay_dict.json")
    ranked = sorted(
        ((arch, entry.accuracy, param_count(parse(arch), space))
         for arch, entry in result.dictionary.items()),
        key=lambda row: (-row[1], row[2]))
    with open(out_dir / "topk.csv", "w", newline="", encoding="utf-8") as handle:
        writer = csv.writer(handle)
        writer.writerow(["arch", "accuracy", "params"])
        writer.writerows(ranked[:TOP_K])


def cmd_search(args) -> int:
    try:
        config = RunConfig.load(args.config)
        seed = _resolve_seed(args, config)
        overrides = {"seed": seed}
        if args.schedule:
            overrides["schedule"] = qlearning.parse_schedule(args.schedule)
        qcfg = _replace_qconfig(config.qlearn, **overrides)
    except (ConfigError, qlearning.ScheduleError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_BAD_CONFIG

    out_dir = Path(args.out or config.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    events_path = out_dir / "events.ndjson"

    resume = None
    mode = "w"
    if args.resume:
        if not events_path.exists():
            print(f"error: nothing to resume in {out_dir}", file=sys.stderr)
            return EXIT_BAD_INPUT
        try:
            qtable = qlearning.load_snapshot(out_dir / "qtable.json",
                                             config.qlearn.q_init)
            resume = qlearning.rebuild_from_events(
                qlearning.load_events(events_path), qtable, config.space)
        except (OSError, ValueError, KeyError) as exc:
            print(f"error: cannot resume from {out_dir}: {exc}",
                  file=sys.stderr)
            return EXIT_BAD_INPUT
        mode = "a"

    try:
        oracle = _build_oracle(config, args, qcfg)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_BAD_CONFIG
    except OracleUnavailable as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ORACLE_UNREACHABLE

    workers = args.workers if args.workers is not None else config.workers
    try:
        with open(events_path, mode, encoding="utf-8") as log:
            def sink(record: dict) -> None:
                log.write(qlearning.encode_record(record) + "\n")

            result = qlearning.run_search(config.space, qcfg, oracle,
                                          sink=sink, workers=workers,
                                          resume=resume)
    except (OracleUnavailable, ProtocolError) as exc:
        # A dead or misbehaving trainer session; the event log written so
        # far remains a valid resume checkpoint.
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ORACLE_UNREACHABLE
    finally:
        close = getattr(oracle, "close", None)
        if close is not None:
            close()

    _write_outputs(out_dir, result, config.space)
    best = result.best()
    if best is not None:
        print(f"unique models: {result.unique_models}; "
              f"best: {best[1]:.4f} {best[0]}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# sample
# ---------------------------------------------------------------------------

def cmd_sample(args) -> int:
    try:
        config = RunConfig.load(args.config)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_BAD_CONFIG
    try:
        qtable = qlearning.load_snapshot(args.snapshot, config.qlearn.q_init)
    except (OSError, ValueError, KeyError) as exc:
        print(f"error: cannot load snapshot {args.snapshot}: {exc}",
              file=sys.stderr)
        return EXIT_BAD_INPUT
    seed = _resolve_seed(args, config)
    rng = random.Random(seed)
    for _ in range(args.n):
        _, actions = qlearning.sample_new_network(args.epsilon, qtable, rng,
                                                  config.space)
        print(serialize(spec_from_actions(actions, config.space)))
    return EXIT_OK


# ---------------------------------------------------------------------------
# validate / params
# ---------------------------------------------------------------------------

def _load_space(args) -> SpaceConfig:
    config = RunConfig.load(args.config)
    space = config.space
    overrides = {}
    if getattr(args, "input_size", None) is not None:
        overrides["input_size"] = args.input_size
    if getattr(args, "input_channels", None) is not None:
        overrides["input_channels"] = args.input_channels
    if getattr(args, "num_classes", None) is not None:
        overrides["num_classes"] = args.num_classes
    if getattr(args, "max_depth", None) is not None:
        overrides["max_depth"] = args.max_depth
    if overrides:
        data = space.to_dict()
        data.update(overrides)
        space = SpaceConfig.from_dict(data)
    return space


def cmd_validate(args) -> int:
    try:
        space = _load_space(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_BAD_CONFIG
    try:
        spec = parse(args.arch)
    except ParseError as exc:
        print(f"parse error: {exc}", file=sys.stderr)
        return EXIT_PARSE_FAILURE
    violations = validate(spec, space)
    if not violations:
        print("OK")
        return EXIT_OK
    for violation in violations:
        print(str(violation))
    return EXIT_VIOLATIONS


def cmd_params(args) -> int:
    try:
        space = _load_space(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_BAD_CONFIG
    try:
        spec = parse(args.arch)
    except ParseError as exc:
        print(f"parse error: {exc}", file=sys.stderr)
        return EXIT_PARSE_FAILURE
    try:
        print(param_count(spec, space))
    except ValidationError as exc:
        print(f"invalid architecture: {exc}", file=sys.stderr)
        return EXIT_VIOLATIONS
    return EXIT_OK


# ---------------------------------------------------------------------------
# analyze
# ---------------------------------------------------------------------------

def cmd_analyze(args) -> int:
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    which = set(args.which or ["rolling", "per-eps", "hist", "qsummary"])
    needs_events = which & {"rolling", "per-eps", "hist"}
    log = None
    if needs_events:
        if not args.events or not Path(args.events).exists():
            print("error: --events is required for rolling/per-eps/hist",
                  file=sys.stderr)
            return EXIT_BAD_INPUT
        log = analysis.records_from_log(qlearning.load_events(args.events))
    if "rolling" in which:
        analysis.write_rolling_csv(out_dir / "rolling.csv", log, args.window)
    if "per-eps" in which:
        analysis.write_per_epsilon_csv(out_dir / "per_epsilon.csv", log)
    if "hist" in which:
        analysis.write_histogram_csv(out_dir / "histogram.csv", log,
                                     args.bin_width)
    if "qsummary" in which:
        if not args.qtable or not Path(args.qtable).exists():
            print("error: --qtable is required for qsummary", file=sys.stderr)
            return EXIT_BAD_INPUT
        qtable = qlearning.load_snapshot(args.qtable)
        analysis.write_q_summary_csvs(out_dir / "q_by_type.csv",
                                      out_dir / "q_by_field.csv", qtable)
    return EXIT_OK


# ---------------------------------------------------------------------------
# argument wiring
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="metaqnn",
        description="Q-learning search over a constrained CNN layer space")
    sub = parser.add_subparsers(dest="command", required=True)

    search = sub.add_parser("search", help="run the schedule to completion")
    search.add_argument("--config", help="JSON run configuration")
    search.add_argument("--seed", type=int)
    search.add_argument("--workers", type=int)
    search.add_argument("--oracle", choices=["surrogate", "trainer"])
    search.add_argument("--trainer-cmd", help="worker command for stdio transport")
    search.add_argument("--trainer-addr", help="host:port for TCP transport")
    search.add_argument("--schedule", help="comma list of eps:count entries")
    search.add_argument("--out", help="output directory")
    search.add_argument("--resume", action="store_true",
                        help="continue from the event log in --out")
    search.set_defaults(func=cmd_search)

    sample = sub.add_parser("sample", help="sample architectures from a snapshot")
    sample.add_argument("snapshot", help="Q-table snapshot path")
    sample.add_argument("--epsilon", type=float, default=0.1)
    sample.add_argument("-n", type=int, default=1)
    sample.add_argument("--config")
    sample.add_argument("--seed", type=int)
    sample.set_defaults(func=cmd_sample)

    for name, func, help_text in (
            ("validate", cmd_validate, "check an architecture string"),
            ("params", cmd_params, "count trainable parameters")):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("arch")
        p.add_argument("--config")
        p.add_argument("--input-size", type=int, dest="input_size")
        p.add_argument("--input-channels", type=int, dest="input_channels")
        p.add_argument("--num-classes", type=int, dest="num_classes")
        p.add_argument("--max-depth", type=int, dest="max_depth")
        p.set_defaults(func=func)

    analyze = sub.add_parser("analyze", help="export diagnostics CSVs")
    analyze.add_argument("--events", help="event log (NDJSON)")
    analyze.add_argument("--qtable", help="Q-table snapshot")
    analyze.add_argument("--which", action="append",
                         choices=["rolling", "per-eps", "hist", "qsummary"])
    analyze.add_argument("--window", type=int, default=100)
    analyze.add_argument("--bin-width", type=float, default=0.05,
                         dest="bin_width")
    analyze.add_argument("--out", default="analysis")
    analyze.set_defaults(func=cmd_analyze)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
