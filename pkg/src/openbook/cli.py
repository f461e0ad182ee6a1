"""Command-line entry point.

Exit codes: 0 success / all checks passed, 1 a statistical check failed,
2 bad usage, configuration, or input file.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .frechet import barycenter, frechet_objective, read_points, write_points
from .geometry import BookPoint
from .measures import (
    ClassificationError,
    center,
    classify,
    load_measure,
    measure_from_spec,
    population_mean,
    spine_mean,
)
from .simulate import (
    SeedStream,
    clt_summary,
    lln_summary,
    lln_tests,
    run_clt,
    run_lln,
    sample_measure,
    write_clt_csv,
    write_lln_csv,
)

log = logging.getLogger("openbook")

EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2

DEFAULT_CHECKPOINTS = (10, 100, 1000, 10000)


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    subcommand: str
    measure: object = None  # path or inline measure object
    points: str | None = None
    leaves: int | None = None
    seed: int = 0
    n: int | None = None
    checkpoints: tuple[int, ...] | None = None
    replicates: int | None = None
    workers: int = 1
    out: str | None = None
    alpha: float = 0.01
    threshold: float = 0.99
    semispinal_n: int = 0
    extra: dict = field(default_factory=dict)

    def validate(self) -> None:
        needs_measure = self.subcommand in ("classify", "sample", "lln", "clt")
        if needs_measure and self.measure is None:
            raise ConfigError(f"{self.subcommand} needs --measure")
        if self.subcommand == "mean" and not self.points:
            raise ConfigError("mean needs --points")
        if not 0 <= self.seed < 2**64:
            raise ConfigError("seed must be an unsigned 64-bit integer")
        if self.workers < 1:
            raise ConfigError("workers must be >= 1")
        if not 0 < self.alpha < 1:
            raise ConfigError("alpha must lie in (0, 1)")
        if self.subcommand == "sample" and (self.n is None or self.n < 1):
            raise ConfigError("sample needs --n >= 1")
        if self.subcommand == "clt":
            if self.n is None or self.n < 1:
                raise ConfigError("clt needs --n >= 1")
            if self.replicates is None or self.replicates < 2:
                raise ConfigError("clt needs --replicates >= 2")
        if self.subcommand == "lln":
            cps = self.checkpoints or DEFAULT_CHECKPOINTS
            if cps[0] < 1 or any(b <= a for a, b in zip(cps, cps[1:])):
                raise ConfigError("checkpoints must be positive and strictly increasing")
            if self.replicates is None or self.replicates < 1:
                raise ConfigError("lln needs --replicates >= 1")
        if self.subcommand in ("lln", "clt") and not self.out:
            raise ConfigError(f"{self.subcommand} needs --out")


def _checkpoints(text) -> tuple[int, ...]:
    if isinstance(text, (list, tuple)):
        return tuple(int(v) for v in text)
    try:
        return tuple(int(v) for v in str(text).split(",") if v.strip())
    except ValueError:
        raise ConfigError(f"bad checkpoint list {text!r}") from None


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="openbook", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=__version__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="subcommand", required=True)

    def common(sp, measure=True):
        if measure:
            sp.add_argument("--measure", help="measure JSON file")
        sp.add_argument("--config", help="experiment config JSON; flags override its fields")
        sp.add_argument("--seed", type=int)
        sp.add_argument("--workers", type=int)
        sp.add_argument("--out")
        sp.add_argument("-v", "--verbose", action="store_true", default=argparse.SUPPRESS)

    sp = sub.add_parser("classify", help="sticky / partly sticky / nonsticky verdict of a measure")
    common(sp)
    sp = sub.add_parser("mean", help="Frechet mean of a point CSV")
    common(sp, measure=False)
    sp.add_argument("--points", help="CSV with header leaf,x0,y1,...,yd")
    sp.add_argument("--leaves", type=int, help="leaf count K (default: max(3, largest label))")
    sp = sub.add_parser("sample", help="draw points from a measure as CSV")
    common(sp)
    sp.add_argument("--n", type=int)
    sp = sub.add_parser("lln", help="law-of-large-numbers experiment")
    common(sp)
    sp.add_argument("--checkpoints", help="comma-separated increasing sample sizes")
    sp.add_argument("--replicates", type=int)
    sp.add_argument("--threshold", type=float, help="required final event fraction (non-sticky cases)")
    sp = sub.add_parser("clt", help="central-limit experiment")
    common(sp)
    sp.add_argument("--n", type=int, help="sample size per replicate")
    sp.add_argument("--replicates", type=int)
    sp.add_argument("--alpha", type=float)
    sp.add_argument("--semispinal-n", type=int, dest="semispinal_n",
                    help="draws per estimator for the semispinal check (partly sticky only)")
    return p


def config_from_args(args: argparse.Namespace) -> RunConfig:
    cfg = RunConfig(args.subcommand)
    if getattr(args, "config", None):
        try:
            with open(args.config) as fh:
                raw = json.load(fh)
        except (OSError, json.JSONDecodeError) as e:
            raise ConfigError(f"cannot read config: {e}") from None
        base = Path(args.config).parent
        for key, value in raw.items():
            key = {"M": "replicates", "N": "n"}.get(key, key)
            if key == "mode":
                if value != cfg.subcommand:
                    raise ConfigError(f"config mode {value!r} does not match subcommand {cfg.subcommand!r}")
            elif key == "measure" and isinstance(value, str):
                cfg.measure = str(base / value)
            elif key == "checkpoints":
                cfg.checkpoints = _checkpoints(value)
            elif hasattr(cfg, key) and key not in ("subcommand", "extra"):
                setattr(cfg, key, value)
            else:
                cfg.extra[key] = value
    for key in ("measure", "points", "leaves", "seed", "n", "replicates", "workers", "out",
                "alpha", "threshold", "semispinal_n"):
        value = getattr(args, key, None)
        if value is not None:
            setattr(cfg, key, value)
    if getattr(args, "checkpoints", None):
        cfg.checkpoints = _checkpoints(args.checkpoints)
    cfg.validate()
    return cfg


def _measure(cfg: RunConfig):
    try:
        if isinstance(cfg.measure, dict):
            return measure_from_spec(cfg.measure)
        return load_measure(cfg.measure)
    except OSError as e:
        raise ConfigError(f"cannot read measure: {e}") from None
    except json.JSONDecodeError as e:
        raise ConfigError(f"measure file is not valid JSON: {e}") from None
    except (ValueError, TypeError, IndexError) as e:
        raise ConfigError(f"invalid measure: {e}") from None


def point_to_dict(p: BookPoint) -> dict:
    return {
        "location": "spine" if p.is_spine else "leaf",
        "leaf": p.leaf,
        "x0": p.x0,
        "y": list(p.y),
    }


def _emit(obj, out: str | None) -> None:
    text = json.dumps(obj, indent=2)
    if out:
        Path(out).write_text(text + "\n")
    print(text)


def cmd_classify(cfg: RunConfig) -> int:
    measure = _measure(cfg)
    try:
        c = classify(measure)
    except ClassificationError as e:
        raise ConfigError(str(e)) from None
    report = c.to_dict()
    report["population_mean"] = point_to_dict(population_mean(measure))
    report["spine_mean"] = spine_mean(measure).tolist()
    _emit(report, cfg.out)
    return EXIT_OK


def cmd_mean(cfg: RunConfig) -> int:
    try:
        with open(cfg.points, newline="") as fh:
            sample = read_points(fh, cfg.leaves)
    except OSError as e:
        raise ConfigError(f"cannot read points: {e}") from None
    except ValueError as e:
        raise ConfigError(f"{cfg.points}: {e}") from None
    b = barycenter(sample)
    _emit({"barycenter": point_to_dict(b), "objective": frechet_objective(b, sample), "n": len(sample),
           "d": sample.shape.d, "K": sample.shape.K}, cfg.out)
    return EXIT_OK


def cmd_sample(cfg: RunConfig) -> int:
    measure = _measure(cfg)
    sample = sample_measure(measure, SeedStream(cfg.seed), cfg.n)
    if cfg.out:
        with open(cfg.out, "w", newline="") as fh:
            write_points(fh, sample)
    else:
        write_points(sys.stdout, sample)
    return EXIT_OK


def _outdir(cfg) -> Path:
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def cmd_lln(cfg: RunConfig) -> int:
    measure = _measure(cfg)
    report = run_lln(measure, SeedStream(cfg.seed), cfg.checkpoints or DEFAULT_CHECKPOINTS,
                     cfg.replicates, workers=cfg.workers)
    tests = lln_tests(report, threshold=cfg.threshold)
    out = _outdir(cfg)
    with open(out / "lln_replicates.csv", "w", newline="") as fh:
        write_lln_csv(fh, report)
    summary = lln_summary(report, tests)
    summary["seed"] = cfg.seed
    (out / "lln_summary.json").write_text(json.dumps(summary, indent=2) + "\n")
    for t in tests:
        log.info(t.line())
    print(json.dumps({"passed": summary["passed"], "event_fractions": summary["event_fractions"]}))
    return EXIT_OK if summary["passed"] else EXIT_FAIL


def cmd_clt(cfg: RunConfig) -> int:
    raw = _measure(cfg)
    measure = center(raw)
    report = run_clt(measure, SeedStream(cfg.seed), cfg.n, cfg.replicates, alpha=cfg.alpha,
                     workers=cfg.workers, semispinal_n=cfg.semispinal_n)
    out = _outdir(cfg)
    with open(out / "clt_replicates.csv", "w", newline="") as fh:
        write_clt_csv(fh, report)
    summary = clt_summary(report)
    summary["seed"] = cfg.seed
    summary["alpha"] = cfg.alpha
    summary["centering_shift"] = (-spine_mean(raw)).tolist()
    (out / "clt_summary.json").write_text(json.dumps(summary, indent=2) + "\n")
    for t in report.tests:
        log.info(t.line())
    print(json.dumps({"passed": summary["passed"], "limit": summary["limit"]}))
    return EXIT_OK if summary["passed"] else EXIT_FAIL


COMMANDS = {"classify": cmd_classify, "mean": cmd_mean, "sample": cmd_sample, "lln": cmd_lln, "clt": cmd_clt}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return EXIT_USAGE if e.code else EXIT_OK
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = config_from_args(args)
        return COMMANDS[cfg.subcommand](cfg)
    except ConfigError as e:
        print(json.dumps({"error": str(e)}), file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
