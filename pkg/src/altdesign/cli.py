"""Command-line interface: ``altdesign design | evaluate | reproduce | schema``.

Exit status is 0 on success, 2 for configuration or input problems and 3
for numerical or runtime failures.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
import time
import warnings
from pathlib import Path

import numpy as np

from . import __version__
from .core import Design
from .errors import AltDesignError, ConfigError
from .scenarios import (
    PRESETS,
    SCHEMA,
    Scenario,
    design_report,
    evaluate_report,
    preset_config,
    reproduce_report,
    resolve_config,
)

EXIT_OK, EXIT_CONFIG, EXIT_NUMERICAL = 0, 2, 3
THREADS_ENV = "ALTDESIGN_THREADS"

log = logging.getLogger("altdesign")


# ---------------------------------------------------------------------------
# File formats
# ---------------------------------------------------------------------------


def write_design_csv(path, design: Design):
    """One run per line under an ``x1,...,xk`` header, 17 significant digits."""
    with open(path, "w", newline="") as fh:
        fh.write(",".join(f"x{j + 1}" for j in range(design.k)) + "\n")
        for row in design.points:
            fh.write(",".join(f"{v:.17g}" for v in row) + "\n")


def read_design_csv(path, bounds) -> Design:
    try:
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))
    except OSError as exc:
        raise ConfigError(f"cannot read design file: {exc.strerror}", (str(path),)) from exc
    rows = [r for r in rows if r]
    if not rows:
        raise ConfigError("design file is empty", (str(path),))
    header = [h.strip() for h in rows[0]]
    expected = [f"x{j + 1}" for j in range(len(header))]
    if header != expected:
        raise ConfigError(f"header must be {','.join(expected)}", (str(path),))
    try:
        pts = np.array([[float(v) for v in r] for r in rows[1:]], dtype=float)
    except ValueError as exc:
        raise ConfigError(f"non-numeric design entry ({exc})", (str(path),)) from exc
    if pts.ndim != 2 or pts.shape[0] == 0 or pts.shape[1] != len(header):
        raise ConfigError("every row needs one value per column", (str(path),))
    if pts.shape[1] != len(bounds):
        raise ConfigError(f"design has {pts.shape[1]} columns, config has k = {len(bounds)}", (str(path),))
    try:
        return Design(pts, bounds)
    except ValueError as exc:
        raise ConfigError(str(exc), (str(path),)) from exc


def dump_json(obj) -> str:
    return json.dumps(obj, indent=2, allow_nan=False) + "\n"


def load_config(path):
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc.strerror}", (str(path),)) from exc
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"invalid JSON: {exc.msg} (line {exc.lineno})", (str(path),)) from exc


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------


def resolve_threads(value):
    if value is None:
        env = os.environ.get(THREADS_ENV)
        if env is None or env == "":
            return 1
        try:
            value = int(env)
        except ValueError:
            raise ConfigError(f"{THREADS_ENV} must be an integer", (THREADS_ENV,)) from None
    if value < 0:
        raise ConfigError("threads must be >= 0", ("threads",))
    return value if value > 0 else (os.cpu_count() or 1)


def _check_scale(scale, confirmed):
    if scale == "paper" and not confirmed:
        raise ConfigError("paper scale runs take hours; pass --confirm-paper-scale to proceed", ("scale",))


def _config_from_args(args):
    raw = load_config(args.config)
    if isinstance(raw, dict):
        if args.seed is not None:
            raw["root_seed"] = args.seed
        if getattr(args, "scale", None) is not None:
            raw["scale"] = args.scale
    cfg = resolve_config(raw)
    _check_scale(cfg["scale"], args.confirm_paper_scale)
    return cfg


def _write_outputs(out, report, designs=(), labels=(), timing=None):
    out.mkdir(parents=True, exist_ok=True)
    for design, label in zip(designs, labels):
        write_design_csv(out / f"design-{label}.csv", design)
    (out / "report.json").write_text(dump_json(report))
    if timing is not None:
        (out / "timing.json").write_text(dump_json(timing))


class _Progress:
    def __init__(self):
        self.stage = None
        self.t0 = time.perf_counter()
        self.stages = []

    def __call__(self, stage, kind):
        self.stage = f"{stage}:{kind}"
        self.stages.append({"stage": self.stage, "started_after_seconds": round(time.perf_counter() - self.t0, 3)})
        log.info("%s %s", stage, kind)

    def timing(self):
        return {"wall_clock_seconds": round(time.perf_counter() - self.t0, 3), "stages": self.stages}


class _WarningDigest:
    """Log the first warning of each category and count the rest."""

    def __init__(self):
        self.counts = {}

    def __call__(self, message, category, filename, lineno, file=None, line=None):
        name = category.__name__
        self.counts[name] = self.counts.get(name, 0) + 1
        if self.counts[name] == 1:
            log.warning("%s: %s", name, message)

    def summary(self):
        for name, count in self.counts.items():
            if count > 1:
                log.warning("%d further %s warnings suppressed", count - 1, name)


def _run_pipeline(args, scenario, fn, command):
    out = Path(args.out)
    threads = resolve_threads(args.threads)
    progress = _Progress()
    digest = _WarningDigest()
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("always")
            warnings.showwarning = digest
            report, designs, labels = fn(scenario, threads, progress)
    except AltDesignError as exc:
        if isinstance(exc, ConfigError):
            raise
        failed = {
            "tool": "altdesign", "version": __version__, "command": command, "status": "failed",
            "failure": {"stage": progress.stage, "error": type(exc).__name__, "message": str(exc)},
            "config": scenario.config,
        }
        _write_outputs(out, failed, timing=progress.timing())
        raise
    finally:
        digest.summary()
    _write_outputs(out, report, designs, labels, progress.timing())
    _summarise(report)
    return EXIT_OK


def _summarise(report):
    eff = report["efficiency"]
    width = max(len(r) for r in eff["rows"])
    print(" " * width + "  " + "  ".join(f"{c:>9}" for c in eff["columns"]))
    for label, row, entry in zip(eff["rows"], eff["percent"], report["designs"]):
        cells = "  ".join(f"{v:9.1f}" if v is not None else f"{'-':>9}" for v in row)
        print(f"{label:<{width}}  {cells}   q={entry['q']} d={entry['d']}")


def cmd_design(args):
    scenario = Scenario(_config_from_args(args))
    return _run_pipeline(args, scenario, design_report, "design")


def cmd_evaluate(args):
    scenario = Scenario(_config_from_args(args))
    designs = [read_design_csv(p, scenario.config["bounds"]) for p in args.design]
    for d in designs:
        scenario.check_design(d)
    labels = [Path(p).stem for p in args.design]
    if len(set(labels)) != len(labels):
        labels = [f"{i + 1}:{lab}" for i, lab in enumerate(labels)]

    def run(sc, threads, progress):
        progress("evaluate", ",".join(sc.kinds))
        return evaluate_report(sc, designs, labels, threads), [], []

    return _run_pipeline(args, scenario, run, "evaluate")


def cmd_reproduce(args):
    _check_scale(args.scale, args.confirm_paper_scale)
    cfg = preset_config(args.example, args.scale, args.seed)
    scenario = Scenario(cfg)

    def run(sc, threads, progress):
        report, designs, labels = reproduce_report(sc, threads, progress)
        report["example"] = args.example
        return report, designs, labels

    return _run_pipeline(args, scenario, run, "reproduce")


def cmd_schema(args):
    sys.stdout.write(dump_json(SCHEMA))
    return EXIT_OK


def _u64(text):
    try:
        value = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError("seed must be an integer") from None
    if not 0 <= value < 2**64:
        raise argparse.ArgumentTypeError("seed must be an unsigned 64-bit integer")
    return value


def build_parser():
    parser = argparse.ArgumentParser(
        prog="altdesign", description="Bayesian designs that hedge against an alternative model.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-q", "--quiet", action="store_true", help="suppress per-sweep progress lines")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, config=True):
        if config:
            p.add_argument("--config", required=True, help="scenario config (JSON)")
        p.add_argument("--out", required=True, help="output directory")
        p.add_argument("--seed", type=_u64, default=None, help="override the root seed")
        p.add_argument("--threads", type=int, default=None,
                       help=f"worker threads for candidate evaluation (0 = all cores; default ${THREADS_ENV} or 1)")
        p.add_argument("--confirm-paper-scale", action="store_true", help="allow multi-hour paper-scale runs")

    p = sub.add_parser("design", help="search for optimal designs")
    common(p)
    p.add_argument("--scale", choices=("desk", "paper"), default=None)
    p.set_defaults(func=cmd_design)

    p = sub.add_parser("evaluate", help="cross-evaluate existing designs")
    common(p)
    p.add_argument("--design", action="append", required=True, help="design CSV (repeatable)")
    p.add_argument("--scale", choices=("desk", "paper"), default=None)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("reproduce", help="run a named example end to end")
    p.add_argument("example", choices=sorted(PRESETS))
    common(p, config=False)
    p.add_argument("--scale", choices=("desk", "paper"), default="desk")
    p.set_defaults(func=cmd_reproduce)

    p = sub.add_parser("schema", help="print the config JSON schema")
    p.set_defaults(func=cmd_schema)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.WARNING if args.quiet else logging.INFO,
                        format="%(message)s", stream=sys.stderr)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except AltDesignError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except (ValueError, ArithmeticError, np.linalg.LinAlgError) as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
