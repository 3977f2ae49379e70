"""Command-line driver: ``semidiscrete-ma run <config.json> [--out DIR] [--threads T]``.

Config (JSON)::

    {
      "mode": "solve" | "rates" | "stability" | "periodic-rates",
      "alpha": 0.5,                 # separable source (solve, rates); 0 = uniform
      "beta": 0.5,                  # torus reference (periodic-rates)
      "cloud": {"type": "grid", "k": [8, 16, 32, 64]}
             | {"type": "random", "N": [100], "seed": 7},
      "pairs": [[0, 0.1], [0, 0.2]],  # stability
      "solver": {"tol_residual": 1e-10, "max_iters": 100},
      "dumps": true,                # diagram_*, map_*, trace_* CSVs
      "out": "results"
    }

Exit codes: 0 ok, 2 bad config, 3 solver failure.
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import periodic, reference
from .convexity import transport_map, write_map_csv
from .laguerre import write_diagram_csv
from .measures import grid_cloud, random_cloud
from .solver import SolveSettings, SolverError

log = logging.getLogger("semidiscrete_ma")

MODES = ("solve", "rates", "stability", "periodic-rates")
EXIT_CONFIG = 2
EXIT_SOLVER = 3


class ConfigError(ValueError):
    pass


@dataclass
class ExperimentConfig:
    mode: str
    alpha: float = 0.0
    beta: float = 0.5
    cloud_type: str = "grid"
    sizes: list = field(default_factory=list)
    seed: int = 0
    pairs: list = field(default_factory=list)
    settings: SolveSettings = field(default_factory=SolveSettings)
    dumps: bool = False
    out: str = "results"


def _line_of(text: str, key: str) -> int | None:
    needle = f'"{key}"'
    for n, line in enumerate(text.splitlines(), start=1):
        if needle in line:
            return n
    return None


def _fail(text, path, key, msg):
    line = _line_of(text, key.split(".")[-1]) if text else None
    where = f"{path}:{line}" if line else str(path)
    raise ConfigError(f"{where}: field '{key}': {msg}")


def _increasing_ints(text, path, key, v):
    if not isinstance(v, list) or not v:
        _fail(text, path, key, "must be a nonempty list")
    if not all(isinstance(x, int) and not isinstance(x, bool) and x >= 1 for x in v):
        _fail(text, path, key, "entries must be positive integers")
    if any(b <= a for a, b in zip(v, v[1:])):
        _fail(text, path, key, "must be strictly increasing")
    return list(v)


def parse_config(text: str, path="<config>", env=None) -> ExperimentConfig:
    env = os.environ if env is None else env
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}:{exc.lineno}: invalid JSON: {exc.msg}") from None
    if not isinstance(raw, dict):
        raise ConfigError(f"{path}: top level must be an object")
    known = {"mode", "alpha", "beta", "cloud", "pairs", "solver", "dumps", "out"}
    for key in raw:
        if key not in known:
            _fail(text, path, key, "unknown field")
    mode = raw.get("mode")
    if mode not in MODES:
        _fail(text, path, "mode", f"must be one of {', '.join(MODES)}")
    cfg = ExperimentConfig(mode=mode)

    for name, limit, strict in (("alpha", 0.9, False), ("beta", 1.0, True)):
        if name in raw:
            v = raw[name]
            if not isinstance(v, (int, float)) or isinstance(v, bool) or not np.isfinite(v):
                _fail(text, path, name, "must be a number")
            if (abs(v) >= limit) if strict else (abs(v) > limit):
                _fail(text, path, name, f"must satisfy |{name}| {'<' if strict else '<='} {limit}")
            setattr(cfg, name, float(v))

    if mode != "stability":
        cloud = raw.get("cloud")
        if not isinstance(cloud, dict):
            _fail(text, path, "cloud", "missing or not an object")
        ctype = cloud.get("type", "grid")
        if ctype not in ("grid", "random"):
            _fail(text, path, "cloud.type", "must be 'grid' or 'random'")
        if mode == "periodic-rates" and ctype != "grid":
            _fail(text, path, "cloud.type", "periodic runs use grid clouds")
        cfg.cloud_type = ctype
        key = "k" if ctype == "grid" else "N"
        v = cloud.get(key)
        if isinstance(v, int) and not isinstance(v, bool):
            v = [v]
        cfg.sizes = _increasing_ints(text, path, f"cloud.{key}", v)
        if mode in ("rates", "periodic-rates") and len(cfg.sizes) < 3:
            _fail(text, path, f"cloud.{key}", "rate fits need at least 3 sizes")
        if "seed" in cloud:
            if not isinstance(cloud["seed"], int) or isinstance(cloud["seed"], bool):
                _fail(text, path, "cloud.seed", "must be an integer")
            cfg.seed = cloud["seed"]
    else:
        pairs = raw.get("pairs")
        if not isinstance(pairs, list) or not pairs:
            _fail(text, path, "pairs", "must be a nonempty list of [alpha, alpha'] pairs")
        for p in pairs:
            if (not isinstance(p, list) or len(p) != 2
                    or not all(isinstance(x, (int, float)) and not isinstance(x, bool) for x in p)):
                _fail(text, path, "pairs", f"bad pair {p!r}")
            if max(abs(p[0]), abs(p[1])) > 0.9:
                _fail(text, path, "pairs", f"pair {p!r} outside |alpha| <= 0.9")
        cfg.pairs = [(float(a), float(b)) for a, b in pairs]

    if "MA_SEED" in env:
        try:
            cfg.seed = int(env["MA_SEED"])
        except ValueError:
            raise ConfigError(f"MA_SEED must be an integer, got {env['MA_SEED']!r}") from None

    solver = raw.get("solver", {})
    if not isinstance(solver, dict):
        _fail(text, path, "solver", "must be an object")
    allowed = {"tol_residual", "max_iters", "epsilon0_factor", "backtrack_factor", "min_step"}
    for key in solver:
        if key not in allowed:
            _fail(text, path, f"solver.{key}", "unknown solver setting")
    try:
        cfg.settings = SolveSettings(**solver)
    except (TypeError, ValueError) as exc:
        _fail(text, path, "solver", str(exc))
    cfg.dumps = bool(raw.get("dumps", False))
    cfg.out = str(raw.get("out", "results"))
    return cfg


def load_config(path, env=None) -> ExperimentConfig:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"{path}: cannot read config: {exc.strerror}") from None
    return parse_config(text, path, env)


# ------------------------------------------------------------------ pipelines

def _cloud(cfg: ExperimentConfig, problem, size: int, idx: int):
    if cfg.cloud_type == "grid":
        return grid_cloud(problem.X, size)
    # one stream per size, derived from the base seed
    return random_cloud(problem.X, size, cfg.seed + idx)


def _dump(out: Path, tag: str, inst):
    write_diagram_csv(inst.diagram, out / f"diagram_{tag}_cells.csv", out / f"diagram_{tag}_masses.csv")
    tmap = transport_map(inst.cloud, inst.phi)
    write_map_csv(tmap, out / f"map_{tag}_facets.csv", out / f"map_{tag}_targets.csv")


def run_solve(cfg: ExperimentConfig, out: Path, threads: int = 1):
    problem = reference.SeparableProblem(cfg.alpha)
    rep = reference.RateReport()
    for idx, n in enumerate(cfg.sizes):
        cloud = _cloud(cfg, problem, n, idx)
        tag = f"{cfg.cloud_type}{n}"
        inst = reference.solve_on_cloud(problem, cloud, cfg.settings, trace_path=out / f"trace_{tag}.csv")
        rep.rows.append(reference.measure_errors(problem, inst))
        if cfg.dumps:
            _dump(out, tag, inst)
    rep.write_csv(out / "report.csv")
    return rep


def run_rates(cfg: ExperimentConfig, out: Path, threads: int = 1):
    problem = reference.SeparableProblem(cfg.alpha)
    clouds = [_cloud(cfg, problem, n, i) for i, n in enumerate(cfg.sizes)]
    keep = []
    rep = reference.rate_series(problem, clouds, cfg.settings, keep, threads)
    rep.write_csv(out / "report.csv")
    for inst in keep:
        tag = f"{cfg.cloud_type}{len(inst.cloud)}"
        inst.report.write_trace(out / f"trace_{tag}.csv")
        if cfg.dumps:
            _dump(out, tag, inst)
    return rep


def run_stability(cfg: ExperimentConfig, out: Path, threads: int = 1):
    rep = reference.stability_experiment(cfg.pairs)
    rep.write_csv(out / "report.csv")
    return rep


def run_periodic(cfg: ExperimentConfig, out: Path, threads: int = 1):
    problem = periodic.TorusProblem(cfg.beta)
    rep = periodic.torus_rate_series(problem, cfg.sizes, cfg.settings, threads)
    rep.write_csv(out / "report.csv")
    if cfg.dumps:
        for k in cfg.sizes:
            cloud, f, u, sr, diag = periodic.solve_torus_grid(problem, k, cfg.settings,
                                                             trace_path=out / f"trace_torus{k}.csv")
            write_diagram_csv(diag, out / f"diagram_torus{k}_cells.csv",
                              out / f"diagram_torus{k}_masses.csv", period=1)
    return rep


PIPELINES = {"solve": run_solve, "rates": run_rates, "stability": run_stability,
             "periodic-rates": run_periodic}


def run(config_path, out=None, threads: int = 1, env=None) -> int:
    try:
        cfg = load_config(config_path, env)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    out_dir = Path(out if out is not None else cfg.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    try:
        PIPELINES[cfg.mode](cfg, out_dir, max(1, int(threads)))
    except SolverError as exc:
        print(f"solver failure: {exc}", file=sys.stderr)
        r = exc.report
        if r is not None:
            print(f"  iterations={r.iterations} residual_inf={r.final_residual_inf:.3e} "
                  f"steps={r.step_sizes}", file=sys.stderr)
            r.write_trace(out_dir / "trace_failed.csv")
        return EXIT_SOLVER
    print(f"wrote {out_dir / 'report.csv'}")
    return 0


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(prog="semidiscrete-ma", description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="command", required=True)
    r = sub.add_parser("run", help="run an experiment config")
    r.add_argument("config")
    r.add_argument("--out", default=None, help="output directory (overrides the config)")
    r.add_argument("--threads", type=int, default=1, help="concurrent experiments over the size list")
    r.add_argument("-v", "--verbose", action="store_true")
    args = ap.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    return run(args.config, args.out, args.threads)


if __name__ == "__main__":
    sys.exit(main())
