"""Command-line front end: ``synth``, ``run``, ``check`` and ``spectral``.

Every command is deterministic given its configuration. Per-run seeds are
spawned from ``SeedSequence(seed)`` so run ``r`` sees the same instance no
matter how many runs are requested or how they are scheduled.
"""
from __future__ import annotations

import argparse
import csv
import io
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, fields
from pathlib import Path
from typing import Sequence

import numpy as np

from . import algo1, algo2
from .errors import ConditionError, EigenOverflowError, OrthoSyncError, SimulationError
from .graph import DirectedGraph, read_graph, write_graph
from .netsim import ExperimentTrace, synth_instance
from .synccore import (
    ALG1_REQUIRED,
    ALG2_REQUIRED,
    EdgeTransformSet,
    build_undirected_laplacian,
    check_conditions,
    read_transforms,
    solve_spectral_relaxation,
    write_transforms,
)

__all__ = ["ExperimentConfig", "load_config", "build_parser", "main", "aggregate_traces"]

GAP_COLUMNS = ("gap_R", "gap_Q", "gap_Rtilde_inv", "gap_Qtilde_inv")
EXIT_OK, EXIT_CONDITIONS, EXIT_USAGE, EXIT_NUMERICAL = 0, 1, 2, 3


@dataclass
class ExperimentConfig:
    algorithm: str = "alg1"
    n: int = 10
    d: int = 5
    density: float = 0.9
    mode: str = "auto"
    sigma: float = 0.2
    runs: int = 20
    iters: int = 1000
    eps1: str = "auto"
    eps2: str = "auto"
    eps3: str = "auto"
    seed: int = 0
    out: str = "out"
    force: bool = False
    jobs: int = 1
    record_every: int = 1
    instance: str = ""

    def __post_init__(self):
        if self.algorithm not in ("alg1", "alg2"):
            raise ValueError(f"algorithm must be alg1 or alg2, got {self.algorithm!r}")
        if self.mode not in ("auto", "symmetric-connected", "symmetric", "qsc"):
            raise ValueError(f"unknown graph mode {self.mode!r}")
        for name in ("runs", "iters", "jobs", "record_every"):
            if getattr(self, name) < (0 if name == "iters" else 1):
                raise ValueError(f"{name} out of range: {getattr(self, name)}")
        for name in ("eps1", "eps2", "eps3"):
            value = str(getattr(self, name))
            if value != "auto":
                float(value)
            setattr(self, name, value)

    @property
    def graph_mode(self) -> str:
        if self.mode != "auto":
            return self.mode
        return "symmetric-connected" if self.algorithm == "alg1" else "qsc"

    def step(self, name: str, n: int) -> float:
        """Resolve ``eps1``/``eps2``/``eps3``; ``auto`` means ``1/(2n)``."""
        value = getattr(self, name)
        return 1.0 / (2 * n) if value == "auto" else float(value)

    def to_text(self) -> str:
        return "".join(f"{k}={v}\n" for k, v in asdict(self).items())


_TYPES = {f.name: f.type for f in fields(ExperimentConfig)}


def _coerce(key: str, raw: str):
    kind = _TYPES[key]
    if kind == "bool":
        if raw.lower() in ("1", "true", "yes", "on"):
            return True
        if raw.lower() in ("0", "false", "no", "off", ""):
            return False
        raise ValueError(f"{key}: not a boolean: {raw!r}")
    if kind == "int":
        return int(raw)
    if kind == "float":
        return float(raw)
    return raw


def parse_config_text(text: str) -> dict:
    """Flat ``key=value`` lines; ``#`` starts a comment."""
    values = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"config line {lineno}: expected key=value")
        key, raw = (s.strip() for s in line.split("=", 1))
        key = key.replace("-", "_")
        if key not in _TYPES:
            raise ValueError(f"config line {lineno}: unknown key {key!r}")
        values[key] = _coerce(key, raw)
    return values


def load_config(path=None, overrides: dict | None = None) -> ExperimentConfig:
    values = parse_config_text(Path(path).read_text()) if path else {}
    values.update({k: v for k, v in (overrides or {}).items() if v is not None})
    return ExperimentConfig(**values)


# --- instance directories -----------------------------------------------------

def format_collection(C: np.ndarray) -> str:
    n, d, _ = C.shape
    lines = [f"{n} {d}"]
    for block in C:
        lines += [" ".join(repr(float(x)) for x in row) for row in block]
    return "\n".join(lines) + "\n"


def parse_collection(text: str) -> np.ndarray:
    rows = [line.split() for line in text.splitlines() if line.strip()]
    n, d = int(rows[0][0]), int(rows[0][1])
    data = np.array([[float(x) for x in r] for r in rows[1:]], dtype=float)
    if data.shape != (n * d, d):
        raise ValueError(f"expected {n * d}x{d} values, got {data.shape}")
    return data.reshape(n, d, d)


def write_instance(directory: Path, inst, config: ExperimentConfig, run_id: int) -> None:
    directory.mkdir(parents=True, exist_ok=True)
    write_graph(inst.graph, directory / "graph.txt")
    write_transforms(inst.graph, inst.transforms, directory / "transforms.txt")
    (directory / "ground_truth.txt").write_text(format_collection(inst.ground_truth))
    (directory / "meta.txt").write_text(config.to_text() + f"run_id={run_id}\n")


def read_instance(directory) -> tuple[DirectedGraph, EdgeTransformSet]:
    directory = Path(directory)
    g, T = read_transforms(directory / "transforms.txt")
    graph_file = directory / "graph.txt"
    if graph_file.exists() and read_graph(graph_file) != g:
        raise ValueError(f"{directory}: graph.txt and transforms.txt disagree")
    return g, T


def _instance_dirs(path) -> list[Path]:
    path = Path(path)
    if (path / "transforms.txt").exists():
        return [path]
    found = sorted(p for p in path.glob("instance_*") if (p / "transforms.txt").exists())
    if not found:
        raise FileNotFoundError(f"no instance found under {path}")
    return found


def _run_seeds(config: ExperimentConfig) -> list[np.random.SeedSequence]:
    return np.random.SeedSequence(config.seed).spawn(config.runs)


def _synth(config: ExperimentConfig, seed):
    return synth_instance(config.n, config.d, config.density, config.graph_mode, config.sigma, seed)


# --- commands -----------------------------------------------------------------

def cmd_synth(config: ExperimentConfig) -> int:
    out = Path(config.out)
    seeds = _run_seeds(config)
    for r, seed in enumerate(seeds):
        target = out if config.runs == 1 else out / f"instance_{r:03d}"
        write_instance(target, _synth(config, seed), config, r)
    print(f"wrote {config.runs} instance(s) to {out}")
    return EXIT_OK


def _execute_run(config: ExperimentConfig, run_id: int, source) -> ExperimentTrace:
    if isinstance(source, (str, Path)):
        g, T = read_instance(source)
    else:
        inst = _synth(config, source)
        g, T = inst.graph, inst.transforms
    if config.algorithm == "alg1":
        try:
            res = algo1.run_algorithm1(
                g, T, eps1=config.step("eps1", g.n), eps2=config.step("eps2", g.n), iterations=config.iters,
                record_every=config.record_every, force=config.force, run_id=run_id,
            )
        except SimulationError as exc:
            # surface the overflow itself: exception chains do not survive a process pool
            if isinstance(exc.__cause__, EigenOverflowError):
                raise exc.__cause__ from None
            raise
    else:
        res = algo2.run_algorithm2(
            g, T, eps3=config.step("eps3", g.n), iterations=config.iters,
            record_every=config.record_every, force=config.force, run_id=run_id,
        )
    return res.trace


def _log10(values: np.ndarray) -> np.ndarray:
    with np.errstate(invalid="ignore"):
        return np.log10(np.maximum(values, np.finfo(float).eps))


def aggregate_traces(traces: Sequence[ExperimentTrace]) -> str:
    """Mean ``log10`` gap per recorded iteration over the runs where it is defined.

    Gaps are floored at machine epsilon before the logarithm; ``n_*`` columns count
    the runs contributing to each mean.
    """
    ordered = sorted(traces, key=lambda t: t.run_id)
    iters = sorted({int(k) for t in ordered for k in t.iterations})
    index = {k: i for i, k in enumerate(iters)}
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["iter"] + [f"mean_log10_{c}" for c in GAP_COLUMNS] + [f"n_{c[4:]}" for c in GAP_COLUMNS])
    table = np.full((len(GAP_COLUMNS), len(ordered), len(iters)), np.nan)
    for r, t in enumerate(ordered):
        cols = [index[int(k)] for k in t.iterations]
        for c, name in enumerate(GAP_COLUMNS):
            table[c, r, cols] = _log10(t.column(name))
    for i, k in enumerate(iters):
        means, counts = [], []
        for c in range(len(GAP_COLUMNS)):
            vals = table[c, :, i]
            vals = vals[~np.isnan(vals)]
            means.append(repr(float(np.mean(vals))) if len(vals) else "")
            counts.append(str(len(vals)))
        writer.writerow([k] + means + counts)
    return buf.getvalue()


def cmd_run(config: ExperimentConfig) -> int:
    out = Path(config.out)
    out.mkdir(parents=True, exist_ok=True)
    if config.instance:
        sources = _instance_dirs(config.instance)
    else:
        sources = _run_seeds(config)
    jobs = [(config, r, s) for r, s in enumerate(sources)]
    if config.jobs > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=config.jobs) as pool:
            traces = list(pool.map(_execute_run, *zip(*jobs)))
    else:
        traces = [_execute_run(*job) for job in jobs]
    for t in traces:
        t.write_csv(out / f"trace_{t.run_id:03d}.csv")
    (out / "aggregate.csv").write_text(aggregate_traces(traces))
    (out / "config.txt").write_text(config.to_text())
    print(f"wrote {len(traces)} trace(s) and aggregate.csv to {out}")
    return EXIT_OK


def _single_instance(config: ExperimentConfig) -> tuple[DirectedGraph, EdgeTransformSet]:
    if config.instance:
        dirs = _instance_dirs(config.instance)
        if len(dirs) != 1:
            raise ValueError(f"{config.instance} holds {len(dirs)} instances; point at one of them")
        return read_instance(dirs[0])
    inst = _synth(config, _run_seeds(ExperimentConfig(**{**asdict(config), "runs": 1}))[0])
    return inst.graph, inst.transforms


def cmd_check(config: ExperimentConfig) -> int:
    g, T = _single_instance(config)
    report = check_conditions(
        g, T, eps1=config.step("eps1", g.n), eps2=config.step("eps2", g.n), eps3=config.step("eps3", g.n)
    )
    print(report.render())
    required = ALG1_REQUIRED if config.algorithm == "alg1" else ALG2_REQUIRED
    failed = report.failed(required)
    if failed:
        print(f"{config.algorithm}: required conditions failed: {', '.join(failed)}")
        return EXIT_CONDITIONS
    print(f"{config.algorithm}: all required conditions hold")
    return EXIT_OK


def cmd_spectral(config: ExperimentConfig) -> int:
    g, T = _single_instance(config)
    sol = solve_spectral_relaxation(build_undirected_laplacian(g, T))
    out = Path(config.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "xbar.txt").write_text(format_collection(sol.blocks()))
    (out / "eigenvalues.txt").write_text("".join(f"{float(v)!r}\n" for v in sol.eigenvalues))
    (out / "objective.txt").write_text(f"{float(sol.objective)!r}\n")
    print(f"objective={float(sol.objective)!r}")
    print("eigenvalues=" + " ".join(repr(float(v)) for v in sol.eigenvalues))
    return EXIT_OK


COMMANDS = {"synth": cmd_synth, "run": cmd_run, "check": cmd_check, "spectral": cmd_spectral}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="key=value file; flags override its values")
    common.add_argument("--algorithm", choices=["alg1", "alg2"])
    common.add_argument("--n", type=int)
    common.add_argument("--d", type=int)
    common.add_argument("--density", type=float)
    common.add_argument("--mode", choices=["auto", "symmetric-connected", "symmetric", "qsc"])
    common.add_argument("--sigma", type=float, help="noise standard deviation")
    common.add_argument("--runs", type=int)
    common.add_argument("--iters", type=int)
    common.add_argument("--eps1", help="step size or 'auto' (1/(2n))")
    common.add_argument("--eps2", help="step size or 'auto' (1/(2n))")
    common.add_argument("--eps3", help="step size or 'auto' (1/(2n))")
    common.add_argument("--seed", type=int)
    common.add_argument("--out")
    common.add_argument("--force", action="store_true", default=None, help="run despite failed hard conditions")
    common.add_argument("--jobs", type=int, help="parallel runs")
    common.add_argument("--record-every", dest="record_every", type=int, help="trace stride in rounds")
    common.add_argument("--instance", help="instance directory (or a directory of instance_* folders)")
    parser = argparse.ArgumentParser(prog="orthosync", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("synth", parents=[common], help="write random instances")
    sub.add_parser("run", parents=[common], help="run an algorithm and write traces")
    sub.add_parser("check", parents=[common], help="evaluate the convergence conditions")
    sub.add_parser("spectral", parents=[common], help="solve the spectral relaxation")
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    overrides = {k: v for k, v in vars(args).items() if k not in ("command", "config")}
    try:
        config = load_config(args.config, overrides)
    except (OSError, ValueError, TypeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    try:
        return COMMANDS[args.command](config)
    except ConditionError as exc:
        print(f"error: {exc}\n(use --force to run anyway)", file=sys.stderr)
        return EXIT_CONDITIONS
    except (EigenOverflowError, SimulationError) as exc:
        cause = exc.__cause__ if isinstance(exc, SimulationError) and exc.__cause__ else exc
        print(f"error: {exc}", file=sys.stderr)
        if isinstance(cause, EigenOverflowError):
            print(f"lower --iters below {cause.iteration}", file=sys.stderr)
        return EXIT_NUMERICAL
    except (OSError, ValueError, OrthoSyncError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
