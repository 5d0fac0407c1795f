"""Experiment grid orchestration and result emission.

Drives the simulator over an (algorithm x sources x repetition) grid
described by a JSON config: one independent run per cell, one CSV per
run, an aggregated mean-curve CSV, and a JSON manifest with the config
echo and timing.  A failure inside a cell is isolated: that cell is
marked failed in the manifest and reflected in the exit code, the
remaining cells are unaffected.

Seeding contract: the scenario seed depends only on (master_seed,
repetition), so every algorithm at every source count faces identical
target-market draws within a repetition; the run seed additionally
hashes (algorithm, sources) so algorithm-internal randomness never
collides across cells.
"""

import json
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, fields as dataclass_fields

import numpy as np

from .environment import ALGORITHMS, derive_seed, generate_scenario, run_policy
from .errors import ConfigError
from .estimation import EstimationConfig

CSV_HEADER = "algorithm,H,d,s0,N,K,seed,t,cum_regret,forced,episode"
AGGREGATE_HEADER = "algorithm,H,d,s0,N,K,t,mean_cum_regret,reps"

# full per-round logging up to this horizon; every 8th round beyond
DENSE_LOG_LIMIT = 4096

DEFAULT_CONFIG = {
    "d": 10,
    "items": 30,
    "offer_size": 5,
    "sources": [0, 1, 3, 5],
    "s0": 2,
    "shift": 0.1,
    "rounds": 2000,
    "l0": 0.5,
    "utility_bound": 3.1622776601683795,
    "algorithms": ["tjap"],
    "repetitions": 10,
    "master_seed": 1234,
    "source_policy": "uniform",
    "grid_points": 512,
    "tuning": {},
    "out": "results",
    "parallel": None,
}

_TUNING_KEYS = frozenset((
    "c_alpha", "c_lambda", "c_beta", "lambda0", "kappa",
    "c_lambda_growth", "gate_window_frac", "use_covariate_weights",
    "eta_total", "estimation",
))
_ESTIMATION_KEYS = frozenset(f.name for f in dataclass_fields(EstimationConfig))


@dataclass
class RunConfig:
    d: int
    items: int
    offer_size: int
    sources: tuple
    s0: int
    shift: float
    rounds: int
    l0: float
    utility_bound: float
    algorithms: tuple
    repetitions: int
    master_seed: int
    source_policy: str
    grid_points: int
    tuning: dict
    out: str
    parallel: int

    def as_dict(self):
        d = dict(self.__dict__)
        d["sources"] = list(self.sources)
        d["algorithms"] = list(self.algorithms)
        d["tuning"] = dict(self.tuning)
        return d

    def policy_overrides(self):
        ov = dict(self.tuning)
        est_kwargs = ov.pop("estimation", None)
        if est_kwargs:
            ov["estimation"] = EstimationConfig(**est_kwargs)
        ov["grid_points"] = self.grid_points
        return ov

    def cells(self):
        for algorithm in self.algorithms:
            for n_sources in self.sources:
                for rep in range(self.repetitions):
                    yield algorithm, n_sources, rep


def _key_line(text, key):
    """1-based line of the first occurrence of "key" in the config text."""
    if text is None:
        return None
    needle = '"%s"' % key
    for i, line in enumerate(text.splitlines(), start=1):
        if needle in line:
            return i
    return None


class _Check:
    """Collects the config file location so errors can point at a line."""

    def __init__(self, text, path):
        self.text = text
        self.path = path

    def fail(self, key, message):
        line = _key_line(self.text, key)
        where = self.path if line is None else "%s:%d" % (self.path, line)
        raise ConfigError("%s (%s)" % (message, where))


def _require_int(chk, raw, key, minimum=None):
    v = raw[key]
    if isinstance(v, bool) or not isinstance(v, int):
        chk.fail(key, "%s must be an integer, got %r" % (key, v))
    if minimum is not None and v < minimum:
        chk.fail(key, "%s must be >= %d, got %d" % (key, minimum, v))
    return v


def _require_number(chk, raw, key, positive=False):
    v = raw[key]
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        chk.fail(key, "%s must be a number, got %r" % (key, v))
    if positive and not v > 0:
        chk.fail(key, "%s must be > 0, got %r" % (key, v))
    return float(v)


def validate_config(raw, text=None, path="<config>"):
    """Normalize a raw config dict into a RunConfig.

    Unknown keys, wrong types and broken invariants raise ConfigError
    with the offending key's line in the original file when available.
    """
    chk = _Check(text, path)
    if not isinstance(raw, dict):
        raise ConfigError("config root must be a JSON object (%s)" % path)
    for key in raw:
        if key not in DEFAULT_CONFIG:
            chk.fail(key, "unknown config key %r" % key)
    merged = dict(DEFAULT_CONFIG)
    merged.update(raw)

    d = _require_int(chk, merged, "d", minimum=1)
    items = _require_int(chk, merged, "items", minimum=1)
    offer = _require_int(chk, merged, "offer_size", minimum=1)
    if offer > items:
        chk.fail("offer_size", "offer_size must be <= items (%d > %d)"
                 % (offer, items))
    s0 = _require_int(chk, merged, "s0", minimum=0)
    if s0 > 2 * d:
        chk.fail("s0", "s0 must be <= 2d = %d, got %d" % (2 * d, s0))
    shift = _require_number(chk, merged, "shift")
    if shift < 0:
        chk.fail("shift", "shift must be >= 0, got %r" % shift)
    rounds = _require_int(chk, merged, "rounds", minimum=1)
    if rounds < 2 * d + 2:
        chk.fail("rounds", "rounds must be >= 2d+2 = %d, got %d"
                 % (2 * d + 2, rounds))
    l0 = _require_number(chk, merged, "l0", positive=True)
    ub = merged["utility_bound"]
    if ub is not None:
        ub = _require_number(chk, merged, "utility_bound", positive=True)

    sources = merged["sources"]
    if (not isinstance(sources, list) or not sources
            or any(isinstance(h, bool) or not isinstance(h, int) or h < 0
                   for h in sources)):
        chk.fail("sources", "sources must be a non-empty list of ints >= 0")
    if len(set(sources)) != len(sources):
        chk.fail("sources", "sources contains duplicates")

    algorithms = merged["algorithms"]
    if not isinstance(algorithms, list) or not algorithms:
        chk.fail("algorithms", "algorithms must be a non-empty list")
    for name in algorithms:
        if name not in ALGORITHMS:
            chk.fail("algorithms", "unknown algorithm %r; registered: %s"
                     % (name, ", ".join(ALGORITHMS)))
    if len(set(algorithms)) != len(algorithms):
        chk.fail("algorithms", "algorithms contains duplicates")

    reps = _require_int(chk, merged, "repetitions", minimum=1)
    master = _require_int(chk, merged, "master_seed")
    source_policy = merged["source_policy"]
    if source_policy not in ("uniform", "greedy"):
        chk.fail("source_policy",
                 "source_policy must be 'uniform' or 'greedy', got %r"
                 % (source_policy,))
    grid_points = _require_int(chk, merged, "grid_points", minimum=2)

    tuning = merged["tuning"]
    if not isinstance(tuning, dict):
        chk.fail("tuning", "tuning must be an object")
    for key in tuning:
        if key not in _TUNING_KEYS:
            chk.fail(key, "unknown tuning key %r; known: %s"
                     % (key, ", ".join(sorted(_TUNING_KEYS))))
    est = tuning.get("estimation")
    if est is not None:
        if not isinstance(est, dict):
            chk.fail("estimation", "tuning.estimation must be an object")
        for key in est:
            if key not in _ESTIMATION_KEYS:
                chk.fail(key, "unknown estimation key %r" % key)

    out = merged["out"]
    if not isinstance(out, str) or not out:
        chk.fail("out", "out must be a non-empty string")
    parallel = merged["parallel"]
    if parallel is not None:
        parallel = _require_int(chk, merged, "parallel", minimum=1)

    return RunConfig(
        d=d, items=items, offer_size=offer, sources=tuple(sources), s0=s0,
        shift=shift, rounds=rounds, l0=l0,
        utility_bound=None if ub is None else ub,
        algorithms=tuple(algorithms), repetitions=reps, master_seed=master,
        source_policy=source_policy, grid_points=grid_points,
        tuning=dict(tuning), out=out, parallel=parallel)


def load_config(path):
    try:
        with open(path, "r", encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError("cannot read config %s: %s" % (path, exc))
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError("config is not valid JSON (%s:%d:%d: %s)"
                          % (path, exc.lineno, exc.colno, exc.msg))
    return validate_config(raw, text=text, path=path)


def default_config_json():
    return json.dumps(DEFAULT_CONFIG, indent=2)


# -- per-run emission --------------------------------------------------------

def log_rounds(horizon):
    """Rounds that get a CSV row: all of them up to DENSE_LOG_LIMIT,
    every 8th beyond (keeps long-horizon files small)."""
    if horizon <= DENSE_LOG_LIMIT:
        return range(1, horizon + 1)
    return range(8, horizon + 1, 8)


def run_file_name(algorithm, n_sources, rep):
    return "%s_H%d_rep%03d.csv" % (algorithm, n_sources, rep)


def _write_run_csv(path, config, algorithm, n_sources, run_seed, result):
    prefix = "%s,%d,%d,%d,%d,%d,%d" % (
        algorithm, n_sources, config.d, config.s0, config.items,
        config.offer_size, run_seed)
    lines = [CSV_HEADER]
    for t in log_rounds(config.rounds):
        i = t - 1
        lines.append("%s,%d,%s,%d,%d" % (
            prefix, t, "%.9g" % result.cum_regret[i],
            result.forced[i], result.episode[i]))
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write("\n".join(lines) + "\n")


def _run_cell(job):
    """Worker body: one (algorithm, sources, rep) cell, own CSV file."""
    config, algorithm, n_sources, rep, runs_dir = job
    name = run_file_name(algorithm, n_sources, rep)
    cell = {"algorithm": algorithm, "H": n_sources, "rep": rep,
            "file": "runs/" + name, "status": "ok", "error": None,
            "seed": None, "scenario_seed": None, "seconds": None}
    t0 = time.perf_counter()
    try:
        scenario_seed = derive_seed(config.master_seed, "scenario", rep)
        run_seed = derive_seed(config.master_seed, algorithm, n_sources, rep)
        cell["seed"] = run_seed
        cell["scenario_seed"] = scenario_seed
        scenario = generate_scenario(
            d=config.d, n_items=config.items, k_offer=config.offer_size,
            n_sources=n_sources, s0=config.s0,
            shift_magnitude=config.shift, l0=config.l0,
            horizon=config.rounds, seed=scenario_seed,
            utility_bound=config.utility_bound)
        result = run_policy(scenario, algorithm, run_seed,
                            overrides=config.policy_overrides(),
                            source_policy=config.source_policy)
        _write_run_csv(os.path.join(runs_dir, name), config, algorithm,
                       n_sources, run_seed, result)
    except Exception as exc:  # noqa: BLE001 - cell isolation is the point
        cell["status"] = "failed"
        cell["error"] = "%s: %s" % (type(exc).__name__, exc)
    cell["seconds"] = round(time.perf_counter() - t0, 3)
    return cell


# -- aggregation --------------------------------------------------------------

def _parse_run_csv(path):
    """(algorithm, H, d, s0, N, K, ts, curve) from one run CSV."""
    with open(path, "r", encoding="utf-8") as fh:
        header = fh.readline().rstrip("\n")
        if header != CSV_HEADER:
            raise ConfigError("%s: unexpected header %r" % (path, header))
        ts, curve = [], []
        meta = None
        for line in fh:
            parts = line.rstrip("\n").split(",")
            if len(parts) != 11:
                raise ConfigError("%s: malformed row %r" % (path, line))
            if meta is None:
                meta = (parts[0], int(parts[1]), int(parts[2]),
                        int(parts[3]), int(parts[4]), int(parts[5]))
            ts.append(int(parts[7]))
            curve.append(float(parts[8]))
    if meta is None:
        raise ConfigError("%s: no data rows" % path)
    return meta + (np.asarray(ts), np.asarray(curve))


def mean_curves_from_runs(runs_dir):
    """Arithmetic mean of per-run curves, recomputed from the run CSVs.

    Returns {(algorithm, H): (meta, ts, mean_curve, n_runs)} with files
    visited in sorted name order so the float accumulation order is
    reproducible.
    """
    names = sorted(n for n in os.listdir(runs_dir) if n.endswith(".csv"))
    if not names:
        raise ConfigError("no run CSVs found in %s" % runs_dir)
    groups = {}
    for name in names:
        algorithm, h, d, s0, n_items, k, ts, curve = _parse_run_csv(
            os.path.join(runs_dir, name))
        key = (algorithm, h)
        if key not in groups:
            groups[key] = [(d, s0, n_items, k), ts, np.zeros_like(curve), 0]
        meta, ts0, total, count = groups[key]
        if meta != (d, s0, n_items, k) or not np.array_equal(ts0, ts):
            raise ConfigError("run CSVs under %s disagree on the grid for %s"
                              % (runs_dir, key))
        groups[key][2] = total + curve
        groups[key][3] = count + 1
    return {key: (meta, ts, total / count, count)
            for key, (meta, ts, total, count) in groups.items()}


def _write_aggregate_csv(path, groups):
    lines = [AGGREGATE_HEADER]
    for algorithm, h in sorted(groups):
        (d, s0, n_items, k), ts, mean, count = groups[(algorithm, h)]
        for t, value in zip(ts, mean):
            lines.append("%s,%d,%d,%d,%d,%d,%d,%s,%d" % (
                algorithm, h, d, s0, n_items, k, t, "%.9g" % value, count))
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write("\n".join(lines) + "\n")


def _package_version():
    try:
        from importlib.metadata import version
        return version("tjap")
    except Exception:
        return "unknown"


def run_experiment(config, out_dir=None, parallel=None, quiet=False):
    """Execute the full grid; returns the process exit code (0 or 1).

    Writes out_dir/runs/<cell>.csv per cell, out_dir/aggregate.csv over
    the successful cells, and out_dir/manifest.json.  A failed cell
    yields exit code 1 but never stops the other cells.
    """
    if out_dir is None:
        out_dir = config.out
    if parallel is None:
        parallel = config.parallel or os.cpu_count() or 1
    runs_dir = os.path.join(out_dir, "runs")
    os.makedirs(runs_dir, exist_ok=True)

    jobs = [(config, algorithm, h, rep, runs_dir)
            for algorithm, h, rep in config.cells()]
    started = time.strftime("%Y-%m-%dT%H:%M:%S%z")
    t0 = time.perf_counter()
    if parallel > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=parallel) as pool:
            cells = list(pool.map(_run_cell, jobs))
    else:
        cells = [_run_cell(job) for job in jobs]
    for cell in cells:
        if not quiet:
            mark = "ok" if cell["status"] == "ok" else "FAILED"
            print("[%s] %s H=%d rep=%d (%.1fs)%s" % (
                mark, cell["algorithm"], cell["H"], cell["rep"],
                cell["seconds"],
                "" if cell["error"] is None else " " + cell["error"]))

    failed = [c for c in cells if c["status"] != "ok"]
    aggregate_file = None
    if len(failed) < len(cells):
        groups = mean_curves_from_runs(runs_dir)
        aggregate_file = os.path.join(out_dir, "aggregate.csv")
        _write_aggregate_csv(aggregate_file, groups)

    manifest = {
        "version": "tjap " + _package_version(),
        "started": started,
        "wall_clock_seconds": round(time.perf_counter() - t0, 3),
        "config": config.as_dict(),
        "csv_header": CSV_HEADER,
        "cells": cells,
        "n_cells": len(cells),
        "n_failed": len(failed),
        "aggregate": None if aggregate_file is None else "aggregate.csv",
    }
    with open(os.path.join(out_dir, "manifest.json"), "w",
              encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2)
        fh.write("\n")
    if not quiet:
        print("%d/%d cells ok, wall %.1fs, results in %s" % (
            len(cells) - len(failed), len(cells),
            manifest["wall_clock_seconds"], out_dir))
    return 1 if failed else 0


def verify_output(out_dir, quiet=False):
    """Recompute the aggregate from the run CSVs and compare.

    The stored aggregate must match a fresh mean over runs/*.csv row
    for row (same 9-significant-digit formatting).  Returns 0 on
    success, 1 with a diagnostic on any mismatch.
    """
    aggregate_path = os.path.join(out_dir, "aggregate.csv")
    runs_dir = os.path.join(out_dir, "runs")
    try:
        groups = mean_curves_from_runs(runs_dir)
        with open(aggregate_path, "r", encoding="utf-8") as fh:
            stored = fh.read().split("\n")
    except (OSError, ConfigError) as exc:
        print("verify: %s" % exc)
        return 1
    expected = [AGGREGATE_HEADER]
    for algorithm, h in sorted(groups):
        (d, s0, n_items, k), ts, mean, count = groups[(algorithm, h)]
        for t, value in zip(ts, mean):
            expected.append("%s,%d,%d,%d,%d,%d,%d,%s,%d" % (
                algorithm, h, d, s0, n_items, k, t, "%.9g" % value, count))
    stored = [line for line in stored if line]
    if stored != expected:
        for i, (a, b) in enumerate(zip(stored, expected)):
            if a != b:
                print("verify: aggregate.csv line %d mismatch:\n"
                      "  stored:     %s\n  recomputed: %s" % (i + 1, a, b))
                break
        else:
            print("verify: aggregate.csv has %d lines, recomputation has %d"
                  % (len(stored), len(expected)))
        return 1
    if not quiet:
        print("verify: aggregate matches %d mean curves over %d runs"
              % (len(groups), sum(g[3] for g in groups.values())))
    return 0
