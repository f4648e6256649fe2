"""Benchmark schemes and parameter sweeps.

A sweep varies one scenario parameter, runs every requested scheme at every
value and writes one CSV row per pair with the columns
``axis,value,scheme,pcrb,apcrb,outer_iters,wall_ms,status``.

``outer_iters`` counts alternating rounds for ``alg3`` and the EBC schemes and
SCA iterations for the single-block benchmarks. ``status`` is ``ok``, ``ok``
followed by ``;``-separated optimiser flags, or ``error:<type>: <message>``
when the scheme failed (the sweep carries on).
"""
from __future__ import annotations

import csv
import io
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import yaml

from .ebc import make_plan, optimize_ebc, optimize_unreduced
from .errors import IoError, NetsenseError
from .optimizer import (
    DesignProblem,
    OptimizerConfig,
    alternate,
    bench_fixed_transmit,
    bench_uniform,
    bench_unlimited,
)
from .scenario import (
    DEFAULT_TARGETS,
    HEX_SITES,
    draw_samples,
    load_scenario,
    make_scenario,
    scenario_from_config,
    scenario_to_config,
)

AXES = ("power_dbm", "fronthaul_bits", "num_targets", "num_bs", "Mt", "Mr")
SCHEMES = ("alg3", "bench1", "bench2", "bench3", "ebc", "bench4", "bench5", "bench6", "bench7")
EBC_KIND = {"ebc": "eigen", "bench4": "minus_one", "bench5": "plus_one", "bench6": "dft", "bench7": "identity"}
COLUMNS = ("axis", "value", "scheme", "pcrb", "apcrb", "outer_iters", "wall_ms", "status")
FULL_DIMS = {"Mt": 8, "Mr": 16}


@dataclass
class ResultRow:
    axis: str
    value: float
    scheme: str
    pcrb: float
    apcrb: float
    outer_iters: int
    wall_ms: float
    status: str

    @property
    def ok(self) -> bool:
        return self.status.startswith("ok")

    def cells(self, timing: bool = True) -> list[str]:
        wall = f"{self.wall_ms:.1f}" if timing else "0"
        return [self.axis, f"{self.value:g}", self.scheme, repr(self.pcrb), repr(self.apcrb),
                str(self.outer_iters), wall, self.status]


def _status(flags) -> str:
    flags = sorted(set(flags))
    return "ok" if not flags else "ok;" + ";".join(flags)


def run_scheme(scheme: str, scenario, samples=None, cfg: OptimizerConfig | None = None,
               axis: str = "", value: float = np.nan) -> ResultRow:
    """Run one scheme on one scenario; failures come back as an ``error:`` row."""
    if scheme not in SCHEMES:
        raise ValueError(f"unknown scheme {scheme!r}; choose from {SCHEMES}")
    t0 = time.perf_counter()
    K = scenario.K
    try:
        samples = samples if samples is not None else draw_samples(scenario)
        if scheme in EBC_KIND:
            kind = EBC_KIND[scheme]
            if kind != "identity" and scenario.Mr <= 2 * K:
                raise NetsenseError(f"beamformed schemes need Mr > 2K (Mr={scenario.Mr}, K={K})")
            rng = np.random.default_rng((scenario.rng_seed, 2))  # stream for AOA estimation
            if kind == "identity":
                rep, _ = optimize_unreduced(scenario, samples, cfg, rng=rng)
            else:
                rep, _ = optimize_ebc(scenario, samples, make_plan(scenario, samples, kind=kind, rng=rng), cfg)
            iters = rep.outer_iterations
        else:
            prob = DesignProblem.from_scenario(scenario, samples)
            fn = {"alg3": alternate, "bench1": bench_uniform, "bench2": bench_fixed_transmit,
                  "bench3": bench_unlimited}[scheme]
            rep = fn(prob, cfg)
            iters = rep.outer_iterations if scheme == "alg3" else int(sum(rep.inner_iterations))
        val = float(rep.objective)
        status = _status(rep.flags)
    except (NetsenseError, np.linalg.LinAlgError, ValueError) as exc:
        val, iters, status = np.nan, 0, f"error:{type(exc).__name__}: {exc}".replace(",", ";")
    wall = 1e3 * (time.perf_counter() - t0)
    return ResultRow(axis, float(value), scheme, val, val / K, iters, wall, status)


# ------------------------------------------------------------------ sweeps


@dataclass
class SweepSpec:
    axis: str
    values: list
    schemes: list
    scenario: str | None = None
    output: str = "sweep.csv"
    full: bool = False
    workers: int = 1
    timing: bool = True
    overrides: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.axis not in AXES:
            raise ValueError(f"axis must be one of {AXES}")
        if not self.values:
            raise ValueError("sweep needs at least one value")
        bad = [s for s in self.schemes if s not in SCHEMES]
        if bad or not self.schemes:
            raise ValueError(f"schemes must be drawn from {SCHEMES}; got {self.schemes}")

    @classmethod
    def from_file(cls, path) -> "SweepSpec":
        cfg = yaml.safe_load(Path(path).read_text()) or {}
        scen = cfg.get("scenario")
        if scen is not None and not Path(scen).is_absolute():
            scen = str(Path(path).parent / scen)
        cfg["scenario"] = scen
        return cls(**cfg)


def base_config(scenario_path=None, full=False, overrides=None) -> dict:
    cfg = scenario_to_config(load_scenario(scenario_path) if scenario_path else make_scenario())
    if full:
        cfg.update(FULL_DIMS)
    cfg.update(overrides or {})
    return cfg


def _uniform(v):
    v = np.atleast_1d(np.asarray(v, float))
    if np.ptp(v) > 0:
        raise ValueError("per-BS values differ; cannot resize the BS set")
    return float(v[0])


def apply_axis(cfg: dict, axis: str, value) -> dict:
    """Scenario config with ``axis`` set to ``value``."""
    cfg = dict(cfg)
    if axis in ("power_dbm", "fronthaul_bits"):
        cfg[axis] = float(value)
    elif axis in ("Mt", "Mr"):
        cfg[axis] = int(value)
    elif axis == "num_targets":
        k = int(value)
        pool = list(cfg["targets"])
        pool += [{"center": list(t.center), "radius": t.radius} for t in DEFAULT_TARGETS[len(pool):]]
        if not 1 <= k <= len(pool):
            raise ValueError(f"num_targets must lie in 1..{len(pool)}")
        cfg["targets"] = pool[:k]
    elif axis == "num_bs":
        n = int(value)
        if not 1 <= n <= len(HEX_SITES):
            raise ValueError(f"num_bs must lie in 1..{len(HEX_SITES)}")
        cfg["bs_positions"] = HEX_SITES[:n].tolist()
        cfg["power_dbm"] = _uniform(cfg["power_dbm"])
        cfg["fronthaul_bits"] = _uniform(cfg["fronthaul_bits"])
    return cfg


def _run_point(args):
    cfg, axis, value, schemes = args
    try:
        scenario = scenario_from_config(cfg)
        samples = draw_samples(scenario)
    except (NetsenseError, ValueError) as exc:
        msg = f"error:{type(exc).__name__}: {exc}".replace(",", ";")
        return [ResultRow(axis, float(value), s, np.nan, np.nan, 0, 0.0, msg) for s in schemes]
    return [run_scheme(s, scenario, samples, axis=axis, value=value) for s in schemes]


def run_sweep(spec: SweepSpec) -> list[ResultRow]:
    """All rows of a sweep in axis-value order, then scheme order."""
    base = base_config(spec.scenario, spec.full, spec.overrides)
    tasks = [(apply_axis(base, spec.axis, v), spec.axis, v, list(spec.schemes)) for v in spec.values]
    if spec.workers > 1:
        with ProcessPoolExecutor(max_workers=spec.workers) as pool:
            chunks = list(pool.map(_run_point, tasks))
    else:
        chunks = [_run_point(t) for t in tasks]
    return [row for chunk in chunks for row in chunk]


def rows_to_csv(rows, timing: bool = True) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(COLUMNS)
    for r in rows:
        w.writerow(r.cells(timing))
    return buf.getvalue()


def sweep(spec: SweepSpec) -> list[ResultRow]:
    """Run ``spec`` and write its CSV to ``spec.output``."""
    rows = run_sweep(spec)
    text = rows_to_csv(rows, spec.timing)
    try:
        Path(spec.output).write_text(text)
    except OSError as exc:
        raise IoError(f"cannot write {spec.output}: {exc}") from exc
    return rows
