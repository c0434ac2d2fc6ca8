"""Monte Carlo contamination study: Gaussian vs Student-t system noise.

Each replicate simulates a random walk whose innovations follow the scale
mixture ``(1 - p) N(0, sys_var) + p f N(0, sys_var)``, fits both models with
the same priors and records the efficiency, RDIC and RPsBF.
"""
from __future__ import annotations

import csv
import json
import logging
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from itertools import product
from pathlib import Path

import numpy as np

from .engine import GridSettings, fit
from .model import GAUSSIAN, STUDENT_T, DlmSpec, PriorSpec, TimeSeries
from .selection import compare, score

log = logging.getLogger(__name__)

SIMULATION_PRIORS = PriorSpec()

FULL_N = (100, 250, 500)
FULL_P = (0.0, 0.05, 0.1, 0.15, 0.2, 0.25)
FULL_F = (2.0, 4.0, 8.0)
DESK_N = (100,)
DESK_P = (0.0, 0.1, 0.25)
DESK_F = (2.0, 8.0)


class SimulationError(ValueError):
    pass


@dataclass(frozen=True)
class ScenarioConfig:
    n_d: int = 100
    p: float = 0.0
    f: float = 1.0
    replicates: int = 100
    seed: int = 20240101
    obs_var: float = 2.0
    sys_var: float = 2.0

    def __post_init__(self):
        if not 0.0 <= self.p <= 1.0:
            raise SimulationError(f"p must lie in [0, 1], got {self.p}")
        if not self.f >= 1.0:
            raise SimulationError(f"f must be at least 1, got {self.f}")
        if self.replicates < 1:
            raise SimulationError("replicates must be at least 1")
        if self.n_d < 2:
            raise SimulationError("n_d must be at least 2")
        if not (self.obs_var > 0 and self.sys_var > 0):
            raise SimulationError("true variances must be positive")
        if not 0 <= self.seed < 2**64:
            raise SimulationError("seed must be a 64-bit unsigned integer")

    @property
    def label(self) -> str:
        return f"n{self.n_d}_p{self.p:g}_f{self.f:g}"


def scenario_grid(n_values=DESK_N, p_values=DESK_P, f_values=DESK_F, **kw) -> list[ScenarioConfig]:
    return [ScenarioConfig(n_d=n, p=p, f=f, **kw) for n, f, p in product(n_values, f_values, p_values)]


def _generator(cfg: ScenarioConfig, replicate: int) -> np.random.Generator:
    # the replicate index is the spawn key, so streams do not depend on run order
    ss = np.random.SeedSequence(cfg.seed, spawn_key=(replicate,))
    return np.random.Generator(np.random.Philox(ss))


def draw_innovations(rng: np.random.Generator, size: int, p: float, f: float, sys_var: float):
    """Scale-contaminated innovations; a fixed number of draws per call."""
    xi = rng.normal(0.0, math.sqrt(sys_var), size)
    outlier = rng.uniform(size=size) < p
    return np.where(outlier, f * xi, xi), outlier


def simulate_series(cfg: ScenarioConfig, replicate: int):
    """Return ``(y, a)`` for one replicate; ``a_1 ~ N(0, sys_var)``."""
    rng = _generator(cfg, replicate)
    a1 = rng.normal(0.0, math.sqrt(cfg.sys_var))
    w, _ = draw_innovations(rng, cfg.n_d - 1, cfg.p, cfg.f, cfg.sys_var)
    a = a1 + np.concatenate([[0.0], np.cumsum(w)])
    y = a + rng.normal(0.0, math.sqrt(cfg.obs_var), cfg.n_d)
    return y, a


def efficiency(truth, mean_gauss, mean_t) -> float:
    """``sum (a_G - a)^2 / sum (a_t - a)^2 - 1``; NaN when the denominator is 0."""
    truth = np.asarray(truth, dtype=float)
    num = float(np.sum((np.asarray(mean_gauss) - truth) ** 2))
    den = float(np.sum((np.asarray(mean_t) - truth) ** 2))
    if den == 0.0:
        return math.nan
    return num / den - 1.0


@dataclass
class ReplicateRecord:
    scenario: str
    replicate: int
    ok: bool
    efficiency: float = math.nan
    rdic: float = math.nan
    rpsbf: float = math.nan
    lpsbf: float = math.nan
    dic_gauss: float = math.nan
    dic_t: float = math.nan
    neg_lpml_gauss: float = math.nan
    neg_lpml_t: float = math.nan
    grid_gauss: int = 0
    grid_t: int = 0
    error: str = ""
    truth: list = field(default_factory=list, repr=False)
    mean_gauss: list = field(default_factory=list, repr=False)
    mean_t: list = field(default_factory=list, repr=False)


def run_replicate(cfg: ScenarioConfig, replicate: int, priors: PriorSpec = SIMULATION_PRIORS,
                  settings: GridSettings | None = None, keep_paths: bool = False) -> ReplicateRecord:
    y, a = simulate_series(cfg, replicate)
    try:
        fits = {fam: fit(DlmSpec(TimeSeries(y), fam, priors), settings)
                for fam in (GAUSSIAN, STUDENT_T)}
        scores = {fam: score(r) for fam, r in fits.items()}
    except Exception as exc:  # a failed replicate is recorded, not fatal
        log.warning("%s replicate %d failed: %s", cfg.label, replicate, exc)
        return ReplicateRecord(cfg.label, replicate, False, error=f"{type(exc).__name__}: {exc}")
    cmp = compare(scores[GAUSSIAN], scores[STUDENT_T])
    mg, mt = fits[GAUSSIAN].state_means, fits[STUDENT_T].state_means
    rec = ReplicateRecord(
        cfg.label, replicate, True, efficiency(a, mg, mt), cmp.rdic, cmp.rpsbf, cmp.lpsbf,
        scores[GAUSSIAN].dic, scores[STUDENT_T].dic,
        scores[GAUSSIAN].neg_lpml, scores[STUDENT_T].neg_lpml,
        len(fits[GAUSSIAN].grid), len(fits[STUDENT_T].grid))
    if keep_paths:
        rec.truth, rec.mean_gauss, rec.mean_t = a.tolist(), mg.tolist(), mt.tolist()
    return rec


def _run_one(args):
    return run_replicate(*args)


def _quartiles(values):
    v = np.asarray([x for x in values if np.isfinite(x)])
    if v.size == 0:
        return {"median": math.nan, "q25": math.nan, "q75": math.nan}
    q25, med, q75 = np.quantile(v, [0.25, 0.5, 0.75])
    return {"median": float(med), "q25": float(q25), "q75": float(q75)}


STATISTICS = ("efficiency", "rdic", "rpsbf", "lpsbf")


@dataclass
class ScenarioSummary:
    config: ScenarioConfig
    completed: int
    failed: int
    stats: dict

    def median(self, name: str) -> float:
        return self.stats[name]["median"]


@dataclass
class ComparisonReport:
    scenarios: list
    records: list

    def summary(self, label: str) -> ScenarioSummary:
        for s in self.scenarios:
            if s.config.label == label:
                return s
        raise KeyError(label)

    def to_dict(self) -> dict:
        return {
            "scenarios": [{"label": s.config.label, "config": asdict(s.config),
                           "completed": s.completed, "failed": s.failed, "stats": s.stats}
                          for s in self.scenarios],
            "records": [_record_row(r) for r in self.records],
        }


def summarize(cfg: ScenarioConfig, records: list) -> ScenarioSummary:
    done = [r for r in records if r.ok]
    stats = {name: _quartiles(getattr(r, name) for r in done) for name in STATISTICS}
    return ScenarioSummary(cfg, len(done), len(records) - len(done), stats)


def run_study(configs, priors: PriorSpec = SIMULATION_PRIORS, settings: GridSettings | None = None,
              workers=None, keep_paths: bool = False) -> ComparisonReport:
    """Run every replicate of every scenario; results are ordered by (scenario, replicate)."""
    configs = list(configs)
    jobs = [(cfg, j, priors, settings, keep_paths) for cfg in configs for j in range(cfg.replicates)]
    if workers is None:
        workers = int(os.environ.get("ROBUSTDLM_WORKERS", "1") or 1)
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            records = list(pool.map(_run_one, jobs, chunksize=1))
    else:
        records = [_run_one(job) for job in jobs]
    summaries = []
    for cfg in configs:
        summaries.append(summarize(cfg, [r for r in records if r.scenario == cfg.label]))
    return ComparisonReport(summaries, records)


# ---------------------------------------------------------------------------
# output

RECORD_FIELDS = ("scenario", "replicate", "ok", "efficiency", "rdic", "rpsbf", "lpsbf",
                 "dic_gauss", "dic_t", "neg_lpml_gauss", "neg_lpml_t", "grid_gauss", "grid_t", "error")


def _fmt(v):
    if isinstance(v, float):
        return repr(v) if math.isfinite(v) else "nan"
    return v


def _record_row(r: ReplicateRecord) -> dict:
    return {k: _fmt(getattr(r, k)) for k in RECORD_FIELDS}


def write_records_csv(report: ComparisonReport, path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=RECORD_FIELDS, lineterminator="\n")
        writer.writeheader()
        for r in report.records:
            writer.writerow(_record_row(r))


def write_summary_csv(report: ComparisonReport, path) -> None:
    fields = ["scenario", "n_d", "p", "f", "replicates", "completed", "failed"]
    for name in STATISTICS:
        fields += [f"{name}_median", f"{name}_q25", f"{name}_q75"]
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(fields)
        for s in report.scenarios:
            c = s.config
            row = [c.label, c.n_d, c.p, c.f, c.replicates, s.completed, s.failed]
            for name in STATISTICS:
                row += [_fmt(s.stats[name][k]) for k in ("median", "q25", "q75")]
            writer.writerow(row)


def write_json(report: ComparisonReport, path) -> None:
    def clean(o):
        if isinstance(o, float) and not math.isfinite(o):
            return None
        if isinstance(o, dict):
            return {k: clean(v) for k, v in o.items()}
        if isinstance(o, list):
            return [clean(v) for v in o]
        return o
    Path(path).write_text(json.dumps(clean(report.to_dict()), indent=2, sort_keys=True) + "\n")


def figure_table(report: ComparisonReport, statistic: str = "efficiency") -> list[list]:
    """Median of ``statistic`` with one row per (f, n_d) and one column per p."""
    ps = sorted({s.config.p for s in report.scenarios})
    rows = {}
    for s in report.scenarios:
        key = (s.config.f, s.config.n_d)
        rows.setdefault(key, {})[s.config.p] = s.median(statistic)
    table = [["f", "n_d"] + [f"p={p:g}" for p in ps]]
    for (f, n), vals in sorted(rows.items()):
        table.append([f, n] + [vals.get(p, math.nan) for p in ps])
    return table
