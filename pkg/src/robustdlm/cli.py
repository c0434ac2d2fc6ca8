"""Command line entry point: ``robustdlm fit | simulate | compare``.

Exit codes: 0 success, 2 bad input (CSV, config, mismatched score files),
3 fit failure.  The worker count comes from ``--workers`` or the
``ROBUSTDLM_WORKERS`` environment variable.
"""
from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import math
import sys
import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import simlab
from .augment import EPSILON
from .engine import (DEFAULT_DROP, MAX_GRID_DIM, WIDE_DROP, WIDE_DROP_DIMS, WORKERS_ENV,
                     GridSettings, fit)
from .gaussian_approx import GRAD_TOL, MAX_ITER, STEP_TOL
from .model import FAMILIES, DlmSpec, DofPrior, GammaPrior, ModelError, PriorSpec, TimeSeries
from .selection import CPO_METHOD, FitScores, compare, score

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

log = logging.getLogger("robustdlm")

EXIT_OK, EXIT_INPUT, EXIT_FIT = 0, 2, 3
COLUMNS = ("series_id", "group_id", "time", "value")
MISSING_TOKENS = {"", "na", "nan", "null"}

# grouped-model defaults: per-series observation precision, shared trend precision
GROUP_OBS_PRIOR = (5.0, 500.0)
GROUP_SYS_PRIOR = (1.0, 0.1)
GROUP_DF = 0.3


class InputError(Exception):
    pass


# ---------------------------------------------------------------------------
# CSV input


@dataclass
class Group:
    group_id: str
    series_ids: list
    times: np.ndarray
    values: np.ndarray              # (n_series, n_d) with NaN gaps


def _parse_value(text: str, lineno: int) -> float:
    if text.strip().lower() in MISSING_TOKENS:
        return math.nan
    try:
        v = float(text)
    except ValueError:
        raise InputError(f"line {lineno}: value {text!r} is not a number") from None
    if not math.isfinite(v):
        raise InputError(f"line {lineno}: value {text!r} is not finite")
    return v


def read_grouped_csv(path):
    """Parse the long-format input into groups; returns ``(groups, checksum)``."""
    rows = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise InputError("line 1: empty file") from None
        header = [h.strip() for h in header]
        missing = [c for c in COLUMNS if c not in header]
        if missing:
            raise InputError(f"line 1: header lacks column(s) {', '.join(missing)}")
        col = {c: header.index(c) for c in COLUMNS}
        for row in reader:
            lineno = reader.line_num
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != len(header):
                raise InputError(f"line {lineno}: expected {len(header)} fields, got {len(row)}")
            sid, gid = row[col["series_id"]].strip(), row[col["group_id"]].strip()
            if not sid or not gid:
                raise InputError(f"line {lineno}: empty series_id or group_id")
            try:
                t = int(row[col["time"]])
            except ValueError:
                raise InputError(f"line {lineno}: time {row[col['time']]!r} is not an integer") from None
            rows.append((gid, sid, t, _parse_value(row[col["value"]], lineno), lineno))
    if not rows:
        raise InputError("line 2: no data rows")

    series = {}
    for gid, sid, t, v, lineno in rows:
        owner = series.setdefault(sid, {"group": gid, "points": {}})
        if owner["group"] != gid:
            raise InputError(f"line {lineno}: series {sid!r} appears in two groups")
        if t in owner["points"]:
            raise InputError(f"line {lineno}: duplicate time {t} for series {sid!r}")
        owner["points"][t] = v
    for sid, info in series.items():
        ts = sorted(info["points"])
        if ts[-1] - ts[0] + 1 != len(ts):
            raise InputError(f"series {sid!r}: time indices are not contiguous")

    groups = []
    for gid in sorted({info["group"] for info in series.values()}):
        sids = sorted(s for s, info in series.items() if info["group"] == gid)
        t0 = min(min(series[s]["points"]) for s in sids)
        t1 = max(max(series[s]["points"]) for s in sids)
        times = np.arange(t0, t1 + 1)
        vals = np.full((len(sids), times.size), np.nan)
        for i, s in enumerate(sids):
            for t, v in series[s]["points"].items():
                vals[i, t - t0] = v
        groups.append(Group(gid, sids, times, vals))
    return groups, data_checksum(rows)


def data_checksum(rows) -> str:
    """SHA-256 of the parsed rows in canonical order, independent of row order."""
    canon = sorted((g, s, t, "nan" if math.isnan(v) else repr(v)) for g, s, t, v, *_ in rows)
    text = "\n".join(",".join(map(str, r)) for r in canon)
    return "sha256:" + hashlib.sha256(text.encode()).hexdigest()


# ---------------------------------------------------------------------------
# shared flags


def _settings_from_args(args) -> GridSettings:
    return GridSettings(step=args.step, drop=args.drop, grad_tol=args.grad_tol,
                        step_tol=args.step_tol, max_newton=args.max_newton,
                        max_grid_dim=args.max_grid_dim)


def _add_grid_flags(p):
    g = p.add_argument_group("integration settings")
    g.add_argument("--step", type=float, default=GridSettings.step,
                   help="standardized grid step (default %(default)s)")
    g.add_argument("--drop", type=float, default=None,
                   help=f"log-density drop ending the grid (default {WIDE_DROP:g} for up to "
                        f"{WIDE_DROP_DIMS} free hyperparameters, else {DEFAULT_DROP:g})")
    g.add_argument("--grad-tol", type=float, default=GRAD_TOL,
                   help="Newton gradient tolerance (default %(default)s)")
    g.add_argument("--step-tol", type=float, default=STEP_TOL,
                   help="Newton relative step tolerance (default %(default)s)")
    g.add_argument("--max-newton", type=int, default=MAX_ITER,
                   help="Newton iteration cap (default %(default)s)")
    g.add_argument("--max-grid-dim", type=int, default=MAX_GRID_DIM,
                   help="free hyperparameters above which only the mode is used "
                        "(default %(default)s)")
    g.add_argument("--workers", type=int, default=None,
                   help=f"worker threads (default ${WORKERS_ENV} or 1)")


# ---------------------------------------------------------------------------
# fit


def _fixed_from_args(args) -> dict:
    fixed = {}
    for name in ("obs_precision", "sys_precision", "dof"):
        v = getattr(args, f"fix_{name}")
        if v is not None:
            fixed[name] = v
    return fixed


def _marginal_row(m) -> list:
    return [m.mean, m.sd] + [m.quantiles[q] for q in sorted(m.quantiles)]


def _num(v) -> str:
    return repr(float(v)) if math.isfinite(v) else "nan"


def cmd_fit(args) -> int:
    try:
        groups, checksum = read_grouped_csv(args.input)
    except (InputError, OSError, UnicodeDecodeError) as exc:
        print(f"error: {args.input}: {exc}", file=sys.stderr)
        return EXIT_INPUT
    try:
        priors = PriorSpec(GammaPrior(*args.obs_prior), GammaPrior(*args.sys_prior),
                           DofPrior(args.df))
        settings = _settings_from_args(args)
    except (ModelError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    out = Path(args.outdir)
    out.mkdir(parents=True, exist_ok=True)

    results = {}
    for g in groups:
        try:
            spec = DlmSpec([TimeSeries(v) for v in g.values], args.family, priors,
                           _fixed_from_args(args))
            res = fit(spec, settings, workers=args.workers, epsilon=args.epsilon)
            with warnings.catch_warnings(record=True) as caught:
                warnings.simplefilter("always")
                sc = score(res, args.cpo_method)
            res.diagnostics["warnings"] += [str(c.message) for c in caught]
        except Exception as exc:
            print(f"error: fit failed for group {g.group_id!r}: {type(exc).__name__}: {exc}",
                  file=sys.stderr)
            trace = getattr(exc, "trace", None)
            if trace:
                print(f"diagnostics: {json.dumps(trace, default=str)}", file=sys.stderr)
            return EXIT_FIT
        log.info("group %s: %d grid points in %.2fs", g.group_id, len(res.grid),
                 res.diagnostics["wall_time"])
        results[g.group_id] = (g, res, sc)

    qcols = [f"q{q:g}" for q in sorted(next(iter(results.values()))[1].state_marginals[0].quantiles)]
    with open(out / "states.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["group_id", "time", "mean", "sd"] + qcols)
        for gid, (g, res, _) in results.items():
            for t, m in zip(g.times, res.state_marginals):
                w.writerow([gid, int(t)] + [_num(v) for v in _marginal_row(m)])
    with open(out / "hyper.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["group_id", "name", "series_id", "mean", "sd"] + qcols)
        for gid, (g, res, _) in results.items():
            for name, m in res.hyper_marginals.items():
                sid = ""
                if name.startswith("obs_precision"):
                    idx = int(name[name.index("[") + 1:-1]) if "[" in name else 0
                    sid = g.series_ids[idx]
                w.writerow([gid, name, sid] + [_num(v) for v in _marginal_row(m)])

    report = {"checksum": checksum, "family": args.family, "cpo_method": args.cpo_method,
              "groups": {}}
    for gid, (g, res, sc) in results.items():
        diag = {k: v for k, v in res.diagnostics.items() if k != "wall_time"}
        its = diag.pop("newton_iterations")
        diag["newton_iterations"] = {"max": max(its), "total": sum(its)}
        diag["masked"] = [{"series_id": g.series_ids[s], "time": int(g.times[t])}
                          for s, t in res.diagnostics["masked"]]
        mode = res.mode
        report["groups"][gid] = {
            "series_ids": g.series_ids,
            "dic": sc.dic, "p_d": sc.p_d, "neg_lpml": sc.neg_lpml,
            "cpo": [float(c) for c in sc.cpo], "flagged": list(sc.flagged),
            "mode": {"obs_precision": list(mode.obs_precision),
                     "sys_precision": mode.sys_precision, "dof": mode.dof},
            "diagnostics": diag,
        }
    (out / "scores.json").write_text(json.dumps(report, indent=2, sort_keys=True) + "\n")
    for gid, (_, _, sc) in results.items():
        print(f"group {gid}: DIC={sc.dic:.2f} p_D={sc.p_d:.2f} -LPML={sc.neg_lpml:.2f}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# compare


def _load_scores(path):
    try:
        data = json.loads(Path(path).read_text())
        groups = data["groups"]
        checksum = data["checksum"]
        scores = {gid: FitScores(float(g["dic"]), float(g.get("p_d", math.nan)),
                                 float(g["neg_lpml"]), np.asarray(g.get("cpo", []), dtype=float))
                  for gid, g in groups.items()}
    except (OSError, ValueError, KeyError, TypeError, AttributeError) as exc:
        raise InputError(f"{path}: not a score file ({exc})") from None
    return checksum, scores


def cmd_compare(args) -> int:
    try:
        ck_g, gauss = _load_scores(args.gaussian)
        ck_t, student = _load_scores(args.student)
    except InputError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    if ck_g != ck_t:
        print(f"error: checksum mismatch ({ck_g} vs {ck_t}); the fits used different data",
              file=sys.stderr)
        return EXIT_INPUT
    if set(gauss) != set(student):
        print("error: the score files cover different groups", file=sys.stderr)
        return EXIT_INPUT
    out = {}
    print(f"{'group':<12}{'RDIC':>12}{'lPsBF':>12}{'2PsBF':>12}{'RPsBF':>12}  evidence")
    for gid in sorted(gauss):
        c = compare(gauss[gid], student[gid])
        out[gid] = c.to_dict()
        print(f"{gid:<12}{c.rdic:>12.7f}{c.lpsbf:>12.4f}{c.two_lpsbf:>12.4f}"
              f"{c.rpsbf:>12.7f}  {c.evidence_label}")
    if args.json:
        Path(args.json).write_text(json.dumps({"checksum": ck_g, "groups": out},
                                              indent=2, sort_keys=True) + "\n")
    return EXIT_OK


# ---------------------------------------------------------------------------
# simulate

CONFIG_KEYS = {"seed", "replicates", "n_d", "p", "f", "obs_var", "sys_var", "full_grid",
               "priors", "grid", "workers"}
PRIOR_KEYS = {"obs_shape", "obs_rate", "sys_shape", "sys_rate", "df"}
GRID_KEYS = {"step", "drop"}


def _as_list(v):
    return list(v) if isinstance(v, list) else [v]


def load_study_config(path):
    """Read a TOML study description; returns ``(configs, priors, settings, workers)``."""
    try:
        with open(path, "rb") as fh:
            raw = tomllib.load(fh)
    except (OSError, tomllib.TOMLDecodeError) as exc:
        raise InputError(f"{path}: {exc}") from None
    unknown = set(raw) - CONFIG_KEYS
    if unknown:
        raise InputError(f"{path}: unknown key(s) {sorted(unknown)}")
    pr = raw.get("priors", {})
    gr = raw.get("grid", {})
    if not isinstance(pr, dict) or not isinstance(gr, dict):
        raise InputError(f"{path}: [priors] and [grid] must be tables")
    bad = (set(pr) - PRIOR_KEYS) | (set(gr) - GRID_KEYS)
    if bad:
        raise InputError(f"{path}: unknown key(s) {sorted(bad)}")
    try:
        if raw.get("full_grid", False):
            n_v, p_v, f_v = simlab.FULL_N, simlab.FULL_P, simlab.FULL_F
        else:
            n_v, p_v, f_v = simlab.DESK_N, simlab.DESK_P, simlab.DESK_F
        n_v = [int(x) for x in _as_list(raw.get("n_d", n_v))]
        p_v = [float(x) for x in _as_list(raw.get("p", p_v))]
        f_v = [float(x) for x in _as_list(raw.get("f", f_v))]
        configs = simlab.scenario_grid(
            n_v, p_v, f_v, replicates=int(raw.get("replicates", 100)),
            seed=int(raw.get("seed", simlab.ScenarioConfig.seed)),
            obs_var=float(raw.get("obs_var", 2.0)), sys_var=float(raw.get("sys_var", 2.0)))
        base = simlab.SIMULATION_PRIORS
        priors = PriorSpec(
            GammaPrior(float(pr.get("obs_shape", base.obs_precision.shape)),
                       float(pr.get("obs_rate", base.obs_precision.rate))),
            GammaPrior(float(pr.get("sys_shape", base.sys_precision.shape)),
                       float(pr.get("sys_rate", base.sys_precision.rate))),
            DofPrior(float(pr.get("df", base.dof.df))))
        settings = GridSettings(step=float(gr.get("step", GridSettings.step)),
                                drop=None if "drop" not in gr else float(gr["drop"]))
        workers = raw.get("workers")
        workers = None if workers is None else int(workers)
    except (TypeError, ValueError, ModelError, simlab.SimulationError) as exc:
        raise InputError(f"{path}: {exc}") from None
    if len({c.label for c in configs}) != len(configs):
        raise InputError(f"{path}: duplicate scenarios")
    return configs, priors, settings, workers


def cmd_simulate(args) -> int:
    try:
        configs, priors, settings, workers = load_study_config(args.config)
    except InputError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    if args.workers is not None:
        workers = args.workers
    out = Path(args.outdir)
    out.mkdir(parents=True, exist_ok=True)
    report = simlab.run_study(configs, priors, settings, workers=workers)
    simlab.write_records_csv(report, out / "records.csv")
    simlab.write_summary_csv(report, out / "summary.csv")
    simlab.write_json(report, out / "report.json")
    for stat in simlab.STATISTICS:
        with open(out / f"table_{stat}.csv", "w", newline="") as fh:
            csv.writer(fh, lineterminator="\n").writerows(simlab.figure_table(report, stat))
    for s in report.scenarios:
        print(f"{s.config.label}: {s.completed}/{s.config.replicates} done, "
              f"median E={s.median('efficiency'):.4f} RDIC={s.median('rdic'):.5f} "
              f"RPsBF={s.median('rpsbf'):.5f}")
    return EXIT_OK


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="robustdlm", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("fit", help="fit single or grouped series from a long-format CSV")
    p.add_argument("input", help="CSV with columns series_id,group_id,time,value")
    p.add_argument("--outdir", "-o", default=".", help="output directory")
    p.add_argument("--family", choices=FAMILIES, default="student_t",
                   help="system-noise family (default %(default)s)")
    p.add_argument("--obs-prior", nargs=2, type=float, metavar=("SHAPE", "RATE"),
                   default=GROUP_OBS_PRIOR, help="Gamma prior on each observation precision")
    p.add_argument("--sys-prior", nargs=2, type=float, metavar=("SHAPE", "RATE"),
                   default=GROUP_SYS_PRIOR, help="Gamma prior on the system precision")
    p.add_argument("--df", type=float, default=GROUP_DF,
                   help="prior probability of 2 < nu <= 10 (default %(default)s)")
    p.add_argument("--fix-obs-precision", type=float, default=None)
    p.add_argument("--fix-sys-precision", type=float, default=None)
    p.add_argument("--fix-dof", type=float, default=None)
    p.add_argument("--epsilon", type=float, default=EPSILON,
                   help="precision of the vague state prior (default %(default)s)")
    p.add_argument("--cpo-method", choices=("gauss-hermite", "exact"), default=CPO_METHOD)
    _add_grid_flags(p)
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("simulate", help="run a contamination study from a TOML config")
    p.add_argument("config")
    p.add_argument("--outdir", "-o", default=".")
    p.add_argument("--workers", type=int, default=None,
                   help=f"worker processes (default: config, then ${WORKERS_ENV}, then 1)")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("compare", help="compare a Gaussian and a Student-t score file")
    p.add_argument("gaussian", help="scores.json of the Gaussian fit")
    p.add_argument("student", help="scores.json of the Student-t fit")
    p.add_argument("--json", default=None, help="also write the comparison here")
    p.set_defaults(func=cmd_compare)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if not args.verbose:
        warnings.simplefilter("ignore", RuntimeWarning)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
