"""Command-line front end.

    cqiv fit        --data file.csv --y y --d d --w w1,w2 --z z1 --c-value 0 --quantiles 0.25,0.5
    cqiv bootstrap  ... --B 200 --seed 7
    cqiv diagnose   ... (or --design homoskedastic --replications 50)
    cqiv simulate   --design heteroskedastic --replications 100 --estimators cqiv-qr,tobit-cmle
    cqiv predict    --fit out/fit.json --d-grid 4:7:31 --w-values 1.0 --v-values 0.25,0.5,0.75

Every flag may also come from a JSON file passed with ``--config``; flags given
on the command line win.  Tables are CSV with ``#`` header lines naming the
schema version and master seed; floats are written with ``repr`` so they
round-trip exactly.

Exit codes: 0 success, 2 configuration error, 3 data error, 4 empty selection,
5 numerical failure.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import os
import sys
from dataclasses import asdict, dataclass, field, fields

import numpy as np
import scipy

from . import __version__
from .control import FirstStageSpec
from .data import Dataset, SecondStageSpec
from .errors import (ConfigError, CqivError, DataError, EmptySelection, NonFinite,
                     SpecMismatch, TooFewDraws)
from .estimator import CqivConfig, fit_cqiv, fit_step0, quantile_elasticity
from .inference import Elasticity, bootstrap_cqiv_path, percentile_ci
from .sim import ESTIMATORS, PAPER_QUANTILES, McDesign, generate_design, run_monte_carlo

log = logging.getLogger("cqiv")

SCHEMA_VERSION = 1
EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_EMPTY, EXIT_NUMERIC = 0, 2, 3, 4, 5

RESULT_COLUMNS = (
    "quantile", "item", "estimate", "ci_lower", "ci_upper", "selected_step",
    "k0", "varsigma1", "pct_J0", "pct_pred_above_C", "pct_J1", "pct_J0_in_J1",
    "count_J1_not_in_J0", "powell_step2", "powell_step3", "powell_later",
)
DIAGNOSTIC_COLUMNS = RESULT_COLUMNS[:1] + RESULT_COLUMNS[5:]
MC_COLUMNS = ("estimator", "quantile", "mean_bias", "rmse", "replication_count", "failure_count")


# ---------------------------------------------------------------------------
# configuration

@dataclass
class RunConfig:
    data: str | None = None
    design: str | None = None
    n: int = 1000
    rho0: float = 0.9
    y: str = "y"
    d: str = "d"
    w: list = field(default_factory=list)
    z: list = field(default_factory=list)
    c: str | None = None
    c_value: float | None = None
    quantiles: list = field(default_factory=lambda: [0.25, 0.5, 0.75])
    control: str = "qr"
    transform: str = "normal_quantile"
    d_powers: list = field(default_factory=lambda: [1])
    q0: float = 10.0
    q1: float = 3.0
    max_extra_iterations: int = 5
    selector_link: str = "probit"
    first_stage_link: str = "probit"
    grid_resolution: int | None = None
    censoring_correction: bool = True
    B: int = 200
    refit_selection: str = "refit_J1b"
    level: float = 0.95
    dump_draws: bool = False
    seed: int = 0
    n_jobs: int = 1
    replications: int = 1
    estimators: list = field(default_factory=lambda: list(ESTIMATORS))
    fit: str | None = None
    d_grid: list = field(default_factory=list)
    w_values: list = field(default_factory=list)
    v_values: list = field(default_factory=lambda: [0.25, 0.5, 0.75])
    out: str = "cqiv-out"

    def validate(self, command):
        for u in self.quantiles:
            if not 0.0 < u < 1.0:
                raise ConfigError(f"quantile {u} is outside (0, 1)")
        if command in ("fit", "bootstrap", "diagnose"):
            if (self.data is None) == (self.design is None):
                raise ConfigError("give exactly one of --data (a CSV file) or --design")
            if self.data is not None:
                roles = [self.y, self.d, *self.w, *self.z] + ([self.c] if self.c else [])
                dup = sorted({r for r in roles if roles.count(r) > 1})
                if dup:
                    raise ConfigError(f"columns assigned to more than one role: {', '.join(dup)}")
                if not self.z:
                    raise ConfigError("at least one excluded instrument (--z) is required")
                if (self.c is None) == (self.c_value is None):
                    raise ConfigError("give exactly one of --c (column) or --c-value (constant)")
        if self.control not in ("ols", "qr", "dr", "none"):
            raise ConfigError(f"unknown control method {self.control!r}")
        if self.B < 0:
            raise ConfigError("B must be nonnegative")
        if not 0.0 < self.level < 1.0:
            raise ConfigError("level must lie in (0, 1)")
        if command == "simulate":
            if self.replications < 0:
                raise ConfigError("replications must be nonnegative")
            bad = [e for e in self.estimators if e not in ESTIMATORS]
            if bad or not self.estimators:
                raise ConfigError(f"unknown estimators {bad}; choose from {', '.join(ESTIMATORS)}")
        if command == "predict":
            if self.fit is None:
                raise ConfigError("predict needs --fit pointing at a fit.json artifact")
            if not self.d_grid:
                raise ConfigError("predict needs --d-grid")
            for v in self.v_values:
                if not 0.0 < v < 1.0:
                    raise ConfigError(f"control value {v} is outside (0, 1)")
        try:
            self.cqiv_config()
        except ValueError as exc:
            raise ConfigError(str(exc)) from None

    def cqiv_config(self):
        return CqivConfig(
            u=self.quantiles[0] if self.quantiles else 0.5,
            control_method=None if self.control == "none" else self.control,
            censoring_correction=self.censoring_correction,
            second_stage=SecondStageSpec(d_powers=tuple(self.d_powers),
                                         control_transform=self.transform),
            first_stage=FirstStageSpec(grid_resolution=self.grid_resolution,
                                       link=self.first_stage_link),
            selector_link=self.selector_link,
            q0=self.q0, q1=self.q1, max_extra_iterations=self.max_extra_iterations,
        )


def _floats(text):
    if isinstance(text, list):
        return [float(x) for x in text]
    text = str(text).strip()
    if text.count(":") == 2:
        lo, hi, num = text.split(":")
        return [float(x) for x in np.linspace(float(lo), float(hi), int(num))]
    return [float(x) for x in text.split(",") if x.strip()]


def _names(text):
    if isinstance(text, list):
        return [str(x) for x in text]
    return [x.strip() for x in str(text).split(",") if x.strip()]


def _ints(text):
    return [int(x) for x in _floats(text)]


_LIST_PARSERS = {"w": _names, "z": _names, "estimators": _names, "quantiles": _floats,
                 "d_grid": _floats, "w_values": _floats, "v_values": _floats,
                 "d_powers": _ints}


def load_config(args) -> RunConfig:
    """Defaults, then the JSON file, then command-line flags."""
    known = {f.name for f in fields(RunConfig)}
    values = {}
    if args.config:
        try:
            with open(args.config, encoding="utf-8") as fh:
                raw = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config file {args.config}: {exc}") from None
        raw = dict(raw)
        raw.update(raw.pop("bootstrap", {}) or {})
        unknown = sorted(set(raw) - known)
        if unknown:
            raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
        values.update(raw)
    for name in known:
        val = getattr(args, name, None)
        if val is not None:
            values[name] = val
    try:
        for name, parse in _LIST_PARSERS.items():
            if name in values:
                values[name] = parse(values[name])
        return RunConfig(**values)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"malformed configuration value: {exc}") from None


# ---------------------------------------------------------------------------
# data files

def read_csv_data(path, cfg: RunConfig) -> Dataset:
    try:
        fh = open(path, newline="", encoding="utf-8")
    except OSError as exc:
        raise DataError(f"cannot open data file: {exc}") from None
    with fh:
        lines = (ln for ln in fh if not ln.startswith("#"))
        reader = csv.reader(lines)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise DataError(f"{path} is empty") from None
        rows = []
        for i, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(header):
                raise DataError(f"{path} row {i}: expected {len(header)} fields, found {len(row)}")
            rows.append((i, row))
    wanted = [cfg.y, cfg.d, *cfg.w, *cfg.z] + ([cfg.c] if cfg.c else [])
    missing = [c for c in wanted if c not in header]
    if missing:
        raise DataError(f"{path}: missing columns {', '.join(missing)} (have {', '.join(header)})")
    if not rows:
        raise DataError(f"{path} has no data rows")
    pos = {name: header.index(name) for name in wanted}
    cols = {name: np.empty(len(rows)) for name in wanted}
    for k, (i, row) in enumerate(rows):
        for name, j in pos.items():
            cell = row[j].strip()
            try:
                val = float(cell)
            except ValueError:
                raise DataError(f"{path} row {i}, column {name!r}: cannot parse {cell!r}") from None
            if not math.isfinite(val):
                raise DataError(f"{path} row {i}, column {name!r}: non-finite value {cell!r}")
            cols[name][k] = val
    n = len(rows)
    c = cols[cfg.c] if cfg.c else np.full(n, float(cfg.c_value))
    try:
        return Dataset(cols[cfg.y], cols[cfg.d],
                       np.column_stack([cols[nm] for nm in cfg.w]) if cfg.w else np.empty((n, 0)),
                       np.column_stack([cols[nm] for nm in cfg.z]),
                       c, tuple(cfg.w), tuple(cfg.z))
    except ValueError as exc:
        raise DataError(f"{path}: {exc}") from None


def load_dataset(cfg: RunConfig) -> Dataset:
    if cfg.data is not None:
        return read_csv_data(cfg.data, cfg)
    try:
        design = McDesign(variant=cfg.design, n=cfg.n, rho0=cfg.rho0)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    data, _ = generate_design(design, np.random.SeedSequence(cfg.seed))
    return data


def write_dataset_csv(path, data: Dataset):
    """Write a dataset (columns y, d, w..., z..., c) in the format read above."""
    header = ["y", "d", *data.w_names, *data.z_names, "c"]
    body = np.column_stack([data.y, data.d, data.w, data.z, data.c])
    with open(path, "w", newline="", encoding="utf-8") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(header)
        for row in body:
            wr.writerow([repr(float(x)) for x in row])


# ---------------------------------------------------------------------------
# result tables

def _cell(x):
    if x is None:
        return ""
    if isinstance(x, (float, np.floating)):
        return "" if math.isnan(x) else repr(float(x))
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return str(x)


def write_table(path, columns, rows, kind, seed):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        fh.write(f"# cqiv {kind} schema_version={SCHEMA_VERSION}\n")
        fh.write(f"# seed={seed}\n")
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(columns)
        for row in rows:
            wr.writerow([_cell(row.get(c)) for c in columns])


def _parse(cell):
    if cell == "":
        return math.nan
    try:
        return int(cell)
    except ValueError:
        pass
    try:
        return float(cell)
    except ValueError:
        return cell


def read_table(path):
    """Returns ``(meta, rows)``; numeric cells are parsed, blanks become NaN."""
    meta = {}
    with open(path, newline="", encoding="utf-8") as fh:
        body = []
        for ln in fh:
            if ln.startswith("#"):
                for tok in ln[1:].split():
                    if "=" in tok:
                        k, v = tok.split("=", 1)
                        meta[k] = v
            else:
                body.append(ln)
    reader = csv.DictReader(body)
    rows = [{k: (v if k in ("item", "estimator", "powell_later") else _parse(v))
             for k, v in r.items()} for r in reader]
    return meta, rows


def _diag_fields(fit):
    out = {"selected_step": fit.steps[fit.selected_step].step}
    dg = fit.diagnostics
    if dg is None:
        out["powell_step2"] = fit.powell
        return out
    out.update(k0=dg.k0, varsigma1=dg.varsigma1, pct_J0=dg.pct_J0,
               pct_pred_above_C=dg.pct_pred_above_C, pct_J1=dg.pct_J1,
               pct_J0_in_J1=dg.pct_J0_in_J1, count_J1_not_in_J0=dg.count_J1_not_in_J0)
    objs = dg.powell_objective
    out["powell_step2"] = objs[0]
    out["powell_step3"] = objs[1] if len(objs) > 1 else math.nan
    out["powell_later"] = ";".join(repr(float(x)) for x in objs[2:])
    return out


def _metadata(cfg: RunConfig, command, extra=None):
    meta = {
        "schema_version": SCHEMA_VERSION,
        "command": command,
        "seed": cfg.seed,
        "versions": {"cqiv": __version__, "numpy": np.__version__, "scipy": scipy.__version__},
        "config": asdict(cfg),
    }
    meta.update(extra or {})
    return meta


def _write_json(path, obj):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True, allow_nan=True)
        fh.write("\n")


# ---------------------------------------------------------------------------
# subcommands

def _point_fits(cfg: RunConfig, data):
    base = cfg.cqiv_config()
    cf = fit_step0(data, base)
    return base, [fit_cqiv(data, base.at(u), control=cf) for u in cfg.quantiles]


def _fit_artifact(cfg, base, data, fits):
    spec = base.second_stage
    return {
        "schema_version": SCHEMA_VERSION,
        "seed": cfg.seed,
        "control_method": base.control_method,
        "second_stage": {"d_powers": list(spec.d_powers), "include_w": spec.include_w,
                         "control_transform": spec.control_transform,
                         "intercept": spec.intercept},
        "w_names": list(data.w_names),
        "censoring_point": float(data.c[0]) if np.ptp(data.c) == 0 else None,
        "fits": [{"quantile": f.u, "names": f.names, "beta": [float(b) for b in f.beta],
                  "selected_step": f.steps[f.selected_step].step,
                  "diagnostics": None if f.diagnostics is None else asdict(f.diagnostics)}
                 for f in fits],
    }


def cmd_fit(cfg: RunConfig):
    data = load_dataset(cfg)
    base, fits = _point_fits(cfg, data)
    rows = []
    for f in fits:
        diag = _diag_fields(f)
        for name, b in zip(f.names, f.beta):
            rows.append(dict(quantile=f.u, item=name, estimate=float(b), **diag))
    os.makedirs(cfg.out, exist_ok=True)
    write_table(os.path.join(cfg.out, "results.csv"), RESULT_COLUMNS, rows, "result-table", cfg.seed)
    _write_json(os.path.join(cfg.out, "fit.json"), _fit_artifact(cfg, base, data, fits))
    _write_json(os.path.join(cfg.out, "run.json"), _metadata(cfg, "fit", {"n": data.n}))
    return rows


def cmd_bootstrap(cfg: RunConfig):
    data = load_dataset(cfg)
    base, fits = _point_fits(cfg, data)
    draws = {}
    if cfg.B == 0:
        log.warning("B=0: reporting point estimates without confidence intervals")
    else:
        draws = bootstrap_cqiv_path(data, base, cfg.quantiles, cfg.B,
                                    refit_selection=cfg.refit_selection, seed=cfg.seed,
                                    point_fits=fits, n_jobs=cfg.n_jobs)
    has_elasticity = {1, 2} <= set(base.second_stage.d_powers)
    os.makedirs(cfg.out, exist_ok=True)
    rows = []
    failures = {}
    for f in fits:
        diag = _diag_fields(f)
        bd = draws.get(f.u)
        items = [(name, k, float(b)) for k, (name, b) in enumerate(zip(f.names, f.beta))]
        if has_elasticity:
            items.append(("elasticity", Elasticity.of(data), quantile_elasticity(f, data)[0]))
        for name, functional, est in items:
            row = dict(quantile=f.u, item=name, estimate=est, **diag)
            if bd is not None:
                ci = percentile_ci(bd, functional, cfg.level)
                row.update(ci_lower=ci.lower, ci_upper=ci.upper)
            rows.append(row)
        if bd is not None:
            failures[repr(f.u)] = len(bd.failures)
            if cfg.dump_draws:
                drows = [dict(zip(["draw", *bd.names], [int(b), *beta]))
                         for b, beta in zip(bd.draw_index, bd.betas)]
                write_table(os.path.join(cfg.out, f"draws_u{f.u:g}.csv"),
                            ["draw", *bd.names], drows, "bootstrap-draws", cfg.seed)
    write_table(os.path.join(cfg.out, "results.csv"), RESULT_COLUMNS, rows, "result-table", cfg.seed)
    _write_json(os.path.join(cfg.out, "fit.json"), _fit_artifact(cfg, base, data, fits))
    _write_json(os.path.join(cfg.out, "run.json"),
                _metadata(cfg, "bootstrap", {"n": data.n, "failed_draws": failures}))
    return rows


def cmd_diagnose(cfg: RunConfig):
    """Per-quantile selector diagnostics; medians across replications when
    ``--design`` is combined with ``--replications`` > 1."""
    base = cfg.cqiv_config()
    if not base.censoring_correction:
        raise ConfigError("diagnostics need the censoring correction switched on")
    reps = cfg.replications if cfg.design is not None else 1
    per_u = {u: [] for u in cfg.quantiles}
    children = np.random.SeedSequence(cfg.seed).spawn(reps) if reps > 1 else [None]
    for child in children:
        if child is None:
            data = load_dataset(cfg)
        else:
            design = McDesign(variant=cfg.design, n=cfg.n, rho0=cfg.rho0)
            data, _ = generate_design(design, np.random.default_rng(child))
        cf = fit_step0(data, base)
        for u in cfg.quantiles:
            try:
                per_u[u].append(_diag_fields(fit_cqiv(data, base.at(u), control=cf)))
            except EmptySelection:
                if reps == 1:
                    raise
    rows = []
    for u, recs in per_u.items():
        row = {"quantile": u}
        if recs and reps > 1:
            for col in DIAGNOSTIC_COLUMNS[1:]:
                if col == "powell_later":
                    continue
                row[col] = float(np.nanmedian([r.get(col, math.nan) for r in recs]))
        elif recs:
            row.update(recs[0])
        rows.append(row)
    os.makedirs(cfg.out, exist_ok=True)
    write_table(os.path.join(cfg.out, "diagnostics.csv"), DIAGNOSTIC_COLUMNS, rows,
                "diagnostics", cfg.seed)
    _write_json(os.path.join(cfg.out, "run.json"),
                _metadata(cfg, "diagnose", {"replications": reps,
                                            "successes": {repr(u): len(r) for u, r in per_u.items()}}))
    return rows


def cmd_simulate(cfg: RunConfig):
    try:
        design = McDesign(variant=cfg.design or "homoskedastic", n=cfg.n, rho0=cfg.rho0)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    res = run_monte_carlo(design, cfg.estimators, cfg.quantiles, cfg.replications,
                          seed=cfg.seed, n_jobs=cfg.n_jobs)
    rows = res.summary()
    os.makedirs(cfg.out, exist_ok=True)
    write_table(os.path.join(cfg.out, "mc_summary.csv"), MC_COLUMNS, rows, "mc-summary", cfg.seed)
    for stat in ("mean_bias", "rmse"):
        series = []
        for u in res.quantiles:
            row = {"quantile": u}
            row.update({est: res.cell(est, u)[stat] for est in res.estimators})
            series.append(row)
        write_table(os.path.join(cfg.out, f"plot_{stat}.csv"), ["quantile", *res.estimators],
                    series, f"plot-data-{stat}", cfg.seed)
    _write_json(os.path.join(cfg.out, "run.json"),
                _metadata(cfg, "simulate", {"design": asdict(design)}))
    return rows


def cmd_predict(cfg: RunConfig):
    """Curves ``max(x(d, w, v)'b, c)`` over a d-grid for each fitted quantile and v."""
    try:
        with open(cfg.fit, encoding="utf-8") as fh:
            art = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read fit artifact {cfg.fit}: {exc}") from None
    spec = SecondStageSpec(**{k: tuple(v) if k == "d_powers" else v
                              for k, v in art["second_stage"].items()})
    n_w = len(art["w_names"])
    if spec.include_w and len(cfg.w_values) != n_w:
        raise SpecMismatch(f"fit has {n_w} W columns ({', '.join(art['w_names'])}); "
                           f"got {len(cfg.w_values)} --w-values")
    has_control = art["control_method"] is not None
    c = cfg.c_value if cfg.c_value is not None else art.get("censoring_point")
    c = -math.inf if c is None else float(c)
    d = np.asarray(cfg.d_grid, dtype=float)
    w = np.broadcast_to(np.asarray(cfg.w_values, dtype=float), (d.size, n_w))
    rows = []
    for entry in art["fits"]:
        beta = np.asarray(entry["beta"], dtype=float)
        for v in (cfg.v_values if has_control else [math.nan]):
            vt = None
            if has_control:
                vt = np.full(d.size, float(scipy.special.ndtri(v))
                             if spec.control_transform == "normal_quantile" else v)
            x = spec.build(d, w, vt)
            if x.shape[1] != beta.size:
                raise SpecMismatch("fit artifact coefficients do not match its regressor spec")
            pred = np.maximum(x @ beta, c)
            rows += [{"quantile": entry["quantile"], "v": v, "d": float(di), "prediction": float(p)}
                     for di, p in zip(d, pred)]
    os.makedirs(cfg.out, exist_ok=True)
    write_table(os.path.join(cfg.out, "curves.csv"), ["quantile", "v", "d", "prediction"], rows,
                "curves", art.get("seed", cfg.seed))
    return rows


COMMANDS = {"fit": cmd_fit, "bootstrap": cmd_bootstrap, "diagnose": cmd_diagnose,
            "simulate": cmd_simulate, "predict": cmd_predict}


# ---------------------------------------------------------------------------
# argument parsing

def _add_common(p):
    g = p.add_argument_group("run")
    g.add_argument("--config", help="JSON file supplying any of the flags below")
    g.add_argument("--out", help="output directory")
    g.add_argument("--seed", type=int, help="master seed recorded in every output file")
    g.add_argument("--quantiles", help="comma list, e.g. 0.25,0.5,0.75")
    g.add_argument("--n-jobs", dest="n_jobs", type=int)
    g.add_argument("-v", "--verbose", action="store_true")


def _add_data(p):
    g = p.add_argument_group("data")
    g.add_argument("--data", help="CSV file with a header row")
    g.add_argument("--design", choices=["homoskedastic", "heteroskedastic"],
                   help="generate a simulation sample instead of reading --data")
    g.add_argument("--n", type=int, help="sample size for --design")
    g.add_argument("--rho0", type=float)
    g.add_argument("--y")
    g.add_argument("--d")
    g.add_argument("--w", help="comma list of exogenous covariates")
    g.add_argument("--z", help="comma list of excluded instruments")
    g.add_argument("--c", help="column holding the censoring point")
    g.add_argument("--c-value", dest="c_value", type=float, help="constant censoring point")


def _add_model(p):
    g = p.add_argument_group("model")
    g.add_argument("--control", choices=["ols", "qr", "dr", "none"])
    g.add_argument("--transform", choices=["identity", "normal_quantile"])
    g.add_argument("--d-powers", dest="d_powers", help="powers of D, e.g. 1,2")
    g.add_argument("--q0", type=float)
    g.add_argument("--q1", type=float)
    g.add_argument("--max-extra-iterations", dest="max_extra_iterations", type=int)
    g.add_argument("--selector-link", dest="selector_link", choices=["probit", "logit"])
    g.add_argument("--first-stage-link", dest="first_stage_link", choices=["probit", "logit"])
    g.add_argument("--grid-resolution", dest="grid_resolution", type=int)
    g.add_argument("--no-censoring-correction", dest="censoring_correction",
                   action="store_const", const=False)


def build_parser():
    parser = argparse.ArgumentParser(prog="cqiv", description="Censored quantile IV estimation.")
    parser.add_argument("--version", action="version", version=f"cqiv {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in ("fit", "bootstrap", "diagnose"):
        p = sub.add_parser(name)
        _add_common(p)
        _add_data(p)
        _add_model(p)
        if name == "bootstrap":
            g = p.add_argument_group("bootstrap")
            g.add_argument("--B", type=int, help="number of weighted draws (default 200)")
            g.add_argument("--refit-selection", dest="refit_selection",
                           choices=["refit_J1b", "fixed_J1"])
            g.add_argument("--level", type=float)
            g.add_argument("--dump-draws", dest="dump_draws", action="store_const", const=True)
        if name == "diagnose":
            p.add_argument("--replications", type=int)
    p = sub.add_parser("simulate")
    _add_common(p)
    p.add_argument("--design", choices=["homoskedastic", "heteroskedastic"])
    p.add_argument("--n", type=int)
    p.add_argument("--rho0", type=float)
    p.add_argument("--replications", type=int)
    p.add_argument("--estimators", help=f"comma list from {', '.join(ESTIMATORS)}")
    p = sub.add_parser("predict")
    _add_common(p)
    p.add_argument("--fit", help="fit.json written by fit or bootstrap")
    p.add_argument("--d-grid", dest="d_grid", help="lo:hi:num or comma list")
    p.add_argument("--w-values", dest="w_values", help="comma list, one per W column")
    p.add_argument("--v-values", dest="v_values", help="control-variable levels in (0, 1)")
    p.add_argument("--c-value", dest="c_value", type=float)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="cqiv: %(levelname)s: %(message)s")
    try:
        cfg = load_config(args)
        if args.command == "simulate" and cfg.quantiles == RunConfig().quantiles \
                and args.quantiles is None:
            cfg.quantiles = list(PAPER_QUANTILES)
        cfg.validate(args.command)
        COMMANDS[args.command](cfg)
    except (ConfigError, SpecMismatch) as exc:
        print(f"cqiv: configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DataError, NonFinite) as exc:
        print(f"cqiv: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except EmptySelection as exc:
        print(f"cqiv: empty selection: {exc}", file=sys.stderr)
        return EXIT_EMPTY
    except (TooFewDraws, CqivError, np.linalg.LinAlgError) as exc:
        print(f"cqiv: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
