"""Command-line front end: ingest, fit, simulate, eval, diagnose, compare.

Exit codes: 0 success, 2 configuration error, 3 data error, 4 optimizer
failure.
"""
from __future__ import annotations

import argparse
import csv
import hashlib
import json
import os
import sys
from pathlib import Path
from typing import Optional

import numpy as np

from . import __version__
from .background import standardize_covariate
from .domain import (CovariateField, EventCatalog, Projection, SpatialWindow, build_quadrature)
from .errors import ConfigError, DataError, DomainError, OptimizerError, SimulationError
from .estimation import FitOptions, FitResult, compare_models, fit
from .diagnostics import daily_counts, lag_summary, pair_lag_histogram, write_matrix_csv
from .io import (format_time, load_config, parse_date, days_between, read_covariate_csv,
                 read_events_csv, read_window_ring, write_events_csv)
from .likelihood import expected_counts, expected_daily_series, holdout_log_likelihood
from .model import get_preset, template_from_dict
from .simulation import SimConfig, simulate

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_OPTIMIZER = 0, 2, 3, 4


class Run:
    """Resolved configuration plus command-line overrides."""

    def __init__(self, args):
        self.args = args
        self.path = Path(args.config).resolve() if getattr(args, "config", None) else None
        if self.path is not None:
            self.cfg = load_config(self.path)
            self.base = self.path.parent
            self.hash = hashlib.sha256(self.path.read_bytes()).hexdigest()[:16]
        else:
            self.cfg, self.base, self.hash = {}, Path.cwd(), "none"
        out = args.out or self.section("output").get("dir", "out")
        self.out = self.resolve(out)
        self.out.mkdir(parents=True, exist_ok=True)

    def section(self, name) -> dict:
        sec = self.cfg.get(name, {})
        if not isinstance(sec, dict):
            raise ConfigError(f"[{name}] must be a table")
        return sec

    def resolve(self, p) -> Path:
        p = Path(p)
        return p if p.is_absolute() else (self.base / p)

    def seed(self, section: str, default: int = 0) -> int:
        if self.args.seed is not None:
            return int(self.args.seed)
        return int(self.section(section).get("seed", default))

    def meta(self, seed) -> dict:
        return {"tool": "sthawkes", "version": __version__, "config_hash": self.hash,
                "seed": seed}

    def header_lines(self, seed):
        return [f"sthawkes {__version__} config_hash={self.hash} seed={seed}"]

    def write_json(self, name, obj, seed):
        data = {"meta": self.meta(seed)}
        data.update(obj)
        with open(self.out / name, "w") as fh:
            json.dump(data, fh, indent=2, sort_keys=True, default=_json_default)
            fh.write("\n")

    def grid_sizes(self):
        g = self.section("grid")
        n_s = self.args.grid_ns if getattr(self.args, "grid_ns", None) else g.get("n_s", 2800)
        n_t = self.args.grid_nt if getattr(self.args, "grid_nt", None) else g.get("n_t", 500)
        return int(n_s), int(n_t), int(g.get("n_lag", 24))

    def template(self):
        m = self.section("model")
        preset = getattr(self.args, "preset", None) or m.get("preset")
        if preset:
            return get_preset(preset)
        if "custom" in m:
            return template_from_dict(m["custom"])
        raise ConfigError("[model] needs 'preset' or a [model.custom] table (or pass --preset)")


def _json_default(o):
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, (np.integer,)):
        return int(o)
    if isinstance(o, (np.floating,)):
        return float(o)
    raise TypeError(f"not JSON serializable: {type(o)}")


# shared loading ----------------------------------------------------------------

def load_catalog(run: Run, seed: int):
    d = run.section("data")
    if "events" not in d:
        raise ConfigError("[data] events path is required")
    path = run.resolve(d["events"])
    if not path.exists():
        raise ConfigError(f"events file not found: {path}")
    ring = read_window_ring(run.resolve(d["window"])) if d.get("window") else None
    spec_max = run.args.specificity_max if getattr(run.args, "specificity_max", None) is not None \
        else d.get("specificity_max")
    skip = bool(getattr(run.args, "skip_bad_rows", False) or d.get("skip_bad_rows", False))
    jit = run.section("jitter")
    return read_events_csv(path, epoch=d.get("epoch"), end=d.get("end"), groups=d.get("groups"),
                           specificity_max=spec_max, skip_bad_rows=skip, window_ring=ring,
                           jitter_sd=float(jit.get("sd", 0.01)), seed=int(jit.get("seed", seed)))


def load_covariate(run: Run, catalog: EventCatalog, epoch: str):
    d = run.section("data")
    if not d.get("covariate"):
        return None
    path = run.resolve(d["covariate"])
    if not path.exists():
        raise ConfigError(f"covariate file not found: {path}")
    raw = read_covariate_csv(path, epoch)
    mode = run.section("model").get("standardize", "log_max")
    return standardize_covariate(raw, mode).bind(catalog.projection)


def _split(catalog: EventCatalog, epoch: str, when: Optional[str]):
    if not when:
        return catalog, None
    t_split = days_between(parse_date(epoch), parse_date(when))
    if not catalog.t_start < t_split < catalog.t_end:
        raise ConfigError("split date must fall inside the observation period")
    return catalog.time_slice(catalog.t_start, t_split), catalog.time_slice(t_split, catalog.t_end)


# commands ------------------------------------------------------------------------

def cmd_ingest(run: Run) -> int:
    seed = run.seed("jitter")
    cat, report = load_catalog(run, seed)
    write_events_csv(run.out / "events.csv", cat, report.epoch, run.header_lines(seed))
    body = report.to_dict()
    body["reasons"] = report.reasons()
    body["counts"] = {name: int(c) for name, c in zip(cat.mark_names, cat.counts())}
    run.write_json("ingest_report.json", body, seed)
    print(f"ingested {len(cat)} events ({len(report.dropped)} dropped, "
          f"{report.n_jittered} jittered)")
    return EXIT_OK


def _fit_options(run: Run, seed: int) -> FitOptions:
    o = dict(run.section("optimizer"))
    o.pop("seed", None)
    known = set(FitOptions.__dataclass_fields__)
    unknown = set(o) - known
    if unknown:
        raise ConfigError(f"unknown [optimizer] keys: {sorted(unknown)}")
    return FitOptions(seed=seed, **o)


def cmd_fit(run: Run) -> int:
    seed = run.seed("optimizer")
    cat, report = load_catalog(run, run.seed("jitter"))
    train_end = run.section("fit").get("train_end")
    train, _ = _split(cat, report.epoch, train_end)
    tpl = run.template()
    n_s, n_t, n_lag = run.grid_sizes()
    grid = build_quadrature(train.window, train.T, n_s, n_t, train.t_start, n_lag)
    cov = load_covariate(run, train, report.epoch) if tpl.uses_covariate else None
    res = fit(tpl, train, grid, _fit_options(run, seed), covariate=cov)
    body = res.to_dict()
    body["epoch"] = report.epoch
    run.write_json("fit.json", body, seed)
    with open(run.out / "table.csv", "w", newline="") as fh:
        for line in run.header_lines(seed):
            fh.write(f"# {line}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["parameter", "estimate", "se"])
        for name, est, se in res.table_rows():
            w.writerow([name, f"{est:.6g}", "" if se is None else f"{se:.3g}"])
        for key in ("loglik", "k", "n", "aic", "bic", "hq"):
            w.writerow([key, getattr(res, key), ""])
    print(f"{res.model_name}: loglik {res.loglik:.2f}, k={res.k}, AIC {res.aic:.2f}"
          + ("" if res.converged else " (not converged)"))
    return EXIT_OK


def cmd_simulate(run: Run) -> int:
    seed = run.seed("simulate")
    s = run.section("simulate")
    tpl = run.template()
    params = s.get("params")
    if not isinstance(params, dict):
        raise ConfigError("[simulate.params] must give every model parameter")
    missing = [n for n in tpl.natural_names if n not in params]
    if missing:
        raise ConfigError(f"[simulate.params] missing {missing}")
    try:
        T = float(s["T"])
        center = s.get("center", [0.0, 0.0])
        proj = Projection(float(center[0]), float(center[1]))
        w, h = s.get("window_km", [100.0, 100.0])
        window = SpatialWindow.from_bbox(-w / 2, w / 2, -h / 2, h / 2)
    except (KeyError, TypeError, ValueError, DomainError) as exc:
        raise ConfigError(f"[simulate] {exc}") from exc
    epoch = s.get("epoch", "2000-01-01")
    groups = tuple(s.get("groups", [str(k) for k in range(tpl.n_marks)]))
    cov = None
    if tpl.uses_covariate:
        probe = EventCatalog.from_arrays([], [], [], [], tpl.n_marks, T, window, projection=proj)
        cov = load_covariate(run, probe, epoch)
        if cov is None:
            raise ConfigError("model needs [data] covariate")
    try:
        model = tpl.build({k: float(v) for k, v in params.items()}, cov, T, 0.0)
        cfg = SimConfig(model, window, T, seed=seed, method=s.get("method", "branching"),
                        edge=s.get("edge", "clip"), projection=proj, covariate=cov,
                        mark_names=groups)
        if model.needs_covariate and cfg.method == "branching":
            cfg.method = "thinning"
        cat = simulate(cfg)
    except (DomainError, SimulationError) as exc:
        raise ConfigError(f"cannot simulate: {exc}") from exc
    write_events_csv(run.out / "events.csv", cat, epoch, run.header_lines(seed))
    xs = np.array([window.bounds[0], window.bounds[2], window.bounds[2], window.bounds[0]])
    ys = np.array([window.bounds[1], window.bounds[1], window.bounds[3], window.bounds[3]])
    lon, lat = proj.inverse(xs, ys)
    with open(run.out / "window.txt", "w") as fh:
        fh.write(f"# {run.header_lines(seed)[0]}\n")
        for a, b in zip(lon, lat):
            fh.write(f"{float(a)!r} {float(b)!r}\n")
    end = format_time(parse_date(epoch), cat.T)
    run.write_json("simulation.json", {"model": tpl.name, "params": params, "T": cat.T,
                                       "epoch": epoch, "end": end, "n_events": len(cat),
                                       "counts": cat.counts(), "method": cfg.method,
                                       "edge": cfg.edge}, seed)
    print(f"simulated {len(cat)} events")
    return EXIT_OK


def _load_fit(path) -> FitResult:
    try:
        with open(path) as fh:
            d = json.load(fh)
    except FileNotFoundError as exc:
        raise ConfigError(f"fit file not found: {path}") from exc
    except json.JSONDecodeError as exc:
        raise DataError(f"{path}: invalid JSON ({exc})") from exc
    d.pop("meta", None)
    d.pop("epoch", None)
    try:
        return FitResult.from_dict(d)
    except TypeError as exc:
        raise DataError(f"{path}: not a fit result ({exc})") from exc


def cmd_eval(run: Run) -> int:
    seed = run.seed("eval")
    e = run.section("eval")
    fit_path = getattr(run.args, "fit", None) or e.get("fit")
    if not fit_path:
        raise ConfigError("[eval] fit path (or --fit) is required")
    res = _load_fit(run.resolve(fit_path))
    cat, report = load_catalog(run, run.seed("jitter"))
    if not e.get("split"):
        raise ConfigError("[eval] split date is required")
    train, test = _split(cat, report.epoch, e["split"])
    n_s, n_t, n_lag = run.grid_sizes()
    n_t_test = int(e.get("n_t", max(1, round(n_t * test.T / cat.T))))
    grid_test = build_quadrature(test.window, test.T, n_s, n_t_test, test.t_start, n_lag)
    tpl = res.template or get_preset(res.model_name)
    cov = load_covariate(run, cat, report.epoch) if tpl.uses_covariate else None
    model = res.model(cov)
    if tpl.n_marks == 1 and train.n_marks > 1:
        train, test = train.merged(), test.merged()
    cond = bool(e.get("condition_on_history", True))
    ll = holdout_log_likelihood(train, test, model, grid_test, condition_on_history=cond)
    grid_train = build_quadrature(train.window, train.T, n_s, n_t, train.t_start, n_lag)
    ec = expected_counts(model, train, grid_train)
    series = expected_daily_series(model, train, grid_train)
    run.write_json("eval.json", {"model": res.model_name, "holdout_loglik": ll,
                                 "n_test": len(test), "T_test": test.T,
                                 "condition_on_history": cond,
                                 "expected_counts_train": ec.to_dict(),
                                 "observed_counts_train": train.counts()}, seed)
    k = model.n_marks
    names = train.mark_names
    cols = []
    for m in range(k):
        cols += [series.background[m], series.marginal[m], series.cross[m]]
    hdr = {"kind": "expected_daily_series", "model": res.model_name,
           "columns": ["day"] + [f"{names[m]}_{c}" for m in range(k)
                                 for c in ("background", "marginal", "cross")]}
    mat = np.column_stack([np.arange(series.background.shape[1])] + cols)
    write_matrix_csv(run.out / "expected_daily.csv", mat, {**hdr, **run.meta(seed)}, fmt="%.10g")
    print(f"holdout loglik {ll:.4f} over {len(test)} events")
    return EXIT_OK


def cmd_diagnose(run: Run) -> int:
    seed = run.seed("jitter")
    cat, _ = load_catalog(run, seed)
    d = run.section("diagnose")
    max_dt = float(d.get("max_dt", 400.0))
    max_ds = float(d.get("max_ds", 1000.0))
    bins = tuple(d.get("bins", [80, 80]))
    summary = {"histograms": [], "lag_summaries": [], "daily": []}
    names = cat.mark_names
    for a in range(cat.n_marks):
        for b in range(cat.n_marks):
            h = pair_lag_histogram(cat, a, b, max_dt, max_ds, bins)
            stem = f"lag_hist_{names[a]}_{names[b]}"
            head = {**h.header(), **run.meta(seed), "mark_from_name": names[a],
                    "mark_to_name": names[b]}
            write_matrix_csv(run.out / f"{stem}.csv", h.counts, {**head, "values": "raw counts"})
            write_matrix_csv(run.out / f"{stem}_normalized.csv", h.normalized,
                             {**head, "values": "counts / total"}, fmt="%.10g")
            summary["histograms"].append({"file": f"{stem}.csv", "total": h.total,
                                          "spatial_mode_km": h.spatial_mode()[1]})
            if a != b and cat.counts()[a] and cat.counts()[b]:
                try:
                    ls = lag_summary(cat, a, b, d.get("lag_max_dt"), d.get("lag_max_ds"))
                    summary["lag_summaries"].append({"from": names[a], "to": names[b],
                                                     **ls.to_dict()})
                except DomainError as exc:
                    summary["lag_summaries"].append({"from": names[a], "to": names[b],
                                                     "error": str(exc)})
    series = []
    for m in range(cat.n_marks):
        dc = daily_counts(cat, m)
        series.append(dc.counts)
        summary["daily"].append({"mark": names[m], "total": int(dc.counts.sum()),
                                 "outlier_day": dc.outlier_day,
                                 "outlier_ratio": dc.outlier_ratio})
    mat = np.column_stack([np.arange(len(series[0]))] + series) if series else np.zeros((0, 1))
    write_matrix_csv(run.out / "daily_counts.csv", mat,
                     {"kind": "daily_counts", "columns": ["day"] + list(names), **run.meta(seed)})
    run.write_json("diagnostics.json", summary, seed)
    print(f"wrote diagnostics for {cat.n_marks} mark(s)")
    return EXIT_OK


def cmd_compare(run: Run) -> int:
    fits = [_load_fit(Path(p)) for p in run.args.fits]
    if not fits:
        raise ConfigError("compare needs at least one fit.json")
    try:
        rows = compare_models(fits)
    except DomainError as exc:
        raise DataError(str(exc)) from exc
    with open(run.out / "comparison.csv", "w", newline="") as fh:
        fh.write(f"# {run.header_lines(None)[0]}\n")
        cols = ["rank", "model", "loglik", "k", "n", "aic", "bic", "hq",
                "best_aic", "best_bic", "best_hq"]
        w = csv.DictWriter(fh, fieldnames=cols, lineterminator="\n", extrasaction="ignore")
        w.writeheader()
        for r in rows:
            w.writerow(r)
    for r in rows:
        print(f"{r['rank']:>2} {r['model']:<14} AIC {r['aic']:.2f}")
    return EXIT_OK


COMMANDS = {"ingest": cmd_ingest, "fit": cmd_fit, "simulate": cmd_simulate,
            "eval": cmd_eval, "diagnose": cmd_diagnose, "compare": cmd_compare}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="sthawkes", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        sp = sub.add_parser(name)
        sp.add_argument("--config", required=name != "compare")
        sp.add_argument("--seed", type=int)
        sp.add_argument("--out")
        if name in ("fit", "simulate"):
            sp.add_argument("--preset")
        if name in ("fit", "eval"):
            sp.add_argument("--grid-ns", type=int, dest="grid_ns")
            sp.add_argument("--grid-nt", type=int, dest="grid_nt")
        if name in ("ingest", "fit", "eval", "diagnose"):
            sp.add_argument("--specificity-max", type=int, dest="specificity_max")
            sp.add_argument("--skip-bad-rows", action="store_true", dest="skip_bad_rows")
        if name == "eval":
            sp.add_argument("--fit")
        if name == "compare":
            sp.add_argument("fits", nargs="+")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        run = Run(args)
        return COMMANDS[args.command](run)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DataError, DomainError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except OptimizerError as exc:
        print(f"optimizer failure: {exc}", file=sys.stderr)
        if exc.trace:
            print(json.dumps(exc.trace, default=_json_default), file=sys.stderr)
        return EXIT_OPTIMIZER


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
