"""End-to-end experiments: geometry and dynamics pipelines plus comparison.

A configuration is a YAML mapping (see :class:`ExperimentConfig`).  For every
seed the geometric pipeline (branch points, descending Stokes lines, actions,
sequence verdicts) predicts ``lambda_theory`` for each ordered level pair and
the dynamical pipeline (propagation over the epsilon list, extrapolation)
measures ``lambda_empirical``.  All tables are plain CSV; the run manifest
echoes the configuration with versions and timings.
"""

from __future__ import annotations

import csv
import logging
import os
import platform
import time
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import yaml

from . import __version__
from .actions import ActionTable
from .branchpoints import find_branch_points, write_branch_table
from .errors import (
    ConfigurationError,
    DependencyError,
    InsufficientDataError,
    NonadiabaticError,
)
from .model import make_model
from .propagator import sweep, write_estimates, write_limits
from .renorm import divergence_profile, write_profiles
from .sequencer import predict, upper_key, write_sequence_table
from .spectral import write_level_curves
from .stokes import descending_stokes_line, write_polylines

log = logging.getLogger(__name__)

SCHEMA_VERSION = 1
ENV_OUT = "NONADIABATIC_OUT"
ENV_WORKERS = "NONADIABATIC_WORKERS"
DEFAULT_EPSILONS = (0.2, 0.1, 0.05, 0.02, 0.01)
STAGES = ("branchpoints", "stokes", "sequences", "propagate", "run")

# exclusion reason codes
NO_PREDICTION = "no_prediction"
FLAGGED = "flagged"
MODULE_ERROR = "module_error"
SEED_FAILED = "seed_failed"


@dataclass
class ExperimentConfig:
    """Validated experiment settings.

    ``model`` holds ``kind`` plus the model parameters (``dim``, ``alpha``,
    ``seeds`` for GOE; ``delta``, ``slope`` for Landau-Zener).  ``scan`` holds
    the branch-point search ``region``, ``nx`` and ``ny``.  ``tolerances``
    overrides module defaults by keyword (``cut_angle``, ``degree``,
    ``n_fit``, ``contour``, ``eps_scan``).
    """

    model: dict
    epsilons: tuple = DEFAULT_EPSILONS
    window: tuple = (-25.0, 25.0)
    scan: dict = field(default_factory=lambda: {"region": [-6.0, 6.0, 0.0, 2.0],
                                                "nx": 241, "ny": 41})
    tolerances: dict = field(default_factory=dict)
    output: str = "results"
    report: dict = field(default_factory=lambda: {"figures": True})
    renorm: dict = field(default_factory=dict)
    workers: int = 1
    version: int = SCHEMA_VERSION

    @property
    def kind(self):
        return self.model["kind"]

    @property
    def seeds(self):
        if self.kind != "goe_interp":
            return [None]
        return list(self.model["seeds"])

    def model_for(self, seed):
        params = {k: v for k, v in self.model.items() if k not in ("kind", "seeds")}
        if seed is not None:
            params["seed"] = seed
        return make_model(self.kind, **params)

    @classmethod
    def from_dict(cls, data):
        data = dict(data or {})
        if "model" not in data or "kind" not in data["model"]:
            raise ConfigurationError("model.kind")
        model = dict(data["model"])
        if model["kind"] == "goe_interp":
            if "seed_range" in model:
                model["seeds"] = parse_seed_range(model.pop("seed_range"))
            if "seed" in model:
                model["seeds"] = [model.pop("seed")]
            seeds = model.get("seeds")
            if not seeds:
                raise ConfigurationError("model.seeds", "seed list must be non-empty")
            model["seeds"] = [int(s) for s in seeds]
            model.setdefault("dim", 6)
            model.setdefault("alpha", 2.0)
        eps = tuple(float(e) for e in data.get("epsilons", DEFAULT_EPSILONS))
        if not eps or any(e <= 0 for e in eps):
            raise ConfigurationError("epsilons", "epsilon values must be positive")
        if any(b >= a for a, b in zip(eps[:-1], eps[1:])):
            raise ConfigurationError("epsilons", "epsilon values must be strictly descending")
        window = tuple(float(t) for t in data.get("window", (-25.0, 25.0)))
        if len(window) != 2 or window[0] >= window[1]:
            raise ConfigurationError("window")
        scan = {"region": [-6.0, 6.0, 0.0, 2.0], "nx": 241, "ny": 41}
        scan.update(data.get("scan") or {})
        region = [float(x) for x in scan["region"]]
        if len(region) != 4 or region[0] >= region[1] or region[2] >= region[3]:
            raise ConfigurationError("scan.region")
        scan["region"] = region
        cfg = cls(model=model, epsilons=eps, window=window, scan=scan,
                  tolerances=dict(data.get("tolerances") or {}),
                  output=str(data.get("output", "results")),
                  report={"figures": True, **(data.get("report") or {})},
                  renorm=dict(data.get("renorm") or {}),
                  workers=int(data.get("workers", 1)),
                  version=int(data.get("version", SCHEMA_VERSION)))
        if cfg.version != SCHEMA_VERSION:
            raise ConfigurationError("version", f"unsupported config version {cfg.version}")
        # builds the first model so bad parameters fail before any work
        m = cfg.model_for(cfg.seeds[0])
        if m.has_poles:
            limit = abs(m.alpha) * np.pi / 2 - m.guard_radius
            if region[3] > limit:
                raise ConfigurationError(
                    "scan.region", f"Im tau up to {region[3]} crosses the analyticity guard "
                    f"at {limit:.6g}")
        return cfg

    def to_dict(self):
        d = asdict(self)
        d["epsilons"] = list(self.epsilons)
        d["window"] = list(self.window)
        return d


def parse_seed_range(text):
    """``"a..b"`` -> ``[a, ..., b]`` (inclusive)."""
    try:
        a, b = str(text).split("..")
        lo, hi = int(a), int(b)
    except ValueError as exc:
        raise ConfigurationError("seed_range", f"expected 'a..b', got {text!r}") from exc
    if hi < lo:
        raise ConfigurationError("seed_range", f"empty seed range {text!r}")
    return list(range(lo, hi + 1))


def load_config(path, overrides=None):
    """Read a YAML config, apply `overrides` and environment variables."""
    with open(path) as fh:
        data = yaml.safe_load(fh) or {}
    data.update({k: v for k, v in (overrides or {}).items() if v is not None})
    if os.environ.get(ENV_OUT):
        data["output"] = os.environ[ENV_OUT]
    if os.environ.get(ENV_WORKERS):
        data["workers"] = int(os.environ[ENV_WORKERS])
    return ExperimentConfig.from_dict(data)


# ---------------------------------------------------------------------------
# per-seed pipeline

@dataclass
class ComparisonRow:
    seed: int | None
    n: int
    m: int
    lambda_theory: float | None
    chain: str
    lambda_empirical: float | None
    fractional_difference: float | None
    method: str
    rules_agree: bool
    excluded: str = ""

    @property
    def compared(self):
        return not self.excluded


@dataclass
class ComparisonReport:
    """Per-pair comparison rows and their aggregate.

    The aggregate is the mean fractional difference over rows that have a
    prediction, an unflagged extrapolation and no module error.
    """

    rows: list
    failed_seeds: dict = field(default_factory=dict)

    @property
    def compared(self):
        return [r for r in self.rows if r.compared]

    @property
    def mean_fractional_difference(self):
        vals = [r.fractional_difference for r in self.compared]
        return float(np.mean(vals)) if vals else float("nan")

    def count(self, reason):
        return sum(1 for r in self.rows if r.excluded.split(":")[0] == reason)

    @property
    def n_no_prediction(self):
        return self.count(NO_PREDICTION)

    @property
    def n_flagged(self):
        return self.count(FLAGGED)

    @property
    def n_errors(self):
        return self.count(MODULE_ERROR) + len(self.failed_seeds)

    def summary(self):
        return {"rows_total": len(self.rows), "rows_compared": len(self.compared),
                "rows_excluded": len(self.rows) - len(self.compared),
                "no_prediction": self.n_no_prediction, "flagged": self.n_flagged,
                "module_errors": self.count(MODULE_ERROR),
                "failed_seeds": len(self.failed_seeds),
                "mean_fractional_difference": self.mean_fractional_difference}


def seed_dir(root, seed):
    return Path(root) / ("landau_zener" if seed is None else f"seed_{seed:04d}")


def geometry(model, config, out=None, stop="sequences"):
    """Branch points, descending Stokes lines, actions and predictions.

    Writes the intermediate tables into `out` when given.  `stop` ends the
    pipeline early after ``"branchpoints"`` or ``"stokes"``.
    """
    tol = config.tolerances
    cut = float(tol.get("cut_angle", 0.0))
    sc = config.scan
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        points, discarded = find_branch_points(model, tuple(sc["region"]), int(sc["nx"]),
                                               int(sc["ny"]), cut_angle=cut)
    if discarded:
        log.info("%d scan candidates discarded", len(discarded))
    ActionTable.compute(model, points, cut_angle=cut)
    points = sorted(points, key=lambda p: (p.levels, p.tau.real, p.tau.imag))
    result = {"points": points}
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        write_branch_table(out / "branch_points.csv", points)
        taus = np.linspace(*config.window, 1001)
        write_level_curves(out / "level_curves.csv", model, taus)
    if stop == "branchpoints":
        return result
    lines = {}
    for p in points:
        if p.tau.imag > 0:
            lines[upper_key(p)] = descending_stokes_line(model, p)
    result["stokes"] = lines
    if out is not None:
        ordered = [lines[k] for k in sorted(lines)]
        write_polylines(out / "stokes_polylines.csv", out / "stokes_index.csv", ordered)
    if stop == "stokes":
        return result
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        preds = predict(points, model.dim, lines, cut)
    result["predictions"] = preds
    if out is not None:
        write_sequence_table(out / "sequences.csv", preds)
    return result


def dynamics(model, config, out=None):
    """Epsilon sweep and extrapolated ``lambda_empirical`` for all pairs."""
    tol = config.tolerances
    est, limits = sweep(model, config.epsilons, degree=int(tol.get("degree", 2)),
                        contour=bool(tol.get("contour", True)), tau_i=config.window[0],
                        tau_f=config.window[1], eps_scan=float(tol.get("eps_scan", 0.5)),
                        n_fit=tol.get("n_fit"))
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        write_estimates(out / "empirical.csv", est)
        write_limits(out / "extrapolation.csv", limits)
    return est, limits


def compare(seed, predictions, limits, dim):
    """Comparison rows for every ordered pair of one seed."""
    rows = []
    for n in range(dim):
        for m in range(dim):
            if n == m:
                continue
            pred = predictions.get((n, m))
            lim = limits.get((n, m))
            theory = None if pred is None else pred.action
            chain = "" if pred is None or pred.minimal is None else pred.minimal.describe()
            agree = True if pred is None else pred.rules_agree
            emp, method, reason = None, "", ""
            if isinstance(lim, InsufficientDataError):
                reason = f"{FLAGGED}:all epsilon values flagged"
                method = "insufficient-data"
            elif isinstance(lim, Exception):
                reason = f"{MODULE_ERROR}:{type(lim).__name__}"
            elif lim is not None:
                emp, method = lim.value, lim.method
            if theory is None and not reason:
                reason = f"{NO_PREDICTION}:no allowed sequence"
            frac = None
            if theory is not None and emp is not None:
                frac = abs(theory - emp) / theory
            rows.append(ComparisonRow(seed, n, m, theory, chain, emp, frac, method, agree,
                                      reason))
    return rows


def run_seed(config, seed, out_root=None):
    """Full pipeline for one seed; returns ``(rows, timings)``."""
    out = None if out_root is None else seed_dir(out_root, seed)
    t0 = time.perf_counter()
    model = config.model_for(seed)
    geo = geometry(model, config, out)
    t1 = time.perf_counter()
    try:
        _, limits = dynamics(model, config, out)
    except NonadiabaticError as exc:
        limits = {(n, m): exc for n in range(model.dim) for m in range(model.dim) if n != m}
    t2 = time.perf_counter()
    rows = compare(seed, geo["predictions"], limits, model.dim)
    return rows, {"geometry_s": t1 - t0, "dynamics_s": t2 - t1}


def _run_seed_safe(args):
    config, seed, out_root = args
    try:
        return seed, run_seed(config, seed, out_root), None
    except Exception as exc:  # a failed seed aborts only that seed
        log.exception("seed %s failed", seed)
        return seed, None, f"{type(exc).__name__}: {exc}"


def write_comparison(path, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["seed", "n", "m", "lambda_theory", "chain", "lambda_empirical",
                    "fractional_difference", "method", "rules_agree", "excluded"])
        for r in rows:
            w.writerow(["" if r.seed is None else r.seed, r.n + 1, r.m + 1,
                        "" if r.lambda_theory is None else repr(float(r.lambda_theory)), r.chain,
                        "" if r.lambda_empirical is None else repr(float(r.lambda_empirical)),
                        "" if r.fractional_difference is None
                        else repr(float(r.fractional_difference)),
                        r.method, r.rules_agree, r.excluded])


def write_exclusions(path, report):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["seed", "n", "m", "reason"])
        for r in report.rows:
            if r.excluded:
                w.writerow(["" if r.seed is None else r.seed, r.n + 1, r.m + 1, r.excluded])
        for seed, msg in sorted(report.failed_seeds.items(), key=lambda kv: str(kv[0])):
            w.writerow(["" if seed is None else seed, "", "", f"{SEED_FAILED}:{msg}"])


def read_comparison(path):
    """Rows of a comparison CSV as dictionaries (numbers parsed)."""
    rows = []
    with open(path, newline="") as fh:
        for r in csv.DictReader(fh):
            for k in ("lambda_theory", "lambda_empirical", "fractional_difference"):
                r[k] = float(r[k]) if r[k] else None
            rows.append(r)
    return rows


def write_manifest(path, config, report, timings):
    import numba
    import scipy

    lines = [f"schema_version: {SCHEMA_VERSION}",
             f"package_version: {__version__}",
             f"python: {platform.python_version()}",
             f"numpy: {np.__version__}",
             f"scipy: {scipy.__version__}",
             f"numba: {numba.__version__}",
             "config:"]
    lines += ["  " + s for s in yaml.safe_dump(config.to_dict(), sort_keys=True).splitlines()]
    lines.append("summary:")
    for k, v in report.summary().items():
        lines.append(f"  {k}: {v}")
    lines.append("timings_s:")
    for k, v in timings.items():
        lines.append(f"  {k}: {v:.3f}")
    Path(path).write_text("\n".join(lines) + "\n")


def run_experiment(config, out_root=None):
    """Run every seed and write all tables; returns a :class:`ComparisonReport`.

    Seeds run in a process pool when ``config.workers > 1``; rows are merged
    in seed order so the outputs do not depend on scheduling.
    """
    out_root = Path(out_root or config.output)
    out_root.mkdir(parents=True, exist_ok=True)
    t0 = time.perf_counter()
    jobs = [(config, s, out_root) for s in config.seeds]
    if config.workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=config.workers) as pool:
            results = list(pool.map(_run_seed_safe, jobs))
    else:
        results = [_run_seed_safe(j) for j in jobs]
    rows, failed, timings = [], {}, {}
    for seed, res, err in sorted(results, key=lambda r: (r[0] is not None, r[0] or 0)):
        if err is not None:
            failed[seed] = err
            continue
        r, t = res
        rows.extend(r)
        for k, v in t.items():
            timings[f"{seed_dir('', seed).name}.{k}"] = v
    report = ComparisonReport(rows, failed)
    write_comparison(out_root / "comparison.csv", rows)
    write_exclusions(out_root / "exclusions.csv", report)
    if config.report.get("figures", True):
        emit_figure_data(out_root, "all", seeds=[s for s in config.seeds if s not in failed])
    timings["total"] = time.perf_counter() - t0
    write_manifest(out_root / "manifest.txt", config, report, timings)
    return report


# ---------------------------------------------------------------------------
# figure data

def _need(path):
    if not Path(path).exists():
        raise DependencyError(str(path))
    return Path(path)


def emit_figure_data(out_root, which="all", seeds=(None,)):
    """Plot-ready CSVs under ``<out_root>/figures``.

    ``which`` selects ``"levels"`` (energy curves, one column per level),
    ``"diagram"`` (branch points and Stokes crossings, labelled by level
    pair) or ``"all"``.  Missing upstream tables raise
    :class:`DependencyError` naming the file.
    """
    out_root = Path(out_root)
    fig = out_root / "figures"
    fig.mkdir(parents=True, exist_ok=True)
    written = []
    for seed in seeds:
        src = seed_dir(out_root, seed)
        tag = src.name
        if which in ("levels", "all"):
            levels = _need(src / "level_curves.csv")
            dst = fig / f"levels_{tag}.csv"
            dst.write_text(levels.read_text())
            written.append(dst)
        if which in ("diagram", "all"):
            bps = _need(src / "branch_points.csv")
            index = _need(src / "stokes_index.csv")
            crossings = {}
            with open(index, newline="") as fh:
                for r in csv.DictReader(fh):
                    crossings[(r["i"], r["j"], r["re_tau_star"], r["im_tau_star"])] = \
                        r["re_crossing"]
            dst = fig / f"diagram_{tag}.csv"
            with open(bps, newline="") as fh, open(dst, "w", newline="") as oh:
                w = csv.writer(oh)
                w.writerow(["kind", "label", "re_tau", "im_tau"])
                for r in csv.DictReader(fh):
                    label = f"{r['i']},{r['j']}"
                    w.writerow(["branch_point", label, r["re_tau"], r["im_tau"]])
                    if float(r["im_tau"]) > 0:
                        c = crossings.get((r["i"], r["j"], r["re_tau"], r["im_tau"]), "")
                        if c:
                            w.writerow(["stokes_crossing", label, c, "0.0"])
            written.append(dst)
    return written


# ---------------------------------------------------------------------------
# single stages for the command line

def run_stage(config, stage, out_root=None):
    """Run the pipeline up to `stage` for all seeds; returns the error count."""
    if stage == "run":
        report = run_experiment(config, out_root)
        return report.n_errors
    out_root = Path(out_root or config.output)
    errors = 0
    for seed in config.seeds:
        out = seed_dir(out_root, seed)
        try:
            model = config.model_for(seed)
            if stage == "propagate":
                dynamics(model, config, out)
            else:
                geometry(model, config, out, stop=stage)
        except NonadiabaticError as exc:
            log.error("seed %s: %s", seed, exc)
            errors += 1
    return errors


def run_renorm(config, out_root=None):
    """Divergence profile for the ``renorm`` block of the config."""
    out_root = Path(out_root or config.output)
    opts = config.renorm
    errors = 0
    for seed in config.seeds:
        model = config.model_for(seed)
        out = seed_dir(out_root, seed)
        out.mkdir(parents=True, exist_ok=True)
        try:
            pairs = opts.get("pairs")
            trace = divergence_profile(
                model, float(opts.get("epsilon", 0.1)), k_max=int(opts.get("k_max", 10)),
                tracked_pairs=None if pairs is None else [tuple(p) for p in pairs],
                subspace=tuple(opts.get("subspace", ())),
                window=tuple(opts.get("window", (-10.0, 10.0))),
                grid_size=int(opts.get("grid_size", 1025)))
        except NonadiabaticError as exc:
            log.error("seed %s: %s", seed, exc)
            errors += 1
            continue
        write_profiles(out / "renorm_profiles.csv", trace, stride=int(opts.get("stride", 1)))
        with open(out / "renorm_summary.csv", "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["k", "n", "m", "peak_tau", "peak_envelope", "max_abs", "edge"])
            for (k, n, m), p in sorted(trace.peak_tau.items()):
                w.writerow([k, n + 1, m + 1, repr(float(p)),
                            repr(float(trace.peak_value[(k, n, m)])),
                            repr(float(trace.max_magnitude[k])), int(k in trace.edge_orders)])
    return errors
