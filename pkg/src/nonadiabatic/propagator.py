"""Fixed-step RK4 solution of the time-dependent Schrodinger equation.

The equation ``i eps d psi/d tau = H(tau) psi`` (scaled time, hbar = 1) is
integrated from ``tau_i`` to ``tau_f`` with all ``N`` adiabatic initial states
propagated together.  The trace ``tr H / N`` is removed from ``H`` first; it
only contributes a common phase.

Optionally the integration runs along the horizontal line ``Im tau = y``
instead of the real axis.  The solution is analytic in ``tau`` (only the
matrix-element poles of tanh profiles are singular), and in the asymptotic
regions the adiabatic amplitudes only pick up the factors
``exp(-i/eps int E_n dtau)`` along the short vertical legs, so real-axis
transition probabilities follow exactly from the amplitudes at height ``y``:

    ln P_{n->m} = 2 ln|a_mn| - (2/eps) [V_m(tau_f) - V_n(tau_i)],
    V_n(tau) = int_0^y Re E_n(tau + i y') dy'.

Raising the line (``y > 0`` for upward, ``y < 0`` for downward transitions)
lifts exponentially small probabilities out of the roundoff floor that
limits the real-axis protocol.
"""

from __future__ import annotations

import csv
import logging
import math
import time
from dataclasses import dataclass, field

import numpy as np

from ._rk4 import FORM_LINEAR, FORM_TRIG, PROFILE_LINEAR, PROFILE_TANH, rk4_run
from .actions import phase_integral
from .errors import (
    ConfigurationError,
    ContinuationStepTooLarge,
    InsufficientDataError,
    StepTooLargeError,
)
from .spectral import continue_along, frame_at

log = logging.getLogger(__name__)

ROUNDOFF_THRESHOLD = 1e-23
NOISE_LEVEL = 1e-14
ACCURACY = 1e-2
PHASE_STEP = 0.01
NORM_BUDGET = 1e-10
NORM_LIMIT = 1e-8
CHECK_EVERY = 64
SEGMENTS = 16
GROWTH_SAMPLES = 400
RATE_FACTOR = 4.0


@dataclass(frozen=True)
class PropagationResult:
    """Outcome of one propagation from `initial_level`.

    ``log_probabilities`` are natural logs and stay finite when the
    probabilities underflow.  ``amplitudes`` are the adiabatic amplitudes at
    ``tau_f`` (only for real-axis runs, None otherwise).
    ``roundoff_flag[m]`` marks unreliable entries: ``P <= 1e-23`` on the real
    axis, or an amplitude below the resolution floor relative to the largest
    amplitude met along a complex contour.  In both cases amplitudes below
    100 times the edge residual of :func:`residual_floor` are flagged too.
    """

    epsilon: float
    initial_level: int
    amplitudes: np.ndarray | None
    probabilities: np.ndarray
    log_probabilities: np.ndarray
    roundoff_flag: dict
    norm_drift: float
    step: float
    tau_i: float
    tau_f: float
    height: float = 0.0
    resolution: np.ndarray | None = field(default=None, repr=False)

    @property
    def lambda_empirical(self):
        return empirical_actions(self)


def _kernel_args(model):
    if model.kind == "landau_zener":
        d = model.delta
        h1 = 0.5 * np.array([[0.0, d], [d, 0.0]])
        h2 = 0.5 * np.diag([1.0, -1.0])
        return h1, h2, FORM_LINEAR, PROFILE_LINEAR, 1.0, model.slope
    form = FORM_LINEAR if model.form == "linear" else FORM_TRIG
    if model.alpha is None:
        return model.h1, model.h2, form, PROFILE_LINEAR, 1.0, 1.0
    return model.h1, model.h2, form, PROFILE_TANH, float(model.alpha), 1.0


def _shifted_energies(model, tau):
    h = model.eval(tau)
    e = np.linalg.eigvals(h)
    return e - np.trace(h) / model.dim


def _max_rate(model, tau_i, tau_f, y, samples=201):
    taus = np.linspace(tau_i, tau_f, samples) + 1j * y
    return max(np.abs(_shifted_energies(model, t)).max() for t in taus)


def choose_step(model, epsilon, tau_i=-25.0, tau_f=25.0, height=0.0, phase_step=PHASE_STEP,
                norm_budget=NORM_BUDGET):
    """RK4 step in scaled time.

    Starts from ``max|E| h <= phase_step`` (``h`` in physical time) and, for
    real-axis runs, halves until the predicted RK4 norm loss
    ``n_steps (|E| h)**6 / 72`` is within `norm_budget`.
    """
    omega = max(_max_rate(model, tau_i, tau_f, height), 1e-12)
    h = phase_step / omega
    if height == 0.0:
        while True:
            n = (tau_f - tau_i) / (epsilon * h)
            if n * (omega * h) ** 6 / 72.0 <= norm_budget:
                break
            h /= 2
    return epsilon * h


def step_plan(model, epsilon, tau_i=-25.0, tau_f=25.0, height=0.0, phase_step=PHASE_STEP,
              norm_budget=NORM_BUDGET, segments=SEGMENTS):
    """Piecewise-uniform RK4 steps as ``[(tau_start, dtau, nsteps), ...]``.

    The window is cut into `segments` equal pieces, each with the step of
    :func:`choose_step` for its own largest rate, so the phase advanced per
    step is the same everywhere.  The norm budget applies to the total.
    """
    edges = np.linspace(tau_i, tau_f, segments + 1)
    omega = np.array([max(_max_rate(model, a, b, height, samples=25), 1e-12)
                      for a, b in zip(edges[:-1], edges[1:])])
    length = np.diff(edges)
    c = phase_step
    if height == 0.0:
        while np.sum(length * omega) / (epsilon * c) * c ** 6 / 72.0 > norm_budget:
            c /= 2
    n = np.ceil(length * omega / (epsilon * c)).astype(int)
    return [(float(a), float(d / k), int(k)) for a, d, k in zip(edges[:-1], length, n)]


def _vertical_potential(model, tau, y):
    """``int_0^y Re E_n(tau + i y') dy'`` per level, trace removed."""
    if y == 0:
        return np.zeros(model.dim)
    v = np.array([phase_integral(model, n, tau, tau + 1j * y).imag for n in range(model.dim)])
    return v - v.mean()


def residual_floor(model, epsilon, tau):
    """First-order adiabatic residual ``eps |<m|H'|n>| / |E_m - E_n|**2`` at `tau`.

    A solution that starts (or is projected) in the instantaneous basis at a
    finite window edge carries this admixture of level ``m``; amplitudes
    below it are not transition amplitudes.  Vanishes for models that are
    constant at the window edges.
    """
    f = frame_at(model, tau)
    d = f.states.T @ model.derivative(tau) @ f.states
    gap = f.energies[:, None] - f.energies[None, :]
    np.fill_diagonal(gap, np.inf)
    return epsilon * np.abs(d) / np.abs(gap) ** 2


def _growth(model, start, taus, epsilon, end=None):
    """``Im theta_m(tau_end) - Im theta_m(tau)`` over `epsilon` for sampled `taus`.

    Columns follow the labels of `end` when given: a line passing above
    branch points permutes the levels continued along it.
    """
    shift = np.array([np.trace(model.eval(t)) / model.dim for t in taus])
    try:
        frames = continue_along(model, [start.tau] + list(taus[1:]), start)
        e = np.array([f.energies for f in frames]) - shift[:, None]
        if end is not None:
            dist = np.abs(frames[-1].energies[:, None] - end.energies[None, :])
            e = e[:, np.argmin(dist, axis=0)]
    except ContinuationStepTooLarge:
        # the line runs through a branch point: bound every level by the
        # fastest-growing one
        top = np.array([np.linalg.eigvals(model.eval(t)).imag.max() for t in taus])
        e = np.repeat((top - shift.imag)[:, None] * 1j, model.dim, axis=1)
    ds = np.diff(taus.real)[:, None]
    seg = 0.5 * (e[1:].imag + e[:-1].imag) * ds
    cum = np.concatenate([np.zeros((1, model.dim)), np.cumsum(seg, axis=0)])
    # a free solution exp(-i theta/eps) grows by exp(Im theta / eps)
    return (cum[-1][None, :] - cum) / epsilon


def _run(model, epsilon, tau_i, tau_f, height, step, samples=2000, noise_level=None,
         refine=1):
    """One integration along ``Im tau = height``.

    `step` gives a uniform step; when None the steps follow
    :func:`step_plan`.  Every step is divided by `refine`.

    Returns ``(log_abs, resolution, norm_dev, dtau, amps)`` where
    ``resolution[m, n]`` is ``ln(|a_mn| / noise_mn)`` and ``dtau`` the
    largest step used.  The noise estimate combines roundoff
    (``noise_level`` relative to the solution, injected at the worst point
    of the line and grown like the free solution of level ``m``) with the
    first-order adiabatic residuals at both window edges.
    """
    if not epsilon > 0:
        raise ConfigurationError("epsilon", "epsilon must be positive")
    if not tau_f > tau_i:
        raise ConfigurationError("tau_f", "tau_f must exceed tau_i")
    if noise_level is None:
        noise_level = NOISE_LEVEL
    if step is None:
        plan = step_plan(model, epsilon, tau_i, tau_f, height)
    else:
        n = int(math.ceil((tau_f - tau_i) / step))
        plan = [(tau_i, (tau_f - tau_i) / n, n)]
    plan = [(a, d / refine, k * refine) for a, d, k in plan]
    stride = max(1, sum(k for _, _, k in plan) // samples)
    t0, t1 = complex(tau_i, height), complex(tau_f, height)
    start = frame_at(model, t0)
    end = frame_at(model, t1)
    h1, h2, form, kind, alpha, scale = _kernel_args(model)
    h1, h2 = np.asarray(h1, dtype=complex), np.asarray(h2, dtype=complex)
    psi = np.ascontiguousarray(start.states, dtype=complex)
    logscale = np.zeros(model.dim)
    norm_dev = 0.0
    lognorms, taus = [], []
    for a, d, k in plan:
        psi, ls, _, dev, ln = rk4_run(h1, h2, form, kind, alpha, scale, True,
                                      complex(a, height), complex(d), k, float(epsilon),
                                      psi, CHECK_EVERY, stride)
        tk = complex(a, height) + d * stride * np.arange(ln.shape[0])
        if taus and tk[0].real <= taus[-1][-1].real:
            ln, tk = ln[1:], tk[1:]
        lognorms.append(ln + logscale[None, :])
        taus.append(tk)
        logscale = logscale + ls
        norm_dev = max(norm_dev, dev)
    lognorm = np.concatenate(lognorms)
    dtau = max(d for _, d, _ in plan)
    amps = end.states.T @ psi
    with np.errstate(divide="ignore"):
        log_abs = np.log(np.abs(amps)) + logscale[None, :]
        if height == 0.0:
            growth = np.zeros((lognorm.shape[0], model.dim))
        else:
            # growth is smooth along the line: continue on a coarser subset
            taus = np.concatenate(taus)
            idx = np.unique(np.linspace(0, len(taus) - 1, GROWTH_SAMPLES).astype(int))
            coarse = _growth(model, start, taus[idx], epsilon, end)
            growth = np.column_stack([np.interp(taus.real, taus[idx].real, g)
                                      for g in coarse.T])
        roundoff = math.log(noise_level) + (lognorm[:, None, :] + growth[:, :, None]).max(axis=0)
        r_i = np.log(residual_floor(model, epsilon, t0))
        r_f = np.log(residual_floor(model, epsilon, t1))
        start_dressing = r_i + lognorm[0][None, :] + growth[0][:, None]
        end_dressing = np.full_like(log_abs, -np.inf)
        for m in range(model.dim):
            for k in range(model.dim):
                if k != m:
                    end_dressing[m] = np.maximum(end_dressing[m], r_f[m, k] + log_abs[k])
    noise = np.logaddexp(np.logaddexp(roundoff, start_dressing), end_dressing)
    return log_abs, log_abs - noise, norm_dev, dtau, amps


def propagate_all(model, epsilon, tau_i=-25.0, tau_f=25.0, step=None, height=0.0,
                  roundoff_threshold=ROUNDOFF_THRESHOLD, accuracy=ACCURACY,
                  norm_limit=NORM_LIMIT, check_halving=True):
    """Propagate every adiabatic state of ``H(tau_i)`` and return one result each.

    Parameters
    ----------
    step : float, optional
        Uniform step in scaled time; piecewise steps from :func:`step_plan`
        when omitted.
    height : float
        ``Im tau`` of the integration line; 0 is the real-axis protocol.
    accuracy : float
        Largest acceptable relative amplitude error; entries whose estimated
        noise exceeds it are flagged (real-axis entries are additionally
        flagged when ``P <= roundoff_threshold``).
    check_halving : bool
        For complex lines, repeat the run with half the step, report the
        finer result and take ``ln(1 / |change of ln|a||)`` as an upper
        bound on the resolution.

    Raises
    ------
    StepTooLargeError
        Real-axis runs whose norm drifts by more than `norm_limit`.
    """
    log_abs, resolution, norm_dev, dtau, amps = _run(model, epsilon, tau_i, tau_f, height, step)
    n = model.dim
    if height != 0.0 and check_halving:
        # off the axis, integration errors are amplified along the line in
        # ways the growth model misses; compare against a half-step run
        fine, res_fine, _, dtau, _ = _run(model, epsilon, tau_i, tau_f, height, step, refine=2)
        with np.errstate(invalid="ignore"):
            change = np.abs(fine - log_abs)
        spread = -np.log(np.maximum(change, 1e-300))
        resolution = np.minimum(res_fine, np.where(np.isfinite(change), spread, -np.inf))
        log_abs = fine
    if height == 0.0 and norm_dev > norm_limit:
        raise StepTooLargeError(norm_dev, dtau / 2)
    v_f = _vertical_potential(model, tau_f, height)
    v_i = _vertical_potential(model, tau_i, height)
    limit = -math.log(accuracy)
    results = []
    for k in range(n):
        logp = 2.0 * (log_abs[:, k] - (v_f - v_i[k]) / epsilon)
        res = resolution[:, k]
        if height == 0.0:
            probs = np.abs(amps[:, k]) ** 2
            flags = {m: bool(probs[m] <= roundoff_threshold or res[m] < limit)
                     for m in range(n) if m != k}
            a = amps[:, k].copy()
        else:
            with np.errstate(over="ignore"):
                probs = np.exp(logp)
            flags = {m: bool(res[m] < limit) for m in range(n) if m != k}
            a = None
        results.append(PropagationResult(float(epsilon), k, a, probs, logp, flags,
                                         float(norm_dev), float(dtau), float(tau_i),
                                         float(tau_f), float(height), res))
    return results


def propagate(model, epsilon, initial_level, tau_i=-25.0, tau_f=25.0, step=None, height=0.0,
              **kwargs):
    """Propagate the adiabatic state `initial_level` (0-based); see :func:`propagate_all`."""
    if not 0 <= initial_level < model.dim:
        raise ConfigurationError("initial_level", f"level {initial_level} out of range")
    return propagate_all(model, epsilon, tau_i, tau_f, step, height, **kwargs)[initial_level]


def empirical_actions(result):
    """``lambda_nm = -(eps/2) ln P_{n->m}`` for every ``m != n`` (None where ``P = 0``)."""
    out = {}
    for m in range(len(result.log_probabilities)):
        if m == result.initial_level:
            continue
        lp = result.log_probabilities[m]
        out[m] = None if not np.isfinite(lp) else float(-0.5 * result.epsilon * lp)
    return out


# ---------------------------------------------------------------------------
# complex-contour planning
# ---------------------------------------------------------------------------

def height_limit(model, rate_factor=RATE_FACTOR, dy=0.05, tau_i=-25.0, tau_f=25.0):
    """Largest usable ``|Im tau|`` for the integration line.

    Off the real axis the energies grow (without bound near the poles of
    the time profile), and the RK4 step shrinks with them.  Lines are kept
    where ``max |E|`` stays within `rate_factor` of its real-axis value,
    inside the analyticity strip.
    """
    top = 2.5 if not model.has_poles else abs(model.alpha) * np.pi / 2 - model.guard_radius
    base = _max_rate(model, tau_i, tau_f, 0.0)
    y = 0.0
    while y + dy <= top + 1e-12:
        if _max_rate(model, tau_i, tau_f, y + dy) > rate_factor * base:
            break
        y += dy
    return round(y, 10)


def scan_heights(model, eps_scan=0.5, dy=0.1, tau_i=-25.0, tau_f=25.0, rate_factor=None):
    """Resolution of every transition versus contour height at a coarse `eps_scan`.

    Returns ``(heights, res)`` with ``res[h, m, n]`` the estimated log-ratio
    ``ln(|a_mn| / noise_mn)`` of the ``n -> m`` amplitude on each line.
    """
    ymax = height_limit(model, RATE_FACTOR if rate_factor is None else rate_factor,
                        tau_i=tau_i, tau_f=tau_f)
    ys = np.arange(dy, ymax + 1e-12, dy)
    heights = np.concatenate([-ys[::-1], ys])
    res = np.empty((len(heights), model.dim, model.dim))
    for a, y in enumerate(heights):
        res[a] = _run(model, eps_scan, tau_i, tau_f, float(y), None)[1]
    return heights, res


def plan_heights(heights, res, pairs, epsilon, eps_scan, accuracy=ACCURACY, margin=5.0):
    """Few contour heights resolving all `pairs` ``(n, m)`` at `epsilon`.

    The exponential part of the scanned resolution scales like ``1/eps``
    while the roundoff level does not; predictions use that split.  Heights
    are picked greedily (most pairs resolved with `margin` to spare, ties to
    the larger summed resolution); pairs no height resolves get their best
    height.
    """
    base = math.log(NOISE_LEVEL)
    pred = (res + base) * (eps_scan / epsilon) - base
    need = -math.log(accuracy) + margin
    remaining = set(pairs)
    chosen = {}

    def usable(a, n, m):
        return np.sign(heights[a]) == np.sign(m - n)

    while remaining:
        best, best_key = None, None
        for a in range(len(heights)):
            hit = [(n, m) for (n, m) in remaining if usable(a, n, m) and pred[a, m, n] > need]
            key = (len(hit), sum(pred[a, m, n] for n, m in hit))
            if hit and (best_key is None or key > best_key):
                best, best_key = a, key
        if best is None:
            for n, m in sorted(remaining):
                cand = [a for a in range(len(heights)) if usable(a, n, m)]
                a = max(cand, key=lambda a: pred[a, m, n])
                chosen.setdefault(float(heights[a]), set()).add((n, m))
            break
        hit = {(n, m) for (n, m) in remaining if usable(best, n, m) and pred[best, m, n] > need}
        chosen.setdefault(float(heights[best]), set()).update(hit)
        remaining -= hit
    return chosen


@dataclass(frozen=True)
class Estimate:
    n: int
    m: int
    epsilon: float
    value: float | None
    flagged: bool
    height: float
    resolution: float


def transition_estimates(model, epsilon, tau_i=-25.0, tau_f=25.0, contour=True, scan=None,
                         eps_scan=0.5, roundoff_threshold=ROUNDOFF_THRESHOLD):
    """Empirical ``lambda_nm`` for all ordered pairs at one `epsilon`.

    Pairs that the real-axis run leaves flagged are recomputed on complex
    contours when `contour` is set; `scan` is the output of
    :func:`scan_heights` (computed on demand).  Returns ``{(n, m): Estimate}``.
    """
    n_lv = model.dim
    base = propagate_all(model, epsilon, tau_i, tau_f, roundoff_threshold=roundoff_threshold)
    out = {}
    for r in base:
        lam = empirical_actions(r)
        for m, flag in r.roundoff_flag.items():
            out[(r.initial_level, m)] = Estimate(r.initial_level, m, epsilon, lam[m], flag, 0.0,
                                                 float(r.resolution[m]))
    todo = [k for k, e in out.items() if e.flagged or e.value is None]
    if not contour or not todo:
        return out
    if scan is None:
        scan = scan_heights(model, eps_scan, tau_i=tau_i, tau_f=tau_f)
    heights, res = scan
    for y, pairs in sorted(plan_heights(heights, res, todo, epsilon, eps_scan).items()):
        runs = propagate_all(model, epsilon, tau_i, tau_f, height=y)
        for n, m in sorted(pairs):
            r = runs[n]
            est = Estimate(n, m, epsilon, empirical_actions(r)[m], r.roundoff_flag[m], y,
                           float(r.resolution[m]))
            prev = out[(n, m)]
            if prev.flagged and (not est.flagged or est.resolution > prev.resolution):
                out[(n, m)] = est
    return out


# ---------------------------------------------------------------------------
# epsilon extrapolation
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Extrapolation:
    value: float
    method: str
    residual: float
    used: tuple


def extrapolate(points, degree=2, n_fit=None):
    """Limit ``eps -> 0`` of ``(eps, lambda, flagged)`` points.

    Three or more unflagged points: least-squares polynomial of `degree`
    (lowered to ``len - 1`` if needed) through the `n_fit` smallest-``eps``
    unflagged points, constant term returned.  ``n_fit`` defaults to
    ``degree + 1``; large-``eps`` points carry pre-asymptotic corrections
    that a low-order polynomial cannot absorb.  ``n_fit=0`` uses them all.
    One or two unflagged points: the value at the smallest unflagged
    ``eps`` ("smallest-reliable").  None: :class:`InsufficientDataError`.
    """
    good = sorted((e, v) for e, v, f in points if not f and v is not None)
    if not good:
        raise InsufficientDataError("no unflagged points to extrapolate",
                                    [(e, f) for e, _, f in points])
    if len(good) < 3:
        e, v = good[0]
        return Extrapolation(float(v), "smallest-reliable", float("nan"), (e,))
    n_fit = degree + 1 if n_fit is None else n_fit
    if n_fit > 0:
        good = good[:max(n_fit, 2)]
    eps = np.array([g[0] for g in good])
    lam = np.array([g[1] for g in good])
    deg = min(degree, len(good) - 1)
    coef = np.polynomial.polynomial.polyfit(eps, lam, deg)
    fit = np.polynomial.polynomial.polyval(eps, coef)
    resid = float(np.sqrt(np.mean((fit - lam) ** 2)))
    return Extrapolation(float(coef[0]), f"poly{deg}", resid, tuple(float(e) for e in eps))


def sweep_and_extrapolate(model, n, m, epsilons, degree=2, n_fit=None, **kwargs):
    """``lambda_nm`` in the limit ``eps -> 0`` from a sweep over `epsilons`."""
    eps = list(epsilons)
    if any(b >= a for a, b in zip(eps[:-1], eps[1:])):
        raise ConfigurationError("epsilons", "epsilon values must be strictly descending")
    points = []
    for e in eps:
        est = transition_estimates(model, e, **kwargs)[(n, m)]
        points.append((e, est.value, est.flagged))
    return extrapolate(points, degree, n_fit), points


def sweep(model, epsilons, degree=2, contour=True, tau_i=-25.0, tau_f=25.0, eps_scan=0.5,
          n_fit=None):
    """Estimates for all pairs over `epsilons` plus per-pair extrapolations.

    Returns ``(estimates, limits)``: ``estimates`` is a list of
    :class:`Estimate`, ``limits`` maps ``(n, m)`` to :class:`Extrapolation`
    or to the :class:`InsufficientDataError` raised for that pair.
    """
    scan = scan_heights(model, eps_scan, tau_i=tau_i, tau_f=tau_f) if contour else None
    estimates = []
    for e in epsilons:
        t0 = time.perf_counter()
        est = transition_estimates(model, e, tau_i, tau_f, contour, scan, eps_scan)
        log.info("epsilon=%g: %d flagged, %.1f s", e, sum(x.flagged for x in est.values()),
                 time.perf_counter() - t0)
        estimates.extend(est[k] for k in sorted(est))
    limits = {}
    pairs = sorted({(e.n, e.m) for e in estimates})
    for p in pairs:
        pts = [(e.epsilon, e.value, e.flagged) for e in estimates if (e.n, e.m) == p]
        try:
            limits[p] = extrapolate(pts, degree, n_fit)
        except InsufficientDataError as exc:
            limits[p] = exc
    return estimates, limits


# ---------------------------------------------------------------------------
# diagnostics
# ---------------------------------------------------------------------------

def step_halving_study(model, epsilon, initial_level, final_level, halvings=4, tau_i=-25.0,
                       tau_f=25.0, step=None, height=0.0):
    """``ln P`` for steps ``h, h/2, ...`` and the ratios of successive changes.

    For a fourth-order method each ratio approaches 16 until roundoff.
    """
    if step is None:
        step = choose_step(model, epsilon, tau_i, tau_f, height, norm_budget=np.inf)
    steps, logs, drifts = [], [], []
    for k in range(halvings + 1):
        h = step / 2 ** k
        r = propagate_all(model, epsilon, tau_i, tau_f, step=h, height=height,
                          norm_limit=np.inf)[initial_level]
        steps.append(r.step)
        logs.append(float(r.log_probabilities[final_level]))
        drifts.append(r.norm_drift)
    diffs = np.abs(np.diff(logs))
    with np.errstate(divide="ignore", invalid="ignore"):
        ratios = diffs[:-1] / diffs[1:]
    return np.array(steps), np.array(logs), ratios, np.array(drifts)


def window_study(model, epsilon, initial_level, final_level, windows=((-25.0, 25.0),
                                                                      (-35.0, 35.0)),
                 height=0.0):
    """Empirical ``lambda`` for each ``(tau_i, tau_f)`` window."""
    out = []
    for ti, tf in windows:
        r = propagate_all(model, epsilon, ti, tf, height=height)[initial_level]
        out.append(empirical_actions(r)[final_level])
    return out


def write_estimates(path, estimates):
    """Rows ``n, m, epsilon, lambda, flag, height`` (1-based levels)."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["n", "m", "epsilon", "lambda", "flag", "height"])
        for e in estimates:
            w.writerow([e.n + 1, e.m + 1, repr(float(e.epsilon)),
                        "" if e.value is None else repr(float(e.value)), int(e.flagged),
                        repr(float(e.height))])


def write_limits(path, limits):
    """Rows ``n, m, lambda_limit, method, residual`` (1-based levels)."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["n", "m", "lambda_limit", "method", "residual"])
        for (n, m), lim in sorted(limits.items()):
            if isinstance(lim, Exception):
                w.writerow([n + 1, m + 1, "", "insufficient-data", ""])
            else:
                w.writerow([n + 1, m + 1, repr(float(lim.value)), lim.method,
                            repr(float(lim.residual))])
