"""Location of square-root branch points of the energy levels in complex time.

A coarse grid of continuation-labelled energies is searched for local minima
of every pairwise gap ``|E_j - E_i|``; sharp avoided crossings on the real
axis are also turned into candidates through a local Landau-Zener fit.  Each
candidate is polished by Newton's method on ``g = (E_j - E_i)**2``, which is
analytic with a simple zero at the degeneracy.
"""

from __future__ import annotations

import csv
import itertools
import logging
import warnings
from dataclasses import dataclass, replace

import numpy as np

from .errors import (
    ContinuationStepTooLarge,
    PairingError,
    RefinementFailed,
    RegionClippedWarning,
    SuspiciousPointWarning,
)
from .spectral import (
    _real_axis_frame,
    continue_along,
    cut_direction,
    eigensolve_complex_symmetric,
    frame_at,
)

log = logging.getLogger(__name__)

DEFAULT_REGION = (-6.0, 6.0, 0.0, 2.0)
MIN_HEIGHT = 1e-4


@dataclass(frozen=True)
class Candidate:
    i: int
    j: int
    tau: complex


@dataclass(frozen=True, eq=False)
class BranchPoint:
    """Degeneracy of levels ``levels = (i, j)``, ``i < j``, at ``tau``.

    ``local_coeff`` is ``a`` in ``E_j - E_i ~ a (tau - tau*)**(1/2)`` (defined
    up to sign), so the phase-integral difference behaves as
    ``(2/3) a (tau - tau*)**(3/2)``.
    """

    levels: tuple
    tau: complex
    local_coeff: complex
    residual_gap: float
    iterations: int = 0
    partner: "BranchPoint | None" = None
    action: float | None = None

    @property
    def phase_coeff(self):
        """Coefficient of ``(tau - tau*)**(3/2)`` in the phase-integral difference."""
        return 2.0 * self.local_coeff / 3.0

    @property
    def upper(self):
        return self.tau.imag > 0

    def conjugate(self):
        return BranchPoint(self.levels, self.tau.conjugate(), np.conj(self.local_coeff),
                           self.residual_gap, self.iterations, partner=self,
                           action=self.action)

    def key(self):
        return (round(self.tau.real, 9), round(self.tau.imag, 9), self.levels)

    def __repr__(self):
        i, j = self.levels
        return f"BranchPoint(({i}, {j}), tau={self.tau:.10g})"


# ---------------------------------------------------------------------------
# pair-local evaluation

def _pick_pair(w, p):
    """Indices (a, b) of the eigenvalues in `w` closest to the pair `p`."""
    d1 = np.abs(w - p[0])
    d2 = np.abs(w - p[1])
    cost = d1[:, None] + d2[None, :]
    np.fill_diagonal(cost, np.inf)
    a, b = np.unravel_index(np.argmin(cost), cost.shape)
    return a, b


def pair_values(model, tau, p):
    """Eigenvalues at `tau` continuing the pair `p` (two complex numbers)."""
    w = np.linalg.eigvals(model.eval(tau, check=False))
    a, b = _pick_pair(w, p)
    return np.array([w[a], w[b]])


def _g(model, tau, p):
    v = pair_values(model, tau, p)
    return (v[1] - v[0]) ** 2, v


def _dg(model, tau, p, h):
    gp, _ = _g(model, tau + h, p)
    gm, _ = _g(model, tau - h, p)
    gpi, _ = _g(model, tau + 1j * h, p)
    gmi, _ = _g(model, tau - 1j * h, p)
    return 0.5 * ((gp - gm) / (2 * h) + (gpi - gmi) / (2j * h))


# ---------------------------------------------------------------------------
# scan

def _clip_region(model, region):
    re0, re1, im0, im1 = region
    if model.has_poles:
        first_pole = abs(model.alpha) * np.pi / 2
        limit = first_pole - model.guard_radius
        if im1 > limit or -im0 > limit:
            warnings.warn(RegionClippedWarning(
                f"region clipped to |Im tau| <= {limit:.4g} (matrix-element pole at "
                f"Im tau = {first_pole:.4g})"), stacklevel=3)
            im1 = min(im1, limit)
            im0 = max(im0, -limit)
    return re0, re1, im0, im1


def _grid_energies(model, xs, ys, cut_angle):
    """Continuation-labelled energies on a sheared grid (columns parallel to cuts)."""
    u = cut_direction(1, cut_angle)
    shear = u.real / u.imag
    out = np.empty((len(xs), len(ys), model.dim), dtype=complex)
    dx = (xs[-1] - xs[0]) / max(len(xs) - 1, 1)
    for a, x in enumerate(xs):
        # a column running exactly through a branch point cannot be continued;
        # shift it sideways by a small fraction of the spacing
        for nudge in (0.0, 1e-4, -1e-4, 1e-2):
            x_col = x + nudge * dx
            nodes = [complex(x_col + y * shear, y) for y in ys]
            base = complex(nodes[0].real - nodes[0].imag * shear, 0.0)
            start = _real_axis_frame(model, base.real)
            try:
                frames = continue_along(model, [base] + nodes, start)[1:]
                break
            except ContinuationStepTooLarge:
                continue
        else:
            raise ContinuationStepTooLarge(f"cannot continue grid column at Re tau={x}")
        for b, f in enumerate(frames):
            out[a, b] = f.energies
    return out


def _real_axis_seeds(model, xs_fine):
    """Branch-point estimates from sharp avoided crossings on the real axis."""
    e = np.array([_real_axis_frame(model, x).energies.real for x in xs_fine])
    seeds = []
    dx = xs_fine[1] - xs_fine[0]
    for i in range(model.dim - 1):
        gap = e[:, i + 1] - e[:, i]
        for k in range(1, len(xs_fine) - 1):
            if gap[k] <= gap[k - 1] and gap[k] < gap[k + 1]:
                curv = (gap[k + 1] - 2 * gap[k] + gap[k - 1]) / dx ** 2
                # parabola vertex
                den = gap[k - 1] - 2 * gap[k] + gap[k + 1]
                shift = 0.5 * dx * (gap[k - 1] - gap[k + 1]) / den if den else 0.0
                g0 = gap[k] - 0.125 * (gap[k - 1] - gap[k + 1]) * shift / dx
                if curv <= 0 or g0 <= 0:
                    continue
                slope = np.sqrt(curv * g0)
                seeds.append(Candidate(i, i + 1, complex(xs_fine[k] + shift, g0 / slope)))
    return seeds


def scan_grid(model, region=DEFAULT_REGION, nx=241, ny=41, threshold=0.75,
              cut_angle=0.0, real_axis_seeds=True):
    """Candidate branch points as local minima of each labelled pair gap.

    A cell is a candidate for pair ``(i, j)`` when its gap is no larger than
    any of its eight neighbours and below ``threshold`` times the pair's
    minimum real-axis gap.  Only the upper half of the region is scanned;
    lower-half points follow by conjugation.
    """
    if nx < 8 or ny < 8:
        raise ValueError("nx and ny must be at least 8")
    re0, re1, im0, im1 = _clip_region(model, region)
    im0 = max(im0, 0.0)
    xs = np.linspace(re0, re1, nx)
    ys = np.linspace(im0, im1, ny)
    energies = _grid_energies(model, xs, ys, cut_angle)

    xs_fine = np.linspace(re0, re1, max(4 * nx, 400))
    real_e = np.array([_real_axis_frame(model, x).energies.real for x in xs_fine])

    cands = []
    n = model.dim
    for i, j in itertools.combinations(range(n), 2):
        g = np.abs(energies[:, :, j] - energies[:, :, i])
        min_real_gap = np.min(real_e[:, j] - real_e[:, i])
        padded = np.pad(g, 1, constant_values=np.inf)
        is_min = np.ones_like(g, dtype=bool)
        for da, db in itertools.product((-1, 0, 1), repeat=2):
            if da == db == 0:
                continue
            is_min &= g <= padded[1 + da:1 + da + nx, 1 + db:1 + db + ny]
        is_min[:, 0] &= ys[0] > 0
        is_min &= g < threshold * min_real_gap
        u = cut_direction(1, cut_angle)
        for a, b in zip(*np.nonzero(is_min)):
            tau = complex(xs[a] + ys[b] * u.real / u.imag, ys[b])
            cands.append(Candidate(i, j, tau))
    if real_axis_seeds:
        cands.extend(c for c in _real_axis_seeds(model, xs_fine) if c.tau.imag <= im1)
    return cands


# ---------------------------------------------------------------------------
# refinement

def _level_labels(model, tau_star, e_star, cut_angle):
    """Labels of the two levels meeting at `tau_star`, by continuation from the axis."""
    u = cut_direction(np.sign(tau_star.imag), cut_angle)
    height = abs(tau_star.imag)
    delta = min(1e-3, 0.01 * height)
    probe = tau_star - delta * u
    f = frame_at(model, probe, cut_angle=cut_angle)
    d = np.abs(f.energies - e_star)
    i, j = sorted(np.argsort(d)[:2])
    return int(i), int(j)


def _safe_frame(model, tau, cut_angle):
    """Frame at `tau`, nudged towards the real axis if `tau` sits on a degeneracy."""
    u = cut_direction(np.sign(tau.imag) or 1, cut_angle)
    for nudge in (0.0, 1e-3, 1e-2, 5e-2):
        try:
            return frame_at(model, tau - nudge * u, cut_angle=cut_angle)
        except ContinuationStepTooLarge:
            continue
    raise RefinementFailed(f"cannot label the spectrum near {tau}")


def refine(model, candidate, max_iter=50, tol=1e-13, cut_angle=0.0, start_pair=None,
           max_wander=1.0):
    """Newton refinement of a candidate to a :class:`BranchPoint`.

    Raises :class:`RefinementFailed` on non-convergence or when the limit is
    not a degeneracy.
    """
    tau = tau0 = complex(candidate.tau)
    scale = model.energy_scale()
    strip = abs(model.alpha) * np.pi / 2 - model.guard_radius if model.has_poles else np.inf
    if start_pair is None:
        f = _safe_frame(model, tau, cut_angle)
        p = f.energies[[candidate.i, candidate.j]]
    else:
        p = np.asarray(start_pair)
    g, p = _g(model, tau, p)
    it = 0
    converged = False
    for it in range(1, max_iter + 1):
        h = 1e-6 * max(1.0, abs(p[1] - p[0]) ** 2 / scale, 1e-3)
        h = min(h, 1e-5)
        dg = _dg(model, tau, p, h)
        if dg == 0 or not np.isfinite(dg):
            break
        step = -g / dg
        lim = 0.25
        if abs(step) > lim:
            step *= lim / abs(step)
        tau = tau + step
        if abs(tau - tau0) > max_wander:
            break
        if model.has_poles and (model.pole_distance(tau) < model.guard_radius
                                or abs(tau.imag) > strip):
            break
        g, p = _g(model, tau, p)
        if abs(step) <= tol * (1 + abs(tau)):
            converged = True
            break
    gap_abs = float(np.sqrt(abs(g)))
    if not converged or gap_abs > 1e-6 * scale:
        raise RefinementFailed(
            f"candidate {candidate} did not converge (|gap|={gap_abs:.3g}, iterations={it})"
        )
    if abs(tau.imag) < MIN_HEIGHT:
        warnings.warn(SuspiciousPointWarning(
            f"refined point {tau} lies within {MIN_HEIGHT} of the real axis"), stacklevel=2)
    e_star = 0.5 * (p[0] + p[1])
    levels = _level_labels(model, tau, e_star, cut_angle)
    coeff = _local_coeff(model, tau, p, scale)
    return BranchPoint(levels, tau, coeff, gap_abs, it)


def _local_coeff(model, tau, p, scale, radius=1e-3, n=8):
    vals = []
    for th in 2 * np.pi * (np.arange(n) + 0.5) / n:
        h = radius * np.exp(1j * th)
        g, _ = _g(model, tau + h, p)
        vals.append(g / h)
    return complex(np.sqrt(np.mean(vals)))


def gap_exponent(model, bp, radii=None):
    """Fitted exponent of ``|E_j - E_i|`` versus ``|tau - tau*|`` (0.5 for a square root)."""
    if radii is None:
        radii = np.logspace(-4, -2, 9)
    w = np.linalg.eigvals(model.eval(bp.tau, check=False))
    d = np.abs(w[:, None] - w[None, :]) + np.diag(np.full(len(w), np.inf))
    a, b = np.unravel_index(np.argmin(d), d.shape)
    p = w[[a, b]]
    mags = []
    for r in radii:
        vals = [abs(np.diff(pair_values(model, bp.tau + r * np.exp(1j * th), p))[0])
                for th in (0.3, 2.4, 4.5)]
        mags.append(np.mean(vals))
    slope, _ = np.polyfit(np.log(radii), np.log(mags), 1)
    return float(slope)


# ---------------------------------------------------------------------------
# assembly

def pair_and_dedupe(points, tol=1e-8, model=None, verify=False, cut_angle=0.0):
    """Merge duplicates and link each upper-half point with its conjugate.

    Points refined into the lower half plane are reflected.  With ``verify``
    the partner is obtained by refining from the conjugate position, which
    raises :class:`PairingError` if that refinement fails or lands elsewhere.
    """
    uppers = []
    for bp in points:
        if bp.tau.imag < 0:
            bp = replace(bp.conjugate(), partner=None)
        if any(abs(bp.tau - q.tau) <= tol * max(1.0, abs(q.tau)) for q in uppers):
            continue
        uppers.append(bp)
    uppers.sort(key=lambda b: (b.tau.real, b.tau.imag))
    out = []
    for bp in uppers:
        if verify:
            if model is None:
                raise ValueError("verify=True requires the model")
            try:
                low = refine(model, Candidate(*bp.levels, bp.tau.conjugate()),
                             cut_angle=cut_angle)
            except RefinementFailed as exc:
                raise PairingError(f"conjugate of {bp} could not be refined") from exc
            if abs(low.tau - bp.tau.conjugate()) > 1e-8 * max(1.0, abs(bp.tau)):
                raise PairingError(f"conjugate refinement of {bp} converged to {low.tau}")
            low = replace(low, tau=bp.tau.conjugate())
        else:
            low = bp.conjugate()
        up = replace(bp, partner=None)
        low = replace(low, partner=up, levels=bp.levels)
        object.__setattr__(up, "partner", low)
        out.append(up)
    return out


def find_branch_points(model, region=DEFAULT_REGION, nx=241, ny=41, threshold=0.75,
                       cut_angle=0.0, verify=False):
    """Scan, refine and pair all branch points in `region` (upper half plane).

    Returns ``(points, log_entries)`` where the log lists discarded candidates.
    """
    cands = scan_grid(model, region, nx, ny, threshold, cut_angle)
    refined = []
    discarded = []
    re0, re1, im0, im1 = _clip_region(model, region)
    margin = 1e-6
    for c in cands:
        try:
            with warnings.catch_warnings():
                warnings.simplefilter("ignore", SuspiciousPointWarning)
                bp = refine(model, c, cut_angle=cut_angle)
        except RefinementFailed as exc:
            log.debug("discarding %s: %s", c, exc)
            discarded.append((c, str(exc)))
            continue
        t = bp.tau if bp.tau.imag > 0 else bp.tau.conjugate()
        if not (re0 - margin <= t.real <= re1 + margin and t.imag <= im1 + margin):
            discarded.append((c, f"converged outside region to {bp.tau}"))
            continue
        if abs(t.imag) < MIN_HEIGHT:
            warnings.warn(SuspiciousPointWarning(f"branch point {t} near the real axis"))
        refined.append(bp)
    # refinement may land on the conjugate sheet labelling; recompute labels for
    # reflected points so every entry is labelled in the upper half plane
    fixed = []
    for bp in refined:
        if bp.tau.imag < 0:
            t = bp.tau.conjugate()
            w = np.linalg.eigvals(model.eval(t, check=False))
            e_star = w[np.argmin([min(abs(w[k] - w[l]) for l in range(len(w)) if l != k)
                                  for k in range(len(w))])]
            levels = _level_labels(model, t, e_star, cut_angle)
            bp = replace(bp.conjugate(), levels=levels, partner=None)
        fixed.append(bp)
    return pair_and_dedupe(fixed, model=model, verify=verify, cut_angle=cut_angle), discarded


def write_branch_table(path, points):
    """CSV rows ``(i, j, Re tau*, Im tau*, lambda)`` with 1-based level labels."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["i", "j", "re_tau", "im_tau", "lambda"])
        for bp in points:
            lam = "" if bp.action is None else repr(float(bp.action))
            w.writerow([bp.levels[0] + 1, bp.levels[1] + 1, repr(float(bp.tau.real)),
                        repr(float(bp.tau.imag)), lam])
