"""Stokes and anti-Stokes lines of branch points, and branch-cut rays.

With ``dtheta(tau) = int_{tau*}^{tau} (E_j - E_i) dtau'`` a Stokes line is a
curve ``Re dtheta = 0`` leaving the branch point and an anti-Stokes line a
curve ``Im dtheta = 0``.  Near a generic square-root point
``dtheta ~ (2/3) a (tau - tau*)**(3/2)``, so three rays of each kind leave
``tau*`` separated by ``2 pi / 3``.

Lines are traced by integrating ``dtau/ds = sigma * i / dE`` (Stokes) or
``sigma / dE`` (anti-Stokes) with classical RK4, ``s`` being the change of
``|dtheta|``.  The pair energies are followed by nearest-value matching, which
keeps the labels continuous along the trace.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import linear_sum_assignment

from .errors import ContinuationStepTooLarge, SingularityProximityError
from .spectral import cut_direction

KINDS = ("stokes", "anti_stokes")

# statuses
CROSSED = "crossed_real_axis"
LEFT_REGION = "left_region"
MAX_LENGTH = "max_length"
NEAR_SINGULARITY = "near_singularity"
STALLED = "stalled"


@dataclass(frozen=True, eq=False)
class StokesLine:
    """A traced Stokes or anti-Stokes ray.

    ``phase_drift`` is the largest deviation of the conserved part of
    ``dtheta`` (real part for Stokes lines, imaginary part otherwise) seen
    along the polyline.  ``phase`` holds ``dtheta`` at every point.
    """

    branch_point: object
    kind: str
    direction: int
    points: np.ndarray
    phase: np.ndarray
    real_crossing: complex | None
    phase_drift: float
    status: str
    step_bound: float = field(default=np.inf, repr=False)

    @property
    def length(self):
        return float(np.abs(np.diff(self.points)).sum())

    def conjugate(self):
        return StokesLine(self.branch_point, self.kind, mirrored_direction(self.direction),
                          np.conj(self.points), -np.conj(self.phase),
                          None if self.real_crossing is None else np.conj(self.real_crossing),
                          self.phase_drift, self.status, self.step_bound)

    def re_at_height(self, y):
        """Interpolated ``Re tau`` where the line first reaches ``Im tau = y``, or None."""
        im = self.points.imag
        for k in range(len(im) - 1):
            a, b = im[k], im[k + 1]
            if (a - y) * (b - y) <= 0 and a != b:
                f = (y - a) / (b - a)
                return float(self.points[k].real + f * (self.points[k + 1].real
                                                        - self.points[k].real))
        return None


@dataclass(frozen=True)
class BranchCut:
    """Ray ``tau* + s u``, ``s >= 0``, leaving the branch point away from the real axis."""

    branch_point: object
    tau: complex
    direction: complex

    def point(self, s):
        return self.tau + s * self.direction

    def re_at_height(self, y):
        """``Re tau`` of the ray at ``Im tau = y`` (None below the branch point)."""
        if (y - self.tau.imag) * np.sign(self.tau.imag) < 0:
            return None
        s = (y - self.tau.imag) / self.direction.imag
        return float((self.tau + s * self.direction).real)

    def contains(self, tau, tol=1e-12):
        d = complex(tau) - self.tau
        s = (d * np.conj(self.direction)).real
        return s >= -tol and abs((d * np.conj(self.direction)).imag) <= tol


def branch_cut(bp, cut_angle=0.0):
    """Branch cut of `bp`: vertical for ``cut_angle = 0``, mirrored below the axis."""
    tau = complex(bp.tau)
    return BranchCut(bp, tau, complex(cut_direction(np.sign(tau.imag), cut_angle)))


def _coeff_squared(bp):
    return complex(bp.local_coeff) ** 2


def initial_angles(bp, kind="stokes"):
    """The three initial ray angles ``arg(tau - tau*)`` for `kind`, indexed 0..2."""
    a2 = np.angle(_coeff_squared(bp))
    base = np.pi - a2 if kind == "stokes" else -a2
    return np.array([np.angle(np.exp(1j * (base + 2 * np.pi * k) / 3)) for k in range(3)])


def mirrored_direction(k):
    """Ray index of the conjugate ray from the conjugate branch point."""
    return (-(k + 1)) % 3


class _PairTracker:
    """Follows the two eigenvalues of one degenerating pair through the plane."""

    def __init__(self, model, tau, e_star):
        self.model = model
        w = self._eig(tau)
        idx = np.argsort(np.abs(w - e_star))[:2]
        self.values = w[idx]

    def _eig(self, tau):
        return np.linalg.eigvals(self.model.eval(tau))

    def probe(self, tau, reference):
        """Pair values at `tau` matched to `reference` (raises when ambiguous)."""
        w = self._eig(tau)
        cost = np.abs(reference[:, None] - w[None, :])
        a0, b0 = np.argmin(cost[0]), np.argmin(cost[1])
        if a0 == b0:
            rows, cols = linear_sum_assignment(cost)
            a0, b0 = cols[np.argsort(rows)]
        picked = w[[a0, b0]]
        moved = np.abs(picked - reference)
        cost[0, a0] = np.inf
        cost[1, b0] = np.inf
        if np.any(moved >= 0.5 * cost.min(axis=1)):
            raise ContinuationStepTooLarge(f"ambiguous pair matching at tau={tau}")
        return picked

    def delta(self, values):
        return values[1] - values[0]


def _degenerate_energy(model, tau):
    w = np.linalg.eigvals(model.eval(tau))
    d = np.abs(w[:, None] - w[None, :]) + np.diag(np.full(len(w), np.inf))
    i, j = np.unravel_index(np.argmin(d), d.shape)
    return 0.5 * (w[i] + w[j])


def trace(model, bp, kind="stokes", direction=0, step=1e-3, max_len=20.0,
          max_dtau=0.01, region=(-8.0, 8.0), obstacles=(), obstacle_radius=0.02,
          r0=1e-4, drift_tol=1e-6, max_steps=50_000, im_limit=None, max_phase=10.0):
    """Trace one ray of `kind` from branch point `bp`.

    Parameters
    ----------
    step : float
        Nominal step in units of ``|dtheta|``.
    max_dtau : float
        Upper bound on the distance between consecutive polyline points.
    region : (float, float)
        Real-part window; leaving it ends the trace.
    im_limit : float, optional
        Largest ``|Im tau|`` before the trace ends; defaults to the pole strip
        of tanh profiles (no limit for entire models).
    obstacles : sequence of complex
        Other singular points; entering their `obstacle_radius` ends the trace.
    r0 : float
        Starting distance from ``tau*`` along the local ray.
    max_phase : float
        The trace stops once ``|dtheta|`` exceeds this; such lines separate
        solutions whose ratio is beyond anything a transition could use.
    drift_tol : float
        Bound on the per-unit-``|dtheta|`` drift of the conserved phase part;
        steps exceeding it are halved.

    Returns
    -------
    StokesLine
        The trace ends on the real axis (status ``crossed_real_axis``), on
        region exit, at `max_len`, near a singularity or pole, or when the
        step underflows.
    """
    if kind not in KINDS:
        raise ValueError(f"kind must be one of {KINDS}")
    tau_star = complex(bp.tau)
    phi = initial_angles(bp, kind)[direction]
    rot = 1j if kind == "stokes" else 1.0
    conserved = (lambda z: z.real) if kind == "stokes" else (lambda z: z.imag)

    tracker = _PairTracker(model, tau_star + r0 * np.exp(1j * phi),
                           _degenerate_energy(model, tau_star))
    tau = tau_star + r0 * np.exp(1j * phi)
    vals = tracker.values
    de = tracker.delta(vals)
    # local expansion: dtheta = (2/3) dE (tau - tau*)
    theta = (2.0 / 3.0) * de * (tau - tau_star)
    heading = np.exp(1j * phi)
    # the sign that moves along the seeded ray
    sigma = 1.0 if (rot / de * np.conj(heading)).real >= 0 else -1.0

    gap_floor = 1e-4 * model.energy_scale()
    if im_limit is None:
        im_limit = abs(model.alpha) * np.pi / 2 if model.has_poles else np.inf
    points = [tau]
    phases = [theta]
    obstacles = [complex(o) for o in obstacles if abs(complex(o) - tau_star) > 1e-9]
    status = MAX_LENGTH
    length = 0.0
    drift = abs(conserved(theta))
    h = step
    upper = tau_star.imag > 0
    lower_plane = tau_star.imag < 0

    def rhs(z, ref):
        v = tracker.probe(z, ref)
        return sigma * rot / tracker.delta(v), v

    for _ in range(max_steps):
        near = abs(tau - tau_star)
        dmax = min(max_dtau, 0.5 * near) if near < 2 * max_dtau else max_dtau
        hh = min(h, dmax * abs(de))
        try:
            k1 = sigma * rot / de
            k2, _ = rhs(tau + 0.5 * hh * k1, vals)
            k3, _ = rhs(tau + 0.5 * hh * k2, vals)
            new = tau + hh * k3
            k4, v_end = rhs(new, vals)
            new = tau + hh * (k1 + 2 * k2 + 2 * k3 + k4) / 6
            v_end = tracker.probe(new, vals)
            v_mid = tracker.probe(0.5 * (tau + new), vals)
        except ContinuationStepTooLarge:
            h = hh / 2
            if h < 1e-14:
                status = STALLED
                break
            continue
        except SingularityProximityError:
            status = NEAR_SINGULARITY
            break
        de_end = tracker.delta(v_end)
        de_mid = tracker.delta(v_mid)
        dtheta = (new - tau) * (de + 4 * de_mid + de_end) / 6
        if abs(conserved(dtheta)) > drift_tol * hh and hh > 1e-12:
            h = hh / 2
            continue
        if abs(new - tau) > max_dtau * (1 + 1e-9):
            h = hh / 2
            continue

        crossing = (upper and new.imag <= 0) or (lower_plane and new.imag >= 0)
        if crossing:
            # land on the axis along the chord, then evaluate the phase there
            f = tau.imag / (tau.imag - new.imag)
            new = tau + f * (new - tau)
            new = complex(new.real, 0.0)
            v_end = tracker.probe(new, vals)
            v_mid = tracker.probe(0.5 * (tau + new), vals)
            de_end = tracker.delta(v_end)
            dtheta = (new - tau) * (de + 4 * tracker.delta(v_mid) + de_end) / 6

        length += abs(new - tau)
        theta = theta + dtheta
        drift = max(drift, abs(conserved(theta)))
        tau, vals, de = new, v_end, de_end
        points.append(tau)
        phases.append(theta)
        h = min(2 * hh, step) if hh < step else step

        if crossing:
            status = CROSSED
            break
        if not (region[0] <= tau.real <= region[1]):
            status = LEFT_REGION
            break
        if abs(tau.imag) > im_limit:
            status = LEFT_REGION
            break
        if any(abs(tau - o) < obstacle_radius for o in obstacles):
            status = NEAR_SINGULARITY
            break
        if model.has_poles and model.pole_distance(tau) < model.guard_radius:
            status = NEAR_SINGULARITY
            break
        if abs(de) < gap_floor:
            # another degeneracy of the same pair: the line ends there
            status = NEAR_SINGULARITY
            break
        if length >= max_len or abs(theta) > max_phase:
            status = MAX_LENGTH
            break
    else:
        status = MAX_LENGTH

    pts = np.array(points, dtype=complex)
    line = StokesLine(bp, kind, int(direction), pts, np.array(phases, dtype=complex),
                      None, float(drift), status, float(max_dtau))
    return StokesLine(bp, kind, int(direction), pts, line.phase, real_axis_crossing(line),
                      float(drift), status, float(max_dtau))


def real_axis_crossing(line):
    """Linear interpolation of the first straddle of ``Im tau = 0``, or None."""
    p = line.points
    for k in range(len(p) - 1):
        a, b = p[k].imag, p[k + 1].imag
        if a == 0 and k > 0:
            return complex(p[k].real, 0.0)
        if a * b < 0 or (b == 0 and a != 0):
            f = a / (a - b)
            return complex(p[k].real + f * (p[k + 1].real - p[k].real), 0.0)
    return None


def trace_all(model, bp, kind="stokes", **kwargs):
    """Trace the three rays of `kind` from `bp`."""
    return [trace(model, bp, kind, k, **kwargs) for k in range(3)]


def descending_stokes_line(model, bp, lines=None, **kwargs):
    """The Stokes ray of `bp` that reaches the real axis, or None.

    Without precomputed `lines` the rays are traced in order of how steeply
    they initially head towards the axis, stopping at the first crossing.
    With `lines`, the shortest crossing ray among them is returned.
    """
    if lines is None:
        toward = -np.sign(bp.tau.imag) or -1.0
        angles = initial_angles(bp, "stokes")
        for k in np.argsort(-toward * np.sin(angles)):
            line = trace(model, bp, "stokes", int(k), **kwargs)
            if line.real_crossing is not None:
                return line
        return None
    hits = [ln for ln in lines if ln.real_crossing is not None]
    if not hits:
        return None
    return min(hits, key=lambda ln: ln.length)


def _segments_intersect(p1, p2, q1, q2):
    d1, d2 = p2 - p1, q2 - q1
    den = d1.real * d2.imag - d1.imag * d2.real
    if den == 0:
        return None
    w = q1 - p1
    s = (w.real * d2.imag - w.imag * d2.real) / den
    t = (w.real * d1.imag - w.imag * d1.real) / den
    if 0 < s <= 1 and 0 < t <= 1:
        return p1 + s * d1
    return None


def pairwise_crossings(lines, skip=1e-6):
    """Intersections between traced lines from different rays.

    Returns ``(a, b, tau)`` triples with ``a < b`` indexing `lines`.  Points
    within `skip` of a shared starting branch point are ignored.
    """
    found = []
    for a in range(len(lines)):
        pa = lines[a].points
        for b in range(a + 1, len(lines)):
            pb = lines[b].points
            shared = lines[a].branch_point is lines[b].branch_point
            # bounding-box rejection first
            if (pa.real.max() < pb.real.min() or pb.real.max() < pa.real.min()
                    or pa.imag.max() < pb.imag.min() or pb.imag.max() < pa.imag.min()):
                continue
            for k in range(len(pa) - 1):
                lo_r, hi_r = sorted((pa[k].real, pa[k + 1].real))
                lo_i, hi_i = sorted((pa[k].imag, pa[k + 1].imag))
                near = np.flatnonzero(
                    (np.maximum(pb[:-1].real, pb[1:].real) >= lo_r)
                    & (np.minimum(pb[:-1].real, pb[1:].real) <= hi_r)
                    & (np.maximum(pb[:-1].imag, pb[1:].imag) >= lo_i)
                    & (np.minimum(pb[:-1].imag, pb[1:].imag) <= hi_i))
                for m in near:
                    x = _segments_intersect(pa[k], pa[k + 1], pb[m], pb[m + 1])
                    if x is None:
                        continue
                    if shared and abs(x - complex(lines[a].branch_point.tau)) < skip:
                        continue
                    found.append((a, b, complex(x)))
    return found


def write_polylines(path, index_path, lines):
    """Write polylines as ``line,re_tau,im_tau`` rows plus an index CSV."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["line", "re_tau", "im_tau"])
        for n, ln in enumerate(lines):
            for z in ln.points:
                w.writerow([n, repr(float(z.real)), repr(float(z.imag))])
    with open(index_path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["line", "i", "j", "re_tau_star", "im_tau_star", "kind", "direction",
                    "status", "re_crossing"])
        for n, ln in enumerate(lines):
            bp = ln.branch_point
            i, j = bp.levels
            w.writerow([n, i + 1, j + 1, repr(float(bp.tau.real)), repr(float(bp.tau.imag)),
                        ln.kind, ln.direction, ln.status,
                        "" if ln.real_crossing is None else repr(float(ln.real_crossing.real))])
