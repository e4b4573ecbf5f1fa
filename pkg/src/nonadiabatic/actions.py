"""Branch-point actions and phase integrals by contour quadrature.

The branch-point action of a degeneracy of levels ``(i, j)`` at ``tau*`` is

    lambda = | Im int_{Re tau*}^{tau*} (E_i - E_j) dtau |

along the straight path from the real axis parallel to the branch cuts
(vertical for the default cut placement).  The last tenth of the path uses
``tau = tau* - u w**2`` so the square-root endpoint behaviour becomes a
smooth integrand in ``w``.  Both pieces use composite Gauss-Legendre rules,
refined by doubling the panel count until two successive estimates agree.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass

import numpy as np

from .errors import (
    ActionPathBlocked,
    ContinuationStepTooLarge,
    ContractViolation,
    SingularityProximityError,
)
from .spectral import base_point, continue_along, cut_direction, frame_at

log = logging.getLogger(__name__)

GL_ORDER = 12
ENDPOINT_FRACTION = 0.1
_GL_X, _GL_W = np.polynomial.legendre.leggauss(GL_ORDER)


@dataclass(frozen=True)
class ActionEstimate:
    value: float
    error: float
    deformed: bool
    integral: complex


def _panel_nodes(a, b, panels):
    """Gauss-Legendre nodes and weights on ``[a, b]`` split into `panels`."""
    edges = np.linspace(a, b, panels + 1)
    half = 0.5 * np.diff(edges)
    mid = 0.5 * (edges[1:] + edges[:-1])
    x = (mid[:, None] + half[:, None] * _GL_X[None, :]).ravel()
    w = (half[:, None] * _GL_W[None, :]).ravel()
    return x, w


def _values_along(model, taus, start, fn):
    """Continue `start` through `taus` and evaluate `fn(frame)` at each node."""
    frames = continue_along(model, [start.tau] + list(taus), start)[1:]
    return np.array([fn(f) for f in frames])


def _polyline_rule(vertices, panels_per_unit):
    """Quadrature nodes, weights (including ``dtau/ds``) along a polyline."""
    taus, weights = [], []
    for a, b in zip(vertices[:-1], vertices[1:]):
        length = abs(b - a)
        if length == 0:
            continue
        n = max(1, int(np.ceil(length * panels_per_unit)))
        s, w = _panel_nodes(0.0, length, n)
        d = (b - a) / length
        taus.append(a + s * d)
        weights.append(w * d)
    if not taus:
        return np.zeros(0, complex), np.zeros(0, complex)
    return np.concatenate(taus), np.concatenate(weights)


def _integrate(model, vertices, start, fn, endpoint=None, rtol=1e-10, max_doublings=6):
    """Integrate ``fn(frame) dtau`` along a polyline, optionally with endpoint care.

    `endpoint` is ``(tau_star, u, W)``: the final piece from ``tau_star - u W**2``
    to ``tau_star`` is integrated in ``w`` with ``tau = tau_star - u w**2``.
    Returns ``(value, error_estimate)``.
    """
    prev = None
    panels = 8.0
    for _ in range(max_doublings + 1):
        taus, wts = _polyline_rule(vertices, panels)
        if endpoint is not None:
            tau_star, u, big_w = endpoint
            nw = max(2, int(np.ceil(panels * big_w)))
            w, ww = _panel_nodes(big_w, 0.0, nw)
            # w runs from W down to 0; the weights carry the sign of dw
            taus = np.concatenate([taus, tau_star - u * w ** 2])
            wts = np.concatenate([wts, -2.0 * u * w * ww])
        vals = _values_along(model, taus, start, fn)
        total = complex(np.sum(vals * wts))
        if prev is not None:
            err = abs(total - prev)
            if err <= rtol * max(abs(total), 1e-300):
                return total, err
        prev = total
        panels *= 2
    return prev, abs(total - prev) if prev is not None else np.inf


def _detour(path_a, path_b, obstacles, radius):
    """Polyline from `path_a` to `path_b` dodging `obstacles` by semicircles.

    Each semicircle bulges away from its obstacle, so every branch point
    stays on the side of the straight segment it started on.  A point lying
    on the segment ends up on the right of the path.
    """
    d = path_b - path_a
    length = abs(d)
    e = d / length
    hits = []
    for o in obstacles:
        z = (o - path_a) * np.conj(e)
        s, off = z.real, z.imag
        if abs(off) < radius and radius < s < length - radius:
            hits.append((s, -1.0 if off > 0 else 1.0))
        elif abs(off) < radius and (s >= length - radius or s <= radius) and 0 <= s <= length:
            raise ActionPathBlocked(f"branch point at {o} too close to an end of the path")
    if not hits:
        return [path_a, path_b], False
    hits.sort()
    for (s0, a0), (s1, a1) in zip(hits[:-1], hits[1:]):
        if a0 != a1 and s1 - s0 < 2 * radius:
            raise ActionPathBlocked("branch points on both sides of the path too close together")
    verts = [path_a]
    for s, away in hits:
        c = path_a + s * e
        normal = 1j * e * away
        for ang in np.linspace(np.pi, 0.0, 9):
            verts.append(c + radius * (np.cos(ang) * (-e) + np.sin(ang) * normal))
    verts.append(path_b)
    return verts, True


def _shifted_start(base, mid, obstacles, radius):
    """Move the start along the real axis, away from obstacles crowding it.

    The real-axis piece adds nothing to ``Im int``, and every crowding point
    stays on the side of the path it was on.  Points caught between the old
    and new start are not allowed.
    """
    near = [o for o in obstacles if abs(o - base) < 1.5 * radius]
    if not near:
        raise ActionPathBlocked(f"no room to start the path at {base}")
    left = [o for o in near if o.real < base.real]
    right = [o for o in near if o.real >= base.real]
    if left and right:
        raise ActionPathBlocked(f"branch points on both sides of the start at {base}")
    for k in range(4):
        if left:
            start = complex(max(o.real for o in left) + radius * 2 ** k, 0.0)
        else:
            start = complex(min(o.real for o in right) - radius * 2 ** k, 0.0)
        try:
            verts, _ = _detour(start, mid, obstacles, radius)
        except ActionPathBlocked:
            continue
        tri = np.array([base, start, mid])
        for o in obstacles:
            if o not in near and _inside(o, tri):
                raise ActionPathBlocked(f"branch point at {o} between shifted paths")
        return start, verts
    raise ActionPathBlocked(f"branch points crowd the start of the path at {base}")


def _inside(z, tri):
    a, b, c = tri
    cross = [((q - p) * np.conj(z - p)).imag for p, q in ((a, b), (b, c), (c, a))]
    return all(x > 0 for x in cross) or all(x < 0 for x in cross)


def action_estimate(model, bp, cut_angle=0.0, obstacles=(), guard=0.02, rtol=1e-10):
    """Branch-point action with error estimate; see :func:`branch_action`."""
    tau_star = complex(bp.tau)
    if tau_star.imag == 0:
        raise ContractViolation("branch point lies on the real axis")
    i, j = bp.levels
    u = cut_direction(np.sign(tau_star.imag), cut_angle)
    base = base_point(tau_star, cut_angle)
    length = abs(tau_star - base)
    mid = tau_star - ENDPOINT_FRACTION * length * u
    obstacles = [complex(o) for o in obstacles if abs(complex(o) - tau_star) > 1e-9]
    try:
        try:
            verts, deformed = _detour(base, mid, obstacles, guard)
        except ActionPathBlocked:
            if abs(base.imag) > 0 or not any(abs(o - base) < 1.5 * guard for o in obstacles):
                raise
            base, verts = _shifted_start(base, mid, obstacles, guard)
            deformed = True
        if any(abs(o - tau_star) < guard or abs(o - mid) < guard for o in obstacles):
            raise ActionPathBlocked(f"another branch point within {guard} of the path end")
        start = frame_at(model, base)
        total, err = _integrate(model, verts, start,
                                lambda f: f.energies[i] - f.energies[j],
                                endpoint=(tau_star, u, np.sqrt(ENDPOINT_FRACTION * length)),
                                rtol=rtol)
    except (SingularityProximityError, ContinuationStepTooLarge) as exc:
        raise ActionPathBlocked(f"cannot integrate to {tau_star}: {exc}") from exc
    if deformed:
        log.info("action path for %r deformed around nearby branch points", bp)
    return ActionEstimate(abs(total.imag), err, deformed, total)


def branch_action(model, bp, cut_angle=0.0, obstacles=(), guard=0.02, rtol=1e-10):
    """Action ``lambda = |Im int (E_i - E_j) dtau|`` from the real axis to `bp`.

    Parameters
    ----------
    obstacles : sequence of complex
        Other branch points; the path detours around any within `guard`.
    """
    return action_estimate(model, bp, cut_angle, obstacles, guard, rtol).value


def phase_integral(model, n, tau_a, tau_b, path=None, start_frame=None, cut_angle=0.0,
                   rtol=1e-12):
    """``int E_n dtau`` from `tau_a` to `tau_b` along a polyline.

    `path` lists intermediate vertices.  Labels at `tau_a` follow the cut
    convention unless `start_frame` is given, and are continued along the path.
    """
    tau_a, tau_b = complex(tau_a), complex(tau_b)
    verts = [tau_a] + [complex(p) for p in (path or [])] + [tau_b]
    start = start_frame if start_frame is not None else frame_at(model, tau_a,
                                                                 cut_angle=cut_angle)
    try:
        total, _ = _integrate(model, verts, start, lambda f: f.energies[n], rtol=rtol)
    except (SingularityProximityError, ContinuationStepTooLarge) as exc:
        raise ActionPathBlocked(str(exc)) from exc
    return total


class ActionTable:
    """Actions keyed by ``(i, j, key)`` with ``key`` the branch-point position key."""

    def __init__(self):
        self.entries = {}

    def add(self, bp, value):
        if not value > 0:
            raise ContractViolation(f"non-positive action {value} for {bp!r}")
        self.entries[(*bp.levels, bp.key())] = float(value)

    def get(self, bp):
        hit = self.entries.get((*bp.levels, bp.key()))
        if hit is None and bp.partner is not None:
            hit = self.entries.get((*bp.levels, bp.partner.key()))
        if hit is None:
            raise KeyError(bp)
        return hit

    def __len__(self):
        return len(self.entries)

    @classmethod
    def compute(cls, model, points, cut_angle=0.0, guard=0.02):
        """Actions of all `points` (conjugate partners reuse the upper value).

        Each point also gets its ``action`` attribute filled in.
        """
        table = cls()
        taus = [p.tau for p in points]
        upper = [p for p in points if p.tau.imag > 0]
        for p in upper:
            lam = branch_action(model, p, cut_angle, obstacles=taus, guard=guard)
            table.add(p, lam)
            object.__setattr__(p, "action", lam)
            if p.partner is not None:
                table.add(p.partner, lam)
                object.__setattr__(p.partner, "action", lam)
        for p in points:
            if p.action is None:
                lam = branch_action(model, p, cut_angle, obstacles=taus, guard=guard)
                table.add(p, lam)
                object.__setattr__(p, "action", lam)
        return table

    def write(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["i", "j", "re_tau", "im_tau", "lambda"])
            for (i, j, key), lam in sorted(self.entries.items(), key=lambda kv: kv[0][2]):
                w.writerow([i + 1, j + 1, repr(float(key[0])), repr(float(key[1])),
                            repr(float(lam))])
