"""Spectra of complex symmetric Hamiltonians with continuation-consistent labels.

Level labels are 0-based and follow the ascending order of the (real)
energies on the real axis.  Off the axis a label is carried by continuation
along a straight path from the real axis that runs parallel to the branch
cuts, so the labelling realises the cut convention exactly: cuts are rays
``tau* + s * u`` (``s >= 0``) with direction ``u = exp(i (pi/2 - cut_angle))``
in the upper half plane and mirrored below.  ``cut_angle = 0`` gives the
usual vertical cuts of constant ``Re tau``.

Eigenvectors are normalised with the bilinear (unconjugated) product
``phi^T phi = 1``.
"""

from __future__ import annotations

import csv
import warnings
from dataclasses import dataclass

import numpy as np
from scipy.optimize import linear_sum_assignment

from .errors import ContinuationStepTooLarge, ContractViolation, NearDegenerateWarning

INITIAL_STEP = 0.02
MAX_STEP = 0.05
MIN_STEP = 1e-10
CLEAN_STEPS_BEFORE_GROWTH = 5


@dataclass(frozen=True, eq=False)
class SpectralFrame:
    tau: complex
    energies: np.ndarray
    states: np.ndarray
    labels: np.ndarray

    @property
    def dim(self):
        return len(self.energies)


def eigensolve_complex_symmetric(matrix, degeneracy_tol=1e-8, warn=True):
    """Eigen-decomposition of a complex symmetric matrix.

    Returns ``(energies, states)`` with states as columns normalised so that
    ``phi^T phi = 1``.  Output is ordered by (real part, imaginary part).
    A :class:`NearDegenerateWarning` is issued for eigenvalue pairs closer
    than ``degeneracy_tol * max(1, |H|)``; eigenvectors that are (nearly)
    self-orthogonal are left with unit euclidean norm instead.
    """
    m = np.asarray(matrix)
    scale = max(1.0, float(np.abs(m).max()) if m.size else 1.0)
    if np.abs(m - m.T).max(initial=0.0) > 1e-12 * scale:
        raise ContractViolation("matrix is not symmetric")
    if not np.iscomplexobj(m) or not np.any(m.imag):
        w, v = np.linalg.eigh(np.real(m))
        return w.astype(complex), v.astype(complex)

    w, v = np.linalg.eig(m)
    order = np.lexsort((w.imag, w.real))
    w, v = w[order], v[:, order]
    s = np.einsum("ij,ij->j", v, v)
    ok = np.abs(s) > 1e-6
    v[:, ok] = v[:, ok] / np.sqrt(s[ok])
    if warn:
        tol = degeneracy_tol * scale
        diff = np.abs(w[:, None] - w[None, :])
        np.fill_diagonal(diff, np.inf)
        for i, j in zip(*np.nonzero(np.triu(diff < tol))):
            warnings.warn(NearDegenerateWarning(int(i), int(j), float(diff[i, j])), stacklevel=2)
        if not ok.all() and not np.any(diff < tol):
            i = int(np.flatnonzero(~ok)[0])
            j = int(np.argmin(diff[i]))
            warnings.warn(NearDegenerateWarning(min(i, j), max(i, j), float(diff[i, j])),
                          stacklevel=2)
    return w, v


def _fix_signs(states, reference_states):
    overlap = np.einsum("ij,ij->j", reference_states, states).real
    signs = np.where(overlap < 0, -1.0, 1.0)
    return states * signs


def _real_axis_frame(model, tau):
    h = model.eval(tau)
    w, v = np.linalg.eigh(h.real)
    # deterministic real gauge: largest component positive
    idx = np.argmax(np.abs(v), axis=0)
    v = v * np.sign(v[idx, np.arange(v.shape[1])])
    n = len(w)
    return SpectralFrame(complex(tau), w.astype(complex), v.astype(complex), np.arange(n))


def match_frame(model, tau, reference, predicted=None):
    """Frame at `tau` labelled by nearest-eigenvalue matching to `reference`.

    Raises :class:`ContinuationStepTooLarge` when any level moved more than
    half the distance to its nearest competitor.
    """
    tau = complex(tau)
    h = model.eval(tau)
    w, v = eigensolve_complex_symmetric(h, warn=False)
    target = reference.energies if predicted is None else predicted
    cost = np.abs(target[:, None] - w[None, :])
    rows, cols = linear_sum_assignment(cost)
    perm = cols[np.argsort(rows)]
    e = w[perm]
    moved = np.abs(target - e)
    n = len(w)
    if n > 1:
        comp = cost.copy()
        comp[np.arange(n), perm] = np.inf
        nearest_other = comp.min(axis=1)
        if np.any(moved >= 0.5 * nearest_other):
            raise ContinuationStepTooLarge(
                f"ambiguous eigenvalue matching at tau={tau}; use a smaller step"
            )
    states = _fix_signs(v[:, perm], reference.states)
    return SpectralFrame(tau, e, states, perm)


def cut_direction(tau_imag_sign, cut_angle=0.0):
    u = np.exp(1j * (np.pi / 2 - cut_angle))
    return u if tau_imag_sign >= 0 else np.conj(u)


def base_point(tau, cut_angle=0.0):
    """Point on the real axis from which `tau` is reached parallel to the cuts."""
    tau = complex(tau)
    if tau.imag == 0:
        return complex(tau.real, 0.0)
    u = cut_direction(np.sign(tau.imag), cut_angle)
    return complex((tau - (tau.imag / u.imag) * u).real, 0.0)


def continue_along(model, taus, start, step=INITIAL_STEP, max_step=MAX_STEP,
                   min_step=MIN_STEP):
    """Continue `start` through the polyline `taus` and return a frame per node.

    The first node must equal ``start.tau``.  Steps adapt: halved on an
    ambiguous match, doubled after five clean steps, capped at `max_step`.
    """
    taus = [complex(t) for t in taus]
    frames = [start]
    cur = start
    prev = None
    h = step
    clean = 0
    for target in taus[1:]:
        while cur.tau != target:
            dist = abs(target - cur.tau)
            ds = min(h, dist)
            nxt_tau = target if ds >= dist else cur.tau + (target - cur.tau) * (ds / dist)
            pred = None
            if prev is not None and prev.tau != cur.tau:
                slope = (cur.energies - prev.energies) / (cur.tau - prev.tau)
                pred = cur.energies + slope * (nxt_tau - cur.tau)
            try:
                nxt = match_frame(model, nxt_tau, cur, pred)
            except ContinuationStepTooLarge:
                h = ds / 2
                clean = 0
                if h < min_step:
                    raise
                continue
            prev, cur = cur, nxt
            clean += 1
            if clean >= CLEAN_STEPS_BEFORE_GROWTH:
                h = min(2 * h, max_step)
                clean = 0
        frames.append(cur)
    return frames


def frame_at(model, tau, reference=None, cut_angle=0.0):
    """Labelled spectral frame at `tau`.

    Without a reference, real `tau` is labelled by ascending energy and
    complex `tau` by continuation from :func:`base_point`.  With a reference
    the frame is matched to it directly (the caller controls the step).
    """
    tau = complex(tau)
    if reference is not None:
        return match_frame(model, tau, reference)
    if tau.imag == 0:
        return _real_axis_frame(model, tau.real)
    b = base_point(tau, cut_angle)
    return continue_along(model, [b, tau], _real_axis_frame(model, b.real))[-1]


def circuit(model, center, radius, start_frame=None, turns=1, n_points=400, cut_angle=0.0):
    """Continue a frame around a circle of `radius` about `center`, `turns` times.

    Starts at ``center - i*radius`` (directly below the centre for upper-half
    points) and returns ``(start_frame, end_frame)``.
    """
    center = complex(center)
    phi0 = -np.pi / 2 if center.imag >= 0 else np.pi / 2
    angles = phi0 + np.linspace(0.0, 2 * np.pi * turns, n_points * turns + 1)
    taus = center + radius * np.exp(1j * angles)
    if start_frame is None:
        start_frame = frame_at(model, taus[0], cut_angle=cut_angle)
    frames = continue_along(model, taus, start_frame, step=radius * 0.05,
                            max_step=radius * 0.1)
    return frames[0], frames[-1]


def gap(frame, i, j):
    """``E_j - E_i`` under the frame's labelling."""
    n = frame.dim
    if i == j or not (0 <= i < n and 0 <= j < n):
        raise ValueError(f"invalid level pair ({i}, {j}) for dimension {n}")
    return frame.energies[j] - frame.energies[i]


def level_curves(model, taus):
    """Real-axis energies, one row per grid point."""
    return np.array([_real_axis_frame(model, float(t)).energies.real for t in taus])


def write_level_curves(path, model, taus):
    rows = level_curves(model, taus)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["tau"] + [f"E{n + 1}" for n in range(model.dim)])
        for t, row in zip(taus, rows):
            w.writerow([repr(float(t))] + [repr(float(x)) for x in row])
    return rows
