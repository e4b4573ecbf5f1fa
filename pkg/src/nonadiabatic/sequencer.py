"""Transition sequences through chains of branch points.

An upward transition ``n -> m`` may proceed through a chain of branch points
``(n, n1), (n1, n2), ..., (nk, m)`` with strictly increasing level indices.
The chain is allowed by the topological rule when every point after the
first lies above the real axis and strictly to the right of the boundary
formed by the previous point's branch cut (above that point) and its
descending Stokes line (below it).  Downward transitions use the
lower-half-plane points; they are tested by reflecting all geometry into the
upper half plane and applying the same test to the chain in time order.

The empirical rule asks only that ``Re tau*`` ascend along the chain.
"""

from __future__ import annotations

import csv
import itertools
import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from .errors import IndeterminateVerdictWarning
from .spectral import cut_direction
from .stokes import BranchCut

ALLOWED = "allowed"
FORBIDDEN = "forbidden"
BOUNDARY_TOL = 1e-9


@dataclass
class TransitionSequence:
    from_level: int
    to_level: int
    chain: list
    total_action: float
    verdict_topological: str | None = None
    verdict_empirical: str | None = None
    is_minimal: bool = False
    indeterminate: bool = False
    notes: list = field(default_factory=list)

    @property
    def upward(self):
        return self.to_level > self.from_level

    def describe(self):
        """Chain as ``(i,j)@Re`` items with 1-based levels, joined by ``;``."""
        return ";".join(f"({bp.levels[0] + 1},{bp.levels[1] + 1})@{bp.tau.real:.6f}"
                        for bp in self.chain)


@dataclass
class PairPrediction:
    """Outcome for one ordered level pair."""

    from_level: int
    to_level: int
    sequences: list
    minimal: TransitionSequence | None
    missing_pairs: list = field(default_factory=list)

    @property
    def action(self):
        return None if self.minimal is None else self.minimal.total_action

    @property
    def rules_agree(self):
        return all(s.verdict_topological == s.verdict_empirical for s in self.sequences)


def upper_key(bp):
    """Position key of the upper-half-plane member of a conjugate pair."""
    return (round(bp.tau.real, 9), round(abs(bp.tau.imag), 9), bp.levels)


def enumerate_sequences(branch_points, n, m, return_missing=False):
    """All monotone chains from level `n` to level `m`.

    Uses upper-half-plane points for ``m > n`` and lower-half-plane points
    (given directly or as conjugate partners) for ``m < n``.  ``n == m`` gives
    one empty chain.  With `return_missing` the level pairs lacking any branch
    point are also returned.
    """
    if n == m:
        out = [TransitionSequence(n, m, [], 0.0)]
        return (out, []) if return_missing else out
    up = m > n
    pool = {}
    seen = set()
    for bp in branch_points:
        for q in (bp, bp.partner):
            if q is None or (q.tau.imag > 0) != up:
                continue
            key = (round(q.tau.real, 9), round(q.tau.imag, 9), tuple(q.levels))
            if key in seen:
                continue
            seen.add(key)
            pool.setdefault(tuple(q.levels), []).append(q)
    lo, hi = min(n, m), max(n, m)
    inner = list(range(lo + 1, hi))
    sequences = []
    missing = set()
    for r in range(len(inner) + 1):
        for mids in itertools.combinations(inner, r):
            levels = [lo, *mids, hi]
            if not up:
                levels = levels[::-1]
            steps = [tuple(sorted(p)) for p in zip(levels[:-1], levels[1:])]
            choices = [pool.get(s, []) for s in steps]
            for s, c in zip(steps, choices):
                if not c:
                    missing.add(s)
            if not all(choices):
                continue
            for chain in itertools.product(*choices):
                total = float(sum(bp.action for bp in chain))
                sequences.append(TransitionSequence(n, m, list(chain), total))
    if return_missing:
        return sequences, sorted(missing)
    return sequences


def _boundary_re(prev, y, stokes_lines, cut_angle):
    """``Re tau`` of `prev`'s boundary at height `y` (upper-half geometry)."""
    top = abs(prev.tau.imag)
    upper_prev = complex(prev.tau.real, top)
    if y >= top:
        return BranchCut(prev, upper_prev, complex(cut_direction(1, cut_angle))).re_at_height(y)
    line = stokes_lines.get(upper_key(prev))
    if line is None:
        return None
    if line.points[0].imag < 0:
        line = line.conjugate()
    re = line.re_at_height(y)
    if re is None and top - y < 2 * abs(line.points[0] - upper_prev):
        return upper_prev.real
    return re


def apply_topological_rule(sequence, stokes_lines, cut_angle=0.0, tol=BOUNDARY_TOL):
    """Set and return the topological verdict of `sequence`.

    `stokes_lines` maps :func:`upper_key` of each branch point to its
    descending Stokes line (either half plane).  Missing or too short lines
    and boundary-touching points give an indeterminate verdict, reported by
    an :class:`IndeterminateVerdictWarning` and treated as forbidden.
    """
    verdict = ALLOWED
    for prev, cur in zip(sequence.chain[:-1], sequence.chain[1:]):
        y = abs(cur.tau.imag)
        if y <= 0:
            verdict = FORBIDDEN
            break
        boundary = _boundary_re(prev, y, stokes_lines, cut_angle)
        if boundary is None:
            sequence.indeterminate = True
            sequence.notes.append(f"no boundary for {prev!r} at height {y:.6g}")
            verdict = FORBIDDEN
            break
        diff = cur.tau.real - boundary
        if abs(diff) <= tol:
            sequence.indeterminate = True
            sequence.notes.append(f"{cur!r} touches the boundary of {prev!r}")
            verdict = FORBIDDEN
            break
        if diff < 0:
            verdict = FORBIDDEN
            break
    if sequence.indeterminate:
        warnings.warn(IndeterminateVerdictWarning(
            f"{sequence.from_level}->{sequence.to_level} [{sequence.describe()}]: "
            + "; ".join(sequence.notes)), stacklevel=2)
    sequence.verdict_topological = verdict
    return verdict


def apply_empirical_rule(sequence):
    """Allowed iff ``Re tau*`` strictly ascends along the chain."""
    re = [bp.tau.real for bp in sequence.chain]
    ok = all(b > a for a, b in zip(re[:-1], re[1:]))
    sequence.verdict_empirical = ALLOWED if ok else FORBIDDEN
    return sequence.verdict_empirical


def minimal_action(n, m, sequences, rule="topological"):
    """Allowed sequence of least total action, or None.

    Ties go to the shorter chain, then to the lexicographically smaller list
    of ``Re tau*``.  The winner gets ``is_minimal = True``.
    """
    attr = "verdict_topological" if rule == "topological" else "verdict_empirical"
    allowed = [s for s in sequences
               if s.from_level == n and s.to_level == m and getattr(s, attr) == ALLOWED]
    if not allowed:
        return None
    best = min(allowed, key=lambda s: (s.total_action, len(s.chain),
                                       [bp.tau.real for bp in s.chain]))
    for s in sequences:
        s.is_minimal = s is best
    return best


def swept_points(branch_points, cut_angle):
    """Pairs ``(a, b)`` where turning `a`'s cut from vertical to `cut_angle` passes `b`.

    Verdicts and actions are unchanged by a cut move only when no branch
    point lies between the old and the new cut; a swept point would need
    relabelling onto the other sheet, which is not attempted.
    """
    t = math.tan(cut_angle)
    ups = [bp for bp in branch_points if bp.tau.imag > 0]
    hits = []
    for a in ups:
        for b in ups:
            dy = b.tau.imag - a.tau.imag
            if b is a or dy <= 0:
                continue
            shift = t * dy
            dx = b.tau.real - a.tau.real
            if min(0.0, shift) <= dx <= max(0.0, shift):
                hits.append((a, b))
    return hits


def max_safe_cut_angle(branch_points):
    """Largest ``|cut_angle|`` sweeping no branch point, per sign ``(negative, positive)``."""
    ups = [bp for bp in branch_points if bp.tau.imag > 0]
    pos, neg = math.pi / 2, math.pi / 2
    for a in ups:
        for b in ups:
            dy = b.tau.imag - a.tau.imag
            if b is a or dy <= 0:
                continue
            ang = math.atan2(b.tau.real - a.tau.real, dy)
            if ang >= 0:
                pos = min(pos, ang)
            else:
                neg = min(neg, -ang)
    return neg, pos


def predict(branch_points, dim, stokes_lines, cut_angle=0.0):
    """Predictions for every ordered pair ``n != m`` of a `dim`-level system."""
    if cut_angle and swept_points(branch_points, cut_angle):
        warnings.warn(IndeterminateVerdictWarning(
            f"cut angle {cut_angle} sweeps branch points; verdicts may differ from the "
            "vertical-cut ones"), stacklevel=2)
    out = {}
    for n, m in itertools.permutations(range(dim), 2):
        seqs, missing = enumerate_sequences(branch_points, n, m, return_missing=True)
        for s in seqs:
            apply_topological_rule(s, stokes_lines, cut_angle)
            apply_empirical_rule(s)
        best = minimal_action(n, m, seqs)
        out[(n, m)] = PairPrediction(n, m, seqs, best, missing)
    return out


def heading_monodromy_check(m_entry=-1j, cut_factor=1j):
    """Whether ``cut_factor * T M T M T M`` is exactly the 2x2 identity.

    ``M = [[1, 0], [m_entry, 1]]`` is the Stokes-line connection matrix and
    ``T`` swaps the two levels across a branch cut.
    """
    m = np.array([[1, 0], [m_entry, 1]], dtype=complex)
    t = np.array([[0, 1], [1, 0]], dtype=complex)
    prod = cut_factor * (t @ m @ t @ m @ t @ m)
    return bool(np.array_equal(prod, np.eye(2, dtype=complex)))


def write_sequence_table(path, predictions):
    """One row per ordered pair: levels, minimal chain, action and verdicts."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["n", "m", "chain", "lambda_theory", "verdict", "empirical_rule_agrees",
                    "n_candidates"])
        for (n, m), p in sorted(predictions.items()):
            best = p.minimal
            w.writerow([n + 1, m + 1, "" if best is None else best.describe(),
                        "" if best is None else repr(float(best.total_action)),
                        "no_prediction" if best is None else ALLOWED,
                        p.rules_agree, len(p.sequences)])
