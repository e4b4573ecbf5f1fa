import warnings

import numpy as np
import pytest

from nonadiabatic.branchpoints import BranchPoint
from nonadiabatic.errors import IndeterminateVerdictWarning
from nonadiabatic.sequencer import (
    ALLOWED,
    FORBIDDEN,
    TransitionSequence,
    apply_empirical_rule,
    apply_topological_rule,
    enumerate_sequences,
    heading_monodromy_check,
    max_safe_cut_angle,
    minimal_action,
    predict,
    swept_points,
    upper_key,
    write_sequence_table,
)
from nonadiabatic.stokes import CROSSED, StokesLine


def point(levels, tau, action):
    up = BranchPoint(tuple(levels), complex(tau), 1.0, 0.0, action=action)
    low = up.conjugate()
    object.__setattr__(up, "partner", low)
    return up


def vertical_line(bp):
    """Straight descending Stokes line from `bp` to the real axis."""
    y = np.linspace(bp.tau.imag, 0.0, 20)
    pts = bp.tau.real + 1j * y
    return StokesLine(bp, "stokes", 0, pts, np.zeros(20), complex(bp.tau.real, 0.0), 0.0,
                      CROSSED)


def slanted_line(bp, dx):
    y = np.linspace(bp.tau.imag, 0.0, 20)
    pts = bp.tau.real + dx * (1 - y / bp.tau.imag) + 1j * y
    return StokesLine(bp, "stokes", 0, pts, np.zeros(20), complex(pts[-1].real, 0.0), 0.0,
                      CROSSED)


def lines_for(points, maker=vertical_line):
    return {upper_key(p): maker(p) for p in points}


def test_hwang_pechukas_enumeration():
    pts = [point((0, 1), -1 + 0.5j, 0.2), point((1, 2), 1 + 0.5j, 0.3),
           point((0, 2), 0 + 1.5j, 1.0)]
    seqs = enumerate_sequences(pts, 0, 2)
    chains = sorted(tuple(bp.levels for bp in s.chain) for s in seqs)
    assert chains == [((0, 1), (1, 2)), ((0, 2),)]
    s = next(s for s in seqs if len(s.chain) == 2)
    assert s.total_action == 0.2 + 0.3


def test_identity_transition():
    seqs = enumerate_sequences([], 3, 3)
    assert len(seqs) == 1 and seqs[0].chain == [] and seqs[0].total_action == 0.0


def test_two_levels_single_candidate():
    pts = [point((0, 1), 1j, np.pi / 4)]
    up = enumerate_sequences(pts, 0, 1)
    down = enumerate_sequences(pts, 1, 0)
    assert len(up) == 1 and up[0].chain[0].tau.imag > 0
    assert len(down) == 1 and down[0].chain[0].tau.imag < 0


def test_missing_pair_report():
    pts = [point((0, 1), 1j, 0.5)]
    seqs, missing = enumerate_sequences(pts, 0, 2, return_missing=True)
    assert seqs == []
    assert (1, 2) in missing and (0, 2) in missing


def test_chain_invariants():
    pts = [point((0, 1), -1 + 0.5j, 0.2), point((1, 2), 1 + 0.5j, 0.3),
           point((2, 3), 2 + 0.4j, 0.1), point((1, 3), 3 + 0.9j, 0.6)]
    for n, m in [(0, 3), (3, 0)]:
        for s in enumerate_sequences(pts, n, m):
            levels = [n]
            for bp in s.chain:
                a, b = bp.levels
                assert levels[-1] in (a, b)
                levels.append(b if levels[-1] == a else a)
            assert levels[-1] == m
            assert np.all(np.sign(np.diff(levels)) == np.sign(m - n))
            assert s.total_action == sum(bp.action for bp in s.chain)


def test_figure5_allowed():
    a, b = point((0, 1), 1j, 0.2), point((1, 2), 1 + 0.5j, 0.3)
    s = TransitionSequence(0, 2, [a, b], 0.5)
    assert apply_topological_rule(s, lines_for([a, b])) == ALLOWED


def test_figure5_forbidden():
    a, b = point((0, 1), 1j, 0.2), point((1, 2), -1 + 0.5j, 0.3)
    s = TransitionSequence(0, 2, [a, b], 0.5)
    assert apply_topological_rule(s, lines_for([a, b])) == FORBIDDEN


def test_boundary_uses_cut_above_and_stokes_line_below():
    a = point((0, 1), 1j, 0.2)
    lines = lines_for([a], lambda p: slanted_line(p, 2.0))
    # below Im a the boundary is the slanted Stokes line (Re 1 at height 0.5)
    low = point((1, 2), 0.5 + 0.5j, 0.3)
    s = TransitionSequence(0, 2, [a, low], 0.5)
    assert apply_topological_rule(s, lines) == FORBIDDEN
    # above Im a the boundary is the vertical cut at Re 0
    high = point((1, 2), 0.5 + 1.5j, 0.3)
    s = TransitionSequence(0, 2, [a, high], 0.5)
    assert apply_topological_rule(s, lines) == ALLOWED


def test_single_entry_chain_allowed():
    a = point((0, 1), 1j, 0.2)
    s = TransitionSequence(0, 1, [a], 0.2)
    assert apply_topological_rule(s, {}) == ALLOWED


def test_missing_line_is_indeterminate():
    a, b = point((0, 1), 1j, 0.2), point((1, 2), 1 + 0.5j, 0.3)
    s = TransitionSequence(0, 2, [a, b], 0.5)
    with pytest.warns(IndeterminateVerdictWarning):
        verdict = apply_topological_rule(s, {})
    assert verdict == FORBIDDEN and s.indeterminate


def test_touching_boundary_is_indeterminate():
    a, b = point((0, 1), 1j, 0.2), point((1, 2), 0 + 0.5j, 0.3)
    s = TransitionSequence(0, 2, [a, b], 0.5)
    with pytest.warns(IndeterminateVerdictWarning):
        apply_topological_rule(s, lines_for([a, b]))
    assert s.indeterminate


def test_minimal_prefers_cheaper_allowed_chain():
    pts = [point((0, 1), -1 + 0.5j, 0.2), point((1, 2), 1 + 0.5j, 0.3),
           point((0, 2), 0 + 1.5j, 1.0)]
    preds = predict(pts, 3, lines_for(pts))
    best = preds[(0, 2)].minimal
    assert [bp.levels for bp in best.chain] == [(0, 1), (1, 2)]
    assert best.is_minimal


def test_reversal_asymmetry_uses_direct_point():
    pts = [point((0, 1), -1 + 0.5j, 0.2), point((1, 2), 1 + 0.5j, 0.3),
           point((0, 2), 0 + 1.5j, 1.0)]
    preds = predict(pts, 3, lines_for(pts))
    down = preds[(2, 0)].minimal
    assert [bp.levels for bp in down.chain] == [(0, 2)]
    assert down.chain[0].tau.imag < 0
    assert preds[(0, 2)].action != preds[(2, 0)].action


def test_tie_break_shorter_chain():
    s1 = TransitionSequence(0, 2, [point((0, 2), 1j, 0.5)], 0.5)
    s2 = TransitionSequence(0, 2, [point((0, 1), 1j, 0.25), point((1, 2), 2j, 0.25)], 0.5)
    for s in (s1, s2):
        s.verdict_topological = ALLOWED
    assert minimal_action(0, 2, [s2, s1]) is s1


def test_no_allowed_sequence():
    s = TransitionSequence(0, 2, [], 0.0, verdict_topological=FORBIDDEN)
    assert minimal_action(0, 2, [s]) is None


def test_empirical_rule():
    a, b = point((0, 1), 1j, 0.2), point((1, 2), -1 + 0.5j, 0.3)
    assert apply_empirical_rule(TransitionSequence(0, 2, [a, b], 0.5)) == FORBIDDEN
    assert apply_empirical_rule(TransitionSequence(0, 2, [b, a], 0.5)) == ALLOWED


def test_heading_monodromy():
    assert heading_monodromy_check()
    assert not heading_monodromy_check(m_entry=1j)
    assert not heading_monodromy_check(cut_factor=1)


def test_goe_verdicts_cut_invariant(goe, goe_points):
    from nonadiabatic.stokes import descending_stokes_line
    upper = [p for p in goe_points if p.tau.imag > 0]
    lines = {upper_key(p): descending_stokes_line(goe, p) for p in upper}
    neg, pos = max_safe_cut_angle(goe_points)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        ref = predict(goe_points, goe.dim, lines, cut_angle=0.0)
        for angle in (0.5 * pos, -0.5 * neg):
            assert swept_points(goe_points, angle) == []
            moved = predict(goe_points, goe.dim, lines, cut_angle=angle)
            for key in ref:
                assert ref[key].action == moved[key].action
                va = [s.verdict_topological for s in ref[key].sequences]
                vb = [s.verdict_topological for s in moved[key].sequences]
                assert va == vb


def test_sweeping_cut_is_reported():
    a, b = point((0, 1), 1j, 0.2), point((1, 2), 0.1 + 2j, 0.3)
    assert swept_points([a, b], 0.2) == [(a, b)]
    assert swept_points([a, b], -0.2) == []
    with pytest.warns(IndeterminateVerdictWarning):
        predict([a, b], 3, lines_for([a, b]), cut_angle=0.2)


def test_sequence_table(tmp_path):
    pts = [point((0, 1), 1j, 0.5)]
    preds = predict(pts, 2, lines_for(pts))
    write_sequence_table(tmp_path / "s.csv", preds)
    rows = (tmp_path / "s.csv").read_text().splitlines()
    assert rows[0].startswith("n,m,chain,lambda_theory")
    assert rows[1].startswith('1,2,"(1,2)@0.000000",0.5,allowed')
