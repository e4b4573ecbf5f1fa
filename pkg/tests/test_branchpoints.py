import csv

import numpy as np
import pytest

from nonadiabatic.branchpoints import (
    BranchPoint,
    Candidate,
    find_branch_points,
    gap_exponent,
    pair_and_dedupe,
    refine,
    scan_grid,
    write_branch_table,
)
from nonadiabatic.errors import RefinementFailed
from nonadiabatic.model import make_model


def test_lz_scan_single_candidate(lz):
    cands = scan_grid(lz, region=(-2, 2, 0, 2), nx=40, ny=40, real_axis_seeds=False)
    assert len(cands) == 1
    c = cands[0]
    assert (c.i, c.j) == (0, 1)
    assert abs(c.tau - 1j) < 0.1


def test_constant_hamiltonian_has_no_candidates():
    h1 = np.diag([-1.0, 0.2, 1.5])
    m = make_model("custom_pair", h1=h1, h2=np.zeros((3, 3)), form="linear")
    assert scan_grid(m, region=(-3, 3, 0, 2), nx=20, ny=10) == []


def test_lz_refine_closed_form(lz):
    bp = refine(lz, Candidate(0, 1, 0.1 + 0.9j))
    assert abs(bp.tau - 1j) < 1e-10
    assert bp.levels == (0, 1)
    # E_2 - E_1 = sqrt(tau^2 + 1) ~ sqrt(2i) (tau - i)^(1/2)
    assert abs(bp.local_coeff ** 2 - 2j) < 1e-3


def test_lz_gap_ratio_constant_on_probe_circle(lz):
    bp = refine(lz, Candidate(0, 1, 0.95j))
    h = 1e-3 * np.exp(1j * np.linspace(0, 2 * np.pi, 8, endpoint=False))
    vals = [abs((bp.tau + x) ** 2 + 1) / abs(x) for x in h]
    assert np.ptp(vals) / np.mean(vals) < 0.01


def test_refine_is_idempotent(lz):
    bp = refine(lz, Candidate(0, 1, 0.9j))
    again = refine(lz, Candidate(0, 1, bp.tau))
    assert abs(again.tau - bp.tau) < 1e-12


def test_refine_failure_far_from_degeneracy():
    m = make_model("custom_pair", h1=np.diag([-1.0, 1.0]), h2=np.zeros((2, 2)), alpha=2.0)
    with pytest.raises(RefinementFailed):
        refine(m, Candidate(0, 1, 0.3 + 0.5j))


def test_lz_pairing(lz):
    pts, _ = find_branch_points(lz, region=(-2, 2, 0, 2))
    assert len(pts) == 1
    up = pts[0]
    assert abs(up.tau - 1j) < 1e-10
    assert abs(up.partner.tau + 1j) < 1e-10
    assert up.partner.partner is up


def test_dedupe_merges_duplicates(lz):
    a = refine(lz, Candidate(0, 1, 0.9j))
    b = refine(lz, Candidate(0, 1, 0.05 + 1.02j))
    out = pair_and_dedupe([a, b])
    assert sum(p.tau.imag > 0 for p in out) == 1


def test_goe_invariants(goe, goe_points):
    scale = goe.energy_scale()
    reals = [p.tau.real for p in goe_points]
    assert reals == sorted(reals)
    for p in goe_points:
        assert p.tau.imag != 0
        assert p.levels[0] < p.levels[1]
        assert p.residual_gap <= 1e-6 * scale
        assert p.partner is not None
        assert abs(p.partner.tau - np.conj(p.tau)) <= 1e-8
        assert p.partner.levels == p.levels


def test_goe_against_multiprecision_oracle(goe_points, oracles):
    upper = [p for p in goe_points if p.tau.imag > 0]
    for row in oracles["goe_branch_points"]:
        tau = complex(*row["tau"])
        best = min(upper, key=lambda p: abs(p.tau - tau))
        assert abs(best.tau - tau) < 1e-8
        assert list(best.levels) == row["levels"]


def test_goe_conjugate_refinement(goe, goe_points):
    for p in [q for q in goe_points if q.tau.imag > 0][:5]:
        mirrored = refine(goe, Candidate(*p.levels, np.conj(p.tau) + 1e-4))
        assert abs(mirrored.tau - np.conj(p.tau)) < 1e-8


def test_square_root_exponent(goe, goe_points):
    for p in [q for q in goe_points if q.tau.imag > 0][:6]:
        assert abs(gap_exponent(goe, p) - 0.5) <= 0.02


def test_grid_independence(goe, goe_points):
    dense, _ = find_branch_points(goe, nx=481, ny=81)
    a = sorted(p.tau for p in goe_points if p.tau.imag > 0)
    b = [p.tau for p in dense if p.tau.imag > 0]
    for t in a:
        assert min(abs(t - s) for s in b) <= 1e-8


def test_branch_table(tmp_path, lz):
    pts, _ = find_branch_points(lz, region=(-2, 2, 0, 2))
    write_branch_table(tmp_path / "bp.csv", pts)
    with open(tmp_path / "bp.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert len(rows) == 1
    assert (rows[0]["i"], rows[0]["j"]) == ("1", "2")
    assert abs(float(rows[0]["im_tau"]) - 1.0) < 1e-10


def test_conjugate_method():
    bp = BranchPoint((0, 1), 1 + 0.5j, 1 + 1j, 0.0)
    c = bp.conjugate()
    assert c.tau == 1 - 0.5j and c.partner is bp and c.levels == (0, 1)
