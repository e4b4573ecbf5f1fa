import numpy as np
import pytest

from nonadiabatic.branchpoints import BranchPoint, Candidate, refine
from nonadiabatic.stokes import (
    CROSSED,
    StokesLine,
    branch_cut,
    descending_stokes_line,
    initial_angles,
    mirrored_direction,
    pairwise_crossings,
    real_axis_crossing,
    trace,
    trace_all,
    write_polylines,
)


@pytest.fixture(scope="module")
def lz_bp(lz):
    return refine(lz, Candidate(0, 1, 0.9j))


def test_lz_descending_line_hits_origin(lz, lz_bp):
    line = descending_stokes_line(lz, lz_bp)
    assert line.status == CROSSED
    assert abs(line.real_crossing.real) <= 1e-6
    assert line.real_crossing.imag == 0
    # the descending line is the imaginary segment
    assert np.abs(line.points.real).max() < 1e-6


def test_lz_ray_separation(lz_bp):
    for kind in ("stokes", "anti_stokes"):
        a = np.sort(np.mod(initial_angles(lz_bp, kind), 2 * np.pi))
        gaps = np.diff(np.concatenate([a, [a[0] + 2 * np.pi]]))
        assert np.allclose(gaps, 2 * np.pi / 3, atol=0.05)


def test_three_rays_each_kind(lz, lz_bp):
    for kind in ("stokes", "anti_stokes"):
        lines = trace_all(lz, lz_bp, kind, max_len=3.0)
        assert len(lines) == 3
        assert {ln.direction for ln in lines} == {0, 1, 2}


def test_phase_drift_and_step_bound(lz, goe, goe_points, lz_bp):
    upper = [p for p in goe_points if p.tau.imag > 0][:4]
    for model, bp in [(lz, lz_bp)] + [(goe, p) for p in upper]:
        for ln in trace_all(model, bp, "stokes", max_len=3.0):
            assert ln.phase_drift <= 1e-6
            steps = np.abs(np.diff(ln.points))
            assert steps.max() <= ln.step_bound * (1 + 1e-9)


def test_monotone_dominance(goe, goe_points):
    bp = [p for p in goe_points if p.tau.imag > 0][0]
    for kind, part in (("stokes", np.imag), ("anti_stokes", np.real)):
        for ln in trace_all(goe, bp, kind, max_len=2.0):
            d = np.diff(part(ln.phase))
            assert np.all(d > 0) or np.all(d < 0)


def test_ascending_ray_has_no_crossing(lz, lz_bp):
    up = int(np.argmax(np.sin(initial_angles(lz_bp, "stokes"))))
    line = trace(lz, lz_bp, "stokes", up, max_len=2.0)
    assert line.real_crossing is None
    assert real_axis_crossing(line) is None


def test_crossing_converges_with_half_step(goe, goe_points):
    for bp in [p for p in goe_points if p.tau.imag > 0][:3]:
        a = descending_stokes_line(goe, bp)
        if a is None:
            continue
        b = descending_stokes_line(goe, bp, step=5e-4, max_dtau=0.005)
        assert abs(a.real_crossing - b.real_crossing) <= 1e-6


def test_conjugate_trace_symmetry(goe, goe_points):
    bp = [p for p in goe_points if p.tau.imag > 0][1]
    low = bp.partner
    for k in range(3):
        up = trace(goe, bp, "stokes", k, max_len=1.0)
        down = trace(goe, low, "stokes", mirrored_direction(k), max_len=1.0)
        n = min(len(up.points), len(down.points), 50)
        assert np.abs(np.conj(up.points[:n]) - down.points[:n]).max() <= 1e-8


def test_branch_cut_geometry():
    bp = BranchPoint((0, 1), 1 + 0.5j, 1.0, 0.0)
    cut = branch_cut(bp)
    assert cut.contains(1 + 2j) and not cut.contains(1 + 0.2j)
    assert cut.re_at_height(3.0) == pytest.approx(1.0)
    assert cut.re_at_height(0.1) is None
    low = branch_cut(bp.conjugate())
    assert low.contains(1 - 2j) and not low.contains(1 + 0j)
    assert low.direction.imag < 0


def test_real_axis_crossing_interpolation():
    bp = BranchPoint((0, 1), 1j, 1.0, 0.0)
    pts = np.array([1j, 0.2 + 0.5j, 0.6 - 0.5j])
    line = StokesLine(bp, "stokes", 0, pts, np.zeros(3), None, 0.0, CROSSED)
    assert real_axis_crossing(line) == pytest.approx(0.4 + 0j)


def test_pairwise_crossings_flags_intersections():
    a = BranchPoint((0, 1), 1j, 1.0, 0.0)
    b = BranchPoint((1, 2), 1 + 1j, 1.0, 0.0)
    la = StokesLine(a, "stokes", 0, np.array([0j, 1 + 1j]), np.zeros(2), None, 0.0, CROSSED)
    lb = StokesLine(b, "stokes", 0, np.array([1 + 0j, 0 + 1j]), np.zeros(2), None, 0.0,
                    CROSSED)
    hits = pairwise_crossings([la, lb])
    assert len(hits) == 1
    assert hits[0][2] == pytest.approx(0.5 + 0.5j)


def test_polyline_export(tmp_path, lz, lz_bp):
    line = descending_stokes_line(lz, lz_bp)
    write_polylines(tmp_path / "p.csv", tmp_path / "i.csv", [line])
    body = (tmp_path / "p.csv").read_text().splitlines()
    assert body[0] == "line,re_tau,im_tau"
    assert len(body) == len(line.points) + 1
    idx = (tmp_path / "i.csv").read_text().splitlines()
    assert idx[1].startswith("0,1,2,")
