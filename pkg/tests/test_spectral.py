import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import random_complex_symmetric
from nonadiabatic.errors import ContinuationStepTooLarge, ContractViolation, NearDegenerateWarning
from nonadiabatic.model import make_model
from nonadiabatic.spectral import (
    circuit,
    continue_along,
    eigensolve_complex_symmetric,
    frame_at,
    gap,
    level_curves,
    match_frame,
    write_level_curves,
)


def charpoly_leverrier(m):
    """Characteristic polynomial coefficients by Faddeev-LeVerrier."""
    n = m.shape[0]
    c = [1.0 + 0j]
    mk = np.zeros_like(m)
    for k in range(1, n + 1):
        mk = m @ mk + c[-1] * np.eye(n)
        c.append(-np.trace(m @ mk) / k)
    return np.array(c)


def test_degenerate_lz_matrix_warns():
    with pytest.warns(NearDegenerateWarning):
        w, _ = eigensolve_complex_symmetric(np.array([[1j, 1], [1, -1j]]))
    assert np.abs(w).max() < 1e-7


def test_real_input_matches_eigh(rng):
    a = rng.normal(size=(6, 6))
    a = a + a.T
    w, v = eigensolve_complex_symmetric(a)
    assert np.allclose(w.real, np.linalg.eigvalsh(a), atol=1e-12)
    assert np.all(v.imag == 0)


def test_random_complex_symmetric(rng):
    for _ in range(20):
        m = random_complex_symmetric(6, rng)
        w, v = eigensolve_complex_symmetric(m, warn=False)
        scale = np.abs(m).max()
        assert np.abs(m @ v - v * w).max() <= 1e-10 * scale
        assert np.abs(v.T @ v - np.eye(6)).max() <= 1e-9
        roots = np.roots(charpoly_leverrier(m))
        for e in w:
            assert np.min(np.abs(roots - e)) <= 1e-8 * scale


def test_non_symmetric_rejected():
    with pytest.raises(ContractViolation):
        eigensolve_complex_symmetric(np.array([[0, 1], [2, 0]], dtype=complex))


def test_lz_frame_at_zero(lz):
    f = frame_at(lz, 0.0)
    assert np.allclose(f.energies, [-0.5, 0.5])
    assert gap(f, 0, 1) == pytest.approx(1.0)
    assert gap(f, 1, 0) == -gap(f, 0, 1)


def test_lz_gap_off_axis(lz):
    f = frame_at(lz, 0.5j)
    assert abs(gap(f, 0, 1) - np.sqrt(0.75)) < 1e-12


def test_real_axis_labels_ascending(goe):
    for t in np.linspace(-5, 5, 11):
        f = frame_at(goe, t)
        assert np.all(np.diff(f.energies.real) > 0)
        assert np.all(f.states.imag == 0)


def test_single_circuit_exchanges_lz(lz):
    start, end = circuit(lz, 1j, 0.1)
    assert np.allclose(end.energies, start.energies[::-1], atol=1e-10)


def test_double_circuit_flips_sign_lz(lz):
    start, end = circuit(lz, 1j, 0.1, turns=2)
    assert np.allclose(end.energies, start.energies, atol=1e-10)
    assert np.abs(end.states + start.states).max() <= 1e-8


def test_goe_circuit_monodromy(goe, goe_points):
    bp = min((p for p in goe_points if p.tau.imag > 0), key=lambda p: p.tau.imag)
    i, j = bp.levels
    r = 0.2 * min(abs(bp.tau - q.tau) for q in goe_points if q is not bp)
    start, once = circuit(goe, bp.tau, r)
    assert abs(once.energies[i] - start.energies[j]) < 1e-6
    assert abs(once.energies[j] - start.energies[i]) < 1e-6
    others = [k for k in range(goe.dim) if k not in (i, j)]
    assert np.abs(once.energies[others] - start.energies[others]).max() < 1e-6
    _, twice = circuit(goe, bp.tau, r, turns=2)
    assert np.abs(twice.states[:, [i, j]] + start.states[:, [i, j]]).max() < 1e-6
    assert np.abs(twice.states[:, others] - start.states[:, others]).max() < 1e-6


def test_path_independence(goe):
    # no branch points of this seed with Re tau > 3 below Im tau = 2
    a, b = 4.0 + 0.0j, 5.0 + 1.2j
    start = frame_at(goe, a)
    direct = continue_along(goe, [a, b], start)[-1]
    bent = continue_along(goe, [a, 5.5 + 0.3j, 4.2 + 1.0j, b], start)[-1]
    assert np.abs(direct.energies - bent.energies).max() < 1e-8


def test_ambiguous_match_raises(lz):
    ref = frame_at(lz, 0.0)
    with pytest.raises(ContinuationStepTooLarge):
        match_frame(lz, 0.999j, ref)


def test_level_curves_export(tmp_path, goe):
    taus = np.linspace(-3, 3, 7)
    rows = write_level_curves(tmp_path / "lv.csv", goe, taus)
    lines = (tmp_path / "lv.csv").read_text().strip().splitlines()
    assert len(lines) == len(taus) + 1
    assert all(len(r.split(",")) == goe.dim + 1 for r in lines)
    assert np.allclose(rows, level_curves(goe, taus))


@settings(max_examples=25, deadline=None)
@given(st.integers(2, 7), st.integers(0, 10 ** 6))
def test_transpose_orthonormality_property(n, seed):
    m = random_complex_symmetric(n, np.random.default_rng(seed))
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", NearDegenerateWarning)
        w, v = eigensolve_complex_symmetric(m)
    s = np.einsum("ij,ij->j", v, v)
    good = np.abs(s - 1) < 1e-9
    # pairs far from degeneracy must be transpose-orthonormal
    diff = np.abs(w[:, None] - w[None, :])
    np.fill_diagonal(diff, np.inf)
    if diff.min() > 1e-3 * np.abs(m).max():
        assert good.all()
        assert np.abs(v.T @ v - np.eye(n)).max() < 1e-8
