"""Approximate adiabatic renormalization and its large-order diagnostics.

All matrices are held in the frozen basis of the eigenvectors at the left end
of the window and sampled on Chebyshev-Lobatto points, so repeated
differentiation is spectral.  In scaled time one step reads

    H_{k+1}[n, m] = -i eps d/dtau H_k[n, m] / (E_m - E_n)         n, m in Q
    H_{k+1}[n, m] = H_k[n, m]                                       n, m in P
    H_{k+1}[n, m] = -i eps sum_l G[n, l] d/dtau H_k[l, m]          n in P, m in Q

with ``G = (E_m - H_PP)^{-1}`` built from the projected Hamiltonian.  The
``QP`` block is the hermitian conjugate of the ``PQ`` block.  For large ``k``
the off-diagonal elements behave like ``Gamma(k + gamma) |F|^-(k + gamma)``
with ``F = (i/eps) int_{tau*}^{tau} (E_m - E_n)``, so on the real axis their
envelopes peak where the Stokes line of the dominant branch point crosses.
"""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import fft, optimize, signal, special

from .errors import DegenerateGapError, ResolventSingularError

log = logging.getLogger(__name__)

GRID_SIZE = 1025
WINDOW = (-10.0, 10.0)
K_MAX = 10
CHOP_TOL = 1e-14
GAMMA = -1.0 / 3.0
EDGE_FRACTION = 0.025


class Chebyshev:
    """Chebyshev-Lobatto grid on ``[a, b]`` with spectral differentiation.

    Nodes are stored in ascending order.  Differentiation truncates the
    coefficient tail once it falls below `chop` times the largest
    coefficient, which keeps repeated derivatives from amplifying roundoff.
    """

    def __init__(self, a, b, n, chop=CHOP_TOL):
        if n < 3:
            raise ValueError("need at least 3 Chebyshev points")
        self.a, self.b, self.n = float(a), float(b), int(n)
        self.chop = chop
        deg = self.n - 1
        self.x = np.cos(np.pi * np.arange(deg, -1, -1) / deg)  # ascending
        self.taus = 0.5 * (self.b - self.a) * self.x + 0.5 * (self.b + self.a)

    def coefficients(self, values):
        """Chebyshev coefficients along axis 0 of `values` (ascending nodes)."""
        v = np.asarray(values)[::-1]
        if np.iscomplexobj(v):
            return self.coefficients(v.real[::-1]) + 1j * self.coefficients(v.imag[::-1])
        deg = self.n - 1
        c = fft.dct(v, type=1, axis=0) / deg
        c[0] *= 0.5
        c[-1] *= 0.5
        return c

    def values(self, coeffs):
        c = np.array(coeffs, copy=True)
        if np.iscomplexobj(c):
            return self.values(c.real) + 1j * self.values(c.imag)
        c[1:-1] *= 0.5
        return fft.dct(c, type=1, axis=0)[::-1]

    def truncate(self, coeffs):
        """Zero the coefficient tail that sits at the roundoff plateau."""
        mag = np.abs(coeffs).reshape(self.n, -1).max(axis=1)
        top = mag.max()
        if top == 0:
            return coeffs
        keep = np.nonzero(mag > self.chop * top)[0]
        out = coeffs.copy()
        out[keep[-1] + 1:] = 0
        return out

    def derivative(self, values):
        """``d/dtau`` of samples along axis 0."""
        c = self.truncate(self.coefficients(values))
        d = np.polynomial.chebyshev.chebder(c, axis=0) * (2.0 / (self.b - self.a))
        pad = np.zeros_like(c)
        pad[:-1] = d
        return self.values(pad)

    def evaluate(self, values, taus):
        """Interpolate samples at arbitrary real `taus` inside the window."""
        c = self.truncate(self.coefficients(values))
        x = (2.0 * np.asarray(taus) - (self.b + self.a)) / (self.b - self.a)
        return np.polynomial.chebyshev.chebval(x, c)


@dataclass
class RenormGrid:
    """Frozen-basis data shared by every iteration step.

    ``energies[j, n]`` are the adiabatic energies, ``hpp[j]`` the projected
    Hamiltonian ``<chi|H|chi>`` on the ``P`` block.
    """

    cheb: Chebyshev
    epsilon: float
    energies: np.ndarray
    subspace: tuple
    hpp: np.ndarray | None = None

    @property
    def taus(self):
        return self.cheb.taus

    @property
    def dim(self):
        return self.energies.shape[1]


def _eigenbasis(model, taus):
    """Energies and sign-continuous real eigenvectors along ascending `taus`."""
    n = model.dim
    es = np.empty((len(taus), n))
    vs = np.empty((len(taus), n, n))
    prev = None
    for j, t in enumerate(taus):
        w, v = np.linalg.eigh(np.real(model.eval(float(t))))
        if prev is None:
            idx = np.argmax(np.abs(v), axis=0)
            v = v * np.sign(v[idx, np.arange(n)])
        else:
            v = v * np.where(np.einsum("ij,ij->j", prev, v) < 0, -1.0, 1.0)
        es[j], vs[j] = w, v
        prev = v
    return es, vs


def _check_gaps(grid, pairs):
    for n, m in pairs:
        d = np.abs(grid.energies[:, m] - grid.energies[:, n])
        j = int(np.argmin(d))
        if d[j] < 1e-12 * max(1.0, np.abs(grid.energies).max()):
            raise DegenerateGapError(
                f"levels {n} and {m} are degenerate near tau={grid.taus[j]:.6g}")


def _resolvent(grid, m):
    """``G[j] = (E_m(tau_j) - H_PP(tau_j))^-1`` for every grid point."""
    p = len(grid.subspace)
    eye = np.eye(p)
    a = grid.energies[:, m, None, None] * eye - grid.hpp
    cond = np.linalg.cond(a)
    bad = np.nonzero(~np.isfinite(cond) | (cond > 1e12))[0]
    if len(bad):
        raise ResolventSingularError(float(grid.taus[bad[0]]))
    return np.linalg.inv(a)


def first_order(model, epsilon, subspace=(), window=WINDOW, grid_size=GRID_SIZE,
                chop=CHOP_TOL):
    """First renormalized Hamiltonian in the frozen basis.

    Returns ``(grid, h1)`` with ``h1[j, n, m]`` sampled on the Chebyshev grid.
    ``Q`` entries use ``-i eps <phi_n|H'|phi_m> / (E_m - E_n)``; ``P`` states
    ``chi`` are the left-end eigenvectors projected on the instantaneous ``P``
    space and orthonormalized, and ``PQ`` entries use the resolvent.
    """
    cheb = Chebyshev(*window, grid_size, chop=chop)
    taus = cheb.taus
    es, vs = _eigenbasis(model, taus)
    dim = model.dim
    sub = tuple(sorted(int(i) for i in subspace))
    q = [i for i in range(dim) if i not in sub]
    grid = RenormGrid(cheb, float(epsilon), es, sub)
    _check_gaps(grid, [(n, m) for n in q for m in q if n < m])
    dh = np.array([np.real(model.derivative(float(t))) for t in taus])
    h = np.zeros((len(taus), dim, dim), dtype=complex)
    coupling = np.einsum("jan,jab,jbm->jnm", vs, dh, vs)
    for n in q:
        h[:, n, n] = es[:, n]
        for m in q:
            if n != m:
                h[:, n, m] = -1j * epsilon * coupling[:, n, m] / (es[:, m] - es[:, n])
    if sub:
        vp = vs[:, :, list(sub)]
        # chi: left-end P vectors projected on P(tau), Gram-Schmidt in order
        chi = np.linalg.qr(vp @ np.einsum("jan,ab->jnb", vp, vs[0][:, list(sub)]))[0]
        chi *= np.sign(np.einsum("jaa->ja", np.einsum("jbn,bm->jnm", chi,
                                                       vs[0][:, list(sub)])))[:, None, :]
        hfull = np.array([np.real(model.eval(float(t))) for t in taus])
        hpp = np.einsum("jan,jab,jbm->jnm", chi, hfull, chi)
        dchi = cheb.derivative(chi)
        block = hpp - 1j * epsilon * np.einsum("jan,jam->jnm", chi, dchi)
        grid.hpp = hpp
        for a, n in enumerate(sub):
            for b, m in enumerate(sub):
                h[:, n, m] = block[:, a, b]
        for m in q:
            g = _resolvent(grid, m)
            b = np.einsum("jan,jab,jb->jn", chi, dh, vs[:, :, m])
            pq = -1j * epsilon * np.einsum("jnl,jl->jn", g, b)
            for a, n in enumerate(sub):
                h[:, n, m] = pq[:, a]
                h[:, m, n] = np.conj(pq[:, a])
    return grid, h


def renorm_step(grid, current):
    """One step of the approximate iteration; returns ``H_{k+1}``.

    The diagonal of the ``Q`` block and the whole ``P`` block are copied.
    """
    eps = grid.epsilon
    sub = grid.subspace
    dim = grid.dim
    q = [i for i in range(dim) if i not in sub]
    d = grid.cheb.derivative(current)
    out = np.zeros_like(current)
    es = grid.energies
    for n in q:
        out[:, n, n] = current[:, n, n]
        for m in q:
            if n != m:
                out[:, n, m] = -1j * eps * d[:, n, m] / (es[:, m] - es[:, n])
    if sub:
        idx = list(sub)
        for n in sub:
            for m in sub:
                out[:, n, m] = current[:, n, m]
        for m in q:
            g = _resolvent(grid, m)
            pq = -1j * eps * np.einsum("jnl,jl->jn", g, d[:, idx, m])
            for a, n in enumerate(sub):
                out[:, n, m] = pq[:, a]
                out[:, m, n] = np.conj(pq[:, a])
    return out


def _tracked(dim, subspace, pairs):
    if pairs is not None:
        return [tuple(int(i) for i in p) for p in pairs]
    sub = set(subspace)
    return [(n, m) for n in range(dim) for m in range(n + 1, dim)
            if not (n in sub and m in sub)]


def envelope(cheb, values, n_uniform=4096):
    """Envelope of a sampled oscillating profile on a uniform grid.

    The samples are rotated to their dominant real phase and the modulus of
    the analytic signal is returned as ``(taus, env)``.
    """
    taus = np.linspace(cheb.a, cheb.b, n_uniform)
    f = cheb.evaluate(values, taus)
    j = int(np.argmax(np.abs(f)))
    phase = f[j] / abs(f[j]) if f[j] != 0 else 1.0
    real = np.real(f / phase)
    return taus, np.abs(signal.hilbert(real))


def _gaussian_fit_quality(taus, env):
    """R^2 of a parabola fitted to ``log env`` over its upper half."""
    top = env.max()
    if top <= 0:
        return float("nan")
    sel = env >= 0.5 * top
    if sel.sum() < 5:
        return float("nan")
    y = np.log(env[sel])
    x = taus[sel]
    c = np.polyfit(x, y, 2)
    res = y - np.polyval(c, x)
    tot = ((y - y.mean()) ** 2).sum()
    return float(1.0 - (res ** 2).sum() / tot) if tot > 0 else 1.0


@dataclass
class RenormTrace:
    """Profiles of the tracked off-diagonal elements for ``k = 1 .. k_max``.

    ``profiles[(k, n, m)]`` is ``|H^(k)_nm|`` on the grid ``taus``;
    ``envelopes`` holds the analytic-signal envelope on ``envelope_taus``,
    and ``peak_tau`` its maximum.  ``k_star`` minimizes ``max_magnitude``.
    Orders whose envelope peaks at the window edge are listed in
    ``edge_orders``: there the profile is spectral-differentiation noise
    rather than the asymptotic growth.
    """

    epsilon: float
    k_list: list
    taus: np.ndarray
    profiles: dict
    envelope_taus: np.ndarray
    envelopes: dict
    peak_tau: dict
    peak_value: dict
    max_magnitude: dict
    fit_quality: dict
    k_star: int
    subspace_P: tuple = ()
    pairs: list = field(default_factory=list)
    saturated: bool = False
    edge_orders: list = field(default_factory=list)

    def clean_orders(self):
        """Orders whose peaks all sit away from the window edges."""
        return [k for k in self.k_list if k not in self.edge_orders]


def divergence_profile(model, epsilon, k_max=K_MAX, tracked_pairs=None, subspace=(),
                       window=WINDOW, grid_size=GRID_SIZE, chop=CHOP_TOL):
    """Iterate the renormalization to `k_max` and record the tracked profiles.

    Stops early with ``saturated = True`` if an iterate is no longer finite.
    """
    grid, h = first_order(model, epsilon, subspace, window, grid_size, chop)
    pairs = _tracked(model.dim, grid.subspace, tracked_pairs)
    profiles, envs, peak, peak_val, maxmag, quality = {}, {}, {}, {}, {}, {}
    ks = []
    env_taus = None
    saturated = False
    edge = []
    margin = EDGE_FRACTION * (window[1] - window[0])
    for k in range(1, k_max + 1):
        if k > 1:
            h = renorm_step(grid, h)
        if not np.all(np.isfinite(h)) or np.abs(h).max() > 1e250:
            saturated = True
            log.warning("renormalization saturated at k=%d", k)
            break
        ks.append(k)
        largest = 0.0
        for n, m in pairs:
            mag = np.abs(h[:, n, m])
            profiles[(k, n, m)] = mag
            env_taus, env = envelope(grid.cheb, h[:, n, m])
            envs[(k, n, m)] = env
            j = int(np.argmax(env))
            peak[(k, n, m)] = float(env_taus[j])
            peak_val[(k, n, m)] = float(env[j])
            quality[(k, n, m)] = _gaussian_fit_quality(env_taus, env)
            largest = max(largest, float(mag.max()))
            if min(peak[(k, n, m)] - window[0], window[1] - peak[(k, n, m)]) < margin:
                if k not in edge:
                    edge.append(k)
        maxmag[k] = largest
    k_star = min(maxmag, key=maxmag.get) if maxmag else 0
    return RenormTrace(float(epsilon), ks, grid.taus, profiles, env_taus, envs, peak,
                       peak_val, maxmag, quality, int(k_star), grid.subspace, pairs,
                       saturated, edge)


@dataclass(frozen=True)
class GrowthFit:
    """Fit of envelope maxima to ``B Gamma(k + gamma) |F|^-(k + gamma)``."""

    gamma: float
    amplitude: float
    f_abs: float
    k_used: tuple
    ratios: tuple
    expected_ratios: tuple
    residual: float
    partial: bool


def fit_gamma(ks, magnitudes, f_abs, bracket=(-0.99, 3.0)):
    """Least-squares ``gamma`` (and log amplitude) for magnitudes ``M_k``.

    ``log M_k = log B + lgamma(k + gamma) - (k + gamma) log|F|``; the
    amplitude is eliminated in closed form and ``gamma`` found by bounded
    scalar minimization.
    """
    ks = np.asarray(ks, dtype=float)
    y = np.log(np.asarray(magnitudes, dtype=float))
    lf = math.log(f_abs)

    def resid(g):
        model = special.gammaln(ks + g) - (ks + g) * lf
        r = y - model
        return r - r.mean()

    lo = max(bracket[0], -ks.min() + 1e-6)
    sol = optimize.minimize_scalar(lambda g: float(resid(g) @ resid(g)),
                                   bounds=(lo, bracket[1]), method="bounded",
                                   options={"xatol": 1e-12})
    g = float(sol.x)
    logb = float(np.mean(y - special.gammaln(ks + g) + (ks + g) * lf))
    return g, math.exp(logb), float(np.sqrt(np.mean(resid(g) ** 2)))


def stokes_f(model, bp, epsilon, tau, pair=None, cut_angle=0.0):
    """``|F(tau)| = |int_{tau*}^{tau} (E_m - E_n)| / eps`` at real `tau`."""
    from .actions import action_estimate, phase_integral

    n, m = bp.levels if pair is None else pair
    est = action_estimate(model, bp, cut_angle=cut_angle)
    base = complex(bp.tau.real, 0.0)
    real_part = 0.0j
    if tau != base.real:
        real_part = (phase_integral(model, n, base, tau) - phase_integral(model, m, base, tau))
    # est.integral runs from the base point to tau* for E_i - E_j
    return abs(real_part - est.integral) / epsilon


def growth_law_check(trace, model, bp, pair=None, k_min=4, cut_angle=0.0):
    """Fit the large-order growth of `trace` against the asymptotic law.

    Uses the envelope maxima of `pair` (default: the levels of `bp`) for
    ``k >= k_min`` and ``|F|`` at the mean peak position.  Also returns the
    successive ratios ``M_{k+1}/M_k`` with their asymptotic values
    ``(k + gamma)/|F|``.
    """
    n, m = sorted(bp.levels) if pair is None else pair
    ks = [k for k in trace.clean_orders() if k >= k_min and (k, n, m) in trace.peak_value]
    partial = trace.saturated or len(ks) < 3
    if len(ks) < 2:
        raise ValueError("fewer than two clean orders to fit")
    mags = [trace.peak_value[(k, n, m)] for k in ks]
    tau_peak = float(np.mean([trace.peak_tau[(k, n, m)] for k in ks]))
    f_abs = stokes_f(model, bp, trace.epsilon, tau_peak, cut_angle=cut_angle)
    g, amp, res = fit_gamma(ks, mags, f_abs)
    ratios = tuple(b / a for a, b in zip(mags[:-1], mags[1:]))
    expected = tuple((k + GAMMA) / f_abs for k in ks[:-1])
    return GrowthFit(g, amp, f_abs, tuple(ks), ratios, expected, res, partial)


def taylor_coefficients(fn, center, radius, n_terms=64):
    """Taylor coefficients of an analytic `fn` about `center`.

    Trapezoid rule for the Cauchy integrals on a circle of `radius`, via FFT;
    the circle must stay inside the disc of analyticity.
    """
    theta = 2 * np.pi * np.arange(2 * n_terms) / (2 * n_terms)
    vals = fn(center + radius * np.exp(1j * theta))
    c = np.fft.fft(vals) / len(theta)
    return c[:n_terms] / radius ** np.arange(n_terms)


def _series_mul(a, b):
    return np.convolve(a, b)[:len(a)]


def _series_der(a):
    n = np.arange(1, len(a))
    return np.concatenate([a[1:] * n, [0.0]])


def power_law_coefficients(alpha, c=1.0, k_max=8, tau_star=0.0, center=2.0, radius=1.0,
                           n_terms=64):
    """Coefficients ``C_k`` from running the recursion on a power law.

    ``H_1 = c (tau - tau*)^-1`` and ``Delta = alpha (tau - tau*)^(1/2)`` are
    expanded in Taylor series about ``tau* + center``; each step
    differentiates the series and multiplies by the series of ``1/Delta``.
    The ``-i eps`` prefactor of the physical iteration is left out so the
    ratios compare directly with ``C_{k+1}/C_k = -(3k - 1)/(2 alpha)``.
    ``C_k`` is the value at the expansion point times
    ``(tau - tau*)^((3k-1)/2)``.
    """
    z0 = complex(center)
    h = taylor_coefficients(lambda z: c / z, z0, radius, n_terms)
    inv_delta = taylor_coefficients(lambda z: 1.0 / (alpha * np.sqrt(z)), z0, radius, n_terms)
    out = []
    for k in range(1, k_max + 1):
        if k > 1:
            h = _series_mul(_series_der(h), inv_delta)
        out.append(h[0] * z0 ** ((3 * k - 1) / 2))
    return np.array(out)


def power_law_ratios(alpha, k_max=8, **kw):
    """Measured ``C_{k+1}/C_k`` for ``k = 1 .. k_max - 1``."""
    c = power_law_coefficients(alpha, k_max=k_max, **kw)
    return c[1:] / c[:-1]


def expected_ratios(alpha, k_max=8):
    k = np.arange(1, k_max)
    return -(3 * k - 1) / (2 * alpha)


def synthetic_magnitudes(alpha, c=1.0, k_max=10, distance=1.0):
    """``|C_k| |tau - tau*|^-(3k-1)/2`` from the closed-form coefficients."""
    k = np.arange(1, k_max + 1)
    logc = ((k - 1) * np.log(1.5 / abs(alpha)) + special.gammaln(k - 1.0 / 3.0)
            - special.gammaln(2.0 / 3.0) + np.log(abs(c)))
    return k, np.exp(logc - (3 * k - 1) / 2 * np.log(distance))


def write_profiles(path, trace, stride=1):
    """CSV rows ``k, n, m, tau, |H^k_nm|, envelope`` (levels 1-based).

    Grid profiles and envelopes live on different grids; the envelope is
    interpolated onto the Chebyshev grid for export.
    """
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["k", "n", "m", "tau", "abs_h", "envelope"])
        for (k, n, m), prof in sorted(trace.profiles.items()):
            env = np.interp(trace.taus, trace.envelope_taus, trace.envelopes[(k, n, m)])
            for j in range(0, len(trace.taus), stride):
                w.writerow([k, n + 1, m + 1, repr(float(trace.taus[j])),
                            repr(float(prof[j])), repr(float(env[j]))])
