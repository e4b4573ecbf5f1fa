"""Compiled fixed-step RK4 kernel for ``i eps d psi/d tau = H(tau) psi``."""

from __future__ import annotations

import numba
import numpy as np

PROFILE_TANH = 0
PROFILE_LINEAR = 1
FORM_TRIG = 0
FORM_LINEAR = 1


@numba.njit(cache=True)
def _profile(tau, kind, alpha, scale):
    if kind == PROFILE_TANH:
        return alpha * np.tanh(tau / alpha)
    return scale * tau


@numba.njit(cache=True)
def _hamiltonian(out, h1, h2, tau, form, kind, alpha, scale, traceless):
    n = h1.shape[0]
    x = _profile(tau, kind, alpha, scale)
    if form == FORM_TRIG:
        a = np.cos(x)
        b = np.sin(x)
    else:
        a = 1.0 + 0.0j
        b = x
    tr = 0.0j
    for i in range(n):
        for j in range(n):
            out[i, j] = a * h1[i, j] + b * h2[i, j]
        tr += out[i, i]
    if traceless:
        tr = tr / n
        for i in range(n):
            out[i, i] -= tr


@numba.njit(cache=True)
def _apply(out, h, psi, coef):
    # out = coef * h @ psi
    n, k = psi.shape
    for i in range(n):
        for c in range(k):
            acc = 0.0j
            for j in range(n):
                acc += h[i, j] * psi[j, c]
            out[i, c] = coef * acc


@numba.njit(cache=True)
def rk4_run(h1, h2, form, kind, alpha, scale, traceless, tau0, dtau, nsteps, epsilon,
            psi0, check_every, stride):
    """Integrate ``nsteps`` RK4 steps of size `dtau` from `tau0`.

    Columns of `psi0` are independent solutions.  Each column is rescaled
    whenever its norm leaves ``[1e-100, 1e100]``; the accumulated natural log
    of the scale and the running maximum of the log-norm are returned with
    the final state.  ``norm_dev`` is the largest ``| |psi| - 1 |`` seen at
    the checkpoints (meaningful for hermitian evolution only).  The log-norm
    of every column is also sampled every `stride` steps, starting at step 0
    (and at the final step when `stride` divides `nsteps`).
    """
    n, k = psi0.shape
    psi = psi0.copy()
    tmp = np.empty_like(psi)
    k1 = np.empty_like(psi)
    k2 = np.empty_like(psi)
    k3 = np.empty_like(psi)
    k4 = np.empty_like(psi)
    h = np.empty((n, n), dtype=np.complex128)
    logscale = np.zeros(k)
    maxlog = np.zeros(k)
    for c in range(k):
        s = 0.0
        for i in range(n):
            s += psi[i, c].real ** 2 + psi[i, c].imag ** 2
        maxlog[c] = 0.5 * np.log(s)
    norm_dev = 0.0
    nsamp = nsteps // stride + 1
    lognorm = np.empty((nsamp, k))
    coef = -1j * dtau / epsilon
    for step in range(nsteps):
        if step % stride == 0:
            for c in range(k):
                s = 0.0
                for i in range(n):
                    s += psi[i, c].real ** 2 + psi[i, c].imag ** 2
                lognorm[step // stride, c] = logscale[c] + 0.5 * np.log(s)
        tau = tau0 + step * dtau
        _hamiltonian(h, h1, h2, tau, form, kind, alpha, scale, traceless)
        _apply(k1, h, psi, coef)
        _hamiltonian(h, h1, h2, tau + 0.5 * dtau, form, kind, alpha, scale, traceless)
        for i in range(n):
            for c in range(k):
                tmp[i, c] = psi[i, c] + 0.5 * k1[i, c]
        _apply(k2, h, tmp, coef)
        for i in range(n):
            for c in range(k):
                tmp[i, c] = psi[i, c] + 0.5 * k2[i, c]
        _apply(k3, h, tmp, coef)
        _hamiltonian(h, h1, h2, tau + dtau, form, kind, alpha, scale, traceless)
        for i in range(n):
            for c in range(k):
                tmp[i, c] = psi[i, c] + k3[i, c]
        _apply(k4, h, tmp, coef)
        for i in range(n):
            for c in range(k):
                psi[i, c] += (k1[i, c] + 2.0 * k2[i, c] + 2.0 * k3[i, c] + k4[i, c]) / 6.0
        if (step + 1) % check_every == 0 or step == nsteps - 1:
            for c in range(k):
                s = 0.0
                for i in range(n):
                    s += psi[i, c].real ** 2 + psi[i, c].imag ** 2
                norm = np.sqrt(s)
                lg = logscale[c] + np.log(norm)
                if lg > maxlog[c]:
                    maxlog[c] = lg
                dev = abs(norm - 1.0)
                if logscale[c] == 0.0 and dev > norm_dev:
                    norm_dev = dev
                if norm > 1e100 or norm < 1e-100:
                    for i in range(n):
                        psi[i, c] /= norm
                    logscale[c] += np.log(norm)
    if nsteps % stride == 0:
        for c in range(k):
            s = 0.0
            for i in range(n):
                s += psi[i, c].real ** 2 + psi[i, c].imag ** 2
            lognorm[nsamp - 1, c] = logscale[c] + 0.5 * np.log(s)
    return psi, logscale, maxlog, norm_dev, lognorm
