"""Analytic model Hamiltonians evaluated at complex scaled time.

Three kinds are supported:

``goe_interp``
    ``H(tau) = cos(X) h1 + sin(X) h2`` with ``X = alpha * tanh(tau / alpha)``
    and ``h1``, ``h2`` independent GOE draws.
``landau_zener``
    ``H(tau) = 0.5 * [[A tau, delta], [delta, -A tau]]``.
``custom_pair``
    user supplied real symmetric ``h1``, ``h2`` combined either as the
    trigonometric interpolation above (``form="trig"``) or linearly,
    ``h1 + X h2`` (``form="linear"``).  ``alpha=None`` selects ``X = tau``.

Units: hbar = 1, all times are the scaled time ``tau = epsilon * t``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigurationError, InvalidDimensionError, SingularityProximityError

KINDS = ("goe_interp", "landau_zener", "custom_pair")


def goe_sample(dim, seed=None, rng=None):
    """Draw a real symmetric matrix from the gaussian orthogonal ensemble.

    Entries have mean zero and variance ``1 + delta_ij``.

    Parameters
    ----------
    dim : int
        Matrix dimension, at least 1.
    seed : int, optional
        Seed for ``numpy.random.default_rng``. Ignored when `rng` is given.
    rng : numpy.random.Generator, optional
        Generator to draw from (lets callers take several draws from one stream).
    """
    if int(dim) < 1:
        raise InvalidDimensionError(dim)
    dim = int(dim)
    if rng is None:
        rng = np.random.default_rng(seed)
    a = rng.standard_normal((dim, dim))
    return (a + a.T) / np.sqrt(2.0)


@dataclass(frozen=True, eq=False)
class HamiltonianModel:
    kind: str
    dim: int
    alpha: float | None = None
    delta: float | None = None
    slope: float | None = None
    h1: np.ndarray | None = field(default=None, repr=False)
    h2: np.ndarray | None = field(default=None, repr=False)
    seed: int | None = None
    form: str = "trig"
    guard: float | None = None
    hbar: float = 1.0

    def __post_init__(self):
        for name in ("h1", "h2"):
            m = getattr(self, name)
            if m is not None:
                m = np.array(m, dtype=float)
                m.setflags(write=False)
                object.__setattr__(self, name, m)

    # -- profile X(tau) -----------------------------------------------------
    def profile(self, tau):
        if self.kind == "landau_zener":
            return self.slope * tau
        if self.alpha is None:
            return tau
        return self.alpha * np.tanh(tau / self.alpha)

    def profile_derivative(self, tau):
        if self.kind == "landau_zener":
            return self.slope + 0.0 * tau
        if self.alpha is None:
            return 1.0 + 0.0 * tau
        return 1.0 / np.cosh(tau / self.alpha) ** 2

    @property
    def has_poles(self):
        return self.kind != "landau_zener" and self.alpha is not None

    @property
    def guard_radius(self):
        if not self.has_poles:
            return 0.0
        return self.guard if self.guard is not None else 0.1 * abs(self.alpha)

    def nearest_pole(self, tau):
        """Nearest singularity of ``tanh(tau/alpha)``, or None for entire models."""
        if not self.has_poles:
            return None
        a = abs(self.alpha)
        k = np.round(tau.imag / (a * np.pi) - 0.5)
        return 1j * a * np.pi * (k + 0.5)

    def pole_distance(self, tau):
        pole = self.nearest_pole(complex(tau))
        if pole is None:
            return np.inf
        return abs(complex(tau) - pole)

    # -- evaluation -----------------------------------------------------------
    def eval(self, tau, check=True):
        """Return ``H(tau)`` as a complex symmetric array."""
        tau = complex(tau)
        if check and self.has_poles:
            d = self.pole_distance(tau)
            if d < self.guard_radius:
                raise SingularityProximityError(tau, self.nearest_pole(tau), d)
        x = self.profile(tau)
        if self.kind == "landau_zener":
            h = 0.5 * np.array([[x, self.delta], [self.delta, -x]], dtype=complex)
        elif self.form == "linear":
            h = self.h1 + x * self.h2
        else:
            h = np.cos(x) * self.h1 + np.sin(x) * self.h2
        return np.asarray(h, dtype=complex)

    __call__ = eval

    def derivative(self, tau):
        """Return ``dH/dtau`` at `tau` in closed form."""
        tau = complex(tau)
        dx = self.profile_derivative(tau)
        if self.kind == "landau_zener":
            return 0.5 * np.array([[dx, 0], [0, -dx]], dtype=complex)
        if self.form == "linear":
            return np.asarray(dx * self.h2, dtype=complex)
        x = self.profile(tau)
        return np.asarray(dx * (-np.sin(x) * self.h1 + np.cos(x) * self.h2), dtype=complex)

    def limit(self, sign=1):
        """Asymptotic Hamiltonian as ``tau -> sign * inf`` (tanh profiles only)."""
        if not self.has_poles:
            raise ConfigurationError("alpha", "model has no finite limit at infinity")
        x = np.sign(sign) * self.alpha
        if self.form == "linear":
            return self.h1 + x * self.h2
        return np.cos(x) * self.h1 + np.sin(x) * self.h2

    def energy_scale(self):
        """Typical eigenvalue magnitude, used to make tolerances scale aware."""
        if self.kind == "landau_zener":
            return max(abs(self.delta), 1e-300) / 2
        return max(np.abs(np.linalg.eigvalsh(self.h1)).max(),
                   np.abs(np.linalg.eigvalsh(self.h2)).max(), 1e-300)

    def time_reversed(self):
        """Model with ``H'(tau) = H(-tau)``."""
        if self.kind == "landau_zener":
            return make_model("landau_zener", delta=self.delta, slope=-self.slope)
        if self.form == "linear":
            return make_model("custom_pair", h1=self.h1, h2=-self.h2, alpha=self.alpha,
                              form="linear", dim=self.dim)
        return make_model("custom_pair", h1=self.h1, h2=-self.h2, alpha=self.alpha,
                          form="trig", dim=self.dim)

    def to_params(self):
        out = {"kind": self.kind, "dim": self.dim}
        for name in ("alpha", "delta", "slope", "seed"):
            v = getattr(self, name)
            if v is not None:
                out[name] = v
        if self.kind == "custom_pair":
            out["form"] = self.form
        return out


def _require(params, name, kind):
    if params.get(name) is None:
        raise ConfigurationError(name, f"{kind} requires parameter {name!r}")
    return params[name]


def _as_symmetric(m, name):
    m = np.asarray(m, dtype=float)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise ConfigurationError(name, f"{name} must be a square matrix")
    if not np.array_equal(m, m.T):
        raise ConfigurationError(name, f"{name} must be exactly symmetric")
    return m


def make_model(kind, **params):
    """Build a :class:`HamiltonianModel`.

    ``goe_interp`` needs ``dim``, ``alpha`` and ``seed``; ``landau_zener`` needs
    ``delta`` and ``slope``; ``custom_pair`` needs ``h1`` and ``h2``.
    """
    if kind not in KINDS:
        raise ConfigurationError("kind", f"unknown model kind {kind!r}")
    guard = params.get("guard")
    if kind == "landau_zener":
        delta = float(_require(params, "delta", kind))
        slope = float(_require(params, "slope", kind))
        if slope == 0:
            raise ConfigurationError("slope", "slope must be non-zero")
        return HamiltonianModel(kind, 2, delta=delta, slope=slope)

    if kind == "goe_interp":
        dim = _require(params, "dim", kind)
        alpha = float(_require(params, "alpha", kind))
        seed = int(_require(params, "seed", kind))
        if int(dim) < 1:
            raise InvalidDimensionError(dim)
        if alpha == 0:
            raise ConfigurationError("alpha", "alpha must be non-zero")
        rng = np.random.default_rng(seed)
        h1 = goe_sample(dim, rng=rng)
        h2 = goe_sample(dim, rng=rng)
        return HamiltonianModel(kind, int(dim), alpha=alpha, h1=h1, h2=h2, seed=seed,
                                guard=guard)

    h1 = _as_symmetric(_require(params, "h1", kind), "h1")
    h2 = _as_symmetric(_require(params, "h2", kind), "h2")
    if h1.shape != h2.shape:
        raise ConfigurationError("h2", "h1 and h2 must have the same shape")
    form = params.get("form", "trig")
    if form not in ("trig", "linear"):
        raise ConfigurationError("form", f"unknown custom_pair form {form!r}")
    alpha = params.get("alpha")
    if alpha is not None:
        alpha = float(alpha)
        if alpha == 0:
            raise ConfigurationError("alpha", "alpha must be non-zero")
    return HamiltonianModel(kind, h1.shape[0], alpha=alpha, h1=h1, h2=h2,
                            seed=params.get("seed"), form=form, guard=guard)


def save_matrix(path, matrix):
    """Write a real matrix as a row-major plain-text table at full precision."""
    np.savetxt(Path(path), np.asarray(matrix, dtype=float), fmt="%.17g")


def load_matrix(path):
    m = np.loadtxt(Path(path), dtype=float, ndmin=2)
    return m
