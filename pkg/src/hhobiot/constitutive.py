"""Stress-strain laws with analytic tangents.

All laws act on batches of symmetric ``d x d`` tensors with shape
``(..., d, d)``.  ``tangent`` returns the fourth-order derivative
``C[..., i, j, k, l] = d sigma_ij / d tau_kl`` evaluated on symmetric
arguments, so that ``Dsigma(tau)[eta] = C : eta``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np


def _tr(tau):
    return np.trace(tau, axis1=-2, axis2=-1)


def _eye_like(tau):
    d = tau.shape[-1]
    return np.broadcast_to(np.eye(d), tau.shape)


def _ddot(a, b):
    return np.einsum("...ij,...ij->...", a, b)


def dev_invariant(tau, tol: float = 1e-12):
    """Scalar ``tr(tau^2) - tr(tau)^2 / d`` of a symmetric tensor."""
    tau = np.asarray(tau, dtype=float)
    asym = np.abs(tau - np.swapaxes(tau, -1, -2)).max(initial=0.0)
    if asym > tol * max(1.0, np.abs(tau).max(initial=0.0)):
        raise ValueError("dev_invariant expects a symmetric tensor")
    d = tau.shape[-1]
    return _ddot(tau, tau) - _tr(tau) ** 2 / d


def _dev_unchecked(tau):
    d = tau.shape[-1]
    return _ddot(tau, tau) - _tr(tau) ** 2 / d


def _identity4(d):
    eye = np.eye(d)
    return 0.5 * (np.einsum("ik,jl->ijkl", eye, eye) + np.einsum("il,jk->ijkl", eye, eye))


def _eye_eye(d):
    eye = np.eye(d)
    return np.einsum("ij,kl->ijkl", eye, eye)


def _outer(a, b):
    return np.einsum("...ij,...kl->...ijkl", a, b)


class StressLaw:
    """Base class.  Subclasses implement ``stress`` and ``tangent``.

    ``c_cv2`` and ``c_gr`` are the coercivity and growth constants; ``c_mn2``
    and ``c_lp`` the strong monotonicity and Lipschitz constants when known.
    """

    kind = "abstract"
    c_cv2: float | None = None
    c_gr: float | None = None
    c_mn2: float | None = None
    c_lp: float | None = None

    def stress(self, tau, x=None):  # pragma: no cover - interface
        raise NotImplementedError

    def tangent(self, tau, x=None):  # pragma: no cover - interface
        raise NotImplementedError

    def directional(self, tau, eta, x=None):
        """``Dsigma(tau)[eta]``."""
        return np.einsum("...ijkl,...kl->...ij", self.tangent(tau, x), eta)

    def default_gamma(self) -> float:
        raise ValueError(
            f"{self.kind} law declares no coercivity constant; "
            "provide the stabilization parameter gamma explicitly"
        )

    def describe(self) -> str:
        return self.kind


@dataclass
class LinearElasticity(StressLaw):
    """Hooke's law ``lam tr(tau) I + 2 mu tau``."""

    lam: float = 1.0
    mu: float = 1.0
    d: int = 2
    kind = "linear"

    def __post_init__(self):
        if self.mu <= 0 or self.lam < 0:
            raise ValueError("need mu > 0 and lambda >= 0")
        self.c_cv2 = self.c_mn2 = 2 * self.mu
        self.c_gr = self.c_lp = 2 * self.mu + self.d * self.lam

    def stress(self, tau, x=None):
        tau = np.asarray(tau, dtype=float)
        return self.lam * _tr(tau)[..., None, None] * _eye_like(tau) + 2 * self.mu * tau

    def tangent(self, tau, x=None):
        tau = np.asarray(tau, dtype=float)
        d = tau.shape[-1]
        C = self.lam * _eye_eye(d) + 2 * self.mu * _identity4(d)
        return np.broadcast_to(C, tau.shape[:-2] + C.shape)

    def default_gamma(self) -> float:
        return 2 * self.mu

    def describe(self):
        return f"linear(lambda={self.lam:g}, mu={self.mu:g})"


@dataclass
class HenckyMises(StressLaw):
    """``lam_t(rho) tr(tau) I + 2 mu_t(rho) tau`` with ``rho = dev(tau)``.

    ``lam_fn``/``mu_fn`` return the Lame functions of ``rho`` and
    ``dlam_fn``/``dmu_fn`` their derivatives.
    """

    lam_fn: Callable
    mu_fn: Callable
    dlam_fn: Callable
    dmu_fn: Callable
    mu_bounds: tuple[float, float] = (1.0, 1.0)
    lam_bounds: tuple[float, float] = (0.0, 0.0)
    name: str = "hencky_mises"
    d: int = 2
    c_cv2: float | None = None
    c_gr: float | None = None
    kind = "hencky_mises"

    def __post_init__(self):
        mu_lo, mu_hi = self.mu_bounds
        if mu_lo <= 0:
            raise ValueError("Hencky-Mises shear function must stay above 0")
        if self.c_cv2 is None:
            self.c_cv2 = 2 * mu_lo
        if self.c_gr is None:
            self.c_gr = 2 * mu_hi + self.d * self.lam_bounds[1]
        if self.c_cv2 > self.c_gr:
            raise ValueError("inconsistent constants: C_cv^2 > C_gr")

    def stress(self, tau, x=None):
        tau = np.asarray(tau, dtype=float)
        rho = _dev_unchecked(tau)
        lam = self.lam_fn(rho)
        mu = self.mu_fn(rho)
        return (lam * _tr(tau))[..., None, None] * _eye_like(tau) + (2 * mu)[..., None, None] * tau

    def tangent(self, tau, x=None):
        tau = np.asarray(tau, dtype=float)
        d = tau.shape[-1]
        rho = _dev_unchecked(tau)
        tr = _tr(tau)
        lam, mu = self.lam_fn(rho), self.mu_fn(rho)
        dlam, dmu = self.dlam_fn(rho), self.dmu_fn(rho)
        eye = _eye_like(tau)
        # d rho / d tau = 2 (tau - tr(tau)/d I)
        drho = 2 * (tau - (tr / d)[..., None, None] * eye)
        dsig = (dlam * tr)[..., None, None] * eye + (2 * dmu)[..., None, None] * tau
        lin = (
            lam[..., None, None, None, None] * _eye_eye(d)
            + (2 * mu)[..., None, None, None, None] * _identity4(d)
        )
        return lin + _outer(dsig, drho)

    def default_gamma(self) -> float:
        # small-strain shear modulus, the analogue of gamma = 2 mu
        return float(2 * self.mu_fn(np.array(0.0)))

    def describe(self):
        return self.name


def exp_hencky_mises() -> HenckyMises:
    """``(1 + e^-rho) tr(tau) I + (4 - 2 e^-rho) tau`` with ``rho = dev(tau)``.

    ``lam_t = 1 + e^-rho`` in [1, 2] and ``2 mu_t = 4 - 2 e^-rho`` in [2, 4],
    so ``sigma : tau >= 2 |tau|^2``.  Since ``d lam_t + 2 mu_t = 6`` for every
    ``rho``, ``|sigma| <= 6 |tau|``.
    """
    return HenckyMises(
        lam_fn=lambda r: 1.0 + np.exp(-r),
        mu_fn=lambda r: 2.0 - np.exp(-r),
        dlam_fn=lambda r: -np.exp(-r),
        dmu_fn=lambda r: np.exp(-r),
        mu_bounds=(1.0, 2.0),
        lam_bounds=(1.0, 2.0),
        name="hencky_mises_exp",
        c_cv2=2.0,
        c_gr=6.0,
    )


@dataclass
class IsotropicDamage(StressLaw):
    """``(1 - D) C tau`` with ``D = 1 - (1 + |C tau|)^(-1/2)`` and isotropic C.

    ``C tau = lam tr(tau) I + 2 mu tau``.  The growth bound is that of C;
    no global coercivity constant is declared since ``sigma : tau`` grows
    like ``|tau|^(3/2)``.
    """

    lam: float = 1.0
    mu: float = 1.0
    d: int = 2
    kind = "damage"

    def __post_init__(self):
        if self.mu <= 0 or self.lam < 0:
            raise ValueError("need mu > 0 and lambda >= 0")
        self.c_gr = 2 * self.mu + self.d * self.lam

    def _elastic(self, tau):
        return self.lam * _tr(tau)[..., None, None] * _eye_like(tau) + 2 * self.mu * tau

    def stress(self, tau, x=None):
        tau = np.asarray(tau, dtype=float)
        s = self._elastic(tau)
        n = np.sqrt(_ddot(s, s))
        return (1.0 + n)[..., None, None] ** -0.5 * s

    def tangent(self, tau, x=None):
        tau = np.asarray(tau, dtype=float)
        d = tau.shape[-1]
        s = self._elastic(tau)
        n = np.sqrt(_ddot(s, s))
        f = (1.0 + n) ** -0.5
        df = -0.5 * (1.0 + n) ** -1.5
        Cel = self.lam * _eye_eye(d) + 2 * self.mu * _identity4(d)
        # d|s|/d tau = (C s) / |s|, C being self-adjoint
        safe = np.where(n > 0, n, 1.0)
        cs = self._elastic(s)
        coef = np.where(n > 0, df / safe, 0.0)
        return f[..., None, None, None, None] * Cel + coef[..., None, None, None, None] * _outer(s, cs)

    def describe(self):
        return f"damage(lambda={self.lam:g}, mu={self.mu:g})"


@dataclass
class RegionalLaw(StressLaw):
    """Piecewise law keyed by the mesh region id."""

    laws: dict = field(default_factory=dict)
    kind = "regional"

    def for_region(self, region: int) -> StressLaw:
        return self.laws[region]

    def default_gamma(self):
        return min(law.default_gamma() for law in self.laws.values())

    def describe(self):
        return "regional(" + ", ".join(f"{r}: {l.describe()}" for r, l in self.laws.items()) + ")"


def law_for_region(law: StressLaw, region: int) -> StressLaw:
    return law.for_region(region) if isinstance(law, RegionalLaw) else law


def recommended_gamma(law: StressLaw, gamma: float | None = None) -> float:
    """Stabilization parameter: ``gamma`` if given, else the law's default.

    The default lies in ``[C_cv^2, C_gr]``; it is ``2 mu`` for Hooke's law.
    """
    if gamma is not None:
        return float(gamma)
    return law.default_gamma()


def check_assumptions(law: StressLaw, n_samples: int = 100, seed: int = 0, scale=1.0):
    """Randomized spot-checks of growth, coercivity and monotonicity.

    Returns a dict of booleans; used behind debug flags and in tests.
    """
    rng = np.random.default_rng(seed)
    a = rng.normal(size=(n_samples, 2, 2)) * scale
    b = rng.normal(size=(n_samples, 2, 2)) * scale
    a = 0.5 * (a + np.swapaxes(a, 1, 2))
    b = 0.5 * (b + np.swapaxes(b, 1, 2))
    sa, sb = law.stress(a), law.stress(b)
    na = np.sqrt(_ddot(a, a))
    diff = a - b
    out = {
        "symmetric": bool(np.allclose(sa, np.swapaxes(sa, 1, 2), atol=1e-14)),
        "monotone": bool(np.all(_ddot(sa - sb, diff) > 0)),
    }
    if law.c_gr is not None:
        out["growth"] = bool(np.all(np.sqrt(_ddot(sa, sa)) <= law.c_gr * na * (1 + 1e-12)))
    if law.c_cv2 is not None:
        out["coercive"] = bool(np.all(_ddot(sa, a) >= law.c_cv2 * na**2 * (1 - 1e-12)))
    if law.c_mn2 is not None:
        out["strongly_monotone"] = bool(
            np.all(_ddot(sa - sb, diff) >= law.c_mn2 * _ddot(diff, diff) * (1 - 1e-12))
        )
    if law.c_lp is not None:
        dsig = sa - sb
        out["lipschitz"] = bool(
            np.all(np.sqrt(_ddot(dsig, dsig)) <= law.c_lp * np.sqrt(_ddot(diff, diff)) * (1 + 1e-12))
        )
    return out


def make_law(kind: str, **params) -> StressLaw:
    kind = kind.lower()
    if kind == "linear":
        return LinearElasticity(params.get("lam", 1.0), params.get("mu", 1.0))
    if kind in ("hencky_mises", "hencky_mises_exp"):
        return exp_hencky_mises()
    if kind == "damage":
        return IsotropicDamage(params.get("lam", 1.0), params.get("mu", 1.0))
    raise ValueError(f"unknown law {kind!r}")


def eval_stress(law: StressLaw, x, tau) -> np.ndarray:
    """``sigma(x, tau)`` for one or many symmetric tensors; checks finiteness."""
    sig = law.stress(np.asarray(tau, dtype=float), x)
    if not np.all(np.isfinite(sig)):
        raise FloatingPointError(f"non-finite stress from {law.describe()}")
    return sig


def eval_tangent(law: StressLaw, x, tau, eta) -> np.ndarray:
    """Directional derivative ``Dsigma(x, tau)[eta]``."""
    return law.directional(np.asarray(tau, dtype=float), np.asarray(eta, dtype=float), x)
