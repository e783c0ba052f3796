"""Closed-form continuum reference values.

Flat-plane fermion, hyperbolic metric elements, Beltrami/quasiconformal
chart coefficients, and the maximal-surface energy/density/residue
targets used by the convergence experiments.

Conventions.  A chart parametrizes a spacelike surface over the complex
``zeta`` plane by ``z(zeta)`` together with the height function
``theta(z)`` (kappa-Lipschitz, |grad theta| < 1).  Writing Wirtinger
derivatives, ``zbar_zeta`` denotes the zeta-derivative of conj(z), so
that the chart identity reads ``z_zeta * zbar_zeta = (theta_zeta)**2``
and the metric element is ``l = |z_zeta| - |zbar_zeta| > 0``.  The mass
``m = z_{zeta zetabar} / (2 sqrt(z_zeta z_zetabar))`` vanishes exactly
on maximal surfaces.  General height functions are *not* uniformized
here: only charts with closed forms (flat, tilted plane) are evaluated;
the discrete Green pipeline is the approximation scheme for everything
else.

Derivatives use supplied closed forms when available and otherwise
centered differences with one Richardson step; the step-halving
discrepancy is recorded as an error estimate.
"""

from __future__ import annotations

import cmath
import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .embedding import SIGMA

__all__ = [
    "SurfaceChart",
    "MobiusMap",
    "flat_chart",
    "tilted_chart",
    "rescale_chart",
    "flat_fermion",
    "flat_decomposition",
    "hyperbolic_metric",
    "beltrami_coefficients",
    "ChartCoefficients",
    "maximal_targets",
]


# ---------------------------------------------------------------------------
# Charts
# ---------------------------------------------------------------------------

@dataclass
class SurfaceChart:
    """Spacelike-surface chart: height function + optional closed forms.

    ``theta`` maps z -> real height.  When the conformal parametrization
    is known in closed form, ``z_of_zeta``/``z_zeta``/``zbar_zeta``/
    ``theta_zeta``/``mass`` may be supplied; anything missing is
    evaluated by centered differences.
    """

    theta: Callable[[complex], float]
    z_of_zeta: Callable[[complex], complex] | None = None
    z_zeta: Callable[[complex], complex] | None = None
    zbar_zeta: Callable[[complex], complex] | None = None
    theta_zeta: Callable[[complex], complex] | None = None
    mass: Callable[[complex], complex] | None = None
    name: str = "custom"
    meta: dict = field(default_factory=dict)

    def z(self, zeta: complex) -> complex:
        if self.z_of_zeta is None:
            return complex(zeta)
        return complex(self.z_of_zeta(zeta))


def flat_chart() -> SurfaceChart:
    """z(zeta) = zeta, theta = 0."""
    return SurfaceChart(
        theta=lambda z: 0.0,
        z_of_zeta=lambda zeta: complex(zeta),
        z_zeta=lambda zeta: 1.0 + 0.0j,
        zbar_zeta=lambda zeta: 0.0 + 0.0j,
        theta_zeta=lambda zeta: 0.0 + 0.0j,
        mass=lambda zeta: 0.0 + 0.0j,
        name="flat",
    )


def tilted_chart(kappa0: float) -> SurfaceChart:
    """Tilted plane theta(z) = kappa0 * Re z, |kappa0| < 1.

    Closed-form conformal parametrization: z = p*zeta + q*conj(zeta)
    with p + q = 1 and p*q = (kappa0/2)**2, so the chart identity
    z_zeta * zbar_zeta = (theta_zeta)**2 holds exactly and the mass
    vanishes (linear chart: maximal surface).
    """
    if not abs(kappa0) < 1.0:
        raise ValueError("non-spacelike height function: |kappa0| >= 1")
    root = math.sqrt(1.0 - kappa0 ** 2)
    p = 0.5 * (1.0 + root)
    q = 0.5 * (1.0 - root)
    return SurfaceChart(
        theta=lambda z: kappa0 * z.real,
        z_of_zeta=lambda zeta: p * zeta + q * np.conj(zeta),
        z_zeta=lambda zeta: complex(p),
        zbar_zeta=lambda zeta: complex(q),
        theta_zeta=lambda zeta: complex(kappa0 / 2.0),
        mass=lambda zeta: 0.0 + 0.0j,
        name=f"tilted({kappa0})",
        meta={"kappa0": kappa0, "p": p, "q": q},
    )


def rescale_chart(chart: SurfaceChart, lam: float) -> SurfaceChart:
    """The chart in the rescaled coordinate zeta' = lam * zeta.

    z'(zeta') = z(zeta'/lam); derivatives pick up 1/lam; the height
    function (a function of z) is unchanged.
    """
    if lam == 0:
        raise ValueError("zero rescaling")
    inv = 1.0 / lam

    def wrap(f):
        return None if f is None else (lambda zeta: f(zeta * inv))

    def wrap_scaled(f):
        return None if f is None else (lambda zeta: inv * f(zeta * inv))

    return SurfaceChart(
        theta=chart.theta,
        z_of_zeta=wrap(chart.z_of_zeta),
        z_zeta=wrap_scaled(chart.z_zeta),
        zbar_zeta=wrap_scaled(chart.zbar_zeta),
        theta_zeta=wrap_scaled(chart.theta_zeta),
        mass=wrap_scaled(chart.mass),
        name=f"{chart.name}/scale({lam})",
        meta=dict(chart.meta, rescaled_by=lam),
    )


# ---------------------------------------------------------------------------
# Flat-plane fermion
# ---------------------------------------------------------------------------

def flat_fermion(eta: complex, a: complex, z: complex) -> complex:
    """F^[eta](z, a) = conj(eta) / (z - a) on the flat plane."""
    if z == a:
        raise ValueError("evaluation point coincides with the source")
    return np.conj(eta) / (z - a)


def flat_decomposition(a: complex, z: complex) -> tuple[complex, complex]:
    """(F, F*) with F^[eta] = (conj(eta) F + eta conj(F*)) / 2.

    Flat plane: F = 2/(z - a), F* = 0.
    """
    if z == a:
        raise ValueError("evaluation point coincides with the source")
    return 2.0 / (z - a), 0.0 + 0.0j


# ---------------------------------------------------------------------------
# Hyperbolic metric element
# ---------------------------------------------------------------------------

@dataclass
class MobiusMap:
    """w -> (a w + b) / (c w + d), a conformal map onto disc/half-plane."""

    a: complex
    b: complex
    c: complex
    d: complex
    target: str = "disc"        # domain the map lands in

    def __call__(self, w: complex) -> complex:
        return (self.a * w + self.b) / (self.c * w + self.d)

    def deriv(self, w: complex) -> complex:
        den = self.c * w + self.d
        return (self.a * self.d - self.b * self.c) / (den * den)


def hyperbolic_metric(domain: str, a: complex,
                      mobius: MobiusMap | None = None) -> float:
    """ell_Omega(a) = 2 |psi'_a(a)| for psi_a : Omega -> D, a -> 0.

    domain: "disc" (ell = 2/(1-|a|^2)), "half-plane" (ell = 1/Im a), or
    "mobius" with a map onto the disc or half-plane (conformal
    covariance: ell_Omega(a) = ell_target(phi(a)) |phi'(a)|).
    """
    a = complex(a)
    if domain == "disc":
        if abs(a) >= 1.0:
            raise ValueError("point not interior to the disc")
        return 2.0 / (1.0 - abs(a) ** 2)
    if domain == "half-plane":
        if a.imag <= 0.0:
            raise ValueError("point not interior to the half-plane")
        return 1.0 / a.imag
    if domain == "mobius":
        if mobius is None:
            raise ValueError("mobius domain requires a MobiusMap")
        return hyperbolic_metric(mobius.target, mobius(a)) \
            * abs(mobius.deriv(a))
    raise ValueError(f"unknown domain {domain!r}")


# ---------------------------------------------------------------------------
# Wirtinger derivatives (closed form or centered differences)
# ---------------------------------------------------------------------------

def _wirtinger_fd(f, zeta: complex, h: float = 1e-4):
    """(f_zeta, f_zetabar, error estimate) by centered differences with
    one Richardson step (h and h/2)."""

    def raw(hh):
        fx = (f(zeta + hh) - f(zeta - hh)) / (2.0 * hh)
        fy = (f(zeta + 1j * hh) - f(zeta - 1j * hh)) / (2.0 * hh)
        return 0.5 * (fx - 1j * fy), 0.5 * (fx + 1j * fy)

    d1 = raw(h)
    d2 = raw(h / 2.0)
    rich = tuple((4.0 * b - a) / 3.0 for a, b in zip(d1, d2))
    err = max(abs(b - a) / 3.0 for a, b in zip(d1, d2))
    return rich[0], rich[1], err


def _chart_derivatives(chart: SurfaceChart, zeta: complex):
    """(z_zeta, zbar_zeta, theta_zeta, fd error estimate)."""
    zeta = complex(zeta)
    err = 0.0
    if chart.z_zeta is not None and chart.zbar_zeta is not None:
        zz = complex(chart.z_zeta(zeta))
        zb = complex(chart.zbar_zeta(zeta))
    else:
        dz, dzb, e = _wirtinger_fd(chart.z, zeta)
        zz, zb = dz, np.conj(dzb)      # zbar_zeta = conj(z_zetabar)
        err = max(err, e)
    if chart.theta_zeta is not None:
        tz = complex(chart.theta_zeta(zeta))
    else:
        tz, _, e = _wirtinger_fd(lambda w: chart.theta(chart.z(w)), zeta)
        err = max(err, e)
    return zz, zb, tz, err


def _chart_mass(chart: SurfaceChart, zeta: complex):
    """(m(zeta), fd error estimate)."""
    if chart.mass is not None:
        return complex(chart.mass(complex(zeta))), 0.0

    def zz_of(w):
        if chart.z_zeta is not None:
            return complex(chart.z_zeta(w))
        return _wirtinger_fd(chart.z, w)[0]

    _, z_zz_bar, err = _wirtinger_fd(zz_of, complex(zeta), h=1e-3)
    zz, zb, _, e2 = _chart_derivatives(chart, zeta)
    prod = zz * np.conj(zb)            # z_zeta * z_zetabar
    denom = 2.0 * cmath.sqrt(prod) if prod != 0 else 2.0 * abs(zz)
    return z_zz_bar / denom, max(err, e2)


@dataclass
class ChartCoefficients:
    mu: complex                 # Beltrami coefficient of z -> surface graph
    nu: complex                 # conjugate-Beltrami coefficient -theta_zeta/z_zeta
    m: complex                  # mass; 0 exactly on maximal surfaces
    l: float                    # metric element |z_zeta| - |zbar_zeta|
    z_zeta: complex
    zbar_zeta: complex
    theta_zeta: complex
    chart_residual: float       # |z_zeta zbar_zeta - theta_zeta^2|
    fd_error: float


def _mu_from_theta_z(theta_z: complex) -> complex:
    """Solve conj(mu)/(1+|mu|^2) = -theta_z^2/(1 - 2|theta_z|^2)."""
    if 2.0 * abs(theta_z) ** 2 >= 1.0:
        raise ValueError("non-spacelike height function: |grad theta| >= 1")
    R = -theta_z ** 2 / (1.0 - 2.0 * abs(theta_z) ** 2)
    r = abs(R)
    if r == 0.0:
        return 0.0 + 0.0j
    if 2.0 * r > 1.0:
        raise ValueError("non-spacelike height function: |grad theta| >= 1")
    mod = (1.0 - math.sqrt(1.0 - 4.0 * r * r)) / (2.0 * r)
    return np.conj(R / r) * mod


def beltrami_coefficients(chart: SurfaceChart, zeta: complex,
                          z_point: complex | None = None) -> ChartCoefficients:
    """Chart coefficients at zeta (or at z with the identity chart).

    mu comes from the height function at z(zeta) via
    conj(mu)/(1+|mu|^2) = -theta_z^2/(1-2|theta_z|^2); nu, m, l come
    from the parametrization.  Non-spacelike inputs raise.
    """
    zeta = complex(zeta if z_point is None else z_point)
    zz, zb, tz, err = _chart_derivatives(chart, zeta)
    la = abs(zz) - abs(zb)
    if la <= 0.0:
        raise ValueError("non-spacelike chart: |z_zeta| <= |zbar_zeta|")
    if abs(zb) > abs(zz) or abs(tz) >= abs(zz):
        raise ValueError(
            "non-spacelike chart: needs |zbar_zeta| <= |theta_zeta| < |z_zeta|"
        )
    nu = -tz / zz
    m, merr = _chart_mass(chart, zeta)
    # theta as a function of z: theta_z = theta_zeta / z_zeta to leading
    # order on nearly-flat charts; evaluate directly by differences in z
    z_here = chart.z(zeta)
    th_z, _, e3 = _wirtinger_fd(chart.theta, complex(z_here))
    mu = _mu_from_theta_z(th_z)
    resid = abs(zz * zb - tz * tz)
    return ChartCoefficients(
        mu=mu, nu=complex(nu), m=complex(m), l=float(la),
        z_zeta=zz, zbar_zeta=zb, theta_zeta=tz,
        chart_residual=float(resid),
        fd_error=float(max(err, merr, e3)),
    )


# ---------------------------------------------------------------------------
# Maximal-surface targets
# ---------------------------------------------------------------------------

def maximal_targets(chart: SurfaceChart, a: complex,
                    p1: complex, p2: complex,
                    domain: str = "disc",
                    mobius: MobiusMap | None = None,
                    eta: complex = 1.0,
                    mass_tol: float = 1e-8) -> dict:
    """Continuum targets on a maximal chart.

    Returns
      energy:  (1/pi^2) / (l(p1) l(p2) |p2 - p1|^2)
      density: ell_Omega(a) / (pi * l(a))
      residue: mu* = (conj(s) eta sqrt(z_zeta) - s conj(eta) sqrt(zbar_zeta))
               / (|z_zeta| - |zbar_zeta|) at a, with s = exp(i pi/4)
    Flat chart: energy = 1/(pi^2 |p2-p1|^2), density = ell_Omega(a)/pi,
    |residue| = 1.
    """
    coeffs = {p: beltrami_coefficients(chart, p) for p in (a, p1, p2)}
    for p, cf in coeffs.items():
        if abs(cf.m) > mass_tol:
            raise ValueError(f"non-maximal chart: |m({p})| = {abs(cf.m):.3e}")
        if cf.chart_residual > 1e-8 * max(abs(cf.z_zeta) ** 2, 1e-30):
            raise ValueError("chart identity z_zeta*zbar_zeta = theta_zeta^2 "
                             f"violated at {p}: {cf.chart_residual:.3e}")
    l1, l2, la = coeffs[p1].l, coeffs[p2].l, coeffs[a].l
    dist = abs(complex(p2) - complex(p1))
    if dist == 0:
        raise ValueError("coincident insertion points")
    energy = (1.0 / math.pi ** 2) / (l1 * l2 * dist * dist)
    ell = hyperbolic_metric(domain, a, mobius)
    density = ell / (math.pi * la)
    cfa = coeffs[a]
    residue = (np.conj(SIGMA) * complex(eta) * cmath.sqrt(cfa.z_zeta)
               - SIGMA * np.conj(eta) * cmath.sqrt(cfa.zbar_zeta)) / cfa.l
    return {
        "energy": float(energy),
        "density": float(density),
        "residue": complex(residue),
        "l": {"a": la, "p1": l1, "p2": l2},
        "hyperbolic": float(ell),
        "separation": float(dist),
    }
