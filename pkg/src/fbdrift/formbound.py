"""Form-bound estimation and the singular-field norms.

The form bound of a field b is the smallest delta with
``||b(t,.) phi||_2^2 <= delta ||grad phi||_2^2`` over Sobolev test
functions.  The estimator replaces the supremum by a documented finite
family (radial Gaussians, near-optimizers of the Hardy quotient with a
log-scale outer truncation, tensor bumps) and reports the maximal
Rayleigh quotient together with its argmax, so the result is an explicit
lower bound that a user can sharpen by enlarging the family.

Quotient integrals are radial composite Gauss-Legendre panels wherever
both the field magnitude and the test function are radial; the singular
``c/|x|`` head against a power-law test function is integrated in closed
form on the inner plateau.  Non-radial cases use a product rule on the
support ball (d = 3) or a tensor rule.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Iterable, Optional, Sequence

import numpy as np

from . import drifts
from .drifts import DriftSpec
from .errors import NumericsError
from .quadrature import (RadialRule, ball_rule_3d, ball_volume, box_grid,
                         radial_rule, sphere_area, tensor_rule)

# ---------------------------------------------------------------------------
# field-magnitude protocol: DriftSpec or any object implementing the
# small surface below (used by the PDE layer for scalar sources)


def field_dimension(f) -> int:
    return f.dimension


def field_support_radius(f) -> float:
    if isinstance(f, DriftSpec):
        return drifts.support_radius(f)
    return f.support_radius


def magnitude_profile(f, t: float):
    """|field|(t, r) as a radial callable, or None when not radial."""
    if isinstance(f, DriftSpec):
        g = drifts.radial_profile(f, t)
        if g is None:
            return None
        return lambda r: np.abs(g(r))
    return f.magnitude_profile(t)


def eval_magnitude(f, t: float, X: np.ndarray) -> np.ndarray:
    if isinstance(f, DriftSpec):
        return np.linalg.norm(drifts.eval_drift(f, t, X), axis=-1)
    return f.eval_magnitude(t, X)


def has_inverse_radius_head(f) -> bool:
    """True when |field| equals c/r exactly on the inner plateau."""
    if isinstance(f, DriftSpec):
        return drifts.inverse_radius_coefficient(f) is not None
    return getattr(f, "has_inverse_radius_head", False)


# ---------------------------------------------------------------------------
# test functions


def _smoothstep(u):
    u = np.clip(u, 0.0, 1.0)
    return u**3 * (10.0 - 15.0 * u + 6.0 * u**2)


def _smoothstep_d(u):
    inside = (u > 0.0) & (u < 1.0)
    out = np.zeros_like(np.asarray(u, float))
    ui = np.asarray(u, float)[inside]
    out[inside] = 30.0 * ui**2 * (1.0 - ui) ** 2
    return out


@dataclass
class TestFunction:
    """One member: closed-form phi with an analytic gradient."""

    name: str
    dimension: int
    radial: bool
    support_radius: float
    value: Callable  # (N, d) -> (N,)
    gradient: Callable  # (N, d) -> (N, d)
    radial_value: Optional[Callable] = None
    radial_deriv: Optional[Callable] = None
    center: Optional[np.ndarray] = None
    head_power: Optional[float] = None   # phi = r^p exactly on [0, head_radius]
    head_radius: float = 0.0
    box_half_width: Optional[float] = None  # quadrature box for non-radial members
    grad_norm_sq: float = field(default=None, init=True)
    l2_norm_sq: float = field(default=None, init=True)


def gaussian_member(sigma: float, d: int, center=None, name=None) -> TestFunction:
    center = None if center is None else np.asarray(center, dtype=float)
    radial = center is None or not np.any(center)

    def value(X):
        Y = X if center is None else X - center
        return np.exp(-np.sum(Y * Y, axis=-1) / (2.0 * sigma**2))

    def gradient(X):
        Y = X if center is None else X - center
        return -(Y / sigma**2) * value(X)[..., None]

    rv = (lambda r: np.exp(-np.asarray(r, float) ** 2 / (2.0 * sigma**2))) if radial else None
    rd = (lambda r: -(np.asarray(r, float) / sigma**2) * rv(r)) if radial else None
    return TestFunction(
        name or f"gauss(sigma={sigma:g}" + ("" if radial else ",off") + ")",
        d, radial, 8.0 * sigma + (0.0 if radial else float(np.linalg.norm(center))),
        value, gradient, rv, rd, center, box_half_width=6.0 * sigma)


def hardy_quasi_member(eta: float, d: int, outer_radius: float,
                       log_span: float = math.log(1000.0)) -> TestFunction:
    """phi(r) = r^(eta - (d-2)/2) * psi(r) with psi == 1 on [0, a] and a
    smoothstep decay in log r over [a, outer_radius], a = outer * e^{-span}.

    Near-optimizer of the Hardy quotient: the quotient approaches
    (1 - 2 eta/(d-2))^2 * (2c/(d-2))^2 for the c/|x| field as the log
    span grows.
    """
    p = eta - (d - 2) / 2.0
    b_r = outer_radius
    a = b_r * math.exp(-log_span)

    def psi(r):
        r = np.asarray(r, float)
        with np.errstate(divide="ignore"):
            v = np.where(r > 0.0, np.log(b_r / np.maximum(r, 1e-300)) / log_span, 1.0)
        return _smoothstep(v)

    def dpsi(r):
        r = np.asarray(r, float)
        with np.errstate(divide="ignore"):
            v = np.where(r > 0.0, np.log(b_r / np.maximum(r, 1e-300)) / log_span, 1.0)
        return -_smoothstep_d(v) / (np.maximum(r, 1e-300) * log_span)

    def rv(r):
        r = np.asarray(r, float)
        rr = np.maximum(r, 1e-300)
        return np.where(r < b_r, rr**p * psi(r), 0.0)

    def rd(r):
        r = np.asarray(r, float)
        rr = np.maximum(r, 1e-300)
        return np.where(r < b_r, p * rr ** (p - 1.0) * psi(r) + rr**p * dpsi(r), 0.0)

    def value(X):
        return rv(np.linalg.norm(X, axis=-1))

    def gradient(X):
        r = np.linalg.norm(X, axis=-1)
        with np.errstate(divide="ignore", invalid="ignore"):
            xhat = np.where(r[..., None] > 0.0, X / np.maximum(r, 1e-300)[..., None], 0.0)
        return rd(r)[..., None] * xhat

    return TestFunction(f"hardy-quasi(eta={eta:g})", d, True, b_r, value,
                        gradient, rv, rd, None, head_power=p, head_radius=a)


def tensor_bump_member(width: float, d: int) -> TestFunction:
    def one_d(u):
        out = np.zeros_like(u)
        inside = np.abs(u) < 1.0
        out[inside] = np.exp(-1.0 / (1.0 - u[inside] ** 2))
        return out

    def one_d_log_deriv(u):
        # d/du log bump = -2u/(1-u^2)^2
        out = np.zeros_like(u)
        inside = np.abs(u) < 1.0
        out[inside] = -2.0 * u[inside] / (1.0 - u[inside] ** 2) ** 2
        return out

    def value(X):
        U = X / width
        vals = np.ones(X.shape[:-1])
        for j in range(d):
            vals = vals * one_d(U[..., j])
        return vals

    def gradient(X):
        U = X / width
        v = value(X)
        out = np.empty_like(X)
        for j in range(d):
            out[..., j] = v * one_d_log_deriv(U[..., j]) / width
        return out

    return TestFunction(f"tensor-bump(w={width:g})", d, False,
                        width * math.sqrt(d), value, gradient,
                        box_half_width=width)


@dataclass
class TestFunctionFamily:
    members: list
    descriptor: str
    dimension: int
    quadrature: str = "radial-geo-panels[256]; ball-product[24x16x32]"

    def member(self, name: str) -> TestFunction:
        for m in self.members:
            if m.name == name:
                return m
        raise KeyError(name)


def _member_self_norms(m: TestFunction) -> None:
    """Fill ||grad phi||_2^2 and ||phi||_2^2; verify both are sane."""
    d = m.dimension
    if m.radial:
        area = sphere_area(d)
        head_g = head_l = 0.0
        r_lo = 1e-9 * m.support_radius
        if m.head_power is not None:
            p, a = m.head_power, m.head_radius
            head_g = area * p**2 * a ** (2 * p + d - 2) / (2 * p + d - 2)
            head_l = area * a ** (2 * p + d) / (2 * p + d)
            r_lo = a
        rule = radial_rule(m.support_radius, r_min=r_lo, panels=32, nodes_per_panel=8)
        gsq = rule.integrate(m.radial_deriv(rule.nodes) ** 2 * rule.nodes ** (d - 1))
        lsq = rule.integrate(m.radial_value(rule.nodes) ** 2 * rule.nodes ** (d - 1))
        m.grad_norm_sq = head_g + area * gsq
        m.l2_norm_sq = head_l + area * lsq
    else:
        center = m.center if m.center is not None else np.zeros(d)
        rule = tensor_rule(center, m.box_half_width, d, nodes_per_axis=28)
        g = m.gradient(rule.points)
        m.grad_norm_sq = rule.integrate(np.sum(g * g, axis=-1))
        m.l2_norm_sq = rule.integrate(m.value(rule.points) ** 2)
    if not np.isfinite(m.l2_norm_sq) or not np.isfinite(m.grad_norm_sq) \
            or m.grad_norm_sq <= 0.0:
        raise NumericsError(f"degenerate test function {m.name!r}")


def reference_family(dimension: int = 3, radius: float = 2.0) -> TestFunctionFamily:
    """Default family: origin Gaussians, Hardy near-optimizers supported
    inside the cutoff plateau, one off-center Gaussian, one tensor bump."""
    members = []
    for frac in (0.15, 0.25, 0.4, 0.6):
        members.append(gaussian_member(frac * radius, dimension))
    for eta in (0.05, 0.1, 0.2):
        members.append(hardy_quasi_member(eta, dimension, radius / 2.0))
    center = np.zeros(dimension)
    center[0] = 0.3 * radius
    members.append(gaussian_member(0.2 * radius, dimension, center=center))
    members.append(tensor_bump_member(0.45 * radius, dimension))
    for m in members:
        _member_self_norms(m)
    return TestFunctionFamily(members, f"reference(d={dimension},R={radius:g})",
                              dimension)


def radial_family(dimension: int = 3, radius: float = 2.0) -> TestFunctionFamily:
    """Radial-only members; the cheap family for per-level schedules."""
    members = [gaussian_member(f * radius, dimension) for f in (0.2, 0.4)]
    members += [hardy_quasi_member(eta, dimension, radius / 2.0)
                for eta in (0.05, 0.1, 0.2)]
    for m in members:
        _member_self_norms(m)
    return TestFunctionFamily(members, f"radial(d={dimension},R={radius:g})",
                              dimension)


# ---------------------------------------------------------------------------
# Rayleigh quotients


def _numerator_radial(fieldlike, member: TestFunction, t: float) -> float:
    d = field_dimension(fieldlike)
    area = sphere_area(d)
    gmag = magnitude_profile(fieldlike, t)
    r_sup = min(field_support_radius(fieldlike), member.support_radius)
    head = 0.0
    r_lo = 1e-8 * r_sup
    if member.head_power is not None and has_inverse_radius_head(fieldlike):
        # |b| = c_eff/r and phi = r^p exactly on [0, head_radius]
        a = min(member.head_radius, r_sup)
        c_eff = float(gmag(np.array([a / 2.0]))[0]) * (a / 2.0)
        p = member.head_power
        expo = 2 * p + d - 2  # equals 2*eta for the near-optimizers
        head = area * c_eff**2 * a**expo / expo
        r_lo = a
    elif member.head_power is not None:
        r_lo = 1e-8 * r_sup
    if r_lo >= r_sup:
        return head
    rule = radial_rule(r_sup, r_min=r_lo, panels=32, nodes_per_panel=8)
    vals = gmag(rule.nodes) ** 2 * member.radial_value(rule.nodes) ** 2 \
        * rule.nodes ** (d - 1)
    return head + area * rule.integrate(vals)


def _numerator_generic(fieldlike, member: TestFunction, t: float) -> float:
    d = field_dimension(fieldlike)
    r_sup = field_support_radius(fieldlike)
    if d == 3:
        rule = ball_rule_3d(np.zeros(3), r_sup)
    else:
        rule = tensor_rule(np.zeros(d), r_sup, d, nodes_per_axis=16)
    mag = eval_magnitude(fieldlike, t, rule.points)
    phi = member.value(rule.points)
    return rule.integrate(mag**2 * phi**2)


def rayleigh_quotient(fieldlike, member: TestFunction, t: float) -> float:
    """||b(t,.) phi||_2^2 / ||grad phi||_2^2 for one member."""
    radial_field = magnitude_profile(fieldlike, t) is not None
    if member.radial and radial_field:
        num = _numerator_radial(fieldlike, member, t)
    else:
        num = _numerator_generic(fieldlike, member, t)
    if not np.isfinite(num):
        raise NumericsError(f"quotient quadrature failed on member {member.name!r}")
    return num / member.grad_norm_sq


@dataclass
class FormBoundReport:
    delta_hat: float
    quotients: list              # (member name, t, value)
    family_descriptor: str
    argmax_id: tuple
    quadrature: str

    def to_dict(self) -> dict:
        return {"delta_hat": self.delta_hat,
                "quotients": [{"member": n, "t": t, "value": v}
                              for (n, t, v) in self.quotients],
                "family": self.family_descriptor,
                "argmax": {"member": self.argmax_id[0], "t": self.argmax_id[1]},
                "quadrature": self.quadrature}


def estimate_form_bound(fieldlike, family: TestFunctionFamily = None,
                        times: Sequence[float] = (0.0,)) -> FormBoundReport:
    """Maximal Rayleigh quotient over (member, time); an explicit lower
    bound for the true form bound, with argmax provenance."""
    if family is None:
        family = reference_family(field_dimension(fieldlike),
                                  field_support_radius(fieldlike))
    if not family.members:
        raise ValueError("empty test-function family")
    quotients = []
    best = (-1.0, None)
    for m in family.members:
        for t in times:
            q = rayleigh_quotient(fieldlike, m, float(t))
            quotients.append((m.name, float(t), q))
            if q > best[0]:
                best = (q, (m.name, float(t)))
    delta_hat = max(0.0, best[0])
    return FormBoundReport(delta_hat, quotients, family.descriptor,
                           best[1], family.quadrature)


# ---------------------------------------------------------------------------
# closed-form and norm-based bounds


def hardy_delta(c: float, d: int) -> float:
    """Exact form bound of the uncut attracting field -c x/|x|^2:
    delta = (2c/(d-2))^2 (sharp constant of the Hardy inequality)."""
    if d < 3:
        raise ValueError("dimension must be >= 3")
    if c < 0:
        raise ValueError("coefficient must be nonnegative")
    return (2.0 * c / (d - 2)) ** 2


def sobolev_constant(d: int) -> float:
    """Best constant C_S in ||phi||_{2d/(d-2)}^2 <= C_S ||grad phi||_2^2
    (square of the sharp Sobolev-embedding constant)."""
    if d < 3:
        raise ValueError("dimension must be >= 3")
    ct = (1.0 / math.sqrt(d * (d - 2) * math.pi)) \
        * (math.gamma(d) / math.gamma(d / 2.0)) ** (1.0 / d)
    return ct**2


def lebesgue_norm(fieldlike, p: float, t: float = 0.0) -> float:
    """|| |b(t,.)| ||_p by quadrature (radial panels or ball rule)."""
    d = field_dimension(fieldlike)
    gmag = magnitude_profile(fieldlike, t)
    if gmag is not None:
        if has_inverse_radius_head(fieldlike) and p >= d:
            raise NumericsError(
                f"|field|^{p:g} is not integrable across the origin")
        r_sup = field_support_radius(fieldlike)
        rule = radial_rule(r_sup, r_min=1e-10 * r_sup, panels=40, nodes_per_panel=8)
        val = sphere_area(d) * rule.integrate(
            gmag(rule.nodes) ** p * rule.nodes ** (d - 1))
    else:
        r_sup = field_support_radius(fieldlike)
        if d == 3:
            rule = ball_rule_3d(np.zeros(3), r_sup)
        else:
            rule = tensor_rule(np.zeros(d), r_sup, d, nodes_per_axis=16)
        val = rule.integrate(eval_magnitude(fieldlike, t, rule.points) ** p)
    if not np.isfinite(val):
        raise NumericsError("Lebesgue-norm quadrature failed")
    return float(val ** (1.0 / p))


def sobolev_delta(fieldlike, times: Sequence[float] = (0.0,)) -> float:
    """C_S * sup_t ||b(t,.)||_d^2  (the L^d route to a form bound)."""
    d = field_dimension(fieldlike)
    sup_norm = max(lebesgue_norm(fieldlike, float(d), t) for t in times)
    return sobolev_constant(d) * sup_norm**2


# -- Morrey norm -------------------------------------------------------------

_UNIT_RADIAL_RULE: dict = {}


def _unit_radial_rule(d_key: int) -> RadialRule:
    if d_key not in _UNIT_RADIAL_RULE:
        _UNIT_RADIAL_RULE[d_key] = radial_rule(1.0, r_min=1e-7, panels=40,
                                               nodes_per_panel=8)
    return _UNIT_RADIAL_RULE[d_key]


def morrey_norm(fieldlike, eps: float, centers: Iterable, radii: Iterable,
                t: float = 0.0) -> float:
    """max over supplied (center, radius) of
    r * ( |B_r|^{-1} int_{B_r(x)} |b|^{2+eps} )^{1/(2+eps)].

    A grid maximum, hence a lower bound for the true supremum.  Nodes are
    generated as center + radius * (fixed unit nodes), so rescaling the
    grids together with a dilated field reproduces values to rounding.
    """
    if eps <= 0:
        raise ValueError("Morrey exponent offset must be positive")
    centers = [np.asarray(c, dtype=float) for c in centers]
    radii = [float(r) for r in radii]
    if not centers or not radii:
        raise ValueError("centers and radii must be nonempty")
    d = field_dimension(fieldlike)
    s = 2.0 + eps
    gmag = magnitude_profile(fieldlike, t)
    best = 0.0
    unit = _unit_radial_rule(d)
    for x0 in centers:
        centered = not np.any(x0)
        for r in radii:
            if centered and gmag is not None:
                nodes = r * unit.nodes
                integrand = gmag(nodes) ** s * nodes ** (d - 1)
                integral = sphere_area(d) * r * unit.integrate(integrand)
            elif d == 3:
                rule = ball_rule_3d(x0, r, n_r=24, n_theta=12, n_phi=24)
                integral = rule.integrate(
                    eval_magnitude(fieldlike, t, rule.points) ** s)
            else:
                raise NumericsError("off-center Morrey balls need d = 3")
            if not np.isfinite(integral):
                raise NumericsError("Morrey quadrature failed")
            avg = integral / ball_volume(d, r)
            best = max(best, r * avg ** (1.0 / s))
    return best


def default_morrey_grids(fieldlike, n_radii: int = 10):
    R = field_support_radius(fieldlike)
    d = field_dimension(fieldlike)
    radii = np.geomspace(1e-3 * R, R, n_radii)
    centers = [np.zeros(d)]
    for j in range(d):
        for sign in (+1.0, -1.0):
            c = np.zeros(d)
            c[j] = sign * 0.5 * R
            centers.append(c)
    return centers, radii.tolist()


# -- weak Lebesgue norm -------------------------------------------------------


def weak_ld_norm(fieldlike, levels: Iterable, t: float = 0.0,
                 n_radial: int = 400_000) -> float:
    """max over supplied s of  s * |{ |b(t,.)| > s }|^{1/d}  (lower bound
    of the weak-L^d supremum).  Radial fields use exact shell volumes."""
    levels = [float(s) for s in levels]
    if not levels or any(s <= 0 for s in levels):
        raise ValueError("levels must be positive and nonempty")
    d = field_dimension(fieldlike)
    gmag = magnitude_profile(fieldlike, t)
    if gmag is None:
        weak, _ = weak_vs_lebesgue_on_grid(
            fieldlike, levels, field_support_radius(fieldlike), t=t)
        return weak
    R = field_support_radius(fieldlike)
    edges = np.linspace(0.0, R, n_radial + 1)
    mids = 0.5 * (edges[:-1] + edges[1:])
    mags = gmag(mids)
    shell = ball_volume(d) * (edges[1:] ** d - edges[:-1] ** d)
    best = 0.0
    for s in levels:
        vol = float(np.sum(shell[mags > s]))
        best = max(best, s * vol ** (1.0 / d))
    return best


def weak_vs_lebesgue_on_grid(fieldlike, levels: Iterable, half_width: float,
                             n: int = 48, t: float = 0.0):
    """(weak norm, L^d norm) from the identical cell decomposition, so the
    discrete Chebyshev domination weak <= L^d holds exactly."""
    d = field_dimension(fieldlike)
    pts, cell = box_grid(half_width, n, d)
    mag = eval_magnitude(fieldlike, t, pts)
    ld = float(np.sum(mag**d) * cell) ** (1.0 / d)
    weak = 0.0
    for s in levels:
        s = float(s)
        vol = float(np.count_nonzero(mag > s) * cell)
        weak = max(weak, s * vol ** (1.0 / d))
    return weak, ld
