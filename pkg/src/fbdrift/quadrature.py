"""Quadrature rules used throughout the lab.

Radial integrands (everything the singular drift families produce) are
integrated with composite Gauss-Legendre panels placed geometrically, so
integrable power singularities at the origin are resolved without
wasting nodes in the smooth far field.  Tensor rules cover the generic
(non-radial) cases.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np


def sphere_area(d: int) -> float:
    """Surface area of the unit sphere in R^d."""
    return 2.0 * math.pi ** (d / 2.0) / math.gamma(d / 2.0)


def ball_volume(d: int, r: float = 1.0) -> float:
    return sphere_area(d) / d * r**d


@dataclass(frozen=True)
class RadialRule:
    """Composite Gauss-Legendre rule on [r_min, r_max].

    Panels are geometric from ``r_min`` up to ``r_max`` so that power-law
    integrands r^p with p > -1 are integrated to near machine accuracy.
    The contribution of [0, r_min] is NOT included; callers either accept
    the truncation (bounded integrands) or add an analytic head term.
    """

    nodes: np.ndarray
    weights: np.ndarray
    r_min: float
    r_max: float

    @property
    def descriptor(self) -> str:
        return f"radial-geo-panels[{self.nodes.size}]({self.r_min:.3g},{self.r_max:.3g})"

    def integrate(self, values: np.ndarray) -> float:
        return float(np.dot(self.weights, values))


def radial_rule(r_max: float, r_min: float = None, panels: int = 32,
                nodes_per_panel: int = 8) -> RadialRule:
    if r_max <= 0:
        raise ValueError("r_max must be positive")
    if r_min is None:
        r_min = 1e-8 * r_max
    x, w = np.polynomial.legendre.leggauss(nodes_per_panel)
    edges = np.geomspace(r_min, r_max, panels + 1)
    a, b = edges[:-1], edges[1:]
    mid = 0.5 * (a + b)[:, None]
    half = 0.5 * (b - a)[:, None]
    nodes = (mid + half * x[None, :]).ravel()
    weights = (half * w[None, :]).ravel()
    return RadialRule(nodes, weights, float(r_min), float(r_max))


def uniform_radial_rule(r_max: float, panels: int = 64,
                        nodes_per_panel: int = 8) -> RadialRule:
    """Equal-width panels; right choice when the integrand has structure
    at a known interior scale rather than at the origin."""
    x, w = np.polynomial.legendre.leggauss(nodes_per_panel)
    edges = np.linspace(0.0, r_max, panels + 1)
    a, b = edges[:-1], edges[1:]
    mid = 0.5 * (a + b)[:, None]
    half = 0.5 * (b - a)[:, None]
    nodes = (mid + half * x[None, :]).ravel()
    weights = (half * w[None, :]).ravel()
    return RadialRule(nodes, weights, 0.0, float(r_max))


def gauss_legendre_interval(a: float, b: float, n: int):
    """Plain n-node Gauss-Legendre nodes/weights on [a, b]."""
    x, w = np.polynomial.legendre.leggauss(n)
    mid, half = 0.5 * (a + b), 0.5 * (b - a)
    return mid + half * x, half * w


@dataclass(frozen=True)
class TensorRule:
    """Tensor-product Gauss-Legendre rule over a box [-half, half]^d + center."""

    points: np.ndarray   # (N, d)
    weights: np.ndarray  # (N,)
    descriptor: str

    def integrate(self, values: np.ndarray) -> float:
        return float(np.dot(self.weights, values))


def tensor_rule(center, half_width: float, d: int, nodes_per_axis: int = 24) -> TensorRule:
    x, w = np.polynomial.legendre.leggauss(nodes_per_axis)
    x = x * half_width
    w = w * half_width
    grids = np.meshgrid(*([x] * d), indexing="ij")
    pts = np.stack([g.ravel() for g in grids], axis=-1) + np.asarray(center, dtype=float)
    wts = np.ones(1)
    for _ in range(d):
        wts = np.multiply.outer(wts, w).ravel()
    return TensorRule(pts, wts, f"tensor-gl[{nodes_per_axis}^{d}]")


def ball_rule_3d(center, radius: float, n_r: int = 24, n_theta: int = 16,
                 n_phi: int = 32) -> TensorRule:
    """Product rule on a ball in R^3: Gauss in r, Gauss in cos(theta),
    trapezoid in phi.  Nodes are generated as center + radius * (unit
    nodes), so rescaling (center, radius) rescales every node exactly.
    """
    r, wr = np.polynomial.legendre.leggauss(n_r)
    r = 0.5 * (r + 1.0)          # [0, 1]
    wr = 0.5 * wr * r**2         # jacobian r^2
    mu, wmu = np.polynomial.legendre.leggauss(n_theta)   # mu = cos(theta)
    phi = np.arange(n_phi) * (2.0 * math.pi / n_phi)
    wphi = np.full(n_phi, 2.0 * math.pi / n_phi)

    sin_t = np.sqrt(1.0 - mu**2)
    ux = np.einsum("j,k->jk", sin_t, np.cos(phi))
    uy = np.einsum("j,k->jk", sin_t, np.sin(phi))
    uz = np.broadcast_to(mu[:, None], ux.shape)
    unit = np.stack([ux, uy, uz], axis=-1)               # (n_theta, n_phi, 3)

    pts = (r[:, None, None, None] * unit[None, ...])     # (n_r, n_theta, n_phi, 3)
    pts = pts.reshape(-1, 3) * radius + np.asarray(center, dtype=float)
    wts = (wr[:, None, None] * wmu[None, :, None] * wphi[None, None, :]).reshape(-1)
    wts = wts * radius**3
    return TensorRule(pts, wts, f"ball-product[{n_r}x{n_theta}x{n_phi}]")


def box_grid(half_width: float, n: int, d: int, center=None):
    """Cell-centered uniform grid over [-half, half]^d; returns (points, cell_volume)."""
    edges = np.linspace(-half_width, half_width, n + 1)
    mids = 0.5 * (edges[:-1] + edges[1:])
    grids = np.meshgrid(*([mids] * d), indexing="ij")
    pts = np.stack([g.ravel() for g in grids], axis=-1)
    if center is not None:
        pts = pts + np.asarray(center, dtype=float)
    cell = (2.0 * half_width / n) ** d
    return pts, cell
