"""Occupation-time functionals and their reference norms.

The Monte Carlo estimate of  E int_0^T |h(t, X_t)| dt  (left Riemann sum
on the ensemble grid) is compared against a norm of h: the space-time
L^mu norm for the plain bound (mu > (d+2)/2), or the composite norm
|| g |h|^{q/2} ||_{L^2}^{2/q} with a weight field g and an exponent
q in the open interval (d, delta_hat^{-1/2}) tied to the drift's
measured form bound.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import drifts, formbound
from .drifts import DriftSpec
from .errors import InfeasibleError
from .quadrature import ball_volume, box_grid, gauss_legendre_interval
from .sde import PathEnsemble


class TestField:
    """Closed-form scalar test function h(t, x) from the config catalog."""

    def __init__(self, name: str, kind: str, dimension: int = 3, radius: float = 1.0,
                 sigma: float = 0.5, amplitude: float = 1.0, center=None):
        self.name = name
        self.kind = kind
        self.dimension = dimension
        self.radius = float(radius)
        self.sigma = float(sigma)
        self.amplitude = float(amplitude)
        self.center = np.zeros(dimension) if center is None else np.asarray(center, float)
        if kind not in ("indicator-ball", "gaussian", "polynomial-bump"):
            raise ValueError(f"unknown test field kind {kind!r}")

    def __call__(self, t, X: np.ndarray) -> np.ndarray:
        Y = X - self.center
        r2 = np.sum(Y * Y, axis=-1)
        if self.kind == "indicator-ball":
            return self.amplitude * (r2 <= self.radius**2)
        if self.kind == "gaussian":
            return self.amplitude * np.exp(-r2 / (2.0 * self.sigma**2))
        u2 = r2 / self.radius**2
        return self.amplitude * np.where(u2 < 1.0, (1.0 - u2) ** 2, 0.0)

    @property
    def support_half_width(self) -> float:
        if self.kind == "gaussian":
            return 8.0 * self.sigma
        return self.radius

    def lp_space_time_norm(self, p: float, t_span: float) -> float:
        """|| h ||_{L^p([0,T] x R^d)} (time-constant catalog members)."""
        d, a = self.dimension, abs(self.amplitude)
        if self.kind == "indicator-ball":
            spatial = ball_volume(d, self.radius)
        elif self.kind == "gaussian":
            spatial = (2.0 * math.pi * self.sigma**2 / p) ** (d / 2.0)
        else:
            nodes, wts = gauss_legendre_interval(0.0, self.radius, 64)
            from .quadrature import sphere_area
            u2 = nodes**2 / self.radius**2
            spatial = sphere_area(d) * float(
                np.dot(wts, (1.0 - u2) ** (2 * p) * nodes ** (d - 1)))
        return a * (t_span * spatial) ** (1.0 / p)

    def to_dict(self) -> dict:
        return {"name": self.name, "kind": self.kind, "dimension": self.dimension,
                "radius": self.radius, "sigma": self.sigma,
                "amplitude": self.amplitude, "center": self.center.tolist()}

    @staticmethod
    def from_dict(doc: dict) -> "TestField":
        return TestField(doc.get("name", doc["kind"]), doc["kind"],
                         int(doc.get("dimension", 3)), float(doc.get("radius", 1.0)),
                         float(doc.get("sigma", 0.5)), float(doc.get("amplitude", 1.0)),
                         doc.get("center"))


@dataclass
class KrylovReport:
    estimate: float
    stderr: float
    ref_norm: float
    ratio: float
    exponent: float
    kind: str

    def to_dict(self) -> dict:
        return dict(vars(self))


def _occupation(ens: PathEnsemble, weight) -> np.ndarray:
    """Per-path left Riemann sum of weight(t_k, X_k) * dt over the grid."""
    if ens.paths is None or ens.lattice:
        raise ValueError("occupation functionals need a single-start ensemble "
                         "with stored paths")
    M, n = ens.n_paths, ens.n_steps
    acc = np.zeros(M)
    for k in range(n):
        acc += weight(float(ens.times[k]), ens.paths[:, k, :])
    return acc * ens.dt


def krylov_functional(ens: PathEnsemble, h: TestField, mu: float) -> KrylovReport:
    """E int |h(t, X_t)| dt against ||h||_{L^mu([0,T] x R^d)}."""
    d = ens.dimension
    if mu <= (d + 2) / 2.0:
        raise ValueError(f"mu must exceed (d+2)/2 = {(d + 2) / 2:g}")
    F = _occupation(ens, lambda t, X: np.abs(h(t, X)))
    est = float(np.mean(F))
    se = float(np.std(F, ddof=1) / math.sqrt(ens.n_paths))
    ref = h.lp_space_time_norm(mu, ens.horizon - ens.s)
    return KrylovReport(est, se, ref, est / ref if ref > 0 else np.inf, mu, "lp")


def admissible_q_interval(d: int, delta_hat: float):
    hi = np.inf if delta_hat <= 0 else delta_hat ** (-0.5)
    return float(d), float(hi)


def krylov_g_functional(ens: PathEnsemble, g: Optional[DriftSpec], h: TestField,
                        q: float, drift_delta_hat: float,
                        n_grid: int = 48, n_time: int = 8) -> KrylovReport:
    """E int |g h|(t, X_t) dt against || g |h|^{q/2} ||_{L^2}^{2/q};
    q must lie in the open interval (d, delta_hat^{-1/2})."""
    d = ens.dimension
    lo, hi = admissible_q_interval(d, drift_delta_hat)
    if hi <= lo:
        raise InfeasibleError(
            f"empty admissible exponent interval ({lo:g}, {hi:g}) for "
            f"delta_hat={drift_delta_hat:g}")
    if not (lo < q < hi):
        raise ValueError(f"q={q:g} outside the admissible interval ({lo:g}, {hi:g})")

    if g is None:
        weight = lambda t, X: np.abs(h(t, X))
    else:
        weight = lambda t, X: np.linalg.norm(
            drifts.eval_drift(g, t, X), axis=-1) * np.abs(h(t, X))
    F = _occupation(ens, weight)
    est = float(np.mean(F))
    se = float(np.std(F, ddof=1) / math.sqrt(ens.n_paths))

    # reference norm: ( int int |g|^2 |h|^q dx dt )^{1/q}
    half = h.support_half_width
    pts, cell = box_grid(half, n_grid, d, center=h.center)
    tn, tw = gauss_legendre_interval(ens.s, ens.horizon, n_time)
    total = 0.0
    for t, w in zip(tn, tw):
        hv = np.abs(h(float(t), pts)) ** q
        if g is None:
            total += w * float(np.sum(hv)) * cell
        else:
            gm = np.linalg.norm(drifts.eval_drift(g, float(t), pts), axis=-1)
            total += w * float(np.sum(gm**2 * hv)) * cell
    ref = total ** (1.0 / q)
    return KrylovReport(est, se, ref, est / ref if ref > 0 else np.inf, q, "composite")
