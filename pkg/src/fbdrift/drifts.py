"""Drift vector-field families.

Every field is described by a ``DriftSpec`` tree and evaluated pointwise
(vectorized over trailing point batches).  All analytic families are
multiplied by a fixed C^2 radial cutoff equal to 1 on B_{R/2}(0) and 0
outside B_R(0), so every spec has compact support; evaluation outside
the cutoff ball returns exact zeros.

Kinds
-----
zero            the zero field
hardy           attracting field  -c x / |x|^2   (singular at the origin)
linear          x -> A x
sampled         trilinear interpolation of values on a box grid (d = 3)
scaled          lambda * inner
sum             sum of inner terms
mollified       c_m * (smooth kernel)_eps * (inner truncated at level m)

The ``mollified`` kind is evaluated in :mod:`fbdrift.mollify`; for
radially equivariant inner fields with constant time envelope the
convolution is tabulated once on a dense radial grid and interpolated,
which is what makes ensemble-scale simulation affordable.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Callable, Optional, Tuple

import numpy as np

from .errors import ContractError, DomainError


# ---------------------------------------------------------------------------
# time envelopes


@dataclass
class TimeEnvelope:
    """Scalar multiplier e(t): 'constant', 'cosine' (offset + a*cos(w t)),
    or 'telegraph' (a seeded piecewise-constant +-1 sign string on a fixed
    step; deterministic given (seed, step), noise-like in time)."""

    kind: str = "constant"
    value: float = 1.0
    amplitude: float = 0.0
    omega: float = 0.0
    step: float = 0.02
    seed: int = 0

    _TELEGRAPH_LEN = 1 << 14

    def _signs(self) -> np.ndarray:
        gen = np.random.Generator(np.random.Philox(key=np.uint64(self.seed)))
        return gen.choice(np.array([-1.0, 1.0]), size=self._TELEGRAPH_LEN)

    def __call__(self, t):
        if self.kind == "constant":
            return self.value if np.isscalar(t) else np.full_like(np.asarray(t, float), self.value)
        if self.kind == "cosine":
            return self.value + self.amplitude * np.cos(self.omega * np.asarray(t, float))
        if self.kind == "telegraph":
            if not hasattr(self, "_sign_cache"):
                object.__setattr__(self, "_sign_cache", self._signs())
            idx = np.clip(np.floor(np.asarray(t, float) / self.step).astype(int),
                          0, self._TELEGRAPH_LEN - 1)
            out = self.value * self._sign_cache[idx]
            return float(out) if np.isscalar(t) else out
        raise ValueError(f"unknown time envelope kind {self.kind!r}")

    @property
    def is_constant(self) -> bool:
        return self.kind == "constant" or \
            (self.kind == "cosine" and self.amplitude == 0.0)

    def sup(self) -> float:
        if self.kind == "cosine":
            return abs(self.value) + abs(self.amplitude)
        return abs(self.value)

    def to_dict(self) -> dict:
        if self.kind == "telegraph":
            return {"kind": "telegraph", "value": self.value,
                    "step": self.step, "seed": self.seed}
        if self.is_constant:
            return {"kind": "constant", "value": self.value}
        return {"kind": "cosine", "value": self.value,
                "amplitude": self.amplitude, "omega": self.omega}

    @staticmethod
    def from_dict(doc) -> "TimeEnvelope":
        if doc is None:
            return TimeEnvelope()
        return TimeEnvelope(kind=doc.get("kind", "constant"),
                            value=float(doc.get("value", 1.0)),
                            amplitude=float(doc.get("amplitude", 0.0)),
                            omega=float(doc.get("omega", 0.0)),
                            step=float(doc.get("step", 0.02)),
                            seed=int(doc.get("seed", 0)))


# ---------------------------------------------------------------------------
# cutoff


def cutoff_value(r, radius: float):
    """C^2 radial bump: 1 on [0, R/2], quintic transition, 0 beyond R."""
    s = np.clip((2.0 * np.asarray(r, float) - radius) / radius, 0.0, 1.0)
    return 1.0 - s**3 * (10.0 - 15.0 * s + 6.0 * s**2)


def cutoff_derivative(r, radius: float):
    r = np.asarray(r, float)
    s = np.clip((2.0 * r - radius) / radius, 0.0, 1.0)
    return -30.0 * s**2 * (1.0 - s) ** 2 * (2.0 / radius)


# ---------------------------------------------------------------------------
# spec


KINDS = ("zero", "hardy", "linear", "sampled", "scaled", "sum", "mollified")


@dataclass
class DriftSpec:
    kind: str
    dimension: int
    cutoff_radius: float
    c: Optional[float] = None
    matrix: Optional[np.ndarray] = None
    scale: Optional[float] = None
    inner: Optional["DriftSpec"] = None
    terms: Tuple["DriftSpec", ...] = ()
    level: Optional[float] = None        # truncation level m (None: no truncation)
    width: float = 0.0                   # mollifier width eps (0: no smoothing)
    mass_scale: float = 1.0              # c_m
    values: Optional[np.ndarray] = None  # sampled grid (n, n, n, d)
    grid_half_width: Optional[float] = None
    time_envelope: Optional[TimeEnvelope] = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown drift kind {self.kind!r}")
        if self.dimension < 3:
            raise ValueError("dimension must be >= 3")
        if self.cutoff_radius <= 0:
            raise ValueError("cutoff_radius must be positive")

    # -- serialization ------------------------------------------------------

    def to_dict(self) -> dict:
        doc = {"kind": self.kind, "dimension": self.dimension,
               "cutoff_radius": self.cutoff_radius}
        if self.time_envelope is not None and not (
                self.time_envelope.is_constant and self.time_envelope.value == 1.0):
            doc["time_envelope"] = self.time_envelope.to_dict()
        if self.kind == "hardy":
            doc["c"] = self.c
        elif self.kind == "linear":
            doc["A"] = np.asarray(self.matrix).tolist()
        elif self.kind == "scaled":
            doc["lambda"] = self.scale
            doc["inner"] = self.inner.to_dict()
        elif self.kind == "sum":
            doc["terms"] = [s.to_dict() for s in self.terms]
        elif self.kind == "mollified":
            doc["m"] = self.level
            doc["eps"] = self.width
            doc["c_m"] = self.mass_scale
            doc["inner"] = self.inner.to_dict()
        elif self.kind == "sampled":
            doc["grid_half_width"] = self.grid_half_width
            doc["values"] = np.asarray(self.values).tolist()
        return doc

    @staticmethod
    def from_dict(doc: dict) -> "DriftSpec":
        kind = doc["kind"]
        env = TimeEnvelope.from_dict(doc.get("time_envelope")) \
            if "time_envelope" in doc else None
        d = int(doc.get("dimension", 3))
        radius = float(doc.get("cutoff_radius", 1.0))
        if kind == "zero":
            return DriftSpec("zero", d, radius, time_envelope=env)
        if kind == "hardy":
            return DriftSpec("hardy", d, radius, c=float(doc["c"]), time_envelope=env)
        if kind == "linear":
            return DriftSpec("linear", d, radius,
                             matrix=np.asarray(doc["A"], dtype=float), time_envelope=env)
        if kind == "scaled":
            return DriftSpec("scaled", d, radius, scale=float(doc["lambda"]),
                             inner=DriftSpec.from_dict(doc["inner"]), time_envelope=env)
        if kind == "sum":
            terms = tuple(DriftSpec.from_dict(t) for t in doc["terms"])
            return DriftSpec("sum", d, radius, terms=terms, time_envelope=env)
        if kind == "mollified":
            return DriftSpec("mollified", d, radius,
                             inner=DriftSpec.from_dict(doc["inner"]),
                             level=(None if doc.get("m") is None else float(doc["m"])),
                             width=float(doc.get("eps", 0.0)),
                             mass_scale=float(doc.get("c_m", 1.0)), time_envelope=env)
        if kind == "sampled":
            return DriftSpec("sampled", d, radius,
                             values=np.asarray(doc["values"], dtype=float),
                             grid_half_width=float(doc["grid_half_width"]),
                             time_envelope=env)
        raise ValueError(f"unknown drift kind {kind!r}")

    def key(self) -> str:
        """Canonical serialization; used as cache key and drift id."""
        return json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))


# -- constructors -----------------------------------------------------------


def zero(dimension: int = 3, radius: float = 2.0) -> DriftSpec:
    return DriftSpec("zero", dimension, radius)


def hardy_attractor(c: float, dimension: int = 3, radius: float = 2.0,
                    envelope: TimeEnvelope = None) -> DriftSpec:
    if c < 0:
        raise ValueError("coefficient c must be nonnegative")
    if c == 0:
        return zero(dimension, radius)
    return DriftSpec("hardy", dimension, radius, c=float(c), time_envelope=envelope)


def linear(matrix, radius: float = 2.0, envelope: TimeEnvelope = None) -> DriftSpec:
    A = np.asarray(matrix, dtype=float)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise ValueError("matrix must be square")
    return DriftSpec("linear", A.shape[0], radius, matrix=A, time_envelope=envelope)


def scaled(factor: float, inner: DriftSpec) -> DriftSpec:
    return DriftSpec("scaled", inner.dimension, inner.cutoff_radius,
                     scale=float(factor), inner=inner)


def drift_sum(*terms: DriftSpec) -> DriftSpec:
    if not terms:
        raise ValueError("sum needs at least one term")
    d = terms[0].dimension
    if any(t.dimension != d for t in terms):
        raise ValueError("summands must share dimension")
    radius = max(t.cutoff_radius for t in terms)
    return DriftSpec("sum", d, radius, terms=tuple(terms))


def sampled_grid(values, grid_half_width: float, radius: float = None) -> DriftSpec:
    vals = np.asarray(values, dtype=float)
    if vals.ndim != 4 or vals.shape[-1] != 3:
        raise ValueError("sampled grid values must have shape (n, n, n, 3)")
    if radius is None:
        radius = 2.0 * np.sqrt(3.0) * grid_half_width  # cutoff plateau covers the box
    return DriftSpec("sampled", 3, radius, values=vals,
                     grid_half_width=float(grid_half_width))


# ---------------------------------------------------------------------------
# evaluation


def _envelope_factor(spec: DriftSpec, t) -> float:
    return 1.0 if spec.time_envelope is None else float(spec.time_envelope(t))


def _trilinear(values: np.ndarray, half_width: float, X: np.ndarray) -> np.ndarray:
    """Trilinear interpolation with zero extension outside the box."""
    n = values.shape[0]
    h = 2.0 * half_width / (n - 1)
    U = (X + half_width) / h
    i0 = np.floor(U).astype(int)
    frac = U - i0
    out = np.zeros((X.shape[0], values.shape[-1]))
    inside = np.all((i0 >= 0) & (i0 <= n - 2), axis=1)
    if not inside.any():
        return out
    i0v, fr = i0[inside], frac[inside]
    acc = np.zeros((i0v.shape[0], values.shape[-1]))
    for dx in (0, 1):
        wx = np.where(dx == 0, 1.0 - fr[:, 0], fr[:, 0])
        for dy in (0, 1):
            wy = np.where(dy == 0, 1.0 - fr[:, 1], fr[:, 1])
            for dz in (0, 1):
                wz = np.where(dz == 0, 1.0 - fr[:, 2], fr[:, 2])
                w = wx * wy * wz
                acc += w[:, None] * values[i0v[:, 0] + dx, i0v[:, 1] + dy, i0v[:, 2] + dz]
    out[inside] = acc
    return out


def _eval_flat(spec: DriftSpec, t: float, X: np.ndarray) -> np.ndarray:
    kind = spec.kind
    if kind == "zero":
        out = np.zeros_like(X)
    elif kind == "hardy":
        r2 = np.sum(X * X, axis=-1)
        r = np.sqrt(r2)
        chi = cutoff_value(r, spec.cutoff_radius)
        with np.errstate(divide="ignore", invalid="ignore"):
            coef = np.where(r2 > 0.0, -spec.c * chi / r2, 0.0)
        out = coef[:, None] * X
    elif kind == "linear":
        r = np.linalg.norm(X, axis=-1)
        chi = cutoff_value(r, spec.cutoff_radius)
        out = (X @ spec.matrix.T) * chi[:, None]
    elif kind == "sampled":
        r = np.linalg.norm(X, axis=-1)
        chi = cutoff_value(r, spec.cutoff_radius)
        out = _trilinear(spec.values, spec.grid_half_width, X) * chi[:, None]
    elif kind == "scaled":
        out = spec.scale * _eval_flat(spec.inner, t, X)
    elif kind == "sum":
        out = _eval_flat(spec.terms[0], t, X)
        for term in spec.terms[1:]:
            out = out + _eval_flat(term, t, X)
    elif kind == "mollified":
        from . import mollify
        out = mollify.eval_mollified(spec, t, X)
    else:  # pragma: no cover
        raise ValueError(kind)
    f = _envelope_factor(spec, t)
    return out if f == 1.0 else f * out


def eval_drift(spec: DriftSpec, t: float, x) -> np.ndarray:
    """Evaluate b(t, x); x has shape (..., d).  Zero outside B_R(0)."""
    X = np.asarray(x, dtype=float)
    if X.shape[-1] != spec.dimension:
        raise ValueError(
            f"point dimension {X.shape[-1]} != spec dimension {spec.dimension}")
    flat = X.reshape(-1, spec.dimension)
    return _eval_flat(spec, float(t), flat).reshape(X.shape)


# ---------------------------------------------------------------------------
# gradients  (matrix convention: G[i, j] = d b_i / d x_j)


def _grad_flat(spec: DriftSpec, t: float, X: np.ndarray, fd_step: float = None) -> np.ndarray:
    d = spec.dimension
    kind = spec.kind
    if kind == "zero":
        out = np.zeros((X.shape[0], d, d))
    elif kind == "hardy":
        r2 = np.sum(X * X, axis=-1)
        if np.any(r2 == 0.0):
            raise DomainError("gradient of the attracting field is singular at the origin")
        r = np.sqrt(r2)
        chi = cutoff_value(r, spec.cutoff_radius)
        dchi = cutoff_derivative(r, spec.cutoff_radius)
        eye = np.eye(d)
        xx = X[:, :, None] * X[:, None, :]
        out = (-spec.c) * (
            chi[:, None, None] * (eye[None, :, :] / r2[:, None, None]
                                  - 2.0 * xx / (r2**2)[:, None, None])
            + dchi[:, None, None] * xx / (r**3)[:, None, None])
    elif kind == "linear":
        r = np.linalg.norm(X, axis=-1)
        chi = cutoff_value(r, spec.cutoff_radius)
        dchi = cutoff_derivative(r, spec.cutoff_radius)
        Ax = X @ spec.matrix.T
        with np.errstate(divide="ignore", invalid="ignore"):
            xhat = np.where(r[:, None] > 0.0, X / r[:, None], 0.0)
        out = chi[:, None, None] * spec.matrix[None, :, :] \
            + dchi[:, None, None] * Ax[:, :, None] * xhat[:, None, :]
    elif kind == "scaled":
        out = spec.scale * _grad_flat(spec.inner, t, X, fd_step)
    elif kind == "sum":
        out = _grad_flat(spec.terms[0], t, X, fd_step)
        for term in spec.terms[1:]:
            out = out + _grad_flat(term, t, X, fd_step)
    elif kind == "mollified":
        from . import mollify
        out = mollify.grad_mollified(spec, t, X, fd_step)
    elif kind == "sampled":
        step = fd_step if fd_step else 2.0 * spec.grid_half_width / (spec.values.shape[0] - 1)
        out = _central_fd_grad(spec, t, X, step)
    else:  # pragma: no cover
        raise ValueError(kind)
    f = _envelope_factor(spec, t)
    return out if f == 1.0 else f * out


def _central_fd_grad(spec: DriftSpec, t: float, X: np.ndarray, step: float) -> np.ndarray:
    d = spec.dimension
    out = np.empty((X.shape[0], d, d))
    for j in range(d):
        e = np.zeros(d)
        e[j] = step
        hi = _eval_flat(spec, t, X + e)
        lo = _eval_flat(spec, t, X - e)
        out[:, :, j] = (hi - lo) / (2.0 * step)
    # undo the envelope factor applied inside _eval_flat; caller reapplies it
    f = _envelope_factor(spec, t)
    return out if f == 1.0 else out / f


def grad_drift(spec: DriftSpec, t: float, x, fd_step: float = None) -> np.ndarray:
    """Jacobian matrix of the field at x; shape (..., d, d)."""
    X = np.asarray(x, dtype=float)
    if X.shape[-1] != spec.dimension:
        raise ValueError(
            f"point dimension {X.shape[-1]} != spec dimension {spec.dimension}")
    flat = X.reshape(-1, spec.dimension)
    out = _grad_flat(spec, float(t), flat, fd_step)
    return out.reshape(X.shape + (spec.dimension,))


# ---------------------------------------------------------------------------
# structural queries


def sup_bound(spec: DriftSpec) -> float:
    """Upper bound for sup |b| (inf for singular fields)."""
    env = spec.time_envelope.sup() if spec.time_envelope is not None else 1.0
    kind = spec.kind
    if kind == "zero":
        return 0.0
    if kind == "hardy":
        return np.inf
    if kind == "linear":
        return env * float(np.linalg.norm(spec.matrix, 2)) * spec.cutoff_radius
    if kind == "sampled":
        return env * float(np.max(np.linalg.norm(spec.values, axis=-1)))
    if kind == "scaled":
        return env * abs(spec.scale) * sup_bound(spec.inner)
    if kind == "sum":
        return env * sum(sup_bound(s) for s in spec.terms)
    if kind == "mollified":
        inner_sup = sup_bound(spec.inner)
        lvl = inner_sup if spec.level is None else min(spec.level, inner_sup)
        return env * spec.mass_scale * lvl
    raise ValueError(kind)


def variation_scale(spec: DriftSpec) -> float:
    """Length scale below which the field does not vary (for step-size checks)."""
    kind = spec.kind
    if kind == "zero":
        return np.inf
    if kind in ("hardy",):
        return 0.0
    if kind == "linear":
        return spec.cutoff_radius / 2.0
    if kind == "sampled":
        return 2.0 * spec.grid_half_width / (spec.values.shape[0] - 1)
    if kind == "scaled":
        return variation_scale(spec.inner)
    if kind == "sum":
        return min(variation_scale(s) for s in spec.terms)
    if kind == "mollified":
        return spec.width if spec.width > 0 else variation_scale(spec.inner)
    raise ValueError(kind)


def sde_admissible(spec: DriftSpec) -> bool:
    """True when the field is bounded and smooth enough for path integration."""
    kind = spec.kind
    if kind in ("zero", "linear", "sampled"):
        return True
    if kind == "hardy":
        return False
    if kind == "scaled":
        return sde_admissible(spec.inner)
    if kind == "sum":
        return all(sde_admissible(s) for s in spec.terms)
    if kind == "mollified":
        if spec.width > 0:
            return spec.level is not None or np.isfinite(sup_bound(spec.inner))
        # bare truncation is bounded but discontinuous at the level set
        return spec.level is None and sde_admissible(spec.inner)
    raise ValueError(kind)


def require_sde_admissible(spec: DriftSpec) -> None:
    if not sde_admissible(spec):
        raise ContractError(
            "path integration accepts only bounded smooth fields; "
            "mollify singular specs first")


# ---------------------------------------------------------------------------
# radial structure (fast paths + analytic heads)


def radial_profile(spec: DriftSpec, t: float = 0.0) -> Optional[Callable]:
    """If b(t, x) = g(|x|) * x/|x|, return vectorized g; else None."""
    env = _envelope_factor(spec, t)
    kind = spec.kind
    if kind == "zero":
        return lambda r: np.zeros_like(np.asarray(r, float))
    if kind == "hardy":
        c, R = spec.c, spec.cutoff_radius

        def g(r):
            r = np.asarray(r, float)
            with np.errstate(divide="ignore", invalid="ignore"):
                val = np.where(r > 0.0, -c / r, 0.0)
            return env * val * cutoff_value(r, R)
        return g
    if kind == "linear":
        A = spec.matrix
        lam = A[0, 0]
        if not np.allclose(A, lam * np.eye(spec.dimension), atol=0.0):
            return None
        R = spec.cutoff_radius
        return lambda r: env * lam * np.asarray(r, float) * cutoff_value(r, R)
    if kind == "scaled":
        inner = radial_profile(spec.inner, t)
        if inner is None:
            return None
        lam = spec.scale
        return lambda r: env * lam * inner(r)
    if kind == "sum":
        parts = [radial_profile(s, t) for s in spec.terms]
        if any(p is None for p in parts):
            return None
        return lambda r: env * sum(p(r) for p in parts)
    if kind == "mollified":
        from . import mollify
        return mollify.mollified_radial_profile(spec, t)
    if kind == "sampled":
        return None
    raise ValueError(kind)


def inverse_radius_coefficient(spec: DriftSpec) -> Optional[float]:
    """If |b(t, x)| = c_eff * e(t) / |x| exactly on the cutoff plateau,
    return c_eff; used for analytic singular head integrals."""
    if spec.kind == "hardy":
        return spec.c
    if spec.kind == "scaled":
        c = inverse_radius_coefficient(spec.inner)
        return None if c is None else abs(spec.scale) * c
    return None


def support_radius(spec: DriftSpec) -> float:
    """Radius outside of which the field vanishes identically."""
    if spec.kind == "mollified":
        return support_radius(spec.inner) + spec.width
    if spec.kind == "scaled":
        return support_radius(spec.inner)
    if spec.kind == "sum":
        return max(support_radius(s) for s in spec.terms)
    return spec.cutoff_radius
