"""Backward parabolic solves on a truncated box and the energy-estimate
cascade.

Terminal-value problems  du/dt + (1/2) Lap u + b.grad u + g = 0,
u(T1) = 0  are marched backward (equivalently: forward in reversed
time) with second-order central differences for the Laplacian,
first-order upwinding for the advection, and explicit Euler steps under
a positivity-preserving CFL bound.  The march accumulates the discrete
energy ledger (midpoint rule in time, trapezoid-consistent cell sums,
central-stencil gradient energy) so the integral identity obtained by
multiplying the equation by u can be checked at discretization order
without storing every frame.

The cascade solves u_n, ..., u_1 by back-substitution with sources
g_k = (d_{alpha_k} f_k) u_{k+1}, rebuilds the reversed initial-value
problem for U on [0, T1], and checks the contraction chain with the
constants  C1 = 1 - 2 sqrt(delta) - 2 eps nu - 1/(2 beta)  and
C2 = 2 beta nu + 1/(2 eps)  computed from the measured form bounds.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field as dc_field
from typing import Callable, Optional, Sequence

import numpy as np

from . import drifts, formbound
from .drifts import DriftSpec, cutoff_value, cutoff_derivative
from .errors import InfeasibleError, NumericsError
from .quadrature import gauss_legendre_interval

# ---------------------------------------------------------------------------
# scalar sources (the form-bounded fields feeding the cascade)


class ScalarBump:
    """Smooth compactly supported scalar field A * exp(-|x-x0|^2 / 2w^2)
    times the radial cutoff, with an optional time envelope; analytic
    partial derivatives."""

    def __init__(self, amplitude: float, width: float, dimension: int = 3,
                 cutoff_radius: float = 1.0, center=None, envelope=None):
        self.amplitude = float(amplitude)
        self.width = float(width)
        self.dimension = dimension
        self.cutoff_radius = float(cutoff_radius)
        self.center = None if center is None else np.asarray(center, dtype=float)
        self.envelope = envelope
        self.support_radius = self.cutoff_radius
        self.has_inverse_radius_head = False

    def _env(self, t: float) -> float:
        return 1.0 if self.envelope is None else float(self.envelope(t))

    def spatial_value(self, X: np.ndarray) -> np.ndarray:
        Y = X if self.center is None else X - self.center
        r = np.linalg.norm(X, axis=-1)
        g = np.exp(-np.sum(Y * Y, axis=-1) / (2.0 * self.width**2))
        return self.amplitude * g * cutoff_value(r, self.cutoff_radius)

    def value(self, t: float, X: np.ndarray) -> np.ndarray:
        return self._env(t) * self.spatial_value(X)

    def spatial_partial(self, alpha: int, X: np.ndarray) -> np.ndarray:
        """d f / d x_alpha at unit envelope (alpha is 1-based)."""
        j = alpha - 1
        Y = X if self.center is None else X - self.center
        r = np.linalg.norm(X, axis=-1)
        g = self.amplitude * np.exp(-np.sum(Y * Y, axis=-1) / (2.0 * self.width**2))
        chi = cutoff_value(r, self.cutoff_radius)
        dchi = cutoff_derivative(r, self.cutoff_radius)
        with np.errstate(divide="ignore", invalid="ignore"):
            xhat_j = np.where(r > 0.0, X[..., j] / np.maximum(r, 1e-300), 0.0)
        return g * (-(Y[..., j]) / self.width**2 * chi + dchi * xhat_j)

    def partial(self, alpha: int, t: float, X: np.ndarray) -> np.ndarray:
        return self._env(t) * self.spatial_partial(alpha, X)

    # formbound protocol
    def eval_magnitude(self, t: float, X: np.ndarray) -> np.ndarray:
        return np.abs(self.value(t, X))

    def magnitude_profile(self, t: float):
        if self.center is not None and np.any(self.center):
            return None
        A = abs(self.amplitude) * abs(self._env(t))
        w, R = self.width, self.cutoff_radius
        return lambda r: A * np.exp(-np.asarray(r, float) ** 2 / (2.0 * w**2)) \
            * cutoff_value(r, R)

    def rescaled(self, amplitude: float) -> "ScalarBump":
        return ScalarBump(amplitude, self.width, self.dimension,
                          self.cutoff_radius, self.center, self.envelope)

    def to_dict(self) -> dict:
        return {"amplitude": self.amplitude, "width": self.width,
                "dimension": self.dimension, "cutoff_radius": self.cutoff_radius,
                "center": None if self.center is None else self.center.tolist(),
                "envelope": None if self.envelope is None else self.envelope.to_dict()}

    @staticmethod
    def from_dict(doc: dict) -> "ScalarBump":
        from .drifts import TimeEnvelope
        env = None
        if doc.get("envelope") is not None:
            env = TimeEnvelope.from_dict(doc["envelope"])
        return ScalarBump(doc["amplitude"], doc["width"],
                          int(doc.get("dimension", 3)),
                          float(doc.get("cutoff_radius", 1.0)),
                          doc.get("center"), env)


def bump_with_form_bound(nu_target: float, width: float = 0.35,
                         cutoff_radius: float = 1.0, center=None,
                         family=None) -> ScalarBump:
    """Scalar bump rescaled so its measured form bound equals nu_target
    (the Rayleigh quotient is exactly quadratic in the amplitude)."""
    unit = ScalarBump(1.0, width, 3, cutoff_radius, center)
    if family is None:
        family = formbound.reference_family(3, max(2.0, 2.0 * cutoff_radius))
    nu_unit = formbound.estimate_form_bound(unit, family).delta_hat
    return unit.rescaled(math.sqrt(nu_target / nu_unit))


# ---------------------------------------------------------------------------
# grid plumbing


@dataclass
class GridSettings:
    half_width: float
    n: int                    # nodes per axis, boundaries included
    dt: Optional[float] = None
    cfl_safety: float = 0.9
    frame_stride: int = 1     # keep every k-th frame (ledger is always exact)

    @property
    def spacing(self) -> float:
        return 2.0 * self.half_width / (self.n - 1)

    def axis(self) -> np.ndarray:
        return np.linspace(-self.half_width, self.half_width, self.n)

    def points(self) -> np.ndarray:
        ax = self.axis()
        gx, gy, gz = np.meshgrid(ax, ax, ax, indexing="ij")
        return np.stack([gx, gy, gz], axis=-1)


def suggest_half_width(support_radius: float, span: float,
                       safety: float = 2.0) -> float:
    """Box half-width: drift support plus a diffusive-spread margin."""
    return support_radius + safety * math.sqrt(2.0 * max(span, 0.0))


@dataclass
class GridField:
    values: np.ndarray
    half_width: float
    spacing: float
    time: float


def stable_dt(grid: GridSettings, b_sum_bound: float) -> float:
    """Positivity-preserving explicit step: covers the diffusion bound
    dt <= 0.9 h^2/(2d) and the advection bound jointly."""
    h, d = grid.spacing, 3
    return grid.cfl_safety / (2.0 * d / h**2 + b_sum_bound / h)


def _cell_sum(u: np.ndarray, h: float) -> float:
    return float(np.sum(u)) * h**3


def _central_grad_sq(u: np.ndarray, h: float) -> np.ndarray:
    """|grad u|^2 by the central stencil on interior nodes (zero boundary)."""
    g = np.zeros_like(u)
    inv2h = 1.0 / (2.0 * h)
    gx = (u[2:, 1:-1, 1:-1] - u[:-2, 1:-1, 1:-1]) * inv2h
    gy = (u[1:-1, 2:, 1:-1] - u[1:-1, :-2, 1:-1]) * inv2h
    gz = (u[1:-1, 1:-1, 2:] - u[1:-1, 1:-1, :-2]) * inv2h
    g[1:-1, 1:-1, 1:-1] = gx**2 + gy**2 + gz**2
    return g


@dataclass
class EnergyLedger:
    """Discrete pieces of the identity obtained by multiplying by u.

    All time integrals are midpoint-in-u over each step; the advection
    term reuses the stepper's upwind product, so the residual is a pure
    space-time discretization defect of order O(h^2 + dt).
    """
    half_u2_start: float = 0.0
    half_u2_end: float = 0.0
    grad_energy: float = 0.0      # int <|grad u|^2> dt, central stencil
    advection: float = 0.0        # int <(b . grad u) u> dt, upwind product
    source: float = 0.0           # int <g u> dt
    boundary_leak: float = 0.0    # max |u| on the boundary-adjacent shell

    def residual(self) -> float:
        return abs(self.half_u2_end - self.half_u2_start
                   + 0.5 * self.grad_energy - self.advection - self.source)


class SolveResult:
    """Time-indexed solution frames plus the exact march ledger.

    ``frames[j]`` lives at ``times[j]``; by convention times ascend in
    MARCH order (for terminal problems, march time tau = T1 - t).
    ``physical_times`` gives the problem-time stamps.
    """

    def __init__(self, grid: GridSettings, times, physical_times, frames,
                 ledger: EnergyLedger, orientation: str, dt: float):
        self.grid = grid
        self.times = times
        self.physical_times = physical_times
        self.frames = frames
        self.ledger = ledger
        self.orientation = orientation
        self.dt = dt

    def frame_at_physical(self, t: float) -> np.ndarray:
        idx = int(round(np.argmin(np.abs(np.asarray(self.physical_times) - t))))
        if abs(self.physical_times[idx] - t) > 1e-9 * max(1.0, abs(t)):
            raise ValueError(f"time {t} not on the stored frame grid")
        return self.frames[idx]

    @property
    def terminal_mass(self) -> float:
        """<u^2> at the march end (for the reversed problem: <U^2(T1)>)."""
        return _cell_sum(self.frames[-1] ** 2, self.grid.spacing)


def energy_identity_residual(result: SolveResult) -> float:
    """|0.5<u^2(end)> - 0.5<u^2(start)> + 0.5 int<|grad u|^2>
    - int<(b.grad u) u> - int<g u>| in march orientation."""
    return result.ledger.residual()


# ---------------------------------------------------------------------------
# the explicit march


def _advection(u: np.ndarray, B: np.ndarray, h: float) -> np.ndarray:
    """Upwind b . grad u on interior nodes; B has shape (3, n, n, n)."""
    out = np.zeros_like(u)
    inner = (slice(1, -1),) * 3
    for axis in range(3):
        up = [slice(1, -1)] * 3
        dn = [slice(1, -1)] * 3
        up[axis] = slice(2, None)
        dn[axis] = slice(0, -2)
        dplus = (u[tuple(up)] - u[inner]) / h
        dminus = (u[inner] - u[tuple(dn)]) / h
        Bi = B[axis][inner]
        out[inner] += np.where(Bi > 0.0, Bi * dplus, Bi * dminus)
    return out


def _laplacian(u: np.ndarray, h: float) -> np.ndarray:
    out = np.zeros_like(u)
    inner = (slice(1, -1),) * 3
    acc = -6.0 * u[inner]
    for axis in range(3):
        up = [slice(1, -1)] * 3
        dn = [slice(1, -1)] * 3
        up[axis] = slice(2, None)
        dn[axis] = slice(0, -2)
        acc = acc + u[tuple(up)] + u[tuple(dn)]
    out[inner] = acc / h**2
    return out


def march(grid: GridSettings, n_steps: int, dt: float,
          b_of_step: Callable[[int], Optional[np.ndarray]],
          g_of_step: Callable[[int], Optional[np.ndarray]],
          u0: Optional[np.ndarray] = None,
          frame_stride: int = 1,
          nan_check_every: int = 25):
    """Forward-time explicit march; returns (times, frames, ledger).

    ``b_of_step(k)`` and ``g_of_step(k)`` supply coefficients at march
    time k*dt (explicit Euler uses left endpoints).
    """
    n, h = grid.n, grid.spacing
    u = np.zeros((n, n, n)) if u0 is None else u0.copy()
    ledger = EnergyLedger()
    ledger.half_u2_start = 0.5 * _cell_sum(u * u, h)
    frames = {0: u.copy()}
    inner = (slice(1, -1),) * 3
    for k in range(n_steps):
        B = b_of_step(k)
        g = g_of_step(k)
        rhs = 0.5 * _laplacian(u, h)
        adv = None
        if B is not None:
            adv = _advection(u, B, h)
            rhs[inner] += adv[inner]
        if g is not None:
            rhs[inner] += g[inner]
        unew = u + dt * rhs
        unew[0, :, :] = unew[-1, :, :] = 0.0
        unew[:, 0, :] = unew[:, -1, :] = 0.0
        unew[:, :, 0] = unew[:, :, -1] = 0.0
        ubar = 0.5 * (u + unew)
        ledger.grad_energy += dt * _cell_sum(_central_grad_sq(ubar, h), h)
        if adv is not None:
            ledger.advection += dt * _cell_sum(adv * ubar, h)
        if g is not None:
            ledger.source += dt * _cell_sum(g * ubar, h)
        u = unew
        if (k + 1) % nan_check_every == 0 and not np.all(np.isfinite(u[inner])):
            raise NumericsError(f"march produced non-finite values at step {k + 1}")
        if (k + 1) % frame_stride == 0 or k + 1 == n_steps:
            frames[k + 1] = u.copy()
    if not np.all(np.isfinite(u)):
        raise NumericsError(f"march produced non-finite values at step {n_steps}")
    ledger.half_u2_end = 0.5 * _cell_sum(u * u, h)
    shell = np.abs(np.concatenate([
        u[1, :, :].ravel(), u[-2, :, :].ravel(),
        u[:, 1, :].ravel(), u[:, -2, :].ravel(),
        u[:, :, 1].ravel(), u[:, :, -2].ravel()]))
    ledger.boundary_leak = float(shell.max()) if shell.size else 0.0
    times = np.arange(n_steps + 1) * dt
    return times, frames, ledger


class _DriftOnGrid:
    """Caches the spatial drift field on the grid; a constant time
    envelope is the common case and costs one evaluation."""

    def __init__(self, spec: Optional[DriftSpec], grid: GridSettings):
        self.spec = spec
        self.grid = grid
        self._pts = None
        self._cached = None
        if spec is not None:
            self._pts = grid.points()
            env = spec.time_envelope
            self._constant = env is None or env.is_constant
            if self._constant:
                self._cached = self._eval(0.0)

    def _eval(self, t: float) -> np.ndarray:
        vals = drifts.eval_drift(self.spec, t, self._pts)
        return np.moveaxis(vals, -1, 0).copy()

    def at(self, t: float) -> Optional[np.ndarray]:
        if self.spec is None:
            return None
        if self._constant:
            return self._cached
        return self._eval(t)

    def sum_bound(self) -> float:
        if self.spec is None:
            return 0.0
        if self._constant:
            return float(np.max(np.sum(np.abs(self._cached), axis=0)))
        sup = drifts.sup_bound(self.spec)
        return math.sqrt(3.0) * (sup if np.isfinite(sup) else 0.0)


def _aligned_dt(t0: float, t1: float, dt_max: float) -> float:
    """Largest dt <= dt_max such that both T1-T0 and T0 are multiples."""
    span = t1 - t0
    if span <= 0:
        raise ValueError("need T0 < T1")
    m = max(1, math.ceil(span / dt_max))
    for k in range(1, 400):
        dt = span / (m * k)
        if t0 == 0.0 or abs(round(t0 / dt) - t0 / dt) < 1e-9:
            return dt
    raise ValueError("could not align dt with both T0 and T1-T0")


def solve_terminal(b: Optional[DriftSpec], g, t0: float, t1: float,
                   grid: GridSettings, dt: float = None,
                   frame_stride: int = None) -> SolveResult:
    """Solve  du/dt + (1/2) Lap u + b.grad u + g = 0,  u(T1) = 0  on the
    box; ``g`` is callable(t, points)->(n,n,n) or None.

    Frames are returned in march order (tau = T1 - t ascending);
    ``physical_times`` descend from T1 to T0.
    """
    if t1 < t0:
        raise ValueError("need T0 <= T1")
    bg = _DriftOnGrid(b, grid)
    dt_bound = stable_dt(grid, bg.sum_bound())
    if dt is not None and dt > dt_bound:
        raise ValueError(
            f"dt={dt:g} violates the stability bound {dt_bound:g}")
    if dt is None:
        dt = _aligned_dt(t0, t1, dt_bound)
    n_steps = int(round((t1 - t0) / dt))
    pts = grid.points()

    def b_step(k):
        return bg.at(t1 - k * dt)

    def g_step(k):
        if g is None:
            return None
        return g(t1 - k * dt, pts)

    stride = frame_stride if frame_stride is not None else grid.frame_stride
    times, frames, ledger = march(grid, n_steps, dt, b_step, g_step,
                                  frame_stride=stride)
    frame_list = [frames[j] for j in sorted(frames)]
    march_times = np.array(sorted(frames)) * dt
    physical = t1 - march_times
    return SolveResult(grid, march_times, physical, frame_list, ledger,
                       "terminal", dt)


def build_reversed_problem(b: Optional[DriftSpec], g1, t0: float, t1: float):
    """Coefficients (B, G) of the reversed initial-value problem
    dU/dt - (1/2) Lap U - B.grad U - G = 0, U(0) = 0 on [0, T1]:
    B(t) replays b backward over [0, T1-T0] and forward-shifted after;
    G(t) replays g1 backward over [0, T1-T0] and vanishes after."""
    span = t1 - t0

    def B_at(t: float):
        return (t1 - t) if t <= span else (t + t0 - t1)

    def G(t, pts):
        if g1 is None or t > span + 1e-12:
            return None
        return g1(t1 - t, pts)

    return B_at, G


def solve_reversed(b: Optional[DriftSpec], g1, t0: float, t1: float,
                   grid: GridSettings, dt: float = None,
                   frame_stride: int = None) -> SolveResult:
    """March the reversed problem U on [0, T1] (forward in its own time).

    The step is aligned so that both T0 and T1 - T0 are grid multiples.
    """
    bg = _DriftOnGrid(b, grid)
    dt_bound = stable_dt(grid, bg.sum_bound())
    if dt is None:
        dt = _aligned_dt(t0, t1, dt_bound)
    elif dt > dt_bound:
        raise ValueError(f"dt={dt:g} violates the stability bound {dt_bound:g}")
    n_steps = int(round(t1 / dt))
    if abs(n_steps * dt - t1) > 1e-9 * max(1.0, t1):
        raise ValueError("dt does not divide T1")
    B_at, G = build_reversed_problem(b, g1, t0, t1)
    pts = grid.points()

    def b_step(k):
        return bg.at(B_at(k * dt))

    def g_step(k):
        return G(k * dt, pts)

    stride = frame_stride if frame_stride is not None else grid.frame_stride
    times, frames, ledger = march(grid, n_steps, dt, b_step, g_step,
                                  frame_stride=stride)
    frame_list = [frames[j] for j in sorted(frames)]
    march_times = np.array(sorted(frames)) * dt
    return SolveResult(grid, march_times, march_times, frame_list, ledger,
                       "reversed", dt)


# ---------------------------------------------------------------------------
# the cascade


@dataclass
class CascadeConfig:
    drift: DriftSpec
    sources: list
    alphas: Sequence[int]
    t0: float
    t1: float
    grid: GridSettings
    eps_q: Optional[float] = None
    beta_q: Optional[float] = None
    delta_hat: Optional[float] = None
    nu_hat: Optional[float] = None
    delta_max: float = 0.05
    nu_max: float = 0.05
    disc_slack: float = 0.25
    energy_floor: float = 1e-14
    family: object = None

    def __post_init__(self):
        if len(self.sources) != len(self.alphas):
            raise ValueError("need one derivative index per source")
        if any(a < 1 or a > 3 for a in self.alphas):
            raise ValueError("derivative indices are 1-based in {1..3}")
        if self.t0 > self.t1:
            raise ValueError("need T0 <= T1")
        if self.eps_q is not None and self.eps_q <= 0:
            raise ValueError("eps must be positive")
        if self.beta_q is not None and self.beta_q <= 0:
            raise ValueError("beta must be positive")

    def measured_bounds(self):
        fam = self.family
        if self.delta_hat is None:
            self.delta_hat = formbound.estimate_form_bound(self.drift, fam).delta_hat
        if self.nu_hat is None:
            self.nu_hat = max(
                formbound.estimate_form_bound(f, fam).delta_hat
                for f in self.sources)
        return self.delta_hat, self.nu_hat


def cascade_constants(delta: float, nu: float, eps_q: float = None,
                      beta_q: float = None):
    """(C1, C2, eps, beta): the contraction chain holds when C1 > 0."""
    if eps_q is None or beta_q is None:
        default = max(2.0, 1.0 / (2.0 * math.sqrt(max(nu, 1e-12))))
        eps_q = default if eps_q is None else eps_q
        beta_q = default if beta_q is None else beta_q
    c1 = 1.0 - 2.0 * math.sqrt(delta) - 2.0 * eps_q * nu - 1.0 / (2.0 * beta_q)
    c2 = 2.0 * beta_q * nu + 1.0 / (2.0 * eps_q)
    return c1, c2, eps_q, beta_q


@dataclass
class CascadeResult:
    energies: dict            # {k: int <|grad u_k|^2>} for k = 2..n
    u2_terminal: float        # <U^2(T1)>
    e_u: float                # int_0^T1 <|grad U|^2>
    ratios: dict              # {k: E_k / E_{k+1}} where defined
    k_bound: float            # C2/C1 from the measured form bounds
    k_hat: Optional[float]    # geometric mean of measured ratios
    c1: float
    c2: float
    eps_q: float
    beta_q: float
    delta_hat: float
    nu_hat: float
    n_levels: int
    span: float
    link_ok: Optional[bool]
    ratios_ok: Optional[bool]
    boundary_leak: float
    degenerate: bool

    def to_dict(self) -> dict:
        out = {k: v for k, v in vars(self).items() if k not in ("energies", "ratios")}
        out["energies"] = {str(k): v for k, v in self.energies.items()}
        out["ratios"] = {str(k): v for k, v in self.ratios.items()}
        return out


def run_cascade(cfg: CascadeConfig) -> CascadeResult:
    delta, nu = cfg.measured_bounds()
    if delta > cfg.delta_max + 1e-12 or nu > cfg.nu_max + 1e-12:
        raise InfeasibleError(
            f"measured form bounds (delta={delta:.4g}, nu={nu:.4g}) exceed the "
            f"configured smallness thresholds ({cfg.delta_max}, {cfg.nu_max})")
    c1, c2, eps_q, beta_q = cascade_constants(delta, nu, cfg.eps_q, cfg.beta_q)
    if c1 <= 0.0:
        raise InfeasibleError(
            f"infeasible-constants: C1={c1:.4g} <= 0 for delta={delta:.4g}, "
            f"nu={nu:.4g}, eps={eps_q:g}, beta={beta_q:g}")

    n = len(cfg.sources)
    grid = cfg.grid
    bg = _DriftOnGrid(cfg.drift, grid)
    dt = _aligned_dt(cfg.t0, cfg.t1, stable_dt(grid, bg.sum_bound()))
    pts = grid.points()
    span = cfg.t1 - cfg.t0
    n_steps = int(round(span / dt))

    # analytic spatial partials on the grid; time enters via the envelopes
    partials = [cfg.sources[k].spatial_partial(cfg.alphas[k], pts)
                for k in range(n)]
    envs = [getattr(cfg.sources[k], "_env") for k in range(n)]

    def source_for(k: int, upper_frames):
        grad_f = partials[k - 1]
        env = envs[k - 1]
        if upper_frames is None:          # u_{k+1} == 1
            return lambda t, _pts, gf=grad_f, e=env: e(t) * gf

        def g_src(t, _pts, gf=grad_f, fr=upper_frames, e=env):
            j = int(round((cfg.t1 - t) / dt))   # march index of u_{k+1}(t)
            return e(t) * (gf * fr[j])
        return g_src

    energies = {}
    upper_frames = None           # frames of u_{k+1}, march order (tau = T1 - t)
    u2_frames = None
    leak = 0.0
    for k in range(n, 0, -1):
        sol = solve_terminal(cfg.drift, source_for(k, upper_frames),
                             cfg.t0, cfg.t1, grid, dt=dt, frame_stride=1)
        leak = max(leak, sol.ledger.boundary_leak)
        if k >= 2:
            energies[k] = sol.ledger.grad_energy
        if k == 2:
            u2_frames = sol.frames
        upper_frames = sol.frames

    # reversed problem on [0, T1]; G(t) = grad f_1 * u_2(T1 - t) on [0, span]
    grad_f1 = partials[0]
    env1 = envs[0]
    if n >= 2:
        def g1(t, _pts):
            j = int(round((cfg.t1 - t) / dt))
            return env1(t) * (grad_f1 * u2_frames[j])
    else:
        def g1(t, _pts):
            return env1(t) * grad_f1
    rev = solve_reversed(cfg.drift, g1, cfg.t0, cfg.t1, grid, dt=dt,
                         frame_stride=max(1, int(round(cfg.t1 / dt))))
    leak = max(leak, rev.ledger.boundary_leak)
    u2_terminal = rev.terminal_mass
    e_u = rev.ledger.grad_energy

    ratios = {}
    for k in range(2, n):
        if energies[k + 1] > cfg.energy_floor:
            ratios[k] = energies[k] / energies[k + 1]
    k_bound = c2 / c1
    k_hat = None
    if ratios:
        k_hat = float(np.exp(np.mean(np.log(list(ratios.values())))))

    degenerate = all(e <= cfg.energy_floor for e in energies.values()) \
        and u2_terminal <= cfg.energy_floor
    slack = 1.0 + cfg.disc_slack
    link_ok = None
    if n >= 2 and not degenerate:
        link_ok = bool(u2_terminal + c1 * e_u <= c2 * energies[2] * slack
                       + cfg.energy_floor)
    ratios_ok = None
    if ratios:
        ratios_ok = bool(all(r <= k_bound * slack for r in ratios.values()))

    return CascadeResult(energies, u2_terminal, e_u, ratios, k_bound, k_hat,
                         c1, c2, eps_q, beta_q, delta, nu, n, span,
                         link_ok, ratios_ok, leak, degenerate)


def reversal_identity_error(b: Optional[DriftSpec], g1, t0: float, t1: float,
                            grid: GridSettings, dt: float = None) -> float:
    """max_j max_x |U(t_j) - u_1(T1 - t_j)| over the overlap [0, T1 - T0]:
    the backward solve replayed as an initial-value problem must coincide."""
    if dt is None:
        bg = _DriftOnGrid(b, grid)
        dt = _aligned_dt(t0, t1, stable_dt(grid, bg.sum_bound()))
    fwd = solve_terminal(b, g1, t0, t1, grid, dt=dt, frame_stride=1)
    rev = solve_reversed(b, g1, t0, t1, grid, dt=dt, frame_stride=1)
    n_overlap = int(round((t1 - t0) / dt))
    err = 0.0
    for j in range(n_overlap + 1):
        # U at march index j sits at time t_j = j dt; u_1(T1 - t_j) is the
        # terminal solve at ITS march index j (tau = T1 - t).
        err = max(err, float(np.max(np.abs(rev.frames[j] - fwd.frames[j]))))
    return err


@dataclass
class ProductEstimateReport:
    lengths: list
    u2_by_length: list
    slope_in_length: Optional[float]
    ns: list
    u2_by_n: list
    n_decay_factors: list
    k_bound: float
    degenerate: bool

    def to_dict(self) -> dict:
        return dict(vars(self))


def product_estimate_check(cfg: CascadeConfig, lengths: Sequence[float],
                           ns: Sequence[int] = ()) -> ProductEstimateReport:
    """Fit <U^2(T1)> against the interval length (expected slope ~ 1 in
    log-log) and against the cascade depth n (expected geometric decay
    with per-level factor at most the contraction bound)."""
    import copy

    u2_len = []
    for span in lengths:
        c = copy.copy(cfg)
        c.t1 = cfg.t0 + span
        u2_len.append(run_cascade(c).u2_terminal)
    degenerate = all(v <= cfg.energy_floor for v in u2_len)
    slope = None
    if not degenerate and len(lengths) >= 2:
        slope = float(np.polyfit(np.log(np.asarray(lengths, float)),
                                 np.log(np.maximum(u2_len, 1e-300)), 1)[0])

    u2_n, factors = [], []
    k_bound = None
    for n in ns:
        c = copy.copy(cfg)
        c.sources = list(cfg.sources[:n])
        c.alphas = list(cfg.alphas[:n])
        res = run_cascade(c)
        k_bound = res.k_bound
        u2_n.append(res.u2_terminal)
    for a, b_ in zip(u2_n[1:], u2_n[:-1]):
        factors.append(a / b_ if b_ > cfg.energy_floor else np.nan)
    if k_bound is None:
        delta, nu = cfg.measured_bounds()
        c1, c2, _, _ = cascade_constants(delta, nu, cfg.eps_q, cfg.beta_q)
        k_bound = c2 / c1
    return ProductEstimateReport(list(lengths), u2_len, slope, list(ns),
                                 u2_n, factors, k_bound, degenerate)


# ---------------------------------------------------------------------------
# the lattice-weighted space-time norm


def weighted_norm_rho(fieldlike, t1: float, t2: float, kappa: float = 0.01,
                      theta: float = None, lattice_half_extent: float = None,
                      n_grid: int = 48, n_time: int = 8) -> float:
    """max over lattice centers z of
    ( int_{t1}^{t2} int |f|^2 rho(x - z) dx dt )^{1/2},
    rho(x) = (1 + kappa |x|^2)^{-theta},  theta > d/2.

    Centers run over the integer lattice intersected with
    [-2R, 2R]^d (R = support radius) unless overridden.
    """
    d = formbound.field_dimension(fieldlike)
    if theta is None:
        theta = (d + 1) / 2.0 + 0.5
    if theta <= d / 2.0:
        raise ValueError("theta must exceed d/2")
    if kappa <= 0:
        raise ValueError("kappa must be positive")
    R = formbound.field_support_radius(fieldlike)
    if lattice_half_extent is None:
        lattice_half_extent = 2.0 * R
    from .quadrature import box_grid
    pts, cell = box_grid(R, n_grid, d)

    # |f|^2 on the spatial grid, integrated in time by Gauss-Legendre
    tn, tw = gauss_legendre_interval(t1, t2, n_time)
    sq = np.zeros(pts.shape[0])
    env_constant = True
    if isinstance(fieldlike, DriftSpec):
        env = fieldlike.time_envelope
        env_constant = env is None or env.is_constant
    if env_constant:
        base = formbound.eval_magnitude(fieldlike, float(tn[0]), pts) ** 2
        # rescale by the envelope's time integral when present
        if isinstance(fieldlike, DriftSpec) and fieldlike.time_envelope is not None:
            e0 = float(fieldlike.time_envelope(float(tn[0])))
            fac = sum(w * float(fieldlike.time_envelope(float(t))) ** 2
                      for t, w in zip(tn, tw))
            sq = base / max(e0**2, 1e-300) * fac
        else:
            sq = base * (t2 - t1)
    else:
        for t, w in zip(tn, tw):
            sq += w * formbound.eval_magnitude(fieldlike, float(t), pts) ** 2

    k_max = int(math.floor(lattice_half_extent))
    axis = np.arange(-k_max, k_max + 1, dtype=float)
    best = 0.0
    for z in np.stack(np.meshgrid(*([axis] * d), indexing="ij"),
                      axis=-1).reshape(-1, d):
        rho = (1.0 + kappa * np.sum((pts - z) ** 2, axis=-1)) ** (-theta)
        val = float(np.sum(sq * rho) * cell)
        best = max(best, val)
    if not np.isfinite(best):
        raise NumericsError("weighted-norm quadrature failed")
    return math.sqrt(best)


# ---------------------------------------------------------------------------
# flat binary export with a JSON sidecar


def save_grid_field(path_prefix: str, field: GridField) -> None:
    import json
    arr = np.ascontiguousarray(field.values, dtype=np.float64)
    arr.tofile(path_prefix + ".bin")
    sidecar = {"shape": list(arr.shape), "dtype": "float64", "order": "C",
               "half_width": field.half_width, "spacing": field.spacing,
               "time": field.time}
    with open(path_prefix + ".json", "w") as fh:
        json.dump(sidecar, fh, indent=1, sort_keys=True)


def load_grid_field(path_prefix: str) -> GridField:
    import json
    with open(path_prefix + ".json") as fh:
        meta = json.load(fh)
    arr = np.fromfile(path_prefix + ".bin", dtype=np.float64)
    arr = arr.reshape(meta["shape"])
    return GridField(arr, meta["half_width"], meta["spacing"], meta["time"])
