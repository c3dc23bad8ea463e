"""Coupled-ensemble studies: path-modulus statistics, the approximation
convergence study, and the criticality sweep.

All studies drive their variants with identical stored Brownian
increments (synchronous coupling), so gaps measure the effect of the
varied parameter alone and per-pair statistics are deterministic given
(seed, configuration).
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from . import drifts, mollify, pde, rng, sde
from .drifts import DriftSpec
from .mollify import MollifySchedule

# ---------------------------------------------------------------------------
# path regularity moduli


@dataclass
class ModulusPoint:
    mode: str          # "time" | "space" | "start"
    gap: float
    moment: float
    stderr: float
    rhs: float         # gap^r (time) or gap^(r-d) (space/start), unit constant
    under_resolved: bool


@dataclass
class ModulusReport:
    r: int
    dimension: int
    points: list
    slopes: dict               # mode -> fitted log-log slope (or None)
    joint_constant: float      # minimal single C dominating all modes
    degenerate_modes: list
    increment_checksum: str

    def to_dict(self) -> dict:
        return {"r": self.r, "dimension": self.dimension,
                "points": [vars(p) for p in self.points],
                "slopes": self.slopes, "joint_constant": self.joint_constant,
                "degenerate_modes": self.degenerate_modes,
                "increment_checksum": self.increment_checksum}


def _moment(gaps_abs: np.ndarray, r: int):
    powed = gaps_abs**r
    m = float(np.mean(powed))
    se = float(np.std(powed, ddof=1) / math.sqrt(powed.size))
    return m, se


def _slope(points):
    g = np.array([p.gap for p in points])
    v = np.array([p.moment for p in points])
    pos = v > 0
    if pos.sum() < 2:
        return None
    return float(np.polyfit(np.log(g[pos]), np.log(v[pos]), 1)[0])


def regularity_statistics(base: sde.PathEnsemble, drift: DriftSpec, r: int,
                          t_gaps: Sequence[float] = (),
                          x_ensembles: Optional[dict] = None,
                          s_ensembles: Optional[dict] = None,
                          anchors: Sequence[float] = (0.0,),
                          se_warn: float = 0.5) -> ModulusReport:
    """Three moduli of path regularity from coupled ensembles.

    time: r-th moment of the drift occupation increment
    int_{t1}^{t2} |b(t, X_t)| dt  against gap^r  (the Brownian part is
    exact and excluded by construction);
    space: E |X^x_t - X^y_t|^r maximized over grid times against
    |x-y|^(r-d), from ensembles keyed by |x-y| sharing increments;
    start: E |X_{s1,t} - X_{s2,t}|^r against |s2-s1|^(r-d), from
    ensembles keyed by s sharing the global increment grid.
    """
    d = base.dimension
    if r <= d:
        raise ValueError("moment order r must exceed the dimension")
    points = []
    degenerate = []

    if t_gaps:
        occ = _drift_occupation_cumsum(base, drift)
        n = base.n_steps
        for gap in t_gaps:
            width = int(round(gap / base.dt))
            if width < 1 or width > n:
                raise ValueError(f"time gap {gap} not resolvable on the grid")
            best = None
            for a in anchors:
                k1 = int(round((a - base.s) / base.dt))
                if k1 + width > n:
                    continue
                inc = np.abs(occ[:, k1 + width] - occ[:, k1])
                m, se = _moment(inc, r)
                if best is None or m > best[0]:
                    best = (m, se)
            m, se = best
            points.append(ModulusPoint("time", gap, m, se, gap**r,
                                       se > se_warn * m if m > 0 else False))
        if all(p.moment == 0.0 for p in points if p.mode == "time"):
            degenerate.append("time")

    for mode, keyed, expo in (("space", x_ensembles, r - d),
                              ("start", s_ensembles, r - d)):
        if not keyed:
            continue
        for gap, other in sorted(keyed.items()):
            gaps_abs = _coupled_gap_sup_moments(base, other)
            m, se = _moment(gaps_abs, r)
            points.append(ModulusPoint(mode, float(gap), m, se, float(gap) ** expo,
                                       se > se_warn * m if m > 0 else False))

    slopes = {}
    for mode in ("time", "space", "start"):
        pts = [p for p in points if p.mode == mode]
        if pts:
            slopes[mode] = _slope(pts)
    ratios = [p.moment / p.rhs for p in points if p.rhs > 0 and p.moment > 0]
    joint_c = max(ratios) if ratios else 0.0
    return ModulusReport(r, d, points, slopes, joint_c, degenerate,
                         base.increment_checksum())


def _drift_occupation_cumsum(ens: sde.PathEnsemble, drift: DriftSpec) -> np.ndarray:
    """(M, n+1) cumulative sums of |b(t_k, X_k)| dt along stored paths."""
    if ens.paths is None or ens.lattice:
        raise ValueError("need a single-start ensemble with stored paths")
    M, n = ens.n_paths, ens.n_steps
    env = drift.time_envelope
    out = np.zeros((M, n + 1))
    if drift.kind == "zero":
        return out
    if env is None or env.is_constant:
        flat = ens.paths[:, :n, :].reshape(M * n, ens.dimension)
        mags = np.linalg.norm(drifts.eval_drift(drift, float(ens.times[0]), flat),
                              axis=-1).reshape(M, n)
    else:
        mags = np.empty((M, n))
        for k in range(n):
            mags[:, k] = np.linalg.norm(
                drifts.eval_drift(drift, float(ens.times[k]), ens.paths[:, k, :]),
                axis=-1)
    out[:, 1:] = np.cumsum(mags * ens.dt, axis=1)
    return out


def _coupled_gap_sup_moments(a: sde.PathEnsemble, b: sde.PathEnsemble) -> np.ndarray:
    """Per-path sup over common grid times of |X^a_t - X^b_t|."""
    ta0 = float(a.times[0])
    tb0 = float(b.times[0])
    if tb0 < ta0 - 1e-12:
        return _coupled_gap_sup_moments(b, a)
    off = int(round((tb0 - ta0) / a.dt))
    n_common = min(a.n_steps - off, b.n_steps)
    pa = a.paths[:, off:off + n_common + 1, :]
    pb = b.paths[:, :n_common + 1, :]
    gaps = np.linalg.norm(pa - pb, axis=-1)
    return np.max(gaps, axis=1)


def build_space_coupled(drift: DriftSpec, x0, gaps: Sequence[float],
                        direction, s: float, horizon: float, dt: float,
                        n_paths: int, seed: int):
    """(base, {gap: ensemble at x0 + gap * direction}) on shared noise."""
    x0 = np.asarray(x0, float)
    direction = np.asarray(direction, float)
    direction = direction / np.linalg.norm(direction)
    n_steps = int(round((horizon - s) / dt))
    inc = rng.brownian_increments(seed, n_paths, n_steps, drift.dimension, dt)
    base = sde.simulate_ensemble(drift, x0, s, horizon, dt, n_paths, seed,
                                 increments=inc)
    keyed = {}
    for gap in gaps:
        keyed[float(gap)] = sde.simulate_ensemble(
            drift, x0 + gap * direction, s, horizon, dt, n_paths, seed,
            increments=inc)
    return base, keyed


def build_start_coupled(drift: DriftSpec, x0, s_values: Sequence[float],
                        horizon: float, dt: float, n_paths: int, seed: int):
    """Ensembles from different start times on one global increment grid."""
    x0 = np.asarray(x0, float)
    s_values = sorted(float(s) for s in s_values)
    s0 = s_values[0]
    n_total = int(round((horizon - s0) / dt))
    master = rng.brownian_increments(seed, n_paths, n_total, drift.dimension, dt)
    out = {}
    for s in s_values:
        k0 = int(round((s - s0) / dt))
        if abs(s0 + k0 * dt - s) > 1e-9:
            raise ValueError(f"start {s} not on the global grid")
        out[s] = sde.simulate_ensemble(drift, x0, s, horizon, dt, n_paths, seed,
                                       increments=master[:, k0:, :])
    return out


# ---------------------------------------------------------------------------
# approximation-convergence study


@dataclass
class ConvergencePairRow:
    level_lo: float
    level_hi: float
    median_sup_gap: float
    p95_sup_gap: float
    i1_estimate: float
    i1_stderr: float
    rho_bound: float
    ratio: float


@dataclass
class ConvergenceReport:
    rows: list
    fitted_c1: float
    medians_non_increasing_after_first: bool
    increment_checksum: str

    def to_dict(self) -> dict:
        return {"rows": [vars(r) for r in self.rows],
                "fitted_c1": self.fitted_c1,
                "medians_non_increasing_after_first":
                    self.medians_non_increasing_after_first,
                "increment_checksum": self.increment_checksum}


def convergence_study(spec: DriftSpec, schedule: MollifySchedule, x0,
                      horizon: float, dt: float, n_paths: int, seed: int,
                      kappa: float = 0.01, theta: float = None,
                      n_grid: int = 48) -> ConvergenceReport:
    """Simulate every schedule level with identical increments; report
    per-pair sup-gap quantiles and the occupation estimate of the level
    difference against its lattice-weighted norm bound."""
    levels = [mollify.mollify_spec(spec, m, eps, c_m)
              for (m, eps, c_m) in schedule.rows()]
    for lv in levels:
        drifts.require_sde_admissible(lv)
        sde.check_step_rule(lv, dt)
    x0 = np.asarray(x0, float)
    d = spec.dimension
    n_steps = int(round(horizon / dt))
    inc = rng.brownian_increments(seed, n_paths, n_steps, d, dt)

    n_pairs = len(levels) - 1
    sup_gap = np.zeros((n_pairs, n_paths))
    i1_acc = np.zeros((n_pairs, n_paths))

    # lockstep march; the occupation integrand of the level difference is
    # evaluated along the lower level's path before each update
    states = [np.tile(x0, (n_paths, 1)) for _ in levels]
    for k in range(n_steps):
        t = k * dt
        vels = [drifts.eval_drift(lv, t, st) for lv, st in zip(levels, states)]
        for i in range(n_pairs):
            diff = vels[i] - drifts.eval_drift(levels[i + 1], t, states[i])
            i1_acc[i] += np.linalg.norm(diff, axis=-1) * dt
        for i in range(len(levels)):
            states[i] = states[i] + vels[i] * dt + inc[:, k, :]
        for i in range(n_pairs):
            gap = np.linalg.norm(states[i] - states[i + 1], axis=-1)
            np.maximum(sup_gap[i], gap, out=sup_gap[i])

    rows = []
    for i in range(n_pairs):
        diff_spec = drifts.drift_sum(levels[i], drifts.scaled(-1.0, levels[i + 1]))
        bound = pde.weighted_norm_rho(diff_spec, 0.0, horizon, kappa=kappa,
                                      theta=theta, n_grid=n_grid)
        est = float(np.mean(i1_acc[i]))
        se = float(np.std(i1_acc[i], ddof=1) / math.sqrt(n_paths))
        rows.append(ConvergencePairRow(
            schedule.levels[i], schedule.levels[i + 1],
            float(np.median(sup_gap[i])),
            float(np.percentile(sup_gap[i], 95)),
            est, se, bound, est / bound if bound > 0 else np.inf))
    medians = [r.median_sup_gap for r in rows]
    mono = all(medians[i + 1] <= medians[i] * (1.0 + 1e-12)
               for i in range(1, len(medians) - 1)) if len(medians) > 2 else True
    fitted_c1 = max((r.ratio for r in rows if np.isfinite(r.ratio)), default=0.0)
    return ConvergenceReport(rows, fitted_c1, mono, rng.checksum(inc))


# ---------------------------------------------------------------------------
# criticality sweep


@dataclass
class CriticalityRow:
    delta: float
    coefficient: float
    collapse_fraction: float
    stderr: float
    end_fraction: float
    end_stderr: float


@dataclass
class CriticalityReport:
    rows: list
    collapse_radius: float
    level: float
    width: float
    monotone: bool

    def to_dict(self) -> dict:
        return {"rows": [vars(r) for r in self.rows],
                "collapse_radius": self.collapse_radius, "level": self.level,
                "width": self.width, "monotone": self.monotone}


def criticality_sweep(deltas: Sequence[float], x0, horizon: float, dt: float,
                      n_paths: int, seed: int, collapse_radius: float,
                      level: float = 24.0, width: float = 0.04,
                      cutoff_radius: float = 2.0, block: int = 2500,
                      d: int = 3) -> CriticalityReport:
    """Fraction of paths whose minimal distance to the origin dips below
    the collapse radius, per attraction strength delta (the field is the
    mollified attracting drift with coefficient ((d-2)/2) sqrt(delta));
    identical increments across the sweep."""
    x0 = np.asarray(x0, float)
    rows = []
    for delta in deltas:
        c = 0.5 * (d - 2) * math.sqrt(delta)
        if c == 0.0:
            spec = drifts.zero(d, cutoff_radius)
        else:
            spec = mollify.mollify_spec(
                drifts.hardy_attractor(c, d, cutoff_radius), level, width, 1.0)
            sde.check_step_rule(spec, dt)
        n_steps = int(round(horizon / dt))
        hit = 0
        end_in = 0
        for lo in range(0, n_paths, block):
            m = min(block, n_paths - lo)
            inc = rng.brownian_increments(seed, m, n_steps, d, dt,
                                          start_path=lo)
            min_r = np.full(m, np.linalg.norm(x0))

            def observer(k, t_next, X):
                np.minimum(min_r, np.linalg.norm(X, axis=-1), out=min_r)

            X_end = sde.march_states(spec, x0, 0.0, dt, inc, observer=observer)
            hit += int(np.count_nonzero(min_r <= collapse_radius))
            end_in += int(np.count_nonzero(
                np.linalg.norm(X_end, axis=-1) <= collapse_radius))
        p = hit / n_paths
        pe = end_in / n_paths
        rows.append(CriticalityRow(
            float(delta), c, p, math.sqrt(max(p * (1 - p), 1e-12) / n_paths),
            pe, math.sqrt(max(pe * (1 - pe), 1e-12) / n_paths)))
    fractions = [r.collapse_fraction for r in rows]
    monotone = all(fractions[i + 1] >= fractions[i] - 1e-12
                   for i in range(len(fractions) - 1))
    return CriticalityReport(rows, collapse_radius, level, width, monotone)
