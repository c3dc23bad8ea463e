"""Flow derivatives along sample paths.

The Jacobian of the solution map obeys the linear matrix recursion
J_{k+1} = J_k + grad b(t_k, X_k) J_k dt with J = I at the start time;
the noise-sensitivity matrices D_s obey the identical recursion started
at time s.  Both are produced by one kernel, so the s = 0 family is
bitwise equal to the variational flow.

Mixed norms follow the convention
||g||_{L^{2r}(space, L^r(Omega))} = ( sum_x w_x (E||g(x)||_F^r)^2 )^{1/(2r)}
with lattice cell weights over the grid of starting points.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from . import drifts, rng, sde
from .drifts import DriftSpec
from .errors import ContractError, NumericsError


def _jacobian_march(spec: DriftSpec, ens: sde.PathEnsemble, start_index: int,
                    snapshots: Sequence[int]) -> np.ndarray:
    """March J from identity at grid index ``start_index``; returns
    (..., n_snapshots, d, d) sampled at the requested grid indices."""
    if ens.paths is None:
        raise ContractError("flow integration needs stored paths")
    d = ens.dimension
    lead = ens.paths.shape[:-2]
    J = np.broadcast_to(np.eye(d), lead + (d, d)).copy()
    snaps = sorted(set(snapshots))
    if any(j < start_index or j > ens.n_steps for j in snaps):
        raise ValueError("snapshot index outside the flow's time range")
    out = np.empty(lead + (len(snaps), d, d))
    pos = {idx: i for i, idx in enumerate(snaps)}
    if start_index in pos:
        out[..., pos[start_index], :, :] = J
    for k in range(start_index, ens.n_steps):
        t = float(ens.times[k])
        X = ens.state_at(k)
        G = drifts.grad_drift(spec, t, X)
        J = J + ens.dt * np.einsum("...ij,...jk->...ik", G, J)
        if not np.all(np.isfinite(J)):
            raise NumericsError(f"flow march diverged at step {k + 1}")
        if (k + 1) in pos:
            out[..., pos[k + 1], :, :] = J
    return out


@dataclass
class FlowEnsemble:
    """Jacobian families along one ensemble: ``jacobians[s]`` holds the
    recursion started at time s, sampled at ``times``."""

    ensemble: sde.PathEnsemble
    times: np.ndarray
    snapshot_indices: tuple
    jacobians: dict = field(default_factory=dict)

    def flow(self) -> np.ndarray:
        return self.jacobians[float(self.ensemble.times[0])]


def variational_flow(spec: DriftSpec, ens: sde.PathEnsemble,
                     snapshot_indices: Optional[Sequence[int]] = None) -> FlowEnsemble:
    """d X_t / d x0 along every path (identity at the start time)."""
    if snapshot_indices is None:
        snapshot_indices = range(ens.n_steps + 1)
    snaps = tuple(sorted(set(int(j) for j in snapshot_indices)))
    J = _jacobian_march(spec, ens, 0, snaps)
    fe = FlowEnsemble(ens, ens.times[list(snaps)], snaps)
    fe.jacobians[float(ens.times[0])] = J
    return fe


def malliavin_derivative(spec: DriftSpec, ens: sde.PathEnsemble,
                         s_list: Sequence[float],
                         flow_ensemble: Optional[FlowEnsemble] = None,
                         snapshot_indices: Optional[Sequence[int]] = None) -> FlowEnsemble:
    """Noise-sensitivity matrices D_s X_t for each s in ``s_list``.

    Each s must sit on the ensemble's time grid (no interpolation); the
    recursion and its code path are identical to the variational flow,
    so D_{s=t0} equals the flow bitwise.
    """
    fe = flow_ensemble
    if fe is None:
        if snapshot_indices is None:
            snapshot_indices = range(ens.n_steps + 1)
        fe = FlowEnsemble(ens, ens.times[sorted(set(int(j) for j in snapshot_indices))],
                          tuple(sorted(set(int(j) for j in snapshot_indices))))
    for s in s_list:
        rel = (s - ens.s) / ens.dt
        idx = int(round(rel))
        if abs(rel - idx) > 1e-9 or idx < 0 or idx > ens.n_steps:
            raise ValueError(f"s={s} is not on the ensemble time grid")
        snaps = tuple(j for j in fe.snapshot_indices if j >= idx)
        fe.jacobians[float(ens.times[idx])] = _jacobian_march(spec, ens, idx, snaps)
    return fe


# ---------------------------------------------------------------------------
# mixed-norm decay statistics


def mixed_norm(dev: np.ndarray, r: int, cell_weight: float = 1.0) -> float:
    """dev: (S, M, d, d) or (M, d, d) deviations; returns
    ( sum_starts w (E ||dev||_F^r)^2 )^{1/(2r)}."""
    frob = np.sqrt(np.sum(dev * dev, axis=(-2, -1)))
    inner = np.mean(frob**r, axis=-1)      # (S,) or scalar
    inner = np.atleast_1d(inner)
    return float((cell_weight * np.sum(inner**2)) ** (1.0 / (2 * r)))


@dataclass
class DecayCurve:
    gaps: np.ndarray          # time offsets
    norms: np.ndarray
    envelope_constant: float  # minimal K with norm <= K * gap^exponent
    exponent: float
    slope: Optional[float]    # log-log fit of the measured curve
    degenerate: bool

    def to_dict(self) -> dict:
        return {"gaps": self.gaps.tolist(), "norms": self.norms.tolist(),
                "envelope_constant": self.envelope_constant,
                "exponent": self.exponent, "slope": self.slope,
                "degenerate": self.degenerate}


def _fit_curve(gaps, norms, exponent) -> DecayCurve:
    gaps = np.asarray(gaps, float)
    norms = np.asarray(norms, float)
    pos = norms > 0.0
    degenerate = not bool(pos.any())
    if degenerate:
        return DecayCurve(gaps, norms, 0.0, exponent, None, True)
    K = float(np.max(norms[pos] / gaps[pos] ** exponent))
    slope = None
    if pos.sum() >= 2:
        slope = float(np.polyfit(np.log(gaps[pos]), np.log(norms[pos]), 1)[0])
    return DecayCurve(gaps, norms, K, exponent, slope, False)


def flow_norm_statistics(fe: FlowEnsemble, r: int,
                         cell_weight: float = 1.0) -> dict:
    """Decay curves for the stored Jacobian families.

    For the flow: ||J_t - I|| against t - t0 with envelope exponent
    1/(2r).  For each later start s: ||D_s X_t - I|| against t - s with
    exponent 1/(4r); pairs of starts give the |s - s'| curve at the
    final time, exponent 1/(4r).
    """
    ens = fe.ensemble
    eye = np.eye(ens.dimension)
    out = {}
    t0 = float(ens.times[0])
    for s, J in fe.jacobians.items():
        snaps = [j for j in fe.snapshot_indices
                 if float(ens.times[j]) >= s - 1e-12]
        times = ens.times[snaps]
        gaps, norms = [], []
        for i, tv in enumerate(times):
            if tv - s <= 1e-12:
                continue
            gaps.append(tv - s)
            norms.append(mixed_norm(J[..., i, :, :] - eye, r, cell_weight))
        expo = 1.0 / (2 * r) if s == t0 else 1.0 / (4 * r)
        key = "flow" if s == t0 else f"ds@{s:g}"
        out[key] = _fit_curve(np.array(gaps), np.array(norms), expo)
    # pair curve in |s - s'| at the final time
    starts = sorted(fe.jacobians)
    if len(starts) >= 2:
        gaps, norms = [], []
        for i in range(len(starts)):
            for j in range(i + 1, len(starts)):
                Ji = fe.jacobians[starts[i]][..., -1, :, :]
                Jj = fe.jacobians[starts[j]][..., -1, :, :]
                gaps.append(starts[j] - starts[i])
                norms.append(mixed_norm(Ji - Jj, r, cell_weight))
        out["ds-pairs"] = _fit_curve(np.array(gaps), np.array(norms),
                                     1.0 / (4 * r))
    return out


# ---------------------------------------------------------------------------
# streaming study over a lattice of starts


@dataclass
class FlowDecayReport:
    times: np.ndarray
    norms: dict               # r -> flow norm curve (np.ndarray)
    envelopes: dict           # r -> minimal K1 with curve <= K1 t^{1/2r}
    ds_curves: dict           # r -> {"gaps": ..., "norms": ...} in t - s
    ds_pair_curves: dict      # r -> {"gaps": ..., "norms": ...} in |s - s'|
    r_values: tuple
    lattice_spacing: float
    degenerate: bool

    def to_dict(self) -> dict:
        return {
            "times": self.times.tolist(),
            "norms": {str(r): v.tolist() for r, v in self.norms.items()},
            "envelopes": {str(r): v for r, v in self.envelopes.items()},
            "ds_curves": {str(r): {k: np.asarray(v).tolist() for k, v in c.items()}
                          for r, c in self.ds_curves.items()},
            "ds_pair_curves": {str(r): {k: np.asarray(v).tolist() for k, v in c.items()}
                               for r, c in self.ds_pair_curves.items()},
            "r_values": list(self.r_values),
            "lattice_spacing": self.lattice_spacing,
            "degenerate": self.degenerate,
        }


def cubic_lattice(half_extent: float, per_axis: int, d: int = 3) -> np.ndarray:
    ax = np.linspace(-half_extent, half_extent, per_axis)
    grids = np.meshgrid(*([ax] * d), indexing="ij")
    return np.stack([g.ravel() for g in grids], axis=-1)


def flow_decay_study(spec: DriftSpec, starts: np.ndarray, n_paths: int,
                     horizon: float, dt: float, seed: int,
                     r_values: Sequence[int] = (1, 2),
                     s_list: Sequence[float] = (),
                     n_snapshots: int = 12) -> FlowDecayReport:
    """Streaming lattice version: marches X and the Jacobian families
    together, reducing ||J - I|| statistics at snapshot times instead of
    storing path or Jacobian histories."""
    drifts.require_sde_admissible(spec)
    sde.check_step_rule(spec, dt)
    starts = np.asarray(starts, dtype=float)
    S, d = starts.shape
    n_steps = int(round(horizon / dt))
    if n_steps < 1:
        raise ValueError("horizon shorter than dt")
    spacing = np.diff(np.unique(starts[:, 0]))
    cell_w = float(spacing[0] ** d) if spacing.size else 1.0

    increments = rng.brownian_increments(seed, n_paths, n_steps, d, dt)
    X = np.tile(starts[:, None, :], (1, n_paths, 1)).reshape(-1, d)
    eye = np.eye(d)
    J = np.tile(eye, (S * n_paths, 1, 1))
    s_indices = {}
    for s in s_list:
        idx = int(round(s / dt))
        if abs(idx * dt - s) > 1e-9 or idx < 0 or idx > n_steps:
            raise ValueError(f"s={s} not on the time grid")
        s_indices[idx] = float(s)
    D = {}

    snaps = np.unique(np.round(np.geomspace(1, n_steps, n_snapshots)).astype(int))
    snap_set = set(int(j) for j in snaps)

    def reduce_norms(dev):
        frob = np.sqrt(np.sum(dev * dev, axis=(-2, -1))).reshape(S, n_paths)
        out = {}
        for r in r_values:
            inner = np.mean(frob**r, axis=1)
            out[r] = float((cell_w * np.sum(inner**2)) ** (1.0 / (2 * r)))
        return out

    flow_curve = {r: [] for r in r_values}
    ds_records = {r: [] for r in r_values}     # (t - s, norm)
    snap_times = []
    inc_flat = increments  # (M, n, d); broadcast over starts via reshape

    for k in range(n_steps):
        t = k * dt
        if k in s_indices:
            D[s_indices[k]] = np.tile(eye, (S * n_paths, 1, 1))
        G = drifts.grad_drift(spec, t, X)
        V = drifts.eval_drift(spec, t, X)
        J = J + dt * np.einsum("pij,pjk->pik", G, J)
        for s, Ds in D.items():
            D[s] = Ds + dt * np.einsum("pij,pjk->pik", G, Ds)
        dW = np.tile(inc_flat[:, k, :], (S, 1))
        X = X + V * dt + dW
        if (k + 1) in snap_set or k + 1 == n_steps:
            t_next = (k + 1) * dt
            snap_times.append(t_next)
            red = reduce_norms(J - eye)
            for r in r_values:
                flow_curve[r].append(red[r])
            for s, Ds in D.items():
                redd = reduce_norms(Ds - eye)
                for r in r_values:
                    ds_records[r].append((t_next - s, redd[r]))

    times = np.array(snap_times)
    norms = {r: np.array(flow_curve[r]) for r in r_values}
    envelopes = {}
    degenerate = True
    for r in r_values:
        pos = norms[r] > 0
        if pos.any():
            degenerate = False
            envelopes[r] = float(np.max(norms[r][pos] / times[pos] ** (1.0 / (2 * r))))
        else:
            envelopes[r] = 0.0
    ds_curves = {r: {"gaps": np.array([g for g, _ in ds_records[r]]),
                     "norms": np.array([v for _, v in ds_records[r]])}
                 for r in r_values}
    pair_curves = {}
    s_sorted = sorted(D)
    for r in r_values:
        gaps, vals = [], []
        for i in range(len(s_sorted)):
            for j in range(i + 1, len(s_sorted)):
                gaps.append(s_sorted[j] - s_sorted[i])
                vals.append(reduce_norms(D[s_sorted[i]] - D[s_sorted[j]])[r])
        pair_curves[r] = {"gaps": np.array(gaps), "norms": np.array(vals)}
    return FlowDecayReport(times, norms, envelopes, ds_curves, pair_curves,
                           tuple(r_values), cell_w ** (1.0 / d), degenerate)
