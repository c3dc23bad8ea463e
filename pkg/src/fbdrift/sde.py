"""Euler path ensembles for bounded smooth drifts.

The engine refuses singular fields: dynamics are only ever integrated
through the mollified approximations, and the step size must satisfy
dt * sup|b| <= 0.1 * (variation scale of b), checked at configuration
time from the spec's structural bounds (c_m * m and eps for mollified
levels).

Brownian increments are stored with the ensemble and are exactly
reusable: coupled studies (level comparisons, spatial/start gaps) are
driven by the identical increment arrays.
"""
from __future__ import annotations

import json
import os
from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np

from . import drifts, rng
from .drifts import DriftSpec
from .errors import ContractError


def check_step_rule(spec: DriftSpec, dt: float) -> None:
    """dt * sup|b| <= 0.1 * variation scale (no-op for the zero field)."""
    bound = drifts.sup_bound(spec)
    if bound == 0.0:
        return
    if not np.isfinite(bound):
        raise ContractError("unbounded drift; mollify before integrating")
    scale = drifts.variation_scale(spec)
    if np.isfinite(scale) and dt * bound > 0.1 * scale * (1.0 + 1e-12):
        raise ValueError(
            f"dt={dt:g} too coarse: dt*sup|b|={dt * bound:.3g} exceeds "
            f"0.1*variation_scale={0.1 * scale:.3g}")


@dataclass
class PathEnsemble:
    """M Euler trajectories on a uniform grid, with their increments.

    ``paths`` has shape (M, n+1, d) for a single start, or (S, M, n+1, d)
    for a lattice of starts driven by common increments; ``increments``
    always has shape (M, n, d) and is never regenerated.
    """

    drift_key: str
    x0: np.ndarray
    s: float
    horizon: float
    dt: float
    seed: int
    dimension: int
    n_paths: int
    times: np.ndarray
    increments: np.ndarray
    paths: Optional[np.ndarray]

    @property
    def n_steps(self) -> int:
        return self.increments.shape[1]

    @property
    def lattice(self) -> bool:
        return self.x0.ndim == 2

    def increment_checksum(self) -> str:
        return rng.checksum(self.increments)

    def state_at(self, k: int) -> np.ndarray:
        if self.paths is None:
            raise ContractError("ensemble was simulated without stored paths")
        return self.paths[..., k, :]

    def save(self, directory: str) -> None:
        os.makedirs(directory, exist_ok=True)
        np.ascontiguousarray(self.increments).tofile(
            os.path.join(directory, "increments.bin"))
        meta = {"drift_key": self.drift_key, "x0": self.x0.tolist(),
                "s": self.s, "horizon": self.horizon, "dt": self.dt,
                "seed": self.seed, "dimension": self.dimension,
                "n_paths": self.n_paths,
                "increments_shape": list(self.increments.shape),
                "paths_shape": None if self.paths is None else list(self.paths.shape),
                "checksum": self.increment_checksum()}
        if self.paths is not None:
            np.ascontiguousarray(self.paths).tofile(
                os.path.join(directory, "paths.bin"))
        with open(os.path.join(directory, "ensemble.json"), "w") as fh:
            json.dump(meta, fh, indent=1, sort_keys=True)

    @staticmethod
    def load(directory: str) -> "PathEnsemble":
        with open(os.path.join(directory, "ensemble.json")) as fh:
            meta = json.load(fh)
        inc = np.fromfile(os.path.join(directory, "increments.bin")).reshape(
            meta["increments_shape"])
        paths = None
        if meta["paths_shape"] is not None:
            paths = np.fromfile(os.path.join(directory, "paths.bin")).reshape(
                meta["paths_shape"])
        n = inc.shape[1]
        times = meta["s"] + np.arange(n + 1) * meta["dt"]
        return PathEnsemble(meta["drift_key"], np.asarray(meta["x0"]),
                            meta["s"], meta["horizon"], meta["dt"],
                            meta["seed"], meta["dimension"], meta["n_paths"],
                            times, inc, paths)


def _steps_for(s: float, horizon: float, dt: float) -> int:
    n = int(round((horizon - s) / dt))
    if n < 1 or abs(s + n * dt - horizon) > 1e-9 * max(1.0, abs(horizon)):
        raise ValueError("dt must divide the simulation window")
    return n


def march_states(spec: Optional[DriftSpec], x0: np.ndarray, s: float,
                 dt: float, increments: np.ndarray,
                 record: Optional[np.ndarray] = None,
                 observer: Optional[Callable] = None) -> np.ndarray:
    """Euler march X_{k+1} = X_k + b(t_k, X_k) dt + dW_k.

    ``x0`` is a point (d,), a lattice (S, d) driven by common increments,
    or pre-built states; when ``record`` is given it must have shape
    states.shape[:-1] + (n+1, d) and is filled in place.
    ``observer(k, t_next, X)`` runs after every update.
    """
    M = increments.shape[0]
    x0 = np.asarray(x0, dtype=float)
    if x0.ndim == 1:
        X = np.tile(x0, (M, 1))
    elif x0.ndim == 2:
        X = np.tile(x0[:, None, :], (1, M, 1))
    else:
        X = np.array(x0, dtype=float)
    n_steps = increments.shape[1]
    if record is not None:
        record[..., 0, :] = X
    for k in range(n_steps):
        t = s + k * dt
        if spec is not None and spec.kind != "zero":
            X = X + drifts.eval_drift(spec, t, X) * dt + increments[:, k, :]
        else:
            X = X + increments[:, k, :]
        if record is not None:
            record[..., k + 1, :] = X
        if observer is not None:
            observer(k, t + dt, X)
    return X


def simulate_ensemble(spec: DriftSpec, x0, s: float, horizon: float,
                      dt: float, n_paths: int, seed: int,
                      store_paths: bool = True,
                      increments: Optional[np.ndarray] = None) -> PathEnsemble:
    """Simulate M paths of dX = b dt + dW from x0 (a point or an (S, d)
    lattice of starts sharing the same increments)."""
    drifts.require_sde_admissible(spec)
    check_step_rule(spec, dt)
    x0 = np.asarray(x0, dtype=float)
    d = spec.dimension
    if x0.shape[-1] != d:
        raise ValueError("start point dimension mismatch")
    n_steps = _steps_for(s, horizon, dt)
    if increments is None:
        increments = rng.brownian_increments(seed, n_paths, n_steps, d, dt)
    elif increments.shape != (n_paths, n_steps, d):
        raise ValueError("provided increments have the wrong shape")
    if x0.ndim == 1:
        shape = (n_paths, n_steps + 1, d)
    else:
        shape = (x0.shape[0], n_paths, n_steps + 1, d)
    record = np.empty(shape) if store_paths else None
    march_states(spec, x0, s, dt, increments, record=record)
    times = s + np.arange(n_steps + 1) * dt
    return PathEnsemble(spec.key(), x0, s, horizon, dt, seed, d, n_paths,
                        times, increments, record)


def coupled_march(specs: Sequence[Optional[DriftSpec]], x0, s: float,
                  dt: float, increments: np.ndarray,
                  observer: Optional[Callable] = None) -> list:
    """March several drifts in lockstep on identical increments.

    ``observer(k, t_next, states)`` sees the list of post-update states
    (one array per spec) after every step; returns the final states.
    """
    x0 = np.asarray(x0, dtype=float)
    M = increments.shape[0]
    states = [np.tile(x0, (M, 1)) for _ in specs]
    n_steps = increments.shape[1]
    for k in range(n_steps):
        t = s + k * dt
        for i, spec in enumerate(specs):
            if spec is not None and spec.kind != "zero":
                states[i] = states[i] + drifts.eval_drift(spec, t, states[i]) * dt \
                    + increments[:, k, :]
            else:
                states[i] = states[i] + increments[:, k, :]
        if observer is not None:
            observer(k, t + dt, states)
    return states
