"""Counter-based per-path noise streams.

Each path owns a Philox substream addressed by its absolute path index
(`jumped` advances the 256-bit counter by index * 2^128), so increments
are a pure function of (seed, path index, step index): any partition of
paths into blocks, and any worker layout, reproduces bitwise-identical
noise.
"""
from __future__ import annotations

import hashlib

import numpy as np


def path_normals(seed: int, n_paths: int, n_steps: int, dim: int,
                 start_path: int = 0) -> np.ndarray:
    """Standard-normal draws with shape (n_paths, n_steps, dim)."""
    out = np.empty((n_paths, n_steps, dim))
    root = np.random.Philox(key=np.uint64(seed))
    for p in range(n_paths):
        gen = np.random.Generator(root.jumped(start_path + p))
        out[p] = gen.standard_normal((n_steps, dim))
    return out


def brownian_increments(seed: int, n_paths: int, n_steps: int, dim: int,
                        dt: float, start_path: int = 0) -> np.ndarray:
    return path_normals(seed, n_paths, n_steps, dim, start_path) * np.sqrt(dt)


def checksum(arr: np.ndarray) -> str:
    """SHA-256 of the raw array bytes (C order, native dtype)."""
    return hashlib.sha256(np.ascontiguousarray(arr).tobytes()).hexdigest()
