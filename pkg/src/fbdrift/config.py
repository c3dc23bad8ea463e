"""Experiment configuration documents.

Configs are nested key-value documents; JSON is accepted directly and
YAML as a superset.  Digests are SHA-256 over the canonical (sorted-key,
whitespace-free) JSON serialization, so field order never changes the
identity of a run.
"""
from __future__ import annotations

import hashlib
import json
from typing import Optional

import numpy as np
import yaml

from . import formbound, mollify, pde
from .drifts import DriftSpec, TimeEnvelope
from .krylov import TestField

EXPERIMENT_KINDS = ("formbound", "mollify", "pde-cascade", "simulate",
                    "krylov", "flow", "regularity", "converge", "criticality")


def load_config(path: str) -> dict:
    with open(path) as fh:
        text = fh.read()
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        doc = yaml.safe_load(text)
        if not isinstance(doc, dict):
            raise ValueError("config document must be a mapping")
        return doc


def canonical(doc) -> str:
    return json.dumps(doc, sort_keys=True, separators=(",", ":"))


def config_digest(doc) -> str:
    return hashlib.sha256(canonical(doc).encode()).hexdigest()


class ConfigError(ValueError):
    """Validation failure; carries every offending field."""

    def __init__(self, problems):
        self.problems = list(problems)
        super().__init__("; ".join(self.problems))


def validate(doc: dict) -> list:
    problems = []
    kind = doc.get("experiment")
    if kind not in EXPERIMENT_KINDS:
        problems.append(f"experiment: unknown kind {kind!r}")
    stochastic = kind in ("simulate", "krylov", "flow", "regularity",
                          "converge", "criticality")
    if stochastic and "seed" not in doc:
        problems.append("seed: required for stochastic experiments")
    if "drift" in doc:
        try:
            DriftSpec.from_dict(doc["drift"])
        except Exception as exc:
            problems.append(f"drift: {exc}")
    return problems


def drift_from(doc) -> DriftSpec:
    return DriftSpec.from_dict(doc)


def family_from(name: Optional[str], dimension: int, radius: float):
    if name in (None, "reference"):
        return formbound.reference_family(dimension, radius)
    if name == "radial":
        return formbound.radial_family(dimension, radius)
    raise ValueError(f"unknown test-function family {name!r}")


def schedule_from(doc) -> mollify.MollifySchedule:
    if doc is None:
        return mollify.MollifySchedule.default()
    return mollify.MollifySchedule.from_dict(doc)


def grid_from(doc) -> pde.GridSettings:
    return pde.GridSettings(half_width=float(doc.get("half_width", 2.0)),
                            n=int(doc.get("n", 33)),
                            dt=doc.get("dt"),
                            cfl_safety=float(doc.get("cfl_safety", 0.9)),
                            frame_stride=int(doc.get("frame_stride", 1)))


def test_field_from(doc) -> TestField:
    return TestField.from_dict(doc)


def envelope_from(doc) -> TimeEnvelope:
    return TimeEnvelope.from_dict(doc)


def sources_from(docs) -> list:
    return [pde.ScalarBump.from_dict(d) for d in docs]


def point_from(doc, dimension: int = 3) -> np.ndarray:
    arr = np.asarray(doc, dtype=float)
    if arr.shape != (dimension,):
        raise ValueError(f"point must have shape ({dimension},)")
    return arr
