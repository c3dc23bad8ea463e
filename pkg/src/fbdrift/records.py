"""Result records: JSON-lines persistence with reproducible content.

Records carry the experiment id, the config digest, a metric name with
optional structured params, the value, and an optional standard error.
Wall time and timestamp are volatile fields: they are written only when
requested and are always excluded from canonical digests, so identical
(config, seed) runs produce byte-identical canonical record files.
"""
from __future__ import annotations

import csv
import hashlib
import json
import os
import time
from dataclasses import dataclass, field
from typing import Iterable, Optional

VOLATILE_FIELDS = ("wall_time", "timestamp")


@dataclass
class ResultRecord:
    experiment_id: str
    config_digest: str
    metric: str
    value: object
    stderr: Optional[float] = None
    params: dict = field(default_factory=dict)
    wall_time: Optional[float] = None
    timestamp: Optional[float] = None

    def to_doc(self, include_volatile: bool = False) -> dict:
        doc = {"experiment_id": self.experiment_id,
               "config_digest": self.config_digest,
               "metric": self.metric,
               "value": _jsonable(self.value)}
        if self.stderr is not None:
            doc["stderr"] = self.stderr
        if self.params:
            doc["params"] = {k: _jsonable(v) for k, v in self.params.items()}
        if include_volatile:
            if self.wall_time is not None:
                doc["wall_time"] = self.wall_time
            if self.timestamp is not None:
                doc["timestamp"] = self.timestamp
        return doc


def _jsonable(v):
    import numpy as np
    if isinstance(v, (np.floating, np.integer)):
        return v.item()
    if isinstance(v, np.bool_):
        return bool(v)
    if isinstance(v, np.ndarray):
        return v.tolist()
    return v


def stamp(record: ResultRecord, started: float) -> ResultRecord:
    record.wall_time = time.monotonic() - started
    record.timestamp = time.time()
    return record


def write_jsonl(path: str, records: Iterable[ResultRecord],
                include_volatile: bool = True) -> None:
    os.makedirs(os.path.dirname(path) or ".", exist_ok=True)
    with open(path, "w") as fh:
        for rec in records:
            fh.write(json.dumps(rec.to_doc(include_volatile),
                                sort_keys=True, separators=(",", ":")))
            fh.write("\n")


def read_jsonl(path: str) -> list:
    out = []
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if line:
                out.append(json.loads(line))
    return out


def canonical_digest(path: str) -> str:
    """SHA-256 of the records with volatile fields removed."""
    h = hashlib.sha256()
    for doc in read_jsonl(path):
        for key in VOLATILE_FIELDS:
            doc.pop(key, None)
        h.update(json.dumps(doc, sort_keys=True, separators=(",", ":")).encode())
        h.update(b"\n")
    return h.hexdigest()


def write_csv(path: str, header: list, rows: Iterable) -> None:
    os.makedirs(os.path.dirname(path) or ".", exist_ok=True)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for row in rows:
            writer.writerow(list(row))
