"""Run-directory persistence: config echo, samples, metrics, reports.

Every run writes a JSON config echo that fully determines its numerics, so
re-running against the echo reproduces all artifacts bit for bit.
"""

from __future__ import annotations

import csv
import json
from pathlib import Path

import numpy as np


class RunDir:
    def __init__(self, path, config: dict):
        self.path = Path(path)
        self.path.mkdir(parents=True, exist_ok=True)
        self.write_json("config.json", config)

    def file(self, name: str) -> Path:
        return self.path / name

    def write_json(self, name: str, payload: dict) -> Path:
        target = self.file(name)
        with open(target, "w") as fh:
            json.dump(_jsonable(payload), fh, indent=2, sort_keys=True)
            fh.write("\n")
        return target

    def write_samples_csv(self, name: str, samples: np.ndarray) -> Path:
        samples = np.atleast_2d(np.asarray(samples))
        target = self.file(name)
        with open(target, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow([f"x{i}" for i in range(samples.shape[1])])
            for row in samples:
                writer.writerow([repr(float(v)) for v in row])
        return target

    def write_rows_csv(self, name: str, rows: list[dict]) -> Path:
        target = self.file(name)
        if not rows:
            target.write_text("")
            return target
        with open(target, "w", newline="") as fh:
            writer = csv.DictWriter(fh, fieldnames=list(rows[0]))
            writer.writeheader()
            for row in rows:
                writer.writerow({k: _csv_value(v) for k, v in row.items()})
        return target


def _csv_value(v):
    if isinstance(v, float):
        return repr(v)
    return v


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    return obj
