"""Append-only run records."""

from __future__ import annotations

import json
import time
from dataclasses import dataclass, field
from pathlib import Path


@dataclass
class RunRecord:
    config_hash: str
    seed: int
    metrics: list = field(default_factory=list)     # rows of (stage, step, name, value)
    wall_times: dict = field(default_factory=dict)  # stage -> seconds
    artifacts: dict = field(default_factory=dict)   # name -> path
    events: list = field(default_factory=list)
    curve: list = field(default_factory=list)       # evaluation-cadence rows

    def log(self, stage: str, name: str, value, step: int = 0) -> None:
        self.metrics.append({"stage": stage, "step": int(step), "name": name,
                             "value": float(value)})

    def value(self, stage: str, name: str):
        for row in reversed(self.metrics):
            if row["stage"] == stage and row["name"] == name:
                return row["value"]
        raise KeyError(f"no metric {name!r} in stage {stage!r}")

    def metric_dict(self) -> dict:
        return {f"{m['stage']}.{m['name']}@{m['step']}": m["value"]
                for m in self.metrics}

    def event(self, text: str) -> None:
        self.events.append(text)

    def save(self, path) -> None:
        payload = {"config_hash": self.config_hash, "seed": self.seed,
                   "metrics": self.metrics, "wall_times": self.wall_times,
                   "artifacts": {k: str(v) for k, v in self.artifacts.items()},
                   "events": self.events, "curve": self.curve}
        Path(path).write_text(json.dumps(payload, indent=1, sort_keys=True))

    @classmethod
    def load(cls, path) -> "RunRecord":
        payload = json.loads(Path(path).read_text())
        return cls(config_hash=payload["config_hash"], seed=payload["seed"],
                   metrics=payload["metrics"], wall_times=payload["wall_times"],
                   artifacts=payload["artifacts"], events=payload["events"],
                   curve=payload.get("curve", []))


class StageTimer:
    def __init__(self, record: RunRecord, stage: str):
        self.record = record
        self.stage = stage

    def __enter__(self):
        self._t0 = time.perf_counter()
        return self

    def __exit__(self, exc_type, exc, tb):
        self.record.wall_times[self.stage] = round(
            time.perf_counter() - self._t0, 3)
        return False
