"""Run reports: config echo, metrics with errors and counts, RNG provenance,
wall clock; serialized as JSON plus a long-format CSV (RFC 4180, floats at 17
significant digits so every value round-trips)."""

from dataclasses import dataclass, field, asdict
import csv
import hashlib
import json
import time

import numpy as np


def param_hash(config: dict) -> str:
    blob = json.dumps(config, sort_keys=True, separators=(",", ":"), default=str)
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


def _jsonable(x):
    if isinstance(x, (np.floating, np.integer, np.bool_)):
        return x.item()
    if isinstance(x, np.ndarray):
        return [_jsonable(v) for v in x.tolist()]
    if isinstance(x, dict):
        return {k: _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, float) and not np.isfinite(x):
        return repr(x)
    return x


@dataclass
class Metric:
    name: str
    value: float
    stderr: float = float("nan")
    count: int = 0
    extra: dict = field(default_factory=dict)


@dataclass
class ExperimentReport:
    experiment: str
    config: dict
    seed: int
    backend: str
    metrics: list = field(default_factory=list)
    check_passed: bool = None
    wall_seconds: float = 0.0
    started_unix: float = field(default_factory=time.time)

    def add(self, name, value, stderr=float("nan"), count=0, **extra):
        self.metrics.append(Metric(name, float(value), float(stderr), int(count),
                                   {k: _jsonable(v) for k, v in extra.items()}))

    @property
    def hash(self) -> str:
        return param_hash(self.config)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["param_hash"] = self.hash
        return _jsonable(d)

    def write_json(self, path):
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=2, sort_keys=True)
            fh.write("\n")

    def write_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["experiment", "seed", "param_hash", "metric",
                        "value", "stderr", "count"])
            for m in self.metrics:
                w.writerow([
                    self.experiment, self.seed, self.hash, m.name,
                    "%.17g" % m.value, "%.17g" % m.stderr, m.count,
                ])

    def summary_json(self) -> str:
        d = self.to_dict()
        slim = {
            "experiment": d["experiment"],
            "seed": d["seed"],
            "param_hash": d["param_hash"],
            "check_passed": d["check_passed"],
            "wall_seconds": d["wall_seconds"],
            "metrics": {m["name"]: m["value"] for m in d["metrics"]},
        }
        return json.dumps(slim, sort_keys=True)
