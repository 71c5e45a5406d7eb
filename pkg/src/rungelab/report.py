"""Experiment reports: deterministic CSV/JSON outputs plus a timing sidecar."""

from __future__ import annotations

import csv
import hashlib
import json
import math
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .fitting import FitResult


def _plain(obj):
    """Convert numpy scalars, arrays and fit results to JSON-ready values."""
    if isinstance(obj, FitResult):
        return obj.to_dict()
    if isinstance(obj, dict):
        return {str(k): _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [_plain(v) for v in obj.tolist()]
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating, float)):
        x = float(obj)
        return x if math.isfinite(x) else repr(x)
    return obj


# execution settings that must not change results
RUNTIME_KEYS = ("threads",)


def result_config(config: dict) -> dict:
    return {k: v for k, v in config.items() if k not in RUNTIME_KEYS}


def config_hash(config: dict) -> str:
    blob = json.dumps(_plain(result_config(config)), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()


def _cell(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if v is None:
        return ""
    return str(v)


@dataclass
class ExperimentReport:
    """Series rows, fits and pass/fail checks of one experiment run.

    Every row carries a ``source`` entry naming the operation that produced it.
    Timestamps go to a separate sidecar so the main outputs stay byte-stable.
    """

    experiment: str
    config: dict
    columns: tuple[str, ...]
    series: list[dict] = field(default_factory=list)
    fits: dict = field(default_factory=dict)
    checks: dict = field(default_factory=dict)
    extra: dict = field(default_factory=dict)
    started: float = field(default_factory=time.time)

    @property
    def passed(self) -> bool:
        return all(bool(c["passed"]) for c in self.checks.values())

    def check(self, name: str, passed: bool, value=None, tolerance=None) -> bool:
        self.checks[name] = {"passed": bool(passed), "value": value, "tolerance": tolerance}
        return bool(passed)

    def metadata(self) -> dict:
        geo = self.config.get("geometry", {})
        return {
            "experiment": self.experiment,
            "config_hash": config_hash(self.config),
            "grid_N": geo.get("N"),
            "seed": self.config.get("seed"),
        }

    def to_json(self) -> str:
        doc = {
            "metadata": self.metadata(),
            "config": result_config(self.config),
            "fits": self.fits,
            "checks": self.checks,
            "extra": self.extra,
            "passed": self.passed,
        }
        return json.dumps(_plain(doc), sort_keys=True, indent=2) + "\n"

    def write(self, out_dir: str | Path) -> list[Path]:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        stem = self.experiment.replace("-", "_")
        csv_path = out / f"{stem}.csv"
        with open(csv_path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(self.columns)
            for row in self.series:
                w.writerow([_cell(row.get(c)) for c in self.columns])
        json_path = out / f"{stem}.json"
        json_path.write_text(self.to_json())
        timing = out / f"{stem}.timing.json"
        finished = time.time()
        timing.write_text(
            json.dumps(
                {
                    "config_hash": config_hash(self.config),
                    "started": time.strftime("%Y-%m-%dT%H:%M:%S%z", time.localtime(self.started)),
                    "finished": time.strftime("%Y-%m-%dT%H:%M:%S%z", time.localtime(finished)),
                    "seconds": round(finished - self.started, 3),
                    "runtime": {k: self.config.get(k) for k in RUNTIME_KEYS},
                },
                indent=2,
            )
            + "\n"
        )
        return [csv_path, json_path, timing]
