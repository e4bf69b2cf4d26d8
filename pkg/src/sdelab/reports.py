"""Shared output records and deterministic serialization."""

from __future__ import annotations

import csv
import dataclasses
import hashlib
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterable, Sequence

import numpy as np


def jsonable(obj: Any) -> Any:
    """Convert numpy scalars/arrays, dataclasses and tuples to plain JSON types."""
    if dataclasses.is_dataclass(obj) and not isinstance(obj, type):
        if hasattr(obj, "to_dict"):
            return jsonable(obj.to_dict())
        return {f.name: jsonable(getattr(obj, f.name)) for f in dataclasses.fields(obj)}
    if hasattr(obj, "to_dict") and callable(obj.to_dict):
        return jsonable(obj.to_dict())
    if isinstance(obj, dict):
        return {str(k): jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return jsonable(obj.tolist())
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        if math.isnan(v):
            return "nan"
        if math.isinf(v):
            return "inf" if v > 0 else "-inf"
        return v
    return obj


def dumps(obj: Any) -> str:
    return json.dumps(jsonable(obj), sort_keys=True, indent=2)


def digest(obj: Any) -> str:
    return hashlib.sha256(json.dumps(jsonable(obj), sort_keys=True).encode()).hexdigest()[:16]


@dataclass
class EstimateReport:
    """Point estimate with its Monte Carlo standard error and configuration."""

    value: float
    std_error: float
    n_samples: int
    fingerprint: dict = field(default_factory=dict)
    diverged: int = 0
    extra: dict = field(default_factory=dict)

    @classmethod
    def from_samples(cls, samples, fingerprint=None, diverged=0, **extra):
        s = np.asarray(samples, dtype=float)
        n = s.size
        if n == 0:
            return cls(float("nan"), float("nan"), 0, fingerprint or {}, diverged, extra)
        mean = float(np.mean(s))
        se = float(np.std(s, ddof=1) / math.sqrt(n)) if n > 1 else float("inf")
        return cls(mean, se, n, fingerprint or {}, diverged, extra)

    def to_dict(self) -> dict:
        return {"value": self.value, "std_error": self.std_error, "n_samples": self.n_samples,
                "fingerprint": self.fingerprint, "diverged": self.diverged, "extra": self.extra}


def write_curve(path: str | Path, header: Sequence[str], rows: Iterable[Sequence]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for r in rows:
            w.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in r])


def loglog_slope(x, y) -> tuple[float, float, float]:
    """Least-squares fit log y = a + s log x; returns (slope, intercept, R^2)."""
    lx, ly = np.log(np.asarray(x, float)), np.log(np.asarray(y, float))
    A = np.vstack([lx, np.ones_like(lx)]).T
    coef, *_ = np.linalg.lstsq(A, ly, rcond=None)
    resid = ly - A @ coef
    ss = np.sum((ly - ly.mean()) ** 2)
    r2 = 1.0 - np.sum(resid ** 2) / ss if ss > 0 else 1.0
    return float(coef[0]), float(coef[1]), float(r2)
