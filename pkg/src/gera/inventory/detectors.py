"""Trailing-window anomaly detectors over per-key on-hand series.

Each observation is scored against the ``window_size`` observations that
precede it; the point itself never enters its own baseline. Fewer than
``min_observations`` prior points means the point is not evaluated at all
and is reported as insufficient history.
"""

from __future__ import annotations

import math
import statistics
from dataclasses import dataclass, field
from datetime import date
from typing import Iterable, Sequence

from .._common import ConfigError, digest_obj, sha256_hex

MAD_CONSTANT = 0.6745
METHODS = ("zscore", "mad", "iqr")
DEFAULT_PARAMS = {
    "window_size": 30,
    "min_observations": 10,
    "zscore": {"threshold": 3.0},
    "mad": {"threshold": 3.5},
    "iqr": {"k": 1.5},
    "methods": list(METHODS),
}
INF = math.inf


@dataclass(frozen=True)
class DetectorParams:
    window_size: int = 30
    min_observations: int = 10
    z_threshold: float = 3.0
    mad_threshold: float = 3.5
    iqr_k: float = 1.5
    methods: tuple[str, ...] = METHODS

    def __post_init__(self):
        if self.window_size < 1 or self.min_observations < 1:
            raise ConfigError("window_size and min_observations must be positive")
        if self.min_observations > self.window_size:
            raise ConfigError("min_observations cannot exceed window_size")
        unknown = set(self.methods) - set(METHODS)
        if unknown:
            raise ConfigError(f"unknown detector methods {sorted(unknown)}")

    @classmethod
    def from_dict(cls, d: dict) -> "DetectorParams":
        return cls(
            window_size=int(d.get("window_size", 30)),
            min_observations=int(d.get("min_observations", 10)),
            z_threshold=float(d.get("zscore", {}).get("threshold", 3.0)),
            mad_threshold=float(d.get("mad", {}).get("threshold", 3.5)),
            iqr_k=float(d.get("iqr", {}).get("k", 1.5)),
            methods=tuple(d.get("methods", METHODS)),
        )

    def threshold(self, method: str) -> float:
        return {"zscore": self.z_threshold, "mad": self.mad_threshold, "iqr": self.iqr_k}[method]


def quartiles(values: Sequence[float]) -> tuple[float, float]:
    """Q1 and Q3 as medians of the lower and upper halves, excluding the median for odd n."""
    s = sorted(values)
    half = len(s) // 2
    lower, upper = s[:half], s[len(s) - half:]
    if not lower:
        return s[0], s[0]
    return statistics.median(lower), statistics.median(upper)


@dataclass(frozen=True)
class AnomalyBaseline:
    values: tuple[float, ...]
    mean: float
    stdev: float
    median: float
    mad: float
    q1: float
    q3: float

    @classmethod
    def of(cls, window: Sequence[float]) -> "AnomalyBaseline":
        values = tuple(float(v) for v in window)
        med = statistics.median(values)
        q1, q3 = quartiles(values)
        return cls(
            values=values,
            mean=statistics.fmean(values),
            stdev=statistics.stdev(values) if len(values) > 1 else 0.0,
            median=med,
            mad=statistics.median(abs(v - med) for v in values),
            q1=q1,
            q3=q3,
        )

    @property
    def digest(self) -> str:
        return digest_obj([repr(v) for v in self.values])


def _ratio(num: float, den: float) -> float:
    if den == 0:
        return 0.0 if num == 0 else math.copysign(INF, num)
    return num / den


def zscore(x: float, b: AnomalyBaseline) -> float:
    return _ratio(x - b.mean, b.stdev)


def modified_zscore(x: float, b: AnomalyBaseline) -> float:
    return _ratio(MAD_CONSTANT * (x - b.median), b.mad)


def iqr_score(x: float, b: AnomalyBaseline) -> float:
    """Distance outside [Q1, Q3] measured in IQRs (0 inside the box)."""
    iqr = b.q3 - b.q1
    if x > b.q3:
        return _ratio(x - b.q3, iqr)
    if x < b.q1:
        return _ratio(b.q1 - x, iqr)
    return 0.0


def score(method: str, x: float, b: AnomalyBaseline) -> float:
    return {"zscore": zscore, "mad": modified_zscore, "iqr": iqr_score}[method](x, b)


def json_score(v: float):
    if math.isinf(v):
        return "inf" if v > 0 else "-inf"
    return round(v, 12)


@dataclass
class AnomalyFlag:
    material_id: str
    location_id: str
    snapshot_date: date
    observed: float
    method: str
    score: float
    threshold: float
    baseline_digest: str
    disposition: str = "open"

    @property
    def series(self) -> tuple[str, str]:
        return (self.material_id, self.location_id)

    @property
    def flag_id(self) -> str:
        raw = f"{self.material_id}|{self.location_id}|{self.snapshot_date.isoformat()}|{self.method}"
        return "FL-" + sha256_hex(raw)[:16]

    @property
    def normalized(self) -> float:
        return abs(self.score) / self.threshold if self.threshold else INF

    def to_dict(self) -> dict:
        return {
            "flag_id": self.flag_id,
            "material_id": self.material_id,
            "location_id": self.location_id,
            "snapshot_date": self.snapshot_date.isoformat(),
            "observed": self.observed,
            "method": self.method,
            "score": json_score(self.score),
            "threshold": self.threshold,
            "normalized": json_score(self.normalized),
            "baseline_digest": self.baseline_digest,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "AnomalyFlag":
        return cls(
            material_id=d["material_id"],
            location_id=d["location_id"],
            snapshot_date=date.fromisoformat(d["snapshot_date"]),
            observed=d["observed"],
            method=d["method"],
            score=float(d["score"]),
            threshold=d["threshold"],
            baseline_digest=d["baseline_digest"],
        )


@dataclass
class DetectionResult:
    flags: list[AnomalyFlag] = field(default_factory=list)
    insufficient: list[tuple[tuple[str, str], date]] = field(default_factory=list)
    evaluated: int = 0


def is_flagged(method: str, s: float, params: DetectorParams) -> bool:
    return abs(s) > params.threshold(method)


def detect_series(
    key: tuple[str, str],
    series: Sequence[tuple[date, float]],
    params: DetectorParams,
    result: DetectionResult | None = None,
    only_dates: set[date] | None = None,
) -> DetectionResult:
    """Score each observation of one series against its trailing window."""
    result = result or DetectionResult()
    values = [v for _, v in series]
    for i, (day, x) in enumerate(series):
        if only_dates is not None and day not in only_dates:
            continue
        window = values[max(0, i - params.window_size):i]
        if len(window) < params.min_observations:
            result.insufficient.append((key, day))
            continue
        result.evaluated += 1
        base = AnomalyBaseline.of(window)
        for method in params.methods:
            s = score(method, x, base)
            if is_flagged(method, s, params):
                result.flags.append(
                    AnomalyFlag(key[0], key[1], day, x, method, s, params.threshold(method), base.digest)
                )
    return result


def detect_all(
    series_by_key: dict[tuple[str, str], list[tuple[date, float]]], params: DetectorParams
) -> DetectionResult:
    result = DetectionResult()
    for key in sorted(series_by_key):
        detect_series(key, series_by_key[key], params, result)
    result.flags.sort(key=lambda f: (f.snapshot_date, f.material_id, f.location_id, METHODS.index(f.method)))
    return result


def zscore_flags(series: Iterable[tuple[date, float]], window_size: int = 30, threshold: float = 3.0,
                 min_observations: int = 10, key=("", "")) -> DetectionResult:
    p = DetectorParams(window_size, min_observations, z_threshold=threshold, methods=("zscore",))
    return detect_series(key, list(series), p)


def mad_flags(series: Iterable[tuple[date, float]], window_size: int = 30, threshold: float = 3.5,
              min_observations: int = 10, key=("", "")) -> DetectionResult:
    p = DetectorParams(window_size, min_observations, mad_threshold=threshold, methods=("mad",))
    return detect_series(key, list(series), p)


def iqr_flags(series: Iterable[tuple[date, float]], window_size: int = 30, k: float = 1.5,
              min_observations: int = 10, key=("", "")) -> DetectionResult:
    p = DetectorParams(window_size, min_observations, iqr_k=k, methods=("iqr",))
    return detect_series(key, list(series), p)
