"""Plug-versus-reference comparison, offset calibration and accuracy statistics.

All timestamps are integer nanoseconds. Windows are half-open ``(t - w, t]``
so a sample taken exactly at ``t`` belongs to the window ending at ``t``.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
from scipy.special import log_ndtr

from .errors import (
    CalibrationError,
    ExtrapolationError,
    InsufficientWindowError,
    NoDataError,
    NoOverlapError,
)

NS = 1_000_000_000
LAST = "last"
INTERP_10S = "interp10s"
TRIMMED_1MIN = "trimmed1min"
MEAN_15MIN = "mean15min"
METHODS = (LAST, INTERP_10S, TRIMMED_1MIN, MEAN_15MIN)

ONE_MINUTE_NS = 60 * NS
FIFTEEN_MINUTES_NS = 900 * NS
AD_CRITICAL_5PCT = 0.752


@dataclass(frozen=True)
class Series:
    t: np.ndarray  # int64 ns, strictly increasing
    v: np.ndarray
    device_id: str = ""

    def __post_init__(self):
        t = np.asarray(self.t, dtype=np.int64)
        v = np.asarray(self.v, dtype=float)
        if t.shape != v.shape or t.ndim != 1:
            raise ValueError("timestamps and values must be 1-d arrays of equal length")
        if np.any(np.diff(t) <= 0):
            raise ValueError("series timestamps must be strictly increasing")
        object.__setattr__(self, "t", t)
        object.__setattr__(self, "v", v)

    def __len__(self):
        return len(self.t)

    @classmethod
    def from_pairs(cls, pairs: Iterable[tuple[int, float]], device_id: str = "") -> Series:
        pairs = list(pairs)
        return cls(np.array([p[0] for p in pairs], dtype=np.int64), np.array([p[1] for p in pairs], dtype=float), device_id)

    @classmethod
    def from_measurements(cls, measurements, device_id: str) -> Series:
        rows = [(m.timestamp_ns, m.voltage_v) for m in measurements if m.device_id == device_id]
        return cls.from_pairs(rows, device_id)

    @classmethod
    def read_csv(cls, path: str | Path, device_id: str = "") -> Series:
        with open(path, newline="") as fh:
            rows = [(int(r["timestamp"]), float(r["volts"])) for r in csv.DictReader(fh)]
        return cls.from_pairs(rows, device_id)

    def write_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["timestamp", "volts"])
            for t, v in zip(self.t, self.v):
                w.writerow([int(t), repr(float(v))])


@dataclass(frozen=True, slots=True)
class DiffSample:
    timestamp_ns: int
    diff_v: float
    method: str
    plug_v: float = math.nan
    ref_v: float = math.nan


def interpolate_at(s: Series, t: int) -> float:
    """Linear interpolation between the two samples bracketing ``t``."""
    if len(s) == 0 or t < s.t[0] or t > s.t[-1]:
        raise ExtrapolationError(f"t={t} is outside the series range; refusing to extrapolate")
    k = int(np.searchsorted(s.t, t, side="left"))
    if s.t[k] == t:
        return float(s.v[k])
    t0, t1 = int(s.t[k - 1]), int(s.t[k])
    v0, v1 = float(s.v[k - 1]), float(s.v[k])
    return v0 + (v1 - v0) * ((t - t0) / (t1 - t0))


def last_before(s: Series, t: int) -> float:
    k = int(np.searchsorted(s.t, t, side="right"))
    if k == 0:
        raise NoDataError(f"no sample at or before t={t}")
    return float(s.v[k - 1])


def _window(s: Series, t: int, width_ns: int) -> np.ndarray:
    lo = int(np.searchsorted(s.t, t - width_ns, side="right"))
    hi = int(np.searchsorted(s.t, t, side="right"))
    return s.v[lo:hi]


def trimmed_mean_1min(s: Series, t: int) -> float:
    """Mean of the last minute's samples after dropping one lowest and one highest."""
    w = _window(s, t, ONE_MINUTE_NS)
    if len(w) < 3:
        raise InsufficientWindowError(f"need >= 3 samples in the minute before t={t}, found {len(w)}")
    return float(np.sort(w)[1:-1].mean())


def mean_15min(s: Series, t: int) -> float:
    w = _window(s, t, FIFTEEN_MINUTES_NS)
    if len(w) == 0:
        raise InsufficientWindowError(f"no samples in the 15 minutes before t={t}")
    return float(w.mean())


def _covers(s: Series, t: int, width_ns: int) -> bool:
    return len(s) > 0 and s.t[0] <= t - width_ns


def paired_differences(plug: Series, ref: Series, method: str) -> list[DiffSample]:
    """Plug estimate minus reference value at every usable reference timestamp.

    Reference ticks where the chosen method has no complete plug window are
    skipped. For ``mean15min`` the reference is averaged over the same window.
    """
    if method not in METHODS:
        raise ValueError(f"unknown method {method!r}; expected one of {METHODS}")
    if len(plug) == 0 or len(ref) == 0 or plug.t[-1] < ref.t[0] or ref.t[-1] < plug.t[0]:
        raise NoOverlapError("plug and reference series do not overlap in time")
    out = []
    for t, r in zip(ref.t.tolist(), ref.v.tolist()):
        try:
            if method == LAST:
                p = last_before(plug, t)
            elif method == INTERP_10S:
                p = interpolate_at(plug, t)
            elif method == TRIMMED_1MIN:
                if not _covers(plug, t, ONE_MINUTE_NS):
                    continue
                p = trimmed_mean_1min(plug, t)
            else:
                if not (_covers(plug, t, FIFTEEN_MINUTES_NS) and _covers(ref, t, FIFTEEN_MINUTES_NS)):
                    continue
                p = mean_15min(plug, t)
                r = mean_15min(ref, t)
        except CalibrationError:
            continue
        out.append(DiffSample(t, p - r, method, p, r))
    return out


def _diff_values(diffs: Sequence[DiffSample] | Sequence[float]) -> np.ndarray:
    vals = [d.diff_v if isinstance(d, DiffSample) else float(d) for d in diffs]
    if not vals:
        raise CalibrationError("no differences given")
    return np.asarray(vals, dtype=float)


def estimate_offset(diffs: Sequence[DiffSample]) -> float:
    """Constant plug bias: the mean plug-minus-reference difference."""
    return float(_diff_values(diffs).mean())


def apply_offset(s: Series, offset_v: float) -> Series:
    return Series(s.t.copy(), s.v - offset_v, s.device_id)


def accuracy_p95(diffs: Sequence[DiffSample]) -> float:
    """Nearest-rank 95th percentile of ``|diff - mean(diff)|``."""
    d = _diff_values(diffs)
    dev = np.sort(np.abs(d - d.mean()))
    rank = math.ceil(0.95 * len(dev))
    return float(dev[rank - 1])


def diff_variance(diffs: Sequence[DiffSample]) -> float:
    """Sample variance of the differences, in V^2."""
    d = _diff_values(diffs)
    return float(d.var(ddof=1)) if len(d) > 1 else 0.0


def _bin_index(x: float, width: float) -> int:
    q = x / width
    return int(math.copysign(math.floor(abs(q) + 0.5 + 1e-9), q))


def histogram(values: Iterable[float], bin_width: float) -> dict[float, int]:
    """Counts per ``bin_width`` step, with explicit zeros for empty bins inside the occupied range."""
    if not bin_width > 0:
        raise ValueError(f"bin_width must be > 0, got {bin_width}")
    counts: dict[int, int] = {}
    for x in values:
        k = _bin_index(float(x), bin_width)
        counts[k] = counts.get(k, 0) + 1
    if not counts:
        return {}
    digits = max(0, -math.floor(math.log10(bin_width)) + 1)
    return {round(k * bin_width, digits): counts.get(k, 0) for k in range(min(counts), max(counts) + 1)}


@dataclass(frozen=True)
class NormalityResult:
    a2: float
    a2_star: float
    reject_at_5pct: bool
    n: int


def anderson_darling_normality(values: Iterable[float]) -> NormalityResult:
    """Anderson-Darling test against a normal law with estimated mean and variance.

    Applies the small-sample correction ``A2* = A2 (1 + 4/n - 25/n^2)`` and
    rejects at the 5 % level when ``A2* > 0.752``.
    """
    x = np.sort(np.asarray(list(values), dtype=float))
    n = len(x)
    if n < 8:
        raise CalibrationError(f"Anderson-Darling needs n >= 8, got {n}")
    sd = x.std(ddof=1)
    if not sd > 0:
        raise CalibrationError("zero variance: all values are equal")
    z = (x - x.mean()) / sd
    i = np.arange(1, n + 1)
    s = np.sum((2 * i - 1) * (log_ndtr(z) + log_ndtr(-z[::-1])))
    a2 = float(-n - s / n)
    a2_star = a2 * (1 + 4 / n - 25 / n**2)
    return NormalityResult(a2, a2_star, a2_star > AD_CRITICAL_5PCT, n)


def pearson(x: Sequence[float], y: Sequence[float]) -> float:
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if len(x) < 2 or x.std() == 0 or y.std() == 0:
        return math.nan
    return float(np.corrcoef(x, y)[0, 1])


def correlation_report(diffs: Sequence[DiffSample]) -> dict[str, float]:
    """Pearson correlation of the differences with time of day and plug voltage level."""
    d = [s.diff_v for s in diffs]
    tod = [(s.timestamp_ns // NS) % 86400 for s in diffs]
    level = [s.plug_v for s in diffs]
    return {"time_of_day": pearson(d, tod), "plug_voltage": pearson(d, level)}


def write_diffs_csv(diffs: Sequence[DiffSample], path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["timestamp", "method", "plug_v", "ref_v", "diff_v"])
        for d in diffs:
            w.writerow([d.timestamp_ns, d.method, f"{d.plug_v:.6f}", f"{d.ref_v:.6f}", f"{d.diff_v:.6f}"])
