"""Append-only voltage store, one point per text line::

    voltage,device=<id>,phase=<p>,location=<l>,vendor=<v> value=<decimal> <unix_ns>

Tag values escape ``\\``, ``,``, ``=`` and space with a backslash. The
in-memory index is rebuilt from the log on open. A trailing line without a
newline is a torn write: readers ignore it and a writer truncates it.
"""

from __future__ import annotations

import bisect
import heapq
import logging
import os
import threading
from pathlib import Path

from ..errors import OutOfOrderError, StoreError
from .registry import SERIES, TAG_KEYS, TimeSeriesPoint

log = logging.getLogger(__name__)

LOG_NAME = "voltage.lp"
APPENDED = "appended"
DUPLICATE = "duplicate"


def _escape(value: str) -> str:
    if "\n" in value or "\r" in value:
        raise ValueError(f"tag value may not contain a newline: {value!r}")
    return value.replace("\\", "\\\\").replace(",", "\\,").replace("=", "\\=").replace(" ", "\\ ")


def _split(text: str, sep: str, maxsplit: int = -1) -> list[str]:
    parts, cur, i = [], [], 0
    while i < len(text):
        ch = text[i]
        if ch == "\\" and i + 1 < len(text):
            cur.append(text[i : i + 2])
            i += 2
            continue
        if ch == sep and (maxsplit < 0 or len(parts) < maxsplit):
            parts.append("".join(cur))
            cur = []
        else:
            cur.append(ch)
        i += 1
    parts.append("".join(cur))
    return parts


def _unescape(text: str) -> str:
    out, i = [], 0
    while i < len(text):
        if text[i] == "\\" and i + 1 < len(text):
            out.append(text[i + 1])
            i += 2
        else:
            out.append(text[i])
            i += 1
    return "".join(out)


def format_line(point: TimeSeriesPoint) -> str:
    tags = ",".join(f"{k}={_escape(point.tags[k])}" for k in TAG_KEYS)
    return f"{point.series},{tags} value={float(point.value)!r} {int(point.timestamp_ns)}"


def parse_line(line: str) -> TimeSeriesPoint:
    fields = _split(line.rstrip("\n"), " ")
    if len(fields) != 3:
        raise ValueError(f"expected 3 space-separated fields, got {len(fields)}")
    head = _split(fields[0], ",")
    series = _unescape(head[0])
    tags = {}
    for item in head[1:]:
        kv = _split(item, "=", maxsplit=1)
        if len(kv) != 2:
            raise ValueError(f"bad tag {item!r}")
        tags[_unescape(kv[0])] = _unescape(kv[1])
    if not fields[1].startswith("value="):
        raise ValueError(f"bad field set {fields[1]!r}")
    return TimeSeriesPoint(tags, float(fields[1][6:]), int(fields[2]), series=series)


class LineStore:
    """Single-writer, multi-reader point store backed by one log file.

    ``append`` returns only after the line is flushed (and fsynced unless
    ``fsync=False``). Re-appending an existing ``(device, timestamp)`` is a
    no-op, which makes replays idempotent; an older timestamp that is not a
    duplicate raises :class:`OutOfOrderError`.
    """

    def __init__(self, directory: str | Path, fsync: bool = True, read_only: bool = False):
        self.directory = Path(directory)
        self.path = self.directory / LOG_NAME
        self.fsync = fsync
        self.read_only = read_only
        self.corrupt_lines = 0
        self._lock = threading.RLock()
        self._index: dict[tuple[str, str], tuple[list[int], list[TimeSeriesPoint]]] = {}
        self._offset = 0
        self._fh = None
        if not read_only:
            self.directory.mkdir(parents=True, exist_ok=True)
            self.path.touch(exist_ok=True)
            self._truncate_torn_tail()
        self._refresh()
        if not read_only:
            self._fh = open(self.path, "ab")

    def close(self):
        with self._lock:
            if self._fh is not None:
                self._fh.close()
                self._fh = None

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()

    def _truncate_torn_tail(self):
        data = self.path.read_bytes()
        if data and not data.endswith(b"\n"):
            keep = data.rfind(b"\n") + 1
            log.warning("truncating %d bytes of torn write at end of %s", len(data) - keep, self.path)
            with open(self.path, "r+b") as fh:
                fh.truncate(keep)

    def _refresh(self):
        if not self.path.exists():
            return
        with open(self.path, "rb") as fh:
            fh.seek(self._offset)
            data = fh.read()
        end = data.rfind(b"\n") + 1
        for raw in data[:end].splitlines():
            if not raw.strip():
                continue
            try:
                point = parse_line(raw.decode("utf-8"))
            except (ValueError, UnicodeDecodeError) as exc:
                self.corrupt_lines += 1
                log.warning("skipping corrupt store line %r: %s", raw[:80], exc)
                continue
            self._insert(point, check=False)
        self._offset += end

    def _insert(self, point, check):
        key = (point.series, point.tags.get("device", ""))
        ts_list, points = self._index.setdefault(key, ([], []))
        ts = int(point.timestamp_ns)
        k = bisect.bisect_left(ts_list, ts)
        if k < len(ts_list) and ts_list[k] == ts:
            return DUPLICATE
        if check and k < len(ts_list):
            raise OutOfOrderError(key[1], ts, ts_list[-1])
        ts_list.insert(k, ts)
        points.insert(k, point)
        return APPENDED

    def append(self, point: TimeSeriesPoint) -> str:
        if self.read_only:
            raise StoreError("store is open read-only")
        line = (format_line(point) + "\n").encode("utf-8")
        with self._lock:
            if self._fh is None:
                raise StoreError(f"store {self.path} is closed")
            key = (point.series, point.device)
            ts_list = self._index.get(key, ([], []))[0]
            ts = int(point.timestamp_ns)
            if ts_list:
                k = bisect.bisect_left(ts_list, ts)
                if k < len(ts_list) and ts_list[k] == ts:
                    return DUPLICATE
                if k < len(ts_list):
                    raise OutOfOrderError(point.device, ts, ts_list[-1])
            try:
                self._fh.write(line)
                self._fh.flush()
                if self.fsync:
                    os.fsync(self._fh.fileno())
            except (OSError, ValueError) as exc:
                raise StoreError(f"append to {self.path} failed: {exc}") from exc
            self._offset += len(line)
            return self._insert(point, check=False)

    def last_timestamp(self, device: str, series: str = SERIES) -> int | None:
        with self._lock:
            ts = self._index.get((series, device), ([], []))[0]
            return ts[-1] if ts else None

    def devices(self) -> list[str]:
        with self._lock:
            return sorted({d for _, d in self._index})

    def __len__(self):
        with self._lock:
            return sum(len(ts) for ts, _ in self._index.values())

    def query(
        self,
        tags: dict[str, str] | None = None,
        start_ns: int | None = None,
        end_ns: int | None = None,
        series: str = SERIES,
    ) -> list[TimeSeriesPoint]:
        """Points matching every tag in ``tags`` with ``start_ns <= t < end_ns``, oldest first."""
        tags = tags or {}
        if start_ns is not None and end_ns is not None and start_ns > end_ns:
            raise ValueError(f"query range start {start_ns} is after end {end_ns}")
        with self._lock:
            if self.read_only:
                self._refresh()
            runs = []
            for (s, device), (ts_list, points) in sorted(self._index.items()):
                if s != series or ("device" in tags and tags["device"] != device):
                    continue
                lo = 0 if start_ns is None else bisect.bisect_left(ts_list, start_ns)
                hi = len(ts_list) if end_ns is None else bisect.bisect_left(ts_list, end_ns)
                run = [p for p in points[lo:hi] if all(p.tags.get(k) == v for k, v in tags.items())]
                if run:
                    runs.append(run)
        return list(heapq.merge(*runs, key=lambda p: (p.timestamp_ns, p.device)))
