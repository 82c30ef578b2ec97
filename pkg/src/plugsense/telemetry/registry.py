from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path

import yaml

from ..errors import ConfigError
from ..plugsim import Measurement

log = logging.getLogger(__name__)
_warned: set[str] = set()

PHASES = ("L1", "L2", "L3")
UNKNOWN = "unknown"
SERIES = "voltage"
TAG_KEYS = ("device", "phase", "location", "vendor")


@dataclass(frozen=True)
class DeviceInfo:
    phase: str
    location: str = UNKNOWN
    vendor: str = UNKNOWN
    bus: str | None = None

    def __post_init__(self):
        if self.phase not in PHASES:
            raise ConfigError(f"phase must be one of {PHASES}, got {self.phase!r}")


@dataclass(frozen=True)
class TimeSeriesPoint:
    tags: dict[str, str]
    value: float
    timestamp_ns: int
    series: str = SERIES
    warning: bool = field(default=False, compare=False)

    @property
    def device(self) -> str:
        return self.tags["device"]


class DeviceRegistry(dict):
    """device id -> :class:`DeviceInfo`."""

    @classmethod
    def from_dict(cls, data) -> DeviceRegistry:
        """Accepts ``{"devices": {id: {...}}}`` or ``{"devices": [{"id": ..., ...}]}``."""
        devices = (data or {}).get("devices", {})
        reg = cls()
        if isinstance(devices, dict):
            items = [(str(k), v) for k, v in devices.items()]
        elif isinstance(devices, list):
            items = []
            for entry in devices:
                entry = dict(entry)
                if "id" not in entry:
                    raise ConfigError(f"registry entry without id: {entry}")
                items.append((str(entry.pop("id")), entry))
        else:
            raise ConfigError("registry 'devices' must be a mapping or a list")
        for dev, info in items:
            if dev in reg:
                raise ConfigError(f"duplicate device id {dev!r} in registry")
            info = dict(info or {})
            try:
                reg[dev] = DeviceInfo(
                    phase=str(info["phase"]),
                    location=str(info.get("location", UNKNOWN)),
                    vendor=str(info.get("vendor", UNKNOWN)),
                    bus=None if info.get("bus") is None else str(info["bus"]),
                )
            except KeyError as exc:
                raise ConfigError(f"device {dev!r} is missing {exc.args[0]!r}") from exc
        return reg

    @classmethod
    def load(cls, path: str | Path) -> DeviceRegistry:
        with open(path) as fh:
            return cls.from_dict(yaml.safe_load(fh))

    def to_dict(self) -> dict:
        return {
            "devices": {
                dev: {k: v for k, v in vars(info).items() if v is not None} for dev, info in sorted(self.items())
            }
        }


def augment(m: Measurement, reg: DeviceRegistry) -> TimeSeriesPoint:
    """Attach registry metadata to a measurement; unknown devices get ``unknown`` tags and a warning."""
    info = reg.get(m.device_id)
    if info is None:
        # the point itself carries the warning flag; the log line is once per device
        if m.device_id not in _warned:
            _warned.add(m.device_id)
            log.warning("measurement from unregistered device %r", m.device_id)
        tags = {"device": m.device_id, "phase": UNKNOWN, "location": UNKNOWN, "vendor": UNKNOWN}
        return TimeSeriesPoint(tags, m.voltage_v, m.timestamp_ns, warning=True)
    tags = {"device": m.device_id, "phase": info.phase, "location": info.location, "vendor": info.vendor}
    return TimeSeriesPoint(tags, m.voltage_v, m.timestamp_ns)
