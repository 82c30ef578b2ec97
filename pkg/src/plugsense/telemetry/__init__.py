"""Plug telemetry path: wire messages, device metadata and the point store."""

from .registry import DeviceInfo, DeviceRegistry, TimeSeriesPoint, augment
from .service import IngestService, Publisher, ServiceThread, Stats
from .store import LineStore, format_line, parse_line
from .wire import (
    Status,
    WireMessage,
    decode_body,
    encode_frame,
    encode_sensor_message,
    format_time,
    parse_sensor_message,
    parse_time,
    topic_for,
)

__all__ = [
    "DeviceInfo",
    "DeviceRegistry",
    "IngestService",
    "LineStore",
    "Publisher",
    "ServiceThread",
    "Stats",
    "Status",
    "TimeSeriesPoint",
    "WireMessage",
    "augment",
    "decode_body",
    "encode_frame",
    "encode_sensor_message",
    "format_line",
    "format_time",
    "parse_line",
    "parse_sensor_message",
    "parse_time",
    "topic_for",
]
