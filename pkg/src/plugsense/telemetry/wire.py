"""Sensor message schema and the length-delimited stream framing.

A plug publishes ``tele/<device_id>/SENSOR`` with a JSON body such as
``{"Time": "2023-01-01T12:00:00", "ENERGY": {"Voltage": 230.1}}``.

On a stream socket each message travels as one frame::

    u32 body_len | u16 topic_len | topic (utf-8) | payload

all integers big-endian. The receiver answers every frame with a single
status byte (see :class:`Status`).
"""

from __future__ import annotations

import enum
import json
import math
import re
import struct
from dataclasses import dataclass
from datetime import datetime, timezone

from ..errors import InvalidJSONError, InvalidTimeError, MalformedTopicError, MissingVoltageError
from ..plugsim import Measurement

TOPIC_RE = re.compile(r"^tele/([^/\s]+)/SENSOR$")
MAX_FRAME = 1 << 20
_EPOCH = datetime(1970, 1, 1, tzinfo=timezone.utc)
_LEN = struct.Struct(">I")
_TOPIC_LEN = struct.Struct(">H")


class Status(enum.IntEnum):
    ACCEPTED = 0
    DUPLICATE = 1
    REJECTED = 2  # malformed message
    OUT_OF_ORDER = 3
    BACKPRESSURE = 4  # store unavailable, retry later


@dataclass(frozen=True)
class WireMessage:
    topic: str
    payload: bytes


def topic_for(device_id: str) -> str:
    return f"tele/{device_id}/SENSOR"


def parse_time(text) -> int:
    """ISO-8601 timestamp to integer nanoseconds; naive times are taken as UTC."""
    if not isinstance(text, str):
        raise InvalidTimeError(f"Time must be an ISO-8601 string, got {text!r}")
    s = text.strip()
    if s.endswith("Z"):
        s = s[:-1] + "+00:00"
    try:
        dt = datetime.fromisoformat(s)
    except ValueError as exc:
        raise InvalidTimeError(f"unparseable Time {text!r}") from exc
    if dt.tzinfo is None:
        dt = dt.replace(tzinfo=timezone.utc)
    delta = dt - _EPOCH
    return (delta.days * 86400 + delta.seconds) * 1_000_000_000 + delta.microseconds * 1000


def format_time(timestamp_ns: int) -> str:
    sec, frac = divmod(int(timestamp_ns), 1_000_000_000)
    dt = datetime.fromtimestamp(sec, tz=timezone.utc)
    out = dt.strftime("%Y-%m-%dT%H:%M:%S")
    if frac:
        out += f".{frac // 1000:06d}"
    return out


def _number(value, field):
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise MissingVoltageError(f"ENERGY.{field} must be a number, got {value!r}")
    value = float(value)
    if not math.isfinite(value):
        raise MissingVoltageError(f"ENERGY.{field} is not finite")
    return value


def parse_sensor_message(msg: WireMessage) -> Measurement:
    m = TOPIC_RE.match(msg.topic)
    if not m:
        raise MalformedTopicError(f"topic {msg.topic!r} does not match tele/<device>/SENSOR")
    try:
        body = json.loads(msg.payload.decode("utf-8") if isinstance(msg.payload, bytes) else msg.payload)
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise InvalidJSONError(f"payload is not valid UTF-8 JSON: {exc}") from exc
    if not isinstance(body, dict):
        raise InvalidJSONError("payload must be a JSON object")
    energy = body.get("ENERGY")
    if not isinstance(energy, dict) or "Voltage" not in energy:
        raise MissingVoltageError("payload has no ENERGY.Voltage")
    voltage = _number(energy["Voltage"], "Voltage")
    power = _number(energy["Power"], "Power") if energy.get("Power") is not None else None
    current = _number(energy["Current"], "Current") if energy.get("Current") is not None else None
    if "Time" not in body:
        raise InvalidTimeError("payload has no Time")
    return Measurement(m.group(1), parse_time(body["Time"]), voltage, power, current)


def encode_sensor_message(m: Measurement) -> WireMessage:
    energy = {"Voltage": m.voltage_v}
    if m.power_w is not None:
        energy["Power"] = m.power_w
    if m.current_a is not None:
        energy["Current"] = m.current_a
    body = {"Time": format_time(m.timestamp_ns), "ENERGY": energy}
    return WireMessage(topic_for(m.device_id), json.dumps(body, separators=(",", ":")).encode("utf-8"))


def encode_frame(msg: WireMessage) -> bytes:
    topic = msg.topic.encode("utf-8")
    body = _TOPIC_LEN.pack(len(topic)) + topic + msg.payload
    if len(body) > MAX_FRAME:
        raise ValueError(f"frame of {len(body)} bytes exceeds {MAX_FRAME}")
    return _LEN.pack(len(body)) + body


def decode_body(body: bytes) -> WireMessage:
    """Split a frame body into topic and payload; raises ValueError when truncated."""
    if len(body) < 2:
        raise ValueError("frame body shorter than its topic header")
    (n,) = _TOPIC_LEN.unpack_from(body)
    if len(body) < 2 + n:
        raise ValueError("frame body shorter than its topic")
    topic = body[2 : 2 + n].decode("utf-8", errors="replace")
    return WireMessage(topic, bytes(body[2 + n :]))


def read_frame(sock) -> WireMessage | None:
    """Blocking read of one frame from a socket; None on clean EOF."""
    head = _recv_exact(sock, 4)
    if head is None:
        return None
    (n,) = _LEN.unpack(head)
    if n > MAX_FRAME:
        raise ValueError(f"frame of {n} bytes exceeds {MAX_FRAME}")
    body = _recv_exact(sock, n)
    if body is None:
        raise ConnectionError("connection closed mid-frame")
    return decode_body(body)


def _recv_exact(sock, n):
    buf = bytearray()
    while len(buf) < n:
        chunk = sock.recv(n - len(buf))
        if not chunk:
            if not buf:
                return None
            raise ConnectionError("connection closed mid-frame")
        buf += chunk
    return bytes(buf)
