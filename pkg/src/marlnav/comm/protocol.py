"""Length-prefixed JSON wire protocol between the manager and robot endpoints.

A frame is a 4-byte big-endian payload length followed by a UTF-8 JSON
object. The object always starts with ``"kind"`` and then carries the
kind's fields in schema order, so encoding is canonical and
``encode(decode(frame)) == frame`` for every frame this module produces.
"""
from __future__ import annotations

import json
import math
import struct
from dataclasses import dataclass, field

from ..errors import (
    FrameTooLargeError,
    MalformedPayloadError,
    MissingFieldError,
    TruncatedFrameError,
    UnknownKindError,
)

MAX_FRAME = 1 << 20
HEADER = struct.Struct(">I")

# field name -> type tag, in wire order
SCHEMA: dict[str, dict[str, str]] = {
    "REGISTER": {"robot_id": "int", "namespace": "str"},
    "REGISTER_ACK": {"robot_id": "int", "cycle_ms": "int", "substep_ms": "int"},
    "COMMAND": {"robot_id": "int", "cycle": "int", "v": "float", "w": "float", "exec_ms": "int"},
    "STATE": {
        "robot_id": "int",
        "cycle": "int",
        "odom": "float[2]",
        "lidar": "float[]",
        "collided": "bool",
        "in_goal": "bool",
    },
    "RESET": {"episode": "int", "pose": "float[3]"},
    "RESET_ACK": {"robot_id": "int", "episode": "int"},
    "SHUTDOWN": {},
}
KINDS = tuple(SCHEMA)


@dataclass(frozen=True)
class WireMessage:
    kind: str
    fields: dict = field(default_factory=dict)

    def __getitem__(self, name):
        return self.fields[name]


def _is_int(x):
    return isinstance(x, int) and not isinstance(x, bool)


def _is_num(x):
    return _is_int(x) or (isinstance(x, float) and math.isfinite(x))


def _coerce(kind, name, tag, value):
    bad = MalformedPayloadError(f"{kind}.{name}: invalid value {value!r} for type {tag}")
    if tag == "int":
        if not _is_int(value):
            raise bad
        return value
    if tag == "str":
        if not isinstance(value, str):
            raise bad
        return value
    if tag == "bool":
        if not isinstance(value, bool):
            raise bad
        return value
    if tag == "float":
        if not _is_num(value):
            raise bad
        return float(value)
    # float arrays
    if not isinstance(value, (list, tuple)) or not all(_is_num(v) for v in value):
        raise bad
    want = tag[len("float["):-1]
    if want and len(value) != int(want):
        raise bad
    if not want and len(value) == 0:
        raise bad
    return [float(v) for v in value]


def validate(kind: str, fields: dict, error=MissingFieldError) -> dict:
    """Check ``fields`` against the schema for ``kind``; return them in wire order."""
    if kind not in SCHEMA:
        raise UnknownKindError(f"unknown message kind {kind!r}")
    out = {}
    for name, tag in SCHEMA[kind].items():
        if name not in fields:
            raise error(f"{kind} is missing required field {name!r}")
        out[name] = _coerce(kind, name, tag, fields[name])
    return out


def make(kind: str, **fields) -> WireMessage:
    return WireMessage(kind, validate(kind, fields))


def encode_payload(msg: WireMessage) -> bytes:
    body = {"kind": msg.kind}
    body.update(validate(msg.kind, msg.fields))
    try:
        text = json.dumps(body, separators=(",", ":"), ensure_ascii=False, allow_nan=False)
    except ValueError as exc:
        raise MalformedPayloadError(str(exc)) from None
    return text.encode("utf-8")


def encode_message(msg: WireMessage) -> bytes:
    payload = encode_payload(msg)
    if len(payload) > MAX_FRAME:
        raise FrameTooLargeError(f"payload of {len(payload)} bytes exceeds {MAX_FRAME}")
    return HEADER.pack(len(payload)) + payload


def decode_payload(payload: bytes) -> WireMessage:
    try:
        text = payload.decode("utf-8")
    except UnicodeDecodeError as exc:
        raise MalformedPayloadError(f"payload is not UTF-8: {exc}") from None
    try:
        obj = json.loads(text, parse_constant=_reject_constant)
    except ValueError as exc:
        raise MalformedPayloadError(f"payload is not JSON: {exc}") from None
    if not isinstance(obj, dict):
        raise MalformedPayloadError("payload must be a JSON object")
    if "kind" not in obj:
        raise MissingFieldError("payload has no 'kind'")
    kind = obj.pop("kind")
    if not isinstance(kind, str) or kind not in SCHEMA:
        raise UnknownKindError(f"unknown message kind {kind!r}")
    return WireMessage(kind, validate(kind, obj))


def _reject_constant(name):
    raise ValueError(f"non-finite constant {name}")


def frame_length(header: bytes) -> int:
    if len(header) < HEADER.size:
        raise TruncatedFrameError(f"frame header needs {HEADER.size} bytes, got {len(header)}")
    (n,) = HEADER.unpack(header[:HEADER.size])
    if n > MAX_FRAME:
        raise FrameTooLargeError(f"declared length {n} exceeds {MAX_FRAME}")
    return n


def decode_message(data: bytes) -> WireMessage:
    """Decode exactly one frame; trailing bytes are an error."""
    n = frame_length(data)
    payload = data[HEADER.size:]
    if len(payload) < n:
        raise TruncatedFrameError(f"frame declares {n} payload bytes, only {len(payload)} present")
    if len(payload) > n:
        raise MalformedPayloadError(f"{len(payload) - n} trailing bytes after frame")
    return decode_payload(payload)


def read_frame(recv_exactly) -> WireMessage:
    """Read one frame using ``recv_exactly(n) -> bytes`` (short read = EOF)."""
    header = recv_exactly(HEADER.size)
    n = frame_length(header)
    payload = recv_exactly(n)
    if len(payload) < n:
        raise TruncatedFrameError(f"stream ended after {len(payload)} of {n} payload bytes")
    return decode_payload(payload)
