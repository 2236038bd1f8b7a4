"""Line-protocol serialization for the adapter side.

The host and this adapter exchange newline-delimited JSON: one handshake
line from the adapter, then one response line per request line. This module
owns parsing and formatting only; it is deliberately strict about types
(booleans never pass as numbers, NaN and Infinity are rejected) so that a
disagreement between the two ends surfaces as a loud error instead of a
silently coerced value. Range checks on quality and time are the host's
business, not the wire's.

Only the standard library is used here; the adapter must be runnable
without the host package installed.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

PROTOCOL_VERSION = "1"


class WireError(ValueError):
    """A line could not be parsed as the expected protocol message."""


@dataclass(frozen=True)
class Handshake:
    protocol: str
    parallel_safe: bool

    def to_line(self) -> str:
        return json.dumps(
            {"protocol": self.protocol, "parallel_safe": self.parallel_safe},
            sort_keys=True,
        )


@dataclass(frozen=True)
class Request:
    """One generation order from the host."""

    id: str
    steps: int
    guidance_scale: float
    guidance_rescale: float
    seed: int
    positive_prompt: str
    negative_prompt: str
    base_prompt: str = ""

    def to_line(self) -> str:
        return json.dumps(
            {
                "id": self.id,
                "steps": self.steps,
                "guidance_scale": self.guidance_scale,
                "guidance_rescale": self.guidance_rescale,
                "seed": self.seed,
                "positive_prompt": self.positive_prompt,
                "negative_prompt": self.negative_prompt,
                "base_prompt": self.base_prompt,
            },
            sort_keys=True,
        )


@dataclass(frozen=True)
class Response:
    """Objectives on success, an error string otherwise; never both."""

    id: str
    time_ms: float | None = None
    quality: float | None = None
    error: str | None = None

    def __post_init__(self) -> None:
        has_values = self.time_ms is not None and self.quality is not None
        if has_values == (self.error is not None):
            raise WireError("response must carry exactly one of (time_ms & quality) or error")

    def to_line(self) -> str:
        if self.error is not None:
            doc = {"id": self.id, "error": self.error}
        else:
            doc = {"id": self.id, "time_ms": self.time_ms, "quality": self.quality}
        return json.dumps(doc, sort_keys=True)


def parse_handshake(line: str) -> Handshake:
    doc = _parse_object(line, "handshake")
    protocol = doc.get("protocol")
    parallel_safe = doc.get("parallel_safe")
    if not isinstance(protocol, str):
        raise WireError(f"handshake lacks string 'protocol': {line!r}")
    if not isinstance(parallel_safe, bool):
        raise WireError(f"handshake lacks boolean 'parallel_safe': {line!r}")
    return Handshake(protocol=protocol, parallel_safe=parallel_safe)


def parse_request(line: str) -> Request:
    doc = _parse_object(line, "request")
    try:
        return Request(
            id=_field(doc, "id", str),
            steps=_field(doc, "steps", int),
            guidance_scale=_number(doc, "guidance_scale"),
            guidance_rescale=_number(doc, "guidance_rescale"),
            seed=_field(doc, "seed", int),
            positive_prompt=_field(doc, "positive_prompt", str),
            negative_prompt=_field(doc, "negative_prompt", str),
            base_prompt=_field(doc, "base_prompt", str) if "base_prompt" in doc else "",
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise WireError(f"bad request line ({exc}): {line!r}") from exc


def parse_response(line: str) -> Response:
    doc = _parse_object(line, "response")
    if "id" not in doc:
        raise WireError(f"response lacks 'id': {line!r}")
    try:
        if "error" in doc:
            if "time_ms" in doc or "quality" in doc:
                raise ValueError("error responses must not carry objective fields")
            return Response(id=_field(doc, "id", str), error=_field(doc, "error", str))
        return Response(
            id=_field(doc, "id", str),
            time_ms=_number(doc, "time_ms"),
            quality=_number(doc, "quality"),
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise WireError(f"bad response line ({exc}): {line!r}") from exc


def _reject_constant(token: str) -> float:
    raise ValueError(f"non-finite number {token} is not allowed on the wire")


def _parse_object(line: str, what: str) -> dict:
    try:
        doc = json.loads(line, parse_constant=_reject_constant)
    except ValueError as exc:
        raise WireError(f"{what} line is not valid JSON ({exc}): {line!r}") from exc
    if not isinstance(doc, dict):
        raise WireError(f"{what} line is not a JSON object: {line!r}")
    return doc


def _field(doc: dict, name: str, kind: type):
    """Required field with an exact type (bool never passes as int)."""
    value = doc[name]
    if not isinstance(value, kind) or isinstance(value, bool):
        raise ValueError(f"field {name!r} must be {kind.__name__}, got {value!r}")
    return value


def _number(doc: dict, name: str) -> float:
    value = doc[name]
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ValueError(f"field {name!r} must be a number, got {value!r}")
    if not math.isfinite(value):
        raise ValueError(f"field {name!r} must be finite, got {value!r}")
    return float(value)
