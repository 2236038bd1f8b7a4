"""Line protocol for out-of-process evaluators.

A backend is any executable that speaks newline-delimited JSON on
stdin/stdout: it announces itself with a handshake line, then answers one
response line per request line. Framing is strict (UTF-8, one JSON object
per line) so backends can be written in any language with nothing beyond a
JSON library. See PROTOCOL.md for the field-level contract.
"""

from __future__ import annotations

import json
import logging
import math
import queue
import subprocess
import threading
from dataclasses import dataclass

logger = logging.getLogger(__name__)

PROTOCOL_VERSION = "1"


class ProtocolError(RuntimeError):
    """Base for all wire-protocol failures."""


class HandshakeError(ProtocolError):
    """Child did not produce a valid handshake line."""


class MalformedLineError(ProtocolError):
    """A line was read but could not be parsed as the expected message."""


class BackendExitedError(ProtocolError):
    """Child closed stdout or died while a reply was expected."""


class ResponseTimeoutError(ProtocolError):
    """No reply line arrived within the allowed time."""


@dataclass(frozen=True)
class Handshake:
    protocol: str
    parallel_safe: bool

    def to_line(self) -> str:
        return json.dumps(
            {"protocol": self.protocol, "parallel_safe": self.parallel_safe},
            sort_keys=True,
        )

    @classmethod
    def from_line(cls, line: str) -> "Handshake":
        doc = _parse_object(line, "handshake")
        protocol = doc.get("protocol")
        parallel_safe = doc.get("parallel_safe")
        if not isinstance(protocol, str):
            raise MalformedLineError(f"handshake lacks string 'protocol': {line!r}")
        if not isinstance(parallel_safe, bool):
            raise MalformedLineError(f"handshake lacks boolean 'parallel_safe': {line!r}")
        return cls(protocol=protocol, parallel_safe=parallel_safe)


@dataclass(frozen=True)
class WireRequest:
    """One evaluation order sent to a child backend."""

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

    @classmethod
    def from_line(cls, line: str) -> "WireRequest":
        doc = _parse_object(line, "request")
        try:
            request = cls(
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
            raise MalformedLineError(f"bad request line ({exc}): {line!r}") from exc
        return request


@dataclass(frozen=True)
class WireResponse:
    """A child's answer: objectives on success, an error string otherwise."""

    id: str
    time_ms: float | None = None
    quality: float | None = None
    error: str | None = None

    def __post_init__(self) -> None:
        has_values = self.time_ms is not None and self.quality is not None
        if has_values == (self.error is not None):
            raise MalformedLineError(
                "response must carry exactly one of (time_ms & quality) or error"
            )

    def to_line(self) -> str:
        if self.error is not None:
            doc = {"id": self.id, "error": self.error}
        else:
            doc = {"id": self.id, "time_ms": self.time_ms, "quality": self.quality}
        return json.dumps(doc, sort_keys=True)

    @classmethod
    def from_line(cls, line: str) -> "WireResponse":
        doc = _parse_object(line, "response")
        if "id" not in doc:
            raise MalformedLineError(f"response lacks 'id': {line!r}")
        try:
            if "error" in doc:
                if "time_ms" in doc or "quality" in doc:
                    raise ValueError("error responses must not carry objective fields")
                return cls(id=_field(doc, "id", str), error=_field(doc, "error", str))
            return cls(
                id=_field(doc, "id", str),
                time_ms=_number(doc, "time_ms"),
                quality=_number(doc, "quality"),
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise MalformedLineError(f"bad response line ({exc}): {line!r}") from exc


def _reject_constant(token: str) -> float:
    raise ValueError(f"non-finite number {token} is not allowed on the wire")


def _parse_object(line: str, what: str) -> dict:
    try:
        doc = json.loads(line, parse_constant=_reject_constant)
    except ValueError as exc:
        raise MalformedLineError(f"{what} line is not valid JSON ({exc}): {line!r}") from exc
    if not isinstance(doc, dict):
        raise MalformedLineError(f"{what} line is not a JSON object: {line!r}")
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


_EOF = object()


class BackendHandle:
    """A live child process plus the reader thread draining its stdout.

    One request may be in flight at a time per handle; concurrency comes from
    pooling handles, not from pipelining on one. After any protocol error the
    handle is dead and must be closed and replaced.
    """

    def __init__(self, process: subprocess.Popen, command: list[str], request_timeout: float):
        self.process = process
        self.command = command
        self.request_timeout = request_timeout
        self.parallel_safe = False
        self._lines: queue.Queue = queue.Queue()
        self._dead = False
        self._reader = threading.Thread(target=self._drain_stdout, daemon=True)
        self._reader.start()
        self._stderr = threading.Thread(target=self._drain_stderr, daemon=True)
        self._stderr.start()

    def _drain_stdout(self) -> None:
        try:
            for line in self.process.stdout:
                self._lines.put(line)
        except ValueError:
            pass  # pipe closed under the reader
        finally:
            self._lines.put(_EOF)

    def _drain_stderr(self) -> None:
        try:
            for line in self.process.stderr:
                text = line.rstrip()
                if text:
                    logger.debug("backend %s stderr: %s", self.command[0], text)
        except ValueError:
            pass

    def read_line(self, timeout: float) -> str:
        if self._dead:
            raise BackendExitedError(f"backend {self.command[0]} is already dead")
        try:
            item = self._lines.get(timeout=timeout)
        except queue.Empty:
            self._dead = True
            raise ResponseTimeoutError(
                f"backend {self.command[0]} produced no line within {timeout:.1f}s"
            ) from None
        if item is _EOF:
            self._dead = True
            code = self.process.poll()
            raise BackendExitedError(
                f"backend {self.command[0]} closed stdout (exit code {code})"
            )
        return item

    def write_line(self, line: str) -> None:
        if self._dead or self.process.poll() is not None:
            self._dead = True
            raise BackendExitedError(f"backend {self.command[0]} is not running")
        try:
            self.process.stdin.write(line + "\n")
            self.process.stdin.flush()
        except (BrokenPipeError, OSError) as exc:
            self._dead = True
            raise BackendExitedError(f"backend {self.command[0]} pipe broke: {exc}") from exc

    def close(self) -> None:
        self._dead = True
        try:
            if self.process.stdin and not self.process.stdin.closed:
                self.process.stdin.close()
        except OSError:
            pass
        try:
            self.process.wait(timeout=5.0)
        except subprocess.TimeoutExpired:
            self.process.kill()
            self.process.wait()


def spawn_backend(
    command: list[str],
    handshake_timeout: float = 30.0,
    request_timeout: float = 300.0,
) -> BackendHandle:
    """Start a child evaluator and complete the handshake.

    Raises :class:`HandshakeError` when the child fails to start, announces
    an unsupported protocol version, or stays silent past the timeout.
    """
    try:
        process = subprocess.Popen(
            command,
            stdin=subprocess.PIPE,
            stdout=subprocess.PIPE,
            stderr=subprocess.PIPE,
            text=True,
            encoding="utf-8",
            bufsize=1,
        )
    except OSError as exc:
        raise HandshakeError(f"could not start backend {command!r}: {exc}") from exc
    handle = BackendHandle(process, command, request_timeout)
    try:
        line = handle.read_line(timeout=handshake_timeout)
        handshake = Handshake.from_line(line)
    except ProtocolError as exc:
        handle.close()
        raise HandshakeError(f"handshake with {command[0]} failed: {exc}") from exc
    if handshake.protocol != PROTOCOL_VERSION:
        handle.close()
        raise HandshakeError(
            f"backend {command[0]} speaks protocol {handshake.protocol!r}, "
            f"need {PROTOCOL_VERSION!r}"
        )
    handle.parallel_safe = handshake.parallel_safe
    logger.info(
        "backend %s ready (protocol %s, parallel_safe=%s)",
        command[0],
        handshake.protocol,
        handshake.parallel_safe,
    )
    return handle


def roundtrip(handle: BackendHandle, request: WireRequest) -> WireResponse:
    """Send one request and block for its reply.

    A reply whose id does not match is a protocol violation, not a soft
    error: the stream is desynchronized and the handle must be retired.
    """
    handle.write_line(request.to_line())
    line = handle.read_line(timeout=handle.request_timeout)
    response = WireResponse.from_line(line)
    if response.id != request.id:
        handle._dead = True
        raise MalformedLineError(
            f"response id {response.id!r} does not match request id {request.id!r}"
        )
    return response
