"""Evaluator abstraction: request/response types, caching, retries, dispatch.

Decouples the optimizer from whatever computes the objectives. Backends are
small adapter objects; ``evaluate_batch`` owns deduplication, the worker
pool, retry policy, and order restoration, so callers always get one result
per request in request order regardless of parallelism.
"""

from __future__ import annotations

import hashlib
import json
import logging
import math
import os
import queue
import threading
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from datetime import datetime, timezone
from pathlib import Path

from .space import Candidate

logger = logging.getLogger(__name__)

CACHE_ENTRY_SCHEMA = "pareto-tuner/cache-entry/1"


class BackendError(RuntimeError):
    """A backend failed to produce a result for a request."""


@dataclass(frozen=True)
class EvalRequest:
    """One unit of work: a candidate plus its rendered prompts."""

    id: str
    candidate: Candidate
    base_prompt: str = ""
    positive_prompt: str = ""
    negative_prompt: str = ""


@dataclass(frozen=True)
class EvalResult:
    """Either both objectives or an error message, never a mix."""

    id: str
    time_ms: float | None = None
    quality: float | None = None
    error: str | None = None

    def __post_init__(self) -> None:
        has_values = self.time_ms is not None and self.quality is not None
        if has_values == (self.error is not None):
            raise ValueError("result must carry exactly one of (time_ms & quality) or error")
        if has_values:
            if not (math.isfinite(self.time_ms) and self.time_ms >= 0):
                raise ValueError(f"time_ms must be finite and >= 0, got {self.time_ms}")
            if not (math.isfinite(self.quality) and 0.0 <= self.quality <= 1.0):
                raise ValueError(f"quality must be in [0, 1], got {self.quality}")

    @property
    def ok(self) -> bool:
        return self.error is None

    def with_id(self, request_id: str) -> "EvalResult":
        return EvalResult(
            id=request_id, time_ms=self.time_ms, quality=self.quality, error=self.error
        )


@dataclass(frozen=True)
class EvaluationRecord:
    """Immutable audit row: one backend evaluation within a run."""

    generation: int
    candidate: Candidate
    time_ms: float
    quality: float
    evaluator_id: str
    wall_clock: datetime | None = None


class Backend:
    """Adapter interface a result source must implement."""

    evaluator_id: str = "backend"
    parallel_safe: bool = False

    def evaluate(self, request: EvalRequest) -> EvalResult:
        raise NotImplementedError

    def close(self) -> None:
        pass


class FunctionBackend(Backend):
    """Wraps a pure ``candidate -> (time_ms, quality)`` function (test problems)."""

    parallel_safe = True

    def __init__(self, fn, evaluator_id: str = "function"):
        self._fn = fn
        self.evaluator_id = evaluator_id

    def evaluate(self, request: EvalRequest) -> EvalResult:
        time_ms, quality = self._fn(request.candidate)
        return EvalResult(id=request.id, time_ms=time_ms, quality=quality)


def cache_key(candidate: Candidate) -> str:
    """Canonical, process-stable key for a candidate.

    Genes are encoded positionally with a type tag; reals are rendered with 9
    significant digits, so two candidates whose reals agree at that precision
    share a key (and with it any cached evaluation).
    """
    parts: list[str] = []
    for gene in candidate.genes:
        if isinstance(gene, tuple):
            parts.append("m" + "".join("1" if bit else "0" for bit in gene))
        elif isinstance(gene, bool):
            raise TypeError("bare booleans are not valid genes")
        elif isinstance(gene, int):
            parts.append(f"i{gene}")
        else:
            parts.append(f"r{gene:.9g}")
    return "|".join(parts)


class EvalCache:
    """Candidate-keyed result store: in-memory dict plus optional disk spill.

    The disk format is one JSON file per key under ``directory``, named by the
    key's SHA-256 hex digest, holding ``{"schema", "key", "time_ms",
    "quality", "evaluator_id"}``. Only successful results are stored.
    """

    def __init__(self, directory: str | Path | None = None):
        self._mem: dict[str, EvalResult] = {}
        self._lock = threading.Lock()
        self._dir = Path(directory) if directory is not None else None
        if self._dir is not None:
            self._dir.mkdir(parents=True, exist_ok=True)

    def _path(self, key: str) -> Path:
        assert self._dir is not None
        digest = hashlib.sha256(key.encode("utf-8")).hexdigest()
        return self._dir / f"{digest}.json"

    def get(self, key: str) -> EvalResult | None:
        with self._lock:
            hit = self._mem.get(key)
        if hit is not None:
            return hit
        if self._dir is None:
            return None
        path = self._path(key)
        if not path.exists():
            return None
        try:
            doc = json.loads(path.read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError):
            logger.warning("ignoring unreadable cache entry %s", path)
            return None
        if doc.get("schema") != CACHE_ENTRY_SCHEMA or doc.get("key") != key:
            return None
        result = EvalResult(id="", time_ms=doc["time_ms"], quality=doc["quality"])
        with self._lock:
            self._mem[key] = result
        return result

    def put(self, key: str, result: EvalResult, evaluator_id: str = "") -> None:
        if not result.ok:
            return
        stored = result.with_id("")
        with self._lock:
            self._mem[key] = stored
        if self._dir is not None:
            doc = {
                "schema": CACHE_ENTRY_SCHEMA,
                "key": key,
                "time_ms": stored.time_ms,
                "quality": stored.quality,
                "evaluator_id": evaluator_id,
            }
            path = self._path(key)
            tmp = path.with_suffix(".tmp")
            tmp.write_text(json.dumps(doc, sort_keys=True) + "\n", encoding="utf-8")
            os.replace(tmp, path)

    def __len__(self) -> int:
        with self._lock:
            return len(self._mem)


def _attempt(backend: Backend, request: EvalRequest, retries: int) -> EvalResult:
    last_error = "backend returned no result"
    for _ in range(retries + 1):
        try:
            result = backend.evaluate(request)
        except Exception as exc:
            last_error = f"{type(exc).__name__}: {exc}"
            logger.warning("evaluation of %s failed: %s", request.id, last_error)
            continue
        if result.ok:
            return result.with_id(request.id)
        last_error = result.error or "unknown backend error"
    return EvalResult(id=request.id, error=last_error)


def evaluate_batch(
    requests: list[EvalRequest],
    backend: Backend,
    parallelism: int = 1,
    retries: int = 1,
    cache: EvalCache | None = None,
) -> list[EvalResult]:
    """Evaluate a batch, returning one result per request in request order.

    Duplicate candidates (by :func:`cache_key`) are dispatched once; failures
    are retried up to ``retries`` extra times and then surfaced as error
    results. Successful results populate ``cache``.
    """
    if parallelism < 1:
        raise ValueError("parallelism must be >= 1")
    if retries < 0:
        raise ValueError("retries must be >= 0")
    results: list[EvalResult | None] = [None] * len(requests)

    pending: dict[str, list[int]] = {}
    for i, request in enumerate(requests):
        key = cache_key(request.candidate)
        hit = cache.get(key) if cache is not None else None
        if hit is not None:
            results[i] = hit.with_id(request.id)
        else:
            pending.setdefault(key, []).append(i)

    if pending:
        keys = list(pending.keys())
        lead_requests = [requests[pending[key][0]] for key in keys]
        if parallelism == 1 or len(lead_requests) == 1:
            lead_results = [_attempt(backend, req, retries) for req in lead_requests]
        else:
            with ThreadPoolExecutor(max_workers=parallelism) as pool:
                lead_results = list(
                    pool.map(lambda req: _attempt(backend, req, retries), lead_requests)
                )
        for key, lead in zip(keys, lead_results):
            if lead.ok and cache is not None:
                cache.put(key, lead, evaluator_id=backend.evaluator_id)
            for i in pending[key]:
                results[i] = lead.with_id(requests[i].id)

    assert all(r is not None for r in results)
    return results  # type: ignore[return-value]


def utc_now() -> datetime:
    return datetime.now(timezone.utc)


class ExternalBackend(Backend):
    """Pool of child-process evaluators speaking the line protocol.

    Children are spawned lazily up to ``max_processes``; each handle serves
    one request at a time, so parallelism across requests comes from the pool
    width. A handle that errors is discarded and replaced on the next lease.
    """

    parallel_safe = True  # the pool serializes per child internally

    def __init__(
        self,
        command: list[str],
        space,
        max_processes: int = 1,
        handshake_timeout: float = 30.0,
        request_timeout: float = 300.0,
    ):
        from . import protocol

        if not command:
            raise ValueError("external backend command is empty")
        self._protocol = protocol
        self.command = list(command)
        self.space = space
        self.evaluator_id = f"external:{os.path.basename(command[0])}"
        self.handshake_timeout = handshake_timeout
        self.request_timeout = request_timeout
        self._max = max_processes
        self._idle: queue.Queue = queue.Queue()
        self._spawned = 0
        self._lock = threading.Lock()
        self._closed = False
        names = {p.name for p in space.params}
        missing = [
            name
            for name in (
                "inference_steps",
                "guidance_scale",
                "guidance_rescale",
                "seed",
            )
            if name not in names
        ]
        if missing:
            raise ValueError(f"space lacks params required by the wire protocol: {missing}")

    def _lease(self):
        try:
            return self._idle.get_nowait()
        except queue.Empty:
            pass
        with self._lock:
            if self._closed:
                raise BackendError("backend closed")
            if self._spawned < self._max:
                self._spawned += 1
                try:
                    handle = self._protocol.spawn_backend(
                        self.command,
                        handshake_timeout=self.handshake_timeout,
                        request_timeout=self.request_timeout,
                    )
                except Exception:
                    self._spawned -= 1
                    raise
                if not handle.parallel_safe and self._max > 1:
                    logger.info(
                        "backend %s declared parallel_safe=false; capping pool at 1 process",
                        self.command[0],
                    )
                    self._max = 1
                return handle
        # Pool exhausted: block until a worker returns its handle.
        return self._idle.get()

    def evaluate(self, request: EvalRequest) -> EvalResult:
        values = self.space.param_values(request.candidate)
        wire_request = self._protocol.WireRequest(
            id=request.id,
            steps=int(values["inference_steps"]),
            guidance_scale=float(values["guidance_scale"]),
            guidance_rescale=float(values["guidance_rescale"]),
            seed=int(values["seed"]),
            positive_prompt=request.positive_prompt,
            negative_prompt=request.negative_prompt,
            base_prompt=request.base_prompt,
        )
        handle = self._lease()
        try:
            response = self._protocol.roundtrip(handle, wire_request)
        except self._protocol.ProtocolError as exc:
            with self._lock:
                self._spawned -= 1
            handle.close()
            raise BackendError(str(exc)) from exc
        self._idle.put(handle)
        if response.error is not None:
            return EvalResult(id=request.id, error=response.error)
        try:
            return EvalResult(id=request.id, time_ms=response.time_ms, quality=response.quality)
        except ValueError as exc:
            return EvalResult(id=request.id, error=f"backend returned invalid objectives: {exc}")

    def close(self) -> None:
        with self._lock:
            self._closed = True
        while True:
            try:
                handle = self._idle.get_nowait()
            except queue.Empty:
                break
            handle.close()
