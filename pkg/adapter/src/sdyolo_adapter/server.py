"""The serve loop: stdin requests in, stdout responses out.

The process answers strictly serially and says so in its handshake, which a
conforming host honors by spawning more processes instead of pipelining.
The handshake is only written once the engine (and with it both models) is
fully constructed, so the first line a host reads means "ready".

Failures split two ways. Anything wrong with one generation (the engine
raised, or the request ran past the configured timeout) becomes an error
response for that request id and the loop keeps serving. Anything wrong
with the stream itself (a line that does not parse as a request) is a
desync: there is no trusted id to answer on, so the loop logs and exits
nonzero rather than guess.
"""

from __future__ import annotations

import argparse
import logging
import sys
import time
from dataclasses import dataclass
from typing import IO, Protocol

from .engine import DiffusionDetectionEngine, EngineResult, StubEngine
from .matching import mean_matching_confidence, prompt_classes
from .wire import PROTOCOL_VERSION, Handshake, Request, Response, WireError, parse_request

logger = logging.getLogger(__name__)

DEFAULT_DIFFUSION_MODEL = "stabilityai/stable-diffusion-2-1-base"
DEFAULT_DETECTOR_MODEL = "yolov8n.pt"


class Engine(Protocol):
    class_names: tuple[str, ...]

    def generate(self, request: Request) -> EngineResult: ...


@dataclass(frozen=True)
class AdapterConfig:
    """Startup choices; models must be resolvable or the process never
    reaches its handshake."""

    diffusion_model: str = DEFAULT_DIFFUSION_MODEL
    detector_model: str = DEFAULT_DETECTOR_MODEL
    device: str = "auto"
    request_timeout_s: float = 300.0
    match_classes: tuple[str, ...] | None = None

    def __post_init__(self) -> None:
        if self.request_timeout_s <= 0:
            raise ValueError("request_timeout_s must be positive")


def handle_request(request: Request, engine: Engine, config: AdapterConfig) -> Response:
    """One request to one response; engine trouble becomes an error response."""
    matching = prompt_classes(request.base_prompt, engine.class_names, config.match_classes)
    start = time.perf_counter()
    try:
        result = engine.generate(request)
    except Exception as exc:
        logger.warning("generation failed for %s: %s", request.id, exc)
        return Response(id=request.id, error=f"generation failed: {exc}")
    elapsed_s = time.perf_counter() - start
    if elapsed_s > config.request_timeout_s:
        logger.warning("request %s overran the timeout (%.1fs)", request.id, elapsed_s)
        return Response(
            id=request.id,
            error=f"generation timed out: {elapsed_s:.1f}s exceeds {config.request_timeout_s:.1f}s",
        )
    quality = mean_matching_confidence(result.detections, matching)
    quality = min(1.0, max(0.0, quality))
    return Response(id=request.id, time_ms=result.time_ms, quality=quality)


def serve(engine: Engine, config: AdapterConfig, stdin: IO[str], stdout: IO[str]) -> int:
    """Run until stdin closes. Returns a process exit code."""
    stdout.write(Handshake(protocol=PROTOCOL_VERSION, parallel_safe=False).to_line() + "\n")
    stdout.flush()
    for line in stdin:
        try:
            request = parse_request(line)
        except WireError as exc:
            logger.error("request stream desync, exiting: %s", exc)
            return 1
        response = handle_request(request, engine, config)
        stdout.write(response.to_line() + "\n")
        stdout.flush()
        logger.info("answered %s", request.id)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="sdyolo-adapter",
        description="Image-generation evaluator backend over stdin/stdout.",
    )
    parser.add_argument("--diffusion-model", default=DEFAULT_DIFFUSION_MODEL)
    parser.add_argument("--detector-model", default=DEFAULT_DETECTOR_MODEL)
    parser.add_argument("--device", default="auto", help='"auto", "cpu", "cuda", "cuda:1", ...')
    parser.add_argument("--timeout", type=float, default=300.0, help="per-request limit, seconds")
    parser.add_argument(
        "--match-classes",
        default=None,
        help="comma-separated detector classes to score instead of extracting"
        " them from the base prompt",
    )
    parser.add_argument(
        "--engine",
        choices=["real", "stub"],
        default="real",
        help="'stub' serves deterministic fake results without loading models",
    )
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        stream=sys.stderr,
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(asctime)s %(name)s %(levelname)s %(message)s",
    )
    whitelist = None
    if args.match_classes is not None:
        whitelist = tuple(part.strip() for part in args.match_classes.split(",") if part.strip())
    try:
        config = AdapterConfig(
            diffusion_model=args.diffusion_model,
            detector_model=args.detector_model,
            device=args.device,
            request_timeout_s=args.timeout,
            match_classes=whitelist,
        )
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2

    if args.engine == "stub":
        engine: Engine = StubEngine()
    else:
        engine = DiffusionDetectionEngine(
            diffusion_model=config.diffusion_model,
            detector_model=config.detector_model,
            device=config.device,
        )
    return serve(engine, config, sys.stdin, sys.stdout)
