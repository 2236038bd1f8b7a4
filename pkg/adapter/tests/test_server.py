"""Serve-loop behavior with the stub engine, in-process and as a subprocess."""

import io
import json
import subprocess
import sys
from pathlib import Path

import pytest

from sdyolo_adapter.engine import StubEngine
from sdyolo_adapter.server import AdapterConfig, handle_request, main, serve
from sdyolo_adapter.wire import Request, parse_handshake, parse_response

CORPUS = Path(__file__).resolve().parents[2] / "protocol_corpus.jsonl"


def make_request(idx=0, **overrides):
    fields = dict(
        id=f"req-{idx}",
        steps=10,
        guidance_scale=7.5,
        guidance_rescale=0.5,
        seed=17,
        positive_prompt="two people and a bus, photograph",
        negative_prompt="sketch",
        base_prompt="two people and a bus",
    )
    fields.update(overrides)
    return Request(**fields)


def run_serve(requests, engine=None, config=None):
    engine = engine if engine is not None else StubEngine()
    config = config if config is not None else AdapterConfig()
    stdin = io.StringIO("".join(r.to_line() + "\n" for r in requests))
    stdout = io.StringIO()
    code = serve(engine, config, stdin, stdout)
    lines = stdout.getvalue().splitlines()
    return code, lines


def test_handshake_comes_first_and_declares_serial():
    code, lines = run_serve([])
    assert code == 0
    assert len(lines) == 1
    shake = parse_handshake(lines[0])
    assert shake.protocol == "1"
    assert shake.parallel_safe is False


def test_one_response_per_request_in_order():
    requests = [make_request(i, seed=100 + i) for i in range(5)]
    code, lines = run_serve(requests)
    assert code == 0
    assert len(lines) == 1 + len(requests)
    for request, line in zip(requests, lines[1:]):
        response = parse_response(line)
        assert response.id == request.id
        assert response.error is None
        assert 0.0 <= response.quality <= 1.0
        assert response.time_ms > 0.0


def test_identical_requests_get_identical_answers():
    request = make_request(0)
    twin = make_request(0)
    _, lines = run_serve([request, twin])
    first = parse_response(lines[1])
    second = parse_response(lines[2])
    assert first.quality == second.quality
    assert first.time_ms == second.time_ms


def test_different_seeds_change_quality():
    _, lines = run_serve([make_request(0, seed=1), make_request(1, seed=2)])
    assert parse_response(lines[1]).quality != parse_response(lines[2]).quality


def test_quality_zero_when_no_detection_matches_the_base_prompt():
    # the stub always reports one unrelated detection; it must earn nothing
    request = make_request(0, positive_prompt="a watercolor landscape", base_prompt="a zebra")
    _, lines = run_serve([request])
    assert parse_response(lines[1]).quality == 0.0


def test_whitelist_overrides_prompt_extraction():
    request = make_request(0, positive_prompt="a watercolor landscape", base_prompt="")
    config = AdapterConfig(match_classes=("kite",))
    _, lines = run_serve([request], config=config)
    # the stub's unrelated detection is a kite, so the whitelist credits it
    assert parse_response(lines[1]).quality > 0.0


def test_engine_failure_becomes_error_response_and_serving_continues():
    class FlakyEngine(StubEngine):
        def generate(self, request):
            if request.id == "req-0":
                raise RuntimeError("CUDA out of memory")
            return super().generate(request)

    code, lines = run_serve([make_request(0), make_request(1)], engine=FlakyEngine())
    assert code == 0
    first = parse_response(lines[1])
    assert first.error is not None
    assert "CUDA out of memory" in first.error
    second = parse_response(lines[2])
    assert second.error is None


def test_overrunning_the_timeout_becomes_an_error_response():
    config = AdapterConfig(request_timeout_s=0.01)
    code, lines = run_serve([make_request(0)], engine=StubEngine(delay_s=0.05), config=config)
    assert code == 0
    response = parse_response(lines[1])
    assert response.error is not None
    assert "timed out" in response.error


def test_unparseable_request_line_is_a_desync_exit():
    engine = StubEngine()
    config = AdapterConfig()
    stdin = io.StringIO(make_request(0).to_line() + "\n" + "{broken\n")
    stdout = io.StringIO()
    code = serve(engine, config, stdin, stdout)
    assert code == 1
    lines = stdout.getvalue().splitlines()
    assert len(lines) == 2  # handshake plus the one good response, nothing for the bad line


def test_handle_request_reports_measured_fields():
    response = handle_request(make_request(0), StubEngine(), AdapterConfig())
    assert response.error is None
    assert response.time_ms > 900.0
    assert 0.0 <= response.quality <= 1.0


def test_config_rejects_nonpositive_timeout():
    with pytest.raises(ValueError):
        AdapterConfig(request_timeout_s=0.0)
    assert main(["--timeout", "0", "--engine", "stub"]) == 2


def test_stub_subprocess_speaks_the_protocol():
    process = subprocess.Popen(
        [sys.executable, "-m", "sdyolo_adapter", "--engine", "stub"],
        stdin=subprocess.PIPE,
        stdout=subprocess.PIPE,
        stderr=subprocess.PIPE,
        text=True,
    )
    try:
        shake = parse_handshake(process.stdout.readline())
        assert shake.parallel_safe is False
        for i in range(3):
            process.stdin.write(make_request(i).to_line() + "\n")
            process.stdin.flush()
            response = parse_response(process.stdout.readline())
            assert response.id == f"req-{i}"
            assert response.error is None
        process.stdin.close()
        assert process.wait(timeout=10) == 0
    finally:
        if process.poll() is None:
            process.kill()
            process.wait()


def test_stub_subprocess_answers_are_reproducible():
    def one_run():
        result = subprocess.run(
            [sys.executable, "-m", "sdyolo_adapter", "--engine", "stub"],
            input=make_request(0).to_line() + "\n",
            capture_output=True,
            text=True,
            timeout=30,
        )
        assert result.returncode == 0
        return result.stdout

    assert one_run() == one_run()


def test_corpus_valid_requests_are_servable():
    # every wire-valid request must produce a wire-valid response, no hangs
    corpus = []
    for raw in CORPUS.read_text(encoding="utf-8").splitlines():
        entry = json.loads(raw)
        if entry["type"] == "request" and entry["valid"]:
            corpus.append(entry["line"])
    assert corpus
    stdin = io.StringIO("".join(line + "\n" for line in corpus))
    stdout = io.StringIO()
    code = serve(StubEngine(), AdapterConfig(), stdin, stdout)
    assert code == 0
    lines = stdout.getvalue().splitlines()
    assert len(lines) == 1 + len(corpus)
    for line in lines[1:]:
        response = parse_response(line)
        assert response.error is None
