"""Experiment runner: config file handling, per-run seeding, artifacts.

One experiment = ``repeats`` independent optimization runs whose seeds are
derived from a single master seed. Each run's archive is written atomically
and is byte-stable across re-executions; everything wall-clock related is
quarantined in the manifest so archive determinism can be checked with a
plain file compare.
"""

from __future__ import annotations

import dataclasses
import json
import logging
import os
import shlex
import time
from dataclasses import dataclass, field
from datetime import datetime, timezone
from hashlib import sha256
from pathlib import Path

from .archive import save_archive
from .evaluation import Backend, BackendError, ExternalBackend
from .nsga2 import (
    MODE_PARETO,
    MODE_WEIGHTED,
    NsgaConfig,
    RunArchive,
    ScalingWeights,
    evolve,
)
from .protocol import ProtocolError
from .space import SearchSpace, SpaceError, default_space, load_space
from .surrogate import SurrogateBackend, SurrogateConfig

logger = logging.getLogger(__name__)

MANIFEST_SCHEMA = "pareto-tuner/manifest/1"
BACKEND_ENV_VAR = "PARETO_TUNER_BACKEND"

EVALUATOR_SURROGATE = "surrogate"
EVALUATOR_EXTERNAL = "external"

DEFAULT_BASE_PROMPT = "two people and a bus"


class ConfigError(ValueError):
    """The experiment configuration is invalid or unreadable."""


class EvaluatorError(RuntimeError):
    """The evaluator failed: spawn failure or runs flagged incomplete."""


@dataclass
class ExperimentConfig:
    """Everything one experiment needs; defaults give the reference setup."""

    base_prompt: str = DEFAULT_BASE_PROMPT
    mode: str = MODE_PARETO
    weights: ScalingWeights = field(default_factory=ScalingWeights)
    population_size: int = 25
    generations: int = 50
    mutation_rate: float = 0.2
    crossover_rate: float = 0.2
    repeats: int = 15
    master_seed: int = 0
    evaluator: str = EVALUATOR_SURROGATE
    backend_command: tuple[str, ...] = ()
    surrogate: SurrogateConfig = field(default_factory=SurrogateConfig)
    space_file: str | None = None
    ref_quality_loss: float = 1.0
    ref_time_ms: float = 50000.0
    parallelism: int = 1
    retries: int = 1
    output_dir: str = "runs"

    def __post_init__(self) -> None:
        if self.repeats < 1:
            raise ConfigError("repeats must be >= 1")
        if self.parallelism < 1:
            raise ConfigError("parallelism must be >= 1")
        if self.retries < 0:
            raise ConfigError("retries must be >= 0")
        if self.evaluator not in (EVALUATOR_SURROGATE, EVALUATOR_EXTERNAL):
            raise ConfigError(
                f"evaluator must be {EVALUATOR_SURROGATE!r} or {EVALUATOR_EXTERNAL!r}, "
                f"got {self.evaluator!r}"
            )
        if self.evaluator == EVALUATOR_EXTERNAL and not self.backend_command:
            raise ConfigError("external evaluator requires backend_command")
        try:
            self.nsga_config(run_seed=0)
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc

    def nsga_config(self, run_seed: int) -> NsgaConfig:
        return NsgaConfig(
            population_size=self.population_size,
            generations=self.generations,
            mutation_rate=self.mutation_rate,
            crossover_rate=self.crossover_rate,
            weights=self.weights,
            mode=self.mode,
            master_seed=run_seed,
        )

    @property
    def ref_point(self) -> tuple[float, float]:
        return (self.ref_quality_loss, self.ref_time_ms)


_CONFIG_KEYS = {
    "base_prompt",
    "mode",
    "weights",
    "population_size",
    "generations",
    "mutation_rate",
    "crossover_rate",
    "repeats",
    "master_seed",
    "evaluator",
    "backend_command",
    "surrogate",
    "space_file",
    "ref_quality_loss",
    "ref_time_ms",
    "parallelism",
    "retries",
    "output_dir",
}


def config_from_dict(doc: dict) -> ExperimentConfig:
    if not isinstance(doc, dict):
        raise ConfigError("config must be a JSON object")
    unknown = sorted(set(doc) - _CONFIG_KEYS)
    if unknown:
        raise ConfigError(f"unknown config keys: {unknown}")
    kwargs: dict = {k: v for k, v in doc.items() if k not in ("weights", "surrogate", "backend_command")}
    if "weights" in doc:
        w = doc["weights"]
        if not isinstance(w, dict) or set(w) - {"w_quality", "w_time"}:
            raise ConfigError("weights must be an object with w_quality and w_time")
        kwargs["weights"] = ScalingWeights(
            w_quality=float(w.get("w_quality", 0.001)), w_time=float(w.get("w_time", -1000.0))
        )
    if "surrogate" in doc:
        s = doc["surrogate"]
        if not isinstance(s, dict):
            raise ConfigError("surrogate must be an object of constant overrides")
        valid = {f.name for f in dataclasses.fields(SurrogateConfig)}
        unknown = sorted(set(s) - valid)
        if unknown:
            raise ConfigError(f"unknown surrogate constants: {unknown}")
        try:
            kwargs["surrogate"] = SurrogateConfig(**s)
        except ValueError as exc:
            raise ConfigError(f"bad surrogate constants: {exc}") from exc
    if "backend_command" in doc:
        cmd = doc["backend_command"]
        if isinstance(cmd, str):
            kwargs["backend_command"] = tuple(shlex.split(cmd))
        elif isinstance(cmd, list) and all(isinstance(p, str) for p in cmd):
            kwargs["backend_command"] = tuple(cmd)
        else:
            raise ConfigError("backend_command must be a string or list of strings")
    try:
        return ExperimentConfig(**kwargs)
    except TypeError as exc:
        raise ConfigError(str(exc)) from exc


def config_to_dict(config: ExperimentConfig) -> dict:
    doc = dataclasses.asdict(config)
    doc["weights"] = {"w_quality": config.weights.w_quality, "w_time": config.weights.w_time}
    doc["surrogate"] = dataclasses.asdict(config.surrogate)
    doc["backend_command"] = list(config.backend_command)
    return doc


def load_config(path: str | Path) -> ExperimentConfig:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config {path} is not valid JSON: {exc}") from exc
    return config_from_dict(doc)


def run_seed(master_seed: int, index: int) -> int:
    """Stable 63-bit per-run seed; independent of `repeats`."""
    digest = sha256(f"run|{master_seed}|{index}".encode()).digest()
    return int.from_bytes(digest[:8], "big") >> 1


def resolve_space(config: ExperimentConfig) -> SearchSpace:
    if config.space_file is None:
        return default_space()
    try:
        return load_space(Path(config.space_file).read_text(encoding="utf-8"))
    except OSError as exc:
        raise ConfigError(f"cannot read space file {config.space_file}: {exc}") from exc
    except (SpaceError, json.JSONDecodeError) as exc:
        raise ConfigError(f"bad space file {config.space_file}: {exc}") from exc


def make_backend(config: ExperimentConfig, space: SearchSpace) -> Backend:
    """Build the evaluator; PARETO_TUNER_BACKEND forces an external command."""
    override = os.environ.get(BACKEND_ENV_VAR)
    if override:
        command = shlex.split(override)
        logger.info("%s set; using external backend %s", BACKEND_ENV_VAR, command)
        return ExternalBackend(command, space, max_processes=config.parallelism)
    if config.evaluator == EVALUATOR_SURROGATE:
        return SurrogateBackend(config.surrogate, space=space)
    return ExternalBackend(list(config.backend_command), space, max_processes=config.parallelism)


@dataclass(frozen=True)
class RunOutcome:
    index: int
    seed: int
    path: Path
    records: int
    incomplete: bool
    error: str | None


@dataclass(frozen=True)
class ExperimentResult:
    output_dir: Path
    manifest_path: Path
    runs: tuple[RunOutcome, ...]
    archives: tuple[RunArchive, ...]

    @property
    def any_incomplete(self) -> bool:
        return any(run.incomplete for run in self.runs)


def _utc_stamp() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="seconds")


def run_experiment(config: ExperimentConfig, out_dir: str | Path | None = None) -> ExperimentResult:
    """Execute all repeats, write archives plus the manifest.

    Archives land as ``run-XXX.jsonl``; the manifest carries config, seeds,
    and all timing. Raises :class:`EvaluatorError` when a backend cannot be
    spawned or any run ends incomplete (after persisting what exists, so
    partial results are never lost).
    """
    out = Path(out_dir) if out_dir is not None else Path(config.output_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise ConfigError(f"cannot create output directory {out}: {exc}") from exc
    space = resolve_space(config)
    try:
        backend = make_backend(config, space)
    except (ProtocolError, BackendError, ValueError, OSError) as exc:
        raise EvaluatorError(f"cannot start evaluator: {exc}") from exc

    outcomes: list[RunOutcome] = []
    archives: list[RunArchive] = []
    manifest_runs: list[dict] = []
    started = _utc_stamp()
    try:
        for index in range(config.repeats):
            seed = run_seed(config.master_seed, index)
            run_started = _utc_stamp()
            t0 = time.monotonic()
            try:
                archive = evolve(
                    space,
                    backend,
                    config.nsga_config(seed),
                    base_prompt=config.base_prompt,
                    parallelism=config.parallelism,
                    retries=config.retries,
                    ref_point=config.ref_point,
                )
            except (ProtocolError, BackendError) as exc:
                raise EvaluatorError(f"run {index} failed to evaluate: {exc}") from exc
            duration = time.monotonic() - t0
            path = out / f"run-{index:03d}.jsonl"
            save_archive(archive, path)
            outcomes.append(
                RunOutcome(
                    index=index,
                    seed=seed,
                    path=path,
                    records=len(archive.records),
                    incomplete=archive.incomplete,
                    error=archive.error,
                )
            )
            archives.append(archive)
            manifest_runs.append(
                {
                    "index": index,
                    "seed": seed,
                    "file": path.name,
                    "records": len(archive.records),
                    "incomplete": archive.incomplete,
                    "error": archive.error,
                    "started": run_started,
                    "duration_s": round(duration, 3),
                }
            )
            logger.info(
                "run %d/%d done: %d records, %.1fs%s",
                index + 1,
                config.repeats,
                len(archive.records),
                duration,
                " (INCOMPLETE)" if archive.incomplete else "",
            )
    finally:
        backend.close()
        manifest = {
            "schema": MANIFEST_SCHEMA,
            "config": config_to_dict(config),
            "started": started,
            "finished": _utc_stamp(),
            "runs": manifest_runs,
        }
        manifest_path = out / "manifest.json"
        tmp = manifest_path.with_suffix(".json.tmp")
        tmp.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8")
        os.replace(tmp, manifest_path)

    result = ExperimentResult(
        output_dir=out,
        manifest_path=manifest_path,
        runs=tuple(outcomes),
        archives=tuple(archives),
    )
    if result.any_incomplete:
        failed = [run.index for run in result.runs if run.incomplete]
        raise EvaluatorError(f"runs {failed} ended incomplete; archives kept in {out}")
    return result
