"""Run-archive files: one JSON header line, then one JSON line per record.

The header carries the run config, the search space, the hypervolume
reference point, the completion flag, and the final front. Every following
line is one evaluation record (generation, genes by name, time_ms, quality,
evaluator id). Wall-clock timestamps are deliberately absent so archives
from identical seeds are byte-identical; timing lives in the run manifest.
"""

from __future__ import annotations

import json
import os
from pathlib import Path

from .evaluation import EvaluationRecord
from .nsga2 import Individual, NsgaConfig, ObjectiveVector, RunArchive, ScalingWeights
from .space import SpaceError, candidate_from_dict, candidate_to_dict, space_from_dict, space_to_dict

ARCHIVE_SCHEMA = "pareto-tuner/archive/1"


class ArchiveFormatError(ValueError):
    """An archive file could not be parsed; message names file and line."""

    def __init__(self, path: str | Path, line_no: int, message: str):
        super().__init__(f"{path}, line {line_no}: {message}")
        self.path = str(path)
        self.line_no = line_no


def config_to_dict(config: NsgaConfig) -> dict:
    return {
        "population_size": config.population_size,
        "generations": config.generations,
        "mutation_rate": config.mutation_rate,
        "crossover_rate": config.crossover_rate,
        "weights": {"w_quality": config.weights.w_quality, "w_time": config.weights.w_time},
        "mode": config.mode,
        "master_seed": config.master_seed,
    }


def config_from_dict(doc: dict) -> NsgaConfig:
    weights = doc.get("weights", {})
    return NsgaConfig(
        population_size=int(doc["population_size"]),
        generations=int(doc["generations"]),
        mutation_rate=float(doc["mutation_rate"]),
        crossover_rate=float(doc["crossover_rate"]),
        weights=ScalingWeights(
            w_quality=float(weights["w_quality"]), w_time=float(weights["w_time"])
        ),
        mode=str(doc["mode"]),
        master_seed=int(doc["master_seed"]),
    )


def _dump_line(doc: dict) -> str:
    return json.dumps(doc, sort_keys=True, separators=(",", ":"))


def archive_lines(archive: RunArchive) -> list[str]:
    """The file's lines, header first, without trailing newlines."""
    if archive.space is None:
        raise ValueError("archive has no search space attached; cannot serialize records")
    header = {
        "schema": ARCHIVE_SCHEMA,
        "config": config_to_dict(archive.config),
        "space": space_to_dict(archive.space),
        "ref_point": list(archive.ref_point),
        "incomplete": archive.incomplete,
        "error": archive.error,
        "final_front": [
            {
                "genes": candidate_to_dict(ind.candidate, archive.space),
                "time_ms": ind.objectives.time_ms,
                "quality": ind.objectives.quality,
            }
            for ind in archive.final_front
        ],
    }
    lines = [_dump_line(header)]
    for record in archive.records:
        lines.append(
            _dump_line(
                {
                    "generation": record.generation,
                    "genes": candidate_to_dict(record.candidate, archive.space),
                    "time_ms": record.time_ms,
                    "quality": record.quality,
                    "evaluator_id": record.evaluator_id,
                }
            )
        )
    return lines


def save_archive(archive: RunArchive, path: str | Path) -> None:
    """Write atomically (temp file + rename) with fixed newline bytes."""
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "w", encoding="utf-8", newline="\n") as fh:
        for line in archive_lines(archive):
            fh.write(line + "\n")
    os.replace(tmp, path)


def load_archive(path: str | Path) -> RunArchive:
    """Parse and validate an archive file.

    Raises :class:`ArchiveFormatError` naming the file and 1-based line on
    any malformed line, unknown schema, or out-of-space candidate.
    """
    path = Path(path)
    with open(path, "r", encoding="utf-8") as fh:
        raw_lines = fh.read().splitlines()
    if not raw_lines:
        raise ArchiveFormatError(path, 1, "file is empty, expected a header line")

    def parse(line_no: int, text: str) -> dict:
        try:
            doc = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ArchiveFormatError(path, line_no, f"invalid JSON ({exc.msg})") from exc
        if not isinstance(doc, dict):
            raise ArchiveFormatError(path, line_no, "expected a JSON object")
        return doc

    header = parse(1, raw_lines[0])
    if header.get("schema") != ARCHIVE_SCHEMA:
        raise ArchiveFormatError(path, 1, f"unsupported schema {header.get('schema')!r}")
    try:
        config = config_from_dict(header["config"])
        space = space_from_dict(header["space"])
        ref_raw = header["ref_point"]
        ref_point = (float(ref_raw[0]), float(ref_raw[1]))
        incomplete = bool(header.get("incomplete", False))
        error = header.get("error")
        front_docs = header["final_front"]
    except (KeyError, IndexError, TypeError, ValueError, SpaceError) as exc:
        raise ArchiveFormatError(path, 1, f"bad header ({exc})") from exc

    final_front = []
    try:
        for entry in front_docs:
            candidate = candidate_from_dict(entry["genes"], space)
            final_front.append(
                Individual(
                    candidate=candidate,
                    objectives=ObjectiveVector(
                        time_ms=float(entry["time_ms"]), quality=float(entry["quality"])
                    ),
                    rank=0,
                )
            )
    except (KeyError, TypeError, ValueError, SpaceError) as exc:
        raise ArchiveFormatError(path, 1, f"bad final_front entry ({exc})") from exc

    records = []
    for line_no, text in enumerate(raw_lines[1:], start=2):
        if not text.strip():
            raise ArchiveFormatError(path, line_no, "blank line inside record section")
        doc = parse(line_no, text)
        try:
            candidate = candidate_from_dict(doc["genes"], space)
            record = EvaluationRecord(
                generation=int(doc["generation"]),
                candidate=candidate,
                time_ms=float(doc["time_ms"]),
                quality=float(doc["quality"]),
                evaluator_id=str(doc["evaluator_id"]),
            )
        except (KeyError, TypeError, ValueError, SpaceError) as exc:
            raise ArchiveFormatError(path, line_no, f"bad record ({exc})") from exc
        records.append(record)

    return RunArchive(
        config=config,
        records=records,
        final_front=final_front,
        space=space,
        ref_point=ref_point,
        incomplete=incomplete,
        error=error,
    )
