import json

import pytest

from pareto_tuner.archive import (
    ArchiveFormatError,
    archive_lines,
    config_from_dict,
    config_to_dict,
    load_archive,
    save_archive,
)
from pareto_tuner.nsga2 import MODE_WEIGHTED, NsgaConfig, ScalingWeights, evolve
from pareto_tuner.space import default_space
from pareto_tuner.surrogate import SurrogateBackend


@pytest.fixture(scope="module")
def run_archive():
    space = default_space()
    config = NsgaConfig(population_size=8, generations=5, master_seed=33)
    return evolve(space, SurrogateBackend(), config)


def test_config_dict_round_trip():
    config = NsgaConfig(
        population_size=7,
        generations=3,
        mutation_rate=0.4,
        crossover_rate=0.1,
        weights=ScalingWeights(0.5, -2.0),
        mode=MODE_WEIGHTED,
        master_seed=99,
    )
    assert config_from_dict(config_to_dict(config)) == config


def test_save_load_round_trip(run_archive, tmp_path):
    path = tmp_path / "run.jsonl"
    save_archive(run_archive, path)
    loaded = load_archive(path)

    assert loaded.config == run_archive.config
    assert loaded.space == run_archive.space
    assert loaded.ref_point == run_archive.ref_point
    assert loaded.incomplete == run_archive.incomplete
    assert loaded.error == run_archive.error
    assert len(loaded.records) == len(run_archive.records)
    for got, want in zip(loaded.records, run_archive.records):
        assert got.generation == want.generation
        assert got.candidate == want.candidate
        assert got.time_ms == want.time_ms
        assert got.quality == want.quality
        assert got.evaluator_id == want.evaluator_id
    assert [i.candidate for i in loaded.final_front] == [
        i.candidate for i in run_archive.final_front
    ]


def test_resave_is_byte_identical(run_archive, tmp_path):
    first = tmp_path / "a.jsonl"
    second = tmp_path / "b.jsonl"
    save_archive(run_archive, first)
    save_archive(load_archive(first), second)
    assert first.read_bytes() == second.read_bytes()


def test_lines_have_no_wall_clock(run_archive):
    for line in archive_lines(run_archive):
        assert "wall_clock" not in line


def test_empty_file_rejected(tmp_path):
    path = tmp_path / "empty.jsonl"
    path.write_text("", encoding="utf-8")
    with pytest.raises(ArchiveFormatError) as excinfo:
        load_archive(path)
    assert excinfo.value.line_no == 1
    assert "empty.jsonl" in str(excinfo.value)


def test_bad_json_names_file_and_line(run_archive, tmp_path):
    path = tmp_path / "broken.jsonl"
    lines = archive_lines(run_archive)
    lines[3] = "{ not json"
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    with pytest.raises(ArchiveFormatError) as excinfo:
        load_archive(path)
    assert excinfo.value.line_no == 4
    assert "broken.jsonl" in str(excinfo.value)


def test_wrong_schema_rejected(run_archive, tmp_path):
    path = tmp_path / "schema.jsonl"
    lines = archive_lines(run_archive)
    header = json.loads(lines[0])
    header["schema"] = "pareto-tuner/archive/999"
    lines[0] = json.dumps(header, sort_keys=True, separators=(",", ":"))
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    with pytest.raises(ArchiveFormatError) as excinfo:
        load_archive(path)
    assert excinfo.value.line_no == 1


def test_out_of_bounds_record_rejected(run_archive, tmp_path):
    path = tmp_path / "bounds.jsonl"
    lines = archive_lines(run_archive)
    record = json.loads(lines[1])
    record["genes"]["inference_steps"] = 4000
    lines[1] = json.dumps(record, sort_keys=True, separators=(",", ":"))
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    with pytest.raises(ArchiveFormatError) as excinfo:
        load_archive(path)
    assert excinfo.value.line_no == 2


def test_blank_interior_line_rejected(run_archive, tmp_path):
    path = tmp_path / "blank.jsonl"
    lines = archive_lines(run_archive)
    lines.insert(2, "")
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    with pytest.raises(ArchiveFormatError) as excinfo:
        load_archive(path)
    assert excinfo.value.line_no == 3


def test_missing_file_raises_oserror(tmp_path):
    with pytest.raises(OSError):
        load_archive(tmp_path / "nope.jsonl")
