"""FastAPI application exposing the tuner over HTTP.

Error mapping: configuration and input problems become 400 with
``error = "config_error"``; evaluator/backend failures become 502 with
``error = "evaluator_failure"``. Long work (runs, importance) executes
synchronously in the request; the CLI is this service's primary client.
"""

from __future__ import annotations

from pathlib import Path

from fastapi import FastAPI, Request
from fastapi.exceptions import RequestValidationError
from fastapi.responses import JSONResponse

from .. import __version__
from ..archive import ArchiveFormatError, load_archive
from ..evaluation import BackendError
from ..experiment import ConfigError, EvaluatorError, config_from_dict, run_experiment
from ..importance import importance_analysis
from ..metrics import RefPoint, compare_runs
from ..nsga2 import RunArchive
from ..protocol import ProtocolError
from ..reporting import (
    comparison_summary,
    comparison_table,
    importance_chart,
    importance_group_table,
    importance_table,
)
from ..space import SpaceError, default_space, space_to_dict
from .schemas import (
    CompareRequest,
    CompareResponse,
    HealthResponse,
    ImportanceEntry,
    ImportanceRequest,
    ImportanceResponse,
    RunInfo,
    RunsRequest,
    RunsResponse,
)


def _load_archive_dir(directory: str) -> list[RunArchive]:
    path = Path(directory)
    if not path.is_dir():
        raise ConfigError(f"{directory} is not a directory")
    files = sorted(path.glob("*.jsonl"))
    if not files:
        raise ConfigError(f"no archive files (*.jsonl) in {directory}")
    return [load_archive(f) for f in files]


def create_app() -> FastAPI:
    app = FastAPI(title="pareto-tuner", version=__version__)

    def _json_error(status: int, error: str, detail: str) -> JSONResponse:
        return JSONResponse(status_code=status, content={"error": error, "detail": detail})

    @app.exception_handler(ConfigError)
    @app.exception_handler(ArchiveFormatError)
    @app.exception_handler(SpaceError)
    @app.exception_handler(ValueError)
    def _config_error(request: Request, exc: Exception) -> JSONResponse:
        return _json_error(400, "config_error", str(exc))

    @app.exception_handler(RequestValidationError)
    def _body_error(request: Request, exc: RequestValidationError) -> JSONResponse:
        return _json_error(400, "config_error", str(exc))

    @app.exception_handler(EvaluatorError)
    @app.exception_handler(BackendError)
    @app.exception_handler(ProtocolError)
    def _evaluator_error(request: Request, exc: Exception) -> JSONResponse:
        return _json_error(502, "evaluator_failure", str(exc))

    @app.get("/health", response_model=HealthResponse)
    def health() -> HealthResponse:
        return HealthResponse(status="ok", version=__version__)

    @app.get("/space/default")
    def space_default() -> dict:
        return space_to_dict(default_space())

    @app.post("/runs", response_model=RunsResponse)
    def runs(body: RunsRequest) -> RunsResponse:
        config = config_from_dict(body.config)
        result = run_experiment(config, out_dir=body.out_dir)
        return RunsResponse(
            output_dir=str(result.output_dir),
            manifest=str(result.manifest_path),
            runs=[
                RunInfo(
                    index=run.index,
                    seed=run.seed,
                    file=str(run.path),
                    records=run.records,
                    incomplete=run.incomplete,
                    error=run.error,
                )
                for run in result.runs
            ],
        )

    @app.post("/compare", response_model=CompareResponse)
    def compare(body: CompareRequest) -> CompareResponse:
        archives_a = _load_archive_dir(body.dir_a)
        archives_b = _load_archive_dir(body.dir_b)
        ref = None
        if body.ref_quality_loss is not None or body.ref_time_ms is not None:
            if body.ref_quality_loss is None or body.ref_time_ms is None:
                raise ConfigError("give both ref_quality_loss and ref_time_ms or neither")
            ref = RefPoint(body.ref_quality_loss, body.ref_time_ms)
        report = compare_runs(
            archives_a, archives_b, ref=ref, label_a=body.label_a, label_b=body.label_b
        )
        return CompareResponse(
            summary=comparison_summary(report),
            table=comparison_table(report),
            time_ratio_b_over_a=report.time_ratio_b_over_a,
            quality_ratio_a_over_b=report.quality_ratio_a_over_b,
            hv_ratio_a_over_b=report.hv_ratio_a_over_b,
            side_a={
                "label": report.side_a.label,
                "n_runs": report.side_a.n_runs,
                "best_time_ms": report.side_a.best_time_stats,
                "best_quality": report.side_a.best_quality_stats,
                "hypervolume": report.side_a.hypervolume_stats,
            },
            side_b={
                "label": report.side_b.label,
                "n_runs": report.side_b.n_runs,
                "best_time_ms": report.side_b.best_time_stats,
                "best_quality": report.side_b.best_quality_stats,
                "hypervolume": report.side_b.hypervolume_stats,
            },
        )

    @app.post("/importance", response_model=ImportanceResponse)
    def importance(body: ImportanceRequest) -> ImportanceResponse:
        archives = _load_archive_dir(body.archive_dir)
        report = importance_analysis(
            archives,
            target=body.target,
            repeats=body.repeats,
            search_budget=body.search_budget,
            base_seed=body.base_seed,
        )
        return ImportanceResponse(
            target=report.target,
            table=importance_table(report),
            groups_table=importance_group_table(report),
            chart=importance_chart(report),
            features=[
                ImportanceEntry(
                    name=name, mean=float(report.mean[i]), spread=float(report.spread[i])
                )
                for i, name in enumerate(report.feature_names)
            ],
            groups=[
                ImportanceEntry(
                    name=name,
                    mean=float(report.group_mean[i]),
                    spread=float(report.group_spread[i]),
                )
                for i, name in enumerate(report.group_names)
            ],
            uniform_fallbacks=sum(report.uniform_fallbacks),
        )

    return app


app = create_app()
