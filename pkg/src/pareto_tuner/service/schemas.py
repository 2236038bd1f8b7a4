"""Request/response bodies for the HTTP service."""

from __future__ import annotations

from pydantic import BaseModel, Field


class HealthResponse(BaseModel):
    status: str
    version: str


class RunsRequest(BaseModel):
    """Start an experiment; `config` is the experiment-config document."""

    config: dict = Field(default_factory=dict)
    out_dir: str | None = None


class RunInfo(BaseModel):
    index: int
    seed: int
    file: str
    records: int
    incomplete: bool
    error: str | None = None


class RunsResponse(BaseModel):
    output_dir: str
    manifest: str
    runs: list[RunInfo]


class CompareRequest(BaseModel):
    """Compare archive directories A and B (A is the approach of interest)."""

    dir_a: str
    dir_b: str
    label_a: str = "a"
    label_b: str = "b"
    ref_quality_loss: float | None = None
    ref_time_ms: float | None = None


class CompareResponse(BaseModel):
    summary: str
    table: str
    time_ratio_b_over_a: float
    quality_ratio_a_over_b: float
    hv_ratio_a_over_b: float
    side_a: dict
    side_b: dict


class ImportanceRequest(BaseModel):
    archive_dir: str
    target: str
    repeats: int = 10
    search_budget: int = 20
    base_seed: int = 0


class ImportanceEntry(BaseModel):
    name: str
    mean: float
    spread: float


class ImportanceResponse(BaseModel):
    target: str
    table: str
    groups_table: str
    chart: str
    features: list[ImportanceEntry]
    groups: list[ImportanceEntry]
    uniform_fallbacks: int


class ErrorBody(BaseModel):
    error: str
    detail: str
