"""Pydantic request/response models for the HTTP service."""

from __future__ import annotations

from pydantic import BaseModel, ConfigDict

from ..experiments import ExperimentConfig, ResultSet


class HealthResponse(BaseModel):
    status: str
    version: str


class RunRequest(BaseModel):
    """A full experiment description; the endpoint fixes the task."""

    model_config = ConfigDict(extra="forbid")

    config: ExperimentConfig


class ResultSetModel(BaseModel):
    meta: dict
    rows: list[dict]
    partial: bool

    @classmethod
    def from_result(cls, result: ResultSet) -> "ResultSetModel":
        return cls(meta=result.meta, rows=result.rows, partial=result.partial)

    def to_result(self) -> ResultSet:
        return ResultSet(rows=self.rows, meta=self.meta)


class ReportRequest(BaseModel):
    model_config = ConfigDict(extra="forbid")

    results: ResultSetModel
    kind: str


class ReportResponse(BaseModel):
    kind: str
    csv: str
    sidecar: dict
