"""Pydantic request/response models for the HTTP API."""

from typing import Literal, Optional

from pydantic import BaseModel, Field


class FieldPayload(BaseModel):
    """A 2-d grid field; values[i][j] samples (x_i, y_j), axis 0 is x."""

    values: list[list[float]]
    domain: tuple[float, float, float, float] = (0.0, 1.0, 0.0, 1.0)
    endpoint: bool = False


class TreePayload(BaseModel):
    """Quadtree in the documented JSON layout."""

    max_level: int
    scaling: list[list[float]]
    details: dict[str, dict[str, list[list[float]]]]
    mask: dict[str, dict[str, list[list[bool]]]]
    lifting: Optional[dict] = None


class TransformForwardRequest(BaseModel):
    field: FieldPayload
    levels: Optional[int] = None
    half_width: int = 2
    boundary: Literal["periodic", "reflect"] = "periodic"


class TransformInverseRequest(BaseModel):
    tree: TreePayload
    half_width: int = 2
    boundary: Literal["periodic", "reflect"] = "periodic"
    target_level: Optional[int] = None
    domain: tuple[float, float, float, float] = (0.0, 2.0, 0.0, 2.0)


class SolveRequest(BaseModel):
    """Darcy solve of a log-permeability field with corner source/sink."""

    log_permeability: FieldPayload
    finest_level: int = 5
    residual_tolerance: float = Field(default=1e-8, gt=0)
    refinement_threshold: float = Field(default=0.0, ge=0)
    max_vcycles: int = Field(default=120, gt=0)
    smoother_sweeps: int = Field(default=3, gt=0)
    sensor_grid: Optional[int] = Field(default=None, ge=2)


class SolveResponse(BaseModel):
    pressure: FieldPayload
    residual: float
    cycles: int
    adapt_rounds: int
    active_fraction: float
    readings: Optional[list[float]] = None


class ObservationPayload(BaseModel):
    grid_size: int = Field(ge=2)
    readings: list[float]
    noise_fraction: float = 0.0
    noise_sigma: float = 0.0
    seed: int = 0


class InferRequest(BaseModel):
    observations: ObservationPayload
    config: dict[str, str] = Field(default_factory=dict)


class BenchmarkRequest(BaseModel):
    benchmark: str = "I"
    config: dict[str, str] = Field(default_factory=dict)


class ScaleSummary(BaseModel):
    scale: int
    log_z: float
    log_bf: Optional[float]
    basis_count: int
    resample_steps: list[int]
    ess_trace: list[float]
    acceptance_trace: list[float]
    sigma_trace: list[float]
    mean_field: Optional[FieldPayload] = None
    q05_field: Optional[FieldPayload] = None
    q95_field: Optional[FieldPayload] = None


class InferResult(BaseModel):
    selected_scale: int
    records: list[ScaleSummary]
    manifest: dict


class BenchmarkResult(BaseModel):
    benchmark: str
    selected_scale: int
    basis_counts: list[int]
    log_z: list[float]
    log_bf: list[Optional[float]]
    rmse_selected: float
    coverage_diagonal: float
    records: list[ScaleSummary]
    truth: FieldPayload
    observations: ObservationPayload
    manifest: dict


class JobInfo(BaseModel):
    id: str
    kind: str
    state: Literal["queued", "running", "done", "error"]
    detail: Optional[str] = None


class ErrorBody(BaseModel):
    error: str
    kind: str
