"""Request/response models for the HTTP inference service."""

from pydantic import BaseModel


class ModelInfo(BaseModel):
    model_id: str
    kind: str
    class_count: int
    input_shape: list[int]
    measurement_shape: list[int]
    mask_min: list[int] | None = None
    mask_max: list[int] | None = None
    training_mode: str
    table_dims: list[list[int]] | None = None


class ModelList(BaseModel):
    models: list[ModelInfo]


class PredictResponse(BaseModel):
    model_id: str
    sample_id: int
    dims: list[int]
    label: int
    probabilities: list[float]


class FlopResponse(BaseModel):
    model_id: str
    mcs_flops: int
    fs_flops: int
    tasknet_flops: int
    vector_sense_flops: int
    ratio: float


class HealthResponse(BaseModel):
    status: str
    models_loaded: int
