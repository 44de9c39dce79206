"""
Pydantic schema of the model file.
"""
from pydantic import BaseModel, Field, model_validator
from typing import List, Literal


class Architecture(BaseModel):
    sizes: List[int] = Field(..., min_length=2, description="Layer sizes [1+n, h_1, ..., h_L, m].")


class NormStatsFile(BaseModel):
    input_mean: List[float]
    input_scale: List[float]
    output_mean: List[float]
    output_scale: List[float]


class LayerFile(BaseModel):
    W: List[List[float]]
    b: List[float]


class MlpFile(BaseModel):
    """On-disk JSON form of a trained network."""
    arch: Architecture
    activation: Literal["tanh"] = "tanh"
    norm_stats: NormStatsFile
    layers: List[LayerFile]

    @model_validator(mode="after")
    def _shapes_chain(self):
        sizes = self.arch.sizes
        if len(self.layers) != len(sizes) - 1:
            raise ValueError(f"{len(sizes) - 1} layers expected, got {len(self.layers)}")
        for k, layer in enumerate(self.layers):
            if len(layer.W) != sizes[k + 1] or any(len(row) != sizes[k] for row in layer.W):
                raise ValueError(f"layer {k}: W must be {sizes[k + 1]}x{sizes[k]}")
            if len(layer.b) != sizes[k + 1]:
                raise ValueError(f"layer {k}: b must have {sizes[k + 1]} entries")
        stats = self.norm_stats
        if len(stats.input_mean) != sizes[0] or len(stats.input_scale) != sizes[0]:
            raise ValueError("input normalization does not match the input size")
        if len(stats.output_mean) != sizes[-1] or len(stats.output_scale) != sizes[-1]:
            raise ValueError("output normalization does not match the output size")
        return self

    class Config:
        extra = "forbid"
