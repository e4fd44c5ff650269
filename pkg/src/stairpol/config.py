"""Validated pipeline configuration.

Every section rejects unknown keys, so a typo in a JSON config fails loudly
instead of silently falling back to a default.
"""

from __future__ import annotations

import os
from pathlib import Path
from typing import Literal, Optional

from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator

from .errors import InputError
from .gwo import WEIGHT_MODES
from .io import read_json

CONFIG_ENV_VAR = "STAIRPOL_CONFIG"


class _Section(BaseModel):
    model_config = ConfigDict(extra="forbid")


class FusionSection(_Section):
    dop_weight: float = Field(0.5, ge=0)
    i_weight: float = Field(0.5, ge=0)


class ReferenceSection(_Section):
    """How the two depth references are turned into normals."""

    binocular_smoothing_px: float = Field(2.0, ge=0)
    tof_smoothing_px: float = Field(0.0, ge=0)
    channel_smoothing_px: float = Field(0.0, ge=0)
    hole_mode: Literal["morphology", "canny"] = "morphology"


class IntegrationSection(_Section):
    boundary: Literal["mirror", "periodic"] = "mirror"


class GwoSection(_Section):
    pop_size: int = Field(20, ge=3)
    max_iter: int = Field(100, ge=0)
    beta: float = Field(1.5, gt=0, le=2)
    seed: int = Field(0, ge=0)
    weight_mode: str = "paper_literal"
    levy_enabled: bool = True
    chaotic_init: bool = False
    rot_bound_rad: float = Field(0.1, gt=0)
    trans_bound_mm: float = Field(10.0, gt=0)

    @field_validator("weight_mode")
    @classmethod
    def _known_mode(cls, v):
        if v not in WEIGHT_MODES:
            raise ValueError(f"must be one of {WEIGHT_MODES}")
        return v


class SegmentationSection(_Section):
    k_neighbors: int = Field(28, ge=3)
    horiz_angle_deg: float = Field(15.0, gt=0, lt=45)
    vert_angle_deg: float = Field(15.0, gt=0, lt=45)
    cluster_tolerance_mm: float = Field(25.0, gt=0)
    min_cluster_size: int = Field(20, ge=1)
    t1: float = Field(0.4, ge=0, le=1)
    t2: float = Field(0.8, ge=0, le=1)


class InputsSection(_Section):
    """Input file paths; relative paths resolve against the config file."""

    i0: Optional[Path] = None
    i45: Optional[Path] = None
    i90: Optional[Path] = None
    i135: Optional[Path] = None
    binocular_depth: Optional[Path] = None
    tof_depth: Optional[Path] = None
    calibration: Optional[Path] = None
    truth_height: Optional[Path] = None
    cloud: Optional[Path] = None
    calibration_manifest: Optional[Path] = None


class PipelineConfig(_Section):
    refractive_index: float = Field(1.5, gt=1)
    pixel_pitch_mm: float = Field(0.8, gt=0)
    distance_mm: Optional[float] = Field(None, gt=0)
    fusion: FusionSection = FusionSection()
    reference: ReferenceSection = ReferenceSection()
    integration: IntegrationSection = IntegrationSection()
    gwo: GwoSection = GwoSection()
    segmentation: SegmentationSection = SegmentationSection()
    gravity: tuple[float, float, float] = (0.0, 1.0, 0.0)
    inputs: InputsSection = InputsSection()

    @field_validator("gravity")
    @classmethod
    def _nonzero(cls, v):
        if sum(c * c for c in v) == 0:
            raise ValueError("gravity must be a non-zero vector")
        return v


def _format_validation(exc: ValidationError) -> str:
    parts = []
    for err in exc.errors():
        loc = ".".join(str(p) for p in err["loc"]) or "<root>"
        parts.append(f"{loc}: {err['msg']}")
    return "; ".join(parts)


def parse_config(data: dict, base_dir: Path | None = None) -> PipelineConfig:
    try:
        cfg = PipelineConfig.model_validate(data)
    except ValidationError as exc:
        raise InputError(_format_validation(exc), stage="config") from exc
    if base_dir is not None:
        updates = {}
        for name, value in cfg.inputs:
            if value is not None and not value.is_absolute():
                updates[name] = (base_dir / value)
        if updates:
            cfg = cfg.model_copy(update={"inputs": cfg.inputs.model_copy(update=updates)})
    return cfg


def load_config(path=None) -> PipelineConfig:
    """Read a JSON config; falls back to ``$STAIRPOL_CONFIG``, then to defaults."""
    if path is None:
        path = os.environ.get(CONFIG_ENV_VAR) or None
    if path is None:
        return PipelineConfig()
    path = Path(path)
    data = read_json(path)
    if not isinstance(data, dict):
        raise InputError(f"{path}: top level must be a JSON object", stage="config")
    return parse_config(data, base_dir=path.parent)
