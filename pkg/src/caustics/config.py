"""Pipeline configuration: JSON blocks per stage, env overrides, echo.

Every parameter the underlying publications leave open appears here with
its default, so the effective configuration written next to each run fully
reproduces it. Unknown keys are rejected by name; environment variables
prefixed ``CAUSTICS_`` (for example ``CAUSTICS_RANSAC_SEED=7``) override
file values.
"""

from __future__ import annotations

import json
import os
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

from .errors import ParameterError

ENV_PREFIX = "CAUSTICS_"


@dataclass
class SegmentationConfig:
    method: str = "threshold"  # threshold | knn | tree | external
    threshold: float | None = None  # l-channel threshold, required for "threshold"
    mask_in: str | None = None  # external mask path or directory
    train_image: str | None = None
    train_mask: str | None = None
    patch_size: int = 128
    stride: int = 32

    def validate(self, required: bool = True) -> None:
        if self.method not in ("threshold", "knn", "tree", "external"):
            raise ParameterError(f"segmentation.method: unknown method {self.method!r}")
        if not required:
            return
        if self.method == "threshold" and self.threshold is None:
            raise ParameterError("segmentation.threshold is required for the threshold method")
        if self.method in ("knn", "tree") and (self.train_image is None or self.train_mask is None):
            raise ParameterError(f"segmentation.{self.method}: train_image and train_mask required")
        if self.method == "external" and self.mask_in is None:
            raise ParameterError("segmentation.mask_in is required for external masks")


@dataclass
class TransferConfig:
    scope: str = "pair"  # pair | block

    def validate(self) -> None:
        if self.scope not in ("pair", "block"):
            raise ParameterError(f"transfer.scope: unknown scope {self.scope!r}")


@dataclass
class RansacConfig:
    seed: int = 0
    threshold_px: float = 1.0
    confidence: float = 0.999
    max_keypoints: int = 2000

    def validate(self) -> None:
        if not 0 < self.confidence < 1:
            raise ParameterError("ransac.confidence must be in (0, 1)")
        if self.threshold_px <= 0:
            raise ParameterError("ransac.threshold_px must be positive")


@dataclass
class SgmConfig:
    d_min: int | None = None  # None resolves the range from inlier matches
    d_max: int | None = None
    p1: float = 10.0
    p2: float = 120.0
    cost: str = "census"  # census | mi
    lr_threshold: float = 1.0
    median_window: int = 3

    def validate(self) -> None:
        if self.cost not in ("census", "mi"):
            raise ParameterError(f"sgm.cost: unknown cost {self.cost!r}")
        if not self.p2 > self.p1 > 0:
            raise ParameterError("sgm penalties must satisfy p2 > p1 > 0")

    def cost_kind(self) -> str:
        return "mutual_information" if self.cost == "mi" else "census"


@dataclass
class GroundTruthConfig:
    threshold: int = 40
    kernel: int = 5

    def validate(self) -> None:
        if not 0 <= self.threshold <= 255:
            raise ParameterError("ground_truth.threshold must be in [0, 255]")
        if self.kernel not in (3, 5, 7):
            raise ParameterError("ground_truth.kernel must be 3, 5, or 7")


_SECTIONS = {
    "segmentation": SegmentationConfig,
    "transfer": TransferConfig,
    "ransac": RansacConfig,
    "sgm": SgmConfig,
    "ground_truth": GroundTruthConfig,
}


@dataclass
class PipelineConfig:
    """Top-level run description: image pairs, output root, stage blocks."""

    pairs: list[list[str]] = field(default_factory=list)
    masks: dict[str, str] = field(default_factory=dict)  # image path -> mask path
    calibration: str | None = None
    out_dir: str = "out"
    segmentation: SegmentationConfig = field(default_factory=SegmentationConfig)
    transfer: TransferConfig = field(default_factory=TransferConfig)
    ransac: RansacConfig = field(default_factory=RansacConfig)
    sgm: SgmConfig = field(default_factory=SgmConfig)
    ground_truth: GroundTruthConfig = field(default_factory=GroundTruthConfig)

    def needs_segmentation(self) -> bool:
        return any(img not in self.masks for pair in self.pairs for img in pair)

    def validate(self) -> None:
        if not self.pairs:
            raise ParameterError("config.pairs must list at least one [left, right] pair")
        for pair in self.pairs:
            if len(pair) != 2:
                raise ParameterError(f"config.pairs entries must be [left, right], got {pair}")
        # Segmentation parameters are only demanded when some pair image
        # comes without an explicit mask.
        self.segmentation.validate(required=self.needs_segmentation())
        for section in _SECTIONS:
            if section != "segmentation":
                getattr(self, section).validate()

    def effective(self) -> dict:
        """Fully materialized configuration, suitable for echoing to disk."""
        return asdict(self)

    def save(self, path: str | Path) -> None:
        with open(path, "w") as f:
            json.dump(self.effective(), f, indent=2, sort_keys=True)
            f.write("\n")


def _build_section(cls, name: str, raw: dict):
    known = {f.name for f in fields(cls)}
    unknown = set(raw) - known
    if unknown:
        raise ParameterError(f"unknown config key {name}.{sorted(unknown)[0]}")
    return cls(**raw)


def _coerce(text: str):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def apply_env_overrides(raw: dict, environ: dict | None = None) -> dict:
    """Fold CAUSTICS_<SECTION>_<KEY> environment variables into a raw config."""
    environ = os.environ if environ is None else environ
    for name, value in environ.items():
        if not name.startswith(ENV_PREFIX):
            continue
        rest = name[len(ENV_PREFIX):].lower()
        for section, cls in _SECTIONS.items():
            prefix = section + "_"
            if rest.startswith(prefix):
                key = rest[len(prefix):]
                raw.setdefault(section, {})[key] = _coerce(value)
                break
        else:
            if rest in ("out_dir", "calibration"):
                raw[rest] = _coerce(value)
    return raw


def config_from_dict(raw: dict) -> PipelineConfig:
    """Build and validate a PipelineConfig; unknown keys are rejected by name."""
    raw = dict(raw)
    top_known = {f.name for f in fields(PipelineConfig)}
    unknown = set(raw) - top_known
    if unknown:
        raise ParameterError(f"unknown config key {sorted(unknown)[0]}")
    sections = {}
    for name, cls in _SECTIONS.items():
        block = raw.pop(name, {})
        if not isinstance(block, dict):
            raise ParameterError(f"config section {name} must be an object")
        sections[name] = _build_section(cls, name, block)
    config = PipelineConfig(**raw, **sections)
    config.validate()
    return config


def load_config(path: str | Path, environ: dict | None = None) -> PipelineConfig:
    with open(path) as f:
        raw = json.load(f)
    raw = apply_env_overrides(raw, environ)
    return config_from_dict(raw)
