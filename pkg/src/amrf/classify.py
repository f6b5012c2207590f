"""Dot-density threshold classifier standing in for the factory classifier."""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Sequence

import numpy as np

from .core import to_gray
from .errors import ConfigError, EmptyCrop, SingleClassTrainingSet


@dataclass(frozen=True)
class StubClassifierConfig:
    density_threshold: float = 0.2
    dark_cutoff: float = 110.0

    def __post_init__(self):
        if not 0.0 < self.density_threshold < 1.0:
            raise ConfigError("density_threshold must lie in (0, 1)")
        if not 0.0 <= self.dark_cutoff <= 255.0:
            raise ConfigError("dark_cutoff must lie in [0, 255]")

    def to_json(self) -> dict:
        return {"density_threshold": self.density_threshold, "dark_cutoff": self.dark_cutoff}

    @classmethod
    def from_json(cls, obj: dict) -> "StubClassifierConfig":
        return cls(float(obj["density_threshold"]), float(obj["dark_cutoff"]))


def dark_density(crop: np.ndarray, dark_cutoff: float) -> float:
    if crop.size == 0 or crop.shape[0] == 0 or crop.shape[1] == 0:
        raise EmptyCrop("crop has no pixels")
    gray = to_gray(crop) if crop.ndim == 3 else crop.astype(np.float64)
    return float(np.count_nonzero(gray < dark_cutoff)) / gray.size


def stub_classify(config: StubClassifierConfig, crop: np.ndarray) -> str:
    """F1 when the dark-pixel fraction reaches the threshold, F2 otherwise."""
    return "F1" if dark_density(crop, config.dark_cutoff) >= config.density_threshold else "F2"


def stub_fit(crops: Sequence, labels: Sequence[str], dark_cutoff: float = 110.0) -> StubClassifierConfig:
    """Threshold halfway between the two class-mean densities."""
    densities = {"F1": [], "F2": []}
    for crop, label in zip(crops, labels):
        if label not in densities:
            raise ValueError(f"unknown label {label!r}")
        densities[label].append(dark_density(crop, dark_cutoff))
    return fit_from_densities(densities["F1"], densities["F2"], dark_cutoff)


def fit_on_samples(samples, margin: int = 4, dark_cutoff: float = 110.0) -> StubClassifierConfig:
    """Fit on angle-adaptive crops of the samples' reference masks."""
    from .moments import angle_adaptive_crop

    crops, labels = [], []
    for s in samples:
        if s.mask is None or s.factory is None:
            raise ValueError(f"{s.id}: fitting needs a mask and a factory label")
        crops.append(angle_adaptive_crop(s.image, s.mask, margin).crop)
        labels.append(s.factory)
    return stub_fit(crops, labels, dark_cutoff)


def fit_from_densities(f1: Sequence[float], f2: Sequence[float], dark_cutoff: float = 110.0) -> StubClassifierConfig:
    if not f1 or not f2:
        raise SingleClassTrainingSet("both F1 and F2 examples are required")
    threshold = (float(np.mean(f1)) + float(np.mean(f2))) / 2.0
    return StubClassifierConfig(threshold, dark_cutoff)


@dataclass(frozen=True)
class StubClassifier:
    config: StubClassifierConfig = StubClassifierConfig()
    name: str = "stub"

    def classify(self, crop: np.ndarray) -> str:
        return stub_classify(self.config, crop)

    def fit(self, crops, labels) -> "StubClassifier":
        return replace(self, config=stub_fit(crops, labels, self.config.dark_cutoff))
