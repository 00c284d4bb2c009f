"""Isotropic Gaussian-mixture toy distributions with per-component class labels."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class GmmSpec:
    means: np.ndarray
    sigma: float
    weights: np.ndarray
    classes: np.ndarray

    def __post_init__(self):
        means = np.atleast_2d(np.asarray(self.means, dtype=np.float64))
        weights = np.asarray(self.weights, dtype=np.float64)
        classes = np.asarray(self.classes, dtype=np.int64)
        if not self.sigma > 0:
            raise ValueError(f"sigma must be positive, got {self.sigma}")
        if weights.shape != (means.shape[0],) or classes.shape != weights.shape:
            raise ValueError("means, weights and classes must have one entry per component")
        if (weights < 0).any() or abs(weights.sum() - 1.0) > 1e-12:
            raise ValueError("weights must be a probability vector")
        object.__setattr__(self, "means", means)
        object.__setattr__(self, "weights", weights)
        object.__setattr__(self, "classes", classes)

    @property
    def dim(self) -> int:
        return self.means.shape[1]

    @property
    def num_classes(self) -> int:
        return int(self.classes.max()) + 1

    def class_means(self) -> np.ndarray:
        """Weighted mean location of every class."""
        out = np.zeros((self.num_classes, self.dim))
        for c in range(self.num_classes):
            sel = self.classes == c
            w = self.weights[sel]
            out[c] = (w[:, None] * self.means[sel]).sum(0) / w.sum()
        return out


def gauss1(dim: int = 2) -> GmmSpec:
    return GmmSpec(np.zeros((1, dim)), 1.0, np.ones(1), np.zeros(1))


def ring8(radius: float = 4.0, sigma: float = 0.3) -> GmmSpec:
    ang = 2 * np.pi * np.arange(8) / 8
    means = radius * np.stack([np.cos(ang), np.sin(ang)], axis=1)
    return GmmSpec(means, sigma, np.full(8, 1 / 8), np.arange(8))


def grid25(spacing: float = 2.0, sigma: float = 0.2) -> GmmSpec:
    ticks = spacing * (np.arange(5) - 2.0)
    means = np.array([(x, y) for x in ticks for y in ticks])
    return GmmSpec(means, sigma, np.full(25, 1 / 25), np.arange(25))


PRESETS = {"gauss1": gauss1, "ring8": ring8, "grid25": grid25}


def preset(name: str) -> GmmSpec:
    try:
        return PRESETS[name]()
    except KeyError:
        raise ValueError(f"unknown dataset preset {name!r}; choose from {sorted(PRESETS)}") from None


def sample_data(spec: GmmSpec, count: int, rng: np.random.Generator):
    """Return ``(points, labels)``; components drawn by weight, then N(mean, sigma^2 I)."""
    if count < 1:
        raise ValueError("count must be >= 1")
    comp = rng.choice(len(spec.weights), size=count, p=spec.weights)
    points = spec.means[comp] + spec.sigma * rng.standard_normal((count, spec.dim))
    return points, spec.classes[comp]
