"""Toy 2-D point clouds and the Gaussian mixtures used as exact teachers."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..denoiser import GaussianMixture
from ..gaussian import Rng

DATASETS = ("gauss8", "two_moons", "ring")
GAUSS8_RADIUS = 1.0
GAUSS8_STD = 0.05
RING_STD = 0.05
MOONS_STD = 0.05
# kernel-mixture teachers for datasets without a closed-form mixture
KERNEL_CENTERS = 256
KERNEL_STD = 0.04


class UnknownDatasetError(KeyError):
    pass


@dataclass(frozen=True)
class SyntheticDataset:
    name: str
    n: int
    seed: int
    points: np.ndarray
    params: dict = field(default_factory=dict)

    @property
    def dim(self) -> int:
        return self.points.shape[1]


def _check(name: str) -> None:
    if name not in DATASETS:
        raise UnknownDatasetError(f"unknown dataset {name!r}; choose from {', '.join(DATASETS)}")


def gauss8_mixture() -> GaussianMixture:
    ang = 2.0 * np.pi * np.arange(8) / 8
    means = GAUSS8_RADIUS * np.stack([np.cos(ang), np.sin(ang)], axis=1)
    return GaussianMixture(np.ones(8), means, np.full(8, GAUSS8_STD))


def _ring(n: int, rng: Rng) -> np.ndarray:
    theta = rng.uniform(0.0, 2.0 * np.pi, size=n)
    r = 1.0 + RING_STD * rng.normal(n)
    return np.stack([r * np.cos(theta), r * np.sin(theta)], axis=1)


def _two_moons(n: int, rng: Rng) -> np.ndarray:
    upper = rng.uniform(size=n) < 0.5
    theta = rng.uniform(0.0, np.pi, size=n)
    x = np.where(upper, np.cos(theta), 1.0 - np.cos(theta))
    y = np.where(upper, np.sin(theta), 0.5 - np.sin(theta))
    pts = np.stack([x, y], axis=1) + MOONS_STD * rng.normal((n, 2))
    return pts - np.array([0.5, 0.25])  # centred


def gen_dataset(name: str, n: int, seed: int) -> SyntheticDataset:
    """Deterministic point cloud for ``(name, n, seed)``."""
    _check(name)
    if n < 1:
        raise ValueError("n must be positive")
    rng = Rng(seed, (hash_name(name),))
    if name == "gauss8":
        pts = gauss8_mixture().sample(n, rng)
        params = {"radius": GAUSS8_RADIUS, "std": GAUSS8_STD, "modes": 8}
    elif name == "ring":
        pts, params = _ring(n, rng), {"radius": 1.0, "std": RING_STD}
    else:
        pts, params = _two_moons(n, rng), {"std": MOONS_STD}
    pts.setflags(write=False)
    return SyntheticDataset(name, int(n), int(seed), pts, params)


def hash_name(name: str) -> int:
    # stable across interpreter runs, unlike hash()
    return int.from_bytes(name.encode(), "little") % (2**31)


def teacher_mixture(name: str, seed: int = 0) -> GaussianMixture:
    """Mixture whose exact score serves as the teacher for ``name``.

    gauss8 is itself a mixture.  The other datasets are represented by a
    kernel mixture of narrow Gaussians centred on a fixed draw.
    """
    _check(name)
    if name == "gauss8":
        return gauss8_mixture()
    centers = gen_dataset(name, KERNEL_CENTERS, seed + 10_000).points
    return GaussianMixture(np.ones(KERNEL_CENTERS), centers, np.full(KERNEL_CENTERS, KERNEL_STD))
