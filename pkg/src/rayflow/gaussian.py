"""Isotropic Gaussians, a splittable RNG and Monte-Carlo moment estimates."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


class DegenerateVarianceError(ValueError):
    """A density was requested for a zero-variance (Dirac) Gaussian."""


class InsufficientSamplesError(ValueError):
    pass


class Rng:
    """Seeded generator whose children are independent of the parent's draws.

    ``split(i)`` derives a new stream from ``(seed, path + (i,))`` through
    numpy's ``SeedSequence``, so results never depend on how much the parent
    has already consumed.
    """

    def __init__(self, seed: int, path: tuple[int, ...] = ()):
        self.seed = int(seed)
        self.path = tuple(int(p) for p in path)
        self.gen = np.random.default_rng(np.random.SeedSequence(self.seed, spawn_key=self.path))

    def split(self, child_id: int) -> Rng:
        return Rng(self.seed, self.path + (child_id,))

    def normal(self, size=None) -> np.ndarray:
        return self.gen.standard_normal(size)

    def uniform(self, low=0.0, high=1.0, size=None):
        return self.gen.uniform(low, high, size)

    def choice(self, n, size=None, p=None):
        return self.gen.choice(n, size=size, p=p)

    def __repr__(self) -> str:
        return f"Rng(seed={self.seed}, path={self.path})"


@dataclass(frozen=True)
class IsoGaussian:
    """N(mean, var * I).  ``var == 0`` is a point mass at ``mean``."""

    mean: np.ndarray
    var: float

    def __post_init__(self):
        mean = np.array(self.mean, dtype=float)
        mean.setflags(write=False)
        object.__setattr__(self, "mean", mean)
        if not self.var >= 0:
            raise ValueError(f"variance must be >= 0, got {self.var}")
        object.__setattr__(self, "var", float(self.var))

    @property
    def dim(self) -> int:
        return int(self.mean.shape[-1]) if self.mean.ndim else 1

    @property
    def std(self) -> float:
        return float(np.sqrt(self.var))


def sample(g: IsoGaussian, rng: Rng, n: int | None = None) -> np.ndarray:
    """One draw (shape of ``mean``) or ``n`` draws stacked on axis 0."""
    shape = g.mean.shape if n is None else (n,) + g.mean.shape
    if g.var == 0.0:
        return np.broadcast_to(g.mean, shape).copy()
    return g.mean + g.std * rng.normal(shape)


def log_pdf(g: IsoGaussian, x) -> np.ndarray | float:
    if g.var == 0.0:
        raise DegenerateVarianceError("log_pdf of a Dirac point mass is undefined")
    x = np.asarray(x, dtype=float)
    d = g.dim
    sq = np.sum((x - g.mean) ** 2, axis=-1) if g.mean.ndim else (x - g.mean) ** 2
    out = -0.5 * d * np.log(2.0 * np.pi * g.var) - sq / (2.0 * g.var)
    return float(out) if np.ndim(out) == 0 else out


def affine(g: IsoGaussian, scale: float, shift) -> IsoGaussian:
    """Distribution of ``scale * X + shift``."""
    return IsoGaussian(scale * g.mean + np.asarray(shift, dtype=float), scale * scale * g.var)


def convolve(g1: IsoGaussian, g2: IsoGaussian) -> IsoGaussian:
    """Distribution of the sum of independent draws."""
    if g1.mean.shape != g2.mean.shape:
        raise ValueError(f"dimension mismatch: {g1.mean.shape} vs {g2.mean.shape}")
    return IsoGaussian(g1.mean + g2.mean, g1.var + g2.var)


def mc_moments(samples) -> tuple[np.ndarray, float]:
    """Empirical mean and pooled unbiased per-coordinate variance of ``(n, d)`` samples."""
    x = np.asarray(samples, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    if x.shape[0] < 2:
        raise InsufficientSamplesError("need at least two samples")
    return x.mean(axis=0), float(x.var(axis=0, ddof=1).mean())
