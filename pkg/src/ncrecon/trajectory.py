"""Variable-density non-Cartesian sampling and random k-space partitions."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import check_image_shape
from .nufft import Trajectory


@dataclass(frozen=True)
class SamplingSpec:
    """Variable-density sampling pattern description.

    The central disk of radius ``center_frac * N/2`` is sampled uniformly at
    ``center_rate`` samples per Cartesian cell; outside it the radial density
    decays as ``(1 - r/r_max)**2`` and carries the remaining sample budget.
    """

    image_shape: tuple[int, int] = (64, 64)
    accel: float = 2.0
    center_frac: float = 0.10
    center_rate: float = 1.25
    seed: int = 0

    @property
    def r_max(self) -> float:
        return min(self.image_shape) / 2

    @property
    def r_center(self) -> float:
        return self.center_frac * self.r_max

    @property
    def n_samples(self) -> int:
        ny, nx = self.image_shape
        return int(round(ny * nx / self.accel))

    @property
    def n_center(self) -> int:
        return int(round(self.center_rate * np.pi * self.r_center**2))


def _outer_radius_cdf(u, u_c):
    # integral of (1 - u)^2 * u from u_c to u (radius in units of r_max)
    prim = lambda t: t**2 / 2 - 2 * t**3 / 3 + t**4 / 4  # noqa: E731
    return (prim(u) - prim(u_c)) / (prim(1.0) - prim(u_c))


def outer_radius_pdf(r, spec: SamplingSpec) -> np.ndarray:
    """Probability density of the radius of a sample drawn outside the centre disk."""
    r = np.asarray(r, dtype=float)
    u, u_c = r / spec.r_max, spec.r_center / spec.r_max
    prim = lambda t: t**2 / 2 - 2 * t**3 / 3 + t**4 / 4  # noqa: E731
    norm = (prim(1.0) - prim(u_c)) * spec.r_max
    inside = (u > u_c) & (u < 1)
    return np.where(inside, (1 - u) ** 2 * u / norm, 0.0)


def outer_radius_cdf(r, spec: SamplingSpec) -> np.ndarray:
    u = np.clip(np.asarray(r, dtype=float) / spec.r_max, spec.r_center / spec.r_max, 1.0)
    return _outer_radius_cdf(u, spec.r_center / spec.r_max)


def generate_vd_trajectory(spec: SamplingSpec) -> Trajectory:
    """Draw a variable-density trajectory; deterministic given ``spec.seed``."""
    check_image_shape(spec.image_shape)
    if spec.accel <= 0:
        raise ValueError(f"acceleration must be positive, got {spec.accel}")
    if not 0 < spec.center_frac < 1:
        raise ValueError(f"center_frac must lie in (0, 1), got {spec.center_frac}")
    m, m_c = spec.n_samples, spec.n_center
    if m_c > m:
        raise ValueError(
            f"R={spec.accel} leaves {m} samples but the centre disk alone needs {m_c}"
        )
    rng = np.random.default_rng(spec.seed)
    r_c = spec.r_center
    r_in = r_c * np.sqrt(rng.uniform(size=m_c))

    u_c = r_c / spec.r_max
    u_grid = np.linspace(u_c, 1.0, 8193)
    cdf = _outer_radius_cdf(u_grid, u_c)
    # Keep draws strictly inside the disk so every coordinate is < N/2.
    q = rng.uniform(size=m - m_c) * (1 - 1e-9)
    r_out = spec.r_max * np.interp(q, cdf, u_grid)

    r = np.concatenate([r_in, r_out])
    theta = rng.uniform(0.0, 2 * np.pi, size=m)
    coords = np.stack([r * np.cos(theta), r * np.sin(theta)], axis=1)
    return Trajectory(coords, nominal_accel=float(spec.accel))


@dataclass(frozen=True)
class PartitionPair:
    """Disjoint, covering index sets into a trajectory."""

    p1: np.ndarray
    p2: np.ndarray

    @property
    def rate(self) -> float:
        return len(self.p1) / (len(self.p1) + len(self.p2))


def partition(n_samples: int, rng, rate: float | None = None,
              rate_range: tuple[float, float] = (0.2, 0.8)) -> PartitionPair:
    """Split ``range(n_samples)`` into two random disjoint sets.

    ``rng`` is a seed or a :class:`numpy.random.Generator`.  When ``rate`` is
    omitted it is drawn uniformly from ``rate_range``; ``p1`` receives
    ``round(rate * n_samples)`` indices (at least one, at most ``n - 1``).
    """
    if n_samples < 2:
        raise ValueError(f"need at least 2 samples to partition, got {n_samples}")
    rng = np.random.default_rng(rng)
    if rate is None:
        rate = rng.uniform(*rate_range)
    if not 0 < rate < 1:
        raise ValueError(f"partition rate must lie in (0, 1), got {rate}")
    n1 = int(np.clip(np.floor(rate * n_samples + 0.5), 1, n_samples - 1))
    mask = np.zeros(n_samples, dtype=bool)
    mask[rng.choice(n_samples, size=n1, replace=False)] = True
    return PartitionPair(np.flatnonzero(mask), np.flatnonzero(~mask))
