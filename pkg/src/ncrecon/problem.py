"""Per-case normalization shared by every reconstruction method.

The encoding operator is rescaled to unit spectral norm and the data to
``max |E^H y| = 1``; reconstructions are produced in these units and mapped
back with :meth:`Problem.to_physical`.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np

from .classical import power_iteration
from .nufft import SenseOperator, density_compensation, plan_nufft
from .simulation import SimulatedCase


@dataclass
class Problem:
    op: SenseOperator
    y: np.ndarray
    intensity: float
    truth: np.ndarray | None = None

    def to_physical(self, x):
        return np.asarray(x) * self.intensity

    @cached_property
    def density_weights(self) -> np.ndarray:
        """Density weights rescaled for the normalized operator."""
        return density_compensation(self.op.plan) / self.op.scale**2


def prepare_problem(case: SimulatedCase, dtype=np.complex64, oversampling: float = 2.0,
                    width: int = 4, power_iters: int = 20) -> Problem:
    plan = plan_nufft(case.truth.shape if case.truth is not None else case.maps.shape[1:],
                      case.trajectory, oversampling, width)
    raw = SenseOperator(plan, case.maps)
    op = raw.with_scale(1.0 / np.sqrt(power_iteration(raw, power_iters)))
    y = case.y.astype(np.complex128) * op.scale
    intensity = float(np.max(np.abs(op.apply_adjoint(y))))
    if not intensity > 0:
        raise ValueError("case has zero adjoint image; cannot normalize")
    truth = None if case.truth is None else (case.truth / intensity).astype(dtype)
    return Problem(op, (y / intensity).astype(dtype), intensity, truth)
