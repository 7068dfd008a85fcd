"""Noise schedules shared by denoiser training and purification.

Discrete per-step variances beta_1..beta_N with cumulative retention
alpha_n = prod_{i<=n} (1 - beta_i). Continuous time t in [0, 1] is identified
with step index n = round(t * N); alpha(0) := 1 by convention so a zero
truncation time is an exact no-op.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..errors import DomainError

DEFAULT_N_STEPS = 200
DEFAULT_BETA_MIN = 1e-4
DEFAULT_BETA_MAX = 0.02


@dataclass(frozen=True)
class NoiseSchedule:
    n_steps: int
    beta_min: float
    beta_max: float
    betas: np.ndarray = field(repr=False)  # [N] float64, increasing
    alphas: np.ndarray = field(repr=False)  # [N] float64, strictly decreasing

    def index_of(self, t: float) -> int:
        """Nearest step index for continuous time t in (0, 1], clamped to [1, N]."""
        return int(min(max(round(t * self.n_steps), 1), self.n_steps))

    def alpha_at(self, t: float) -> float:
        if t <= 0.0:
            return 1.0
        return float(self.alphas[self.index_of(t) - 1])

    def beta_at(self, t: float) -> float:
        return float(self.betas[self.index_of(t) - 1])

    def quantize(self, t: float) -> float:
        """Snap t to the nearest multiple of 1/N; reject values off the grid."""
        steps = t * self.n_steps
        if abs(steps - round(steps)) > 1e-6:
            raise DomainError(f"t={t} is not a multiple of 1/{self.n_steps}")
        return round(steps) / self.n_steps

    def to_meta(self) -> dict:
        return {"n_steps": self.n_steps, "beta_min": self.beta_min, "beta_max": self.beta_max}


def make_schedule(
    n_steps: int = DEFAULT_N_STEPS,
    beta_min: float = DEFAULT_BETA_MIN,
    beta_max: float = DEFAULT_BETA_MAX,
) -> NoiseSchedule:
    """Linear beta interpolation from beta_min to beta_max over n_steps."""
    if n_steps < 1:
        raise DomainError(f"n_steps must be >= 1, got {n_steps}")
    if not (0.0 < beta_min <= beta_max < 1.0):
        raise DomainError(f"need 0 < beta_min <= beta_max < 1, got [{beta_min}, {beta_max}]")
    betas = np.linspace(beta_min, beta_max, n_steps, dtype=np.float64)
    alphas = np.cumprod(1.0 - betas)
    if not (alphas > 0).all():
        raise DomainError("schedule underflow: cumulative retention reached zero")
    return NoiseSchedule(n_steps=n_steps, beta_min=beta_min, beta_max=beta_max, betas=betas, alphas=alphas)


def schedule_from_meta(meta: dict) -> NoiseSchedule:
    return make_schedule(meta["n_steps"], meta["beta_min"], meta["beta_max"])
