"""Truncated forward noising and reverse-SDE purification.

Purification runs the forward process up to a truncation time t* (enough to
wash out adversarial perturbations) and then integrates the reverse-time SDE

    dx = -1/2 beta(t) [x + 2 s(x, t, z_x)] dt + sqrt(beta(t)) dw

back to t = 0 with Euler-Maruyama, where the score s is read off the noise
predictor as s = -eps(x, round(t*N), z_x) / sqrt(1 - alpha(t)). The guidance
latent z_x is always the encoding of the tensor as it looked *before* noising.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import torch

from ..errors import DomainError, NumericError
from ..rng import derive_seed
from .denoiser import ConditionalDenoiser
from .schedule import NoiseSchedule

MAX_T_STAR = 0.5


@dataclass(frozen=True)
class PurifyParams:
    """Truncation time, solver resolution, and RNG seed for one purification."""

    t_star: float
    solver_steps: int | None = None  # defaults to t_star * n_steps
    seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.t_star <= MAX_T_STAR:
            raise DomainError(f"t_star must lie in [0, {MAX_T_STAR}], got {self.t_star}")
        if self.solver_steps is not None and self.solver_steps < 1:
            raise DomainError("solver_steps must be >= 1 when given")


def forward_noise(
    x0: np.ndarray,
    t_star: float,
    schedule: NoiseSchedule,
    eps: np.ndarray,
) -> np.ndarray:
    """sqrt(alpha(t*)) * x0 + sqrt(1 - alpha(t*)) * eps; identity at t* = 0."""
    x0 = np.asarray(x0, dtype=np.float32)
    eps = np.asarray(eps, dtype=np.float32)
    if eps.shape != x0.shape:
        raise DomainError(f"eps shape {eps.shape} does not match x0 shape {x0.shape}")
    t_star = schedule.quantize(t_star)
    if t_star == 0.0:
        return x0.copy()
    alpha = schedule.alpha_at(t_star)
    return (np.float32(math.sqrt(alpha)) * x0 + np.float32(math.sqrt(1.0 - alpha)) * eps).astype(np.float32)


def _reverse_sde_torch(
    x: torch.Tensor,
    t_star: float,
    denoiser: ConditionalDenoiser,
    z_x: torch.Tensor,
    schedule: NoiseSchedule,
    solver_steps: int,
    generators: list[torch.Generator] | None,
    noise_fn=None,
) -> torch.Tensor:
    """Euler-Maruyama from t* down to 0 on [B, N, C] standardized features."""
    b = x.shape[0]
    dt = t_star / solver_steps
    for k in range(solver_steps):
        t_k = t_star * (1.0 - k / solver_steps)
        beta = schedule.beta_at(t_k)
        alpha = schedule.alpha_at(t_k)
        n_k = schedule.index_of(t_k)
        n_idx = torch.full((b,), n_k, dtype=torch.long)
        eps_hat = denoiser.predict_eps(x, n_idx, z_x)
        score = -eps_hat / math.sqrt(1.0 - alpha)
        drift = 0.5 * beta * (x + 2.0 * score) * dt  # -f_rev * dt with dt < 0
        if noise_fn is not None:
            xi = noise_fn(k, tuple(x.shape))
            if not isinstance(xi, torch.Tensor):
                xi = torch.from_numpy(np.asarray(xi, dtype=np.float32))
        else:
            xi = torch.stack([torch.randn(x.shape[1:], generator=g) for g in generators])
        x = x + drift + math.sqrt(beta * dt) * xi
        if not torch.isfinite(x).all():
            raise NumericError(f"reverse SDE produced non-finite values at step {k} (t={t_k:.4f})")
    return x


def reverse_sde(
    x_t: np.ndarray,
    t_star: float,
    denoiser: ConditionalDenoiser,
    z_x: np.ndarray,
    schedule: NoiseSchedule | None = None,
    seed: int = 0,
    solver_steps: int | None = None,
    noise_fn=None,
) -> np.ndarray:
    """Integrate the reverse SDE for one [N, C] tensor in standardized space.

    ``z_x`` must be the guidance latent produced by the same denoiser's
    encoder on the pre-noising tensor. ``noise_fn(step, shape)`` overrides the
    seeded Gaussian increments (used by solver oracles in tests).
    """
    sched = schedule or denoiser.schedule
    t_star = sched.quantize(t_star)
    x_t = np.asarray(x_t, dtype=np.float32)
    if t_star == 0.0:
        return x_t.copy()
    steps = solver_steps if solver_steps is not None else max(round(t_star * sched.n_steps), 1)
    xt = torch.from_numpy(x_t).unsqueeze(0)
    zt = torch.from_numpy(np.asarray(z_x, dtype=np.float32)).reshape(1, -1)
    gens = None if noise_fn is not None else [torch.Generator().manual_seed(seed)]
    out = _reverse_sde_torch(xt, t_star, denoiser, zt, sched, steps, gens, noise_fn)
    return out.squeeze(0).numpy()


def purify(
    x_adv: np.ndarray,
    params: PurifyParams,
    denoiser: ConditionalDenoiser,
    schedule: NoiseSchedule | None = None,
) -> np.ndarray:
    """Noise an [N, C] feature tensor to t* and integrate it back to t = 0."""
    out = purify_batch(np.asarray(x_adv, dtype=np.float32)[None], params, denoiser, [params.seed], schedule)
    return out[0]


def purify_batch(
    x_adv: np.ndarray,
    params: PurifyParams,
    denoiser: ConditionalDenoiser,
    seeds: list[int],
    schedule: NoiseSchedule | None = None,
) -> np.ndarray:
    """Purify [B, N, C] tensors with one independent RNG stream per sample.

    Equivalent to stacking :func:`purify` calls with the given seeds; batched
    for throughput.
    """
    sched = schedule or denoiser.schedule
    x_adv = np.asarray(x_adv, dtype=np.float32)
    if x_adv.ndim != 3:
        raise DomainError(f"expected [B, N, C] features, got shape {x_adv.shape}")
    if x_adv.shape[0] != len(seeds):
        raise DomainError(f"got {len(seeds)} seeds for batch of {x_adv.shape[0]}")
    if x_adv.shape[-1] != denoiser.feature_dim:
        raise DomainError(f"denoiser expects feature dim {denoiser.feature_dim}, got {x_adv.shape[-1]}")
    t_star = sched.quantize(params.t_star)
    if t_star == 0.0:
        return x_adv.copy()
    steps = params.solver_steps if params.solver_steps is not None else max(round(t_star * sched.n_steps), 1)

    x = torch.from_numpy(x_adv)
    z_std = denoiser.standardize(x)
    z_x = denoiser.encode(z_std)  # guidance from the pre-noising tensor
    gens = [torch.Generator().manual_seed(int(s)) for s in seeds]
    eps = torch.stack([torch.randn(z_std.shape[1:], generator=g) for g in gens])
    alpha = sched.alpha_at(t_star)
    x_t = math.sqrt(alpha) * z_std + math.sqrt(1.0 - alpha) * eps
    out = _reverse_sde_torch(x_t, t_star, denoiser, z_x, sched, steps, gens)
    return denoiser.destandardize(out).numpy().astype(np.float32)


def purify_seed(base_seed: int, sample_id: int, layer_index: int) -> int:
    """Stream key for one purification: (seed, sample_id, layer_index)."""
    return derive_seed(base_seed, sample_id, layer_index)
