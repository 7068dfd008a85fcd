"""Denoiser training on clean layer features."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np
import torch

from ..errors import DomainError, NumericError
from .denoiser import ConditionalDenoiser, build_denoiser
from .schedule import NoiseSchedule

STD_FLOOR = 1e-6


@dataclass
class DenoiserTrainConfig:
    epochs: int = 40
    batch_size: int = 32
    lr: float = 1e-3
    seed: int = 0


def feature_stats(features: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Per-channel mean/std over all points of [M, N, C] features."""
    flat = features.reshape(-1, features.shape[-1]).astype(np.float64)
    mean = flat.mean(axis=0)
    std = np.maximum(flat.std(axis=0), STD_FLOOR)
    return mean.astype(np.float32), std.astype(np.float32)


def train_denoiser(
    features: np.ndarray,
    schedule: NoiseSchedule,
    config: DenoiserTrainConfig,
    layer_index: int = 0,
) -> ConditionalDenoiser:
    """Fit the noise predictor by regressing the injected noise.

    Per batch element a step index t is drawn uniformly from {1..N}, the
    standardized features are noised to sqrt(alpha_t) z + sqrt(1-alpha_t) eps,
    and the squared error between eps and the prediction (conditioned on t and
    the clean tensor's guidance latent) is minimized. A denoiser that guesses
    zero has expected per-element loss 1.0, which anchors the training log.
    """
    features = np.asarray(features, dtype=np.float32)
    if features.ndim != 3:
        raise DomainError(f"expected [M, N, C] features, got shape {features.shape}")
    m, _, feat_dim = features.shape
    if m < 1:
        raise DomainError("feature set is empty")
    mean, std = feature_stats(features)

    torch.manual_seed(config.seed)
    den = build_denoiser(layer_index, feat_dim, schedule, feat_mean=mean, feat_std=std)
    z_all = den.standardize(torch.from_numpy(features))
    opt = torch.optim.Adam(den.net.parameters(), lr=config.lr)
    sched = torch.optim.lr_scheduler.CosineAnnealingLR(opt, T_max=max(config.epochs, 1))
    shuffle_gen = torch.Generator().manual_seed(config.seed + 1)
    alphas = torch.from_numpy(np.sqrt(den.schedule.alphas).astype(np.float32))
    sigmas = torch.from_numpy(np.sqrt(1.0 - den.schedule.alphas).astype(np.float32))

    log: list[dict] = []
    den.net.train()
    for epoch in range(config.epochs):
        perm = torch.randperm(m, generator=shuffle_gen)
        losses = []
        for start in range(0, m, config.batch_size):
            idx = perm[start : start + config.batch_size]
            z = z_all[idx]
            b = z.shape[0]
            t = torch.randint(1, schedule.n_steps + 1, (b,), generator=shuffle_gen)
            eps = torch.randn(z.shape, generator=shuffle_gen)
            x_t = alphas[t - 1].view(b, 1, 1) * z + sigmas[t - 1].view(b, 1, 1) * eps
            z_x = den.net.encode(z)
            pred = den.net(x_t, t, z_x)
            loss = ((pred - eps) ** 2).mean()
            if not torch.isfinite(loss):
                raise NumericError(f"non-finite denoiser loss at epoch {epoch}, batch {start // config.batch_size}")
            opt.zero_grad()
            loss.backward()
            opt.step()
            losses.append(float(loss.detach()))
        sched.step()
        log.append({"epoch": epoch, "loss": float(np.mean(losses))})
    den.training_log = log
    den.train_meta = {
        "layer_index": layer_index,
        "n_train": m,
        "feature_dim": feat_dim,
        **asdict(config),
    }
    return den.freeze()


def smoothed_loss_ratio(log: list[dict], window: int = 3) -> float:
    """final/initial training loss, each smoothed over `window` epochs."""
    losses = [rec["loss"] for rec in log]
    if len(losses) < window:
        return losses[-1] / losses[0] if losses else math.nan
    head = float(np.mean(losses[:window]))
    tail = float(np.mean(losses[-window:]))
    return tail / head
