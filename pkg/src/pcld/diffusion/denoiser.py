"""Conditional per-layer noise predictors with a pooled guidance encoder.

A denoiser models one boundary's feature distribution. Its networks operate
in a standardized feature space (per-channel mean 0 / std 1, statistics from
the clean training split); the stats ride along in the checkpoint so callers
can map in and out of that space.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch
import torch.nn as nn

from .. import io
from ..errors import DomainError, FormatError
from .schedule import NoiseSchedule, schedule_from_meta

TIME_EMB_DIM = 64
GUIDANCE_DIM = 128
HIDDEN_DIMS = (128, 256, 128)

DENOISER_FORMAT_VERSION = 1


def sinusoidal_time_table(n_steps: int, dim: int = TIME_EMB_DIM) -> torch.Tensor:
    """[n_steps + 1, dim] sinusoidal embeddings for step indices 0..n_steps."""
    half = dim // 2
    freqs = torch.exp(-math.log(10000.0) * torch.arange(half, dtype=torch.float32) / half)
    steps = torch.arange(n_steps + 1, dtype=torch.float32)
    args = steps[:, None] * freqs[None, :]
    return torch.cat([torch.cos(args), torch.sin(args)], dim=-1)


class DenoiserNet(nn.Module):
    """eps prediction MLP plus the guidance encoder, trained jointly."""

    def __init__(self, feature_dim: int, n_steps: int):
        super().__init__()
        self.feature_dim = feature_dim
        self.encoder = nn.Sequential(
            nn.Conv1d(feature_dim, GUIDANCE_DIM, 1),
            nn.ReLU(),
            nn.Conv1d(GUIDANCE_DIM, GUIDANCE_DIM, 1),
        )
        in_dim = feature_dim + TIME_EMB_DIM + GUIDANCE_DIM
        h1, h2, h3 = HIDDEN_DIMS
        self.mlp = nn.Sequential(
            nn.Linear(in_dim, h1),
            nn.SiLU(),
            nn.Linear(h1, h2),
            nn.SiLU(),
            nn.Linear(h2, h3),
            nn.SiLU(),
            nn.Linear(h3, feature_dim),
        )
        self.register_buffer("time_table", sinusoidal_time_table(n_steps))

    def encode(self, z: torch.Tensor) -> torch.Tensor:
        """Guidance latent for [B, N, C] standardized features -> [B, G]."""
        return self.encoder(z.transpose(1, 2)).max(dim=-1).values

    def forward(self, x: torch.Tensor, n: torch.Tensor, z_x: torch.Tensor) -> torch.Tensor:
        """Predict the noise in x.

        Args:
            x: [B, N, C] noised standardized features.
            n: [B] integer step indices in [1, n_steps].
            z_x: [B, G] guidance latents.

        Returns:
            [B, N, C] predicted noise.
        """
        b, npts, _ = x.shape
        t_emb = self.time_table[n]  # [B, T]
        cond = torch.cat([t_emb, z_x], dim=-1)  # [B, T+G]
        inp = torch.cat([x, cond.unsqueeze(1).expand(-1, npts, -1)], dim=-1)
        return self.mlp(inp)


@dataclass
class ConditionalDenoiser:
    layer_index: int
    feature_dim: int
    schedule: NoiseSchedule
    net: DenoiserNet
    feat_mean: np.ndarray  # [C] float32
    feat_std: np.ndarray  # [C] float32, strictly positive
    training_log: list[dict] = field(default_factory=list)
    train_meta: dict = field(default_factory=dict)

    def freeze(self) -> "ConditionalDenoiser":
        self.net.eval()
        for p in self.net.parameters():
            p.requires_grad_(False)
        return self

    # -- standardized feature space -----------------------------------------

    def standardize(self, feats: torch.Tensor) -> torch.Tensor:
        mean = torch.from_numpy(self.feat_mean).to(feats.dtype)
        std = torch.from_numpy(self.feat_std).to(feats.dtype)
        return (feats - mean) / std

    def destandardize(self, feats: torch.Tensor) -> torch.Tensor:
        mean = torch.from_numpy(self.feat_mean).to(feats.dtype)
        std = torch.from_numpy(self.feat_std).to(feats.dtype)
        return feats * std + mean

    def encode(self, z: torch.Tensor) -> torch.Tensor:
        with torch.no_grad():
            return self.net.encode(z)

    def predict_eps(self, x: torch.Tensor, n: torch.Tensor, z_x: torch.Tensor) -> torch.Tensor:
        if x.shape[-1] != self.feature_dim:
            raise DomainError(f"denoiser expects feature dim {self.feature_dim}, got {x.shape[-1]}")
        with torch.no_grad():
            return self.net(x, n, z_x)


def build_denoiser(
    layer_index: int,
    feature_dim: int,
    schedule: NoiseSchedule,
    feat_mean: np.ndarray | None = None,
    feat_std: np.ndarray | None = None,
    seed: int | None = None,
) -> ConditionalDenoiser:
    if seed is not None:
        torch.manual_seed(seed)
    net = DenoiserNet(feature_dim, schedule.n_steps)
    net.eval()
    mean = np.zeros(feature_dim, dtype=np.float32) if feat_mean is None else np.asarray(feat_mean, np.float32)
    std = np.ones(feature_dim, dtype=np.float32) if feat_std is None else np.asarray(feat_std, np.float32)
    if mean.shape != (feature_dim,) or std.shape != (feature_dim,):
        raise DomainError("feature stats must be [C] vectors matching feature_dim")
    if not (std > 0).all():
        raise DomainError("feature std must be strictly positive")
    return ConditionalDenoiser(
        layer_index=layer_index,
        feature_dim=feature_dim,
        schedule=schedule,
        net=net,
        feat_mean=mean,
        feat_std=std,
    )


def save_denoiser(denoiser: ConditionalDenoiser, ckpt_dir: str | Path) -> None:
    out = Path(ckpt_dir)
    out.mkdir(parents=True, exist_ok=True)
    meta = {
        "format_version": DENOISER_FORMAT_VERSION,
        "kind": "denoiser",
        "layer_index": denoiser.layer_index,
        "feature_dim": denoiser.feature_dim,
        "schedule": denoiser.schedule.to_meta(),
        "train_meta": denoiser.train_meta,
    }
    io.write_json(meta, out / "meta.json")
    arrays = {"norm.mean": denoiser.feat_mean, "norm.std": denoiser.feat_std}
    arrays.update({k: v.detach().cpu().numpy() for k, v in denoiser.net.state_dict().items()})
    io.save_param_blob(arrays, out / "params.bin")
    if denoiser.training_log:
        io.write_json(denoiser.training_log, out / "training_log.json")


def load_denoiser(ckpt_dir: str | Path) -> ConditionalDenoiser:
    ckpt = Path(ckpt_dir)
    meta = io.read_json(ckpt / "meta.json")
    if meta.get("kind") != "denoiser":
        raise FormatError(f"{ckpt}: not a denoiser checkpoint")
    schedule = schedule_from_meta(meta["schedule"])
    blob = io.load_param_blob(ckpt / "params.bin")
    den = build_denoiser(
        meta["layer_index"],
        meta["feature_dim"],
        schedule,
        feat_mean=blob.pop("norm.mean"),
        feat_std=blob.pop("norm.std"),
        seed=0,
    )
    state = den.net.state_dict()
    if set(blob) != set(state):
        raise FormatError(f"{ckpt}: parameter names do not match denoiser architecture")
    for name, tensor in state.items():
        tensor.copy_(torch.from_numpy(blob[name]).to(tensor.dtype).reshape(tensor.shape))
    den.train_meta = meta.get("train_meta", {})
    log_path = ckpt / "training_log.json"
    if log_path.exists():
        den.training_log = io.read_json(log_path)
    return den.freeze()
