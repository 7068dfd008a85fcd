"""Torch building blocks for the layered point cloud classifiers.

All blocks consume and produce per-point feature tensors shaped [B, N, C]
so that layer boundaries line up with the purifiable feature maps. Pooling
happens exactly once, inside the classification head.
"""

from __future__ import annotations

import torch
import torch.nn as nn


_INDEX_BITS = 21


def knn_indices(x: torch.Tensor, k: int) -> torch.Tensor:
    """k nearest neighbors (self excluded) per point in feature space.

    Distance ties are broken toward the smaller point index. Nonnegative
    float32 values sort identically to their bit patterns read as integers,
    so (distance, index) pairs are packed into one int64 key and selected
    with a single topk instead of a full stable sort.

    Args:
        x: [B, N, C] point features.
        k: neighbor count; clamped to N - 1.

    Returns:
        [B, N, k] neighbor indices.
    """
    n = x.shape[1]
    if n > (1 << _INDEX_BITS):
        raise ValueError(f"point count {n} exceeds kNN index capacity {1 << _INDEX_BITS}")
    k = min(k, n - 1)
    dist = torch.cdist(x, x).clamp_min(0.0)  # clamp maps any -0.0 to +0.0
    eye = torch.eye(n, dtype=torch.bool, device=x.device)
    dist = dist.masked_fill(eye, torch.inf)
    if dist.dtype == torch.float32:
        bits = dist.view(torch.int32).to(torch.int64)
    else:
        bits = dist.float().view(torch.int32).to(torch.int64)
    key = (bits << _INDEX_BITS) | torch.arange(n, device=x.device)
    smallest = key.topk(k, dim=-1, largest=False).values
    return smallest & ((1 << _INDEX_BITS) - 1)


class PointwiseBlock(nn.Module):
    """Shared per-point MLP: two 1x1 conv stages with batch norm and ReLU."""

    def __init__(self, in_dim: int, out_dim: int):
        super().__init__()
        self.net = nn.Sequential(
            nn.Conv1d(in_dim, out_dim, 1),
            nn.BatchNorm1d(out_dim),
            nn.ReLU(),
            nn.Conv1d(out_dim, out_dim, 1),
            nn.BatchNorm1d(out_dim),
            nn.ReLU(),
        )

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        # [B, N, C] -> [B, C, N] for conv, back afterwards
        return self.net(x.transpose(1, 2)).transpose(1, 2)


class EdgeConvBlock(nn.Module):
    """Edge convolution over a kNN graph rebuilt from the incoming features.

    Each point aggregates linear edge messages W @ [x_i ; x_j - x_i] + b by
    max over its k neighbors, then batch norm and LeakyReLU. Because the
    message is linear and the x_i terms are constant across neighbors, the
    aggregation reduces to (W1 x_i + b - W2 x_i) + max_j W2 x_j, computed
    with two per-point 1x1 convs instead of a matmul over all N*k edges.
    """

    def __init__(self, in_dim: int, out_dim: int, k: int = 16):
        super().__init__()
        self.k = k
        self.lin_center = nn.Conv1d(in_dim, out_dim, 1, bias=True)
        self.lin_neigh = nn.Conv1d(in_dim, out_dim, 1, bias=False)
        self.bn = nn.BatchNorm1d(out_dim)
        self.act = nn.LeakyReLU(0.2)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        b, n, _ = x.shape
        idx = knn_indices(x, self.k)  # [B, N, k]
        k = idx.shape[-1]
        xt = x.transpose(1, 2)  # [B, C, N]
        center = self.lin_center(xt)  # W1 x_i + b
        neigh = self.lin_neigh(xt)  # W2 x_j
        out_dim = center.shape[1]
        gather = idx.reshape(b, 1, n * k).expand(-1, out_dim, -1)
        neigh_max = torch.gather(neigh, 2, gather).reshape(b, out_dim, n, k).max(dim=-1).values
        out = self.act(self.bn(center - neigh + neigh_max))  # [B, C_out, N]
        return out.transpose(1, 2)


class PoolHead(nn.Module):
    """Symmetric max pooling over points followed by a small MLP to logits."""

    def __init__(self, in_dim: int, n_classes: int, hidden: int = 64):
        super().__init__()
        self.mlp = nn.Sequential(
            nn.Linear(in_dim, hidden),
            nn.ReLU(),
            nn.Linear(hidden, n_classes),
        )

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        pooled = x.max(dim=1).values  # [B, C]
        return self.mlp(pooled)
