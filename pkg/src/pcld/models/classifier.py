"""Layered point cloud classifiers with resume-from-layer hooks.

A classifier is an ordered list of blocks mapping per-point features
z(0) -> z(1) -> ... -> z(L), followed by a pooling head that turns z(L)
into class logits. Every boundary z(i) is exposed both as an output of
``forward`` and as an entry point for ``forward_from_layer``, which is what
lets a purifier replace intermediate features and resume execution.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch
import torch.nn.functional as F

from .. import io
from ..errors import DomainError, FormatError
from ..geometry import PointCloud
from .layers import EdgeConvBlock, PointwiseBlock, PoolHead

ARCH_IDS = ("pointnet-mini", "dgcnn-mini")

CHECKPOINT_FORMAT_VERSION = 1

# per-point feature widths at each purifiable boundary, z(0) included
_BOUNDARY_DIMS = {
    "pointnet-mini": (3, 64, 128),
    "dgcnn-mini": (3, 64, 64, 128),
}


@dataclass(frozen=True)
class LayerSpec:
    index: int
    input_dim: int
    output_dim: int
    kind: str  # pointwise-mlp | edgeconv | pool-head


@dataclass
class LayerFeatures:
    """Per-point activations z(0)..z(L) captured during a forward pass."""

    tensors: list[np.ndarray]

    @property
    def dims(self) -> list[int]:
        return [t.shape[1] for t in self.tensors]

    def __getitem__(self, i: int) -> np.ndarray:
        return self.tensors[i]


@dataclass
class LayeredClassifier:
    arch_id: str
    n_classes: int
    knn_k: int
    layer_specs: list[LayerSpec]
    net: torch.nn.ModuleList
    training_log: list[dict] = field(default_factory=list)
    train_meta: dict = field(default_factory=dict)

    @property
    def boundary_dims(self) -> list[int]:
        """Feature width at each purifiable boundary z(0)..z(L)."""
        return list(_BOUNDARY_DIMS[self.arch_id])

    @property
    def n_boundaries(self) -> int:
        return len(self.boundary_dims)

    @property
    def dtype(self) -> torch.dtype:
        return next(self.net.parameters()).dtype

    def to(self, dtype: torch.dtype) -> "LayeredClassifier":
        self.net.to(dtype)
        return self

    def freeze(self) -> "LayeredClassifier":
        self.net.eval()
        for p in self.net.parameters():
            p.requires_grad_(False)
        return self

    # -- torch-level paths (batched, autograd-capable) ----------------------

    def forward_batch(self, pts: torch.Tensor) -> tuple[torch.Tensor, list[torch.Tensor]]:
        """Run [B, N, 3] points through all blocks, capturing every boundary."""
        if pts.ndim != 3 or pts.shape[-1] != 3:
            raise DomainError(f"expected [B, N, 3] input, got {tuple(pts.shape)}")
        feats = [pts]
        z = pts
        for block in self.net[:-1]:
            z = block(z)
            feats.append(z)
        logits = self.net[-1](z)
        return logits, feats

    def forward_from_boundary(self, i: int, z: torch.Tensor) -> torch.Tensor:
        """Resume from boundary i with [B, N, C_i] features, return logits."""
        if not 0 <= i < self.n_boundaries:
            raise DomainError(f"boundary index {i} outside [0, {self.n_boundaries})")
        if z.ndim != 3 or z.shape[-1] != self.boundary_dims[i]:
            raise DomainError(
                f"boundary {i} expects feature dim {self.boundary_dims[i]}, got shape {tuple(z.shape)}"
            )
        for block in self.net[i:-1]:
            z = block(z)
        return self.net[-1](z)


def build_classifier(
    arch_id: str,
    n_classes: int = 8,
    knn_k: int = 16,
    seed: int | None = None,
) -> LayeredClassifier:
    """Construct an untrained classifier with deterministic initialization."""
    if arch_id not in ARCH_IDS:
        raise DomainError(f"unknown arch_id {arch_id!r}, expected one of {ARCH_IDS}")
    if seed is not None:
        torch.manual_seed(seed)
    if arch_id == "pointnet-mini":
        blocks = [PointwiseBlock(3, 64), PointwiseBlock(64, 128), PoolHead(128, n_classes)]
        kinds = ["pointwise-mlp", "pointwise-mlp", "pool-head"]
    else:
        blocks = [
            EdgeConvBlock(3, 64, knn_k),
            EdgeConvBlock(64, 64, knn_k),
            EdgeConvBlock(64, 128, knn_k),
            PoolHead(128, n_classes),
        ]
        kinds = ["edgeconv", "edgeconv", "edgeconv", "pool-head"]
    dims = _BOUNDARY_DIMS[arch_id]
    specs = [
        LayerSpec(index=i, input_dim=dims[i], output_dim=dims[i + 1] if i + 1 < len(dims) else n_classes, kind=kinds[i])
        for i in range(len(blocks))
    ]
    net = torch.nn.ModuleList(blocks)
    net.eval()
    return LayeredClassifier(
        arch_id=arch_id,
        n_classes=n_classes,
        knn_k=knn_k,
        layer_specs=specs,
        net=net,
    )


# ---------------------------------------------------------------------------
# public single-sample operations (numpy in, numpy out)
# ---------------------------------------------------------------------------


def forward(model: LayeredClassifier, pc: PointCloud) -> tuple[np.ndarray, LayerFeatures]:
    """Classify one cloud; returns (logits[K], features at every boundary)."""
    model.net.eval()
    pts = torch.from_numpy(pc.points).to(model.dtype).unsqueeze(0)
    with torch.no_grad():
        logits, feats = model.forward_batch(pts)
    np_feats = [f.squeeze(0).cpu().numpy() for f in feats]
    np_feats[0] = pc.points  # z(0) is the input itself, bit for bit
    return logits.squeeze(0).cpu().numpy(), LayerFeatures(np_feats)


def forward_from_layer(model: LayeredClassifier, i: int, z: np.ndarray) -> np.ndarray:
    """Apply blocks i..L and the head to boundary-i features [N, C_i]."""
    z = np.asarray(z)
    if z.ndim != 2:
        raise DomainError(f"expected [N, C] features, got shape {z.shape}")
    model.net.eval()
    zt = torch.from_numpy(np.ascontiguousarray(z)).to(model.dtype).unsqueeze(0)
    with torch.no_grad():
        logits = model.forward_from_boundary(i, zt)
    return logits.squeeze(0).cpu().numpy()


def cross_entropy(y: int, logits: np.ndarray) -> float:
    """-log softmax(logits)[y], computed with log-sum-exp stabilization."""
    logits = np.asarray(logits, dtype=np.float64).ravel()
    if not 0 <= y < logits.shape[0]:
        raise DomainError(f"label {y} outside [0, {logits.shape[0]})")
    m = logits.max()
    lse = m + np.log(np.exp(logits - m).sum())
    return float(lse - logits[y])


def input_gradient(model: LayeredClassifier, pc: PointCloud, y: int) -> np.ndarray:
    """Gradient of the cross-entropy loss with respect to the input points."""
    if not 0 <= y < model.n_classes:
        raise DomainError(f"label {y} outside [0, {model.n_classes})")
    model.net.eval()
    pts = torch.from_numpy(pc.points).to(model.dtype).unsqueeze(0)
    pts.requires_grad_(True)
    logits, _ = model.forward_batch(pts)
    loss = F.cross_entropy(logits, torch.tensor([y]))
    loss.backward()
    grad = pts.grad.squeeze(0).cpu().numpy()
    if not np.all(np.isfinite(grad)):
        raise DomainError("input gradient is non-finite")
    return grad


# ---------------------------------------------------------------------------
# checkpoints
# ---------------------------------------------------------------------------


def save_classifier(model: LayeredClassifier, ckpt_dir: str | Path) -> None:
    """Persist metadata + parameter blob (+ training log when present)."""
    out = Path(ckpt_dir)
    out.mkdir(parents=True, exist_ok=True)
    meta = {
        "format_version": CHECKPOINT_FORMAT_VERSION,
        "kind": "classifier",
        "arch_id": model.arch_id,
        "n_classes": model.n_classes,
        "knn_k": model.knn_k,
        "boundary_dims": model.boundary_dims,
        "layer_specs": [
            {"index": s.index, "input_dim": s.input_dim, "output_dim": s.output_dim, "kind": s.kind}
            for s in model.layer_specs
        ],
        "train_meta": model.train_meta,
    }
    io.write_json(meta, out / "meta.json")
    state = {k: v.detach().cpu().numpy() for k, v in model.net.state_dict().items()}
    io.save_param_blob(state, out / "params.bin")
    if model.training_log:
        io.write_json(model.training_log, out / "training_log.json")


def load_classifier(ckpt_dir: str | Path) -> LayeredClassifier:
    ckpt = Path(ckpt_dir)
    meta = io.read_json(ckpt / "meta.json")
    if meta.get("kind") != "classifier":
        raise FormatError(f"{ckpt}: not a classifier checkpoint")
    model = build_classifier(meta["arch_id"], n_classes=meta["n_classes"], knn_k=meta["knn_k"], seed=0)
    blob = io.load_param_blob(ckpt / "params.bin")
    state = model.net.state_dict()
    if set(blob) != set(state):
        missing = set(state) ^ set(blob)
        raise FormatError(f"{ckpt}: parameter names do not match architecture ({sorted(missing)[:4]}...)")
    for name, tensor in state.items():
        arr = torch.from_numpy(blob[name]).to(tensor.dtype).reshape(tensor.shape)
        tensor.copy_(arr)
    model.train_meta = meta.get("train_meta", {})
    log_path = ckpt / "training_log.json"
    if log_path.exists():
        model.training_log = io.read_json(log_path)
    return model.freeze()
