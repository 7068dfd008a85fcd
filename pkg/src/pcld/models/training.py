"""Classifier training and batched evaluation utilities."""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np
import torch
import torch.nn.functional as F

from ..errors import DomainError, NumericError
from ..geometry import LabeledCloud, PointCloud
from .classifier import LayeredClassifier, build_classifier


@dataclass
class TrainConfig:
    epochs: int = 30
    batch_size: int = 32
    lr: float = 1e-3
    seed: int = 0


def _stack_clouds(samples: list[LabeledCloud]) -> tuple[torch.Tensor, torch.Tensor]:
    pts = torch.from_numpy(np.stack([s.cloud.points for s in samples]))
    labels = torch.tensor([s.label for s in samples], dtype=torch.long)
    return pts, labels


def train_classifier(
    train_set: list[LabeledCloud],
    arch_id: str,
    config: TrainConfig,
    n_classes: int = 8,
) -> LayeredClassifier:
    """Train a classifier from scratch; returns it frozen, with a per-epoch log.

    Deterministic given ``config.seed``: initialization, batch order and all
    updates derive from it.
    """
    if not train_set:
        raise DomainError("training set is empty")
    torch.manual_seed(config.seed)
    model = build_classifier(arch_id, n_classes=n_classes)
    pts_all, labels_all = _stack_clouds(train_set)
    n = pts_all.shape[0]
    opt = torch.optim.Adam(model.net.parameters(), lr=config.lr)
    sched = torch.optim.lr_scheduler.CosineAnnealingLR(opt, T_max=max(config.epochs, 1))
    shuffle_gen = torch.Generator().manual_seed(config.seed + 1)

    log: list[dict] = []
    model.net.train()
    for epoch in range(config.epochs):
        perm = torch.randperm(n, generator=shuffle_gen)
        losses, correct = [], 0
        for start in range(0, n, config.batch_size):
            idx = perm[start : start + config.batch_size]
            pts, labels = pts_all[idx], labels_all[idx]
            logits, _ = model.forward_batch(pts)
            loss = F.cross_entropy(logits, labels)
            if not torch.isfinite(loss):
                raise NumericError(
                    f"non-finite training loss at epoch {epoch}, batch {start // config.batch_size} "
                    f"(arch={arch_id}, lr={config.lr})"
                )
            opt.zero_grad()
            loss.backward()
            opt.step()
            losses.append(float(loss.detach()))
            correct += int((logits.argmax(dim=1) == labels).sum())
        sched.step()
        log.append({"epoch": epoch, "loss": float(np.mean(losses)), "train_acc": correct / n})
    model.training_log = log
    model.train_meta = {"arch_id": arch_id, "n_classes": n_classes, "n_train": n, **asdict(config)}
    return model.freeze()


def predict_batch(model: LayeredClassifier, points: np.ndarray, batch_size: int = 64) -> np.ndarray:
    """Logits for a stack of clouds [B, N, 3] -> [B, K]."""
    model.net.eval()
    out = []
    with torch.no_grad():
        for start in range(0, points.shape[0], batch_size):
            pts = torch.from_numpy(points[start : start + batch_size]).to(model.dtype)
            logits, _ = model.forward_batch(pts)
            out.append(logits.cpu().numpy())
    return np.concatenate(out, axis=0)


def eval_accuracy(
    model: LayeredClassifier,
    clouds: list[PointCloud],
    labels: list[int],
    batch_size: int = 64,
) -> float:
    """Top-1 accuracy; handles clouds of differing point counts."""
    if len(clouds) != len(labels):
        raise DomainError("clouds and labels length mismatch")
    sizes = {c.n_points for c in clouds}
    preds = np.empty(len(clouds), dtype=np.int64)
    if len(sizes) == 1:
        stacked = np.stack([c.points for c in clouds])
        preds[:] = predict_batch(model, stacked, batch_size).argmax(axis=1)
    else:
        model.net.eval()
        with torch.no_grad():
            for i, c in enumerate(clouds):
                pts = torch.from_numpy(c.points).to(model.dtype).unsqueeze(0)
                logits, _ = model.forward_batch(pts)
                preds[i] = int(logits.argmax())
    return float(np.mean(preds == np.asarray(labels)))


def extract_layer_features(
    model: LayeredClassifier,
    clouds: list[PointCloud],
    boundary: int,
    batch_size: int = 64,
) -> np.ndarray:
    """Clean boundary features for a set of clouds, [M, N, C_boundary]."""
    model.net.eval()
    chunks = []
    with torch.no_grad():
        for start in range(0, len(clouds), batch_size):
            pts = torch.from_numpy(np.stack([c.points for c in clouds[start : start + batch_size]]))
            _, feats = model.forward_batch(pts.to(model.dtype))
            chunks.append(feats[boundary].cpu().numpy().astype(np.float32))
    return np.concatenate(chunks, axis=0)
