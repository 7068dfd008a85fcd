"""White-box attacks against a frozen layered classifier.

All six attacks are gradient-based and operate on normalized clouds without
re-normalizing afterward, so perturbation budgets stay meaningful. The
batched entry point :func:`run_attack` drives whole evaluation sets; the
per-kind functions take a single cloud and mirror it.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import torch
import torch.nn.functional as F

from .errors import DomainError
from .geometry import PointCloud
from .models.classifier import LayeredClassifier
from .rng import derive_rng

ATTACK_KINDS = ("pgd_linf", "pgd_l2", "cw", "knn", "add", "drop")

# distance floor inside differentiable kNN distances; keeps gradients finite
# for coincident points
_DIST_EPS = 1e-12


@dataclass(frozen=True)
class AttackConfig:
    kind: str
    epsilon: float = 0.0
    steps: int = 0
    step_size: float = 0.0
    c_weight: float = 1.0  # cw/knn/add margin weight
    lr: float = 0.01  # cw/knn/add optimizer rate
    kappa: float = 0.0  # cw/knn hinge offset
    knn_lambda: float = 5.0
    knn_k: int = 5
    n_added: int = 64
    n_dropped: int = 200
    drop_rounds: int = 10
    seed: int = 0

    def __post_init__(self):
        if self.kind not in ATTACK_KINDS:
            raise DomainError(f"unknown attack kind {self.kind!r}")
        if self.epsilon < 0:
            raise DomainError("epsilon must be >= 0")
        if self.steps < 0:
            raise DomainError("steps must be >= 0")


def default_attack_config(kind: str, n_points: int = 1024, seed: int = 0) -> AttackConfig:
    """Stock budgets; the PGD-L2 ball radius scales with cloud size."""
    if kind == "pgd_linf":
        return AttackConfig(kind=kind, epsilon=0.05, steps=50, step_size=0.005, seed=seed)
    if kind == "pgd_l2":
        eps = 0.05 * math.sqrt(n_points * 3) * 0.45
        return AttackConfig(kind=kind, epsilon=eps, steps=50, step_size=eps / 10, seed=seed)
    if kind == "cw":
        return AttackConfig(kind=kind, steps=200, c_weight=1.0, lr=0.01, seed=seed)
    if kind == "knn":
        return AttackConfig(kind=kind, steps=200, c_weight=1.0, lr=0.01, knn_lambda=5.0, knn_k=5, seed=seed)
    if kind == "add":
        return AttackConfig(kind=kind, steps=200, c_weight=1.0, lr=0.01, n_added=64, seed=seed)
    if kind == "drop":
        return AttackConfig(kind=kind, n_dropped=200, drop_rounds=10, seed=seed)
    raise DomainError(f"unknown attack kind {kind!r}")


@dataclass
class AttackResult:
    adv_cloud: PointCloud
    success: bool
    loss_trace: np.ndarray
    budget_used: float


def _batch_logits(model: LayeredClassifier, x: torch.Tensor) -> torch.Tensor:
    logits, _ = model.forward_batch(x)
    return logits


def _ce_vec(logits: torch.Tensor, y: torch.Tensor) -> torch.Tensor:
    return F.cross_entropy(logits, y, reduction="none")


def _margin(logits: torch.Tensor, y: torch.Tensor) -> torch.Tensor:
    """logit_y - max_{k != y} logit_k, per sample."""
    b = logits.shape[0]
    true = logits[torch.arange(b), y]
    masked = logits.clone()
    masked[torch.arange(b), y] = -torch.inf
    return true - masked.max(dim=1).values


def project_l2(x: torch.Tensor, x0: torch.Tensor, eps: float) -> torch.Tensor:
    """Project each sample of x onto the L2 ball of radius eps around x0."""
    delta = x - x0
    norms = delta.reshape(delta.shape[0], -1).norm(dim=1)
    factor = torch.where(norms > eps, eps / norms.clamp_min(1e-30), torch.ones_like(norms))
    return x0 + delta * factor.view(-1, 1, 1)


def _knn_mean_distance(x: torch.Tensor, k: int) -> torch.Tensor:
    """Mean over points of mean Euclidean distance to k nearest neighbors."""
    n = x.shape[1]
    k = min(k, n - 1)
    sq = torch.cdist(x, x).pow(2)
    eye = torch.eye(n, dtype=torch.bool, device=x.device)
    d = torch.sqrt(sq.masked_fill(eye, torch.inf) + _DIST_EPS)
    knn = d.topk(k, dim=-1, largest=False).values  # [B, N, k]
    return knn.mean(dim=(1, 2))


# ---------------------------------------------------------------------------
# batched attack cores
# ---------------------------------------------------------------------------


def _pgd_batch(model, x0, y, cfg, iterate_hook=None):
    linf = cfg.kind == "pgd_linf"
    x = x0.clone()
    traces = []
    for step in range(cfg.steps):
        x = x.detach().requires_grad_(True)
        losses = _ce_vec(_batch_logits(model, x), y)
        traces.append(losses.detach().numpy().copy())
        losses.sum().backward()
        grad = x.grad
        with torch.no_grad():
            if linf:
                x = x + cfg.step_size * grad.sign()
                x = x0 + (x - x0).clamp(-cfg.epsilon, cfg.epsilon)
            else:
                gnorm = grad.reshape(grad.shape[0], -1).norm(dim=1).clamp_min(1e-30)
                x = x + cfg.step_size * grad / gnorm.view(-1, 1, 1)
                x = project_l2(x, x0, cfg.epsilon)
        if iterate_hook is not None:
            iterate_hook(step, x.detach().numpy())
    return x.detach(), np.array(traces).T if traces else np.zeros((x0.shape[0], 0))


def _cw_batch(model, x0, y, cfg):
    b = x0.shape[0]
    delta = torch.zeros_like(x0, requires_grad=True)
    opt = torch.optim.Adam([delta], lr=cfg.lr)
    best_adv = x0.clone()
    best_norm = torch.full((b,), torch.inf)
    found = torch.zeros(b, dtype=torch.bool)
    traces = []
    use_knn = cfg.kind == "knn" and cfg.knn_lambda != 0.0
    for _ in range(cfg.steps):
        adv = x0 + delta
        logits = _batch_logits(model, adv)
        sq_norm = delta.reshape(b, -1).pow(2).sum(dim=1)
        hinge = torch.clamp(_margin(logits, y), min=-cfg.kappa)
        obj = sq_norm + cfg.c_weight * hinge
        if use_knn:
            obj = obj + cfg.knn_lambda * _knn_mean_distance(adv, cfg.knn_k)
        traces.append(obj.detach().numpy().copy())
        with torch.no_grad():
            succ = logits.argmax(dim=1) != y
            norms = sq_norm.detach().sqrt()
            better = succ & (norms < best_norm)
            if better.any():
                best_adv[better] = adv.detach()[better]
                best_norm[better] = norms[better]
                found |= better
        opt.zero_grad()
        obj.sum().backward()
        opt.step()
    final = x0 + delta.detach()
    adv_out = torch.where(found.view(-1, 1, 1), best_adv, final)
    return adv_out, np.array(traces).T if traces else np.zeros((b, 0))


def _add_batch(model, x0, y, cfg, sample_ids):
    b, n, _ = x0.shape
    if cfg.n_added > n:
        raise DomainError(f"n_added {cfg.n_added} exceeds n_points {n}")
    if cfg.n_added == 0:
        return x0.clone(), np.zeros((b, 0))
    init = torch.empty(b, cfg.n_added, 3)
    for i in range(b):
        rng = derive_rng(cfg.seed, int(sample_ids[i]))
        idx = torch.from_numpy(rng.choice(n, size=cfg.n_added, replace=False))
        # hair-width offset off the duplicated source points; exact duplicates
        # lose every pooling argmax tie and would receive zero gradient forever
        offset = torch.from_numpy(rng.normal(0.0, 1e-3, size=(cfg.n_added, 3)).astype(np.float32))
        init[i] = x0[i, idx] + offset
    delta = torch.zeros_like(init, requires_grad=True)
    opt = torch.optim.Adam([delta], lr=cfg.lr)
    traces = []
    for _ in range(cfg.steps):
        added = init + delta
        adv = torch.cat([x0, added], dim=1)
        logits = _batch_logits(model, adv)
        # tie each added point to its nearest original point
        sq = torch.cdist(added, x0).pow(2).min(dim=-1).values  # [B, n_added]
        tie = sq.sum(dim=1)
        hinge = torch.clamp(_margin(logits, y), min=-cfg.kappa)
        obj = tie + cfg.c_weight * hinge
        traces.append(obj.detach().numpy().copy())
        opt.zero_grad()
        obj.sum().backward()
        opt.step()
    adv = torch.cat([x0, (init + delta).detach()], dim=1)
    return adv, np.array(traces).T


def _drop_batch(model, x0, y, cfg):
    b, n, _ = x0.shape
    if cfg.n_dropped >= n:
        raise DomainError(f"n_dropped {cfg.n_dropped} must be < n_points {n}")
    if cfg.drop_rounds < 1:
        raise DomainError("drop_rounds must be >= 1")
    x = x0.clone()
    remaining = cfg.n_dropped
    rounds = min(cfg.drop_rounds, cfg.n_dropped) if cfg.n_dropped else 0
    traces = []
    for r in range(rounds):
        share = remaining // (rounds - r)
        remaining -= share
        if share == 0:
            continue
        x = x.detach().requires_grad_(True)
        losses = _ce_vec(_batch_logits(model, x), y)
        traces.append(losses.detach().numpy().copy())
        losses.sum().backward()
        grad = x.grad
        with torch.no_grad():
            center = x.mean(dim=1, keepdim=True)
            radial = x - center
            r_norm = radial.norm(dim=-1).clamp_min(1e-12)
            # removal ~ moving the point to the centroid; drop the points whose
            # removal most increases the loss
            saliency = -(grad * radial).sum(dim=-1) / r_norm  # [B, N_cur]
            keep = saliency.topk(x.shape[1] - share, dim=1, largest=False).indices
            keep = keep.sort(dim=1).values
            x = torch.gather(x, 1, keep.unsqueeze(-1).expand(-1, -1, 3))
    return x.detach(), np.array(traces).T if traces else np.zeros((b, 0))


# ---------------------------------------------------------------------------
# public interface
# ---------------------------------------------------------------------------


def run_attack(
    model: LayeredClassifier,
    clouds: list[PointCloud],
    labels: list[int],
    cfg: AttackConfig,
    sample_ids: list[int] | None = None,
    iterate_hook=None,
) -> list[AttackResult]:
    """Attack a batch of equally-sized clouds; one result per sample."""
    if len(clouds) != len(labels):
        raise DomainError("clouds and labels length mismatch")
    model.net.eval()
    ids = sample_ids if sample_ids is not None else list(range(len(clouds)))
    x0 = torch.from_numpy(np.stack([c.points for c in clouds])).to(torch.float32)
    y = torch.tensor(labels, dtype=torch.long)

    if cfg.kind in ("pgd_linf", "pgd_l2"):
        if cfg.epsilon == 0.0 or cfg.steps == 0:
            adv, traces = x0.clone(), np.zeros((len(clouds), 0))
        else:
            adv, traces = _pgd_batch(model, x0, y, cfg, iterate_hook)
    elif cfg.kind in ("cw", "knn"):
        adv, traces = _cw_batch(model, x0, y, cfg)
    elif cfg.kind == "add":
        adv, traces = _add_batch(model, x0, y, cfg, ids)
    else:
        adv, traces = _drop_batch(model, x0, y, cfg)

    with torch.no_grad():
        final_logits = _batch_logits(model, adv)
        preds = final_logits.argmax(dim=1)

    results = []
    for i in range(len(clouds)):
        adv_np = adv[i].numpy().astype(np.float32)
        budget = _realized_budget(cfg, x0[i].numpy(), adv_np)
        results.append(
            AttackResult(
                adv_cloud=PointCloud(adv_np),
                success=bool(preds[i] != y[i]),
                loss_trace=np.asarray(traces[i], dtype=np.float64),
                budget_used=budget,
            )
        )
    return results


def _realized_budget(cfg: AttackConfig, x0: np.ndarray, adv: np.ndarray) -> float:
    if cfg.kind == "pgd_linf":
        return float(np.abs(adv - x0).max(initial=0.0))
    if cfg.kind in ("pgd_l2", "cw", "knn"):
        return float(np.linalg.norm(adv - x0))
    if cfg.kind == "add":
        added = adv[x0.shape[0] :]
        if added.size == 0:
            return 0.0
        d2 = ((added[:, None, :] - x0[None, :, :]) ** 2).sum(-1).min(axis=1)
        return float(np.sqrt(d2.sum()))
    return float(x0.shape[0] - adv.shape[0])


def _single(model, cloud, y, cfg, expected_kind, iterate_hook=None) -> AttackResult:
    if cfg.kind != expected_kind:
        raise DomainError(f"config kind {cfg.kind!r} does not match operation {expected_kind!r}")
    return run_attack(model, [cloud], [y], cfg, iterate_hook=iterate_hook)[0]


def pgd_linf(model, cloud: PointCloud, y: int, cfg: AttackConfig, iterate_hook=None) -> AttackResult:
    return _single(model, cloud, y, cfg, "pgd_linf", iterate_hook)


def pgd_l2(model, cloud: PointCloud, y: int, cfg: AttackConfig, iterate_hook=None) -> AttackResult:
    return _single(model, cloud, y, cfg, "pgd_l2", iterate_hook)


def cw_attack(model, cloud: PointCloud, y: int, cfg: AttackConfig) -> AttackResult:
    return _single(model, cloud, y, cfg, "cw")


def knn_attack(model, cloud: PointCloud, y: int, cfg: AttackConfig) -> AttackResult:
    return _single(model, cloud, y, cfg, "knn")


def add_attack(model, cloud: PointCloud, y: int, cfg: AttackConfig) -> AttackResult:
    return _single(model, cloud, y, cfg, "add")


def drop_attack(model, cloud: PointCloud, y: int, cfg: AttackConfig) -> AttackResult:
    return _single(model, cloud, y, cfg, "drop")
