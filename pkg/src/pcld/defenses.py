"""Purification defenses and the truncation-time grid search.

Four defenses wrap a frozen classifier: random subsampling (srs), statistical
outlier removal (sor), input-level diffusion purification (pointdp), and
recursive layerwise diffusion purification (pcld). The pcld pipeline purifies
boundary i, applies block i, and repeats, so purified features replace the
originals for all downstream computation.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np
import torch
from scipy.spatial import cKDTree

from .diffusion.denoiser import ConditionalDenoiser
from .diffusion.purify import MAX_T_STAR, PurifyParams, purify_batch, purify_seed
from .diffusion.schedule import NoiseSchedule
from .errors import ConfigError, DomainError
from .geometry import LabeledCloud, PointCloud
from .models.classifier import LayeredClassifier
from .rng import derive_rng

DEFENSE_KINDS = ("none", "srs", "sor", "pointdp", "pcld")

GRID_STEP_MULTIPLE = 5
GRID_MAX_STEPS = 100


@dataclass(frozen=True)
class DefenseConfig:
    kind: str
    keep_n: int | None = None  # srs; defaults to 3/4 of the cloud
    sor_k: int = 10
    sor_alpha: float = 1.1
    t_star: float = 0.0  # pointdp
    t_list: tuple[float, ...] = ()  # pcld, one entry per boundary
    seed: int = 0

    def __post_init__(self):
        if self.kind not in DEFENSE_KINDS:
            raise DomainError(f"unknown defense kind {self.kind!r}")
        for t in (self.t_star, *self.t_list):
            if not 0.0 <= t <= MAX_T_STAR:
                raise DomainError(f"truncation time {t} outside [0, {MAX_T_STAR}]")


@dataclass
class DefenseStack:
    """A defense bound to its classifier and (for diffusion kinds) denoisers."""

    config: DefenseConfig
    model: LayeredClassifier
    denoisers: dict[int, ConditionalDenoiser] = field(default_factory=dict)

    def __post_init__(self):
        dims = self.model.boundary_dims
        for idx, den in self.denoisers.items():
            if not 0 <= idx < len(dims):
                raise ConfigError(f"denoiser layer index {idx} outside model boundaries [0, {len(dims)})")
            if den.feature_dim != dims[idx]:
                raise ConfigError(
                    f"denoiser at boundary {idx} has feature dim {den.feature_dim}, model expects {dims[idx]}"
                )
        if self.config.kind == "pcld":
            if len(self.config.t_list) != len(dims):
                raise ConfigError(
                    f"pcld t_list has {len(self.config.t_list)} entries, model has {len(dims)} boundaries"
                )
            missing = [i for i, t in enumerate(self.config.t_list) if t > 0 and i not in self.denoisers]
            if missing:
                raise ConfigError(f"pcld requires denoisers for boundaries {missing}")
        if self.config.kind == "pointdp" and self.config.t_star > 0 and 0 not in self.denoisers:
            raise ConfigError("pointdp requires a boundary-0 denoiser")

    def schedule(self) -> NoiseSchedule | None:
        for den in self.denoisers.values():
            return den.schedule
        return None


# ---------------------------------------------------------------------------
# classical filters
# ---------------------------------------------------------------------------


def srs(cloud: PointCloud, keep_n: int, seed: int) -> PointCloud:
    """Uniform random subset of keep_n points, without replacement."""
    n = cloud.n_points
    if not 0 < keep_n <= n:
        raise DomainError(f"keep_n must be in (0, {n}], got {keep_n}")
    rng = derive_rng(seed)
    idx = rng.choice(n, size=keep_n, replace=False)
    return PointCloud(cloud.points[idx])


def sor(cloud: PointCloud, k: int = 10, alpha: float = 1.1) -> PointCloud:
    """Drop points whose mean kNN distance exceeds mean + alpha * std.

    The spread is the sample standard deviation (n-1 denominator). At least
    one point always survives.
    """
    n = cloud.n_points
    if k >= n:
        raise DomainError(f"k must be < n_points ({n}), got {k}")
    if alpha <= 0:
        raise DomainError(f"alpha must be > 0, got {alpha}")
    pts = cloud.points.astype(np.float64)
    dists, _ = cKDTree(pts).query(pts, k=k + 1)  # first neighbor is the point itself
    mean_knn = dists[:, 1:].mean(axis=1)
    threshold = mean_knn.mean() + alpha * mean_knn.std(ddof=1)
    keep = mean_knn <= threshold
    if not keep.any():
        keep[np.argmin(mean_knn)] = True
    return PointCloud(cloud.points[keep])


# ---------------------------------------------------------------------------
# diffusion defenses
# ---------------------------------------------------------------------------


def _pcld_t_list(stack: DefenseStack) -> tuple[float, ...]:
    if stack.config.kind == "pointdp":
        t = (stack.config.t_star,) + (0.0,) * (stack.model.n_boundaries - 1)
        return t
    return stack.config.t_list


def defend_logits_batch(
    stack: DefenseStack,
    clouds: list[PointCloud],
    sample_ids: list[int],
    batch_size: int = 64,
) -> np.ndarray:
    """Defended logits for a batch of clouds, [B, K]."""
    if len(clouds) != len(sample_ids):
        raise DomainError("clouds and sample_ids length mismatch")
    kind = stack.config.kind
    model = stack.model
    model.net.eval()

    if kind in ("srs", "sor"):
        filtered = []
        for c in clouds:
            if kind == "srs":
                keep = stack.config.keep_n if stack.config.keep_n is not None else max(1, (3 * c.n_points) // 4)
                filtered.append(srs(c, keep, stack.config.seed))
            else:
                filtered.append(sor(c, stack.config.sor_k, stack.config.sor_alpha))
        out = np.empty((len(clouds), model.n_classes), dtype=np.float32)
        with torch.no_grad():
            for i, c in enumerate(filtered):
                logits, _ = model.forward_batch(torch.from_numpy(c.points).to(model.dtype).unsqueeze(0))
                out[i] = logits.squeeze(0).numpy()
        return out

    if kind == "none":
        t_list = (0.0,) * model.n_boundaries
    else:
        t_list = _pcld_t_list(stack)

    out_chunks = []
    for start in range(0, len(clouds), batch_size):
        chunk = clouds[start : start + batch_size]
        ids = sample_ids[start : start + batch_size]
        z = torch.from_numpy(np.stack([c.points for c in chunk])).to(torch.float32)
        with torch.no_grad():
            for boundary, t in enumerate(t_list):
                if t > 0.0:
                    den = stack.denoisers[boundary]
                    seeds = [purify_seed(stack.config.seed, sid, boundary) for sid in ids]
                    params = PurifyParams(t_star=t, seed=stack.config.seed)
                    z = torch.from_numpy(purify_batch(z.numpy(), params, den, seeds))
                z = model.net[boundary](z)
        out_chunks.append(z.numpy())
    return np.concatenate(out_chunks, axis=0)


def defend_pointdp(stack: DefenseStack, cloud: PointCloud, sample_id: int = 0) -> np.ndarray:
    """Purify at the input boundary only, then classify."""
    if stack.config.kind != "pointdp":
        raise ConfigError(f"stack kind {stack.config.kind!r}, expected 'pointdp'")
    return defend_logits_batch(stack, [cloud], [sample_id])[0]


def defend_pcld(stack: DefenseStack, cloud: PointCloud, sample_id: int = 0) -> np.ndarray:
    """Recursively purify every boundary with its truncation time, then classify."""
    if stack.config.kind != "pcld":
        raise ConfigError(f"stack kind {stack.config.kind!r}, expected 'pcld'")
    return defend_logits_batch(stack, [cloud], [sample_id])[0]


# ---------------------------------------------------------------------------
# truncation-time grid search
# ---------------------------------------------------------------------------


@dataclass
class GridScore:
    stage: int
    t_steps: int
    accuracy: float


def _validate_grid(grid: list[int]) -> list[int]:
    if not grid:
        raise DomainError("grid is empty")
    for t in grid:
        if t % GRID_STEP_MULTIPLE != 0 or not 0 <= t <= GRID_MAX_STEPS:
            raise DomainError(
                f"grid entries must be multiples of {GRID_STEP_MULTIPLE} schedule steps in [0, {GRID_MAX_STEPS}], got {t}"
            )
    return sorted(set(grid))


def grid_search_tstar(
    stack_template: DefenseStack,
    attacked_val_set: list[LabeledCloud],
    grid: list[int],
    mode: str,
) -> tuple[DefenseConfig, list[GridScore]]:
    """Tune truncation times on an attacked validation set.

    pointdp mode scans the grid exhaustively for the input boundary. The
    pcld-greedy mode fixes boundaries from input to deepest, scanning the
    grid at each stage with deeper stages disabled. Ties go to the smaller
    truncation time. Returns the winning config and the full score table.
    """
    if not attacked_val_set:
        raise DomainError("validation set is empty")
    if mode not in ("pointdp", "pcld-greedy"):
        raise DomainError(f"unknown grid search mode {mode!r}")
    grid = _validate_grid(grid)
    model = stack_template.model
    schedule = stack_template.schedule()
    if schedule is None:
        raise ConfigError("grid search requires at least one denoiser in the stack")
    n_steps = schedule.n_steps
    labels = np.array([s.label for s in attacked_val_set])
    ids = [s.sample_id for s in attacked_val_set]
    seed = stack_template.config.seed

    n_stages = 1 if mode == "pointdp" else model.n_boundaries
    scores: list[GridScore] = []
    chosen: list[float] = []

    # features at the current stage under the fixed prefix choices
    z = torch.from_numpy(np.stack([s.cloud.points for s in attacked_val_set])).to(torch.float32)

    with torch.no_grad():
        for stage in range(n_stages):
            best_t, best_acc, best_z = None, -1.0, None
            for t_steps in grid:
                t = t_steps / n_steps
                if t > 0.0:
                    if stage not in stack_template.denoisers:
                        raise ConfigError(f"grid search needs a denoiser for boundary {stage}")
                    seeds = [purify_seed(seed, sid, stage) for sid in ids]
                    z_try = torch.from_numpy(
                        purify_batch(z.numpy(), PurifyParams(t_star=t, seed=seed), stack_template.denoisers[stage], seeds)
                    )
                else:
                    z_try = z
                logits = model.forward_from_boundary(stage, z_try)
                acc = float((logits.argmax(dim=1).numpy() == labels).mean())
                scores.append(GridScore(stage=stage, t_steps=t_steps, accuracy=acc))
                if acc > best_acc:
                    best_t, best_acc, best_z = t, acc, z_try
            chosen.append(best_t)
            # advance the fixed prefix into the next stage
            if stage < model.n_boundaries - 1:
                z = model.net[stage](best_z)

    if mode == "pointdp":
        config = replace(stack_template.config, kind="pointdp", t_star=chosen[0], t_list=())
    else:
        config = replace(stack_template.config, kind="pcld", t_star=0.0, t_list=tuple(chosen))
    return config, scores
