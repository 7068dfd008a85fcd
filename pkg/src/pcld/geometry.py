"""Synthetic point cloud dataset: procedural shapes, normalization, metrics, I/O.

Eight well-separated procedural classes stand in for a full-scale CAD corpus
so that small classifiers reach high clean accuracy and attack/defense deltas
are measurable on a desk machine.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.spatial import cKDTree

from . import io
from .errors import DomainError, FormatError
from .rng import derive_rng, derive_seed

CLASS_NAMES = (
    "sphere",
    "cube",
    "torus",
    "cone",
    "cylinder",
    "plane",
    "helix",
    "double_sphere",
)

N_CLASSES = len(CLASS_NAMES)
JITTER_SIGMA = 0.01
MIN_POINTS = 8

DEFAULT_N_POINTS = 1024
FAST_N_POINTS = 256
DEFAULT_TRAIN_PER_CLASS = 400
DEFAULT_TEST_PER_CLASS = 80


@dataclass(frozen=True)
class PointCloud:
    """An (N, 3) array of spatial coordinates.

    The container itself only requires finite coordinates and at least one
    point (metric and subsampling helpers legitimately produce tiny clouds);
    generated dataset clouds additionally satisfy ``n_points >= 8`` and the
    normalization invariants, checked by :func:`validate_dataset_cloud`.
    """

    points: np.ndarray

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=np.float32)
        if pts.ndim != 2 or pts.shape[1] != 3:
            raise DomainError(f"point cloud must be (N, 3), got {pts.shape}")
        if pts.shape[0] < 1:
            raise DomainError("point cloud must contain at least one point")
        if not np.all(np.isfinite(pts)):
            raise DomainError("point cloud contains non-finite coordinates")
        object.__setattr__(self, "points", pts)

    @property
    def n_points(self) -> int:
        return self.points.shape[0]


@dataclass(frozen=True)
class LabeledCloud:
    cloud: PointCloud
    label: int
    sample_id: int

    def __post_init__(self):
        if not 0 <= self.label < N_CLASSES:
            raise DomainError(f"label {self.label} outside [0, {N_CLASSES})")


@dataclass
class SampleRecord:
    path: str
    label: int
    seed: int
    sample_id: int


@dataclass
class DatasetManifest:
    class_names: list[str]
    n_points: int
    splits: dict[str, list[SampleRecord]]
    format_version: int = io.MANIFEST_FORMAT_VERSION
    root: Path = field(default_factory=Path)

    def records(self, split: str) -> list[SampleRecord]:
        return self.splits[split]


# ---------------------------------------------------------------------------
# shape samplers; each returns raw (unjittered, unnormalized) surface points
# ---------------------------------------------------------------------------


def _sample_sphere(rng: np.random.Generator, n: int) -> np.ndarray:
    v = rng.standard_normal((n, 3))
    v /= np.linalg.norm(v, axis=1, keepdims=True)
    return v


def _sample_cube(rng: np.random.Generator, n: int) -> np.ndarray:
    face = rng.integers(0, 6, size=n)
    uv = rng.uniform(-1.0, 1.0, size=(n, 2))
    pts = np.empty((n, 3))
    axis = face % 3
    sign = np.where(face < 3, 1.0, -1.0)
    for i in range(n):
        others = [a for a in range(3) if a != axis[i]]
        pts[i, axis[i]] = sign[i]
        pts[i, others[0]] = uv[i, 0]
        pts[i, others[1]] = uv[i, 1]
    return pts


def _sample_torus(rng: np.random.Generator, n: int) -> np.ndarray:
    major, minor = 1.0, 0.4
    theta = np.empty(n)
    phi = np.empty(n)
    filled = 0
    # rejection sampling for uniform surface area: accept ~ (R + r cos phi)
    while filled < n:
        cand_t = rng.uniform(0.0, 2 * np.pi, size=2 * (n - filled))
        cand_p = rng.uniform(0.0, 2 * np.pi, size=2 * (n - filled))
        accept = rng.uniform(0.0, 1.0, size=2 * (n - filled)) < (major + minor * np.cos(cand_p)) / (major + minor)
        take = min(int(accept.sum()), n - filled)
        theta[filled : filled + take] = cand_t[accept][:take]
        phi[filled : filled + take] = cand_p[accept][:take]
        filled += take
    x = (major + minor * np.cos(phi)) * np.cos(theta)
    y = (major + minor * np.cos(phi)) * np.sin(theta)
    z = minor * np.sin(phi)
    return np.stack([x, y, z], axis=1)


def _sample_cone(rng: np.random.Generator, n: int) -> np.ndarray:
    # lateral surface, apex (0,0,0.75), base circle radius 1 at z=-0.75
    s = np.sqrt(rng.uniform(0.0, 1.0, size=n))  # area element grows linearly from apex
    theta = rng.uniform(0.0, 2 * np.pi, size=n)
    x = s * np.cos(theta)
    y = s * np.sin(theta)
    z = 0.75 - 1.5 * s
    return np.stack([x, y, z], axis=1)


def _sample_cylinder(rng: np.random.Generator, n: int) -> np.ndarray:
    theta = rng.uniform(0.0, 2 * np.pi, size=n)
    z = rng.uniform(-1.0, 1.0, size=n)
    return np.stack([np.cos(theta), np.sin(theta), z], axis=1)


def _sample_plane(rng: np.random.Generator, n: int) -> np.ndarray:
    xy = rng.uniform(-1.0, 1.0, size=(n, 2))
    return np.concatenate([xy, np.zeros((n, 1))], axis=1)


def _sample_helix(rng: np.random.Generator, n: int) -> np.ndarray:
    turns = 2.5
    u = rng.uniform(0.0, 1.0, size=n)
    theta = 2 * np.pi * turns * u
    z = -1.0 + 2.0 * u
    return np.stack([np.cos(theta), np.sin(theta), z], axis=1)


def _sample_double_sphere(rng: np.random.Generator, n: int) -> np.ndarray:
    v = rng.standard_normal((n, 3))
    v /= np.linalg.norm(v, axis=1, keepdims=True)
    side = np.where(rng.uniform(size=n) < 0.5, -0.8, 0.8)
    pts = 0.45 * v
    pts[:, 0] += side
    return pts


_SAMPLERS = (
    _sample_sphere,
    _sample_cube,
    _sample_torus,
    _sample_cone,
    _sample_cylinder,
    _sample_plane,
    _sample_helix,
    _sample_double_sphere,
)


# ---------------------------------------------------------------------------
# operations
# ---------------------------------------------------------------------------


def generate_shape(class_id: int, n_points: int, seed: int) -> PointCloud:
    """Sample `n_points` on the parametric surface of one procedural class.

    Every class except the sphere gets a per-sample anisotropic scale in
    [0.8, 1.2] and a rotation about the z axis, so classifiers face real
    intra-class variation; the sphere stays metrically spherical. Per-point
    Gaussian jitter (sigma 0.01) is applied before normalization.
    Deterministic in (class_id, n_points, seed).
    """
    if not 0 <= class_id < N_CLASSES:
        raise DomainError(f"class_id {class_id} outside [0, {N_CLASSES})")
    if n_points < MIN_POINTS:
        raise DomainError(f"n_points must be >= {MIN_POINTS}, got {n_points}")
    rng = derive_rng(class_id, n_points, seed)
    pts = _SAMPLERS[class_id](rng, n_points)
    if class_id != 0:
        pts = pts * rng.uniform(0.8, 1.2, size=3)
        theta = rng.uniform(0.0, 2 * np.pi)
        c, s = np.cos(theta), np.sin(theta)
        rot = np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])
        pts = pts @ rot.T
    pts = pts + rng.normal(0.0, JITTER_SIGMA, size=pts.shape)
    return normalize(PointCloud(pts.astype(np.float32)))


def normalize(pc: PointCloud) -> PointCloud:
    """Center at the centroid and scale so the farthest point has norm 1."""
    pts = pc.points.astype(np.float64)
    centered = pts - pts.mean(axis=0)
    scale = np.linalg.norm(centered, axis=1).max()
    if scale < 1e-12:
        raise DomainError("degenerate cloud: all points coincide")
    return PointCloud((centered / scale).astype(np.float32))


def chamfer_distance(a: PointCloud, b: PointCloud) -> float:
    """Symmetric mean of squared nearest-neighbor distances between two sets."""
    if a.n_points == 0 or b.n_points == 0:
        raise DomainError("chamfer distance undefined for empty clouds")
    pa = a.points.astype(np.float64)
    pb = b.points.astype(np.float64)
    d_ab, _ = cKDTree(pb).query(pa, k=1)
    d_ba, _ = cKDTree(pa).query(pb, k=1)
    return 0.5 * (float(np.mean(d_ab**2)) + float(np.mean(d_ba**2)))


def save_cloud(pc: PointCloud, path: str | Path) -> None:
    io.save_cloud_array(pc.points, path)


def load_cloud(path: str | Path) -> PointCloud:
    pts = io.load_cloud_array(path)
    if pts.shape[1] != 3:
        raise FormatError(f"{path}: expected 3-dimensional points, header declares n_dims={pts.shape[1]}")
    return PointCloud(pts)


def validate_dataset_cloud(pc: PointCloud) -> None:
    """Check the invariants every stored dataset cloud must satisfy."""
    if pc.n_points < MIN_POINTS:
        raise DomainError(f"dataset cloud has {pc.n_points} points, minimum is {MIN_POINTS}")
    centroid = pc.points.astype(np.float64).mean(axis=0)
    max_norm = np.linalg.norm(pc.points.astype(np.float64), axis=1).max()
    if np.linalg.norm(centroid) > 1e-6:
        raise DomainError(f"dataset cloud centroid {centroid} not at origin")
    if abs(max_norm - 1.0) > 1e-6:
        raise DomainError(f"dataset cloud max norm {max_norm} != 1")


# ---------------------------------------------------------------------------
# dataset generation and loading
# ---------------------------------------------------------------------------


def generate_dataset(
    out_dir: str | Path,
    n_classes: int = N_CLASSES,
    n_points: int = DEFAULT_N_POINTS,
    train_per_class: int = DEFAULT_TRAIN_PER_CLASS,
    test_per_class: int = DEFAULT_TEST_PER_CLASS,
    seed: int = 0,
) -> DatasetManifest:
    """Generate a labeled dataset under `out_dir` and write its manifest.

    Per-sample RNG streams are keyed by (seed, sample_id), so the dataset is
    reproducible sample by sample.
    """
    if not 1 <= n_classes <= N_CLASSES:
        raise DomainError(f"n_classes must be in [1, {N_CLASSES}]")
    out = Path(out_dir)
    splits: dict[str, list[SampleRecord]] = {"train": [], "test": []}
    sample_id = 0
    for split, per_class in (("train", train_per_class), ("test", test_per_class)):
        split_dir = out / split
        split_dir.mkdir(parents=True, exist_ok=True)
        for class_id in range(n_classes):
            for _ in range(per_class):
                sample_seed = derive_seed(seed, sample_id)
                cloud = generate_shape(class_id, n_points, sample_seed)
                rel = f"{split}/{CLASS_NAMES[class_id]}_{sample_id:06d}.pcld"
                save_cloud(cloud, out / rel)
                splits[split].append(SampleRecord(path=rel, label=class_id, seed=sample_seed, sample_id=sample_id))
                sample_id += 1
    manifest = DatasetManifest(
        class_names=list(CLASS_NAMES[:n_classes]),
        n_points=n_points,
        splits=splits,
        root=out,
    )
    save_manifest(manifest, out / io.MANIFEST_NAME)
    return manifest


def save_manifest(manifest: DatasetManifest, path: str | Path) -> None:
    obj = {
        "format_version": manifest.format_version,
        "class_names": manifest.class_names,
        "n_points": manifest.n_points,
        "splits": {
            split: [
                {"path": r.path, "label": r.label, "seed": r.seed, "sample_id": r.sample_id}
                for r in records
            ]
            for split, records in manifest.splits.items()
        },
    }
    io.write_json(obj, path)


def load_manifest(dataset_dir: str | Path) -> DatasetManifest:
    root = Path(dataset_dir)
    obj = io.read_json(root / io.MANIFEST_NAME)
    if obj.get("format_version") != io.MANIFEST_FORMAT_VERSION:
        raise FormatError(f"unsupported manifest format_version {obj.get('format_version')}")
    splits = {
        split: [SampleRecord(**rec) for rec in records]
        for split, records in obj["splits"].items()
    }
    seen: set[int] = set()
    for records in splits.values():
        for rec in records:
            if rec.sample_id in seen:
                raise FormatError(f"duplicate sample_id {rec.sample_id} across splits")
            seen.add(rec.sample_id)
            if not (root / rec.path).exists():
                raise FormatError(f"manifest references missing file {rec.path}")
    return DatasetManifest(
        class_names=obj["class_names"],
        n_points=obj["n_points"],
        splits=splits,
        root=root,
    )


def load_split(manifest: DatasetManifest, split: str) -> list[LabeledCloud]:
    return [
        LabeledCloud(cloud=load_cloud(manifest.root / rec.path), label=rec.label, sample_id=rec.sample_id)
        for rec in manifest.records(split)
    ]


def dataset_fingerprint(manifest: DatasetManifest) -> str:
    """Stable content hash over the manifest's sample records."""
    import hashlib

    h = hashlib.sha256()
    h.update(f"{manifest.n_points}|{','.join(manifest.class_names)}".encode())
    for split in sorted(manifest.splits):
        for rec in manifest.splits[split]:
            h.update(f"{split}|{rec.path}|{rec.label}|{rec.seed}|{rec.sample_id}".encode())
    return h.hexdigest()[:16]
