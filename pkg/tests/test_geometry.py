import numpy as np
import pytest
from scipy.spatial import cKDTree

from pcld import geometry
from pcld.errors import DomainError, FormatError
from pcld.geometry import PointCloud


def brute_force_chamfer(a: np.ndarray, b: np.ndarray) -> float:
    """O(N^2) double-loop oracle."""
    a = a.astype(np.float64)
    b = b.astype(np.float64)
    ab = np.mean([min(np.sum((p - q) ** 2) for q in b) for p in a])
    ba = np.mean([min(np.sum((p - q) ** 2) for q in a) for p in b])
    return 0.5 * (ab + ba)


class TestGenerateShape:
    def test_determinism_bit_identical(self):
        a = geometry.generate_shape(0, 1024, seed=7)
        b = geometry.generate_shape(0, 1024, seed=7)
        assert np.array_equal(a.points, b.points)

    def test_all_classes_normalized(self):
        for class_id in range(geometry.N_CLASSES):
            pc = geometry.generate_shape(class_id, 256, seed=3)
            assert pc.n_points == 256
            geometry.validate_dataset_cloud(pc)

    def test_sphere_norms_within_jitter_band(self):
        # Pre-normalization the radius deviates from 1 by at most the jitter
        # magnitude G (5-sigma bound on a 3-dof Gaussian) plus the sampling
        # centroid shift C; centering and rescaling at most doubles that,
        # so post-normalization norms lie in [1 - 3*sigma', 1] with
        # sigma' = 2(G + C)/3.
        n = 4096
        pc = geometry.generate_shape(0, n, seed=3)
        norms = np.linalg.norm(pc.points.astype(np.float64), axis=1)
        g_bound = 5.0 * geometry.JITTER_SIGMA
        per_coord_std = np.sqrt(1.0 / 3.0 + geometry.JITTER_SIGMA**2) / np.sqrt(n)
        c_bound = 5.0 * per_coord_std
        sigma_prime = 2.0 * (g_bound + c_bound) / 3.0
        assert norms.max() <= 1.0 + 1e-6
        assert norms.min() >= 1.0 - 3.0 * sigma_prime

    def test_plane_best_fit_residual(self):
        # least-squares plane fit oracle via SVD
        pc = geometry.generate_shape(5, 1024, seed=1)
        pts = pc.points.astype(np.float64)
        centered = pts - pts.mean(axis=0)
        residual_rms = np.sqrt((np.linalg.svd(centered, compute_uv=False)[-1] ** 2) / len(pts))
        assert residual_rms < 0.05

    def test_invalid_class(self):
        with pytest.raises(DomainError):
            geometry.generate_shape(8, 256, seed=0)
        with pytest.raises(DomainError):
            geometry.generate_shape(-1, 256, seed=0)

    def test_too_few_points(self):
        with pytest.raises(DomainError):
            geometry.generate_shape(0, 7, seed=0)


class TestNormalize:
    def test_unit_sphere_nearly_fixed_point(self):
        pc = geometry.generate_shape(0, 512, seed=2)
        again = geometry.normalize(pc)
        assert np.abs(again.points - pc.points).max() < 1e-6

    def test_two_point_analytic(self):
        pc = PointCloud(np.array([[10, 10, 10], [12, 10, 10]], dtype=np.float32))
        out = geometry.normalize(pc)
        expected = np.array([[-1, 0, 0], [1, 0, 0]], dtype=np.float32)
        assert np.abs(out.points - expected).max() < 1e-6

    def test_idempotent_on_random_clouds(self, rng):
        for _ in range(5):
            pc = PointCloud((rng.standard_normal((64, 3)) * 5 + 3).astype(np.float32))
            once = geometry.normalize(pc)
            twice = geometry.normalize(once)
            assert np.abs(twice.points - once.points).max() < 1e-6

    def test_degenerate_cloud_rejected(self):
        pc = PointCloud(np.ones((16, 3), dtype=np.float32))
        with pytest.raises(DomainError, match="degenerate"):
            geometry.normalize(pc)


class TestChamfer:
    def test_identity(self):
        pc = geometry.generate_shape(2, 128, seed=5)
        assert geometry.chamfer_distance(pc, pc) == 0.0

    def test_single_pair(self):
        a = PointCloud(np.array([[0, 0, 0]], dtype=np.float32))
        b = PointCloud(np.array([[1, 0, 0]], dtype=np.float32))
        assert geometry.chamfer_distance(a, b) == pytest.approx(1.0, abs=1e-12)

    def test_matches_brute_force(self, rng):
        for _ in range(3):
            a = PointCloud(rng.standard_normal((64, 3)).astype(np.float32))
            b = PointCloud(rng.standard_normal((64, 3)).astype(np.float32))
            fast = geometry.chamfer_distance(a, b)
            slow = brute_force_chamfer(a.points, b.points)
            assert fast == pytest.approx(slow, abs=1e-9)

    def test_metric_properties_on_random_inputs(self, rng):
        for _ in range(5):
            a = PointCloud(rng.standard_normal((32, 3)).astype(np.float32))
            b = PointCloud(rng.standard_normal((48, 3)).astype(np.float32))
            d_ab = geometry.chamfer_distance(a, b)
            d_ba = geometry.chamfer_distance(b, a)
            assert d_ab >= 0
            assert d_ab == pytest.approx(d_ba, abs=1e-12)
        perm = rng.permutation(32)
        a = PointCloud(rng.standard_normal((32, 3)).astype(np.float32))
        assert geometry.chamfer_distance(a, PointCloud(a.points[perm])) == 0.0


class TestCloudFiles:
    def test_roundtrip(self, tmp_path):
        pc = geometry.generate_shape(3, 200, seed=9)
        geometry.save_cloud(pc, tmp_path / "x.pcld")
        back = geometry.load_cloud(tmp_path / "x.pcld")
        assert np.array_equal(back.points, pc.points)

    def test_wrong_dims_rejected(self, tmp_path):
        from pcld import io

        io.save_cloud_array(np.zeros((10, 4), dtype=np.float32), tmp_path / "x.pcld")
        with pytest.raises(FormatError, match="n_dims"):
            geometry.load_cloud(tmp_path / "x.pcld")


class TestDataset:
    def test_generate_and_reload(self, tmp_path):
        manifest = geometry.generate_dataset(
            tmp_path / "ds", n_points=64, train_per_class=3, test_per_class=2, seed=11
        )
        again = geometry.load_manifest(tmp_path / "ds")
        assert again.class_names == manifest.class_names
        train = geometry.load_split(again, "train")
        test = geometry.load_split(again, "test")
        assert len(train) == 24 and len(test) == 16
        ids = {s.sample_id for s in train} | {s.sample_id for s in test}
        assert len(ids) == 40  # disjoint by sample_id
        for s in train + test:
            geometry.validate_dataset_cloud(s.cloud)

    def test_regeneration_bit_identical(self, tmp_path):
        m1 = geometry.generate_dataset(tmp_path / "a", n_points=64, train_per_class=2, test_per_class=1, seed=5)
        m2 = geometry.generate_dataset(tmp_path / "b", n_points=64, train_per_class=2, test_per_class=1, seed=5)
        assert geometry.dataset_fingerprint(m1) == geometry.dataset_fingerprint(m2)
        for r1, r2 in zip(m1.records("train"), m2.records("train")):
            c1 = geometry.load_cloud(tmp_path / "a" / r1.path)
            c2 = geometry.load_cloud(tmp_path / "b" / r2.path)
            assert np.array_equal(c1.points, c2.points)

    def test_missing_file_detected(self, tmp_path):
        geometry.generate_dataset(tmp_path / "ds", n_points=64, train_per_class=2, test_per_class=1, seed=5)
        victim = next((tmp_path / "ds" / "train").glob("*.pcld"))
        victim.unlink()
        with pytest.raises(FormatError, match="missing file"):
            geometry.load_manifest(tmp_path / "ds")


@pytest.mark.slow
def test_class_separability_floor():
    """1-NN under Chamfer distance on a 160-cloud held-out split."""
    refs, rlab = [], []
    for c in range(8):
        for j in range(100):
            refs.append(geometry.generate_shape(c, 256, seed=c * 10_000 + j))
            rlab.append(c)
    queries = [(geometry.generate_shape(c, 256, seed=900_000 + c * 100 + j), c) for c in range(8) for j in range(20)]
    ref_trees = [cKDTree(r.points.astype(np.float64)) for r in refs]
    correct = 0
    for q, label in queries:
        qpts = q.points.astype(np.float64)
        qtree = cKDTree(qpts)
        best, best_d = -1, np.inf
        for j, r in enumerate(refs):
            d_ab = ref_trees[j].query(qpts, k=1)[0]
            d_ba = qtree.query(r.points.astype(np.float64), k=1)[0]
            d = 0.5 * (np.mean(d_ab**2) + np.mean(d_ba**2))
            if d < best_d:
                best, best_d = j, d
        correct += rlab[best] == label
    assert correct / len(queries) >= 0.95
