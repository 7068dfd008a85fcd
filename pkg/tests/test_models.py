import numpy as np
import pytest
import torch
import torch.nn.functional as F

from pcld import geometry
from pcld.errors import DomainError
from pcld.geometry import PointCloud
from pcld.models import (
    TrainConfig,
    build_classifier,
    cross_entropy,
    eval_accuracy,
    forward,
    forward_from_layer,
    input_gradient,
    load_classifier,
    save_classifier,
    train_classifier,
)

ARCHS = ("pointnet-mini", "dgcnn-mini")


def fixture_for(arch, pointnet_tiny, dgcnn_tiny):
    return pointnet_tiny if arch == "pointnet-mini" else dgcnn_tiny


class TestForward:
    def test_z0_is_input_bit_identical(self, pointnet_tiny):
        pc = geometry.generate_shape(1, 96, seed=4)
        _, feats = forward(pointnet_tiny, pc)
        assert feats[0] is pc.points or np.array_equal(feats[0], pc.points)

    @pytest.mark.parametrize("arch", ARCHS)
    def test_feature_dims_match_boundaries(self, arch, pointnet_tiny, dgcnn_tiny):
        model = fixture_for(arch, pointnet_tiny, dgcnn_tiny)
        pc = geometry.generate_shape(2, 80, seed=1)
        logits, feats = forward(model, pc)
        assert logits.shape == (8,)
        assert feats.dims == model.boundary_dims
        assert all(np.isfinite(t).all() for t in feats.tensors)

    def test_pointnet_permutation_invariance(self, pointnet_tiny, rng):
        pc = geometry.generate_shape(3, 128, seed=8)
        l1, _ = forward(pointnet_tiny, pc)
        l2, _ = forward(pointnet_tiny, PointCloud(pc.points[rng.permutation(128)]))
        assert np.abs(l1 - l2).max() < 1e-5

    def test_dgcnn_permutation_invariance(self, dgcnn_tiny, rng):
        pc = geometry.generate_shape(3, 128, seed=8)
        l1, _ = forward(dgcnn_tiny, pc)
        l2, _ = forward(dgcnn_tiny, PointCloud(pc.points[rng.permutation(128)]))
        assert np.abs(l1 - l2).max() < 1e-4

    def test_deterministic_inference(self, dgcnn_tiny):
        pc = geometry.generate_shape(6, 100, seed=2)
        l1, _ = forward(dgcnn_tiny, pc)
        l2, _ = forward(dgcnn_tiny, pc)
        assert np.array_equal(l1, l2)


class TestForwardFromLayer:
    @pytest.mark.parametrize("arch", ARCHS)
    def test_decomposition_consistency(self, arch, pointnet_tiny, dgcnn_tiny):
        model = fixture_for(arch, pointnet_tiny, dgcnn_tiny)
        for seed in range(4):
            pc = geometry.generate_shape(seed % 8, 96, seed=seed)
            logits, feats = forward(model, pc)
            for i in range(model.n_boundaries):
                resumed = forward_from_layer(model, i, feats[i])
                assert np.abs(resumed - logits).max() < 1e-5

    def test_random_features_give_finite_logits(self, pointnet_tiny, rng):
        z = rng.standard_normal((64, 64)).astype(np.float32)
        logits = forward_from_layer(pointnet_tiny, 1, z)
        assert logits.shape == (8,)
        assert np.isfinite(logits).all()

    def test_shape_mismatch_rejected(self, pointnet_tiny, rng):
        with pytest.raises(DomainError):
            forward_from_layer(pointnet_tiny, 1, rng.standard_normal((64, 3)).astype(np.float32))
        with pytest.raises(DomainError):
            forward_from_layer(pointnet_tiny, 9, rng.standard_normal((64, 64)).astype(np.float32))


class TestCrossEntropy:
    def test_uniform_logits(self):
        assert cross_entropy(3, np.zeros(8)) == pytest.approx(np.log(8), abs=1e-12)

    def test_saturated_logits(self):
        logits = np.zeros(8)
        logits[2] = 1e6
        assert cross_entropy(2, logits) == pytest.approx(0.0, abs=1e-9)

    def test_matches_naive_formula(self, rng):
        for _ in range(20):
            logits = rng.standard_normal(8) * 5
            y = int(rng.integers(8))
            naive = -np.log(np.exp(logits[y]) / np.exp(logits).sum())
            assert cross_entropy(y, logits) == pytest.approx(naive, abs=1e-9)

    def test_label_out_of_range(self):
        with pytest.raises(DomainError):
            cross_entropy(8, np.zeros(8))


class TestInputGradient:
    @pytest.mark.parametrize("arch", ARCHS)
    def test_matches_central_finite_differences(self, arch, pointnet_tiny, dgcnn_tiny, rng):
        model = fixture_for(arch, pointnet_tiny, dgcnn_tiny).to(torch.float64)
        try:
            pc = geometry.generate_shape(4, 64, seed=12)
            y = 4
            grad = input_gradient(model, pc, y)
            h = 1e-4
            coords = [(int(i), int(j)) for i, j in zip(rng.integers(0, 64, 20), rng.integers(0, 3, 20))]
            for i, j in coords:
                plus = pc.points.astype(np.float64).copy()
                minus = plus.copy()
                plus[i, j] += h
                minus[i, j] -= h
                # drive the torch net directly to keep float64 fidelity
                lp = model.forward_batch(torch.from_numpy(plus).unsqueeze(0))[0].squeeze(0).numpy()
                lm = model.forward_batch(torch.from_numpy(minus).unsqueeze(0))[0].squeeze(0).numpy()
                fd = (cross_entropy(y, lp) - cross_entropy(y, lm)) / (2 * h)
                denom = max(abs(fd), abs(grad[i, j]), 1e-6)
                assert abs(fd - grad[i, j]) / denom < 1e-4, (i, j, fd, grad[i, j])
        finally:
            model.to(torch.float32)

    def test_never_pooled_point_has_zero_gradient(self, pointnet_tiny):
        pc = geometry.generate_shape(0, 96, seed=3)
        pts = torch.from_numpy(pc.points).unsqueeze(0)
        with torch.no_grad():
            _, feats = pointnet_tiny.forward_batch(pts)
        argmaxes = set(feats[-1].squeeze(0).argmax(dim=0).tolist())
        dropped = [i for i in range(96) if i not in argmaxes]
        assert dropped, "expected at least one never-argmax point"
        grad = input_gradient(pointnet_tiny, pc, 0)
        for i in dropped[:10]:
            assert np.abs(grad[i]).max() == 0.0

    def test_gradient_linearity(self, pointnet_tiny):
        pc = geometry.generate_shape(5, 80, seed=6)
        grad = input_gradient(pointnet_tiny, pc, 5)
        pts = torch.from_numpy(pc.points).unsqueeze(0)
        pts.requires_grad_(True)
        logits, _ = pointnet_tiny.forward_batch(pts)
        loss = F.cross_entropy(logits, torch.tensor([5]))
        (loss + loss).backward()
        doubled = pts.grad.squeeze(0).numpy()
        assert np.abs(doubled - 2 * grad).max() < 1e-6


class TestTraining:
    def test_zero_epochs_chance_level(self, tiny_test_set):
        model = train_classifier(
            [tiny_test_set[0]], "pointnet-mini", TrainConfig(epochs=0, seed=0)
        )
        clouds = [s.cloud for s in tiny_test_set]
        labels = [s.label for s in tiny_test_set]
        acc = eval_accuracy(model, clouds, labels)
        assert abs(acc - 0.125) <= 0.05

    def test_determinism_same_seed(self, tiny_train_set):
        m1 = train_classifier(tiny_train_set[:32], "pointnet-mini", TrainConfig(epochs=2, seed=9))
        m2 = train_classifier(tiny_train_set[:32], "pointnet-mini", TrainConfig(epochs=2, seed=9))
        for p1, p2 in zip(m1.net.state_dict().values(), m2.net.state_dict().values()):
            assert torch.equal(p1, p2)

    def test_training_log_recorded(self, pointnet_tiny):
        assert len(pointnet_tiny.training_log) == 15
        assert pointnet_tiny.training_log[-1]["loss"] < pointnet_tiny.training_log[0]["loss"]

    def test_frozen_after_training(self, pointnet_tiny):
        assert not any(p.requires_grad for p in pointnet_tiny.net.parameters())
        assert not pointnet_tiny.net.training

    def test_empty_dataset_rejected(self):
        with pytest.raises(DomainError):
            train_classifier([], "pointnet-mini", TrainConfig(epochs=1))


class TestCheckpoint:
    @pytest.mark.parametrize("arch", ARCHS)
    def test_roundtrip_preserves_logits(self, arch, pointnet_tiny, dgcnn_tiny, tmp_path):
        model = fixture_for(arch, pointnet_tiny, dgcnn_tiny)
        save_classifier(model, tmp_path / "ckpt")
        back = load_classifier(tmp_path / "ckpt")
        pc = geometry.generate_shape(7, 90, seed=13)
        l1, _ = forward(model, pc)
        l2, _ = forward(back, pc)
        assert np.array_equal(l1, l2)

    def test_variable_point_counts_supported(self, pointnet_tiny, dgcnn_tiny):
        for model in (pointnet_tiny, dgcnn_tiny):
            for n in (40, 100, 130):
                pc = geometry.generate_shape(1, n, seed=n)
                logits, _ = forward(model, pc)
                assert np.isfinite(logits).all()


def test_build_rejects_unknown_arch():
    with pytest.raises(DomainError):
        build_classifier("resnet")
