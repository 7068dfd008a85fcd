"""Shared fixtures: a small dataset and quickly-trained models.

Session scope keeps the expensive artifacts (trained classifiers, denoisers)
to one build per run; tests treat them as frozen.
"""

import numpy as np
import pytest

from pcld import geometry
from pcld.diffusion import DenoiserTrainConfig, make_schedule, train_denoiser
from pcld.models import TrainConfig, extract_layer_features, train_classifier

TINY_N_POINTS = 128


def make_labeled(class_id: int, n_points: int, seed: int) -> geometry.LabeledCloud:
    return geometry.LabeledCloud(
        cloud=geometry.generate_shape(class_id, n_points, seed),
        label=class_id,
        sample_id=seed,
    )


@pytest.fixture(scope="session")
def tiny_train_set():
    return [make_labeled(c, TINY_N_POINTS, c * 1000 + j) for c in range(8) for j in range(24)]


@pytest.fixture(scope="session")
def tiny_test_set():
    return [make_labeled(c, TINY_N_POINTS, 50_000 + c * 1000 + j) for c in range(8) for j in range(6)]


@pytest.fixture(scope="session")
def pointnet_tiny(tiny_train_set):
    return train_classifier(tiny_train_set, "pointnet-mini", TrainConfig(epochs=15, seed=0))


@pytest.fixture(scope="session")
def dgcnn_tiny(tiny_train_set):
    return train_classifier(tiny_train_set[: 8 * 12], "dgcnn-mini", TrainConfig(epochs=6, seed=0))


@pytest.fixture(scope="session")
def schedule200():
    return make_schedule(200, 1e-4, 0.02)


@pytest.fixture(scope="session")
def denoiser_l0(pointnet_tiny, tiny_train_set, schedule200):
    """Input-boundary denoiser trained on the tiny split's clean clouds."""
    feats = extract_layer_features(pointnet_tiny, [s.cloud for s in tiny_train_set], 0)
    return train_denoiser(feats, schedule200, DenoiserTrainConfig(epochs=25, seed=0), layer_index=0)


@pytest.fixture()
def rng():
    return np.random.default_rng(1234)
