"""Shared fixtures: tiny data, the desk victim and its fingerprint"""

import numpy as np
import pytest

from corefp.corefp_data import make_synthetic, split_225
from corefp.corefp_fingerprint import CoreGenConfig, generate_fingerprint
from corefp.corefp_nn import ArchSpec, LayerSpec, Network, TrainConfig, init_network
from corefp.corefp_zoo import ModelKind, ZooConfig, build_zoo, train_victim

SMALL_COUNTS = {kind: 1 for kind in ModelKind if kind is not ModelKind.VICTIM}


def linear_net(W, b=None) -> Network:
    """f(x) = W x + b as a one-layer network"""
    W = np.atleast_2d(np.asarray(W, dtype=np.float64))
    n, m = W.shape
    b = np.zeros(n) if b is None else np.asarray(b, dtype=np.float64)
    return Network([LayerSpec("dense", m, n)], [(W, b)], "linear")


def tanh_net(seed: int, in_dim: int = 5, n_classes: int = 4, hidden=(8, 6)) -> Network:
    return init_network(ArchSpec("tanh-test", hidden, "tanh"), in_dim, n_classes, seed)


def small_zoo_config(seed: int = 0) -> ZooConfig:
    return ZooConfig(
        counts=dict(SMALL_COUNTS),
        victim_arch=ArchSpec("mlp-relu-16", (16,), "relu"),
        alt_arch=ArchSpec("mlp-tanh-12", (12,), "tanh"),
        train=TrainConfig(epochs=10, learning_rate=0.2, batch_size=16),
        finetune=TrainConfig(epochs=3, learning_rate=0.05, batch_size=16),
        extract=TrainConfig(epochs=15, learning_rate=0.2, batch_size=16),
        seed=seed,
    )


@pytest.fixture(scope="session")
def tiny_data():
    return make_synthetic(n_classes=3, dim=6, n_per_class=40, spread=0.08, seed=0)


@pytest.fixture(scope="session")
def tiny_split(tiny_data):
    return split_225(tiny_data, overlap=0.5, seed=0)


@pytest.fixture(scope="session")
def small_zoo(tiny_split):
    return build_zoo(tiny_split, small_zoo_config(seed=4))


@pytest.fixture(scope="session")
def desk_split():
    data = make_synthetic(n_classes=5, dim=16, n_per_class=200, spread=0.1, seed=1)
    return split_225(data, overlap=0.5, seed=1)


@pytest.fixture(scope="session")
def desk_victim(desk_split):
    return train_victim(desk_split, ZooConfig().victim_arch, TrainConfig(epochs=40, seed=3))


@pytest.fixture(scope="session")
def desk_coregen():
    return CoreGenConfig(seed=5, gamma=1e-6, outer_max_epochs=1000)


@pytest.fixture(scope="session")
def desk_fingerprint(desk_victim, desk_split, desk_coregen):
    return generate_fingerprint(desk_victim.net, desk_coregen, init_pool=desk_split.victim)
