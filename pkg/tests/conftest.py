import time

import numpy as np
import pytest

from aib.data import load_mnist, subset
from aib.model import AibModel, ModelConfig
from aib.synthetic import write_mnist_like
from aib.training import train


def toy_model_config(**overrides):
    base = dict(
        num_classes=2,
        in_channels=1,
        height=28,
        width=28,
        latent_dim=64,
        num_anchors=20,
        encoder_widths=(),
    )
    base.update(overrides)
    return ModelConfig(**base)


TOY_TRAIN_KW = dict(batch_size=128, base_lr=0.03, augment_data=False)


@pytest.fixture(scope="session")
def toy_data_dir(tmp_path_factory):
    # source corpus 1200/300 per class; the toy subset caps at 1000/250
    d = tmp_path_factory.mktemp("toydata")
    write_mnist_like(str(d), n_train_per_class=1200, n_test_per_class=300, seed=7)
    return str(d)


@pytest.fixture(scope="session")
def toy_sets(toy_data_dir):
    tr = subset(load_mnist(toy_data_dir, "train"), (0, 1), 1000)
    te = subset(load_mnist(toy_data_dir, "test"), (0, 1), 250)
    return tr, te.with_stats(tr.mean, tr.std)


@pytest.fixture(scope="session")
def micro_sets(toy_data_dir):
    # small slices for tests that only need plumbing, not accuracy
    tr = subset(load_mnist(toy_data_dir, "train"), (0, 1), 48)
    te = subset(load_mnist(toy_data_dir, "test"), (0, 1), 16)
    return tr, te.with_stats(tr.mean, tr.std)


@pytest.fixture(scope="session")
def trained_toy(toy_sets, tmp_path_factory):
    """The standard five-epoch toy run, shared by the slow checks."""
    tr, te = toy_sets
    out = tmp_path_factory.mktemp("toyrun")
    model = AibModel(toy_model_config(), seed=0)
    t0 = time.monotonic()
    result = train(model, tr, te, epochs=5, out_dir=str(out), seed=0, **TOY_TRAIN_KW)
    elapsed = time.monotonic() - t0
    return model, tr, te, str(out), result, elapsed
