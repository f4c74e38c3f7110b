import numpy as np
import pytest

from gradroute.probe import ProbeModelConfig, init_model, prepare_trajectory


def small_config(num_layers=1, seed=3, **kw):
    base = dict(num_layers=num_layers, model_dim=16, num_heads=4, ffn_hidden_dim=24,
                vocab_size=64, max_context=64, rng_seed=seed)
    base.update(kw)
    return ProbeModelConfig(**base)


@pytest.fixture(scope="session")
def model_l1():
    return init_model(small_config(1))


@pytest.fixture(scope="session")
def model_l2():
    return init_model(small_config(2))


@pytest.fixture
def trajectory():
    rng = np.random.default_rng(11)
    return prepare_trajectory(rng.integers(0, 64, size=20), response_start=6, context_length=32,
                              trajectory_id="t0")


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
