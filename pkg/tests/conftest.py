import numpy as np
import pytest

from xsecbench.netcore import init_model


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def planted_model():
    """Trained net on the planted 20-feature problem (4 relevant features)."""
    from xsecbench.datagen import gen_planted_tabular
    from xsecbench.netcore import TrainConfig, accuracy, train_sgd

    ds = gen_planted_tabular(3000, 20, [0, 1, 2, 3], seed=7)
    train, test = ds.split(0.2, seed=7)
    model = train_sgd(init_model([20, 32, 2], "tanh", "softmax", 7), train.xs, train.ys,
                      TrainConfig(epochs=60, learning_rate=0.1, batch_size=32, seed=7))
    assert accuracy(model, test.xs, test.ys) >= 0.95
    return model, train, test
