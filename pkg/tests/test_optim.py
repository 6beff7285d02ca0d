import numpy as np
import pytest

from specbias.optim import AdamW, TrainConfig, cosine_lr


def test_cosine_endpoints():
    assert cosine_lr(0, 10, 1e-3, 1e-5) == pytest.approx(1e-3)
    assert cosine_lr(9, 10, 1e-3, 1e-5) == pytest.approx(1e-5)
    assert cosine_lr(0, 1, 1e-3, 1e-5) == 1e-3


def test_first_adam_step_has_size_lr():
    p = {"w": np.array([1.0, -2.0])}
    AdamW(p, weight_decay=0.0).step({"w": np.array([0.5, -3.0])}, 0.1)
    assert np.allclose(p["w"], [0.9, -1.9], atol=1e-6)


def test_decay_is_decoupled():
    p = {"w": np.array([2.0]), "b": np.array([2.0])}
    AdamW(p, weight_decay=0.5, no_decay=("b",)).step({"w": np.zeros(1), "b": np.zeros(1)}, 0.1)
    assert p["w"][0] == pytest.approx(1.9) and p["b"][0] == 2.0


def test_minimizes_quadratic():
    p = {"w": np.array([5.0, -3.0])}
    opt = AdamW(p, weight_decay=0.0)
    for _ in range(2000):
        opt.step({"w": 2 * (p["w"] - [1.0, 2.0])}, 0.05)
    assert np.allclose(p["w"], [1.0, 2.0], atol=1e-3)


def test_config_validation():
    with pytest.raises(ValueError):
        TrainConfig(lr=1e-6)
    with pytest.raises(ValueError):
        TrainConfig(betas=(1.0, 0.9))
    with pytest.raises(ValueError):
        TrainConfig(epochs=0)
