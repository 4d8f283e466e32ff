import numpy as np
import pytest

import udekit.autodiff as ad
from udekit.errors import ConfigError, ParameterError
from udekit.recognition import (RecognitionModel, WindowDistribution, reversed_window,
                                sample_window_length)


def test_zero_weights_give_readout_bias():
    model = RecognitionModel(obs_dim=2, input_dim=1, latent_dim=3, hidden=4)
    for name, t in model.parameters().items():
        t.values[...] = 0.0
    model.bo.values[...] = [0.5, -1.0, 2.0]
    rng = np.random.default_rng(0)
    x0 = model.infer_x0(rng.normal(size=(6, 2)), rng.normal(size=(6, 1)))
    np.testing.assert_array_equal(x0.values, [0.5, -1.0, 2.0])


def test_window_isolation():
    rng = np.random.default_rng(1)
    model = RecognitionModel(obs_dim=2, input_dim=1, latent_dim=2, hidden=8, seed=3)
    y = rng.normal(size=(20, 2))
    u = rng.normal(size=(20, 1))
    c = 5
    a = model.infer_x0(reversed_window(y, c), reversed_window(u, c)).values
    y[c:] += 100.0
    u[c:] -= 7.0
    b = model.infer_x0(reversed_window(y, c), reversed_window(u, c)).values
    assert a.tobytes() == b.tobytes()


def test_reversed_order_matters():
    rng = np.random.default_rng(2)
    model = RecognitionModel(obs_dim=1, input_dim=0, latent_dim=1, hidden=6, seed=1)
    y = rng.normal(size=(5, 1))
    assert model.infer_x0(y).values[0] != model.infer_x0(y[::-1]).values[0]
    np.testing.assert_array_equal(reversed_window(y, 3), y[2::-1])


def test_gradient_of_x0_norm_passes_grad_check():
    rng = np.random.default_rng(4)
    model = RecognitionModel(obs_dim=2, input_dim=1, latent_dim=2, hidden=5, seed=2)
    y = rng.normal(size=(5, 2))
    u = rng.normal(size=(5, 1))
    err = ad.grad_check_tensors(lambda: ad.sum(ad.square(model.infer_x0(y, u))),
                                list(model.parameters().values()))
    assert err < 1e-4


def test_batched_matches_unbatched():
    rng = np.random.default_rng(5)
    model = RecognitionModel(obs_dim=2, input_dim=1, latent_dim=2, hidden=5, seed=2)
    y = rng.normal(size=(4, 3, 2))
    u = rng.normal(size=(4, 3, 1))
    batch = model.infer_x0(y, u).values
    for b in range(3):
        np.testing.assert_allclose(batch[b], model.infer_x0(y[:, b], u[:, b]).values, rtol=1e-13)


def test_probabilistic_mode_returns_mean_and_log_var():
    model = RecognitionModel(obs_dim=1, input_dim=0, latent_dim=2, hidden=4, probabilistic=True)
    mean, log_var = model.infer_x0(np.ones((3, 1)))
    assert mean.shape == (2,) and log_var.shape == (2,)


def test_window_length_mismatch():
    model = RecognitionModel(obs_dim=1, input_dim=1, latent_dim=1, hidden=4)
    with pytest.raises(ParameterError):
        model.infer_x0(np.ones((3, 1)), np.ones((4, 1)))


def test_sample_window_length():
    rng = np.random.default_rng(0)
    assert {sample_window_length(WindowDistribution.fixed(8), rng) for _ in range(20)} == {8}
    assert {sample_window_length(WindowDistribution.uniform(4, 4), rng) for _ in range(20)} == {4}
    draws = [sample_window_length(WindowDistribution.uniform(2, 10), rng) for _ in range(10_000)]
    assert set(draws) == set(range(2, 11))


def test_invalid_window_bounds():
    rng = np.random.default_rng(0)
    for dist in (WindowDistribution.uniform(0, 3), WindowDistribution.uniform(5, 3)):
        with pytest.raises(ConfigError):
            sample_window_length(dist, rng)
    with pytest.raises(ConfigError):
        sample_window_length(WindowDistribution.fixed(30), rng, n_samples=20)
