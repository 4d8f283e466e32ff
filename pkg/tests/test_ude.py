import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import udekit.autodiff as ad
from udekit.autodiff import Tensor
from udekit.errors import ConfigError, ParameterError
from udekit.ude import (ConstantDiagonal, GraphCoupledDrift, KuramotoDrift, KuramotoResidualDrift,
                        Mlp, NeuralDrift, OUDrift, StateDependentDiagonal, WilsonCowanDrift,
                        eval_diffusion, eval_drift, glorot_bound, init_params, spec_from_dict)

RNG = np.random.default_rng(0)


def test_ou_fixed_point():
    spec = OUDrift(dim=2, a=[1.5, 0.3], m=[0.5, -1.0])
    np.testing.assert_array_equal(eval_drift(spec, Tensor([0.5, -1.0])).values, [0.0, 0.0])
    np.testing.assert_allclose(spec.a, [1.5, 0.3], rtol=1e-14)


def test_kuramoto_equal_phases_give_natural_frequencies():
    omega = [0.3, -1.2, 2.0]
    spec = KuramotoDrift(dim=3, omega=omega, K=RNG.normal(size=(3, 3)))
    assert eval_drift(spec, Tensor([0.8, 0.8, 0.8])).values.tolist() == omega


def test_wilson_cowan_example():
    spec = WilsonCowanDrift(dim=2, tau=2.0)
    np.testing.assert_allclose(eval_drift(spec, Tensor([1.0, -1.0])).values, [-0.5, 0.5], rtol=1e-14)


def test_wilson_cowan_with_input():
    J = RNG.normal(size=(2, 2))
    B = RNG.normal(size=(2, 1))
    spec = WilsonCowanDrift(dim=2, input_dim=1, tau=0.7, J=J, B=B)
    x, u = np.array([0.2, -0.4]), np.array([1.5])
    expected = (-x + J @ np.tanh(x) + B @ u) / 0.7
    np.testing.assert_allclose(eval_drift(spec, Tensor(x), Tensor(u)).values, expected, rtol=1e-13)


def test_kuramoto_formula_and_batch():
    K = RNG.normal(size=(4, 4))
    omega = RNG.normal(size=4)
    spec = KuramotoDrift(dim=4, omega=omega, K=K)
    xs = RNG.uniform(-3, 3, (5, 4))
    out = eval_drift(spec, Tensor(xs)).values
    for b in range(5):
        x = xs[b]
        expected = omega + np.array([np.sum(K[i] * np.sin(x - x[i])) for i in range(4)]) / 4
        np.testing.assert_allclose(out[b], expected, rtol=1e-13, atol=1e-14)


@settings(max_examples=30, deadline=None)
@given(st.floats(-10, 10))
def test_kuramoto_translation_invariance(shift):
    spec = KuramotoDrift(dim=3, omega=[0.1, 0.2, 0.3], K=np.arange(9.0).reshape(3, 3) / 9)
    x = np.array([0.3, -1.0, 2.2])
    a = eval_drift(spec, Tensor(x)).values
    b = eval_drift(spec, Tensor(x + shift)).values
    np.testing.assert_allclose(a, b, atol=1e-12)


def test_residual_with_zero_network_equals_kuramoto():
    res = KuramotoResidualDrift(dim=3, omega=[0.1, 0.2, 0.3], K=np.ones((3, 3)))
    for t in res.f.parameters().values():
        t.values[...] = 0.0
    plain = KuramotoDrift(dim=3, omega=[0.1, 0.2, 0.3], K=np.ones((3, 3)))
    x = Tensor(RNG.uniform(-3, 3, (4, 3)))
    assert eval_drift(res, x).values.tobytes() == eval_drift(plain, x).values.tobytes()


def test_residual_initialises_near_mechanistic_model():
    res = KuramotoResidualDrift(dim=3, hidden=[32])
    x = Tensor(RNG.uniform(-3, 3, (10, 3)))
    assert np.abs(res.f(x).values).max() < 0.05


def test_graph_coupled_zero_adjacency_is_local_part():
    spec = GraphCoupledDrift(dim=3, input_dim=1, adjacency=np.zeros((3, 3)), seed=4)
    x, u = Tensor(RNG.normal(size=(2, 3))), Tensor(RNG.normal(size=(2, 1)))
    local = spec.f(ad.concat([x, u], axis=-1)).values
    np.testing.assert_array_equal(eval_drift(spec, x, u).values, local)


def test_graph_coupled_pairwise_sum():
    A = np.array([[0.0, 1.0, 0.5], [1.0, 0.0, 0.0], [0.0, 2.0, 0.0]])
    spec = GraphCoupledDrift(dim=3, adjacency=A, seed=2)
    x = RNG.normal(size=3)
    g = lambda xj, xi: spec.g(Tensor([xj, xi])).values[0]
    expected = spec.f(Tensor(x)).values + np.array(
        [sum(A[i, j] * g(x[j], x[i]) for j in range(3)) for i in range(3)])
    np.testing.assert_allclose(eval_drift(spec, Tensor(x)).values, expected, rtol=1e-12)


def test_constant_diffusion_is_state_independent():
    spec = ConstantDiagonal(dim=2, b=[0.3, 0.1])
    for x in (np.zeros(2), np.array([5.0, -3.0])):
        np.testing.assert_allclose(eval_diffusion(spec, Tensor(x)).values, [0.3, 0.1], rtol=1e-14)


def test_state_dependent_zero_weights_gives_ln2():
    spec = StateDependentDiagonal(dim=3)
    for t in spec.parameters().values():
        t.values[...] = 0.0
    out = eval_diffusion(spec, Tensor(RNG.normal(size=3))).values
    np.testing.assert_array_equal(out, np.full(3, np.log(2.0)))


def test_state_dependent_is_nonnegative():
    spec = StateDependentDiagonal(dim=2, input_dim=1, hidden=[8], seed=3)
    for t in spec.parameters().values():
        t.values *= 20.0
    xs = RNG.uniform(-50, 50, (1000, 2))
    us = RNG.uniform(-50, 50, (1000, 1))
    assert np.all(eval_diffusion(spec, Tensor(xs), Tensor(us)).values >= 0)


def test_init_params_defaults_and_determinism():
    ou = init_params({"type": "ou", "dim": 1}, seed=0)
    assert ou.a[0] == pytest.approx(1.0, rel=1e-14) and ou.m[0] == 0.0
    wc = init_params({"type": "wilson-cowan", "dim": 2, "input_dim": 1}, seed=0)
    assert wc.tau == pytest.approx(1.0, rel=1e-14)
    assert not wc.J.values.any() and not wc.B.values.any()
    ku = init_params({"type": "kuramoto", "dim": 3})
    assert not ku.omega.values.any() and not ku.K.values.any()
    assert init_params({"type": "constant", "dim": 2}).b == pytest.approx([0.1, 0.1], rel=1e-14)
    a = init_params({"type": "neural", "dim": 2, "input_dim": 1, "hidden": [8, 8]}, seed=5)
    b = init_params({"type": "neural", "dim": 2, "input_dim": 1, "hidden": [8, 8]}, seed=5)
    for (na, ta), (nb, tb) in zip(a.parameters().items(), b.parameters().items()):
        assert na == nb and ta.values.tobytes() == tb.values.tobytes()
    with pytest.raises(ConfigError):
        init_params({"type": "hodgkin-huxley"})


def test_mlp_fan_bounds_and_zero_biases():
    net = Mlp([5, 7, 3], seed=1)
    for w in net.weights:
        fi, fo = w.shape
        assert np.all(np.abs(w.values) <= glorot_bound(fi, fo))
    for b in net.biases:
        assert not b.values.any()
    assert np.all(np.isfinite(net(Tensor(RNG.normal(size=(4, 5)))).values))


def test_dimension_mismatch_errors():
    with pytest.raises(ParameterError):
        eval_drift(OUDrift(dim=2), Tensor([1.0, 2.0, 3.0]))
    with pytest.raises(ParameterError):
        eval_drift(WilsonCowanDrift(dim=2, input_dim=1), Tensor([1.0, 2.0]))
    with pytest.raises(ParameterError):
        eval_diffusion(ConstantDiagonal(dim=2), Tensor([1.0]))


def all_specs():
    return [
        (OUDrift(dim=2, a=[0.7, 1.2], m=[0.1, -0.3]), 0),
        (WilsonCowanDrift(dim=2, input_dim=1, tau=1.3, J=RNG.normal(size=(2, 2)),
                          B=RNG.normal(size=(2, 1))), 1),
        (KuramotoDrift(dim=3, omega=RNG.normal(size=3), K=RNG.normal(size=(3, 3))), 0),
        (KuramotoResidualDrift(dim=3, omega=RNG.normal(size=3), K=RNG.normal(size=(3, 3)),
                               hidden=[6], residual_scale=1.0, seed=2), 0),
        (GraphCoupledDrift(dim=3, input_dim=1, adjacency=RNG.uniform(0, 1, (3, 3)), hidden=[5],
                           pair_hidden=[4], seed=3), 1),
        (NeuralDrift(dim=2, input_dim=1, hidden=[6], use_time=True, seed=4), 1),
        (ConstantDiagonal(dim=2, b=[0.3, 0.2]), 0),
        (StateDependentDiagonal(dim=2, input_dim=1, hidden=[5], seed=6), 1),
    ]


@pytest.mark.parametrize("index", range(8))
def test_parameter_gradients_pass_grad_check(index):
    spec, du = all_specs()[index]
    x = Tensor(RNG.uniform(-1, 1, (4, spec.state_dim)))
    u = Tensor(RNG.uniform(-1, 1, (4, du))) if du else None
    w = Tensor(RNG.normal(size=(4, spec.state_dim)))
    params = list(spec.parameters().values())
    err = ad.grad_check_tensors(lambda: ad.sum(spec(x, u, 0.3) * w), params)
    assert err < 1e-5


@pytest.mark.parametrize("index", range(8))
def test_state_gradients_pass_grad_check(index):
    spec, du = all_specs()[index]
    u = Tensor(RNG.uniform(-1, 1, (3, du))) if du else None
    w = Tensor(RNG.normal(size=(3, spec.state_dim)))
    err = ad.grad_check(lambda x: ad.sum(spec(x, u, 0.3) * w), RNG.uniform(-1, 1, (3, spec.state_dim)))
    assert err < 1e-5


@pytest.mark.parametrize("index", range(8))
def test_json_round_trip_is_value_exact(index):
    spec, du = all_specs()[index]
    for t in spec.parameters().values():
        t.values += RNG.normal(size=t.shape) / 3.0
    text = json.dumps(spec.to_dict())
    back = spec_from_dict(json.loads(text))
    assert type(back) is type(spec)
    for (na, ta), (nb, tb) in zip(spec.parameters().items(), back.parameters().items()):
        assert na == nb and ta.values.tobytes() == tb.values.tobytes()
    x = Tensor(RNG.normal(size=(2, spec.state_dim)))
    u = Tensor(RNG.normal(size=(2, du))) if du else None
    assert spec(x, u, 0.1).values.tobytes() == back(x, u, 0.1).values.tobytes()
