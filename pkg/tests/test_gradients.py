import numpy as np
import pytest

from conftest import make_record, random_batch
from sievenet.gradients import (
    ParameterVector,
    finite_diff_grad,
    flatten,
    loss_and_grad,
    loss_only,
    unflatten,
)
from sievenet.likelihood import ObservedRecord, loglik_weighted
from sievenet.model import BernsteinHazard, CovariateNetwork, TransformationSpec, init_network


def _random_model(rng, m, widths, dropout=0.0):
    hazard = BernsteinHazard(m=m, c=0.0, u=5.0, eta=rng.normal(-2.0, 0.5, size=m + 1))
    net = init_network(widths, rng, dropout_rate=dropout)
    return hazard, net


def test_layout_round_trip_bit_exact(rng):
    hazard, net = _random_model(rng, 4, (5, 7, 3, 1), dropout=0.2)
    pv = flatten(hazard, net)
    hazard2, net2 = unflatten(pv)
    assert np.array_equal(hazard.eta, hazard2.eta)
    for a, b in zip(net.weights, net2.weights):
        assert np.array_equal(a, b)
    for a, b in zip(net.biases, net2.biases):
        assert np.array_equal(a, b)
    assert np.array_equal(flatten(hazard2, net2).values, pv.values)


def test_layout_size(rng):
    hazard, net = _random_model(rng, 3, (5, 4, 1))
    pv = flatten(hazard, net)
    expected = 4 + (4 * 5 + 4) + (1 * 4 + 1)
    assert len(pv.values) == expected == pv.layout.size


def test_loss_matches_likelihood_module(rng):
    hazard, net = _random_model(rng, 3, (4, 5, 1))
    batch = random_batch(rng, 9, 4)
    pv = flatten(hazard, net)
    loss, _ = loss_and_grad(pv, batch, TransformationSpec(0.5))
    expected = -loglik_weighted(hazard, net, TransformationSpec(0.5), batch) / len(batch)
    assert loss == pytest.approx(expected, rel=1e-12)


def test_determinism_to_the_bit(rng):
    hazard, net = _random_model(rng, 3, (4, 5, 1), dropout=0.3)
    batch = random_batch(rng, 8, 4)
    pv = flatten(hazard, net)
    l1, g1 = loss_and_grad(pv, batch, TransformationSpec(1.0), mask_seed=11)
    l2, g2 = loss_and_grad(pv.copy(), batch, TransformationSpec(1.0), mask_seed=11)
    assert l1 == l2
    assert np.array_equal(g1.values, g2.values)


def test_gradient_check_50_random_configs():
    # acceptance criterion: relative error <= 1e-5 per coordinate, under 1 min
    rng = np.random.default_rng(2024)
    worst = 0.0
    for cfg in range(50):
        m = int(rng.choice([3, 5]))
        H = int(rng.choice([1, 2]))
        width = int(rng.integers(2, 9))
        p = int(rng.integers(2, 6))
        dropout = float(rng.choice([0.0, 0.2]))
        r = float(rng.choice([0.0, 0.5, 1.0]))
        hazard, net = _random_model(rng, m, (p,) + (width,) * H + (1,), dropout)
        batch = random_batch(rng, int(rng.integers(1, 17)), p)
        pv = flatten(hazard, net)
        seed = int(rng.integers(0, 2**31))
        _, grad = loss_and_grad(pv, batch, TransformationSpec(r), mask_seed=seed)
        fd = finite_diff_grad(pv, batch, TransformationSpec(r), mask_seed=seed, h=1e-5)
        rel = np.abs(grad.values - fd.values) / (np.abs(fd.values) + 1e-8)
        worst = max(worst, float(rel.max()))
    assert worst <= 1e-5


def test_single_right_censored_record_analytic(rng):
    # constant hazard (m=1, both coefficients equal), no network effect:
    # loss = w * G(Lam(L)) so d loss/d eta_j = w * G'(Lam) * dLam/deta_j
    hazard = BernsteinHazard.from_coefficients([0.4, 0.4], 0.0, 5.0)
    net = CovariateNetwork(weights=[np.zeros((1, 3))], biases=[np.zeros(1)])
    rec = make_record("right", np.zeros(3), weight=1.3, L=2.0)
    pv = flatten(hazard, net)
    spec = TransformationSpec(0.5)
    _, grad = loss_and_grad(pv, [rec], spec)
    fd = finite_diff_grad(pv, [rec], spec, h=1e-5)
    rel = np.abs(grad.values - fd.values) / (np.abs(fd.values) + 1e-8)
    assert rel.max() <= 1e-5
    # hand value: with Lam(2.0) = 0.4 and phi_0 = phi_1 = 0.4, the eta_0
    # increment feeds both coefficients, so dLam/deta_0 = 0.4.
    gprime = 1.0 / (1.0 + 0.5 * 0.4)
    assert grad.values[0] == pytest.approx(1.3 * gprime * 0.4, rel=1e-10)


def test_gradient_linearity(rng):
    hazard, net = _random_model(rng, 3, (4, 6, 1))
    batch = random_batch(rng, 10, 4)
    spec = TransformationSpec(0.0)
    pv = flatten(hazard, net)
    _, g1 = loss_and_grad(pv, batch, spec)
    scaled = [
        ObservedRecord(r.L, r.R, r.delta_L, r.delta_I, r.observed, r.z, 3.0 * r.weight) for r in batch
    ]
    l1 = loss_only(pv, batch, spec)
    l3, g3 = loss_and_grad(pv, scaled, spec)
    assert l3 == pytest.approx(3.0 * l1, rel=1e-12)
    assert np.allclose(g3.values, 3.0 * g1.values, rtol=1e-12, atol=0.0)


def test_zero_weight_records_have_zero_gradient(rng):
    hazard, net = _random_model(rng, 3, (4, 6, 1))
    unobserved = [
        ObservedRecord(L=1.0, R=2.0, delta_L=0, delta_I=1, observed=0, z=None, weight=0.0)
        for _ in range(5)
    ]
    pv = flatten(hazard, net)
    loss, grad = loss_and_grad(pv, unobserved, TransformationSpec(0.5))
    assert loss == 0.0
    assert np.all(grad.values == 0.0)


def test_empty_batch(rng):
    hazard, net = _random_model(rng, 3, (4, 6, 1))
    pv = flatten(hazard, net)
    loss, grad = loss_and_grad(pv, [], TransformationSpec(0.5))
    assert loss == 0.0
    assert np.all(grad.values == 0.0)
    fd = finite_diff_grad(pv, [], TransformationSpec(0.5))
    assert np.all(fd.values == 0.0)


def test_symmetric_hidden_units_get_equal_gradients(rng):
    # duplicate hidden units wired identically must receive identical updates
    hazard = BernsteinHazard(m=2, c=0.0, u=5.0, eta=rng.normal(-2.0, 0.3, size=3))
    w_in = rng.normal(size=(1, 3))
    net = CovariateNetwork(
        weights=[np.vstack([w_in, w_in]), np.array([[0.7, 0.7]])],
        biases=[np.array([0.2, 0.2]), np.array([0.1])],
    )
    batch = random_batch(rng, 6, 3)
    _, grad = loss_and_grad(flatten(hazard, net), batch, TransformationSpec(0.0))
    _, g_net = unflatten(ParameterVector(grad.values, grad.layout))
    assert np.allclose(g_net.weights[0][0], g_net.weights[0][1], rtol=0, atol=1e-15)
    assert g_net.biases[0][0] == pytest.approx(g_net.biases[0][1], abs=1e-15)


def test_quadratic_toy_loss_via_fd(rng):
    # the FD oracle itself on a known-derivative function: sum(p^2) -> 2p
    hazard, net = _random_model(rng, 2, (3, 2, 1))
    pv = flatten(hazard, net)

    def quad(values):
        return float(np.sum(values**2))

    h = 1e-5
    fd = np.empty_like(pv.values)
    probe = pv.values.copy()
    for i in range(len(probe)):
        probe[i] = pv.values[i] + h
        up = quad(probe)
        probe[i] = pv.values[i] - h
        down = quad(probe)
        probe[i] = pv.values[i]
        fd[i] = (up - down) / (2 * h)
    assert np.allclose(fd, 2.0 * pv.values, atol=1e-8)


def test_mask_seed_changes_training_loss(rng):
    hazard, net = _random_model(rng, 3, (4, 8, 1), dropout=0.5)
    batch = random_batch(rng, 12, 4)
    pv = flatten(hazard, net)
    l1 = loss_only(pv, batch, TransformationSpec(0.0), mask_seed=1)
    l2 = loss_only(pv, batch, TransformationSpec(0.0), mask_seed=2)
    assert l1 != l2
