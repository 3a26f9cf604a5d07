import numpy as np
import pytest

from splatfield.calculus import spatial_jacobian
from splatfield.field import GaussianField
from splatfield.physics import (
    LayoutError, NonFiniteLoss, PdeSpec, burgers_residual, data_loss, loss_terms, ns_residual,
    pde_loss, residuals, total_loss,
)
from splatfield.splatting import predict

from conftest import random_field


def fd_ns_residual(f, x, spec, eps=1e-4):
    """Residual assembled only from central differences of predict."""
    q = x.size
    v = predict(f, x)
    d1, d2 = [], []
    for j in range(q):
        e = np.zeros(q)
        e[j] = eps
        up, dn = predict(f, x + e), predict(f, x - e)
        d1.append((up - dn) / (2 * eps))
        d2.append((up - 2 * v + dn) / eps**2)
    d1, d2 = np.array(d1).T, np.array(d2).T    # (p, q)
    out = []
    for ca, xa in zip(spec.velocity, spec.space):
        r = d1[spec.pressure, xa]
        if spec.time is not None:
            r += d1[ca, spec.time]
        for cb, xb in zip(spec.velocity, spec.space):
            r += v[cb] * d1[ca, xb] - d2[ca, xb] / spec.re
        out.append(r)
    out.append(sum(d1[cb, xb] for cb, xb in zip(spec.velocity, spec.space)))
    return np.array(out)


def test_spec_layouts():
    assert PdeSpec.steady_ns2d(100).n_residuals == 3
    assert PdeSpec.unsteady_ns(100, 3).n_residuals == 4
    assert PdeSpec.unsteady_ns(100, 3).required_q == 4
    assert PdeSpec.burgers(0.01).n_residuals == 1
    with pytest.raises(LayoutError):
        PdeSpec.steady_ns2d(0.0)
    with pytest.raises(LayoutError):
        PdeSpec("navier")
    with pytest.raises(LayoutError):
        PdeSpec.steady_ns2d(10).check(3, 3)
    with pytest.raises(LayoutError):
        PdeSpec.steady_ns2d(10).check(2, 2)
    spec = PdeSpec.unsteady_ns(7.0, 2)
    assert PdeSpec.from_dict(spec.to_dict()) == spec


def test_constant_field_residuals_vanish(rng):
    f = random_field(rng, 2, 3, 8).with_params(values=np.tile([0.3, -1.0, 2.0], (8, 1)))
    x = rng.uniform(-1, 1, 2)
    assert np.max(np.abs(ns_residual(f, x, PdeSpec.steady_ns2d(10.0)))) < 1e-10
    g = random_field(rng, 2, 1, 8).with_params(values=np.full((8, 1), 0.7))
    assert np.max(np.abs(burgers_residual(g, x, PdeSpec.burgers(0.0)))) < 1e-12
    assert np.max(np.abs(burgers_residual(g, x, PdeSpec.burgers(0.1)))) < 1e-10
    assert pde_loss(g, rng.uniform(-1, 1, (5, 2)), PdeSpec.burgers(0.1)) < 1e-20


def test_continuity_equals_divergence(rng):
    spec = PdeSpec.steady_ns2d(50.0)
    f = random_field(rng, 2, 3, 10)
    for x in rng.uniform(-1, 1, (10, 2)):
        J = spatial_jacobian(f, x)
        assert ns_residual(f, x, spec)[-1] == pytest.approx(J[0, 0] + J[1, 1], rel=1e-13, abs=1e-15)


@pytest.mark.parametrize("spec,q,p", [
    (PdeSpec.steady_ns2d(20.0), 2, 3),
    (PdeSpec.unsteady_ns(5.0, 2), 3, 3),
    (PdeSpec.unsteady_ns(5.0, 3), 4, 4),
])
def test_ns_residual_matches_finite_differences(rng, spec, q, p):
    for _ in range(5):
        f = random_field(rng, q, p, 6, spread=0.5, log_h=(-0.3, 0.2))
        x = rng.uniform(-0.4, 0.4, q)
        r = ns_residual(f, x, spec)
        ref = fd_ns_residual(f, x, spec)
        assert np.max(np.abs(r - ref)) / max(np.max(np.abs(ref)), 1e-8) < 1e-3


def test_burgers_residual_matches_finite_differences(rng):
    spec = PdeSpec.burgers(0.05)
    for _ in range(5):
        f = random_field(rng, 2, 1, 6, spread=0.5, log_h=(-0.3, 0.2))
        x = rng.uniform(-0.4, 0.4, 2)
        eps = 1e-4
        ex, et = np.array([eps, 0.0]), np.array([0.0, eps])
        u = predict(f, x)[0]
        ux = (predict(f, x + ex)[0] - predict(f, x - ex)[0]) / (2 * eps)
        ut = (predict(f, x + et)[0] - predict(f, x - et)[0]) / (2 * eps)
        uxx = (predict(f, x + ex)[0] - 2 * u + predict(f, x - ex)[0]) / eps**2
        ref = ut + u * ux - 0.05 * uxx
        assert burgers_residual(f, x, spec)[0] == pytest.approx(ref, rel=1e-3, abs=1e-6)


def test_residual_wrong_kind():
    f = GaussianField(np.zeros((1, 2)), np.zeros((1, 2)), np.zeros((1, 3)))
    with pytest.raises(LayoutError):
        ns_residual(f, np.zeros(2), PdeSpec.burgers(0.1))
    with pytest.raises(LayoutError):
        burgers_residual(f, np.zeros(2), PdeSpec.steady_ns2d(1.0))


def test_data_loss_examples(rng):
    X = rng.uniform(-1, 1, (6, 2))
    Y = rng.normal(size=(6, 2))
    interp = GaussianField(X, np.full((6, 2), np.log(1e-3)), Y, 1e-4)
    assert data_loss(interp, X, Y) == 0.0
    f = random_field(rng, 2, 2, 4)
    assert data_loss(f, X, Y, mask=np.zeros(2)) == 0.0
    one = GaussianField(np.zeros((1, 1)), np.zeros((1, 1)), np.array([[2.0]]))
    assert data_loss(one, np.zeros((1, 1)), np.zeros((1, 1))) == 4.0
    with pytest.raises(LayoutError):
        data_loss(f, X, Y, mask=np.array([1.0, 0.5]))


def test_pde_loss_single_residual(rng):
    spec = PdeSpec.burgers(0.05)
    f = random_field(rng, 2, 1, 5)
    x = rng.uniform(-1, 1, (1, 2))
    r = residuals(f, x, spec)[0, 0]
    assert pde_loss(f, x, spec) == pytest.approx(r * r, rel=1e-15)


def test_pde_loss_equals_recomputation_from_residuals(rng):
    spec = PdeSpec.steady_ns2d(30.0)
    f = random_field(rng, 2, 3, 9)
    X = rng.uniform(-1, 1, (25, 2))
    per_point = np.array([np.sum(ns_residual(f, x, spec) ** 2) for x in X])
    assert pde_loss(f, X, spec) == pytest.approx(per_point.mean(), rel=1e-13)


def test_total_loss_composition(rng):
    spec = PdeSpec.burgers(0.02)
    f = random_field(rng, 2, 1, 6)
    X = rng.uniform(-1, 1, (10, 2))
    Y = rng.normal(size=(10, 1))
    total, data, pde = total_loss(f, X, Y, spec, lam=0.0)
    assert total == data == data_loss(f, X, Y)
    total, data, pde = total_loss(f, X, Y, PdeSpec.none())
    assert pde == 0.0
    total, data, pde = total_loss(f, X, Y, spec, lam=2.5)
    assert total == pytest.approx(data + 2.5 * pde, rel=1e-15)


def test_point_losses_average_to_total(rng):
    spec = PdeSpec.steady_ns2d(10.0)
    f = random_field(rng, 2, 3, 6)
    X = rng.uniform(-1, 1, (12, 2))
    t = loss_terms(f, X, rng.normal(size=(12, 3)), spec, lam=0.3, with_grad=False)
    assert t.point_losses.mean() == pytest.approx(t.total, rel=1e-14)


def test_nonfinite_loss_message():
    err = NonFiniteLoss("pde", 12)
    assert "pde" in str(err) and "12" in str(err)
    assert err.term == "pde" and err.epoch == 12
