import dataclasses

import numpy as np
import pytest

from splatfield.data import FieldDataset, generate_rosenbrock, grid_dataset
from splatfield.density import DensifyConfig
from splatfield.field import GaussianField, init_from_grid, load_field, save_field
from splatfield.physics import NonFiniteLoss, PdeSpec, data_loss, total_loss
from splatfield.training import AdamState, TrainConfig, adam_step, train


def test_adam_zero_gradient():
    state = AdamState(np.array([0.5, -0.2]), np.array([0.3, 0.1]), step=3)
    params = np.array([1.0, 2.0])
    state, new = adam_step(state, params, np.zeros(2), 1e-2)
    np.testing.assert_allclose(state.m, [0.45, -0.18])
    np.testing.assert_allclose(state.v, [0.3 * 0.999, 0.1 * 0.999])
    assert state.step == 4
    # zero gradient with non-zero history still moves; from a fresh state it must not
    state, new = adam_step(AdamState.zeros(2), params, np.zeros(2), 1e-2)
    np.testing.assert_array_equal(new, params)


@pytest.mark.parametrize("g", [3.0, -0.01, 250.0])
def test_adam_first_step_is_signed_lr(g):
    # m_hat = g, v_hat = g^2 after bias correction, so the step is lr * g / (|g| + eps)
    state, new = adam_step(AdamState.zeros(1), np.array([1.0]), np.array([g]), 1e-2)
    assert new[0] == pytest.approx(1.0 - 1e-2 * np.sign(g) * abs(g) / (abs(g) + 1e-8), rel=1e-15)


def test_adam_elementwise_independence():
    state, new = adam_step(AdamState.zeros(2), np.array([1.0, 1.0]), np.array([0.0, 4.0]), 0.1)
    assert new[0] == 1.0 and new[1] < 1.0


def test_adam_length_mismatch():
    with pytest.raises(ValueError):
        adam_step(AdamState.zeros(3), np.zeros(3), np.zeros(2), 1e-2)


def test_reindex_moments():
    st = AdamState(np.arange(6.0).reshape(3, 2), np.arange(6.0).reshape(3, 2) + 10)
    st.reindex(np.array([2, 0, -1]))
    np.testing.assert_array_equal(st.m, [[4, 5], [0, 1], [0, 0]])
    np.testing.assert_array_equal(st.v, [[14, 15], [10, 11], [0, 0]])


def test_train_config_validation():
    for bad in (dict(learning_rate=0.0), dict(epochs=0), dict(batch_size=-1)):
        with pytest.raises(ValueError):
            TrainConfig(**bad)
    cfg = TrainConfig(epochs=7, densify=DensifyConfig(interval=3))
    assert TrainConfig.from_dict(cfg.to_dict()) == cfg


def _small_problem():
    axis = np.linspace(-1, 1, 12)
    ds = grid_dataset([axis, axis], lambda c: np.sin(2 * c[:, :1]) * np.cos(c[:, 1:]))
    return ds, init_from_grid(ds, 25)


def test_one_epoch_reduces_data_loss(rng):
    X = rng.uniform(-1, 1, (20, 2))
    Y = rng.normal(size=(20, 1))
    ds = FieldDataset(X, Y)
    f0 = GaussianField(X, np.full((20, 2), np.log(0.3)), np.zeros((20, 1)))
    f1, rep = train(ds, f0, None, TrainConfig(epochs=1, lam=0.0))
    assert data_loss(f1, X, Y) < data_loss(f0, X, Y)
    assert len(rep.records) == 1


def test_training_is_deterministic():
    ds, f0 = _small_problem()
    cfg = TrainConfig(epochs=30, batch_size=40, seed=5, densify=DensifyConfig(interval=10))
    f1, r1 = train(ds, f0, None, cfg)
    f2, r2 = train(ds, f0, None, cfg)
    strip = [dataclasses.replace(r, seconds=0.0) for r in r1.records]
    assert strip == [dataclasses.replace(r, seconds=0.0) for r in r2.records]
    np.testing.assert_array_equal(f1.mu, f2.mu)
    np.testing.assert_array_equal(f1.values, f2.values)


def test_freeze_positions_and_disable_density():
    ds, f0 = _small_problem()
    cfg = TrainConfig(epochs=25, freeze_positions=True, density_control=False,
                      densify=DensifyConfig(interval=5))
    f, rep = train(ds, f0, None, cfg)
    np.testing.assert_array_equal(f.mu, f0.mu)
    assert set(rep.counts) == {f0.n}
    assert not np.array_equal(f.values, f0.values)


def test_report_loss_matches_checkpoint(tmp_path):
    ds, f0 = _small_problem()
    spec = PdeSpec.none()
    for batch in (0, 50):
        f, rep = train(ds, f0, spec, TrainConfig(epochs=12, batch_size=batch, densify=DensifyConfig(interval=5)))
        save_field(f, tmp_path / "ck.txt")
        total, data, pde = total_loss(load_field(tmp_path / "ck.txt"), ds.coords, ds.values, spec)
        assert rep.records[-1].total == pytest.approx(total, abs=1e-10)
        assert all(np.isfinite(r.total) for r in rep.records)


def test_full_batch_records_hold_end_of_epoch_loss():
    ds, f0 = _small_problem()
    cfg = TrainConfig(epochs=4, density_control=False)
    _, rep = train(ds, f0, None, cfg)
    for e in range(1, 4):
        f, _ = train(ds, f0, None, dataclasses.replace(cfg, epochs=e))
        assert rep.records[e - 1].total == pytest.approx(total_loss(f, ds.coords, ds.values,
                                                                    PdeSpec.none())[0], rel=1e-14)


def test_count_trace_composes_density_events():
    ds = generate_rosenbrock(20, 20)
    f0 = init_from_grid(ds, 16)
    _, rep = train(ds, f0, None, TrainConfig(epochs=60, densify=DensifyConfig(interval=10)))
    n = f0.n
    events = 0
    for r in rep.records:
        n += r.n_split + r.n_clone - r.n_merged
        events += r.n_split + r.n_clone + r.n_merged
        assert r.n_gaussians == n
    assert events > 0


def test_nonfinite_loss_names_epoch_and_term():
    ds = FieldDataset(np.array([[0.0], [1.0]]), np.array([[1e200], [-1e200]]))
    f0 = GaussianField(np.array([[0.5]]), np.zeros((1, 1)), np.zeros((1, 1)))
    with pytest.raises(NonFiniteLoss) as err:
        train(ds, f0, None, TrainConfig(epochs=3))
    assert err.value.epoch == 0 and err.value.term == "data"


def test_layout_checked_before_training():
    ds, f0 = _small_problem()
    with pytest.raises(ValueError):
        train(ds, f0, PdeSpec.steady_ns2d(10.0), TrainConfig(epochs=1))


def test_time_budget_stops_early():
    ds, f0 = _small_problem()
    f, rep = train(ds, f0, None, TrainConfig(epochs=10_000, time_budget=0.0))
    assert rep.stopped_early and len(rep.records) == 1
    assert np.isfinite(rep.records[0].total)


def test_report_files(tmp_path):
    ds, f0 = _small_problem()
    _, rep = train(ds, f0, None, TrainConfig(epochs=3))
    rep.write(tmp_path)
    lines = (tmp_path / "report.csv").read_text().splitlines()
    assert lines[0].startswith("epoch,total,data,pde,n_gaussians")
    assert len(lines) == 4
    assert (tmp_path / "summary.json").exists()
