import numpy as np
import pytest

from splatfield.burgers import DEFAULT_NU, OracleMismatch, cole_hopf, finite_difference, generate_burgers
from splatfield.data import DatasetError


def test_initial_and_boundary_values():
    x = np.linspace(-1, 1, 33)
    t = np.array([0.0, 0.25, 0.9])
    u = cole_hopf(x, t)
    np.testing.assert_allclose(u[:, 0], -np.sin(np.pi * x), atol=1e-15)
    assert np.all(u[[0, -1], :] == 0.0)
    assert np.max(np.abs(u[16, :])) < 1e-12    # x = 0 stays at rest by odd symmetry


def test_solution_is_odd_in_x():
    x = np.linspace(-1, 1, 41)
    u = cole_hopf(x, np.array([0.3, 0.8]))
    np.testing.assert_allclose(u, -u[::-1], atol=1e-12)


def test_oracles_agree_on_small_grid():
    x = np.linspace(-1, 1, 41)
    t = np.linspace(0, 0.99, 12)
    gap = np.max(np.abs(cole_hopf(x, t) - finite_difference(x, t)))
    assert gap <= 1e-4


def test_generate_records_gap_and_layout():
    ds = generate_burgers(17, 9)
    assert ds.grid_shape == (17, 9) and ds.time_axis == 1
    assert ds.physics["nu"] == DEFAULT_NU
    assert ds.physics["oracle_gap"] <= 1e-4


def test_generate_raises_on_disagreement():
    with pytest.raises(OracleMismatch):
        generate_burgers(17, 9, tolerance=0.0)
    with pytest.raises(DatasetError):
        generate_burgers(4, 9)
    with pytest.raises(DatasetError):
        finite_difference(np.linspace(0, 1, 5), np.array([0.0, 0.1]))
