"""Particle clouds versus the grid transport."""

import numpy as np
import pytest

from mfgsolve.catalog import example_catalog
from mfgsolve.errors import DivergenceError
from mfgsolve.fpk import ControlField, solve_fpk
from mfgsolve.grids import StateGrid, TimeGrid
from mfgsolve.measures import gaussian_law
from mfgsolve.particles import cost_estimate, simulate, superposition_gap


def _ou_setup(n=201, K=250, T=0.5):
    model = example_catalog("quadratic", a0=0.5, kappa=1.0, kappa_mf=0.0, q1=0.0)
    grid = StateGrid(dim=1, half_width=4.0, npts=n)
    tg = TimeGrid(horizon=T, steps=K)
    nu = gaussian_law(grid, mean=0.5, std=0.4)
    return model, grid, tg, nu


def test_superposition_small_gap():
    model, grid, tg, nu = _ou_setup()
    u = np.array([0.3])
    fv = solve_fpk(model, nu, grid, tg, control=u, mode="implicit")
    pr = simulate(model, nu, grid, tg, u, n_particles=40_000, seed=11)
    gap, idxs, gaps = superposition_gap(pr, fv.curve)
    assert gap < 0.02
    assert len(idxs) == len(gaps) == 5


def test_bitwise_reproducible():
    model, grid, tg, nu = _ou_setup(n=51, K=50)
    u = np.array([0.1])
    a = simulate(model, nu, grid, tg, u, n_particles=5_000, seed=3)
    b = simulate(model, nu, grid, tg, u, n_particles=5_000, seed=3)
    np.testing.assert_array_equal(a.hist_curve.weights, b.hist_curve.weights)
    assert a.cost_mean == b.cost_mean
    c = simulate(model, nu, grid, tg, u, n_particles=5_000, seed=4)
    assert not np.array_equal(a.hist_curve.weights, c.hist_curve.weights)


def test_batching_deterministic():
    model, grid, tg, nu = _ou_setup(n=51, K=50)
    u = np.array([0.1])
    a = simulate(model, nu, grid, tg, u, n_particles=6_000, seed=3, batch_size=2_000)
    b = simulate(model, nu, grid, tg, u, n_particles=6_000, seed=3, batch_size=2_000)
    np.testing.assert_array_equal(a.hist_curve.weights, b.hist_curve.weights)


def test_cost_estimate_matches_grid():
    model, grid, tg, nu = _ou_setup()
    u = np.array([0.3])
    fv = solve_fpk(model, nu, grid, tg, control=u, mode="implicit")
    pr = simulate(model, nu, grid, tg, u, n_particles=60_000, seed=1)
    mc, se = cost_estimate(pr)
    grid_cost = 0.0
    for k in range(tg.steps):
        fv_vals = model.f(
            np.tile(u, (grid.n_nodes, 1)), grid.nodes, tg.times[k], None
        )
        grid_cost += tg.dt * float(np.asarray(fv_vals) @ fv.curve.weights[k])
    grid_cost += float(np.asarray(model.g(grid.nodes, None)) @ fv.curve.weights[-1])
    # within five standard errors plus discretization slack
    assert abs(mc - grid_cost) <= 5 * se + 5e-3
    assert se > 0


def test_moments_track_ou_mean():
    model, grid, tg, nu = _ou_setup(K=100, T=1.0)
    pr = simulate(model, nu, grid, tg, np.zeros(1), n_particles=50_000, seed=2)
    # mean decays like e^{-t}
    assert pr.means[-1, 0] == pytest.approx(0.5 * np.exp(-1.0), abs=0.01)
    assert pr.variances[-1] == pytest.approx(
        0.5 + (0.4**2 - 0.5) * np.exp(-2.0), abs=0.02
    )


def test_feedback_control_field_lookup():
    model, grid, tg, nu = _ou_setup(n=101, K=100, T=0.5)
    # bang-bang feedback: push toward the origin from both sides
    vals = -np.sign(grid.nodes[:, 0])[None, :, None] * np.ones((tg.steps, 1, 1))
    field = ControlField(grid, tg, vals)
    pr = simulate(model, nu, grid, tg, field, n_particles=20_000, seed=5)
    fv = solve_fpk(model, nu, grid, tg, control=field, mode="implicit")
    gap, _, _ = superposition_gap(pr, fv.curve)
    assert gap < 0.03


def test_divergence_guard():
    model = example_catalog("unstable-cubic-drift")
    grid = StateGrid(dim=1, half_width=2.0, npts=81)
    tg = TimeGrid(horizon=1.0, steps=50)
    nu = gaussian_law(grid, mean=1.5, std=0.2)
    with pytest.raises(DivergenceError, match="escaped"):
        simulate(model, nu, grid, tg, np.zeros(1), n_particles=500, seed=0)


def test_2d_cloud_matches_grid_moments():
    model = example_catalog("quadratic", dim=2, a0=0.4, kappa=1.0, q1=0.0)
    grid = StateGrid(dim=2, half_width=3.0, npts=41)
    tg = TimeGrid(horizon=0.3, steps=150)
    nu = gaussian_law(grid, mean=np.array([0.5, -0.5]), std=0.3)
    fv = solve_fpk(model, nu, grid, tg, control=np.zeros(2), mode="implicit")
    pr = simulate(model, nu, grid, tg, np.zeros(2), n_particles=30_000, seed=7)
    grid_mean = fv.curve.weights[-1] @ grid.nodes
    np.testing.assert_allclose(pr.means[-1], grid_mean, atol=0.02)
