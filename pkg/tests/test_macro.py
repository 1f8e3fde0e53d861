import math

import numpy as np
import pytest
from scipy.integrate import solve_ivp

from perfhom.cell_problem import compute_effective_tensor
from perfhom.errors import ConfigError
from perfhom.geometry import build_perforated_grid
from perfhom.initial_data import CosineProfile
from perfhom.macro import (GLOBAL, EffectiveModel, MacroSolver, corrector_reconstruction, homogenized_source,
                           macro_gradient)
from perfhom.micro import MicroSolver
from perfhom.physics import BoundaryFlux, CellFactor, PhysicalParams, SpatialFactor, TimeRamp

CIRCLE_1_PLUS_COS = 2.3122141027663652


@pytest.fixture(scope="module")
def cell64():
    return compute_effective_tensor(2, 0.25, 64, gap_tol=None)


def _model(eff, **kw):
    return EffectiveModel.from_tensor(eff, 2, 0.157, **kw)


def test_equilibrium_unchanged(cell64):
    s = MacroSolver(1.0, 1 / 32, _model(cell64[0]), PhysicalParams(T=1.0, dt=0.1))
    st = s.state_from_constants((1.0, 1.0, 1.0))
    for _ in range(10):
        st = s.step(st)
    assert np.abs(st.values - 1.0).max() <= 1e-14


def test_well_mixed_matches_ode(cell64):
    T, dt = 2.0, 0.005
    ref = solve_ivp(lambda t, a: [a[2] - a[0] * a[1]] * 2 + [a[0] * a[1] - a[2]], (0, T), [2.0, 1.0, 0.0],
                    rtol=1e-12, atol=1e-14).y[:, -1]
    s = MacroSolver(1.0, 1 / 32, _model(cell64[0]), PhysicalParams(T=T, dt=dt))
    run = s.run(s.state_from_constants((2.0, 1.0, 0.0)))
    assert np.abs(run.final.values - ref[:, None]).max() < 5 * dt
    assert np.ptp(run.final.values, axis=1).max() < 1e-12


def test_one_step_source(cell64):
    eff = cell64[0]
    A, tau, dt = 0.8, 0.5, 0.01
    flux = BoundaryFlux((A, 0.0, 0.0), TimeRamp("linear", tau))
    for support in ("zone", GLOBAL):
        model = _model(eff, source_support=support)
        s = MacroSolver(1.0, 1 / 64, model, PhysicalParams((1.5, 1.0, 1.0), T=dt, dt=dt), flux)
        st0 = s.state_from_constants((1.0, 1.0, 1.0))
        st1 = s.step(st0)
        vol = s.h**2
        dm = float(np.sum(s.weights * (st1.values[0] - st0.values[0]))) * vol
        S = A * (dt / 2 / tau) * 2 * math.pi * 0.25
        assert dm == pytest.approx(dt * 1.5 * S * s.support_volume, rel=1e-12)
    assert s.support_volume == 1.0


def test_mass_balance_and_positivity(cell64):
    flux = BoundaryFlux((1.0, 1.0, 1.0), TimeRamp("linear", 0.5), cell=(CellFactor(1.0),) * 3,
                        spatial=(SpatialFactor("cosine", amp=0.5),) * 3)
    s = MacroSolver(1.0, 1 / 32, _model(cell64[0]), PhysicalParams(T=1.0, dt=0.01), flux)
    run = s.run(s.state_from_constants((1.0, 0.6, 0.4)), n_snapshots=10)
    assert run.record.mass_balance_residuals().max() <= 1e-12
    assert run.record.column("min_a").min() >= -1e-14
    assert run.grid_values(run.final.values).shape == (3, 32, 32)


def test_homogenized_source_examples(cell64):
    model = _model(cell64[0])
    x = np.array([[0.5, 0.5], [0.3, 0.7]])
    flux = BoundaryFlux((1.0, 1.0, 0.0), TimeRamp("linear", 0.5), cell=(CellFactor(), CellFactor(1.0), CellFactor()))
    assert np.allclose(homogenized_source(flux, 0, 0.25, x, model), 0.5 * 2 * math.pi * 0.25)
    assert np.allclose(homogenized_source(flux, 1, 1.0, x, model), CIRCLE_1_PLUS_COS, atol=1e-12)
    assert np.all(homogenized_source(flux, 2, 1.0, x, model) == 0)


def test_model_validation(cell64):
    eff = cell64[0]
    with pytest.raises(ConfigError):
        EffectiveModel(np.array([[1.0, 0.0], [0.0, -1.0]]), 0.8, 1.0, 0.25)
    with pytest.raises(ConfigError):
        EffectiveModel(eff.D, 1.2, 1.0, 0.25)
    with pytest.raises(ConfigError):
        _model(eff, source_support="ring")
    assert _model(eff).alpha == pytest.approx(1 / eff.theta)


def test_macro_equals_micro_without_holes():
    # Theta = 0: identical equation on identical grid
    grid = build_perforated_grid(1.0, 1 / 32, 1 / 8, 0.157, 0.0, d=2)
    flux = BoundaryFlux((1.0, 0.5, 0.0), TimeRamp("linear", 0.5))
    params = PhysicalParams((1.0, 0.7, 1.3), T=0.5, dt=0.01)
    prof = [CosineProfile(1.0, 0.5), CosineProfile(1.0, -0.4), CosineProfile(0.5, 0.25)]
    c = (np.arange(32) + 0.5) / 32
    X = np.stack(np.meshgrid(c, c, indexing="ij"), axis=-1).reshape(-1, 2)
    grids = [p(X).reshape(32, 32) for p in prof]
    micro = MicroSolver(grid, params, flux)
    eff, _, _ = compute_effective_tensor(2, 0.0, 16)
    macro = MacroSolver(1.0, 1 / 32, EffectiveModel.from_tensor(eff, 2, 0.157), params, flux)
    a = micro.run(micro.state_from_grids(grids)).final.values
    b = macro.run(macro.state_from_grids(grids)).final.values
    assert np.abs(a - b).max() < 1e-12


def test_corrector_reconstruction(cell64):
    eff, corr, cell = cell64
    rng = np.random.default_rng(0)
    y = rng.random((50, 2)) - 0.5
    assert np.all(corrector_reconstruction(np.zeros((50, 2)), cell, corr, y) == 0)
    eff0, corr0, cell0 = compute_effective_tensor(2, 0.0, 16)
    gx = rng.standard_normal((50, 2))
    assert np.array_equal(corrector_reconstruction(gx, cell0, corr0, y), gx)
    # average over the fluid voxels reproduces D_flux g, and D g to O(1/m)
    g = np.array([0.3, -0.8])
    c = (np.arange(cell.m) + 0.5) / cell.m - 0.5
    Y = np.stack(np.meshgrid(c, c, indexing="ij"), axis=-1)[cell.fluid_mask]
    rec = corrector_reconstruction(np.tile(g, (len(Y), 1)), cell, corr, Y)
    avg = rec.sum(axis=0) * cell.h**2
    assert np.allclose(avg, eff.D_flux @ g, atol=1e-12)
    assert np.abs(avg - eff.D @ g).max() < 2.0 / cell.m


def test_macro_gradient_linear():
    c = (np.arange(16) + 0.5) / 16
    X, Y = np.meshgrid(c, c, indexing="ij")
    g = macro_gradient(2 * X - 3 * Y, 1 / 16)
    assert np.allclose(g[0], 2) and np.allclose(g[1], -3)
