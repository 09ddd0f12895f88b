import numpy as np
import pytest

from pks.diagnostics import check_second_moment_law, com_drift
from pks.errors import ConfigurationError, NumericalFailure
from pks.fv import FvConfig, bernoulli, cfl_dt, cross_validate, fv_run, fv_step, holder_fit
from pks.grid import DensityField, Gaussian, make_density, make_grid, mass

PI = np.pi


def test_cfl_examples():
    g = make_grid(2, 32)
    f = make_density(g, [Gaussian((0, 0), 0.5)], [1.0])
    h = g.spacing
    assert cfl_dt(f, [[0.0]]) == pytest.approx(0.4 * h * h / 4, rel=1e-15)
    N = g.N
    v = np.full((1, N - 1, N), 1000.0), np.zeros((1, N, N - 1))
    v2 = 2 * v[0], v[1]
    assert cfl_dt(f, None, velocities=v2) == pytest.approx(0.5 * cfl_dt(f, None, velocities=v))
    fine = make_density(make_grid(2, 64), [Gaussian((0, 0), 0.5)], [1.0])
    assert cfl_dt(fine, [[0.0]]) == pytest.approx(cfl_dt(f, [[0.0]]) / 4)
    with pytest.raises(NumericalFailure):
        cfl_dt(f, None, velocities=(np.full((1, N - 1, N), np.nan), v[1]))
    with pytest.raises(ConfigurationError):
        FvConfig(dt_safety=0.0)
    with pytest.raises(ConfigurationError):
        FvConfig(boundary="periodic")


def test_bernoulli():
    x = np.array([-50.0, -1.0, -1e-8, 0.0, 1e-8, 1.0, 50.0, 800.0])
    with np.errstate(invalid="ignore", over="ignore"):
        ref = np.where(x == 0, 1.0, x / np.expm1(x))
    ref[-1] = 0.0
    assert np.allclose(bernoulli(x), ref, rtol=1e-7)
    assert np.allclose(bernoulli(-x) - bernoulli(x), x, rtol=1e-12, atol=1e-12)


def test_uniform_heat_unchanged():
    g = make_grid(2, 32)
    f = DensityField(g, np.full((1, 32, 32), 0.25))
    out = fv_step(f, [[0.0]], cfl_dt(f, [[0.0]]))
    assert np.abs(out.values - f.values).max() <= 1e-15


@pytest.mark.parametrize("flux", ["exponential", "upwind"])
def test_step_conserves_mass_and_positivity(flux):
    g = make_grid(2, 64)
    f = make_density(g, [Gaussian((0.3, 0), 0.3), Gaussian((-0.4, 0.2), 0.2)], [4 * PI, 6 * PI])
    A = [[1.0, 0.7], [0.7, 1.2]]
    state = f
    for _ in range(20):
        state = fv_step(state, A, cfl_dt(state, A), flux=flux)
    assert np.abs(mass(state) - f.target_mass).max() <= 1e-12 * f.target_mass.max()
    assert np.all(state.values >= 0)


def test_cfl_violation_raises():
    g = make_grid(1, 32)
    f = make_density(g, [Gaussian((0, 0), 0.1)], [1.0])
    with pytest.raises(NumericalFailure):
        fv_step(f, [[0.0]], 100 * cfl_dt(f, [[0.0]]))


def test_heat_second_moment_slope():
    g = make_grid(10, 256)
    f = make_density(g, [Gaussian((0, 0), 1.0)], [1.0])
    s = fv_run(f, [[0.0]], 0.25, sample_dt=0.01)
    rep = check_second_moment_law(s)
    assert rep["predicted"] == 4.0
    assert rep["relative_error"] <= 0.03


@pytest.fixture(scope="module")
def critical_run():
    g = make_grid(6, 96)
    f = make_density(g, [Gaussian((0, 0), 1.0)], [8 * PI])
    return fv_run(f, [[1.0]], 0.1, snapshot_every=0.05)


def test_critical_free_energy_monotone(critical_run):
    F = critical_run.column("free_energy")
    assert np.all(np.diff(F) <= 1e-6 * np.abs(F[:-1]))
    assert critical_run.stop_reason == "horizon"


def test_symmetric_com_stationary(critical_run):
    assert com_drift(critical_run) <= 1e-8 * 6


def test_run_mass_and_sampling(critical_run):
    m = critical_run.column("mass_1")
    assert np.abs(m - 8 * PI).max() <= 1e-12 * 8 * PI
    assert [t for t, _ in critical_run.snapshots] == pytest.approx([0.0, 0.05, 0.1])
    s = fv_run(critical_run.snapshots[0][1], [[1.0]], 0.02, sample_dt=0.005)
    assert s.t == pytest.approx([0, 0.005, 0.01, 0.015, 0.02])


def _coarsen(v):
    n = v.shape[0] // 2
    return v.reshape(n, 2, n, 2).mean(axis=(1, 3))


def _self_convergence(flux, sizes, T=0.05):
    out = []
    for N in sizes:
        g = make_grid(3, N)
        f = make_density(g, [Gaussian((0.2, 0), 0.5)], [4 * PI])
        s = fv_run(f, [[1.0]], T, FvConfig(flux=flux), snapshot_every=T)
        out.append((g.cell_area, s.snapshots[-1][1].values[0]))
    e = [np.abs(out[i][1] - _coarsen(out[i + 1][1])).sum() * out[i][0] for i in range(len(out) - 1)]
    return e[0] / e[1]


@pytest.mark.slow
def test_upwind_first_order():
    assert 1.7 <= _self_convergence("upwind", (64, 128, 256)) <= 2.3


def test_exponential_flux_at_least_first_order():
    assert _self_convergence("exponential", (32, 64, 128)) >= 1.7


def test_cross_validate_identical_series(critical_run):
    rep = cross_validate(critical_run, critical_run, holder=False)
    assert np.all(rep["distance"] == 0)
    rep = cross_validate(critical_run, critical_run, metric="L1", holder=False)
    assert np.all(rep["distance"] == 0)
    with pytest.raises(ConfigurationError):
        cross_validate(critical_run, critical_run, metric="L2")


def test_holder_fit_guards():
    g = make_grid(2, 32)
    snaps = []
    for k in range(6):
        t = 0.01 * k
        snaps.append((t, make_density(g, [Gaussian((0.0, 0), 0.3)], [1.0])))
    with pytest.raises(ConfigurationError):
        holder_fit(snaps[:2])
    uneven = snaps[:3] + [(0.5, snaps[3][1])]
    with pytest.raises(ConfigurationError):
        holder_fit(uneven)
