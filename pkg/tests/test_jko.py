import numpy as np
import pytest

from pks.diagnostics import check_telescoping, com_drift, energy_chain
from pks.errors import ConfigurationError
from pks.functionals import free_energy
from pks.grid import DensityField, Gaussian, Liouville, Mixture, make_density, make_grid, mass
from pks.jko import (JkoConfig, TestFunction, jko_run, jko_step, production_identity_report,
                     weak_residual_jko)

PI = np.pi


@pytest.fixture(scope="module")
def heat_step():
    g = make_grid(8, 256)
    f = make_density(g, [Gaussian((0, 0), 1.0)], [1.0])
    return jko_step(f, [[0.0]], JkoConfig(tau=1e-3))


def test_heat_step_second_moment(heat_step):
    _, rep = heat_step
    assert abs((rep.m2_after - rep.m2_before) / (4e-3) - 1) < 0.15


def test_heat_production_identity(heat_step):
    _, rep = heat_step
    assert production_identity_report(rep)[0] <= 0.2


def test_step_contracts(heat_step):
    new, rep = heat_step
    assert abs(mass(new)[0] - 1.0) <= 1e-10
    assert np.all(new.values >= 0)
    assert np.all(rep.dw2 >= 0) and rep.converged
    assert rep.energy_after.free_energy <= rep.energy_before.free_energy + rep.slack


def test_production_gap_shrinks_under_refinement():
    gaps = []
    for N, tau in ((64, 4e-3), (128, 2e-3), (256, 1e-3)):
        g = make_grid(6, N)
        f = make_density(g, [Gaussian((0, 0), 1.0)], [1.0])
        gaps.append(production_identity_report(jko_step(f, [[0.0]], JkoConfig(tau=tau))[1])[0])
    assert gaps[0] > gaps[1] > gaps[2]


def test_liouville_production_vanishes():
    # the debiased distance carries a tau-independent floor, so d_w^2 / tau^2
    # is only small once tau is not tiny; tau = 1e-2 keeps both sides < 1%
    g = make_grid(8, 256)
    s = 0.5
    f = DensityField(g, Liouville((0, 0), s).sample(g)[None] / s ** 2)
    fisher = free_energy(f, [[1.0]]).fisher
    _, rep = jko_step(f, [[1.0]], JkoConfig(tau=1e-2))
    assert rep.production_lhs[0] <= 1e-2 * fisher
    assert rep.production_rhs[0] <= 1e-2 * fisher


def test_critical_step_telescoping():
    g = make_grid(8, 256)
    f = make_density(g, [Mixture((Gaussian((-1.5, 0), 1.0), Gaussian((1.5, 0), 1.0)), (0.5, 0.5))],
                     [8 * PI])
    _, rep = jko_step(f, [[1.0]], JkoConfig(tau=0.2, outer_max=30, outer_tol=1e-8))
    dM = rep.m2_before - rep.m2_after
    assert abs(rep.dw2[0] - dM) <= 0.1 * dM


@pytest.fixture(scope="module")
def symmetric_run():
    g = make_grid(6, 64)
    f = make_density(g, [Gaussian((0, 0), 1.0), Gaussian((0, 0), 0.8)], [2.0, 3.0])
    A = [[1.0, 0.5], [0.5, 1.0]]
    return jko_run(f, A, JkoConfig(tau=5e-3), horizon=0.05, snapshot_every=5)


def test_run_mass_positivity_energy(symmetric_run):
    s = symmetric_run
    assert s.stop_reason == "horizon" and len(s) == 11
    m = s.species_columns("mass")
    assert np.abs(m - [2.0, 3.0]).max() <= 1e-10 * 3.0
    F = s.column("free_energy")
    chain = energy_chain(s)
    assert np.all(chain["chain"] <= 1e-9 * chain["scale"])
    assert np.all(np.diff(F) <= 1e-9 * abs(F[0]))
    assert all(np.all(f.values >= 0) for _, f in s.snapshots)


def test_run_com_drift(symmetric_run):
    assert com_drift(symmetric_run) <= 1e-6 * 6


def test_telescoping_refuses_subcritical(symmetric_run):
    with pytest.raises(ConfigurationError):
        check_telescoping(symmetric_run)


def test_run_stops_on_concentration():
    # strongly super-critical so the collapse outruns the entropic blur
    g = make_grid(1, 64)
    f = make_density(g, [Gaussian((0, 0), 0.15)], [40 * PI])
    s = jko_run(f, [[1.0]], JkoConfig(tau=2e-3), horizon=0.05)
    assert s.stop_reason == "concentration"
    assert s.t[-1] < 0.05
    assert s.column("max_density_1")[-1] * g.cell_area >= 0.25 * 40 * PI


def test_weak_residual_trivial_functions(symmetric_run):
    # plateaus cover the whole box, so both reduce to conservation defects
    const, lin = TestFunction("constant", 8.5, 9.0), TestFunction("linear", 8.5, 9.0)
    assert weak_residual_jko(symmetric_run, const) < 1e-9
    assert weak_residual_jko(symmetric_run, lin) < 1e-9


def test_config_guards():
    with pytest.raises(ConfigurationError):
        JkoConfig(tau=0.0)
    with pytest.raises(ConfigurationError):
        JkoConfig(tau=1e-3, epsilon=-1.0)
    g = make_grid(2, 16)
    f = make_density(g, [Gaussian((0, 0), 0.5)], [1.0])
    with pytest.raises(ConfigurationError):
        jko_step(f, np.eye(2), JkoConfig(tau=1e-3))
    with pytest.raises(ConfigurationError):
        jko_run(f, [[1.0]], JkoConfig(tau=1e-3), horizon=0.0)
    with pytest.raises(ConfigurationError):
        TestFunction("quadratic").evaluate(np.zeros(2), np.zeros(2))
