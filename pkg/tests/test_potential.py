import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra import numpy as hnp

from pks.errors import ConfigurationError
from pks.grid import DensityField, Disk, Gaussian, GridSpec, make_density, make_grid
from pks.potential import (drift_velocity, kernel_self_constant, log_convolve, newtonian_potential,
                           unit_cell_log_mean)


def test_self_constant_scaling():
    c0 = unit_cell_log_mean()
    for L, N in ((1, 16), (3, 64), (8, 256)):
        g = make_grid(L, N)
        assert abs(kernel_self_constant(g) - np.log(g.spacing) - c0) < 1e-15
    a, b = make_grid(1, 16), make_grid(2, 16)
    assert abs(kernel_self_constant(b) - kernel_self_constant(a) - np.log(2)) < 1e-14


def test_self_constant_monte_carlo():
    rng = np.random.default_rng(7)
    n = 10 ** 7
    d = rng.random((n, 2)) - rng.random((n, 2))
    s = 0.5 * np.log((d * d).sum(axis=1))
    mc, se = s.mean(), s.std() / np.sqrt(n)
    assert abs(unit_cell_log_mean() - mc) < 3 * se
    assert abs(unit_cell_log_mean() + 0.8050867219500871) < 1e-10


@pytest.fixture(scope="module")
def disk_potential():
    g = make_grid(8, 256)
    f = make_density(g, [Disk((0, 0), 1.0, subsamples=4)], [1.0])
    return g, newtonian_potential(f)


def test_disk_center_value(disk_potential):
    g, pot = disk_potential
    # four cells surround the origin; average them
    N = g.N
    u0 = pot.u[0, N // 2 - 1:N // 2 + 1, N // 2 - 1:N // 2 + 1].mean()
    assert abs(u0 - 1 / (4 * np.pi)) / (1 / (4 * np.pi)) < 0.01


def test_disk_exterior_harmonic(disk_potential):
    g, pot = disk_potential
    X, Y = g.mesh
    r = np.hypot(X, Y)
    ring = np.abs(r - 4.0) < g.spacing / 2
    exact = -np.log(r[ring]) / (2 * np.pi)
    assert np.abs(pot.u[0][ring] - exact).max() / abs(np.log(4) / (2 * np.pi)) < 0.01
    # far field: error to -(1/2pi) ln|x| shrinks outward
    errs = [np.abs(pot.u[0][np.abs(r - R) < g.spacing / 2] + np.log(r[np.abs(r - R) < g.spacing / 2]) / (2 * np.pi)).max()
            for R in (2.0, 4.0, 7.0)]
    assert errs[0] < 1e-3 and errs[2] <= errs[0] * 1.5


def test_laplacian_residual_decreases():
    res = []
    for N in (64, 128):
        g = make_grid(6, N)
        f = make_density(g, [Gaussian((0.3, -0.2), 1.0)], [1.0])
        u = newtonian_potential(f).u[0]
        h = g.spacing
        lap = (u[2:, 1:-1] + u[:-2, 1:-1] + u[1:-1, 2:] + u[1:-1, :-2] - 4 * u[1:-1, 1:-1]) / h ** 2
        rho = f.values[0, 1:-1, 1:-1]
        res.append(np.sqrt(((lap + rho) ** 2).sum() / (rho ** 2).sum()))
    assert res[1] < res[0] and res[1] < 0.01


def test_linearity_and_reflection():
    g = make_grid(4, 32)
    f1 = make_density(g, [Gaussian((0.5, 0), 0.7)], [1.0])
    f2 = make_density(g, [Disk((-1, 1), 1.0)], [2.0])
    u1, u2 = newtonian_potential(f1).u, newtonian_potential(f2).u
    u12 = newtonian_potential(DensityField(g, f1.values + f2.values)).u
    assert np.abs(u12 - u1 - u2).max() < 1e-13 * np.abs(u12).max()
    u3 = newtonian_potential(f1.scaled(3.0)).u
    assert np.abs(u3 - 3 * u1).max() < 1e-13 * np.abs(u3).max()
    sym = make_density(g, [Gaussian((0, 0), 1.0)], [1.0])
    u = newtonian_potential(sym).u[0]
    assert np.abs(u - u[::-1, :]).max() < 1e-14 and np.abs(u - u.T).max() < 1e-14


def test_double_sum_oracle():
    g = make_grid(2, 16)
    rng = np.random.default_rng(3)
    v = rng.random((16, 16))
    X, Y = g.mesh
    x, y = X.ravel(), Y.ravel()
    D = np.hypot(x[:, None] - x[None, :], y[:, None] - y[None, :])
    with np.errstate(divide="ignore"):
        K = np.log(D)
    K[D == 0] = kernel_self_constant(g)
    direct = (K @ v.ravel()).reshape(16, 16) * g.cell_area
    assert np.abs(log_convolve(g, v) - direct).max() < 1e-12 * np.abs(direct).max()


def test_drift_velocity():
    g = make_grid(6, 64)
    f = make_density(g, [Gaussian((0, 0), 1.0), Gaussian((1, 0), 0.8)], [1.0, 2.0])
    pot = newtonian_potential(f)
    assert not drift_velocity(pot, np.zeros((2, 2))).any()
    v = drift_velocity(pot, [[1.0, 0.0], [0.0, 2.0]])
    assert np.array_equal(v[0], pot.grad[0])
    with pytest.raises(ConfigurationError):
        drift_velocity(pot, [[1.0]])
    single = make_density(g, [Gaussian((0, 0), 1.0)], [1.0])
    v = drift_velocity(newtonian_potential(single), [[1.0]])[0]
    X, Y = g.mesh
    r = np.hypot(X, Y)
    radial = v[0] * X + v[1] * Y
    inner = (r > g.spacing) & (r < 5)
    assert np.all(radial[inner] < 0)


@given(hnp.arrays(np.float64, (2, 8, 8), elements=st.floats(0, 5, allow_subnormal=False)),
       st.floats(0, 4))
def test_potential_linear_property(v, c):
    g = GridSpec(1.0, 8)
    a = newtonian_potential(DensityField(g, v)).u
    b = newtonian_potential(DensityField(g, c * v)).u
    assert np.allclose(b, c * a, rtol=1e-12, atol=1e-12 * (1 + np.abs(b).max()))
