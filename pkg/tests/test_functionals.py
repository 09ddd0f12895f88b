import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra import numpy as hnp
from scipy import integrate

from pks.functionals import (admissibility_margin, dissipation, entropy, entropy_positive,
                             fisher_information, free_energy, interaction_energy)
from pks.errors import ConfigurationError
from pks.grid import DensityField, Disk, Gaussian, GridSpec, Liouville, make_density, make_grid
from pks.jko import JkoConfig, jko_run
from pks.potential import kernel_self_constant

PI = np.pi


@pytest.fixture(scope="module")
def gauss():
    return make_density(make_grid(8, 256), [Gaussian((0, 0), 1.0)], [1.0])


@pytest.fixture(scope="module")
def disk():
    return make_density(make_grid(8, 256), [Disk((0, 0), 1.0, subsamples=4)], [1.0])


def _radial(f):
    return 2 * PI * integrate.quad(lambda r: f(r) * r, 0, 40, limit=200, epsabs=1e-13)[0]


def test_gaussian_entropy(gauss):
    g = lambda r: np.exp(-r * r / 2) / (2 * PI)
    oracle = _radial(lambda r: g(r) * (-r * r / 2 - np.log(2 * PI)))
    assert abs(oracle - (-np.log(2 * PI) - 1)) < 1e-10
    assert abs(entropy(gauss) - oracle) < 1e-3


def test_disk_entropy():
    # midpoint sampling keeps the density constant on the disk; area-weighted
    # edge cells add an O(h) mixing term of their own
    f = make_density(make_grid(8, 256), [Disk((0, 0), 1.0, subsamples=1)], [1.0])
    assert abs(entropy(f) - np.log(1 / PI)) < 1e-2


def test_zero_field_entropy():
    f = DensityField(make_grid(2, 16), np.zeros((1, 16, 16)))
    assert entropy(f) == 0.0 and entropy_positive(f) == 0.0


def test_gaussian_fisher(gauss):
    g = lambda r: np.exp(-r * r / 2) / (2 * PI)
    oracle = _radial(lambda r: r * r * g(r))  # |grad g / g|^2 = r^2 / sigma^4
    assert abs(oracle - 2.0) < 1e-10
    assert abs(fisher_information(gauss) - oracle) / oracle < 0.01
    wide = make_density(make_grid(10, 256), [Gaussian((0, 0), 2.0)], [1.0])
    assert abs(fisher_information(wide) * 4 / fisher_information(gauss) - 1) < 0.01


def test_disk_self_interaction_monte_carlo(disk):
    rng = np.random.default_rng(11)
    n = 2 * 10 ** 6
    def sample():
        r = np.sqrt(rng.random(n))
        t = rng.random(n) * 2 * PI
        return np.column_stack([r * np.cos(t), r * np.sin(t)])
    d = sample() - sample()
    s = 0.5 * np.log((d * d).sum(axis=1))
    mc = s.mean() / (4 * PI)
    assert abs(s.mean() + 0.25) < 4 * s.std() / np.sqrt(n)
    val = interaction_energy(disk, [[1.0]])
    assert abs(val - mc) / abs(mc) < 0.02
    assert abs(val + 1 / (16 * PI)) / (1 / (16 * PI)) < 0.02


def test_interaction_double_sum_oracle():
    g = make_grid(2, 16)
    rng = np.random.default_rng(5)
    v = rng.random((2, 16, 16))
    A = np.array([[1.0, 0.4], [0.4, 2.0]])
    X, Y = g.mesh
    x, y = X.ravel(), Y.ravel()
    D = np.hypot(x[:, None] - x[None, :], y[:, None] - y[None, :])
    with np.errstate(divide="ignore"):
        K = np.log(D)
    K[D == 0] = kernel_self_constant(g)
    m = v.reshape(2, -1) * g.cell_area
    direct = sum(A[i, j] / (4 * PI) * m[i] @ K @ m[j] for i in range(2) for j in range(2))
    assert abs(interaction_energy(DensityField(g, v), A) - direct) < 1e-12 * abs(direct)


def test_separated_disks_cross_term():
    # two disjoint uniform disks interact exactly like point masses (shell theorem)
    g = make_grid(8, 256)
    a = make_density(g, [Disk((-3, 0), 1.0, subsamples=4)], [1.0])
    b = make_density(g, [Disk((3, 0), 1.0, subsamples=4)], [2.0])
    both = DensityField(g, a.values + b.values)
    cross = interaction_energy(both, [[1.0]]) - interaction_energy(a, [[1.0]]) - interaction_energy(b, [[1.0]])
    exact = 2 * 1.0 * 2.0 * np.log(6.0) / (4 * PI)
    assert abs(cross - exact) / exact < 1e-3


def test_interaction_zero_A_and_label_swap():
    g = make_grid(4, 32)
    f = make_density(g, [Gaussian((0, 0), 1), Disk((1, 0), 1)], [1.0, 2.0])
    assert interaction_energy(f, np.zeros((2, 2))) == 0.0
    A = np.array([[1.0, 0.3], [0.3, 2.0]])
    swapped = DensityField(g, f.values[::-1], f.target_mass[::-1])
    assert abs(interaction_energy(f, A) - interaction_energy(swapped, A[::-1, ::-1])) < 1e-13


def test_breakdown_invariants(gauss):
    e = free_energy(gauss, [[1.0]])
    assert e.free_energy == e.entropy + e.interaction
    assert e.entropy_positive >= e.entropy and e.entropy_positive >= 0
    assert e.dissipation >= 0 and e.fisher >= 0
    e0 = free_energy(gauss, [[0.0]])
    assert e0.free_energy == e0.entropy
    assert abs(e0.dissipation - e0.fisher) <= 1e-10 * e0.fisher


def test_critical_dilation_invariance():
    g = make_grid(8, 256)
    vals = []
    for lam in (1.0, 1.5, 2.0):
        f = make_density(g, [Gaussian((0, 0), 1.0 / lam)], [8 * PI])
        vals.append(free_energy(f, [[1.0]]).free_energy)
    vals = np.array(vals)
    assert np.abs(vals - vals[0]).max() / abs(vals[0]) < 0.01


def test_liouville_steady_state_dissipation():
    # mass 8 pi s^2 * s^-2 ... sampled without renormalizing: the truncated
    # tail only shifts u by a constant inside the domain (shell theorem)
    g = make_grid(8, 256)
    s = 0.5
    vals = Liouville((0, 0), s).sample(g)[None] / s ** 2
    f = DensityField(g, vals)
    pot_check = free_energy(f, [[1.0]])
    assert pot_check.dissipation <= 1e-2 * pot_check.fisher


def test_uniform_field_zero_dissipation():
    f = DensityField(make_grid(2, 16), np.ones((1, 16, 16)))
    assert dissipation(f, [[0.0]]) == 0.0
    assert fisher_information(f) == 0.0


def test_admissibility_margin(gauss):
    # M2 = 2 here, so M2 / (2 tau) beats a 1e6 deficit once tau < 1e-6
    assert admissibility_margin(gauss, [[0.0]], 1e-7, -1e6) > 0
    m = [admissibility_margin(gauss, [[1.0]], 0.01, c) for c in (-5.0, -4.0, 0.0)]
    assert m[0] < m[1] < m[2]
    assert abs(m[1] - m[0] - 1.0) < 1e-12
    with pytest.raises(ConfigurationError):
        admissibility_margin(gauss, [[1.0]], 0.0, 0.0)


def test_admissibility_margin_critical_run():
    g = make_grid(8, 64)
    f = make_density(g, [Gaussian((0, 0), 1.0)], [8 * PI])
    run = jko_run(f, [[1.0]], JkoConfig(tau=1e-3), horizon=0.01)
    inf_F = float(run.column("free_energy").min())
    assert admissibility_margin(f, [[1.0]], 1e-3, inf_F) > 0


def test_lattice_translation_invariance():
    g = make_grid(4, 64)
    f = make_density(g, [Gaussian((0, 0), 0.6), Gaussian((0.5, 0), 0.5)], [1.0, 2.0])
    A = np.array([[1.0, 0.5], [0.5, 1.0]])
    shifted = DensityField(g, np.roll(f.values, (3, -2), axis=(1, 2)), f.target_mass)
    a, b = free_energy(f, A).free_energy, free_energy(shifted, A).free_energy
    assert abs(a - b) < 1e-10 * max(1, abs(a))


small = hnp.arrays(np.float64, (2, 8, 8), elements=st.floats(0, 5, allow_subnormal=False))


@given(small, small, st.floats(0, 3))
def test_interaction_bilinear_symmetric(u, v, c):
    g = GridSpec(1.0, 8)
    A = np.array([[1.0, 0.5], [0.5, 2.0]])
    E = lambda x: interaction_energy(DensityField(g, x), A)
    # polarization: B(u, v) = (E(u + v) - E(u) - E(v)) / 2 is bilinear
    B = lambda x, y: 0.5 * (E(x + y) - E(x) - E(y))
    scale = 1 + abs(E(u)) + abs(E(v)) + abs(E(u + v))
    assert abs(E(c * u) - c * c * E(u)) <= 1e-10 * (1 + c * c) * scale
    assert abs(B(u, v) - B(v, u)) <= 1e-12 * scale
    assert abs(B(c * u, v) - c * B(u, v)) <= 1e-10 * (1 + c) * scale


@given(small)
def test_nonnegative_dissipation(v):
    g = GridSpec(1.0, 8)
    if not v.sum() > 0:
        return
    f = DensityField(g, v)
    assert dissipation(f, [[1.0, 0.2], [0.2, 1.0]]) >= 0
    assert fisher_information(f) >= 0
