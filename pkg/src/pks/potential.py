"""Free-space Newtonian potential ``u = -(1/2pi) ln|.| * rho`` on the grid.

The log kernel is sampled at cell-center offsets and convolved against the
densities on a zero-padded ``(2N)^2`` FFT grid, so no periodic images enter.
The same-cell entry uses the exact mean of ``ln|x - y|`` over a cell pair.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy import integrate

from .grid import DensityField, GridSpec
from .errors import ConfigurationError


@lru_cache(maxsize=None)
def unit_cell_log_mean() -> float:
    """Mean of ``ln|x - y|`` for ``x, y`` independent and uniform in the unit square.

    The difference ``x - y`` has density ``(1-|s|)(1-|t|)`` on ``[-1, 1]^2``;
    folding the four quadrants leaves a weakly singular integral at the origin,
    which adaptive quadrature handles after splitting along the diagonal.
    """
    f = lambda t, s: (1 - s) * (1 - t) * 0.5 * np.log(s * s + t * t)
    # integrate over the triangles t < s and t > s separately
    lower, _ = integrate.dblquad(f, 0, 1, lambda s: 0.0, lambda s: s, epsabs=1e-14, epsrel=1e-13)
    upper, _ = integrate.dblquad(f, 0, 1, lambda s: s, lambda s: 1.0, epsabs=1e-14, epsrel=1e-13)
    return 4.0 * (lower + upper)


def kernel_self_constant(grid: GridSpec) -> float:
    """Same-cell value of the discrete log kernel, ``ln h + c0``."""
    return np.log(grid.spacing) + unit_cell_log_mean()


@lru_cache(maxsize=16)
def _kernel_hat(grid: GridSpec) -> np.ndarray:
    N, h = grid.N, grid.spacing
    k = np.arange(2 * N)
    k = np.where(k < N, k, k - 2 * N).astype(float)
    k[N] = np.inf  # unused wrap slot
    I, J = np.meshgrid(k, k, indexing="ij")
    with np.errstate(divide="ignore"):
        K = np.log(h * np.hypot(I, J))
    K[~np.isfinite(K)] = 0.0
    K[0, 0] = kernel_self_constant(grid)
    hat = np.fft.rfft2(K)
    hat.setflags(write=False)
    return hat


def log_convolve(grid: GridSpec, values: np.ndarray) -> np.ndarray:
    """``h^2 sum_cd K(x_ab - x_cd) values_cd`` for a stack of ``N x N`` arrays."""
    N = grid.N
    vals = np.asarray(values, dtype=float)
    hat = _kernel_hat(grid)
    out = np.fft.irfft2(np.fft.rfft2(vals, s=(2 * N, 2 * N)) * hat, s=(2 * N, 2 * N))
    return out[..., :N, :N] * grid.cell_area


@dataclass(frozen=True, eq=False)
class PotentialField:
    grid: GridSpec
    u: np.ndarray      # (n, N, N)
    grad: np.ndarray   # (n, 2, N, N)


def gradient(grid: GridSpec, f: np.ndarray) -> np.ndarray:
    """Centered differences inside, one-sided at the edges; returns ``(..., 2, N, N)``."""
    gx, gy = np.gradient(f, grid.spacing, axis=(-2, -1))
    return np.stack([gx, gy], axis=-3)


def newtonian_potential(field: DensityField) -> PotentialField:
    g = field.grid
    u = -log_convolve(g, field.values) / (2 * np.pi)
    return PotentialField(g, u, gradient(g, u))


def drift_velocity(potential: PotentialField, A) -> np.ndarray:
    """Advection fields ``v_i = sum_j a_ij grad u_j``, shape ``(n, 2, N, N)``."""
    A = np.atleast_2d(np.asarray(A, dtype=float))
    n = potential.u.shape[0]
    if A.shape != (n, n):
        raise ConfigurationError(f"A has shape {A.shape}, field has {n} species")
    return np.einsum("ij,jdab->idab", A, potential.grad)


def interaction_potential(field: DensityField, A, potential: PotentialField | None = None) -> np.ndarray:
    """First variation of the interaction energy, ``V_i = -sum_j a_ij u_j``."""
    A = np.atleast_2d(np.asarray(A, dtype=float))
    if potential is None:
        potential = newtonian_potential(field)
    return -np.einsum("ij,jab->iab", A, potential.u)
