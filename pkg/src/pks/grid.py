"""Grid geometry, multi-species densities, moments and density constructors.

Arrays are indexed ``values[i, a, b]`` with species ``i`` and cell center
``(x_a, y_b)``; the first spatial axis is the x coordinate.  All quadrature
is the midpoint rule with cell area ``h**2``.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import ConfigurationError, DegenerateProfileError, UndefinedCOMError

MAGIC = b"PKS1"


@dataclass(frozen=True)
class GridSpec:
    """Square ``[-L, L]^2`` split into ``N x N`` cells of side ``h = 2L/N``."""

    half_width: float
    cells_per_side: int

    def __post_init__(self):
        if not np.isfinite(self.half_width) or self.half_width <= 0:
            raise ConfigurationError(f"half_width must be positive, got {self.half_width}")
        if int(self.cells_per_side) != self.cells_per_side or self.cells_per_side < 8:
            raise ConfigurationError(
                f"cells_per_side must be an integer >= 8, got {self.cells_per_side}")
        object.__setattr__(self, "cells_per_side", int(self.cells_per_side))
        object.__setattr__(self, "half_width", float(self.half_width))

    @property
    def L(self) -> float:
        return self.half_width

    @property
    def N(self) -> int:
        return self.cells_per_side

    @property
    def spacing(self) -> float:
        return 2.0 * self.half_width / self.cells_per_side

    h = spacing

    @property
    def cell_area(self) -> float:
        return self.spacing ** 2

    @cached_property
    def centers_1d(self) -> np.ndarray:
        h = self.spacing
        return -self.half_width + (np.arange(self.N) + 0.5) * h

    @cached_property
    def mesh(self) -> tuple[np.ndarray, np.ndarray]:
        x = self.centers_1d
        return np.meshgrid(x, x, indexing="ij")

    @cached_property
    def radius_squared(self) -> np.ndarray:
        X, Y = self.mesh
        return X * X + Y * Y

    def boundary_mask(self, width: int = 1) -> np.ndarray:
        """Cells within ``width`` cells of the domain edge."""
        m = np.zeros((self.N, self.N), dtype=bool)
        m[:width, :] = m[-width:, :] = True
        m[:, :width] = m[:, -width:] = True
        return m


def make_grid(half_width: float, cells_per_side: int) -> GridSpec:
    return GridSpec(half_width, cells_per_side)


# --------------------------------------------------------------------------
# Profiles
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class Gaussian:
    center: tuple[float, float] = (0.0, 0.0)
    sigma: float = 1.0

    def __post_init__(self):
        if not self.sigma > 0:
            raise ConfigurationError(f"Gaussian sigma must be positive, got {self.sigma}")

    def sample(self, grid: GridSpec) -> np.ndarray:
        X, Y = grid.mesh
        r2 = (X - self.center[0]) ** 2 + (Y - self.center[1]) ** 2
        s2 = self.sigma ** 2
        return np.exp(-r2 / (2 * s2)) / (2 * np.pi * s2)


@dataclass(frozen=True)
class Disk:
    """Uniform disk sampled at cell centers.

    With ``subsamples > 1`` each cell instead gets the fraction of its area
    covered by the disk (an ``S x S`` sub-grid), which removes the staircase
    error of the rim from the potential.
    """

    center: tuple[float, float] = (0.0, 0.0)
    radius: float = 1.0
    subsamples: int = 1

    def __post_init__(self):
        if not self.radius > 0:
            raise ConfigurationError(f"Disk radius must be positive, got {self.radius}")

    def sample(self, grid: GridSpec) -> np.ndarray:
        X, Y = grid.mesh
        h, S = grid.spacing, self.subsamples
        offsets = ((np.arange(S) + 0.5) / S - 0.5) * h
        cover = np.zeros_like(X)
        for ox in offsets:
            dx2 = (X + ox - self.center[0]) ** 2
            for oy in offsets:
                cover += dx2 + (Y + oy - self.center[1]) ** 2 <= self.radius ** 2
        return cover / (S * S * np.pi * self.radius ** 2)


@dataclass(frozen=True)
class Liouville:
    """Steady profile ``(1 + |x|^2 / (8 s^2))^-2`` (unnormalized, heavy tail)."""

    center: tuple[float, float] = (0.0, 0.0)
    scale: float = 1.0

    def __post_init__(self):
        if not self.scale > 0:
            raise ConfigurationError(f"Liouville scale must be positive, got {self.scale}")

    def sample(self, grid: GridSpec) -> np.ndarray:
        X, Y = grid.mesh
        r2 = (X - self.center[0]) ** 2 + (Y - self.center[1]) ** 2
        return 1.0 / (1.0 + r2 / (8 * self.scale ** 2)) ** 2


@dataclass(frozen=True)
class Mixture:
    """Convex combination of profiles; weights must sum to one."""

    components: tuple
    weights: tuple

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=float)
        if len(self.components) != len(w) or len(w) == 0:
            raise ConfigurationError("mixture needs one weight per component")
        if np.any(w < 0) or abs(w.sum() - 1.0) > 1e-12:
            raise ConfigurationError(f"mixture weights must be >= 0 and sum to 1, got {self.weights}")

    def sample(self, grid: GridSpec) -> np.ndarray:
        out = np.zeros((grid.N, grid.N))
        for w, c in zip(self.weights, self.components):
            out += w * c.sample(grid)
        return out


# --------------------------------------------------------------------------
# Density field
# --------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class DensityField:
    """Per-species nonnegative cell densities with their target masses."""

    grid: GridSpec
    values: np.ndarray
    target_mass: np.ndarray = field(default=None)

    def __post_init__(self):
        v = np.array(self.values, dtype=float)
        if v.ndim == 2:
            v = v[None]
        if v.ndim != 3 or v.shape[1:] != (self.grid.N, self.grid.N):
            raise ConfigurationError(
                f"values must have shape (n, {self.grid.N}, {self.grid.N}), got {v.shape}")
        if np.any(v < 0) or not np.all(np.isfinite(v)):
            raise ConfigurationError("density values must be finite and nonnegative")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)
        if self.target_mass is None:
            beta = v.sum(axis=(1, 2)) * self.grid.cell_area
        else:
            beta = np.atleast_1d(np.asarray(self.target_mass, dtype=float)).copy()
            if beta.shape != (v.shape[0],):
                raise ConfigurationError("target_mass must have one entry per species")
        beta.setflags(write=False)
        object.__setattr__(self, "target_mass", beta)

    @property
    def species_count(self) -> int:
        return self.values.shape[0]

    @property
    def n(self) -> int:
        return self.values.shape[0]

    def with_values(self, values: np.ndarray) -> "DensityField":
        return DensityField(self.grid, values, self.target_mass)

    def scaled(self, c: float) -> "DensityField":
        return DensityField(self.grid, c * self.values, c * self.target_mass)

    def cell_masses(self) -> np.ndarray:
        return self.values * self.grid.cell_area


def make_density(grid: GridSpec, profiles: Sequence, beta: Sequence[float]) -> DensityField:
    """Sample one profile per species at cell centers and renormalize to ``beta``."""
    beta = np.atleast_1d(np.asarray(beta, dtype=float))
    if len(profiles) != len(beta):
        raise ConfigurationError("need exactly one profile per species")
    if np.any(beta <= 0):
        raise ConfigurationError(f"target masses must be positive, got {beta}")
    vals = np.stack([p.sample(grid) for p in profiles])
    raw = vals.sum(axis=(1, 2)) * grid.cell_area
    bad = np.flatnonzero(~(raw > 0))
    if bad.size:
        raise DegenerateProfileError(
            f"profile for species {bad[0]} has zero mass on the grid")
    return renormalize(DensityField(grid, vals, beta))


def mass(field: DensityField) -> np.ndarray:
    return field.values.sum(axis=(1, 2)) * field.grid.cell_area


def center_of_mass(field: DensityField) -> np.ndarray:
    g = field.grid
    total = field.values.sum(axis=0)
    m = total.sum() * g.cell_area
    if not m > 0:
        raise UndefinedCOMError("center of mass undefined for zero total mass")
    X, Y = g.mesh
    return np.array([(X * total).sum(), (Y * total).sum()]) * g.cell_area / m


def second_moment(field: DensityField) -> float:
    g = field.grid
    return float((g.radius_squared * field.values.sum(axis=0)).sum() * g.cell_area)


def upsilon_moment(field: DensityField, p: float) -> float:
    """``sum_i int (|x|^2)^p rho_i`` for ``p`` in (1, 2]."""
    if not 1.0 < p <= 2.0:
        raise ConfigurationError(f"upsilon exponent must lie in (1, 2], got {p}")
    g = field.grid
    return float((g.radius_squared ** p * field.values.sum(axis=0)).sum() * g.cell_area)


def renormalize(field: DensityField) -> DensityField:
    m = mass(field)
    bad = np.flatnonzero(~(m > 0))
    if bad.size:
        raise DegenerateProfileError(f"species {bad[0]} has zero mass; cannot renormalize")
    scale = field.target_mass / m
    return field.with_values(field.values * scale[:, None, None])


def boundary_mass_fraction(field: DensityField, width: int = 1) -> float:
    mask = field.grid.boundary_mask(width)
    tot = field.values.sum()
    return float(field.values[:, mask].sum() / tot) if tot > 0 else 0.0


# --------------------------------------------------------------------------
# Raw binary fields
# --------------------------------------------------------------------------

def write_raw(path, field: DensityField | np.ndarray, grid: GridSpec | None = None) -> None:
    """Write ``PKS1`` header (n, N as int64; L as float64) then float64 data."""
    if isinstance(field, DensityField):
        grid, arr = field.grid, field.values
    else:
        arr = np.asarray(field, dtype=float)
        if arr.ndim == 2:
            arr = arr[None]
    n, N = arr.shape[0], arr.shape[1]
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<qqd", n, N, grid.half_width))
        fh.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())


def read_raw(path) -> DensityField:
    data = Path(path).read_bytes()
    if data[:4] != MAGIC:
        raise ConfigurationError(f"{path}: not a PKS1 field file")
    n, N, L = struct.unpack("<qqd", data[4:28])
    body = np.frombuffer(data[28:], dtype="<f8")
    if body.size != n * N * N:
        raise ConfigurationError(f"{path}: expected {n * N * N} values, found {body.size}")
    return DensityField(GridSpec(L, N), body.reshape(n, N, N).astype(float))
