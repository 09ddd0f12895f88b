"""Free energy and its pieces: entropy, interaction, dissipation, Fisher information."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError
from .grid import DensityField, second_moment
from .potential import PotentialField, drift_velocity, gradient, newtonian_potential


def density_floor(field: DensityField) -> float:
    """Vacuum threshold for log and ratio terms."""
    return 1e-30 * float(np.sum(field.target_mass)) / field.grid.half_width ** 2


def _check_A(A, n: int) -> np.ndarray:
    A = np.atleast_2d(np.asarray(A, dtype=float))
    if A.shape != (n, n):
        raise ConfigurationError(f"A has shape {A.shape}, field has {n} species")
    return A


def _log_density(field: DensityField) -> tuple[np.ndarray, np.ndarray]:
    rho = field.values
    live = rho > density_floor(field)
    logr = np.zeros_like(rho)
    logr[live] = np.log(rho[live])
    return logr, live


def entropy(field: DensityField) -> float:
    logr, _ = _log_density(field)
    return float((field.values * logr).sum() * field.grid.cell_area)


def entropy_positive(field: DensityField) -> float:
    logr, _ = _log_density(field)
    return float((field.values * np.maximum(logr, 0.0)).sum() * field.grid.cell_area)


def interaction_energy(field: DensityField, A, potential: PotentialField | None = None) -> float:
    """``sum_ij (a_ij / 4pi) iint rho_i ln|x-y| rho_j = -1/2 sum_ij a_ij int rho_i u_j``."""
    A = _check_A(A, field.n)
    if not A.any():
        return 0.0
    if potential is None:
        potential = newtonian_potential(field)
    h2 = field.grid.cell_area
    pairs = np.einsum("iab,jab->ij", field.values, potential.u) * h2
    return float(-0.5 * (A * pairs).sum())


def _weighted_square(field: DensityField, drift: np.ndarray | None) -> float:
    return float(_weighted_square_species(field, drift).sum())


def _weighted_square_species(field: DensityField, drift: np.ndarray | None) -> np.ndarray:
    rho = field.values
    _, live = _log_density(field)
    grad = gradient(field.grid, rho)
    with np.errstate(divide="ignore", invalid="ignore"):
        score = np.where(live[:, None], grad / np.where(live, rho, 1.0)[:, None], 0.0)
    if drift is not None:
        score = np.where(live[:, None], score - drift, 0.0)
    return ((score ** 2).sum(axis=1) * rho).sum(axis=(1, 2)) * field.grid.cell_area


def fisher_information(field: DensityField) -> float:
    """``sum_i int |grad rho_i / rho_i|^2 rho_i`` (centered differences)."""
    return _weighted_square(field, None)


def dissipation(field: DensityField, A, potential: PotentialField | None = None) -> float:
    """``sum_i int |grad rho_i / rho_i - sum_j a_ij grad u_j|^2 rho_i``."""
    A = _check_A(A, field.n)
    if not A.any():
        return fisher_information(field)
    if potential is None:
        potential = newtonian_potential(field)
    return _weighted_square(field, drift_velocity(potential, A))


def dissipation_per_species(field: DensityField, A, potential: PotentialField | None = None) -> np.ndarray:
    A = _check_A(A, field.n)
    if not A.any():
        return _weighted_square_species(field, None)
    if potential is None:
        potential = newtonian_potential(field)
    return _weighted_square_species(field, drift_velocity(potential, A))


@dataclass(frozen=True)
class EnergyBreakdown:
    entropy: float
    entropy_positive: float
    interaction: float
    free_energy: float
    dissipation: float
    fisher: float


def free_energy(field: DensityField, A, potential: PotentialField | None = None) -> EnergyBreakdown:
    A = _check_A(A, field.n)
    if potential is None and A.any():
        potential = newtonian_potential(field)
    H = entropy(field)
    E = interaction_energy(field, A, potential)
    return EnergyBreakdown(
        entropy=H,
        entropy_positive=entropy_positive(field),
        interaction=E,
        free_energy=H + E,
        dissipation=dissipation(field, A, potential),
        fisher=fisher_information(field),
    )


def free_energy_value(field: DensityField, A, potential: PotentialField | None = None) -> float:
    """Just ``F``; skips the gradient-based terms."""
    return entropy(field) + interaction_energy(field, A, potential)


def admissibility_margin(field: DensityField, A, tau: float, inf_F_estimate: float) -> float:
    """``inf F + M2 / (2 tau) - F``; positive means the step condition holds."""
    if not tau > 0:
        raise ConfigurationError("tau must be positive")
    return inf_F_estimate + second_moment(field) / (2 * tau) - free_energy_value(field, A)
