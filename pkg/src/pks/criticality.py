"""Sub-critical / critical / super-critical classification of mass vectors."""

from __future__ import annotations

import enum
from dataclasses import dataclass
from itertools import combinations
from typing import Iterable

import numpy as np

from .errors import ConfigurationError

EIGHT_PI = 8.0 * np.pi
MAX_SPECIES = 20


class Regime(str, enum.Enum):
    SUB_CRITICAL = "SubCritical"
    CRITICAL = "Critical"
    SUPER_CRITICAL = "SuperCritical"
    INADMISSIBLE = "Inadmissible"


def interaction_matrix(A, positive_diagonal: bool = True) -> np.ndarray:
    """Validate a sensitivity matrix: square, symmetric, nonnegative, positive diagonal.

    Dynamics accept ``positive_diagonal=False`` so that ``A = 0`` (pure heat
    flow) can be used as a reference problem.
    """
    A = np.atleast_2d(np.asarray(A, dtype=float))
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise ConfigurationError(f"interaction matrix must be square, got shape {A.shape}")
    if not np.array_equal(A, A.T):
        raise ConfigurationError("interaction matrix must be exactly symmetric")
    if np.any(A < 0):
        raise ConfigurationError("interaction matrix entries must be nonnegative")
    if positive_diagonal and np.any(np.diag(A) <= 0):
        raise ConfigurationError("interaction matrix diagonal must be strictly positive")
    return A


def _subset(J, n: int) -> np.ndarray:
    idx = np.asarray(sorted(set(int(j) for j in J)), dtype=int)
    if idx.size == 0:
        raise ConfigurationError("subset J must be nonempty")
    if idx.min() < 0 or idx.max() >= n:
        raise ConfigurationError(f"subset {tuple(idx)} out of range for n={n}")
    return idx


def lambda_subset(A, beta, J: Iterable[int]) -> float:
    """``sum_{i in J} beta_i (8 pi - sum_{j in J} a_ij beta_j)``; ``J`` is 0-based."""
    A = np.atleast_2d(np.asarray(A, dtype=float))
    beta = np.atleast_1d(np.asarray(beta, dtype=float))
    idx = _subset(J, beta.size)
    b = beta[idx]
    return float(b @ (EIGHT_PI - A[np.ix_(idx, idx)] @ b))


def lambda_weighted(A, beta, b, J: Iterable[int]) -> float:
    """``8 pi sum_{J} b_i beta_i - sum_{i,j in J} a_ij beta_i beta_j``."""
    A = np.atleast_2d(np.asarray(A, dtype=float))
    beta = np.atleast_1d(np.asarray(beta, dtype=float))
    w = np.atleast_1d(np.asarray(b, dtype=float))
    if np.any(w <= 0):
        raise ConfigurationError("weights b must be positive")
    idx = _subset(J, beta.size)
    bb = beta[idx]
    return float(EIGHT_PI * (w[idx] @ bb) - bb @ A[np.ix_(idx, idx)] @ bb)


@dataclass(frozen=True)
class RegimeReport:
    regime: Regime
    lambda_values: dict
    witness: tuple
    tolerance: float
    secondary_condition: bool = True

    @property
    def lambda_total(self) -> float:
        n = max(len(J) for J in self.lambda_values)
        return self.lambda_values[tuple(range(n))]

    def table(self) -> str:
        lines = [f"{'subset J':<24}{'Lambda_J':>24}"]
        for J, v in self.lambda_values.items():
            name = "{" + ",".join(str(j + 1) for j in J) + "}"
            lines.append(f"{name:<24}{v:>24.12g}")
        return "\n".join(lines)

    def key_values(self) -> str:
        lines = [
            f"regime = {self.regime.value}",
            "witness = " + ",".join(str(j + 1) for j in self.witness),
            f"tolerance = {self.tolerance:.17g}",
            f"lambda_total = {self.lambda_total:.17g}",
            f"secondary_condition = {str(self.secondary_condition).lower()}",
        ]
        for J, v in self.lambda_values.items():
            lines.append("lambda[" + ",".join(str(j + 1) for j in J) + f"] = {v:.17g}")
        return "\n".join(lines)


def classify(A, beta, tol: float = 1e-10) -> RegimeReport:
    """Classify ``beta`` by enumerating every nonempty subset of species.

    ``tol`` is relative to the scale ``(8 pi sum beta)``, the size of the
    terms that cancel in ``Lambda_I``.
    """
    A = interaction_matrix(A)
    beta = np.atleast_1d(np.asarray(beta, dtype=float))
    n = beta.size
    if A.shape != (n, n):
        raise ConfigurationError(f"A has shape {A.shape} but beta has {n} entries")
    if n > MAX_SPECIES:
        raise ConfigurationError(f"classification enumerates 2^n subsets; n={n} exceeds {MAX_SPECIES}")
    if np.any(beta <= 0):
        raise ConfigurationError("masses must be positive")

    atol = tol * EIGHT_PI * beta.sum()
    values = {}
    for k in range(1, n + 1):
        for J in combinations(range(n), k):
            values[J] = lambda_subset(A, beta, J)
    full = tuple(range(n))
    witness = min(values, key=values.get)
    proper = [v for J, v in values.items() if J != full]

    if min(values.values()) > atol:
        regime = Regime.SUB_CRITICAL
    elif abs(values[full]) <= atol and all(v > atol for v in proper):
        regime = Regime.CRITICAL
        witness = full
    elif min(values.values()) < -atol:
        regime = Regime.SUPER_CRITICAL
    else:
        regime = Regime.INADMISSIBLE

    # a_ii + Lambda_{J \ i} > 0 whenever Lambda_J = 0; reported only.
    secondary = True
    for J, v in values.items():
        if abs(v) <= atol:
            for i in J:
                rest = tuple(j for j in J if j != i)
                if A[i, i] + (values[rest] if rest else 0.0) <= 0:
                    secondary = False
    return RegimeReport(regime, values, witness, atol, secondary)


def two_species_map(chi1: float, chi2: float, beta_tilde) -> tuple[np.ndarray, np.ndarray]:
    """Symmetric form of the two-population single-chemical model.

    ``a = chi chi^T`` and ``beta_i = beta_tilde_i / chi_i``.
    """
    if not (chi1 > 0 and chi2 > 0):
        raise ConfigurationError("sensitivities chi must be positive")
    bt = np.asarray(beta_tilde, dtype=float)
    if bt.shape != (2,) or np.any(bt <= 0):
        raise ConfigurationError("beta_tilde must be two positive masses")
    chi = np.array([chi1, chi2], dtype=float)
    return np.outer(chi, chi), bt / chi


def two_species_curve(chi1: float, chi2: float, beta_tilde) -> float:
    """``8 pi (b1/chi1 + b2/chi2) - (b1 + b2)^2``."""
    b1, b2 = beta_tilde
    return EIGHT_PI * (b1 / chi1 + b2 / chi2) - (b1 + b2) ** 2


def blowup_time_bound(A, beta, m2_initial: float) -> float | None:
    """Upper bound ``-2 pi M2(0) / Lambda_I`` on the existence time, or None."""
    if not m2_initial > 0:
        raise ConfigurationError("initial second moment must be positive")
    beta = np.atleast_1d(np.asarray(beta, dtype=float))
    lam = lambda_subset(A, beta, range(beta.size))
    if lam < 0:
        return -2.0 * np.pi * m2_initial / lam
    return None


def second_moment_slope(A, beta) -> float:
    """Predicted ``dM2/dt = Lambda_I / (2 pi)``; zero-diagonal A allowed (heat flow)."""
    A = np.atleast_2d(np.asarray(A, dtype=float))
    beta = np.atleast_1d(np.asarray(beta, dtype=float))
    return float(beta @ (EIGHT_PI - A @ beta)) / (2 * np.pi)
