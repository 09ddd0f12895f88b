"""Run diagnostics computed from time-series data (replayable from CSV).

Snapshot-based reports (concentration) take the field snapshots as a
separate argument; everything else reads only the series rows and metadata.
"""

from __future__ import annotations

import math
import warnings

import numpy as np

from .criticality import Regime, classify, second_moment_slope
from .errors import ConfigurationError
from .grid import DensityField, center_of_mass
from .series import TimeSeries

BOUNDARY_WARN = 1e-3
BOUNDARY_INITIAL = 1e-6


def _meta_A_beta(series: TimeSeries, A=None, beta=None):
    A = series.meta.get("A") if A is None else A
    beta = series.meta.get("beta") if beta is None else beta
    if A is None or beta is None:
        raise ConfigurationError("interaction matrix and masses are needed (pass them or keep them in meta)")
    A = np.atleast_2d(np.asarray(A, dtype=float))
    beta = np.atleast_1d(np.asarray(beta, dtype=float))
    return A, beta


def _pre_stop(series: TimeSeries) -> slice:
    """Rows before a concentration or failure stop; the stop row is excluded."""
    if series.stop_reason in ("", "horizon"):
        return slice(None)
    return slice(0, max(len(series) - 1, 1))


def check_second_moment_law(series: TimeSeries, A=None, beta=None, t_max: float | None = None,
                            min_samples: int = 20) -> dict:
    """Least-squares ``dM2/dt`` over the pre-stop window against ``Lambda_I / (2 pi)``.

    ``relative_error`` is taken against ``|predicted|``; when the prediction
    vanishes (critical mass) it is taken against the scale ``M2(0) / T``.
    For a negative prediction the window defaults to the smooth stage
    ``t <= T* / 2`` with ``T* = M2(0) / |predicted|``; the collapsing core
    bends the curve after that.
    """
    A, beta = _meta_A_beta(series, A, beta)
    t = series.t[_pre_stop(series)]
    m2 = series.column("M2")[_pre_stop(series)]
    pred = second_moment_slope(A, beta)
    if t_max is None and pred < 0:
        t_max = 0.5 * m2[0] / abs(pred)
    if t_max is not None:
        keep = t <= t_max * (1 + 1e-12)
        t, m2 = t[keep], m2[keep]
    if t.size < min_samples:
        raise ConfigurationError(f"second-moment law needs >= {min_samples} samples, got {t.size}")
    slope = float(np.polyfit(t, m2, 1)[0])
    span = t[-1] - t[0]
    scale = abs(pred) if pred != 0 else abs(m2[0]) / span
    return {"slope": slope, "predicted": pred, "relative_error": abs(slope - pred) / scale,
            "scale": scale, "samples": int(t.size), "window": (float(t[0]), float(t[-1]))}


def check_telescoping(series: TimeSeries, A=None, beta=None) -> dict:
    """Per-step and cumulative defects of ``dw2(rho^k, rho^(k-1)) = M2^(k-1) - M2^k``.

    Only defined for JKO runs at critical mass, where the second-moment
    identity loses its ``tau Lambda / (2 pi)`` term.  Defects are relative
    to the larger of the two sides (cumulative: to the summed distances).
    """
    A, beta = _meta_A_beta(series, A, beta)
    rep = classify(A, beta)
    if rep.regime is not Regime.CRITICAL:
        raise ConfigurationError(f"telescoping check needs a critical run, got {rep.regime.value}")
    if series.meta.get("kind") != "jko":
        raise ConfigurationError("telescoping check needs per-step distances from a JKO run")
    dw = series.species_columns("dw2").sum(axis=1)[1:]
    m2 = series.column("M2")
    dM = m2[:-1] - m2[1:]
    if dw.size == 0:
        raise ConfigurationError("series has no steps")
    step = np.abs(dw - dM) / np.maximum(np.maximum(np.abs(dw), np.abs(dM)), 1e-300)
    cum_w, cum_m = np.cumsum(dw), m2[0] - m2[1:]
    cum = np.abs(cum_w - cum_m) / np.maximum(np.abs(cum_w), 1e-300)
    return {"per_step": step, "cumulative": cum, "max_step": float(step.max()),
            "max_cumulative": float(cum.max()), "dw2": dw, "dM2": dM}


def energy_chain(series: TimeSeries, tau: float | None = None) -> dict:
    """Prefix sums ``F(rho^k) + sum_{j<=k} dw2_j / (2 tau) - F(rho^0)``; all should be <= 0."""
    tau = series.meta.get("tau") if tau is None else tau
    if tau is None:
        raise ConfigurationError("energy chain needs the JKO time step")
    F = series.column("free_energy")
    dw = series.species_columns("dw2").sum(axis=1)[1:]
    chain = F[1:] + np.cumsum(dw) / (2 * float(tau)) - F[0]
    steps = F[1:] + dw / (2 * float(tau)) - F[:-1]
    return {"chain": chain, "per_step": steps, "max_chain": float(chain.max(initial=-math.inf)),
            "max_step": float(steps.max(initial=-math.inf)), "scale": float(abs(F[0]) + 1.0)}


def _dirac_distance(field: DensityField, point) -> np.ndarray:
    """Per-species ``dw1(rho_i, beta_i delta_point)``: the first absolute moment about ``point``."""
    X, Y = field.grid.mesh
    r = np.hypot(X - point[0], Y - point[1])
    return (field.values * r).sum(axis=(1, 2)) * field.grid.cell_area


def _peak(grid, values: np.ndarray) -> np.ndarray:
    a, b = np.unravel_index(np.argmax(values), values.shape)
    c = grid.centers_1d
    return np.array([c[a], c[b]])


def detect_concentration(series: TimeSeries, snapshots=None, A=None, beta=None,
                         tail: float = 0.25, noise: float = 0.05) -> dict:
    """Concentration report from snapshots.

    Tracks per-species ``dw1`` to ``beta_i delta_COM`` and the peak
    locations.  The common point is the peak of the summed density.  The
    common-point check (every species peak and the COM within ``2h`` of it)
    is evaluated only for critical runs stopped by concentration; otherwise
    ``common_point_ok`` is None.  ``dw1_decreasing`` asks the summed
    distance to fall over the final ``tail`` of snapshots, with no single
    rise larger than ``noise`` times its range there.
    """
    snaps = series.snapshots if snapshots is None else snapshots
    if not snaps:
        raise ConfigurationError("concentration report needs snapshots")
    A, beta = _meta_A_beta(series, A, beta)
    grid = snaps[0][1].grid
    times, dist, peaks, coms, commons, cell_frac = [], [], [], [], [], []
    for t, f in snaps:
        com = center_of_mass(f)
        times.append(t)
        coms.append(com)
        dist.append(_dirac_distance(f, com))
        peaks.append(np.array([_peak(grid, f.values[i]) for i in range(f.n)]))
        commons.append(_peak(grid, f.values.sum(axis=0)))
        cell_frac.append(f.values.reshape(f.n, -1).max(axis=1) * grid.cell_area / f.target_mass)
    dist = np.array(dist)
    k0 = min(int(math.floor((1 - tail) * len(snaps))), len(snaps) - 1)
    d_tail = dist[k0:].sum(axis=1)
    span = d_tail.max() - d_tail.min()
    rises = np.diff(d_tail)
    decreasing = bool(d_tail.size < 2 or (d_tail[-1] < d_tail[0] and np.all(rises <= noise * span)))
    stopped = series.stop_reason == "concentration"
    regime = classify(A, beta).regime if np.all(np.diag(A) > 0) else None
    common = commons[-1]
    spread = float(max(np.hypot(*(peaks[-1] - common).T).max(), np.hypot(*(coms[-1] - common))))
    ok = None
    if stopped and regime is Regime.CRITICAL:
        ok = spread <= 2 * grid.spacing
    return {"concentrating": stopped, "common_point_estimate": common, "common_point_ok": ok,
            "peak_spread": spread, "h": grid.spacing, "times": np.array(times),
            "dw1_to_dirac": dist, "dw1_decreasing": decreasing, "peaks": np.array(peaks),
            "com": np.array(coms), "max_cell_fraction": np.array(cell_frac)}


def fisher_inequality_report(series: TimeSeries, tau: float | None = None) -> dict:
    """Per-step ``Fisher(rho^k) - (2 / tau) [H(rho^(k-1)) - H(rho^k)]`` and its fitted bound.

    The theoretical constant is not explicit, so the report gives the fitted
    constant (the maximum) for comparison across refinements.
    """
    if tau is None:
        tau = series.meta.get("tau")
        if tau is None:
            tau = float(np.median(np.diff(series.t)))
    H = series.column("entropy")
    fish = series.column("fisher")
    q = fish[1:] - (2.0 / float(tau)) * (H[:-1] - H[1:])
    return {"values": q, "fitted_constant": float(q.max(initial=-math.inf))}


def upsilon_envelope(series: TimeSeries) -> dict:
    """Running envelope of the ``(|x|^2)^p`` moment against its initial value."""
    u = series.column("upsilon_1.5")
    return {"initial": float(u[0]), "max": float(u.max()), "ratio": float(u.max() / u[0]) if u[0] > 0 else math.inf}


def boundary_report(series: TimeSeries, warn: bool = True) -> dict:
    """Boundary-adjacent mass fraction; warns when the running value passes the threshold."""
    b = series.column("boundary_mass_fraction")
    out = {"initial": float(b[0]), "max": float(b.max())}
    if warn and b.max() > BOUNDARY_WARN:
        warnings.warn(f"boundary mass fraction reached {b.max():.3g}; enlarge the domain", RuntimeWarning)
    return out


def com_drift(series: TimeSeries) -> float:
    """Largest COM displacement from its initial value per unit time."""
    x, y, t = series.column("com_x"), series.column("com_y"), series.t
    if t[-1] <= t[0]:
        return 0.0
    return float(np.hypot(x - x[0], y - y[0]).max() / (t[-1] - t[0]))
