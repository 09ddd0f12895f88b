"""Minimizing-movement (JKO) steps for the multi-species free energy.

Each step solves, per species, with the interaction potential ``V_i`` frozen,

    min_rho  int rho log rho + int V_i rho + dw_eps^2(rho, rho_i^{k-1}) / (2 tau)

by a generalized Sinkhorn loop on the entropic plan ``pi``.  Multiplying the
objective by ``2 tau`` and writing ``pi = exp((f + g - C) / eps)`` on cell
pairs, the old marginal is enforced by the usual log-domain update of ``g``
and the free marginal ``p = sum_y pi`` by the pointwise KL-prox

    (1 + s) log p = log z - (2 tau / eps) V + const,     s = w / eps,

where ``log z(x) = LSE_y (g(y) - C(x, y)) / eps`` and ``w`` is the weight on
the entropy of ``p``.  The constant is fixed by the mass, and then
``f = eps (log p - log z)``.

Blur compensation.  The entropic plan spreads every particle by a Gaussian
of variance ``eps / 2`` per coordinate, which acts like extra heat flow of
duration ``eps / 4`` per step.  Using ``w = 2 tau - eps / 2`` instead of
``2 tau`` removes it to first order (checked on Gaussians, where the step
then adds exactly ``2 tau`` to the variance).  The objective stays convex
since ``eps H(pi) + w H(p) = eps [H(pi) - H(p)] + (2 tau + eps / 2) H(p)``,
and the prox exponent ``s / (1 + s)`` stays inside (-1, 1).  For the same
reason the plan cost overstates the step distance by about ``eps * beta``;
the reported squared distance is the debiased Sinkhorn divergence between
the old and new states, assembled from the step potentials and one
warm-started symmetric solve per species.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.special import logsumexp

from .criticality import interaction_matrix
from .errors import ConfigurationError, NumericalFailure, SolverNotConverged
from .functionals import EnergyBreakdown, dissipation_per_species, free_energy
from .grid import DensityField, renormalize, second_moment
from .potential import interaction_potential, newtonian_potential
from .series import TimeSeries, concentrated_species, diagnostics_row
from .transport import (_sinkhorn_symmetric, default_epsilon, eps_schedule, grid_plan_cost,
                        grid_softmin)


@dataclass(frozen=True)
class JkoConfig:
    tau: float
    epsilon: float | None = None      # None: max(eps_min, c_eps h^2)
    c_eps: float = 4.0
    eps_min: float = 0.0
    inner_tol: float = 1e-9           # relative L1 marginal error
    inner_max: int = 2000
    outer_max: int = 0                # 0: semi-implicit
    outer_tol: float = 1e-6
    mass_projection: bool = True
    blur_compensation: bool = True
    inf_F_estimate: float | None = None

    def __post_init__(self):
        if not self.tau > 0:
            raise ConfigurationError(f"tau must be positive, got {self.tau}")
        if self.epsilon is not None and not self.epsilon > 0:
            raise ConfigurationError(f"epsilon must be positive, got {self.epsilon}")
        for name in ("inner_tol", "outer_tol"):
            if not getattr(self, name) > 0:
                raise ConfigurationError(f"{name} must be positive")
        if self.inner_max < 1 or self.outer_max < 0:
            raise ConfigurationError("inner_max must be >= 1 and outer_max >= 0")

    def eps_for(self, grid) -> float:
        if self.epsilon is not None:
            return self.epsilon
        return default_epsilon(grid, self.c_eps, self.eps_min)

    def entropy_weight(self, eps: float) -> float:
        w = 2 * self.tau - (0.5 * eps if self.blur_compensation else 0.0)
        return w


@dataclass
class JkoStepReport:
    dw2: np.ndarray                   # per species
    energy_before: EnergyBreakdown
    energy_after: EnergyBreakdown
    production_lhs: np.ndarray        # dw2 / tau^2
    production_rhs: np.ndarray        # per-species dissipation of the new state
    admissibility_margin: float
    outer_iterations: int
    inner_iterations: int
    marginal_error: float
    converged: bool
    concentrated: np.ndarray          # species indices
    m2_before: float
    m2_after: float
    tau: float
    epsilon: float
    slack: float = 0.0
    plan_cost: np.ndarray = field(default=None)


# --------------------------------------------------------------------------
# One species
# --------------------------------------------------------------------------

def _prox_log(logz, V, tau, eps, w, log_beta):
    s = w / eps
    lp = (logz - (2 * tau / eps) * V) / (1.0 + s)
    return lp - logsumexp(lp) + log_beta


def species_step(grid, b: np.ndarray, V: np.ndarray, tau: float, eps: float, w: float,
                 tol: float, max_iter: int, g0: np.ndarray | None = None, species: int = 0,
                 memory: int = 5):
    """Generalized Sinkhorn for one species; ``b`` are old cell masses.

    One sweep maps ``g`` to the prox marginal ``p``, the potential ``f`` and
    the updated ``g``; the sweep is accelerated by Anderson mixing on
    ``g / eps`` (safeguarded: a mixed iterate that raises the residual is
    replaced by the plain update).  The error is the relative L1 violation
    of the old-state marginal by the plan built from ``(f, g)``, whose new
    marginal equals ``p`` exactly.

    Returns ``(p, f, g, iterations, error)`` with new cell masses ``p``.
    """
    op = grid_softmin(grid)
    beta = b.sum()
    log_beta = math.log(beta)
    live = b > 0
    with np.errstate(divide="ignore"):
        logb = np.log(b)
    wts = b[live] / beta

    def sweep(x):
        g = np.full(b.shape, -np.inf)
        g[live] = eps * x
        logz = -op(eps, g / eps) / eps
        lp = _prox_log(logz, V, tau, eps, w, log_beta)
        with np.errstate(invalid="ignore"):
            f = np.where(np.isfinite(lp), eps * (lp - logz), -np.inf)
        g_new = eps * logb + op(eps, f / eps)
        y = g_new[live] / eps
        with np.errstate(over="ignore", invalid="ignore"):
            err = float(np.abs(wts * np.expm1(x - y)).sum())
        if not np.isfinite(err):
            bad = np.argwhere(~np.isfinite(g_new) & live)
            cell = tuple(int(c) for c in bad[0]) if bad.size else None
            raise NumericalFailure("non-finite value in the entropic prox", species=species, cell=cell)
        y = y - (wts * y).sum()  # fix the additive gauge
        return y, lp, f, g, err

    x = np.zeros(int(live.sum())) if g0 is None else g0[live] / eps
    x = x - (wts * x).sum()
    X, R = [], []
    it = 0
    y, lp, f, g, err = sweep(x)
    best = (err, lp, f, g)
    while err > tol and it < max_iter:
        r = y - x
        X.append(x)
        R.append(r)
        if len(X) > memory + 1:
            X.pop(0)
            R.pop(0)
        x_next = y
        if len(X) > 1:
            dR = np.column_stack([R[k + 1] - R[k] for k in range(len(R) - 1)])
            dX = np.column_stack([X[k + 1] - X[k] for k in range(len(X) - 1)])
            gamma, *_ = np.linalg.lstsq(dR, r, rcond=None)
            x_next = y - (dX + dR) @ gamma
        it += 1
        y2, lp2, f2, g2, err2 = sweep(x_next)
        if err2 > 10 * err and len(X) > 1:
            # mixing misbehaved: restart from the plain update
            X, R = [], []
            x_next = y
            y2, lp2, f2, g2, err2 = sweep(x_next)
            it += 1
        x, y, lp, f, g, err = x_next, y2, lp2, f2, g2, err2
        if err < best[0]:
            best = (err, lp, f, g)
    err, lp, f, g = best
    return np.exp(lp), f, g, it + 1, err


def plan_cost(grid, f: np.ndarray, g: np.ndarray, eps: float) -> float:
    return float(grid_plan_cost(grid, f / eps, g / eps, eps).sum())


def self_potential(grid, masses: np.ndarray, eps: float, tol: float, max_iter: int,
                   f0: np.ndarray | None = None):
    """Symmetric Sinkhorn potential of ``masses / beta`` (product reference)."""
    op = grid_softmin(grid)
    with np.errstate(divide="ignore"):
        la = np.log(masses / masses.sum())
    sched = [eps] if f0 is not None else eps_schedule(eps, 2 * (2 * grid.L) ** 2)
    return _sinkhorn_symmetric(op, la, eps, sched, max_iter, tol, f0)


def sinkhorn_divergence_step(p, f, b, g, fp_self, fb_self, eps) -> float:
    """Debiased ``S_eps(p, b)`` at mass beta from the JKO potentials.

    The step plan ``exp((f + g - C) / eps)`` on cells equals
    ``beta * a(x) b(y) exp((F + G - C) / eps)`` for the probability weights
    ``a = p / beta``, ``b / beta`` with ``F = f - eps log(a beta)`` and
    ``G = g - eps log(b / beta)``, so ``OT_eps(a, b) = <F, a> + <G, b>``.
    """
    beta = b.sum()
    a, bb = p / beta, b / beta
    ma, mb = a > 0, bb > 0
    F = f[ma] - eps * np.log(a[ma] * beta)
    G = g[mb] - eps * np.log(bb[mb])
    ot_ab = (F * a[ma]).sum() + (G * bb[mb]).sum()
    ot_aa = 2 * (fp_self[ma] * a[ma]).sum()
    ot_bb = 2 * (fb_self[mb] * bb[mb]).sum()
    return float(beta * (ot_ab - 0.5 * ot_aa - 0.5 * ot_bb))


# --------------------------------------------------------------------------
# Full step
# --------------------------------------------------------------------------

@dataclass
class _Warm:
    g: list = None
    self_f: list = None   # symmetric potentials of the current state


def jko_step(state: DensityField, A, cfg: JkoConfig, warm: _Warm | None = None,
             inf_F: float | None = None) -> tuple[DensityField, JkoStepReport]:
    """One minimizing-movement step; see the module docstring for the scheme."""
    A = interaction_matrix(A, positive_diagonal=False)
    if A.shape[0] != state.n:
        raise ConfigurationError(f"A is {A.shape[0]}x{A.shape[0]}, state has {state.n} species")
    grid = state.grid
    h2 = grid.cell_area
    eps = cfg.eps_for(grid)
    w = cfg.entropy_weight(eps)
    warm = warm if warm is not None else _Warm()
    interacting = bool(A.any())

    pot0 = newtonian_potential(state) if interacting else None
    e_before = free_energy(state, A, pot0)
    inf_est = inf_F if inf_F is not None else cfg.inf_F_estimate
    margin = math.nan
    if inf_est is not None:
        margin = inf_est + second_moment(state) / (2 * cfg.tau) - e_before.free_energy
        if margin <= 0:
            warnings.warn(f"admissibility margin {margin:.3g} is not positive", RuntimeWarning)

    b = state.values * h2
    V = interaction_potential(state, A, pot0) if interacting else np.zeros_like(b)
    g_list = warm.g if warm.g is not None else [None] * state.n
    total_inner = 0
    outer = 0
    errs = np.zeros(state.n)
    implicit = cfg.outer_max > 0 and interacting
    tol = max(cfg.inner_tol, 1e-6) if implicit else cfg.inner_tol
    final = not implicit
    while True:
        new_masses = np.empty_like(b)
        fs, gs = [], []
        for i in range(state.n):
            p, f, g, it, err = species_step(grid, b[i], V[i], cfg.tau, eps, w, tol,
                                            cfg.inner_max, g_list[i], species=i)
            new_masses[i] = p
            fs.append(f)
            gs.append(g)
            errs[i] = err
            total_inner += it
        g_list = gs
        new = DensityField(grid, new_masses / h2, state.target_mass)
        if final:
            break
        # fully implicit variant: refresh the potential from the new iterate;
        # inner solves stay loose until the potential has settled
        V_new = interaction_potential(new, A)
        change = np.abs(V_new - V).max() / max(np.abs(V_new).max(), 1e-300)
        V = V_new
        outer += 1
        if change < cfg.outer_tol or outer >= cfg.outer_max:
            final = True
            tol = cfg.inner_tol
    warm.g = g_list
    if cfg.mass_projection:
        new = renormalize(new)

    cost = np.array([plan_cost(grid, fs[i], g_list[i], eps) for i in range(state.n)])
    if warm.self_f is None:
        warm.self_f = [self_potential(grid, b[i], eps, cfg.inner_tol, 20 * cfg.inner_max)[0]
                       for i in range(state.n)]
    new_self = []
    dw2 = np.empty(state.n)
    for i in range(state.n):
        fp, it, err = self_potential(grid, new_masses[i], eps, cfg.inner_tol, cfg.inner_max,
                                     warm.self_f[i])
        total_inner += it
        errs[i] = max(errs[i], err)
        new_self.append(fp)
        dw2[i] = max(sinkhorn_divergence_step(new_masses[i], fs[i], b[i], g_list[i], fp,
                                              warm.self_f[i], eps), 0.0)
    warm.self_f = new_self
    converged = bool(np.all(errs <= cfg.inner_tol))
    pot1 = newtonian_potential(new) if interacting else None
    e_after = free_energy(new, A, pot1)
    report = JkoStepReport(
        dw2=dw2,
        energy_before=e_before,
        energy_after=e_after,
        production_lhs=dw2 / cfg.tau ** 2,
        production_rhs=dissipation_per_species(new, A, pot1),
        admissibility_margin=margin,
        outer_iterations=outer,
        inner_iterations=total_inner,
        marginal_error=float(errs.max()),
        converged=converged,
        concentrated=concentrated_species(new),
        m2_before=second_moment(state),
        m2_after=second_moment(new),
        tau=cfg.tau,
        epsilon=eps,
        slack=float(errs.max()) * float(np.sum(state.target_mass)),
        plan_cost=cost,
    )
    if not converged:
        raise SolverNotConverged(
            f"Sinkhorn marginal error {errs.max():.3g} above tolerance {cfg.inner_tol:.3g}",
            best=(new, report))
    return new, report


def production_identity_report(report: JkoStepReport) -> np.ndarray:
    """Per-species relative gap between ``dw2 / tau^2`` and the dissipation."""
    lhs, rhs = report.production_lhs, report.production_rhs
    scale = np.maximum(np.maximum(np.abs(lhs), np.abs(rhs)), 1e-300)
    return np.abs(lhs - rhs) / scale


# --------------------------------------------------------------------------
# Runs
# --------------------------------------------------------------------------

def jko_run(initial: DensityField, A, cfg: JkoConfig, horizon: float,
            sink: Callable | None = None, snapshot_every: int = 0,
            keep_reports: bool = False) -> TimeSeries:
    """Iterate :func:`jko_step` for ``ceil(T / tau)`` steps.

    ``sink(k, field, report)`` is called after every accepted step.  The run
    stops early when a species puts a quarter of its mass in one cell
    (``concentration``), after two consecutive Sinkhorn failures
    (``solver_failure``) or on a numerical failure (``numerical_failure``).
    """
    if not horizon > 0:
        raise ConfigurationError("horizon must be positive")
    A = interaction_matrix(A, positive_diagonal=False)
    steps = int(math.ceil(horizon / cfg.tau - 1e-9))
    eps = cfg.eps_for(initial.grid)
    series = TimeSeries(initial.n, {
        "kind": "jko", "A": A, "beta": np.asarray(initial.target_mass), "L": initial.grid.L,
        "N": initial.grid.N, "tau": cfg.tau, "epsilon": eps})
    series.reports = []
    state = initial
    series.append(diagnostics_row(state, A, 0.0, dw2=np.zeros(state.n)))
    if snapshot_every:
        series.snapshots.append((0.0, state))
    running_min = series.rows[0]["free_energy"]
    warm = _Warm()
    failures = 0
    for k in range(1, steps + 1):
        inf_F = cfg.inf_F_estimate if cfg.inf_F_estimate is not None else running_min
        try:
            new, rep = jko_step(state, A, cfg, warm, inf_F=inf_F)
            failures = 0
        except SolverNotConverged as exc:
            failures += 1
            new, rep = exc.best
            if failures >= 2:
                state = new
                series.append(diagnostics_row(state, A, k * cfg.tau, rep.dw2, rep.admissibility_margin))
                series.stop_reason = "solver_failure"
                break
        except NumericalFailure:
            series.stop_reason = "numerical_failure"
            break
        state = new
        t = k * cfg.tau
        series.append(diagnostics_row(state, A, t, rep.dw2, rep.admissibility_margin))
        running_min = min(running_min, series.rows[-1]["free_energy"])
        if keep_reports:
            series.reports.append(rep)
        if snapshot_every and k % snapshot_every == 0:
            series.snapshots.append((t, state))
        if sink is not None:
            sink(k, state, rep)
        if rep.concentrated.size:
            series.stop_reason = "concentration"
            if snapshot_every and k % snapshot_every:
                series.snapshots.append((t, state))
            break
    else:
        series.stop_reason = "horizon"
    series.meta["inf_F_estimate"] = running_min
    return series


# --------------------------------------------------------------------------
# Weak-form residual
# --------------------------------------------------------------------------

def _smoothstep_cutoff(s, s1, s2):
    """``chi(s)`` equal to 1 below ``s1``, 0 above ``s2``, C^2; with ``chi'`` and ``chi''``."""
    d = s2 - s1
    q = np.clip((s - s1) / d, 0.0, 1.0)
    inside = (s > s1) & (s < s2)
    chi = 1.0 - (6 * q ** 5 - 15 * q ** 4 + 10 * q ** 3)
    d1 = np.where(inside, -(30 * q ** 4 - 60 * q ** 3 + 30 * q ** 2) / d, 0.0)
    d2 = np.where(inside, -(120 * q ** 3 - 180 * q ** 2 + 60 * q) / d ** 2, 0.0)
    return chi, d1, d2


@dataclass(frozen=True)
class TestFunction:
    """Spatial factor ``psi`` of a test function ``theta(t) psi(x)``.

    ``kind`` is ``constant`` (a plateau cutoff), ``linear`` (``x . v`` times
    the cutoff) or ``bump`` (``(1 - |x|^2 / R^2)^4``).  The cutoff equals 1
    for ``|x| <= r_inner`` and vanishes beyond ``r_outer``.
    """

    kind: str = "constant"
    r_inner: float = 4.0
    r_outer: float = 6.0
    direction: tuple = (1.0, 0.0)
    __test__ = False

    def evaluate(self, X, Y):
        """Return ``psi``, ``grad psi`` (2, ...) and ``lap psi`` on arrays."""
        s = X * X + Y * Y
        if self.kind == "bump":
            R2 = self.r_outer ** 2
            u = np.clip(1.0 - s / R2, 0.0, None)
            psi = u ** 4
            f1 = -4.0 / R2 * u ** 3
            f2 = 12.0 / R2 ** 2 * u ** 2
            grad = np.stack([2 * X * f1, 2 * Y * f1])
            return psi, grad, 4 * s * f2 + 4 * f1
        chi, c1, c2 = _smoothstep_cutoff(s, self.r_inner ** 2, self.r_outer ** 2)
        gchi = np.stack([2 * X * c1, 2 * Y * c1])
        lchi = 4 * s * c2 + 4 * c1
        if self.kind == "constant":
            return chi, gchi, lchi
        if self.kind == "linear":
            v = np.asarray(self.direction, dtype=float)
            lin = v[0] * X + v[1] * Y
            grad = np.stack([v[0] * chi, v[1] * chi]) + lin * gchi
            lap = 2 * (v[0] * gchi[0] + v[1] * gchi[1]) + lin * lchi
            return lin * chi, grad, lap
        raise ConfigurationError(f"unknown test function kind {self.kind!r}")


def test_function_catalog(L: float) -> list[TestFunction]:
    return [TestFunction("constant", 0.55 * L, 0.85 * L),
            TestFunction("linear", 0.45 * L, 0.8 * L, (1.0, 0.0)),
            TestFunction("bump", 0.0, 0.6 * L),
            TestFunction("bump", 0.0, 0.3 * L)]


test_function_catalog.__test__ = False


def weak_residual(snapshots, A, xi: TestFunction, T: float | None = None) -> float:
    """Residual of the weak formulation for ``theta(t) psi(x)``, ``theta = (1 - t/T)^2``.

    ``snapshots`` is the list ``[(t_0 = 0, rho^0), (t_1, rho^1), ...]`` of a
    run; the density is taken piecewise constant, equal to ``rho^k`` on
    ``(t_{k-1}, t_k]``.  With ``v_i = sum_j a_ij grad u_j`` the residual is

        | int int d_t xi rho + int xi(0) rho^0 + int int (lap xi rho + grad xi . rho v) |

    summed over species, which is the weak form after moving the diffusion
    derivative onto ``xi``.
    """
    A = np.atleast_2d(np.asarray(A, dtype=float))
    times = np.array([s[0] for s in snapshots])
    if T is None:
        T = times[-1]
    grid = snapshots[0][1].grid
    X, Y = grid.mesh
    psi, gpsi, lpsi = xi.evaluate(X, Y)
    h2 = grid.cell_area
    theta = lambda t: (1.0 - np.minimum(t, T) / T) ** 2
    # int theta over [a, b] for theta = (1 - t/T)^2
    Theta = lambda t: -T / 3.0 * (1.0 - np.minimum(t, T) / T) ** 3
    total = theta(0.0) * float((psi * snapshots[0][1].values.sum(axis=0)).sum() * h2)
    for k in range(1, len(snapshots)):
        a, b = times[k - 1], times[k]
        rho = snapshots[k][1]
        pair = float((psi * rho.values.sum(axis=0)).sum() * h2)
        total += (theta(b) - theta(a)) * pair
        flux = float((lpsi * rho.values.sum(axis=0)).sum() * h2)
        if A.any():
            pot = newtonian_potential(rho)
            v = np.einsum("ij,jdab->idab", A, pot.grad)
            flux += float((np.einsum("dab,idab->iab", gpsi, v) * rho.values).sum() * h2)
        total += (Theta(b) - Theta(a)) * flux
    return abs(total)


def weak_residual_jko(series: TimeSeries, xi: TestFunction, A=None) -> float:
    if not series.snapshots:
        raise ConfigurationError("series has no field snapshots")
    return weak_residual(series.snapshots, series.meta["A"] if A is None else A, xi)
