"""Pathwise and Monte Carlo checks of the BSDE identities.

Everything here is driven by deterministic fields on the model's time cells and
by paths from :mod:`mppctl.sim`; dA-integrals are evaluated exactly (or by
high-order Gauss rules for exponential weights), so the only noise left in a
check is Monte Carlo noise or floating-point round-off.
"""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass

import numpy as np

from .errors import BetaTooSmall
from .girsanov import mean_and_se
from .hamiltonian import difference_brackets, hamiltonian_field, jump_drift
from .hjb import ValueField, hjb_march
from .model import ModelSpec, cumulative_A, lipschitz_constants
from .pathint import StateIntegral, gauss_rule, jump_sum, min_linear_rule, piece_cells
from .sim import PathBatch, Trajectory, simulate_reference_batch


@dataclass(frozen=True, eq=False)
class DriftField:
    """Deterministic ``f(t, x)``, constant on each model cell: values (cells, states)."""

    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        if v.ndim != 2 or not np.all(np.isfinite(v)):
            raise ValueError("drift field must be a finite (cells, states) array")
        object.__setattr__(self, "values", v)

    @classmethod
    def zero(cls, model: ModelSpec) -> "DriftField":
        return cls(np.zeros((model.n_cells, model.n_states)))

    @classmethod
    def random(cls, model: ModelSpec, rng: np.random.Generator, scale: float = 1.0) -> "DriftField":
        return cls(rng.uniform(-scale, scale, (model.n_cells, model.n_states)))


@dataclass(frozen=True, eq=False)
class KernelField:
    """Deterministic ``V(t, x, y)``, constant on each model cell: values (cells, states, states)."""

    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        if v.ndim != 3 or v.shape[1] != v.shape[2] or not np.all(np.isfinite(v)):
            raise ValueError("kernel field must be a finite (cells, states, states) array")
        object.__setattr__(self, "values", v)

    @classmethod
    def zero(cls, model: ModelSpec) -> "KernelField":
        return cls(np.zeros((model.n_cells, model.n_states, model.n_states)))

    @classmethod
    def random(cls, model: ModelSpec, rng: np.random.Generator, scale: float = 1.0) -> "KernelField":
        n = model.n_states
        return cls(rng.uniform(-scale, scale, (model.n_cells, n, n)))


@dataclass(frozen=True)
class CheckReport:
    check: str
    lhs: float
    rhs: float
    tolerance: float
    passed: bool
    extra: dict | None = None

    def to_dict(self) -> dict:
        out = {"check": self.check, "lhs": self.lhs, "rhs": self.rhs,
               "tolerance": self.tolerance, "pass": bool(self.passed)}
        if self.extra:
            out.update(self.extra)
        return out

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)


# ---------------------------------------------------------------- Itô lemma

@dataclass(frozen=True)
class ItoResidual:
    residual_prima: float
    residual_seconda: float
    n_jumps: int
    lhs: float

    @property
    def tolerance(self) -> float:
        return 1e-9 * (1 + self.n_jumps)

    @property
    def ok(self) -> bool:
        return self.residual_prima <= self.tolerance and self.residual_seconda <= self.tolerance


def ito_identity_check(model: ModelSpec, fhat: DriftField, V: KernelField, v0,
                       traj: Trajectory) -> ItoResidual:
    """Build ``v(t, x) = v0(x) + int f dA + int int V dq`` along ``traj`` and compare
    ``v(T, X_T) - v(t0, X_t0)`` with the compensated-jump and the martingale forms of
    the chain rule.  Both residuals are pure round-off.
    """
    f, K = fhat.values, V.values
    a, phi = model.base_rate, model.mark_dist
    t0, T = traj.start_time, model.horizon
    grid = model.time_grid
    jump_t = traj.times
    inner = grid[(grid > t0) & (grid < T)]
    nodes = np.unique(np.concatenate([[t0, T], inner, jump_t]))
    cells = piece_cells(grid, nodes)
    # drift of v(., x) on each piece: a (f(x) - sum_y V(x, y) phi(y))
    slope = a[cells][:, None] * (f[cells] - np.einsum("kxy,ky->kx", K[cells], phi[cells]))
    jumps = {t: y for t, y in traj.jumps}

    v = np.asarray(v0, dtype=np.float64).copy()
    x = traj.start_state
    v_start = v[x]
    F = comp_prima = 0.0
    J = 0.0
    comp_left = comp_right = 0.0
    for i, j in enumerate(cells):
        dt = nodes[i + 1] - nodes[i]
        dA = a[j] * dt
        v_end = v + slope[i] * dt
        F += f[j, x] * dA
        comp_prima += float(K[j, x] @ phi[j]) * dA
        # mean over the piece of sum_y (v(y) - v(x) + V(y, y)) phi(y): v is linear, so the
        # trapezoid on the endpoints is exact
        diag = np.diagonal(K[j])
        g0 = float(((v - v[x] + diag) * phi[j]).sum())
        g1 = float(((v_end - v_end[x] + diag) * phi[j]).sum())
        comp_left += 0.5 * (g0 + g1) * dA
        h0 = float(((v - v[x] + diag - K[j, x]) * phi[j]).sum())
        h1 = float(((v_end - v_end[x] + diag - K[j, x]) * phi[j]).sum())
        comp_right += 0.5 * (h0 + h1) * dA
        v = v_end
        t_next = nodes[i + 1]
        if t_next in jumps:
            y = jumps[t_next]
            jc = model.cell_index(t_next)
            J += v[y] - v[x] + K[jc, y, y]
            v = v + K[jc, :, y]
            x = y
    lhs = v[x] - v_start
    prima = F + J - comp_prima
    seconda = F + (J - comp_left) + comp_right
    return ItoResidual(abs(lhs - prima), abs(lhs - seconda), traj.n_jumps, float(lhs))


# ---------------------------------------------------------------- BSDE residual

def _generator_integral(model: ModelSpec, v: ValueField) -> StateIntegral:
    """``int (sum_y (v(y) - v(x)) phi(y) + f(x, v(.) - v(x))) dA`` per state, exact for linear v."""
    nodes = v.times
    cells = piece_cells(model.time_grid, nodes)

    def brackets(x, k, s):
        w = v.at(s)
        c = cells[k]
        rows = np.arange(len(x))
        b = difference_brackets(model, c, w)[rows, x]
        drift = jump_drift(model, c, w)[rows, x]
        return model.base_rate[c][:, None] * (b + drift[:, None])

    return StateIntegral(nodes, model.n_states, min_linear_rule(brackets))


def bsde_residuals(model: ModelSpec, v: ValueField, batch: PathBatch) -> np.ndarray:
    """``|Y_t0 + int int Z dq - g(X_T) - int f(Z) dA|`` per path, with Y = v(s, X_s)
    and Z(y) = v(s, y) - v(s, X_s-).  The compensator part of the q-integral and the
    hamiltonian are integrated together in one exact min-of-linear rule.
    """
    gen = _generator_integral(model, v).along(batch)
    def dz(t, pre, mark):
        w = v.at(t)
        rows = np.arange(len(t))
        return w[rows, mark] - w[rows, pre]

    jumps = jump_sum(batch, dz)
    y0 = v.at(batch.t0)[batch.x0]
    res = y0 + jumps - gen - model.terminal_cost[batch.final_states()]
    return np.abs(res)


def bsde_residual(model: ModelSpec, v: ValueField, traj: Trajectory) -> float:
    batch = PathBatch.from_trajectories([traj], model.horizon)
    return float(bsde_residuals(model, v, batch)[0])


@dataclass(frozen=True)
class ConvergenceStudy:
    fine_cells: list[int]
    residual: list[float]
    slope: float

    def to_dict(self) -> dict:
        return asdict(self)


def residual_convergence(model: ModelSpec, substeps=(50, 150, 500), n_paths: int = 1000,
                         seed: int = 0, x0=0, threads: int = 1) -> ConvergenceStudy:
    """Mean pathwise residual of the marched HJB solution as the grid is refined.

    ``slope`` is the least-squares log-log slope of residual against fine-cell count.
    """
    batch = simulate_reference_batch(model, 0.0, x0, np.arange(n_paths), seed, threads)
    cells, res = [], []
    for m in substeps:
        v = hjb_march(model, m)
        cells.append(len(v.times) - 1)
        res.append(float(bsde_residuals(model, v, batch).mean()))
    slope = -float(np.polyfit(np.log(cells), np.log(res), 1)[0])
    return ConvergenceStudy(cells, res, slope)


# ---------------------------------------------------------------- linear BSDE

class LinearSolution:
    """``v(t, x) = E[g(X_T) + int_t^T f(s, X_s) dA_s | X_t = x]`` under the reference law.

    On a cell the backward equation is ``-v' = a (Q v + f)`` with ``Q = 1 phi^T - I``;
    since ``Q^2 = -Q`` the exponential is ``I + (1 - e^-tau) Q`` and the solution is
    closed-form, so ``v`` can be evaluated exactly at any time.
    """

    def __init__(self, model: ModelSpec, fhat: DriftField):
        self.model = model
        self.f = fhat.values
        grid = model.time_grid
        right = np.empty((model.n_cells + 1, model.n_states))
        right[-1] = model.terminal_cost
        for j in range(model.n_cells - 1, -1, -1):
            right[j] = self._propagate(j, right[j + 1], model.base_rate[j] * (grid[j + 1] - grid[j]))
        self.nodes_values = right
        phi = model.mark_dist
        vr = right[1:]
        self.tables = (vr, (vr * phi).sum(axis=1, keepdims=True) - vr,
                       self.f, (self.f * phi).sum(axis=1, keepdims=True) - self.f)

    def _propagate(self, j, vr, tau):
        phi, f = self.model.mark_dist[j], self.f[j]
        e = -np.expm1(-tau)
        Qv = vr @ phi - vr
        Qf = f @ phi - f
        return vr + e * Qv + tau * f + (tau - e) * Qf

    def at(self, k, s) -> np.ndarray:
        """Values at times ``s`` inside cells ``k`` (broadcast); shape s.shape + (n_states,)."""
        return _at_cells(self, k, s)


@dataclass(frozen=True)
class EnergyReport:
    lhs: float
    rhs: float
    lhs_se: float
    rhs_se: float
    combined_se: float
    rel_error: float
    beta: float
    n_paths: int
    # linear estimate: E int e^bA Y^2 dA + E int int e^bA Z^2 phi dA <= c1 Xi + c2 F
    bound_lhs: float
    bound_rhs: float
    bound_se: float
    c1: float
    c2: float

    def passed(self, grid_tol: float = 1e-3, k: float = 3.0) -> bool:
        return abs(self.lhs - self.rhs) <= k * self.combined_se + grid_tol

    def bound_passed(self, grid_tol: float = 1e-3, k: float = 3.0) -> bool:
        return self.bound_lhs <= self.bound_rhs + k * self.bound_se + grid_tol

    def reports(self, grid_tol: float = 1e-3) -> list[CheckReport]:
        return [
            CheckReport("energy_identity", self.lhs, self.rhs, 3 * self.combined_se + grid_tol,
                        self.passed(grid_tol), {"beta": self.beta, "combined_se": self.combined_se,
                                                "rel_error": self.rel_error, "n_paths": self.n_paths}),
            CheckReport("energy_linear_bound", self.bound_lhs, self.bound_rhs, 3 * self.bound_se + grid_tol,
                        self.bound_passed(grid_tol), {"c1": self.c1, "c2": self.c2}),
        ]


def linear_estimate_constants(beta: float) -> tuple[float, float]:
    return 4.0 * (1.0 + 1.0 / beta), 8.0 / beta * (1.0 + 1.0 / beta)


def _weighted(model: ModelSpec, beta: float, fn, order: int = 12) -> StateIntegral:
    """``int e^{beta A_s} fn(x, j, s) dA_s`` per state on the model cells."""
    grid = model.time_grid
    a, A = model.base_rate, model.A_nodes

    def integrand(x, k, s):
        w = np.exp(beta * (A[k] + a[k] * (s - grid[k])))
        return a[k] * w * fn(x, k, s)

    return StateIntegral(grid, model.n_states, gauss_rule(integrand, order))


def energy_identity_check(model: ModelSpec, fhat: DriftField, beta: float, n_paths: int,
                          seed: int, x0=0, threads: int = 1) -> EnergyReport:
    """Both sides of the energy identity at t = 0 for the linear BSDE with terminal
    ``g(X_T)`` and generator ``fhat``, averaged over reference paths.

    The per-path difference of the two sides has mean zero, so ``combined_se`` is
    the standard error of that paired difference.
    """
    if beta <= 0:
        raise ValueError("beta must be positive")
    sol = LinearSolution(model, fhat)
    phi, f = model.mark_dist, fhat.values

    def pick(vals, x):
        return np.take_along_axis(vals, x[..., None], axis=-1)[..., 0]

    def y2(x, k, s):
        return pick(sol.at(k, s), x) ** 2

    def z2(x, k, s):
        v = sol.at(k, s)
        d = v - pick(v, x)[..., None]
        return (d * d * phi[k]).sum(axis=-1)

    def yf(x, k, s):
        return pick(sol.at(k, s), x) * f[k, x]

    def f2(x, k, s):
        return np.broadcast_to(f[k, x] ** 2, np.shape(s))

    batch = simulate_reference_batch(model, 0.0, x0, np.arange(n_paths), seed, threads)
    IY = _weighted(model, beta, y2).along(batch)
    IZ = _weighted(model, beta, z2).along(batch)
    IYf = _weighted(model, beta, yf).along(batch)
    IF = _weighted(model, beta, f2).along(batch)
    xi2 = math.exp(beta * model.A_T) * model.terminal_cost[batch.final_states()] ** 2
    y0 = sol.nodes_values[0][model.state_index(x0)]

    lhs_p = y0 ** 2 + beta * IY + IZ
    rhs_p = xi2 + 2.0 * IYf
    lhs, lhs_se = mean_and_se(lhs_p)
    rhs, rhs_se = mean_and_se(rhs_p)
    _, comb = mean_and_se(lhs_p - rhs_p)
    scale = max(abs(lhs), abs(rhs))
    c1, c2 = linear_estimate_constants(beta)
    b_l = IY + IZ
    b_r = c1 * xi2 + c2 * IF
    bl, _ = mean_and_se(b_l)
    br, _ = mean_and_se(b_r)
    _, bse = mean_and_se(b_l - b_r)
    return EnergyReport(
        lhs=lhs, rhs=rhs, lhs_se=lhs_se, rhs_se=rhs_se, combined_se=comb,
        rel_error=abs(lhs - rhs) / scale if scale > 0 else 0.0, beta=float(beta), n_paths=n_paths,
        bound_lhs=bl, bound_rhs=br, bound_se=bse, c1=c1, c2=c2,
    )


def _at_cells(sol: LinearSolution, k, s) -> np.ndarray:
    """Vectorized :meth:`LinearSolution.at` for per-element cells ``k``."""
    model = sol.model
    k = np.asarray(k)
    s = np.asarray(s, dtype=np.float64)
    k, s = np.broadcast_arrays(k, s)
    tau = model.base_rate[k] * (model.time_grid[k + 1] - s)
    e = -np.expm1(-tau)[..., None]
    tau = tau[..., None]
    vr, Qv, f, Qf = sol.tables
    return vr[k] + e * Qv[k] + tau * f[k] + (tau - e) * Qf[k]


# ---------------------------------------------------------------- a priori estimates

@dataclass(frozen=True)
class AprioriReport:
    beta: float
    L: float
    L_prime: float
    y_norm: float        # |Ybar|_beta^2
    y_norm_se: float
    z_norm: float        # ||Zbar||_beta^2
    z_norm_se: float
    xi_term: float       # E e^{beta A_T} |xibar|^2
    f_term: float        # E int e^{beta A} |fbar|^2 dA
    y_bound: float
    z_bound: float
    y_slack_se: float
    z_slack_se: float
    n_paths: int

    @property
    def y_ok(self) -> bool:
        return self.y_norm <= self.y_bound + 3 * self.y_slack_se

    @property
    def z_ok(self) -> bool:
        return self.z_norm <= self.z_bound + 3 * self.z_slack_se

    def reports(self) -> list[CheckReport]:
        return [
            CheckReport("apriori_y", self.y_norm, self.y_bound, 3 * self.y_slack_se, self.y_ok,
                        {"beta": self.beta}),
            CheckReport("apriori_z", self.z_norm, self.z_bound, 3 * self.z_slack_se, self.z_ok,
                        {"beta": self.beta}),
        ]


def apriori_bounds(beta_eff: float, xi_term, f_term):
    """Right-hand sides (Y, Z) of the difference estimates at ``beta_eff = beta - 2L' - L^2``.

    The constant 16 dominates the 4 L^2 it absorbs only when L^2 <= 4; for larger
    Lipschitz constants the bound may be optimistic.
    """
    b = beta_eff
    y = 2.0 / b * xi_term + 4.0 / (b * b) * f_term
    z = (2.0 + 16.0 / b) * xi_term + 2.0 / b * (1.0 + 16.0 / b) * f_term
    return y, z


def apriori_check(model1: ModelSpec, model2: ModelSpec, beta: float, n_paths: int, seed: int,
                  x0=0, substeps: int = 500, threads: int = 1) -> AprioriReport:
    """Difference of two HJB-BSDE solutions against the a priori bounds, by MC over reference paths.

    Y^i = v^i(s, X_s) and Z^i(y) = v^i(s, y) - v^i(s, X_s-) with v^i from :func:`hjb_march`;
    fbar is the difference of the two hamiltonians evaluated along Z^2.
    """
    if model1.n_states != model2.n_states or not np.array_equal(model1.time_grid, model2.time_grid):
        raise ValueError("models must share the time grid and the state space")
    lc1, lc2 = lipschitz_constants(model1), lipschitz_constants(model2)
    L = max(lc1.L, lc2.L)
    Lp = max(lc1.L_prime, lc2.L_prime)
    beta_eff = beta - 2.0 * Lp - L * L
    if beta_eff <= 0:
        raise BetaTooSmall(f"beta = {beta} must exceed 2L' + L^2 = {2 * Lp + L * L}")
    v1, v2 = hjb_march(model1, substeps), hjb_march(model2, substeps)
    nodes = v1.times
    cells = piece_cells(model1.time_grid, nodes)
    a = model1.base_rate
    A_nodes = cumulative_A(model1, nodes)
    phi = model1.mark_dist

    def weighted(fn, order=8):
        def integrand(x, k, s):
            c = cells[k]
            w = np.exp(beta * (A_nodes[k] + a[c] * (s - nodes[k])))
            return a[c] * w * fn(x, c, s)
        return StateIntegral(nodes, model1.n_states, gauss_rule(integrand, order))

    def rows(vals, x):
        return np.take_along_axis(vals, x[..., None], axis=-1)[..., 0]

    def ybar2(x, c, s):
        return rows(v1.at(s) - v2.at(s), x) ** 2

    def zbar2(x, c, s):
        d = v1.at(s) - v2.at(s)
        z = d - rows(d, x)[..., None]
        return (z * z * phi[c]).sum(axis=-1)

    def fbar2(x, c, s):
        w = v2.at(s)
        shape = w.shape[:-1]
        wf = w.reshape(-1, w.shape[-1])
        cf = np.broadcast_to(c, shape).ravel()
        f1, _ = hamiltonian_field(model1, cf, wf)
        f2, _ = hamiltonian_field(model2, cf, wf)
        d = (f1 - f2).reshape(shape + (w.shape[-1],))
        return rows(d, x) ** 2

    batch = simulate_reference_batch(model1, 0.0, x0, np.arange(n_paths), seed, threads)
    IY = weighted(ybar2).along(batch)
    IZ = weighted(zbar2).along(batch)
    IF = weighted(fbar2).along(batch)
    gbar = model1.terminal_cost - model2.terminal_cost
    xi = math.exp(beta * model1.A_T) * gbar[batch.final_states()] ** 2
    yb_p, zb_p = apriori_bounds(beta_eff, xi, IF)
    y, y_se = mean_and_se(IY)
    z, z_se = mean_and_se(IZ)
    xi_m, _ = mean_and_se(xi)
    f_m, _ = mean_and_se(IF)
    yb, zb = apriori_bounds(beta_eff, xi_m, f_m)
    # slack: SE of the paired per-path difference between a side and its bound
    _, ys = mean_and_se(IY - yb_p)
    _, zs = mean_and_se(IZ - zb_p)
    return AprioriReport(
        beta=float(beta), L=L, L_prime=Lp, y_norm=y, y_norm_se=y_se, z_norm=z, z_norm_se=z_se,
        xi_term=xi_m, f_term=f_m, y_bound=yb, z_bound=zb, y_slack_se=ys, z_slack_se=zs,
        n_paths=n_paths,
    )
