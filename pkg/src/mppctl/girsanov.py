"""Girsanov density of a feedback control and Monte Carlo checks of the measure change.

    L_t = exp( int_{t0}^t sum_y (1 - r_s(y, u_s)) phi_s(y) dA_s ) * prod_{T_n <= t} r_{T_n}(xi_n, u_{T_n})

with ``u_s = policy(s, X_{s-})``.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np

from .model import ModelSpec, beta_thresholds
from .pathint import StateIntegral, constant_rule, jump_sum, merge_nodes, piece_cells
from .sim import PathBatch, Policy, Trajectory, simulate_controlled_batch, simulate_reference_batch


@dataclass(frozen=True)
class LikelihoodPath:
    times: np.ndarray   # t0, jump times, T
    values: np.ndarray

    @property
    def terminal(self) -> float:
        return float(self.values[-1])


@dataclass(frozen=True)
class MCReport:
    estimate: float
    std_error: float
    bound: float | None = None
    z_max: float | None = None

    def to_json(self) -> str:
        return json.dumps({"estimate": self.estimate, "std_error": self.std_error,
                           "bound": self.bound, "z_max": self.z_max}, sort_keys=True)


def mean_and_se(samples) -> tuple[float, float]:
    samples = np.asarray(samples, dtype=np.float64)
    n = samples.size
    mean = float(samples.mean())
    if n < 2:
        return mean, 0.0
    return mean, float(samples.std(ddof=1) / math.sqrt(n))


def _compensator_integral(model: ModelSpec, policy: Policy) -> StateIntegral:
    nodes = merge_nodes(model.time_grid, policy.times)
    cells = piece_cells(model.time_grid, nodes)
    act = policy.table[piece_cells(policy.times, nodes)]  # (pieces, x)
    r = model.rate_modifier[cells[:, None], :, act]       # (pieces, x, y)
    tilt = np.einsum("kxy,ky->kx", r, model.mark_dist[cells])
    rate = model.base_rate[cells][:, None] * (1.0 - tilt)
    return StateIntegral(nodes, model.n_states, constant_rule(rate))


def _jump_factor(model: ModelSpec, policy: Policy):
    def fn(t, pre, mark):
        return model.rate_modifier[model.cell_index(t), mark, policy.action(t, pre)]
    return fn


def log_likelihood_terminal(model: ModelSpec, policy: Policy, batch: PathBatch) -> np.ndarray:
    """log L_T per path; ``-inf`` where some jump factor vanishes."""
    drift = _compensator_integral(model, policy).along(batch)
    factor = _jump_factor(model, policy)

    def logf(t, pre, mark):
        with np.errstate(divide="ignore"):
            return np.log(factor(t, pre, mark))

    return drift + jump_sum(batch, logf)


def terminal_likelihood(model: ModelSpec, policy: Policy, batch: PathBatch) -> np.ndarray:
    return np.exp(log_likelihood_terminal(model, policy, batch))


def likelihood(model: ModelSpec, policy: Policy, traj: Trajectory) -> LikelihoodPath:
    """Density along one path, at its start, at each jump and at T."""
    comp = _compensator_integral(model, policy)
    factor = _jump_factor(model, policy)
    times = [traj.start_time]
    logs = [0.0]
    log_prod, x = 0.0, traj.start_state
    for t, y in traj.jumps:
        f = float(factor(np.array([t]), np.array([x]), np.array([y]))[0])
        log_prod = log_prod + math.log(f) if f > 0 and log_prod > -math.inf else -math.inf
        times.append(t)
        logs.append(log_prod)
        x = y
    times.append(model.horizon)
    logs.append(log_prod)
    times = np.array(times)
    batch = PathBatch.from_trajectories([traj], model.horizon)
    starts, ends, states = batch.segments()
    seg = np.where(ends > starts, comp.over(states, starts, ends), 0.0)[0]
    # drift accumulated up to each recorded time: segments end at the jumps, then at T
    drift = np.concatenate([[0.0], np.cumsum(seg)])
    values = np.exp(drift + np.array(logs))
    return LikelihoodPath(times=times, values=values)


def verify_normalization(model: ModelSpec, policy: Policy, n_paths: int, seed: int, x0=0,
                         t0: float = 0.0, threads: int = 1) -> MCReport:
    batch = simulate_reference_batch(model, t0, x0, np.arange(n_paths), seed, threads)
    est, se = mean_and_se(terminal_likelihood(model, policy, batch))
    return MCReport(est, se)


def verify_moment_bound(model: ModelSpec, policy: Policy, n_paths: int, seed: int, x0=0,
                        t0: float = 0.0, threads: int = 1) -> MCReport:
    """E L_T^2 against exp(beta A_T / 2) with beta = 3 + C_r^4 (gamma = 2)."""
    batch = simulate_reference_batch(model, t0, x0, np.arange(n_paths), seed, threads)
    est, se = mean_and_se(terminal_likelihood(model, policy, batch) ** 2)
    beta = beta_thresholds(model).beta_girsanov
    return MCReport(est, se, bound=math.exp(beta * model.A_T / 2.0))


@dataclass(frozen=True)
class CompensatorReport:
    direct: list[float]
    direct_se: list[float]
    reweighted: list[float]
    reweighted_se: list[float]
    z: list[float]
    z_max: float

    def to_json(self) -> str:
        return json.dumps(self.__dict__, sort_keys=True)


def mark_counts(model: ModelSpec, batch: PathBatch) -> np.ndarray:
    """(P, n_states) number of jumps landing on each mark."""
    out = np.zeros((batch.n_paths, model.n_states))
    for y in range(model.n_states):
        out[:, y] = (batch.marks == y).sum(axis=1)
    return out


def empirical_compensator_check(model: ModelSpec, policy: Policy, n_paths: int, seed: int, x0=0,
                                t0: float = 0.0, threads: int = 1) -> CompensatorReport:
    """Mean y-marked jump counts under P_u, directly and by reweighting P-paths with L_T.

    The two routes use disjoint stream ranges.
    """
    direct = simulate_controlled_batch(model, policy, t0, x0, np.arange(n_paths), seed, threads)
    ref = simulate_reference_batch(model, t0, x0, np.arange(n_paths, 2 * n_paths), seed, threads)
    cd = mark_counts(model, direct)
    cr = mark_counts(model, ref) * terminal_likelihood(model, policy, ref)[:, None]
    d_stats = [mean_and_se(cd[:, y]) for y in range(model.n_states)]
    r_stats = [mean_and_se(cr[:, y]) for y in range(model.n_states)]
    z = []
    for (dm, ds), (rm, rs) in zip(d_stats, r_stats):
        pooled = math.hypot(ds, rs)
        z.append(abs(dm - rm) / pooled if pooled > 0 else (0.0 if dm == rm else math.inf))
    return CompensatorReport(
        direct=[m for m, _ in d_stats], direct_se=[s for _, s in d_stats],
        reweighted=[m for m, _ in r_stats], reweighted_se=[s for _, s in r_stats],
        z=z, z_max=max(z),
    )
