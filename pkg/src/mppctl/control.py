"""Cost evaluation of feedback policies, the brute-force oracle and cost transforms."""
from __future__ import annotations

import csv
import io
import itertools
import json
import math
from dataclasses import dataclass

import numpy as np

from .errors import TooManyPolicies
from .girsanov import mean_and_se, terminal_likelihood
from .hjb import policy_value
from .model import ModelSpec, validate_model
from .pathint import StateIntegral, constant_rule, jump_sum, merge_nodes, piece_cells
from .sim import PathBatch, Policy, simulate_controlled_batch, simulate_reference_batch


@dataclass(frozen=True)
class CostEstimate:
    estimate: float
    std_error: float
    n_paths: int
    route: str  # "direct" | "reweighted"

    def to_dict(self) -> dict:
        return {"estimate": self.estimate, "std_error": self.std_error,
                "n_paths": self.n_paths, "route": self.route}


def path_costs(model: ModelSpec, policy: Policy, batch: PathBatch) -> np.ndarray:
    """``int_{t0}^T l(X_s, u(s, X_s)) dA_s + g(X_T)`` per path, exact for piecewise-constant data."""
    nodes = merge_nodes(model.time_grid, policy.times)
    cells = piece_cells(model.time_grid, nodes)
    act = policy.table[piece_cells(policy.times, nodes)]
    xs = np.arange(model.n_states)
    rate = model.base_rate[cells][:, None] * model.running_cost[cells[:, None], xs[None, :], act]
    running = StateIntegral(nodes, model.n_states, constant_rule(rate)).along(batch)
    return running + model.terminal_cost[batch.final_states()]


def mc_cost_direct(model: ModelSpec, policy: Policy, t0: float, x0, n: int, seed: int,
                   threads: int = 1) -> CostEstimate:
    batch = simulate_controlled_batch(model, policy, t0, x0, np.arange(n), seed, threads)
    est, se = mean_and_se(path_costs(model, policy, batch))
    return CostEstimate(est, se, n, "direct")


def mc_cost_reweighted(model: ModelSpec, policy: Policy, t0: float, x0, n: int, seed: int,
                       threads: int = 1) -> CostEstimate:
    """Same target as :func:`mc_cost_direct`, from P-paths weighted by L_T.

    Uses streams ``n .. 2n-1`` so it is independent of the direct route at equal seed.
    """
    batch = simulate_reference_batch(model, t0, x0, np.arange(n, 2 * n), seed, threads)
    w = terminal_likelihood(model, policy, batch)
    est, se = mean_and_se(w * path_costs(model, policy, batch))
    return CostEstimate(est, se, n, "reweighted")


def mc_jump_cost(model: ModelSpec, policy: Policy, c, t0: float, x0, n: int, seed: int,
                 threads: int = 1) -> CostEstimate:
    """Mean of ``sum_{T_n <= T} c(T_n, xi_n, u_{T_n})`` under P_u; ``c`` is (cells, states, actions)."""
    c = np.asarray(c, dtype=np.float64)
    batch = simulate_controlled_batch(model, policy, t0, x0, np.arange(n), seed, threads)

    def fn(t, pre, mark):
        return c[model.cell_index(t), mark, policy.action(t, pre)]

    est, se = mean_and_se(jump_sum(batch, fn))
    return CostEstimate(est, se, n, "direct")


@dataclass
class OracleResult:
    coarse_times: np.ndarray
    policies: list[Policy]
    costs: np.ndarray            # (n_policies, n_states) value at t = 0
    min_cost: np.ndarray         # (n_states,)
    argmin: list[int]            # policy id per start state

    def argmin_policy(self, x: int) -> Policy:
        return self.policies[self.argmin[x]]

    def to_csv(self, states) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["policy_id", "start_state", "cost"])
        for pid in range(len(self.policies)):
            for x, name in enumerate(states):
                w.writerow([pid, name, repr(float(self.costs[pid, x]))])
        return buf.getvalue()

    def summary(self, model: ModelSpec) -> dict:
        return {
            "coarse_cells": len(self.coarse_times) - 1,
            "n_policies": len(self.policies),
            "min_cost": {s: float(self.min_cost[x]) for x, s in enumerate(model.states)},
            "argmin": {
                s: {"policy_id": self.argmin[x],
                    "table": [[model.actions[u] for u in row] for row in self.policies[self.argmin[x]].table]}
                for x, s in enumerate(model.states)
            },
        }


def brute_force_value(model: ModelSpec, coarse_cells: int, min_fine_cells: int = 1000) -> OracleResult:
    """Evaluate every feedback policy that is constant on ``coarse_cells`` equal time cells."""
    n_pol = model.n_actions ** (model.n_states * coarse_cells)
    if n_pol > 10**6:
        raise TooManyPolicies(f"{n_pol} policies exceed the limit of 10^6")
    coarse = np.linspace(0.0, model.horizon, coarse_cells + 1)
    merged = len(merge_nodes(model.time_grid, coarse)) - 1
    substeps = max(1, math.ceil(min_fine_cells / merged))
    policies, costs = [], []
    for choice in itertools.product(range(model.n_actions), repeat=model.n_states * coarse_cells):
        pol = Policy(coarse, np.array(choice).reshape(coarse_cells, model.n_states))
        policies.append(pol)
        costs.append(policy_value(model, pol, substeps).values[0])
    costs = np.array(costs)
    argmin = [int(np.argmin(costs[:, x])) for x in range(model.n_states)]
    return OracleResult(coarse, policies, costs, costs.min(axis=0), argmin)


def restrict_policy(policy: Policy, coarse_times) -> Policy:
    """Coarse-grid policy taking ``policy``'s action at each coarse cell midpoint."""
    coarse_times = np.asarray(coarse_times, dtype=np.float64)
    mids = 0.5 * (coarse_times[:-1] + coarse_times[1:])
    return Policy(coarse_times, policy.table[policy.cell_index(mids)])


def transform_dAu_cost(model: ModelSpec) -> ModelSpec:
    """Running cost charged against the controlled compensator: l0 = l * sum_y r phi."""
    mass = np.einsum("jyu,jy->ju", model.rate_modifier, model.mark_dist)
    l0 = model.running_cost * mass[:, None, :]
    return validate_model(model.with_updates(running_cost=l0, C_l=model.C_l * model.C_r))


def transform_jump_cost(model: ModelSpec, c) -> ModelSpec:
    """Per-jump cost c(t, y, u) rewritten as running cost l1 = sum_y c r phi with g = 0."""
    c = np.asarray(c, dtype=np.float64)
    if c.shape != model.rate_modifier.shape:
        raise ValueError(f"jump cost must have shape {model.rate_modifier.shape}")
    l1 = np.einsum("jyu,jyu,jy->ju", c, model.rate_modifier, model.mark_dist)
    l1 = np.repeat(l1[:, None, :], model.n_states, axis=1)
    bound = model.C_r * float(np.max(np.abs(c)))
    return validate_model(model.with_updates(
        running_cost=l1,
        terminal_cost=np.zeros(model.n_states),
        C_l=bound if bound > 0 else model.C_l,
    ))


def oracle_json(model: ModelSpec, result: OracleResult) -> str:
    return json.dumps(result.summary(model), sort_keys=True)
