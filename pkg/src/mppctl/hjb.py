"""Deterministic HJB system on a finite state space: backward marching and Picard iteration.

With deterministic coefficients the stochastic HJB equation has a zero kernel
and reduces to the backward integral equation

    v(t,x) = g(x) + int_t^T min_u [ l(x,u) + sum_y (v(s,y) - v(s,x)) r(y,u) phi(y) ] dA_s.
"""
from __future__ import annotations

import csv
import io
import json
from dataclasses import asdict, dataclass, field

import numpy as np

from .errors import NoConvergence, StepTooLarge
from .hamiltonian import generator, hamiltonian_field, jump_drift
from .model import ModelSpec, cumulative_A, hjb_contraction_constants, lipschitz_constants, refine
from .pathint import merge_nodes, piece_cells
from .sim import Policy


@dataclass(frozen=True, eq=False)
class ValueField:
    """``v(t, x)`` at time nodes, linear in t between nodes."""

    times: np.ndarray
    values: np.ndarray  # (n_nodes, n_states)

    def at(self, t) -> np.ndarray:
        """Values of every state at ``t``; shape ``t.shape + (n_states,)``."""
        t = np.asarray(t, dtype=np.float64)
        cols = [np.interp(t, self.times, self.values[:, x]) for x in range(self.values.shape[1])]
        return np.stack(cols, axis=-1)

    def __call__(self, t, x):
        return np.interp(t, self.times, self.values[:, x])

    def to_csv(self, states) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["t", "state", "v"])
        for k, t in enumerate(self.times):
            for x, name in enumerate(states):
                w.writerow([repr(float(t)), name, repr(float(self.values[k, x]))])
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str, states) -> "ValueField":
        rows = list(csv.DictReader(io.StringIO(text)))
        times = sorted({float(r["t"]) for r in rows})
        index = {t: k for k, t in enumerate(times)}
        values = np.full((len(times), len(states)), np.nan)
        for r in rows:
            values[index[float(r["t"])], list(states).index(r["state"])] = float(r["v"])
        return cls(np.array(times), values)


@dataclass
class ConvergenceReport:
    deltas: list[float]
    ratio: float
    iterations: int
    c_beta: float
    c1_beta: float
    c2_beta: float
    beta: float
    converged: bool = True
    ratios: list[float] = field(default_factory=list)

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True)


def _refine_nodes(nodes: np.ndarray, substeps: int) -> np.ndarray:
    if substeps == 1:
        return nodes
    frac = np.arange(substeps) / substeps
    fine = (nodes[:-1, None] + np.diff(nodes)[:, None] * frac[None, :]).ravel()
    return np.append(fine, nodes[-1])


def _check_steps(model: ModelSpec, nodes: np.ndarray, cells: np.ndarray) -> np.ndarray:
    dA = model.base_rate[cells] * np.diff(nodes)
    worst = float(np.max(dA)) * model.C_r if dA.size else 0.0
    if worst > 1.0:
        raise StepTooLarge(f"dA * C_r = {worst:.4g} > 1; increase substeps")
    return dA


def policy_value(model: ModelSpec, policy: Policy, substeps: int = 1) -> ValueField:
    """Cost-to-go of a feedback policy by explicit backward Euler in the dA clock."""
    policy.check(model)
    nodes = _refine_nodes(merge_nodes(model.time_grid, policy.times), substeps)
    cells = piece_cells(model.time_grid, nodes)
    pcells = piece_cells(policy.times, nodes)
    dA = _check_steps(model, nodes, cells)
    n = model.n_states
    xs = np.arange(n)
    v = np.empty((len(nodes), n))
    v[-1] = model.terminal_cost
    for k in range(len(nodes) - 2, -1, -1):
        j, act = cells[k], policy.table[pcells[k]]
        w = v[k + 1]
        rr = model.rate_modifier[j][:, act]  # (y, x)
        flow = ((w[:, None] - w[None, :]) * rr * model.mark_dist[j][:, None]).sum(axis=0)
        v[k] = w + dA[k] * (model.running_cost[j, xs, act] + flow)
    return ValueField(nodes, v)


def hjb_march(model: ModelSpec, substeps: int = 1) -> ValueField:
    """Explicit backward Euler for the HJB system on the grid refined ``substeps`` times."""
    if substeps < 1:
        raise ValueError("substeps must be >= 1")
    nodes = refine(model, substeps).time_grid
    cells = piece_cells(model.time_grid, nodes)
    dA = _check_steps(model, nodes, cells)
    v = np.empty((len(nodes), model.n_states))
    v[-1] = model.terminal_cost
    for k in range(len(nodes) - 2, -1, -1):
        h, _ = generator(model, cells[k:k + 1], v[k + 1][None, :])
        v[k] = v[k + 1] + dA[k] * h[0]
    return ValueField(nodes, v)


def picard_step(model: ModelSpec, v_in: ValueField) -> ValueField:
    """One application of the fixed-point map, trapezoidal in time on ``v_in``'s nodes."""
    nodes = v_in.times
    cells = piece_cells(model.time_grid, nodes)
    w = v_in.values

    def integrand(at):
        f, _ = hamiltonian_field(model, cells, at)
        return jump_drift(model, cells, at) + f

    left, right = integrand(w[:-1]), integrand(w[1:])
    dA = (model.base_rate[cells] * np.diff(nodes))[:, None]
    pieces = 0.5 * dA * (left + right)
    tail = np.concatenate([np.cumsum(pieces[::-1], axis=0)[::-1], np.zeros((1, model.n_states))])
    return ValueField(nodes, model.terminal_cost[None, :] + tail)


def hjb_picard(model: ModelSpec, beta: float, tol: float = 1e-10, max_iter: int = 200,
               substeps: int = 1) -> tuple[ValueField, ConvergenceReport]:
    """Iterate :func:`picard_step` from ``v = g`` until the weighted sup-norm step drops below ``tol``."""
    nodes = refine(model, substeps).time_grid
    weight = np.exp(0.5 * beta * cumulative_A(model, nodes))[:, None]
    v = ValueField(nodes, np.tile(model.terminal_cost, (len(nodes), 1)))
    c1, c2 = hjb_contraction_constants(lipschitz_constants(model).L, beta)
    deltas: list[float] = []
    for _ in range(max_iter):
        nxt = picard_step(model, v)
        delta = float(np.max(weight * np.abs(nxt.values - v.values)))
        deltas.append(delta)
        v = nxt
        if delta < tol:
            break
    else:
        raise NoConvergence(f"no convergence in {max_iter} iterations (last step {deltas[-1]:.3g})")
    ratios = [deltas[k] / deltas[k - 1] for k in range(2, len(deltas)) if deltas[k - 1] > 0 and deltas[k] > 0]
    report = ConvergenceReport(
        deltas=deltas, ratio=max(ratios, default=0.0), iterations=len(deltas),
        c_beta=c1 + c2, c1_beta=c1, c2_beta=c2, beta=float(beta), ratios=ratios,
    )
    return v, report
