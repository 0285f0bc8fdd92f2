"""The hamiltonian ``f(t, x, z) = min_u [ l(x,u) + sum_y z(y) (r(y,u) - 1) phi(y) ]``.

Ties are broken by the lowest action index, so selectors are deterministic.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .model import ModelSpec
from .pathint import piece_cells
from .sim import Policy


@dataclass(frozen=True)
class HamiltonianResult:
    value: float
    argmin_action: int


def brackets(model: ModelSpec, cell: int, x: int, z) -> np.ndarray:
    """The bracketed expression for every action, shape (n_actions,)."""
    z = np.asarray(z, dtype=np.float64)
    tilt = np.einsum("y,yu->u", z * model.mark_dist[cell], model.rate_modifier[cell] - 1.0)
    return model.running_cost[cell, x] + tilt


def hamiltonian(model: ModelSpec, cell: int, x, z) -> HamiltonianResult:
    x = model.state_index(x)
    b = brackets(model, cell, x, z)
    u = int(np.argmin(b))
    return HamiltonianResult(value=float(b[u]), argmin_action=u)


def difference_brackets(model: ModelSpec, cells, w) -> np.ndarray:
    """Brackets at ``z(y) = w(y) - w(x)`` for a batch of (cell, w) pairs.

    ``cells`` has shape (K,) and ``w`` shape (K, n_states); result (K, n_states, n_actions).
    """
    cells = np.asarray(cells)
    w = np.asarray(w, dtype=np.float64)
    phi = model.mark_dist[cells]
    rm1 = model.rate_modifier[cells] - 1.0
    p = np.einsum("ky,kyu->ku", w * phi, rm1)
    q = np.einsum("ky,kyu->ku", phi, rm1)
    return model.running_cost[cells] + p[:, None, :] - w[:, :, None] * q[:, None, :]


def hamiltonian_field(model: ModelSpec, cells, w) -> tuple[np.ndarray, np.ndarray]:
    """``f(t, x, w(.) - w(x))`` and its argmin for every state; shapes (K, n_states)."""
    b = difference_brackets(model, cells, w)
    u = np.argmin(b, axis=2)
    return np.take_along_axis(b, u[..., None], axis=2)[..., 0], u


def jump_drift(model: ModelSpec, cells, w) -> np.ndarray:
    """``sum_y (w(y) - w(x)) phi(y)`` for every state; shape (K, n_states)."""
    cells = np.asarray(cells)
    w = np.asarray(w, dtype=np.float64)
    mean = np.einsum("ky,ky->k", w, model.mark_dist[cells])
    return mean[:, None] - w


def generator(model: ModelSpec, cells, w) -> tuple[np.ndarray, np.ndarray]:
    """HJB generator with zero kernel: jump drift plus hamiltonian, and the minimizing action."""
    f, u = hamiltonian_field(model, cells, w)
    return jump_drift(model, cells, w) + f, u


def policy_from_value(model: ModelSpec, v) -> Policy:
    """Feedback selector on the cells of ``v``: argmin at z(y) = v(t, y) - v(t, x).

    ``t`` is the right end of each cell, the node the explicit backward step reads,
    so the policy's own cost-to-go on the same grid reproduces a marched ``v``.
    """
    cells = piece_cells(model.time_grid, v.times)
    _, u = hamiltonian_field(model, cells, v.values[1:])
    return Policy(times=v.times, table=u)
