"""Small reference models used by the tests, the acceptance suite and the CLI."""
from __future__ import annotations

import numpy as np

from .model import ModelSpec, validate_model


def constant_model(rate: float = 1.0, r=1.0, horizon: float = 1.0, cells: int = 1,
                   n_states: int = 2, n_actions: int = 1, phi=None, running_cost=0.0,
                   terminal_cost=0.0, C_r: float = 2.0, C_l: float = 1.0) -> ModelSpec:
    """Time-homogeneous model; scalar arguments are broadcast over cells/states/actions."""
    grid = np.linspace(0.0, horizon, cells + 1)
    phi = np.full(n_states, 1.0 / n_states) if phi is None else np.asarray(phi, dtype=float)
    r_arr = np.broadcast_to(np.asarray(r, dtype=float), (n_states, n_actions))
    l_arr = np.broadcast_to(np.asarray(running_cost, dtype=float), (n_states, n_actions))
    return validate_model(ModelSpec(
        states=[f"s{i}" for i in range(n_states)],
        actions=[f"a{i}" for i in range(n_actions)],
        horizon=horizon,
        time_grid=grid,
        base_rate=np.full(cells, float(rate)),
        mark_dist=np.tile(phi, (cells, 1)),
        rate_modifier=np.tile(r_arr, (cells, 1, 1)),
        running_cost=np.tile(l_arr, (cells, 1, 1)),
        terminal_cost=np.broadcast_to(np.asarray(terminal_cost, dtype=float), (n_states,)),
        C_r=C_r,
        C_l=C_l,
    ))


def instance_d1(cells: int = 10) -> ModelSpec:
    """State-independent running cost 1 or 0.5, g = 0, a = 1, T = 1; v(t, x) = 0.5 (1 - t)."""
    return constant_model(
        rate=1.0, horizon=1.0, cells=cells, n_states=2, n_actions=2, phi=[0.5, 0.5],
        r=[[1.5, 0.5], [1.5, 0.5]], running_cost=[[1.0, 0.5], [1.0, 0.5]],
        terminal_cost=0.0, C_r=2.0, C_l=1.0,
    )


def instance_d2() -> ModelSpec:
    """Two states, two actions, two data cells; the optimal policy switches at t = 0.5.

    Action ``a1`` pushes marks towards ``s0`` (r = 2 on s0, 0.5 on s1); ``a0`` leaves
    the reference law unchanged.  Ending in ``s1`` costs 1.
    """
    r_cell = [[1.0, 2.0],   # y = s0: (a0, a1)
              [1.0, 0.5]]   # y = s1
    return validate_model(ModelSpec(
        states=["s0", "s1"],
        actions=["a0", "a1"],
        horizon=1.0,
        time_grid=[0.0, 0.5, 1.0],
        base_rate=[1.2, 0.8],
        mark_dist=[[0.5, 0.5], [0.5, 0.5]],
        rate_modifier=[r_cell, r_cell],
        running_cost=[
            [[0.0, 0.05], [1.0, 1.8]],   # cell 0: x = s0, x = s1
            [[0.0, 0.4], [1.0, 1.2]],    # cell 1
        ],
        terminal_cost=[0.0, 1.0],
        C_r=2.0,
        C_l=2.0,
    ))


def instance_single_state(cost: float = 0.7, g: float = 0.3, n_actions: int = 2) -> ModelSpec:
    costs = [cost + 0.25 * u for u in range(n_actions)]
    return constant_model(rate=1.0, n_states=1, n_actions=n_actions, phi=[1.0],
                          r=[[1.0 + 0.5 * u for u in range(n_actions)]],
                          running_cost=[costs], terminal_cost=g, C_r=2.0, C_l=2.0)
