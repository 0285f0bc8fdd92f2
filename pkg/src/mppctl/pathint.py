"""Integrals of state-dependent integrands along piecewise-constant paths.

A path spends segments ``[s_i, s_{i+1})`` in a single state, so any integral
``int h(s, X_s) ds`` is a sum of per-state integrals over segments.  A
:class:`StateIntegral` tabulates ``H_x(t) = int_0^t h(s, x) ds`` on a node grid
and completes partial pieces with the same piece rule, so segment integrals are
exact whenever the piece rule is exact (constants, polynomials, minima of
linear functions).
"""
from __future__ import annotations

from typing import Callable

import numpy as np

PieceRule = Callable[[np.ndarray, np.ndarray, np.ndarray, np.ndarray], np.ndarray]


def merge_nodes(*grids) -> np.ndarray:
    nodes = np.unique(np.concatenate([np.asarray(g, dtype=np.float64) for g in grids]))
    return nodes


def piece_cells(grid: np.ndarray, nodes: np.ndarray) -> np.ndarray:
    """Index of the ``grid`` cell containing each piece of ``nodes``."""
    mids = 0.5 * (nodes[:-1] + nodes[1:])
    return np.clip(np.searchsorted(grid, mids, side="right") - 1, 0, len(grid) - 2)


class StateIntegral:
    def __init__(self, nodes, n_states: int, rule: PieceRule):
        self.nodes = np.asarray(nodes, dtype=np.float64)
        self.rule = rule
        n_pieces = len(self.nodes) - 1
        x = np.repeat(np.arange(n_states), n_pieces)
        k = np.tile(np.arange(n_pieces), n_states)
        vals = rule(x, k, self.nodes[k], self.nodes[k + 1]).reshape(n_states, n_pieces)
        self.cum = np.concatenate([np.zeros((n_states, 1)), np.cumsum(vals, axis=1)], axis=1)

    def at(self, x, t) -> np.ndarray:
        x = np.asarray(x)
        t = np.asarray(t, dtype=np.float64)
        x, t = np.broadcast_arrays(x, t)
        k = np.clip(np.searchsorted(self.nodes, t, side="right") - 1, 0, len(self.nodes) - 2)
        flat = self.rule(x.ravel(), k.ravel(), self.nodes[k.ravel()], t.ravel()).reshape(t.shape)
        return self.cum[x, k] + flat

    def over(self, x, t0, t1) -> np.ndarray:
        return self.at(x, t1) - self.at(x, t0)

    def along(self, batch) -> np.ndarray:
        """Per-path integral over [t0, T] for a :class:`~mppctl.sim.PathBatch`."""
        starts, ends, states = batch.segments()
        live = ends > starts  # padding segments have zero length
        vals = np.zeros(starts.shape)
        vals[live] = self.over(states[live], starts[live], ends[live])
        return vals.sum(axis=1)


def constant_rule(values: np.ndarray) -> PieceRule:
    """Integrand constant on each piece: ``values[k, x]``."""

    def rule(x, k, lo, hi):
        return values[k, x] * (hi - lo)

    return rule


def gauss_rule(fn: Callable, order: int = 12) -> PieceRule:
    """Gauss-Legendre rule for ``fn(x, k, s)``, smooth inside each piece."""
    xi, wi = np.polynomial.legendre.leggauss(order)

    def rule(x, k, lo, hi):
        half = 0.5 * (hi - lo)
        s = (0.5 * (hi + lo))[:, None] + half[:, None] * xi[None, :]
        vals = fn(x[:, None], k[:, None], s)
        return half * (vals * wi[None, :]).sum(axis=1)

    return rule


def integrate_min_linear(c0: np.ndarray, c1: np.ndarray, width: np.ndarray) -> np.ndarray:
    """Exact ``int_0^w min_u (c0_u + (c1_u - c0_u) s / w) ds`` row-wise.

    ``c0`` and ``c1`` have shape (S, U); ``width`` has shape (S,).
    """
    c0 = np.asarray(c0, dtype=np.float64)
    c1 = np.asarray(c1, dtype=np.float64)
    S, U = c0.shape
    d = c1 - c0
    cuts = [np.zeros(S), np.ones(S)]
    for u in range(U):
        for v in range(u + 1, U):
            num = c0[:, u] - c0[:, v]
            den = num - (c1[:, u] - c1[:, v])
            with np.errstate(divide="ignore", invalid="ignore"):
                lam = np.where(den != 0, num / den, 0.0)
            cuts.append(np.where((lam > 0) & (lam < 1), lam, 0.0))
    lam = np.sort(np.column_stack(cuts), axis=1)
    m = (c0[:, None, :] + lam[:, :, None] * d[:, None, :]).min(axis=2)
    return width * (0.5 * (m[:, 1:] + m[:, :-1]) * np.diff(lam, axis=1)).sum(axis=1)


def min_linear_rule(brackets: Callable) -> PieceRule:
    """Exact rule for ``min_u brackets(x, k, s)[..., u]`` when each bracket is linear in s per piece."""

    def rule(x, k, lo, hi):
        return integrate_min_linear(brackets(x, k, lo), brackets(x, k, hi), hi - lo)

    return rule


def jump_sum(batch, fn) -> np.ndarray:
    """``sum_n fn(T_n, X_{T_n-}, xi_n)`` per path; ``fn`` works on flat arrays."""
    mask = batch.jump_mask()
    if not mask.any():
        return np.zeros(batch.n_paths)
    pre = batch.pre_jump_states()
    out = np.zeros(batch.times.shape)
    out[mask] = fn(batch.times[mask], pre[mask], batch.marks[mask])
    return out.sum(axis=1)
