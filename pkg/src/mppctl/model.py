"""Problem data for controlled marked point processes on a finite state space.

All time-dependent coefficients are piecewise constant on a shared grid
``0 = t_0 < ... < t_M = T``: cell ``j`` is ``[t_j, t_{j+1})``.  Arrays are indexed

    base_rate      a[j]
    mark_dist      phi[j, y]
    rate_modifier  r[j, y, u]
    running_cost   l[j, x, u]
    terminal_cost  g[x]
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .errors import BadGrid, BoundViolation, MalformedDistribution, NoRoot, OutOfHorizon

SCHEMA = "mpp-control/model/v1"


def _frozen(a, ndim: int) -> np.ndarray:
    arr = np.array(a, dtype=np.float64)
    if arr.ndim != ndim:
        raise BadGrid(f"expected a {ndim}-d array, got shape {arr.shape}")
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class ModelSpec:
    states: tuple[str, ...]
    actions: tuple[str, ...]
    horizon: float
    time_grid: np.ndarray
    base_rate: np.ndarray
    mark_dist: np.ndarray
    rate_modifier: np.ndarray
    running_cost: np.ndarray
    terminal_cost: np.ndarray
    C_r: float
    C_l: float
    _cum_A: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        object.__setattr__(self, "states", tuple(str(s) for s in self.states))
        object.__setattr__(self, "actions", tuple(str(u) for u in self.actions))
        object.__setattr__(self, "horizon", float(self.horizon))
        object.__setattr__(self, "C_r", float(self.C_r))
        object.__setattr__(self, "C_l", float(self.C_l))
        for name, nd in (("time_grid", 1), ("base_rate", 1), ("mark_dist", 2),
                         ("rate_modifier", 3), ("running_cost", 3), ("terminal_cost", 1)):
            object.__setattr__(self, name, _frozen(getattr(self, name), nd))
        grid = self.time_grid
        n_cells = max(len(grid) - 1, 0)
        if self.base_rate.shape != (n_cells,):
            raise BadGrid(f"base_rate has shape {self.base_rate.shape}, expected ({n_cells},)")
        n_k, n_u = len(self.states), len(self.actions)
        expected = {
            "mark_dist": (n_cells, n_k),
            "rate_modifier": (n_cells, n_k, n_u),
            "running_cost": (n_cells, n_k, n_u),
            "terminal_cost": (n_k,),
        }
        for name, shape in expected.items():
            if getattr(self, name).shape != shape:
                raise BadGrid(f"{name} has shape {getattr(self, name).shape}, expected {shape}")
        cum = np.concatenate([[0.0], np.cumsum(self.base_rate * np.diff(grid))]) if n_cells else np.zeros(1)
        cum.setflags(write=False)
        object.__setattr__(self, "_cum_A", cum)

    @property
    def n_states(self) -> int:
        return len(self.states)

    @property
    def n_actions(self) -> int:
        return len(self.actions)

    @property
    def n_cells(self) -> int:
        return len(self.time_grid) - 1

    @property
    def A_nodes(self) -> np.ndarray:
        """Cumulative compensator at the grid nodes."""
        return self._cum_A

    @property
    def A_T(self) -> float:
        return float(self._cum_A[-1])

    def state_index(self, x) -> int:
        if isinstance(x, (int, np.integer)):
            if not 0 <= x < self.n_states:
                raise KeyError(x)
            return int(x)
        return self.states.index(str(x))

    def action_index(self, u) -> int:
        if isinstance(u, (int, np.integer)):
            if not 0 <= u < self.n_actions:
                raise KeyError(u)
            return int(u)
        return self.actions.index(str(u))

    def cell_index(self, t) -> np.ndarray | int:
        """Cell ``j`` with ``t_j <= t < t_{j+1}``; ``t = T`` maps to the last cell."""
        j = np.searchsorted(self.time_grid, t, side="right") - 1
        j = np.clip(j, 0, self.n_cells - 1)
        return int(j) if np.ndim(j) == 0 else j

    def with_updates(self, **changes) -> "ModelSpec":
        return replace(self, **changes)

    # -- serialization ---------------------------------------------------
    def to_dict(self) -> dict:
        return {
            "schema": SCHEMA,
            "states": list(self.states),
            "actions": list(self.actions),
            "horizon": self.horizon,
            "time_grid": self.time_grid.tolist(),
            "base_rate": self.base_rate.tolist(),
            "mark_dist": self.mark_dist.tolist(),
            "rate_modifier": self.rate_modifier.tolist(),
            "running_cost": self.running_cost.tolist(),
            "terminal_cost": self.terminal_cost.tolist(),
            "C_r": self.C_r,
            "C_l": self.C_l,
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "ModelSpec":
        if doc.get("schema", SCHEMA) != SCHEMA:
            raise BadGrid(f"unsupported schema {doc.get('schema')!r}")
        fields_ = {k: doc[k] for k in (
            "states", "actions", "horizon", "time_grid", "base_rate", "mark_dist",
            "rate_modifier", "running_cost", "terminal_cost", "C_r", "C_l")}
        return cls(**fields_)


def load_model(path) -> ModelSpec:
    doc = json.loads(Path(path).read_text(encoding="utf-8"))
    return validate_model(ModelSpec.from_dict(doc))


def dump_model(model: ModelSpec, path) -> None:
    Path(path).write_text(json.dumps(model.to_dict(), indent=2) + "\n", encoding="utf-8")


def validate_model(raw: ModelSpec) -> ModelSpec:
    """Check the bound, grid and distribution invariants; return ``raw`` unchanged."""
    grid = raw.time_grid
    if raw.n_states < 1 or raw.n_actions < 1:
        raise BadGrid("need at least one state and one action")
    if len(set(raw.states)) != raw.n_states or len(set(raw.actions)) != raw.n_actions:
        raise BadGrid("state and action identifiers must be unique")
    if not (math.isfinite(raw.horizon) and raw.horizon > 0):
        raise BadGrid(f"horizon must be positive, got {raw.horizon}")
    if len(grid) < 2 or grid[0] != 0.0 or np.any(np.diff(grid) <= 0):
        raise BadGrid("time grid must start at 0 and be strictly increasing")
    if grid[-1] != raw.horizon:
        raise BadGrid(f"time grid ends at {grid[-1]}, horizon is {raw.horizon}")
    if np.any(~np.isfinite(raw.base_rate)) or np.any(raw.base_rate < 0):
        raise BoundViolation("base rate must be finite and nonnegative")
    if not math.isfinite(raw.A_T):
        raise BoundViolation("A_T is not finite")

    phi = raw.mark_dist
    if np.any(~np.isfinite(phi)) or np.any(phi < 0):
        raise MalformedDistribution("mark distribution has negative or non-finite entries")
    bad = np.flatnonzero(np.abs(phi.sum(axis=1) - 1.0) > 1e-12)
    if bad.size:
        raise MalformedDistribution(f"mark distribution of cell {bad[0]} sums to {phi[bad[0]].sum()}")

    if not raw.C_r > 1:
        raise BoundViolation(f"C_r must exceed 1, got {raw.C_r}")
    if not raw.C_l > 0:
        raise BoundViolation(f"C_l must be positive, got {raw.C_l}")
    r = raw.rate_modifier
    if np.any(~np.isfinite(r)) or np.any(r < 0) or np.any(r > raw.C_r):
        raise BoundViolation(f"rate modifier outside [0, C_r={raw.C_r}]")
    l = raw.running_cost
    if np.any(~np.isfinite(l)) or np.any(np.abs(l) > raw.C_l):
        raise BoundViolation(f"running cost exceeds C_l={raw.C_l} in absolute value")
    if np.any(~np.isfinite(raw.terminal_cost)):
        raise BoundViolation("terminal cost must be finite")
    return raw


@dataclass(frozen=True)
class LipschitzConstants:
    L: float
    L_prime: float = 0.0


@dataclass(frozen=True)
class BetaReport:
    beta_bsde: float
    beta_hjb: float
    beta_girsanov: float


def lipschitz_constants(model: ModelSpec) -> LipschitzConstants:
    return LipschitzConstants(L=float(np.max(np.abs(model.rate_modifier - 1.0))), L_prime=0.0)


def hjb_contraction_constants(L: float, beta: float) -> tuple[float, float]:
    """The two contraction constants (c1, c2) of the HJB fixed-point map at ``beta``."""
    k = 2.0 * L * L + 3.0
    return 2.0 * k / (beta - 1.0), 8.0 * k / beta * (1.0 + 1.0 / beta)


def hjb_beta_lhs(L: float, beta: float) -> float:
    c1, c2 = hjb_contraction_constants(L, beta)
    return c1 + c2


def beta_thresholds(model: ModelSpec) -> BetaReport:
    lip = lipschitz_constants(model)
    L = lip.L
    lo, hi = 1.0, 1e6
    if not hjb_beta_lhs(L, hi) < 1.0:
        raise NoRoot(f"no beta below 1e6 makes the HJB map contract (L={L})")
    # invariant: lhs(lo) >= 1 (or lo is the open end), lhs(hi) < 1
    while hi - lo > 1e-9:
        mid = 0.5 * (lo + hi)
        if hjb_beta_lhs(L, mid) < 1.0:
            hi = mid
        else:
            lo = mid
    gamma = 2.0
    beta_g = gamma + 1.0 + model.C_r ** (gamma * gamma) / (gamma - 1.0)
    return BetaReport(beta_bsde=L * L + 2.0 * lip.L_prime + 1.0, beta_hjb=hi, beta_girsanov=beta_g)


def cumulative_A(model: ModelSpec, t):
    """A_t, exact for the piecewise-constant base rate.  Accepts scalars or arrays."""
    t_arr = np.asarray(t, dtype=np.float64)
    if np.any(t_arr < 0) or np.any(t_arr > model.horizon) or np.any(np.isnan(t_arr)):
        raise OutOfHorizon(f"time outside [0, {model.horizon}]")
    out = np.interp(t_arr, model.time_grid, model.A_nodes)
    return float(out) if out.ndim == 0 else out


def inverse_A(model: ModelSpec, level) -> np.ndarray:
    """Smallest t with A_t = level; +inf where level exceeds A_T."""
    level = np.asarray(level, dtype=np.float64)
    nodes = model.A_nodes
    i = np.searchsorted(nodes, level, side="left")
    out = np.full(level.shape, np.inf)
    inside = (i >= 1) & (i <= model.n_cells)
    k = i[inside] - 1
    out[inside] = model.time_grid[k] + (level[inside] - nodes[k]) / model.base_rate[k]
    out[level <= 0] = 0.0
    return out


def refine(model: ModelSpec, substeps: int) -> ModelSpec:
    """Split every cell into ``substeps`` equal cells; coefficients are repeated."""
    if substeps < 1:
        raise BadGrid(f"substeps must be >= 1, got {substeps}")
    if substeps == 1:
        return model
    grid = model.time_grid
    frac = np.arange(substeps) / substeps
    new = (grid[:-1, None] + np.diff(grid)[:, None] * frac[None, :]).ravel()
    new = np.append(new, grid[-1])
    rep = lambda a: np.repeat(a, substeps, axis=0)  # noqa: E731
    return replace(
        model,
        time_grid=new,
        base_rate=rep(model.base_rate),
        mark_dist=rep(model.mark_dist),
        rate_modifier=rep(model.rate_modifier),
        running_cost=rep(model.running_cost),
    )


def cell_lookup(coarse_grid: np.ndarray, fine_nodes: np.ndarray) -> np.ndarray:
    """For each cell of ``fine_nodes``, the index of the coarse cell containing it."""
    mids = 0.5 * (fine_nodes[:-1] + fine_nodes[1:])
    j = np.searchsorted(coarse_grid, mids, side="right") - 1
    return np.clip(j, 0, len(coarse_grid) - 2)
