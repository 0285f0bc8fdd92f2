"""Simulation of marked point process paths under P and under controlled measures P_u.

Under P the counting process has intensity ``a(t)`` and marks are drawn from
``phi`` at the jump time; paths are produced by inverting the piecewise-linear
compensator.  Under P_u the mark-``y`` intensity is ``r(y, u) phi(y) a(t)`` with
``u = policy(t, X_{t-})``; paths are produced by thinning a homogeneous
candidate stream at rate ``C_r * max(a)``.

The k-th candidate of a stream consumes Philox block k: word 0 gives the
exponential gap, word 1 the acceptance uniform, word 2 the mark uniform.
"""
from __future__ import annotations

import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .errors import OutOfRange
from .model import ModelSpec, cumulative_A, inverse_A
from .rng import stream_uniforms


@dataclass(frozen=True, eq=False)
class Policy:
    """Feedback control ``u(t, x)``, piecewise constant on the cells of ``times``."""

    times: np.ndarray
    table: np.ndarray  # (n_cells, n_states) action indices

    def __post_init__(self):
        times = np.array(self.times, dtype=np.float64)
        table = np.array(self.table, dtype=np.int64)
        if table.ndim != 2 or table.shape[0] != len(times) - 1:
            raise ValueError(f"policy table shape {table.shape} does not match {len(times) - 1} cells")
        times.setflags(write=False)
        table.setflags(write=False)
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "table", table)

    @classmethod
    def constant(cls, model: ModelSpec, actions) -> "Policy":
        """Time-constant policy; ``actions`` is one action or one per state."""
        if isinstance(actions, (str, int, np.integer)):
            actions = [actions] * model.n_states
        row = [model.action_index(u) for u in actions]
        return cls(times=[0.0, model.horizon], table=[row])

    def cell_index(self, t):
        j = np.searchsorted(self.times, t, side="right") - 1
        return np.clip(j, 0, len(self.times) - 2)

    def action(self, t, x):
        return self.table[self.cell_index(t), x]

    def check(self, model: ModelSpec) -> "Policy":
        if self.table.shape[1] != model.n_states:
            raise ValueError("policy has the wrong number of states")
        if np.any(self.table < 0) or np.any(self.table >= model.n_actions):
            raise ValueError("policy refers to an unknown action")
        if self.times[0] != 0.0 or self.times[-1] != model.horizon or np.any(np.diff(self.times) <= 0):
            raise ValueError("policy grid must be increasing from 0 to the horizon")
        return self


@dataclass(frozen=True)
class Trajectory:
    start_time: float
    start_state: int
    jumps: tuple[tuple[float, int], ...]
    rng_stream_id: int = 0

    @property
    def times(self) -> np.ndarray:
        return np.array([t for t, _ in self.jumps], dtype=np.float64)

    @property
    def marks(self) -> np.ndarray:
        return np.array([y for _, y in self.jumps], dtype=np.int64)

    @property
    def n_jumps(self) -> int:
        return len(self.jumps)


def state_at(traj: Trajectory, t: float) -> int:
    """Right-continuous state: the mark of the last jump at or before ``t``."""
    if t < traj.start_time:
        raise OutOfRange(f"t={t} precedes the start time {traj.start_time}")
    x = traj.start_state
    for tn, y in traj.jumps:
        if tn > t:
            break
        x = y
    return x


class PathBatch:
    """Many trajectories sharing a start time, stored as padded arrays.

    ``times`` is (P, J) with ``+inf`` padding and ``marks`` is (P, J) with -1
    padding; ``counts`` holds the number of real jumps per path.
    """

    def __init__(self, t0, x0, times, marks, streams, horizon):
        self.t0 = float(t0)
        self.horizon = float(horizon)
        self.times = np.asarray(times, dtype=np.float64)
        self.marks = np.asarray(marks, dtype=np.int64)
        self.streams = np.asarray(streams, dtype=np.int64)
        self.x0 = np.broadcast_to(np.asarray(x0, dtype=np.int64), self.streams.shape).copy()
        self.counts = np.isfinite(self.times).sum(axis=1) if self.times.size else np.zeros(len(self.streams), int)

    def __len__(self):
        return len(self.streams)

    @property
    def n_paths(self) -> int:
        return len(self.streams)

    def jump_mask(self) -> np.ndarray:
        return np.isfinite(self.times)

    def states(self) -> np.ndarray:
        """(P, J+1) state on each segment; padded segments repeat the last real state."""
        seq = np.concatenate([self.x0[:, None], self.marks], axis=1)
        filled = seq.copy()
        for c in range(1, filled.shape[1]):
            pad = filled[:, c] < 0
            filled[pad, c] = filled[pad, c - 1]
        return filled

    def segments(self):
        """Segment (start, end, state) arrays of shape (P, J+1); padding has zero length at T."""
        T = self.horizon
        jt = np.where(np.isfinite(self.times), self.times, T)
        starts = np.concatenate([np.full((self.n_paths, 1), self.t0), jt], axis=1)
        ends = np.concatenate([jt, np.full((self.n_paths, 1), T)], axis=1)
        return starts, ends, self.states()

    def final_states(self) -> np.ndarray:
        return self.states()[:, -1]

    def pre_jump_states(self) -> np.ndarray:
        """(P, J) state just before each jump (X_{T_n-})."""
        return self.states()[:, :-1]

    def trajectory(self, i: int) -> Trajectory:
        n = int(self.counts[i])
        jumps = tuple((float(self.times[i, k]), int(self.marks[i, k])) for k in range(n))
        return Trajectory(self.t0, int(self.x0[i]), jumps, int(self.streams[i]))

    def trajectories(self) -> list[Trajectory]:
        return [self.trajectory(i) for i in range(self.n_paths)]

    @classmethod
    def concat(cls, parts: list["PathBatch"]) -> "PathBatch":
        width = max((p.times.shape[1] for p in parts), default=0)

        def pad(a, fill):
            out = np.full((a.shape[0], width), fill, dtype=a.dtype)
            out[:, : a.shape[1]] = a
            return out

        return cls(
            parts[0].t0,
            np.concatenate([p.x0 for p in parts]),
            np.concatenate([pad(p.times, np.inf) for p in parts]),
            np.concatenate([pad(p.marks, -1) for p in parts]),
            np.concatenate([p.streams for p in parts]),
            parts[0].horizon,
        )

    @classmethod
    def from_trajectories(cls, trajs: list[Trajectory], horizon: float) -> "PathBatch":
        width = max((t.n_jumps for t in trajs), default=0)
        times = np.full((len(trajs), width), np.inf)
        marks = np.full((len(trajs), width), -1, dtype=np.int64)
        for i, tr in enumerate(trajs):
            times[i, : tr.n_jumps] = tr.times
            marks[i, : tr.n_jumps] = tr.marks
        return cls(trajs[0].start_time, [t.start_state for t in trajs], times, marks,
                   [t.rng_stream_id for t in trajs], horizon)


def _sample_index(weights: np.ndarray, u: np.ndarray) -> np.ndarray:
    """Draw row-wise categorical indices from unnormalized ``weights`` (m, n)."""
    cum = np.cumsum(weights, axis=1)
    cum = cum / cum[:, -1:]
    cum[:, -1] = 1.0
    return np.minimum((cum <= u[:, None]).sum(axis=1), weights.shape[1] - 1)


class _Columns:
    def __init__(self, n):
        self.n = n
        self.times: list[np.ndarray] = []
        self.marks: list[np.ndarray] = []

    def add(self, idx, t, y):
        col_t = np.full(self.n, np.inf)
        col_y = np.full(self.n, -1, dtype=np.int64)
        col_t[idx] = t
        col_y[idx] = y
        self.times.append(col_t)
        self.marks.append(col_y)

    def arrays(self):
        if not self.times:
            return np.empty((self.n, 0)), np.empty((self.n, 0), dtype=np.int64)
        return np.column_stack(self.times), np.column_stack(self.marks)

    def compact(self):
        """Shift accepted jumps left so each row is a prefix of real jumps."""
        times, marks = self.arrays()
        order = np.argsort(~np.isfinite(times), axis=1, kind="stable")
        times = np.take_along_axis(times, order, axis=1)
        marks = np.take_along_axis(marks, order, axis=1)
        keep = np.isfinite(times).any(axis=0)
        return times[:, keep], marks[:, keep]


def _reference_chunk(model: ModelSpec, t0, x0, streams, seed) -> PathBatch:
    n = len(streams)
    level = np.full(n, cumulative_A(model, t0))
    active = np.arange(n)
    cols = _Columns(n)
    cum_phi = model.mark_dist
    k = 0
    while active.size:
        u = stream_uniforms(seed, streams[active], k)
        level[active] -= np.log1p(-u[:, 0])
        t = inverse_A(model, level[active])
        alive = t <= model.horizon
        active, t, u = active[alive], t[alive], u[alive]
        if active.size == 0:
            break
        y = _sample_index(cum_phi[model.cell_index(t)], u[:, 2])
        cols.add(active, t, y)
        k += 1
    times, marks = cols.arrays()
    return PathBatch(t0, x0, times, marks, streams, model.horizon)


def controlled_intensity(model: ModelSpec, policy: Policy, t, x):
    """Total intensity ``a(t) sum_y r(y, u) phi(y)`` and mark weights at (t, x)."""
    j = model.cell_index(t)
    act = policy.action(t, x)
    w = model.rate_modifier[j, :, act] * model.mark_dist[j]
    return model.base_rate[j] * w.sum(axis=-1), w


def _thin_step(model, policy, t, x, u_acc, u_mark, envelope):
    rate, w = controlled_intensity(model, policy, t, x)
    accepted = u_acc * envelope < rate
    y = np.full(t.shape, -1, dtype=np.int64)
    if accepted.any():
        y[accepted] = _sample_index(w[accepted], u_mark[accepted])
    return accepted, y


def envelope_rate(model: ModelSpec) -> float:
    return float(model.C_r * model.base_rate.max())


def _controlled_chunk(model, policy, t0, x0, streams, seed) -> PathBatch:
    n = len(streams)
    env = envelope_rate(model)
    state = np.broadcast_to(np.asarray(x0, dtype=np.int64), (n,)).copy()
    cols = _Columns(n)
    if env > 0:
        t = np.full(n, float(t0))
        active = np.arange(n)
        k = 0
        while active.size:
            u = stream_uniforms(seed, streams[active], k)
            t[active] -= np.log1p(-u[:, 0]) / env
            alive = t[active] <= model.horizon
            active, u = active[alive], u[alive]
            if active.size == 0:
                break
            acc, y = _thin_step(model, policy, t[active], state[active], u[:, 1], u[:, 2], env)
            hit = active[acc]
            state[hit] = y[acc]
            cols.add(hit, t[hit], y[acc])
            k += 1
    times, marks = cols.compact()
    return PathBatch(t0, x0, times, marks, streams, model.horizon)


def _run_chunks(fn, streams, threads: int, chunk: int = 20000) -> PathBatch:
    streams = np.asarray(streams, dtype=np.int64)
    pieces = [streams[i:i + chunk] for i in range(0, len(streams), chunk)] or [streams]
    if threads <= 1 or len(pieces) == 1:
        parts = [fn(p) for p in pieces]
    else:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            parts = list(pool.map(fn, pieces))
    return PathBatch.concat(parts)


def simulate_reference_batch(model: ModelSpec, t0: float, x0, streams, seed: int = 0,
                             threads: int = 1) -> PathBatch:
    x0 = model.state_index(x0)
    return _run_chunks(lambda s: _reference_chunk(model, t0, x0, s, seed), streams, threads)


def simulate_controlled_batch(model: ModelSpec, policy: Policy, t0: float, x0, streams,
                              seed: int = 0, threads: int = 1) -> PathBatch:
    x0 = model.state_index(x0)
    policy.check(model)
    return _run_chunks(lambda s: _controlled_chunk(model, policy, t0, x0, s, seed), streams, threads)


def simulate_reference(model: ModelSpec, t0: float, x0, stream: int, seed: int = 0) -> Trajectory:
    return simulate_reference_batch(model, t0, x0, [stream], seed).trajectory(0)


def simulate_controlled(model: ModelSpec, policy: Policy, t0: float, x0, stream: int,
                        seed: int = 0) -> Trajectory:
    return simulate_controlled_batch(model, policy, t0, x0, [stream], seed).trajectory(0)


def controlled_candidates(model: ModelSpec, t0: float, stream: int, seed: int = 0) -> np.ndarray:
    """The (time, u_accept, u_mark) candidate sequence of one stream on (t0, T]."""
    env = envelope_rate(model)
    rows = []
    t, k = float(t0), 0
    while env > 0:
        u = stream_uniforms(seed, [stream], k)[0]
        t -= np.log1p(-u[0]) / env
        if t > model.horizon:
            break
        rows.append((t, u[1], u[2]))
        k += 1
    return np.array(rows, dtype=np.float64).reshape(-1, 3)


def replay_controlled(model: ModelSpec, policy: Policy, t0: float, x0, candidates: np.ndarray,
                      stream: int = 0) -> Trajectory:
    """Thin an explicit candidate sequence; the same rule the batch simulator uses."""
    x = model.state_index(x0)
    env = envelope_rate(model)
    jumps = []
    for t, ua, um in candidates:
        if t <= t0:
            continue
        acc, y = _thin_step(model, policy, np.array([t]), np.array([x]), np.array([ua]),
                            np.array([um]), env)
        if acc[0]:
            x = int(y[0])
            jumps.append((float(t), x))
    return Trajectory(float(t0), model.state_index(x0), tuple(jumps), stream)


def trajectory_to_json(model: ModelSpec, traj: Trajectory) -> str:
    doc = {
        "stream": traj.rng_stream_id,
        "t0": traj.start_time,
        "x0": model.states[traj.start_state],
        "jumps": [[t, model.states[y]] for t, y in traj.jumps],
    }
    return json.dumps(doc)


def trajectory_from_json(model: ModelSpec, line: str) -> Trajectory:
    doc = json.loads(line)
    jumps = tuple((float(t), model.state_index(y)) for t, y in doc["jumps"])
    return Trajectory(float(doc["t0"]), model.state_index(doc["x0"]), jumps, int(doc["stream"]))


def dump_trajectories(model: ModelSpec, trajs, fh) -> None:
    for tr in trajs:
        fh.write(trajectory_to_json(model, tr) + "\n")


def load_trajectories(model: ModelSpec, fh) -> list[Trajectory]:
    return [trajectory_from_json(model, line) for line in fh if line.strip()]
