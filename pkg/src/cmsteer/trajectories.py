"""Fast conditional-trajectory engine for local measurement scenarios.

A conditional state is carried as ``v = (1, x, y, z)``. Each collision with
outcome ``k`` applies a real transfer matrix and renormalizes by the new
first entry, which is the outcome probability. Trajectory ``i`` draws its
uniforms from its own PCG64 stream seeded with ``trajectory_seed(master, i)``,
so results do not depend on how trajectories are split across workers.
"""

from __future__ import annotations

import os
from concurrent.futures import ProcessPoolExecutor

import numpy as np
from numba import njit

from .model import ModelParams, steady_state
from .scenarios import ScenarioSpec, scenario_tables

SEED_RULE = "splitmix64(splitmix64(master ^ stream*0xD1B54A32D192ED03) + index)/pcg64"
BLOCK = 1 << 16
_MASK = (1 << 64) - 1


def splitmix64(x: int) -> int:
    x = (x + 0x9E3779B97F4A7C15) & _MASK
    x = ((x ^ (x >> 30)) * 0xBF58476D1CE4E5B9) & _MASK
    x = ((x ^ (x >> 27)) * 0x94D049BB133111EB) & _MASK
    return x ^ (x >> 31)


def trajectory_seed(master: int, index: int, stream: int = 0) -> int:
    base = splitmix64((int(master) ^ (int(stream) * 0xD1B54A32D192ED03)) & _MASK)
    return splitmix64((base + int(index)) & _MASK)


def trajectory_rng(master: int, index: int, stream: int = 0) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(trajectory_seed(master, index, stream)))


@njit(cache=True)
def _evolve(maps, nxt, v, d, u, outcomes):
    """Advance one trajectory over the uniforms ``u``; returns the final direction index.

    ``v`` is updated in place. ``outcomes`` (same length as ``u`` or empty)
    receives +1 / -1 per step when non-empty.
    """
    w = np.empty(4)
    record = outcomes.shape[0] > 0
    for t in range(u.shape[0]):
        m = maps[d, 0]
        for i in range(4):
            w[i] = m[i, 0] * v[0] + m[i, 1] * v[1] + m[i, 2] * v[2] + m[i, 3] * v[3]
        k = 0
        if not u[t] < w[0]:
            k = 1
            m = maps[d, 1]
            for i in range(4):
                w[i] = m[i, 0] * v[0] + m[i, 1] * v[1] + m[i, 2] * v[2] + m[i, 3] * v[3]
        p = w[0]
        v[0] = 1.0
        v[1] = w[1] / p
        v[2] = w[2] / p
        v[3] = w[3] / p
        if record:
            outcomes[t] = 1 - 2 * k
        d = nxt[d, k]
    return d


def run_trajectory(maps, nxt, v0, d0, steps: int, rng: np.random.Generator,
                   record: bool = False):
    """Run one trajectory; returns ``(v, d)`` or ``(v, d, outcomes)``."""
    v = np.array(v0, dtype=float)
    d = int(d0)
    outcomes = np.empty(steps if record else 0, dtype=np.int8)
    done = 0
    while done < steps:
        n = min(BLOCK, steps - done)
        u = rng.random(n)
        d = _evolve(maps, nxt, v, d, u, outcomes[done:done + n] if record else outcomes)
        done += n
    return (v, d, outcomes) if record else (v, d)


def initial_vector(params: ModelParams, initial) -> np.ndarray:
    if isinstance(initial, str):
        if initial == "steady":
            r = steady_state(params)
        elif initial == "ground":
            r = np.array([0.0, 0.0, -1.0])
        elif initial == "excited":
            r = np.array([0.0, 0.0, 1.0])
        else:
            raise ValueError(f"unknown initial state {initial!r}")
    else:
        r = np.asarray(initial, dtype=float)
    return np.concatenate([[1.0], r])


def _run_chunk(args):
    params, spec, indices, steps, seed, stream, initial = args
    maps, nxt, d0 = scenario_tables(params, spec)
    v0 = initial_vector(params, initial)
    out = np.empty((len(indices), 3))
    dirs = np.empty(len(indices), dtype=np.int64)
    for row, i in enumerate(indices):
        v, d = run_trajectory(maps, nxt, v0, d0, steps, trajectory_rng(seed, i, stream))
        out[row] = v[1:]
        dirs[row] = d
    return out, dirs


def simulate_endpoints(params: ModelParams, spec: ScenarioSpec, n_trajectories: int, steps: int,
                       seed: int, workers: int = 1, stream: int = 0, initial="steady",
                       first_index: int = 0):
    """Endpoint Bloch vectors ``(n, 3)`` and final direction indices, ordered by trajectory."""
    if n_trajectories < 1:
        raise ValueError("need at least one trajectory")
    if steps < 0:
        raise ValueError("steps must be non-negative")
    indices = np.arange(first_index, first_index + n_trajectories)
    workers = max(1, min(int(workers), n_trajectories))
    if workers == 1:
        return _run_chunk((params, spec, indices, steps, seed, stream, initial))
    chunks = np.array_split(indices, workers)
    jobs = [(params, spec, c, steps, seed, stream, initial) for c in chunks]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        parts = list(pool.map(_run_chunk, jobs))
    return (np.concatenate([p[0] for p in parts]), np.concatenate([p[1] for p in parts]))


def default_workers() -> int:
    return max(1, os.cpu_count() or 1)
