"""Simulated verification game between Alice (environment) and Bob (system).

Per run Alice produces and announces an endpoint, Bob measures his qubit once
along a uniformly drawn axis from ``{x, y, z}`` and files the slip into the
bin labelled by the scenario and the quantized announcement.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np

from .model import ModelParams, steady_state
from .scenarios import ScenarioSpec, scenario_tables
from .steering import SteeringReport, check_orthogonal
from .trajectories import initial_vector, simulate_endpoints, trajectory_rng

AXES = ("x", "y", "z")
DEFAULT_RESOLUTION = 0.05
MIN_SLIPS = 600
MIN_RUNS = 10
EVAL_RESOLUTION = 0.2
STREAM_ALICE, STREAM_BOB, STREAM_HIDDEN = 101, 102, 103
TRANSCRIPT_COLUMNS = ("run", "scenario", "announced_x", "announced_y", "announced_z", "axis",
                      "outcome")


class InsufficientSlips(ValueError):
    pass


@dataclass(frozen=True)
class SlipRecord:
    run: int
    axis: str
    outcome: int


@dataclass
class Bin:
    scenario: str
    key: tuple
    counts: np.ndarray = field(default_factory=lambda: np.zeros((3, 2), dtype=np.int64))
    announced_sum: np.ndarray = field(default_factory=lambda: np.zeros(3))

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    @property
    def announced(self) -> np.ndarray:
        """Mean announced Bloch vector of the slips in this bin."""
        return self.announced_sum / self.total if self.total else np.full(3, np.nan)

    def add(self, axis: int, outcome: int, announced) -> None:
        self.counts[axis, 0 if outcome == 1 else 1] += 1
        self.announced_sum += announced

    def merge(self, other: "Bin") -> "Bin":
        if (self.scenario, self.key) != (other.scenario, other.key):
            raise ValueError("can only merge bins with the same label")
        return Bin(self.scenario, self.key, self.counts + other.counts,
                   self.announced_sum + other.announced_sum)


@dataclass(frozen=True)
class AliceStrategy:
    """How Alice answers Bob's request for the ensemble of ``scenario``.

    ``honest`` runs the scenario and announces her exact conditional state.
    ``lhs-fixed-ensemble`` ignores the environment: a hidden variable picks a
    member of ``members``, which is both Bob's state and the announcement.
    ``announce-without-measuring`` announces endpoints of trajectories she
    simulates privately while Bob's qubit stays unconditioned.
    """

    kind: str
    scenario: ScenarioSpec
    members: tuple | None = None
    weights: tuple | None = None

    def __post_init__(self):
        if self.kind not in ("honest", "lhs-fixed-ensemble", "announce-without-measuring"):
            raise ValueError(f"unknown strategy {self.kind!r}")
        if self.kind == "lhs-fixed-ensemble":
            if not self.members:
                raise ValueError("lhs-fixed-ensemble needs members")
            members = np.asarray(self.members, dtype=float)
            weights = (np.full(len(members), 1 / len(members)) if self.weights is None
                       else np.asarray(self.weights, dtype=float))
            if members.shape[1:] != (3,) or len(weights) != len(members):
                raise ValueError("members must be Bloch vectors with one weight each")
            if abs(weights.sum() - 1) > 1e-9 or np.any(np.linalg.norm(members, axis=1) > 1 + 1e-9):
                raise ValueError("invalid fixed ensemble")
            object.__setattr__(self, "members", tuple(map(tuple, members)))
            object.__setattr__(self, "weights", tuple(weights))
        elif self.scenario.kind == "nonlocal":
            raise ValueError("protocol sessions use local scenarios")


@dataclass
class Session:
    strategy: AliceStrategy
    params: ModelParams
    runs: int
    n_collisions: int
    seed: int
    resolution: float
    bins: dict
    announced: np.ndarray
    true_states: np.ndarray
    axes: np.ndarray
    outcomes: np.ndarray

    @property
    def scenario(self) -> str:
        return self.strategy.scenario.name

    def slips(self):
        for i in range(self.runs):
            yield SlipRecord(i, AXES[self.axes[i]], int(self.outcomes[i]))

    def transcript_rows(self):
        for i in range(self.runs):
            a = self.announced[i]
            yield (i, self.scenario, a[0], a[1], a[2], AXES[self.axes[i]], int(self.outcomes[i]))

    def write_transcript(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(TRANSCRIPT_COLUMNS)
            for row in self.transcript_rows():
                w.writerow([row[0], row[1], *("%.17g" % v for v in row[2:5]), row[5], row[6]])

    def bin_summary(self) -> list[dict]:
        return [
            {"scenario": b.scenario, "key": list(b.key), "slips": b.total,
             "announced": [float(v) for v in b.announced],
             "counts": {AXES[a]: {"+1": int(b.counts[a, 0]), "-1": int(b.counts[a, 1])}
                        for a in range(3)}}
            for b in sorted(self.bins.values(), key=lambda b: b.key)
        ]


def unconditioned_state(params: ModelParams, n_collisions: int, initial="steady") -> np.ndarray:
    """Bloch vector of the reduced state after ``n_collisions`` collisions."""
    v = initial_vector(params, initial)
    if isinstance(initial, str) and initial == "steady":
        return steady_state(params)
    maps, _, _ = scenario_tables(params, ScenarioSpec.parse("z"))
    M = maps[0, 0] + maps[0, 1]
    for _ in range(n_collisions):
        v = M @ v
    return v[1:] / v[0]


def quantize(bloch, resolution: float) -> tuple:
    return tuple(int(k) for k in np.round(np.asarray(bloch) / resolution))


def run_session(strategy: AliceStrategy, runs: int, n_collisions: int, params: ModelParams,
                seed: int, resolution: float = DEFAULT_RESOLUTION, workers: int = 1,
                initial="steady") -> Session:
    if runs < MIN_RUNS:
        raise ValueError(f"a session needs at least {MIN_RUNS} runs")
    spec = strategy.scenario
    if strategy.kind == "honest":
        announced, _ = simulate_endpoints(params, spec, runs, n_collisions, seed, workers,
                                          stream=STREAM_ALICE, initial=initial)
        true_states = announced
    elif strategy.kind == "announce-without-measuring":
        announced, _ = simulate_endpoints(params, spec, runs, n_collisions, seed, workers,
                                          stream=STREAM_ALICE, initial=initial)
        true_states = np.tile(unconditioned_state(params, n_collisions, initial), (runs, 1))
    else:
        members = np.asarray(strategy.members)
        cdf = np.cumsum(strategy.weights)
        hidden = np.array([min(np.searchsorted(cdf, trajectory_rng(seed, i, STREAM_HIDDEN).random(),
                                               side="right"), len(members) - 1)
                           for i in range(runs)])
        announced = members[hidden]
        true_states = announced
    axes = np.empty(runs, dtype=np.int64)
    u = np.empty(runs)
    for i in range(runs):
        bob = trajectory_rng(seed, i, STREAM_BOB)
        axes[i] = bob.integers(0, 3)
        u[i] = bob.random()
    p_plus = 0.5 * (1 + true_states[np.arange(runs), axes])
    outcomes = np.where(u < p_plus, 1, -1).astype(np.int8)
    bins: dict = {}
    name = spec.name
    for i in range(runs):
        key = (name, quantize(announced[i], resolution))
        if key not in bins:
            bins[key] = Bin(name, key[1])
        bins[key].add(int(axes[i]), int(outcomes[i]), announced[i])
    return Session(strategy, params, runs, n_collisions, seed, resolution, bins, announced,
                   true_states, axes, outcomes)


@dataclass
class Tomography:
    bloch: np.ndarray
    stderr: np.ndarray
    counts: np.ndarray


def tomo_reconstruct(b: Bin, min_slips: int = MIN_SLIPS) -> Tomography:
    """Linear-inversion estimate ``(N+ - N-) / (N+ + N-)`` per axis, clipped to the unit ball."""
    n_axis = b.counts.sum(axis=1)
    if b.total < min_slips or np.any(n_axis < min_slips / 6):
        raise InsufficientSlips(f"bin {b.key} has {b.total} slips, axis counts {n_axis.tolist()}")
    r = (b.counts[:, 0] - b.counts[:, 1]) / n_axis
    stderr = np.sqrt(np.clip(1 - r**2, 0, None) / np.maximum(n_axis - 1, 1))
    norm = np.linalg.norm(r)
    if norm > 1:
        r = r / norm
    return Tomography(r, stderr, b.counts.copy())


def pooled_marginal(sessions) -> Tomography:
    """Bob's axis statistics over every slip of the given sessions, ignoring bins."""
    counts = np.zeros((3, 2), dtype=np.int64)
    for s in ([sessions] if isinstance(sessions, Session) else sessions):
        for b in s.bins.values():
            counts += b.counts
    return tomo_reconstruct(Bin("pooled", (), counts, np.zeros(3)), min_slips=0)


def _axis_index(direction) -> int:
    d = np.asarray(direction, dtype=float)
    for a in range(3):
        if abs(abs(d[a]) - 1) <= 1e-12 and np.all(np.abs(np.delete(d, a)) <= 1e-12):
            return a
    raise ValueError("evaluation directions must be Bob's measurement axes")


def _p_at_least_two(total: int) -> float:
    """Probability that ``total`` uniform axis draws put two or more slips on one axis."""
    q = 2.0 / 3.0
    return 1.0 - q**total - total * (1.0 / 3.0) * q ** (total - 1)


def estimate_avg_sq(bins, scenario: str, direction) -> tuple[float, float, int]:
    """Bias-corrected estimate of ``E[<sigma_a>^2]`` over one scenario's bins.

    Each bin contributes ``r_a^2 - s_a^2`` with ``s_a^2 = (1 - r_a^2) / (n_a - 1)``,
    which is unbiased for the squared bin mean. A bin is usable only when
    ``n_a >= 2``; since that event depends on Bob's axis draws alone, usable
    bins are weighted by slip share divided by its probability given the bin
    total, so that sparse bins are not under-represented. Weights are then
    renormalized over the usable bins.
    Returns ``(value, stderr, bins used)``.
    """
    a = _axis_index(direction)
    grand = 0
    rows = []
    for b in bins.values():
        if b.scenario != scenario:
            continue
        grand += b.total
        n_a = int(b.counts[a].sum())
        if n_a < 2:
            continue
        r = (b.counts[a, 0] - b.counts[a, 1]) / n_a
        s2 = (1 - r * r) / (n_a - 1)
        r2 = min(r * r, 1.0)
        var = 4 * r2 * (1 - r2) / n_a + 2 * (1 - r2) ** 2 / (n_a * (n_a - 1))
        rows.append((b.total / _p_at_least_two(b.total), r * r - s2, var))
    if not rows:
        raise InsufficientSlips(f"no usable bins for scenario {scenario!r}")
    w = np.array([r[0] for r in rows])
    w /= w.sum()
    u = np.array([r[1] for r in rows])
    var_b = np.array([r[2] for r in rows])
    value = math.fsum(w * u)
    # multinomial bin-occupation noise plus within-bin shot noise
    spread = math.fsum(w * (u - value) ** 2) / grand
    return value, math.sqrt(math.fsum(w * w * var_b) + spread), len(rows)


def _merged(bins) -> dict:
    if isinstance(bins, Session):
        return dict(bins.bins)
    if isinstance(bins, dict):
        return dict(bins)
    merged: dict = {}
    for s in bins:
        for k, b in (s.bins if isinstance(s, Session) else s).items():
            merged[k] = merged[k].merge(b) if k in merged else b
    return merged


def coarsen(bins: dict, resolution: float) -> dict:
    """Merge bins onto a coarser grid keyed by each bin's mean announcement."""
    out: dict = {}
    for b in bins.values():
        if b.total == 0:
            continue
        key = (b.scenario, quantize(b.announced, resolution))
        c = Bin(b.scenario, key[1], b.counts.copy(), b.announced_sum.copy())
        out[key] = out[key].merge(c) if key in out else c
    return out


def evaluate_from_bins(bins, assignment, resolution: float | None = EVAL_RESOLUTION
                       ) -> SteeringReport:
    """Inequality from reconstructed ensembles.

    ``assignment`` is a sequence of three ``(scenario, direction)`` pairs with
    mutually orthogonal directions. Bins are first merged onto a grid of
    spacing ``resolution`` (``None`` keeps them as recorded); merging can only
    lower each term, by at most ``resolution**2 / 12``.
    """
    assignment = list(assignment)
    if not assignment:
        raise ValueError("empty scenario assignment")
    if len(assignment) != 3:
        raise ValueError("the inequality needs exactly three (scenario, direction) pairs")
    dirs = [np.asarray(d, dtype=float) for _, d in assignment]
    check_orthogonal(*dirs)
    bins = _merged(bins)
    if resolution is not None:
        bins = coarsen(bins, resolution)
    terms, stderrs = {}, {}
    for scenario, d in assignment:
        v, se, _ = estimate_avg_sq(bins, scenario, d)
        label = f"E_{scenario}[s{AXES[_axis_index(d)]}^2]"
        terms[label], stderrs[label] = v, se
    lhs = math.fsum(terms.values())
    return SteeringReport(
        terms=terms, stderrs=stderrs, lhs=lhs, delta_s=lhs - 1,
        stderr=math.sqrt(math.fsum(s * s for s in stderrs.values())),
        directions={"n": dirs[0], "m": dirs[1], "k": dirs[2]},
        config={"assignment": [[s, [float(x) for x in d]] for s, d in assignment],
                "resolution": resolution},
    )


def verify_announcements(bins, tolerance: float = 0.05, min_slips: int = MIN_SLIPS) -> dict:
    """Per-bin verdict comparing Bob's tomography with Alice's announcements.

    Status is ``consistent``, ``inconsistent``, ``insufficient`` (too few
    slips for tomography) or ``no-slips``.
    """
    if isinstance(bins, Session):
        bins = bins.bins
    verdicts = {}
    for key, b in bins.items():
        if b.total == 0:
            verdicts[key] = {"status": "no-slips", "slips": 0}
            continue
        try:
            tomo = tomo_reconstruct(b, min_slips)
        except InsufficientSlips:
            verdicts[key] = {"status": "insufficient", "slips": b.total}
            continue
        dist = float(np.linalg.norm(tomo.bloch - b.announced))
        allowed = tolerance + 3 * float(np.linalg.norm(tomo.stderr))
        verdicts[key] = {"status": "consistent" if dist <= allowed else "inconsistent",
                         "slips": b.total, "distance": dist, "allowed": allowed,
                         "reconstructed": tomo.bloch.tolist()}
    return verdicts
