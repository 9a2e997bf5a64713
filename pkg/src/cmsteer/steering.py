"""Endpoint ensembles, the three-term steering inequality and entanglement checks."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import brentq, minimize

from . import qla
from .model import ModelParams, collide, env_state, steady_density
from .scenarios import ScenarioSpec, steered_ensembles_from_control
from .trajectories import simulate_endpoints, trajectory_seed

AXIS_VECTORS = {"x": np.array([1.0, 0, 0]), "y": np.array([0, 1.0, 0]), "z": np.array([0, 0, 1.0])}
CLUSTER_TOL = 1e-6


@dataclass
class EndpointEnsemble:
    scenario: str
    bloch: np.ndarray
    weights: np.ndarray
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        self.bloch = np.atleast_2d(np.asarray(self.bloch, dtype=float))
        self.weights = np.asarray(self.weights, dtype=float)
        if self.bloch.shape[1] != 3 or len(self.weights) != len(self.bloch):
            raise ValueError("ensemble needs one weight per Bloch vector")
        if abs(math.fsum(self.weights) - 1) > 1e-9:
            raise ValueError("ensemble weights must sum to 1")
        if np.any(self.weights < 0):
            raise ValueError("ensemble weights must be non-negative")
        if np.any(np.linalg.norm(self.bloch, axis=1) > 1 + 1e-9):
            raise ValueError("Bloch vector outside the unit ball")

    @classmethod
    def uniform(cls, scenario: str, bloch, metadata=None) -> "EndpointEnsemble":
        bloch = np.atleast_2d(np.asarray(bloch, dtype=float))
        n = len(bloch)
        return cls(scenario, bloch, np.full(n, 1.0 / n), dict(metadata or {}))

    @property
    def purity(self) -> np.ndarray:
        return 0.5 * (1 + np.sum(self.bloch**2, axis=1))

    def __len__(self):
        return len(self.weights)

    def mean_bloch(self) -> np.ndarray:
        return np.array([math.fsum(self.weights * self.bloch[:, i]) for i in range(3)])

    def clusters(self, tol: float = CLUSTER_TOL) -> np.ndarray:
        return cluster_centers(self.bloch, tol)


def cluster_centers(points, tol: float = CLUSTER_TOL) -> np.ndarray:
    """Greedy clustering: a point joins the first center within ``tol``."""
    centers = []
    for p in np.atleast_2d(points):
        if not any(np.linalg.norm(p - c) <= tol for c in centers):
            centers.append(p)
    return np.array(centers)


def ensemble_avg_sq(e: EndpointEnsemble, n) -> tuple[float, float]:
    """Weighted mean of ``<sigma_n>^2`` over the ensemble and its standard error."""
    n = np.asarray(n, dtype=float)
    q = (e.bloch @ n) ** 2
    w = e.weights
    value = math.fsum(w * q)
    n_eff = 1.0 / math.fsum(w * w)
    if n_eff <= 1.0 + 1e-12:
        return value, 0.0
    var = math.fsum(w * (q - value) ** 2) * n_eff / (n_eff - 1)
    return value, math.sqrt(var / n_eff)


def check_orthogonal(*directions, atol: float = 1e-12) -> None:
    vs = [np.asarray(d, dtype=float) for d in directions]
    for i in range(len(vs)):
        if abs(np.linalg.norm(vs[i]) - 1) > atol:
            raise ValueError("steering directions must be unit vectors")
        for j in range(i):
            if abs(vs[i] @ vs[j]) > atol:
                raise ValueError("steering directions must be pairwise orthogonal")


def inequality_terms(e1, e2, e3, n, m, k) -> list[tuple[float, float]]:
    check_orthogonal(n, m, k)
    return [ensemble_avg_sq(e, d) for e, d in ((e1, n), (e2, m), (e3, k))]


def inequality_lhs(e1, e2, e3, n, m, k) -> float:
    """Left-hand side of the three-term inequality; values above 1 certify steering."""
    return math.fsum(v for v, _ in inequality_terms(e1, e2, e3, n, m, k))


@dataclass
class SteeringReport:
    terms: dict
    stderrs: dict
    lhs: float
    delta_s: float
    stderr: float
    directions: dict
    config: dict
    seed: int | None = None

    def __post_init__(self):
        dirs = [np.asarray(self.directions[k]) for k in ("n", "m", "k")]
        check_orthogonal(*dirs)

    def to_dict(self) -> dict:
        return {
            "terms": dict(self.terms),
            "stderrs": dict(self.stderrs),
            "lhs": self.lhs,
            "delta_s": self.delta_s,
            "stderr": self.stderr,
            "directions": {k: [float(x) for x in v] for k, v in self.directions.items()},
            "config": self.config,
            "seed": self.seed,
        }


def sample_ensemble(params: ModelParams, spec: ScenarioSpec, n_trajectories: int, steps: int,
                    seed: int, workers: int = 1, stream: int = 0, initial="steady",
                    burn_in: int | None = None) -> EndpointEnsemble:
    """Endpoint ensemble of ``n_trajectories`` independent runs of ``steps`` collisions."""
    if burn_in is not None and steps < burn_in:
        raise ValueError(f"steps ({steps}) shorter than the burn-in ({burn_in})")
    bloch, _ = simulate_endpoints(params, spec, n_trajectories, steps, seed,
                                  workers=workers, stream=stream, initial=initial)
    meta = {"params": params.as_dict(), "steps": steps, "burn_in": burn_in, "seed": seed,
            "stream": stream, "initial": initial if isinstance(initial, str) else list(initial)}
    return EndpointEnsemble.uniform(spec.name, bloch, meta)


def steering_report(ex: EndpointEnsemble, ey: EndpointEnsemble, config=None,
                    seed=None) -> SteeringReport:
    """Report for the x-ensemble along y and z plus the y-ensemble along x."""
    n, m, k = AXIS_VECTORS["y"], AXIS_VECTORS["z"], AXIS_VECTORS["x"]
    (a, sa), (b, sb), (c, sc) = inequality_terms(ex, ex, ey, n, m, k)
    # the two x-ensemble terms share members, so combine them per member
    q = (ex.bloch @ n) ** 2 + (ex.bloch @ m) ** 2
    s_x = _weighted_stderr(q, ex.weights)
    lhs = math.fsum([a, b, c])
    return SteeringReport(
        terms={"E_x[sy^2]": a, "E_x[sz^2]": b, "E_y[sx^2]": c},
        stderrs={"E_x[sy^2]": sa, "E_x[sz^2]": sb, "E_y[sx^2]": sc},
        lhs=lhs,
        delta_s=lhs - 1.0,
        stderr=math.sqrt(s_x**2 + sc**2),
        directions={"n": n, "m": m, "k": k},
        config=dict(config or {}),
        seed=seed,
    )


def _weighted_stderr(q: np.ndarray, w: np.ndarray) -> float:
    value = math.fsum(w * q)
    n_eff = 1.0 / math.fsum(w * w)
    if n_eff <= 1.0 + 1e-12:
        return 0.0
    return math.sqrt(math.fsum(w * (q - value) ** 2) / (n_eff - 1))


def delta_S(params: ModelParams, n_trajectories: int, steps: int, seed: int, workers: int = 1,
            initial="steady") -> tuple[float, float]:
    """Steerability from the x and y non-adaptive scenarios, with its standard error."""
    rep = delta_S_report(params, n_trajectories, steps, seed, workers, initial)
    return rep.delta_s, rep.stderr


def delta_S_report(params: ModelParams, n_trajectories: int, steps: int, seed: int,
                   workers: int = 1, initial="steady") -> SteeringReport:
    ex = sample_ensemble(params, ScenarioSpec.parse("x"), n_trajectories, steps, seed,
                         workers=workers, stream=0, initial=initial)
    ey = sample_ensemble(params, ScenarioSpec.parse("y"), n_trajectories, steps, seed,
                         workers=workers, stream=1, initial=initial)
    config = {"params": params.as_dict(), "trajectories": n_trajectories, "steps": steps,
              "initial": initial}
    return steering_report(ex, ey, config=config, seed=seed)


def stationarity_check(params: ModelParams, spec: ScenarioSpec, direction, n_trajectories: int,
                       steps: int, seed: int, workers: int = 1, sigmas: float = 3.0) -> dict:
    """Compare an ensemble average at ``steps`` and ``2 * steps`` collisions."""
    a = sample_ensemble(params, spec, n_trajectories, steps, seed, workers, stream=10)
    b = sample_ensemble(params, spec, n_trajectories, 2 * steps, seed, workers, stream=11)
    (va, sa), (vb, sb) = ensemble_avg_sq(a, direction), ensemble_avg_sq(b, direction)
    combined = math.hypot(sa, sb)
    return {"value": va, "value_double": vb, "stderr": combined,
            "stationary": abs(va - vb) <= sigmas * combined}


@dataclass
class EtaCritResult:
    eta_crit: float
    uncertainty: float
    bracket: tuple[float, float]
    evaluations: list


def eta_crit_search(params: ModelParams, tolerance: float = 0.01, n_trajectories: int = 2000,
                    steps: int = 10_000, seed: int = 0, max_trajectories: int = 32_000,
                    bracket=(-1.0, -0.5), workers: int = 1, sigmas: float = 3.0) -> EtaCritResult:
    """Bisect on the sign of the steerability.

    A sign is declared only when ``|dS| > sigmas * stderr``; otherwise the
    trajectory budget doubles up to ``max_trajectories``. If a midpoint stays
    undecided at the cap, the current bracket is returned.
    """
    evaluations = []

    def sign_at(eta):
        n = n_trajectories
        while True:
            k = len(evaluations)
            ds, se = delta_S(params.replace(eta=eta), n, steps,
                             trajectory_seed(seed, k, stream=7), workers)
            evaluations.append({"eta": eta, "delta_s": ds, "stderr": se, "trajectories": n})
            if abs(ds) > sigmas * se:
                return 1 if ds > 0 else -1
            if 2 * n > max_trajectories:
                return 0
            n *= 2

    lo, hi = bracket
    s_lo, s_hi = sign_at(lo), sign_at(hi)
    if s_lo == 0 and s_hi == 0:
        raise ValueError("steerability indistinguishable from zero across the bracket")
    if s_lo != 1 or s_hi != -1:
        raise ValueError(f"bracket {bracket} does not straddle the steering threshold")
    while hi - lo > 2 * tolerance:
        mid = 0.5 * (lo + hi)
        s = sign_at(mid)
        if s == 0:
            break
        if s > 0:
            lo = mid
        else:
            hi = mid
    return EtaCritResult(0.5 * (lo + hi), 0.5 * (hi - lo), (lo, hi), evaluations)


_SPIN_FLIP = np.kron(qla.SIGMA_Y, qla.SIGMA_Y)


def concurrence_margin(rho: np.ndarray) -> float:
    """Unclamped ``l1 - l2 - l3 - l4`` of the spin-flip construction."""
    rho = qla.as_density(rho)
    if rho.shape != (4, 4):
        raise ValueError("concurrence needs a two-qubit state")
    tilde = _SPIN_FLIP @ rho.conj() @ _SPIN_FLIP
    ev = np.sort(np.linalg.eigvals(rho @ tilde).real)[::-1]
    ev = np.where(ev < 1e-12, 0.0, ev)
    lam = np.sqrt(ev)
    return float(lam[0] - lam[1] - lam[2] - lam[3])


def concurrence(rho: np.ndarray) -> float:
    return min(1.0, max(0.0, concurrence_margin(rho)))


def collision_state(params: ModelParams) -> np.ndarray:
    """System and one subenvironment right after colliding, system in its steady state."""
    return collide(steady_density(params), params)


def collision_concurrence(params: ModelParams) -> float:
    return concurrence(collision_state(params))


@dataclass
class BoundaryMap:
    dts: np.ndarray
    etas: np.ndarray
    values: np.ndarray  # shape (len(dts), len(etas))
    boundary: np.ndarray  # per dt: eta where concurrence vanishes, nan if no sign change

    def rows(self):
        for i, dt in enumerate(self.dts):
            for j, eta in enumerate(self.etas):
                yield float(dt), float(eta), float(self.values[i, j])


def entanglement_boundary(dt_grid, eta_grid, params: ModelParams | None = None) -> BoundaryMap:
    """Concurrence map over ``(dt, eta)`` and the zero-concurrence contour per ``dt``."""
    base = ModelParams() if params is None else params
    dts = np.asarray(dt_grid, dtype=float)
    etas = np.asarray(eta_grid, dtype=float)
    values = np.empty((len(dts), len(etas)))
    margins = np.empty_like(values)
    for i, dt in enumerate(dts):
        for j, eta in enumerate(etas):
            rho = collision_state(base.replace(dt=float(dt), eta=float(eta)))
            margins[i, j] = concurrence_margin(rho)
            values[i, j] = concurrence(rho)
    boundary = np.full(len(dts), np.nan)
    for i, dt in enumerate(dts):
        for j in range(len(etas) - 1):
            if (margins[i, j] > 0) != (margins[i, j + 1] > 0):
                fn = lambda eta: concurrence_margin(
                    collision_state(base.replace(dt=float(dt), eta=float(eta))))
                boundary[i] = brentq(fn, etas[j], etas[j + 1], xtol=1e-12)
                break
    return BoundaryMap(dts, etas, values, boundary)


def fibonacci_sphere(n: int) -> np.ndarray:
    i = np.arange(n) + 0.5
    z = 1 - 2 * i / n
    phi = np.pi * (1 + 5**0.5) * i
    r = np.sqrt(1 - z * z)
    return np.stack([r * np.cos(phi), r * np.sin(phi), z], axis=1)


def _unit(theta, phi):
    return np.array([np.sin(theta) * np.cos(phi), np.sin(theta) * np.sin(phi), np.cos(theta)])


def steered_avg_sq(rho_sc: np.ndarray, m, axis) -> float:
    return math.fsum(p * float(np.dot(axis, r)) ** 2
                     for p, r in steered_ensembles_from_control(rho_sc, m))


@dataclass
class NonlocalViolation:
    lhs: float
    terms: dict
    bob_directions: dict
    control_directions: dict


def nonlocal_violation(rho_sc: np.ndarray, grid_points: int = 320,
                       xtol: float = 1e-6) -> NonlocalViolation:
    """Optimize one control measurement per Bob axis to maximize the inequality."""
    grid = fibonacci_sphere(grid_points)
    terms, controls = {}, {}
    for name, axis in AXIS_VECTORS.items():
        scores = [steered_avg_sq(rho_sc, m, axis) for m in grid]
        best = grid[int(np.argmax(scores))]
        theta0 = np.arccos(np.clip(best[2], -1, 1))
        phi0 = np.arctan2(best[1], best[0])
        res = minimize(lambda a: -steered_avg_sq(rho_sc, _unit(*a), axis), [theta0, phi0],
                       method="Nelder-Mead", options={"xatol": xtol, "fatol": 1e-14})
        m = _unit(*res.x)
        value = steered_avg_sq(rho_sc, m, axis)
        if value < max(scores):
            m, value = best, max(scores)
        terms[name] = value
        controls[name] = m
    return NonlocalViolation(math.fsum(terms.values()), terms, dict(AXIS_VECTORS), controls)
