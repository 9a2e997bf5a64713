"""Acceptance criteria 1-10.

Each criterion is a function returning ``(passed, detail)``. Under pytest the
results are collected and one PASS/FAIL line per criterion is printed in the
terminal summary; running this file directly prints the same lines.
"""

import math
import time

import numpy as np
import pytest

from cmsteer import qla
from cmsteer.model import (ModelParams, continuum_residual, steady_density, step_map,
                           thermal_steady_state, vacuum_steady_state)
from cmsteer.protocol import (AliceStrategy, evaluate_from_bins, pooled_marginal, run_session,
                              unconditioned_state)
from cmsteer.scenarios import (ScenarioSpec, closed_form_T, construct_T_schmidt,
                               decoupling_residual, density_of_theta, dichotomic_targets,
                               fixed_point_residual, joint_branch_probabilities, scenario_tables,
                               sequential_branch_probabilities, theta_ss, theta_star,
                               two_qubit_gksl, verify_dichotomic_conditions)
from cmsteer.steering import (AXIS_VECTORS, cluster_centers, collision_concurrence,
                              delta_S_report, ensemble_avg_sq, eta_crit_search,
                              nonlocal_violation, sample_ensemble, stationarity_check)
from cmsteer.trajectories import run_trajectory, simulate_endpoints, trajectory_rng

REF = ModelParams()
SEED = 20240611
RESULTS: dict = {}


def criterion_1():
    worst = max(qla.max_abs(step_map(steady_density(REF.replace(eta=eta)), REF.replace(eta=eta))
                            - steady_density(REF.replace(eta=eta)))
                for eta in (-1.0, -0.9, -0.5))
    same = qla.max_abs(thermal_steady_state(REF) - vacuum_steady_state(REF))
    return worst <= 1e-12 and same <= 1e-15, f"fixed-point residual {worst:.2e}, " \
        f"thermal vs vacuum at eta=-1 {same:.1e}"


def criterion_2():
    rng = np.random.default_rng(SEED)
    ratios = []
    for _ in range(20):
        rho = qla.random_density(2, rng)
        for eta in (-1.0, -0.9):
            res = [continuum_residual(REF.replace(eta=eta, dt=dt), rho)
                   for dt in (1e-3, 5e-4, 2.5e-4)]
            ratios += [res[0] / res[1], res[1] / res[2]]
    lo, hi = min(ratios), max(ratios)
    return 1.7 <= lo and hi <= 2.3, f"halving ratios in [{lo:.4f}, {hi:.4f}]"


def criterion_3():
    r1, r2 = verify_dichotomic_conditions(REF)
    pts, _ = simulate_endpoints(REF, ScenarioSpec.adaptive(), 200, 50_000, SEED, initial="steady")
    centers = cluster_centers(pts, 1e-6)
    rp, rm = dichotomic_targets(REF)
    dist = max(min(np.linalg.norm(p - rp), np.linalg.norm(p - rm)) for p in pts)
    ok = r1 <= 1e-12 and r2 <= 1e-12 and len(centers) == 2 and dist <= 1e-6
    return ok, f"residuals {r1:.1e}, {r2:.1e}; {len(centers)} clusters, max distance {dist:.1e}"


def criterion_4():
    ex = sample_ensemble(REF, ScenarioSpec.parse("x"), 1000, 1_000_000, SEED, stream=0,
                         burn_in=50_000)
    sy, _ = ensemble_avg_sq(ex, AXIS_VECTORS["y"])
    sz, _ = ensemble_avg_sq(ex, AXIS_VECTORS["z"])
    stat = stationarity_check(REF, ScenarioSpec.parse("y"), AXIS_VECTORS["x"], 4000, 10_000, SEED)
    ey = sample_ensemble(REF, ScenarioSpec.parse("y"), 20_000, 10_000, SEED, stream=1,
                         burn_in=5_000)
    value, se = ensemble_avg_sq(ey, AXIS_VECTORS["x"])
    ok = stat["stationary"] and 0.526 <= value <= 0.566 and abs(sy + sz - 1) <= 1e-6
    return ok, (f"E_y[sx^2] = {value:.4f} +/- {se:.4f} (N=1e4 after stationarity check "
                f"{stat['value']:.4f} vs {stat['value_double']:.4f}); "
                f"E_x[sy^2]+E_x[sz^2] - 1 = {sy + sz - 1:.1e} (N=1e6, 1e3 trajectories)")


def criterion_5():
    hot = delta_S_report(REF.replace(eta=-0.9), 4000, 10_000, SEED)
    warm = delta_S_report(REF.replace(eta=-0.5), 4000, 10_000, SEED)
    res = eta_crit_search(REF, tolerance=0.01, n_trajectories=2000, steps=10_000, seed=SEED,
                          max_trajectories=32_000)
    lo, hi = res.bracket
    ok = hot.delta_s > 3 * hot.stderr and warm.delta_s < 0 and lo <= -0.69 and hi >= -0.75
    return ok, (f"dS(-0.9) = {hot.delta_s:.4f} +/- {hot.stderr:.4f}, "
                f"dS(-0.5) = {warm.delta_s:.4f}; eta_crit bracket [{lo:.4f}, {hi:.4f}]")


def criterion_6():
    gate = construct_T_schmidt(REF)
    dec = decoupling_residual(REF, gate)
    fix = fixed_point_residual(REF, gate)
    trend = [fixed_point_residual(REF.replace(dt=dt), closed_form_T(REF.replace(dt=dt)))
             for dt in (1e-3, 5e-4, 2.5e-4, 1.25e-4)]
    theta = theta_ss(REF)
    rhs = qla.max_abs(two_qubit_gksl(density_of_theta(theta), REF))
    marg = np.max(np.abs(theta[1:, 0] - [0, 40 / 801, -1 / 801]))
    mono = all(a > b for a, b in zip(trend, trend[1:]))
    ok = dec <= 1e-10 and fix <= 1e-9 and mono and rhs <= 1e-10 and marg <= 1e-12
    return ok, (f"decoupling {dec:.1e}, fixed point {fix:.1e}, closed-form trend "
                + ", ".join(f"{t:.2e}" for t in trend) + f"; generator {rhs:.1e}, marginal {marg:.1e}")


def criterion_7():
    res = nonlocal_violation(density_of_theta(theta_star(REF)))
    return res.lhs >= 2.9, f"LHS = {res.lhs:.6f}"


def criterion_8():
    vac = collision_concurrence(REF)
    crit = collision_concurrence(REF.replace(eta=-0.72))
    return vac > 0 and crit <= 1e-12, f"C(eta=-1) = {vac:.5f}, C(eta=-0.72) = {crit:.1e}"


def _sampled_branches(params, r0, n_traj, seed):
    maps, nxt, d0 = scenario_tables(params, ScenarioSpec.parse("z"))
    v0 = np.concatenate([[1.0], r0])
    counts: dict = {}
    for i in range(n_traj):
        _, _, out = run_trajectory(maps, nxt, v0, d0, 3, trajectory_rng(seed, i), record=True)
        key = tuple(int(o) for o in out)
        counts[key] = counts.get(key, 0) + 1
    return counts


def criterion_9():
    worst_exact, worst_z = 0.0, 0.0
    cases = [(REF, qla.bloch_vector(steady_density(REF))),
             (REF.replace(dt=0.05, eta=-0.8), np.array([0.3, -0.5, 0.2]))]
    for params, r0 in cases:
        rho0 = qla.density_from_bloch(r0)
        seq = sequential_branch_probabilities(rho0, params, "z", 3)
        joint = joint_branch_probabilities(rho0, params, "z", 3)
        worst_exact = max(worst_exact, max(abs(seq[k] - joint[k]) for k in seq))
        n = 100_000
        counts = _sampled_branches(params, r0, n, SEED)
        for k, p in joint.items():
            sigma = math.sqrt(max(p * (1 - p), 1e-300) / n)
            z = abs(counts.get(k, 0) / n - p) / sigma if p > 0 else counts.get(k, 0)
            worst_z = max(worst_z, z)
    ok = worst_exact <= 1e-12 and worst_z <= 3
    return ok, f"branch algebra {worst_exact:.1e}; sampled max |z| = {worst_z:.2f}"


ASSIGNMENT = (("x", (0, 1, 0)), ("x", (0, 0, 1)), ("y", (1, 0, 0)))


def _random_fixed_ensemble(rng):
    k = int(rng.integers(2, 9))
    members = rng.normal(size=(k, 3))
    members /= np.linalg.norm(members, axis=1, keepdims=True)
    # mostly pure members (which saturate the bound), some shrunk
    members *= np.where(rng.random((k, 1)) < 0.7, 1.0, rng.uniform(0.3, 1.0, (k, 1)))
    return tuple(map(tuple, members)), tuple(rng.dirichlet(np.ones(k)))


def criterion_10():
    steps = 10_000
    honest = [run_session(AliceStrategy("honest", ScenarioSpec.parse(name)), 30_000, steps, REF,
                          SEED + k) for k, name in enumerate("xy")]
    proto = evaluate_from_bins(honest, ASSIGNMENT)
    direct = delta_S_report(REF, 1000, steps, SEED)
    combined = math.hypot(proto.stderr, direct.stderr)
    same_verdict = (proto.delta_s > 3 * proto.stderr) == (direct.delta_s > 3 * direct.stderr)
    honest_ok = same_verdict and abs(proto.lhs - direct.lhs) <= 3 * combined

    rng = np.random.default_rng(SEED)
    worst_fixed, worst_blind = -np.inf, -np.inf
    for rep in range(30):
        members, weights = _random_fixed_ensemble(rng)
        sessions = [run_session(AliceStrategy("lhs-fixed-ensemble", ScenarioSpec.parse(name),
                                              members=members, weights=weights),
                                3000, 1, REF, SEED + 100 + 2 * rep + k)
                    for k, name in enumerate("xy")]
        r = evaluate_from_bins(sessions, ASSIGNMENT)
        worst_fixed = max(worst_fixed, (r.lhs - 1) / r.stderr)
        sessions = [run_session(AliceStrategy("announce-without-measuring",
                                              ScenarioSpec.parse(name)),
                                2000, 5_000, REF, SEED + 200 + 2 * rep + k)
                    for k, name in enumerate("xy")]
        r = evaluate_from_bins(sessions, ASSIGNMENT)
        worst_blind = max(worst_blind, (r.lhs - 1) / r.stderr)
    cheats_ok = worst_fixed <= 3 and worst_blind <= 3

    mx, my = pooled_marginal(honest[0]), pooled_marginal(honest[1])
    bob = unconditioned_state(REF, steps)
    z_pair = np.max(np.abs(mx.bloch - my.bloch) / np.hypot(mx.stderr, my.stderr))
    z_ref = max(np.max(np.abs(m.bloch - bob) / m.stderr) for m in (mx, my))
    marginals_ok = z_pair <= 3 and z_ref <= 3
    detail = (f"honest LHS {proto.lhs:.4f} +/- {proto.stderr:.4f} vs direct {direct.lhs:.4f} "
              f"+/- {direct.stderr:.4f}; cheats max (LHS-1)/stderr: fixed {worst_fixed:.2f}, "
              f"blind {worst_blind:.2f}; marginal max |z| {z_pair:.2f} (x vs y), "
              f"{z_ref:.2f} (vs rho_S)")
    return honest_ok and cheats_ok and marginals_ok, detail


CRITERIA = {
    1: ("fixed-point identities", criterion_1),
    2: ("continuum limit", criterion_2),
    3: ("adaptive construction", criterion_3),
    4: ("E_y[sx^2] = 0.546", criterion_4),
    5: ("thermal steering", criterion_5),
    6: ("nonlocal scenario", criterion_6),
    7: ("maximal violation", criterion_7),
    8: ("entanglement boundary", criterion_8),
    9: ("oracle equivalence", criterion_9),
    10: ("protocol soundness", criterion_10),
}


def run_criterion(number):
    name, fn = CRITERIA[number]
    start = time.perf_counter()
    passed, detail = fn()
    elapsed = time.perf_counter() - start
    line = f"criterion {number:2d} {'PASS' if passed else 'FAIL'} [{name}] {detail} ({elapsed:.1f} s)"
    RESULTS[number] = line
    return passed, line


@pytest.mark.parametrize("number", sorted(CRITERIA))
def test_criterion(number):
    passed, line = run_criterion(number)
    print(line)
    assert passed, line


if __name__ == "__main__":
    for n in sorted(CRITERIA):
        print(run_criterion(n)[1], flush=True)
