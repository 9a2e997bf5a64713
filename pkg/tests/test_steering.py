import numpy as np
import pytest
from numpy.testing import assert_allclose

from cmsteer import qla
from cmsteer.model import ModelParams, steady_state
from cmsteer.scenarios import density_of_theta, dichotomic_targets, theta_star
from cmsteer.steering import (AXIS_VECTORS, EndpointEnsemble, SteeringReport, cluster_centers,
                              collision_concurrence, concurrence, concurrence_margin, delta_S,
                              delta_S_report, ensemble_avg_sq, entanglement_boundary,
                              eta_crit_search, fibonacci_sphere, inequality_lhs,
                              nonlocal_violation, sample_ensemble)
from cmsteer.scenarios import ScenarioSpec

X, Y, Z = AXIS_VECTORS["x"], AXIS_VECTORS["y"], AXIS_VECTORS["z"]


def test_ensemble_validation():
    with pytest.raises(ValueError):
        EndpointEnsemble("x", [[0, 0, 1]], [0.5])
    with pytest.raises(ValueError):
        EndpointEnsemble("x", [[0, 0, 1.1]], [1.0])
    with pytest.raises(ValueError):
        EndpointEnsemble("x", [[0, 0, 1], [0, 0, -1]], [1.5, -0.5])
    e = EndpointEnsemble.uniform("x", [[0, 0, 1], [0, 0, -1]])
    assert_allclose(e.purity, [1, 1])
    assert_allclose(e.mean_bloch(), [0, 0, 0])


def test_avg_sq_examples(params):
    v, se = ensemble_avg_sq(EndpointEnsemble("x", [[1, 0, 0]], [1.0]), X)
    assert v == 1 and se == 0
    phi = np.linspace(0, 2 * np.pi, 1000, endpoint=False)
    circle = EndpointEnsemble.uniform("x", np.column_stack([0 * phi, np.cos(phi), np.sin(phi)]))
    assert ensemble_avg_sq(circle, Y)[0] == pytest.approx(0.5, abs=1e-12)
    assert ensemble_avg_sq(circle, Y)[0] + ensemble_avg_sq(circle, Z)[0] == pytest.approx(1)
    rp, rm = dichotomic_targets(params)
    y, z = steady_state(params)[1:]
    v, _ = ensemble_avg_sq(EndpointEnsemble.uniform("adaptive", [rp, rm]), X)
    assert v == pytest.approx(1 - y * y - z * z, abs=1e-15)


def test_avg_sq_aggregation_invariance(rng):
    pts = rng.normal(size=(20, 3))
    pts /= np.linalg.norm(pts, axis=1, keepdims=True) * rng.uniform(1, 2, size=(20, 1))
    e = EndpointEnsemble.uniform("z", pts)
    perm = EndpointEnsemble.uniform("z", pts[rng.permutation(20)])
    # member 0 split into two halves
    split = EndpointEnsemble("z", np.vstack([pts, pts[:1]]),
                             np.r_[0.025, np.full(19, 0.05), 0.025])
    n = np.array([0.2, -0.3, 0.9]) / np.linalg.norm([0.2, -0.3, 0.9])
    assert ensemble_avg_sq(perm, n)[0] == pytest.approx(ensemble_avg_sq(e, n)[0], abs=1e-15)
    assert ensemble_avg_sq(split, n)[0] == pytest.approx(ensemble_avg_sq(e, n)[0], abs=1e-15)


def test_inequality_examples(rng):
    mixed = EndpointEnsemble("x", [[0, 0, 0]], [1.0])
    assert inequality_lhs(mixed, mixed, mixed, X, Y, Z) == 0
    r = rng.normal(size=3)
    r /= np.linalg.norm(r)
    pure = EndpointEnsemble("x", [r], [1.0])
    assert inequality_lhs(pure, pure, pure, X, Y, Z) == pytest.approx(1, abs=1e-15)
    with pytest.raises(ValueError):
        inequality_lhs(pure, pure, pure, X, Y, (X + Y) / np.sqrt(2))


def test_report_requires_orthogonal_directions():
    with pytest.raises(ValueError):
        SteeringReport({}, {}, 1, 0, 0, {"n": X, "m": X, "k": Z}, {})


def test_cluster_centers():
    pts = np.array([[0, 0, 1], [0, 0, 1 + 1e-8], [0, 0, -1]])
    assert len(cluster_centers(pts, 1e-6)) == 2


def test_vacuum_steerability_small_budget():
    rep = delta_S_report(ModelParams(), 400, 10_000, seed=1)
    assert abs(rep.terms["E_x[sy^2]"] + rep.terms["E_x[sz^2]"] - 1) <= 1e-3
    assert abs(rep.delta_s - 0.546) <= 4 * rep.stderr + 0.002
    assert rep.to_dict()["seed"] == 1
    again = delta_S(ModelParams(), 400, 10_000, seed=1)
    assert again == (rep.delta_s, rep.stderr)


def test_thermal_steerability_signs_and_monotone():
    vals = [delta_S(ModelParams(eta=eta), 600, 10_000, seed=5)[0] for eta in (-0.95, -0.8, -0.6)]
    assert vals[0] > vals[1] > vals[2]
    assert vals[0] > 0 and vals[2] < 0


def test_eta_crit_search_small_budget():
    res = eta_crit_search(ModelParams(), tolerance=0.04, n_trajectories=400, steps=5_000,
                          seed=2, max_trajectories=1600)
    lo, hi = res.bracket
    assert lo < hi and hi - lo <= 0.2
    assert lo <= -0.65 and hi >= -0.8
    assert all(set(e) >= {"eta", "delta_s", "stderr", "trajectories"} for e in res.evaluations)


def test_eta_crit_search_rejects_bad_bracket():
    with pytest.raises(ValueError):
        eta_crit_search(ModelParams(), n_trajectories=200, steps=3_000, bracket=(-0.5, -0.3),
                        max_trajectories=200)


def test_sample_ensemble_burn_in_guard():
    with pytest.raises(ValueError):
        sample_ensemble(ModelParams(), ScenarioSpec.parse("x"), 2, 100, seed=1, burn_in=1000)


def test_concurrence_examples(rng, params):
    bell = (np.kron(qla.EXCITED, qla.EXCITED) + np.kron(qla.GROUND, qla.GROUND)) / np.sqrt(2)
    assert concurrence(qla.ket2dm(bell)) == pytest.approx(1, abs=1e-12)
    assert concurrence(np.kron(qla.random_density(2, rng), qla.random_density(2, rng))) == 0
    rho_star = density_of_theta(theta_star(params))
    r = np.linalg.norm(steady_state(params))
    assert concurrence(rho_star) == pytest.approx(np.sqrt(1 - r * r), abs=1e-10)
    with pytest.raises(ValueError):
        concurrence(np.eye(2) / 2)


def test_separable_mixtures_have_zero_concurrence(rng):
    for _ in range(100):
        w = rng.dirichlet(np.ones(10))
        rho = sum(wi * np.kron(qla.random_density(2, rng), qla.random_density(2, rng)) for wi in w)
        assert concurrence(rho) == 0
        assert concurrence_margin(rho) <= 1e-12


def test_collision_concurrence_and_boundary(params):
    assert collision_concurrence(params) > 0
    assert collision_concurrence(params.replace(eta=-0.72)) <= 1e-12
    dts = [5e-4, 1e-3, 2e-3, 5e-3]
    bmap = entanglement_boundary(dts, np.round(np.linspace(-1, -0.5, 11), 12), params)
    assert bmap.values.shape == (4, 11)
    assert np.all(bmap.values[:, 0] > 0)
    b = bmap.boundary
    assert np.all(np.isfinite(b)) and np.all(np.diff(b) > 0)
    for i, dt in enumerate(dts):
        # just below the boundary the state is entangled, just above it is not
        assert collision_concurrence(params.replace(dt=dt, eta=b[i] - 1e-4)) > 0
        assert collision_concurrence(params.replace(dt=dt, eta=min(b[i] + 1e-4, -1e-9))) == 0
    assert len(list(bmap.rows())) == 44


def test_fibonacci_sphere():
    pts = fibonacci_sphere(320)
    assert pts.shape == (320, 3)
    assert_allclose(np.linalg.norm(pts, axis=1), 1, atol=1e-14)
    assert np.linalg.norm(pts.mean(axis=0)) < 1e-2


def test_nonlocal_violation_examples(params, rng):
    bell = (np.kron(qla.EXCITED, qla.EXCITED) + np.kron(qla.GROUND, qla.GROUND)) / np.sqrt(2)
    assert nonlocal_violation(qla.ket2dm(bell)).lhs == pytest.approx(3, abs=1e-9)
    rho_s = qla.random_density(2, rng)
    prod = np.kron(rho_s, qla.random_density(2, rng))
    assert nonlocal_violation(prod).lhs == pytest.approx(
        np.sum(qla.bloch_vector(rho_s) ** 2), abs=1e-9)
    res = nonlocal_violation(density_of_theta(theta_star(params)))
    assert res.lhs >= 2.9
    for m in res.control_directions.values():
        assert np.linalg.norm(m) == pytest.approx(1)
