"""Measurement scenarios on the subenvironments.

Outcome ``+1`` of a spin measurement along ``n`` is the effect
``(1 + n.sigma) / 2``. A uniform draw ``u`` selects ``+1`` when
``u < p(+1)``; the fast trajectory engine uses the same rule, so both paths
agree draw for draw.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from itertools import product

import numpy as np

from . import qla
from .model import ModelParams, build_Q, collide, env_state, steady_state
from .qla import GROUND, IDENTITY, PAULIS, SIGMA_MINUS, SIGMA_X, SIGMA_Y, SIGMA_Z

MIN_PROBABILITY = 1e-15
AXES = {"x": (1.0, 0.0, 0.0), "y": (0.0, 1.0, 0.0), "z": (0.0, 0.0, 1.0)}


def spin_effect(direction, sign: int) -> np.ndarray:
    nx, ny, nz = direction
    return 0.5 * (IDENTITY + sign * (nx * SIGMA_X + ny * SIGMA_Y + nz * SIGMA_Z))


@dataclass(frozen=True)
class SpinObservable:
    direction: tuple

    def __post_init__(self):
        d = np.asarray(self.direction, dtype=float)
        if d.shape != (3,) or abs(np.linalg.norm(d) - 1) > 1e-12:
            raise ValueError(f"measurement direction {self.direction} is not a unit vector")
        object.__setattr__(self, "direction", tuple(float(v) for v in d))

    @classmethod
    def along(cls, axis) -> "SpinObservable":
        if isinstance(axis, str):
            return cls(AXES[axis])
        d = np.asarray(axis, dtype=float)
        return cls(tuple(d / np.linalg.norm(d)))

    @property
    def effects(self) -> tuple[np.ndarray, np.ndarray]:
        return spin_effect(self.direction, +1), spin_effect(self.direction, -1)


@dataclass(frozen=True)
class ScenarioSpec:
    """Which rule Alice uses to measure the subenvironments.

    ``kind`` is ``"nonadaptive"`` (fixed ``direction``), ``"adaptive"`` (the
    two-direction switching rule) or ``"nonlocal"`` (control qubit measured
    along ``control_direction`` at the end).
    """

    kind: str
    direction: tuple | None = None
    control_direction: tuple | None = None
    initial_direction: int = 1

    def __post_init__(self):
        if self.kind == "nonadaptive":
            if self.direction is None:
                raise ValueError("non-adaptive scenario needs a direction")
            object.__setattr__(self, "direction", SpinObservable.along(self.direction).direction)
        elif self.kind == "adaptive":
            if self.initial_direction not in (1, 2):
                raise ValueError("adaptive initial direction must be 1 or 2")
        elif self.kind == "nonlocal":
            if self.control_direction is None:
                raise ValueError("nonlocal scenario needs a control measurement direction")
            object.__setattr__(
                self, "control_direction", SpinObservable.along(self.control_direction).direction
            )
        else:
            raise ValueError(f"unknown scenario kind {self.kind!r}")

    @classmethod
    def nonadaptive(cls, direction) -> "ScenarioSpec":
        return cls("nonadaptive", direction=direction)

    @classmethod
    def adaptive(cls, initial_direction: int = 1) -> "ScenarioSpec":
        return cls("adaptive", initial_direction=initial_direction)

    @classmethod
    def nonlocal_(cls, control_direction) -> "ScenarioSpec":
        return cls("nonlocal", control_direction=control_direction)

    @classmethod
    def parse(cls, text: str) -> "ScenarioSpec":
        text = text.strip().lower()
        if text in AXES:
            return cls.nonadaptive(AXES[text])
        if text == "adaptive":
            return cls.adaptive()
        if text == "nonlocal":
            return cls.nonlocal_(AXES["z"])
        raise ValueError(f"unknown scenario {text!r}; expected x, y, z, adaptive or nonlocal")

    @property
    def name(self) -> str:
        if self.kind == "nonadaptive":
            for axis, d in AXES.items():
                if np.allclose(self.direction, d, atol=1e-15):
                    return axis
            return "n(%.6g,%.6g,%.6g)" % self.direction
        return self.kind

    @property
    def observable(self) -> SpinObservable:
        return SpinObservable(self.direction)


@dataclass(frozen=True)
class TrajectoryState:
    """One conditional trajectory; ``rho`` is the system state after ``step`` collisions."""

    rho: np.ndarray
    step: int = 0
    direction_index: int | None = None
    control_state: np.ndarray | None = None
    rng: np.random.Generator | None = field(default=None, compare=False)
    last_outcome: int | None = None

    @classmethod
    def start(cls, rho, spec: ScenarioSpec, rng=None) -> "TrajectoryState":
        rho = qla.as_density(rho)
        if spec.kind == "adaptive":
            return cls(rho=rho, direction_index=spec.initial_direction, rng=rng)
        if spec.kind == "nonlocal":
            control = qla.ket2dm(GROUND)
            return cls(rho=rho, control_state=np.kron(rho, control), rng=rng)
        return cls(rho=rho, rng=rng)

    def draw(self) -> float:
        if self.rng is None:
            raise ValueError("trajectory has no random stream")
        return float(self.rng.random())


def measure_subenv(joint: np.ndarray, observable: SpinObservable, u: float):
    """Measure the subenvironment of a system-subenvironment state.

    Returns ``(outcome, probability, conditional system state)``.
    """
    joint = qla.as_density(joint)
    if joint.shape != (4, 4):
        raise ValueError("joint state must be a two-qubit state")
    branches = []
    for sign, effect in zip((+1, -1), observable.effects):
        P = np.kron(IDENTITY, effect)
        unnorm = qla.partial_trace(P @ joint @ P, [2, 2], [0])
        branches.append((sign, float(np.trace(unnorm).real), unnorm))
    if branches[0][1] < MIN_PROBABILITY and branches[1][1] < MIN_PROBABILITY:
        raise ValueError("both outcome probabilities vanish; invalid joint state")
    sign, p, unnorm = branches[0] if u < branches[0][1] else branches[1]
    return sign, p, unnorm / p


def nonadaptive_step(t: TrajectoryState, params: ModelParams, spec: ScenarioSpec) -> TrajectoryState:
    outcome, _, rho = measure_subenv(collide(t.rho, params), spec.observable, t.draw())
    return replace(t, rho=rho, step=t.step + 1, last_outcome=outcome)


def adaptive_directions(params: ModelParams) -> tuple[np.ndarray, np.ndarray]:
    g = params.g
    return np.array([0.0, np.sin(g), np.cos(g)]), np.array([0.0, -np.sin(g), np.cos(g)])


def dichotomic_targets(params: ModelParams) -> tuple[np.ndarray, np.ndarray]:
    """Pure states closest to the x-axis whose equal mixture is the steady state."""
    if not params.is_vacuum:
        raise ValueError("dichotomic targets are defined for the vacuum bath only")
    _, y, z = steady_state(params)
    x = np.sqrt(max(0.0, 1 - y * y - z * z))
    return np.array([x, y, z]), np.array([-x, y, z])


# Under the excited-first basis and W = exp(-i g ...), n1 holds r- in place
# and sends it to r+ on outcome +1, while n2 does the same for r+.
def verify_dichotomic_conditions(params: ModelParams, directions=None) -> tuple[float, float]:
    """Worst-branch residuals of the jump conditions for directions ``n1`` and ``n2``."""
    if params.g == 0:
        raise ValueError("g = 0 degenerates the dichotomic conditions")
    n1, n2 = adaptive_directions(params) if directions is None else directions
    r_plus, r_minus = dichotomic_targets(params)
    rho_p, rho_m = qla.density_from_bloch(r_plus), qla.density_from_bloch(r_minus)
    residuals = []
    for n, start, stay, jump in ((n1, rho_m, rho_m, rho_p), (n2, rho_p, rho_p, rho_m)):
        obs = SpinObservable(tuple(np.asarray(n) / np.linalg.norm(n)))
        joint = collide(start, params)
        worst = 0.0
        for u, expected in ((0.0, jump), (1.0, stay)):
            _, _, cond = measure_subenv(joint, obs, u)
            worst = max(worst, qla.max_abs(cond - expected))
        residuals.append(worst)
    return residuals[0], residuals[1]


def adaptive_step(t: TrajectoryState, params: ModelParams) -> TrajectoryState:
    """Keep the current direction on ``-1``, switch to the other one on ``+1``."""
    n = adaptive_directions(params)[t.direction_index - 1]
    outcome, _, rho = measure_subenv(collide(t.rho, params), SpinObservable(tuple(n)), t.draw())
    d = t.direction_index if outcome == -1 else 3 - t.direction_index
    return replace(t, rho=rho, step=t.step + 1, direction_index=d, last_outcome=outcome)


# --- two-qubit Bloch (Fano) representation --------------------------------


def theta_of(rho: np.ndarray) -> np.ndarray:
    """``Theta[i, j] = Tr[rho sigma_i x sigma_j]`` with ``sigma_0 = 1``."""
    rho = qla.as_density(rho)
    return np.array([[np.trace(rho @ np.kron(a, b)).real for b in PAULIS] for a in PAULIS])


def density_of_theta(theta: np.ndarray) -> np.ndarray:
    return sum(
        theta[i, j] * np.kron(PAULIS[i], PAULIS[j]) for i in range(4) for j in range(4)
    ) / 4


def theta_star(params: ModelParams) -> np.ndarray:
    """Pure system-control state whose system marginal is the steady state."""
    if not params.is_vacuum:
        raise ValueError("the control-qubit construction requires a vacuum bath")
    r = steady_state(params)
    _, y, z = r
    if z == 0:
        raise ValueError("z_SS = 0 leaves the ansatz angle undefined")
    alpha = np.arccos(min(1.0, np.linalg.norm(r)))
    # principal branch: cos(beta) and -z_SS share their sign
    beta = np.arctan(y / z)
    sa, ca, sb, cb = np.sin(alpha), np.cos(alpha), np.sin(beta), np.cos(beta)
    theta = np.zeros((4, 4))
    theta[0, 0] = 1.0
    theta[0, 1:] = [0.0, 0.0, ca]
    theta[1:, 0] = r
    theta[1:, 1:] = [[0.0, sa, 0.0], [-sa * cb, 0.0, -sb], [sa * sb, 0.0, -cb]]
    return theta


def _leading_eigenvector(rho: np.ndarray) -> np.ndarray:
    w, v = np.linalg.eigh(rho)
    psi = v[:, -1]
    lead = psi[np.argmax(np.abs(psi) > 1e-12)]
    return psi * (abs(lead) / lead)


def theta_star_vector(params: ModelParams) -> np.ndarray:
    return _leading_eigenvector(density_of_theta(theta_star(params)))


def theta_ss(params: ModelParams) -> np.ndarray:
    """Continuum-limit steady state of the system-control generator (depends on c only)."""
    c = params.c
    k = np.sqrt(16 * c * c + 1)
    d = 8 * c * c + 1
    return np.array(
        [
            [1.0, 0.0, 0.0, k / d],
            [0.0, 0.0, 8 * c * c / d, 0.0],
            [4 * c / d, -8 * c * c / (d * k), 0.0, 4 * c / k],
            [-1.0 / d, -32 * c**3 / (d * k), 0.0, -1.0 / k],
        ]
    )


def two_qubit_hamiltonian(params: ModelParams) -> np.ndarray:
    w, gm, r33 = params.omega, params.gamma, params.r33
    return (
        -w * np.kron(IDENTITY, SIGMA_Y)
        + w * r33 * np.kron(SIGMA_X, SIGMA_Z)
        + w * np.kron(SIGMA_X, IDENTITY)
        + 0.25 * r33 * gm * np.kron(SIGMA_X, SIGMA_X)
        + 0.25 * gm * np.kron(SIGMA_Y, SIGMA_Y)
    )


def two_qubit_lindblad(params: ModelParams) -> np.ndarray:
    w, gm, r33 = params.omega, params.gamma, params.r33
    sg = np.sqrt(gm)
    return (
        -2 * r33 * w / sg * np.kron(IDENTITY, SIGMA_Z)
        - 0.5 * r33 * sg * np.kron(IDENTITY, SIGMA_X)
        + 0.5j * sg * np.kron(IDENTITY, SIGMA_Y)
        - 1j * sg * np.kron(SIGMA_MINUS, IDENTITY)
    )


def two_qubit_gksl(rho_sc: np.ndarray, params: ModelParams) -> np.ndarray:
    from .model import dissipator

    rho = qla.as_density(rho_sc)
    H = two_qubit_hamiltonian(params)
    return -1j * (H @ rho - rho @ H) + dissipator(two_qubit_lindblad(params), rho)


# --- control gates -----------------------------------------------------------


@dataclass(frozen=True)
class ControlGate:
    """Unitary on control x subenvironment, basis ``{|11>, |10>, |01>, |00>}``."""

    T: np.ndarray
    provenance: str

    def __post_init__(self):
        if self.T.shape != (4, 4) or not qla.is_unitary(self.T):
            raise ValueError("control gate must be a 4x4 unitary")


def _gram_schmidt_completion(vectors: list[np.ndarray], dim: int) -> list[np.ndarray]:
    basis = [v / np.linalg.norm(v) for v in vectors]
    extra = []
    for e in np.eye(dim, dtype=complex):
        w = e - sum(np.vdot(b, e) * b for b in basis)
        nrm = np.linalg.norm(w)
        if nrm > 1e-8:
            w = w / nrm
            basis.append(w)
            extra.append(w)
        if len(basis) == dim:
            break
    return extra


def _after_collision_sca(psi_sc: np.ndarray, params: ModelParams) -> np.ndarray:
    """``Q_SA (psi_SC x |0>_A)`` in the ordering system, control, subenvironment."""
    return qla.embed(build_Q(params), [0, 2], 3) @ np.kron(psi_sc, GROUND)


def construct_T_schmidt(params: ModelParams) -> ControlGate:
    """Decoupling gate built from the Schmidt form of the post-collision state.

    The two free phases and the control labels are chosen so the decoupled
    system-control state equals the ansatz state itself.
    """
    psi_star = theta_star_vector(params)
    psi_after = _after_collision_sca(psi_star, params)
    split = qla.schmidt(psi_after, 2, 4)
    if split.rank > 2:
        raise ValueError("system Schmidt rank exceeds 2")
    target = qla.schmidt(psi_star, 2, 2)
    if split.rank != target.rank:
        raise ValueError("post-collision Schmidt rank differs from the ansatz state")
    control_basis = [target.right[:, i] for i in range(target.rank)]
    control_basis += _gram_schmidt_completion(control_basis, 2)
    inputs = [split.right[:, i] for i in range(split.rank)]
    inputs += _gram_schmidt_completion(inputs, 4)
    outputs = [np.kron(b, GROUND) for b in control_basis] + [
        np.kron(b, qla.EXCITED) for b in control_basis
    ]
    if split.rank == 1:
        outputs = [outputs[0], outputs[2], outputs[1], outputs[3]]
    phases = np.ones(4, dtype=complex)
    for i in range(split.rank):
        overlap = np.vdot(target.left[:, i], split.left[:, i])
        phases[i] = np.conj(overlap / abs(overlap))
    T = sum(ph * np.outer(out, inp.conj()) for ph, out, inp in zip(phases, outputs, inputs))
    return ControlGate(T=T, provenance="schmidt-constructed")


def s_matrices(params: ModelParams) -> tuple[np.ndarray, np.ndarray]:
    r, w, gm = params.r33, params.omega, params.gamma
    a = 2j * r * w / gm
    s1 = np.array(
        [
            [0, -a, 0, -0.5j * (r - 1)],
            [a, 0, 0.5j * (r + 1), 0],
            [0, -0.5j * (r + 1), 0, a],
            [0.5j * (r - 1), 0, -a, 0],
        ],
        dtype=complex,
    )
    s2 = np.array(
        [[0, 0, 1j * r, 0], [0, 0, 0, 1j], [-1j * r, 0, 0, 0], [0, -1j, 0, 0]], dtype=complex
    )
    return s1, s2


def closed_form_T(params: ModelParams) -> ControlGate:
    s1, s2 = s_matrices(params)
    T = qla.expm_hermitian(s2, params.omega * params.dt) @ qla.expm_hermitian(
        s1, np.sqrt(params.gamma * params.dt)
    )
    return ControlGate(T=T, provenance="closed-form")


def decoupling_residual(params: ModelParams, gate: ControlGate) -> float:
    """Norm of the subenvironment's excited component after the gate."""
    out = qla.embed(gate.T, [1, 2], 3) @ _after_collision_sca(theta_star_vector(params), params)
    return float(np.linalg.norm(out.reshape(4, 2)[:, 0]))


def control_map(rho_sc: np.ndarray, params: ModelParams, gate: ControlGate) -> np.ndarray:
    if not params.is_vacuum:
        raise ValueError("nonlocal scenarios are only supported for the vacuum bath")
    rho = qla.as_density(rho_sc)
    Q3 = qla.embed(build_Q(params), [0, 2], 3)
    T3 = qla.embed(gate.T, [1, 2], 3)
    V = T3 @ Q3
    big = V @ np.kron(rho, env_state(params)) @ qla.dagger(V)
    return qla.partial_trace(big, [2, 2, 2], [0, 1])


def fixed_point_residual(params: ModelParams, gate: ControlGate) -> float:
    rho = density_of_theta(theta_star(params))
    return qla.max_abs(control_map(rho, params, gate) - rho)


def nonlocal_step(t: TrajectoryState, params: ModelParams, gate: ControlGate) -> TrajectoryState:
    rho_sc = control_map(t.control_state, params, gate)
    # the map is trace preserving; strip accumulated roundoff over long runs
    rho_sc = 0.5 * (rho_sc + qla.dagger(rho_sc))
    rho_sc = rho_sc / np.trace(rho_sc).real
    return replace(
        t, control_state=rho_sc, rho=qla.partial_trace(rho_sc, [2, 2], [0]), step=t.step + 1
    )


def effective_nonlocal_povm(gates, control_effect: np.ndarray, n_collisions: int,
                            control_state: np.ndarray | None = None) -> np.ndarray:
    """Environment effect equivalent to measuring ``control_effect`` after the gates.

    ``gates`` is one gate (reused) or one per collision; the control starts
    in ``control_state`` (ground state by default).
    """
    if not 1 <= n_collisions <= 3:
        raise ValueError("n_collisions must be between 1 and 3")
    if isinstance(gates, ControlGate):
        gates = [gates] * n_collisions
    if len(gates) != n_collisions:
        raise ValueError("need one gate per collision")
    rho_c = qla.ket2dm(GROUND) if control_state is None else qla.as_density(control_state)
    n = n_collisions + 1  # subenvironments first, control last
    total = np.eye(2**n, dtype=complex)
    for i, gate in enumerate(gates):
        total = qla.embed(gate.T, [n_collisions, i], n) @ total
    M = qla.dagger(total) @ np.kron(np.eye(2**n_collisions), control_effect) @ total
    d = 2**n_collisions
    return np.einsum("akbi,ik->ab", M.reshape(d, 2, d, 2), rho_c)


def steered_ensembles_from_control(rho_sc: np.ndarray, m) -> list[tuple[float, np.ndarray]]:
    """Born probabilities and system Bloch vectors for a control spin measurement along ``m``."""
    rho = qla.as_density(rho_sc)
    m = np.asarray(m, dtype=float) / np.linalg.norm(m)
    out = []
    for sign in (+1, -1):
        unnorm = qla.partial_trace(np.kron(IDENTITY, spin_effect(m, sign)) @ rho, [2, 2], [0])
        p = float(np.trace(unnorm).real)
        r = qla.bloch_vector(unnorm / p) if p > MIN_PROBABILITY else np.zeros(3)
        out.append((p, r))
    return out


# --- branch algebra and transfer matrices -----------------------------------


def sequential_branch_probabilities(rho0, params: ModelParams, direction, n_collisions: int) -> dict:
    """Outcome-string probabilities from step-by-step conditioning."""
    obs = SpinObservable.along(direction)
    probs = {}

    def walk(rho, prefix, p):
        if len(prefix) == n_collisions:
            probs[prefix] = p
            return
        joint = collide(rho, params)
        for sign, u in ((+1, 0.0), (-1, 1.0)):
            effect = obs.effects[0 if sign == 1 else 1]
            P = np.kron(IDENTITY, effect)
            unnorm = qla.partial_trace(P @ joint @ P, [2, 2], [0])
            q = float(np.trace(unnorm).real)
            if q > 0:
                walk(unnorm / q, prefix + (sign,), p * q)
            else:
                probs.update({prefix + (sign,) + rest: 0.0
                              for rest in product((1, -1), repeat=n_collisions - len(prefix) - 1)})

    walk(qla.as_density(rho0), (), 1.0)
    return probs


def joint_branch_probabilities(rho0, params: ModelParams, direction, n_collisions: int) -> dict:
    """Outcome-string probabilities from measuring all subenvironments of the joint state."""
    from .model import joint_state

    obs = SpinObservable.along(direction)
    rho = qla.as_density(joint_state(qla.as_density(rho0), params, n_collisions))
    probs = {}
    for outcome in product((1, -1), repeat=n_collisions):
        P = qla.kron(IDENTITY, *[obs.effects[0 if k == 1 else 1] for k in outcome])
        probs[outcome] = float(np.trace(rho @ P).real)
    return probs


def transfer_matrix(params: ModelParams, effect: np.ndarray) -> np.ndarray:
    """Real 4x4 matrix of ``rho -> Tr_A[(1 x E) Q (rho x rho_A) Q^dag (1 x E)]``.

    Acts on ``v = (Tr rho, <sigma_x>, <sigma_y>, <sigma_z>)``.
    """
    Q = build_Q(params)
    P = np.kron(IDENTITY, effect)
    rho_a = env_state(params)
    M = np.empty((4, 4))
    for j, sj in enumerate(PAULIS):
        out = qla.partial_trace(P @ Q @ np.kron(sj, rho_a) @ qla.dagger(Q) @ P, [2, 2], [0])
        for i, si in enumerate(PAULIS):
            M[i, j] = 0.5 * np.trace(si @ out).real
    return M


def scenario_tables(params: ModelParams, spec: ScenarioSpec):
    """Transfer matrices ``(D, 2, 4, 4)``, next-direction table ``(D, 2)`` and start index.

    Outcome index 0 is ``+1``. Direction indices are zero-based.
    """
    if spec.kind == "nonadaptive":
        obs = spec.observable
        maps = np.array([[transfer_matrix(params, e) for e in obs.effects]])
        return maps, np.zeros((1, 2), dtype=np.int64), 0
    if spec.kind == "adaptive":
        maps = np.array(
            [[transfer_matrix(params, spin_effect(n, s)) for s in (+1, -1)]
             for n in adaptive_directions(params)]
        )
        nxt = np.array([[1, 0], [0, 1]], dtype=np.int64)
        return maps, nxt, spec.initial_direction - 1
    raise ValueError("nonlocal scenarios do not produce local trajectories")
