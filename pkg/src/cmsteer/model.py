"""Collision model of a coherently driven, damped qubit.

Each collision applies the driving ``U = exp(-i f sigma_x)`` to the system and
then the excitation-exchange coupling ``W = exp(-i g (s+ s- + s- s+))``
between the system and a fresh subenvironment qubit prepared in
``(1 + eta sigma_z) / 2``.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from . import qla
from .qla import IDENTITY, SIGMA_MINUS, SIGMA_PLUS, SIGMA_X, SIGMA_Z

MAX_JOINT_COLLISIONS = 3


@dataclass(frozen=True)
class ModelParams:
    """Physical rates, collision duration and bath temperature parameter.

    ``eta = -1`` is the vacuum; values approaching 0 are hotter baths.
    """

    gamma: float = 1.0
    omega: float = 10.0
    dt: float = 1e-3
    eta: float = -1.0

    def __post_init__(self):
        for name in ("gamma", "omega", "dt", "eta"):
            if not np.isfinite(getattr(self, name)):
                raise ValueError(f"{name} must be finite")
        if self.gamma <= 0:
            raise ValueError("gamma must be positive")
        if self.omega < 0:
            raise ValueError("omega must be non-negative")
        if self.dt <= 0:
            raise ValueError("dt must be positive")
        if not -1.0 <= self.eta < 0.0:
            raise ValueError("eta must lie in [-1, 0)")

    @property
    def g(self) -> float:
        return float(np.sqrt(self.gamma * self.dt))

    @property
    def f(self) -> float:
        return self.omega * self.dt

    @property
    def c(self) -> float:
        return self.omega / self.gamma

    @property
    def r33(self) -> float:
        return -self.gamma / np.sqrt(self.gamma**2 + 16 * self.omega**2)

    @property
    def is_vacuum(self) -> bool:
        return self.eta == -1.0

    @property
    def mixing_steps(self) -> int:
        """Collisions per damping time, ``1 / (gamma dt)``."""
        return int(np.ceil(1.0 / (self.gamma * self.dt)))

    def replace(self, **changes) -> "ModelParams":
        return replace(self, **changes)

    def as_dict(self) -> dict:
        return {"gamma": self.gamma, "omega": self.omega, "dt": self.dt, "eta": self.eta}


EXCHANGE = np.kron(SIGMA_PLUS, SIGMA_MINUS) + np.kron(SIGMA_MINUS, SIGMA_PLUS)


def build_W(params: ModelParams) -> np.ndarray:
    return qla.expm_hermitian(EXCHANGE, params.g)


def build_U(params: ModelParams) -> np.ndarray:
    return qla.expm_hermitian(SIGMA_X, params.f)


def build_Q(params: ModelParams) -> np.ndarray:
    """One collision, system factor first: ``W (U x 1)``."""
    return build_W(params) @ np.kron(build_U(params), IDENTITY)


def env_state(params: ModelParams) -> np.ndarray:
    return 0.5 * (IDENTITY + params.eta * SIGMA_Z)


def collide(rho_s: np.ndarray, params: ModelParams, Q: np.ndarray | None = None) -> np.ndarray:
    """Joint system-subenvironment state right after one collision."""
    Q = build_Q(params) if Q is None else Q
    rho_s = qla.as_density(rho_s)
    if rho_s.shape != (2, 2):
        raise ValueError("system state must be a single qubit")
    return Q @ np.kron(rho_s, env_state(params)) @ qla.dagger(Q)


def step_map(rho_s: np.ndarray, params: ModelParams) -> np.ndarray:
    return qla.partial_trace(collide(rho_s, params), [2, 2], [0])


def _vacuum_steady_state(g: float, f: float) -> np.ndarray:
    den = -4 * np.cos(g) * np.cos(f) ** 2 + np.cos(2 * g) + 3
    if den <= 1e-300:
        raise ValueError("collision map has no unique steady state for these parameters")
    y = 4 * np.sin(g / 2) ** 2 * np.cos(g) * np.sin(2 * f) / den
    z = (2 - 2 * np.cos(g)) * (np.cos(g) * np.cos(2 * f) - 1) / den
    return np.array([0.0, y, z])


def vacuum_steady_state(params: ModelParams) -> np.ndarray:
    """Closed-form fixed point of the single-collision map for a vacuum bath."""
    if params.g == 0:
        raise ValueError("g = 0 is a pure rotation without a unique fixed point")
    return _vacuum_steady_state(params.g, params.f)


def thermal_steady_state(params: ModelParams) -> np.ndarray:
    """Closed-form fixed point for a thermal bath, written out in gamma, omega, dt."""
    sg = np.sqrt(params.gamma * params.dt)
    wt = params.dt * params.omega
    den = -4 * np.cos(sg) * np.cos(wt) ** 2 + np.cos(2 * sg) + 3
    if den <= 1e-300:
        raise ValueError("collision map has no unique steady state for these parameters")
    y = -4 * params.eta * np.sin(sg / 2) ** 2 * np.cos(sg) * np.sin(2 * wt) / den
    z = -4 * params.eta * np.sin(sg / 2) ** 2 * (np.cos(sg) * np.cos(2 * wt) - 1) / den
    return np.array([0.0, y, z])


def steady_state(params: ModelParams) -> np.ndarray:
    """Bloch vector of the collision map's fixed point.

    The thermal fixed point is the vacuum one scaled by ``-eta``.
    """
    return -params.eta * vacuum_steady_state(params)


def steady_density(params: ModelParams) -> np.ndarray:
    return qla.density_from_bloch(steady_state(params))


def dissipator(L: np.ndarray, rho: np.ndarray) -> np.ndarray:
    LdL = qla.dagger(L) @ L
    return L @ rho @ qla.dagger(L) - 0.5 * (rho @ LdL + LdL @ rho)


def gksl_rhs(rho_s: np.ndarray, params: ModelParams) -> np.ndarray:
    """Resonance-fluorescence generator with a thermal bath; vacuum at ``eta = -1``."""
    rho = qla.as_density(rho_s)
    out = -1j * params.omega * (SIGMA_X @ rho - rho @ SIGMA_X)
    out = out + params.gamma * (1 - params.eta) / 2 * dissipator(SIGMA_MINUS, rho)
    if params.eta != -1.0:
        out = out + params.gamma * (1 + params.eta) / 2 * dissipator(SIGMA_PLUS, rho)
    return out


def continuum_residual(params: ModelParams, rho_s: np.ndarray) -> float:
    rho = qla.as_density(rho_s)
    return qla.max_abs((step_map(rho, params) - rho) / params.dt - gksl_rhs(rho, params))


def joint_state(rho_s0: np.ndarray, params: ModelParams, n_collisions: int) -> np.ndarray:
    """Exact state of the system and ``n_collisions`` subenvironments, in that order.

    A pure initial system state with a vacuum bath yields a state vector; all
    other cases yield a density matrix.
    """
    if not 1 <= n_collisions <= MAX_JOINT_COLLISIONS:
        raise ValueError(f"n_collisions must be between 1 and {MAX_JOINT_COLLISIONS}")
    Q = build_Q(params)
    n_qubits = n_collisions + 1
    rho_s0 = np.asarray(rho_s0, dtype=complex)
    if rho_s0.ndim == 1 and params.is_vacuum:
        state = qla.kron(rho_s0, *[qla.GROUND] * n_collisions)
        for i in range(1, n_qubits):
            state = qla.embed(Q, [0, i], n_qubits) @ state
        return state
    state = qla.kron(qla.as_density(rho_s0), *[env_state(params)] * n_collisions)
    for i in range(1, n_qubits):
        Qi = qla.embed(Q, [0, i], n_qubits)
        state = Qi @ state @ qla.dagger(Qi)
    return state
