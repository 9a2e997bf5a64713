"""Dense complex linear algebra for a handful of qubits.

States and operators are plain numpy arrays: a pure state is a 1-D vector,
a mixed state or an operator is a square 2-D matrix. Every qubit uses the
basis ordering ``{|1>, |0>}`` (excited first), so two-qubit matrices read in
the basis ``{|11>, |10>, |01>, |00>}`` and ``sigma_z = diag(+1, -1)``.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import reduce

import numpy as np

MAX_DIM = 16

IDENTITY = np.eye(2, dtype=complex)
SIGMA_X = np.array([[0, 1], [1, 0]], dtype=complex)
SIGMA_Y = np.array([[0, -1j], [1j, 0]], dtype=complex)
SIGMA_Z = np.array([[1, 0], [0, -1]], dtype=complex)
# sigma_plus |0> = |1>
SIGMA_PLUS = np.array([[0, 1], [0, 0]], dtype=complex)
SIGMA_MINUS = np.array([[0, 0], [1, 0]], dtype=complex)
PAULIS = (IDENTITY, SIGMA_X, SIGMA_Y, SIGMA_Z)

EXCITED = np.array([1, 0], dtype=complex)
GROUND = np.array([0, 1], dtype=complex)


def _is_power_of_two(n: int) -> bool:
    return n > 0 and n & (n - 1) == 0


def dagger(a: np.ndarray) -> np.ndarray:
    return a.conj().T


def max_abs(a) -> float:
    return float(np.max(np.abs(a)))


def is_hermitian(a: np.ndarray, atol: float = 1e-12) -> bool:
    a = np.asarray(a)
    return a.ndim == 2 and a.shape[0] == a.shape[1] and max_abs(a - dagger(a)) <= atol


def is_unitary(u: np.ndarray, atol: float = 1e-12) -> bool:
    u = np.asarray(u)
    return u.ndim == 2 and max_abs(dagger(u) @ u - np.eye(u.shape[0])) <= atol


def kron(*factors: np.ndarray) -> np.ndarray:
    """Kronecker product; the leftmost factor is the most significant subsystem."""
    if not factors:
        raise ValueError("kron needs at least one factor")
    ndim = {np.ndim(f) for f in factors}
    if len(ndim) != 1:
        raise ValueError("cannot mix state vectors and matrices in kron")
    for f in factors:
        if not _is_power_of_two(np.shape(f)[0]):
            raise ValueError(f"dimension {np.shape(f)[0]} is not a power of two")
    dim = int(np.prod([np.shape(f)[0] for f in factors]))
    if dim > MAX_DIM:
        raise ValueError(f"product dimension {dim} exceeds the supported maximum {MAX_DIM}")
    return reduce(np.kron, (np.asarray(f, dtype=complex) for f in factors))


def ket2dm(psi: np.ndarray) -> np.ndarray:
    psi = np.asarray(psi, dtype=complex)
    return np.outer(psi, psi.conj())


def as_density(state: np.ndarray) -> np.ndarray:
    state = np.asarray(state, dtype=complex)
    return ket2dm(state) if state.ndim == 1 else state


def partial_trace(state: np.ndarray, dims, keep) -> np.ndarray:
    """Reduced density matrix of the subsystems listed in ``keep``.

    ``state`` may be a state vector or a density matrix over the ordered
    subsystems ``dims``. The kept subsystems retain their original order.
    """
    dims = [int(d) for d in dims]
    keep = sorted({int(k) for k in ([keep] if np.isscalar(keep) else keep)})
    state = np.asarray(state, dtype=complex)
    total = int(np.prod(dims))
    if state.shape[0] != total:
        raise ValueError(f"dims {dims} do not match state dimension {state.shape[0]}")
    if any(k < 0 or k >= len(dims) for k in keep):
        raise ValueError(f"keep indices {keep} out of range for {len(dims)} subsystems")
    n = len(dims)
    d_keep = int(np.prod([dims[k] for k in keep]))
    letters = "abcdefghijklmnop"
    if state.ndim == 1:
        psi = state.reshape(dims)
        row = "".join(letters[i] for i in range(n))
        col = "".join(letters[i] if i not in keep else letters[i].upper() for i in range(n))
        out = "".join(letters[k] for k in keep) + "".join(letters[k].upper() for k in keep)
        rho = np.einsum(f"{row},{col}->{out}", psi, psi.conj())
    else:
        t = state.reshape(dims + dims)
        row = "".join(letters[i] for i in range(n))
        col = "".join(letters[i] if i not in keep else letters[i].upper() for i in range(n))
        out = "".join(letters[k] for k in keep) + "".join(letters[k].upper() for k in keep)
        rho = np.einsum(f"{row}{col}->{out}", t)
    return rho.reshape(d_keep, d_keep)


def expm_hermitian(h: np.ndarray, scale: float) -> np.ndarray:
    """Return ``exp(-i * scale * h)`` for Hermitian ``h`` via eigendecomposition."""
    h = np.asarray(h, dtype=complex)
    if not is_hermitian(h):
        raise ValueError("expm_hermitian requires a Hermitian matrix")
    w, v = np.linalg.eigh(0.5 * (h + dagger(h)))
    return (v * np.exp(-1j * scale * w)) @ dagger(v)


def embed(op: np.ndarray, targets, n_qubits: int) -> np.ndarray:
    """Lift an operator on the qubits ``targets`` (in op's factor order) to ``n_qubits``."""
    targets = list(targets)
    k = len(targets)
    if op.shape != (2**k, 2**k):
        raise ValueError("operator size does not match the number of targets")
    if 2**n_qubits > MAX_DIM:
        raise ValueError(f"{n_qubits} qubits exceed the supported dimension {MAX_DIM}")
    rest = [q for q in range(n_qubits) if q not in targets]
    full = np.kron(op, np.eye(2 ** len(rest))).reshape([2] * (2 * n_qubits))
    order = targets + rest
    # axis position p of `full` corresponds to qubit order[p]
    perm = [order.index(q) for q in range(n_qubits)]
    perm = perm + [p + n_qubits for p in perm]
    return full.transpose(perm).reshape(2**n_qubits, 2**n_qubits)


def bloch_vector(rho: np.ndarray) -> np.ndarray:
    rho = as_density(rho)
    return np.array([np.trace(rho @ s).real for s in (SIGMA_X, SIGMA_Y, SIGMA_Z)])


def density_from_bloch(r) -> np.ndarray:
    x, y, z = r
    return 0.5 * (IDENTITY + x * SIGMA_X + y * SIGMA_Y + z * SIGMA_Z)


def purity(rho: np.ndarray) -> float:
    rho = as_density(rho)
    return float(np.real(np.trace(rho @ rho)))


def random_pure_state(dim: int, rng: np.random.Generator) -> np.ndarray:
    psi = rng.normal(size=dim) + 1j * rng.normal(size=dim)
    return psi / np.linalg.norm(psi)


def random_density(dim: int, rng: np.random.Generator, rank: int | None = None) -> np.ndarray:
    rank = dim if rank is None else rank
    g = rng.normal(size=(dim, rank)) + 1j * rng.normal(size=(dim, rank))
    rho = g @ dagger(g)
    return rho / np.trace(rho)


def check_state(state: np.ndarray, atol: float = 1e-12) -> None:
    """Raise ``ValueError`` unless ``state`` is a normalized pure or mixed state."""
    state = np.asarray(state)
    if state.ndim == 1:
        if abs(np.linalg.norm(state) - 1) > atol:
            raise ValueError("pure state is not normalized")
        return
    if abs(np.trace(state) - 1) > atol:
        raise ValueError("density matrix does not have unit trace")
    if not is_hermitian(state, atol):
        raise ValueError("density matrix is not Hermitian")
    if np.linalg.eigvalsh(state).min() < -1e-10:
        raise ValueError("density matrix has a negative eigenvalue")


@dataclass(frozen=True)
class SchmidtDecomposition:
    coefficients: np.ndarray  # descending, real, >= 0
    left: np.ndarray  # columns are the left Schmidt vectors
    right: np.ndarray  # columns are the right Schmidt vectors

    @property
    def rank(self) -> int:
        return len(self.coefficients)

    def reconstruct(self) -> np.ndarray:
        return sum(
            c * np.kron(self.left[:, i], self.right[:, i])
            for i, c in enumerate(self.coefficients)
        )


def schmidt(psi: np.ndarray, d_left: int, d_right: int, tol: float = 1e-14) -> SchmidtDecomposition:
    """Schmidt decomposition of a bipartite pure state.

    Coefficients below ``tol`` are dropped. Phases are fixed so that the first
    nonzero amplitude of each left vector is real and positive.
    """
    psi = np.asarray(psi, dtype=complex)
    if psi.ndim != 1:
        raise ValueError("schmidt requires a pure state vector")
    if d_left * d_right != psi.shape[0]:
        raise ValueError("d_left * d_right must equal the state dimension")
    u, s, vh = np.linalg.svd(psi.reshape(d_left, d_right), full_matrices=False)
    keep = s > tol
    u, s, v = u[:, keep], s[keep], vh[keep].T
    for i in range(u.shape[1]):
        lead = u[np.argmax(np.abs(u[:, i]) > 1e-12), i]
        phase = lead / abs(lead)
        u[:, i] /= phase
        v[:, i] *= phase
    return SchmidtDecomposition(coefficients=s, left=u, right=v)
