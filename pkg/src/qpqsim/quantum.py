"""
Small-system quantum mechanics on dense numpy arrays.

States are complex vectors of length 2**m (m <= 3), density matrices and
unitaries are 2**m x 2**m complex arrays. Subsystem 0 is the most
significant tensor factor, so for the c, b, s registers of the two-step
measurement c is index 0 and s is index 2.
"""

from __future__ import annotations

import enum
import math

import numpy as np

MAX_QUBITS = 3
MAX_DIM = 2**MAX_QUBITS
ATOL = 1e-10

SQRT1_2 = 1 / math.sqrt(2)


class DimensionError(ValueError):
    """Raised for size mismatches or systems larger than three qubits."""


class NotHermitianError(ValueError):
    pass


class Basis(enum.IntEnum):
    """Measurement basis. The integer value doubles as the Yu key bit."""

    Z = 0
    X = 1

    @property
    def other(self) -> "Basis":
        return Basis(1 - self)


class PreparedSymbol(enum.IntEnum):
    """One of the four BB84 carrier states.

    The integer code is ``2 * basis + bit`` which lets numpy code carry
    symbols around as small ints.
    """

    Z0 = 0
    Z1 = 1
    XPLUS = 2
    XMINUS = 3

    @classmethod
    def from_parts(cls, basis: Basis | int, bit: int) -> "PreparedSymbol":
        return cls(2 * int(basis) + int(bit))

    def basis(self) -> Basis:
        return Basis(self >> 1)

    def bit(self) -> int:
        return int(self) & 1

    @property
    def label(self) -> str:
        return _LABELS[self]


_LABELS = {
    PreparedSymbol.Z0: "|0>",
    PreparedSymbol.Z1: "|1>",
    PreparedSymbol.XPLUS: "|+>",
    PreparedSymbol.XMINUS: "|->",
}

IDENTITY2 = np.eye(2, dtype=complex)
PAULI_X = np.array([[0, 1], [1, 0]], dtype=complex)
PAULI_Z = np.array([[1, 0], [0, -1]], dtype=complex)
HADAMARD = np.array([[1, 1], [1, -1]], dtype=complex) * SQRT1_2


def _num_qubits(dim: int) -> int:
    m = dim.bit_length() - 1
    if dim < 2 or 2**m != dim:
        raise DimensionError(f"dimension {dim} is not a power of two")
    if m > MAX_QUBITS:
        raise DimensionError(f"dimension {dim} exceeds {MAX_DIM}")
    return m


def ket(symbol: PreparedSymbol | int) -> np.ndarray:
    """Amplitude vector of a carrier state.

    >>> ket(PreparedSymbol.XMINUS).round(4)
    array([ 0.7071+0.j, -0.7071+0.j])
    """
    symbol = PreparedSymbol(symbol)
    if symbol.basis() is Basis.Z:
        vec = np.zeros(2, dtype=complex)
        vec[symbol.bit()] = 1.0
        return vec
    sign = -1.0 if symbol.bit() else 1.0
    return np.array([SQRT1_2, sign * SQRT1_2], dtype=complex)


def basis_kets(*symbols: PreparedSymbol | int) -> np.ndarray:
    """Product state of several carrier states, first symbol most significant."""
    return tensor(*(ket(s) for s in symbols))


def as_state(amplitudes) -> np.ndarray:
    """Validate and return a normalized pure state."""
    vec = np.asarray(amplitudes, dtype=complex)
    if vec.ndim != 1:
        raise DimensionError("a pure state must be a vector")
    _num_qubits(vec.size)
    norm = np.vdot(vec, vec).real
    if abs(norm - 1.0) > ATOL:
        raise ValueError(f"state is not normalized (squared norm {norm:.3g})")
    return vec


def as_density(entries) -> np.ndarray:
    """Validate a density matrix: Hermitian, unit trace, positive semidefinite."""
    rho = np.asarray(entries, dtype=complex)
    _check_hermitian(rho)
    tr = np.trace(rho)
    if abs(tr - 1.0) > ATOL:
        raise ValueError(f"trace {tr.real:.3g} != 1")
    if hermitian_spectrum(rho)[0].min() < -1e-9:
        raise ValueError("density matrix has a negative eigenvalue")
    return rho


def is_unitary(u: np.ndarray, atol: float = ATOL) -> bool:
    u = np.asarray(u)
    return bool(np.abs(u.conj().T @ u - np.eye(u.shape[0])).max() <= atol)


def tensor(*factors: np.ndarray) -> np.ndarray:
    """Kronecker product, leftmost factor most significant.

    Works for vectors and square matrices alike; mixing the two kinds is
    rejected.
    """
    if not factors:
        raise ValueError("tensor() needs at least one factor")
    ndims = {np.ndim(f) for f in factors}
    if len(ndims) != 1:
        raise DimensionError("cannot tensor a state with an operator")
    out = np.asarray(factors[0], dtype=complex)
    for f in factors[1:]:
        out = np.kron(out, np.asarray(f, dtype=complex))
    if out.shape[0] > MAX_DIM:
        raise DimensionError(f"combined dimension {out.shape[0]} exceeds {MAX_DIM}")
    return out


def apply(u: np.ndarray, state: np.ndarray) -> np.ndarray:
    if u.shape != (state.size, state.size):
        raise DimensionError(f"operator {u.shape} does not act on dimension {state.size}")
    out = u @ state
    return out / np.linalg.norm(out)


def outer(state: np.ndarray) -> np.ndarray:
    return np.outer(state, state.conj())


def _embed(op: np.ndarray, which: int, m: int) -> np.ndarray:
    """Lift a single-qubit operator onto subsystem ``which`` of an m-qubit register."""
    if not 0 <= which < m:
        raise IndexError(f"subsystem {which} out of range for {m} qubits")
    out = np.ones((1, 1), dtype=complex)
    for q in range(m):
        out = np.kron(out, op if q == which else IDENTITY2)
    return out


def projector(which: int, basis: Basis, outcome: int, m: int) -> np.ndarray:
    eig = ket(PreparedSymbol.from_parts(basis, outcome))
    return _embed(outer(eig), which, m)


def outcome_probabilities(state: np.ndarray, which: int, basis: Basis) -> np.ndarray:
    """Born probabilities ``[p(0), p(1)]`` for measuring one subsystem.

    Outcome 0 is |0> in Z and |+> in X.
    """
    m = _num_qubits(state.size)
    probs = np.empty(2)
    for outcome in (0, 1):
        proj = projector(which, basis, outcome, m) @ state
        probs[outcome] = np.vdot(proj, proj).real
    return probs


def collapse(state: np.ndarray, which: int, basis: Basis, outcome: int) -> np.ndarray:
    """Post-measurement state for a given outcome (renormalized)."""
    m = _num_qubits(state.size)
    out = projector(which, basis, outcome, m) @ state
    norm = np.linalg.norm(out)
    if norm < 1e-12:
        raise ValueError(f"outcome {outcome} has zero probability")
    return out / norm


def measure_subsystem(
    state: np.ndarray, which: int, basis: Basis, rng: np.random.Generator
) -> tuple[int, np.ndarray]:
    """Projectively measure subsystem ``which``; returns ``(outcome, collapsed)``."""
    probs = outcome_probabilities(state, which, basis)
    outcome = int(rng.random() < probs[1] / probs.sum())
    return outcome, collapse(state, which, basis, outcome)


def born_table() -> np.ndarray:
    """``table[symbol, basis]`` = probability of outcome 1 when measuring a carrier."""
    table = np.empty((4, 2))
    for sym in PreparedSymbol:
        for basis in Basis:
            table[sym, basis] = outcome_probabilities(ket(sym), 0, basis)[1]
    return table


_BORN = born_table()


def measure_symbols(symbols, bases, rng: np.random.Generator) -> np.ndarray:
    """Vectorised single-qubit measurement of carrier states.

    ``symbols`` and ``bases`` are integer arrays; the returned outcome bits
    follow the Born table computed from :func:`ket`.
    """
    symbols = np.asarray(symbols, dtype=np.int64)
    bases = np.asarray(bases, dtype=np.int64)
    p1 = _BORN[symbols, bases]
    return (rng.random(p1.shape) < p1).astype(np.int8)


def mixture(weights, states) -> np.ndarray:
    """Density matrix of a probabilistic ensemble of pure states."""
    weights = np.asarray(weights, dtype=float)
    if len(weights) != len(states):
        raise ValueError("need one weight per state")
    if (weights < 0).any() or abs(weights.sum() - 1.0) > ATOL:
        raise ValueError(f"weights must be a probability vector, got {weights}")
    dim = np.asarray(states[0]).size
    rho = np.zeros((dim, dim), dtype=complex)
    for w, s in zip(weights, states):
        s = np.asarray(s, dtype=complex)
        if s.size != dim:
            raise DimensionError("states in a mixture must share a dimension")
        rho += w * outer(s)
    return rho


def _check_hermitian(a: np.ndarray, atol: float = ATOL) -> None:
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise DimensionError(f"expected a square matrix, got shape {a.shape}")
    if np.abs(a - a.conj().T).max() > atol:
        raise NotHermitianError("matrix is not Hermitian")


def hermitian_spectrum(a, tol: float = 1e-12, max_sweeps: int = 100):
    """Eigen-decomposition of a Hermitian matrix by cyclic Jacobi rotations.

    Each rotation diagonalises one 2x2 block exactly: the complex
    off-diagonal element is first made real by a phase on column q, then a
    real Givens rotation removes it. Sweeps stop once the off-diagonal
    Frobenius mass drops below ``tol``.

    Returns
    -------
    eigenvalues : ndarray
        Real eigenvalues in descending order.
    eigenvectors : ndarray
        Unitary matrix whose columns are the matching eigenvectors.
    """
    a = np.array(a, dtype=complex)
    _check_hermitian(a)
    n = a.shape[0]
    v = np.eye(n, dtype=complex)
    offdiag = ~np.eye(n, dtype=bool)
    for _ in range(max_sweeps):
        if math.sqrt(np.sum(np.abs(a[offdiag]) ** 2)) < tol:
            break
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = a[p, q]
                mag = abs(apq)
                if mag < 1e-300:
                    continue
                phase = apq / mag
                theta = 0.5 * math.atan2(2 * mag, (a[q, q] - a[p, p]).real)
                c, s = math.cos(theta), math.sin(theta)
                g = np.eye(n, dtype=complex)
                g[p, p] = c
                g[p, q] = s * phase
                g[q, p] = -s * phase.conjugate()
                g[q, q] = c
                a = g.conj().T @ a @ g
                v = v @ g
    evals = np.diag(a).real.copy()
    order = np.argsort(-evals, kind="stable")
    return evals[order], v[:, order]


def trace_norm(a) -> float:
    evals, _ = hermitian_spectrum(a)
    return float(np.abs(evals).sum())


def support_projector(rho, tol: float = 1e-9) -> np.ndarray:
    """Orthogonal projector onto the eigenvectors of ``rho`` with eigenvalue > tol."""
    evals, vecs = hermitian_spectrum(rho)
    keep = vecs[:, evals > tol]
    return keep @ keep.conj().T
