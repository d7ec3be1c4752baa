import numpy as np
import pytest

SQ2 = np.sqrt(2.0)
SQ3 = np.sqrt(3.0)

# single-qubit kets written out by hand, independent of the package
K0 = np.array([1, 0], dtype=complex)
K1 = np.array([0, 1], dtype=complex)
KP = np.array([1, 1], dtype=complex) / SQ2
KM = np.array([1, -1], dtype=complex) / SQ2


def kron(*vs):
    out = np.array([1], dtype=complex)
    for v in vs:
        out = np.kron(out, v)
    return out


# two-qubit (c, b) states appearing in the attack's output
PSI1 = SQ2 / SQ3 * kron(K0, K0) + 1 / SQ3 * kron(KP, K1)
PSI2 = SQ2 / SQ3 * kron(K1, K0) - 1 / SQ3 * kron(KM, K1)
PSI3 = SQ2 / SQ3 * kron(KP, K1) + 1 / SQ3 * kron(K0, K0)
PSI4 = SQ2 / SQ3 * kron(KM, K1) - 1 / SQ3 * kron(K1, K0)

# U(|prep>_c |+>_b |0>_s) for Z0, Z1, X+, X-
ATTACK_OUTPUTS = {
    0: SQ3 / 2 * kron(PSI1, K0) + 0.5 * kron(KM, K1, K1),
    1: SQ3 / 2 * kron(PSI2, K1) + 0.5 * kron(KP, K1, K0),
    2: SQ3 / 2 * kron(PSI3, K0) + 0.5 * kron(K1, K0, K1),
    3: SQ3 / 2 * kron(PSI4, K1) + 0.5 * kron(K0, K0, K0),
}

RHO_C = 0.5 * (np.outer(kron(KP, K1), kron(KP, K1).conj()) + np.outer(kron(K0, K0), kron(K0, K0).conj()))
RHO_IN = 0.5 * (np.outer(PSI1, PSI1.conj()) + np.outer(PSI3, PSI3.conj()))

HELSTROM_PIN = (2 - SQ2) / 4


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


def random_density(rng, dim, rank=None):
    rank = dim if rank is None else rank
    g = rng.normal(size=(dim, rank)) + 1j * rng.normal(size=(dim, rank))
    rho = g @ g.conj().T
    return rho / np.trace(rho).real


# one line per acceptance criterion, echoed at the end of the run
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
