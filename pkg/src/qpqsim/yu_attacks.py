"""
Attacks on the honesty-checked QPQ protocol.

Dishonest database: the random-basis measurement is split into two commuting
partial measurements. A unitary copies the carrier's basis-dependent
outcome into an ancilla ``s`` controlled by a basis register ``b`` (prepared
in |+>). Measuring ``s`` alone fixes the Stage-1 announcement; ``b`` is only
measured when Alice asks for a check, and the residual (c, b) state of every
unchecked round is fed to a Helstrom measurement that guesses whether
Alice's raw bit is conclusive.

Dishonest user: check only positions whose raw bit is inconclusive, so the
conclusive fraction of what remains rises to ``0.25 / (1 - f)``.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .discrimination import BinaryMeasurement, WeightedStatePair, helstrom_measurement
from .quantum import (
    IDENTITY2,
    PAULI_X,
    Basis,
    PreparedSymbol,
    apply,
    basis_kets,
    collapse,
    ket,
    measure_subsystem,
    mixture,
    outcome_probabilities,
    outer,
    tensor,
)
from .yu_protocol import ProtocolTranscript, check_count

log = logging.getLogger(__name__)

# register layout of the attack: carrier c, basis register b, outcome register s
C, B, S = 0, 1, 2


def two_step_unitary() -> np.ndarray:
    """Controlled copy: Z basis if b=0, X basis if b=1, outcome XOR-ed into s."""
    terms = []
    for sym in PreparedSymbol:
        flip = PAULI_X if sym.bit() else IDENTITY2
        basis_proj = outer(ket(PreparedSymbol.from_parts(Basis.Z, int(sym.basis()))))
        terms.append(tensor(outer(ket(sym)), basis_proj, flip))
    return sum(terms)


_U = two_step_unitary()


def attack_input(prepared: PreparedSymbol) -> np.ndarray:
    return basis_kets(prepared, PreparedSymbol.XPLUS, PreparedSymbol.Z0)


@lru_cache(maxsize=None)
def _entangled(prepared: int) -> np.ndarray:
    state = apply(_U, attack_input(PreparedSymbol(prepared)))
    state.setflags(write=False)
    return state


def entangled_state(prepared: PreparedSymbol) -> np.ndarray:
    """``U (|prepared>_c |+>_b |0>_s)``."""
    return _entangled(int(prepared))


def cb_part(state: np.ndarray, s_outcome: int) -> np.ndarray:
    """Residual (c, b) vector once ``s`` has collapsed to ``s_outcome``."""
    vec = state.reshape(4, 2)[:, s_outcome]
    return vec / np.linalg.norm(vec)


@dataclass
class TwoStepRoundState:
    """What the dishonest database keeps for one round."""

    residual: np.ndarray
    s_outcome: int | None = None
    b_outcome: int | None = None


class ReplyAlreadyGiven(RuntimeError):
    pass


def two_step_announce(prepared: PreparedSymbol, rng: np.random.Generator) -> tuple[int, TwoStepRoundState]:
    """Stage-1 behaviour: measure only ``s`` and announce it."""
    outcome, collapsed = measure_subsystem(entangled_state(prepared), S, Basis.Z, rng)
    return outcome, TwoStepRoundState(residual=cb_part(collapsed, outcome), s_outcome=outcome)


def two_step_check_reply(state: TwoStepRoundState, rng: np.random.Generator) -> PreparedSymbol:
    """Stage-2 behaviour: measure ``b`` and reply with the state the pair (b, s) names."""
    if state.s_outcome is None:
        raise ValueError("s has not been measured yet")
    if state.b_outcome is not None:
        raise ReplyAlreadyGiven("this round was already used for a check")
    b, collapsed = measure_subsystem(state.residual, 1, Basis.Z, rng)
    state.b_outcome = b
    state.residual = collapsed
    return PreparedSymbol.from_parts(b, state.s_outcome)


@lru_cache(maxsize=None)
def _pair(s_outcome: int) -> WeightedStatePair:
    # condition every preparation on the observed s; Alice is conclusive iff s != her bit
    conclusive, inconclusive = [], []
    for sym in PreparedSymbol:
        state = entangled_state(sym)
        prob = 0.25 * outcome_probabilities(state, S, Basis.Z)[s_outcome]
        if prob < 1e-15:
            continue
        bucket = conclusive if s_outcome != sym.bit() else inconclusive
        bucket.append((prob, cb_part(state, s_outcome)))
    p_c = sum(p for p, _ in conclusive)
    p_in = sum(p for p, _ in inconclusive)
    rho_c = mixture([p / p_c for p, _ in conclusive], [v for _, v in conclusive])
    rho_in = mixture([p / p_in for p, _ in inconclusive], [v for _, v in inconclusive])
    total = p_c + p_in
    return WeightedStatePair(p_c / total, rho_c, p_in / total, rho_in)


def discrimination_pair(s_outcome: int) -> WeightedStatePair:
    """``{p, rho_conclusive; 1 - p, rho_inconclusive}`` for an observed ``s``.

    For ``s = 0`` this is the ``{1/4, rho_c; 3/4, rho_in}`` pair; the ``s = 1``
    pair is derived the same way rather than assumed symmetric.
    """
    return _pair(int(s_outcome))


@lru_cache(maxsize=None)
def guess_measurement(s_outcome: int) -> BinaryMeasurement:
    """Helstrom measurement whose first effect means "inconclusive".

    Inconclusive is listed first so zero-eigenvalue directions, which the
    Helstrom construction assigns to the first effect, break toward the
    likelier hypothesis.
    """
    return helstrom_measurement(discrimination_pair(s_outcome).swapped())


def two_step_guess_conclusive(state: TwoStepRoundState, rng: np.random.Generator) -> bool:
    """Guess whether Alice's raw bit in this round is conclusive."""
    if state.s_outcome is None:
        raise ValueError("s has not been measured yet")
    if state.b_outcome is not None:
        raise ValueError("round was used for checking")
    p_inconclusive = guess_measurement(state.s_outcome).probability_first(state.residual)
    return bool(rng.random() >= p_inconclusive)


@dataclass(frozen=True)
class BranchTable:
    """Exact per-preparation branch probabilities of the two-step attack.

    Indexed ``[prepared]`` or ``[prepared, s]``; used by the vectorised
    simulator so each round costs a few random draws.
    """

    p_s1: np.ndarray
    p_b1: np.ndarray
    p_guess_conclusive: np.ndarray
    residuals: np.ndarray


@lru_cache(maxsize=None)
def branch_table() -> BranchTable:
    p_s1 = np.zeros(4)
    p_b1 = np.zeros((4, 2))
    p_guess = np.zeros((4, 2))
    residuals = np.zeros((4, 2, 4), dtype=complex)
    for sym in PreparedSymbol:
        state = entangled_state(sym)
        probs = outcome_probabilities(state, S, Basis.Z)
        p_s1[sym] = probs[1]
        for s in (0, 1):
            if probs[s] < 1e-15:
                continue
            res = cb_part(collapse(state, S, Basis.Z, s), s)
            residuals[sym, s] = res
            p_b1[sym, s] = outcome_probabilities(res, 1, Basis.Z)[1]
            p_guess[sym, s] = 1.0 - guess_measurement(s).probability_first(res)
    return BranchTable(p_s1, p_b1, p_guess, residuals)


def simulate_announcements(prepared, rng: np.random.Generator) -> np.ndarray:
    """Vectorised :func:`two_step_announce` (announcement bits only)."""
    table = branch_table()
    prepared = np.asarray(prepared, dtype=np.int64)
    return (rng.random(prepared.shape) < table.p_s1[prepared]).astype(np.int8)


def simulate_replies(prepared, s_outcomes, rng: np.random.Generator) -> np.ndarray:
    """Vectorised :func:`two_step_check_reply`; returns symbol codes."""
    table = branch_table()
    prepared = np.asarray(prepared, dtype=np.int64)
    s_outcomes = np.asarray(s_outcomes, dtype=np.int64)
    b = rng.random(prepared.shape) < table.p_b1[prepared, s_outcomes]
    return (2 * b + s_outcomes).astype(np.int8)


def simulate_guesses(prepared, s_outcomes, rng: np.random.Generator) -> np.ndarray:
    """Vectorised :func:`two_step_guess_conclusive`."""
    table = branch_table()
    prepared = np.asarray(prepared, dtype=np.int64)
    s_outcomes = np.asarray(s_outcomes, dtype=np.int64)
    return rng.random(prepared.shape) < table.p_guess_conclusive[prepared, s_outcomes]


def two_step_replies(transcript: ProtocolTranscript, positions, rng: np.random.Generator) -> dict[int, PreparedSymbol]:
    """Check replies of the two-step database for a Stage-1 transcript."""
    positions = np.asarray(positions, dtype=np.int64)
    codes = simulate_replies(transcript.prepared[positions], transcript.announcements[positions], rng)
    return {int(i): PreparedSymbol(int(c)) for i, c in zip(positions, codes)}


def honest_joint_distribution(prepared: PreparedSymbol) -> np.ndarray:
    """``P[announcement, reply]`` for an honest database with a uniform basis."""
    dist = np.zeros((2, 4))
    for basis in Basis:
        probs = outcome_probabilities(ket(prepared), 0, basis)
        for outcome in (0, 1):
            dist[outcome, PreparedSymbol.from_parts(basis, outcome)] += 0.5 * probs[outcome]
    return dist


def two_step_joint_distribution(prepared: PreparedSymbol, order: str = "s-first") -> np.ndarray:
    """``P[announcement, reply]`` under the two-step attack.

    ``order`` chooses whether the outcome register ``s`` or the basis
    register ``b`` is measured first; both must give the same table.
    """
    first, second = {"s-first": (S, B), "b-first": (B, S)}[order]
    state = entangled_state(prepared)
    dist = np.zeros((2, 4))
    p_first = outcome_probabilities(state, first, Basis.Z)
    for x in (0, 1):
        if p_first[x] < 1e-15:
            continue
        after = collapse(state, first, Basis.Z, x)
        p_second = outcome_probabilities(after, second, Basis.Z)
        for y in (0, 1):
            s, b = (x, y) if first == S else (y, x)
            dist[s, PreparedSymbol.from_parts(b, s)] += p_first[x] * p_second[y]
    return dist


def cheating_select_checks(transcript: ProtocolTranscript, fraction: float, rng: np.random.Generator | None = None) -> np.ndarray:
    """Checking positions drawn only from Alice's inconclusive bits.

    If there are fewer inconclusive positions than round(f * raw_length),
    all of them are returned and the shortfall is logged.
    """
    eligible = np.flatnonzero(~transcript.conclusive)
    wanted = check_count(fraction, len(transcript))
    if wanted > len(eligible):
        log.info(
            "only %d inconclusive positions for %d checks; achieved fraction %.4f",
            len(eligible),
            wanted,
            achieved_check_fraction(len(eligible), len(transcript)),
        )
        return eligible
    if rng is None:
        return eligible[:wanted]
    return np.sort(rng.choice(eligible, size=wanted, replace=False))


def achieved_check_fraction(num_checks: int, raw_length: int) -> float:
    return num_checks / raw_length if raw_length else 0.0
