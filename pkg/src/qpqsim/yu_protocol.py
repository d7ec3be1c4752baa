"""
Honest parties for the cheat-sensitive QPQ protocol with database honesty
checking (Yu et al.).

Stage 1 builds an oblivious key: Alice sends BB84 carriers, the database
measures each in Z (key bit 0) or X (key bit 1) and announces 0 for |0>/|+>
and 1 for |1>/|->. Stage 2 lets Alice audit the database on positions where
her bit is conclusive. Stages 3-4 fold the key and run the shifted
retrieval.

A transcript is stored column-wise in numpy arrays; ``records`` gives the
per-position view.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Callable, Mapping

import numpy as np

from . import postprocess
from .postprocess import INCONCLUSIVE, FinalKey, RawKeyRecord, RestartLimitExceeded
from .quantum import Basis, PreparedSymbol, ket, measure_subsystem, measure_symbols


class Verdict(str, enum.Enum):
    PENDING = "pending"
    PASS = "pass"
    FAIL = "fail"
    ABORTED = "aborted"


@dataclass(frozen=True)
class YuParams:
    database_size: int = 1000
    substring_count: int = 4
    check_fraction: float = 0.0
    raw_length: int | None = None
    max_restarts: int = 50

    def __post_init__(self):
        if self.database_size < 1 or self.substring_count < 1:
            raise ValueError("database_size and substring_count must be positive")
        if not 0 <= self.check_fraction < 1:
            raise ValueError(f"check_fraction must lie in [0, 1), got {self.check_fraction}")
        if self.max_restarts < 0:
            raise ValueError("max_restarts must be >= 0")
        if self.raw_length is not None:
            if self.raw_length < 0:
                raise ValueError("raw_length must be >= 0")

    @property
    def key_bits_needed(self) -> int:
        return self.substring_count * self.database_size

    def resolved_raw_length(self) -> int:
        """Raw length before checking.

        Defaults to the smallest length that still leaves k*N bits once the
        check positions are dropped.
        """
        if self.raw_length is not None:
            return self.raw_length
        # L - round(f L) <= L (1 - f) + 1/2, so no shorter length can work
        length = max(self.key_bits_needed, math.floor((self.key_bits_needed - 0.5) / (1 - self.check_fraction)))
        while length - check_count(self.check_fraction, length) < self.key_bits_needed:
            length += 1
        return length


def check_count(fraction: float, raw_length: int) -> int:
    """Number of checking positions, ``round(f * raw_length)`` with halves rounded up."""
    return int(math.floor(fraction * raw_length + 0.5))


@dataclass
class ProtocolTranscript:
    prepared: np.ndarray
    bob_bits: np.ndarray
    announcements: np.ndarray
    alice_values: np.ndarray
    checking_positions: np.ndarray = field(default_factory=lambda: np.empty(0, dtype=np.int64))
    check_replies: dict[int, PreparedSymbol] = field(default_factory=dict)
    verdict: Verdict = Verdict.PENDING

    def __len__(self) -> int:
        return len(self.prepared)

    @property
    def conclusive(self) -> np.ndarray:
        return self.alice_values != INCONCLUSIVE

    @property
    def records(self) -> list[RawKeyRecord]:
        return [
            RawKeyRecord(
                position=i,
                bob_bit=int(self.bob_bits[i]),
                alice_value=None if self.alice_values[i] == INCONCLUSIVE else int(self.alice_values[i]),
                announcement=int(self.announcements[i]),
                alice_prepared=PreparedSymbol(int(self.prepared[i])),
            )
            for i in range(len(self))
        ]

    def remaining_positions(self) -> np.ndarray:
        keep = np.ones(len(self), dtype=bool)
        keep[self.checking_positions] = False
        return np.flatnonzero(keep)


def alice_infer(prepared: PreparedSymbol, announcement: int) -> int | None:
    """Alice's deduction from her prepared state and the announcement.

    An announcement different from her own bit is impossible in her own
    basis, so the database must have used the other basis.
    """
    prepared = PreparedSymbol(prepared)
    if announcement == prepared.bit():
        return None
    return int(prepared.basis().other)


def infer_knowledge(prepared, announcements) -> np.ndarray:
    """Vectorised :func:`alice_infer`; inconclusive positions get -1."""
    prepared = np.asarray(prepared, dtype=np.int8)
    announcements = np.asarray(announcements, dtype=np.int8)
    own_bit = prepared & 1
    other_basis = 1 - (prepared >> 1)
    return np.where(announcements != own_bit, other_basis, INCONCLUSIVE).astype(np.int8)


def stage1_round(bob_bit: int, prepared: PreparedSymbol, rng: np.random.Generator) -> tuple[int, int | None]:
    """One oblivious-key round; returns ``(announcement, alice_value)``."""
    outcome, _ = measure_subsystem(ket(prepared), 0, Basis(bob_bit), rng)
    return outcome, alice_infer(prepared, outcome)


def random_symbols(count: int, rng: np.random.Generator) -> np.ndarray:
    return rng.integers(0, 4, count, dtype=np.int8)


def run_stage1(params: YuParams, bob_bits, rng: np.random.Generator, prepared=None) -> ProtocolTranscript:
    """Iterate the Stage-1 round over the whole raw key.

    ``prepared`` defaults to uniformly random carriers.
    """
    bob_bits = np.asarray(bob_bits, dtype=np.int8)
    if len(bob_bits) != params.resolved_raw_length():
        raise ValueError(f"expected {params.resolved_raw_length()} key bits, got {len(bob_bits)}")
    if prepared is None:
        prepared = random_symbols(len(bob_bits), rng)
    prepared = np.asarray(prepared, dtype=np.int8)
    announcements = measure_symbols(prepared, bob_bits, rng)
    return ProtocolTranscript(
        prepared=prepared,
        bob_bits=bob_bits,
        announcements=announcements,
        alice_values=infer_knowledge(prepared, announcements),
    )


def honest_select_checks(transcript: ProtocolTranscript, fraction: float, rng: np.random.Generator) -> np.ndarray:
    """Uniform subset of Alice's conclusive positions of size round(f * raw_length)."""
    eligible = np.flatnonzero(transcript.conclusive)
    size = min(check_count(fraction, len(transcript)), len(eligible))
    return np.sort(rng.choice(eligible, size=size, replace=False))


def expected_reply(prepared: PreparedSymbol, announcement: int) -> PreparedSymbol:
    """The outcome state Alice deduces at a conclusive position."""
    return PreparedSymbol.from_parts(PreparedSymbol(prepared).basis().other, announcement)


def honest_check_replies(transcript: ProtocolTranscript, positions) -> dict[int, PreparedSymbol]:
    """The honest database reveals its actual outcome states."""
    return {
        int(i): PreparedSymbol.from_parts(int(transcript.bob_bits[i]), int(transcript.announcements[i]))
        for i in positions
    }


def verify_check_replies(transcript: ProtocolTranscript, replies: Mapping[int, PreparedSymbol]) -> Verdict:
    """Alice's Stage-2 audit.

    A missing or unsolicited reply fails. Replies at inconclusive positions
    are accepted since Alice cannot verify them.
    """
    positions = {int(i) for i in transcript.checking_positions}
    if set(replies) != positions:
        return Verdict.FAIL
    for i in positions:
        if transcript.alice_values[i] == INCONCLUSIVE:
            continue
        want = expected_reply(PreparedSymbol(int(transcript.prepared[i])), int(transcript.announcements[i]))
        if PreparedSymbol(replies[i]) is not want:
            return Verdict.FAIL
    return Verdict.PASS


CheckSelector = Callable[[ProtocolTranscript, float, np.random.Generator], np.ndarray]
ReplyOracle = Callable[[ProtocolTranscript, np.ndarray], Mapping[int, PreparedSymbol]]


@dataclass(frozen=True)
class AttemptSummary:
    """Statistics of one Stage 1-3 pass, kept so restarts do not bias them."""

    conclusive_fraction: float
    checks: int
    post_drop_conclusive_fraction: float
    known_count: int


@dataclass
class YuOutcome:
    """Result of one full protocol run, including restarts."""

    transcript: ProtocolTranscript
    restarts: int
    verdict: Verdict
    attempts: list[AttemptSummary] = field(default_factory=list)
    final_key: FinalKey | None = None
    post_drop_conclusive_fraction: float = float("nan")
    known_index: int | None = None
    desired_index: int | None = None
    retrieved_bit: int | None = None
    recovered: dict[int, int] = field(default_factory=dict)


def finalize_key(params: YuParams, transcript: ProtocolTranscript) -> tuple[FinalKey, float]:
    """Stage 3: drop the checking positions and fold the first k*N remaining bits.

    Also returns the conclusive fraction among all remaining positions.
    """
    keep = transcript.remaining_positions()
    if len(keep) < params.key_bits_needed:
        raise postprocess.InsufficientKeyError(
            f"{len(keep)} raw bits left after checking, need {params.key_bits_needed}"
        )
    fraction = float(transcript.conclusive[keep].mean()) if len(keep) else float("nan")
    final = postprocess.fold_bits(
        transcript.bob_bits[keep], transcript.alice_values[keep], params.substring_count, params.database_size
    )
    return final, fraction


def run_protocol(
    params: YuParams,
    database,
    rng: np.random.Generator,
    select_checks: CheckSelector = honest_select_checks,
    reply: ReplyOracle = honest_check_replies,
    desired_index: int | None = None,
) -> YuOutcome:
    """Run Stages 1-4, restarting when Alice ends up knowing no final-key bit.

    ``select_checks`` and ``reply`` are the hooks a dishonest party replaces.
    Raises :class:`RestartLimitExceeded` after ``max_restarts`` restarts.
    """
    database = np.asarray(database, dtype=np.int8)
    size = params.database_size
    if len(database) != size:
        raise ValueError(f"database has {len(database)} items, params say {size}")
    raw_length = params.resolved_raw_length()
    if desired_index is None:
        desired_index = int(rng.integers(size))
    attempts = []
    for attempt in range(params.max_restarts + 1):
        transcript = run_stage1(params, rng.integers(0, 2, raw_length, dtype=np.int8), rng)
        transcript.checking_positions = np.asarray(
            select_checks(transcript, params.check_fraction, rng), dtype=np.int64
        )
        transcript.check_replies = dict(reply(transcript, transcript.checking_positions))
        transcript.verdict = verify_check_replies(transcript, transcript.check_replies)
        if transcript.verdict is Verdict.FAIL:
            return YuOutcome(transcript, attempt, Verdict.ABORTED, attempts)

        final, post_drop = finalize_key(params, transcript)
        attempts.append(
            AttemptSummary(
                conclusive_fraction=float(transcript.conclusive.mean()) if len(transcript) else float("nan"),
                checks=len(transcript.checking_positions),
                post_drop_conclusive_fraction=post_drop,
                known_count=final.known_count,
            )
        )
        if final.known_count == 0:
            continue

        j = int(rng.choice(sorted(final.alice_known)))
        shift = postprocess.announce_shift(j, desired_index, "yu")
        ciphertext = postprocess.encrypt_database(database, final, shift, "yu")
        return YuOutcome(
            transcript=transcript,
            restarts=attempt,
            verdict=Verdict.PASS,
            attempts=attempts,
            final_key=final,
            post_drop_conclusive_fraction=post_drop,
            known_index=j,
            desired_index=desired_index,
            retrieved_bit=postprocess.retrieve(ciphertext, j, final.alice_known[j], desired_index),
            recovered=postprocess.recoverable_items(ciphertext, final, shift, "yu"),
        )
    raise RestartLimitExceeded(f"no known final-key bit after {params.max_restarts} restarts")
