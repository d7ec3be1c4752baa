"""
Honest parties for the two-way QPQ protocol with qubit reordering (Chang et al.).

Bob sends random BB84 carriers; Alice measures each in Z with probability
eta, shuffles every group of n carriers and returns them together with the
announced (basis, outcome) of each slot. Bob audits the returned carriers
(step 3), then asks where his X-basis originals went (step 4). The
Z-prepared originals form the raw key: Alice knows a bit iff she measured
it in Z.

Returned carriers are tracked symbolically: after an honest measurement a
carrier is exactly the announced eigenstate.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
from scipy import stats

from . import postprocess
from .postprocess import INCONCLUSIVE, FinalKey, RawKeyRecord, RestartLimitExceeded
from .quantum import Basis, PreparedSymbol, measure_symbols


@dataclass(frozen=True)
class ChangParams:
    eta: float = 0.5
    group_size: int = 6
    group_count: int | None = None
    database_size: int = 1000
    substring_count: int = 4
    significance: float = 0.01
    one_sided_step3: bool = False
    max_restarts: int = 50

    def __post_init__(self):
        if not 0 <= self.eta <= 1:
            raise ValueError(f"eta must lie in [0, 1], got {self.eta}")
        if self.group_size < 4:
            raise ValueError(f"group size must be >= 4, got {self.group_size}")
        if not 0 < self.significance < 1:
            raise ValueError("significance must lie in (0, 1)")
        if self.database_size < 1 or self.substring_count < 1:
            raise ValueError("database_size and substring_count must be positive")
        if self.group_count is not None and self.group_count < 0:
            raise ValueError("group_count must be >= 0")

    @property
    def key_bits_needed(self) -> int:
        return self.substring_count * self.database_size

    def resolved_group_count(self) -> int:
        """Groups needed so the Z-prepared half covers k*N bits with ~5 sigma margin."""
        if self.group_count is not None:
            return self.group_count
        need = self.key_bits_needed
        return math.ceil(2 * (need + 5 * math.sqrt(need)) / self.group_size)


@dataclass
class GroupTranscript:
    """One group of n carriers.

    ``permutation[i]`` is the slot original ``i`` was moved to; the
    ``announced_*`` and ``returned`` arrays are in slot order. Alice's
    private fields are ``None`` when the group was faked.
    """

    sent: np.ndarray
    alice_bases: np.ndarray | None
    alice_outcomes: np.ndarray | None
    permutation: np.ndarray | None
    announced_bases: np.ndarray
    announced_outcomes: np.ndarray
    returned: np.ndarray

    def __len__(self) -> int:
        return len(self.sent)

    @property
    def order(self) -> np.ndarray:
        """``order[slot]`` = original position shown in that slot."""
        return np.argsort(self.permutation)

    @property
    def announced(self) -> list[tuple[Basis, PreparedSymbol]]:
        return [
            (Basis(int(b)), PreparedSymbol(int(o)))
            for b, o in zip(self.announced_bases, self.announced_outcomes)
        ]

    def x_originals(self) -> np.ndarray:
        return np.flatnonzero(self.sent >> 1)


@dataclass(frozen=True)
class CheckVerdict:
    """Outcome of one of Bob's audits.

    ``structural`` covers the deterministic sub-checks, ``statistical`` the
    binomial test on basis frequencies.
    """

    structural: bool
    statistical: bool
    p_value: float = 1.0
    mismatches: int = 0

    @property
    def passed(self) -> bool:
        return self.structural and self.statistical


def chang_prepare(params: ChangParams, rng: np.random.Generator) -> np.ndarray:
    """Bob's i.i.d. uniform carriers for all groups."""
    return rng.integers(0, 4, params.resolved_group_count() * params.group_size, dtype=np.int8)


def alice_measure_group(sent, eta: float, rng: np.random.Generator) -> GroupTranscript:
    sent = np.asarray(sent, dtype=np.int8)
    n = len(sent)
    bases = (rng.random(n) >= eta).astype(np.int8)
    bits = measure_symbols(sent, bases, rng)
    outcomes = (2 * bases + bits).astype(np.int8)
    permutation = rng.permutation(n)
    order = np.argsort(permutation)
    return GroupTranscript(
        sent=sent,
        alice_bases=bases,
        alice_outcomes=outcomes,
        permutation=permutation,
        announced_bases=bases[order],
        announced_outcomes=outcomes[order],
        returned=outcomes[order],
    )


@lru_cache(maxsize=4096)
def _binomial_pvalue(successes: int, trials: int, p: float, alternative: str) -> float:
    if trials == 0:
        return 1.0
    return float(stats.binomtest(successes, trials, p, alternative=alternative).pvalue)


def bob_step3_check(
    groups: list[GroupTranscript],
    eta: float,
    significance: float,
    rng: np.random.Generator,
    one_sided: bool = False,
) -> CheckVerdict:
    """Re-measure every returned carrier in its announced basis, then test the Z fraction.

    The one-sided variant only rejects an inflated Z fraction.
    """
    if not groups:
        return CheckVerdict(True, True)
    returned = np.concatenate([g.returned for g in groups])
    bases = np.concatenate([g.announced_bases for g in groups])
    announced_bits = np.concatenate([g.announced_outcomes for g in groups]) & 1
    mismatches = int((measure_symbols(returned, bases, rng) != announced_bits).sum())
    z_count = int((bases == Basis.Z).sum())
    p_value = _binomial_pvalue(z_count, len(bases), eta, "greater" if one_sided else "two-sided")
    return CheckVerdict(mismatches == 0, p_value >= significance, p_value, mismatches)


def honest_disclosure(group: GroupTranscript) -> np.ndarray:
    """Slots of the X-prepared originals, in original order."""
    return group.permutation[group.x_originals()]


def _disclosure_consistent(group: GroupTranscript, disclosed) -> tuple[bool, int]:
    x_orig = group.x_originals()
    disclosed = np.asarray(disclosed, dtype=np.int64)
    if disclosed.shape != x_orig.shape:
        return False, 0
    if len(set(disclosed.tolist())) != len(disclosed):
        return False, 0
    if ((disclosed < 0) | (disclosed >= len(group))).any():
        return False, 0
    bad = 0
    for orig, slot in zip(x_orig, disclosed):
        if group.announced_bases[slot] == Basis.X and group.announced_outcomes[slot] != group.sent[orig]:
            bad += 1
    return bad == 0, bad


def bob_step4_check(group: GroupTranscript, disclosed, eta: float, significance: float) -> CheckVerdict:
    """Audit Alice's disclosure of where the X-prepared originals went.

    A disclosed slot announced in X must carry the original X state; one
    announced in Z is always acceptable. The X-announced share of the
    disclosed slots is tested against ``1 - eta``.
    """
    ok, bad = _disclosure_consistent(group, disclosed)
    if not ok and bad == 0:
        return CheckVerdict(False, True, 1.0, 0)
    disclosed = np.asarray(disclosed, dtype=np.int64)
    x_announced = int((group.announced_bases[disclosed] == Basis.X).sum())
    p_value = _binomial_pvalue(x_announced, len(disclosed), 1 - eta, "two-sided")
    return CheckVerdict(ok, p_value >= significance, p_value, bad)


def step4_pooled_test(groups: list[GroupTranscript], disclosures: list, eta: float, significance: float) -> CheckVerdict:
    """Binomial test of the X-announced share over all groups' disclosures."""
    x_announced = trials = 0
    for g, d in zip(groups, disclosures):
        d = np.asarray(d, dtype=np.int64)
        x_announced += int((g.announced_bases[d] == Basis.X).sum())
        trials += len(d)
    p_value = _binomial_pvalue(x_announced, trials, 1 - eta, "two-sided")
    return CheckVerdict(True, p_value >= significance, p_value)


def raw_key_arrays(groups: list[GroupTranscript]) -> tuple[np.ndarray, np.ndarray]:
    """``(bob_bits, alice_values)`` over the Z-prepared originals, original order."""
    if not groups:
        return np.empty(0, dtype=np.int8), np.empty(0, dtype=np.int8)
    sent = np.concatenate([g.sent for g in groups])
    bases = np.concatenate([g.alice_bases for g in groups])
    outcomes = np.concatenate([g.alice_outcomes for g in groups])
    keep = (sent >> 1) == Basis.Z
    alice = np.where(bases[keep] == Basis.Z, outcomes[keep] & 1, INCONCLUSIVE).astype(np.int8)
    return (sent[keep] & 1).astype(np.int8), alice


def build_raw_key(groups: list[GroupTranscript]) -> list[RawKeyRecord]:
    bob, alice = raw_key_arrays(groups)
    return [
        RawKeyRecord(position=i, bob_bit=int(b), alice_value=None if a == INCONCLUSIVE else int(a))
        for i, (b, a) in enumerate(zip(bob, alice))
    ]


@dataclass
class ChangOutcome:
    groups: list[GroupTranscript]
    restarts: int
    step3: CheckVerdict
    step4: list[CheckVerdict] = field(default_factory=list)
    final_key: FinalKey | None = None
    known_index: int | None = None
    desired_index: int | None = None
    retrieved_bit: int | None = None
    recovered: dict[int, int] = field(default_factory=dict)

    @property
    def aborted(self) -> bool:
        return self.final_key is None


def split_groups(symbols: np.ndarray, group_size: int) -> list[np.ndarray]:
    usable = len(symbols) - len(symbols) % group_size
    return [symbols[i : i + group_size] for i in range(0, usable, group_size)]


def run_protocol(
    params: ChangParams, database, rng: np.random.Generator, desired_index: int | None = None
) -> ChangOutcome:
    """Honest steps 1-7. Aborts (``final_key is None``) only if an audit fails.

    Restarts when the raw key is too short or Alice knows no final bit.
    """
    database = np.asarray(database, dtype=np.int8)
    size = params.database_size
    if len(database) != size:
        raise ValueError(f"database has {len(database)} items, params say {size}")
    if desired_index is None:
        desired_index = int(rng.integers(size))
    for attempt in range(params.max_restarts + 1):
        groups = [
            alice_measure_group(g, params.eta, rng)
            for g in split_groups(chang_prepare(params, rng), params.group_size)
        ]
        step3 = bob_step3_check(groups, params.eta, params.significance, rng, params.one_sided_step3)
        step4 = [bob_step4_check(g, honest_disclosure(g), params.eta, params.significance) for g in groups]
        if not step3.passed or not all(v.passed for v in step4):
            return ChangOutcome(groups, attempt, step3, step4)
        bob, alice = raw_key_arrays(groups)
        if len(bob) < params.key_bits_needed:
            continue
        final = postprocess.fold_bits(bob, alice, params.substring_count, size)
        if final.known_count == 0:
            continue
        j = int(rng.choice(sorted(final.alice_known)))
        shift = postprocess.announce_shift(j, desired_index, "chang")
        ciphertext = postprocess.encrypt_database(database, final, shift, "chang")
        return ChangOutcome(
            groups=groups,
            restarts=attempt,
            step3=step3,
            step4=step4,
            final_key=final,
            known_index=j,
            desired_index=desired_index,
            retrieved_bit=postprocess.retrieve(ciphertext, j, final.alice_known[j], desired_index),
            recovered=postprocess.recoverable_items(ciphertext, final, shift, "chang"),
        )
    raise RestartLimitExceeded(f"no usable final key after {params.max_restarts} restarts")
