"""
Attacks on the reordering QPQ protocol.

Bob's counting attack: he knows the multiset of states he sent and the
(basis, outcome) list Alice announced for each group. Even without the
permutation this pins down, sometimes with certainty, which of his
Z-prepared carriers Alice measured in X (an inconclusive raw bit).

Alice's store-and-fake attack: she keeps every carrier, returns a fake
group whose composition matches eta, and after Bob names his X-prepared
positions points each one at a fake slot it is consistent with. The
Z-prepared carriers left in her register are then measured in the right
basis, yielding the whole raw key.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .chang_protocol import (
    ChangParams,
    CheckVerdict,
    GroupTranscript,
    alice_measure_group,
    bob_step3_check,
    bob_step4_check,
    chang_prepare,
    split_groups,
    step4_pooled_test,
)
from .quantum import Basis, PreparedSymbol, measure_symbols

MAX_INFERENCE_GROUP = 8
CERTAINTY_TOL = 1e-12


@dataclass(frozen=True)
class PositionPosterior:
    original_position: int
    p_measured_x: float

    def __post_init__(self):
        if not -1e-12 <= self.p_measured_x <= 1 + 1e-12:
            raise ValueError(f"posterior {self.p_measured_x} outside [0, 1]")


def slot_likelihood(eta: float) -> np.ndarray:
    """``W[original, slot]``: probability an original yields a given announced slot.

    Slots are encoded by the announced outcome symbol, whose basis is the
    announced basis.
    """
    w = np.zeros((4, 4))
    for o in PreparedSymbol:
        for s in PreparedSymbol:
            p_basis = eta if s.basis() is Basis.Z else 1 - eta
            if s.basis() is o.basis():
                w[o, s] = p_basis if s is o else 0.0
            else:
                w[o, s] = 0.5 * p_basis
    return w


def _tables(row_counts, col_counts):
    """All 4x4 non-negative integer tables with the given margins."""
    rows = len(row_counts)

    def fill_row(r, cols_left, row_left, c, acc):
        if c == len(cols_left) - 1:
            if row_left <= cols_left[c]:
                yield acc + (row_left,)
            return
        for x in range(min(row_left, cols_left[c]) + 1):
            yield from fill_row(r, cols_left, row_left - x, c + 1, acc + (x,))

    def rec(r, cols_left):
        if r == rows:
            if not any(cols_left):
                yield ()
            return
        for row in fill_row(r, cols_left, row_counts[r], 0, ()):
            rest = tuple(cl - x for cl, x in zip(cols_left, row))
            for tail in rec(r + 1, rest):
                yield (row,) + tail

    yield from rec(0, tuple(col_counts))


@lru_cache(maxsize=65536)
def _type_posteriors(sent_counts: tuple, slot_counts: tuple, eta: float) -> tuple:
    # A table T[o][s] stands for prod(c_o!) prod(d_s!) / prod(T_os!) bijections,
    # each with likelihood prod W[o, s]^T_os; the factorials common to all
    # tables cancel in the posterior.
    w = slot_likelihood(eta)
    total = 0.0
    x_mass = np.zeros(4)
    for table in _tables(sent_counts, slot_counts):
        weight = 1.0
        for o in range(4):
            for s in range(4):
                t = table[o][s]
                if t:
                    weight *= w[o, s] ** t / math.factorial(t)
        if weight == 0.0:
            continue
        total += weight
        for o in range(4):
            x_mass[o] += weight * (table[o][2] + table[o][3])
    if total == 0.0:
        raise ValueError("announced outcomes are impossible for the sent states")
    counts = np.asarray(sent_counts, dtype=float)
    with np.errstate(invalid="ignore", divide="ignore"):
        post = np.where(counts > 0, x_mass / total / counts, np.nan)
    return tuple(post)


def _symbol_counts(codes) -> tuple:
    return tuple(int(c) for c in np.bincount(np.asarray(codes, dtype=np.int64), minlength=4))


def counting_infer(sent, announced, eta: float) -> list[PositionPosterior]:
    """Exact posterior that each original was measured in X.

    ``sent`` lists Bob's states in original order; ``announced`` is Alice's
    (basis, outcome) list in her secret order, either as pairs or as bare
    outcome symbols. All n! assignments are weighed by their likelihood;
    identical symbols are merged so the sum runs over count tables.
    """
    sent = np.asarray([int(s) for s in sent], dtype=np.int64)
    slots = np.asarray([int(a[1]) if isinstance(a, tuple) else int(a) for a in announced], dtype=np.int64)
    for a in announced:
        if isinstance(a, tuple) and PreparedSymbol(a[1]).basis() is not Basis(a[0]):
            raise ValueError(f"announced outcome {a[1]!r} is not in basis {a[0]!r}")
    n = len(sent)
    if n != len(slots):
        raise ValueError("sent and announced lists differ in length")
    if n > MAX_INFERENCE_GROUP:
        raise ValueError(f"group of {n} exceeds the enumeration limit {MAX_INFERENCE_GROUP}")
    post = _type_posteriors(_symbol_counts(sent), _symbol_counts(slots), float(eta))
    return [PositionPosterior(i, float(post[s])) for i, s in enumerate(sent)]


@dataclass
class LeakageSample:
    """Posteriors from simulated honest groups, flattened over groups."""

    eta: float
    posteriors: np.ndarray
    z_original: np.ndarray

    @property
    def prior(self) -> float:
        return 1 - self.eta

    def abs_shift(self) -> np.ndarray:
        return np.abs(self.posteriors - self.prior)

    def certain(self) -> np.ndarray:
        """Certainty indicator for each Z-prepared original."""
        p = self.posteriors[self.z_original]
        return (p < CERTAINTY_TOL) | (p > 1 - CERTAINTY_TOL)


def counting_leakage(groups: int, params: ChangParams, rng: np.random.Generator) -> LeakageSample:
    """Run Bob's inference on ``groups`` honestly measured groups."""
    n = params.group_size
    sent = rng.integers(0, 4, groups * n, dtype=np.int8)
    posts = np.empty(groups * n)
    for gi, g in enumerate(split_groups(sent, n)):
        tr = alice_measure_group(g, params.eta, rng)
        inferred = counting_infer(tr.sent, tr.announced_outcomes, params.eta)
        posts[gi * n : (gi + 1) * n] = [p.p_measured_x for p in inferred]
    return LeakageSample(params.eta, posts, (sent >> 1) == Basis.Z)


def fake_composition(n: int, eta: float) -> dict[PreparedSymbol, int]:
    """Counts of Z0, Z1, X+, X- in a fake group of n.

    The Z share is ``round(n * eta)`` (halves up); odd counts give the extra
    carrier to Z0 / X+.
    """
    n_z = int(math.floor(n * eta + 0.5))
    n_x = n - n_z
    return {
        PreparedSymbol.Z0: n_z - n_z // 2,
        PreparedSymbol.Z1: n_z // 2,
        PreparedSymbol.XPLUS: n_x - n_x // 2,
        PreparedSymbol.XMINUS: n_x // 2,
    }


@dataclass
class FakeSequencePlan:
    symbols: np.ndarray
    used: np.ndarray = None
    fallbacks: int = 0
    forced: int = 0

    def __post_init__(self):
        if self.used is None:
            self.used = np.zeros(len(self.symbols), dtype=bool)

    def free(self, codes) -> np.ndarray:
        return np.flatnonzero(~self.used & np.isin(self.symbols, codes))

    def composition(self) -> dict[PreparedSymbol, int]:
        counts = _symbol_counts(self.symbols)
        return {s: counts[s] for s in PreparedSymbol}


def store_fake_step2(received, eta: float, rng: np.random.Generator) -> tuple[np.ndarray, FakeSequencePlan, GroupTranscript]:
    """Keep the received group, send back a shuffled fake group and announce it truthfully."""
    stored = np.array(received, dtype=np.int8)
    comp = fake_composition(len(stored), eta)
    symbols = np.concatenate([np.full(c, s, dtype=np.int8) for s, c in comp.items()])
    symbols = symbols[rng.permutation(len(symbols))]
    plan = FakeSequencePlan(symbols)
    view = GroupTranscript(
        sent=stored.copy(),
        alice_bases=None,
        alice_outcomes=None,
        permutation=None,
        announced_bases=(symbols >> 1).astype(np.int8),
        announced_outcomes=symbols.copy(),
        returned=symbols.copy(),
    )
    return stored, plan, view


_Z_CODES = (PreparedSymbol.Z0, PreparedSymbol.Z1)


def store_fake_step4_reply(stored, plan: FakeSequencePlan, x_positions, eta: float, rng: np.random.Generator) -> np.ndarray:
    """Point every X-prepared original at a consistent, unused fake slot.

    With probability 1 - eta the slot holds the same X state (measured from
    the register), otherwise a Z state. An exhausted choice falls back to
    the other class; if both are gone an arbitrary free slot is used.
    """
    x_positions = np.asarray(x_positions, dtype=np.int64)
    stored = np.asarray(stored, dtype=np.int8)
    bits = measure_symbols(stored[x_positions], np.full(len(x_positions), Basis.X), rng)
    disclosed = np.empty(len(x_positions), dtype=np.int64)
    for k, bit in enumerate(bits):
        same = (PreparedSymbol.from_parts(Basis.X, int(bit)),)
        prefer_x = rng.random() < 1 - eta
        first, second = (same, _Z_CODES) if prefer_x else (_Z_CODES, same)
        pool = plan.free(first)
        if len(pool) == 0:
            pool = plan.free(second)
            plan.fallbacks += 1
        if len(pool) == 0:
            pool = np.flatnonzero(~plan.used)
            plan.forced += 1
        slot = int(rng.choice(pool))
        plan.used[slot] = True
        disclosed[k] = slot
    return disclosed


def store_fake_extract(stored_groups, x_positions_per_group, rng: np.random.Generator | None = None) -> np.ndarray:
    """Measure every stored Z-prepared carrier in Z; returns the raw key in original order."""
    rng = rng if rng is not None else np.random.default_rng(0)
    out = []
    for stored, x_pos in zip(stored_groups, x_positions_per_group):
        keep = np.ones(len(stored), dtype=bool)
        keep[np.asarray(x_pos, dtype=np.int64)] = False
        rest = np.asarray(stored, dtype=np.int8)[keep]
        out.append(measure_symbols(rest, np.zeros(len(rest), dtype=np.int8), rng))
    if not out:
        return np.empty(0, dtype=np.int8)
    return np.concatenate(out).astype(np.int8)


@dataclass
class StoreFakeRun:
    """Everything one store-and-fake run produced, plus Bob's audits of it."""

    views: list[GroupTranscript]
    disclosures: list[np.ndarray]
    plans: list[FakeSequencePlan]
    step3: CheckVerdict
    step4: list[CheckVerdict]
    step4_pooled: CheckVerdict
    raw_key: np.ndarray
    bob_raw_key: np.ndarray

    @property
    def structural_failures(self) -> int:
        """Groups failing a deterministic sub-check (step-3 re-measurement counts per carrier)."""
        return self.step3.mismatches + sum(not v.structural for v in self.step4)


def run_store_fake(params: ChangParams, rng: np.random.Generator) -> StoreFakeRun:
    """Steps 1-5 with a store-and-fake Alice and an honest, auditing Bob."""
    sent = chang_prepare(params, rng)
    stored, plans, views = [], [], []
    for group in split_groups(sent, params.group_size):
        st, plan, view = store_fake_step2(group, params.eta, rng)
        stored.append(st)
        plans.append(plan)
        views.append(view)
    step3 = bob_step3_check(views, params.eta, params.significance, rng, params.one_sided_step3)
    x_positions = [v.x_originals() for v in views]
    disclosures = [
        store_fake_step4_reply(st, plan, x, params.eta, rng) for st, plan, x in zip(stored, plans, x_positions)
    ]
    step4 = [bob_step4_check(v, d, params.eta, params.significance) for v, d in zip(views, disclosures)]
    pooled = step4_pooled_test(views, disclosures, params.eta, params.significance)
    bob_raw = (sent[: len(views) * params.group_size] & 1)[
        (sent[: len(views) * params.group_size] >> 1) == Basis.Z
    ].astype(np.int8)
    return StoreFakeRun(
        views=views,
        disclosures=disclosures,
        plans=plans,
        step3=step3,
        step4=step4,
        step4_pooled=pooled,
        raw_key=store_fake_extract(stored, x_positions, rng),
        bob_raw_key=bob_raw,
    )


def infeasible_probability(n: int, eta: float) -> float:
    """Exact chance that no disclosure can pass the step-4 consistency check.

    Each X+ (X-) original needs a distinct fake slot holding X+ (X-) or a
    Z state, so the attack is stuck whenever the X+ originals outnumber the
    X+ and Z fake slots, or likewise for X-.
    """
    comp = fake_composition(n, eta)
    z = comp[PreparedSymbol.Z0] + comp[PreparedSymbol.Z1]
    cap_plus = comp[PreparedSymbol.XPLUS] + z
    cap_minus = comp[PreparedSymbol.XMINUS] + z
    total = 0.0
    for plus in range(n + 1):
        for minus in range(n + 1 - plus):
            if plus > cap_plus or minus > cap_minus:
                rest = n - plus - minus
                total += (
                    math.factorial(n)
                    / (math.factorial(plus) * math.factorial(minus) * math.factorial(rest))
                    * 0.25**plus
                    * 0.25**minus
                    * 0.5**rest
                )
    return total
