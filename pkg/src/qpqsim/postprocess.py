"""
Classical postprocessing shared by both QPQ protocols.

The raw oblivious key is folded into a final key by XOR-ing its k
substrings; the database is then encrypted with a cyclically shifted
final key so the user can decrypt the item she wants with the one key bit
she knows.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Literal, Sequence

import numpy as np

INCONCLUSIVE = -1

Convention = Literal["yu", "chang"]


class InsufficientKeyError(ValueError):
    pass


class RestartLimitExceeded(RuntimeError):
    """The protocol restarted ``max_restarts`` times without a usable final key."""


class UnknownKeyBitError(LookupError):
    """Alice asked to decrypt with a final-key bit she does not know."""


@dataclass(frozen=True)
class RawKeyRecord:
    """One raw oblivious-key position.

    ``alice_value`` is ``None`` when Alice's bit is inconclusive. Yu-protocol
    records also carry the announcement and Alice's prepared symbol.
    """

    position: int
    bob_bit: int
    alice_value: int | None
    announcement: int | None = None
    alice_prepared: object | None = None

    @property
    def conclusive(self) -> bool:
        return self.alice_value is not None


@dataclass(frozen=True)
class FinalKey:
    bits: np.ndarray
    alice_known: dict[int, int] = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.bits)

    @property
    def known_count(self) -> int:
        return len(self.alice_known)


def fold_bits(bob_bits, alice_values, k: int, length: int | None = None) -> FinalKey:
    """Array form of :func:`fold_key`.

    ``alice_values`` uses ``INCONCLUSIVE`` (-1) for unknown positions. The
    raw key is truncated to ``k * length`` bits; ``length`` defaults to
    ``len(bob_bits) // k``.
    """
    bob_bits = np.asarray(bob_bits, dtype=np.int8)
    alice_values = np.asarray(alice_values, dtype=np.int8)
    if k < 1:
        raise ValueError(f"substring count must be >= 1, got {k}")
    if len(bob_bits) < k:
        raise InsufficientKeyError(f"raw key of length {len(bob_bits)} is shorter than k={k}")
    if length is None:
        length = len(bob_bits) // k
    if len(bob_bits) < k * length:
        raise InsufficientKeyError(f"need {k * length} raw bits, have {len(bob_bits)}")
    bob = bob_bits[: k * length].reshape(k, length)
    alice = alice_values[: k * length].reshape(k, length)
    bits = np.bitwise_xor.reduce(bob, axis=0)
    known = (alice != INCONCLUSIVE).all(axis=0)
    values = np.bitwise_xor.reduce(np.where(alice == INCONCLUSIVE, 0, alice), axis=0)
    alice_known = {int(j): int(values[j]) for j in np.flatnonzero(known)}
    return FinalKey(bits=bits, alice_known=alice_known)


def fold_key(raw: Sequence[RawKeyRecord], k: int, length: int | None = None) -> FinalKey:
    """XOR the k substrings of the raw key into a final key.

    Alice knows final bit j iff all k raw bits at offset j were conclusive.
    """
    bob = [r.bob_bit for r in raw]
    alice = [INCONCLUSIVE if r.alice_value is None else r.alice_value for r in raw]
    return fold_bits(bob, alice, k, length)


def announce_shift(known_index: int, desired_index: int, convention: Convention) -> int:
    """Shift Alice announces: ``j - i`` in Yu's protocol, ``i - j`` in Chang's."""
    if convention == "yu":
        return known_index - desired_index
    if convention == "chang":
        return desired_index - known_index
    raise ValueError(f"unknown shift convention {convention!r}")


def key_index(t: int | np.ndarray, shift: int, size: int, convention: Convention):
    """Final-key index used to encrypt database item ``t``."""
    if convention == "yu":
        return (t + shift) % size
    if convention == "chang":
        return (t - shift) % size
    raise ValueError(f"unknown shift convention {convention!r}")


def encrypt_database(db, key, shift: int, convention: Convention = "yu") -> np.ndarray:
    """XOR the database with the shifted final key."""
    db = np.asarray(db, dtype=np.int8)
    bits = np.asarray(key.bits if isinstance(key, FinalKey) else key, dtype=np.int8)
    if len(db) != len(bits):
        raise ValueError(f"database length {len(db)} != key length {len(bits)}")
    idx = key_index(np.arange(len(db)), shift, len(db), convention)
    return db ^ bits[idx]


def retrieve(ciphertext, known_index: int, known_value: int | None, desired_index: int) -> int:
    """Decrypt item ``desired_index`` with the key bit at ``known_index``.

    Assumes the ciphertext was produced with the shift Alice announced for
    this (known, desired) pair, so the two indices are aligned.
    """
    if known_value is None:
        raise UnknownKeyBitError(f"final-key bit {known_index} is not known")
    return int(ciphertext[desired_index]) ^ int(known_value)


def recoverable_items(ciphertext, key: FinalKey, shift: int, convention: Convention) -> dict[int, int]:
    """Every database item Alice can decrypt from one ciphertext."""
    n = len(ciphertext)
    out = {}
    for t in range(n):
        j = int(key_index(t, shift, n, convention))
        if j in key.alice_known:
            out[t] = int(ciphertext[t]) ^ key.alice_known[j]
    return out


def random_database(size: int, rng: np.random.Generator) -> np.ndarray:
    if size < 1:
        raise ValueError("database must hold at least one item")
    return rng.integers(0, 2, size, dtype=np.int8)


def load_database(path: str | Path) -> np.ndarray:
    """Read a database file: one line of '0'/'1' characters."""
    text = Path(path).read_text(encoding="ascii").strip()
    if not text or set(text) - {"0", "1"}:
        raise ValueError(f"{path}: expected a non-empty line of 0/1 characters")
    return np.frombuffer(text.encode("ascii"), dtype=np.uint8).astype(np.int8) - ord("0")


def save_database(path: str | Path, bits) -> None:
    Path(path).write_text("".join(str(int(b)) for b in bits) + "\n", encoding="ascii")
