"""Minimum-error and unambiguous discrimination of two mixed states."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .quantum import ATOL, DimensionError, as_density, hermitian_spectrum, support_projector, trace_norm

ZERO_EIGENVALUE_TOL = 1e-12


@dataclass(frozen=True)
class WeightedStatePair:
    """Two hypotheses ``rho1``/``rho2`` with prior probabilities ``p1``/``p2``."""

    p1: float
    rho1: np.ndarray
    p2: float
    rho2: np.ndarray

    def __post_init__(self):
        if self.p1 < 0 or self.p2 < 0 or abs(self.p1 + self.p2 - 1.0) > ATOL:
            raise ValueError(f"priors must form a distribution, got ({self.p1}, {self.p2})")
        rho1 = as_density(self.rho1)
        rho2 = as_density(self.rho2)
        if rho1.shape != rho2.shape:
            raise DimensionError(f"dimension mismatch: {rho1.shape} vs {rho2.shape}")
        object.__setattr__(self, "rho1", rho1)
        object.__setattr__(self, "rho2", rho2)

    def weighted_difference(self) -> np.ndarray:
        return self.p1 * self.rho1 - self.p2 * self.rho2

    def swapped(self) -> "WeightedStatePair":
        return WeightedStatePair(self.p2, self.rho2, self.p1, self.rho1)


@dataclass(frozen=True)
class BinaryMeasurement:
    """Two-outcome POVM; outcome 1 means "guess state 1"."""

    effect1: np.ndarray
    effect2: np.ndarray

    def __post_init__(self):
        dim = self.effect1.shape[0]
        if np.abs(self.effect1 + self.effect2 - np.eye(dim)).max() > 1e-9:
            raise ValueError("effects do not sum to the identity")
        for e in (self.effect1, self.effect2):
            if hermitian_spectrum(e)[0].min() < -1e-9:
                raise ValueError("effect is not positive semidefinite")

    def probability_first(self, state: np.ndarray) -> float:
        """Probability of outcome 1 on a pure state or density matrix."""
        if state.ndim == 1:
            return float(np.vdot(state, self.effect1 @ state).real)
        return float(np.trace(self.effect1 @ state).real)

    def error_probability(self, pair: WeightedStatePair) -> float:
        miss1 = np.trace(self.effect2 @ pair.rho1).real
        miss2 = np.trace(self.effect1 @ pair.rho2).real
        return float(pair.p1 * miss1 + pair.p2 * miss2)


def helstrom_error(pair: WeightedStatePair) -> float:
    """Minimum average error ``(1 - ||p1 rho1 - p2 rho2||_1) / 2``."""
    return 0.5 * (1.0 - trace_norm(pair.weighted_difference()))


def helstrom_measurement(pair: WeightedStatePair) -> BinaryMeasurement:
    """Optimal measurement: project onto the nonnegative eigenspace of p1 rho1 - p2 rho2.

    Eigenvalues within ``ZERO_EIGENVALUE_TOL`` of zero go to ``effect1``.
    """
    evals, vecs = hermitian_spectrum(pair.weighted_difference())
    pos = vecs[:, evals >= -ZERO_EIGENVALUE_TOL]
    effect1 = pos @ pos.conj().T
    effect2 = np.eye(effect1.shape[0]) - effect1
    return BinaryMeasurement(effect1, effect2)


def unambiguous_feasible(rho1, rho2, tol: float = 1e-9) -> tuple[bool, bool]:
    """Whether each state can ever be identified without error.

    State i can be unambiguously identified iff its support is not contained
    in the support of the other state.
    """
    rho1 = np.asarray(rho1, dtype=complex)
    rho2 = np.asarray(rho2, dtype=complex)
    if rho1.shape != rho2.shape:
        raise DimensionError(f"dimension mismatch: {rho1.shape} vs {rho2.shape}")
    eye = np.eye(rho1.shape[0])
    p1 = support_projector(rho1, tol)
    p2 = support_projector(rho2, tol)
    can1 = np.abs((eye - p2) @ p1).max() > tol
    can2 = np.abs((eye - p1) @ p2).max() > tol
    return bool(can1), bool(can2)
