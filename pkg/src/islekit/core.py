"""Shared domain types, bounds handling, and deterministic randomness."""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from enum import Enum

import numpy as np


class IslekitError(Exception):
    """Base class for all errors raised by this package."""


class ContractViolationError(IslekitError):
    """An operation was called with arguments that break its contract."""


class EmptyRequestError(IslekitError):
    """A sampling operation was asked for zero items."""


class InsufficientDataError(IslekitError):
    """Not enough samples to perform the requested fit or split."""


class BudgetExceededError(IslekitError):
    """A real fitness evaluation was attempted past the allowed budget."""


class BoardStalenessError(IslekitError):
    """A required neighbor model was missing from the shared board."""


class InitializationError(IslekitError):
    """A board slot was read before any model was published to it."""


class ConfigError(IslekitError):
    """A run configuration failed validation; message names the key."""


@dataclass(frozen=True)
class Bounds:
    """Box constraints of the search space.

    Args:
        lower: length-d vector of lower limits.
        upper: length-d vector of upper limits, strictly above lower.
    """

    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self):
        lower = np.asarray(self.lower, dtype=float)
        upper = np.asarray(self.upper, dtype=float)
        object.__setattr__(self, "lower", lower)
        object.__setattr__(self, "upper", upper)
        if lower.ndim != 1 or upper.ndim != 1 or lower.shape != upper.shape:
            raise ContractViolationError("bounds vectors must be 1-d and equal length")
        if lower.size < 1:
            raise ContractViolationError("bounds need at least one dimension")
        if not np.all(lower < upper):
            raise ContractViolationError("every lower bound must be strictly below its upper bound")

    @property
    def dim(self) -> int:
        return self.lower.size

    @classmethod
    def cube(cls, low: float, high: float, d: int) -> "Bounds":
        return cls(np.full(d, float(low)), np.full(d, float(high)))


class Provenance(Enum):
    REAL = "real"
    PSEUDO = "pseudo"


@dataclass(frozen=True)
class LabeledSample:
    """One evaluated candidate: genes, fitness label, and where the label came from."""

    genes: np.ndarray
    label: float
    provenance: Provenance = Provenance.REAL


def clamp(genes: np.ndarray, bounds: Bounds) -> np.ndarray:
    """Project a candidate back into the box; interior genes are untouched."""
    genes = np.asarray(genes, dtype=float)
    if genes.shape[-1] != bounds.dim:
        raise ContractViolationError(
            f"candidate has {genes.shape[-1]} genes but bounds have {bounds.dim} dimensions"
        )
    return np.clip(genes, bounds.lower, bounds.upper)


def _philox_key(seed: int, label: str) -> np.ndarray:
    digest = hashlib.sha256(f"{seed}|{label}".encode()).digest()
    return np.frombuffer(digest[:16], dtype=np.uint64)


@dataclass
class RngStream:
    """A named, reproducible random stream.

    Streams are keyed by (seed, label), so any logical task can rebuild its
    generator from scratch regardless of what other tasks drew in between.
    Each stream is owned by exactly one logical task at a time.

    Args:
        seed: 64-bit root seed shared by the whole run.
        label: slash-separated derivation path, e.g. "island/3/sbx".
    """

    seed: int
    label: str = ""
    _generator: np.random.Generator | None = field(default=None, repr=False, compare=False)

    @property
    def generator(self) -> np.random.Generator:
        if self._generator is None:
            bit_gen = np.random.Philox(key=_philox_key(self.seed, self.label))
            self._generator = np.random.Generator(bit_gen)
        return self._generator


def derive_stream(root: RngStream, label: str) -> RngStream:
    """Derive a child stream; same (root, label) always yields the same stream."""
    path = f"{root.label}/{label}" if root.label else label
    return RngStream(seed=root.seed, label=path)
