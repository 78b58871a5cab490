"""Synthetic box-constrained test functions with shift/rotation structure.

Every function is nonnegative and attains 0 exactly at its shifted optimum.
Real evaluations are the scarce resource: each call to evaluate advances an
atomic counter, and a capped problem raises once the cap would be exceeded.
"""

from __future__ import annotations

import math
import threading
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .core import Bounds, BudgetExceededError, ConfigError, ContractViolationError, RngStream

DEFAULT_LOW, DEFAULT_HIGH = -5.0, 5.0
ROTATION_BLOCK = 50


def _sphere(z: np.ndarray) -> float:
    return float(np.sum(z * z))


def _elliptic(z: np.ndarray) -> float:
    d = z.size
    exponents = 6.0 * np.arange(d) / (d - 1)
    return float(np.sum(10.0**exponents * z * z))


def _rastrigin(z: np.ndarray) -> float:
    return float(np.sum(z * z - 10.0 * np.cos(2.0 * np.pi * z) + 10.0))


def _ackley(z: np.ndarray) -> float:
    d = z.size
    a = -20.0 * math.exp(-0.2 * math.sqrt(np.sum(z * z) / d))
    b = -math.exp(np.sum(np.cos(2.0 * np.pi * z)) / d)
    return float(a + b + 20.0 + math.e)


def _rosenbrock(z: np.ndarray) -> float:
    # w = z + 1 puts the optimum at z = 0 with value 0
    w = z + 1.0
    return float(np.sum(100.0 * (w[1:] - w[:-1] ** 2) ** 2 + (w[:-1] - 1.0) ** 2))


def _schwefel12(z: np.ndarray) -> float:
    return float(np.sum(np.cumsum(z) ** 2))


_BASE: dict[str, Callable[[np.ndarray], float]] = {
    "sphere": _sphere,
    "elliptic": _elliptic,
    "rastrigin": _rastrigin,
    "ackley": _ackley,
    "rosenbrock": _rosenbrock,
    "schwefel12": _schwefel12,
}

_ROTATED = {"rotated_elliptic", "rotated_rastrigin", "rotated_ackley"}


def available_functions() -> list[str]:
    return sorted(_BASE) + sorted(_ROTATED)


@dataclass
class BenchmarkProblem:
    """A shifted (optionally block-rotated) test function with FE accounting."""

    name: str
    d: int
    seed: int
    bounds: Bounds
    shift: np.ndarray
    rotation: list[np.ndarray] | None
    fe_limit: int | None = None
    fe_counter: int = 0
    _core: Callable[[np.ndarray], float] = field(repr=False, default=_sphere)
    _lock: threading.Lock = field(default_factory=threading.Lock, repr=False, compare=False)

    def evaluate(self, x: np.ndarray) -> float:
        """True fitness of x; advances the FE counter by exactly 1."""
        x = np.asarray(x, dtype=float)
        if x.shape != (self.d,):
            raise ContractViolationError(f"candidate shape {x.shape} does not match d={self.d}")
        if np.any(x < self.bounds.lower) or np.any(x > self.bounds.upper):
            raise ContractViolationError("candidate outside bounds")
        with self._lock:
            if self.fe_limit is not None and self.fe_counter >= self.fe_limit:
                raise BudgetExceededError(
                    f"real-evaluation budget {self.fe_limit} exhausted on {self.name}"
                )
            self.fe_counter += 1
        z = x - self.shift
        if self.rotation is not None:
            pieces = []
            start = 0
            for block in self.rotation:
                size = block.shape[0]
                pieces.append(block @ z[start : start + size])
                start += size
            z = np.concatenate(pieces)
        return self._core(z)

    def __getstate__(self):
        state = self.__dict__.copy()
        del state["_lock"]
        return state

    def __setstate__(self, state):
        self.__dict__.update(state)
        self._lock = threading.Lock()


def _rotation_blocks(d: int, rng: np.random.Generator) -> list[np.ndarray]:
    blocks = []
    remaining = d
    while remaining > 0:
        size = min(remaining, ROTATION_BLOCK)
        gauss = rng.normal(size=(size, size))
        q, r = np.linalg.qr(gauss)
        # canonical sign so the block is unique for the seed
        q = q * np.sign(np.diag(r))
        blocks.append(q)
        remaining -= size
    return blocks


def make_problem(
    name: str,
    d: int,
    seed: int,
    fe_limit: int | None = None,
    bounds: Bounds | None = None,
) -> BenchmarkProblem:
    """Build a problem instance; shift and rotation are reproducible from seed.

    The shift is drawn uniformly inside the inner 80% of the box so the
    optimum never sits on the boundary.
    """
    if name not in _BASE and name not in _ROTATED:
        raise ConfigError(f"unknown function {name!r}; available: {', '.join(available_functions())}")
    if d < 2:
        raise ConfigError("d must be at least 2")
    if bounds is None:
        bounds = Bounds.cube(DEFAULT_LOW, DEFAULT_HIGH, d)
    elif bounds.dim != d:
        raise ConfigError("bounds dimension does not match d")

    rng = RngStream(seed, f"problem/{name}/{d}").generator
    span = bounds.upper - bounds.lower
    shift = bounds.lower + span * (0.1 + 0.8 * rng.random(d))
    rotated = name in _ROTATED
    core = _BASE[name.removeprefix("rotated_")] if rotated else _BASE[name]
    rotation = _rotation_blocks(d, rng) if rotated else None
    return BenchmarkProblem(
        name=name,
        d=d,
        seed=seed,
        bounds=bounds,
        shift=shift,
        rotation=rotation,
        fe_limit=fe_limit,
        _core=core,
    )


def problem_manifest(problem: BenchmarkProblem) -> dict:
    """JSON-ready manifest; shift/rotation are derived from seed, never stored."""
    return {
        "name": problem.name,
        "d": problem.d,
        "seed": problem.seed,
        "bounds": {"lower": problem.bounds.lower.tolist(), "upper": problem.bounds.upper.tolist()},
    }


def from_manifest(manifest: dict) -> BenchmarkProblem:
    bounds = None
    if "bounds" in manifest:
        bounds = Bounds(np.array(manifest["bounds"]["lower"]), np.array(manifest["bounds"]["upper"]))
    return make_problem(manifest["name"], manifest["d"], manifest["seed"], bounds=bounds)
