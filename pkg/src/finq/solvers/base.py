"""Solver contract shared by every backend."""

from __future__ import annotations

from dataclasses import dataclass, field
from types import MappingProxyType
from typing import Any, Iterable, Mapping

import numpy as np

from finq.errors import ParameterError
from finq.qubo import Qubo

DEFAULTS: dict[str, dict[str, Any]] = {
    "exhaustive": {"max_vars": 30, "num_samples": 64},
    "sa": {"sweeps": 1000, "restarts": 20, "t_hot": None, "t_cold": None, "num_samples": 64},
    "sqa": {
        "sweeps": 1000,
        "replicas": 20,
        "restarts": 1,
        "gamma_start": 3.0,
        "gamma_end": 0.01,
        "temperature": 0.001,
        "num_samples": 64,
    },
    "mps": {
        "bond_dim": 16,
        "max_sweeps": 12,
        "anneal_steps": 10,
        "samples": 256,
        "expansion": 1e-2,
        "energy_tol": 1e-9,
        "num_samples": 64,
    },
    "vqe": {"layers": 3, "maxiter": 500, "shots": 1024, "max_vars": 20, "num_samples": 64},
}
BACKENDS = tuple(DEFAULTS)


@dataclass(frozen=True)
class SolverHandle:
    """Immutable solver selection: backend name, parameter overrides, seed, worker count.

    ``workers`` only changes wall time; results are identical for any value.
    """

    backend: str
    params: Mapping[str, Any] = field(default_factory=dict)
    seed: int = 0
    workers: int = 1

    def __post_init__(self):
        if self.backend not in DEFAULTS:
            raise ParameterError(f"unknown solver {self.backend!r}; valid: {', '.join(BACKENDS)}")
        unknown = set(self.params) - set(DEFAULTS[self.backend])
        if unknown:
            raise ParameterError(f"unknown {self.backend} parameter(s): {sorted(unknown)}")
        if self.workers < 1:
            raise ParameterError("workers must be >= 1")
        merged = {**DEFAULTS[self.backend], **self.params}
        for key in ("sweeps", "restarts", "replicas", "bond_dim", "max_sweeps", "samples", "layers",
                    "maxiter", "shots", "max_vars", "num_samples"):
            if key in merged and (not isinstance(merged[key], (int, np.integer)) or merged[key] < 1):
                raise ParameterError(f"{self.backend}.{key} must be a positive integer, got {merged[key]!r}")
        if "anneal_steps" in merged and merged["anneal_steps"] < 0:
            raise ParameterError("mps.anneal_steps must be >= 0")
        if self.backend == "sqa" and merged["replicas"] < 2:
            raise ParameterError("sqa needs at least 2 replicas")
        object.__setattr__(self, "params", MappingProxyType(merged))

    def get(self, key: str):
        return self.params[key]


@dataclass
class SolveResult:
    best_bits: np.ndarray
    best_cost: float
    samples: list[tuple[tuple[int, ...], float]] = field(default_factory=list)
    diagnostics: dict[str, Any] = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "best_bits": [int(b) for b in self.best_bits],
            "best_cost": self.best_cost,
            "samples": [[list(b), c] for b, c in self.samples],
            "diagnostics": self.diagnostics,
        }


def lex_key(bits) -> tuple[int, ...]:
    return tuple(int(b) for b in bits)


def finalize(qubo: Qubo, candidates: Iterable, num_samples: int, diagnostics: dict | None = None) -> SolveResult:
    """Deduplicate candidate bitstrings, rescore them exactly and pick the winner.

    Costs within a relative 1e-12 of the minimum count as ties; the
    lexicographically smallest bitstring among them wins.
    """
    uniq = {lex_key(b) for b in candidates}
    if not uniq:
        raise ValueError("no candidate states")
    scored = sorted(((qubo.cost(np.array(b)), b) for b in uniq))
    lo = scored[0][0]
    tol = 1e-12 * max(1.0, abs(lo))
    best = min(b for c, b in scored if c <= lo + tol)
    best_bits = np.array(best, dtype=np.int8)
    return SolveResult(
        best_bits=best_bits,
        best_cost=qubo.cost(best_bits),
        samples=[(b, c) for c, b in scored[:num_samples]],
        diagnostics=diagnostics or {},
    )


def energy_scale(qubo: Qubo) -> float:
    s = qubo.flip_scale()
    return s if s > 0 else 1.0


def child_seeds(seed: int, count: int) -> list[int]:
    """Independent per-worker integer seeds derived from one root seed."""
    return [int(s.generate_state(1)[0]) for s in np.random.SeedSequence(seed).spawn(count)]
