"""INI configuration: problem and benchmark settings plus per-solver sections."""

from __future__ import annotations

import configparser
import hashlib
import io
import json
import os
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Mapping

from finq.errors import ConfigurationError, ParameterError
from finq.portfolio import DEFAULT_LAMBDA, DEFAULT_WINDOW, MAX_QUBITS, SIZES
from finq.solvers.base import BACKENDS, DEFAULTS, SolverHandle

PROBLEM_DEFAULTS: dict[str, Any] = {
    "size": "XS",
    "gamma": 1.0,
    "lambda": DEFAULT_LAMBDA,
    "rho": None,
    "window": DEFAULT_WINDOW,
    "seed": None,
    "n_steps": None,
    "K": None,
    "K_prime": None,
    "N_q": None,
    "max_qubits": MAX_QUBITS,
}

BENCHMARK_DEFAULTS: dict[str, Any] = {
    "sizes": "XS,S",
    "solvers": "exhaustive,sa,sqa,mps,vqe",
    "seeds": "0",
    "output": "bench-out",
    "jobs": 1,
    "clusters": None,
    "fragment_candidates": None,
    "extra_columns": "",
}

SECTIONS = ("problem", "benchmark", *BACKENDS)


STRING_KEYS = {"size", "sizes", "solvers", "seeds", "output", "extra_columns"}
FLOAT_KEYS = {"gamma", "lambda", "rho", "t_hot", "t_cold", "gamma_start", "gamma_end", "temperature", "expansion", "energy_tol"}


def _coerce(section: str, key: str, raw: str):
    text = raw.strip()
    if key in STRING_KEYS:
        return text
    if text.lower() in ("", "none", "auto"):
        return None
    try:
        return float(text) if key in FLOAT_KEYS else int(text)
    except ValueError:
        kind = "a number" if key in FLOAT_KEYS else "an integer"
        raise ConfigurationError(f"[{section}] {key} = {raw!r} is not {kind}") from None


def defaults() -> dict[str, dict[str, Any]]:
    out = {"problem": dict(PROBLEM_DEFAULTS), "benchmark": dict(BENCHMARK_DEFAULTS)}
    for b in BACKENDS:
        out[b] = dict(DEFAULTS[b])
    return out


def load_config(path=None, text: str | None = None) -> dict[str, dict[str, Any]]:
    """Defaults overlaid with an INI file; unknown sections or keys are errors."""
    cfg = defaults()
    if path is None and text is None:
        return cfg
    parser = configparser.ConfigParser()
    parser.optionxform = str
    try:
        if text is not None:
            parser.read_string(text)
        else:
            with open(path) as fh:
                parser.read_file(fh)
    except OSError as exc:
        raise ConfigurationError(f"cannot read config {path}: {exc}") from None
    except configparser.Error as exc:
        raise ConfigurationError(f"malformed config: {exc}") from None
    for section in parser.sections():
        if section not in cfg:
            raise ConfigurationError(f"unknown config section [{section}]; valid: {', '.join(SECTIONS)}")
        for key, raw in parser.items(section):
            if key not in cfg[section]:
                raise ConfigurationError(f"unknown key {key!r} in [{section}]; valid: {', '.join(cfg[section])}")
            cfg[section][key] = _coerce(section, key, raw)
    return cfg


def dump_config(cfg: Mapping[str, Mapping[str, Any]]) -> str:
    parser = configparser.ConfigParser()
    parser.optionxform = str
    for section in SECTIONS:
        parser[section] = {k: "auto" if v is None else str(v) for k, v in cfg[section].items()}
    buf = io.StringIO()
    parser.write(buf)
    return buf.getvalue()


def resolve_seed(explicit: int | None, cfg: Mapping[str, Mapping[str, Any]]) -> int:
    """Command line first, then the config file, then ``FINQ_SEED``, then 0."""
    if explicit is not None:
        return int(explicit)
    if cfg["problem"].get("seed") is not None:
        return int(cfg["problem"]["seed"])
    env = os.environ.get("FINQ_SEED")
    if env:
        try:
            return int(env)
        except ValueError:
            raise ConfigurationError(f"FINQ_SEED={env!r} is not an integer") from None
    return 0


def solver_overrides(cfg: Mapping[str, Mapping[str, Any]]) -> dict[str, dict[str, Any]]:
    """Per-backend parameters that differ from the built-in defaults."""
    return {b: {k: v for k, v in cfg[b].items() if v != DEFAULTS[b][k]} for b in BACKENDS}


def split_list(text: str | None) -> tuple[str, ...]:
    return tuple(s.strip() for s in (text or "").split(",") if s.strip())


@dataclass(frozen=True)
class BenchmarkConfig:
    sizes: tuple[str, ...]
    solvers: tuple[str, ...]
    seeds: tuple[int, ...]
    output: Path = Path("bench-out")
    overrides: Mapping[str, Mapping[str, Any]] = field(default_factory=dict)
    gamma: float = 1.0
    lambda_tc: float = DEFAULT_LAMBDA
    rho: float | None = None
    window: int = DEFAULT_WINDOW
    clusters: int | None = None
    fragment_candidates: int | None = None
    extra_columns: tuple[str, ...] = ()
    jobs: int = 1

    def __post_init__(self):
        if not self.sizes:
            raise ParameterError("benchmark needs at least one size")
        if not self.solvers:
            raise ParameterError(f"benchmark needs at least one solver; valid: {', '.join(BACKENDS)}")
        if not self.seeds:
            raise ParameterError("benchmark needs at least one seed")
        bad = [s for s in self.sizes if s not in SIZES]
        if bad:
            raise ParameterError(f"unknown size(s) {bad}; valid: {', '.join(SIZES)}")
        bad = [s for s in self.solvers if s not in BACKENDS]
        if bad:
            raise ParameterError(f"unknown solver(s) {bad}; valid: {', '.join(BACKENDS)}")
        if self.jobs < 1:
            raise ParameterError("jobs must be >= 1")
        if self.clusters is not None and self.fragment_candidates is not None:
            raise ParameterError("choose either clusters or fragment_candidates, not both")
        object.__setattr__(self, "output", Path(self.output))
        overrides = {k: dict(v) for k, v in sorted(dict(self.overrides).items()) if v}
        for backend, params in overrides.items():
            SolverHandle(backend, params)
        object.__setattr__(self, "overrides", overrides)

    @classmethod
    def from_config(cls, cfg: Mapping[str, Mapping[str, Any]], **cli) -> BenchmarkConfig:
        b, p = cfg["benchmark"], cfg["problem"]
        seeds = cli.get("seeds") or split_list(str(b["seeds"]))
        try:
            seeds = tuple(int(s) for s in seeds)
        except ValueError:
            raise ParameterError(f"seeds must be integers, got {seeds}") from None
        return cls(
            sizes=tuple(cli.get("sizes") or split_list(b["sizes"])),
            solvers=tuple(cli["solvers"] if cli.get("solvers") is not None else split_list(b["solvers"])),
            seeds=seeds,
            output=Path(cli.get("output") or b["output"]),
            overrides=solver_overrides(cfg),
            gamma=float(p["gamma"]),
            lambda_tc=float(p["lambda"]),
            rho=p["rho"],
            window=int(p["window"]),
            clusters=cli.get("clusters") or b["clusters"],
            fragment_candidates=cli.get("fragment_candidates") or b["fragment_candidates"],
            extra_columns=split_list(b["extra_columns"]),
            jobs=int(cli.get("jobs") or b["jobs"]),
        )

    def canonical(self) -> dict:
        """Everything that can change results; output location and job count are excluded."""
        d = asdict(self)
        d.pop("output")
        d.pop("jobs")
        d["overrides"] = {k: dict(sorted(v.items())) for k, v in self.overrides.items()}
        return d

    def hash(self) -> str:
        blob = json.dumps(self.canonical(), sort_keys=True, separators=(",", ":"), default=list)
        return hashlib.sha256(blob.encode()).hexdigest()
