"""Dynamic integer portfolio optimisation: objective, QUBO mapping, Sharpe scoring, instances."""

from __future__ import annotations

import calendar
import csv
import datetime as dt
import math
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import NamedTuple, Sequence

import numpy as np

from finq.errors import DataError, DimensionError, ParameterError, RangeError
from finq.qubo import Qubo

PERIODS_PER_YEAR = 12
DEFAULT_WINDOW = 6
DEFAULT_LAMBDA = 0.01
MAX_QUBITS = 5000


class SizeSpec(NamedTuple):
    n_assets: int
    n_steps: int
    n_bits: int
    budget: int
    cap: int

    @property
    def n_qubits(self) -> int:
        return self.n_assets * self.n_steps * self.n_bits


# Benchmark dataset sizes (assets, months, bits per holding, budget K, per-asset cap K')
SIZES: dict[str, SizeSpec] = {
    "XS": SizeSpec(3, 2, 1, 2, 1),
    "S": SizeSpec(4, 5, 1, 3, 1),
    "M": SizeSpec(4, 7, 1, 3, 1),
    "L": SizeSpec(8, 17, 2, 5, 3),
    "XL": SizeSpec(8, 29, 2, 10, 3),
    "XXL": SizeSpec(8, 53, 3, 15, 7),
}


class DegenerateSharpeWarning(RuntimeWarning):
    pass


@dataclass(frozen=True)
class MarketData:
    prices: np.ndarray
    timestamps: tuple[str, ...]
    assets: tuple[str, ...] = ()

    def __post_init__(self):
        p = np.array(self.prices, dtype=float)
        if p.ndim != 2:
            raise DimensionError("prices must be a T x N matrix")
        if p.shape[0] < 2:
            raise DataError("need at least two time steps")
        if not np.all(p > 0):
            t, n = np.argwhere(~(p > 0))[0]
            raise DataError(f"non-positive price at row {t}, asset {n}")
        if len(self.timestamps) != p.shape[0]:
            raise DimensionError(f"{len(self.timestamps)} timestamps for {p.shape[0]} price rows")
        assets = tuple(self.assets) or tuple(f"A{i}" for i in range(p.shape[1]))
        if len(assets) != p.shape[1]:
            raise DimensionError(f"{len(assets)} asset names for {p.shape[1]} columns")
        p.setflags(write=False)
        object.__setattr__(self, "prices", p)
        object.__setattr__(self, "timestamps", tuple(self.timestamps))
        object.__setattr__(self, "assets", assets)

    @property
    def n_steps(self) -> int:
        return self.prices.shape[0]

    @property
    def n_assets(self) -> int:
        return self.prices.shape[1]


def default_rho(mu, sigma, gamma, lambda_tc) -> float:
    """``10 * max_t (|mu_t|_1 + gamma * |Sigma_t|_1 + sum(lambda))``."""
    mu = np.asarray(mu)
    lam_total = float(np.sum(np.broadcast_to(lambda_tc, mu.shape[1:])))
    per_step = np.abs(mu).sum(axis=1) + gamma * np.abs(sigma).sum(axis=(1, 2)) + lam_total
    return 10.0 * float(per_step.max())


@dataclass(frozen=True)
class PortfolioProblem:
    """Multi-period objective data. ``lambda_tc`` is a scalar or a per-asset vector."""

    mu: np.ndarray
    sigma: np.ndarray
    gamma: float
    lambda_tc: float | np.ndarray
    K: int
    N_q: int
    K_prime: int | None = None
    rho: float | None = None

    def __post_init__(self):
        mu = np.array(self.mu, dtype=float)
        sigma = np.array(self.sigma, dtype=float)
        if mu.ndim != 2:
            raise DimensionError("mu must be T x N")
        T, N = mu.shape
        if sigma.shape != (T, N, N):
            raise DimensionError(f"sigma has shape {sigma.shape}, expected {(T, N, N)}")
        for t, s in enumerate(sigma):
            if not np.allclose(s, s.T, atol=1e-12):
                raise DataError(f"covariance at step {t} is not symmetric")
            if np.linalg.eigvalsh(s).min() < -1e-10:
                raise DataError(f"covariance at step {t} is not positive semidefinite")
        lam = self.lambda_tc
        if np.ndim(lam) == 0:
            lam = float(lam)
        else:
            lam = np.array(lam, dtype=float)
            if lam.shape != (N,):
                raise DimensionError(f"lambda_tc vector has shape {lam.shape}, expected ({N},)")
        if self.N_q < 1 or self.K < 1:
            raise ParameterError("K and N_q must be positive")
        cap = 2**self.N_q - 1 if self.K_prime is None else int(self.K_prime)
        if cap > 2**self.N_q - 1:
            raise RangeError(f"per-asset cap {cap} not representable on {self.N_q} bits")
        if self.K > N * cap:
            raise ParameterError(f"budget K={self.K} exceeds N * K' = {N * cap}")
        rho = default_rho(mu, sigma, self.gamma, lam) if self.rho is None else float(self.rho)
        if rho < 0:
            raise ParameterError("rho must be nonnegative")
        for a in (mu, sigma):
            a.setflags(write=False)
        object.__setattr__(self, "mu", mu)
        object.__setattr__(self, "sigma", sigma)
        object.__setattr__(self, "lambda_tc", lam)
        object.__setattr__(self, "K_prime", cap)
        object.__setattr__(self, "rho", rho)

    @property
    def n_steps(self) -> int:
        return self.mu.shape[0]

    @property
    def n_assets(self) -> int:
        return self.mu.shape[1]

    @property
    def lambda_vector(self) -> np.ndarray:
        return np.broadcast_to(np.asarray(self.lambda_tc, dtype=float), (self.n_assets,)).copy()

    def replace(self, **changes) -> PortfolioProblem:
        fields = dict(
            mu=self.mu, sigma=self.sigma, gamma=self.gamma, lambda_tc=self.lambda_tc,
            K=self.K, N_q=self.N_q, K_prime=self.K_prime, rho=self.rho,
        )
        fields.update(changes)
        return PortfolioProblem(**fields)


@dataclass(frozen=True)
class Trajectory:
    holdings: np.ndarray
    K: int = field(default=1)

    def __post_init__(self):
        h = np.array(self.holdings, dtype=np.int64)
        if h.ndim != 2:
            raise DimensionError("holdings must be T x N")
        if np.any(h < 0):
            raise DataError("holdings must be nonnegative")
        h.setflags(write=False)
        object.__setattr__(self, "holdings", h)

    @property
    def as_weights(self) -> np.ndarray:
        return self.holdings / self.K

    def is_feasible(self, cap: int) -> bool:
        return bool(np.all(self.holdings.sum(axis=1) == self.K) and np.all(self.holdings <= cap))


def count_qubits(problem: PortfolioProblem) -> int:
    return problem.n_assets * problem.n_steps * problem.N_q


def _check(problem: PortfolioProblem, traj: Trajectory) -> np.ndarray:
    if traj.holdings.shape != (problem.n_steps, problem.n_assets):
        raise DimensionError(
            f"trajectory shape {traj.holdings.shape} does not match problem {(problem.n_steps, problem.n_assets)}"
        )
    return traj.holdings / problem.K


def cost_h0(problem: PortfolioProblem, traj: Trajectory) -> float:
    """Returns, risk and transaction-cost terms summed over time; the portfolio starts in cash."""
    w = _check(problem, traj)
    lam = problem.lambda_vector
    prev = np.zeros(problem.n_assets)
    total = 0.0
    for t in range(problem.n_steps):
        dw = w[t] - prev
        total += -problem.mu[t] @ w[t] + 0.5 * problem.gamma * w[t] @ problem.sigma[t] @ w[t] + lam @ (dw * dw)
        prev = w[t]
    return float(total)


def budget_penalty(problem: PortfolioProblem, traj: Trajectory) -> float:
    w = _check(problem, traj)
    return float(problem.rho * np.sum((w.sum(axis=1) - 1.0) ** 2))


def cost_full(problem: PortfolioProblem, traj: Trajectory) -> float:
    return cost_h0(problem, traj) + budget_penalty(problem, traj)


def _weight_map(problem: PortfolioProblem) -> np.ndarray:
    """Matrix B with omega_flat = B @ bits / K, bits ordered by (t, n, q)."""
    T, N, Q = problem.n_steps, problem.n_assets, problem.N_q
    B = np.zeros((T * N, T * N * Q))
    for tn in range(T * N):
        B[tn, tn * Q : (tn + 1) * Q] = 2.0 ** np.arange(Q)
    return B


def objective_matrices(problem: PortfolioProblem) -> tuple[np.ndarray, np.ndarray, float]:
    """``(M, c, const)`` with ``cost_full = w @ M @ w + c @ w + const`` over flattened weights."""
    T, N = problem.n_steps, problem.n_assets
    lam = np.diag(problem.lambda_vector)
    M = np.zeros((T * N, T * N))
    c = np.zeros(T * N)
    ones = np.ones((N, N))
    for t in range(T):
        blk = slice(t * N, (t + 1) * N)
        M[blk, blk] += 0.5 * problem.gamma * problem.sigma[t] + problem.rho * ones + lam
        c[blk] = -problem.mu[t] - 2.0 * problem.rho
        if t > 0:
            prv = slice((t - 1) * N, t * N)
            M[prv, prv] += lam
            M[blk, prv] -= lam
            M[prv, blk] -= lam
    return M, c, problem.rho * T


def build_qubo(problem: PortfolioProblem, max_qubits: int = MAX_QUBITS) -> Qubo:
    """QUBO over bits ``x[t, n, q]`` with ``omega_tn = sum_q 2**q x[t, n, q] / K``."""
    n_bits = count_qubits(problem)
    if n_bits > max_qubits:
        raise ParameterError(f"{n_bits} qubits exceeds the configured limit {max_qubits}")
    if problem.K_prime != 2**problem.N_q - 1:
        raise RangeError(
            f"cap K'={problem.K_prime} differs from the {problem.N_q}-bit encoding range {2**problem.N_q - 1}"
        )
    M, c, const = objective_matrices(problem)
    B = _weight_map(problem) / problem.K
    return Qubo.from_matrix(B.T @ M @ B, B.T @ c, const)


def decode(bits, problem: PortfolioProblem) -> Trajectory:
    x = np.asarray(bits, dtype=np.int64)
    if x.shape != (count_qubits(problem),):
        raise DimensionError(f"expected {count_qubits(problem)} bits, got {x.shape}")
    units = x.reshape(problem.n_steps, problem.n_assets, problem.N_q) @ (2 ** np.arange(problem.N_q))
    return Trajectory(units, problem.K)


def encode(traj: Trajectory, problem: PortfolioProblem) -> np.ndarray:
    h = traj.holdings
    if np.any(h > 2**problem.N_q - 1):
        raise RangeError("holding exceeds the encoding range")
    bits = (h[..., None] >> np.arange(problem.N_q)) & 1
    return bits.reshape(-1).astype(np.int8)


def estimate_moments(data: MarketData, window: int = DEFAULT_WINDOW) -> tuple[np.ndarray, np.ndarray]:
    """Trailing-window mean and sample covariance of log-returns.

    Row ``j`` describes the returns up to and including return ``j + 1``;
    before ``window`` returns exist the window expands from the start.
    """
    if window < 2:
        raise ParameterError("window must be at least 2")
    if data.n_steps <= window:
        raise DataError(f"{data.n_steps} price rows is not enough history for window {window}")
    r = np.diff(np.log(data.prices), axis=0)
    R, N = r.shape
    mu = np.zeros((R, N))
    sigma = np.zeros((R, N, N))
    for j in range(R):
        w = r[max(0, j - window + 1) : j + 1]
        mu[j] = w.mean(axis=0)
        if w.shape[0] > 1:
            d = w - mu[j]
            sigma[j] = d.T @ d / (w.shape[0] - 1)
    return mu, sigma


def problem_from_market(
    data: MarketData,
    n_steps: int,
    K: int,
    N_q: int,
    gamma: float = 1.0,
    lambda_tc: float | np.ndarray = DEFAULT_LAMBDA,
    K_prime: int | None = None,
    rho: float | None = None,
    window: int = DEFAULT_WINDOW,
) -> PortfolioProblem:
    """Problem whose ``n_steps`` decisions sit on the final ``n_steps + 1`` price rows.

    The decision at price row ``i`` uses moments of returns up to row ``i``.
    """
    mu, sigma = estimate_moments(data, window)
    if mu.shape[0] < n_steps + 1:
        raise DataError(f"need at least {n_steps + 2} price rows for {n_steps} decision steps")
    return PortfolioProblem(
        mu=mu[-(n_steps + 1) : -1],
        sigma=sigma[-(n_steps + 1) : -1],
        gamma=gamma,
        lambda_tc=lambda_tc,
        K=K,
        N_q=N_q,
        K_prime=K_prime,
        rho=rho,
    )


def portfolio_returns(traj: Trajectory, data: MarketData) -> np.ndarray:
    """Realised per-period returns; the trajectory covers the final ``T + 1`` price rows."""
    T = traj.holdings.shape[0]
    if data.n_steps < T + 1:
        raise DataError(f"trajectory of {T} steps needs {T + 1} price rows, data has {data.n_steps}")
    if traj.holdings.shape[1] != data.n_assets:
        raise DimensionError("trajectory and data disagree on the number of assets")
    p = data.prices[-(T + 1) :]
    growth = p[1:] / p[:-1] - 1.0
    return np.einsum("tn,tn->t", traj.as_weights, growth)


def sharpe_ratio(traj: Trajectory, data: MarketData, periods_per_year: int = PERIODS_PER_YEAR) -> float:
    """Annualised Sharpe ratio with zero risk-free rate and sample (T-1) volatility.

    Zero volatility gives ``+/-inf`` following the mean's sign (``nan`` for a zero
    mean) and emits :class:`DegenerateSharpeWarning`.
    """
    r = portfolio_returns(traj, data)
    mean = float(r.mean())
    std = float(r.std(ddof=1)) if r.size > 1 else 0.0
    if std == 0.0 or not np.isfinite(std):
        warnings.warn("zero return volatility; Sharpe ratio is degenerate", DegenerateSharpeWarning, stacklevel=2)
        return math.copysign(math.inf, mean) if mean != 0.0 else math.nan
    return mean / std * math.sqrt(periods_per_year)


def _month_ends(start: dt.date, count: int) -> list[str]:
    out = []
    y, m = start.year, start.month
    for _ in range(count):
        d = dt.date(y, m, calendar.monthrange(y, m)[1])
        while d.weekday() >= 5:
            d -= dt.timedelta(days=1)
        out.append(d.isoformat())
        m += 1
        if m > 12:
            y, m = y + 1, 1
    return out


def synthetic_prices(n_assets: int, n_rows: int, seed: int) -> MarketData:
    """One-factor geometric random walk on business-month ends."""
    rng = np.random.default_rng(seed)
    drift = rng.normal(0.008, 0.01, n_assets)
    vol = rng.uniform(0.03, 0.08, n_assets)
    beta = rng.uniform(0.2, 0.8, n_assets)
    factor = rng.normal(size=(n_rows - 1, 1))
    idio = rng.normal(size=(n_rows - 1, n_assets))
    shocks = beta * factor + np.sqrt(1 - beta**2) * idio
    logret = drift - 0.5 * vol**2 + vol * shocks
    start = rng.uniform(20.0, 200.0, n_assets)
    paths = start * np.exp(np.vstack([np.zeros(n_assets), np.cumsum(logret, axis=0)]))
    return MarketData(paths, tuple(_month_ends(dt.date(2016, 1, 1), n_rows)), tuple(f"ASSET{i:02d}" for i in range(n_assets)))


def generate_instance(
    size_label: str,
    seed: int = 0,
    gamma: float = 1.0,
    lambda_tc: float = DEFAULT_LAMBDA,
    rho: float | None = None,
    window: int = DEFAULT_WINDOW,
) -> tuple[MarketData, PortfolioProblem]:
    """Synthetic market plus a problem with the benchmark dimensions of ``size_label``."""
    try:
        spec = SIZES[size_label]
    except KeyError:
        raise ParameterError(f"unknown size {size_label!r}; valid: {', '.join(SIZES)}") from None
    data = synthetic_prices(spec.n_assets, window + spec.n_steps + 1, seed)
    problem = problem_from_market(
        data, spec.n_steps, spec.budget, spec.n_bits, gamma, lambda_tc, spec.cap, rho, window
    )
    return data, problem


# --- CSV I/O -------------------------------------------------------------------


def write_prices(data: MarketData, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["date", *data.assets])
        for ts, row in zip(data.timestamps, data.prices):
            w.writerow([ts, *(repr(float(v)) for v in row)])


def read_prices(path) -> MarketData:
    """Parse a price CSV: header ``date,<assets...>``, one ISO-dated row per step."""
    path = Path(path)
    try:
        fh = open(path, newline="")
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc}") from None
    with fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DataError(f"{path}: empty file") from None
        if len(header) < 2:
            raise DataError(f"{path}: header needs a date column and at least one asset")
        rows: dict[str, list[float]] = {}
        for line_no, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != len(header):
                raise DataError(f"{path}:{line_no}: expected {len(header)} fields, got {len(row)}")
            try:
                date = dt.date.fromisoformat(row[0].strip()).isoformat()
                values = [float(c) for c in row[1:]]
            except ValueError as exc:
                raise DataError(f"{path}:{line_no}: {exc}") from None
            if date in rows:
                raise DataError(f"{path}:{line_no}: duplicate date {date}")
            bad = [header[i + 1] for i, v in enumerate(values) if not v > 0]
            if bad:
                raise DataError(f"{path}:{line_no}: non-positive price for {', '.join(bad)} on {date}")
            rows[date] = values
    dates = sorted(rows)
    if len(dates) < 2:
        raise DataError(f"{path}: need at least two rows")
    return MarketData(np.array([rows[d] for d in dates]), tuple(dates), tuple(h.strip() for h in header[1:]))


def write_trajectory(traj: Trajectory, assets: Sequence[str], path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["step", *assets])
        for t, row in enumerate(traj.holdings):
            w.writerow([t, *(int(v) for v in row)])
