"""Cross-holding financial networks: equilibrium values, residual objective, crash detection.

Market values satisfy ``v = A (D p - b(v))`` where ``b_i(v) = b_drop_i`` when
``v_i < v_crit_i`` (strict) and 0 otherwise.
"""

from __future__ import annotations

import csv
import itertools
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from finq.errors import DataError, DimensionError, ParameterError, RangeError
from finq.qubo import BinaryPolynomial, IntegerEncoding, default_penalty_weight, quadratize
from finq.solvers import SolverHandle, solve


def _frozen(a) -> np.ndarray:
    a = np.array(a, dtype=float)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class FinancialNetwork:
    """Institutions holding assets (``D``) and each other (``A``)."""

    D: np.ndarray
    A: np.ndarray
    p: np.ndarray
    v_crit: np.ndarray
    b_drop: np.ndarray
    institutions: tuple[str, ...] = ()
    assets: tuple[str, ...] = ()

    def __post_init__(self):
        D, A, p = _frozen(self.D), _frozen(self.A), _frozen(self.p)
        v_crit, b_drop = _frozen(self.v_crit), _frozen(self.b_drop)
        if D.ndim != 2:
            raise DimensionError("D must be an institutions x assets matrix")
        n, m = D.shape
        if A.shape != (n, n):
            raise DimensionError(f"A has shape {A.shape}, expected {(n, n)}")
        if p.shape != (m,):
            raise DimensionError(f"p has shape {p.shape}, expected ({m},)")
        if v_crit.shape != (n,) or b_drop.shape != (n,):
            raise DimensionError("v_crit and b_drop need one entry per institution")
        if np.any(D < 0) or np.any(D > 1):
            raise DataError("ownership shares must lie in [0, 1]")
        over = np.flatnonzero(D.sum(axis=0) > 1 + 1e-12)
        if over.size:
            raise DataError(f"ownership of asset {over[0]} sums above 1")
        if np.any(b_drop < 0):
            raise DataError("b_drop must be nonnegative")
        if not np.all(np.isfinite(v_crit)):
            raise DataError("v_crit must be finite")
        if not (np.all(np.isfinite(A)) and np.all(np.isfinite(p))):
            raise DataError("A and p must be finite")
        insts = tuple(self.institutions) or tuple(f"I{i}" for i in range(n))
        assets = tuple(self.assets) or tuple(f"P{j}" for j in range(m))
        if len(insts) != n or len(assets) != m:
            raise DimensionError("name lists do not match matrix dimensions")
        for name, val in (("D", D), ("A", A), ("p", p), ("v_crit", v_crit), ("b_drop", b_drop)):
            object.__setattr__(self, name, val)
        object.__setattr__(self, "institutions", insts)
        object.__setattr__(self, "assets", assets)

    @property
    def n_institutions(self) -> int:
        return self.D.shape[0]

    @property
    def n_assets(self) -> int:
        return self.D.shape[1]

    @property
    def base_values(self) -> np.ndarray:
        """All-solvent values ``A D p``."""
        return self.A @ (self.D @ self.p)

    def with_prices(self, p) -> FinancialNetwork:
        return FinancialNetwork(self.D, self.A, p, self.v_crit, self.b_drop, self.institutions, self.assets)


@dataclass(frozen=True)
class EquilibriumResult:
    v: np.ndarray
    failed: np.ndarray
    residual: float
    iterations: int
    converged: bool = True

    @property
    def failed_indices(self) -> list[int]:
        return [int(i) for i in np.flatnonzero(self.failed)]


def _check_values(v, net: FinancialNetwork) -> np.ndarray:
    v = np.asarray(v, dtype=float)
    if v.shape != (net.n_institutions,):
        raise DimensionError(f"value vector has shape {v.shape}, expected ({net.n_institutions},)")
    return v


def step_drop(v, net: FinancialNetwork) -> np.ndarray:
    v = _check_values(v, net)
    return np.where(v < net.v_crit, net.b_drop, 0.0)


def stability_map(v, net: FinancialNetwork) -> np.ndarray:
    return net.A @ (net.D @ net.p - step_drop(v, net))


def residual(v, net: FinancialNetwork) -> float:
    """Squared residual ``|v - A (D p - b(v))|^2``."""
    v = _check_values(v, net)
    r = v - stability_map(v, net)
    return float(r @ r)


def _result(v, net, iterations, converged) -> EquilibriumResult:
    v = _frozen(v)
    failed = v < net.v_crit
    failed.setflags(write=False)
    return EquilibriumResult(v, failed, residual(v, net), iterations, converged)


def fixed_point_equilibrium(
    net: FinancialNetwork, v0=None, tol: float = 1e-10, max_iter: int = 1000
) -> EquilibriumResult:
    """Iterate ``v <- A (D p - b(v))`` from ``v0`` (default: the all-solvent ``A D p``).

    Non-convergence is not an error: the lowest-residual iterate is returned
    with ``iterations == max_iter`` and ``converged`` False.
    """
    if tol <= 0:
        raise ParameterError("tol must be positive")
    if max_iter < 1:
        raise ParameterError("max_iter must be >= 1")
    v = net.base_values if v0 is None else _check_values(v0, net).copy()
    best_v, best_r = v, residual(v, net)
    for it in range(1, max_iter + 1):
        nxt = stability_map(v, net)
        if np.max(np.abs(nxt - v), initial=0.0) < tol:
            return _result(nxt, net, it, True)
        v = nxt
        r = residual(v, net)
        if r < best_r:
            best_v, best_r = v, r
    return _result(best_v, net, max_iter, False)


def enumerate_equilibria(net: FinancialNetwork) -> list[EquilibriumResult]:
    """Every self-consistent failure set, by solving the linear system for each of the ``2**n`` sets."""
    n = net.n_institutions
    if n > 20:
        raise ParameterError("failure-set enumeration is limited to 20 institutions")
    base = net.D @ net.p
    out = []
    for mask in itertools.product((False, True), repeat=n):
        F = np.array(mask)
        v = net.A @ (base - np.where(F, net.b_drop, 0.0))
        if np.array_equal(v < net.v_crit, F):
            out.append(_result(v, net, 0, True))
    return out


def best_equilibrium(net: FinancialNetwork) -> EquilibriumResult | None:
    """Self-consistent equilibrium with the largest total value (ties: fewest failures)."""
    eqs = enumerate_equilibria(net)
    if not eqs:
        return None
    return max(eqs, key=lambda e: (float(e.v.sum()), -int(e.failed.sum())))


# --- QUBO formulation ---------------------------------------------------------


def default_encoding(net: FinancialNetwork, num_bits: int, headroom: float = 1.0) -> IntegerEncoding:
    """Scale so the top grid point equals ``headroom * max(A D p)``."""
    top = float(np.max(net.base_values, initial=0.0)) * headroom
    return IntegerEncoding(num_bits, top / (2**num_bits - 1) if top > 0 else 1.0)


@dataclass(frozen=True)
class CrashLayout:
    """Bit positions: values first (``num_bits`` per institution), then one indicator per droppable institution."""

    encoding: IntegerEncoding
    n_institutions: int
    indicators: tuple[int, ...] = field(default=())

    @property
    def num_value_bits(self) -> int:
        return self.n_institutions * self.encoding.num_bits

    @property
    def num_vars(self) -> int:
        return self.num_value_bits + len(self.indicators)

    def value_bits(self, i: int) -> range:
        q = self.encoding.num_bits
        return range(i * q, (i + 1) * q)

    def indicator_bit(self, i: int) -> int:
        return self.num_value_bits + self.indicators.index(i)

    def decode(self, bits) -> np.ndarray:
        x = np.asarray(bits)
        return np.array([self.encoding.decode(x[list(self.value_bits(i))]) for i in range(self.n_institutions)])


def crash_layout(net: FinancialNetwork, enc: IntegerEncoding) -> CrashLayout:
    return CrashLayout(enc, net.n_institutions, tuple(int(i) for i in np.flatnonzero(net.b_drop > 0)))


def _threshold_polynomial(layout: CrashLayout, i: int, v_crit: float) -> BinaryPolynomial:
    """Multilinear ``[scale * k_i < v_crit]`` over the value bits of institution ``i``."""
    enc = layout.encoding
    bits = list(layout.value_bits(i))
    q = enc.num_bits
    table = np.array([1.0 if enc.scale * k < v_crit else 0.0 for k in range(2**q)])
    # Moebius transform: coefficient of subset S = sum over T subset S of (-1)^{|S|-|T|} f(T)
    coeff = table.copy()
    for b in range(q):
        for k in range(2**q):
            if k >> b & 1:
                coeff[k] -= coeff[k ^ (1 << b)]
    terms = {}
    for k in range(2**q):
        if coeff[k] != 0.0:
            terms[tuple(bits[b] for b in range(q) if k >> b & 1)] = float(coeff[k])
    return BinaryPolynomial(terms, layout.num_vars)


def equilibrium_qubo(
    net: FinancialNetwork, enc: IntegerEncoding, penalty: float | None = None
) -> BinaryPolynomial:
    """Residual objective over encoded values plus failure indicators.

    Each institution with a nonzero drop gets an indicator ``s_i``. The term
    ``P (s_i + f_i - 2 s_i f_i)`` with ``f_i = [v_i < v_crit_i]`` written as an
    exact multilinear polynomial of the value bits is zero iff ``s_i = f_i``;
    ``P`` defaults to the certified bound on the residual part, so the
    minimum equals the grid-restricted minimum of the residual.
    """
    need = float(np.max(net.base_values, initial=0.0))
    have = enc.scale * enc.max_value
    if have < need * (1 - 1e-12):
        raise RangeError(
            f"encoding tops out at {have:.6g} but values reach {need:.6g}; "
            f"need scale >= {need / enc.max_value:.6g} or more bits"
        )
    layout = crash_layout(net, enc)
    nv = layout.num_vars
    c = net.base_values
    objective = BinaryPolynomial({}, nv)
    for i in range(net.n_institutions):
        r = enc.as_polynomial(layout.value_bits(i).start, nv) - float(c[i])
        for j in layout.indicators:
            a = float(net.A[i, j] * net.b_drop[j])
            if a != 0.0:
                r = r + BinaryPolynomial.variable(layout.indicator_bit(j), nv) * a
        objective = objective + r * r
    if not layout.indicators:
        return objective
    weight = default_penalty_weight(objective) if penalty is None else float(penalty)
    if weight <= 0:
        raise ParameterError("penalty weight must be positive")
    for i in layout.indicators:
        s = BinaryPolynomial.variable(layout.indicator_bit(i), nv)
        f = _threshold_polynomial(layout, i, float(net.v_crit[i]))
        objective = objective + (s + f - s * f * 2.0) * weight
    return objective


def grid_minimum(net: FinancialNetwork, enc: IntegerEncoding) -> tuple[float, np.ndarray]:
    """Direct minimum of the residual over every grid vector (first minimiser in enumeration order)."""
    grid = enc.scale * np.arange(enc.max_value + 1)
    best, arg = np.inf, None
    for v in itertools.product(grid, repeat=net.n_institutions):
        r = residual(np.array(v), net)
        if r < best:
            best, arg = r, np.array(v)
    return best, arg


def qubo_equilibrium(
    net: FinancialNetwork, enc: IntegerEncoding, solver: SolverHandle | str = "exhaustive"
) -> tuple[EquilibriumResult, dict]:
    """Minimise the quadratized residual objective and decode the ground state."""
    poly = equilibrium_qubo(net, enc)
    if poly.degree > 2:
        qubo, n_anc = quadratize(poly)
    else:
        qubo, n_anc = poly.to_qubo(), 0
    res = solve(qubo, solver)
    layout = crash_layout(net, enc)
    v = layout.decode(res.best_bits)
    info = {
        "qubo_vars": qubo.num_vars,
        "ancillas": n_anc,
        "ground_cost": res.best_cost,
        "solver": res.diagnostics,
    }
    return _result(v, net, 0, True), info


def shock_and_detect(
    net: FinancialNetwork,
    price_delta,
    solver: SolverHandle | str | None = None,
    num_bits: int = 2,
    tol: float = 1e-10,
    max_iter: int = 1000,
) -> tuple[EquilibriumResult, EquilibriumResult, list[int]]:
    """Equilibria before and after shifting prices by ``price_delta``.

    ``solver=None`` uses the fixed-point iteration; otherwise the QUBO route runs
    with one encoding (sized to cover both price vectors) for both equilibria.
    """
    delta = np.asarray(price_delta, dtype=float)
    if delta.shape != (net.n_assets,):
        raise DimensionError(f"price delta has shape {delta.shape}, expected ({net.n_assets},)")
    shocked = net.with_prices(net.p + delta)
    if solver is None:
        before = fixed_point_equilibrium(net, tol=tol, max_iter=max_iter)
        after = fixed_point_equilibrium(shocked, tol=tol, max_iter=max_iter)
    else:
        top = max(float(np.max(net.base_values, initial=0.0)), float(np.max(shocked.base_values, initial=0.0)))
        enc = IntegerEncoding(num_bits, top / (2**num_bits - 1) if top > 0 else 1.0)
        before, _ = qubo_equilibrium(net, enc, solver)
        after, _ = qubo_equilibrium(shocked, enc, solver)
    newly = [int(i) for i in np.flatnonzero(after.failed & ~before.failed)]
    return before, after, newly


# --- CSV I/O -------------------------------------------------------------------


def _rows(path, header: Sequence[str]):
    path = Path(path)
    try:
        fh = open(path, newline="")
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc}") from None
    with fh:
        reader = csv.reader(fh)
        got = [h.strip() for h in next(reader, [])]
        if got != list(header):
            raise DataError(f"{path}: expected header {','.join(header)}, got {','.join(got)}")
        for line_no, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != len(header):
                raise DataError(f"{path}:{line_no}: expected {len(header)} fields, got {len(row)}")
            yield path, line_no, [c.strip() for c in row]


def _float(path, line_no, text):
    try:
        return float(text)
    except ValueError:
        raise DataError(f"{path}:{line_no}: not a number: {text!r}") from None


def _index(path, line_no, names, key, kind):
    try:
        return names.index(key)
    except ValueError:
        raise DataError(f"{path}:{line_no}: unknown {kind} {key!r}") from None


def load_network(institutions, ownership, prices, dependency=None) -> FinancialNetwork:
    """Read ``institutions.csv`` (inst,v_crit,b_drop), ``ownership.csv`` (inst,asset,share),
    ``prices.csv`` (asset,price) and optionally ``dependency.csv`` (inst,counterparty,weight).

    Without a dependency file ``A`` is the identity.
    """
    insts, v_crit, b_drop = [], [], []
    for path, ln, (name, vc, bd) in _rows(institutions, ("inst", "v_crit", "b_drop")):
        if name in insts:
            raise DataError(f"{path}:{ln}: duplicate institution {name!r}")
        insts.append(name)
        v_crit.append(_float(path, ln, vc))
        b_drop.append(_float(path, ln, bd))
    assets, p = [], []
    for path, ln, (name, price) in _rows(prices, ("asset", "price")):
        if name in assets:
            raise DataError(f"{path}:{ln}: duplicate asset {name!r}")
        assets.append(name)
        p.append(_float(path, ln, price))
    D = np.zeros((len(insts), len(assets)))
    for path, ln, (inst, asset, share) in _rows(ownership, ("inst", "asset", "share")):
        D[_index(path, ln, insts, inst, "institution"), _index(path, ln, assets, asset, "asset")] = _float(
            path, ln, share
        )
    if dependency is None:
        A = np.eye(len(insts))
    else:
        A = np.zeros((len(insts), len(insts)))
        for path, ln, (a, b, w) in _rows(dependency, ("inst", "counterparty", "weight")):
            A[_index(path, ln, insts, a, "institution"), _index(path, ln, insts, b, "institution")] = _float(
                path, ln, w
            )
    return FinancialNetwork(D, A, p, v_crit, b_drop, tuple(insts), tuple(assets))


def load_perturbation(path, net: FinancialNetwork) -> np.ndarray:
    """Read ``asset,delta`` rows; unlisted assets are unchanged."""
    delta = np.zeros(net.n_assets)
    for p, ln, (asset, d) in _rows(path, ("asset", "delta")):
        delta[_index(p, ln, list(net.assets), asset, "asset")] += _float(p, ln, d)
    return delta


def save_network(net: FinancialNetwork, directory) -> dict[str, Path]:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    paths = {k: directory / f"{k}.csv" for k in ("institutions", "ownership", "prices", "dependency")}

    def write(path, header, rows):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(header)
            w.writerows(rows)

    write(paths["institutions"], ("inst", "v_crit", "b_drop"),
          [(n, repr(float(a)), repr(float(b))) for n, a, b in zip(net.institutions, net.v_crit, net.b_drop)])
    write(paths["prices"], ("asset", "price"), [(n, repr(float(x))) for n, x in zip(net.assets, net.p)])
    write(paths["ownership"], ("inst", "asset", "share"),
          [(net.institutions[i], net.assets[j], repr(float(net.D[i, j]))) for i, j in zip(*np.nonzero(net.D))])
    write(paths["dependency"], ("inst", "counterparty", "weight"),
          [(net.institutions[i], net.institutions[j], repr(float(net.A[i, j]))) for i, j in zip(*np.nonzero(net.A))])
    return paths


def cross_holding_network(C, D, p, v_crit, b_drop, **names) -> FinancialNetwork:
    """Network from a cross-holding matrix ``C`` (column sums < 1), using ``A = C_hat (I - C)^-1``
    where ``C_hat`` holds the outside-owned fractions ``1 - sum_i C_ij`` on its diagonal."""
    C = np.asarray(C, dtype=float)
    if np.any(np.diag(C) != 0):
        raise DataError("cross-holding matrix must have a zero diagonal")
    colsum = C.sum(axis=0)
    if np.any(colsum >= 1):
        raise DataError("cross-holding column sums must be below 1")
    A = np.diag(1 - colsum) @ np.linalg.inv(np.eye(C.shape[0]) - C)
    return FinancialNetwork(D, A, p, v_crit, b_drop, **names)


def random_network(rng: np.random.Generator, n: int, m: int | None = None, drop: bool = True) -> FinancialNetwork:
    """Small random cross-holding network for tests and demos."""
    m = m or n
    C = rng.uniform(0, 0.3, size=(n, n)) * (rng.random((n, n)) < 0.7)
    np.fill_diagonal(C, 0.0)
    C *= 0.6 / np.maximum(C.sum(axis=0), 0.6)
    D = rng.dirichlet(np.ones(n), size=m).T * rng.uniform(0.6, 1.0, size=m)
    p = rng.uniform(0.5, 2.0, size=m)
    base = cross_holding_network(C, D, p, np.zeros(n), np.zeros(n)).base_values
    v_crit = base * rng.uniform(0.5, 1.1, size=n)
    b_drop = base * rng.uniform(0.1, 0.5, size=n) if drop else np.zeros(n)
    return cross_holding_network(C, D, p, v_crit, b_drop)
