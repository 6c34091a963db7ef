"""Binary cost polynomials, QUBO instances, integer encodings and quadratization."""

from __future__ import annotations

import io
import itertools
import math
from collections import Counter
from dataclasses import dataclass
from functools import cached_property
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np
import scipy.sparse as sp

from finq.errors import ConfigurationError, DataError, DimensionError, ParameterError, RangeError

Term = tuple[int, ...]


def _normalize_key(key) -> Term:
    if isinstance(key, (int, np.integer)):
        key = (key,)
    return tuple(sorted(set(int(k) for k in key)))


def _as_bits(assignment, num_vars: int) -> np.ndarray:
    x = np.asarray(assignment)
    if x.ndim != 1 or x.shape[0] != num_vars:
        raise DimensionError(f"assignment has length {x.shape[0] if x.ndim else 0}, expected {num_vars}")
    return x.astype(np.int64)


class BinaryPolynomial:
    """Multilinear polynomial over 0/1 variables.

    Terms are keyed by sorted tuples of distinct variable indices; the empty
    tuple holds the constant. Repeated indices collapse because ``x**2 == x``.
    """

    __slots__ = ("_terms", "num_vars")

    def __init__(self, terms: Mapping | None = None, num_vars: int | None = None):
        acc: dict[Term, float] = {}
        for key, coeff in (terms or {}).items():
            k = _normalize_key(key)
            acc[k] = acc.get(k, 0.0) + float(coeff)
        acc = {k: c for k, c in acc.items() if c != 0.0}
        top = max((k[-1] + 1 for k in acc if k), default=0)
        if num_vars is None:
            num_vars = top
        elif num_vars < top:
            raise DimensionError(f"term index {top - 1} out of range for {num_vars} variables")
        if any(k and k[0] < 0 for k in acc):
            raise DimensionError("negative variable index")
        self._terms = dict(sorted(acc.items(), key=lambda kv: (len(kv[0]), kv[0])))
        self.num_vars = int(num_vars)

    @classmethod
    def variable(cls, index: int, num_vars: int | None = None) -> BinaryPolynomial:
        return cls({(index,): 1.0}, num_vars)

    @classmethod
    def constant(cls, value: float, num_vars: int = 0) -> BinaryPolynomial:
        return cls({(): value}, num_vars)

    @property
    def terms(self) -> dict[Term, float]:
        return dict(self._terms)

    @property
    def degree(self) -> int:
        return max((len(k) for k in self._terms), default=0)

    def coefficient_l1(self, include_constant: bool = False) -> float:
        return math.fsum(abs(c) for k, c in self._terms.items() if k or include_constant)

    def evaluate(self, assignment) -> float:
        x = _as_bits(assignment, self.num_vars)
        return math.fsum(c for k, c in self._terms.items() if all(x[i] for i in k))

    def __call__(self, assignment) -> float:
        return self.evaluate(assignment)

    def __eq__(self, other) -> bool:
        if not isinstance(other, BinaryPolynomial):
            return NotImplemented
        return self._terms == other._terms and self.num_vars == other.num_vars

    def __repr__(self) -> str:
        return f"BinaryPolynomial({self._terms!r}, num_vars={self.num_vars})"

    def _coerce(self, other) -> BinaryPolynomial:
        if isinstance(other, BinaryPolynomial):
            return other
        return BinaryPolynomial.constant(float(other))

    def __add__(self, other) -> BinaryPolynomial:
        other = self._coerce(other)
        acc = dict(self._terms)
        for k, c in other._terms.items():
            acc[k] = acc.get(k, 0.0) + c
        return BinaryPolynomial(acc, max(self.num_vars, other.num_vars))

    __radd__ = __add__

    def __neg__(self) -> BinaryPolynomial:
        return BinaryPolynomial({k: -c for k, c in self._terms.items()}, self.num_vars)

    def __sub__(self, other) -> BinaryPolynomial:
        return self + (-self._coerce(other))

    def __rsub__(self, other) -> BinaryPolynomial:
        return self._coerce(other) - self

    def __mul__(self, other) -> BinaryPolynomial:
        if not isinstance(other, BinaryPolynomial):
            s = float(other)
            return BinaryPolynomial({k: s * c for k, c in self._terms.items()}, self.num_vars)
        acc: dict[Term, float] = {}
        for (k1, c1), (k2, c2) in itertools.product(self._terms.items(), other._terms.items()):
            k = tuple(sorted(set(k1) | set(k2)))
            acc[k] = acc.get(k, 0.0) + c1 * c2
        return BinaryPolynomial(acc, max(self.num_vars, other.num_vars))

    __rmul__ = __mul__

    def __pow__(self, n: int) -> BinaryPolynomial:
        out = BinaryPolynomial.constant(1.0, self.num_vars)
        for _ in range(n):
            out = out * self
        return out

    def with_num_vars(self, num_vars: int) -> BinaryPolynomial:
        return BinaryPolynomial(self._terms, num_vars)

    def to_qubo(self) -> Qubo:
        if self.degree > 2:
            raise ParameterError(f"polynomial has degree {self.degree}; quadratize it first")
        linear = np.zeros(self.num_vars)
        pairs = {}
        offset = 0.0
        for k, c in self._terms.items():
            if len(k) == 0:
                offset = c
            elif len(k) == 1:
                linear[k[0]] = c
            else:
                pairs[k] = c
        return Qubo(linear, pairs, offset)


def evaluate(poly: BinaryPolynomial, assignment) -> float:
    """Exact multilinear evaluation of ``poly`` on a 0/1 assignment."""
    return poly.evaluate(assignment)


class Qubo:
    """Quadratic cost ``offset + linear @ x + sum_{i<j} c_ij x_i x_j`` over bits.

    ``pairs`` maps ``(i, j)`` with ``i < j`` to the pair coefficient. The
    :attr:`quadratic` matrix is the symmetric, zero-diagonal form with
    ``Q[i, j] = c_ij / 2`` so that ``cost(x) = offset + linear @ x + x @ Q @ x``.
    """

    def __init__(self, linear, pairs: Mapping[tuple[int, int], float] | None = None, offset: float = 0.0):
        linear = np.array(linear, dtype=float)
        linear.setflags(write=False)
        n = linear.shape[0]
        acc: dict[tuple[int, int], float] = {}
        for (i, j), c in (pairs or {}).items():
            i, j = int(i), int(j)
            if i == j:
                raise DimensionError("diagonal pair; fold it into the linear term")
            if not (0 <= i < n and 0 <= j < n):
                raise DimensionError(f"pair ({i}, {j}) out of range for {n} variables")
            key = (i, j) if i < j else (j, i)
            acc[key] = acc.get(key, 0.0) + float(c)
        self.linear = linear
        self.pairs = {k: acc[k] for k in sorted(acc) if acc[k] != 0.0}
        self.offset = float(offset)

    @classmethod
    def from_matrix(cls, matrix, linear=None, offset: float = 0.0) -> Qubo:
        """Build from ``x @ M @ x`` (any square M; its diagonal folds into the linear part)."""
        m = np.asarray(matrix, dtype=float)
        n = m.shape[0]
        lin = np.zeros(n) if linear is None else np.array(linear, dtype=float)
        lin = lin + np.diag(m)
        sym = m + m.T
        iu, ju = np.triu_indices(n, 1)
        vals = sym[iu, ju]
        nz = vals != 0.0
        pairs = dict(zip(zip(iu[nz].tolist(), ju[nz].tolist()), vals[nz].tolist()))
        return cls(lin, pairs, offset)

    @classmethod
    def zeros(cls, num_vars: int) -> Qubo:
        return cls(np.zeros(num_vars))

    @property
    def num_vars(self) -> int:
        return int(self.linear.shape[0])

    @cached_property
    def upper(self) -> np.ndarray:
        """Dense strictly upper-triangular pair-coefficient matrix."""
        u = np.zeros((self.num_vars, self.num_vars))
        for (i, j), c in self.pairs.items():
            u[i, j] = c
        u.setflags(write=False)
        return u

    @cached_property
    def coupling(self) -> np.ndarray:
        """Dense symmetric matrix holding the full pair coefficient at [i, j] and [j, i]."""
        c = self.upper + self.upper.T
        c.setflags(write=False)
        return c

    @property
    def quadratic(self) -> sp.csr_array:
        n = self.num_vars
        if not self.pairs:
            return sp.csr_array((n, n))
        ij = np.array(list(self.pairs), dtype=np.int64)
        half = np.array(list(self.pairs.values())) / 2.0
        rows = np.concatenate([ij[:, 0], ij[:, 1]])
        cols = np.concatenate([ij[:, 1], ij[:, 0]])
        return sp.csr_array((np.concatenate([half, half]), (rows, cols)), shape=(n, n))

    def cost(self, bits) -> float:
        x = _as_bits(bits, self.num_vars).astype(float)
        return float(self.offset + self.linear @ x + x @ self.upper @ x)

    def costs(self, bits: np.ndarray) -> np.ndarray:
        """Vectorised cost over the rows of a ``(m, n)`` 0/1 array."""
        x = np.asarray(bits, dtype=float)
        return self.offset + x @ self.linear + np.einsum("ij,ij->i", x @ self.upper, x)

    def coefficient_l1(self) -> float:
        return float(np.abs(self.linear).sum() + sum(abs(c) for c in self.pairs.values()))

    def flip_scale(self) -> float:
        """Largest possible |energy change| of a single bit flip."""
        if self.num_vars == 0:
            return 0.0
        return float(np.max(np.abs(self.linear) + np.abs(self.coupling).sum(axis=1)))

    def to_polynomial(self) -> BinaryPolynomial:
        terms: dict = {(): self.offset}
        terms.update({(i,): c for i, c in enumerate(self.linear) if c != 0.0})
        terms.update(self.pairs)
        return BinaryPolynomial(terms, self.num_vars)

    def __eq__(self, other) -> bool:
        if not isinstance(other, Qubo):
            return NotImplemented
        return (
            self.offset == other.offset
            and np.array_equal(self.linear, other.linear)
            and self.pairs == other.pairs
        )

    def __repr__(self) -> str:
        return f"Qubo(num_vars={self.num_vars}, pairs={len(self.pairs)}, offset={self.offset!r})"


@dataclass(frozen=True)
class IntegerEncoding:
    """Little-endian binary encoding of a nonnegative integer, times ``scale``."""

    num_bits: int
    scale: float = 1.0

    def __post_init__(self):
        if self.num_bits < 1:
            raise ParameterError("an encoding needs at least one bit")

    @property
    def max_value(self) -> int:
        return 2**self.num_bits - 1

    @property
    def weights(self) -> np.ndarray:
        return 2.0 ** np.arange(self.num_bits)

    def decode(self, bits) -> float:
        b = np.asarray(bits)
        if b.shape != (self.num_bits,):
            raise DimensionError(f"expected {self.num_bits} bits, got shape {b.shape}")
        return self.scale * int(sum(int(v) << q for q, v in enumerate(b)))

    def as_polynomial(self, first_index: int, num_vars: int | None = None) -> BinaryPolynomial:
        terms = {(first_index + q,): self.scale * 2.0**q for q in range(self.num_bits)}
        return BinaryPolynomial(terms, num_vars)


def encode_integer(value: int, enc: IntegerEncoding) -> np.ndarray:
    value = int(value)
    if not 0 <= value <= enc.max_value:
        raise RangeError(f"value {value} outside [0, {enc.max_value}] for {enc.num_bits} bits")
    return np.array([(value >> q) & 1 for q in range(enc.num_bits)], dtype=np.int8)


class IntegerPolynomial:
    """Polynomial over integer variables; monomial keys list variable indices with repetition."""

    def __init__(self, terms: Mapping[Iterable[int], float], num_vars: int | None = None):
        acc: dict[Term, float] = {}
        for key, c in terms.items():
            k = tuple(sorted(int(i) for i in ((key,) if isinstance(key, int) else key)))
            acc[k] = acc.get(k, 0.0) + float(c)
        self.terms = {k: c for k, c in sorted(acc.items()) if c != 0.0}
        top = max((k[-1] + 1 for k in self.terms if k), default=0)
        self.num_vars = top if num_vars is None else int(num_vars)

    def evaluate(self, values: Sequence[float]) -> float:
        if len(values) != self.num_vars:
            raise DimensionError(f"expected {self.num_vars} values, got {len(values)}")
        return math.fsum(c * math.prod(values[i] for i in k) for k, c in self.terms.items())


def substitute_encoding(
    poly: IntegerPolynomial, encodings: Sequence[IntegerEncoding] | Mapping[int, IntegerEncoding]
) -> BinaryPolynomial:
    """Replace each integer variable by its binary expansion.

    Variable ``i`` occupies a contiguous block of bits, blocks laid out in
    variable order.
    """
    if isinstance(encodings, Mapping):
        missing = [i for i in range(poly.num_vars) if i not in encodings]
        if missing:
            raise ConfigurationError(f"no encoding for integer variable(s) {missing}")
        encs = [encodings[i] for i in range(poly.num_vars)]
    else:
        encs = list(encodings)
        if len(encs) < poly.num_vars:
            raise ConfigurationError(f"no encoding for integer variable(s) {list(range(len(encs), poly.num_vars))}")
    starts = np.concatenate([[0], np.cumsum([e.num_bits for e in encs])]).astype(int)
    total = int(starts[-1])
    expansions = [e.as_polynomial(int(starts[i]), total) for i, e in enumerate(encs)]
    out = BinaryPolynomial({}, total)
    for key, c in poly.terms.items():
        mono = BinaryPolynomial.constant(c, total)
        for i in key:
            mono = mono * expansions[i]
        out = out + mono
    return out


def default_penalty_weight(objective: Qubo | BinaryPolynomial) -> float:
    """``2 * sum|coefficients| + 1``: any violation outweighs the whole objective range."""
    return 2.0 * objective.coefficient_l1() + 1.0


def add_penalty_equality(qubo: Qubo, coeffs, target: float, weight: float | None = None) -> Qubo:
    """Return ``qubo`` plus ``weight * (coeffs @ x - target)**2`` in QUBO form."""
    a = np.asarray(coeffs, dtype=float)
    if a.shape != (qubo.num_vars,):
        raise DimensionError(f"coefficient vector has shape {a.shape}, expected ({qubo.num_vars},)")
    if weight is None:
        weight = default_penalty_weight(qubo)
    if not weight > 0:
        raise ParameterError(f"penalty weight must be positive, got {weight}")
    w = float(weight)
    linear = qubo.linear + w * (a * a - 2.0 * target * a)
    pairs = dict(qubo.pairs)
    nz = np.flatnonzero(a)
    for i, j in itertools.combinations(nz.tolist(), 2):
        pairs[(i, j)] = pairs.get((i, j), 0.0) + 2.0 * w * a[i] * a[j]
    return Qubo(linear, pairs, qubo.offset + w * target * target)


def quadratize(poly: BinaryPolynomial, penalty: float | None = None) -> tuple[Qubo, int]:
    """Reduce ``poly`` to a QUBO by pair substitution.

    Each step picks the variable pair occurring in the most terms of degree
    three or more (ties go to the smallest pair), replaces it with a fresh
    ancilla ``a`` and adds ``M * (x_i x_j - 2 x_i a - 2 x_j a + 3 a)``, which
    is zero exactly when ``a == x_i x_j`` and at least ``M`` otherwise. With
    ``M`` above the coefficient mass of the current polynomial, minimising
    over the ancillas recovers ``poly`` on every original assignment.
    Ancillas are appended after the original variables.
    """
    if poly.degree <= 2:
        return poly.to_qubo(), 0
    terms = poly.terms
    n = poly.num_vars
    n_anc = 0
    while True:
        counts: Counter = Counter()
        for k in terms:
            if len(k) > 2:
                counts.update(itertools.combinations(k, 2))
        if not counts:
            break
        best = max(counts.values())
        i, j = min(p for p, c in counts.items() if c == best)
        m = penalty if penalty is not None else 2.0 * math.fsum(abs(c) for t, c in terms.items() if t) + 1.0
        a = n + n_anc
        n_anc += 1
        new: dict[Term, float] = {}
        for k, c in terms.items():
            if len(k) > 2 and i in k and j in k:
                k = tuple(sorted([v for v in k if v not in (i, j)] + [a]))
            new[k] = new.get(k, 0.0) + c
        for k, c in (((i, j), m), ((i, a), -2 * m), ((j, a), -2 * m), ((a,), 3 * m)):
            new[k] = new.get(k, 0.0) + c
        terms = new
    return BinaryPolynomial(terms, n + n_anc).to_qubo(), n_anc


# --- text serialisation -------------------------------------------------------


def dumps(qubo: Qubo) -> str:
    """One term per line: ``i i c`` for linear, ``i j c`` (i < j) for pairs."""
    buf = io.StringIO()
    buf.write(f"# offset {qubo.offset:.17g}\n")
    buf.write(f"# num_vars {qubo.num_vars}\n")
    for i, c in enumerate(qubo.linear):
        if c != 0.0:
            buf.write(f"{i} {i} {c:.17g}\n")
    for (i, j), c in qubo.pairs.items():
        buf.write(f"{i} {j} {c:.17g}\n")
    return buf.getvalue()


def loads(text: str) -> Qubo:
    offset = 0.0
    num_vars = None
    lin: dict[int, float] = {}
    pairs: dict[tuple[int, int], float] = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.strip()
        if not line:
            continue
        if line.startswith("#"):
            parts = line[1:].split()
            if len(parts) == 2 and parts[0] == "offset":
                offset = float(parts[1])
            elif len(parts) == 2 and parts[0] == "num_vars":
                num_vars = int(parts[1])
            continue
        parts = line.split()
        if len(parts) != 3:
            raise DataError(f"line {lineno}: expected 'i j coeff', got {raw!r}")
        try:
            i, j, c = int(parts[0]), int(parts[1]), float(parts[2])
        except ValueError as exc:
            raise DataError(f"line {lineno}: {exc}") from None
        if i == j:
            lin[i] = lin.get(i, 0.0) + c
        else:
            key = (min(i, j), max(i, j))
            pairs[key] = pairs.get(key, 0.0) + c
    top = max([i + 1 for i in lin] + [j + 1 for _, j in pairs] + [0])
    n = top if num_vars is None else num_vars
    linear = np.zeros(n)
    for i, c in lin.items():
        linear[i] = c
    return Qubo(linear, pairs, offset)


def save(qubo: Qubo, path) -> None:
    Path(path).write_text(dumps(qubo))


def load(path) -> Qubo:
    return loads(Path(path).read_text())
