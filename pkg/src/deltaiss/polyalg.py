"""Polynomial algebra over dense real coefficients.

Monomials are exponent tuples. A :class:`MonomialDictionary` is an ordered,
graded-lex sorted set of monomials of degree >= 1, and a :class:`PolyMatrix`
maps exponent tuples (the all-zero tuple is the constant term) to coefficient
matrices.
"""

from __future__ import annotations

import itertools
import json
from dataclasses import dataclass
from typing import Iterable, Mapping, Sequence

import numpy as np

Exponents = tuple[int, ...]


class DimensionMismatch(ValueError):
    pass


def grlex_key(exponents: Sequence[int]) -> tuple:
    """Sort key: lower degree first, then x1 > x2 > ... within a degree."""
    return (sum(exponents), tuple(-e for e in exponents))


def monomials_of_degree(n: int, d: int) -> list[Exponents]:
    out = []
    for combo in itertools.combinations_with_replacement(range(n), d):
        e = [0] * n
        for i in combo:
            e[i] += 1
        out.append(tuple(e))
    return sorted(out, key=grlex_key)


def format_monomial(exponents: Sequence[int]) -> str:
    parts = []
    for i, e in enumerate(exponents):
        if e == 1:
            parts.append(f"x{i + 1}")
        elif e > 1:
            parts.append(f"x{i + 1}^{e}")
    return "*".join(parts) if parts else "1"


@dataclass(frozen=True)
class MonomialDictionary:
    """Ordered monomial vector F(x) with F(0) = 0."""

    n: int
    entries: tuple[Exponents, ...]

    def __post_init__(self):
        if self.n < 1:
            raise ValueError("state dimension must be >= 1")
        entries = tuple(tuple(int(v) for v in e) for e in self.entries)
        for e in entries:
            if len(e) != self.n:
                raise DimensionMismatch(
                    f"exponent vector {e} has length {len(e)}, expected {self.n}")
            if any(v < 0 for v in e):
                raise ValueError(f"negative exponent in {e}")
            if sum(e) < 1:
                raise ValueError("dictionary entries must have degree >= 1 so that F(0) = 0")
        if len(set(entries)) != len(entries):
            raise ValueError("dictionary entries must be pairwise distinct")
        object.__setattr__(self, "entries", tuple(sorted(entries, key=grlex_key)))

    @classmethod
    def from_list(cls, n: int, entries: Iterable[Sequence[int]]) -> "MonomialDictionary":
        return cls(n, tuple(tuple(e) for e in entries))

    @property
    def N(self) -> int:
        return len(self.entries)

    @property
    def max_degree(self) -> int:
        return max(sum(e) for e in self.entries)

    @property
    def exponent_array(self) -> np.ndarray:
        return np.array(self.entries, dtype=int).reshape(self.N, self.n)

    def __len__(self) -> int:
        return self.N

    def labels(self) -> list[str]:
        return [format_monomial(e) for e in self.entries]

    def to_json(self) -> str:
        return json.dumps([list(e) for e in self.entries])

    @classmethod
    def from_json(cls, text: str) -> "MonomialDictionary":
        data = json.loads(text)
        if not data:
            raise ValueError("empty dictionary")
        return cls.from_list(len(data[0]), data)


def enumerate_monomials(n: int, d_min: int, d_max: int) -> MonomialDictionary:
    """All monomials in ``n`` variables with total degree in ``[d_min, d_max]``."""
    if n < 1:
        raise ValueError("n must be >= 1")
    if not 1 <= d_min <= d_max:
        raise ValueError(f"invalid degree range [{d_min}, {d_max}]; need 1 <= d_min <= d_max")
    entries = []
    for d in range(d_min, d_max + 1):
        entries.extend(monomials_of_degree(n, d))
    return MonomialDictionary(n, tuple(entries))


def evaluate_dictionary(dictionary: MonomialDictionary, point) -> np.ndarray:
    """F(point); accepts a single point of shape (n,) or a batch of shape (n, T)."""
    point = np.asarray(point, dtype=float)
    if point.shape[0] != dictionary.n:
        raise DimensionMismatch(
            f"point has leading dimension {point.shape[0]}, dictionary has n={dictionary.n}")
    exps = dictionary.exponent_array
    if point.ndim == 1:
        return np.prod(point[None, :] ** exps, axis=1)
    # (N, n, T) -> (N, T)
    return np.prod(point[None, :, :] ** exps[:, :, None], axis=1)


class PolyMatrix:
    """Matrix-valued polynomial ``sum_alpha C_alpha x^alpha``.

    ``terms`` maps exponent tuples to ``rows x cols`` coefficient arrays.
    Exactly-zero coefficient blocks are dropped on construction.
    """

    __slots__ = ("n", "rows", "cols", "_terms")

    def __init__(self, n: int, rows: int, cols: int,
                 terms: Mapping[Sequence[int], np.ndarray] | None = None):
        self.n = int(n)
        self.rows = int(rows)
        self.cols = int(cols)
        clean: dict[Exponents, np.ndarray] = {}
        for alpha, coef in (terms or {}).items():
            alpha = tuple(int(a) for a in alpha)
            if len(alpha) != self.n:
                raise DimensionMismatch(f"exponent {alpha} has length {len(alpha)}, expected {n}")
            coef = np.array(coef, dtype=float).reshape(self.rows, self.cols)
            if alpha in clean:
                coef = clean[alpha] + coef
            clean[alpha] = coef
        self._terms = {a: c for a, c in sorted(clean.items(), key=lambda kv: grlex_key(kv[0]))
                       if np.any(c != 0.0)}
        for c in self._terms.values():
            c.setflags(write=False)

    @property
    def terms(self) -> dict[Exponents, np.ndarray]:
        return dict(self._terms)

    @property
    def shape(self) -> tuple[int, int]:
        return (self.rows, self.cols)

    @property
    def degree(self) -> int:
        return max((sum(a) for a in self._terms), default=0)

    @classmethod
    def constant(cls, n: int, matrix) -> "PolyMatrix":
        matrix = np.atleast_2d(np.asarray(matrix, dtype=float))
        return cls(n, matrix.shape[0], matrix.shape[1], {(0,) * n: matrix})

    @classmethod
    def state_vector(cls, n: int) -> "PolyMatrix":
        """The column polynomial x = (x1, ..., xn)."""
        terms = {}
        for i in range(n):
            e = [0] * n
            e[i] = 1
            c = np.zeros((n, 1))
            c[i, 0] = 1.0
            terms[tuple(e)] = c
        return cls(n, n, 1, terms)

    @classmethod
    def from_dictionary(cls, dictionary: MonomialDictionary) -> "PolyMatrix":
        """F(x) as an N x 1 polynomial column."""
        terms = {}
        for k, e in enumerate(dictionary.entries):
            c = np.zeros((dictionary.N, 1))
            c[k, 0] = 1.0
            terms[e] = c
        return cls(dictionary.n, dictionary.N, 1, terms)

    def coefficient(self, alpha: Sequence[int]) -> np.ndarray:
        c = self._terms.get(tuple(alpha))
        return np.zeros((self.rows, self.cols)) if c is None else c

    def evaluate(self, point) -> np.ndarray:
        point = np.asarray(point, dtype=float).reshape(self.n)
        out = np.zeros((self.rows, self.cols))
        for alpha, coef in self._terms.items():
            out += coef * np.prod(point ** np.array(alpha))
        return out

    def compiled(self):
        """Fast evaluator ``x -> matrix`` for repeated use inside integrators."""
        if not self._terms:
            zero = np.zeros((self.rows, self.cols))
            return lambda x: zero.copy()
        exps = np.array(list(self._terms), dtype=float)
        coefs = np.array(list(self._terms.values()))

        def evaluate(x):
            mono = np.prod(np.asarray(x, dtype=float)[None, :] ** exps, axis=1)
            return np.tensordot(mono, coefs, axes=1)
        return evaluate

    def __matmul__(self, other):
        if isinstance(other, PolyMatrix):
            return poly_multiply(self, other)
        return poly_multiply(self, PolyMatrix.constant(self.n, other))

    def __rmatmul__(self, other):
        return poly_multiply(PolyMatrix.constant(self.n, other), self)

    def __add__(self, other: "PolyMatrix") -> "PolyMatrix":
        _check_same_shape(self, other)
        terms = dict(self._terms)
        for a, c in other._terms.items():
            terms[a] = terms[a] + c if a in terms else c
        return PolyMatrix(self.n, self.rows, self.cols, terms)

    def __neg__(self) -> "PolyMatrix":
        return self.scale(-1.0)

    def __sub__(self, other: "PolyMatrix") -> "PolyMatrix":
        return self + (-other)

    def scale(self, s: float) -> "PolyMatrix":
        return PolyMatrix(self.n, self.rows, self.cols, {a: s * c for a, c in self._terms.items()})

    def transpose(self) -> "PolyMatrix":
        return PolyMatrix(self.n, self.cols, self.rows, {a: c.T for a, c in self._terms.items()})

    @property
    def T(self) -> "PolyMatrix":
        return self.transpose()

    def __eq__(self, other) -> bool:
        if not isinstance(other, PolyMatrix):
            return NotImplemented
        return (self.shape == other.shape and self.n == other.n
                and self._terms.keys() == other._terms.keys()
                and all(np.array_equal(c, other._terms[a]) for a, c in self._terms.items()))

    def __repr__(self) -> str:
        names = ", ".join(format_monomial(a) for a in self._terms)
        return f"PolyMatrix({self.rows}x{self.cols}, n={self.n}, terms=[{names}])"

    def to_dict(self) -> dict:
        return {
            "n": self.n,
            "rows": self.rows,
            "cols": self.cols,
            "terms": [{"exponents": list(a), "coefficients": c.tolist()}
                      for a, c in self._terms.items()],
        }

    @classmethod
    def from_dict(cls, data: dict) -> "PolyMatrix":
        terms = {}
        for t in data["terms"]:
            terms[tuple(t["exponents"])] = np.array(t["coefficients"], dtype=float)
        return cls(data["n"], data["rows"], data["cols"], terms)


def _check_same_shape(a: PolyMatrix, b: PolyMatrix) -> None:
    if a.shape != b.shape or a.n != b.n:
        raise DimensionMismatch(f"shape mismatch: {a.shape} (n={a.n}) vs {b.shape} (n={b.n})")


def poly_multiply(a: PolyMatrix, b: PolyMatrix) -> PolyMatrix:
    """Exact product; exponents of multiplied terms add."""
    if a.cols != b.rows:
        raise DimensionMismatch(f"cannot multiply {a.shape} by {b.shape}")
    if a.n != b.n:
        raise DimensionMismatch(f"variable count mismatch: {a.n} vs {b.n}")
    terms: dict[Exponents, np.ndarray] = {}
    for alpha, ca in a.terms.items():
        for beta, cb in b.terms.items():
            key = tuple(x + y for x, y in zip(alpha, beta))
            prod = ca @ cb
            terms[key] = terms[key] + prod if key in terms else prod
    return PolyMatrix(a.n, a.rows, b.cols, terms)


def poly_residual(a: PolyMatrix, b: PolyMatrix) -> float:
    """Largest absolute coefficient difference over the union of both term sets."""
    _check_same_shape(a, b)
    worst = 0.0
    for alpha in set(a.terms) | set(b.terms):
        diff = np.max(np.abs(a.coefficient(alpha) - b.coefficient(alpha)), initial=0.0)
        worst = max(worst, float(diff))
    return worst


def factorize_dictionary(dictionary: MonomialDictionary) -> PolyMatrix:
    """Build aleph(x) with F(x) = aleph(x) x.

    Each row divides its monomial by the lowest-index variable that appears in
    it and places the quotient in that variable's column.
    """
    n, N = dictionary.n, dictionary.N
    terms: dict[Exponents, np.ndarray] = {}
    for k, e in enumerate(dictionary.entries):
        if sum(e) < 1:
            raise ValueError(f"zero-degree entry {e} cannot be factorized")
        j = next(i for i, v in enumerate(e) if v > 0)
        q = list(e)
        q[j] -= 1
        q = tuple(q)
        c = terms.setdefault(q, np.zeros((N, n)))
        c[k, j] = 1.0
    return PolyMatrix(n, N, n, terms)
