"""Sparse multivariate polynomials keyed by exponent tuples.

A multi-index is a plain ``tuple[int, ...]`` of length ``dim``. Monomials are
ordered graded-lexicographically: by total degree first, then with larger
leading exponents first, so ``(2, 0) < (1, 1) < (0, 2)`` within degree 2.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from types import MappingProxyType
from typing import Iterable, Iterator, Mapping, Sequence

import numpy as np

MultiIndex = tuple[int, ...]

_INT64_MAX = 2**63 - 1


def grlex_key(index: MultiIndex) -> tuple:
    return (sum(index), tuple(-e for e in index))


def homogeneous_indices(dim: int, degree: int) -> Iterator[MultiIndex]:
    """Yield every exponent tuple of total degree ``degree`` in grlex order."""
    if dim == 1:
        yield (degree,)
        return
    for first in range(degree, -1, -1):
        for rest in homogeneous_indices(dim - 1, degree - first):
            yield (first,) + rest


def monomial_indices(dim: int, degree: int, *, include_constant: bool = True) -> list[MultiIndex]:
    start = 0 if include_constant else 1
    out: list[MultiIndex] = []
    for s in range(start, degree + 1):
        out.extend(homogeneous_indices(dim, s))
    return out


def _checked(value: int) -> int:
    if value > _INT64_MAX:
        raise OverflowError(f"dimension {value} exceeds the 64-bit integer range")
    return value


def dim_homogeneous(d: int, s: int) -> int:
    """Number of degree-``s`` monomials in ``d`` variables, C(d-1+s, s)."""
    if d < 1 or s < 0:
        raise ValueError(f"need d >= 1 and s >= 0, got d={d}, s={s}")
    return _checked(math.comb(d - 1 + s, s))


def dim_poly_space(d: int, q: int) -> int:
    """Dimension of polynomials of degree at most ``q`` in ``d`` variables."""
    if d < 1 or q < 0:
        raise ValueError(f"need d >= 1 and q >= 0, got d={d}, q={q}")
    return _checked(math.comb(d + q, q))


def multinomial(index: Sequence[int]) -> int:
    """Multinomial coefficient (|a|)! / prod(a_j!)."""
    out, total = 1, 0
    for e in index:
        total += e
        out *= math.comb(total, e)
    return out


@dataclass(frozen=True, eq=False)
class Polynomial:
    dim: int
    degree: int
    terms: Mapping[MultiIndex, float] = field(default_factory=dict)

    def __post_init__(self):
        if self.dim < 1:
            raise ValueError("dim must be positive")
        if self.degree < 0:
            raise ValueError("degree must be non-negative")
        clean: dict[MultiIndex, float] = {}
        for key, coef in self.terms.items():
            key = tuple(int(e) for e in key)
            if len(key) != self.dim:
                raise ValueError(f"multi-index {key} does not have length {self.dim}")
            if any(e < 0 for e in key):
                raise ValueError(f"negative exponent in {key}")
            if sum(key) > self.degree:
                raise ValueError(f"multi-index {key} exceeds degree {self.degree}")
            coef = float(coef)
            if coef != 0.0:
                clean[key] = clean.get(key, 0.0) + coef
        clean = {k: clean[k] for k in sorted(clean, key=grlex_key) if clean[k] != 0.0}
        object.__setattr__(self, "terms", MappingProxyType(clean))

    @classmethod
    def from_terms(cls, dim: int, terms: Iterable[tuple[Sequence[int], float]], degree: int | None = None) -> "Polynomial":
        pairs = [(tuple(a), c) for a, c in terms]
        if degree is None:
            degree = max((sum(a) for a, c in pairs if c != 0), default=0)
        acc: dict[MultiIndex, float] = {}
        for a, c in pairs:
            acc[a] = acc.get(a, 0.0) + float(c)
        return cls(dim, degree, acc)

    @classmethod
    def zero(cls, dim: int, degree: int = 0) -> "Polynomial":
        return cls(dim, degree, {})

    @classmethod
    def constant(cls, dim: int, value: float, degree: int = 0) -> "Polynomial":
        return cls(dim, degree, {(0,) * dim: value})

    @property
    def total_degree(self) -> int:
        """Largest total degree actually present (0 for the zero polynomial)."""
        return max((sum(a) for a in self.terms), default=0)

    def constant_term(self) -> float:
        return self.terms.get((0,) * self.dim, 0.0)

    def coefficient(self, index: Sequence[int]) -> float:
        return self.terms.get(tuple(index), 0.0)

    def coefficient_vector(self, indices: Sequence[MultiIndex]) -> np.ndarray:
        return np.array([self.terms.get(a, 0.0) for a in indices], dtype=float)

    def __len__(self) -> int:
        return len(self.terms)

    def __call__(self, x) -> float | np.ndarray:
        return evaluate(self, x)

    def _combine(self, other: "Polynomial", sign: float) -> "Polynomial":
        if other.dim != self.dim:
            raise ValueError("dimension mismatch")
        acc = dict(self.terms)
        for a, c in other.terms.items():
            acc[a] = acc.get(a, 0.0) + sign * c
        return Polynomial(self.dim, max(self.degree, other.degree), acc)

    def __add__(self, other: "Polynomial") -> "Polynomial":
        return self._combine(other, 1.0)

    def __sub__(self, other: "Polynomial") -> "Polynomial":
        return self._combine(other, -1.0)

    def __neg__(self) -> "Polynomial":
        return self * -1.0

    def __mul__(self, scalar: float) -> "Polynomial":
        return Polynomial(self.dim, self.degree, {a: scalar * c for a, c in self.terms.items()})

    __rmul__ = __mul__

    def __eq__(self, other) -> bool:
        if not isinstance(other, Polynomial):
            return NotImplemented
        return self.dim == other.dim and self.degree == other.degree and dict(self.terms) == dict(other.terms)

    def __repr__(self) -> str:
        if not self.terms:
            return f"Polynomial(dim={self.dim}, degree={self.degree}, 0)"
        parts = []
        for a, c in self.terms.items():
            mono = "*".join(f"x{j + 1}" + (f"^{e}" if e > 1 else "") for j, e in enumerate(a) if e)
            parts.append(f"{c:g}" + (f"*{mono}" if mono else ""))
        return f"Polynomial(dim={self.dim}, degree={self.degree}, " + " + ".join(parts) + ")"

    def max_abs_diff(self, other: "Polynomial") -> float:
        keys = set(self.terms) | set(other.terms)
        return max((abs(self.terms.get(k, 0.0) - other.terms.get(k, 0.0)) for k in keys), default=0.0)

    def to_dict(self) -> dict:
        return {
            "dim": self.dim,
            "degree": self.degree,
            "terms": [{"exp": list(a), "coef": c} for a, c in self.terms.items()],
        }

    @classmethod
    def from_dict(cls, data: Mapping) -> "Polynomial":
        return cls(
            int(data["dim"]),
            int(data["degree"]),
            {tuple(t["exp"]): float(t["coef"]) for t in data["terms"]},
        )

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def from_json(cls, text: str) -> "Polynomial":
        return cls.from_dict(json.loads(text))


def evaluate(p: Polynomial, x) -> float | np.ndarray:
    """Evaluate ``p`` at a point (shape ``(d,)``) or a batch of points (``(N, d)``)."""
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    X = x[None, :] if single else x
    if X.ndim != 2 or X.shape[1] != p.dim:
        raise ValueError(f"expected points of dimension {p.dim}, got shape {x.shape}")
    out = np.zeros(X.shape[0])
    for a, c in p.terms.items():
        mono = np.full(X.shape[0], c)
        for j, e in enumerate(a):
            if e:
                mono = mono * X[:, j] ** e
        out += mono
    return float(out[0]) if single else out


def benchmark_targets() -> tuple[Polynomial, Polynomial]:
    """The two regression targets: x1^2 + x2^2 on R^2, and a degree-5 polynomial on R^10."""
    f1 = Polynomial.from_terms(2, [((2, 0), 1.0), ((0, 2), 1.0)])

    def e(**powers) -> tuple[int, ...]:
        a = [0] * 10
        for name, power in powers.items():
            a[int(name[1:]) - 1] = power
        return tuple(a)

    f2 = Polynomial.from_terms(
        10,
        [
            (e(x1=5), 1.0),
            (e(x2=4), 3.0),
            (e(x3=3), 2.0),
            (e(x3=1, x4=1), 5.0),
            (e(x5=2), 3.0),
            (e(x6=1, x7=1, x8=1), 2.0),
            (e(x9=1), 2.0),
        ],
    )
    return f1, f2
