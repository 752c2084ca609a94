"""Ridge-power decomposition of polynomials.

Any polynomial of degree at most q on R^d can be written as

    Q(x) = Q(0) + sum_k sum_s beta[k, s-1] * (xi_k . x)**s

for a suitable fixed set of C(d-1+q, q) unit directions ``xi_k``. The
directions are drawn at random and certified by a rank check on the
expansion matrix; the coefficients come from a minimum-norm least-squares
solve that is done one degree at a time, since ``(xi . x)**s`` only touches
monomials of degree exactly ``s``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Mapping

import numpy as np

from .polynomials import (
    MultiIndex,
    Polynomial,
    dim_homogeneous,
    dim_poly_space,
    homogeneous_indices,
    monomial_indices,
    multinomial,
)

MAX_ATTEMPTS = 8
RESIDUAL_TOL = 1e-8


class RidgeDecompositionError(RuntimeError):
    pass


@dataclass(frozen=True, eq=False)
class RidgeBasis:
    dim: int
    degree: int
    xi: np.ndarray  # (n_q, dim), unit rows
    seed: int
    rank: int = -1  # rank of the expansion matrix when certified, -1 otherwise

    @property
    def size(self) -> int:
        return self.xi.shape[0]

    def to_dict(self) -> dict:
        return {"dim": self.dim, "degree": self.degree, "seed": self.seed, "xi": self.xi.tolist()}

    @classmethod
    def from_dict(cls, data: Mapping) -> "RidgeBasis":
        xi = np.asarray(data["xi"], dtype=float).reshape(-1, int(data["dim"]))
        return cls(int(data["dim"]), int(data["degree"]), xi, int(data["seed"]))

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def from_json(cls, text: str) -> "RidgeBasis":
        return cls.from_dict(json.loads(text))


@dataclass(frozen=True, eq=False)
class RidgeCoefficients:
    beta: np.ndarray  # (n_q, q); column s-1 holds the weights of the power s
    constant: float

    def get(self, k: int, s: int) -> float:
        return float(self.beta[k, s - 1])


def degree_block(xi: np.ndarray, s: int) -> tuple[list[MultiIndex], np.ndarray]:
    """Rows of the expansion matrix for monomials of degree ``s``.

    Entry ``[r, k]`` is the coefficient of monomial ``r`` in ``(xi_k . x)**s``.
    """
    d = xi.shape[1]
    indices = list(homogeneous_indices(d, s))
    A = np.array(indices, dtype=np.int64).reshape(len(indices), d)
    block = np.ones((len(indices), xi.shape[0]))
    for j in range(d):
        block *= xi[None, :, j] ** A[:, j, None]
    block *= np.array([float(multinomial(a)) for a in indices])[:, None]
    return indices, block


def _block_rank(block: np.ndarray) -> int:
    return int(np.linalg.matrix_rank(block))


def _sphere(rng: np.random.Generator, count: int, d: int) -> np.ndarray:
    v = rng.standard_normal((count, d))
    norms = np.linalg.norm(v, axis=1, keepdims=True)
    return v / norms


def generate_basis(d: int, q: int, seed: int = 0, *, max_attempts: int = MAX_ATTEMPTS) -> RidgeBasis:
    """Draw C(d-1+q, q) uniform unit vectors whose ridge powers span P_q minus constants."""
    if d < 1 or q < 1:
        raise ValueError(f"need d >= 1 and q >= 1, got d={d}, q={q}")
    n_q = dim_homogeneous(d, q)
    target = dim_poly_space(d, q) - 1
    for attempt in range(max_attempts):
        rng = np.random.default_rng(seed + attempt)
        xi = _sphere(rng, n_q, d)
        rank = 0
        for s in range(1, q + 1):
            _, block = degree_block(xi, s)
            r = _block_rank(block)
            rank += r
            if r < block.shape[0]:
                break
        if rank == target:
            return RidgeBasis(d, q, xi, seed + attempt, rank)
    raise RidgeDecompositionError(f"no spanning basis for d={d}, q={q} after {max_attempts} attempts")


def column_index(n_q: int, k: int, s: int) -> int:
    """Column of the pair (direction k, power s) in :func:`expansion_matrix`."""
    return (s - 1) * n_q + k


def expansion_matrix(basis: RidgeBasis) -> np.ndarray:
    """Dense map from ridge coefficients to non-constant monomial coefficients.

    Rows follow grlex order of monomials with degree 1..q; columns are grouped
    by power, see :func:`column_index`. Block-diagonal by degree.
    """
    n_q, q = basis.size, basis.degree
    rows = dim_poly_space(basis.dim, q) - 1
    M = np.zeros((rows, n_q * q))
    r0 = 0
    for s in range(1, q + 1):
        _, block = degree_block(basis.xi, s)
        M[r0:r0 + block.shape[0], (s - 1) * n_q:s * n_q] = block
        r0 += block.shape[0]
    return M


def ridge_decompose(p: Polynomial, basis: RidgeBasis) -> RidgeCoefficients:
    if p.dim != basis.dim:
        raise ValueError(f"polynomial dim {p.dim} != basis dim {basis.dim}")
    if p.total_degree > basis.degree:
        raise ValueError(f"polynomial degree {p.total_degree} exceeds basis degree {basis.degree}")
    n_q, q = basis.size, basis.degree
    beta = np.zeros((n_q, q))
    scale = 1.0 + max((abs(c) for c in p.terms.values()), default=0.0)
    worst = 0.0
    for s in range(1, q + 1):
        indices, block = degree_block(basis.xi, s)
        rhs = p.coefficient_vector(indices)
        if not rhs.any():
            continue
        sol, *_ = np.linalg.lstsq(block, rhs, rcond=None)
        beta[:, s - 1] = sol
        worst = max(worst, float(np.max(np.abs(block @ sol - rhs))))
    if worst >= RESIDUAL_TOL * scale:
        raise RidgeDecompositionError(
            f"reconstruction residual {worst:.3e} exceeds {RESIDUAL_TOL * scale:.3e}; basis does not span"
        )
    return RidgeCoefficients(beta, p.constant_term())


def reconstruct(c: RidgeCoefficients, basis: RidgeBasis) -> Polynomial:
    """Expand ``constant + sum beta[k, s-1] (xi_k . x)**s`` back into monomials."""
    n_q, q = c.beta.shape
    if n_q != basis.size or q > basis.degree:
        raise ValueError("coefficient shape does not match basis")
    terms: dict[MultiIndex, float] = {(0,) * basis.dim: c.constant}
    for s in range(1, q + 1):
        col = c.beta[:, s - 1]
        if not col.any():
            continue
        indices, block = degree_block(basis.xi, s)
        for a, v in zip(indices, block @ col):
            terms[a] = float(v)
    return Polynomial(basis.dim, q, terms)


def monomial_rows(d: int, q: int) -> list[MultiIndex]:
    """Row labels of :func:`expansion_matrix`."""
    return monomial_indices(d, q, include_constant=False)
