"""Fixed multiplication blocks and the polynomial-to-transformer compiler.

Token layout (slots are 1-based, tokens 0-based): a token of a model with n
tokens and q blocks is a vector of length n+q+2,

    slot 1          t_i = <F_i, x>
    slots 2..n+1    one-hot position code e_i
    slots n+2..n+q+1  power slots, written once each by blocks 1..q
    slot n+q+2      constant 1

Block s multiplies slot ``a_slot`` (always t_i) by ``b_slot`` (the constant
for s=1, the previous power slot otherwise) and stores the negated product
in slot n+s+1, so after q blocks slot n+s+1 holds (-1)**s * t_i**s.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from typing import Mapping, NamedTuple

import numpy as np

from .polynomials import Polynomial, dim_homogeneous
from .ridge import generate_basis, ridge_decompose


@dataclass(frozen=True)
class EncoderBlockSpec:
    n: int
    q: int
    stage: int
    sep_const: float

    def __post_init__(self):
        if self.n < 1 or self.q < 1:
            raise ValueError("n and q must be positive")
        if not 1 <= self.stage <= self.q:
            raise ValueError(f"stage {self.stage} outside 1..{self.q}")
        if not self.sep_const > 0:
            raise ValueError("separation constant must be positive")

    @property
    def width(self) -> int:
        return self.n + self.q + 2

    @property
    def a_slot(self) -> int:
        return 1

    @property
    def b_slot(self) -> int:
        return self.const_slot if self.stage == 1 else self.n + self.stage

    @property
    def write_slot(self) -> int:
        return self.n + self.stage + 1

    @property
    def const_slot(self) -> int:
        return self.n + self.q + 2


def build_block(n: int, q: int, s: int, sep_const: float) -> EncoderBlockSpec:
    return EncoderBlockSpec(n, q, s, float(sep_const))


class BlockWeights(NamedTuple):
    wq: np.ndarray
    wk: np.ndarray
    wv: np.ndarray
    w1: np.ndarray
    w2: np.ndarray
    b1: np.ndarray
    b2: np.ndarray

    def nonzeros(self) -> int:
        return sum(int(np.count_nonzero(m)) for m in self)


def materialize(spec: EncoderBlockSpec) -> BlockWeights:
    n, w, C = spec.n, spec.width, spec.sep_const
    a, b, out, one = spec.a_slot - 1, spec.b_slot - 1, spec.write_slot - 1, spec.const_slot - 1
    diag = np.arange(1, n + 1)

    wq = np.zeros((n + 1, w))
    wq[0, a] = 1.0
    wq[diag, diag] = C

    wk = np.zeros((n + 1, w))
    wk[0, b] = 1.0
    wk[diag, diag] = 1.0

    wv = np.zeros((w, w))
    wv[out, one] = 1.0

    w1 = np.zeros((2, w))
    w1[0, out] = 1.0
    w1[1, out] = -1.0

    w2 = np.zeros((w, 2))
    w2[out, 0] = -2.0
    w2[out, 1] = 2.0

    b2 = np.zeros(w)
    b2[out] = C
    return BlockWeights(wq, wk, wv, w1, w2, np.zeros(2), b2)


def hardmax(v) -> np.ndarray:
    """Keep the largest entry (first one on ties) and zero the rest."""
    v = np.asarray(v, dtype=float)
    if v.size == 0:
        raise ValueError("hardmax of an empty vector")
    out = np.zeros_like(v)
    j = int(np.argmax(v))
    out[j] = v[j]
    return out


def attention_scores(Qm: np.ndarray, Km: np.ndarray) -> np.ndarray:
    """``S[i, j] = <q_i, k_j>`` accumulated over feature rows in index order.

    Kept as an explicit ordered sum so rounding is fixed and independent of
    the BLAS kernel; O(n^2 (n+1)), only meant for the reference path.
    """
    S = np.multiply.outer(Qm[0], Km[0])
    for r in range(1, Qm.shape[0]):
        S = S + np.multiply.outer(Qm[r], Km[r])
    return S


def block_apply_reference(spec: EncoderBlockSpec, Z: np.ndarray, weights: BlockWeights | None = None):
    """Apply one block with dense matrices. Returns ``(Z_out, selection)``."""
    Z = np.asarray(Z, dtype=float)
    if Z.shape != (spec.width, spec.n):
        raise ValueError(f"token matrix must have shape {(spec.width, spec.n)}, got {Z.shape}")
    W = weights if weights is not None else materialize(spec)
    S = attention_scores(W.wq @ Z, W.wk @ Z)
    sel = np.argmax(S, axis=1)
    A = np.zeros((spec.n, spec.n))
    cols = np.arange(spec.n)
    A[sel, cols] = S[cols, sel]  # column i is hardmax(alpha_i)
    Zh = Z + W.wv @ (Z @ A)
    hidden = np.maximum(W.w1 @ Zh + W.b1[:, None], 0.0)
    return Zh + W.w2 @ hidden + W.b2[:, None], sel


def separation_constant(bound: float, s: int) -> float:
    """Diagonal boost for block s: twice the worst off-diagonal gap 2*max(1,B)**s.

    Kept as small as the margin allows; the write slot is computed as
    ``C - (ab + C)`` so rounding error scales with C.
    """
    return 4.0 * max(1.0, bound) ** s


@dataclass(frozen=True, eq=False)
class TransformerModel:
    F: np.ndarray  # (n, d)
    blocks: tuple[EncoderBlockSpec, ...]
    beta: np.ndarray  # (n, q) readout weights; column s-1 reads slot n+s+1
    bias: float
    input_bound: float
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        F = np.asarray(self.F, dtype=float)
        beta = np.asarray(self.beta, dtype=float)
        n, q = F.shape[0], len(self.blocks)
        if beta.shape != (n, q):
            raise ValueError(f"beta must have shape {(n, q)}, got {beta.shape}")
        for s, blk in enumerate(self.blocks, start=1):
            if (blk.n, blk.q, blk.stage) != (n, q, s):
                raise ValueError(f"block {s} does not match model shape n={n}, q={q}")
        object.__setattr__(self, "F", F)
        object.__setattr__(self, "beta", beta)
        object.__setattr__(self, "blocks", tuple(self.blocks))
        object.__setattr__(self, "bias", float(self.bias))

    @property
    def n(self) -> int:
        return self.F.shape[0]

    @property
    def d(self) -> int:
        return self.F.shape[1]

    @property
    def q(self) -> int:
        return len(self.blocks)

    @property
    def sep_consts(self) -> np.ndarray:
        return np.array([b.sep_const for b in self.blocks])

    def with_params(self, F=None, beta=None, bias=None) -> "TransformerModel":
        return replace(
            self,
            F=self.F if F is None else F,
            beta=self.beta if beta is None else beta,
            bias=self.bias if bias is None else bias,
        )

    def readout_triples(self) -> list[tuple[int, int, float]]:
        """Non-zero readout weights as (token, slot, weight)."""
        ks, ss = np.nonzero(self.beta)
        return [(int(k), self.n + int(s) + 2, float(self.beta[k, s])) for k, s in zip(ks, ss)]

    def to_dict(self) -> dict:
        return {
            "d": self.d,
            "q": self.q,
            "n": self.n,
            "F": self.F.ravel().tolist(),
            "blocks": [{"s": b.stage, "C_s": b.sep_const} for b in self.blocks],
            "beta": [list(t) for t in self.readout_triples()],
            "bias": self.bias,
            "input_bound": self.input_bound,
        }

    @classmethod
    def from_dict(cls, data: Mapping) -> "TransformerModel":
        d, q, n = int(data["d"]), int(data["q"]), int(data["n"])
        F = np.asarray(data["F"], dtype=float).reshape(n, d)
        blocks = tuple(build_block(n, q, int(b["s"]), float(b["C_s"])) for b in sorted(data["blocks"], key=lambda b: b["s"]))
        beta = np.zeros((n, q))
        for k, slot, w in data["beta"]:
            beta[int(k), int(slot) - n - 2] = float(w)
        return cls(F, blocks, beta, float(data["bias"]), float(data["input_bound"]))

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def from_json(cls, text: str) -> "TransformerModel":
        return cls.from_dict(json.loads(text))


def make_blocks(n: int, q: int, bound: float) -> tuple[EncoderBlockSpec, ...]:
    return tuple(build_block(n, q, s, separation_constant(bound, s)) for s in range(1, q + 1))


def compile_exact(p: Polynomial, bound: float, seed: int = 0) -> TransformerModel:
    """Build a q-block model whose output equals ``p`` on the ball of radius ``bound``."""
    q = p.degree
    if q < 1:
        raise ValueError("compile_exact needs a polynomial of degree >= 1")
    if not bound > 0:
        raise ValueError("input bound must be positive")
    basis = generate_basis(p.dim, q, seed)
    coeffs = ridge_decompose(p, basis)
    signs = np.array([(-1.0) ** s for s in range(1, q + 1)])
    beta = coeffs.beta * signs  # block s stores (-1)**s t**s
    return TransformerModel(
        basis.xi.copy(),
        make_blocks(basis.size, q, bound),
        beta,
        coeffs.constant,
        float(bound),
        meta={"basis_seed": basis.seed, "basis_rank": basis.rank},
    )


def count_free_params(m: TransformerModel) -> int:
    """Entries of F, the structural readout support (n*q), and the bias."""
    return m.n * m.d + m.n * m.q + 1


def count_nonzeros(m: TransformerModel) -> int:
    return count_free_params(m) + sum(materialize(b).nonzeros() for b in m.blocks)


def block_nonzeros(spec: EncoderBlockSpec) -> int:
    return materialize(spec).nonzeros()


def free_param_bound(d: int, q: int) -> int:
    return d ** (q + 1) + q * d**q + 1


def nonzero_bound(d: int, q: int) -> int:
    return d ** (q + 1) + 3 * q * d**q + 8 * q + 1


def ridge_token_count(d: int, q: int) -> int:
    return dim_homogeneous(d, q)
