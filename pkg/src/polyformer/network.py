"""Forward passes and gradients for compiled/trainable attention models.

Two forward paths share one contract. :func:`forward` builds the dense token
matrix and applies every block with materialized weights; it is the oracle.
:func:`forward_fast` exploits the structure of the fixed blocks: the query of
token i is ``(a_i, C e_i)`` and the key of token j is ``(b_j, e_j)``, so

    <q_i, k_j> = a_i * b_j + C [i == j]

and the best off-diagonal key is found from the top-2 maximum or minimum of
``b`` depending on the sign of ``a_i``. The two paths perform the same
floating-point operations in the same order and agree bit-for-bit, including
the lowest-index tie rule of the hardmax.

Training gradients treat each hardmax selection as fixed (the max-pooling
subgradient). With the selection frozen and the FFN being the identity
``w -> C - w`` on the write slot, block s computes ``-t_i * b_{sel(i)}``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .constructor import TransformerModel, block_apply_reference, hardmax, materialize

__all__ = [
    "GradientSet",
    "Trace",
    "FastCache",
    "embed",
    "features",
    "hardmax",
    "forward",
    "forward_fast",
    "forward_fast_batch",
    "predict",
    "backward",
    "write_trace",
]


def features(F: np.ndarray, X: np.ndarray) -> np.ndarray:
    """``t[m, i] = <F_i, X_m>`` summed over coordinates in index order."""
    t = X[:, 0, None] * F[None, :, 0]
    for j in range(1, F.shape[1]):
        t = t + X[:, j, None] * F[None, :, j]
    return t


def embed(F, x, q: int) -> np.ndarray:
    """Token matrix of shape (n+q+2, n): column i is [t_i; e_i; 0 (q times); 1]."""
    F = np.asarray(F, dtype=float)
    x = np.asarray(x, dtype=float)
    if F.ndim != 2 or x.shape != (F.shape[1],):
        raise ValueError(f"cannot embed x of shape {x.shape} with F of shape {F.shape}")
    n = F.shape[0]
    Z = np.zeros((n + q + 2, n))
    Z[0] = features(F, x[None, :])[0]
    Z[1:n + 1] = np.eye(n)
    Z[-1] = 1.0
    return Z


def _readout(beta: np.ndarray, P: np.ndarray) -> np.ndarray:
    """Sum of beta * powers per sample; P has shape (N, n, q)."""
    prod = np.ascontiguousarray(P * beta[None])
    return prod.reshape(prod.shape[0], -1).sum(axis=1)


@dataclass
class Trace:
    states: list  # token matrices: embedding, then after each block
    selections: list  # hardmax argmax per token, one array per block

    def power_slots(self, n: int, q: int) -> list[np.ndarray]:
        return [Z[n + 1:n + q + 1].T.copy() for Z in self.states[1:]]


def forward(m: TransformerModel, x, trace: bool = False):
    """Dense reference forward pass. Returns the output, plus a :class:`Trace` if asked."""
    x = np.asarray(x, dtype=float)
    if x.shape != (m.d,):
        raise ValueError(f"expected input of length {m.d}, got shape {x.shape}")
    Z = embed(m.F, x, m.q)
    states, selections = [Z], []
    for spec in m.blocks:
        Z, sel = block_apply_reference(spec, Z, materialize(spec))
        states.append(Z)
        selections.append(sel)
    n, q = m.n, m.q
    powers = Z[n + 1:n + q + 1].T
    y = float(_readout(m.beta, powers[None])[0]) + m.bias
    if trace:
        return y, Trace(states, selections)
    return y


class FastCache(NamedTuple):
    t: np.ndarray  # (N, n)
    powers: np.ndarray  # (N, q+1, n); powers[:, 0] is the constant slot
    selections: np.ndarray  # (N, q, n)


_NEAR_TIE_ULPS = 8


def _top2(b: np.ndarray, rows: np.ndarray, largest: bool):
    first = np.argmax(b, axis=1) if largest else np.argmin(b, axis=1)
    masked = b.copy()
    masked[rows, first] = -np.inf if largest else np.inf
    second = np.argmax(masked, axis=1) if largest else np.argmin(masked, axis=1)
    return first, second


def _select(a: np.ndarray, b: np.ndarray, C: float):
    """Hardmax over ``a_i b_j + C [i == j]`` without forming the n x n scores."""
    N, n = a.shape
    diag = a * b + C
    sel = np.broadcast_to(np.arange(n, dtype=np.intp), (N, n)).copy()
    if n == 1:
        return sel, diag
    # Rounding is monotone, so every off-diagonal score is at most |a_i| max|b|
    # as computed here; rows where the diagonal beats that bound are settled.
    bound = np.abs(a) * np.abs(b).max(axis=1, keepdims=True)
    hard = np.flatnonzero(~(diag > bound).all(axis=1))
    if hard.size:
        s, sc = _select_general(a[hard], b[hard], diag[hard])
        sel[hard] = s
        diag[hard] = sc
    return sel, diag


def _select_general(a: np.ndarray, b: np.ndarray, diag: np.ndarray):
    N, n = a.shape
    tok = np.arange(n)[None, :]
    rows = np.arange(N)
    jmax, jmax2 = _top2(b, rows, largest=True)
    jmin, jmin2 = _top2(b, rows, largest=False)
    pos = np.where(jmax[:, None] != tok, jmax[:, None], jmax2[:, None])
    neg = np.where(jmin[:, None] != tok, jmin[:, None], jmin2[:, None])
    zero = np.where(tok != 0, 0, 1)  # every off-diagonal score is 0: lowest index
    off_j = np.where(a > 0, pos, np.where(a < 0, neg, zero))
    off = a * np.take_along_axis(b, off_j, axis=1)
    sel = np.where(diag > off, tok, np.where(off > diag, off_j, np.minimum(tok, off_j)))
    score = np.where(sel == tok, diag, off)
    # Distinct b values a few ulps apart can round to equal products, where the
    # lowest-index rule may disagree with the top-2 pick; redo those rows exactly.
    srt = np.sort(b, axis=1)
    gap = np.diff(srt, axis=1)
    close = (gap > 0) & (gap <= _NEAR_TIE_ULPS * np.finfo(float).eps * np.abs(srt[:, 1:]))
    for r in np.flatnonzero(close.any(axis=1)):
        S = np.multiply.outer(a[r], b[r])
        S[np.arange(n), np.arange(n)] = diag[r]
        sel[r] = np.argmax(S, axis=1)
        score[r] = S[np.arange(n), sel[r]]
    return sel, score


def forward_fast_batch(m: TransformerModel, X, keep_cache: bool = False):
    """Structured forward pass over a batch ``X`` of shape (N, d)."""
    X = np.asarray(X, dtype=float)
    if X.ndim != 2 or X.shape[1] != m.d:
        raise ValueError(f"expected inputs of shape (N, {m.d}), got {X.shape}")
    N, n, q = X.shape[0], m.n, m.q
    t = features(m.F, X)
    powers = np.empty((N, q + 1, n))
    powers[:, 0] = 1.0
    sels = np.empty((N, q, n), dtype=np.intp)
    for s, spec in enumerate(m.blocks, start=1):
        sel, score = _select(t, powers[:, s - 1], spec.sep_const)
        # the FFN output -2 relu(z) + 2 relu(-z) equals -2 z exactly in floating point
        powers[:, s] = (score - 2.0 * score) + spec.sep_const
        sels[:, s - 1] = sel
    y = _readout(m.beta, powers[:, 1:].transpose(0, 2, 1)) + m.bias
    if keep_cache:
        return y, FastCache(t, powers, sels)
    return y


def forward_fast(m: TransformerModel, x) -> float:
    x = np.asarray(x, dtype=float)
    if x.shape != (m.d,):
        raise ValueError(f"expected input of length {m.d}, got shape {x.shape}")
    return float(forward_fast_batch(m, x[None])[0])


# Samples per chunk are chosen so one (chunk, n) array stays cache resident;
# the chunk size depends only on n, so reductions keep a fixed order.
_CHUNK_ENTRIES = 1 << 16


def chunk_size(n: int) -> int:
    return max(1, _CHUNK_ENTRIES // n)


def _chunks(N: int, n: int):
    step = chunk_size(n)
    return [slice(i, min(i + step, N)) for i in range(0, N, step)]


def predict(m: TransformerModel, X) -> np.ndarray:
    X = np.asarray(X, dtype=float)
    if len(X) == 0:
        return np.zeros(0)
    return np.concatenate([forward_fast_batch(m, X[c]) for c in _chunks(len(X), m.n)])


@dataclass
class GradientSet:
    dF: np.ndarray
    dbeta: np.ndarray
    db: float

    def arrays(self) -> list[np.ndarray]:
        return [self.dF, self.dbeta, np.array([self.db])]

    def norm(self) -> float:
        return float(np.sqrt(sum(float(np.sum(a * a)) for a in self.arrays())))

    def scaled(self, factor: float) -> "GradientSet":
        return GradientSet(self.dF * factor, self.dbeta * factor, self.db * factor)


def _backward_chunk(m: TransformerModel, X: np.ndarray, y: np.ndarray, N: int):
    """Contribution of one chunk to the gradient of the mean over ``N`` samples."""
    pred, cache = forward_fast_batch(m, X, keep_cache=True)
    M, n, q = X.shape[0], m.n, m.q
    resid = pred - y
    dpred = 2.0 * resid / N

    t, P, sels = cache
    rows = np.arange(M)[:, None]
    dbeta = np.empty((n, q))
    g_t = np.zeros((M, n))
    carry = np.zeros((M, n))
    for s in range(q, 0, -1):
        dbeta[:, s - 1] = np.sum(dpred[:, None] * P[:, s], axis=0)
        g = dpred[:, None] * m.beta[None, :, s - 1] + carry
        sel = sels[:, s - 1]
        own = bool((sel == np.arange(n)).all())  # every token attended to itself
        b_sel = P[:, s - 1] if own else P[:, s - 1][rows, sel]
        g_t -= b_sel * g
        if s > 1 and own:
            carry = -(t * g)
        elif s > 1:
            flat = (rows * n + sel).ravel()
            carry = -np.bincount(flat, weights=(t * g).ravel(), minlength=M * n).reshape(M, n)
    dF = np.empty((n, m.d))
    for j in range(m.d):
        dF[:, j] = np.sum(g_t * X[:, j, None], axis=0)
    return dF, dbeta, float(np.sum(dpred)), float(np.sum(resid * resid))


def backward(m: TransformerModel, X, y) -> tuple[GradientSet, float]:
    """Gradient of the batch mean squared error w.r.t. F, beta and bias."""
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    N = X.shape[0]
    dF, dbeta = np.zeros((m.n, m.d)), np.zeros((m.n, m.q))
    db = sse = 0.0
    for c in _chunks(N, m.n):
        cF, cbeta, cb, csse = _backward_chunk(m, X[c], y[c], N)
        dF += cF
        dbeta += cbeta
        db += cb
        sse += csse
    return GradientSet(dF, dbeta, db), sse / N


def write_trace(trace: Trace, n: int, q: int, path) -> None:
    """One JSON line per block: selection indices and power-slot values per token."""
    with open(path, "w") as fh:
        for s, (sel, powers) in enumerate(zip(trace.selections, trace.power_slots(n, q)), start=1):
            fh.write(json.dumps({"block": s, "selection": sel.tolist(), "powers": powers.tolist()}) + "\n")
