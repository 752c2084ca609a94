"""Polynomials compiled into fixed-block hardmax attention, plus the training harness that fits them."""

from .constructor import TransformerModel, compile_exact
from .network import forward, forward_fast, predict
from .polynomials import Polynomial, evaluate, benchmark_targets

__all__ = ["Polynomial", "TransformerModel", "compile_exact", "evaluate", "forward", "forward_fast", "benchmark_targets", "predict"]
