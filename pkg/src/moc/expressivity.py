"""Embedding a dense SwiGLU FFN into a grouped a:b MoC layer.

Channel j of the source FFN (0-based) is written to embedded column
(j // a) * b + j % a, so each block of b embedded columns holds at most a
live channels followed by zero columns. With selection by |SiLU(g)| the a:b
mask can therefore never drop a live channel, and the embedded layer
reproduces the source exactly.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np

from moc.ffn import FfnWeights, ffn_forward
from moc.masking import Criterion
from moc.mixture import MocConfig, moc_forward

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class EmbeddingResult:
    weights: FfnWeights
    d_moc: int
    placement: np.ndarray  # placement[j] = embedded column of source channel j

    def nonzero_params(self) -> int:
        return sum(int(np.count_nonzero(m)) for m in self.weights.as_tuple())


def embedded_width(d_ffn: int, a: int, b: int) -> int:
    return b * math.ceil(d_ffn / a)


def embed_ffn_as_moc(w: FfnWeights, a: int, b: int) -> EmbeddingResult:
    if not 1 <= a <= b:
        raise ValueError(f"embedding needs 1 <= a <= b, got a={a}, b={b}")
    d_ffn = w.d_ffn
    d_moc = embedded_width(d_ffn, a, b)
    src = np.arange(d_ffn)
    placement = (src // a) * b + src % a

    gate = np.zeros((w.d, d_moc))
    up = np.zeros((w.d, d_moc))
    down = np.zeros((d_moc, w.d))
    gate[:, placement] = w.w_gate
    up[:, placement] = w.w_up
    down[placement, :] = w.w_down
    return EmbeddingResult(FfnWeights(gate, up, down), d_moc, placement)


def verify_embedding(w: FfnWeights, emb: EmbeddingResult, a: int, b: int,
                     n_samples: int = 100, seed: int = 0,
                     criterion: Criterion = Criterion.ABS_SILU) -> float:
    """Max entrywise |f(x) - f'(x)| over standard-normal inputs x (1 x d each).

    Equality is only guaranteed for the |SiLU| criterion; other criteria give
    an approximation and are logged as such.
    """
    criterion = Criterion(criterion)
    if criterion is not Criterion.ABS_SILU:
        log.info("verifying embedding under %s selection (approximate, not exact)", criterion.value)
    cfg = MocConfig(group=(a, b), criterion=criterion)
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(n_samples):
        x = rng.standard_normal((1, w.d))
        ref, _ = ffn_forward(x, w)
        out, _ = moc_forward(x, emb.weights, cfg)
        worst = max(worst, float(np.max(np.abs(ref - out))))
    return worst
