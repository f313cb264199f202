"""Row-wise Top-K and grouped a:b Top-K channel selection.

Masks are kept as sorted index lists (one row of K column indices per token)
rather than bitmaps. Ties always go to the lower column index.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from moc.linalg import ShapeError, silu


class Criterion(str, enum.Enum):
    PRE_SILU = "pre_silu"    # rank by G itself
    POST_SILU = "post_silu"  # rank by SiLU(G)
    ABS_SILU = "abs_silu"    # rank by |SiLU(G)|


def criterion_scores(g: np.ndarray, criterion: Criterion) -> np.ndarray:
    criterion = Criterion(criterion)
    if criterion is Criterion.PRE_SILU:
        return np.asarray(g, dtype=np.float64)
    if criterion is Criterion.POST_SILU:
        return silu(g)
    return np.abs(silu(g))


@dataclass(frozen=True)
class ChannelMask:
    indices: np.ndarray          # (rows, k) int64, strictly increasing per row
    total_channels: int
    criterion: Criterion = Criterion.PRE_SILU
    group: tuple[int, int] | None = None

    def __post_init__(self):
        idx = self.indices
        if idx.ndim != 2:
            raise ShapeError(f"mask indices must be 2-D, got shape {idx.shape}")
        if idx.size and (idx.min() < 0 or idx.max() >= self.total_channels):
            raise ValueError("mask index out of range")
        if idx.shape[1] > 1 and not np.all(np.diff(idx, axis=1) > 0):
            raise ValueError("mask indices must be strictly increasing per row")
        if self.group is not None:
            a, b = self.group
            counts = np.zeros((idx.shape[0], self.total_channels // b), dtype=np.int64)
            np.add.at(counts, (np.arange(idx.shape[0])[:, None], idx // b), 1)
            if not np.all(counts == a):
                raise ValueError(f"grouped mask must keep exactly {a} of every {b} channels")

    @property
    def rows(self) -> int:
        return self.indices.shape[0]

    @property
    def k(self) -> int:
        """Selected channels per row."""
        return self.indices.shape[1]

    def dense(self) -> np.ndarray:
        """The binary rows x total_channels matrix this mask stands for."""
        m = np.zeros((self.rows, self.total_channels))
        np.put_along_axis(m, self.indices, 1.0, axis=1)
        return m

    def is_full(self) -> bool:
        return self.k == self.total_channels


def _top_indices(scores: np.ndarray, k: int) -> np.ndarray:
    # stable sort on the negated score keeps the lower index first among ties
    order = np.argsort(-scores, axis=-1, kind="stable")[..., :k]
    return np.sort(order, axis=-1)


def topk_mask(g: np.ndarray, k: int, criterion: Criterion = Criterion.PRE_SILU) -> ChannelMask:
    g = np.asarray(g, dtype=np.float64)
    if g.ndim != 2:
        raise ShapeError(f"expected a 2-D matrix, got shape {g.shape}")
    k = int(k)
    if not 1 <= k <= g.shape[1]:
        raise ValueError(f"K must lie in [1, {g.shape[1]}], got {k}")
    scores = criterion_scores(g, criterion)
    return ChannelMask(_top_indices(scores, k).astype(np.int64), g.shape[1], Criterion(criterion))


def grouped_topk_mask(g: np.ndarray, a: int, b: int,
                      criterion: Criterion = Criterion.PRE_SILU) -> ChannelMask:
    """Keep the `a` best-scoring channels of every contiguous block of `b`."""
    g = np.asarray(g, dtype=np.float64)
    if g.ndim != 2:
        raise ShapeError(f"expected a 2-D matrix, got shape {g.shape}")
    a, b = int(a), int(b)
    if not 1 <= a <= b:
        raise ValueError(f"grouped selection needs 1 <= a <= b, got a={a}, b={b}")
    rows, cols = g.shape
    if cols % b:
        raise ValueError(f"block size b={b} does not divide {cols} channels")
    n_blocks = cols // b
    scores = criterion_scores(g, criterion).reshape(rows, n_blocks, b)
    local = _top_indices(scores, a)
    idx = local + (np.arange(n_blocks) * b)[None, :, None]
    return ChannelMask(idx.reshape(rows, n_blocks * a).astype(np.int64), cols,
                       Criterion(criterion), (a, b))


def mask_gather(x: np.ndarray, mask: ChannelMask) -> np.ndarray:
    """Compact rows x k matrix of the entries of `x` the mask keeps."""
    x = np.asarray(x)
    if x.shape != (mask.rows, mask.total_channels):
        raise ShapeError(f"gather shape mismatch: matrix {x.shape}, mask "
                         f"{(mask.rows, mask.total_channels)}")
    return np.take_along_axis(x, mask.indices, axis=1)


def mask_scatter(c: np.ndarray, mask: ChannelMask) -> np.ndarray:
    c = np.asarray(c)
    if c.shape != mask.indices.shape:
        raise ShapeError(f"scatter shape mismatch: compact {c.shape}, mask {mask.indices.shape}")
    out = np.zeros((mask.rows, mask.total_channels), dtype=c.dtype)
    np.put_along_axis(out, mask.indices, c, axis=1)
    return out


def selection_margin(g: np.ndarray, mask: ChannelMask) -> float:
    """Smallest gap between the weakest kept score and the strongest dropped one.

    Taken per row, or per block for grouped masks. Returns inf when nothing is
    dropped.
    """
    scores = criterion_scores(g, mask.criterion)
    keep = mask.dense().astype(bool)
    rows, cols = scores.shape
    if mask.group is not None:
        b = mask.group[1]
        scores = scores.reshape(rows * (cols // b), b)
        keep = keep.reshape(rows * (cols // b), b)
    lo = np.where(keep, scores, np.inf).min(axis=1)
    hi = np.where(keep, -np.inf, scores).max(axis=1)
    return float(np.min(lo - hi))
