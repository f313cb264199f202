"""Mixture-of-Channels feed-forward layer.

Only the Top-K gate channels of each token survive past the SiLU. The tape
keeps compact (rows x K) copies of the masked activations plus the mask
indices; the mask itself is a constant of the graph, so the backward pass is
the frozen-mask gradient.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from moc.ffn import FfnGradients, FfnWeights, _check_input
from moc.linalg import ShapeError, matmul, silu, silu_grad
from moc.masking import (ChannelMask, Criterion, grouped_topk_mask, mask_gather,
                         mask_scatter, selection_margin, topk_mask)


@dataclass(frozen=True)
class MocConfig:
    k: int | None = None
    group: tuple[int, int] | None = None
    criterion: Criterion = Criterion.PRE_SILU
    gcp: bool = False

    def __post_init__(self):
        if (self.k is None) == (self.group is None):
            raise ValueError("MocConfig needs exactly one of k or group=(a, b)")
        if self.k is not None and self.k < 1:
            raise ValueError(f"k must be positive, got {self.k}")
        if self.group is not None:
            a, b = self.group
            if not 1 <= a <= b:
                raise ValueError(f"grouped selection needs 1 <= a <= b, got {self.group}")
        object.__setattr__(self, "criterion", Criterion(self.criterion))

    def validate(self, d_ffn: int) -> None:
        if self.k is not None and self.k > d_ffn:
            raise ValueError(f"k={self.k} exceeds d_ffn={d_ffn}")
        if self.group is not None and d_ffn % self.group[1]:
            raise ValueError(f"block size b={self.group[1]} does not divide d_ffn={d_ffn}")

    def per_row(self, d_ffn: int) -> int:
        """Channels kept per token."""
        if self.k is not None:
            return self.k
        a, b = self.group
        return a * (d_ffn // b)

    def make_mask(self, g: np.ndarray) -> ChannelMask:
        self.validate(g.shape[1])
        if self.group is not None:
            return grouped_topk_mask(g, *self.group, criterion=self.criterion)
        return topk_mask(g, self.k, self.criterion)


@dataclass(frozen=True)
class MocTape:
    gcp: bool
    x: np.ndarray
    mask: ChannelMask
    g: np.ndarray                 # compact G * M
    u: np.ndarray                 # compact U * M
    s: np.ndarray | None = None   # compact S * M, dropped under GCP
    z: np.ndarray | None = None   # compact Z * M, dropped under GCP

    def stored(self) -> dict[str, np.ndarray]:
        out = {"X": self.x, "G*M": self.g, "U*M": self.u}
        if not self.gcp:
            out.update({"S*M": self.s, "Z*M": self.z})
        out["M"] = self.mask.indices
        return out


def moc_forward(x: np.ndarray, w: FfnWeights, cfg: MocConfig,
                mask: ChannelMask | None = None):
    """Masked SwiGLU forward.

    Passing `mask` freezes the channel selection instead of recomputing it
    from G; finite-difference checks rely on this.
    """
    _check_input(x, w)
    cfg.validate(w.d_ffn)
    g = matmul(x, w.w_gate)
    u = matmul(x, w.w_up)
    if mask is None:
        mask = cfg.make_mask(g)
    elif mask.indices.shape != (x.shape[0], cfg.per_row(w.d_ffn)) or mask.total_channels != w.d_ffn:
        raise ShapeError("frozen mask does not match input/config")
    g_c = mask_gather(g, mask)
    u_c = mask_gather(u, mask)
    s_c = silu(g_c)
    z_c = s_c * u_c
    d_out = matmul(mask_scatter(z_c, mask), w.w_down)
    if cfg.gcp:
        tape = MocTape(True, x, mask, g_c, u_c)
    else:
        tape = MocTape(False, x, mask, g_c, u_c, s_c, z_c)
    return d_out, tape


def moc_backward(tape: MocTape, grad_out: np.ndarray, w: FfnWeights,
                 cfg: MocConfig) -> FfnGradients:
    mask, x = tape.mask, tape.x
    if tape.gcp != cfg.gcp:
        raise ValueError("tape checkpointing flag does not match config")
    if mask.total_channels != w.d_ffn or mask.k != cfg.per_row(w.d_ffn):
        raise ValueError(f"tape mask ({mask.k} of {mask.total_channels}) does not match "
                         f"config ({cfg.per_row(w.d_ffn)} of {w.d_ffn})")
    if x.shape[1] != w.d or grad_out.shape != (x.shape[0], w.d):
        raise ShapeError(f"gradient shape {grad_out.shape} / input {x.shape} vs d={w.d}")

    g_c, u_c = tape.g, tape.u
    recomputed = 0
    if tape.gcp:
        # SiLU(0) = 0, so rebuilding from the compact G*M and U*M is exact
        s_c = silu(g_c)
        z_c = s_c * u_c
        recomputed = s_c.size + z_c.size
    else:
        s_c, z_c = tape.s, tape.z

    d_wdown = matmul(mask_scatter(z_c, mask).T, grad_out)
    dz_c = mask_gather(matmul(grad_out, w.w_down.T), mask)
    ds_c = u_c * dz_c
    du_c = s_c * dz_c
    dg_c = ds_c * silu_grad(g_c)  # zero off-mask, never materialized densely

    dg = mask_scatter(dg_c, mask)
    du = mask_scatter(du_c, mask)
    return FfnGradients(
        w_gate=matmul(x.T, dg),
        w_up=matmul(x.T, du),
        w_down=d_wdown,
        x=matmul(dg, w.w_gate.T) + matmul(du, w.w_up.T),
        recomputed=recomputed,
    )


def moc_mask_margin(g: np.ndarray, cfg: MocConfig) -> float:
    return selection_margin(g, cfg.make_mask(np.asarray(g, dtype=np.float64)))
