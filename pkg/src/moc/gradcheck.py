"""Central finite-difference checks for the hand-written backward passes."""

from __future__ import annotations

from typing import Callable

import numpy as np

from moc.ffn import FfnWeights, ffn_backward, ffn_forward, probe_loss
from moc.mixture import MocConfig, moc_backward, moc_forward

GRAD_NAMES = ("w_gate", "w_up", "w_down", "x")


def numerical_grad(loss: Callable[[], float], arr: np.ndarray, h: float = 1e-6) -> np.ndarray:
    """Central differences of `loss()` w.r.t. every entry of `arr`, perturbed in place."""
    grad = np.zeros_like(arr)
    it = np.nditer(arr, flags=["multi_index"])
    for _ in it:
        idx = it.multi_index
        orig = arr[idx]
        arr[idx] = orig + h
        up = loss()
        arr[idx] = orig - h
        down = loss()
        arr[idx] = orig
        grad[idx] = (up - down) / (2 * h)
    return grad


def rel_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    """max |a - n| scaled by the larger of the two max-magnitudes."""
    scale = max(np.max(np.abs(analytic)), np.max(np.abs(numeric)), 1e-12)
    return float(np.max(np.abs(analytic - numeric)) / scale)


def _fd_all(forward, x, w, grad_out, h):
    """FD gradients for the three weights and the input under `forward(x, w)`."""
    x = x.copy()
    parts = {n: getattr(w, n).copy() for n in GRAD_NAMES[:3]}

    def loss():
        return probe_loss(forward(x, FfnWeights(**parts)), grad_out)

    out = {n: numerical_grad(loss, parts[n], h) for n in GRAD_NAMES[:3]}
    out["x"] = numerical_grad(loss, x, h)
    return out


def check_ffn(x, w: FfnWeights, grad_out, h: float = 1e-6, gcp: bool = False) -> dict[str, float]:
    _, tape = ffn_forward(x, w, gcp=gcp)
    analytic = ffn_backward(tape, grad_out, w).as_dict()
    numeric = _fd_all(lambda xx, ww: ffn_forward(xx, ww)[0], x, w, grad_out, h)
    return {n: rel_error(analytic[n], numeric[n]) for n in GRAD_NAMES}


def check_moc(x, w: FfnWeights, cfg: MocConfig, grad_out, h: float = 1e-6) -> dict[str, float]:
    """Compare moc_backward against FD of the loss with the forward's mask frozen."""
    _, tape = moc_forward(x, w, cfg)
    analytic = moc_backward(tape, grad_out, w, cfg).as_dict()
    frozen = tape.mask
    numeric = _fd_all(lambda xx, ww: moc_forward(xx, ww, cfg, mask=frozen)[0], x, w, grad_out, h)
    return {n: rel_error(analytic[n], numeric[n]) for n in GRAD_NAMES}
