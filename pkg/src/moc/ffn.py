"""Standard SwiGLU feed-forward layer with a hand-written backward pass."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from moc.linalg import ShapeError, matmul, silu, silu_grad


@dataclass(frozen=True)
class FfnWeights:
    w_gate: np.ndarray  # d x d_ffn
    w_up: np.ndarray    # d x d_ffn
    w_down: np.ndarray  # d_ffn x d

    def __post_init__(self):
        d, d_ffn = self.w_gate.shape
        if self.w_up.shape != (d, d_ffn) or self.w_down.shape != (d_ffn, d):
            raise ShapeError(
                f"inconsistent FFN weights: gate {self.w_gate.shape}, "
                f"up {self.w_up.shape}, down {self.w_down.shape}")

    @property
    def d(self) -> int:
        return self.w_gate.shape[0]

    @property
    def d_ffn(self) -> int:
        return self.w_gate.shape[1]

    def as_tuple(self):
        return self.w_gate, self.w_up, self.w_down

    def replace(self, **kw) -> "FfnWeights":
        parts = dict(w_gate=self.w_gate, w_up=self.w_up, w_down=self.w_down)
        parts.update(kw)
        return FfnWeights(**parts)

    @classmethod
    def random(cls, d: int, d_ffn: int, rng: np.random.Generator, scale: float = 1.0):
        """Gaussian init with fan-in scaling."""
        return cls(
            rng.standard_normal((d, d_ffn)) * scale / np.sqrt(d),
            rng.standard_normal((d, d_ffn)) * scale / np.sqrt(d),
            rng.standard_normal((d_ffn, d)) * scale / np.sqrt(d_ffn),
        )


@dataclass(frozen=True)
class DenseTape:
    """Activations kept for the backward pass.

    The full variant keeps X, G, U, S, Z; the checkpointed one keeps X, G, U
    and rebuilds S and Z on the way back.
    """
    gcp: bool
    x: np.ndarray
    g: np.ndarray
    u: np.ndarray
    s: np.ndarray | None = None
    z: np.ndarray | None = None

    def stored(self) -> dict[str, np.ndarray]:
        out = {"X": self.x, "G": self.g, "U": self.u}
        if not self.gcp:
            out.update(S=self.s, Z=self.z)
        return out


@dataclass
class FfnGradients:
    w_gate: np.ndarray
    w_up: np.ndarray
    w_down: np.ndarray
    x: np.ndarray
    recomputed: int = field(default=0)  # elementwise values rebuilt under GCP

    def as_dict(self) -> dict[str, np.ndarray]:
        return {"w_gate": self.w_gate, "w_up": self.w_up, "w_down": self.w_down, "x": self.x}


def _check_input(x: np.ndarray, w: FfnWeights):
    if np.ndim(x) != 2 or x.shape[1] != w.d:
        raise ShapeError(f"input shape {np.shape(x)} incompatible with d={w.d}")


def ffn_forward(x: np.ndarray, w: FfnWeights, gcp: bool = False):
    """D = (SiLU(X W_gate) * (X W_up)) W_down, plus the tape for backprop."""
    _check_input(x, w)
    g = matmul(x, w.w_gate)
    u = matmul(x, w.w_up)
    s = silu(g)
    z = s * u
    d_out = matmul(z, w.w_down)
    if gcp:
        tape = DenseTape(True, x, g, u)
    else:
        tape = DenseTape(False, x, g, u, s, z)
    return d_out, tape


def ffn_backward(tape: DenseTape, grad_out: np.ndarray, w: FfnWeights) -> FfnGradients:
    x, g, u = tape.x, tape.g, tape.u
    if g.shape != (x.shape[0], w.d_ffn) or x.shape[1] != w.d:
        raise ShapeError(f"tape shapes X{x.shape} G{g.shape} do not match weights "
                         f"d={w.d}, d_ffn={w.d_ffn}")
    if grad_out.shape != (x.shape[0], w.d):
        raise ShapeError(f"output gradient shape {grad_out.shape}, expected {(x.shape[0], w.d)}")
    recomputed = 0
    if tape.gcp:
        s = silu(g)
        z = s * u
        recomputed = s.size + z.size
    else:
        s, z = tape.s, tape.z

    d_wdown = matmul(z.T, grad_out)
    dz = matmul(grad_out, w.w_down.T)
    ds = u * dz
    du = s * dz
    dg = ds * silu_grad(g)
    return FfnGradients(
        w_gate=matmul(x.T, dg),
        w_up=matmul(x.T, du),
        w_down=d_wdown,
        x=matmul(dg, w.w_gate.T) + matmul(du, w.w_up.T),
        recomputed=recomputed,
    )


def probe_loss(d_out: np.ndarray, grad_out: np.ndarray) -> float:
    """sum(D * dD): a scalar loss whose gradient w.r.t. D is exactly dD."""
    return float(np.sum(d_out * grad_out))
