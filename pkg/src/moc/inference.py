"""Single-token decoding that reads only the weights the active channels need.

MACs count the multiplies of the three projections (gate, up, down); the
elementwise SiLU and gating products are not counted. Byte traffic counts
weights touched only; activations are ignored.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from moc.ffn import FfnWeights
from moc.linalg import ShapeError, silu
from moc.mixture import MocConfig


@dataclass
class MacReport:
    d: int
    d_ffn: int
    k: int
    dense_macs: int
    moc_macs: int
    breakdown: dict = field(default_factory=dict)
    bytes_per_element: int = 2

    @property
    def ratio(self) -> float:
        return self.moc_macs / self.dense_macs

    @property
    def dense_weight_bytes(self) -> int:
        return self.dense_macs * self.bytes_per_element

    @property
    def moc_weight_bytes(self) -> int:
        # every MAC in a GEMV reads one distinct weight
        return self.moc_macs * self.bytes_per_element

    def to_dict(self) -> dict:
        return {
            "note": "byte model counts weights touched only; activations ignored",
            "d": self.d, "d_ffn": self.d_ffn, "k": self.k,
            "dense_macs": self.dense_macs, "moc_macs": self.moc_macs,
            "ratio": self.ratio, "breakdown": dict(self.breakdown),
            "dense_weight_bytes": self.dense_weight_bytes,
            "moc_weight_bytes": self.moc_weight_bytes,
        }


def mac_count(d: int, d_ffn: int, k: int, bytes_per_element: int = 2) -> MacReport:
    if not 0 <= k <= d_ffn:
        raise ValueError(f"K={k} outside [0, d_ffn={d_ffn}]")
    breakdown = {"gate": d * d_ffn, "up": k * d, "down": k * d}
    return MacReport(d, d_ffn, k, 3 * d * d_ffn, sum(breakdown.values()), breakdown,
                     bytes_per_element)


class WeightReader:
    """Read-only view over FFN weights that records what a decode step touches."""

    def __init__(self, w: FfnWeights):
        self._w = w
        self.macs = {"gate": 0, "up": 0, "down": 0}
        self.up_columns: list[int] = []
        self.down_rows: list[int] = []

    def gate_projection(self, x: np.ndarray) -> np.ndarray:
        self.macs["gate"] += x.size * self._w.d_ffn
        return x @ self._w.w_gate

    def up_column(self, j: int) -> np.ndarray:
        self.up_columns.append(j)
        return self._w.w_up[:, j]

    def down_row(self, j: int) -> np.ndarray:
        self.down_rows.append(j)
        return self._w.w_down[j]

    def dot(self, a: np.ndarray, b: np.ndarray, branch: str) -> float:
        self.macs[branch] += a.size
        return float(a @ b)

    def axpy(self, alpha: float, v: np.ndarray, acc: np.ndarray, branch: str) -> None:
        self.macs[branch] += v.size
        acc += alpha * v


def decode_token(x: np.ndarray, w: FfnWeights, cfg: MocConfig,
                 reader: WeightReader | None = None):
    """One decode step. Returns (output 1 x d, MacReport of counted multiplies)."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape != (1, w.d):
        raise ShapeError(f"decode expects a 1 x {w.d} row, got {x.shape}")
    if cfg.gcp:
        raise ValueError("checkpointing has no meaning at decode time")
    cfg.validate(w.d_ffn)
    reader = reader or WeightReader(w)

    g = reader.gate_projection(x)
    active = cfg.make_mask(g).indices[0]
    row = x[0]
    out = np.zeros(w.d)
    for j in active:
        u_j = reader.dot(row, reader.up_column(j), "up")
        z_j = silu(g[0, j]) * u_j
        reader.axpy(z_j, reader.down_row(j), out, "down")

    report = MacReport(w.d, w.d_ffn, len(active), 3 * w.d * w.d_ffn,
                       sum(reader.macs.values()), dict(reader.macs))
    return out.reshape(1, -1), report
