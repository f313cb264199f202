"""Analytic activation-memory accounting for one transformer layer and a model.

Per layer (elements): attention 5bsd (Q, K, V, A, O with flash attention),
RMSNorm 2bsd, residual 2bsd, and the FFN term below. FFN costs:

    dense        4 bs d_ffn + bsd    G, U, S, Z and D
    dense+gcp    2 bs d_ffn + bsd    G, U and D
    moc          5 bsK + bsd         compact G, U, S, Z, K mask indices, D
    moc+gcp      3 bsK + bsd         compact G, U, K mask indices, D

Mask indices are costed one element wide per selected channel.
"""

from __future__ import annotations

import csv
import enum
import io
import json
from dataclasses import asdict, dataclass, field
from fractions import Fraction

import numpy as np

from moc.ffn import DenseTape
from moc.mixture import MocTape


class Variant(str, enum.Enum):
    DENSE = "dense"
    DENSE_GCP = "dense_gcp"
    MOC = "moc"
    MOC_GCP = "moc_gcp"

    @property
    def is_moc(self) -> bool:
        return self in (Variant.MOC, Variant.MOC_GCP)

    @property
    def is_gcp(self) -> bool:
        return self in (Variant.DENSE_GCP, Variant.MOC_GCP)


@dataclass(frozen=True)
class LayerShape:
    b: int
    s: int
    d: int
    d_ffn: int
    h: int = 1
    bytes_per_element: int = 2
    bytes_per_index: int | None = None

    def __post_init__(self):
        for name in ("b", "s", "d", "d_ffn", "h", "bytes_per_element"):
            if getattr(self, name) <= 0:
                raise ValueError(f"LayerShape.{name} must be positive, got {getattr(self, name)}")
        if self.d % self.h:
            raise ValueError(f"LayerShape.h={self.h} does not divide d={self.d}")
        if self.bytes_per_index is None:
            object.__setattr__(self, "bytes_per_index", self.bytes_per_element)
        elif self.bytes_per_index <= 0:
            raise ValueError("LayerShape.bytes_per_index must be positive")

    @property
    def bsd(self) -> int:
        return self.b * self.s * self.d


def _check_k(shape: LayerShape, variant: Variant, k) -> int:
    if not variant.is_moc:
        return shape.d_ffn
    if k is None:
        raise ValueError(f"variant {variant.value} needs K")
    if not 0 <= k <= shape.d_ffn:
        raise ValueError(f"K={k} outside [0, d_ffn={shape.d_ffn}]")
    return int(k)


def ffn_index_elems(shape: LayerShape, variant: Variant, k: int | None = None) -> int:
    variant = Variant(variant)
    k = _check_k(shape, variant, k)
    return shape.b * shape.s * k if variant.is_moc else 0


def ffn_activation_elems(shape: LayerShape, variant: Variant, k: int | None = None) -> int:
    """Stored FFN activation slots (values plus mask indices), including D."""
    variant = Variant(variant)
    k = _check_k(shape, variant, k)
    bs = shape.b * shape.s
    per_token = {
        Variant.DENSE: 4 * shape.d_ffn,
        Variant.DENSE_GCP: 2 * shape.d_ffn,
        Variant.MOC: 5 * k,
        Variant.MOC_GCP: 3 * k,
    }[variant]
    return bs * (per_token + shape.d)


def gcp_recompute_elems(shape: LayerShape, variant: Variant, k: int | None = None) -> int:
    """Elementwise values rebuilt in backward (S and Z); 0 without checkpointing."""
    variant = Variant(variant)
    k = _check_k(shape, variant, k)
    if variant is Variant.DENSE_GCP:
        return 2 * shape.b * shape.s * shape.d_ffn
    if variant is Variant.MOC_GCP:
        return 2 * shape.b * shape.s * k
    return 0


def ffn_cost_per_bsd(variant: Variant, ffn_ratio: Fraction,
                     k_frac: Fraction = Fraction(1)) -> Fraction:
    """FFN memory in units of bsd, with d_ffn = ffn_ratio*d and K = k_frac*d_ffn."""
    variant = Variant(variant)
    ffn_ratio, k_frac = Fraction(ffn_ratio), Fraction(k_frac)
    k_ratio = k_frac * ffn_ratio
    return {
        Variant.DENSE: 4 * ffn_ratio,
        Variant.DENSE_GCP: 2 * ffn_ratio,
        Variant.MOC: 5 * k_ratio,
        Variant.MOC_GCP: 3 * k_ratio,
    }[variant] + 1


def recompute_per_bsd(variant: Variant, ffn_ratio: Fraction,
                      k_frac: Fraction = Fraction(1)) -> Fraction:
    variant = Variant(variant)
    ffn_ratio, k_frac = Fraction(ffn_ratio), Fraction(k_frac)
    if variant is Variant.DENSE_GCP:
        return 2 * ffn_ratio
    if variant is Variant.MOC_GCP:
        return 2 * k_frac * ffn_ratio
    return Fraction(0)


@dataclass
class MemoryReport:
    variant: str
    k: int | None
    attention_elems: int
    ffn_elems: int
    ffn_index_elems: int
    rmsnorm_elems: int
    residual_elems: int
    per_layer_elems: int
    gcp_recompute_elems: int
    bytes_per_element: int
    bytes_per_index: int
    n_layers: int = 1
    lm_head_elems: int = 0
    lm_head_bytes_per_element: int = 4
    extra: dict = field(default_factory=dict)

    def component_bytes(self, name: str) -> int:
        if name == "ffn":
            idx = self.ffn_index_elems
            return (self.ffn_elems - idx) * self.bytes_per_element + idx * self.bytes_per_index
        if name == "per_layer":
            return sum(self.component_bytes(c) for c in ("attention", "ffn", "rmsnorm", "residual"))
        if name == "lm_head":
            return self.lm_head_elems * self.lm_head_bytes_per_element
        return getattr(self, f"{name}_elems") * self.bytes_per_element

    @property
    def total_elems(self) -> int:
        return self.n_layers * self.per_layer_elems + self.lm_head_elems

    @property
    def total_bytes(self) -> int:
        return self.n_layers * self.component_bytes("per_layer") + self.component_bytes("lm_head")

    def rows(self) -> list[tuple[str, int, int]]:
        """(component, elements, bytes) rows; per-layer components are for one layer."""
        out = [(c, getattr(self, f"{c}_elems"), self.component_bytes(c))
               for c in ("attention", "ffn", "rmsnorm", "residual", "per_layer")]
        if self.n_layers > 1 or self.lm_head_elems:
            out.append(("lm_head", self.lm_head_elems, self.component_bytes("lm_head")))
            out.append(("total", self.total_elems, self.total_bytes))
        out.append(("gcp_recompute", self.gcp_recompute_elems, 0))
        return out

    def to_dict(self) -> dict:
        d = asdict(self)
        d.update(total_elems=self.total_elems, total_bytes=self.total_bytes,
                 components={c: {"elements": e, "bytes": b} for c, e, b in self.rows()})
        return d


def layer_activation_elems(shape: LayerShape, variant: Variant, k: int | None = None) -> MemoryReport:
    variant = Variant(variant)
    bsd = shape.bsd
    ffn = ffn_activation_elems(shape, variant, k)
    attention, rmsnorm, residual = 5 * bsd, 2 * bsd, 2 * bsd
    return MemoryReport(
        variant=variant.value,
        k=k if variant.is_moc else None,
        attention_elems=attention,
        ffn_elems=ffn,
        ffn_index_elems=ffn_index_elems(shape, variant, k),
        rmsnorm_elems=rmsnorm,
        residual_elems=residual,
        per_layer_elems=attention + ffn + rmsnorm + residual,
        gcp_recompute_elems=gcp_recompute_elems(shape, variant, k),
        bytes_per_element=shape.bytes_per_element,
        bytes_per_index=shape.bytes_per_index,
    )


def model_report(shape: LayerShape, n_layers: int, vocab: int,
                 lm_head_bytes_per_element: int = 4,
                 variant: Variant = Variant.DENSE, k: int | None = None) -> MemoryReport:
    """Whole-model activations: n_layers identical layers plus b*s*vocab logits."""
    rep = layer_activation_elems(shape, variant, k)
    rep.n_layers = n_layers
    rep.lm_head_elems = shape.b * shape.s * vocab
    rep.lm_head_bytes_per_element = lm_head_bytes_per_element
    rep.gcp_recompute_elems *= n_layers
    return rep


def reports_to_json(reports: list[MemoryReport]) -> str:
    return json.dumps([r.to_dict() for r in reports], indent=2)


def reports_to_csv(reports: list[MemoryReport]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf)
    writer.writerow(["variant", "component", "elements", "bytes"])
    for r in reports:
        for comp, elems, nbytes in r.rows():
            writer.writerow([r.variant, comp, elems, nbytes])
    return buf.getvalue()


class TapeAuditError(AssertionError):
    pass


@dataclass
class TapeAudit:
    variant: str
    counted: dict[str, int]
    expected: dict[str, int]

    @property
    def total_counted(self) -> int:
        return sum(self.counted.values())

    @property
    def total_expected(self) -> int:
        return sum(self.expected.values())

    @property
    def ok(self) -> bool:
        return self.counted == self.expected

    def diff(self) -> str:
        keys = sorted(set(self.counted) | set(self.expected))
        lines = [f"{k:>5}: stored {self.counted.get(k, 0)}, model {self.expected.get(k, 0)}"
                 for k in keys if self.counted.get(k) != self.expected.get(k)]
        return "\n".join(lines)


def _expected_arrays(s: int, d: int, d_ffn: int, variant: Variant, k: int) -> dict[str, int]:
    if variant.is_moc:
        out = {"X": s * d, "G*M": s * k, "U*M": s * k}
        if not variant.is_gcp:
            out.update({"S*M": s * k, "Z*M": s * k})
        out["M"] = s * k
    else:
        out = {"X": s * d, "G": s * d_ffn, "U": s * d_ffn}
        if not variant.is_gcp:
            out.update(S=s * d_ffn, Z=s * d_ffn)
    return out


def audit_tape(tape: DenseTape | MocTape, shape: LayerShape | None = None,
               variant: Variant | None = None, k: int | None = None) -> TapeAudit:
    """Count what a forward pass actually stored and compare with the model.

    The layer input X stands in for the output D in the model's bsd term (both
    are s x d). Raises TapeAuditError with a per-array diff on any mismatch.
    """
    is_moc = isinstance(tape, MocTape)
    if variant is None:
        variant = {(False, False): Variant.DENSE, (False, True): Variant.DENSE_GCP,
                   (True, False): Variant.MOC, (True, True): Variant.MOC_GCP}[(is_moc, tape.gcp)]
    variant = Variant(variant)
    s, d = tape.x.shape
    d_ffn = tape.mask.total_channels if is_moc else tape.g.shape[1]
    if is_moc and k is None:
        k = tape.mask.k
    if shape is None:
        shape = LayerShape(b=1, s=s, d=d, d_ffn=d_ffn)
    counted = {name: int(np.size(arr)) for name, arr in tape.stored().items()}
    expected = _expected_arrays(shape.b * shape.s, shape.d, shape.d_ffn, variant, k)
    audit = TapeAudit(variant.value, counted, expected)
    model_total = ffn_activation_elems(shape, variant, k)  # D term swapped for X, same size
    if not audit.ok or audit.total_counted != model_total:
        raise TapeAuditError(f"tape does not match {variant.value} model "
                             f"(stored {audit.total_counted}, model {model_total}):\n{audit.diff()}")
    return audit
