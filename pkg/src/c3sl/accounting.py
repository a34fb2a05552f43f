"""Parameter, FLOP and traffic accounting for C3-SL and BottleNet++.

The formulas are evaluated in exact integer arithmetic.
FLOPs of the circular-convolution codec are counted for the direct O(D^2)
evaluation (one multiply-accumulate per term), independent of how the codec
is actually executed.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

from .errors import InvalidArgument

# Cut-layer shapes of the two reference configurations (C, H, W); D = C*H*W.
VGG16_CUT = (512, 2, 2)  # D = 2048
RESNET50_CUT = (1024, 2, 2)  # D = 4096
REF_BATCH = 64
REF_KERNEL = 2


def _positive(**values) -> None:
    for name, v in values.items():
        if not isinstance(v, int) or v < 1:
            raise InvalidArgument(f"{name} must be a positive integer, got {v!r}")


@dataclass(frozen=True)
class CostInputs:
    B: int
    C: int
    H: int
    W: int
    R: int
    k: int = REF_KERNEL
    H_out: int | None = None
    W_out: int | None = None

    def __post_init__(self):
        _positive(B=self.B, C=self.C, H=self.H, W=self.W, R=self.R, k=self.k)
        # default: stride (2, 2), the usual BottleNet++ setup
        if self.H_out is None:
            object.__setattr__(self, "H_out", max(self.H // 2, 1))
        if self.W_out is None:
            object.__setattr__(self, "W_out", max(self.W // 2, 1))
        _positive(H_out=self.H_out, W_out=self.W_out)

    @property
    def D(self) -> int:
        return self.C * self.H * self.W


@dataclass
class CostReport:
    method: str
    R: int
    params: int
    flops: int
    forward_bytes: int
    backward_bytes: int
    notes: list[str] = field(default_factory=list)

    def to_dict(self) -> dict:
        return asdict(self)


def c3sl_params(R: int, D: int) -> int:
    """R keys of D entries each."""
    _positive(R=R, D=D)
    return R * D


def c3sl_flops(B: int, D: int) -> int:
    """2*B*D^2: one D^2 convolution per sample to encode, one correlation to decode."""
    _positive(B=B, D=D)
    return 2 * B * D * D


def bottlenet_params(C: int, k: int, R: int) -> int:
    """Conv encoder with 4C/R filters plus transposed-conv decoder back to C channels."""
    _positive(C=C, k=k, R=R)
    c_out = 4 * C // R
    return (C * k * k + 1) * c_out + (c_out * k * k + 1) * C


def bottlenet_flops(B: int, C: int, k: int, R: int, H: int, W: int, H_out: int, W_out: int) -> int:
    _positive(B=B, C=C, k=k, R=R, H=H, W=W, H_out=H_out, W_out=W_out)
    encoder = B * (2 * C * k * k + 1) * (4 * C // R) * H_out * W_out
    decoder = B * ((8 * C // R) * k * k + 1) * C * H * W
    return encoder + decoder


def bottlenet_notes(C: int, R: int) -> list[str]:
    notes = []
    if (4 * C) % R:
        notes.append(f"4C={4 * C} not divisible by R={R}; channel count floored")
    if (8 * C) % R:
        notes.append(f"8C={8 * C} not divisible by R={R}; floored")
    return notes


def comm_bytes(B: int, D: int, R: int, bytes_per_scalar: int = 4) -> tuple[int, int]:
    """(forward, backward) feature-block bytes per batch; labels are not included."""
    _positive(B=B, D=D, R=R, bytes_per_scalar=bytes_per_scalar)
    block = math.ceil(B / R) * D * bytes_per_scalar
    return block, block


def label_bytes(B: int) -> int:
    return 4 * B


def c3sl_report(inputs: CostInputs, bytes_per_scalar: int = 4) -> CostReport:
    fwd, bwd = comm_bytes(inputs.B, inputs.D, inputs.R, bytes_per_scalar)
    return CostReport("C3-SL", inputs.R, c3sl_params(inputs.R, inputs.D),
                      c3sl_flops(inputs.B, inputs.D), fwd, bwd)


def bottlenet_report(inputs: CostInputs, bytes_per_scalar: int = 4) -> CostReport:
    # BottleNet++ transmits 4C/R channels at (H', W') per sample
    c_out = 4 * inputs.C // inputs.R
    block = inputs.B * c_out * inputs.H_out * inputs.W_out * bytes_per_scalar
    return CostReport(
        "BottleNet++", inputs.R,
        bottlenet_params(inputs.C, inputs.k, inputs.R),
        bottlenet_flops(inputs.B, inputs.C, inputs.k, inputs.R, inputs.H, inputs.W,
                        inputs.H_out, inputs.W_out),
        block, block, bottlenet_notes(inputs.C, inputs.R),
    )


def report_grid(cut: tuple[int, int, int] = VGG16_CUT, ratios=(2, 4, 8, 16),
                B: int = REF_BATCH, k: int = REF_KERNEL) -> list[CostReport]:
    C, H, W = cut
    rows = []
    for R in ratios:
        inputs = CostInputs(B=B, C=C, H=H, W=W, R=R, k=k)
        rows.append(bottlenet_report(inputs))
        rows.append(c3sl_report(inputs))
    return rows


def format_table(rows: list[CostReport]) -> str:
    lines = [f"{'method':<12} {'R':>3} {'params(x1e3)':>13} {'FLOPs(x1e9)':>12} "
             f"{'fwd bytes':>10} {'bwd bytes':>10}"]
    for r in rows:
        lines.append(f"{r.method:<12} {r.R:>3} {r.params / 1e3:>13.1f} {r.flops / 1e9:>12.2f} "
                     f"{r.forward_bytes:>10} {r.backward_bytes:>10}")
    return "\n".join(lines)
