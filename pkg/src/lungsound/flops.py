"""FLOP accounting for the classifier.

Counting convention: one multiply-accumulate = 2 FLOPs, applied to
convolutions, linear projections, and the attention matrix products.
Elementwise work (batchnorm, ReLU, pooling, softmax, bias adds) is not
counted. Counts are per input sample (batch size 1).

To cost a band-masked input, build the config with ``n_mel_rows_in``
set to the kept-band count (masked bands are physically removed before
the first convolution, which is what produces the FLOPs reduction).
"""

from __future__ import annotations

from dataclasses import dataclass

from .model import KERNEL, POOL, ModelConfig

__all__ = ["FlopsReport", "conv2d_flops", "matmul_flops", "count_flops"]


def conv2d_flops(cin: int, cout: int, kh: int, kw: int, hout: int, wout: int) -> int:
    """2 * MACs for one conv layer at the given output size."""
    return 2 * cin * kh * kw * hout * wout * cout


def matmul_flops(m: int, k: int, n: int) -> int:
    return 2 * m * k * n


@dataclass
class FlopsReport:
    rows: list[tuple[str, int]]
    n_frames: int
    n_bands: int

    @property
    def total(self) -> int:
        return sum(f for _, f in self.rows)

    def row(self, name: str) -> int:
        for n, f in self.rows:
            if n == name:
                return f
        raise KeyError(name)

    def conv_total(self) -> int:
        return sum(f for n, f in self.rows if n.startswith("conv"))

    def attention_total(self) -> int:
        return sum(f for n, f in self.rows if n.startswith("tsa"))


def _attention_rows(t: int, dm: int, dk: int) -> list[tuple[str, int]]:
    return [
        ("tsa.proj_q", matmul_flops(t, dm, dk)),
        ("tsa.proj_k", matmul_flops(t, dm, dk)),
        ("tsa.proj_v", matmul_flops(t, dm, dm)),
        ("tsa.qkT", matmul_flops(t, dk, t)),
        ("tsa.attnV", matmul_flops(t, t, dm)),
    ]


def count_flops(cfg: ModelConfig, n_frames: int = 249) -> FlopsReport:
    """Per-layer FLOPs for one n_frames x cfg.n_mel_rows_in input."""
    t, f = n_frames, cfg.n_mel_rows_in
    rows: list[tuple[str, int]] = []
    stage = cfg.attention_stage()
    dims = cfg.attention_dims()
    if stage == 0:
        rows.extend(_attention_rows(t, *dims))
    cin = 1
    for i, cout in enumerate(cfg.channels, start=1):
        rows.append((f"conv{i}", conv2d_flops(cin, cout, KERNEL, KERNEL, t, f)))
        t, f = t // POOL, f // POOL
        if stage == i:
            rows.extend(_attention_rows(t, *dims))
        cin = cout
    if stage == -1:
        rows.extend(_attention_rows(t, cfg.d, cfg.d_k))
    rows.append(("head", matmul_flops(1, cfg.d, cfg.n_classes)))
    return FlopsReport(rows=rows, n_frames=n_frames, n_bands=cfg.n_mel_rows_in)
