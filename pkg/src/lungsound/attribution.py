"""Signed attribution maps over input spectrograms.

Two backends: Grad-CAM at the last conv layer of the backbone (the
ReLU output of the final block, before pooling), and Integrated
Gradients on the raw input. Both keep the sign of the evidence; no
ReLU clipping and no per-sample normalization, because downstream band
scores average the raw values.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .audio import LOG_FLOOR, Spectrogram
from .errors import UnsupportedMethodError
from .tensor import Tensor

__all__ = [
    "AttributionMap",
    "gradcam",
    "integrated_gradients",
    "band_profile",
    "bilinear_resize",
]


@dataclass
class AttributionMap:
    """Per-sample relevance, same T x F layout as the input spectrogram."""

    values: np.ndarray  # (T, F), signed float32
    sample_id: str
    class_id: int
    method: str

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float32)
        if self.values.ndim != 2:
            raise ValueError(f"attribution map must be 2-D, got {self.values.shape}")


def bilinear_resize(values: np.ndarray, out_shape: tuple[int, int]) -> np.ndarray:
    """Bilinear interpolation with the align-corners=False convention.

    Source coordinates are sampled at (dst + 0.5) * scale - 0.5 and
    clamped to the valid range, matching the common image-resize
    definition, so corner behavior is exactly testable.
    """
    src = np.asarray(values, dtype=np.float32)
    h, w = src.shape
    oh, ow = out_shape
    if (h, w) == (oh, ow):
        return src.copy()

    def axis_coords(n_src: int, n_dst: int):
        scale = n_src / n_dst
        pos = (np.arange(n_dst, dtype=np.float64) + 0.5) * scale - 0.5
        pos = np.clip(pos, 0.0, n_src - 1.0)
        lo = np.floor(pos).astype(np.int64)
        hi = np.minimum(lo + 1, n_src - 1)
        frac = (pos - lo).astype(np.float32)
        return lo, hi, frac

    r_lo, r_hi, r_f = axis_coords(h, oh)
    c_lo, c_hi, c_f = axis_coords(w, ow)
    top = src[r_lo][:, c_lo] * (1 - c_f) + src[r_lo][:, c_hi] * c_f
    bot = src[r_hi][:, c_lo] * (1 - c_f) + src[r_hi][:, c_hi] * c_f
    return (top * (1 - r_f)[:, None] + bot * r_f[:, None]).astype(np.float32)


def _class_score(model, x: Tensor, class_id: int) -> Tensor:
    logits = model.forward(x, training=False)
    n_classes = logits.shape[-1]
    if not 0 <= class_id < n_classes:
        raise ValueError(f"class {class_id} out of range for {n_classes} classes")
    onehot = np.zeros((1, n_classes), dtype=np.float32)
    onehot[0, class_id] = 1.0
    return (logits * Tensor(onehot)).sum()


def gradcam(model, spec: Spectrogram, class_id: int) -> AttributionMap:
    """Grad-CAM at the last conv layer, upsampled to the input size.

    Weights are the spatial average of d(score)/d(feature map); the
    weighted feature-map sum keeps its sign and is bilinearly resized
    to T x F.
    """
    if not hasattr(model, "last_conv_activation"):
        raise UnsupportedMethodError(
            "grad-cam needs a model with a convolutional backbone exposing "
            "last_conv_activation"
        )
    x = Tensor(spec.values[None, None, :, :])
    if hasattr(model, "zero_grad"):
        model.zero_grad()
    score = _class_score(model, x, class_id)
    act = model.last_conv_activation
    if act is None:
        raise UnsupportedMethodError("model did not record a conv activation")
    score.backward()
    fmaps = act.data[0]  # (M, h, w)
    grads = act.grad[0]
    weights = grads.mean(axis=(1, 2))  # GAP of the gradients
    cam = np.tensordot(weights, fmaps, axes=(0, 0))  # (h, w), signed
    cam = bilinear_resize(cam, (spec.n_frames, spec.n_bands))
    return AttributionMap(cam, sample_id=spec.clip_id, class_id=class_id, method="gradcam")


def integrated_gradients(
    model,
    spec: Spectrogram,
    class_id: int,
    baseline: np.ndarray | None = None,
    steps: int = 50,
) -> AttributionMap:
    """Integrated Gradients from a baseline spectrogram to the input.

    Right-Riemann approximation with ``steps`` points; the default
    baseline is the all-log-floor (silence) spectrogram. Exact on
    linear models for any step count.
    """
    if steps < 1:
        raise ValueError(f"steps must be >= 1, got {steps}")
    x = spec.values.astype(np.float32)
    if baseline is None:
        base = np.full_like(x, np.float32(math.log(LOG_FLOOR)))
    else:
        base = np.asarray(baseline, dtype=np.float32)
        if base.shape != x.shape:
            raise ValueError(f"baseline shape {base.shape} != input {x.shape}")
    diff = x - base
    total = np.zeros_like(x)
    for j in range(1, steps + 1):
        point = base + (j / steps) * diff
        xt = Tensor(point[None, None, :, :], requires_grad=True)
        if hasattr(model, "zero_grad"):
            model.zero_grad()
        score = _class_score(model, xt, class_id)
        score.backward()
        total += xt.grad[0, 0]
    values = diff * (total / np.float32(steps))
    return AttributionMap(values, sample_id=spec.clip_id, class_id=class_id, method="ig")


def band_profile(attr: AttributionMap) -> np.ndarray:
    """Average the map over time: one signed value per band."""
    return attr.values.mean(axis=0)
