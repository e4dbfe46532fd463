"""CNN with temporal self-attention for spectrogram classification.

The backbone is a stack of [5x5 conv (stride 1, pad 2) -> batchnorm ->
ReLU -> 2x2 average pool] blocks. A frequency aggregation step (mean +
max over the band axis) collapses the feature map to a per-frame
vector sequence; scaled dot-product self-attention over time follows,
then temporal mean pooling and a linear classifier.

The attention block can be placed at several points for ablations; at
non-aggregated placements it runs on the frequency-flattened feature
map [B, T', C*F'] so attention stays temporal.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, ShapeError
from .seeding import rng_for
from .tensor import (
    BatchNormState,
    Tensor,
    batchnorm2d,
    conv2d,
    matmul,
    pool2d,
    reduce,
    softmax,
)

__all__ = [
    "ModelConfig",
    "CnnTsa",
    "icbhi_config",
    "sprsound_config",
    "aggregate_frequency",
    "temporal_self_attention",
    "classify_head",
    "feature_shapes",
]

KERNEL = 5
PADDING = 2
POOL = 2


@dataclass(frozen=True)
class ModelConfig:
    """Architecture hyperparameters.

    ``d`` (the attention feature dim) always equals the last conv
    width and must be divisible by 8 so that d_k = d/8 is exact.
    ``n_mel_rows_in`` is the effective band count after masking.
    """

    channels: tuple[int, ...] = (64, 128, 256, 512)
    n_classes: int = 4
    attention_placement: str = "after_aggregation"
    n_mel_rows_in: int = 64

    def __post_init__(self):
        if not self.channels:
            raise ConfigError("channels must be non-empty")
        if self.n_classes < 2:
            raise ConfigError(f"need >=2 classes, got {self.n_classes}")
        if self.d % 8 != 0:
            raise ConfigError(f"feature dim d={self.d} must be divisible by 8")
        if self.n_mel_rows_in < 1:
            raise ConfigError("n_mel_rows_in must be positive")
        allowed = self.allowed_placements()
        if self.attention_placement not in allowed:
            raise ConfigError(
                f"attention_placement {self.attention_placement!r} not in {sorted(allowed)}"
            )

    @property
    def n_conv_blocks(self) -> int:
        return len(self.channels)

    @property
    def d(self) -> int:
        return self.channels[-1]

    @property
    def d_k(self) -> int:
        return self.d // 8

    def allowed_placements(self) -> set[str]:
        mid = {f"after_block_{k}" for k in range(1, self.n_conv_blocks)}
        return {"none", "input", "after_last", "after_aggregation"} | mid

    def band_counts(self) -> list[int]:
        """Band-axis size before block 1, 2, ... and after the last pool."""
        sizes = [self.n_mel_rows_in]
        for _ in self.channels:
            sizes.append(sizes[-1] // POOL)
        return sizes

    def attention_stage(self) -> int | None:
        """Block index before which attention runs.

        0 = on the raw input, k = after block k, n_conv_blocks = after
        the last block, -1 = after frequency aggregation, None = no
        attention.
        """
        p = self.attention_placement
        if p == "none":
            return None
        if p == "input":
            return 0
        if p == "after_last":
            return self.n_conv_blocks
        if p == "after_aggregation":
            return -1
        return int(p.rsplit("_", 1)[1])

    def attention_dims(self) -> tuple[int, int] | None:
        """(model dim, key dim) of the attention block, or None."""
        stage = self.attention_stage()
        if stage is None:
            return None
        if stage == -1:
            return self.d, self.d_k
        n_ch = 1 if stage == 0 else self.channels[stage - 1]
        dm = n_ch * self.band_counts()[stage]
        return dm, max(1, dm // 8)


def icbhi_config(n_classes: int = 4, **overrides) -> ModelConfig:
    """Four-block configuration (d=512) used for ICBHI-style tasks."""
    return ModelConfig(channels=(64, 128, 256, 512), n_classes=n_classes, **overrides)


def sprsound_config(n_classes: int = 7, **overrides) -> ModelConfig:
    """Three-block configuration (d=256) used for SPRSound-style tasks."""
    return ModelConfig(channels=(64, 128, 256), n_classes=n_classes, **overrides)


def feature_shapes(cfg: ModelConfig, n_frames: int) -> list[tuple[int, int, int]]:
    """(channels, T, F) after each conv block for a given frame count."""
    shapes = []
    t, f = n_frames, cfg.n_mel_rows_in
    for cout in cfg.channels:
        t, f = t // POOL, f // POOL
        shapes.append((cout, t, f))
    return shapes


# -- building blocks (usable standalone) -----------------------------------------


def aggregate_frequency(fm: Tensor) -> Tensor:
    """Collapse [B,C,T,F] to [B,T,C] by mean-over-F plus max-over-F."""
    if fm.ndim != 4:
        raise ShapeError(f"aggregate_frequency expects 4-D input, got {fm.shape}")
    summed = reduce(fm, "mean", axis=3) + reduce(fm, "max", axis=3)  # (B,C,T)
    return summed.transpose(0, 2, 1)


def temporal_self_attention(
    x: Tensor,
    wq: Tensor,
    wk: Tensor,
    wv: Tensor,
    return_weights: bool = False,
):
    """Scaled dot-product attention over the time axis of [B,T,d]."""
    if wq.shape != wk.shape or wq.shape[0] != x.shape[-1] or wv.shape[0] != x.shape[-1]:
        raise ShapeError(
            f"attention projections {wq.shape}/{wk.shape}/{wv.shape} do not "
            f"match input {x.shape}"
        )
    d_k = wq.shape[1]
    q = matmul(x, wq)
    k = matmul(x, wk)
    v = matmul(x, wv)
    scores = matmul(q, k.swap_last2()) * (1.0 / math.sqrt(d_k))
    weights = softmax(scores, axis=-1)
    out = matmul(weights, v)
    if return_weights:
        return out, weights
    return out


def classify_head(x: Tensor, w: Tensor, b: Tensor) -> Tensor:
    """Temporal mean pooling of [B,T,d] followed by a linear layer."""
    pooled = reduce(x, "mean", axis=1)  # (B,d)
    return matmul(pooled, w) + b


# -- the model --------------------------------------------------------------------


def _kaiming_uniform(rng: np.random.Generator, shape, fan_in: int) -> np.ndarray:
    bound = math.sqrt(6.0 / fan_in)
    return rng.uniform(-bound, bound, size=shape).astype(np.float32)


class CnnTsa:
    """The classifier; single-writer during training, shareable frozen."""

    def __init__(self, cfg: ModelConfig, seed: int = 0):
        self.cfg = cfg
        self.params: dict[str, Tensor] = {}
        self.bn_states: dict[str, BatchNormState] = {}
        self.last_conv_activation: Tensor | None = None
        rng = rng_for(seed, "model-init")
        cin = 1
        for i, cout in enumerate(cfg.channels, start=1):
            self.params[f"conv{i}.weight"] = Tensor(
                _kaiming_uniform(rng, (cout, cin, KERNEL, KERNEL), cin * KERNEL * KERNEL),
                requires_grad=True,
            )
            self.params[f"bn{i}.gamma"] = Tensor(np.ones(cout, np.float32), requires_grad=True)
            self.params[f"bn{i}.beta"] = Tensor(np.zeros(cout, np.float32), requires_grad=True)
            self.bn_states[f"bn{i}"] = BatchNormState(cout)
            cin = cout
        dims = cfg.attention_dims()
        if dims is not None:
            dm, dk = dims
            self.params["tsa.wq"] = Tensor(_kaiming_uniform(rng, (dm, dk), dm), requires_grad=True)
            self.params["tsa.wk"] = Tensor(_kaiming_uniform(rng, (dm, dk), dm), requires_grad=True)
            self.params["tsa.wv"] = Tensor(_kaiming_uniform(rng, (dm, dm), dm), requires_grad=True)
        # near-zero head init keeps the untrained model an (almost)
        # uniform predictor, so the initial loss sits at the
        # random-predictor value; Adam rescales it within a few steps
        self.params["head.weight"] = Tensor(
            rng.uniform(-1e-3, 1e-3, size=(cfg.d, cfg.n_classes)).astype(np.float32),
            requires_grad=True,
        )
        self.params["head.bias"] = Tensor(np.zeros(cfg.n_classes, np.float32), requires_grad=True)

    # -- forward -------------------------------------------------------------

    def backbone_forward(self, x: Tensor, training: bool = False) -> Tensor:
        """Run the conv blocks only; attention stages inside are applied."""
        return self._run_blocks(x, training)

    def _attend_flat(self, fm: Tensor) -> Tensor:
        """Temporal attention on the frequency-flattened feature map."""
        b, c, t, f = fm.shape
        seq = fm.transpose(0, 2, 1, 3).reshape(b, t, c * f)
        seq = temporal_self_attention(
            seq, self.params["tsa.wq"], self.params["tsa.wk"], self.params["tsa.wv"]
        )
        return seq.reshape(b, t, c, f).transpose(0, 2, 1, 3)

    def _run_blocks(self, x: Tensor, training: bool) -> Tensor:
        cfg = self.cfg
        if x.ndim != 4 or x.shape[1] != 1:
            raise ShapeError(f"expected input [B,1,T,F], got {x.shape}")
        if x.shape[3] != cfg.n_mel_rows_in:
            raise ShapeError(
                f"input has {x.shape[3]} bands but the model was built for "
                f"{cfg.n_mel_rows_in}"
            )
        stage = cfg.attention_stage()
        stage_idx = stage if stage is not None and stage >= 0 else None
        fm = x
        if stage_idx == 0:
            fm = self._attend_flat(fm)
        for i in range(1, cfg.n_conv_blocks + 1):
            fm = conv2d(fm, self.params[f"conv{i}.weight"], stride=1, padding=PADDING)
            fm = batchnorm2d(
                fm,
                self.params[f"bn{i}.gamma"],
                self.params[f"bn{i}.beta"],
                self.bn_states[f"bn{i}"],
                training=training,
            )
            fm = fm.relu()
            if i == cfg.n_conv_blocks:
                self.last_conv_activation = fm
            _, _, t, f = fm.shape
            if t < POOL or f < POOL:
                raise ShapeError(
                    f"conv block {i}: feature map {t}x{f} too small for "
                    f"{POOL}x{POOL} pooling"
                )
            fm = pool2d(fm, "avg", POOL)
            if stage_idx == i:
                fm = self._attend_flat(fm)
        return fm

    def forward(self, x, training: bool = False) -> Tensor:
        """Full forward pass to logits [B, n_classes]."""
        x = x if isinstance(x, Tensor) else Tensor(x)
        fm = self._run_blocks(x, training)
        seq = aggregate_frequency(fm)  # (B, T', d)
        if self.cfg.attention_stage() == -1:
            seq = temporal_self_attention(
                seq, self.params["tsa.wq"], self.params["tsa.wk"], self.params["tsa.wv"]
            )
        return classify_head(seq, self.params["head.weight"], self.params["head.bias"])

    __call__ = forward

    # -- bookkeeping ----------------------------------------------------------

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.zero_grad()

    def n_parameters(self) -> int:
        return sum(p.data.size for p in self.params.values())

    def grads(self) -> dict[str, np.ndarray]:
        return {k: p.grad for k, p in self.params.items() if p.grad is not None}

    def state_dict(self) -> dict[str, np.ndarray]:
        out = {k: p.data.copy() for k, p in self.params.items()}
        for name, st in self.bn_states.items():
            out[f"{name}.running_mean"] = st.running_mean.copy()
            out[f"{name}.running_var"] = st.running_var.copy()
        return out

    def load_state_dict(self, state: dict[str, np.ndarray], strict: bool = True) -> list[str]:
        """Load arrays by name; returns names that were skipped."""
        skipped = []
        for k, arr in state.items():
            if k.endswith(".running_mean") or k.endswith(".running_var"):
                layer, attr = k.rsplit(".", 1)
                st = self.bn_states.get(layer)
                if st is None:
                    skipped.append(k)
                    continue
                getattr(st, attr)[...] = arr
            elif k in self.params:
                if self.params[k].data.shape != arr.shape:
                    raise ShapeError(
                        f"checkpoint tensor {k} has shape {arr.shape}, model "
                        f"expects {self.params[k].data.shape}"
                    )
                self.params[k].data[...] = arr
            else:
                skipped.append(k)
        if strict and skipped:
            raise ConfigError(f"unexpected tensors in state dict: {skipped}")
        return skipped
