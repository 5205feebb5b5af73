"""Turn a 2D patch-embedding kernel (and a whole 2D checkpoint) into one that
accepts a window of K slices.

Only the embedding kernel changes shape. Its depth axis sits right before the
two spatial axes: ``[D, C, P, P] -> [D, C, K, P, P]``.
"""

from __future__ import annotations

import enum
import json
import warnings
from dataclasses import dataclass

import numpy as np

from .checkpoint_io import Checkpoint
from .errors import MissingTensorError, ShapeError
from .tensor_core import as_tensor
from .vit3d import ViTConfig, check_checkpoint, trunc_normal

RANDOM_STD = 0.02


class Strategy(str, enum.Enum):
    AVERAGE = "average"
    CENTERING = "centering"
    RANDOM = "random"


class ChannelMode(str, enum.Enum):
    KEEP = "keep"
    COLLAPSE = "collapse"
    AVERAGE = "average"


class EvenDepthWarning(UserWarning):
    """An even window depth has no exact center slice."""


@dataclass(frozen=True)
class InflationSpec:
    strategy: Strategy = Strategy.CENTERING
    depth: int = 5
    channel_mode: ChannelMode = ChannelMode.KEEP
    channels: int | None = None  # target channel count for ChannelMode.AVERAGE
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "strategy", Strategy(self.strategy))
        object.__setattr__(self, "channel_mode", ChannelMode(self.channel_mode))
        if self.depth < 1:
            raise ValueError(f"inflation depth must be >= 1, got {self.depth}")
        if self.channel_mode is ChannelMode.AVERAGE:
            if self.channels is None or self.channels < 1:
                raise ValueError("average channel mode needs a channel count >= 1")
        elif self.channels is not None:
            raise ValueError(f"channel count only applies to average mode, not {self.channel_mode.value}")

    def to_json(self) -> str:
        return json.dumps(
            {
                "strategy": self.strategy.value,
                "depth": self.depth,
                "channel_mode": self.channel_mode.value,
                "channels": self.channels,
                "seed": self.seed,
            },
            sort_keys=True,
            separators=(",", ":"),
        )

    @classmethod
    def from_json(cls, text: str) -> "InflationSpec":
        return cls(**json.loads(text))


def center_index(k: int) -> int:
    """Index of the center slice of a ``k``-slice window (``k // 2``)."""
    if k < 1:
        raise ValueError(f"window depth must be >= 1, got {k}")
    if k % 2 == 0:
        warnings.warn(f"window depth {k} is even; using slice {k // 2} as center", EvenDepthWarning, stacklevel=2)
    return k // 2


def inflate_kernel(kernel2d: np.ndarray, spec: InflationSpec) -> np.ndarray:
    """Add a depth axis of size ``spec.depth`` to a ``[D, C, P, P]`` kernel.

    Average divides the kernel by K and repeats it on every slice. Centering
    puts the kernel on the center slice and zeros elsewhere. Random ignores
    the kernel values and draws fresh truncated-normal weights (std 0.02).
    """
    kernel2d = as_tensor(kernel2d)
    if kernel2d.ndim != 4:
        raise ShapeError(f"inflate_kernel expects a 4-D kernel [D, C, P, P], got shape {kernel2d.shape}")
    d, c, ph, pw = kernel2d.shape
    k = spec.depth
    if spec.strategy is Strategy.AVERAGE:
        out = np.repeat((kernel2d / np.float32(k))[:, :, None], k, axis=2)
    elif spec.strategy is Strategy.CENTERING:
        out = np.zeros((d, c, k, ph, pw), dtype=np.float32)
        out[:, :, center_index(k)] = kernel2d
    else:
        out = trunc_normal((d, c, k, ph, pw), std=RANDOM_STD, seed=spec.seed)
    return as_tensor(out)


def collapse_channels(kernel: np.ndarray) -> np.ndarray:
    """Sum an RGB kernel ``[D, 3, ...]`` over its channel axis to ``[D, 1, ...]``.

    Convolving the result with a grayscale image equals convolving the RGB
    kernel with that image replicated to three channels.
    """
    kernel = np.asarray(kernel)
    if kernel.ndim < 2 or kernel.shape[1] != 3:
        raise ShapeError(f"collapse_channels expects 3 input channels, got shape {kernel.shape}")
    return as_tensor(kernel.astype(np.float64).sum(axis=1, keepdims=True))


def expand_channels_average(kernel1: np.ndarray, c: int) -> np.ndarray:
    """Spread a single-channel kernel ``[D, 1, ...]`` over ``c`` channels, each ``kernel / c``."""
    kernel1 = as_tensor(kernel1)
    if c < 1:
        raise ValueError(f"channel count must be >= 1, got {c}")
    if kernel1.ndim < 2 or kernel1.shape[1] != 1:
        raise ShapeError(f"expand_channels_average expects 1 input channel, got shape {kernel1.shape}")
    return as_tensor(np.repeat(kernel1 / np.float32(c), c, axis=1))


def adapt_channels(kernel: np.ndarray, spec: InflationSpec) -> np.ndarray:
    if spec.channel_mode is ChannelMode.KEEP:
        return as_tensor(kernel)
    if spec.channel_mode is ChannelMode.COLLAPSE:
        return collapse_channels(kernel)
    if kernel.shape[1] == 3:
        kernel = collapse_channels(kernel)
    return expand_channels_average(kernel, spec.channels)


def output_channels(in_channels: int, spec: InflationSpec) -> int:
    if spec.channel_mode is ChannelMode.KEEP:
        return in_channels
    if spec.channel_mode is ChannelMode.COLLAPSE:
        return 1
    return spec.channels


def inflate_config(cfg2d: ViTConfig, spec: InflationSpec) -> ViTConfig:
    return cfg2d.replace(window_k=spec.depth, in_channels=output_channels(cfg2d.in_channels, spec))


def inflate_checkpoint(ckpt2d: Checkpoint, cfg2d: ViTConfig, spec: InflationSpec) -> Checkpoint:
    """Inflate the embedding kernel of a 2D checkpoint; copy everything else.

    The bias and positional embeddings carry over unchanged: the depth patch
    spans the whole window, so the token grid is the same as in 2D.
    """
    if cfg2d.window_k != 1:
        raise ValueError(f"source config must be 2D (window_k=1), got window_k={cfg2d.window_k}")
    if "embed.kernel" not in ckpt2d:
        raise MissingTensorError("checkpoint lacks tensor 'embed.kernel'")
    if ckpt2d["embed.kernel"].ndim != 4:
        raise ShapeError(f"source embed.kernel must be 4-D, got shape {ckpt2d['embed.kernel'].shape}")
    check_checkpoint(ckpt2d, cfg2d, require_head=False)
    if spec.channel_mode is ChannelMode.COLLAPSE and cfg2d.in_channels != 3:
        raise ShapeError(f"collapse needs a 3-channel source, config has {cfg2d.in_channels}")
    if spec.channel_mode is ChannelMode.AVERAGE and cfg2d.in_channels not in (1, 3):
        raise ShapeError(f"average channel inflation needs a 1- or 3-channel source, got {cfg2d.in_channels}")

    kernel = adapt_channels(ckpt2d["embed.kernel"], spec)
    tensors = dict(ckpt2d.tensors)
    tensors["embed.kernel"] = inflate_kernel(kernel, spec)
    cfg3d = inflate_config(cfg2d, spec)
    metadata = dict(ckpt2d.metadata)
    metadata["inflation_spec"] = spec.to_json()
    metadata["vit_config"] = cfg3d.to_json()
    return Checkpoint(tensors, metadata)
