"""Volume to mask: intensity normalization, per-slice windows, decoding and
aggregation.

Every depth slice ``d`` gets its own window of K slices at depths
``d + (i - center) * dilation``, clamped to the volume (edge replication).
With ``Target.CENTER`` the window only predicts slice ``d``; with
``Target.ALL`` each window predicts all its slices and the logits landing on
a slice are averaged.
"""

from __future__ import annotations

import enum
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .checkpoint_io import Checkpoint, SegmentationMask, Volume
from .errors import DegenerateRangeError, ShapeError
from .inflation import center_index
from .tensor_core import as_tensor, linear
from .vit3d import ViTConfig, check_checkpoint, embed_window, encoder_forward, head_slices

CT_CLIP_RANGE = (-175.0, 250.0)

# window [C, K, H, W] -> logits [S, H, W, N] with S = 1 or K
LogitsFn = Callable[[np.ndarray], np.ndarray]


class Target(str, enum.Enum):
    CENTER = "center"
    ALL = "all"


@dataclass(frozen=True)
class WindowSpec:
    size: int = 5
    dilation: int = 1
    target: Target = Target.CENTER

    def __post_init__(self):
        object.__setattr__(self, "target", Target(self.target))
        if self.size < 1 or self.dilation < 1:
            raise ValueError(f"window size and dilation must be >= 1, got {self.size}, {self.dilation}")

    def offsets(self) -> list[int]:
        c = center_index(self.size)
        return [(i - c) * self.dilation for i in range(self.size)]


@dataclass(frozen=True)
class PreprocessSpec:
    """Clip to ``[clip_lo, clip_hi]`` and map linearly onto ``[-1, 1]``.

    ``per_volume_max`` selects the MRI rule: the range is ``[0, max(volume)]``
    and the clip bounds are ignored.
    """

    clip_lo: float = CT_CLIP_RANGE[0]
    clip_hi: float = CT_CLIP_RANGE[1]
    per_volume_max: bool = False

    def __post_init__(self):
        if not self.per_volume_max and not self.clip_lo < self.clip_hi:
            raise DegenerateRangeError(f"clip_lo {self.clip_lo} must be below clip_hi {self.clip_hi}")

    @classmethod
    def ct(cls, lo: float = CT_CLIP_RANGE[0], hi: float = CT_CLIP_RANGE[1]) -> "PreprocessSpec":
        return cls(lo, hi)

    @classmethod
    def mri(cls) -> "PreprocessSpec":
        return cls(per_volume_max=True)

    @classmethod
    def for_volume(cls, v: Volume) -> "PreprocessSpec":
        if v.modality == "MRI":
            return cls.mri()
        if v.clip_range is not None:
            return cls(*v.clip_range)
        if v.modality == "CT":
            return cls.ct()
        raise ValueError("volume of modality 'other' needs a clip_range for preprocessing")


def preprocess(v: Volume, spec: PreprocessSpec | None = None) -> Volume:
    spec = spec or PreprocessSpec.for_volume(v)
    x = v.data.astype(np.float64)
    if spec.per_volume_max:
        lo, hi = 0.0, float(x.max())
        if hi <= lo:
            raise DegenerateRangeError(f"MRI volume maximum is {hi}; the range [0, MAX] is empty")
    else:
        lo, hi = float(spec.clip_lo), float(spec.clip_hi)
    y = (np.clip(x, lo, hi) - lo) / (hi - lo) * 2.0 - 1.0
    return Volume(as_tensor(y), modality=v.modality, clip_range=v.clip_range)


def window_indices(depth: int, d: int, w: WindowSpec) -> list[int]:
    return [min(max(d + o, 0), depth - 1) for o in w.offsets()]


def extract_windows(v: Volume, w: WindowSpec, channels: int | None = None) -> list[tuple[int, np.ndarray]]:
    """One ``(d, window)`` pair per depth slice; each window is ``[C, K, H, W]``.

    A single-channel volume is replicated to ``channels`` channels when given
    (grayscale input to an RGB-trained model).
    """
    vox = v.channels_first  # [C, H, W, D]
    if channels is not None and vox.shape[0] == 1 and channels > 1:
        vox = np.repeat(vox, channels, axis=0)
    depth = vox.shape[-1]
    out = []
    for d in range(depth):
        idx = window_indices(depth, d, w)
        window = np.ascontiguousarray(np.moveaxis(vox[..., idx], -1, 1))
        out.append((d, window))
    return out


def decode(tokens: np.ndarray, weight: np.ndarray, bias: np.ndarray, cfg: ViTConfig) -> np.ndarray:
    """Per-token linear head, each token painting its own P x P pixel block.

    Returns logits ``[S, H, W, num_classes]`` where ``S`` is the number of
    slices the head predicts (1 for a center-only head).
    """
    tokens = np.asarray(tokens)
    if tokens.shape != (cfg.num_tokens, cfg.hidden_d):
        raise ShapeError(f"decode expects tokens {(cfg.num_tokens, cfg.hidden_d)}, got {tokens.shape}")
    p, n = cfg.patch_p, cfg.num_classes
    gh, gw = cfg.grid
    out = linear(tokens, weight, bias)
    if out.shape[1] % (p * p * n):
        raise ShapeError(f"head output width {out.shape[1]} is not a multiple of {p}*{p}*{n}")
    s = out.shape[1] // (p * p * n)
    out = out.reshape(gh, gw, s, p, p, n).transpose(2, 0, 3, 1, 4, 5)
    return np.ascontiguousarray(out.reshape(s, gh * p, gw * p, n))


def model_logits_fn(ckpt: Checkpoint, cfg: ViTConfig) -> LogitsFn:
    """Window -> logits for a checkpoint (patch embed, encoder, linear head)."""
    check_checkpoint(ckpt, cfg)

    def run(window: np.ndarray) -> np.ndarray:
        tokens = encoder_forward(embed_window(window, ckpt), ckpt, cfg)
        return decode(tokens, ckpt["head.weight"], ckpt["head.bias"], cfg)

    return run


def aggregate_logits(
    windows: Sequence[tuple[int, np.ndarray]],
    logits_fn: LogitsFn,
    depth: int,
    w: WindowSpec,
    threads: int | None = 1,
) -> np.ndarray:
    """Run ``logits_fn`` on every window and assemble ``[H, W, D, N]`` logits.

    Windows run concurrently when ``threads > 1``; results are combined in
    slice order afterwards, so the output does not depend on scheduling.
    """
    threads = threads or os.cpu_count() or 1
    if threads > 1 and len(windows) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(logits_fn, [win for _, win in windows]))
    else:
        results = [logits_fn(win) for _, win in windows]

    first = np.asarray(results[0])
    _, h, wd, n = first.shape
    if w.target is Target.CENTER:
        out = np.empty((h, wd, depth, n), dtype=np.float32)
        for (d, _), logits in zip(windows, results):
            # a K-slice head still only contributes its center slice here
            out[:, :, d] = logits[logits.shape[0] // 2] if logits.shape[0] > 1 else logits[0]
        return out

    total = np.zeros((h, wd, depth, n), dtype=np.float64)
    count = np.zeros(depth, dtype=np.int64)
    for d, logits in zip((d for d, _ in windows), results):
        if logits.shape[0] != w.size:
            raise ShapeError(f"all-slice target needs {w.size} slices of logits per window, got {logits.shape[0]}")
        for i, z in enumerate(window_indices(depth, d, w)):
            total[:, :, z] += logits[i]
            count[z] += 1
    return as_tensor(total / count[None, None, :, None])


def check_geometry(v: Volume, cfg: ViTConfig, w: WindowSpec, ckpt: Checkpoint | None = None) -> None:
    vox = v.channels_first
    if vox.shape[1:3] != (cfg.image_h, cfg.image_w):
        raise ShapeError(
            f"volume slices are {vox.shape[1]}x{vox.shape[2]} but the model expects "
            f"{cfg.image_h}x{cfg.image_w}; resample before prediction"
        )
    if vox.shape[0] not in (1, cfg.in_channels):
        raise ShapeError(f"volume has {vox.shape[0]} channels, model expects {cfg.in_channels}")
    if ckpt is not None:
        kernel = ckpt["embed.kernel"]
        k = kernel.shape[2] if kernel.ndim == 5 else 1
        if kernel.ndim == 5 and k != w.size:
            raise ShapeError(f"window size {w.size} does not match the model's kernel depth {k}")


def predict_logits(
    v: Volume,
    ckpt: Checkpoint,
    cfg: ViTConfig,
    w: WindowSpec,
    p: PreprocessSpec | None = None,
    threads: int | None = 1,
    normalize: bool = True,
) -> np.ndarray:
    """Aggregated ``[H, W, D, num_classes]`` logits for a volume."""
    check_geometry(v, cfg, w, ckpt)
    fn = model_logits_fn(ckpt, cfg)
    if w.target is Target.ALL and head_slices(ckpt, cfg) != w.size:
        raise ShapeError(f"all-slice target needs a head predicting {w.size} slices")
    if normalize:
        v = preprocess(v, p)
    return aggregate_logits(extract_windows(v, w, cfg.in_channels), fn, v.depth, w, threads)


def predict_volume(
    v: Volume,
    ckpt: Checkpoint,
    cfg: ViTConfig,
    w: WindowSpec,
    p: PreprocessSpec | None = None,
    threads: int | None = 1,
    normalize: bool = True,
) -> SegmentationMask:
    logits = predict_logits(v, ckpt, cfg, w, p, threads, normalize)
    return SegmentationMask(np.argmax(logits, axis=-1), cfg.num_classes)
