"""Self-check that an inflated checkpoint behaves like its 2D source.

Each check feeds random windows through both models and compares outputs:
centering inflation must reproduce the 2D model on the center slice no matter
what the other slices hold; average inflation must reproduce it on windows of
identical slices. Channel adaptation and archive round-trip are checked too.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .checkpoint_io import Checkpoint, read_archive, write_archive
from .inflation import (
    ChannelMode,
    InflationSpec,
    Strategy,
    adapt_channels,
    center_index,
    collapse_channels,
    expand_channels_average,
    inflate_checkpoint,
    inflate_config,
)
from .seg_pipeline import model_logits_fn
from .vit3d import ViTConfig, embed_window, encoder_forward, patch_embed_2d

RTOL = 1e-5
ATOL = 1e-6


@dataclass
class CheckResult:
    name: str
    passed: bool
    detail: str = ""

    def line(self) -> str:
        return f"[{'PASS' if self.passed else 'FAIL'}] {self.name}" + (f": {self.detail}" if self.detail else "")


def _max_rel(a: np.ndarray, b: np.ndarray) -> float:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    return float(np.max(np.abs(a - b) / (np.abs(b) + 1.0))) if a.size else 0.0


def _close(a, b, rtol=RTOL, atol=ATOL) -> bool:
    return np.shape(a) == np.shape(b) and bool(np.allclose(a, b, rtol=rtol, atol=atol))


def _forward(window: np.ndarray, ckpt: Checkpoint, cfg: ViTConfig) -> np.ndarray:
    if "head.weight" in ckpt:
        return model_logits_fn(ckpt, cfg)(window)
    return encoder_forward(embed_window(window, ckpt), ckpt, cfg)


def _slices(rng, n: int, spec: InflationSpec, c2d: int, c3d: int, h: int, w: int):
    """Random 2D-model slices and matching 3D-model slices of the same content."""
    if spec.channel_mode is ChannelMode.KEEP:
        x = rng.standard_normal((n, c2d, h, w)).astype(np.float32)
        return x, x
    gray = rng.standard_normal((n, 1, h, w)).astype(np.float32)
    return np.repeat(gray, c2d, axis=1), np.repeat(gray, c3d, axis=1)


def check_centering(ckpt2d, cfg2d, inflated, spec, rng, n_windows=3) -> list[CheckResult]:
    cfg3d = inflate_config(cfg2d, spec)
    k = spec.depth
    c = center_index(k)
    kernel = inflated["embed.kernel"]
    expected_center = adapt_channels(ckpt2d["embed.kernel"], spec)
    others = np.delete(kernel, c, axis=2)
    structure_ok = bool(np.all(others == 0)) and np.array_equal(kernel[:, :, c], expected_center)
    results = [CheckResult(
        "centering kernel structure",
        structure_ok,
        "" if structure_ok else f"max |non-center weight| = {float(np.abs(others).max()) if others.size else 0.0:.3g}",
    )]

    worst_embed = worst_out = 0.0
    embed_ok = out_ok = True
    for _ in range(n_windows):
        x2d, x3d = _slices(rng, 1, spec, cfg2d.in_channels, cfg3d.in_channels, cfg2d.image_h, cfg2d.image_w)
        window = (3.0 * rng.standard_normal((cfg3d.in_channels, k, cfg2d.image_h, cfg2d.image_w))).astype(np.float32)
        window[:, c] = x3d[0]
        ref_tokens = patch_embed_2d(x2d[0], ckpt2d["embed.kernel"], ckpt2d["embed.bias"])
        tokens = embed_window(window, inflated)
        worst_embed = max(worst_embed, float(np.max(np.abs(tokens - ref_tokens))))
        embed_ok &= _close(tokens, ref_tokens, rtol=0.0, atol=ATOL * max(1.0, float(np.abs(ref_tokens).max())))
        ref = _forward(x2d[0][:, None], ckpt2d, cfg2d)
        out = _forward(window, inflated, cfg3d)
        worst_out = max(worst_out, _max_rel(out, ref))
        out_ok &= _close(out, ref)
    results.append(CheckResult("centering patch-embedding equivalence", embed_ok, f"max abs diff {worst_embed:.3g}"))
    results.append(CheckResult("centering forward equivalence", out_ok, f"max rel diff {worst_out:.3g}"))
    return results


def check_average(ckpt2d, cfg2d, spec, rng, n_windows=3) -> CheckResult:
    avg = InflationSpec(Strategy.AVERAGE, spec.depth, spec.channel_mode, spec.channels)
    inflated = inflate_checkpoint(ckpt2d, cfg2d, avg)
    cfg3d = inflate_config(cfg2d, avg)
    ok, worst = True, 0.0
    for _ in range(n_windows):
        x2d, x3d = _slices(rng, 1, avg, cfg2d.in_channels, cfg3d.in_channels, cfg2d.image_h, cfg2d.image_w)
        window = np.repeat(x3d[0][:, None], avg.depth, axis=1)
        ref = _forward(x2d[0][:, None], ckpt2d, cfg2d)
        out = _forward(window, inflated, cfg3d)
        worst = max(worst, _max_rel(out, ref))
        ok &= _close(out, ref)
    return CheckResult("average replication equivalence", ok, f"max rel diff {worst:.3g}")


def check_channels(ckpt2d, cfg2d, rng) -> list[CheckResult]:
    kernel = ckpt2d["embed.kernel"]
    bias = ckpt2d["embed.bias"]
    gray = rng.standard_normal((1, cfg2d.image_h, cfg2d.image_w)).astype(np.float32)
    results = []
    if kernel.shape[1] == 3:
        ref = patch_embed_2d(np.repeat(gray, 3, axis=0), kernel, bias)
        out = patch_embed_2d(gray, collapse_channels(kernel), bias)
        results.append(CheckResult("channel collapse equivalence", _close(out, ref), f"max abs diff {float(np.max(np.abs(out - ref))):.3g}"))
        single = collapse_channels(kernel)
    else:
        single = kernel[:, :1] if kernel.shape[1] == 1 else None
    if single is not None:
        ref = patch_embed_2d(gray, single, bias)
        out = patch_embed_2d(np.repeat(gray, 2, axis=0), expand_channels_average(single, 2), bias)
        results.append(CheckResult("channel average-expand equivalence", _close(out, ref), f"max abs diff {float(np.max(np.abs(out - ref))):.3g}"))
    return results


def check_round_trip(ckpt: Checkpoint) -> CheckResult:
    data = write_archive(ckpt)
    back = read_archive(data)
    ok = back.bit_equal(ckpt) and write_archive(back) == data
    return CheckResult("archive round trip", ok, f"{len(data)} bytes")


def verify_checkpoint(
    ckpt2d: Checkpoint,
    cfg2d: ViTConfig,
    depth: int = 5,
    inflated: Checkpoint | None = None,
    seed: int = 0,
    n_windows: int = 3,
) -> list[CheckResult]:
    """Run every equivalence check; ``inflated`` defaults to centering inflation of ``ckpt2d``.

    A supplied ``inflated`` checkpoint must carry its inflation spec in metadata.
    """
    rng = np.random.default_rng(seed)
    if inflated is None:
        spec = InflationSpec(Strategy.CENTERING, depth)
        inflated = inflate_checkpoint(ckpt2d, cfg2d, spec)
    else:
        spec = InflationSpec.from_json(inflated.metadata["inflation_spec"])
        if spec.strategy is not Strategy.CENTERING:
            raise ValueError(f"verification expects a centering-inflated checkpoint, got {spec.strategy.value}")
    results = check_centering(ckpt2d, cfg2d, inflated, spec, rng, n_windows)
    results.append(check_average(ckpt2d, cfg2d, spec, rng, n_windows))
    results.extend(check_channels(ckpt2d, cfg2d, rng))
    results.append(check_round_trip(inflated))
    return results
