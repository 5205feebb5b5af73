"""Plain ViT encoder with 2D or 3D (depth-spanning) patch embedding.

Canonical checkpoint names (``i`` runs over ``0..layers-1``)::

    embed.kernel            [D, C, P, P] (2D) or [D, C, K, P, P] (3D)
    embed.bias              [D]
    embed.pos               [T, D]
    layer{i}.norm1.weight   [D]        layer{i}.norm1.bias   [D]
    layer{i}.attn.qkv.weight [3D, D]   layer{i}.attn.qkv.bias [3D]
    layer{i}.attn.proj.weight [D, D]   layer{i}.attn.proj.bias [D]
    layer{i}.norm2.weight   [D]        layer{i}.norm2.bias   [D]
    layer{i}.mlp.fc1.weight [M, D]     layer{i}.mlp.fc1.bias [M]
    layer{i}.mlp.fc2.weight [D, M]     layer{i}.mlp.fc2.bias [D]
    norm.weight, norm.bias  [D]
    head.weight             [S*P*P*N, D]  (S = 1, or K for all-slice heads)
    head.bias               [S*P*P*N]

Linear weights are stored ``[out, in]``. There is no class token.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass

import numpy as np
from scipy.stats import truncnorm

from .checkpoint_io import Checkpoint
from .errors import MissingTensorError, ShapeError
from .tensor_core import as_tensor, gelu, layer_norm, linear, matmul, softmax_lastdim


@dataclass(frozen=True)
class ViTConfig:
    image_h: int
    image_w: int
    patch_p: int
    window_k: int = 1
    in_channels: int = 3
    hidden_d: int = 768
    layers_l: int = 12
    heads: int = 12
    mlp_ratio: int = 4
    num_classes: int = 14
    layernorm_eps: float = 1e-6

    def __post_init__(self):
        for name in ("image_h", "image_w", "patch_p", "window_k", "in_channels", "hidden_d", "heads", "mlp_ratio"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive, got {getattr(self, name)}")
        if self.layers_l < 0 or self.num_classes < 1:
            raise ValueError("layers_l must be >= 0 and num_classes >= 1")
        if self.image_h % self.patch_p or self.image_w % self.patch_p:
            raise ValueError(
                f"image {self.image_h}x{self.image_w} is not divisible by patch size {self.patch_p}"
            )
        if self.hidden_d % self.heads:
            raise ValueError(f"hidden_d {self.hidden_d} is not divisible by heads {self.heads}")

    @property
    def grid(self) -> tuple[int, int]:
        return self.image_h // self.patch_p, self.image_w // self.patch_p

    @property
    def num_tokens(self) -> int:
        gh, gw = self.grid
        return gh * gw

    @property
    def head_dim(self) -> int:
        return self.hidden_d // self.heads

    @property
    def mlp_dim(self) -> int:
        return self.mlp_ratio * self.hidden_d

    def replace(self, **changes) -> "ViTConfig":
        return dataclasses.replace(self, **changes)

    def to_json(self) -> str:
        return json.dumps(dataclasses.asdict(self), sort_keys=True, separators=(",", ":"))

    @classmethod
    def from_dict(cls, d: dict) -> "ViTConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown ViTConfig keys: {sorted(unknown)}")
        return cls(**d)

    @classmethod
    def from_json(cls, text: str) -> "ViTConfig":
        return cls.from_dict(json.loads(text))

    @classmethod
    def base(cls, **overrides) -> "ViTConfig":
        """ViT-B/16 at 512x512 (about 86M encoder parameters)."""
        params = dict(image_h=512, image_w=512, patch_p=16, hidden_d=768, layers_l=12, heads=12)
        params.update(overrides)
        return cls(**params)


def expected_shapes(cfg: ViTConfig, head_slices: int | None = 1) -> dict[str, tuple[int, ...]]:
    """Shapes of every canonical tensor for ``cfg``.

    The embedding kernel is 4-D when ``cfg.window_k == 1`` and 5-D otherwise;
    callers that need a depth-1 5-D kernel check it themselves. Pass
    ``head_slices=None`` to omit the decoder head.
    """
    d, m, p = cfg.hidden_d, cfg.mlp_dim, cfg.patch_p
    kernel = (d, cfg.in_channels, p, p) if cfg.window_k == 1 else (d, cfg.in_channels, cfg.window_k, p, p)
    shapes = {
        "embed.kernel": kernel,
        "embed.bias": (d,),
        "embed.pos": (cfg.num_tokens, d),
    }
    for i in range(cfg.layers_l):
        shapes.update({
            f"layer{i}.norm1.weight": (d,),
            f"layer{i}.norm1.bias": (d,),
            f"layer{i}.attn.qkv.weight": (3 * d, d),
            f"layer{i}.attn.qkv.bias": (3 * d,),
            f"layer{i}.attn.proj.weight": (d, d),
            f"layer{i}.attn.proj.bias": (d,),
            f"layer{i}.norm2.weight": (d,),
            f"layer{i}.norm2.bias": (d,),
            f"layer{i}.mlp.fc1.weight": (m, d),
            f"layer{i}.mlp.fc1.bias": (m,),
            f"layer{i}.mlp.fc2.weight": (d, m),
            f"layer{i}.mlp.fc2.bias": (d,),
        })
    shapes["norm.weight"] = (d,)
    shapes["norm.bias"] = (d,)
    if head_slices is not None:
        out = head_slices * p * p * cfg.num_classes
        shapes["head.weight"] = (out, d)
        shapes["head.bias"] = (out,)
    return shapes


def random_checkpoint(cfg: ViTConfig, seed: int = 0, scale: float = 0.2, head_slices: int = 1) -> Checkpoint:
    """Random weights for ``cfg``; layer-norm gains near 1, everything else N(0, scale)."""
    rng = np.random.default_rng(seed)
    tensors = {}
    for name, shape in expected_shapes(cfg, head_slices).items():
        if name.endswith(("norm1.weight", "norm2.weight")) or name == "norm.weight":
            tensors[name] = 1.0 + 0.1 * rng.standard_normal(shape)
        else:
            tensors[name] = scale * rng.standard_normal(shape)
    return Checkpoint(tensors, {"vit_config": cfg.to_json(), "source": f"random:{seed}"})


def trunc_normal(shape, std: float = 0.02, seed: int = 0) -> np.ndarray:
    """Zero-mean normal samples truncated at two standard deviations."""
    rng = np.random.default_rng(seed)
    return as_tensor(truncnorm.rvs(-2.0, 2.0, loc=0.0, scale=std, size=shape, random_state=rng))


def config_from_checkpoint(ckpt: Checkpoint) -> ViTConfig:
    try:
        return ViTConfig.from_json(ckpt.metadata["vit_config"])
    except KeyError:
        raise MissingTensorError("checkpoint metadata has no 'vit_config'; supply a config") from None


def check_checkpoint(ckpt: Checkpoint, cfg: ViTConfig, require_head: bool = True) -> None:
    """Raise if any canonical tensor is missing or has a shape inconsistent with ``cfg``."""
    shapes = expected_shapes(cfg, head_slices=None)
    for name, shape in shapes.items():
        if name not in ckpt:
            raise MissingTensorError(f"checkpoint lacks tensor {name!r}")
        actual = ckpt[name].shape
        if name == "embed.kernel" and cfg.window_k == 1 and actual == shape[:2] + (1,) + shape[2:]:
            continue
        if actual != shape:
            raise ShapeError(f"tensor {name!r} has shape {actual}, config expects {shape}")
    if require_head:
        head_slices(ckpt, cfg)


def head_slices(ckpt: Checkpoint, cfg: ViTConfig) -> int:
    """Number of depth slices the decoder head predicts per window."""
    for name in ("head.weight", "head.bias"):
        if name not in ckpt:
            raise MissingTensorError(f"checkpoint lacks tensor {name!r}")
    w, b = ckpt["head.weight"], ckpt["head.bias"]
    per_slice = cfg.patch_p * cfg.patch_p * cfg.num_classes
    if w.ndim != 2 or w.shape[1] != cfg.hidden_d or w.shape[0] % per_slice or b.shape != (w.shape[0],):
        raise ShapeError(
            f"head weight {w.shape} / bias {b.shape} incompatible with "
            f"{cfg.patch_p}x{cfg.patch_p}x{cfg.num_classes} outputs of width {cfg.hidden_d}"
        )
    return w.shape[0] // per_slice


def _patches(x: np.ndarray, p: int) -> np.ndarray:
    """``[*lead, H, W] -> [T, prod(lead) * p * p]`` with row-major patch order."""
    *lead, h, w = x.shape
    gh, gw = h // p, w // p
    n = int(np.prod(lead, dtype=np.int64))
    x = x.reshape(n, gh, p, gw, p)
    return x.transpose(1, 3, 0, 2, 4).reshape(gh * gw, n * p * p)


def patch_embed_2d(image: np.ndarray, kernel: np.ndarray, bias: np.ndarray) -> np.ndarray:
    """Strided convolution with kernel = stride = P, as ``[C, H, W] -> [T, D]``."""
    image = np.asarray(image)
    kernel = np.asarray(kernel)
    if image.ndim != 3 or kernel.ndim != 4:
        raise ShapeError(f"patch_embed_2d: expected image [C,H,W] and kernel [D,C,P,P], got {image.shape}, {kernel.shape}")
    d, c, p, p2 = kernel.shape
    if p != p2 or image.shape[0] != c or image.shape[1] % p or image.shape[2] % p:
        raise ShapeError(f"patch_embed_2d: image {image.shape} incompatible with kernel {kernel.shape}")
    return linear(_patches(image, p), kernel.reshape(d, -1), bias)


def patch_embed_3d(window: np.ndarray, kernel3d: np.ndarray, bias: np.ndarray) -> np.ndarray:
    """Strided convolution with stride ``(K, P, P)`` over a single-depth-patch window.

    ``window`` is ``[C, K, H, W]``; the token grid equals the 2D grid.
    """
    window = np.asarray(window)
    kernel3d = np.asarray(kernel3d)
    if window.ndim != 4 or kernel3d.ndim != 5:
        raise ShapeError(
            f"patch_embed_3d: expected window [C,K,H,W] and kernel [D,C,K,P,P], got {window.shape}, {kernel3d.shape}"
        )
    d, c, k, p, p2 = kernel3d.shape
    if window.shape[1] != k:
        raise ShapeError(f"patch_embed_3d: window depth {window.shape[1]} != kernel depth {k}")
    if p != p2 or window.shape[0] != c or window.shape[2] % p or window.shape[3] % p:
        raise ShapeError(f"patch_embed_3d: window {window.shape} incompatible with kernel {kernel3d.shape}")
    return linear(_patches(window, p), kernel3d.reshape(d, -1), bias)


def embed_window(window: np.ndarray, weights: Checkpoint) -> np.ndarray:
    """Patch-embed a ``[C, K, H, W]`` window with whatever kernel the checkpoint holds.

    A 4-D (2D) kernel sees only the window's center slice.
    """
    kernel = weights["embed.kernel"]
    if kernel.ndim == 4:
        return patch_embed_2d(window[:, window.shape[1] // 2], kernel, weights["embed.bias"])
    return patch_embed_3d(window, kernel, weights["embed.bias"])


def attention(x: np.ndarray, qkv_w, qkv_b, proj_w, proj_b, heads: int) -> np.ndarray:
    t, d = x.shape
    hd = d // heads
    qkv = linear(x, qkv_w, qkv_b).reshape(t, 3, heads, hd).transpose(1, 2, 0, 3)
    q, k, v = qkv[0], qkv[1], qkv[2]
    scale = 1.0 / np.sqrt(hd)
    out = np.empty((heads, t, hd), dtype=np.float32)
    for h in range(heads):
        scores = matmul(q[h], np.ascontiguousarray(k[h].T)) * np.float32(scale)
        out[h] = matmul(softmax_lastdim(scores), v[h])
    merged = np.ascontiguousarray(out.transpose(1, 0, 2)).reshape(t, d)
    return linear(merged, proj_w, proj_b)


def encoder_block(x: np.ndarray, weights: Checkpoint, i: int, cfg: ViTConfig) -> np.ndarray:
    w = lambda name: weights[f"layer{i}.{name}"]
    eps = cfg.layernorm_eps
    h = layer_norm(x, w("norm1.weight"), w("norm1.bias"), eps)
    x = x + attention(h, w("attn.qkv.weight"), w("attn.qkv.bias"), w("attn.proj.weight"), w("attn.proj.bias"), cfg.heads)
    h = layer_norm(x, w("norm2.weight"), w("norm2.bias"), eps)
    h = linear(gelu(linear(h, w("mlp.fc1.weight"), w("mlp.fc1.bias"))), w("mlp.fc2.weight"), w("mlp.fc2.bias"))
    return as_tensor(x + h)


def encoder_forward(tokens: np.ndarray, weights: Checkpoint, cfg: ViTConfig) -> np.ndarray:
    """Positional embedding, ``cfg.layers_l`` pre-norm blocks, final layer norm.

    ``tokens`` is the ``[T, D]`` patch-embedding output; returns the final
    ``[T, D]`` hidden states.
    """
    tokens = as_tensor(tokens)
    if tokens.shape != (cfg.num_tokens, cfg.hidden_d):
        raise ShapeError(f"encoder expects tokens {(cfg.num_tokens, cfg.hidden_d)}, got {tokens.shape}")
    for name in ("embed.pos", "norm.weight", "norm.bias"):
        if name not in weights:
            raise MissingTensorError(f"checkpoint lacks tensor {name!r}")
    if weights["embed.pos"].shape != tokens.shape:
        raise ShapeError(f"embed.pos has shape {weights['embed.pos'].shape}, expected {tokens.shape}")
    x = as_tensor(tokens + weights["embed.pos"])
    for i in range(cfg.layers_l):
        try:
            x = encoder_block(x, weights, i, cfg)
        except KeyError as exc:
            raise MissingTensorError(f"checkpoint lacks tensor {exc.args[0]!r}") from None
    return layer_norm(x, weights["norm.weight"], weights["norm.bias"], cfg.layernorm_eps)


def count_flops(cfg: ViTConfig, head_slices: int | None = None) -> int:
    """Analytical forward FLOPs, one multiply-accumulate = 2 FLOPs.

    Counts the patch embedding and every encoder layer; softmax, layer norm,
    GELU and residual additions are excluded. The decoder head is added when
    ``head_slices`` is given.
    """
    t, d = cfg.num_tokens, cfg.hidden_d
    embed = 2 * t * d * (cfg.in_channels * cfg.window_k * cfg.patch_p * cfg.patch_p)
    per_layer = (
        2 * t * d * 3 * d        # qkv projection
        + 2 * t * t * d          # attention scores
        + 2 * t * t * d          # attention-weighted values
        + 2 * t * d * d          # output projection
        + 2 * 2 * t * d * cfg.mlp_dim  # fc1 + fc2
    )
    total = embed + cfg.layers_l * per_layer
    if head_slices is not None:
        total += 2 * t * d * head_slices * cfg.patch_p * cfg.patch_p * cfg.num_classes
    return total


def embedding_flops(cfg: ViTConfig) -> int:
    return 2 * cfg.num_tokens * cfg.hidden_d * cfg.in_channels * cfg.window_k * cfg.patch_p * cfg.patch_p
