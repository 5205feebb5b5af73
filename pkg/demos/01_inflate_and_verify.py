"""
Inflating a 2D checkpoint to K-slice windows
=============================================

A ViT trained on RGB images has a patch-embedding kernel of shape
``[D, 3, P, P]``. To read a window of K grayscale CT slices we collapse the
color channels and add a depth axis, giving ``[D, 1, K, P, P]``. Nothing else
in the network changes shape.
"""

import numpy as np

from vitinflate import (
    ChannelMode,
    InflationSpec,
    Strategy,
    ViTConfig,
    inflate_checkpoint,
    inflate_config,
    patch_embed_2d,
    patch_embed_3d,
    random_checkpoint,
)
from vitinflate.verification import verify_checkpoint

# A small stand-in for a pre-trained model (real weights load via
# vitinflate.load_checkpoint plus rename_tensors for foreign names).
cfg2d = ViTConfig(image_h=32, image_w=32, patch_p=8, in_channels=3, hidden_d=32, layers_l=2, heads=4, num_classes=4)
ckpt2d = random_checkpoint(cfg2d, seed=0)
print("2D kernel:", ckpt2d["embed.kernel"].shape)

spec = InflationSpec(Strategy.CENTERING, depth=5, channel_mode=ChannelMode.COLLAPSE)
ckpt3d = inflate_checkpoint(ckpt2d, cfg2d, spec)
cfg3d = inflate_config(cfg2d, spec)
print("3D kernel:", ckpt3d["embed.kernel"].shape)

# Centering inflation: only the middle slice of the window carries weights,
# so the embedding of any window equals the 2D embedding of its center slice
# (fed to the RGB model as gray replicated three times).
rng = np.random.default_rng(1)
window = rng.uniform(-1, 1, (1, 5, 32, 32)).astype(np.float32)
tokens3d = patch_embed_3d(window, ckpt3d["embed.kernel"], ckpt3d["embed.bias"])
tokens2d = patch_embed_2d(np.repeat(window[:, 2], 3, axis=0), ckpt2d["embed.kernel"], ckpt2d["embed.bias"])
print("max |3D - 2D| on patch tokens:", float(np.abs(tokens3d - tokens2d).max()))

# Average inflation instead divides the kernel by K on every slice; it matches
# the 2D model when all slices of the window are the same.
avg = inflate_checkpoint(ckpt2d, cfg2d, InflationSpec(Strategy.AVERAGE, 5, ChannelMode.COLLAPSE))
flat = np.repeat(window[:, 2:3], 5, axis=1)
tokens_avg = patch_embed_3d(flat, avg["embed.kernel"], avg["embed.bias"])
print("max |avg - 2D| on a constant window:", float(np.abs(tokens_avg - tokens2d).max()))

# The packaged self-check runs the same comparisons through the full encoder.
for result in verify_checkpoint(ckpt2d, cfg2d, depth=5):
    print(result.line())
