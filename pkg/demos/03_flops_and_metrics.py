"""
What depth costs, and how to score masks
========================================

The only extra work in the windowed model is the larger patch embedding:
a 16x16x5 gray patch has 1280 inputs instead of the 768 of a 16x16 RGB patch.
Against the twelve encoder layers of ViT-B at 512x512 this is well under 1%.
"""

import numpy as np

from vitinflate import ViTConfig, class_stats, count_flops, dice, mean_dice, slice_variation
from vitinflate.vit3d import embedding_flops

before = ViTConfig.base(in_channels=3, window_k=1)
after = ViTConfig.base(in_channels=1, window_k=5)
for name, cfg in (("2D RGB", before), ("5-slice gray", after)):
    print(f"{name:>13}: {count_flops(cfg) / 1e9:7.2f} GFLOPs (embedding {embedding_flops(cfg) / 1e9:.2f})")
print(f"increase: {100 * (count_flops(after) / count_flops(before) - 1):.2f}%")

# Dice between prediction and label, and the label's own slice-to-slice
# variation (how much an organ changes shape between neighboring slices).
rng = np.random.default_rng(0)
label = np.zeros((16, 16, 6), dtype=np.uint16)
for z in range(6):
    label[4 + z:10 + z, 5:11, z] = 1
    label[2:5, 2:4 + z, z] = 2
pred = label.copy()
pred[rng.random(label.shape) < 0.05] = 0

for c in (1, 2):
    voxels, slices = class_stats(label, c)
    print(f"class {c}: dice {dice(pred, label, c):.3f}, voxels {voxels}, slices {slices}, "
          f"slice variation {slice_variation(label, c):.3f}")
print("mean dice:", round(mean_dice(pred, label, [1, 2]), 4))
