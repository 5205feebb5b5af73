"""Weight inflation of 2D vision Transformers for windowed 3D segmentation."""

from .checkpoint_io import (
    Checkpoint,
    SegmentationMask,
    Volume,
    load_checkpoint,
    load_volume,
    read_archive,
    read_volume,
    rename_tensors,
    save,
    write_archive,
    write_volume,
)
from .inflation import (
    ChannelMode,
    EvenDepthWarning,
    InflationSpec,
    Strategy,
    center_index,
    collapse_channels,
    expand_channels_average,
    inflate_checkpoint,
    inflate_config,
    inflate_kernel,
)
from .metrics import DiceReport, class_stats, dice, dice_report, mean_dice, slice_variation
from .seg_pipeline import (
    PreprocessSpec,
    Target,
    WindowSpec,
    decode,
    extract_windows,
    predict_logits,
    predict_volume,
    preprocess,
)
from .vit3d import (
    ViTConfig,
    count_flops,
    encoder_forward,
    patch_embed_2d,
    patch_embed_3d,
    random_checkpoint,
)

__version__ = "0.1.0"
