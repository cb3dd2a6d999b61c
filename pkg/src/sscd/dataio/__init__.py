"""Codecs, dataset layouts, patch extraction and toy scenes."""

from .layout import (
    DatasetError,
    dataset_hash,
    read_pairs,
    read_seg_dataset,
    read_tuples,
    write_pair,
    write_seg_dataset,
    write_tuples,
)
from .netpbm import (
    UNLABELED,
    NetpbmError,
    colorize,
    default_palette,
    read_image,
    read_labelmap,
    read_mask,
    read_palette,
    read_rgb,
    write_image,
    write_labelmap,
    write_mask,
    write_palette,
    write_rgb,
)
from .patches import (
    DEFAULT_ROTATIONS,
    PanoramaPair,
    Patch,
    PatchRef,
    PatchSet,
    crop_offsets,
    extract_patches,
    kfold_split,
    resize_bilinear,
    resize_nearest,
    rotate,
)
from .toyscene import (
    Primitive,
    ToyScene,
    generate_toy_scene_pair,
    render_scene,
    toy_segmentation_sample,
    toy_segmentation_set,
)
