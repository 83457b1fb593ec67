"""Stage 2: sagittal-slice U-Net segmentation of the localised region."""

from .augment import AugmentConfig, elastic_field, geo_augment, roi_augment, warp_slice
from .train import (
    BINARY,
    MULTICLASS,
    MissingInitError,
    SegHyper,
    TrainingDivergedError,
    load_segmenter,
    predict_logits,
    reinstate,
    save_segmenter,
    segment_crop,
    train_segmenter,
)
from .unet import TOY_UNET, SegModel, UNetConfig, build_unet, receptive_field, transfer_weights, unet_specs
