"""Stage 1: locate the lumbar bounding box by per-voxel plane-offset voting."""

from .canny import EmptyEdgeSetError, canny_edges
from .features import FeatureSpec, extract_features, invert_targets, make_targets
from .kde import botev_bandwidth, kde_mode, silverman_bandwidth
from .regressor import (
    LocalizerHyper,
    LocalizerModel,
    TrainingDivergedError,
    load_localizer,
    localize,
    predict_votes,
    save_localizer,
    train_localizer,
)
from .voting import VoteSet, aggregate_votes, expand_box, sensitivity
