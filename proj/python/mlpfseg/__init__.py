"""LiDAR / light-field fusion toolkit."""

from ._core import (
    CameraModel,
    NumericError,
    ValidationError,
    cross_entropy,
    load_calibration,
    load_feature_map,
    load_label_map,
    load_point_cloud,
    lovasz_softmax,
    mean_iou,
    project_cloud,
    project_point,
    run_fusion,
    save_calibration,
    save_feature_map,
    save_label_map,
    save_point_cloud,
    self_attention,
    softmax_probs,
)

__all__ = [
    "CameraModel",
    "NumericError",
    "ValidationError",
    "cross_entropy",
    "load_calibration",
    "load_feature_map",
    "load_label_map",
    "load_point_cloud",
    "lovasz_softmax",
    "mean_iou",
    "project_cloud",
    "project_point",
    "run_fusion",
    "save_calibration",
    "save_feature_map",
    "save_label_map",
    "save_point_cloud",
    "self_attention",
    "softmax_probs",
]
