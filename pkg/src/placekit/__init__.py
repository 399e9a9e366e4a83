"""Scene-aware 3D car placement augmentation for KITTI-style datasets."""

__version__ = "0.1.0"

from .boxaug import AugmentParams, find_neighbors, geometry_aware_augment, sample_box
from .dataset_io import (
    CameraCalib,
    LabeledObject,
    SceneAnnotation,
    SpriteAsset,
    parse_calib,
    parse_label_line,
    serialize_label,
)
from .errors import ConfigError, CorpusError, GeometryError, ParseError, PlacekitError
from .geometry import Box3D, BevRect, bev_iou, wrap_angle
from .placement import PlacementPrior, PresetDistribution, build_prior, sample_placements

__all__ = [
    "AugmentParams", "find_neighbors", "geometry_aware_augment", "sample_box",
    "CameraCalib", "LabeledObject", "SceneAnnotation", "SpriteAsset",
    "parse_calib", "parse_label_line", "serialize_label",
    "ConfigError", "CorpusError", "GeometryError", "ParseError", "PlacekitError",
    "Box3D", "BevRect", "bev_iou", "wrap_angle",
    "PlacementPrior", "PresetDistribution", "build_prior", "sample_placements",
]
