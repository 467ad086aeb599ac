"""Synthetic ground-truth scenes, occupancy-mask generation, dataset IO."""

from objrf.data.primitives import (
    AnalyticPrimitiveField,
    GtObject,
    Primitive,
    SceneCamera,
    SceneSpec,
    oracle_render,
)
from objrf.data.generate import (
    DataGenConfig,
    generate_dataset,
    make_car_object,
    make_sample,
    perturb_annotations,
)
from objrf.data.io import DatasetRecord, load_dataset, record_to_sample, save_dataset

__all__ = [
    "Primitive",
    "GtObject",
    "SceneCamera",
    "SceneSpec",
    "AnalyticPrimitiveField",
    "oracle_render",
    "DataGenConfig",
    "make_car_object",
    "make_sample",
    "perturb_annotations",
    "generate_dataset",
    "DatasetRecord",
    "save_dataset",
    "load_dataset",
    "record_to_sample",
]
