from . import taxonomy
from .augment import augment
from .ctu import LabelMapping, load_ctu_dataset
from .images import Example, example_from_record, load_examples, validate_example
from .manifest import (
    DatasetManifest,
    ExampleRecord,
    LandmarkAnnotation,
    balance_classes,
    read_manifest,
    split_dataset,
    write_manifest,
)
from .synthetic import (
    TEMPLATES,
    GarmentTemplate,
    SyntheticSceneConfig,
    generate_synthetic,
    template_canonical_points,
)

__all__ = [
    "taxonomy",
    "augment",
    "LabelMapping",
    "load_ctu_dataset",
    "Example",
    "example_from_record",
    "load_examples",
    "validate_example",
    "DatasetManifest",
    "ExampleRecord",
    "LandmarkAnnotation",
    "balance_classes",
    "read_manifest",
    "split_dataset",
    "write_manifest",
    "TEMPLATES",
    "GarmentTemplate",
    "SyntheticSceneConfig",
    "generate_synthetic",
    "template_canonical_points",
]
