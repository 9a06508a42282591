"""Image-classifier probability exporter.

Runs a pretrained torchvision classifier over an image directory and
writes one CSV row per image: sample id, ground-truth label, and the
softmax probability vector. An optional fine-to-coarse class mapping
folds the probabilities into superclasses before writing.
"""

from .exporter import (
    SUPPORTED_MODELS,
    ExportError,
    ExportSpec,
    aggregate_coarse,
    build_model,
    discover_samples,
    export,
    load_mapping_file,
)

__version__ = "0.1.0"
