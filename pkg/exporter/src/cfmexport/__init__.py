"""Stub-model exporter: feature maps and person score maps as CFT1 tensors."""

__version__ = "0.1.0"

from .export import (ExportSpec, export_feature_maps, export_person_scores,
                     load_spec)
from .stub_model import LAYER_TABLE, StubModel
