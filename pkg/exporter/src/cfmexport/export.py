"""Export spec validation and the batch export drivers."""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field

from .formats import read_ppm, write_tensor
from .stub_model import LAYER_TABLE, PREPROCESS_TAG, StubModel


@dataclass
class ExportSpec:
    model: str
    layers: list  # {"name", "ratio", "channels"} dicts
    images: list
    output_dir: str
    scales: list = field(default_factory=lambda: [1.0])
    person_scores: bool = False

    def __post_init__(self):
        if not self.layers and not self.person_scores:
            raise ValueError("spec exports nothing")
        for layer in self.layers:
            name = layer["name"]
            if name not in LAYER_TABLE:
                raise ValueError(f"layer {name!r} not in model; available: "
                                 f"{', '.join(LAYER_TABLE)}")
            ratio, channels = LAYER_TABLE[name]
            if int(layer["ratio"]) != ratio or int(layer["channels"]) != channels:
                raise ValueError(
                    f"layer {name!r} declares (ratio={layer['ratio']}, "
                    f"channels={layer['channels']}) but the model provides "
                    f"({ratio}, {channels})")
        if not self.scales:
            raise ValueError("spec needs at least one scale")


def load_spec(path) -> ExportSpec:
    with open(path, "r", encoding="utf-8") as fh:
        doc = json.load(fh)
    return ExportSpec(model=doc.get("model", "stub"),
                      layers=doc.get("layers", []),
                      images=doc["images"],
                      output_dir=doc["output_dir"],
                      scales=doc.get("scales", [1.0]),
                      person_scores=bool(doc.get("person_scores", False)))


def _image_id(path) -> str:
    return os.path.splitext(os.path.basename(path))[0]


def export_feature_maps(spec: ExportSpec) -> list:
    """One CFT1 file per (image, layer, scale); returns written paths."""
    model = StubModel(spec.model)
    os.makedirs(spec.output_dir, exist_ok=True)
    written = []
    for image_path in spec.images:
        image = read_ppm(image_path)
        for layer in spec.layers:
            name = layer["name"]
            ratio, _ = LAYER_TABLE[name]
            for scale in spec.scales:
                values = model.feature_map(image, name, scale)
                out = os.path.join(
                    spec.output_dir,
                    f"{_image_id(image_path)}_{name}_s{scale:g}.cft")
                write_tensor(values, values.shape, ratio,
                             f"{name};{PREPROCESS_TAG}", out)
                written.append(out)
    return written


def export_person_scores(spec: ExportSpec) -> list:
    """One ratio-1 2D CFT1 per image with values in [0, 1]."""
    model = StubModel(spec.model)
    os.makedirs(spec.output_dir, exist_ok=True)
    written = []
    for image_path in spec.images:
        image = read_ppm(image_path)
        values = model.person_scores(image)
        out = os.path.join(spec.output_dir, f"{_image_id(image_path)}.cft")
        write_tensor(values, values.shape, 1, "person-score", out)
        written.append(out)
    return written
