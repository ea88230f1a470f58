"""File formats: detections, annotations, trained models, manifests.

Detection and annotation documents mirror the widespread COCO results and
annotation layouts, so real detector outputs plug in unchanged; unknown
fields are ignored, the listed ones are required. Model files and
manifests are canonical JSON (sorted keys, exact float representation) so
they diff cleanly and round-trip losslessly.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass

from ctxrescore.core import (
    BinningConfig,
    Detection,
    GroundTruthObject,
    InvalidInputError,
)
from ctxrescore.relations import PriorTable, RelationTable

MODEL_SCHEMA_VERSION = 1


class FileFormatError(ValueError):
    """A document does not parse or violates its schema."""


class SchemaVersionError(FileFormatError):
    """A model file was written by an incompatible schema version."""


def _canonical_dump(data, path):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(data, fh, sort_keys=True, indent=1)
        fh.write("\n")


def load_json(path):
    try:
        with open(path, "r", encoding="utf-8") as fh:
            return json.load(fh)
    except json.JSONDecodeError as exc:
        raise FileFormatError(f"{path}: not valid JSON ({exc})") from exc


# -- detections -----------------------------------------------------------


def load_detections(path) -> list[Detection]:
    """Read a COCO-results style detection list.

    Records need image_id, category_id, bbox [x, y, width, height] and
    score; input order is preserved and ids are assigned sequentially, so
    reloading a saved file reproduces identical objects.
    """
    data = load_json(path)
    if isinstance(data, dict):
        data = data.get("detections", data.get("annotations"))
    if not isinstance(data, list):
        raise FileFormatError(f"{path}: expected a list of detection records")
    detections = []
    for i, rec in enumerate(data):
        try:
            bbox = rec["bbox"]
            x, y, w, h = (float(v) for v in bbox)
            score = float(rec["score"])
            if not 0.0 <= score <= 1.0:
                raise InvalidInputError(f"score {score} outside [0, 1]")
            detections.append(Detection(
                id=i, image_id=rec["image_id"], category=rec["category_id"],
                x=x, y=y, width=w, height=h, confidence=score,
            ))
        except (KeyError, TypeError, ValueError) as exc:
            raise FileFormatError(
                f"{path}: bad detection record {i}: {exc}"
            ) from exc
    return detections


def save_detections(detections, path):
    records = [
        {
            "image_id": d.image_id,
            "category_id": d.category,
            "bbox": [d.x, d.y, d.width, d.height],
            "score": d.confidence,
        }
        for d in detections
    ]
    _canonical_dump(records, path)


# -- annotations ----------------------------------------------------------


@dataclass
class AnnotationSet:
    """Ground truth: images, category names, annotated objects."""

    images: dict          # image_id -> (width, height)
    category_names: dict  # category id -> display name
    objects: list         # GroundTruthObject

    def scenes(self):
        """Objects grouped per image, in image order."""
        by_image = {image_id: [] for image_id in self.images}
        for obj in self.objects:
            by_image[obj.image_id].append(obj)
        return list(by_image.values())

    @property
    def categories(self):
        return sorted(self.category_names, key=repr)


def load_annotations(path) -> AnnotationSet:
    data = load_json(path)
    if not isinstance(data, dict):
        raise FileFormatError(f"{path}: expected an annotation document")
    try:
        images = {img["id"]: (float(img["width"]), float(img["height"]))
                  for img in data["images"]}
        category_names = {c["id"]: c.get("name", str(c["id"]))
                          for c in data["categories"]}
    except (KeyError, TypeError) as exc:
        raise FileFormatError(f"{path}: bad images/categories section: {exc}") from exc
    objects = []
    overflow = 0
    first_overflow = None
    for i, rec in enumerate(data.get("annotations", ())):
        try:
            image_id = rec["image_id"]
            category = rec["category_id"]
            if image_id not in images:
                raise InvalidInputError(f"unknown image {image_id!r}")
            if category not in category_names:
                raise InvalidInputError(f"unknown category {category!r}")
            x, y, w, h = (float(v) for v in rec["bbox"])
            obj = GroundTruthObject(image_id, category, x, y, w, h)
        except (KeyError, TypeError, ValueError) as exc:
            raise FileFormatError(
                f"{path}: bad annotation record {i}: {exc}"
            ) from exc
        iw, ih = images[image_id]
        if x < -1.0 or y < -1.0 or x + w > iw + 1.0 or y + h > ih + 1.0:
            overflow += 1
            if first_overflow is None:
                first_overflow = i
        objects.append(obj)
    if overflow:
        warnings.warn(
            f"{path}: {overflow} annotation(s) exceed their image bounds "
            f"(first: record {first_overflow}); kept as-is",
            stacklevel=2,
        )
    return AnnotationSet(images, category_names, objects)


def save_annotations(annotations: AnnotationSet, path):
    data = {
        "images": [
            {"id": image_id, "width": wh[0], "height": wh[1]}
            for image_id, wh in annotations.images.items()
        ],
        "categories": [
            {"id": cid, "name": name}
            for cid, name in annotations.category_names.items()
        ],
        "annotations": [
            {
                "image_id": o.image_id,
                "category_id": o.category,
                "bbox": [o.x, o.y, o.width, o.height],
            }
            for o in annotations.objects
        ],
    }
    _canonical_dump(data, path)


# -- trained models --------------------------------------------------------


@dataclass
class TrainedModel:
    table: RelationTable
    priors: PriorTable


def save_model(model: TrainedModel, path):
    table = model.table
    binning = table.binning
    doc = {
        "kind": "relation-model",
        "schema_version": MODEL_SCHEMA_VERSION,
        "binning": {
            "offset_range": [list(binning.offset_range[0]),
                             list(binning.offset_range[1])],
            "offset_bins": list(binning.offset_bins),
            "scale_range": list(binning.scale_range),
            "scale_bins": binning.scale_bins,
            "scale_factors": sorted(
                ([cat, f] for cat, f in binning.scale_factors.items()),
                key=lambda row: repr(row[0]),
            ),
        },
        "max_neighbors": table.max_neighbors,
        "smoothing": table.smoothing,
        "categories": list(table.categories),
        "pair_totals": sorted(
            ([cat, c] for cat, c in table.pair_totals.items()),
            key=lambda row: repr(row[0]),
        ),
        "pair_counts": sorted(
            (list(key) + [c] for key, c in table.pair_counts.items()),
            key=repr,
        ),
        "triple_counts": sorted(
            (list(key) + [c] for key, c in table.triple_counts.items()),
            key=repr,
        ),
        "priors": sorted(
            ([cat, p] for cat, p in model.priors.probs.items()),
            key=lambda row: repr(row[0]),
        ),
    }
    _canonical_dump(doc, path)


def load_model(path) -> TrainedModel:
    doc = load_json(path)
    if not isinstance(doc, dict) or doc.get("kind") != "relation-model":
        raise FileFormatError(f"{path}: not a relation-model document")
    version = doc.get("schema_version")
    if version != MODEL_SCHEMA_VERSION:
        raise SchemaVersionError(
            f"{path}: model schema version {version!r} is not supported "
            f"(this build reads version {MODEL_SCHEMA_VERSION})"
        )
    b = doc["binning"]
    binning = BinningConfig(
        offset_range=(tuple(b["offset_range"][0]), tuple(b["offset_range"][1])),
        offset_bins=tuple(b["offset_bins"]),
        scale_range=tuple(b["scale_range"]),
        scale_bins=b["scale_bins"],
        scale_factors={cat: f for cat, f in b["scale_factors"]},
    )
    table = RelationTable(
        binning=binning,
        max_neighbors=doc["max_neighbors"],
        smoothing=doc["smoothing"],
        categories=tuple(c for c in doc["categories"]),
        pair_counts={
            (row[0], row[1], row[2], row[3], row[4]): row[5]
            for row in doc["pair_counts"]
        },
        pair_totals={cat: c for cat, c in doc["pair_totals"]},
        triple_counts={
            (row[0], row[1], row[2], row[3], row[4],
             row[5], row[6], row[7], row[8]): row[9]
            for row in doc["triple_counts"]
        },
    )
    priors = PriorTable({cat: p for cat, p in doc["priors"]})
    return TrainedModel(table, priors)


def save_manifest(manifest: dict, path):
    _canonical_dump(manifest, path)
