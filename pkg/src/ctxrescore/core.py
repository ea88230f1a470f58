"""Data model for detections and the scale-invariant relation features.

A detection is a base-detector hypothesis (category, box, confidence). Every
other module works in the reference-relative coordinate system defined here:
offsets are divided by the reference height times a per-category scale
factor, and size is the log ratio of heights, so the representation is
invariant to image rescaling and translation.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Mapping


class InvalidInputError(ValueError):
    """An argument violates a documented precondition."""


class MissingScaleFactorError(KeyError):
    """A category has no scale factor configured."""


class UntrainedCategoryError(KeyError):
    """A category is unknown to the trained model."""


class DataSparsityWarning(UserWarning):
    """A conditional was computed from too little data to be trustworthy."""


@dataclass(frozen=True)
class Detection:
    """One detector hypothesis.

    Geometry is stored as the top-left box corner plus width/height so that
    files round-trip exactly; ``center`` is derived. ``height`` is the size
    measure used by the relation features, ``width`` only matters for IoU.
    """

    id: int
    image_id: object
    category: object
    x: float
    y: float
    width: float
    height: float
    confidence: float

    def __post_init__(self):
        if not (self.width > 0 and self.height > 0):
            raise InvalidInputError(
                f"detection {self.id}: box sides must be positive "
                f"(got {self.width} x {self.height})"
            )
        if not 0.0 <= self.confidence <= 1.0:
            raise InvalidInputError(
                f"detection {self.id}: confidence {self.confidence} outside [0, 1]"
            )

    @property
    def center(self) -> tuple[float, float]:
        return (self.x + self.width / 2.0, self.y + self.height / 2.0)

    @property
    def bbox(self) -> tuple[float, float, float, float]:
        return (self.x, self.y, self.width, self.height)

    @classmethod
    def from_center(cls, id, image_id, category, center, width, height,
                    confidence) -> "Detection":
        return cls(id, image_id, category,
                   center[0] - width / 2.0, center[1] - height / 2.0,
                   width, height, confidence)


@dataclass(frozen=True)
class GroundTruthObject:
    """An annotated object: what a scene really contains."""

    image_id: object
    category: object
    x: float
    y: float
    width: float
    height: float

    def __post_init__(self):
        if not (self.width > 0 and self.height > 0):
            raise InvalidInputError(
                f"annotation in image {self.image_id}: box sides must be positive"
            )

    @property
    def center(self) -> tuple[float, float]:
        return (self.x + self.width / 2.0, self.y + self.height / 2.0)

    @classmethod
    def from_center(cls, image_id, category, center, width, height):
        return cls(image_id, category,
                   center[0] - width / 2.0, center[1] - height / 2.0,
                   width, height)


@dataclass
class LocationVariable:
    """Binary presence variable attached to a detection.

    ``belief_true`` is the current estimate of P(present | evidence so far);
    the belief of the empty state is its complement.
    """

    detection_ref: int
    belief_true: float

    def __post_init__(self):
        if not 0.0 <= self.belief_true <= 1.0:
            raise InvalidInputError(
                f"belief {self.belief_true} outside [0, 1]"
            )


@dataclass(frozen=True)
class RelativeFeature:
    """Dimensionless relation of a query box to a reference box."""

    offset: tuple[float, float]
    scale_ratio: float


@dataclass(frozen=True)
class BinningConfig:
    """Discretization of the relative-feature space.

    Uniform bins per axis; values outside the configured ranges clamp to
    the nearest edge bin. ``scale_factors`` maps every known category to
    its reference scaling factor and doubles as the category registry.
    """

    offset_range: tuple[tuple[float, float], tuple[float, float]] = ((-4.0, 4.0), (-4.0, 4.0))
    offset_bins: tuple[int, int] = (16, 16)
    scale_range: tuple[float, float] = (-2.0, 2.0)
    scale_bins: int = 8
    scale_factors: Mapping[object, float] = field(default_factory=dict)

    def __post_init__(self):
        for axis in (0, 1):
            lo, hi = self.offset_range[axis]
            if not hi > lo:
                raise InvalidInputError(f"degenerate offset range on axis {axis}")
            if self.offset_bins[axis] < 1:
                raise InvalidInputError("offset bin counts must be >= 1")
        lo, hi = self.scale_range
        if not hi > lo:
            raise InvalidInputError("degenerate scale range")
        if self.scale_bins < 1:
            raise InvalidInputError("scale bin count must be >= 1")
        for cat, f in self.scale_factors.items():
            if not f > 0:
                raise InvalidInputError(f"scale factor for {cat!r} must be > 0")

    @classmethod
    def default(cls, categories) -> "BinningConfig":
        """Default binning with unit scale factors for the given categories."""
        return cls(scale_factors={c: 1.0 for c in categories})

    def factor(self, category) -> float:
        try:
            return self.scale_factors[category]
        except KeyError:
            raise MissingScaleFactorError(
                f"no scale factor configured for category {category!r}"
            ) from None


def relative_location(query_center, ref_center, ref_height, ref_scale_factor):
    """Offset of a point from a reference, in units of the reference size."""
    if not ref_height > 0:
        raise InvalidInputError(f"reference height must be > 0, got {ref_height}")
    if not ref_scale_factor > 0:
        raise InvalidInputError(
            f"reference scale factor must be > 0, got {ref_scale_factor}"
        )
    s = ref_height * ref_scale_factor
    return ((query_center[0] - ref_center[0]) / s,
            (query_center[1] - ref_center[1]) / s)


def relative_scale(query_height, ref_height):
    """Log ratio of a box height to the reference height."""
    if not query_height > 0:
        raise InvalidInputError(f"query height must be > 0, got {query_height}")
    if not ref_height > 0:
        raise InvalidInputError(f"reference height must be > 0, got {ref_height}")
    return math.log(query_height / ref_height)


def featurize(query, reference, config: BinningConfig) -> RelativeFeature:
    """Relative feature of ``query`` with respect to ``reference``.

    Both arguments only need ``center``, ``height`` and (for the reference)
    ``category`` attributes, so detections and ground-truth objects are
    both accepted.
    """
    f = config.factor(reference.category)
    return RelativeFeature(
        offset=relative_location(query.center, reference.center,
                                 reference.height, f),
        scale_ratio=relative_scale(query.height, reference.height),
    )


def _bin_index(value, lo, hi, n):
    if value <= lo:
        return 0
    if value >= hi:
        return n - 1
    width = (hi - lo) / n
    idx = int(math.floor((value - lo) / width))
    if idx >= n:
        return n - 1
    return idx


def bin_feature(feature: RelativeFeature, config: BinningConfig):
    """Map a relative feature to (offset_bin_x, offset_bin_y, scale_bin)."""
    (x_lo, x_hi), (y_lo, y_hi) = config.offset_range
    bx = _bin_index(feature.offset[0], x_lo, x_hi, config.offset_bins[0])
    by = _bin_index(feature.offset[1], y_lo, y_hi, config.offset_bins[1])
    bs = _bin_index(feature.scale_ratio, config.scale_range[0],
                    config.scale_range[1], config.scale_bins)
    return (bx, by, bs)


def feature_cell(query, reference, config: BinningConfig):
    """Featurize then bin in one step."""
    return bin_feature(featurize(query, reference, config), config)
