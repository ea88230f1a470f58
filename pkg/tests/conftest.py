import math

import pytest

from ctxrescore.core import BinningConfig, Detection, GroundTruthObject
from ctxrescore.relations import PriorTable, fit_relations


def gt(image_id, category, cx, cy, height, width=None):
    if width is None:
        width = 0.75 * height
    return GroundTruthObject.from_center(image_id, category, (cx, cy),
                                         width, height)


def det(det_id, image_id, category, cx, cy, height, confidence, width=None):
    if width is None:
        width = 0.75 * height
    return Detection.from_center(det_id, image_id, category, (cx, cy),
                                 width, confidence=confidence,
                                 height=height)


@pytest.fixture
def binning_two():
    return BinningConfig.default(["chair", "table"])


@pytest.fixture
def chair_table_table(binning_two):
    """Table counted from scenes where the table sits right of the chair.

    The chair has height 10, the table is offset by (2, 0) chair heights
    and has height 10 * e^0.25, so the relative feature is constant.
    """
    scenes = [
        [gt(i, "chair", 100.0, 100.0, 10.0),
         gt(i, "table", 120.0, 100.0, 10.0 * math.exp(0.25))]
        for i in range(20)
    ]
    return fit_relations(scenes, binning_two, max_neighbors=2, smoothing=0.0)


@pytest.fixture
def priors_two():
    return PriorTable({"chair": 0.1, "table": 0.2})
