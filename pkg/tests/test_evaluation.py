"""IoU, greedy matching, average precision."""

import random

import pytest

from ctxrescore.core import InvalidInputError
from ctxrescore.evaluation import (
    MatchResult,
    UndefinedMetricError,
    average_precision,
    evaluate,
    iou,
    match_detections,
    mean_average_precision,
)

from conftest import det, gt


class TestIoU:
    def test_identical_boxes(self):
        assert iou((0, 0, 10, 20), (0, 0, 10, 20)) == 1.0

    def test_disjoint_boxes(self):
        assert iou((0, 0, 10, 10), (100, 100, 5, 5)) == 0.0

    def test_half_overlap_along_one_axis(self):
        # unit boxes offset by half a side: intersection 1/2, union 3/2
        assert iou((0, 0, 1, 1), (0.5, 0, 1, 1)) == pytest.approx(1 / 3)

    def test_degenerate_box_rejected(self):
        with pytest.raises(InvalidInputError):
            iou((0, 0, 0, 1), (0, 0, 1, 1))


def _match_oracle(detections, ground_truths, threshold):
    """Straightforward reimplementation of the greedy protocol."""
    used = set()
    labels = []
    for d in detections:
        best, best_v = None, 0.0
        for gi, g in enumerate(ground_truths):
            if gi in used or g.image_id != d.image_id:
                continue
            v = iou(d.bbox, (g.x, g.y, g.width, g.height))
            if v > best_v:
                best, best_v = gi, v
        if best is not None and best_v >= threshold:
            used.add(best)
            labels.append(True)
        else:
            labels.append(False)
    return labels


class TestMatching:
    def test_exact_hit_is_tp(self):
        g = gt("img", "chair", 50.0, 50.0, 20.0)
        d = det(0, "img", "chair", 50.0, 50.0, 20.0, confidence=0.9)
        res = match_detections([d], [g])
        assert res.labels == [True]

    def test_double_detection_single_match(self):
        g = gt("img", "chair", 50.0, 50.0, 20.0)
        d1 = det(0, "img", "chair", 50.0, 50.0, 20.0, confidence=0.9)
        d2 = det(1, "img", "chair", 51.0, 50.0, 20.0, confidence=0.8)
        res = match_detections([d1, d2], [g])
        assert res.labels == [True, False]

    def test_matches_only_within_image(self):
        g = gt("img-a", "chair", 50.0, 50.0, 20.0)
        d = det(0, "img-b", "chair", 50.0, 50.0, 20.0, confidence=0.9)
        assert match_detections([d], [g]).labels == [False]

    def test_randomized_instances_agree_with_oracle(self):
        rng = random.Random(77)
        for _ in range(60):
            gts = [gt(rng.choice(["i0", "i1"]), "chair",
                      rng.uniform(0, 80), rng.uniform(0, 80),
                      rng.uniform(8, 25))
                   for _ in range(rng.randint(0, 5))]
            dets = [det(i, rng.choice(["i0", "i1"]), "chair",
                        rng.uniform(0, 80), rng.uniform(0, 80),
                        rng.uniform(8, 25), confidence=rng.random())
                    for i in range(rng.randint(0, 7))]
            dets.sort(key=lambda d: -d.confidence)
            got = match_detections(dets, gts, 0.5)
            assert got.labels == _match_oracle(dets, gts, 0.5)
            assert sum(got.labels) <= len(gts)


class TestAveragePrecision:
    def test_perfect_ranking(self):
        res = MatchResult([True, True, True], [0.9, 0.8, 0.7], 3)
        assert average_precision(res) == 1.0
        assert average_precision(res, "all-points") == 1.0

    def test_all_false(self):
        res = MatchResult([False, False], [0.9, 0.8], 2)
        assert average_precision(res) == 0.0

    def test_hand_computed_toy_case(self):
        # labels TP FP TP TP FP with 4 ground truths:
        # recalls .25 .25 .5 .75 .75 ; precisions 1 .5 .667 .75 .6
        res = MatchResult([True, False, True, True, False],
                          [0.9, 0.8, 0.7, 0.6, 0.5], 4)
        # eleven-point: (3 * 1.0 + 5 * 0.75 + 3 * 0.0) / 11
        assert average_precision(res) == pytest.approx(6.75 / 11)
        # all-points: .25 * 1 + .25 * .75 + .25 * .75
        assert average_precision(res, "all-points") == pytest.approx(0.625)

    def test_zero_ground_truth_rejected(self):
        with pytest.raises(UndefinedMetricError):
            average_precision(MatchResult([], [], 0))

    def test_trailing_false_positive_never_helps(self):
        rng = random.Random(13)
        for _ in range(50):
            n_gt = rng.randint(1, 6)
            labels = [rng.random() < 0.6 for _ in range(8)]
            while sum(labels) > n_gt:
                labels[labels.index(True)] = False
            confs = sorted((rng.random() for _ in labels), reverse=True)
            base = MatchResult(list(labels), list(confs), n_gt)
            worse = MatchResult(list(labels) + [False],
                                list(confs) + [min(confs) - 0.01], n_gt)
            for mode in ("eleven-point", "all-points"):
                assert average_precision(worse, mode) <= \
                    average_precision(base, mode) + 1e-12


class TestMeanAveragePrecision:
    def test_single_category(self):
        assert mean_average_precision({"chair": 0.42}) == 0.42

    def test_two_categories(self):
        assert mean_average_precision({"a": 0.4, "b": 0.6}) == pytest.approx(0.5)

    def test_empty_rejected(self):
        with pytest.raises(UndefinedMetricError):
            mean_average_precision({})


def _second_map_implementation(detections, ground_truths, threshold=0.5):
    """Independent mAP computation used as a cross-check oracle."""
    cats = sorted({g.category for g in ground_truths}, key=repr)
    aps = []
    for cat in cats:
        dets = sorted((d for d in detections if d.category == cat),
                      key=lambda d: (-d.confidence, d.id))
        gts = [g for g in ground_truths if g.category == cat]
        labels = _match_oracle(dets, gts, threshold)
        n_gt = len(gts)
        tp = 0
        rec, prec = [], []
        for i, is_tp in enumerate(labels, start=1):
            tp += is_tp
            rec.append(tp / n_gt)
            prec.append(tp / i)
        ap = 0.0
        for step in range(11):
            t = step / 10
            candidates = [p for r, p in zip(rec, prec) if r >= t]
            ap += max(candidates) if candidates else 0.0
        aps.append(ap / 11)
    return sum(aps) / len(aps)


class TestEvaluate:
    def _dataset(self, seed):
        rng = random.Random(seed)
        gts, dets = [], []
        i = 0
        for img in ("i0", "i1", "i2"):
            for cat in ("chair", "table"):
                for _ in range(rng.randint(1, 3)):
                    g = gt(img, cat, rng.uniform(20, 120), rng.uniform(20, 120),
                           rng.uniform(10, 24))
                    gts.append(g)
                    if rng.random() < 0.8:
                        dets.append(det(i, img, cat,
                                        g.center[0] + rng.uniform(-2, 2),
                                        g.center[1] + rng.uniform(-2, 2),
                                        g.height, confidence=rng.uniform(0.3, 1)))
                        i += 1
                for _ in range(rng.randint(0, 2)):
                    dets.append(det(i, img, cat, rng.uniform(0, 150),
                                    rng.uniform(0, 150), rng.uniform(10, 24),
                                    confidence=rng.uniform(0, 0.7)))
                    i += 1
        return dets, gts

    def test_matches_second_implementation(self):
        for seed in range(5):
            dets, gts = self._dataset(seed)
            _, map_value = evaluate(dets, gts)
            assert map_value == pytest.approx(
                _second_map_implementation(dets, gts), abs=1e-9)

    def test_noop_rescore_preserves_map(self):
        dets, gts = self._dataset(99)
        _, before = evaluate(dets, gts)
        shifted = [det(d.id, d.image_id, d.category, d.center[0], d.center[1],
                       d.height, confidence=d.confidence, width=d.width)
                   for d in dets]
        _, after = evaluate(shifted, gts)
        assert before == after
