"""Detection evaluation: IoU matching and average precision.

Implements the standard ranked-retrieval protocol: detections are sorted
by confidence, greedily matched to at most one ground truth each within
their image at an IoU threshold, and the resulting TP/FP sequence yields
a precision-recall curve summarized as average precision. The default AP
is the eleven-point interpolation; an all-points variant is available.
"""

from __future__ import annotations

from dataclasses import dataclass

from ctxrescore.core import InvalidInputError


class UndefinedMetricError(ValueError):
    """AP requested for a category without ground truth."""


def iou(box_a, box_b) -> float:
    """Intersection over union of two (x, y, width, height) boxes."""
    ax, ay, aw, ah = box_a
    bx, by, bw, bh = box_b
    if not (aw > 0 and ah > 0 and bw > 0 and bh > 0):
        raise InvalidInputError("boxes must have positive width and height")
    ix = min(ax + aw, bx + bw) - max(ax, bx)
    iy = min(ay + ah, by + bh) - max(ay, by)
    if ix <= 0 or iy <= 0:
        return 0.0
    inter = ix * iy
    return inter / (aw * ah + bw * bh - inter)


@dataclass
class MatchResult:
    """Ranked match labels for one category."""

    labels: list[bool]          # True for TP, ranked by confidence desc
    confidences: list[float]    # same ranking
    n_ground_truth: int


def match_detections(detections, ground_truths, iou_threshold=0.5) -> MatchResult:
    """Greedy confidence-ordered matching for one category.

    ``detections`` must already be ranked by descending confidence. Each
    detection matches the highest-IoU still-unmatched ground truth in its
    image when that IoU reaches the threshold; every ground truth matches
    at most once.
    """
    by_image = {}
    for gi, gt in enumerate(ground_truths):
        by_image.setdefault(gt.image_id, []).append(gi)
    matched = [False] * len(ground_truths)
    labels = []
    confidences = []
    for det in detections:
        best_iou = 0.0
        best_gi = -1
        for gi in by_image.get(det.image_id, ()):
            if matched[gi]:
                continue
            gt = ground_truths[gi]
            v = iou(det.bbox, (gt.x, gt.y, gt.width, gt.height))
            if v > best_iou:
                best_iou = v
                best_gi = gi
        if best_gi >= 0 and best_iou >= iou_threshold:
            matched[best_gi] = True
            labels.append(True)
        else:
            labels.append(False)
        confidences.append(det.confidence)
    return MatchResult(labels, confidences, len(ground_truths))


def average_precision(result: MatchResult, mode: str = "eleven-point") -> float:
    """Average precision of a ranked TP/FP sequence.

    Eleven-point mode averages the maximum precision at recalls
    0.0, 0.1, ..., 1.0; all-points mode integrates the interpolated
    precision-recall curve.
    """
    if result.n_ground_truth <= 0:
        raise UndefinedMetricError("no ground truth for this category")
    if mode not in ("eleven-point", "all-points"):
        raise InvalidInputError(f"unknown AP mode {mode!r}")
    recalls = []
    precisions = []
    tp = 0
    for rank, is_tp in enumerate(result.labels, start=1):
        if is_tp:
            tp += 1
        recalls.append(tp / result.n_ground_truth)
        precisions.append(tp / rank)
    if mode == "eleven-point":
        total = 0.0
        for step in range(11):
            t = step / 10.0
            best = 0.0
            for r, p in zip(recalls, precisions):
                if r >= t and p > best:
                    best = p
            total += best
        return total / 11.0
    # all-points: area under the monotone precision envelope
    env = list(precisions)
    for i in range(len(env) - 2, -1, -1):
        if env[i] < env[i + 1]:
            env[i] = env[i + 1]
    area = 0.0
    prev_r = 0.0
    for r, p in zip(recalls, env):
        if r > prev_r:
            area += (r - prev_r) * p
            prev_r = r
    return area


def mean_average_precision(per_category_ap) -> float:
    """Unweighted mean of per-category APs."""
    if not per_category_ap:
        raise UndefinedMetricError("no categories with ground truth")
    values = list(per_category_ap.values())
    return sum(values) / len(values)


def evaluate(detections, ground_truths, iou_threshold=0.5,
             mode: str = "eleven-point"):
    """Per-category AP and mAP over full detection/annotation sets.

    Categories are those with at least one ground-truth object; ranking
    ties between equal confidences break by detection id.
    """
    categories = sorted({g.category for g in ground_truths}, key=repr)
    if not categories:
        raise UndefinedMetricError("annotation set contains no objects")
    per_category = {}
    for cat in categories:
        dets = sorted(
            (d for d in detections if d.category == cat),
            key=lambda d: (-d.confidence, d.id),
        )
        gts = [g for g in ground_truths if g.category == cat]
        result = match_detections(dets, gts, iou_threshold)
        per_category[cat] = average_precision(result, mode)
    return per_category, mean_average_precision(per_category)


def render_report(per_category, map_value, fmt: str = "text") -> str:
    """Render the AP table as CSV or aligned text, 9 significant digits."""
    if fmt == "csv":
        lines = ["category,ap"]
        for cat, ap in per_category.items():
            lines.append(f"{cat},{ap:.9g}")
        lines.append(f"mAP,{map_value:.9g}")
        return "\n".join(lines) + "\n"
    width = max(len(str(c)) for c in per_category) if per_category else 4
    width = max(width, len("category"))
    lines = [f"{'category':<{width}}  AP"]
    for cat, ap in per_category.items():
        lines.append(f"{str(cat):<{width}}  {ap:.9g}")
    lines.append(f"{'mAP':<{width}}  {map_value:.9g}")
    return "\n".join(lines) + "\n"
