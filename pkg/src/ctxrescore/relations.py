"""Learned spatial-relation tables and the conditionals they serve.

Training is pure counting: for every ordered pair of objects co-occurring
in an annotated scene, the second object's binned feature relative to the
first is recorded, and (for the triple model) likewise every ordered
(reference, other, query) triple with both features expressed in the
reference frame. Counts are indicator counts per reference occurrence, so
every derived conditional is a well-formed probability.

Conditionals with a present reference come straight from the counts.
Negative evidence (a neighbor known to be absent) is derived from the
complement of co-occurrence inside the binning window, and the case where
no neighbor can serve as a reference frame is rewritten, using the query
itself as reference, into terms that each drop one variable.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Mapping

from ctxrescore.core import (
    BinningConfig,
    DataSparsityWarning,
    InvalidInputError,
    UntrainedCategoryError,
    feature_cell,
)

_DENOM_GUARD = 1e-9


@dataclass(frozen=True)
class PriorTable:
    """Per-category prior probability of presence."""

    probs: Mapping[object, float]

    def __post_init__(self):
        for cat, p in self.probs.items():
            if not 0.0 < p < 1.0:
                raise InvalidInputError(
                    f"prior for {cat!r} must be strictly inside (0, 1), got {p}"
                )

    def __getitem__(self, category) -> float:
        try:
            return self.probs[category]
        except KeyError:
            raise UntrainedCategoryError(
                f"no prior for category {category!r}"
            ) from None

    def replace(self, category, value) -> "PriorTable":
        probs = dict(self.probs)
        probs[category] = value
        return PriorTable(probs)

    @classmethod
    def uniform(cls, categories, value=0.02) -> "PriorTable":
        return cls({c: value for c in categories})


@dataclass
class RelationTable:
    """Binned co-occurrence counts in reference-relative coordinates.

    ``pair_counts`` maps (ref_category, query_category, bx, by, bs) to the
    number of reference occurrences with at least one query-category object
    in that cell. ``triple_counts`` analogously counts reference occurrences
    exhibiting an (other, query) cell configuration; only present-other
    entries are stored, absent-other conditionals are derived. The raw
    counts double as the per-cell sample sizes used by reliability checks.
    """

    binning: BinningConfig
    max_neighbors: int = 2
    smoothing: float = 1.0
    categories: tuple = ()
    pair_counts: dict = field(default_factory=dict)
    pair_totals: dict = field(default_factory=dict)
    triple_counts: dict = field(default_factory=dict)

    def check_category(self, category):
        known = self.__dict__.get("_known")
        if known is None:
            known = frozenset(self.categories)
            self.__dict__["_known"] = known
        if category not in known:
            raise UntrainedCategoryError(
                f"category {category!r} is not in the trained model"
            )

    # -- raw count accessors -------------------------------------------------

    def pair_count(self, ref_cat, q_cat, q_cell) -> int:
        return self.pair_counts.get((ref_cat, q_cat) + tuple(q_cell), 0)

    def triple_count(self, ref_cat, o_cat, o_cell, q_cat, q_cell,
                     other_present=True) -> int:
        present = self.triple_counts.get(
            (ref_cat, o_cat) + tuple(o_cell) + (q_cat,) + tuple(q_cell), 0
        )
        if other_present:
            return present
        return self.pair_count(ref_cat, q_cat, q_cell) - present

    # -- smoothed cell conditionals -------------------------------------------

    def _smoothed(self, count, total, fallback):
        # additive smoothing with the pseudo-mass split by the prior: an
        # unobserved conditioning event carries no information, so sparse
        # cells shrink toward the prior instead of toward 0.5
        if total <= 0:
            return fallback
        alpha = 2.0 * self.smoothing
        return (count + alpha * fallback) / (total + alpha)

    def pair_conditional(self, ref_cat, q_cat, q_cell, fallback):
        """P(query present in q_cell | reference present), with support."""
        c = self.pair_count(ref_cat, q_cat, q_cell)
        n = self.pair_totals.get(ref_cat, 0)
        return self._smoothed(c, n, fallback), c

    def triple_true_conditional(self, ref_cat, o_cat, o_cell, q_cat, q_cell,
                                fallback):
        """P(query in q_cell | reference present, other present in o_cell)."""
        c = self.triple_count(ref_cat, o_cat, o_cell, q_cat, q_cell)
        n = self.pair_count(ref_cat, o_cat, o_cell)
        return self._smoothed(c, n, fallback), c

    def triple_absent_conditional(self, ref_cat, o_cat, o_cell, q_cat, q_cell,
                                  fallback):
        """P(query in q_cell | reference present, o_cell free of other)."""
        c = self.triple_count(ref_cat, o_cat, o_cell, q_cat, q_cell,
                              other_present=False)
        n = (self.pair_totals.get(ref_cat, 0)
             - self.pair_count(ref_cat, o_cat, o_cell))
        return self._smoothed(c, n, fallback), c

    def equals_counts(self, other: "RelationTable") -> bool:
        return (self.pair_counts == other.pair_counts
                and self.pair_totals == other.pair_totals
                and self.triple_counts == other.triple_counts)


def fit_relations(scenes, binning: BinningConfig, max_neighbors: int = 2,
                  smoothing: float = 1.0) -> RelationTable:
    """Count object configurations over annotated scenes.

    ``scenes`` is a list of scenes, each a list of objects exposing
    ``category``, ``center`` and ``height``. Counting is indicator-style:
    a (category, cell) configuration increments at most once per reference
    occurrence, so conditionals never exceed one. Scene and object order
    do not affect the result.
    """
    if max_neighbors not in (1, 2):
        raise InvalidInputError(
            f"max_neighbors must be 1 or 2, got {max_neighbors}"
        )
    if not scenes:
        raise InvalidInputError("scene list is empty")
    if smoothing < 0:
        raise InvalidInputError("smoothing must be >= 0")
    known = set(binning.scale_factors)
    table = RelationTable(
        binning=binning,
        max_neighbors=max_neighbors,
        smoothing=smoothing,
        categories=tuple(sorted(binning.scale_factors, key=repr)),
    )
    pair_counts = table.pair_counts
    pair_totals = table.pair_totals
    triple_counts = table.triple_counts
    for scene in scenes:
        for obj in scene:
            if obj.category not in known:
                raise UntrainedCategoryError(
                    f"category {obj.category!r} has no scale factor configured"
                )
        for ref in scene:
            pair_totals[ref.category] = pair_totals.get(ref.category, 0) + 1
            cells = []
            seen_pairs = set()
            for other in scene:
                if other is ref:
                    continue
                cell = feature_cell(other, ref, binning)
                cells.append((other, cell))
                key = (ref.category, other.category) + cell
                if key not in seen_pairs:
                    seen_pairs.add(key)
                    pair_counts[key] = pair_counts.get(key, 0) + 1
            if max_neighbors < 2:
                continue
            seen_triples = set()
            for oi, (other, o_cell) in enumerate(cells):
                for qi, (query, q_cell) in enumerate(cells):
                    if qi == oi:
                        continue
                    key = ((ref.category, other.category) + o_cell
                           + (query.category,) + q_cell)
                    if key not in seen_triples:
                        seen_triples.add(key)
                        triple_counts[key] = triple_counts.get(key, 0) + 1
    return table


def merge_tables(a: RelationTable, b: RelationTable) -> RelationTable:
    """Add the counts of two tables trained with identical configuration."""
    if (a.binning != b.binning or a.max_neighbors != b.max_neighbors
            or a.smoothing != b.smoothing):
        raise InvalidInputError("tables were trained with different settings")
    merged = RelationTable(
        binning=a.binning, max_neighbors=a.max_neighbors,
        smoothing=a.smoothing, categories=a.categories,
        pair_counts=dict(a.pair_counts), pair_totals=dict(a.pair_totals),
        triple_counts=dict(a.triple_counts),
    )
    for key, c in b.pair_counts.items():
        merged.pair_counts[key] = merged.pair_counts.get(key, 0) + c
    for key, c in b.pair_totals.items():
        merged.pair_totals[key] = merged.pair_totals.get(key, 0) + c
    for key, c in b.triple_counts.items():
        merged.triple_counts[key] = merged.triple_counts.get(key, 0) + c
    return merged


class ContextModel:
    """Serves context conditionals for detections from a learned table.

    This is the adapter the inference engine drives: it featurizes
    detection pairs in the reference frame, looks up the smoothed
    conditionals and reports the raw support count of the configuration
    actually consulted. Relative-feature cells are cached per object pair,
    so instances are meant to live for one scene.
    """

    def __init__(self, table: RelationTable, priors: PriorTable):
        self.table = table
        self.priors = priors
        self._cells = {}

    def prior_for(self, category) -> float:
        self.table.check_category(category)
        return self.priors[category]

    def _cell(self, query, ref):
        key = (id(ref), id(query))
        cell = self._cells.get(key)
        if cell is None:
            cell = feature_cell(query, ref, self.table.binning)
            self._cells[key] = cell
        return cell

    def clear_cache(self):
        self._cells.clear()

    def single(self, query, nbr, assignment: bool):
        """P(query present | nbr = assignment) and its support count."""
        table = self.table
        table.check_category(query.category)
        table.check_category(nbr.category)
        p_q = self.priors[query.category]
        if assignment:
            cell = self._cell(query, nbr)
            return table.pair_conditional(nbr.category, query.category,
                                          cell, fallback=p_q)
        # no present neighbor: rewrite with the query as reference frame
        cell = self._cell(nbr, query)
        h_n, c = table.pair_conditional(query.category, nbr.category,
                                        cell, fallback=self.priors[nbr.category])
        p_n = self.priors[nbr.category]
        h = (1.0 - h_n) * p_q / (1.0 - p_n)
        tot = table.pair_totals.get(query.category, 0)
        return self._clip(h), tot - c

    def pair_tt(self, query, ref, other):
        """P(query present | ref present as frame, other present)."""
        self._check_triple(query, ref, other)
        p_q = self.priors[query.category]
        o_cell = self._cell(other, ref)
        q_cell = self._cell(query, ref)
        return self.table.triple_true_conditional(
            ref.category, other.category, o_cell, query.category, q_cell,
            fallback=p_q,
        )

    def pair_tf(self, query, ref, other):
        """P(query present | ref present as frame, other absent)."""
        self._check_triple(query, ref, other)
        p_q = self.priors[query.category]
        o_cell = self._cell(other, ref)
        q_cell = self._cell(query, ref)
        return self.table.triple_absent_conditional(
            ref.category, other.category, o_cell, query.category, q_cell,
            fallback=p_q,
        )

    def pair_ff(self, query, n1, n2):
        """P(query present | both neighbors absent).

        Uses the query itself as the reference frame; the pivot neighbor is
        the one first in canonical id order, making the result independent
        of the argument order.
        """
        self._check_triple(query, n1, n2)
        k, j = (n1, n2) if _canonical_key(n1) <= _canonical_key(n2) else (n2, n1)
        p_q = self.priors[query.category]
        # P(k absent | query present, j absent)
        h_k, m1 = self.pair_tf(k, query, j)
        t1 = 1.0 - h_k
        # P(query present | j absent): one variable fewer
        t2, m2 = self.single(query, j, False)
        # P(k absent | j absent): one variable fewer
        h_kj, m3 = self.single(k, j, False)
        t3 = 1.0 - h_kj
        support = min(m1, m2, m3)
        if t3 < _DENOM_GUARD:
            warnings.warn(
                "all-absent conditional has a vanishing denominator; "
                "falling back to the prior", DataSparsityWarning, stacklevel=2,
            )
            return p_q, support
        return self._clip(t1 * t2 / t3), support

    def conditional_with_support(self, query, neighbors):
        """P(query present | neighbor assignments) plus its support count.

        ``neighbors`` is a non-empty list of (object, bool) pairs, at most
        one pair beyond the first. With several present neighbors the first
        one in list order is the reference frame, so callers encode their
        preference (e.g. highest belief) by ordering the list.
        """
        if not 1 <= len(neighbors) <= self.table.max_neighbors:
            raise InvalidInputError(
                f"need between 1 and {self.table.max_neighbors} neighbors, "
                f"got {len(neighbors)}"
            )
        if len(neighbors) == 1:
            (nbr, asg), = neighbors
            return self.single(query, nbr, asg)
        (n1, a1), (n2, a2) = neighbors
        if a1 and a2:
            return self.pair_tt(query, n1, n2)
        if a1:
            return self.pair_tf(query, n1, n2)
        if a2:
            return self.pair_tf(query, n2, n1)
        return self.pair_ff(query, n1, n2)

    def _check_triple(self, query, a, b):
        self.table.check_category(query.category)
        self.table.check_category(a.category)
        self.table.check_category(b.category)
        if self.table.max_neighbors < 2:
            raise InvalidInputError(
                "table was trained with max_neighbors=1; pair conditionals "
                "are unavailable"
            )

    @staticmethod
    def _clip(h):
        if h > 1.0:
            warnings.warn(
                "derived conditional exceeded one (negative complement); "
                "clamping", DataSparsityWarning, stacklevel=3,
            )
            return 1.0
        if h < 0.0:
            return 0.0
        return h


def _canonical_key(obj):
    det_id = getattr(obj, "id", None)
    return (det_id is None, det_id)


def context_conditional(table: RelationTable, priors: PriorTable, query,
                        neighbors, query_assignment: bool = True) -> float:
    """P(query = query_assignment | neighbor assignments).

    The True and False outputs for a fixed conditioning sum to one exactly.
    """
    model = ContextModel(table, priors)
    h = model.conditional_with_support(query, neighbors)[0]
    return h if query_assignment else 1.0 - h


def observed_samples(table: RelationTable, priors: PriorTable, query,
                     neighbors) -> int:
    """Raw training support behind the conditional a lookup would use.

    For composed conditionals (absent neighbors) this is the minimum over
    the constituent configurations; an untrained configuration reports 0.
    """
    model = ContextModel(table, priors)
    return model.conditional_with_support(query, neighbors)[1]


def fit_priors(train_scenes, train_detections, engine, grid, metric) -> PriorTable:
    """Choose per-category priors maximizing per-category average precision.

    One coordinate-wise pass in canonical category order: for each category
    every grid value is tried while the other categories keep their current
    best, the training detections are rescored by ``engine(detections,
    priors)`` and scored by ``metric(rescored, train_scenes)`` (a mapping
    category -> AP). Ties prefer the smaller prior. Categories are those
    present in the training annotations.
    """
    if not grid:
        raise InvalidInputError("prior grid is empty")
    grid = sorted(grid)
    for g in grid:
        if not 0.0 < g < 1.0:
            raise InvalidInputError(f"grid value {g} outside (0, 1)")
    categories = sorted({obj.category for scene in train_scenes for obj in scene},
                        key=repr)
    if not categories:
        raise InvalidInputError("training scenes contain no objects")
    current = {c: grid[0] for c in categories}
    for cat in categories:
        best_value = grid[0]
        best_ap = -math.inf
        for g in grid:
            trial = dict(current)
            trial[cat] = g
            rescored = engine(train_detections, PriorTable(trial))
            ap = metric(rescored, train_scenes).get(cat, 0.0)
            if ap > best_ap:
                best_ap = ap
                best_value = g
        current[cat] = best_value
    return PriorTable(current)
