"""Belief propagation with per-variable dynamic context selection.

Each detection carries a binary presence variable whose belief starts at
the detector confidence. Variables are visited in confidence-priority
order; for each one the most informative neighbor subset is chosen by the
belief-weighted deviation of its conditionals from the prior, the context
mixture over neighbor assignments is formed (with unreliable assignments
gated to the prior), and the detector response is renormalized against it.

The numeric inner loop runs in the selected kernel backend (compiled or
pure Python); this module assembles the per-scene conditional arrays the
kernel consumes and exposes the operation-level API.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np

from ctxrescore import _kernels
from ctxrescore import stability
from ctxrescore.core import InvalidInputError, LocationVariable
from ctxrescore.relations import ContextModel, RelationTable

combine = stability.combine


@dataclass(frozen=True)
class InferenceConfig:
    """Knobs of the rescoring engine.

    Defaults mirror the reported configuration: two most informative
    neighbors, a single belief-propagation iteration, derivative gating
    with threshold 10. ``gating_mode`` accepts "off" to disable gating
    entirely, which serves as the ungated ablation in evaluations.
    """

    max_neighbors: int = 2
    iterations: int = 1
    derivative_threshold: float = 10.0
    gating_mode: str = "derivative"
    delta: float = 0.1
    epsilon: float = 0.1
    neighbor_search: str = "exhaustive"
    candidate_floor: float = 0.0

    def __post_init__(self):
        if self.max_neighbors not in (1, 2):
            raise InvalidInputError("max_neighbors must be 1 or 2")
        if self.iterations < 1:
            raise InvalidInputError("iterations must be >= 1")
        if not self.derivative_threshold > 0:
            raise InvalidInputError("derivative_threshold must be > 0")
        if self.gating_mode not in stability.GATING_MODES:
            raise InvalidInputError(
                f"unknown gating mode {self.gating_mode!r}"
            )
        if not 0.0 < self.delta < 1.0:
            raise InvalidInputError("delta must be in (0, 1)")
        if not 0.0 < self.epsilon < 1.0:
            raise InvalidInputError("epsilon must be in (0, 1)")
        if self.neighbor_search not in ("exhaustive", "greedy"):
            raise InvalidInputError(
                f"unknown neighbor search {self.neighbor_search!r}"
            )


@dataclass
class SceneState:
    """Diagnostics of one rescoring pass, aligned with the input order."""

    variables: list[LocationVariable] = field(default_factory=list)
    detector_probs: list[float] = field(default_factory=list)
    chosen_neighbors: list[list[int]] = field(default_factory=list)
    gated: list[bool] = field(default_factory=list)


def as_context_source(model):
    """Accept a (RelationTable, PriorTable) pair or any context source.

    The returned source's per-scene cache, if any, is reset: cached
    relative-feature cells are keyed by object identity, which is only
    meaningful within one operation's detection list.
    """
    if isinstance(model, tuple):
        table, priors = model
        return ContextModel(table, priors)
    if isinstance(model, RelationTable):
        raise InvalidInputError(
            "pass (table, priors) or a context source, not a bare table"
        )
    clear = getattr(model, "clear_cache", None)
    if clear is not None:
        clear()
    return model


@dataclass
class SceneTables:
    """Flat per-scene conditional arrays consumed by the kernel."""

    conf: np.ndarray
    priors: np.ndarray
    cand: np.ndarray
    s_true: np.ndarray
    s_false: np.ndarray
    m_s_true: np.ndarray
    m_s_false: np.ndarray
    p_tt: np.ndarray
    p_tf: np.ndarray
    p_ff: np.ndarray
    m_tt: np.ndarray
    m_tf: np.ndarray
    m_ff: np.ndarray


def build_scene_tables(detections, source, config: InferenceConfig) -> SceneTables:
    """Precompute every conditional the scene's updates might touch.

    Conditionals depend only on geometry and the learned table, not on
    beliefs, so one pass per scene suffices for any number of iterations.
    """
    n = len(detections)
    conf = np.array([d.confidence for d in detections], dtype=np.float64)
    priors = np.array([source.prior_for(d.category) for d in detections],
                      dtype=np.float64)
    cand = (conf >= config.candidate_floor).astype(np.int8)
    s_true = np.zeros((n, n), dtype=np.float64)
    s_false = np.zeros((n, n), dtype=np.float64)
    m_s_true = np.zeros((n, n), dtype=np.float64)
    m_s_false = np.zeros((n, n), dtype=np.float64)
    pool = [j for j in range(n) if cand[j]]
    for i in range(n):
        det = detections[i]
        for j in pool:
            if j == i:
                continue
            h, m = source.single(det, detections[j], True)
            s_true[i, j] = h
            m_s_true[i, j] = m
            h, m = source.single(det, detections[j], False)
            s_false[i, j] = h
            m_s_false[i, j] = m
    want_pairs = config.max_neighbors >= 2 and len(pool) >= 2
    shape = (n, n, n) if want_pairs else (1, 1, 1)
    p_tt = np.zeros(shape, dtype=np.float64)
    p_tf = np.zeros(shape, dtype=np.float64)
    p_ff = np.zeros(shape, dtype=np.float64)
    m_tt = np.zeros(shape, dtype=np.float64)
    m_tf = np.zeros(shape, dtype=np.float64)
    m_ff = np.zeros(shape, dtype=np.float64)
    if want_pairs:
        for i in range(n):
            det = detections[i]
            for j in pool:
                if j == i:
                    continue
                for k in pool:
                    if k == i or k == j:
                        continue
                    h, m = source.pair_tt(det, detections[j], detections[k])
                    p_tt[i, j, k] = h
                    m_tt[i, j, k] = m
                    h, m = source.pair_tf(det, detections[j], detections[k])
                    p_tf[i, j, k] = h
                    m_tf[i, j, k] = m
                    if j < k:
                        h, m = source.pair_ff(det, detections[j], detections[k])
                        p_ff[i, j, k] = h
                        p_ff[i, k, j] = h
                        m_ff[i, j, k] = m
                        m_ff[i, k, j] = m
    return SceneTables(conf, priors, cand, s_true, s_false, m_s_true,
                       m_s_false, p_tt, p_tf, p_ff, m_tt, m_tf, m_ff)


def _canonical_order(detections):
    return sorted(range(len(detections)), key=lambda i: detections[i].id)


def context_mixture(model, query, neighbors, beliefs):
    """Belief-weighted mixture of conditionals over neighbor assignments.

    Enumerates every boolean assignment of ``neighbors``, weights it by the
    product of per-neighbor beliefs, and accumulates the True- and
    False-side conditional-to-prior ratios. Returns (mix_true, mix_false).
    Present neighbors are ordered by descending belief (ties by id) before
    lookup, so the highest-belief present neighbor is the reference frame.
    """
    source = as_context_source(model)
    if not neighbors:
        raise InvalidInputError("neighbor set is empty")
    p = source.prior_for(query.category)
    order = sorted(range(len(neighbors)),
                   key=lambda i: (-beliefs[i], neighbors[i].id))
    mix_t = 0.0
    mix_f = 0.0
    for assignment in itertools.product((True, False), repeat=len(neighbors)):
        weight = 1.0
        for b, asg in zip(beliefs, assignment):
            weight *= b if asg else 1.0 - b
        ordered = [(neighbors[i], assignment[i]) for i in order]
        h = source.conditional_with_support(query, ordered)[0]
        h = _kernels.clamp_context(h)
        mix_t += weight * (h / p)
        mix_f += weight * ((1.0 - h) / (1.0 - p))
    return mix_t, mix_f


def select_neighbors(query_index, detections, beliefs, model,
                     config: InferenceConfig):
    """Most informative neighbor subset for one variable.

    Returns a list of indices into ``detections`` (possibly empty when no
    candidates exist). Subsets are scored by the belief-weighted total
    deviation of the query conditional from its prior over all assignments;
    the search is exhaustive or greedy per the config.
    """
    if not 0 <= query_index < len(detections):
        raise InvalidInputError("query index out of range")
    order = _canonical_order(detections)
    inv = {ci: oi for ci, oi in enumerate(order)}
    dets = [detections[i] for i in order]
    bel = np.array([beliefs[i] for i in order], dtype=np.float64)
    source = as_context_source(model)
    tables = build_scene_tables(dets, source, config)
    qi = order.index(query_index)
    j, k, _score = _kernels.select_for_query(
        qi, bel, tables.priors, tables.cand,
        tables.s_true, tables.s_false, tables.p_tt, tables.p_tf, tables.p_ff,
        config.max_neighbors, config.neighbor_search == "exhaustive",
    )
    chosen = [inv[j]] if j >= 0 else []
    if k >= 0:
        chosen.append(inv[k])
    return chosen


def rescore_scene(detections, model, config: InferenceConfig | None = None):
    """Rescore one image's detections with their mutual context.

    Returns (new_confidences, SceneState), both aligned with the input
    order. Beliefs start at the detector confidences and are updated in
    place in descending confidence priority |belief - 0.5| for the
    configured number of iterations; a variable with no candidates keeps
    its detector confidence.
    """
    if config is None:
        config = InferenceConfig()
    if not detections:
        return [], SceneState()
    image_ids = {d.image_id for d in detections}
    if len(image_ids) != 1:
        raise InvalidInputError(
            f"detections span several images: {sorted(map(repr, image_ids))}"
        )
    source = as_context_source(model)
    order = _canonical_order(detections)
    dets = [detections[i] for i in order]
    tables = build_scene_tables(dets, source, config)
    n = len(dets)
    beliefs = tables.conf.copy()
    nbr_a = np.full(n, -1, dtype=np.int64)
    nbr_b = np.full(n, -1, dtype=np.int64)
    gated = np.zeros(n, dtype=np.int8)
    _kernels.run_scene(
        tables.conf, tables.priors, tables.cand,
        tables.s_true, tables.s_false, tables.m_s_true, tables.m_s_false,
        tables.p_tt, tables.p_tf, tables.p_ff,
        tables.m_tt, tables.m_tf, tables.m_ff,
        beliefs, nbr_a, nbr_b, gated,
        config.iterations, config.max_neighbors,
        config.neighbor_search == "exhaustive",
        stability.GATING_MODES[config.gating_mode],
        config.derivative_threshold, config.delta, config.epsilon,
    )
    inv = {ci: oi for ci, oi in enumerate(order)}
    confidences = [0.0] * n
    state = SceneState(
        variables=[None] * n, detector_probs=[0.0] * n,
        chosen_neighbors=[[] for _ in range(n)], gated=[False] * n,
    )
    for ci in range(n):
        oi = inv[ci]
        confidences[oi] = float(beliefs[ci])
        state.variables[oi] = LocationVariable(dets[ci].id, float(beliefs[ci]))
        state.detector_probs[oi] = dets[ci].confidence
        chosen = []
        if nbr_a[ci] >= 0:
            chosen.append(inv[int(nbr_a[ci])])
        if nbr_b[ci] >= 0:
            chosen.append(inv[int(nbr_b[ci])])
        state.chosen_neighbors[oi] = chosen
        state.gated[oi] = bool(gated[ci])
    return confidences, state
