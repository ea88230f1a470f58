"""Synthetic scenes with a fully specified generative model.

Two template flavors share one schema. Open templates describe scenes the
way real data looks: per-category existence priors, parent-relative
placement of related objects, and a detector noise model that emits hits,
misses and false positives. Slot templates additionally pin one variable
per category and factorize an explicit joint distribution over those
variables, which makes the exact posterior computable by enumeration and
provides the ground truth the inference engine is validated against.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from importlib import resources

import numpy as np

from ctxrescore.core import Detection, GroundTruthObject, InvalidInputError

MAX_ENUMERABLE_VARIABLES = 20

_CONF_CLIP = 1e-12


@dataclass(frozen=True)
class DetectorSpec:
    """Confidence model of the simulated base detector for one category."""

    hit_rate: float = 1.0
    present_conf: tuple[float, float] = (8.0, 2.0)
    absent_conf: tuple[float, float] = (2.0, 8.0)
    false_positives: float = 0.0
    mode: str = "sampled"  # sampled | calibrated | certain

    def __post_init__(self):
        if not 0.0 <= self.hit_rate <= 1.0:
            raise InvalidInputError("hit_rate outside [0, 1]")
        if self.false_positives < 0:
            raise InvalidInputError("false_positives must be >= 0")
        if self.mode not in ("sampled", "calibrated", "certain"):
            raise InvalidInputError(f"unknown detector mode {self.mode!r}")
        for pair in (self.present_conf, self.absent_conf):
            if len(pair) != 2 or pair[0] <= 0 or pair[1] <= 0:
                raise InvalidInputError("confidence Beta parameters must be > 0")


@dataclass(frozen=True)
class CategorySpec:
    name: object
    prior: float = 0.5
    base_height: tuple[float, float] = (40.0, 80.0)
    aspect: float = 0.75
    detector: DetectorSpec = field(default_factory=DetectorSpec)

    def __post_init__(self):
        if not 0.0 <= self.prior <= 1.0:
            raise InvalidInputError(f"prior for {self.name!r} outside [0, 1]")
        lo, hi = self.base_height
        if not 0 < lo <= hi:
            raise InvalidInputError(f"bad height range for {self.name!r}")
        if not self.aspect > 0:
            raise InvalidInputError("aspect must be > 0")


@dataclass(frozen=True)
class RelationSpec:
    """Parent-relative placement, offsets in units of the parent height.

    ``outlier_rate`` is the fraction of co-occurring children that ignore
    the canonical offset and appear anywhere in the image, modeling
    relations that hold most but not all of the time.
    """

    parent: object
    child: object
    mean_offset: tuple[float, float]
    offset_spread: float
    mean_log_scale: float = 0.0
    scale_spread: float = 0.1
    cooccurrence: float = 1.0
    outlier_rate: float = 0.0

    def __post_init__(self):
        if not self.offset_spread >= 0 or not self.scale_spread >= 0:
            raise InvalidInputError("spreads must be >= 0")
        if not 0.0 <= self.cooccurrence <= 1.0:
            raise InvalidInputError("cooccurrence outside [0, 1]")
        if not 0.0 <= self.outlier_rate <= 1.0:
            raise InvalidInputError("outlier_rate outside [0, 1]")


@dataclass(frozen=True)
class JointSpec:
    """Explicit conditional of one slot variable given up to two others."""

    child: object
    parents: tuple
    prob_true: dict  # parent assignment tuple -> P(child present)

    def __post_init__(self):
        if not 1 <= len(self.parents) <= 2:
            raise InvalidInputError("joint conditionals take 1 or 2 parents")
        want = 2 ** len(self.parents)
        if len(self.prob_true) != want:
            raise InvalidInputError(
                f"conditional for {self.child!r} needs {want} rows"
            )
        for key, v in self.prob_true.items():
            if len(key) != len(self.parents):
                raise InvalidInputError("conditional row arity mismatch")
            if not 0.0 <= v <= 1.0:
                raise InvalidInputError("conditional probability outside [0, 1]")


@dataclass(frozen=True)
class SceneTemplate:
    categories: tuple
    relations: tuple = ()
    joint: tuple = ()
    image_size: tuple[int, int] = (640, 480)
    slot_mode: bool = False

    def __post_init__(self):
        names = [c.name for c in self.categories]
        if len(set(names)) != len(names):
            raise InvalidInputError("duplicate category names")
        known = set(names)
        for rel in self.relations:
            if rel.parent not in known or rel.child not in known:
                raise InvalidInputError("relation references unknown category")
        children = set()
        for js in self.joint:
            if js.child in children:
                raise InvalidInputError(
                    f"{js.child!r} has more than one joint conditional"
                )
            children.add(js.child)
            for parent in (js.child,) + tuple(js.parents):
                if parent not in known:
                    raise InvalidInputError("joint references unknown category")
            for parent in js.parents:
                if names.index(parent) >= names.index(js.child):
                    raise InvalidInputError(
                        "joint parents must be declared before their child"
                    )
        if self.joint and not self.slot_mode:
            raise InvalidInputError("joint conditionals require slot_mode")

    @property
    def names(self):
        return tuple(c.name for c in self.categories)

    def category(self, name) -> CategorySpec:
        for c in self.categories:
            if c.name == name:
                return c
        raise InvalidInputError(f"unknown category {name!r}")

    def materialize_joint(self) -> np.ndarray:
        """Joint over slot variables as a flat array indexed by bit mask.

        Bit v of the index is the assignment of slot v (template category
        order). Roots use their existence prior; joint-spec children use
        their conditional rows.
        """
        if not self.slot_mode:
            raise InvalidInputError("joint is only defined for slot templates")
        names = self.names
        n = len(names)
        if n > MAX_ENUMERABLE_VARIABLES:
            raise InvalidInputError(
                f"{n} variables exceed the enumeration bound of "
                f"{MAX_ENUMERABLE_VARIABLES}; reduce the template size"
            )
        by_child = {js.child: js for js in self.joint}
        joint = np.ones(2 ** n, dtype=np.float64)
        idx = np.arange(2 ** n)
        for v, name in enumerate(names):
            present = (idx >> v) & 1 == 1
            js = by_child.get(name)
            if js is None:
                p = self.category(name).prior
                joint *= np.where(present, p, 1.0 - p)
            else:
                pv = np.empty(2 ** n, dtype=np.float64)
                for i in range(2 ** n):
                    key = tuple(bool((i >> names.index(par)) & 1)
                                for par in js.parents)
                    pv[i] = js.prob_true[key]
                joint *= np.where(present, pv, 1.0 - pv)
        total = joint.sum()
        if not math.isclose(total, 1.0, abs_tol=1e-9):
            raise InvalidInputError(f"joint sums to {total}, not 1")
        return joint


@dataclass
class SyntheticScene:
    image_id: object
    ground_truth: list
    detections: list
    slots: tuple | None = None        # slot-mode: category per variable
    slot_present: tuple | None = None
    joint: np.ndarray | None = None   # shared across scenes of one dataset


@dataclass
class SyntheticDataset:
    template: SceneTemplate
    scenes: list

    def all_detections(self):
        return [d for s in self.scenes for d in s.detections]

    def all_ground_truth(self):
        return [g for s in self.scenes for g in s.ground_truth]

    def annotation_scenes(self):
        return [s.ground_truth for s in self.scenes]

    def image_ids(self):
        return [s.image_id for s in self.scenes]


def _beta_pdf(x, a, b):
    log_norm = (math.lgamma(a) + math.lgamma(b) - math.lgamma(a + b))
    return math.exp((a - 1.0) * math.log(x) + (b - 1.0) * math.log(1.0 - x)
                    - log_norm)


def _confidence(rng, spec: DetectorSpec, present: bool, marginal: float) -> float:
    """Draw one detection confidence according to the detector mode."""
    if spec.mode == "certain":
        return 1.0 if present else 0.0
    params = spec.present_conf if present else spec.absent_conf
    r = float(rng.beta(*params))
    r = min(max(r, _CONF_CLIP), 1.0 - _CONF_CLIP)
    if spec.mode == "sampled":
        return r
    # calibrated: replace the raw response by its Bayes posterior, making
    # the confidence equal to P(present | response) under the noise model
    f_p = _beta_pdf(r, *spec.present_conf)
    f_a = _beta_pdf(r, *spec.absent_conf)
    return f_p * marginal / (f_p * marginal + f_a * (1.0 - marginal))


def _uniform_center(rng, template, height):
    w, h = template.image_size
    margin = height / 2.0
    return (float(rng.uniform(margin, max(w - margin, margin + 1.0))),
            float(rng.uniform(margin, max(h - margin, margin + 1.0))))


def _place(rng, template, spec: CategorySpec, parent: GroundTruthObject | None,
           rel: RelationSpec | None):
    if parent is not None and rel is not None:
        outlier = rel.outlier_rate > 0.0 and rng.random() < rel.outlier_rate
        dx = rel.mean_offset[0] + rng.normal(0.0, rel.offset_spread)
        dy = rel.mean_offset[1] + rng.normal(0.0, rel.offset_spread)
        height = parent.height * math.exp(
            rel.mean_log_scale + rng.normal(0.0, rel.scale_spread))
        if outlier:
            center = _uniform_center(rng, template, height)
        else:
            center = (parent.center[0] + dx * parent.height,
                      parent.center[1] + dy * parent.height)
    else:
        height = float(rng.uniform(*spec.base_height))
        center = _uniform_center(rng, template, height)
    return center, height


def sample_dataset(template: SceneTemplate, n_scenes: int,
                   seed: int) -> SyntheticDataset:
    """Generate a deterministic dataset from a template.

    Each scene draws from an independent generator derived from (seed,
    scene index), so generation order and parallelism cannot change the
    result. Detection ids are globally unique and increase with scene
    order.
    """
    if n_scenes < 1:
        raise InvalidInputError("n_scenes must be >= 1")
    joint = template.materialize_joint() if template.slot_mode else None
    marginals = _slot_marginals(template, joint) if template.slot_mode else None
    scenes = []
    det_id = 0
    for i in range(n_scenes):
        rng = np.random.default_rng([seed, i])
        image_id = f"scene-{i:06d}"
        if template.slot_mode:
            scene, det_id = _sample_slot_scene(
                rng, template, image_id, joint, marginals, det_id)
        else:
            scene, det_id = _sample_open_scene(rng, template, image_id, det_id)
        scenes.append(scene)
    return SyntheticDataset(template, scenes)


def _rel_for(template, name, present):
    for rel in template.relations:
        if rel.child == name and rel.parent in present:
            return rel
    return None


def _sample_open_scene(rng, template, image_id, det_id):
    present = {}
    for spec in template.categories:
        rel = _rel_for(template, spec.name, present)
        if rel is not None:
            exists = rng.random() < rel.cooccurrence
        else:
            exists = rng.random() < spec.prior
        if not exists:
            continue
        parent = present.get(rel.parent) if rel is not None else None
        center, height = _place(rng, template, spec, parent, rel)
        present[spec.name] = GroundTruthObject.from_center(
            image_id, spec.name, center, spec.aspect * height, height)
    ground_truth = list(present.values())
    detections = []
    for spec in template.categories:
        gt = present.get(spec.name)
        det = spec.detector
        if gt is not None and rng.random() < det.hit_rate:
            center = (gt.center[0] + rng.normal(0.0, 0.02 * gt.height),
                      gt.center[1] + rng.normal(0.0, 0.02 * gt.height))
            height = gt.height * math.exp(rng.normal(0.0, 0.03))
            conf = _confidence(rng, det, True, spec.prior)
            detections.append(Detection.from_center(
                det_id, image_id, spec.name, center, spec.aspect * height,
                height, conf))
            det_id += 1
        for _ in range(int(rng.poisson(det.false_positives))):
            height = float(rng.uniform(*spec.base_height))
            center = _uniform_center(rng, template, height)
            conf = _confidence(rng, det, False, spec.prior)
            detections.append(Detection.from_center(
                det_id, image_id, spec.name, center, spec.aspect * height,
                height, conf))
            det_id += 1
    return SyntheticScene(image_id, ground_truth, detections), det_id


def _sample_slot_scene(rng, template, image_id, joint, marginals, det_id):
    names = template.names
    n = len(names)
    mask = int(rng.choice(len(joint), p=joint))
    assignment = tuple(bool((mask >> v) & 1) for v in range(n))
    present = {}
    geometry = {}
    for v, name in enumerate(names):
        spec = template.category(name)
        rel = _rel_for(template, name, geometry)
        parent = geometry.get(rel.parent) if rel is not None else None
        center, height = _place(rng, template, spec, parent, rel)
        obj = GroundTruthObject.from_center(
            image_id, name, center, spec.aspect * height, height)
        geometry[name] = obj
        if assignment[v]:
            present[name] = obj
    detections = []
    for v, name in enumerate(names):
        spec = template.category(name)
        obj = geometry[name]
        conf = _confidence(rng, spec.detector, assignment[v], marginals[v])
        detections.append(Detection.from_center(
            det_id, image_id, name, obj.center, obj.width, obj.height, conf))
        det_id += 1
    scene = SyntheticScene(
        image_id, list(present.values()), detections,
        slots=names, slot_present=assignment, joint=joint)
    return scene, det_id


def _slot_marginals(template, joint):
    n = len(template.names)
    idx = np.arange(len(joint))
    return tuple(float(joint[(idx >> v) & 1 == 1].sum()) for v in range(n))


def exact_posterior(scene: SyntheticScene):
    """Exact per-variable presence posteriors given all detections.

    Enumerates every joint assignment, weighting the template joint by the
    per-detection likelihood ratios implied by the calibrated confidences,
    and marginalizes. Only slot scenes carry the required joint.
    """
    if scene.joint is None or scene.slots is None:
        raise InvalidInputError(
            "scene has no materialized joint; exact posteriors need a "
            "slot-mode template"
        )
    n = len(scene.slots)
    if n > MAX_ENUMERABLE_VARIABLES:
        raise InvalidInputError(
            f"{n} variables exceed the enumeration bound of "
            f"{MAX_ENUMERABLE_VARIABLES}; reduce the scene size"
        )
    joint = scene.joint
    idx = np.arange(len(joint))
    marginals = [float(joint[(idx >> v) & 1 == 1].sum()) for v in range(n)]
    weights = joint.astype(np.float64).copy()
    for v in range(n):
        p = marginals[v]
        if not 0.0 < p < 1.0:
            raise InvalidInputError(
                f"slot {scene.slots[v]!r} has a degenerate marginal {p}"
            )
        c = scene.detections[v].confidence
        lik_t = c / p
        lik_f = (1.0 - c) / (1.0 - p)
        present = (idx >> v) & 1 == 1
        weights *= np.where(present, lik_t, lik_f)
    total = weights.sum()
    if total <= 0.0:
        raise InvalidInputError("all joint assignments have zero likelihood")
    return [float(weights[(idx >> v) & 1 == 1].sum() / total) for v in range(n)]


class ExactContextModel:
    """Context source serving conditionals straight from a scene's joint.

    Drop-in replacement for the learned table adapter: detections map to
    slot variables by category, conditionals are exact marginal ratios of
    the joint, and the reported support is effectively infinite so sample
    gating never fires.
    """

    SUPPORT = 1e18

    def __init__(self, scene: SyntheticScene):
        if scene.joint is None or scene.slots is None:
            raise InvalidInputError("exact context model needs a slot scene")
        self.scene = scene
        self.joint = scene.joint
        self._idx = np.arange(len(scene.joint))
        self._slot_of = {}
        for v, name in enumerate(scene.slots):
            self._slot_of[name] = v
        self._marginals = {
            name: float(self.joint[(self._idx >> v) & 1 == 1].sum())
            for name, v in self._slot_of.items()
        }

    def prior_for(self, category) -> float:
        p = self._marginals.get(category)
        if p is None:
            raise InvalidInputError(f"unknown slot category {category!r}")
        if not 0.0 < p < 1.0:
            raise InvalidInputError(
                f"slot {category!r} has a degenerate marginal {p}"
            )
        return p

    def _conditional(self, query, conditions):
        qv = self._slot_of[query.category]
        mask = np.ones(len(self.joint), dtype=bool)
        for det, value in conditions:
            v = self._slot_of[det.category]
            present = (self._idx >> v) & 1 == 1
            mask &= present if value else ~present
        den = float(self.joint[mask].sum())
        if den <= 0.0:
            # conditioning event has probability zero; fall back to the prior
            return self._marginals[query.category]
        num_mask = mask & ((self._idx >> qv) & 1 == 1)
        return float(self.joint[num_mask].sum()) / den

    def single(self, query, nbr, assignment):
        return self._conditional(query, [(nbr, assignment)]), self.SUPPORT

    def pair_tt(self, query, ref, other):
        return self._conditional(query, [(ref, True), (other, True)]), self.SUPPORT

    def pair_tf(self, query, ref, other):
        return self._conditional(query, [(ref, True), (other, False)]), self.SUPPORT

    def pair_ff(self, query, n1, n2):
        return self._conditional(query, [(n1, False), (n2, False)]), self.SUPPORT

    def conditional_with_support(self, query, neighbors):
        if not 1 <= len(neighbors) <= 2:
            raise InvalidInputError("need 1 or 2 neighbors")
        return self._conditional(query, list(neighbors)), self.SUPPORT


# -- template (de)serialization ------------------------------------------------


def template_to_dict(template: SceneTemplate) -> dict:
    return {
        "kind": "scene-template",
        "schema_version": 1,
        "image_size": list(template.image_size),
        "slot_mode": template.slot_mode,
        "categories": [
            {
                "name": c.name,
                "prior": c.prior,
                "base_height": list(c.base_height),
                "aspect": c.aspect,
                "detector": {
                    "hit_rate": c.detector.hit_rate,
                    "present_conf": list(c.detector.present_conf),
                    "absent_conf": list(c.detector.absent_conf),
                    "false_positives": c.detector.false_positives,
                    "mode": c.detector.mode,
                },
            }
            for c in template.categories
        ],
        "relations": [
            {
                "parent": r.parent,
                "child": r.child,
                "mean_offset": list(r.mean_offset),
                "offset_spread": r.offset_spread,
                "mean_log_scale": r.mean_log_scale,
                "scale_spread": r.scale_spread,
                "cooccurrence": r.cooccurrence,
                "outlier_rate": r.outlier_rate,
            }
            for r in template.relations
        ],
        "joint": [
            {
                "child": j.child,
                "parents": list(j.parents),
                "prob_true": {
                    "".join("1" if b else "0" for b in key): v
                    for key, v in j.prob_true.items()
                },
            }
            for j in template.joint
        ],
    }


def template_from_dict(data: dict) -> SceneTemplate:
    if data.get("kind") != "scene-template":
        raise InvalidInputError("not a scene template document")
    if data.get("schema_version") != 1:
        raise InvalidInputError(
            f"template schema version {data.get('schema_version')!r} is not "
            f"supported (expected 1)"
        )
    categories = tuple(
        CategorySpec(
            name=c["name"],
            prior=c.get("prior", 0.5),
            base_height=tuple(c.get("base_height", (40.0, 80.0))),
            aspect=c.get("aspect", 0.75),
            detector=DetectorSpec(
                hit_rate=c.get("detector", {}).get("hit_rate", 1.0),
                present_conf=tuple(
                    c.get("detector", {}).get("present_conf", (8.0, 2.0))),
                absent_conf=tuple(
                    c.get("detector", {}).get("absent_conf", (2.0, 8.0))),
                false_positives=c.get("detector", {}).get("false_positives", 0.0),
                mode=c.get("detector", {}).get("mode", "sampled"),
            ),
        )
        for c in data.get("categories", ())
    )
    relations = tuple(
        RelationSpec(
            parent=r["parent"], child=r["child"],
            mean_offset=tuple(r["mean_offset"]),
            offset_spread=r["offset_spread"],
            mean_log_scale=r.get("mean_log_scale", 0.0),
            scale_spread=r.get("scale_spread", 0.1),
            cooccurrence=r.get("cooccurrence", 1.0),
            outlier_rate=r.get("outlier_rate", 0.0),
        )
        for r in data.get("relations", ())
    )
    joint = tuple(
        JointSpec(
            child=j["child"], parents=tuple(j["parents"]),
            prob_true={
                tuple(ch == "1" for ch in key): v
                for key, v in j["prob_true"].items()
            },
        )
        for j in data.get("joint", ())
    )
    return SceneTemplate(
        categories=categories, relations=relations, joint=joint,
        image_size=tuple(data.get("image_size", (640, 480))),
        slot_mode=data.get("slot_mode", False),
    )


def load_template(path) -> SceneTemplate:
    with open(path, "r", encoding="utf-8") as fh:
        return template_from_dict(json.load(fh))


def save_template(template: SceneTemplate, path):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(template_to_dict(template), fh, indent=2, sort_keys=True)
        fh.write("\n")


def builtin_template(name: str) -> SceneTemplate:
    """Load one of the shipped templates by bare name."""
    pkg = resources.files("ctxrescore.templates")
    candidate = pkg / f"{name}.json"
    if not candidate.is_file():
        available = sorted(
            p.name[:-5] for p in pkg.iterdir() if p.name.endswith(".json"))
        raise InvalidInputError(
            f"unknown template {name!r}; shipped templates: {available}"
        )
    return template_from_dict(json.loads(candidate.read_text()))
