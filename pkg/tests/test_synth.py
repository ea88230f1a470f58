"""Synthetic scenes: determinism, distributional fidelity, exact posteriors."""

import math

import numpy as np
import pytest

from ctxrescore import synth
from ctxrescore.core import InvalidInputError


def _template_pair():
    return synth.SceneTemplate(
        categories=(
            synth.CategorySpec("parent", prior=0.7),
            synth.CategorySpec("child", prior=0.2),
        ),
        relations=(synth.RelationSpec("parent", "child", (1.5, 0.0), 0.05,
                                      cooccurrence=0.6),),
    )


class TestSampling:
    def test_same_seed_identical_datasets(self):
        t = _template_pair()
        a = synth.sample_dataset(t, 30, seed=5)
        b = synth.sample_dataset(t, 30, seed=5)
        assert [s.ground_truth for s in a.scenes] == \
            [s.ground_truth for s in b.scenes]
        assert a.all_detections() == b.all_detections()

    def test_different_seed_differs(self):
        t = _template_pair()
        a = synth.sample_dataset(t, 30, seed=5)
        b = synth.sample_dataset(t, 30, seed=6)
        assert a.all_detections() != b.all_detections()

    def test_degenerate_relation_places_exactly(self):
        t = synth.SceneTemplate(
            categories=(
                synth.CategorySpec("parent", prior=1.0),
                synth.CategorySpec("child", prior=0.0),
            ),
            relations=(synth.RelationSpec("parent", "child", (2.0, -1.0), 0.0,
                                          mean_log_scale=0.0, scale_spread=0.0,
                                          cooccurrence=1.0),),
        )
        ds = synth.sample_dataset(t, 10, seed=1)
        for scene in ds.scenes:
            parent = next(g for g in scene.ground_truth
                          if g.category == "parent")
            child = next(g for g in scene.ground_truth
                         if g.category == "child")
            dx = (child.center[0] - parent.center[0]) / parent.height
            dy = (child.center[1] - parent.center[1]) / parent.height
            assert dx == pytest.approx(2.0, abs=1e-9)
            assert dy == pytest.approx(-1.0, abs=1e-9)
            assert child.height == pytest.approx(parent.height, rel=1e-9)

    def test_empirical_cooccurrence_within_three_sigma(self):
        t = _template_pair()
        n = 10000
        ds = synth.sample_dataset(t, n, seed=9)
        with_parent = 0
        with_both = 0
        for scene in ds.scenes:
            cats = {g.category for g in scene.ground_truth}
            if "parent" in cats:
                with_parent += 1
                with_both += "child" in cats
        rate = with_both / with_parent
        sigma = math.sqrt(0.6 * 0.4 / with_parent)
        assert abs(rate - 0.6) <= 3 * sigma
        p_rate = with_parent / n
        sigma_p = math.sqrt(0.7 * 0.3 / n)
        assert abs(p_rate - 0.7) <= 3 * sigma_p

    def test_requires_positive_scene_count(self):
        with pytest.raises(InvalidInputError):
            synth.sample_dataset(_template_pair(), 0, seed=1)


class TestJointMaterialization:
    def test_joint_sums_to_one(self):
        for name in ("clique", "correlated"):
            t = synth.builtin_template(name)
            joint = t.materialize_joint()
            assert joint.sum() == pytest.approx(1.0, abs=1e-9)
            assert (joint >= 0).all()

    def test_conditional_rows_respected(self):
        t = synth.builtin_template("correlated")
        joint = t.materialize_joint()
        names = t.names
        idx = np.arange(len(joint))
        a = (idx >> names.index("link_a")) & 1 == 1
        b = (idx >> names.index("link_b")) & 1 == 1
        p_b_given_a = joint[a & b].sum() / joint[a].sum()
        assert p_b_given_a == pytest.approx(0.85, abs=1e-12)

    def test_open_template_has_no_joint(self):
        with pytest.raises(InvalidInputError):
            _template_pair().materialize_joint()

    def test_enumeration_bound(self):
        cats = tuple(synth.CategorySpec(f"c{i}", prior=0.5)
                     for i in range(21))
        t = synth.SceneTemplate(categories=cats, slot_mode=True)
        with pytest.raises(InvalidInputError, match="enumeration bound"):
            t.materialize_joint()


class TestExactPosterior:
    def test_near_certain_detector_recovers_truth(self):
        t = synth.SceneTemplate(
            categories=(
                synth.CategorySpec("a", prior=0.5,
                                   detector=synth.DetectorSpec(mode="certain")),
                synth.CategorySpec("b", prior=0.3,
                                   detector=synth.DetectorSpec(mode="certain")),
            ),
            slot_mode=True,
        )
        ds = synth.sample_dataset(t, 20, seed=3)
        for scene in ds.scenes:
            post = synth.exact_posterior(scene)
            for v, present in enumerate(scene.slot_present):
                assert post[v] == pytest.approx(1.0 if present else 0.0,
                                                abs=1e-12)

    def test_independent_variables_factorize(self):
        # with an independent joint the posterior is the per-variable
        # Bayes update, which for calibrated confidences is the confidence
        t = synth.SceneTemplate(
            categories=(
                synth.CategorySpec("a", prior=0.4,
                                   detector=synth.DetectorSpec(mode="calibrated")),
                synth.CategorySpec("b", prior=0.15,
                                   detector=synth.DetectorSpec(mode="calibrated")),
            ),
            slot_mode=True,
        )
        ds = synth.sample_dataset(t, 25, seed=4)
        for scene in ds.scenes:
            post = synth.exact_posterior(scene)
            for v, d in enumerate(scene.detections):
                assert post[v] == pytest.approx(d.confidence, abs=1e-12)

    def test_second_summation_ordering_agrees(self):
        t = synth.builtin_template("correlated")
        ds = synth.sample_dataset(t, 30, seed=6)
        for scene in ds.scenes:
            post = synth.exact_posterior(scene)
            again = _exact_posterior_by_conditioning(scene)
            assert post == pytest.approx(again, abs=1e-9)

    def test_open_scene_rejected(self):
        ds = synth.sample_dataset(_template_pair(), 1, seed=0)
        with pytest.raises(InvalidInputError):
            synth.exact_posterior(ds.scenes[0])


def _exact_posterior_by_conditioning(scene):
    """Second oracle route: explicit loop over assignments, dict-based."""
    n = len(scene.slots)
    idx = np.arange(len(scene.joint))
    marg = [float(scene.joint[(idx >> v) & 1 == 1].sum()) for v in range(n)]
    num = [0.0] * n
    den = 0.0
    for mask in range(2 ** n):
        w = float(scene.joint[mask])
        if w == 0.0:
            continue
        for v in range(n):
            c = scene.detections[v].confidence
            if (mask >> v) & 1:
                w *= c / marg[v]
            else:
                w *= (1.0 - c) / (1.0 - marg[v])
        den += w
        for v in range(n):
            if (mask >> v) & 1:
                num[v] += w
    return [x / den for x in num]


class TestExactContextModel:
    def test_conditionals_match_joint_ratios(self):
        t = synth.builtin_template("correlated")
        ds = synth.sample_dataset(t, 1, seed=8)
        scene = ds.scenes[0]
        model = synth.ExactContextModel(scene)
        names = list(scene.slots)
        idx = np.arange(len(scene.joint))
        a_det = scene.detections[names.index("link_a")]
        t_det = scene.detections[names.index("tether")]
        a_mask = (idx >> names.index("link_a")) & 1 == 1
        t_mask = (idx >> names.index("tether")) & 1 == 1
        want = scene.joint[a_mask & t_mask].sum() / scene.joint[a_mask].sum()
        got, support = model.single(t_det, a_det, True)
        assert got == pytest.approx(float(want), abs=1e-12)
        assert support >= 1e17

    def test_template_round_trip(self, tmp_path):
        t = synth.builtin_template("benchmark")
        path = tmp_path / "t.json"
        synth.save_template(t, path)
        again = synth.load_template(path)
        assert again == t


class TestProductApproximationGap:
    def test_correlated_template_gap_reported_and_bounded(self):
        """Regression guard for the neighbor-independence approximation.

        On the correlated template the joint neighbor belief is not a
        product of singles, so one inference pass deviates from the exact
        posterior; the gap summary must stay small on the shipped template.
        """
        from ctxrescore.inference import InferenceConfig, rescore_scene

        template = synth.builtin_template("correlated")
        ds = synth.sample_dataset(template, 300, seed=11)
        config = InferenceConfig(gating_mode="off")
        errs = []
        for scene in ds.scenes:
            exact = synth.exact_posterior(scene)
            approx, _ = rescore_scene(scene.detections,
                                      synth.ExactContextModel(scene), config)
            errs.extend(abs(e - b) for e, b in zip(exact, approx))
        mean_gap = float(np.mean(errs))
        max_gap = float(np.max(errs))
        print(f"product-approximation gap: mean={mean_gap:.4f} "
              f"max={max_gap:.4f} over {len(errs)} variables")
        assert mean_gap < 0.05
        assert max_gap > 1e-4  # the template genuinely violates independence
