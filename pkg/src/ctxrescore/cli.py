"""Command-line surface tying the pipeline together.

Exit codes: 0 success, 2 usage errors (flag parsing), 3 data errors
(unreadable or inconsistent inputs), 4 tolerance failures (oracle check).
Every run writes a manifest describing inputs, configuration and
counters, so results can be reproduced from it.
"""

from __future__ import annotations

import os
import sys
import time
from concurrent.futures import ThreadPoolExecutor

import click

from ctxrescore import evaluation, io, stability, synth
from ctxrescore.core import (
    BinningConfig,
    Detection,
    InvalidInputError,
    UntrainedCategoryError,
)
from ctxrescore.inference import InferenceConfig, rescore_scene
from ctxrescore.relations import (
    ContextModel,
    PriorTable,
    fit_priors,
    fit_relations,
)

EXIT_DATA_ERROR = 3
EXIT_TOLERANCE = 4

DEFAULT_PRIOR_GRID = (0.001, 0.002, 0.005, 0.01, 0.02, 0.05)

_DATA_ERRORS = (
    io.FileFormatError,
    InvalidInputError,
    UntrainedCategoryError,
    OSError,
)


class _Run:
    """Collects manifest fields while a command executes."""

    def __init__(self, command, params):
        self.command = command
        self.params = {k: _plain(v) for k, v in params.items()}
        self.inputs = {}
        self.outputs = {}
        self.counters = {}
        self.start = time.perf_counter()

    def manifest(self, **extra):
        doc = {
            "command": self.command,
            "config": self.params,
            "inputs": self.inputs,
            "outputs": self.outputs,
            "counters": self.counters,
            "wall_clock_seconds": time.perf_counter() - self.start,
        }
        doc.update(extra)
        return doc

    def write_manifest(self, path, **extra):
        io.save_manifest(self.manifest(**extra), path)


def _plain(value):
    if isinstance(value, tuple):
        return list(value)
    if value is None or isinstance(value, (str, int, float, bool, list)):
        return value
    return str(value)


def _manifest_path(explicit, output, command):
    if explicit:
        return explicit
    if output:
        return str(output) + ".manifest.json"
    return f"ctxrescore-{command}.manifest.json"


def _fail_data(message):
    click.echo(f"error: {message}", err=True)
    sys.exit(EXIT_DATA_ERROR)


def main(argv=None):
    try:
        cli.main(args=argv, standalone_mode=False)
    except click.UsageError as exc:
        exc.show()
        sys.exit(2)
    except click.ClickException as exc:
        exc.show()
        sys.exit(exc.exit_code)
    except SystemExit:
        raise
    except _DATA_ERRORS as exc:
        _fail_data(exc)


@click.group()
def cli():
    """Contextual rescoring of object detections."""


def _inference_options(fn):
    fn = click.option("--iterations", default=1, show_default=True,
                      help="Belief propagation rounds.")(fn)
    fn = click.option("--max-neighbors", default=2, show_default=True,
                      type=click.IntRange(1, 2),
                      help="Largest context subset per variable.")(fn)
    fn = click.option("--gating", default="derivative", show_default=True,
                      type=click.Choice(["off", "derivative", "sample-count",
                                         "both"]),
                      help="Reliability gate applied to each assignment.")(fn)
    fn = click.option("--derivative-threshold", default=10.0,
                      show_default=True)(fn)
    fn = click.option("--delta", default=0.1, show_default=True,
                      help="Certainty parameter of the sample-count gate.")(fn)
    fn = click.option("--epsilon", default=0.1, show_default=True,
                      help="Allowed posterior error of the sample-count gate.")(fn)
    fn = click.option("--neighbor-search", default="exhaustive",
                      show_default=True,
                      type=click.Choice(["exhaustive", "greedy"]))(fn)
    fn = click.option("--candidate-floor", default=0.0, show_default=True,
                      help="Minimum confidence for context candidates.")(fn)
    return fn


def _config_from_options(iterations, max_neighbors, gating,
                         derivative_threshold, delta, epsilon,
                         neighbor_search, candidate_floor) -> InferenceConfig:
    return InferenceConfig(
        max_neighbors=max_neighbors, iterations=iterations,
        derivative_threshold=derivative_threshold, gating_mode=gating,
        delta=delta, epsilon=epsilon, neighbor_search=neighbor_search,
        candidate_floor=candidate_floor,
    )


def _load_binning(path, categories):
    if path is None:
        return BinningConfig.default(categories)
    data = io.load_json(path)
    factors = {cat: f for cat, f in data.get("scale_factors", [])}
    for cat in categories:
        factors.setdefault(cat, 1.0)
    return BinningConfig(
        offset_range=(tuple(data.get("offset_range", [[-4, 4], [-4, 4]])[0]),
                      tuple(data.get("offset_range", [[-4, 4], [-4, 4]])[1])),
        offset_bins=tuple(data.get("offset_bins", [16, 16])),
        scale_range=tuple(data.get("scale_range", [-2, 2])),
        scale_bins=data.get("scale_bins", 8),
        scale_factors=factors,
    )


@cli.command()
@click.option("-a", "--annotations", "annotations_path", required=True,
              type=click.Path(exists=True, dir_okay=False))
@click.option("-b", "--binning", "binning_path", default=None,
              type=click.Path(exists=True, dir_okay=False),
              help="Binning configuration document.")
@click.option("--max-neighbors", default=2, show_default=True,
              type=click.IntRange(1, 2))
@click.option("--smoothing", default=1.0, show_default=True,
              help="Additive pseudo-count per table cell.")
@click.option("--default-prior", default=0.02, show_default=True,
              help="Prior written for every category until fit-priors runs.")
@click.option("-o", "--output", required=True, type=click.Path(dir_okay=False))
@click.option("--manifest", "manifest_path", default=None)
def train(annotations_path, binning_path, max_neighbors, smoothing,
          default_prior, output, manifest_path):
    """Count relation tables over annotated scenes and write a model."""
    run = _Run("train", locals())
    annotations = io.load_annotations(annotations_path)
    binning = _load_binning(binning_path, annotations.categories)
    scenes = annotations.scenes()
    table = fit_relations(scenes, binning, max_neighbors, smoothing)
    priors = PriorTable.uniform(table.categories, default_prior)
    io.save_model(io.TrainedModel(table, priors), output)
    run.inputs["annotations"] = str(annotations_path)
    run.outputs["model"] = str(output)
    run.counters["scenes"] = len(scenes)
    run.counters["objects"] = len(annotations.objects)
    run.counters["pair_cells"] = len(table.pair_counts)
    run.counters["triple_cells"] = len(table.triple_counts)
    run.write_manifest(_manifest_path(manifest_path, output, "train"),
                       model_version=io.MODEL_SCHEMA_VERSION)
    click.echo(f"trained on {len(scenes)} scenes -> {output}")


def _rescore_detections(detections, model, config, jobs=1):
    """Rescore a mixed-image detection list, preserving input order.

    Detections whose category is unknown to the model pass through
    unchanged; the count of such records is returned alongside.
    """
    known = set(model.table.categories)
    by_image = {}
    passthrough = 0
    for pos, det in enumerate(detections):
        if det.category in known:
            by_image.setdefault(det.image_id, []).append((pos, det))
        else:
            passthrough += 1
    new_conf = [d.confidence for d in detections]
    states = {}

    def work(item):
        image_id, entries = item
        dets = [d for _, d in entries]
        conf, state = rescore_scene(
            dets, ContextModel(model.table, model.priors), config)
        return image_id, entries, conf, state

    items = list(by_image.items())
    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(work, items))
    else:
        results = [work(item) for item in items]
    for image_id, entries, conf, state in results:
        for (pos, _), c in zip(entries, conf):
            new_conf[pos] = c
        states[image_id] = (entries, state)
    rescored = [
        Detection(d.id, d.image_id, d.category, d.x, d.y, d.width, d.height, c)
        for d, c in zip(detections, new_conf)
    ]
    return rescored, states, passthrough


@cli.command()
@click.option("-m", "--model", "model_path", required=True,
              envvar="CTXRESCORE_MODEL", show_envvar=True,
              type=click.Path(exists=True, dir_okay=False))
@click.option("-d", "--detections", "detections_path", required=True,
              type=click.Path(exists=True, dir_okay=False))
@_inference_options
@click.option("--jobs", default=1, show_default=True,
              help="Images rescored in parallel; output bytes never change.")
@click.option("--diagnostics", "diagnostics_path", default=None,
              type=click.Path(dir_okay=False),
              help="Write chosen neighbors and gating flags per detection.")
@click.option("-o", "--output", required=True, type=click.Path(dir_okay=False))
@click.option("--manifest", "manifest_path", default=None)
def rescore(model_path, detections_path, iterations, max_neighbors, gating,
            derivative_threshold, delta, epsilon, neighbor_search,
            candidate_floor, jobs, diagnostics_path, output, manifest_path):
    """Replace detection confidences with context-adjusted posteriors."""
    run = _Run("rescore", locals())
    model = io.load_model(model_path)
    detections = io.load_detections(detections_path)
    config = _config_from_options(iterations, max_neighbors, gating,
                                  derivative_threshold, delta, epsilon,
                                  neighbor_search, candidate_floor)
    rescored, states, passthrough = _rescore_detections(
        detections, model, config, jobs)
    io.save_detections(rescored, output)
    if diagnostics_path:
        _write_diagnostics(states, diagnostics_path)
    run.inputs["model"] = str(model_path)
    run.inputs["detections"] = str(detections_path)
    run.outputs["detections"] = str(output)
    if diagnostics_path:
        run.outputs["diagnostics"] = str(diagnostics_path)
    run.counters["detections"] = len(detections)
    run.counters["images"] = len(states)
    run.counters["unknown_category_records"] = passthrough
    run.write_manifest(_manifest_path(manifest_path, output, "rescore"),
                       model_version=io.MODEL_SCHEMA_VERSION)
    message = f"rescored {len(detections) - passthrough} detections -> {output}"
    if passthrough:
        message += f" ({passthrough} records kept their score: unknown category)"
    click.echo(message)


def _write_diagnostics(states, path):
    doc = []
    for image_id, (entries, state) in states.items():
        dets = [d for _, d in entries]
        doc.append({
            "image_id": image_id,
            "detections": [
                {
                    "id": dets[i].id,
                    "detector_prob": state.detector_probs[i],
                    "belief": state.variables[i].belief_true,
                    "neighbors": [dets[j].id
                                  for j in state.chosen_neighbors[i]],
                    "gated": state.gated[i],
                }
                for i in range(len(dets))
            ],
        })
    io.save_manifest(doc, path)


@cli.command("fit-priors")
@click.option("-m", "--model", "model_path", required=True,
              envvar="CTXRESCORE_MODEL", show_envvar=True,
              type=click.Path(exists=True, dir_okay=False))
@click.option("-a", "--annotations", "annotations_path", required=True,
              type=click.Path(exists=True, dir_okay=False))
@click.option("-d", "--detections", "detections_path", required=True,
              type=click.Path(exists=True, dir_okay=False))
@click.option("--grid", default=",".join(str(g) for g in DEFAULT_PRIOR_GRID),
              show_default=True, help="Comma-separated candidate priors.")
@_inference_options
@click.option("--ap-mode", default="eleven-point", show_default=True,
              type=click.Choice(["eleven-point", "all-points"]))
@click.option("--iou", default=0.5, show_default=True)
@click.option("-o", "--output", required=True, type=click.Path(dir_okay=False))
@click.option("--manifest", "manifest_path", default=None)
def fit_priors_cmd(model_path, annotations_path, detections_path, grid,
                   iterations, max_neighbors, gating, derivative_threshold,
                   delta, epsilon, neighbor_search, candidate_floor, ap_mode,
                   iou, output, manifest_path):
    """Grid-search per-category priors to maximize training AP."""
    run = _Run("fit-priors", locals())
    model = io.load_model(model_path)
    annotations = io.load_annotations(annotations_path)
    detections = io.load_detections(detections_path)
    config = _config_from_options(iterations, max_neighbors, gating,
                                  derivative_threshold, delta, epsilon,
                                  neighbor_search, candidate_floor)
    try:
        grid_values = [float(v) for v in grid.split(",") if v.strip()]
    except ValueError as exc:
        raise click.UsageError(f"bad --grid value: {exc}") from exc

    def engine(dets, priors):
        trial = io.TrainedModel(model.table, priors)
        return _rescore_detections(dets, trial, config)[0]

    def metric(dets, scenes):
        gts = [obj for scene in scenes for obj in scene]
        return evaluation.evaluate(dets, gts, iou, ap_mode)[0]

    priors = fit_priors(annotations.scenes(), detections, engine,
                        grid_values, metric)
    io.save_model(io.TrainedModel(model.table, priors), output)
    run.inputs["model"] = str(model_path)
    run.inputs["annotations"] = str(annotations_path)
    run.inputs["detections"] = str(detections_path)
    run.outputs["model"] = str(output)
    run.counters["grid_values"] = len(grid_values)
    run.write_manifest(_manifest_path(manifest_path, output, "fit-priors"),
                       model_version=io.MODEL_SCHEMA_VERSION)
    for cat in sorted(priors.probs, key=repr):
        click.echo(f"prior {cat} {priors.probs[cat]:.9g}")


@cli.command("eval")
@click.option("-d", "--detections", "detections_path", required=True,
              type=click.Path(exists=True, dir_okay=False))
@click.option("-a", "--annotations", "annotations_path", required=True,
              type=click.Path(exists=True, dir_okay=False))
@click.option("--ap-mode", default="eleven-point", show_default=True,
              type=click.Choice(["eleven-point", "all-points"]))
@click.option("--iou", default=0.5, show_default=True)
@click.option("--format", "fmt", default="text", show_default=True,
              type=click.Choice(["text", "csv"]))
@click.option("-o", "--output", default=None, type=click.Path(dir_okay=False))
@click.option("--manifest", "manifest_path", default=None)
def eval_cmd(detections_path, annotations_path, ap_mode, iou, fmt, output,
             manifest_path):
    """Average precision of a detection file against annotations."""
    run = _Run("eval", locals())
    detections = io.load_detections(detections_path)
    annotations = io.load_annotations(annotations_path)
    per_category, map_value = evaluation.evaluate(
        detections, annotations.objects, iou, ap_mode)
    report = evaluation.render_report(per_category, map_value, fmt)
    if output:
        with open(output, "w", encoding="utf-8") as fh:
            fh.write(report)
        run.outputs["report"] = str(output)
    else:
        click.echo(report, nl=False)
    run.inputs["detections"] = str(detections_path)
    run.inputs["annotations"] = str(annotations_path)
    run.counters["detections"] = len(detections)
    run.counters["categories"] = len(per_category)
    run.write_manifest(_manifest_path(manifest_path, output, "eval"),
                       map_value=map_value)


@cli.command()
@click.option("--detector-prob", required=True, type=float)
@click.option("--prior", required=True, type=float)
@click.option("--samples", default=200, show_default=True)
@click.option("-o", "--output", default=None, type=click.Path(dir_okay=False))
@click.option("--manifest", "manifest_path", default=None)
def curve(detector_prob, prior, samples, output, manifest_path):
    """Posterior-vs-context curve as CSV (h, posterior, derivative)."""
    run = _Run("curve", locals())
    params = stability.CurveParams(detector_prob, prior)
    rows = stability.curve_points(params, samples)
    lines = ["h,posterior,derivative"]
    lines.extend(f"{h:.9g},{p:.9g},{d:.9g}" for h, p, d in rows)
    text = "\n".join(lines) + "\n"
    if output:
        with open(output, "w", encoding="utf-8") as fh:
            fh.write(text)
        run.outputs["curve"] = str(output)
    else:
        click.echo(text, nl=False)
    run.counters["samples"] = samples
    run.write_manifest(_manifest_path(manifest_path, output, "curve"))


@cli.command("sample-size")
@click.option("--epsilon", type=float, default=None,
              help="Allowed posterior error; needs the curve parameters.")
@click.option("--epsilon-h", "epsilon_h_value", type=float, default=None,
              help="Allowed context measurement error, given directly.")
@click.option("--delta", default=0.1, show_default=True)
@click.option("--detector-prob", type=float, default=None)
@click.option("--prior", type=float, default=None)
@click.option("--context-prob", type=float, default=None)
@click.option("--manifest", "manifest_path", default=None)
def sample_size(epsilon, epsilon_h_value, delta, detector_prob, prior,
                context_prob, manifest_path):
    """Hoeffding sample count for a relation measurement."""
    run = _Run("sample-size", locals())
    if (epsilon is None) == (epsilon_h_value is None):
        raise click.UsageError("give exactly one of --epsilon / --epsilon-h")
    if epsilon is not None:
        if None in (detector_prob, prior, context_prob):
            raise click.UsageError(
                "--epsilon needs --detector-prob, --prior and --context-prob")
        params = stability.CurveParams(detector_prob, prior)
        epsilon_h_value = stability.epsilon_h(params, context_prob, epsilon)
        click.echo(f"epsilon_h {epsilon_h_value:.9g}")
    m = stability.required_samples(epsilon_h_value, delta)
    click.echo(f"samples {m}")
    run.counters["samples"] = m
    run.write_manifest(_manifest_path(manifest_path, None, "sample-size"))


def _resolve_template(spec):
    if os.path.exists(spec):
        return synth.load_template(spec)
    return synth.builtin_template(spec)


@cli.command("synth")
@click.option("-t", "--template", "template_spec", required=True,
              help="Template path or shipped template name.")
@click.option("--scenes", "n_scenes", default=100, show_default=True)
@click.option("--seed", default=0, show_default=True)
@click.option("-o", "--outdir", required=True, type=click.Path(file_okay=False))
@click.option("--manifest", "manifest_path", default=None)
def synth_cmd(template_spec, n_scenes, seed, outdir, manifest_path):
    """Generate a synthetic dataset (detections + annotations)."""
    run = _Run("synth", locals())
    template = _resolve_template(template_spec)
    dataset = synth.sample_dataset(template, n_scenes, seed)
    os.makedirs(outdir, exist_ok=True)
    det_path = os.path.join(outdir, "detections.json")
    ann_path = os.path.join(outdir, "annotations.json")
    io.save_detections(dataset.all_detections(), det_path)
    w, h = template.image_size
    annotations = io.AnnotationSet(
        images={s.image_id: (float(w), float(h)) for s in dataset.scenes},
        category_names={c.name: str(c.name) for c in template.categories},
        objects=dataset.all_ground_truth(),
    )
    io.save_annotations(annotations, ann_path)
    synth.save_template(template, os.path.join(outdir, "template.json"))
    run.outputs["detections"] = det_path
    run.outputs["annotations"] = ann_path
    run.counters["scenes"] = n_scenes
    run.counters["detections"] = len(dataset.all_detections())
    run.counters["objects"] = len(dataset.all_ground_truth())
    run.write_manifest(
        _manifest_path(manifest_path, os.path.join(outdir, "dataset"),
                       "synth"),
        seed=seed,
    )
    click.echo(f"wrote {n_scenes} scenes to {outdir}")


@cli.command("oracle-check")
@click.option("-t", "--template", "template_spec", required=True)
@click.option("--scenes", "n_scenes", default=200, show_default=True)
@click.option("--seed", default=0, show_default=True)
@click.option("--tolerance", default=1e-6, show_default=True)
@click.option("--manifest", "manifest_path", default=None)
def oracle_check(template_spec, n_scenes, seed, tolerance, manifest_path):
    """Compare one inference pass against exact enumeration posteriors.

    Runs with gating off and exact conditionals, as the equivalence only
    holds when the context is not being second-guessed.
    """
    run = _Run("oracle-check", locals())
    template = _resolve_template(template_spec)
    if not template.slot_mode:
        _fail_data("oracle-check needs a slot-mode template")
    dataset = synth.sample_dataset(template, n_scenes, seed)
    config = InferenceConfig(gating_mode="off")
    max_err = 0.0
    total_err = 0.0
    count = 0
    for scene in dataset.scenes:
        exact = synth.exact_posterior(scene)
        source = synth.ExactContextModel(scene)
        approx, _state = rescore_scene(scene.detections, source, config)
        for e, b in zip(exact, approx):
            err = abs(e - b)
            max_err = max(max_err, err)
            total_err += err
            count += 1
    mean_err = total_err / count if count else 0.0
    click.echo(f"max_abs_error {max_err:.9g}")
    click.echo(f"mean_abs_error {mean_err:.9g}")
    run.counters["scenes"] = n_scenes
    run.counters["variables"] = count
    run.write_manifest(_manifest_path(manifest_path, None, "oracle-check"),
                       seed=seed, max_abs_error=max_err,
                       mean_abs_error=mean_err)
    if max_err > tolerance:
        click.echo(f"error exceeds tolerance {tolerance}", err=True)
        sys.exit(EXIT_TOLERANCE)


if __name__ == "__main__":
    main()
