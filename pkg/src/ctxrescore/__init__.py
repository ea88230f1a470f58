"""Contextual rescoring of object detections with a few relevant neighbors.

Detections gain or lose confidence according to the spatial context the
other detections in their image provide: scale-invariant relation tables
are learned by counting over annotated scenes, a per-variable most
informative neighbor subset drives a belief propagation update, and a
reliability gate falls back to the prior wherever the posterior would be
hypersensitive to context measurement error.
"""

from ctxrescore._kernels import BACKEND as KERNEL_BACKEND
from ctxrescore.core import (
    BinningConfig,
    Detection,
    GroundTruthObject,
    LocationVariable,
    RelativeFeature,
    bin_feature,
    featurize,
    relative_location,
    relative_scale,
)
from ctxrescore.inference import (
    InferenceConfig,
    SceneState,
    combine,
    context_mixture,
    rescore_scene,
    select_neighbors,
)
from ctxrescore.relations import (
    ContextModel,
    PriorTable,
    RelationTable,
    context_conditional,
    fit_priors,
    fit_relations,
    observed_samples,
)
from ctxrescore.stability import (
    CurveParams,
    epsilon_h,
    posterior_at,
    posterior_derivative,
    required_samples,
    should_gate,
)

__version__ = "0.1.0"

__all__ = [
    "KERNEL_BACKEND",
    "BinningConfig",
    "Detection",
    "GroundTruthObject",
    "LocationVariable",
    "RelativeFeature",
    "bin_feature",
    "featurize",
    "relative_location",
    "relative_scale",
    "InferenceConfig",
    "SceneState",
    "combine",
    "context_mixture",
    "rescore_scene",
    "select_neighbors",
    "ContextModel",
    "PriorTable",
    "RelationTable",
    "context_conditional",
    "fit_priors",
    "fit_relations",
    "observed_samples",
    "CurveParams",
    "epsilon_h",
    "posterior_at",
    "posterior_derivative",
    "required_samples",
    "should_gate",
    "__version__",
]
