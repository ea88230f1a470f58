"""Reliability analysis of the detector/context combination.

The posterior of a detection as a function of its context probability is a
monotone rational curve. Where that curve is steep, small measurement
errors in the context probability translate into large posterior errors,
so the context is better ignored. This module exposes the curve, its
derivative, the inversion that turns an allowed posterior error into an
allowed context-measurement error, the Hoeffding sample bound that error
implies, and the resulting gating decision.
"""

from __future__ import annotations

from dataclasses import dataclass

from ctxrescore import _kernels
from ctxrescore.core import InvalidInputError

GATING_MODES = {
    "off": _kernels.GATE_OFF,
    "derivative": _kernels.GATE_DERIVATIVE,
    "sample-count": _kernels.GATE_SAMPLES,
    "both": _kernels.GATE_BOTH,
}


@dataclass(frozen=True)
class CurveParams:
    """Fixed detector response and prior defining one posterior curve."""

    detector_prob: float
    prior: float

    def __post_init__(self):
        if not 0.0 <= self.detector_prob <= 1.0:
            raise InvalidInputError(
                f"detector probability {self.detector_prob} outside [0, 1]"
            )
        if not 0.0 < self.prior < 1.0:
            raise InvalidInputError(f"prior {self.prior} outside (0, 1)")


def _check_prior(p):
    if not 0.0 < p < 1.0:
        raise InvalidInputError(f"prior {p} outside (0, 1)")


def _check_unit(name, v):
    if not 0.0 <= v <= 1.0:
        raise InvalidInputError(f"{name} {v} outside [0, 1]")


def posterior_at(params: CurveParams, h: float) -> float:
    """Posterior at context probability ``h`` (the shared combine rule)."""
    _check_unit("context probability", h)
    return _kernels.combine(params.detector_prob, h, params.prior)


def combine(a: float, h: float, p: float) -> float:
    """Normalized combination of detector response, context and prior.

    Returns t / (t + f) with t = a*h/p and f = (1-a)*(1-h)/(1-p); context
    values at exactly 0 or 1 are clamped to [1e-9, 1 - 1e-9] first.
    """
    _check_prior(p)
    _check_unit("detector probability", a)
    _check_unit("context probability", h)
    return _kernels.combine(a, h, p)


def posterior_derivative(params: CurveParams, h: float) -> float:
    """Analytic slope of the posterior curve at ``h``."""
    _check_unit("context probability", h)
    return _kernels.posterior_derivative(params.detector_prob, h, params.prior)


def epsilon_h(params: CurveParams, h_star: float, epsilon: float) -> float:
    """Allowed measurement error in ``h`` for a posterior error of ``epsilon``.

    Inverts the curve at posterior targets p* - epsilon and p* + epsilon
    and returns the smaller distance from ``h_star``; a target leaving
    [0, 1] drops its side. Degenerate detector responses (exactly 0 or 1)
    give a constant curve that cannot be inverted.
    """
    a = params.detector_prob
    if a <= 0.0 or a >= 1.0:
        raise InvalidInputError(
            f"curve not invertible for detector probability {a}"
        )
    _check_unit("context probability", h_star)
    if not 0.0 < epsilon < 1.0:
        raise InvalidInputError(f"epsilon {epsilon} outside (0, 1)")
    return _kernels.epsilon_h(a, params.prior, h_star, epsilon)


def required_samples(eps_h: float, delta: float) -> int:
    """Hoeffding bound on the sample count for measurement error eps_h."""
    if not eps_h > 0.0:
        raise InvalidInputError(f"eps_h must be > 0, got {eps_h}")
    if not 0.0 < delta < 1.0:
        raise InvalidInputError(f"delta {delta} outside (0, 1)")
    return _kernels.required_samples(eps_h, delta)


def should_gate(params: CurveParams, h: float, observed: int, config) -> bool:
    """True when the context at ``h`` must be replaced by the prior.

    ``config`` carries the gating mode and thresholds (see
    ``ctxrescore.inference.InferenceConfig``). The caller substitutes
    h := prior when this returns True.
    """
    _check_unit("context probability", h)
    mode = GATING_MODES[config.gating_mode]
    return _kernels.should_gate(
        params.detector_prob, params.prior, h, float(observed),
        mode, config.derivative_threshold, config.delta, config.epsilon,
    )


def curve_points(params: CurveParams, n: int):
    """(h, posterior, derivative) triples on an n-point grid over (0, 1)."""
    if n < 2:
        raise InvalidInputError("need at least two curve samples")
    lo = _kernels.H_CLAMP
    hi = 1.0 - _kernels.H_CLAMP
    step = (hi - lo) / (n - 1)
    rows = []
    for i in range(n):
        h = lo + step * i
        rows.append((h, posterior_at(params, h), posterior_derivative(params, h)))
    return rows
