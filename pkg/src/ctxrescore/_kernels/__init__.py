"""Kernel backend selection.

The compiled extension is preferred; the pure-Python twin is used when the
extension is unavailable or when ``CTXRESCORE_PURE`` is set in the
environment. Both expose the same functions and produce bit-identical
results.
"""

import os

from ctxrescore._kernels import _pure

if os.environ.get("CTXRESCORE_PURE"):
    _impl = _pure
else:
    try:
        from ctxrescore._kernels import _core as _impl
    except ImportError:
        _impl = _pure

BACKEND = _impl.BACKEND

GATE_OFF = _pure.GATE_OFF
GATE_DERIVATIVE = _pure.GATE_DERIVATIVE
GATE_SAMPLES = _pure.GATE_SAMPLES
GATE_BOTH = _pure.GATE_BOTH
H_CLAMP = _pure.H_CLAMP

clamp_context = _impl.clamp_context
combine = _impl.combine
posterior_derivative = _impl.posterior_derivative
invert_posterior = _impl.invert_posterior
epsilon_h = _impl.epsilon_h
required_samples = _impl.required_samples
should_gate = _impl.should_gate
select_for_query = _impl.select_for_query
run_scene = _impl.run_scene
