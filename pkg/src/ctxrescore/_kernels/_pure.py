"""Pure-Python kernel implementations.

This module mirrors the compiled extension ``ctxrescore._kernels._core``
operation for operation. Arithmetic is written in the same order in both
backends so they produce bit-identical results; the parity test suite
asserts exact equality.

All functions assume validated inputs (priors strictly inside (0, 1),
array shapes consistent). Validation lives at the public API boundary.
"""

import math

BACKEND = "pure"

GATE_OFF = 0
GATE_DERIVATIVE = 1
GATE_SAMPLES = 2
GATE_BOTH = 3

H_CLAMP = 1e-9


def clamp_context(h):
    """Clamp a context probability into [1e-9, 1 - 1e-9]."""
    if h < H_CLAMP:
        return H_CLAMP
    if h > 1.0 - H_CLAMP:
        return 1.0 - H_CLAMP
    return h


def combine(a, h, p):
    """Posterior of a binary variable given detector response and context.

    ``a`` is the detector probability, ``h`` the context probability and
    ``p`` the prior. Both unnormalized masses are computed with the
    normalizer set to 1 and then divided, so the True/False outputs sum
    to one. The two algebraic identities (h == p returns a, a == p
    returns h) are taken as exact branches so they hold bitwise.
    """
    if h == p:
        return a
    if a == p:
        return clamp_context(h)
    h = clamp_context(h)
    u = a / p
    v = (1.0 - a) / (1.0 - p)
    t = u * h
    f = v * (1.0 - h)
    return t / (t + f)


def posterior_derivative(a, h, p):
    """Slope of ``combine`` with respect to the context probability."""
    h = clamp_context(h)
    u = a / p
    v = (1.0 - a) / (1.0 - p)
    d = u * h + v * (1.0 - h)
    return u * v / (d * d)


def invert_posterior(a, p, q):
    """Context probability at which ``combine`` reaches posterior ``q``."""
    u = a / p
    v = (1.0 - a) / (1.0 - p)
    return v * q / (u * (1.0 - q) + v * q)


def epsilon_h(a, p, h_star, eps):
    """Largest context measurement error keeping the posterior within eps.

    Inverts the posterior curve analytically at the two target values
    ``p* - eps`` and ``p* + eps``; a target outside (0, 1) imposes no
    constraint and its side is dropped. With both sides out of range any
    measurement is tolerable and 1.0 is returned.
    """
    h_star = clamp_context(h_star)
    p_star = combine(a, h_star, p)
    best = 1.0
    lo = p_star - eps
    if lo > 0.0:
        d = abs(h_star - invert_posterior(a, p, lo))
        if d < best:
            best = d
    hi = p_star + eps
    if hi < 1.0:
        d = abs(h_star - invert_posterior(a, p, hi))
        if d < best:
            best = d
    return best


def required_samples(eps_h_value, delta):
    """Hoeffding sample count: ceil(ln(2/delta) / (2 eps_h^2))."""
    return int(math.ceil(math.log(2.0 / delta) / (2.0 * eps_h_value * eps_h_value)))


def should_gate(a, p, h, m, mode, threshold, delta, eps):
    """Decide whether the context probability must be ignored.

    Derivative mode fires when the posterior slope at ``h`` exceeds the
    threshold; sample mode fires when the observed support ``m`` is below
    the Hoeffding requirement for the allowed error ``eps``. A detector
    response of exactly 0 or 1 makes the posterior insensitive to ``h``,
    so the sample criterion is skipped there.
    """
    if mode == GATE_OFF:
        return False
    if h == p:
        # context already equals the prior: substitution would be a no-op
        return False
    gate = False
    if mode == GATE_DERIVATIVE or mode == GATE_BOTH:
        gate = posterior_derivative(a, h, p) > threshold
    if not gate and (mode == GATE_SAMPLES or mode == GATE_BOTH):
        if 0.0 < a < 1.0:
            need = required_samples(epsilon_h(a, p, h, eps), delta)
            gate = m < need
    return gate


def select_for_query(
    qi, beliefs, priors, cand, s_true, s_false, p_tt, p_tf, p_ff,
    max_neighbors, exhaustive,
):
    """Pick the most informative neighbor subset for variable ``qi``.

    Scores every candidate subset of size <= max_neighbors by the
    belief-weighted total deviation of the conditional from the prior,
    summed over assignments to the subset and to the query. Returns
    ``(j, k, score)`` with ``k == -1`` for singleton subsets and
    ``j == -1`` when the candidate pool is empty. Ties keep the earliest
    subset in enumeration order (singletons in index order, then pairs).
    """
    n = len(beliefs)
    p = priors[qi]
    best_j = -1
    best_k = -1
    best_score = -1.0
    # singletons
    for j in range(n):
        if j == qi or not cand[j]:
            continue
        bj = beliefs[j]
        ht = s_true[qi][j]
        hf = s_false[qi][j]
        score = bj * (abs(ht - p) + abs((1.0 - ht) - (1.0 - p)))
        score += (1.0 - bj) * (abs(hf - p) + abs((1.0 - hf) - (1.0 - p)))
        if score > best_score:
            best_score = score
            best_j = j
            best_k = -1
    if max_neighbors >= 2:
        if exhaustive:
            for j in range(n):
                if j == qi or not cand[j]:
                    continue
                for k in range(j + 1, n):
                    if k == qi or not cand[k]:
                        continue
                    score = _pair_score(
                        qi, j, k, beliefs, p, s_true, s_false, p_tt, p_tf, p_ff
                    )
                    if score > best_score:
                        best_score = score
                        best_j = j
                        best_k = k
        elif best_j >= 0:
            base = best_j
            for k in range(n):
                if k == qi or k == base or not cand[k]:
                    continue
                j, kk = (base, k) if base < k else (k, base)
                score = _pair_score(
                    qi, j, kk, beliefs, p, s_true, s_false, p_tt, p_tf, p_ff
                )
                if score > best_score:
                    best_score = score
                    best_j = j
                    best_k = kk
    return best_j, best_k, best_score


def _pair_score(qi, j, k, beliefs, p, s_true, s_false, p_tt, p_tf, p_ff):
    bj = beliefs[j]
    bk = beliefs[k]
    if bj > bk:
        h_tt = p_tt[qi][j][k]
    elif bk > bj:
        h_tt = p_tt[qi][k][j]
    else:
        h_tt = p_tt[qi][j][k]
    h_tf = p_tf[qi][j][k]
    h_ft = p_tf[qi][k][j]
    h_ff = p_ff[qi][j][k]
    score = bj * bk * (abs(h_tt - p) + abs((1.0 - h_tt) - (1.0 - p)))
    score += bj * (1.0 - bk) * (abs(h_tf - p) + abs((1.0 - h_tf) - (1.0 - p)))
    score += (1.0 - bj) * bk * (abs(h_ft - p) + abs((1.0 - h_ft) - (1.0 - p)))
    score += (1.0 - bj) * (1.0 - bk) * (abs(h_ff - p) + abs((1.0 - h_ff) - (1.0 - p)))
    return score


def _gated_term(a, p, h, m, mode, threshold, delta, eps):
    """Apply the gate to one assignment's conditional. Returns (h, gated)."""
    if mode != GATE_OFF and should_gate(a, p, h, m, mode, threshold, delta, eps):
        return p, True
    return h, False


def run_scene(
    conf, priors, cand,
    s_true, s_false, m_s_true, m_s_false,
    p_tt, p_tf, p_ff, m_tt, m_tf, m_ff,
    beliefs, nbr_a, nbr_b, gated_flag,
    iterations, max_neighbors, exhaustive,
    gate_mode, threshold, delta, eps,
):
    """Run belief propagation over one scene, updating ``beliefs`` in place.

    Variables are visited in descending confidence priority |belief - 0.5|
    (ties by index) each round; every update selects the most informative
    neighbor subset, gates each of its assignments, forms the True/False
    context mixtures and renormalizes them against the detector response.
    Diagnostics for the final update of each variable are written to
    ``nbr_a``/``nbr_b`` (chosen neighbor indices, -1 when absent) and
    ``gated_flag`` (1 if any assignment was gated).
    """
    n = len(conf)
    order = list(range(n))
    for _ in range(iterations):
        prio = [-(abs(beliefs[i] - 0.5)) for i in range(n)]
        order.sort(key=lambda i: (prio[i], i))
        for qi in order:
            a = conf[qi]
            p = priors[qi]
            j, k, _score = select_for_query(
                qi, beliefs, priors, cand, s_true, s_false, p_tt, p_tf, p_ff,
                max_neighbors, exhaustive,
            )
            if j < 0:
                beliefs[qi] = a
                nbr_a[qi] = -1
                nbr_b[qi] = -1
                gated_flag[qi] = 0
                continue
            any_gate = False
            mix_t = 0.0
            mix_f = 0.0
            if k < 0:
                bj = beliefs[j]
                h, g = _gated_term(
                    a, p, s_true[qi][j], m_s_true[qi][j],
                    gate_mode, threshold, delta, eps,
                )
                any_gate = any_gate or g
                h = clamp_context(h)
                mix_t += bj * (h / p)
                mix_f += bj * ((1.0 - h) / (1.0 - p))
                h, g = _gated_term(
                    a, p, s_false[qi][j], m_s_false[qi][j],
                    gate_mode, threshold, delta, eps,
                )
                any_gate = any_gate or g
                h = clamp_context(h)
                mix_t += (1.0 - bj) * (h / p)
                mix_f += (1.0 - bj) * ((1.0 - h) / (1.0 - p))
            else:
                bj = beliefs[j]
                bk = beliefs[k]
                if bj > bk:
                    h_tt = p_tt[qi][j][k]
                    m_tt_v = m_tt[qi][j][k]
                elif bk > bj:
                    h_tt = p_tt[qi][k][j]
                    m_tt_v = m_tt[qi][k][j]
                else:
                    h_tt = p_tt[qi][j][k]
                    m_tt_v = m_tt[qi][j][k]
                terms = (
                    (bj * bk, h_tt, m_tt_v),
                    (bj * (1.0 - bk), p_tf[qi][j][k], m_tf[qi][j][k]),
                    ((1.0 - bj) * bk, p_tf[qi][k][j], m_tf[qi][k][j]),
                    ((1.0 - bj) * (1.0 - bk), p_ff[qi][j][k], m_ff[qi][j][k]),
                )
                for w, h, m in terms:
                    h, g = _gated_term(a, p, h, m, gate_mode, threshold, delta, eps)
                    any_gate = any_gate or g
                    h = clamp_context(h)
                    mix_t += w * (h / p)
                    mix_f += w * ((1.0 - h) / (1.0 - p))
            t = a * mix_t
            f = (1.0 - a) * mix_f
            beliefs[qi] = t / (t + f)
            nbr_a[qi] = j
            nbr_b[qi] = k
            gated_flag[qi] = 1 if any_gate else 0
