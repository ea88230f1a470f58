# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled kernel implementations.

Twin of ``ctxrescore._kernels._pure``: every operation is written with the
same arithmetic order so the two backends agree bitwise. See the pure
module for the full docstrings.
"""

from libc.math cimport fabs, ceil, log

import numpy as np

BACKEND = "compiled"

GATE_OFF = 0
GATE_DERIVATIVE = 1
GATE_SAMPLES = 2
GATE_BOTH = 3

H_CLAMP = 1e-9

cdef double _H_CLAMP = 1e-9

cdef int _GATE_OFF = 0
cdef int _GATE_DERIVATIVE = 1
cdef int _GATE_SAMPLES = 2
cdef int _GATE_BOTH = 3


cdef inline double _clamp_context(double h) nogil:
    if h < _H_CLAMP:
        return _H_CLAMP
    if h > 1.0 - _H_CLAMP:
        return 1.0 - _H_CLAMP
    return h


cdef inline double _combine(double a, double h, double p) nogil:
    cdef double u, v, t, f
    if h == p:
        return a
    if a == p:
        return _clamp_context(h)
    h = _clamp_context(h)
    u = a / p
    v = (1.0 - a) / (1.0 - p)
    t = u * h
    f = v * (1.0 - h)
    return t / (t + f)


cdef inline double _posterior_derivative(double a, double h, double p) nogil:
    cdef double u, v, d
    h = _clamp_context(h)
    u = a / p
    v = (1.0 - a) / (1.0 - p)
    d = u * h + v * (1.0 - h)
    return u * v / (d * d)


cdef inline double _invert_posterior(double a, double p, double q) nogil:
    cdef double u, v
    u = a / p
    v = (1.0 - a) / (1.0 - p)
    return v * q / (u * (1.0 - q) + v * q)


cdef inline double _epsilon_h(double a, double p, double h_star, double eps) nogil:
    cdef double p_star, best, lo, hi, d
    h_star = _clamp_context(h_star)
    p_star = _combine(a, h_star, p)
    best = 1.0
    lo = p_star - eps
    if lo > 0.0:
        d = fabs(h_star - _invert_posterior(a, p, lo))
        if d < best:
            best = d
    hi = p_star + eps
    if hi < 1.0:
        d = fabs(h_star - _invert_posterior(a, p, hi))
        if d < best:
            best = d
    return best


cdef inline long _required_samples(double eps_h_value, double delta) nogil:
    return <long> ceil(log(2.0 / delta) / (2.0 * eps_h_value * eps_h_value))


cdef inline bint _should_gate(double a, double p, double h, double m,
                              int mode, double threshold, double delta,
                              double eps) nogil:
    cdef bint gate
    cdef long need
    if mode == _GATE_OFF:
        return False
    if h == p:
        # context already equals the prior: substitution would be a no-op
        return False
    gate = False
    if mode == _GATE_DERIVATIVE or mode == _GATE_BOTH:
        gate = _posterior_derivative(a, h, p) > threshold
    if (not gate) and (mode == _GATE_SAMPLES or mode == _GATE_BOTH):
        if 0.0 < a < 1.0:
            need = _required_samples(_epsilon_h(a, p, h, eps), delta)
            gate = m < need
    return gate


def clamp_context(double h):
    return _clamp_context(h)


def combine(double a, double h, double p):
    return _combine(a, h, p)


def posterior_derivative(double a, double h, double p):
    return _posterior_derivative(a, h, p)


def invert_posterior(double a, double p, double q):
    return _invert_posterior(a, p, q)


def epsilon_h(double a, double p, double h_star, double eps):
    return _epsilon_h(a, p, h_star, eps)


def required_samples(double eps_h_value, double delta):
    return int(_required_samples(eps_h_value, delta))


def should_gate(double a, double p, double h, double m, int mode,
                double threshold, double delta, double eps):
    return bool(_should_gate(a, p, h, m, mode, threshold, delta, eps))


cdef inline double _pair_score(Py_ssize_t qi, Py_ssize_t j, Py_ssize_t k,
                               double[:] beliefs, double p,
                               double[:, :] s_true, double[:, :] s_false,
                               double[:, :, :] p_tt, double[:, :, :] p_tf,
                               double[:, :, :] p_ff) nogil:
    cdef double bj, bk, h_tt, h_tf, h_ft, h_ff, score
    bj = beliefs[j]
    bk = beliefs[k]
    if bj > bk:
        h_tt = p_tt[qi, j, k]
    elif bk > bj:
        h_tt = p_tt[qi, k, j]
    else:
        h_tt = p_tt[qi, j, k]
    h_tf = p_tf[qi, j, k]
    h_ft = p_tf[qi, k, j]
    h_ff = p_ff[qi, j, k]
    score = bj * bk * (fabs(h_tt - p) + fabs((1.0 - h_tt) - (1.0 - p)))
    score += bj * (1.0 - bk) * (fabs(h_tf - p) + fabs((1.0 - h_tf) - (1.0 - p)))
    score += (1.0 - bj) * bk * (fabs(h_ft - p) + fabs((1.0 - h_ft) - (1.0 - p)))
    score += (1.0 - bj) * (1.0 - bk) * (fabs(h_ff - p) + fabs((1.0 - h_ff) - (1.0 - p)))
    return score


cdef void _select_for_query(Py_ssize_t qi, double[:] beliefs, double[:] priors,
                            signed char[:] cand,
                            double[:, :] s_true, double[:, :] s_false,
                            double[:, :, :] p_tt, double[:, :, :] p_tf,
                            double[:, :, :] p_ff,
                            int max_neighbors, bint exhaustive,
                            Py_ssize_t *out_j, Py_ssize_t *out_k,
                            double *out_score) nogil:
    cdef Py_ssize_t n = beliefs.shape[0]
    cdef double p = priors[qi]
    cdef Py_ssize_t best_j = -1
    cdef Py_ssize_t best_k = -1
    cdef double best_score = -1.0
    cdef Py_ssize_t j, k, base, jj, kk
    cdef double bj, ht, hf, score
    for j in range(n):
        if j == qi or not cand[j]:
            continue
        bj = beliefs[j]
        ht = s_true[qi, j]
        hf = s_false[qi, j]
        score = bj * (fabs(ht - p) + fabs((1.0 - ht) - (1.0 - p)))
        score += (1.0 - bj) * (fabs(hf - p) + fabs((1.0 - hf) - (1.0 - p)))
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
                    score = _pair_score(qi, j, k, beliefs, p,
                                        s_true, s_false, p_tt, p_tf, p_ff)
                    if score > best_score:
                        best_score = score
                        best_j = j
                        best_k = k
        elif best_j >= 0:
            base = best_j
            for k in range(n):
                if k == qi or k == base or not cand[k]:
                    continue
                if base < k:
                    jj = base
                    kk = k
                else:
                    jj = k
                    kk = base
                score = _pair_score(qi, jj, kk, beliefs, p,
                                    s_true, s_false, p_tt, p_tf, p_ff)
                if score > best_score:
                    best_score = score
                    best_j = jj
                    best_k = kk
    out_j[0] = best_j
    out_k[0] = best_k
    out_score[0] = best_score


def select_for_query(qi, beliefs, priors, cand, s_true, s_false,
                     p_tt, p_tf, p_ff, max_neighbors, exhaustive):
    cdef Py_ssize_t out_j = -1
    cdef Py_ssize_t out_k = -1
    cdef double out_score = -1.0
    _select_for_query(qi, beliefs, priors, cand, s_true, s_false,
                      p_tt, p_tf, p_ff, max_neighbors, bool(exhaustive),
                      &out_j, &out_k, &out_score)
    return int(out_j), int(out_k), out_score


def run_scene(double[:] conf, double[:] priors, signed char[:] cand,
              double[:, :] s_true, double[:, :] s_false,
              double[:, :] m_s_true, double[:, :] m_s_false,
              double[:, :, :] p_tt, double[:, :, :] p_tf, double[:, :, :] p_ff,
              double[:, :, :] m_tt, double[:, :, :] m_tf, double[:, :, :] m_ff,
              double[:] beliefs, long[:] nbr_a, long[:] nbr_b,
              signed char[:] gated_flag,
              int iterations, int max_neighbors, bint exhaustive,
              int gate_mode, double threshold, double delta, double eps):
    cdef Py_ssize_t n = conf.shape[0]
    cdef Py_ssize_t it, pos, scan, qi, j, k
    cdef double a, p, mix_t, mix_f, bj, bk, h, m, w, t, f, h_tt, m_tt_v, score
    cdef bint any_gate
    order_arr = np.arange(n, dtype=np.int64)
    prio_arr = np.empty(n, dtype=np.float64)
    cdef long[:] order = order_arr
    cdef double[:] prio = prio_arr
    cdef long key_i
    cdef double key_p
    for it in range(iterations):
        for pos in range(n):
            prio[pos] = -fabs(beliefs[pos] - 0.5)
            order[pos] = pos
        # insertion sort by (priority, index): stable, deterministic
        for pos in range(1, n):
            key_i = order[pos]
            key_p = prio[key_i]
            scan = pos - 1
            while scan >= 0 and (prio[order[scan]] > key_p or
                                 (prio[order[scan]] == key_p and order[scan] > key_i)):
                order[scan + 1] = order[scan]
                scan -= 1
            order[scan + 1] = key_i
        for pos in range(n):
            qi = order[pos]
            a = conf[qi]
            p = priors[qi]
            _select_for_query(qi, beliefs, priors, cand, s_true, s_false,
                              p_tt, p_tf, p_ff, max_neighbors, exhaustive,
                              &j, &k, &score)
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
                h = s_true[qi, j]
                m = m_s_true[qi, j]
                if gate_mode != _GATE_OFF and _should_gate(a, p, h, m, gate_mode,
                                                           threshold, delta, eps):
                    h = p
                    any_gate = True
                h = _clamp_context(h)
                mix_t += bj * (h / p)
                mix_f += bj * ((1.0 - h) / (1.0 - p))
                h = s_false[qi, j]
                m = m_s_false[qi, j]
                if gate_mode != _GATE_OFF and _should_gate(a, p, h, m, gate_mode,
                                                           threshold, delta, eps):
                    h = p
                    any_gate = True
                h = _clamp_context(h)
                mix_t += (1.0 - bj) * (h / p)
                mix_f += (1.0 - bj) * ((1.0 - h) / (1.0 - p))
            else:
                bj = beliefs[j]
                bk = beliefs[k]
                if bj > bk:
                    h_tt = p_tt[qi, j, k]
                    m_tt_v = m_tt[qi, j, k]
                elif bk > bj:
                    h_tt = p_tt[qi, k, j]
                    m_tt_v = m_tt[qi, k, j]
                else:
                    h_tt = p_tt[qi, j, k]
                    m_tt_v = m_tt[qi, j, k]
                # TT, TF, FT, FF in this order (matches the pure backend)
                w = bj * bk
                h = h_tt
                m = m_tt_v
                if gate_mode != _GATE_OFF and _should_gate(a, p, h, m, gate_mode,
                                                           threshold, delta, eps):
                    h = p
                    any_gate = True
                h = _clamp_context(h)
                mix_t += w * (h / p)
                mix_f += w * ((1.0 - h) / (1.0 - p))
                w = bj * (1.0 - bk)
                h = p_tf[qi, j, k]
                m = m_tf[qi, j, k]
                if gate_mode != _GATE_OFF and _should_gate(a, p, h, m, gate_mode,
                                                           threshold, delta, eps):
                    h = p
                    any_gate = True
                h = _clamp_context(h)
                mix_t += w * (h / p)
                mix_f += w * ((1.0 - h) / (1.0 - p))
                w = (1.0 - bj) * bk
                h = p_tf[qi, k, j]
                m = m_tf[qi, k, j]
                if gate_mode != _GATE_OFF and _should_gate(a, p, h, m, gate_mode,
                                                           threshold, delta, eps):
                    h = p
                    any_gate = True
                h = _clamp_context(h)
                mix_t += w * (h / p)
                mix_f += w * ((1.0 - h) / (1.0 - p))
                w = (1.0 - bj) * (1.0 - bk)
                h = p_ff[qi, j, k]
                m = m_ff[qi, j, k]
                if gate_mode != _GATE_OFF and _should_gate(a, p, h, m, gate_mode,
                                                           threshold, delta, eps):
                    h = p
                    any_gate = True
                h = _clamp_context(h)
                mix_t += w * (h / p)
                mix_f += w * ((1.0 - h) / (1.0 - p))
            t = a * mix_t
            f = (1.0 - a) * mix_f
            beliefs[qi] = t / (t + f)
            nbr_a[qi] = j
            nbr_b[qi] = k
            gated_flag[qi] = 1 if any_gate else 0
