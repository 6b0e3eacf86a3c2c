# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled hot kernels. Signatures and results match ``vod._kernels_py``."""

import numpy as np
cimport numpy as cnp
from libc.math cimport exp, log, fabs, INFINITY

cnp.import_array()

from vod._kernels_py import check_product_inputs

NAME = "cython"
ALPHA_ONE_TOL = 1e-6


def priority_select(keys, Py_ssize_t k):
    cdef double[::1] kv = np.ascontiguousarray(keys, dtype=np.float64)
    cdef Py_ssize_t n = kv.shape[0]
    if k >= n:
        return np.arange(n, dtype=np.int64), 0.0
    # top (k+1) positions ordered by (key desc, position asc), by insertion
    cdef cnp.int64_t[::1] top = np.empty(k + 1, dtype=np.int64)
    cdef Py_ssize_t filled = 0, i, j
    cdef double key
    for i in range(n):
        key = kv[i]
        if filled == k + 1 and key <= kv[top[k]]:
            continue
        j = filled if filled < k + 1 else k
        while j > 0 and kv[top[j - 1]] < key:
            if j < k + 1:
                top[j] = top[j - 1]
            j -= 1
        top[j] = i
        if filled < k + 1:
            filled += 1
    chosen = np.sort(np.asarray(top[:k]))
    return chosen, float(kv[top[k]])


cdef inline double _kth_key(double* keys, Py_ssize_t n, Py_ssize_t k, double* buf):
    """The ``(k+1)``-th largest key, via a sorted buffer of the smaller side."""
    cdef Py_ssize_t size, filled = 0, i, j
    cdef double key
    cdef bint top = k + 1 <= n - k
    size = k + 1 if top else n - k
    for i in range(n):
        key = keys[i]
        if top:
            # descending buffer of the largest keys
            if filled == size and key <= buf[size - 1]:
                continue
            j = filled if filled < size else size - 1
            while j > 0 and buf[j - 1] < key:
                buf[j] = buf[j - 1]
                j -= 1
        else:
            # ascending buffer of the smallest keys
            if filled == size and key >= buf[size - 1]:
                continue
            j = filled if filled < size else size - 1
            while j > 0 and buf[j - 1] > key:
                buf[j] = buf[j - 1]
                j -= 1
        buf[j] = key
        if filled < size:
            filled += 1
    return buf[size - 1]


def priority_estimate_batch(probs, values, uniforms, Py_ssize_t k, bint normalized):
    cdef double[::1] p = np.ascontiguousarray(probs, dtype=np.float64)
    cdef double[::1] f = np.ascontiguousarray(values, dtype=np.float64)
    cdef double[:, ::1] u = np.ascontiguousarray(uniforms, dtype=np.float64)
    cdef Py_ssize_t n = p.shape[0], reps = u.shape[0], r, i
    cdef cnp.ndarray[cnp.float64_t, ndim=1] out = np.empty(reps, dtype=np.float64)
    cdef double exact = 0.0
    if k >= n:
        for i in range(n):
            exact += p[i] * f[i]
        out.fill(exact)
        return out
    cdef double[::1] keys = np.empty(n, dtype=np.float64)
    cdef double[::1] scratch = np.empty(n, dtype=np.float64)
    cdef double tau, raw, num, den
    for r in range(reps):
        for i in range(n):
            keys[i] = p[i] / u[r, i]
        tau = _kth_key(&keys[0], n, k, &scratch[0])
        num = 0.0
        den = 0.0
        for i in range(n):
            if keys[i] > tau:
                raw = p[i] if p[i] > tau else tau
                num += raw * f[i]
                den += raw
        out[r] = num / den if normalized else num
    return out


cdef inline double _lse_row(double[:, ::1] a, double[:, ::1] b, Py_ssize_t j, Py_ssize_t n):
    cdef double m = -INFINITY, s = 0.0, x
    cdef Py_ssize_t i
    for i in range(n):
        x = a[j, i] + b[j, i]
        if x > m:
            m = x
    if m == -INFINITY:
        return m
    for i in range(n):
        s += exp(a[j, i] + b[j, i] - m)
    return m + log(s)


# Above this logit spread, exp(g - max g) can underflow for a whole combination.
cdef double SHIFT_SPREAD = 600.0


cdef double[:, ::1] _shifted_exp(double[:, ::1] g, cnp.int64_t[::1] cnt, double* shift):
    """``exp(g - max g)`` over the valid entries, or an empty view when the spread is too wide."""
    cdef Py_ssize_t j, d
    cdef double hi = -INFINITY, lo = INFINITY
    for j in range(g.shape[0]):
        for d in range(cnt[j]):
            hi = max(hi, g[j, d])
            lo = min(lo, g[j, d])
    shift[0] = hi
    if not hi - lo < SHIFT_SPREAD:
        return np.empty((0, 0), dtype=np.float64)
    cdef double[:, ::1] out = np.zeros((g.shape[0], g.shape[1]), dtype=np.float64)
    for j in range(g.shape[0]):
        for d in range(cnt[j]):
            out[j, d] = exp(g[j, d] - hi)
    return out


cdef inline double _lse_combo(double[:, ::1] g, double[:, ::1] eg, double shift,
                              cnp.int64_t[::1] idx, Py_ssize_t m_opts):
    """Log-sum-exp of the option logits picked by ``idx``."""
    cdef Py_ssize_t j
    cdef double s = 0.0, gmax = -INFINITY
    if eg.shape[0] > 0:
        for j in range(m_opts):
            s += eg[j, idx[j]]
        return shift + log(s)
    for j in range(m_opts):
        if g[j, idx[j]] > gmax:
            gmax = g[j, idx[j]]
    for j in range(m_opts):
        s += exp(g[j, idx[j]] - gmax)
    return gmax + log(s)


def product_enumerate(log_s, log_zeta, logits, counts, Py_ssize_t star, double alpha):
    check_product_inputs(log_s, log_zeta, logits, counts, star)
    cdef double[:, ::1] ls_v = np.ascontiguousarray(log_s, dtype=np.float64)
    cdef double[:, ::1] lz_v = np.ascontiguousarray(log_zeta, dtype=np.float64)
    cdef double[:, ::1] g_v = np.ascontiguousarray(logits, dtype=np.float64)
    cdef cnp.int64_t[::1] cnt = np.ascontiguousarray(counts, dtype=np.int64)
    cdef Py_ssize_t m_opts = ls_v.shape[0], kmax = ls_v.shape[1]
    cdef Py_ssize_t total = 1, j, c
    for j in range(m_opts):
        total *= cnt[j]

    cdef double denom = 0.0
    for j in range(m_opts):
        denom += _lse_row(ls_v, lz_v, j, cnt[j])

    cdef cnp.int64_t[::1] idx = np.zeros(m_opts, dtype=np.int64)
    cdef double[::1] c_ls = np.empty(total, dtype=np.float64)
    cdef double[::1] c_lv = np.empty(total, dtype=np.float64)
    cdef double[::1] c_lseg = np.empty(total, dtype=np.float64)
    cdef cnp.ndarray[cnp.float64_t, ndim=1] weights = np.empty(total, dtype=np.float64)
    cdef double[::1] w_v = weights
    cdef double one_minus = 1.0 - alpha
    cdef bint at_one = fabs(one_minus) < ALPHA_ONE_TOL
    cdef double ls, lz, lr, lv, x, term_max = -INFINITY, wl_max = -INFINITY
    cdef double ew_max = -INFINITY
    cdef Py_ssize_t d

    cdef double shift
    cdef double[:, ::1] eg = _shifted_exp(g_v, cnt, &shift)
    for c in range(total):
        ls = 0.0
        lz = 0.0
        for j in range(m_opts):
            d = idx[j]
            ls += ls_v[j, d]
            lz += lz_v[j, d]
        c_lseg[c] = _lse_combo(g_v, eg, shift, idx, m_opts)
        lr = g_v[star, idx[star]] - c_lseg[c]
        lv = lr + lz - denom
        c_ls[c] = ls
        c_lv[c] = lv
        if at_one:
            w_v[c] = ls
        else:
            w_v[c] = ls + one_minus * (lr + lz)
            x = ls + one_minus * lv
            if x > term_max:
                term_max = x
        if w_v[c] > wl_max:
            wl_max = w_v[c]
        if ls + lv > ew_max:
            ew_max = ls + lv
        j = m_opts - 1
        while j >= 0:
            idx[j] += 1
            if idx[j] < cnt[j]:
                break
            idx[j] = 0
            j -= 1

    cdef double value = 0.0, acc = 0.0, wsum = 0.0, e1 = 0.0, e2 = 0.0, e
    for c in range(total):
        if at_one:
            value += exp(c_ls[c]) * c_lv[c]
        else:
            acc += exp(c_ls[c] + one_minus * c_lv[c] - term_max)
        w_v[c] = exp(w_v[c] - wl_max)
        wsum += w_v[c]
        e = exp(c_ls[c] + c_lv[c] - ew_max)
        e1 += e
        e2 += e * e
    if not at_one:
        value = (term_max + log(acc)) / one_minus

    cdef cnp.ndarray[cnp.float64_t, ndim=2] marginal = np.zeros((m_opts, kmax), dtype=np.float64)
    cdef cnp.ndarray[cnp.float64_t, ndim=2] reader_coef = np.zeros((m_opts, kmax), dtype=np.float64)
    cdef double[:, ::1] mg = marginal
    cdef double[:, ::1] rc = reader_coef
    for j in range(m_opts):
        idx[j] = 0
    cdef bint shifted = eg.shape[0] > 0
    cdef double scale
    for c in range(total):
        w_v[c] /= wsum
        if shifted:
            scale = w_v[c] * exp(shift - c_lseg[c])
        for j in range(m_opts):
            d = idx[j]
            mg[j, d] += w_v[c]
            if shifted:
                rc[j, d] += scale * eg[j, d]
            else:
                rc[j, d] += w_v[c] * exp(g_v[j, d] - c_lseg[c])
        j = m_opts - 1
        while j >= 0:
            idx[j] += 1
            if idx[j] < cnt[j]:
                break
            idx[j] = 0
            j -= 1
    return value, e1 * e1 / e2, weights, marginal, reader_coef


def product_values(log_s, log_zeta, logits, counts, double alpha):
    check_product_inputs(log_s, log_zeta, logits, counts)
    cdef double[:, ::1] ls_v = np.ascontiguousarray(log_s, dtype=np.float64)
    cdef double[:, ::1] lz_v = np.ascontiguousarray(log_zeta, dtype=np.float64)
    cdef double[:, ::1] g_v = np.ascontiguousarray(logits, dtype=np.float64)
    cdef cnp.int64_t[::1] cnt = np.ascontiguousarray(counts, dtype=np.int64)
    cdef Py_ssize_t m_opts = ls_v.shape[0], total = 1, j, c, d
    for j in range(m_opts):
        total *= cnt[j]
    cdef double denom = 0.0
    for j in range(m_opts):
        denom += _lse_row(ls_v, lz_v, j, cnt[j])

    cdef double one_minus = 1.0 - alpha
    cdef bint at_one = fabs(one_minus) < ALPHA_ONE_TOL
    cdef cnp.int64_t[::1] idx = np.zeros(m_opts, dtype=np.int64)
    cdef double[:, ::1] x = np.empty((m_opts, total), dtype=np.float64)
    cdef cnp.ndarray[cnp.float64_t, ndim=1] out = np.zeros(m_opts, dtype=np.float64)
    cdef double[::1] o = out
    cdef double[::1] xmax = np.full(m_opts, -INFINITY, dtype=np.float64)
    cdef double ls, lz, lse, lv, acc
    cdef double shift
    cdef double[:, ::1] eg = _shifted_exp(g_v, cnt, &shift)
    for c in range(total):
        ls = 0.0
        lz = 0.0
        for j in range(m_opts):
            d = idx[j]
            ls += ls_v[j, d]
            lz += lz_v[j, d]
        lse = _lse_combo(g_v, eg, shift, idx, m_opts)
        for j in range(m_opts):
            lv = g_v[j, idx[j]] - lse + lz - denom
            if at_one:
                o[j] += exp(ls) * lv
            else:
                x[j, c] = ls + one_minus * lv
                if x[j, c] > xmax[j]:
                    xmax[j] = x[j, c]
        j = m_opts - 1
        while j >= 0:
            idx[j] += 1
            if idx[j] < cnt[j]:
                break
            idx[j] = 0
            j -= 1
    if at_one:
        return out
    for j in range(m_opts):
        acc = 0.0
        for c in range(total):
            acc += exp(x[j, c] - xmax[j])
        o[j] = (xmax[j] + log(acc)) / one_minus
    return out
