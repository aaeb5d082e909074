# cython: boundscheck=False, wraparound=False, cdivision=True, language_level=3
"""Compiled scaled forward-backward pass over a batch of subjects."""

import numpy as np
cimport numpy as cnp
from libc.math cimport exp, log, INFINITY

cnp.import_array()


def forward_backward(const double[:, ::1] log_m, const double[:, ::1] pi,
                     const double[:, :, ::1] trans, const long long[::1] offsets):
    cdef Py_ssize_t n = offsets.shape[0] - 1
    cdef Py_ssize_t N = log_m.shape[0]
    cdef Py_ssize_t k = log_m.shape[1]
    loglik_arr = np.empty(n)
    post_arr = np.zeros((N, k))
    pair_arr = np.zeros((N, k, k))
    m_arr = np.empty((N, k))
    back_arr = np.empty((N, k))
    scale_arr = np.empty(N)
    cdef double[::1] loglik = loglik_arr
    cdef double[:, ::1] post = post_arr
    cdef double[:, :, ::1] pair = pair_arr
    cdef double[:, ::1] m = m_arr
    cdef double[:, ::1] back = back_arr
    cdef double[::1] scale = scale_arr
    cdef Py_ssize_t i, t, s, e, c, d
    cdef double shift, tot, acc, ll, inv
    cdef bint dead

    for i in range(n):
        s = offsets[i]
        e = offsets[i + 1]
        ll = 0.0
        dead = False
        for t in range(s, e):
            shift = -INFINITY
            for c in range(k):
                if log_m[t, c] > shift:
                    shift = log_m[t, c]
            if shift == -INFINITY:
                dead = True
                break
            for c in range(k):
                m[t, c] = exp(log_m[t, c] - shift)
            tot = 0.0
            if t == s:
                for c in range(k):
                    post[t, c] = m[t, c] * pi[i, c]
                    tot += post[t, c]
            else:
                for d in range(k):
                    acc = 0.0
                    for c in range(k):
                        acc += post[t - 1, c] * trans[t, c, d]
                    post[t, d] = m[t, d] * acc
                    tot += post[t, d]
            if not (tot > 0.0):
                dead = True
                break
            inv = 1.0 / tot
            for c in range(k):
                post[t, c] *= inv
            scale[t] = tot
            ll += shift + log(tot)
        if dead:
            loglik[i] = -INFINITY
            continue
        loglik[i] = ll

        for c in range(k):
            back[e - 1, c] = 1.0
        for t in range(e - 1, s, -1):
            inv = 1.0 / scale[t]
            for c in range(k):
                acc = 0.0
                for d in range(k):
                    pair[t, c, d] = post[t - 1, c] * trans[t, c, d] * m[t, d] * back[t, d] * inv
                    acc += trans[t, c, d] * m[t, d] * back[t, d]
                back[t - 1, c] = acc * inv
        for t in range(s, e):
            tot = 0.0
            for c in range(k):
                post[t, c] *= back[t, c]
                tot += post[t, c]
            inv = 1.0 / tot
            for c in range(k):
                post[t, c] *= inv
    return loglik_arr, post_arr, pair_arr
