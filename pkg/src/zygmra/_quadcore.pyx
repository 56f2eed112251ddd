# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled triple sum for the synthetic kernel quadrature."""

from libc.math cimport cos, exp, log

import numpy as np


cdef double _sum(double[::1] g1, double[::1] g2, double[::1] g3,
                 double[::1] p1, double[::1] p2, double[::1] p3,
                 double[::1] w1, double[::1] w2, double[::1] w3,
                 double theta, double depth, double phase) nogil:
    cdef Py_ssize_t n1 = g1.shape[0], n2 = g2.shape[0], n3 = g3.shape[0]
    cdef Py_ssize_t a, b, c
    cdef double total = 0.0, row, P, Q, val, lp, wab, pab, s
    cdef double tm2 = theta - 2.0
    for a in range(n1):
        if w1[a] == 0.0:
            continue
        for b in range(n2):
            wab = w1[a] * w2[b]
            if wab == 0.0:
                continue
            P = g1[a] * g2[b]
            lp = log(P)
            pab = p1[a] + p2[b] + phase
            row = 0.0
            for c in range(n3):
                if w3[c] == 0.0:
                    continue
                Q = g3[c]
                val = exp(tm2 * (lp + log(Q)) - theta * log(P * P + Q * Q))
                if depth != 0.0:
                    s = 1.0 - 0.5 * depth * (1.0 - cos(pab + p3[c]))
                    val = val * s
                row += val * w3[c]
            total += wab * row
    return total


def synthetic_triple_sum(gaps, phases, weights, double theta, double depth, double phase):
    cdef double[::1] g1 = np.ascontiguousarray(gaps[0], dtype=np.float64)
    cdef double[::1] g2 = np.ascontiguousarray(gaps[1], dtype=np.float64)
    cdef double[::1] g3 = np.ascontiguousarray(gaps[2], dtype=np.float64)
    cdef double[::1] p1 = np.ascontiguousarray(phases[0], dtype=np.float64)
    cdef double[::1] p2 = np.ascontiguousarray(phases[1], dtype=np.float64)
    cdef double[::1] p3 = np.ascontiguousarray(phases[2], dtype=np.float64)
    cdef double[::1] w1 = np.ascontiguousarray(weights[0], dtype=np.float64)
    cdef double[::1] w2 = np.ascontiguousarray(weights[1], dtype=np.float64)
    cdef double[::1] w3 = np.ascontiguousarray(weights[2], dtype=np.float64)
    cdef double out
    with nogil:
        out = _sum(g1, g2, g3, p1, p2, p3, w1, w2, w3, theta, depth, phase)
    return out
