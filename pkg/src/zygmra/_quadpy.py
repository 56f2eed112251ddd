"""Pure numpy version of the synthetic kernel triple sum."""

import numpy as np


def synthetic_triple_sum(gaps, phases, weights, theta, depth, phase):
    g1, g2, g3 = (np.asarray(g, dtype=float) for g in gaps)
    p1, p2, p3 = (np.asarray(p, dtype=float) for p in phases)
    w1, w2, w3 = (np.asarray(w, dtype=float) for w in weights)
    live2 = w2 != 0
    live3 = w3 != 0
    g2, p2, w2 = g2[live2], p2[live2], w2[live2]
    g3, p3, w3 = g3[live3], p3[live3], w3[live3]
    lg3 = np.log(g3)[None, :]
    total = 0.0
    for a in np.nonzero(w1)[0]:
        P = (g1[a] * g2)[:, None]
        with np.errstate(divide="ignore"):
            val = np.exp((theta - 2.0) * (np.log(P) + lg3) - theta * np.log(P * P + (g3 * g3)[None, :]))
        if depth:
            val = val * (1.0 - 0.5 * depth * (1.0 - np.cos(p1[a] + p2[:, None] + p3[None, :] + phase)))
        total += w1[a] * float(w2 @ val @ w3)
    return total
