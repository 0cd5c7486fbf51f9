"""Pure-NumPy fallback for the compiled Frank-Wolfe kernel.

Same algorithm as ``_fw.pyx`` (away-step Frank-Wolfe, exact line search,
periodic gradient resync); used when the extension is unavailable or when
``SDIDLAB_BACKEND=python`` forces it.  Results agree with the compiled kernel
to solver tolerance; see ``benchmarks/bench_fw.py``.
"""

from __future__ import annotations

import numpy as np


def fw_quad_simplex(G, b, c0, w0, tol, max_iter, resync=512):
    """Return (w, gap, iters, objective, floor) for the simplex quadratic."""
    G = np.asarray(G, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    k = b.shape[0]
    w = np.array(w0, dtype=np.float64)

    scale = max(float(np.max(np.abs(np.diagonal(G)))) if k else 0.0,
                float(np.max(np.abs(b))) if k else 0.0)
    floor = 64.0 * np.finfo(np.float64).eps * (scale + 1e-300) * (k + 1.0)

    v = G @ w
    iters = 0
    since_sync = 0
    while True:
        grad = 2.0 * (v - b)
        s = int(np.argmin(grad))
        gw = float(w @ grad)
        gap = gw - float(grad[s])
        active = w > 0.0
        a = int(np.flatnonzero(active)[np.argmax(grad[active])])
        away_gap = float(grad[a]) - gw

        if gap <= tol or gap <= floor:
            if since_sync == 0:
                break
            v = G @ w
            since_sync = 0
            continue
        if iters >= max_iter:
            break

        q = float(w @ v)
        if gap >= away_gap:
            dgd = float(G[s, s] - 2.0 * v[s] + q)
            gamma = min(gap / (2.0 * dgd), 1.0) if dgd > 0.0 else 1.0
            if gamma >= 1.0:
                w = np.zeros(k)
                w[s] = 1.0
                v = G[:, s].copy()
            else:
                w *= 1.0 - gamma
                w[s] += gamma
                v = (1.0 - gamma) * v + gamma * G[:, s]
        else:
            dgd = float(q - 2.0 * v[a] + G[a, a])
            gamma_max = w[a] / (1.0 - w[a]) if w[a] < 1.0 else np.inf
            gamma = min(away_gap / (2.0 * dgd), gamma_max) if dgd > 0.0 else gamma_max
            w *= 1.0 + gamma
            w[a] -= gamma
            v = (1.0 + gamma) * v - gamma * G[:, a]
            if gamma == gamma_max or w[a] < 0.0:
                w[a] = 0.0

        iters += 1
        since_sync += 1
        if since_sync >= resync:
            v = G @ w
            since_sync = 0

    total = float(w.sum())
    if total > 0.0:
        w /= total
    v = G @ w
    grad = 2.0 * (v - b)
    gap = max(float(w @ grad) - float(np.min(grad)), 0.0)
    f = float(w @ v) - 2.0 * float(w @ b) + c0
    return w, gap, iters, f, floor
