# cython: boundscheck=False, wraparound=False, cdivision=True, language_level=3
"""Compiled Frank-Wolfe kernel for simplex-constrained quadratics.

Minimizes f(w) = w'Gw - 2 b'w + c0 over the unit simplex using away-step
Frank-Wolfe with exact line search.  The gradient image v = Gw is maintained
incrementally (O(k) per iteration) and resynchronized from scratch every
``resync`` iterations and before any convergence claim, so the returned gap
is always computed from a fresh matrix-vector product.
"""

import numpy as np

cimport numpy as cnp


def fw_quad_simplex(double[:, ::1] G, double[::1] b, double c0, double[::1] w0,
                    double tol, long max_iter, long resync=512):
    """Return (w, gap, iters, objective, floor) for the simplex quadratic."""
    cdef Py_ssize_t k = b.shape[0]
    cdef cnp.ndarray[cnp.float64_t, ndim=1] w_arr = np.array(w0, dtype=np.float64)
    cdef cnp.ndarray[cnp.float64_t, ndim=1] v_arr = np.empty(k, dtype=np.float64)
    cdef double[::1] w = w_arr
    cdef double[::1] v = v_arr

    cdef Py_ssize_t i, j, s, a
    cdef double gap = 0.0, away_gap, gw, q, bw, grad_j, grad_s, grad_a
    cdef double dgd, gamma, gamma_max, acc, scale, floor, total
    cdef long iters = 0, since_sync = 0

    # conservative resolution floor for the duality gap
    scale = 0.0
    for i in range(k):
        if G[i, i] > scale:
            scale = G[i, i]
        if b[i] > scale:
            scale = b[i]
        elif -b[i] > scale:
            scale = -b[i]
    floor = 64.0 * 2.220446049250313e-16 * (scale + 1e-300) * (<double>k + 1.0)

    # v = G w
    for i in range(k):
        acc = 0.0
        for j in range(k):
            acc += G[i, j] * w[j]
        v[i] = acc

    while True:
        # one pass: FW vertex s, away vertex a, grad.w, w'Gw, b.w
        s = 0
        a = -1
        grad_s = 1e300
        grad_a = -1e300
        gw = 0.0
        q = 0.0
        bw = 0.0
        for j in range(k):
            grad_j = 2.0 * (v[j] - b[j])
            if grad_j < grad_s:
                grad_s = grad_j
                s = j
            if w[j] > 0.0:
                if grad_j > grad_a:
                    grad_a = grad_j
                    a = j
                gw += w[j] * grad_j
                q += w[j] * v[j]
                bw += w[j] * b[j]
        gap = gw - grad_s
        away_gap = grad_a - gw

        if gap <= tol or gap <= floor:
            if since_sync == 0:
                break
            # re-derive v before accepting convergence
            for i in range(k):
                acc = 0.0
                for j in range(k):
                    acc += G[i, j] * w[j]
                v[i] = acc
            since_sync = 0
            continue
        if iters >= max_iter:
            break

        if gap >= away_gap:
            # toward vertex s
            dgd = G[s, s] - 2.0 * v[s] + q
            if dgd > 0.0:
                gamma = gap / (2.0 * dgd)
                if gamma > 1.0:
                    gamma = 1.0
            else:
                gamma = 1.0
            if gamma >= 1.0:
                for j in range(k):
                    w[j] = 0.0
                    v[j] = G[j, s]
                w[s] = 1.0
            else:
                for j in range(k):
                    w[j] = (1.0 - gamma) * w[j]
                    v[j] = (1.0 - gamma) * v[j] + gamma * G[j, s]
                w[s] += gamma
        else:
            # away from vertex a
            dgd = q - 2.0 * v[a] + G[a, a]
            if w[a] < 1.0:
                gamma_max = w[a] / (1.0 - w[a])
            else:
                gamma_max = 1e300
            if dgd > 0.0:
                gamma = away_gap / (2.0 * dgd)
                if gamma > gamma_max:
                    gamma = gamma_max
            else:
                gamma = gamma_max
            for j in range(k):
                w[j] = (1.0 + gamma) * w[j]
                v[j] = (1.0 + gamma) * v[j] - gamma * G[j, a]
            w[a] -= gamma
            if gamma == gamma_max:
                w[a] = 0.0
            elif w[a] < 0.0:
                w[a] = 0.0

        iters += 1
        since_sync += 1
        if since_sync >= resync:
            for i in range(k):
                acc = 0.0
                for j in range(k):
                    acc += G[i, j] * w[j]
                v[i] = acc
            since_sync = 0

    # renormalize and report exact certificates
    total = 0.0
    for j in range(k):
        total += w[j]
    if total > 0.0:
        for j in range(k):
            w[j] /= total
    gw = 0.0
    q = 0.0
    bw = 0.0
    grad_s = 1e300
    for i in range(k):
        acc = 0.0
        for j in range(k):
            acc += G[i, j] * w[j]
        v[i] = acc
    for j in range(k):
        grad_j = 2.0 * (v[j] - b[j])
        if grad_j < grad_s:
            grad_s = grad_j
        gw += w[j] * grad_j
        q += w[j] * v[j]
        bw += w[j] * b[j]
    gap = gw - grad_s
    if gap < 0.0:
        gap = 0.0
    return w_arr, gap, iters, q - 2.0 * bw + c0, floor
