"""Twin-build kernels for the hot inner loops.

Each kernel is written once in numpy style, compiled with numba ``@njit``
when numba is importable, and dispatched per the POLARLENS_BACKEND flag
(see :mod:`polarlens.backend`).  ``force='numpy'`` / ``force='numba'`` on
the dispatchers lets tests and benchmarks pin one build; fastmath stays
off everywhere so the two builds agree to floating-point round-off.

Gate layout is a single (*, 4H) block in the order forget, input, output,
candidate.
"""

import numpy as np

from . import backend

try:
    import numba

    _HAVE_NUMBA = True
except ImportError:  # pragma: no cover - exercised via POLARLENS_BACKEND=numpy
    numba = None
    _HAVE_NUMBA = False


def _lstm_forward_src(X, Wx, Wh, b):
    """Run the LSTM recurrence over X (T, B, D) with h0 = c0 = 0.

    Returns hidden states plus every per-gate activation needed by the
    backward pass: Hout, C, F, I, O, G, tanh(C), each (T, B, H).
    """
    T, B, D = X.shape
    H = Wh.shape[0]
    one = np.ones(1, X.dtype)[0]  # dtype-typed constants keep float32 runs float32
    zero = np.zeros(1, X.dtype)[0]
    Xin = np.dot(X.reshape(T * B, D), Wx).reshape(T, B, 4 * H)
    F = np.empty((T, B, H), X.dtype)
    I = np.empty((T, B, H), X.dtype)
    O = np.empty((T, B, H), X.dtype)
    G = np.empty((T, B, H), X.dtype)
    C = np.empty((T, B, H), X.dtype)
    TC = np.empty((T, B, H), X.dtype)
    Hout = np.empty((T, B, H), X.dtype)
    hprev = np.zeros((B, H), X.dtype)
    cprev = np.zeros((B, H), X.dtype)
    for t in range(T):
        gates = Xin[t] + np.dot(hprev, Wh) + b
        pf = gates[:, 0:H]
        pi = gates[:, H : 2 * H]
        po = gates[:, 2 * H : 3 * H]
        pg = gates[:, 3 * H : 4 * H]
        f = np.exp(np.minimum(pf, zero)) / (one + np.exp(-np.abs(pf)))
        i = np.exp(np.minimum(pi, zero)) / (one + np.exp(-np.abs(pi)))
        o = np.exp(np.minimum(po, zero)) / (one + np.exp(-np.abs(po)))
        g = np.tanh(pg)
        c = f * cprev + i * g
        tc = np.tanh(c)
        h = o * tc
        F[t] = f
        I[t] = i
        O[t] = o
        G[t] = g
        C[t] = c
        TC[t] = tc
        Hout[t] = h
        hprev = h
        cprev = c
    return Hout, C, F, I, O, G, TC


def _lstm_backward_src(dH, F, I, O, G, C, TC, WhT):
    """Reverse pass: upstream dH (T, B, H) on every h_t -> dgates (T, B, 4H).

    Weight/bias gradients reduce from dgates outside (three large matrix
    products); only the sequential part lives here.
    """
    T, B, H = dH.shape
    one = np.ones(1, dH.dtype)[0]
    dgates = np.empty((T, B, 4 * H), dH.dtype)
    dh_next = np.zeros((B, H), dH.dtype)
    dc_next = np.zeros((B, H), dH.dtype)
    czero = np.zeros((B, H), dH.dtype)
    for t in range(T - 1, -1, -1):
        dh = dH[t] + dh_next
        do = dh * TC[t]
        dc = dh * O[t] * (one - TC[t] * TC[t]) + dc_next
        cprev = C[t - 1] if t > 0 else czero
        df = dc * cprev
        di = dc * G[t]
        dg = dc * I[t]
        dc_next = dc * F[t]
        dgates[t, :, 0:H] = df * F[t] * (one - F[t])
        dgates[t, :, H : 2 * H] = di * I[t] * (one - I[t])
        dgates[t, :, 2 * H : 3 * H] = do * O[t] * (one - O[t])
        dgates[t, :, 3 * H : 4 * H] = dg * (one - G[t] * G[t])
        dh_next = np.dot(dgates[t], WhT)
    return dgates


def _smo_src(K, y, C, tol, max_passes, max_sweeps, jdraws, obj_buf):
    """Platt-style SMO sweep over a cached kernel matrix.

    jdraws supplies the seeded random offsets for second-index selection
    (consumed sequentially, wrapping around); when the random partner
    makes no progress the remaining partners are probed in cyclic order.
    Pairs with a flat subproblem (eta <= 0) move to the better constraint
    endpoint.  When obj_buf is non-empty the dual objective is recorded
    after each successful pair step.

    Returns (alpha, bias, sweeps, converged, n_obj_recorded).
    """
    n = K.shape[0]
    alpha = np.zeros(n)
    b = 0.0
    passes = 0
    sweeps = 0
    draw_pos = 0
    n_obj = 0
    while passes < max_passes and sweeps < max_sweeps:
        changed = 0
        for i in range(n):
            ay = alpha * y
            Ei = np.dot(ay, K[i, :]) + b - y[i]
            ri = y[i] * Ei
            if not ((ri < -tol and alpha[i] < C) or (ri > tol and alpha[i] > 0.0)):
                continue
            jstart = jdraws[draw_pos % jdraws.shape[0]]
            draw_pos += 1
            for probe in range(n - 1):
                j = (i + 1 + (jstart + probe) % (n - 1)) % n
                Ej = np.dot(ay, K[j, :]) + b - y[j]
                ai_old = alpha[i]
                aj_old = alpha[j]
                s = y[i] * y[j]
                if s < 0.0:
                    L = max(0.0, aj_old - ai_old)
                    Hb = min(C, C + aj_old - ai_old)
                else:
                    L = max(0.0, ai_old + aj_old - C)
                    Hb = min(C, ai_old + aj_old)
                if L >= Hb:
                    continue
                eta = K[i, i] + K[j, j] - 2.0 * K[i, j]
                if eta > 0.0:
                    aj_new = aj_old + y[j] * (Ei - Ej) / eta
                    if aj_new < L:
                        aj_new = L
                    elif aj_new > Hb:
                        aj_new = Hb
                else:
                    # flat pair direction: evaluate the dual at both endpoints
                    vi = np.dot(ay, K[i, :]) - ai_old * y[i] * K[i, i] - aj_old * y[j] * K[i, j]
                    vj = np.dot(ay, K[j, :]) - ai_old * y[i] * K[i, j] - aj_old * y[j] * K[j, j]
                    aiL = ai_old + s * (aj_old - L)
                    aiH = ai_old + s * (aj_old - Hb)
                    wL = (
                        aiL + L
                        - 0.5 * (aiL * aiL * K[i, i] + L * L * K[j, j])
                        - s * aiL * L * K[i, j]
                        - y[i] * aiL * vi - y[j] * L * vj
                    )
                    wH = (
                        aiH + Hb
                        - 0.5 * (aiH * aiH * K[i, i] + Hb * Hb * K[j, j])
                        - s * aiH * Hb * K[i, j]
                        - y[i] * aiH * vi - y[j] * Hb * vj
                    )
                    if wL > wH + 1e-12:
                        aj_new = L
                    elif wH > wL + 1e-12:
                        aj_new = Hb
                    else:
                        continue
                if abs(aj_new - aj_old) < 1e-12 * (aj_new + aj_old + 1e-12):
                    continue
                ai_new = ai_old + s * (aj_old - aj_new)
                b1 = b - Ei - y[i] * (ai_new - ai_old) * K[i, i] - y[j] * (aj_new - aj_old) * K[i, j]
                b2 = b - Ej - y[i] * (ai_new - ai_old) * K[i, j] - y[j] * (aj_new - aj_old) * K[j, j]
                if 0.0 < ai_new < C:
                    b = b1
                elif 0.0 < aj_new < C:
                    b = b2
                else:
                    b = 0.5 * (b1 + b2)
                alpha[i] = ai_new
                alpha[j] = aj_new
                changed += 1
                if obj_buf.shape[0] > 0 and n_obj < obj_buf.shape[0]:
                    ay2 = alpha * y
                    obj_buf[n_obj] = alpha.sum() - 0.5 * np.dot(ay2, np.dot(K, ay2))
                    n_obj += 1
                break
        sweeps += 1
        if changed == 0:
            passes += 1
        else:
            passes = 0
    converged = 1 if passes >= max_passes else 0
    return alpha, b, sweeps, converged, n_obj


def _lloyd_numba_src(points, init_centroids, max_iter):
    """Lloyd iterations with explicit distance loops (numba build)."""
    n, d = points.shape
    k = init_centroids.shape[0]
    cent = init_centroids.copy()
    labels = np.empty(n, np.int64)
    labels[:] = -1
    mind = np.zeros(n)
    it = 0
    while it < max_iter:
        it += 1
        newl = np.empty(n, np.int64)
        for p in range(n):
            best = 0
            bd = np.inf
            for c in range(k):
                s = 0.0
                for j in range(d):
                    diff = points[p, j] - cent[c, j]
                    s += diff * diff
                if s < bd:
                    bd = s
                    best = c
            newl[p] = best
            mind[p] = bd
        same = True
        for p in range(n):
            if newl[p] != labels[p]:
                same = False
                break
        labels = newl
        if same:
            break
        counts = np.zeros(k, np.int64)
        sums = np.zeros((k, d))
        for p in range(n):
            c = labels[p]
            counts[c] += 1
            for j in range(d):
                sums[c, j] += points[p, j]
        for c in range(k):
            if counts[c] == 0:
                far = 0
                fd = -1.0
                for p in range(n):
                    if mind[p] > fd:
                        fd = mind[p]
                        far = p
                for j in range(d):
                    cent[c, j] = points[far, j]
                mind[far] = -1.0
            else:
                for j in range(d):
                    cent[c, j] = sums[c, j] / counts[c]
    inertia = 0.0
    for p in range(n):
        c = labels[p]
        s = 0.0
        for j in range(d):
            diff = points[p, j] - cent[c, j]
            s += diff * diff
        inertia += s
    return labels, cent, inertia, it


def _lloyd_numpy(points, init_centroids, max_iter):
    """Lloyd iterations on BLAS-backed pairwise distances (numpy build)."""
    n = points.shape[0]
    k = init_centroids.shape[0]
    cent = init_centroids.copy()
    p2 = (points * points).sum(axis=1)
    labels = np.full(n, -1, dtype=np.int64)
    it = 0
    while it < max_iter:
        it += 1
        c2 = (cent * cent).sum(axis=1)
        d2 = p2[:, None] + c2[None, :] - 2.0 * (points @ cent.T)
        newl = np.argmin(d2, axis=1)
        mind = d2[np.arange(n), newl]
        same = bool(np.array_equal(newl, labels))
        labels = newl
        if same:
            break
        counts = np.bincount(labels, minlength=k)
        sums = np.zeros((k, points.shape[1]))
        np.add.at(sums, labels, points)
        mind = mind.copy()
        for c in range(k):
            if counts[c] == 0:
                far = int(np.argmax(mind))
                cent[c] = points[far]
                mind[far] = -1.0
            else:
                cent[c] = sums[c] / counts[c]
    diffs = points - cent[labels]
    inertia = float((diffs * diffs).sum())
    return labels, cent, inertia, it


if _HAVE_NUMBA:
    _lstm_forward_jit = numba.njit(cache=True)(_lstm_forward_src)
    _lstm_backward_jit = numba.njit(cache=True)(_lstm_backward_src)
    _smo_jit = numba.njit(cache=True)(_smo_src)
    _lloyd_jit = numba.njit(cache=True)(_lloyd_numba_src)
else:  # pragma: no cover
    _lstm_forward_jit = None
    _lstm_backward_jit = None
    _smo_jit = None
    _lloyd_jit = None


def _pick(jit_fn, np_fn, force):
    if force == "numba" or (force is None and backend.USE_NUMBA):
        if jit_fn is None:
            raise RuntimeError("numba backend requested but numba is not importable")
        return jit_fn
    if force not in (None, "numpy"):
        raise ValueError(f"force must be None|'numba'|'numpy', got {force!r}")
    return np_fn


def lstm_forward(X, Wx, Wh, b, force=None):
    return _pick(_lstm_forward_jit, _lstm_forward_src, force)(X, Wx, Wh, b)


def lstm_backward(dH, F, I, O, G, C, TC, WhT, force=None):
    return _pick(_lstm_backward_jit, _lstm_backward_src, force)(dH, F, I, O, G, C, TC, WhT)


def smo_sweeps(K, y, C, tol, max_passes, max_sweeps, jdraws, obj_buf=None, force=None):
    if obj_buf is None:
        obj_buf = np.empty(0, dtype=np.float64)
    return _pick(_smo_jit, _smo_src, force)(
        K, y, float(C), float(tol), int(max_passes), int(max_sweeps), jdraws, obj_buf
    )


def lloyd(points, init_centroids, max_iter, force=None):
    return _pick(_lloyd_jit, _lloyd_numpy, force)(points, init_centroids, int(max_iter))
