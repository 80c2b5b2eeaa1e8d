"""Pure numpy/python fallback for the compiled kernels.

Same formulas and scan order as _ckernels; floating-point results agree with
the compiled backend to rounding (summation strategies differ), so tests
compare backends with tolerances, never bit-for-bit.
"""

import numpy as np


def levenshtein(a, b):
    """Edit distance between two codepoint arrays (or anything sliceable)."""
    la, lb = len(a), len(b)
    if la == 0:
        return lb
    if lb == 0:
        return la
    prev = list(range(lb + 1))
    for i in range(1, la + 1):
        curr = [i] + [0] * lb
        ai = a[i - 1]
        for j in range(1, lb + 1):
            cost = 0 if ai == b[j - 1] else 1
            curr[j] = min(prev[j] + 1, curr[j - 1] + 1, prev[j - 1] + cost)
        prev = curr
    return prev[lb]


def _sigmoid(x):
    return 1.0 / (1.0 + np.exp(-x))


def gru_forward(X, h0, W, U, b, reverse):
    """GRU scan over X (T,E); see _ckernels.gru_forward for the equations."""
    T = X.shape[0]
    Hd = h0.shape[0]
    H = np.empty((T, Hd))
    Z = np.empty((T, Hd))
    R = np.empty((T, Hd))
    C = np.empty((T, Hd))
    bz, br, bc = b[:Hd], b[Hd:2 * Hd], b[2 * Hd:]
    Wz, Wr, Wc = W[:, :Hd], W[:, Hd:2 * Hd], W[:, 2 * Hd:]
    Uz, Ur, Uc = U[:, :Hd], U[:, Hd:2 * Hd], U[:, 2 * Hd:]
    h = h0
    order = range(T - 1, -1, -1) if reverse else range(T)
    for t in order:
        x = X[t]
        z = _sigmoid(x @ Wz + h @ Uz + bz)
        r = _sigmoid(x @ Wr + h @ Ur + br)
        c = np.tanh(x @ Wc + (r * h) @ Uc + bc)
        h = (1.0 - z) * h + z * c
        Z[t], R[t], C[t], H[t] = z, r, c, h
    return H, Z, R, C


def gru_backward(X, h0, W, U, Z, R, C, H, dH, reverse):
    """BPTT matching gru_forward. Returns (dX, dh0, dW, dU, db)."""
    T, E = X.shape
    Hd = h0.shape[0]
    dX = np.zeros((T, E))
    dW = np.zeros((E, 3 * Hd))
    dU = np.zeros((Hd, 3 * Hd))
    db = np.zeros(3 * Hd)
    Wz, Wr, Wc = W[:, :Hd], W[:, Hd:2 * Hd], W[:, 2 * Hd:]
    Uz, Ur, Uc = U[:, :Hd], U[:, Hd:2 * Hd], U[:, 2 * Hd:]
    order = list(range(T - 1, -1, -1)) if reverse else list(range(T))
    dh = np.zeros(Hd)
    for step in range(T - 1, -1, -1):
        t = order[step]
        hp = h0 if step == 0 else H[order[step - 1]]
        z, r, c = Z[t], R[t], C[t]
        dh = dh + dH[t]
        dz = dh * (c - hp)
        dc = dh * z
        dac = dc * (1.0 - c * c)
        daz = dz * z * (1.0 - z)
        dhp = dh * (1.0 - z)
        dq = dac @ Uc.T
        dar = dq * hp * r * (1.0 - r)
        dhp = dhp + dq * r
        dX[t] = daz @ Wz.T + dar @ Wr.T + dac @ Wc.T
        dhp = dhp + daz @ Uz.T + dar @ Ur.T
        dW[:, :Hd] += np.outer(X[t], daz)
        dW[:, Hd:2 * Hd] += np.outer(X[t], dar)
        dW[:, 2 * Hd:] += np.outer(X[t], dac)
        dU[:, :Hd] += np.outer(hp, daz)
        dU[:, Hd:2 * Hd] += np.outer(hp, dar)
        dU[:, 2 * Hd:] += np.outer(r * hp, dac)
        db[:Hd] += daz
        db[Hd:2 * Hd] += dar
        db[2 * Hd:] += dac
        dh = dhp
    return dX, dh, dW, dU, db
