# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled kernels: Levenshtein DP, GRU sequence forward/backward, row-wise affine.

Semantics match frametrack.kernels.pykernels exactly (same formulas, same
scan order); only the floating-point summation strategy may differ, so the
two backends agree to rounding, not bit-for-bit.
"""

import numpy as np

from libc.math cimport exp, tanh
from libc.stdlib cimport free, malloc


def levenshtein(int[::1] a, int[::1] b):
    """Edit distance between two codepoint arrays."""
    cdef Py_ssize_t la = a.shape[0], lb = b.shape[0]
    cdef Py_ssize_t i, j
    cdef int cost, ins, dele, sub
    if la == 0:
        return lb
    if lb == 0:
        return la
    cdef int* prev = <int*> malloc((lb + 1) * sizeof(int))
    cdef int* curr = <int*> malloc((lb + 1) * sizeof(int))
    if prev == NULL or curr == NULL:
        if prev != NULL:
            free(prev)
        if curr != NULL:
            free(curr)
        raise MemoryError()
    try:
        for j in range(lb + 1):
            prev[j] = <int> j
        for i in range(1, la + 1):
            curr[0] = <int> i
            for j in range(1, lb + 1):
                cost = 0 if a[i - 1] == b[j - 1] else 1
                ins = prev[j] + 1
                dele = curr[j - 1] + 1
                sub = prev[j - 1] + cost
                if dele < ins:
                    ins = dele
                if sub < ins:
                    ins = sub
                curr[j] = ins
            prev, curr = curr, prev
        return prev[lb]
    finally:
        free(prev)
        free(curr)


cdef inline double _sigmoid(double x) noexcept:
    return 1.0 / (1.0 + exp(-x))


def gru_forward(double[:, ::1] X, double[::1] h0, double[:, ::1] W,
                double[:, ::1] U, double[::1] b, bint reverse):
    """GRU scan over X (T,E). Returns (H, Z, R, C), each (T,Hd).

    z = sig(x.Wz + h.Uz + bz); r = sig(x.Wr + h.Ur + br)
    c = tanh(x.Wc + (r*h).Uc + bc); h' = (1-z)*h + z*c
    W is (E,3Hd) with gate blocks [z|r|c]; U is (Hd,3Hd); b is (3Hd,).
    H[t] is the state after consuming position t in scan order.
    """
    cdef Py_ssize_t T = X.shape[0], E = X.shape[1], Hd = h0.shape[0]
    Hn = np.empty((T, Hd), dtype=np.float64)
    Zn = np.empty((T, Hd), dtype=np.float64)
    Rn = np.empty((T, Hd), dtype=np.float64)
    Cn = np.empty((T, Hd), dtype=np.float64)
    cdef double[:, ::1] Hm = Hn, Zm = Zn, Rm = Rn, Cm = Cn
    cdef double* az = <double*> malloc(3 * Hd * sizeof(double))
    cdef double* hprev = <double*> malloc(2 * Hd * sizeof(double))
    if az == NULL or hprev == NULL:
        if az != NULL:
            free(az)
        if hprev != NULL:
            free(hprev)
        raise MemoryError()
    cdef double* ar = az + Hd
    cdef double* ac = az + 2 * Hd
    cdef double* q = hprev + Hd
    cdef Py_ssize_t t, i, j, step
    cdef double xi, hi, zz, rr, cc
    try:
        for j in range(Hd):
            hprev[j] = h0[j]
        for step in range(T):
            t = T - 1 - step if reverse else step
            for j in range(Hd):
                az[j] = b[j]
                ar[j] = b[Hd + j]
                ac[j] = b[2 * Hd + j]
            for i in range(E):
                xi = X[t, i]
                if xi != 0.0:
                    for j in range(Hd):
                        az[j] += xi * W[i, j]
                        ar[j] += xi * W[i, Hd + j]
                        ac[j] += xi * W[i, 2 * Hd + j]
            for i in range(Hd):
                hi = hprev[i]
                if hi != 0.0:
                    for j in range(Hd):
                        az[j] += hi * U[i, j]
                        ar[j] += hi * U[i, Hd + j]
            for j in range(Hd):
                zz = _sigmoid(az[j])
                rr = _sigmoid(ar[j])
                Zm[t, j] = zz
                Rm[t, j] = rr
                q[j] = rr * hprev[j]
            for i in range(Hd):
                hi = q[i]
                if hi != 0.0:
                    for j in range(Hd):
                        ac[j] += hi * U[i, 2 * Hd + j]
            for j in range(Hd):
                cc = tanh(ac[j])
                Cm[t, j] = cc
                Hm[t, j] = (1.0 - Zm[t, j]) * hprev[j] + Zm[t, j] * cc
            for j in range(Hd):
                hprev[j] = Hm[t, j]
        return Hn, Zn, Rn, Cn
    finally:
        free(az)
        free(hprev)


def gru_backward(double[:, ::1] X, double[::1] h0, double[:, ::1] W,
                 double[:, ::1] U, double[:, ::1] Z, double[:, ::1] R,
                 double[:, ::1] C, double[:, ::1] H, double[:, ::1] dH,
                 bint reverse):
    """BPTT matching gru_forward. Returns (dX, dh0, dW, dU, db)."""
    cdef Py_ssize_t T = X.shape[0], E = X.shape[1], Hd = h0.shape[0]
    dXn = np.zeros((T, E), dtype=np.float64)
    dh0n = np.zeros(Hd, dtype=np.float64)
    dWn = np.zeros((E, 3 * Hd), dtype=np.float64)
    dUn = np.zeros((Hd, 3 * Hd), dtype=np.float64)
    dbn = np.zeros(3 * Hd, dtype=np.float64)
    cdef double[:, ::1] dX = dXn, dW = dWn, dU = dUn
    cdef double[::1] dh0 = dh0n, db = dbn
    cdef double* buf = <double*> malloc(7 * Hd * sizeof(double))
    if buf == NULL:
        raise MemoryError()
    cdef double* dh = buf
    cdef double* daz = buf + Hd
    cdef double* dar = buf + 2 * Hd
    cdef double* dac = buf + 3 * Hd
    cdef double* hp = buf + 4 * Hd
    cdef double* dq = buf + 5 * Hd
    cdef double* dhp = buf + 6 * Hd
    cdef Py_ssize_t t, tp, i, j, step
    cdef double zz, rr, cc, dz, dc, g, hi
    try:
        for j in range(Hd):
            dh[j] = 0.0
        # walk scan order backwards: last-processed position first
        for step in range(T - 1, -1, -1):
            t = T - 1 - step if reverse else step
            # previous state in scan order
            if step == 0:
                for j in range(Hd):
                    hp[j] = h0[j]
            else:
                tp = T - step if reverse else step - 1
                for j in range(Hd):
                    hp[j] = H[tp, j]
            for j in range(Hd):
                dh[j] += dH[t, j]
                zz = Z[t, j]
                cc = C[t, j]
                dz = dh[j] * (cc - hp[j])
                dc = dh[j] * zz
                dac[j] = dc * (1.0 - cc * cc)
                daz[j] = dz * zz * (1.0 - zz)
                dhp[j] = dh[j] * (1.0 - zz)
            # dq = dac . Uc^T ; then dr, dhp += dq*r
            for i in range(Hd):
                g = 0.0
                for j in range(Hd):
                    g += dac[j] * U[i, 2 * Hd + j]
                dq[i] = g
            for j in range(Hd):
                rr = R[t, j]
                dar[j] = dq[j] * hp[j] * rr * (1.0 - rr)
                dhp[j] += dq[j] * rr
            # dX[t] = daz.Wz^T + dar.Wr^T + dac.Wc^T
            for i in range(E):
                g = 0.0
                for j in range(Hd):
                    g += daz[j] * W[i, j] + dar[j] * W[i, Hd + j] + dac[j] * W[i, 2 * Hd + j]
                dX[t, i] = g
            # dhp += daz.Uz^T + dar.Ur^T
            for i in range(Hd):
                g = 0.0
                for j in range(Hd):
                    g += daz[j] * U[i, j] + dar[j] * U[i, Hd + j]
                dhp[i] += g
            # parameter grads
            for i in range(E):
                hi = X[t, i]
                if hi != 0.0:
                    for j in range(Hd):
                        dW[i, j] += hi * daz[j]
                        dW[i, Hd + j] += hi * dar[j]
                        dW[i, 2 * Hd + j] += hi * dac[j]
            for i in range(Hd):
                hi = hp[i]
                if hi != 0.0:
                    for j in range(Hd):
                        dU[i, j] += hi * daz[j]
                        dU[i, Hd + j] += hi * dar[j]
                        dU[i, 2 * Hd + j] += hi * R[t, i] * dac[j]
            for j in range(Hd):
                db[j] += daz[j]
                db[Hd + j] += dar[j]
                db[2 * Hd + j] += dac[j]
            for j in range(Hd):
                dh[j] = dhp[j]
        for j in range(Hd):
            dh0[j] = dh[j]
        return dXn, dh0n, dWn, dUn, dbn
    finally:
        free(buf)
