"""Numba twins of the kernels in :mod:`adev._kernels_numpy`.

Same signatures, same semantics, explicit loops with ``prange`` over the
sample axis.  Importing this module requires numba; :mod:`adev.backend`
falls back to the numpy kernels when the import fails.
"""

from __future__ import annotations

import math

import numpy as np
from numba import njit, prange

from ._kernels_numpy import DEGENERACY_TOL, TAYLOR_COEFF


@njit(cache=True, parallel=True)
def build_step_matrices(incs, gens):
    B, T, d = incs.shape
    m = gens.shape[1]
    A = np.zeros((B, T, m, m), dtype=np.complex128)
    for b in prange(B):
        for t in range(T):
            for j in range(d):
                v = incs[b, t, j]
                if v != 0.0:
                    for p in range(m):
                        for q in range(m):
                            A[b, t, p, q] += v * gens[j, p, q]
    return A


@njit(cache=True, parallel=True)
def expm_eig(A):
    B, T, m, _ = A.shape
    U = np.empty((B, T, m, m), dtype=np.complex128)
    V = np.empty((B, T, m, m), dtype=np.complex128)
    lam = np.empty((B, T, m), dtype=np.float64)
    for b in prange(B):
        for t in range(T):
            H = -1j * A[b, t]
            w, vecs = np.linalg.eigh(H)
            lam[b, t] = w
            V[b, t] = vecs
            phase = np.exp(1j * w)
            scaled = vecs * phase  # column k scaled by e^{i w_k}
            U[b, t] = scaled @ vecs.conj().T
    return U, V, lam


@njit(cache=True)
def _scale_exponent_single(A2bt):
    # Spectral-radius bound min(F-norm, sqrt(||A^2||_F)) with the F-norm
    # read off -Re tr(A^2), then the same multiply-by-3 halving loop as
    # the numpy twin.
    m = A2bt.shape[0]
    tr = 0.0
    g2 = 0.0
    for p in range(m):
        tr += A2bt[p, p].real
        for q in range(m):
            a2 = A2bt[p, q]
            g2 += a2.real * a2.real + a2.imag * a2.imag
    bound = min(np.sqrt(max(-tr, 0.0)), np.sqrt(np.sqrt(g2)))
    b = bound * 3.0
    s = 0
    while b > 1.0 and s < 60:
        b *= 0.5
        s += 1
    return s


@njit(cache=True)
def _taylor_single(Abt, Xbt, X2bt, X4bt, H1bt, H2bt, Sbt, X3bt):
    """One matrix: scale decision plus the degree-12 polynomial.

    Writes the scaled powers and Horner blocks into the provided views
    (``X3bt`` is scratch — the adjoint never needs the cube's value) and
    returns the squaring count.
    """
    c = TAYLOR_COEFF
    m = Abt.shape[0]
    np.dot(Abt, Abt, X2bt)  # X2 holds A^2 until the scale is applied
    si = _scale_exponent_single(X2bt)
    sc = math.ldexp(1.0, -si)
    sc2 = sc * sc
    for p in range(m):
        for q in range(m):
            Xbt[p, q] = Abt[p, q] * sc
            X2bt[p, q] = X2bt[p, q] * sc2
    np.dot(X2bt, Xbt, X3bt)
    np.dot(X2bt, X2bt, X4bt)
    for p in range(m):
        for q in range(m):
            x = Xbt[p, q]
            x2 = X2bt[p, q]
            x3 = X3bt[p, q]
            Sbt[p, q] = c[1] * x + c[2] * x2 + c[3] * x3
            H1bt[p, q] = c[5] * x + c[6] * x2 + c[7] * x3
            H2bt[p, q] = c[9] * x + c[10] * x2 + c[11] * x3 + c[12] * X4bt[p, q]
        Sbt[p, p] += c[0]
        H1bt[p, p] += c[4]
        H2bt[p, p] += c[8]
    np.dot(X4bt, H2bt, X3bt)
    H1bt += X3bt
    np.dot(X4bt, H1bt, X3bt)
    Sbt += X3bt
    return si


@njit(cache=True, parallel=True)
def expm_taylor(A):
    B, T, m, _ = A.shape
    U = np.empty((B, T, m, m), dtype=np.complex128)
    for b in prange(B):
        w = np.empty((7, m, m), dtype=np.complex128)  # per-thread working set
        for t in range(T):
            si = _taylor_single(A[b, t], w[0], w[1], w[2], w[3], w[4], w[5], w[6])
            cur = w[5]
            for _k in range(si):
                cur = np.dot(cur, cur)
            U[b, t] = cur
    return U


@njit(cache=True, parallel=True)
def expm_taylor_cached(A):
    B, T, m, _ = A.shape
    X = np.empty((B, T, m, m), dtype=np.complex128)
    X2 = np.empty((B, T, m, m), dtype=np.complex128)
    X4 = np.empty((B, T, m, m), dtype=np.complex128)
    H1 = np.empty((B, T, m, m), dtype=np.complex128)
    H2 = np.empty((B, T, m, m), dtype=np.complex128)
    S = np.empty((B, T, m, m), dtype=np.complex128)
    U = np.empty((B, T, m, m), dtype=np.complex128)
    s = np.empty((B, T), dtype=np.int64)
    for b in prange(B):
        scratch = np.empty((m, m), dtype=np.complex128)
        for t in range(T):
            si = _taylor_single(
                A[b, t], X[b, t], X2[b, t], X4[b, t],
                H1[b, t], H2[b, t], S[b, t], scratch,
            )
            s[b, t] = si
            cur = S[b, t]
            for _k in range(si):
                cur = np.dot(cur, cur)
            U[b, t] = cur
    return U, X, X2, X4, H1, H2, S, s


@njit(cache=True)
def _ct_into(src, dst):
    m = src.shape[0]
    for p in range(m):
        for q in range(m):
            dst[p, q] = src[q, p].conjugate()


@njit(cache=True, parallel=True)
def expm_taylor_pullback(X, X2, X4, H1, H2, S, s, W):
    c = TAYLOR_COEFF
    B, T, m, _ = X.shape
    Z = np.empty((B, T, m, m), dtype=np.complex128)
    for b in prange(B):
        # per-thread working set: everything below is written with the
        # three-argument np.dot, so the inner loop never allocates
        w = np.empty((12, m, m), dtype=np.complex128)
        dM, dY, dH1, dH2 = w[0], w[1], w[2], w[3]
        dX, dX2, dX3 = w[4], w[5], w[6]
        CT, YH, XH, T1, T2 = w[7], w[8], w[9], w[10], w[11]
        for t in range(T):
            si = s[b, t]
            dM[:, :] = W[b, t]
            if si > 0:
                # rebuild the squaring ladder from S, then descend
                lvls = np.empty((si, m, m), dtype=np.complex128)
                lvls[0] = S[b, t]
                for k in range(1, si):
                    np.dot(lvls[k - 1], lvls[k - 1], lvls[k])
                for k in range(si - 1, -1, -1):
                    _ct_into(lvls[k], CT)
                    np.dot(CT, dM, T1)
                    np.dot(dM, CT, T2)
                    for p in range(m):
                        for q in range(m):
                            dM[p, q] = T1[p, q] + T2[p, q]
            _ct_into(H1[b, t], CT)
            np.dot(dM, CT, dY)
            _ct_into(X4[b, t], YH)
            np.dot(YH, dM, dH1)
            _ct_into(H2[b, t], CT)
            np.dot(dH1, CT, T1)
            dY += T1
            np.dot(YH, dH1, dH2)
            for p in range(m):
                for q in range(m):
                    a = dM[p, q]
                    h1 = dH1[p, q]
                    h2 = dH2[p, q]
                    dY[p, q] += c[12] * h2
                    dX[p, q] = c[1] * a + c[5] * h1 + c[9] * h2
                    dX2[p, q] = c[2] * a + c[6] * h1 + c[10] * h2
                    dX3[p, q] = c[3] * a + c[7] * h1 + c[11] * h2
            _ct_into(X2[b, t], CT)
            np.dot(dY, CT, T1)
            np.dot(CT, dY, T2)
            dX2 += T1
            dX2 += T2
            np.dot(CT, dX3, T1)
            dX += T1
            _ct_into(X[b, t], XH)
            np.dot(dX3, XH, T1)
            dX2 += T1
            np.dot(dX2, XH, T1)
            np.dot(XH, dX2, T2)
            sc = math.ldexp(1.0, -si)
            for p in range(m):
                for q in range(m):
                    Z[b, t, p, q] = (dX[p, q] + T1[p, q] + T2[p, q]) * sc
    return Z


@njit(cache=True, parallel=True)
def chain_product(U):
    B, T, m, _ = U.shape
    P = np.empty((B, m, m), dtype=np.complex128)
    for b in prange(B):
        acc = np.eye(m, dtype=np.complex128)
        for t in range(T):
            acc = acc @ U[b, t]
        P[b] = acc
    return P


@njit(cache=True, parallel=True)
def cumulative_products(U):
    B, T, m, _ = U.shape
    prefix = np.empty((B, T + 1, m, m), dtype=np.complex128)
    suffix = np.empty((B, T + 1, m, m), dtype=np.complex128)
    for b in prange(B):
        prefix[b, 0] = np.eye(m, dtype=np.complex128)
        for t in range(T):
            prefix[b, t + 1] = prefix[b, t] @ U[b, t]
        suffix[b, T] = np.eye(m, dtype=np.complex128)
        for t in range(T - 1, -1, -1):
            suffix[b, t] = U[b, t] @ suffix[b, t + 1]
    return prefix, suffix


@njit(cache=True)
def _dd_table(lam, phase):
    m = lam.shape[0]
    F = np.empty((m, m), dtype=np.complex128)
    for j in range(m):
        for k in range(m):
            dl = lam[j] - lam[k]
            if abs(dl) < DEGENERACY_TOL:
                F[j, k] = phase[j]
            else:
                F[j, k] = (phase[j] - phase[k]) / (1j * dl)
    return F


@njit(cache=True, parallel=True)
def dev_backward(incs, gens, V, lam, prefix, suffix, cot, want_inc_grad):
    B, T, d = incs.shape
    m = gens.shape[1]
    partial = np.zeros((B, d, m, m), dtype=np.complex128)
    inc_grad = np.zeros((B, T, d), dtype=np.float64)
    for b in prange(B):
        for t in range(T):
            W = prefix[b, t].conj().T @ cot[b] @ suffix[b, t + 1].conj().T
            Vt = V[b, t]
            inner = Vt.conj().T @ W @ Vt
            phase = np.exp(1j * lam[b, t])
            F = _dd_table(lam[b, t], phase)
            Z = Vt @ (F.conj() * inner) @ Vt.conj().T
            for j in range(d):
                v = incs[b, t, j]
                if v != 0.0:
                    for p in range(m):
                        for q in range(m):
                            partial[b, j, p, q] += v * Z[p, q]
                if want_inc_grad:
                    acc = 0.0
                    for p in range(m):
                        for q in range(m):
                            acc += (gens[j, p, q].conjugate() * Z[p, q]).real
                    inc_grad[b, t, j] = 2.0 * acc
    gen_cot = np.zeros((d, m, m), dtype=np.complex128)
    for b in range(B):
        gen_cot += partial[b]
    return gen_cot, inc_grad


@njit(cache=True, parallel=True)
def stepwise_backward(incs, gens, V, lam, cots, want_inc_grad):
    B, T, d = incs.shape
    m = gens.shape[1]
    partial = np.zeros((B, d, m, m), dtype=np.complex128)
    inc_grad = np.zeros((B, T, d), dtype=np.float64)
    for b in prange(B):
        for t in range(T):
            Vt = V[b, t]
            inner = Vt.conj().T @ cots[b, t] @ Vt
            phase = np.exp(1j * lam[b, t])
            F = _dd_table(lam[b, t], phase)
            Z = Vt @ (F.conj() * inner) @ Vt.conj().T
            for j in range(d):
                v = incs[b, t, j]
                if v != 0.0:
                    for p in range(m):
                        for q in range(m):
                            partial[b, j, p, q] += v * Z[p, q]
                if want_inc_grad:
                    acc = 0.0
                    for p in range(m):
                        for q in range(m):
                            acc += (gens[j, p, q].conjugate() * Z[p, q]).real
                    inc_grad[b, t, j] = 2.0 * acc
    gen_cot = np.zeros((d, m, m), dtype=np.complex128)
    for b in range(B):
        gen_cot += partial[b]
    return gen_cot, inc_grad
