"""Compiled inner loops for spectral estimation and closed-form model spectra.

The model kernels work in the eigenbasis of the generator restricted to its
non-zero eigenvalues ``lam``.  With ``g_a(w) = -1 / (lam_a + i w)`` a trace
``Tr[A' G'(x) A' G'(y) A' rho0]`` becomes ``sum_ab u_a g_a(x) M_ab g_b(y) v_b``.
Frequency arguments are integer combinations ``c1*w1 + c2*w2``; each
permutation term is described by a row of argument indices into ``argc``.
"""

import itertools

import numpy as np
from numba import njit


def _arg_tables():
    # third order: arguments (w_m, -w_k) over ordered pairs m != k of (w1, w2, -w1-w2)
    c3 = np.array([[1, 0], [0, 1], [-1, -1]])
    args3, tab3 = [], []

    def idx(store, c):
        c = tuple(int(x) for x in c)
        if c not in store:
            store.append(c)
        return store.index(c)

    for k, _, m in itertools.permutations(range(3)):
        tab3.append((idx(args3, c3[m]), idx(args3, -c3[k])))

    # reduced fourth order: (w1, w2, -w1, -w2); arguments (w_n, w_m + w_n, -w_k)
    c4 = np.array([[1, 0], [0, 1], [-1, 0], [0, -1]])
    args4, tab4 = [], []
    for k, _, m, n in itertools.permutations(range(4)):
        tab4.append((idx(args4, c4[n]), idx(args4, c4[m] + c4[n]), idx(args4, -c4[k])))
    tab4 = np.array(tab4, dtype=np.int64)
    # negating every argument (index k -> k+2 mod 4) maps a permutation onto
    # its partner; for a real generator the partner term is the conjugate
    perms = list(itertools.permutations(range(4)))
    half = np.array([i for i, p in enumerate(perms) if p[0] < 2], dtype=np.int64)
    return (
        np.array(tab3, dtype=np.int64),
        np.array(args3, dtype=np.float64),
        tab4,
        np.array(args4, dtype=np.float64),
        half,
    )


TAB3, ARGS3, TAB4, ARGS4, HALF4 = _arg_tables()


@njit(cache=True)
def s3_kernel(lam, u, M, v, w1, w2, tab, argc):
    n = lam.shape[0]
    npts = w1.shape[0]
    na = argc.shape[0]
    out = np.empty(npts, np.complex128)
    g = np.empty((na, n), np.complex128)
    for p in range(npts):
        for q in range(na):
            om = argc[q, 0] * w1[p] + argc[q, 1] * w2[p]
            for a in range(n):
                g[q, a] = -1.0 / (lam[a] + 1j * om)
        acc = 0j
        for t in range(tab.shape[0]):
            ix = tab[t, 0]
            iy = tab[t, 1]
            for a in range(n):
                s = 0j
                for b in range(n):
                    s += M[a, b] * g[iy, b] * v[b]
                acc += u[a] * g[ix, a] * s
        out[p] = acc
    return out


@njit(cache=True)
def s4_kernel(lam, u, M, v, w1, w2, tab, argc):
    """Reduced fourth-order sum over the permutations listed in ``tab``.

    Each term is the triple-propagator trace minus the two convolution terms,
    whose frequency integrals reduce to ``G2_ab(W) = -1 / (lam_a + lam_b + i W)``.
    """
    n = lam.shape[0]
    npts = w1.shape[0]
    na = argc.shape[0]
    out = np.empty(npts, np.complex128)
    g = np.empty((na, n), np.complex128)
    g2 = np.empty((na, n, n), np.complex128)
    r = np.empty(n, np.complex128)
    uv = u * v
    for p in range(npts):
        for q in range(na):
            om = argc[q, 0] * w1[p] + argc[q, 1] * w2[p]
            for a in range(n):
                g[q, a] = -1.0 / (lam[a] + 1j * om)
                for b in range(n):
                    g2[q, a, b] = -1.0 / (lam[a] + lam[b] + 1j * om)
        acc = 0j
        for t in range(tab.shape[0]):
            ix = tab[t, 0]
            iy = tab[t, 1]
            iz = tab[t, 2]
            for b in range(n):
                s = 0j
                for c in range(n):
                    s += M[b, c] * g[iz, c] * v[c]
                r[b] = s * g[iy, b]
            t1 = 0j
            for a in range(n):
                s = 0j
                for b in range(n):
                    s += M[a, b] * r[b]
                t1 += u[a] * g[ix, a] * s
            t23 = 0j
            for a in range(n):
                for b in range(n):
                    t23 += uv[a] * uv[b] * g2[iy, a, b] * g[ix, a] * (g[iz, b] + g[iz, a])
            acc += t1 - t23
        out[p] = acc
    return out


@njit(cache=True)
def third_moment_upper(a, k_max):
    """``mean_s a[s,i] a[s,j] conj(a[s,i+j])`` for ``0 <= i <= j <= k_max``.

    The result is filled symmetrically into a ``(k_max+1, k_max+1)`` array.
    ``a`` must hold at least ``2*k_max + 1`` frequency columns.
    """
    m = a.shape[0]
    out = np.zeros((k_max + 1, k_max + 1), np.complex128)
    for s in range(m):
        for i in range(k_max + 1):
            ai = a[s, i]
            for j in range(i, k_max + 1):
                out[i, j] += ai * a[s, j] * np.conj(a[s, i + j])
    for i in range(k_max + 1):
        for j in range(i, k_max + 1):
            val = out[i, j] / m
            out[i, j] = val
            out[j, i] = val
    return out
