"""Compiled inner loop for the banded Rouchon update.

Operators are stored in band form, ``bands[c, k, i] = A[i, i+k-b]`` for
half-bandwidth ``b``, with ``c = 0, 1`` the real and imaginary planes.
Inside the kernel the density matrix is split into two contiguous float
arrays so the row AXPYs vectorise.

The unmonitored and monitored recovery terms share one structure: every
jump operator is ``x a + y a^dag + z I``, so ``sum_r c_r L_r rho L_r^dag``
reduces to nine shifted element-wise products weighted by a 3x3 Hermitian
coefficient matrix (see :func:`recovery_coefficients`).
"""

from __future__ import annotations

import numba
import numpy as np

#: row shifts of a, a^dag and I acting from the left
_SHIFTS = (1, -1, 0)


def to_bands(a: np.ndarray, b: int) -> np.ndarray:
    """Pack a dense matrix of half-bandwidth ``<= b`` into ``(2, 2b+1, d)``."""
    d = a.shape[0]
    out = np.zeros((2, 2 * b + 1, d))
    for k in range(2 * b + 1):
        off = k - b
        diag = np.diagonal(a, off)
        if off >= 0:
            out[0, k, : d - off] = diag.real
            out[1, k, : d - off] = diag.imag
        else:
            out[0, k, -off:] = diag.real
            out[1, k, -off:] = diag.imag
    return out


def half_bandwidth(a: np.ndarray, atol: float = 0.0) -> int:
    rows, cols = np.nonzero(np.abs(a) > atol)
    if rows.size == 0:
        return 0
    return int(np.abs(rows - cols).max())


def ladder_components(op: np.ndarray, atol: float = 1e-12) -> np.ndarray:
    """Return ``(x, y, z)`` with ``op == x a + y a^dag + z I``."""
    d = op.shape[0]
    x, y, z = op[0, 1], op[1, 0], op[0, 0]
    sq = np.sqrt(np.arange(1, d, dtype=float))
    rebuilt = np.diag(x * sq, 1) + np.diag(y * sq, -1) + z * np.eye(d)
    if np.abs(rebuilt - op).max() > atol * max(1.0, np.abs(op).max()):
        raise ValueError("operator is not of the form x a + y a^dag + z I")
    return np.array([x, y, z], dtype=complex)


def recovery_coefficients(ops, weights) -> np.ndarray:
    """``C[A, B] = sum_r w_r comp_r[A] conj(comp_r[B])`` split as ``(2, 3, 3)``."""
    c = np.zeros((3, 3), dtype=complex)
    for op, w in zip(ops, weights):
        if w == 0.0:
            continue
        comp = ladder_components(op)
        c += w * np.outer(comp, comp.conj())
    return np.stack([c.real, c.imag])


@numba.njit(cache=True, fastmath=True)
def _band_left(br, bi, b, xr, xi, outr, outi):
    d = xr.shape[0]
    for i in range(d):
        orow = outr[i]
        oirow = outi[i]
        orow[:] = 0.0
        oirow[:] = 0.0
        lo = max(0, i - b)
        hi = min(d - 1, i + b)
        for j in range(lo, hi + 1):
            ar = br[j - i + b, i]
            ai = bi[j - i + b, i]
            xrr = xr[j]
            xir = xi[j]
            for n in range(d):
                orow[n] += ar * xrr[n] - ai * xir[n]
                oirow[n] += ar * xir[n] + ai * xrr[n]


@numba.njit(cache=True, fastmath=True)
def _band_left_upper(br, bi, b, xr, xi, outr, outi):
    d = xr.shape[0]
    for i in range(d):
        orow = outr[i, i:]
        oirow = outi[i, i:]
        orow[:] = 0.0
        oirow[:] = 0.0
        m = d - i
        lo = max(0, i - b)
        hi = min(d - 1, i + b)
        for j in range(lo, hi + 1):
            ar = br[j - i + b, i]
            ai = bi[j - i + b, i]
            xrr = xr[j, i:]
            xir = xi[j, i:]
            for n in range(m):
                orow[n] += ar * xrr[n] - ai * xir[n]
                oirow[n] += ar * xir[n] + ai * xrr[n]


@numba.njit(cache=True, fastmath=True)
def _recovery_upper(cr, ci, sr, si, fac, outr, outi):
    # out[m, n] += sum_AB C[A,B] f_A(m) f_B(n) sigma[m + dA, n + dB]   (n >= m)
    d = sr.shape[0]
    for ia in range(3):
        da = 1 if ia == 0 else (-1 if ia == 1 else 0)
        for ib in range(3):
            c_r = cr[ia, ib]
            c_i = ci[ia, ib]
            if c_r == 0.0 and c_i == 0.0:
                continue
            db = 1 if ib == 0 else (-1 if ib == 1 else 0)
            fb = fac[ib]
            for m in range(d):
                j = m + da
                if j < 0 or j >= d:
                    continue
                gr = c_r * fac[ia, m]
                gi = c_i * fac[ia, m]
                if gr == 0.0 and gi == 0.0:
                    continue
                n0 = m
                if n0 + db < 0:
                    n0 = -db
                n1 = d if db <= 0 else d - db
                srow = sr[j]
                sirow = si[j]
                orow = outr[m]
                oirow = outi[m]
                for n in range(n0, n1):
                    tr = fb[n] * srow[n + db]
                    ti = fb[n] * sirow[n + db]
                    orow[n] += gr * tr - gi * ti
                    oirow[n] += gr * ti + gi * tr


@numba.njit(cache=True)
def rouchon_banded(sigma, rho_out, m0, hb, l1, l1sq, qf, drive, s1, s2, rec, fac, sqrt_n,
                   work, mband):
    """Kraus update ``rho_out ~ M sigma M^dag + recovery(sigma)``.

    ``M = m0 + s1 * l1 + s2 * l1sq - i * drive * qf``.  ``rec`` holds the
    split 3x3 recovery coefficients and ``fac[A, m]`` the ladder factors
    ``sqrt(m+1)``, ``sqrt(m)``, ``1``.  Returns ``(trace, <q>, <p>)`` where
    the trace is taken before normalisation and the means are those of the
    frame quadratures after it.  On a non-positive trace ``rho_out`` is not
    written and the caller must raise.
    """
    d = sigma.shape[0]
    nb = 2 * hb + 1
    for c in range(2):
        for k in range(nb):
            for i in range(d):
                mband[c, k, i] = m0[c, k, i]
    for k in range(3):
        for i in range(d):
            mband[0, hb - 1 + k, i] += s1 * l1[0, k, i] + drive * qf[1, k, i]
            mband[1, hb - 1 + k, i] += s1 * l1[1, k, i] - drive * qf[0, k, i]
    for k in range(5):
        for i in range(d):
            mband[0, hb - 2 + k, i] += s2 * l1sq[0, k, i]
            mband[1, hb - 2 + k, i] += s2 * l1sq[1, k, i]

    sr = work[0]
    si = work[1]
    tr = work[2]
    ti = work[3]
    vr = work[4]
    vi = work[5]
    for i in range(d):
        for j in range(d):
            sr[i, j] = sigma[i, j].real
            si[i, j] = sigma[i, j].imag

    # M sigma M^dag = M (M sigma)^dag for Hermitian sigma
    _band_left(mband[0], mband[1], hb, sr, si, tr, ti)
    for i in range(d):
        for j in range(d):
            vr[i, j] = tr[j, i]
            vi[i, j] = -ti[j, i]
    _band_left_upper(mband[0], mband[1], hb, vr, vi, tr, ti)
    _recovery_upper(rec[0], rec[1], sr, si, fac, tr, ti)

    trace = 0.0
    for i in range(d):
        trace += tr[i, i]
    if not (trace > 0.0) or not np.isfinite(trace):
        return trace, 0.0, 0.0

    inv = 1.0 / trace
    for i in range(d):
        rho_out[i, i] = tr[i, i] * inv
        for n in range(i + 1, d):
            x = complex(tr[i, n] * inv, ti[i, n] * inv)
            rho_out[i, n] = x
            rho_out[n, i] = x.conjugate()

    eq = 0.0
    ep = 0.0
    for i in range(d - 1):
        eq += sqrt_n[i] * rho_out[i, i + 1].real
        ep -= sqrt_n[i] * rho_out[i, i + 1].imag
    root2 = np.sqrt(2.0)
    return trace, root2 * eq, root2 * ep


def ladder_factors(dim: int) -> np.ndarray:
    """Rows ``sqrt(m+1)``, ``sqrt(m)``, ``1`` (zero where the shift leaves the basis)."""
    m = np.arange(dim, dtype=float)
    fac = np.stack([np.sqrt(m + 1), np.sqrt(m), np.ones(dim)])
    fac[0, -1] = 0.0
    return fac
