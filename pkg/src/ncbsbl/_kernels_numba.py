"""Numba-jitted implementations of the solver's hot kernels.

Same contracts and action codes as ``_kernels_numpy``; explicit loops over
blocks with scalarized 2x2 arithmetic. First call per process pays the JIT
cost (cached on disk afterwards).
"""

from __future__ import annotations

import numpy as np
from numba import njit

ACTION_NONE = 0
ACTION_ADD = 1
ACTION_REESTIMATE = 2
ACTION_DELETE = 3

_DET_FLOOR = 1e-300


@njit(cache=True)
def _nll_scalar(c00, c01, c10, c11, u00, u01, u10, u11, proj_i, n_snapshots):
    # objective contribution for one block at prior covariance C given its
    # leave-one-out Gram U and data projection proj_i (2, L)
    a00 = 1.0 + c00 * u00 + c01 * u10
    a01 = c00 * u01 + c01 * u11
    a10 = c10 * u00 + c11 * u10
    a11 = 1.0 + c10 * u01 + c11 * u11
    det = a00 * a11 - a01 * a10
    detr = det.real
    if not detr >= _DET_FLOOR:
        return np.inf
    i00 = a11 / det
    i01 = -a01 / det
    i10 = -a10 / det
    i11 = a00 / det
    t00 = i00 * c00 + i01 * c10
    t01 = i00 * c01 + i01 * c11
    t10 = i10 * c00 + i11 * c10
    t11 = i10 * c01 + i11 * c11
    quad = 0.0
    for l in range(proj_i.shape[1]):
        p0 = proj_i[0, l]
        p1 = proj_i[1, l]
        quad += (np.conj(p0) * (t00 * p0 + t01 * p1) + np.conj(p1) * (t10 * p0 + t11 * p1)).real
    return n_snapshots * np.log(detr) - quad


@njit(cache=True)
def scan_blocks(gram, proj, blk_cov, active, gamma_floor, r_clip):
    """See ``_kernels_numpy.scan_blocks``; identical contract."""
    n = gram.shape[0]
    n_snapshots = proj.shape[2]
    cand = np.zeros((n, 2, 2), dtype=np.complex128)
    cand_gamma = np.zeros(n)
    delta = np.full(n, np.inf)
    action = np.zeros(n, dtype=np.int8)
    for i in range(n):
        u00 = gram[i, 0, 0]
        u01 = gram[i, 0, 1]
        u10 = gram[i, 1, 0]
        u11 = gram[i, 1, 1]
        udet = u00 * u11 - u01 * u10
        if not abs(udet) >= _DET_FLOOR:
            continue
        q00 = 0.0j
        q01 = 0.0j
        q11 = 0.0j
        for l in range(n_snapshots):
            p0 = proj[i, 0, l]
            p1 = proj[i, 1, l]
            q00 += p0 * np.conj(p0)
            q01 += p0 * np.conj(p1)
            q11 += p1 * np.conj(p1)
        q00 /= n_snapshots
        q01 /= n_snapshots
        q11 /= n_snapshots
        iu00 = u11 / udet
        iu01 = -u01 / udet
        iu10 = -u10 / udet
        iu11 = u00 / udet
        m00 = q00 - u00
        m01 = q01 - u01
        m10 = np.conj(q01) - u10
        m11 = q11 - u11
        t00 = iu00 * m00 + iu01 * m10
        t01 = iu00 * m01 + iu01 * m11
        t10 = iu10 * m00 + iu11 * m10
        t11 = iu10 * m01 + iu11 * m11
        r00 = t00 * iu00 + t01 * iu10
        r01 = t00 * iu01 + t01 * iu11
        r10 = t10 * iu00 + t11 * iu10
        r11 = t10 * iu01 + t11 * iu11
        # hermitize, then clip negative eigenvalues
        ha = r00.real
        hd = r11.real
        hb = 0.5 * (r01 + np.conj(r10))
        mean = 0.5 * (ha + hd)
        disc = np.sqrt((0.5 * (ha - hd)) ** 2 + abs(hb) ** 2)
        lam_hi = mean + disc
        lam_lo = mean - disc
        if lam_hi <= 0.0:
            c00 = 0.0
            cb = 0.0j
            c11 = 0.0
        elif lam_lo < 0.0:
            va = lam_hi - ha
            n2 = abs(hb) ** 2 + va * va
            if n2 > 0.0:
                s = lam_hi / n2
                c00 = s * abs(hb) ** 2
                cb = s * hb * va
                c11 = s * va * va
            else:
                c00 = max(ha, 0.0)
                cb = 0.0j
                c11 = 0.0
        else:
            c00 = ha
            cb = hb
            c11 = hd
        gam = 0.5 * (c00 + c11)
        is_active = active[i]
        nll_cur = 0.0
        if is_active:
            nll_cur = _nll_scalar(
                blk_cov[i, 0, 0], blk_cov[i, 0, 1], blk_cov[i, 1, 0], blk_cov[i, 1, 1],
                u00, u01, u10, u11, proj[i], n_snapshots,
            )
        if not gam > gamma_floor:
            if is_active:
                d = -nll_cur
                if np.isfinite(d):
                    action[i] = ACTION_DELETE
                    delta[i] = d
            continue
        corr = cb / gam
        mag = abs(corr)
        if mag > r_clip:
            corr *= r_clip / mag
        o01 = gam * corr
        nll_cand = _nll_scalar(
            gam + 0.0j, o01, np.conj(o01), gam + 0.0j,
            u00, u01, u10, u11, proj[i], n_snapshots,
        )
        d = nll_cand - nll_cur
        if not np.isfinite(d):
            continue
        cand[i, 0, 0] = gam
        cand[i, 0, 1] = o01
        cand[i, 1, 0] = np.conj(o01)
        cand[i, 1, 1] = gam
        cand_gamma[i] = gam
        delta[i] = d
        action[i] = ACTION_REESTIMATE if is_active else ACTION_ADD
    return cand, cand_gamma, delta, action


@njit(cache=True)
def rank2_refresh(gram_full, proj_full, cross, tmat, tproj):
    """See ``_kernels_numpy.rank2_refresh``; identical contract."""
    n = gram_full.shape[0]
    n_snapshots = proj_full.shape[2]
    t00 = tmat[0, 0]
    t01 = tmat[0, 1]
    t10 = tmat[1, 0]
    t11 = tmat[1, 1]
    for i in range(n):
        g00 = cross[i, 0, 0]
        g01 = cross[i, 0, 1]
        g10 = cross[i, 1, 0]
        g11 = cross[i, 1, 1]
        ct00 = g00 * t00 + g01 * t10
        ct01 = g00 * t01 + g01 * t11
        ct10 = g10 * t00 + g11 * t10
        ct11 = g10 * t01 + g11 * t11
        n00 = gram_full[i, 0, 0] - (ct00 * np.conj(g00) + ct01 * np.conj(g01))
        n01 = gram_full[i, 0, 1] - (ct00 * np.conj(g10) + ct01 * np.conj(g11))
        n10 = gram_full[i, 1, 0] - (ct10 * np.conj(g00) + ct11 * np.conj(g01))
        n11 = gram_full[i, 1, 1] - (ct10 * np.conj(g10) + ct11 * np.conj(g11))
        off = 0.5 * (n01 + np.conj(n10))
        gram_full[i, 0, 0] = n00.real
        gram_full[i, 0, 1] = off
        gram_full[i, 1, 0] = np.conj(off)
        gram_full[i, 1, 1] = n11.real
        for l in range(n_snapshots):
            tp0 = tproj[0, l]
            tp1 = tproj[1, l]
            proj_full[i, 0, l] -= g00 * tp0 + g01 * tp1
            proj_full[i, 1, l] -= g10 * tp0 + g11 * tp1
