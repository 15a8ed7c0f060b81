"""Vectorized numpy implementations of the solver's hot kernels.

These are the fallback path behind :mod:`ncbsbl.backend`; the numba versions
in ``_kernels_numba`` implement the same arithmetic with explicit loops. The
two backends agree to rounding on well-conditioned inputs.

Action codes shared by both backends: 0 none, 1 add, 2 re-estimate, 3 delete.
"""

from __future__ import annotations

import numpy as np

ACTION_NONE = 0
ACTION_ADD = 1
ACTION_REESTIMATE = 2
ACTION_DELETE = 3

_DET_FLOOR = 1e-300


def _inv2(mat: np.ndarray) -> np.ndarray:
    """Batched analytic inverse of 2x2 blocks (last two axes)."""
    det = mat[..., 0, 0] * mat[..., 1, 1] - mat[..., 0, 1] * mat[..., 1, 0]
    out = np.empty_like(mat)
    out[..., 0, 0] = mat[..., 1, 1]
    out[..., 0, 1] = -mat[..., 0, 1]
    out[..., 1, 0] = -mat[..., 1, 0]
    out[..., 1, 1] = mat[..., 0, 0]
    return out / det[..., None, None]


def _herm(mat: np.ndarray) -> np.ndarray:
    return 0.5 * (mat + mat.conj().swapaxes(-1, -2))


def clip_psd(mat: np.ndarray) -> np.ndarray:
    """Hermitian-symmetrize 2x2 blocks and clip negative eigenvalues to zero."""
    h = _herm(np.asarray(mat, dtype=np.complex128))
    a = h[..., 0, 0].real
    d = h[..., 1, 1].real
    b = h[..., 0, 1]
    mean = 0.5 * (a + d)
    disc = np.sqrt((0.5 * (a - d)) ** 2 + np.abs(b) ** 2)
    lam_hi = mean + disc
    lam_lo = mean - disc
    # rank-1 reconstruction from the top eigenpair, for blocks with exactly
    # one negative eigenvalue
    va = lam_hi - a
    n2 = np.abs(b) ** 2 + va * va
    safe = n2 > 0
    scale = np.where(safe, lam_hi / np.where(safe, n2, 1.0), 0.0)
    r00 = np.where(safe, scale * np.abs(b) ** 2, np.maximum(a, 0.0))
    r01 = np.where(safe, scale * b * va, 0.0)
    r11 = np.where(safe, scale * va * va, 0.0)
    neg = lam_lo < 0
    allneg = lam_hi <= 0
    out00 = np.where(allneg, 0.0, np.where(neg, r00, a))
    out01 = np.where(allneg, 0.0 + 0.0j, np.where(neg, r01, b))
    out11 = np.where(allneg, 0.0, np.where(neg, r11, d))
    out = np.empty_like(h)
    out[..., 0, 0] = out00
    out[..., 0, 1] = out01
    out[..., 1, 0] = out01.conj()
    out[..., 1, 1] = out11
    return out


def block_nll(cov: np.ndarray, gram: np.ndarray, proj: np.ndarray) -> np.ndarray:
    """Per-block marginal-cost contribution at prior covariance ``cov``.

    ``gram``/``proj`` are the leave-one-out statistics of each block; a zero
    ``cov`` contributes exactly zero. Shapes: (..., 2, 2), (..., 2, 2),
    (..., 2, L).
    """
    n_snapshots = proj.shape[-1]
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        lu = cov @ gram
        lu[..., 0, 0] += 1.0
        lu[..., 1, 1] += 1.0
        det = (lu[..., 0, 0] * lu[..., 1, 1] - lu[..., 0, 1] * lu[..., 1, 0]).real
        tmat = _inv2(lu) @ cov
        quad = np.einsum("...al,...al->...", proj.conj(), tmat @ proj).real
        bad = ~(det >= _DET_FLOOR)
        out = n_snapshots * np.log(np.where(bad, 1.0, det)) - quad
    return np.where(bad, np.inf, out)


def scan_blocks(gram, proj, blk_cov, active, gamma_floor, r_clip):
    """Candidate covariance update and cost delta for every block.

    Parameters are the leave-one-out Gram (N,2,2) and data projection
    (N,2,L) of each block, the current per-block prior covariance (N,2,2),
    the active mask, an absolute floor below which a candidate scale counts
    as zero, and the magnitude cap for the intra-block correlation.

    Returns ``(cand, cand_gamma, delta, action)``; blocks whose statistics
    are unusable come back with action 0 and delta +inf.
    """
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        n_snapshots = proj.shape[-1]
        qq = (proj @ proj.conj().swapaxes(-1, -2)) / n_snapshots
        gram_inv = _inv2(gram)
        clipped = clip_psd(gram_inv @ (qq - gram) @ gram_inv)

        cand_gamma = 0.5 * (clipped[..., 0, 0].real + clipped[..., 1, 1].real)
        keep = cand_gamma > gamma_floor
        denom = np.where(keep, cand_gamma, 1.0)
        corr = clipped[..., 0, 1] / denom
        mag = np.abs(corr)
        over = mag > r_clip
        corr = np.where(over, corr * (r_clip / np.where(over, mag, 1.0)), corr)
        cand = np.zeros_like(clipped)
        cand[..., 0, 0] = np.where(keep, cand_gamma, 0.0)
        cand[..., 0, 1] = np.where(keep, cand_gamma * corr, 0.0)
        cand[..., 1, 0] = cand[..., 0, 1].conj()
        cand[..., 1, 1] = cand[..., 0, 0]
        cand_gamma = np.where(keep, cand_gamma, 0.0)

        nll_cand = block_nll(cand, gram, proj)
        nll_cur = np.where(active, block_nll(blk_cov, gram, proj), 0.0)
        delta = np.where(
            active,
            np.where(keep, nll_cand - nll_cur, -nll_cur),
            np.where(keep, nll_cand, np.inf),
        )
        action = np.where(
            active,
            np.where(keep, ACTION_REESTIMATE, ACTION_DELETE),
            np.where(keep, ACTION_ADD, ACTION_NONE),
        ).astype(np.int8)

        bad = ~np.isfinite(delta)
        delta = np.where(bad, np.inf, delta)
        action = np.where(bad, ACTION_NONE, action).astype(np.int8)
        cand = np.where(bad[..., None, None], 0.0, cand)
        cand_gamma = np.where(bad, 0.0, cand_gamma)
    return cand, cand_gamma, delta, action


def rank2_refresh(gram_full, proj_full, cross, tmat, tproj):
    """In-place downdate of all per-block statistics after one block's prior
    covariance change.

    ``cross[i]`` couples block i to the changed block through the current
    model covariance inverse; ``tmat`` is the 2x2 capacitance factor and
    ``tproj`` its product with the changed block's data projection. Gram
    blocks are re-symmetrized to suppress drift.
    """
    ct = cross @ tmat
    gram_full -= ct @ cross.conj().swapaxes(-1, -2)
    np.copyto(gram_full, _herm(gram_full))
    proj_full -= cross @ tproj
