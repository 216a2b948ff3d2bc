"""Windowed kernel and message kernels, in numba and numpy flavors.

Both flavors visit window offsets in the same order for every pixel, so a
pixel's message is the same ordered sum no matter which flavor or how many
threads produced it.

Shapes: ``feat`` (H, W, F); ``offsets`` (K, 2) int64 of (drow, dcol);
``valid`` (H, W, K) bool; ``k_app`` (H, W, K); ``k_smo`` (K,); ``q`` (H, W, C).
"""

import math

import numpy as np

from .._accel import njit, prange


@njit(parallel=True, cache=True)
def appearance_window_numba(feat, offsets, valid, app_scale, theta_alpha, theta_beta):
    h, w, nf = feat.shape
    nk = offsets.shape[0]
    out = np.zeros((h, w, nk))
    pos_den = 2.0 * theta_alpha * theta_alpha
    feat_den = 2.0 * theta_beta * theta_beta
    for r in prange(h):
        for c in range(w):
            for o in range(nk):
                if not valid[r, c, o]:
                    continue
                dr = offsets[o, 0]
                dc = offsets[o, 1]
                rr = r + dr
                cc = c + dc
                d2 = 0.0
                for f in range(nf):
                    t = feat[r, c, f] - feat[rr, cc, f]
                    d2 += t * t
                dp2 = (dr * dr + dc * dc) * (app_scale * app_scale)
                out[r, c, o] = math.exp(-dp2 / pos_den - d2 / feat_den)
    return out


def appearance_window_numpy(feat, offsets, valid, app_scale, theta_alpha, theta_beta):
    h, w, _ = feat.shape
    out = np.zeros((h, w, offsets.shape[0]))
    pos_den = 2.0 * theta_alpha * theta_alpha
    feat_den = 2.0 * theta_beta * theta_beta
    for o, (dr, dc) in enumerate(offsets):
        dst, src = _overlap(h, w, dr, dc)
        if dst is None:
            continue
        diff = feat[dst] - feat[src]
        d2 = np.einsum("ijf,ijf->ij", diff, diff)
        dp2 = (dr * dr + dc * dc) * (app_scale * app_scale)
        vals = np.exp(-dp2 / pos_den - d2 / feat_den)
        out[dst + (o,)] = np.where(valid[dst + (o,)], vals, 0.0)
    return out


@njit(parallel=True, cache=True)
def messages_numba(q, offsets, valid, k_app, k_smo, w_app, w_smo):
    h, w, nc = q.shape
    nk = offsets.shape[0]
    out = np.zeros((h, w, nc))
    for r in prange(h):
        for c in range(w):
            for o in range(nk):
                if not valid[r, c, o]:
                    continue
                weight = w_app * k_app[r, c, o] + w_smo * k_smo[o]
                rr = r + offsets[o, 0]
                cc = c + offsets[o, 1]
                for l in range(nc):
                    out[r, c, l] += weight * q[rr, cc, l]
    return out


def messages_numpy(q, offsets, valid, k_app, k_smo, w_app, w_smo):
    h, w, _ = q.shape
    out = np.zeros_like(q, dtype=np.float64)
    for o, (dr, dc) in enumerate(offsets):
        dst, src = _overlap(h, w, dr, dc)
        if dst is None:
            continue
        mask = valid[dst + (o,)]
        if not mask.any():
            continue
        weight = w_app * k_app[dst + (o,)] + w_smo * k_smo[o]
        weight = np.where(mask, weight, 0.0)
        out[dst] += weight[..., None] * q[src]
    return out


def _overlap(h, w, dr, dc):
    """Slices (dst, src) pairing pixel (r, c) with its neighbor (r+dr, c+dc)."""
    r0, r1 = max(0, -dr), min(h, h - dr)
    c0, c1 = max(0, -dc), min(w, w - dc)
    if r0 >= r1 or c0 >= c1:
        return None, None
    dst = (slice(r0, r1), slice(c0, c1))
    src = (slice(r0 + dr, r1 + dr), slice(c0 + dc, c1 + dc))
    return dst, src
