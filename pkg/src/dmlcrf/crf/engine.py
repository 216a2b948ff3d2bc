"""Mean-field CRF inference with Gaussian edge potentials.

Pairwise interactions are truncated to a k x k window around each pixel
(ConvCRF style), compatibility is Potts, and updates are simultaneous across
pixels. Arrays follow the (H, W, ...) layout of the feature and probability
maps; a marginal or unary field is simply an (H, W, C) float array.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, replace
from typing import Optional

import numpy as np

from .. import _accel
from ..errors import GuardError, ShapeError
from ..hsi_data import LabelMap
from . import _kernels

log = logging.getLogger(__name__)

PROB_EPS = 1e-12
BRUTE_FORCE_MAX_PIXELS = 4096


@dataclass(frozen=True)
class CrfParams:
    """Kernel weights and widths, window and iteration budget.

    ``app_positions`` / ``smo_positions`` choose the coordinate unit of each
    kernel: ``"normalized"`` divides (row, col) by max(H-1, W-1, 1), ``"pixel"``
    keeps raw offsets. ``window`` is ``"square"`` (k x k) or ``"manhattan"``
    (diamond of radius (k-1)/2).
    """

    w_app: float = 10.0
    w_smo: float = 3.0
    theta_alpha: float = 0.1
    theta_beta: float = 80.0
    theta_gamma: float = 3.0
    filter_size: int = 7
    iterations: int = 5
    window: str = "square"
    app_positions: str = "normalized"
    smo_positions: str = "pixel"

    def __post_init__(self):
        if self.w_app < 0 or self.w_smo < 0:
            raise ValueError("kernel weights must be nonnegative")
        if min(self.theta_alpha, self.theta_beta, self.theta_gamma) <= 0:
            raise ValueError("kernel widths must be positive")
        if self.filter_size < 1 or self.filter_size % 2 == 0:
            raise ValueError(f"filter_size must be a positive odd number, got {self.filter_size}")
        if self.iterations < 1:
            raise ValueError("iterations must be >= 1")
        if self.window not in ("square", "manhattan"):
            raise ValueError(f"unknown window shape {self.window!r}")
        for unit in (self.app_positions, self.smo_positions):
            if unit not in ("normalized", "pixel"):
                raise ValueError(f"unknown position unit {unit!r}")

    def with_(self, **changes) -> "CrfParams":
        return replace(self, **changes)


PRESETS = {
    "pavia": CrfParams(filter_size=7),
    "salinas": CrfParams(filter_size=15),
}


@dataclass
class KernelWindow:
    """Precomputed kernel values for every pixel against its window neighbors.

    ``k_app[r, c, o]`` pairs pixel (r, c) with (r, c) + ``offsets[o]``; entries
    outside the image, outside the window shape, or at the zero offset have
    ``valid`` False and value 0. The smoothness kernel depends on the offset
    only, so ``k_smo`` is stored once per offset.
    """

    offsets: np.ndarray
    valid: np.ndarray
    k_app: np.ndarray
    k_smo: np.ndarray

    def neighbor_count(self, row, col) -> int:
        return int(self.valid[row, col].sum())


def _values(x):
    return np.asarray(getattr(x, "values", x), dtype=np.float64)


def position_scale(height, width, unit) -> float:
    if unit == "pixel":
        return 1.0
    return 1.0 / max(height - 1, width - 1, 1)


def window_offsets(filter_size, shape="square"):
    """Offsets (drow, dcol) of a window in row-major order, plus the shape mask."""
    radius = (filter_size - 1) // 2
    d = np.arange(-radius, radius + 1)
    dr, dc = np.meshgrid(d, d, indexing="ij")
    offsets = np.stack([dr.ravel(), dc.ravel()], axis=1).astype(np.int64)
    keep = np.any(offsets != 0, axis=1)
    if shape == "manhattan":
        keep &= np.abs(offsets).sum(axis=1) <= radius
    return offsets, keep


def unary_from_prob(prob) -> np.ndarray:
    """Unary cost -log(max(p, eps)) per pixel and class."""
    return -np.log(np.maximum(_values(prob), PROB_EPS))


def kernel_values(pos_i, pos_j, f_i, f_j, params: CrfParams, app_scale=1.0, smo_scale=1.0):
    """Appearance and smoothness kernels for one pixel pair.

    Position differences are multiplied by ``app_scale`` / ``smo_scale`` before
    entering the respective kernel.
    """
    dp = np.asarray(pos_i, dtype=np.float64) - np.asarray(pos_j, dtype=np.float64)
    df = np.asarray(f_i, dtype=np.float64) - np.asarray(f_j, dtype=np.float64)
    dp2 = float(dp @ dp)
    k_app = np.exp(-dp2 * app_scale**2 / (2 * params.theta_alpha**2) - float(df @ df) / (2 * params.theta_beta**2))
    k_smo = np.exp(-dp2 * smo_scale**2 / (2 * params.theta_gamma**2))
    return float(k_app), float(k_smo)


def build_windows(features, params: CrfParams, use_numba: Optional[bool] = None) -> KernelWindow:
    feat = np.ascontiguousarray(_values(features))
    if feat.ndim != 3:
        raise ShapeError(f"features must be (H, W, F), got {feat.shape}")
    h, w, _ = feat.shape
    offsets, keep = window_offsets(params.filter_size, params.window)
    rows = np.arange(h)[:, None, None] + offsets[None, None, :, 0]
    cols = np.arange(w)[None, :, None] + offsets[None, None, :, 1]
    valid = (rows >= 0) & (rows < h) & (cols >= 0) & (cols < w) & keep
    app_scale = position_scale(h, w, params.app_positions)
    smo_scale = position_scale(h, w, params.smo_positions)
    use_numba = _accel.USE_NUMBA if use_numba is None else use_numba
    kernel = _kernels.appearance_window_numba if use_numba else _kernels.appearance_window_numpy
    k_app = kernel(feat, offsets, valid, app_scale, params.theta_alpha, params.theta_beta)
    dp2 = (offsets**2).sum(axis=1) * smo_scale**2
    k_smo = np.exp(-dp2 / (2 * params.theta_gamma**2))
    return KernelWindow(offsets, valid, k_app, k_smo)


def _normalize_exp(neg_energy):
    z = neg_energy - neg_energy.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def mean_field_step(q, unary, windows: KernelWindow, params: CrfParams, use_numba=None) -> np.ndarray:
    """One simultaneous mean-field update under Potts compatibility.

    For label l the pairwise energy is the window message mass on every other
    label, sum_{l' != l} m(l').
    """
    q = np.ascontiguousarray(_values(q))
    use_numba = _accel.USE_NUMBA if use_numba is None else use_numba
    kernel = _kernels.messages_numba if use_numba else _kernels.messages_numpy
    m = kernel(q, windows.offsets, windows.valid, windows.k_app, windows.k_smo,
               float(params.w_app), float(params.w_smo))
    pairwise = m.sum(axis=-1, keepdims=True) - m
    return _normalize_exp(-unary - pairwise)


def _check_inputs(prob, features):
    p, f = _values(prob), _values(features)
    if p.ndim != 3 or f.ndim != 3 or p.shape[:2] != f.shape[:2]:
        raise ShapeError(f"probabilities {p.shape} and features {f.shape} must share H x W")
    return p, f


def infer(prob, features, params: CrfParams, trace=None, use_numba=None):
    """Windowed mean-field inference started from ``Q = prob``.

    Returns ``(labels, marginals)``; labels are the per-pixel argmax (lowest
    class id on ties) as a :class:`LabelMap`. If ``trace`` is a list, the
    marginals after every iteration are appended to it.
    """
    p, f = _check_inputs(prob, features)
    unary = unary_from_prob(p)
    windows = build_windows(f, params, use_numba=use_numba)
    q = p
    for _ in range(params.iterations):
        q = mean_field_step(q, unary, windows, params, use_numba=use_numba)
        if trace is not None:
            trace.append(q)
    return LabelMap(np.argmax(q, axis=-1) + 1), q


def brute_force_infer(prob, features, params: CrfParams, trace=None):
    """Dense mean-field reference: every pixel pair interacts, no window.

    ``params.filter_size`` and ``params.window`` are ignored.
    """
    from scipy.spatial.distance import cdist

    p, f = _check_inputs(prob, features)
    h, w, n_classes = p.shape
    n = h * w
    if n > BRUTE_FORCE_MAX_PIXELS:
        raise GuardError(f"{n} pixels exceeds the brute-force limit of {BRUTE_FORCE_MAX_PIXELS}")
    rr, cc = np.meshgrid(np.arange(h), np.arange(w), indexing="ij")
    pos = np.stack([rr.ravel(), cc.ravel()], axis=1).astype(np.float64)
    pos_app = pos * position_scale(h, w, params.app_positions)
    pos_smo = pos * position_scale(h, w, params.smo_positions)
    feats = f.reshape(n, -1)
    k_app = np.exp(-cdist(pos_app, pos_app, "sqeuclidean") / (2 * params.theta_alpha**2)
                   - cdist(feats, feats, "sqeuclidean") / (2 * params.theta_beta**2))
    k_smo = np.exp(-cdist(pos_smo, pos_smo, "sqeuclidean") / (2 * params.theta_gamma**2))
    pair = params.w_app * k_app + params.w_smo * k_smo
    np.fill_diagonal(pair, 0.0)
    potts = 1.0 - np.eye(n_classes)
    unary = -np.log(np.maximum(p.reshape(n, n_classes), PROB_EPS))
    q = p.reshape(n, n_classes)
    for _ in range(params.iterations):
        energy = unary + (pair @ q) @ potts
        q = np.exp(-(energy - energy.min(axis=1, keepdims=True)))
        q /= q.sum(axis=1, keepdims=True)
        if trace is not None:
            trace.append(q.reshape(h, w, n_classes))
    q = q.reshape(h, w, n_classes)
    return LabelMap(np.argmax(q, axis=-1) + 1), q
