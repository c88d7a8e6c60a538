"""Bird's-eye part confidence maps: Gaussian encoding, soft-argmax decoding, losses.

Maps live on the (width, length) face of the lattice, shape ``(K, n_w, n_l)``
with K = 9 parts ordered as in :func:`vernier.box_geom.parts_of`.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .box_geom import parts_of
from .voxel_grid import BACKGROUND, FOREGROUND

N_PARTS = 9
DEFAULT_SIGMA = 4.0
DEFAULT_TEMPERATURE = 0.1
FOCAL_EPS = 1e-7


@dataclass(frozen=True)
class PartConfidenceMaps:
    maps: np.ndarray
    sigma: float = DEFAULT_SIGMA

    def __post_init__(self):
        arr = np.asarray(self.maps, dtype=np.float64)
        if arr.ndim != 3:
            raise ValueError(f"maps must be (K, n_w, n_l), got {arr.shape}")
        object.__setattr__(self, "maps", arr)

    @property
    def n_parts(self):
        return self.maps.shape[0]

    def to_channels_last(self):
        """(n_w, n_l, K) view matching the binary container layout."""
        return np.moveaxis(self.maps, 0, -1)

    @classmethod
    def from_channels_last(cls, arr, sigma=DEFAULT_SIGMA):
        return cls(np.moveaxis(np.asarray(arr), -1, 0), sigma)


@dataclass(frozen=True)
class DecodedParts:
    coords_xz: np.ndarray  # (K, 2) camera-frame meters
    weights: np.ndarray  # (K,)
    empty: np.ndarray  # (K,) bool, True where the map carried no mass


def part_cells(grid, box):
    """Continuous (j, k) BEV cell coordinates of the parts of ``box`` in ``grid``."""
    cells = grid.camera_to_cell(parts_of(box))
    return cells[:, 1], cells[:, 2]


def encode(grid, gt, sigma=DEFAULT_SIGMA):
    if sigma <= 0:
        raise ValueError("sigma must be > 0")
    j_star, k_star = part_cells(grid, gt)
    j = np.arange(grid.spec.n_w, dtype=np.float64)
    k = np.arange(grid.spec.n_l, dtype=np.float64)
    dj = (j[None, :] - j_star[:, None]) ** 2  # (K, n_w)
    dk = (k[None, :] - k_star[:, None]) ** 2  # (K, n_l)
    maps = np.exp(-(dj[:, :, None] + dk[:, None, :]) / sigma ** 2)
    return PartConfidenceMaps(maps, sigma)


def soft_argmax(conf, temperature=DEFAULT_TEMPERATURE):
    """Expected (j, k) under weights ``c * exp(c / T)`` for one (n_w, n_l) map.

    The extra factor ``c`` suppresses the flat floor of near-zero cells.
    Returns ``None`` for an all-zero map.
    """
    if temperature <= 0:
        raise ValueError("temperature must be > 0")
    conf = np.clip(np.asarray(conf, dtype=np.float64), 0.0, None)
    peak = conf.max()
    if not peak > 0:
        return None
    w = conf * np.exp((conf - peak) / temperature)
    total = w.sum()
    j = np.arange(conf.shape[0], dtype=np.float64)
    k = np.arange(conf.shape[1], dtype=np.float64)
    return float(w.sum(axis=1) @ j / total), float(w.sum(axis=0) @ k / total)


def decode(maps, grid, temperature=DEFAULT_TEMPERATURE):
    K = maps.n_parts
    coords = np.empty((K, 2))
    weights = np.zeros(K)
    empty = np.zeros(K, dtype=bool)
    center = np.array([grid.roi.x, grid.roi.z])
    for m in range(K):
        jk = soft_argmax(maps.maps[m], temperature)
        if jk is None:
            coords[m] = center
            empty[m] = True
            continue
        local = grid.cell_to_object(np.array([0.0, jk[0], jk[1]]))
        local[1] = 0.0
        cam = grid.object_to_camera(local)
        coords[m] = cam[[0, 2]]
        weights[m] = float(np.clip(maps.maps[m].max(), 0.0, 1.0))
    return DecodedParts(coords, weights, empty)


def _as_array(m):
    return m.maps if isinstance(m, PartConfidenceMaps) else np.asarray(m, dtype=np.float64)


def conf_loss(pred, gt):
    p, g = _as_array(pred), _as_array(gt)
    if p.shape != g.shape:
        raise ValueError(f"shape mismatch: {p.shape} vs {g.shape}")
    return float(np.mean((p - g) ** 2))


def smooth_l1(diff, beta=1.0):
    a = np.abs(diff)
    return np.where(a < beta, 0.5 * a ** 2 / beta, a - 0.5 * beta)


def coord_loss(pred, gt, beta=1.0):
    p = pred.coords_xz if isinstance(pred, DecodedParts) else np.asarray(pred, dtype=np.float64)
    g = gt.coords_xz if isinstance(gt, DecodedParts) else np.asarray(gt, dtype=np.float64)
    if p.shape != g.shape:
        raise ValueError(f"shape mismatch: {p.shape} vs {g.shape}")
    return float(np.mean(smooth_l1(p - g, beta)))


def focal_fg_loss(pred_prob, labels, alpha=0.25, gamma=2.0, eps=FOCAL_EPS):
    """Focal loss over foreground/background candidates, normalised by the foreground count."""
    lab = getattr(labels, "labels", labels)
    lab = np.asarray(lab)
    p = np.clip(np.asarray(pred_prob, dtype=np.float64), eps, 1.0 - eps)
    if p.shape != lab.shape:
        raise ValueError(f"shape mismatch: {p.shape} vs {lab.shape}")
    fg = lab == FOREGROUND
    bg = lab == BACKGROUND
    loss = -alpha * (1.0 - p[fg]) ** gamma * np.log(p[fg])
    loss_bg = -(1.0 - alpha) * p[bg] ** gamma * np.log(1.0 - p[bg])
    norm = max(int(fg.sum()), 1)
    return float((loss.sum() + loss_bg.sum()) / norm)


V_A = "V-A"
V_S = "V-S"


def total_loss(variant, l_conf, l_coord, l_fg=None):
    if variant == V_S:
        return l_conf + l_coord
    if variant == V_A:
        if l_fg is None:
            raise ValueError("the V-A variant needs the foreground term")
        return l_conf + l_coord + l_fg
    raise ValueError(f"unknown variant {variant!r}")


def peak_floor(sigma):
    """Lowest possible peak value of an encoded in-lattice part."""
    return math.exp(-0.5 / sigma ** 2)
