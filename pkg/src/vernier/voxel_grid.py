"""The dense candidate lattice built inside a 3D region of interest.

Candidates are indexed ``[i, j, k]`` over height, width and length. Index 0
on each axis sits at the left-back-top corner of the RoI: length offsets grow
with ``k``, height offsets grow with ``i`` and width offsets shrink with ``j``.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property
from fractions import Fraction

import numpy as np

from .box_geom import Box3D, homography_of, to_object_frame

FOREGROUND = 1
BACKGROUND = 0
IGNORE = -1


@dataclass(frozen=True)
class GridSpec:
    n_l: int = 192
    n_h: int = 32
    n_w: int = 128
    d_l: float = 0.03
    d_h: float = 0.10
    d_w: float = 0.03

    def __post_init__(self):
        if min(self.n_l, self.n_h, self.n_w) < 1:
            raise ValueError("grid counts must be >= 1")
        if min(self.d_l, self.d_h, self.d_w) <= 0:
            raise ValueError("grid resolutions must be > 0")

    @property
    def extent(self):
        """RoI size (L, H, W) in meters."""
        return (self.n_l * self.d_l, self.n_h * self.d_h, self.n_w * self.d_w)

    @property
    def n_candidates(self):
        return self.n_l * self.n_h * self.n_w

    @property
    def shape(self):
        return (self.n_h, self.n_w, self.n_l)


def lattice_offsets(spec):
    """Object-frame candidate offsets, shape (n_h, n_w, n_l, 3)."""
    L, H, W = spec.extent
    xs = -L / 2.0 + np.arange(spec.n_l) * spec.d_l
    ys = -H / 2.0 + np.arange(spec.n_h) * spec.d_h
    zs = W / 2.0 - np.arange(spec.n_w) * spec.d_w
    out = np.empty(spec.shape + (3,))
    out[..., 0] = xs[None, None, :]
    out[..., 1] = ys[:, None, None]
    out[..., 2] = zs[None, :, None]
    return out


@dataclass(frozen=True)
class VernierGrid:
    roi: Box3D  # proposal pose with the RoI extent as its size
    spec: GridSpec

    @cached_property
    def candidates(self):
        """Camera-frame candidates, shape (n_h, n_w, n_l, 3); built once on first access."""
        cands = self.object_to_camera(lattice_offsets(self.spec))
        cands.flags.writeable = False
        return cands

    @property
    def homography(self):
        return homography_of(self.roi)

    def object_to_cell(self, local):
        """Continuous (i, j, k) cell coordinates of object-frame points."""
        local = np.asarray(local, dtype=np.float64)
        L, H, W = self.spec.extent
        k = (local[..., 0] + L / 2.0) / self.spec.d_l
        i = (local[..., 1] + H / 2.0) / self.spec.d_h
        j = (W / 2.0 - local[..., 2]) / self.spec.d_w
        return np.stack([i, j, k], axis=-1)

    def cell_to_object(self, ijk):
        ijk = np.asarray(ijk, dtype=np.float64)
        L, H, W = self.spec.extent
        x = -L / 2.0 + ijk[..., 2] * self.spec.d_l
        y = -H / 2.0 + ijk[..., 0] * self.spec.d_h
        z = W / 2.0 - ijk[..., 1] * self.spec.d_w
        return np.stack([x, y, z], axis=-1)

    def camera_to_cell(self, points):
        return self.object_to_cell(to_object_frame(points, self.roi))

    def object_to_camera(self, local):
        local = np.asarray(local, dtype=np.float64)
        hom = self.homography
        return local @ hom[:3, :3].T + hom[:3, 3]


def build_grid(proposal, spec=None):
    spec = spec or GridSpec()
    roi = Box3D(proposal.x, proposal.y, proposal.z, *_roi_size(spec), proposal.theta)
    return VernierGrid(roi=roi, spec=spec)


def _roi_size(spec):
    L, H, W = spec.extent
    return H, W, L


@dataclass(frozen=True)
class OccupancyLabels:
    labels: np.ndarray  # int8, values FOREGROUND / BACKGROUND / IGNORE

    @property
    def n_foreground(self):
        return int(np.count_nonzero(self.labels == FOREGROUND))

    @property
    def n_background(self):
        return int(np.count_nonzero(self.labels == BACKGROUND))


# Slack for points that sit on a lattice plane up to float rounding.
_QUANT_EPS = 1e-9


def quantize(grid, points):
    """Integer cell indices for camera-frame points plus an in-RoI mask."""
    cell = grid.camera_to_cell(points)
    idx = np.floor(cell + _QUANT_EPS).astype(np.int64)
    shape = np.array(grid.spec.shape)
    inside = np.all((idx >= 0) & (idx < shape), axis=-1)
    return idx, inside


def label_occupancy(grid, cloud_cam, gt, margin=0.0):
    """Foreground / background / ignore labels for every candidate.

    A cell hit by a point is foreground. A candidate strictly outside ``gt``
    (grown by ``margin``) is background. Everything else is ignored.
    """
    local = to_object_frame(grid.candidates.reshape(-1, 3), gt)
    outside = (
        (np.abs(local[:, 0]) > gt.l / 2.0 + margin)
        | (np.abs(local[:, 1]) > gt.h / 2.0 + margin)
        | (np.abs(local[:, 2]) > gt.w / 2.0 + margin)
    ).reshape(grid.spec.shape)
    labels = np.where(outside, BACKGROUND, IGNORE).astype(np.int8)

    pts = np.asarray(getattr(cloud_cam, "xyz", cloud_cam), dtype=np.float64).reshape(-1, 3)
    if len(pts):
        idx, inside = quantize(grid, pts)
        idx = idx[inside]
        labels[idx[:, 0], idx[:, 1], idx[:, 2]] = FOREGROUND
    return OccupancyLabels(labels)


def voxel_budget_uniform(range_l, range_w, range_h, delta):
    if min(range_l, range_w, range_h, delta) <= 0:
        raise ValueError("ranges and voxel size must be positive")
    # Decimal inputs like 0.05 are taken at face value, not as binary floats.
    exact = [Fraction(repr(float(v))) for v in (range_l, range_w, range_h, delta)]
    return round(exact[0] * exact[1] * exact[2] / exact[3] ** 3)


def voxel_budget_snvc(spec, n_proposals, global_range=(60.0, 60.0, 4.0), delta_g=0.2):
    if n_proposals < 0:
        raise ValueError("n_proposals must be >= 0")
    return spec.n_candidates * int(n_proposals) + voxel_budget_uniform(*global_range, delta_g)
