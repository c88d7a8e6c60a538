"""Synthesize coarse proposals by Gaussian perturbation of ground truth.

Random streams come from numpy's Philox counter-based generator seeded via
``SeedSequence``. Philox output is specified bit-for-bit, so a seed
regenerates the same dataset on any platform.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np

from .box_geom import Box3D
from .confidence_maps import DEFAULT_SIGMA, encode
from .voxel_grid import GridSpec, build_grid

MIN_SIZE = 0.1


@dataclass(frozen=True)
class NoiseSpec:
    sigma_x: float = 0.3
    sigma_y: float = 0.0
    sigma_z: float = 0.3
    sigma_h: float = 0.05
    sigma_w: float = 0.05
    sigma_l: float = 0.05
    sigma_theta: float = math.radians(5.0)

    def __post_init__(self):
        if any(v < 0 for v in self.as_array()):
            raise ValueError("noise sigmas must be >= 0")

    def as_array(self):
        return np.array([self.sigma_x, self.sigma_y, self.sigma_z,
                         self.sigma_h, self.sigma_w, self.sigma_l, self.sigma_theta])

    def to_dict(self):
        return asdict(self)


ZERO_NOISE = NoiseSpec(0, 0, 0, 0, 0, 0, 0)


def make_rng(seed, *spawn_key):
    """Philox generator for ``seed``; ``spawn_key`` derives independent child streams."""
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=tuple(int(k) for k in spawn_key))
    return np.random.Generator(np.random.Philox(ss))


def perturb(gt, spec, rng):
    # Always draw all seven variates so streams stay aligned across specs.
    noise = rng.standard_normal(7) * spec.as_array()
    x, y, z, h, w, l, theta = gt.as_array() + noise
    return Box3D(x, y, z, max(h, MIN_SIZE), max(w, MIN_SIZE), max(l, MIN_SIZE), theta)


def make_training_pair(gt, spec, grid_spec=None, sigma_cells=DEFAULT_SIGMA, rng=None):
    if rng is None:
        raise ValueError("an explicit rng is required")
    proposal = perturb(gt, spec, rng)
    grid = build_grid(proposal, grid_spec or GridSpec())
    return proposal, encode(grid, gt, sigma_cells)
