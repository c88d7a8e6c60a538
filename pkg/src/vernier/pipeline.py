"""Glue for one refinement step: grid, maps, decode, register."""

from __future__ import annotations

from .confidence_maps import DEFAULT_SIGMA, DEFAULT_TEMPERATURE, decode
from .oracle_backend import oracle_predict
from .registration import refine, refine_center_only
from .voxel_grid import GridSpec, build_grid


def refine_with_maps(proposal, maps, grid_spec=None, temperature=DEFAULT_TEMPERATURE,
                     center_only=False):
    grid = build_grid(proposal, grid_spec or GridSpec())
    decoded = decode(maps, grid, temperature)
    if center_only:
        return refine_center_only(proposal, decoded)
    return refine(proposal, decoded)


def oracle_refine(proposal, gt, grid_spec=None, sigma_cells=DEFAULT_SIGMA,
                  temperature=DEFAULT_TEMPERATURE, noise=None, rng=None, dropped=None,
                  iterations=1, center_only=False):
    """Refine ``proposal`` ``iterations`` times against oracle maps of ``gt``."""
    spec = grid_spec or GridSpec()
    box = proposal
    for _ in range(iterations):
        grid = build_grid(box, spec)
        maps = oracle_predict(grid, gt, sigma_cells, noise, rng, dropped)
        decoded = decode(maps, grid, temperature)
        box = refine_center_only(box, decoded) if center_only else refine(box, decoded)
    return box
