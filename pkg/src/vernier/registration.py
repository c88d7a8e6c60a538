"""Confidence-weighted rigid registration of box parts on the ground plane."""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np

from .box_geom import Pose2D, apply_pose2d, parts_of


class DegenerateRegistrationError(ValueError):
    pass


class RankDeficientWarning(UserWarning):
    pass


# Below this weighted spread (m^2) the rotation is unobservable.
_SPREAD_EPS = 1e-18


@dataclass(frozen=True)
class RegistrationProblem:
    source: np.ndarray  # (K, 2) proposal parts, x-z
    target: np.ndarray  # (K, 2) decoded parts, x-z
    weights: np.ndarray  # (K,)

    def __post_init__(self):
        src = np.asarray(self.source, dtype=np.float64).reshape(-1, 2)
        dst = np.asarray(self.target, dtype=np.float64).reshape(-1, 2)
        w = np.asarray(self.weights, dtype=np.float64).reshape(-1)
        if not (src.shape == dst.shape and w.shape[0] == src.shape[0]):
            raise ValueError("source, target and weights must agree in K")
        if not np.all(np.isfinite(w)) or np.any(w < 0):
            raise ValueError("weights must be finite and non-negative")
        object.__setattr__(self, "source", src)
        object.__setattr__(self, "target", dst)
        object.__setattr__(self, "weights", w)

    def objective(self, pose):
        resid = pose.apply(self.source) - self.target
        return float(np.sum(self.weights * np.sum(resid ** 2, axis=1)))


def solve(problem):
    """Closed-form minimiser of ``sum_i w_i |R s_i + T - t_i|^2`` over proper rotations.

    For 2x2 cross-covariance ``M = sum w s t^T`` the SVD-with-reflection-fix
    solution reduces to a single angle, ``atan2(M01 - M10, M00 + M11)``,
    which is always a proper rotation.
    """
    w = problem.weights
    total = w.sum()
    if not total > 0:
        raise DegenerateRegistrationError("total weight must be positive")
    src_c = w @ problem.source / total
    dst_c = w @ problem.target / total
    s = problem.source - src_c
    t = problem.target - dst_c

    spread = float(w @ np.sum(s ** 2, axis=1))
    if spread <= _SPREAD_EPS:
        warnings.warn("weighted source points coincide; returning pure translation",
                      RankDeficientWarning, stacklevel=2)
        return Pose2D(np.eye(2), dst_c - src_c)

    M = (s * w[:, None]).T @ t
    # Standard-orientation angle; the pose stores the yaw-convention rotation.
    phi = math.atan2(M[0, 1] - M[1, 0], M[0, 0] + M[1, 1])
    c, sn = math.cos(phi), math.sin(phi)
    rot = np.array([[c, -sn], [sn, c]])
    return Pose2D(rot, dst_c - rot @ src_c)


def refine(proposal, decoded):
    """Move ``proposal`` rigidly onto the decoded parts. Size and height pass through."""
    if decoded.weights.shape[0] != 9:
        raise ValueError("decoded parts must hold the 9 box parts")
    if not decoded.weights.sum() > 0:
        warnings.warn("all decoded parts have zero weight; proposal left unchanged",
                      RankDeficientWarning, stacklevel=2)
        return proposal
    source = parts_of(proposal)[:, [0, 2]]
    pose = solve(RegistrationProblem(source, decoded.coords_xz, decoded.weights))
    return apply_pose2d(proposal, pose)


def refine_center_only(proposal, decoded):
    """Translation-only update from the decoded center part (the K=1 baseline)."""
    if not decoded.weights[0] > 0:
        return proposal
    x, z = decoded.coords_xz[0]
    return proposal.replace(x=float(x), z=float(z))
