"""Camera observation model and per-feature information contributions.

A frame observes feature ``f`` through the collinearity residual

    z = U (R R_c)^T (x - y_f) + eta,   U = skew(u),   eta ~ N(0, sigma^2 I)

where ``u`` is the unit bearing to the feature.  Stacking the visible frames
of a horizon gives ``z = F x + E y_f + eta``; marginalizing ``y_f`` yields the
additive information term ``Hf`` and the vector map ``Bf``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import DegenerateObservationError, InvalidInputError

TRIANGULATION_COND_MAX = 1e12
MIN_FEATURE_DISTANCE = 1e-9


def skew(u) -> np.ndarray:
    u = np.asarray(u, dtype=float)
    return np.array([
        [0.0, -u[2], u[1]],
        [u[2], 0.0, -u[0]],
        [-u[1], u[0], 0.0],
    ])


def _rz(a):
    c, s = np.cos(a), np.sin(a)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def _ry(b):
    c, s = np.cos(b), np.sin(b)
    return np.array([[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]])


def _rx(g):
    c, s = np.cos(g), np.sin(g)
    return np.array([[1.0, 0.0, 0.0], [0.0, c, -s], [0.0, s, c]])


def euler_zyx(alpha: float, beta: float, gamma: float) -> np.ndarray:
    """Rotation ``Rz(alpha) @ Ry(beta) @ Rx(gamma)``."""
    return _rz(alpha) @ _ry(beta) @ _rx(gamma)


def is_rotation(R, atol: float = 1e-10) -> bool:
    R = np.asarray(R, dtype=float)
    return (
        R.shape == (3, 3)
        and np.allclose(R.T @ R, np.eye(3), atol=atol)
        and abs(np.linalg.det(R) - 1.0) < atol
    )


@dataclass(frozen=True)
class CameraRig:
    """Camera mounted on the robot; optical axis is the camera-frame +z."""

    R_c: np.ndarray = field(default_factory=lambda: np.eye(3))
    x_c: np.ndarray = field(default_factory=lambda: np.zeros(3))
    sigma: float = 0.1
    fov_half_angles: tuple[float, float] = (np.deg2rad(45.0), np.deg2rad(35.0))

    def __post_init__(self):
        object.__setattr__(self, "R_c", np.asarray(self.R_c, dtype=float))
        object.__setattr__(self, "x_c", np.asarray(self.x_c, dtype=float).reshape(3))
        if not is_rotation(self.R_c):
            raise InvalidInputError("R_c must be a rotation matrix")
        if not self.sigma > 0:
            raise InvalidInputError("sigma must be positive")
        for a in self.fov_half_angles:
            if not 0 < a <= np.pi / 2:
                raise InvalidInputError("FOV half-angles must lie in (0, pi/2]")

    def center(self, x, R) -> np.ndarray:
        return np.asarray(x, dtype=float) + np.asarray(R) @ self.x_c

    def direction(self, x, R, y) -> np.ndarray:
        """Camera-frame vector from the optical center to ``y``."""
        return (np.asarray(R) @ self.R_c).T @ (np.asarray(y, dtype=float) - self.center(x, R))


@dataclass(frozen=True)
class Feature:
    id: int
    y: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "y", np.asarray(self.y, dtype=float).reshape(3))
        if not np.all(np.isfinite(self.y)):
            raise InvalidInputError(f"feature {self.id} has non-finite coordinates")


@dataclass(frozen=True)
class FeatureContribution:
    feature_id: int
    mask: np.ndarray        # (T+1,) bool
    F: np.ndarray           # (3 n_f, n)
    E: np.ndarray           # (3 n_f, 3)
    Hf: np.ndarray          # (n, n)
    Bf: np.ndarray          # (n, 3 n_f)
    triangulable: bool
    W: np.ndarray | None = None   # (3 n_f - 3, 3 n_f) whitened projector onto E's left null space

    @property
    def n_f(self) -> int:
        return int(np.count_nonzero(self.mask))

    @property
    def dim(self) -> int:
        return self.Hf.shape[0]

    @property
    def G(self) -> np.ndarray:
        """Whitened, feature-free measurement rows: ``Hf = G^T G``."""
        return self.W @ self.F


def bearing(rig: CameraRig, x, R, y) -> np.ndarray:
    d = rig.direction(x, R, y)
    dist = np.linalg.norm(d)
    if dist < MIN_FEATURE_DISTANCE:
        raise DegenerateObservationError("feature coincides with the camera center")
    return d / dist


def observe(rig: CameraRig, x, R, f: Feature, u_meas=None, noise=None, rng=None) -> np.ndarray:
    """Collinearity measurement ``U (R R_c)^T (x - y_f) + eta``.

    Without ``u_meas`` the bearing is simulated exactly from ``x``; without
    ``noise`` it is drawn from ``rng`` (or zero if ``rng`` is None).
    """
    if u_meas is None:
        u_meas = bearing(rig, x, R, f.y)
    elif np.linalg.norm(np.asarray(f.y) - rig.center(x, R)) < MIN_FEATURE_DISTANCE:
        raise DegenerateObservationError("feature coincides with the camera center")
    if noise is None:
        noise = rng.normal(0.0, rig.sigma, 3) if rng is not None else np.zeros(3)
    U = skew(u_meas)
    return U @ (np.asarray(R) @ rig.R_c).T @ (np.asarray(x, dtype=float) - f.y) + noise


def visible(rig: CameraRig, x, R, f: Feature) -> bool:
    d = rig.direction(x, R, f.y)
    if d[2] <= 0:
        return False
    h, v = rig.fov_half_angles
    # closed FOV pyramid, tolerant to round-off on the boundary
    eps = 1e-12
    return bool(
        np.arctan2(abs(d[0]), d[2]) <= h + eps and np.arctan2(abs(d[1]), d[2]) <= v + eps
    )


def visibility_matrix(rig: CameraRig, positions, orientations, ys) -> np.ndarray:
    """Vectorized :func:`visible` over frames x features -> bool ``(T+1, M)``."""
    positions = np.asarray(positions, dtype=float)
    orientations = np.asarray(orientations, dtype=float)
    ys = np.asarray(ys, dtype=float).reshape(-1, 3)
    h, v = rig.fov_half_angles
    out = np.zeros((positions.shape[0], ys.shape[0]), dtype=bool)
    for k, (x, R) in enumerate(zip(positions, orientations)):
        Rw = R @ rig.R_c
        d = (ys - rig.center(x, R)) @ Rw
        z = d[:, 2]
        with np.errstate(divide="ignore", invalid="ignore"):
            ok = (z > 0) & (np.arctan2(np.abs(d[:, 0]), z) <= h + 1e-12) & (
                np.arctan2(np.abs(d[:, 1]), z) <= v + 1e-12
            )
        out[k] = ok
    return out


def _empty(fid: int, mask: np.ndarray, n: int, n_f: int) -> FeatureContribution:
    return FeatureContribution(
        feature_id=fid, mask=mask, F=np.zeros((3 * n_f, n)), E=np.zeros((3 * n_f, 3)),
        Hf=np.zeros((n, n)), Bf=np.zeros((n, 3 * n_f)), triangulable=False,
    )


def contribution_from_bearings(
    rig: CameraRig,
    orientations: Sequence[np.ndarray],
    bearings: dict[int, np.ndarray],
    feature_id: int,
) -> FeatureContribution:
    """Stack frames ``k -> unit bearing`` into ``F``, ``E``, ``Hf``, ``Bf``.

    ``orientations`` covers all ``T+1`` frames; only keys of ``bearings`` are
    treated as visible.
    """
    T1 = len(orientations)
    n = 3 * T1
    mask = np.zeros(T1, dtype=bool)
    frames = sorted(bearings)
    mask[frames] = True
    n_f = len(frames)
    if n_f == 0:
        return _empty(feature_id, mask, n, 0)

    F = np.zeros((3 * n_f, n))
    E = np.zeros((3 * n_f, 3))
    for row, k in enumerate(frames):
        blk = skew(bearings[k]) @ (np.asarray(orientations[k]) @ rig.R_c).T
        F[3 * row:3 * row + 3, 3 * k:3 * k + 3] = blk
        E[3 * row:3 * row + 3] = -blk
    EtE = E.T @ E
    if np.linalg.cond(EtE) >= TRIANGULATION_COND_MAX:
        out = _empty(feature_id, mask, n, n_f)
        return FeatureContribution(out.feature_id, mask, F, E, out.Hf, out.Bf, False)

    # I - E (E^T E)^{-1} E^T = Q2 Q2^T with Q2 spanning E's left null space, so
    # Hf = G^T G and Bf = G^T W with G = W F, W = Q2^T / sigma.  The Gram form
    # keeps Hf PSD and its null space (common translation) clean in floating point.
    Q, _ = np.linalg.qr(E, mode="complete")
    W = Q[:, 3:].T / rig.sigma
    G = W @ F
    Hf = G.T @ G
    Bf = G.T @ W
    return FeatureContribution(feature_id, mask, F, E, 0.5 * (Hf + Hf.T), Bf, True, W)


def build_contribution(
    rig: CameraRig,
    orientations: Sequence[np.ndarray],
    means: Sequence[np.ndarray],
    f: Feature,
    mask=None,
) -> FeatureContribution:
    """Contribution of ``f`` linearized at the predicted positions ``means``.

    Visibility is forward-simulated at the predicted poses unless ``mask`` is
    given.
    """
    orientations = list(orientations)
    means = np.asarray(means, dtype=float).reshape(-1, 3)
    if len(orientations) != means.shape[0]:
        raise InvalidInputError("need one orientation per predicted position")
    if mask is None:
        mask = [visible(rig, means[k], orientations[k], f) for k in range(len(orientations))]
    bearings = {
        k: bearing(rig, means[k], orientations[k], f.y)
        for k in range(len(orientations)) if mask[k]
    }
    return contribution_from_bearings(rig, orientations, bearings, f.id)
