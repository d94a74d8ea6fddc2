"""Projective camera model and its Direct Linear Transform estimate."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import DegenerateConfiguration

MIN_POINTS = 6
# null-space and planarity guards
_SINGULAR_RATIO = 1e-8
_PLANAR_RATIO = 1e-6


@dataclass(frozen=True)
class ProjectionModel:
    """3x4 camera matrix mapping scene metres to cube pixels (x = sample, y = line).

    Stored with unit Frobenius norm and a non-negative bottom-right entry.
    """

    P: np.ndarray

    @classmethod
    def normalized(cls, P) -> "ProjectionModel":
        P = np.asarray(P, dtype=np.float64).reshape(3, 4)
        P = P / np.linalg.norm(P)
        pivot = P[2, 3]
        if pivot == 0.0:
            flat = P.ravel()
            pivot = flat[np.flatnonzero(flat)[0]] if flat.any() else 1.0
        if pivot < 0:
            P = -P
        return cls(P)

    def homogeneous(self, xyz: np.ndarray) -> np.ndarray:
        xyz = np.atleast_2d(np.asarray(xyz, dtype=np.float64))
        return xyz @ self.P[:, :3].T + self.P[:, 3]

    def project(self, xyz: np.ndarray) -> np.ndarray:
        """Pixel coordinates; points on the principal plane come out as inf."""
        h = self.homogeneous(xyz)
        w = h[:, 2:3]
        with np.errstate(divide="ignore", invalid="ignore"):
            uv = np.where(np.abs(w) > 1e-300, h[:, :2] / w, np.inf)
        return uv

    def reprojection_errors(self, uv: np.ndarray, xyz: np.ndarray) -> np.ndarray:
        d = self.project(xyz) - np.atleast_2d(uv)
        with np.errstate(invalid="ignore"):
            e = np.sqrt((d * d).sum(axis=1))
        return np.where(np.isfinite(e), e, np.inf)

    def inlier_mask(self, uv: np.ndarray, xyz: np.ndarray, tau: float) -> tuple[np.ndarray, np.ndarray]:
        """Reprojection errors, and which pairs are inliers: error below ``tau``
        with the scene point in front of the camera."""
        errs = self.reprojection_errors(uv, xyz)
        return errs, (errs < tau) & self.in_front(xyz)

    @property
    def is_affine(self) -> bool:
        return bool(np.linalg.norm(self.P[2, :3]) <= 1e-12 * np.linalg.norm(self.P))

    def depth(self, xyz: np.ndarray) -> np.ndarray:
        """Signed distance along the viewing direction (larger = farther).

        Projective cameras use ``sign(det M) * w / |m3|``. Affine cameras have
        no centre; depth is then measured along the projection direction
        ``m1 x m2`` oriented downwards (nadir viewing).
        """
        xyz = np.atleast_2d(np.asarray(xyz, dtype=np.float64))
        M = self.P[:, :3]
        if not self.is_affine:
            w = self.homogeneous(xyz)[:, 2]
            return np.sign(np.linalg.det(M)) * w / np.linalg.norm(M[2])
        d = np.cross(M[0], M[1])
        d /= np.linalg.norm(d)
        nz = np.flatnonzero(np.abs(d) > 1e-12)
        lead = 2 if abs(d[2]) > 1e-12 else nz[0]
        if d[lead] > 0:
            d = -d
        return xyz @ d

    def in_front(self, xyz: np.ndarray) -> np.ndarray:
        """Points on the visible side of a projective camera (always true for affine ones)."""
        xyz = np.atleast_2d(np.asarray(xyz, dtype=np.float64))
        if self.is_affine:
            return np.ones(len(xyz), dtype=bool)
        return self.depth(xyz) > 0

    def rank(self) -> int:
        return int(np.linalg.matrix_rank(self.P))

    def to_list(self) -> list[float]:
        return [float(v) for v in self.P.ravel()]


def _normalizer(pts: np.ndarray, target_rms: float, centered: np.ndarray | None = None) -> np.ndarray:
    dim = pts.shape[1]
    c = pts.mean(axis=0)
    if centered is None:
        centered = pts - c
    rms = np.sqrt(np.einsum("ij,ij->", centered, centered) / len(pts))
    if not rms > 0:
        raise DegenerateConfiguration("all points coincide")
    s = target_rms / rms
    T = np.eye(dim + 1)
    T[:dim, :dim] *= s
    T[:dim, dim] = -s * c
    return T


def fit_dlt(uv: np.ndarray, xyz: np.ndarray) -> ProjectionModel:
    """Least-squares DLT over n >= 6 pixel / scene point pairs."""
    uv = np.asarray(uv, dtype=np.float64).reshape(-1, 2)
    xyz = np.asarray(xyz, dtype=np.float64).reshape(-1, 3)
    n = len(uv)
    if n < MIN_POINTS or len(xyz) != n:
        raise DegenerateConfiguration(f"DLT needs at least {MIN_POINTS} correspondences, got {n}")
    centered = xyz - xyz.mean(axis=0)
    ev = np.linalg.eigvalsh(centered.T @ centered)  # squared singular values, ascending
    if not ev[2] > 0 or ev[0] < (_PLANAR_RATIO ** 2) * ev[2]:
        raise DegenerateConfiguration("scene points are coplanar or collinear")

    T = _normalizer(uv, np.sqrt(2.0))
    U = _normalizer(xyz, np.sqrt(3.0), centered)
    x = uv * T[0, 0] + T[:2, 2]
    X = np.empty((n, 4))
    X[:, :3] = centered * U[0, 0]
    X[:, 3] = 1.0

    A = np.zeros((2 * n, 12))
    A[0::2, 0:4] = X
    A[0::2, 8:12] = -x[:, 0:1] * X
    A[1::2, 4:8] = X
    A[1::2, 8:12] = -x[:, 1:2] * X
    _, s, Vt = np.linalg.svd(A, full_matrices=False)
    if s[10] <= _SINGULAR_RATIO * s[0]:
        raise DegenerateConfiguration("DLT system has a multi-dimensional null space")
    Pn = Vt[-1].reshape(3, 4)
    P = np.linalg.inv(T) @ Pn @ U
    return ProjectionModel.normalized(P)


def correspondence_arrays(corrs) -> tuple[np.ndarray, np.ndarray]:
    """``(uv, xyz)`` arrays from a sequence of correspondences or an array pair."""
    if isinstance(corrs, tuple) and len(corrs) == 2:
        return np.asarray(corrs[0], float).reshape(-1, 2), np.asarray(corrs[1], float).reshape(-1, 3)
    uv = np.array([c.pixel for c in corrs], dtype=np.float64).reshape(-1, 2)
    xyz = np.array([c.xyz for c in corrs], dtype=np.float64).reshape(-1, 3)
    return uv, xyz


def estimate_projection_dlt(corrs) -> ProjectionModel:
    """Fit a projection to correspondences (objects with ``pixel`` and ``xyz``)."""
    return fit_dlt(*correspondence_arrays(corrs))
