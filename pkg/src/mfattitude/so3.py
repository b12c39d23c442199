"""Lie-group primitives for SO(3).

Rotations are plain ``(3, 3)`` numpy arrays and rotation vectors are ``(3,)``
arrays (axis times angle, radians).
"""
from __future__ import annotations

from typing import NamedTuple

import numpy as np

SMALL_ANGLE = 1e-6


class NotSkew(ValueError):
    """Raised when ``vee`` is given a matrix that is not skew-symmetric."""


class ProperSvd(NamedTuple):
    """``m = u @ diag(s) @ v.T`` with ``u, v`` in SO(3) and ``s1 >= s2 >= |s3|``."""

    u: np.ndarray
    s: np.ndarray
    v: np.ndarray

    def matrix(self) -> np.ndarray:
        return (self.u * self.s) @ self.v.T


def hat(v) -> np.ndarray:
    """Skew matrix such that ``hat(v) @ y == cross(v, y)``."""
    x, y, z = np.asarray(v, dtype=float)
    return np.array([[0.0, -z, y], [z, 0.0, -x], [-y, x, 0.0]])


def vee(m, tol: float = 1e-9) -> np.ndarray:
    m = np.asarray(m, dtype=float)
    if np.linalg.norm(m + m.T) >= tol:
        raise NotSkew(f"matrix is not skew-symmetric (|M + M^T| = {np.linalg.norm(m + m.T):.3g})")
    return np.array([m[2, 1], m[0, 2], m[1, 0]])


def is_rotation(r, tol: float = 1e-10) -> bool:
    r = np.asarray(r, dtype=float)
    if r.shape != (3, 3) or not np.all(np.isfinite(r)):
        return False
    return bool(np.linalg.norm(r.T @ r - np.eye(3)) < tol and abs(np.linalg.det(r) - 1.0) < tol)


def exp_so3(v) -> np.ndarray:
    """Rodrigues formula with a second-order Taylor branch near zero."""
    v = np.asarray(v, dtype=float)
    theta = np.sqrt(v @ v)
    k = hat(v)
    if theta < SMALL_ANGLE:
        return np.eye(3) + k + 0.5 * (k @ k)
    return np.eye(3) + (np.sin(theta) / theta) * k + ((1.0 - np.cos(theta)) / theta**2) * (k @ k)


def exp_so3_batch(v: np.ndarray) -> np.ndarray:
    """Vectorized ``exp_so3`` over an ``(n, 3)`` array, returns ``(n, 3, 3)``."""
    v = np.asarray(v, dtype=float)
    theta = np.linalg.norm(v, axis=-1)
    small = theta < SMALL_ANGLE
    safe = np.where(small, 1.0, theta)
    a = np.where(small, 1.0 - theta**2 / 6.0, np.sin(safe) / safe)
    b = np.where(small, 0.5 - theta**2 / 24.0, (1.0 - np.cos(safe)) / safe**2)
    k = np.zeros(v.shape[:-1] + (3, 3))
    k[..., 0, 1] = -v[..., 2]
    k[..., 0, 2] = v[..., 1]
    k[..., 1, 0] = v[..., 2]
    k[..., 1, 2] = -v[..., 0]
    k[..., 2, 0] = -v[..., 1]
    k[..., 2, 1] = v[..., 0]
    kk = k @ k
    return np.eye(3) + a[..., None, None] * k + b[..., None, None] * kk


def log_so3(r) -> np.ndarray:
    """Rotation vector of ``r`` with norm in ``[0, pi]``.

    Near angle pi the axis is read from the column of ``sym(R) - cos(theta) I``
    with the largest diagonal entry, so the result is deterministic.
    """
    r = np.asarray(r, dtype=float)
    cos_t = np.clip(0.5 * (np.trace(r) - 1.0), -1.0, 1.0)
    w = np.array([r[2, 1] - r[1, 2], r[0, 2] - r[2, 0], r[1, 0] - r[0, 1]])
    theta = np.arccos(cos_t)
    if theta < SMALL_ANGLE:
        return 0.5 * (1.0 + theta**2 / 6.0) * w
    if np.pi - theta > 1e-3:
        return theta / (2.0 * np.sin(theta)) * w
    # sym(R) - cos(theta) I = (1 - cos(theta)) a a^T
    b = 0.5 * (r + r.T) - cos_t * np.eye(3)
    i = int(np.argmax(np.diag(b)))
    axis = b[:, i] / np.linalg.norm(b[:, i])
    if axis @ w < 0.0:
        axis = -axis
    return theta * axis


def rotation_angle(r) -> float:
    """Geodesic angle of ``r`` from the identity, radians."""
    return float(np.arccos(np.clip(0.5 * (np.trace(r) - 1.0), -1.0, 1.0)))


def _fix_ties(u, s, v, rtol=1e-12):
    """Within blocks of equal singular values pick the factors closest to the standard basis."""
    tol = rtol * max(1.0, s[0])
    start = 0
    while start < 3:
        stop = start + 1
        while stop < 3 and s[start] - s[stop] <= tol:
            stop += 1
        if stop - start > 1:
            blk = slice(start, stop)
            p, _, wt = np.linalg.svd(u[blk, blk].T)
            q = p @ wt  # orthogonal polar factor of u_b^T E_b
            u[:, blk] = u[:, blk] @ q
            v[:, blk] = v[:, blk] @ q
        start = stop


def proper_svd(m) -> ProperSvd:
    """SVD with both factors in SO(3); the sign of the smallest singular value absorbs the reflection.

    Repeated singular values leave the factors undetermined; a deterministic
    choice (closest to the standard basis) is returned.
    """
    m = np.asarray(m, dtype=float)
    u, s, vt = np.linalg.svd(m)
    v = vt.T.copy()
    # Values at rounding level of the largest one are exact zeros (numerical rank).
    s = np.where(s <= 3.0 * np.finfo(float).eps * s[0], 0.0, s)
    _fix_ties(u, s, v)
    if np.linalg.det(u) < 0.0:
        u[:, 2] = -u[:, 2]
        s[2] = -s[2]
    if np.linalg.det(v) < 0.0:
        v[:, 2] = -v[:, 2]
        s[2] = -s[2]
    return ProperSvd(u, s + 0.0, v)  # + 0.0 drops negative zeros


def dexp_inv(c, a) -> np.ndarray:
    """Inverse of the derivative of ``exp`` at ``c`` applied to ``a``.

    Closed form of ``sum_k B_k / k! ad_c^k a`` on so(3).
    """
    c = np.asarray(c, dtype=float)
    a = np.asarray(a, dtype=float)
    theta = np.sqrt(c @ c)
    ca = np.cross(c, a)
    if theta < SMALL_ANGLE:
        coef = 1.0 / 12.0 + theta**2 / 720.0
    else:
        half = 0.5 * theta
        coef = (1.0 - half / np.tan(half)) / theta**2
    return a - 0.5 * ca + coef * np.cross(c, ca)


def random_rotation(rng: np.random.Generator, n: int | None = None) -> np.ndarray:
    """Haar-uniform rotation(s) from normalized Gaussian quaternions."""
    q = rng.standard_normal((1 if n is None else n, 4))
    q /= np.linalg.norm(q, axis=1, keepdims=True)
    r = quat_to_matrix(q)
    return r[0] if n is None else r


def quat_to_matrix(q: np.ndarray) -> np.ndarray:
    """Scalar-first unit quaternions ``(n, 4)`` to rotation matrices ``(n, 3, 3)``."""
    w, x, y, z = q[:, 0], q[:, 1], q[:, 2], q[:, 3]
    r = np.empty((q.shape[0], 3, 3))
    r[:, 0, 0] = 1 - 2 * (y * y + z * z)
    r[:, 0, 1] = 2 * (x * y - w * z)
    r[:, 0, 2] = 2 * (x * z + w * y)
    r[:, 1, 0] = 2 * (x * y + w * z)
    r[:, 1, 1] = 1 - 2 * (x * x + z * z)
    r[:, 1, 2] = 2 * (y * z - w * x)
    r[:, 2, 0] = 2 * (x * z - w * y)
    r[:, 2, 1] = 2 * (y * z + w * x)
    r[:, 2, 2] = 1 - 2 * (x * x + y * y)
    return r
