"""Independent numerical oracles shared by the tests."""
import functools

import numpy as np

from mfattitude.so3 import quat_to_matrix


def _rz(a):
    c, s = np.cos(a), np.sin(a)
    z, o = np.zeros_like(a), np.ones_like(a)
    return np.stack([np.stack([c, -s, z], -1), np.stack([s, c, z], -1), np.stack([z, z, o], -1)], -2)


def _ry(b):
    c, s = np.cos(b), np.sin(b)
    z, o = np.zeros_like(b), np.ones_like(b)
    return np.stack([np.stack([c, z, s], -1), np.stack([z, o, z], -1), np.stack([-s, z, c], -1)], -2)


@functools.lru_cache(maxsize=4)
def euler_grid(n: int = 96):
    """Rotations ``Rz(a) Ry(b) Rz(g)`` with weights summing to 1 under the Haar measure.

    The two periodic angles use the trapezoidal rule; ``cos(b)`` uses Gauss-Legendre.
    """
    ang = 2 * np.pi * np.arange(n) / n
    x, wx = np.polynomial.legendre.leggauss(n)
    a, b, g = np.meshgrid(ang, np.arccos(x), ang, indexing="ij")
    w = np.broadcast_to(wx[None, :, None], a.shape) / (2.0 * n * n)
    rots = _rz(a.ravel()) @ _ry(b.ravel()) @ _rz(g.ravel())
    return rots, w.ravel().copy()


def euler_normalizer(s, n: int = 96) -> float:
    """``int exp(tr(diag(s) R)) dR`` on the Euler grid."""
    rots, w = euler_grid(n)
    diag = np.diagonal(rots, axis1=1, axis2=2)
    return float(np.sum(w * np.exp(diag @ np.asarray(s, dtype=float))))


def sphere_areas(verts, faces) -> np.ndarray:
    """Spherical area attached to each vertex: a third of each adjacent triangle."""
    a, b, c = verts[faces[:, 0]], verts[faces[:, 1]], verts[faces[:, 2]]
    num = np.abs(np.einsum("ij,ij->i", a, np.cross(b, c)))
    den = 1 + np.einsum("ij,ij->i", a, b) + np.einsum("ij,ij->i", b, c) + np.einsum("ij,ij->i", c, a)
    tri = 2 * np.arctan2(num, den)
    out = np.zeros(len(verts))
    for k in range(3):
        np.add.at(out, faces[:, k], tri / 3)
    return out


def super_fibonacci(n: int, start: int = 0, stop: int | None = None) -> np.ndarray:
    """Points ``start:stop`` of an ``n``-point super-Fibonacci spiral of rotations (quasi-uniform)."""
    phi = np.sqrt(2.0)
    psi = 1.533751168755204288118041
    s = np.arange(start, n if stop is None else min(stop, n)) + 0.5
    r, big_r = np.sqrt(s / n), np.sqrt(1.0 - s / n)
    a, b = 2 * np.pi * s / phi, 2 * np.pi * s / psi
    q = np.column_stack([r * np.sin(a), r * np.cos(a), big_r * np.sin(b), big_r * np.cos(b)])
    return quat_to_matrix(q)


def grid_argmax(moments, n: int, chunk: int = 1_000_000) -> np.ndarray:
    """For each matrix ``E`` in ``moments`` the spiral point maximizing ``tr(R^T E)``."""
    cols = np.stack([np.asarray(e, dtype=float).ravel() for e in moments], axis=1)
    best_val = np.full(cols.shape[1], -np.inf)
    best_r = np.zeros((cols.shape[1], 3, 3))
    for start in range(0, n, chunk):
        g = super_fibonacci(n, start, start + chunk)
        vals = g.reshape(len(g), 9) @ cols
        idx = np.argmax(vals, axis=0)
        top = vals[idx, np.arange(cols.shape[1])]
        better = top > best_val
        best_val[better] = top[better]
        best_r[better] = g[idx[better]]
    return best_r
