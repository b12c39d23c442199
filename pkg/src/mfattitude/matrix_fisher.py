"""Matrix Fisher distribution on SO(3).

Densities are taken with respect to the Haar measure normalized to unit
volume, so the uniform distribution (``F = 0``) has density 1 and ``c(0) = 1``.

The normalizing constant is evaluated through the one-dimensional Bessel
integral

    c(S) = int_{-1}^{1} 1/2 I0((s_i - s_j)(1 - u)/2) I0((s_i + s_j)(1 + u)/2) exp(s_k u) du

for any cyclic ``(i, j, k)``.  Differentiating under the integral with respect
to ``s_k`` gives the single-index kernel ``u/2 I0 I0 exp(s_k u)``, which is what
``normalizer`` uses for each partial after cycling ``k`` over all three
indices.  All exponentials are scaled by ``exp(-L)`` with ``L`` the maximum of
``tr(S Q)`` over SO(3) so values stay finite for large concentrations.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np
from scipy import integrate
from scipy.special import ive

from .so3 import ProperSvd, hat, proper_svd, quat_to_matrix

CYCLES = ((1, 2, 0), (2, 0, 1), (0, 1, 2))  # (i, j, k), zero based
QUAD_RTOL = 1e-9


class QuadratureFailure(RuntimeError):
    pass


class NotAMoment(ValueError):
    pass


class NoConvergence(RuntimeError):
    pass


class Normalizer(NamedTuple):
    """``log c(S)`` and the moments ``d_i = (dc/ds_i) / c``.

    ``c`` and ``dc`` are exposed as properties; they overflow to ``inf`` for very
    concentrated distributions while ``log_c`` and ``d`` stay finite.
    """

    log_c: float
    d: np.ndarray

    @property
    def c(self) -> float:
        return float(np.exp(self.log_c))

    @property
    def dc(self) -> np.ndarray:
        return self.c * self.d


def _offset(s) -> float:
    s1, s2, s3 = s
    return max(s1 + s2 + s3, s1 - s2 - s3, -s1 + s2 - s3, -s1 - s2 + s3)


def _kernel_parts(s, k_cycle, u, offset):
    i, j, k = k_cycle
    alpha = s[i] + s[j]
    beta = s[i] - s[j]
    xb = 0.5 * beta * (1.0 - u)
    xa = 0.5 * alpha * (1.0 + u)
    expo = np.abs(xb) + np.abs(xa) + s[k] * u - offset
    return xb, xa, 0.5 * np.exp(expo)


def normalizer(s, rtol: float = QUAD_RTOL) -> Normalizer:
    """Normalizing constant and its partials by adaptive quadrature.

    Raises:
        QuadratureFailure: if the adaptive rule cannot reach ``rtol``.
    """
    s = np.asarray(s, dtype=float)
    if not np.all(np.isfinite(s)):
        raise ValueError("concentration must be finite")
    off = _offset(s)
    scale = max(1.0, float(np.max(np.abs(s))))
    w = min(0.5, 20.0 / scale)
    pts = [-1.0 + w, 1.0 - w]

    def run(fun):
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", integrate.IntegrationWarning)
            val, err, info = integrate.quad(
                fun, -1.0, 1.0, points=pts, epsabs=0.0, epsrel=max(rtol * 1e-2, 50 * np.finfo(float).eps), limit=400, full_output=1
            )[:3]
        return val, err

    c_vals = []
    d = np.empty(3)
    for cyc in CYCLES:
        def base(u, cyc=cyc):
            xb, xa, e = _kernel_parts(s, cyc, u, off)
            return e * ive(0, xb) * ive(0, xa)

        c0, e0 = run(base)
        c1, e1 = run(lambda u: u * base(u))
        if not c0 > 0.0 or e0 > rtol * c0 or e1 > rtol * c0:
            raise QuadratureFailure(f"quadrature did not reach rtol={rtol:g} for s={s}")
        c_vals.append(c0)
        d[cyc[2]] = c1 / c0
    return Normalizer(off + float(np.log(np.mean(c_vals))), d)


# Graded composite Gauss-Legendre mesh, symmetric about zero and refined
# geometrically toward both endpoints where the integrands develop layers of
# width ~1/|s|.
def _graded_mesh(n_nodes: int = 12, ratio: float = 0.2, levels: int = 12):
    x, w = np.polynomial.legendre.leggauss(n_nodes)
    dist = ratio ** np.arange(levels)
    edges = np.concatenate([1.0 - dist, [1.0]])
    nodes, weights = [], []
    for a, b in zip(edges[:-1], edges[1:]):
        nodes.append(0.5 * (b - a) * x + 0.5 * (a + b))
        weights.append(0.5 * (b - a) * w)
    pos = np.concatenate(nodes)
    pw = np.concatenate(weights)
    return np.concatenate([-pos[::-1], pos]), np.concatenate([pw[::-1], pw])


_U, _W = _graded_mesh()


class Moments(NamedTuple):
    """Fast-path evaluation: ``log c``, moments ``d``, pair sums ``d_i + d_j`` and ``Hess log c``."""

    log_c: float
    d: np.ndarray
    pair: np.ndarray  # pair[k] = d_i + d_j for the cycle whose free index is k
    hess: np.ndarray


def moments(s) -> Moments:
    """Graded-mesh evaluation of ``log c``, its gradient and Hessian.

    Used on hot paths (Newton iterations, filtering).  Validated against the
    adaptive ``normalizer`` in the test suite.
    """
    s = np.asarray(s, dtype=float)
    off = _offset(s)
    u = _U
    idx = np.array(CYCLES)
    si, sj, sk = s[idx[:, 0]], s[idx[:, 1]], s[idx[:, 2]]
    xb = 0.5 * (si - sj)[:, None] * (1.0 - u)
    xa = 0.5 * (si + sj)[:, None] * (1.0 + u)
    w = 0.5 * _W * np.exp(np.abs(xb) + np.abs(xa) + sk[:, None] * u - off)
    args = np.stack([xb, xa])
    b0 = ive(0, args)
    b1 = ive(1, args)
    p0, q0 = b0
    p1, q1 = b1
    pq = w * p0 * q0
    c_each = pq.sum(axis=1)
    c = c_each.mean()
    ck = (pq * u).sum(axis=1)
    ckk = (pq * u * u).sum(axis=1)
    t_b = w * u * 0.5 * (1.0 - u) * p1 * q0
    t_a = w * u * 0.5 * (1.0 + u) * p0 * q1
    cik = (t_b + t_a).sum(axis=1)
    cjk = (t_a - t_b).sum(axis=1)
    pair = (w * (1.0 + u) * p0 * q1).sum(axis=1)

    grad = np.empty(3)
    hc = np.zeros((3, 3))
    for n, (i, j, k) in enumerate(CYCLES):
        grad[k] = ck[n] / c_each[n]
        hc[k, k] = ckk[n] / c_each[n]
        hc[i, k] += 0.5 * cik[n] / c_each[n]
        hc[k, i] += 0.5 * cik[n] / c_each[n]
        hc[j, k] += 0.5 * cjk[n] / c_each[n]
        hc[k, j] += 0.5 * cjk[n] / c_each[n]
    hess = hc - np.outer(grad, grad)
    return Moments(off + float(np.log(c)), grad, pair / c_each, hess)


@dataclass(frozen=True)
class MatrixFisher:
    """Matrix Fisher distribution with parameter ``f`` and its cached proper SVD."""

    f: np.ndarray
    svd: ProperSvd = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        f = np.array(self.f, dtype=float)
        f.setflags(write=False)
        object.__setattr__(self, "f", f)
        if self.svd is None:
            object.__setattr__(self, "svd", proper_svd(f))

    @classmethod
    def from_usv(cls, u, s, v) -> "MatrixFisher":
        """Build from factors, keeping ``u`` and ``v`` exactly as given."""
        u = np.asarray(u, dtype=float)
        v = np.asarray(v, dtype=float)
        s = np.asarray(s, dtype=float)
        return cls((u * s) @ v.T, ProperSvd(u, s, v))

    @property
    def u(self) -> np.ndarray:
        return self.svd.u

    @property
    def s(self) -> np.ndarray:
        return self.svd.s

    @property
    def v(self) -> np.ndarray:
        return self.svd.v


class MomentTriple(NamedTuple):
    """Proper SVD of ``E[R]``: ``E[R] = u diag(d) v^T``."""

    d: np.ndarray
    u: np.ndarray
    v: np.ndarray


def moment_triple(mf: MatrixFisher) -> MomentTriple:
    return MomentTriple(normalizer(mf.s).d, mf.u, mf.v)


def log_density(mf: MatrixFisher, r) -> np.ndarray:
    r = np.asarray(r, dtype=float)
    log_c = normalizer(mf.s).log_c
    return np.einsum("ij,...ij->...", mf.f, r) - log_c


def density(mf: MatrixFisher, r) -> np.ndarray:
    """``exp(tr(F^T R)) / c(S)``; accepts one rotation or a stack."""
    out = np.exp(log_density(mf, r))
    return float(out) if np.ndim(out) == 0 else out


def first_moment(mf: MatrixFisher, fast: bool = False) -> np.ndarray:
    d = moments(mf.s).d if fast else normalizer(mf.s).d
    return (mf.u * d) @ mf.v.T


def mean_attitude(mf: MatrixFisher) -> np.ndarray:
    return mf.u @ mf.v.T


ZERO_MOMENT_TOL = 1e-13  # |d_i| below this is rounding noise


def check_moment(d) -> None:
    """Raise ``NotAMoment`` unless ``d`` lies strictly inside the attainable set.

    For proper singular values the diagonal of ``E[Q]`` ranges over the
    tetrahedron spanned by the diagonals of the four diagonal rotations; the
    binding face is ``d1 + d2 - d3 = 1``.
    """
    d = np.asarray(d, dtype=float)
    if d[0] >= 1.0 or d[0] + d[1] - d[2] >= 1.0:
        raise NotAMoment(f"proper singular values {d} are not the moment of any distribution")


def _pairs(s):
    """``p[k] = s_i + s_j`` over the pair not containing ``k``."""
    return s[[1, 2, 0]] + s[[2, 0, 1]]


def _from_pairs(p):
    return 0.5 * (p[[1, 2, 0]] + p[[2, 0, 1]] - p)


def _concentrated_pairs(d):
    """Small-dispersion approximation ``1 / (s_i + s_j) = 1 + d_k - d_i - d_j``, or ``None``."""
    gap = 1.0 + d - d[[1, 2, 0]] - d[[2, 0, 1]]
    return 1.0 / gap if np.all(gap > 1e-12) else None


def _candidates(d, s0, anchor):
    p = _concentrated_pairs(d)
    if p is not None and anchor is not None:
        # Rescale the approximation by its error at a nearby solved point.
        s_a, d_a = anchor
        p_a = _concentrated_pairs(d_a)
        if p_a is not None and np.all(_pairs(s_a) > 0):
            yield _from_pairs(p * _pairs(s_a) / p_a)
    if s0 is not None:
        yield np.asarray(s0, dtype=float)
    if p is not None:
        yield _from_pairs(p)
    yield 3.0 * d


def solve_concentration(d, s0=None, anchor=None, tol: float = 1e-12, max_iter: int = 200) -> np.ndarray:
    """Solve ``(dc/ds_i)/c = d_i`` for ``s`` by damped Newton iteration.

    When ``d2`` and ``d3`` are both at rounding level the solution has
    ``s2 = s3 = 0`` exactly, and only ``s1`` is solved for.

    Args:
        d: target proper singular values of the first moment.
        s0: optional warm start.
        anchor: optional ``(s, d)`` pair known to satisfy the equation nearby;
            used to correct the small-dispersion starting guess.

    Raises:
        NotAMoment: if ``d`` is outside the attainable set.
        NoConvergence: after ``max_iter`` iterations.
    """
    d = np.asarray(d, dtype=float)
    check_moment(d)
    if not np.any(d):
        return np.zeros(3)
    free = np.ones(3, dtype=bool)
    if abs(d[1]) < ZERO_MOMENT_TOL and abs(d[2]) < ZERO_MOMENT_TOL:
        free[1:] = False
        d = np.array([d[0], 0.0, 0.0])
    s, m, rn = None, None, np.inf
    for cand in _candidates(d, s0, anchor):
        cand = np.where(free, cand, 0.0)
        mc = moments(cand)
        rc = np.linalg.norm((mc.d - d)[free])
        if rc < rn:
            s, m, rn = cand, mc, rc
        if rn < 1e-3:
            break
    r = (m.d - d)[free]
    for _ in range(max_iter):
        if rn < tol:
            return s
        step = np.zeros(3)
        step[free] = np.linalg.solve(m.hess[np.ix_(free, free)], r)
        t = 1.0
        while True:
            s_new = s - t * step
            m_new = moments(s_new)
            r_new = (m_new.d - d)[free]
            rn_new = np.linalg.norm(r_new)
            if rn_new < rn or t < 1e-10:
                break
            t *= 0.5
        if rn_new >= rn:
            # Stalled at floating point resolution.
            if rn < 1e3 * tol:
                return s
            raise NoConvergence(f"Newton stalled at residual {rn:.3g} for d={d}")
        s, m, r, rn = s_new, m_new, r_new, rn_new
    raise NoConvergence(f"no convergence after {max_iter} iterations (residual {rn:.3g})")


def mle_from_moment(ebar) -> MatrixFisher:
    """Matrix Fisher parameter whose first moment is ``ebar``."""
    svd = proper_svd(ebar)
    s = solve_concentration(svd.s)
    return MatrixFisher.from_usv(svd.u, s, svd.v)


def acceptance_rate(s) -> float:
    """Expected acceptance of the uniform-proposal rejection sampler, ``c(S) exp(-tr S)``."""
    s = np.asarray(s, dtype=float)
    return float(np.exp(normalizer(s).log_c - s.sum()))


def sample(mf: MatrixFisher, rng: np.random.Generator, n: int) -> np.ndarray:
    """Draw ``n`` rotations by rejection from the uniform distribution.

    The acceptance rate is ``c(S) exp(-tr S)``, which decays roughly like
    ``(s1 s2 s3)^(-1/2)`` for concentrated distributions, so this is meant for
    moderate concentrations and test oracles.
    """
    if n < 1:
        raise ValueError("n must be positive")
    s = mf.s
    rate = max(acceptance_rate(s), 1e-7)
    out = []
    have = 0
    while have < n:
        batch = int(min(2e6, max(1000, 1.2 * (n - have) / rate)))
        q = rng.standard_normal((batch, 4))
        q /= np.linalg.norm(q, axis=1, keepdims=True)
        w, x, y, z = q.T
        diag = np.stack([1 - 2 * (y * y + z * z), 1 - 2 * (x * x + z * z), 1 - 2 * (x * x + y * y)], axis=1)
        log_acc = diag @ s - s.sum()
        keep = np.log(rng.random(batch)) < log_acc
        out.append(q[keep])
        have += int(keep.sum())
    q = np.concatenate(out)[:n]
    return mf.u @ quat_to_matrix(q) @ mf.v.T


def _frame_with_axis(direction, axis_index: int) -> np.ndarray:
    """Rotation ``Q0`` with ``Q0 e_i = direction``."""
    x = np.asarray(direction, dtype=float)
    x = x / np.linalg.norm(x)
    helper = np.eye(3)[int(np.argmin(np.abs(x)))]
    y = np.cross(x, helper)
    y /= np.linalg.norm(y)
    z = np.cross(x, y)
    base = np.column_stack([x, y, z])
    # A cyclic shift of the columns keeps the determinant at +1.
    return np.roll(base, axis_index - 1, axis=1)


def marginal_axis_density(mf: MatrixFisher, axis_index: int, direction, grid_n: int = 360) -> np.ndarray:
    """Density on the unit sphere of the ``axis_index``-th column of ``R``.

    Integrates the rotation density over the residual angle about
    ``direction`` with the periodic trapezoidal rule.  ``direction`` may be a
    single unit vector or an ``(n, 3)`` array.  Integrates to 1 over the sphere.
    """
    if axis_index not in (1, 2, 3):
        raise ValueError("axis_index must be 1, 2 or 3")
    dirs = np.atleast_2d(np.asarray(direction, dtype=float))
    i = axis_index - 1
    e = np.eye(3)[i]
    ehat = hat(e)
    psi = 2.0 * np.pi * np.arange(grid_n) / grid_n
    log_c = normalizer(mf.s).log_c
    out = np.empty(len(dirs))
    for n, x in enumerate(dirs):
        q0 = _frame_with_axis(x, axis_index)
        a = np.sum(mf.f * (q0 @ (np.eye(3) + ehat @ ehat)))
        b = np.sum(mf.f * (q0 @ ehat))
        cc = -np.sum(mf.f * (q0 @ ehat @ ehat))
        expo = a + cc * np.cos(psi) + b * np.sin(psi)
        top = expo.max()
        out[n] = np.exp(top - log_c + np.log(np.mean(np.exp(expo - top)))) / (4.0 * np.pi)
    return out[0] if np.ndim(direction) == 1 else out


def icosphere(level: int = 3):
    """Vertices ``(n, 3)`` and triangular faces ``(m, 3)`` of a subdivided icosahedron."""
    t = (1.0 + 5.0**0.5) / 2.0
    verts = [(-1, t, 0), (1, t, 0), (-1, -t, 0), (1, -t, 0), (0, -1, t), (0, 1, t),
             (0, -1, -t), (0, 1, -t), (t, 0, -1), (t, 0, 1), (-t, 0, -1), (-t, 0, 1)]
    faces = [(0, 11, 5), (0, 5, 1), (0, 1, 7), (0, 7, 10), (0, 10, 11), (1, 5, 9), (5, 11, 4),
             (11, 10, 2), (10, 7, 6), (7, 1, 8), (3, 9, 4), (3, 4, 2), (3, 2, 6), (3, 6, 8),
             (3, 8, 9), (4, 9, 5), (2, 4, 11), (6, 2, 10), (8, 6, 7), (9, 8, 1)]
    verts = [np.array(v, dtype=float) / np.linalg.norm(v) for v in verts]
    for _ in range(level):
        cache = {}

        def mid(a, b):
            key = (min(a, b), max(a, b))
            if key not in cache:
                m = verts[a] + verts[b]
                verts.append(m / np.linalg.norm(m))
                cache[key] = len(verts) - 1
            return cache[key]

        new_faces = []
        for a, b, c in faces:
            ab, bc, ca = mid(a, b), mid(b, c), mid(c, a)
            new_faces += [(a, ab, ca), (b, bc, ab), (c, ca, bc), (ab, bc, ca)]
        faces = new_faces
    return np.array(verts), np.array(faces)


def sphere_density_rows(mf: MatrixFisher, level: int = 3, grid_n: int = 360):
    """Rows ``(axis_index, x, y, z, density)`` for all three axes on an icosphere."""
    verts, _ = icosphere(level)
    rows = []
    for axis in (1, 2, 3):
        dens = marginal_axis_density(mf, axis, verts, grid_n)
        rows.extend((axis, *v, p) for v, p in zip(verts, dens))
    return rows
