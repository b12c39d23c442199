"""Stochastic and deterministic attitude observability.

The stochastic analysis works on the proper singular values ``D`` of ``E[R]``:
the minimum-mean-square-error attitude is unique exactly when ``d2 + d3 > 0``,
and the measure ``rho = det(tr(D) I - D)`` is positive in that case only.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple, Optional

import numpy as np

from .matrix_fisher import MatrixFisher, MomentTriple, moment_triple, normalizer
from .so3 import ProperSvd, exp_so3, hat, proper_svd

CASES = ("unique", "ambiguous_1d", "ambiguous_2d", "uniform_3d")


class MmseClassification(NamedTuple):
    case: str
    representative: np.ndarray
    ambiguity_axis: Optional[np.ndarray] = None


def classify_mmse(ebar, tol: float = 1e-8) -> MmseClassification:
    """Structure of the set of attitudes maximizing ``tr(R^T E[R])``.

    * ``d2 + d3 > 0``: unique, ``U V^T``.
    * ``d2 + d3 = 0``, ``d1 > d2``: the circle ``U exp(theta e1^) V^T``; the
      axis ``U e1`` is reported in inertial coordinates.
    * ``d1 = d2 = -d3 > 0``: a two-dimensional family.
    * ``D = 0``: every attitude.
    """
    svd = proper_svd(ebar)
    d = svd.s
    rep = svd.u @ svd.v.T
    if d[1] + d[2] > tol:
        return MmseClassification("unique", rep)
    if d[0] - d[1] > tol:
        return MmseClassification("ambiguous_1d", rep, svd.u[:, 0].copy())
    if d[0] > tol:
        return MmseClassification("ambiguous_2d", rep)
    return MmseClassification("uniform_3d", rep)


def off_diagonal_block(s, d) -> np.ndarray:
    """``sum_i s_i e_i^ D e_i^``."""
    dm = np.diag(d)
    return sum(s[i] * hat(np.eye(3)[i]) @ dm @ hat(np.eye(3)[i]) for i in range(3))


def hessian_log_c(s, step: float = 1e-4) -> np.ndarray:
    """``d^2 log c / ds^2`` by central differences of the adaptive moments."""
    s = np.asarray(s, dtype=float)
    h = np.empty((3, 3))
    for j in range(3):
        e = np.zeros(3)
        e[j] = step
        h[:, j] = (normalizer(s + e).d - normalizer(s - e).d) / (2.0 * step)
    return 0.5 * (h + h.T)


def fim_full(svd: ProperSvd, moments: MomentTriple, d2_logc=None) -> np.ndarray:
    """Fisher information of ``(U, S, V)`` in the coordinates ``(u, s, v)``.

    ``u`` and ``v`` perturb ``U exp(u^)`` and ``V exp(v^)``.
    """
    s = np.asarray(svd.s, dtype=float)
    d = np.asarray(moments.d, dtype=float)
    if d2_logc is None:
        d2_logc = hessian_log_c(s)
    ds = np.diag(d * s)
    a = np.trace(ds) * np.eye(3) - ds
    m = off_diagonal_block(s, d)
    out = np.zeros((9, 9))
    out[:3, :3] = a
    out[6:, 6:] = a
    out[3:6, 3:6] = d2_logc
    out[:3, 6:] = m
    out[6:, :3] = m.T
    return 0.5 * (out + out.T)


def score(mf: MatrixFisher, r, d=None) -> np.ndarray:
    """Gradient of the log density with respect to ``(u, s, v)``; ``r`` may be a stack."""
    if d is None:
        d = normalizer(mf.s).d
    s = mf.s
    q = np.einsum("ji,...jk,kl->...il", mf.u, np.asarray(r, dtype=float), mf.v)
    qs = q * s
    sq_t = s[:, None] * np.swapaxes(q, -1, -2)
    a = qs - sq_t
    b = np.swapaxes(q, -1, -2) * s - s[:, None] * q
    vee = lambda m: np.stack([m[..., 2, 1], m[..., 0, 2], m[..., 1, 0]], axis=-1)
    diag = np.diagonal(q, axis1=-2, axis2=-1)
    return np.concatenate([vee(a), diag - d, vee(b)], axis=-1)


def fim_mean_attitude(mf: MatrixFisher) -> np.ndarray:
    """Fisher information for the mean attitude ``U V^T`` in ``eta = u - v``."""
    d = normalizer(mf.s).d
    return _fim_mean(mf.s, d)


def _fim_mean(s, d):
    # Both factors share a sign; clamp rounding noise at zero.
    pair = lambda i, j: max(0.0, (d[i] + d[j]) * (s[i] + s[j]))
    return 0.5 * np.diag([pair(1, 2), pair(2, 0), pair(0, 1)])


def observability_matrix(d) -> np.ndarray:
    d = np.asarray(d, dtype=float)
    return np.sum(d) * np.eye(3) - np.diag(d)


def rho_from_d(d) -> float:
    d = np.asarray(d, dtype=float)
    pair = np.maximum(0.0, d[[0, 2, 1]] + d[[1, 0, 2]])
    return float(np.prod(pair))


@dataclass(frozen=True)
class ObservabilityReport:
    d: np.ndarray
    o_matrix: np.ndarray
    rho: float
    fim_mean: np.ndarray
    classification: MmseClassification

    def csv_row(self, t: float = 0.0) -> list:
        return [t, *map(float, self.d), self.rho, *map(float, np.diag(self.fim_mean)), self.classification.case]


CSV_HEADER = ["t", "d1", "d2", "d3", "rho", "fim1", "fim2", "fim3", "case"]


def report(ebar_or_mf, tol: float = 1e-8) -> ObservabilityReport:
    """Bundle ``D``, ``tr(D) I - D``, ``rho``, the mean-attitude information and the MMSE case.

    Given a raw first moment, the information term uses the matrix Fisher
    distribution with that moment (the maximum-likelihood fit); it is zero when
    ``D = 0``.
    """
    if isinstance(ebar_or_mf, MatrixFisher):
        mf = ebar_or_mf
        d = normalizer(mf.s).d
        ebar = (mf.u * d) @ mf.v.T
        s = mf.s
    else:
        from .matrix_fisher import solve_concentration

        ebar = np.asarray(ebar_or_mf, dtype=float)
        d = proper_svd(ebar).s
        s = solve_concentration(d)
    return ObservabilityReport(
        d=np.asarray(d, dtype=float),
        o_matrix=observability_matrix(d),
        rho=rho_from_d(d),
        fim_mean=_fim_mean(s, d),
        classification=classify_mmse(ebar, tol),
    )


def _lie_functions(kind: str, ref, order: int):
    """Coefficient matrices ``M`` such that each Lie derivative equals ``R^T M a`` or ``M R b``."""
    mats = [np.eye(3)]
    out = list(mats)
    basis = [hat(e) for e in np.eye(3)]
    for _ in range(order):
        nxt = []
        for m in mats:
            for eh in basis:
                nxt.append(-eh @ m if kind == "inertial_ref" else m @ eh)
        out.extend(nxt)
        mats = nxt
    return out


def deterministic_rank(r0, kind: str, ref, step: float = 1e-5, cutoff: float = 1e-7, order: int = 2) -> int:
    """Rank of the differentials of the output and its Lie derivatives at ``r0``.

    The dynamics are ``R' = eta^ R`` with ``eta`` ranging over the basis
    vectors; the output is ``x = R^T a`` for ``"inertial_ref"`` and ``y = R b`` for
    ``"body_ref"``.  Differentials are taken in the chart ``exp(theta^) r0`` by
    central differences.
    """
    if kind not in ("inertial_ref", "body_ref"):
        raise ValueError(f"unknown measurement kind {kind!r}")
    r0 = np.asarray(r0, dtype=float)
    ref = np.asarray(ref, dtype=float)
    mats = _lie_functions(kind, ref, order)

    def outputs(r):
        if kind == "inertial_ref":
            return np.concatenate([r.T @ m @ ref for m in mats])
        return np.concatenate([m @ r @ ref for m in mats])

    cols = []
    for e in np.eye(3):
        plus = outputs(exp_so3(step * e) @ r0)
        minus = outputs(exp_so3(-step * e) @ r0)
        cols.append((plus - minus) / (2.0 * step))
    sv = np.linalg.svd(np.column_stack(cols), compute_uv=False)
    return int(np.sum(sv > cutoff))
