"""Single-direction measurements and their conjugate matrix Fisher updates.

An inertial reference ``a`` is observed in the body frame as ``x ~ vMF(R^T a, kappa)``;
a body-fixed reference ``b`` is observed in the inertial frame as
``y ~ vMF(R b, kappa)``.  Both likelihoods are exponential in ``tr(F^T R)`` so the
posterior stays matrix Fisher.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .matrix_fisher import MatrixFisher

KINDS = ("inertial_ref", "body_ref")


def _unit(v, name, tol=1e-9):
    v = np.asarray(v, dtype=float)
    if abs(np.linalg.norm(v) - 1.0) > tol:
        raise ValueError(f"{name} must be a unit vector (norm {np.linalg.norm(v):.6g})")
    return v


@dataclass(frozen=True)
class DirectionMeasurement:
    """A direction reading of a known reference vector.

    For ``kind == "inertial_ref"`` the reference is ``a`` (inertial) and the
    reading ``x`` is in the body frame; for ``"body_ref"`` the reference is ``b``
    (body) and the reading ``y`` is in the inertial frame.
    """

    kind: str
    reference: np.ndarray
    reading: np.ndarray
    kappa: float
    t: float = 0.0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown measurement kind {self.kind!r}")
        if not self.kappa > 0:
            raise ValueError("kappa must be positive")
        object.__setattr__(self, "reference", _unit(self.reference, "reference"))
        object.__setattr__(self, "reading", _unit(self.reading, "reading"))


def sample_vmf(mu, kappa: float, rng: np.random.Generator, n=None) -> np.ndarray:
    """von Mises-Fisher draws on the unit sphere.

    The cosine to ``mu`` is drawn by inverting its CDF
    ``(exp(kappa w) - exp(-kappa)) / (2 sinh kappa)``; the azimuth is uniform.
    """
    mu = _unit(mu, "mu", tol=1e-6)
    m = 1 if n is None else n
    u = rng.random(m)
    phi = 2.0 * np.pi * rng.random(m)
    # log(u + (1 - u) e^{-2k}) computed without overflow for large kappa
    w = 1.0 + np.log(u + (1.0 - u) * np.exp(-2.0 * kappa)) / kappa
    w = np.clip(w, -1.0, 1.0)
    rad = np.sqrt(np.maximum(0.0, 1.0 - w * w))
    helper = np.eye(3)[int(np.argmin(np.abs(mu)))]
    e1 = np.cross(mu, helper)
    e1 /= np.linalg.norm(e1)
    e2 = np.cross(mu, e1)
    out = w[:, None] * mu + rad[:, None] * (np.cos(phi)[:, None] * e1 + np.sin(phi)[:, None] * e2)
    out /= np.linalg.norm(out, axis=1, keepdims=True)
    return out[0] if n is None else out


def sample_inertial(r_true, a, kappa: float, rng: np.random.Generator, n=None) -> np.ndarray:
    """Body-frame reading(s) of the inertial reference ``a``."""
    return sample_vmf(np.asarray(r_true).T @ np.asarray(a, dtype=float), kappa, rng, n)


def sample_body(r_true, b, kappa: float, rng: np.random.Generator, n=None) -> np.ndarray:
    """Inertial-frame reading(s) of the body-fixed reference ``b``."""
    return sample_vmf(np.asarray(r_true) @ np.asarray(b, dtype=float), kappa, rng, n)


def vmf_log_likelihood(kind: str, r, reference, reading, kappa: float):
    """Log of the vMF measurement density, for one rotation or a stack."""
    r = np.asarray(r, dtype=float)
    reference = np.asarray(reference, dtype=float)
    reading = np.asarray(reading, dtype=float)
    if kind == "inertial_ref":
        dot = np.einsum("i,...ij,j->...", reference, r, reading)
    elif kind == "body_ref":
        dot = np.einsum("i,...ij,j->...", reading, r, reference)
    else:
        raise ValueError(f"unknown measurement kind {kind!r}")
    # log(kappa / (4 pi sinh kappa)), stable for large kappa
    log_norm = np.log(kappa / (2.0 * np.pi)) - kappa - np.log1p(-np.exp(-2.0 * kappa))
    return kappa * dot + log_norm


def update_inertial(prior: MatrixFisher, a, x, kappa: float) -> MatrixFisher:
    """Posterior after reading ``x`` (body frame) of the inertial reference ``a``: ``F + kappa a x^T``."""
    return MatrixFisher(prior.f + kappa * np.outer(a, x))


def update_body(prior: MatrixFisher, b, y, kappa: float) -> MatrixFisher:
    """Posterior after reading ``y`` (inertial frame) of the body reference ``b``: ``F + kappa y b^T``."""
    return MatrixFisher(prior.f + kappa * np.outer(y, b))


def update(prior: MatrixFisher, meas: DirectionMeasurement) -> MatrixFisher:
    if meas.kind == "inertial_ref":
        return update_inertial(prior, meas.reference, meas.reading, meas.kappa)
    return update_body(prior, meas.reference, meas.reading, meas.kappa)
