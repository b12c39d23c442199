"""Multiplicative extended Kalman filter baseline.

The error is a body-frame rotation vector ``delta`` with ``R = R_hat exp(delta^)``.
Direction readings are linearized on the tangent plane of the predicted
direction with covariance ``(1 / kappa) I_2``, the small-dispersion limit of the
von Mises-Fisher density.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .measurement import DirectionMeasurement
from .so3 import exp_so3, hat

INITIAL_SIGMA = 1e4  # rad, stands in for an unknown attitude


class SingularInnovationCov(np.linalg.LinAlgError):
    pass


@dataclass(frozen=True)
class MekfState:
    mean: np.ndarray
    cov: np.ndarray
    frame_of_error: str = "body"

    @classmethod
    def unknown(cls, sigma: float = INITIAL_SIGMA) -> "MekfState":
        return cls(np.eye(3), sigma**2 * np.eye(3))

    def cov_in(self, frame: str) -> np.ndarray:
        """Error covariance expressed in ``"body"`` or ``"inertial"`` coordinates."""
        if frame == self.frame_of_error:
            return self.cov
        if frame == "inertial":
            return self.mean @ self.cov @ self.mean.T
        if frame == "body":
            return self.mean.T @ self.cov @ self.mean
        raise ValueError(f"unknown frame {frame!r}")


def _sym(p):
    return 0.5 * (p + p.T)


def mekf_predict(state: MekfState, w, frame: str, h: float, gamma: float) -> MekfState:
    """Propagate with a gyro sample ``w`` resolved in ``frame``.

    With a body-frame rate the error transition is ``exp(-h w^)``; an inertial
    rate leaves the body-frame error unchanged.  Process noise ``h gamma^2 I``
    is isotropic so it is the same in either frame.
    """
    if h <= 0:
        raise ValueError("h must be positive")
    w = np.asarray(w, dtype=float)
    if frame == "body":
        step = exp_so3(h * w)
        mean = state.mean @ step
        phi = step.T
    elif frame == "inertial":
        mean = exp_so3(h * w) @ state.mean
        phi = np.eye(3)
    else:
        raise ValueError(f"unknown frame {frame!r}")
    cov = _sym(phi @ state.cov @ phi.T + h * gamma * gamma * np.eye(3))
    return MekfState(mean, cov, state.frame_of_error)


def _tangent_basis(mu):
    helper = np.eye(3)[int(np.argmin(np.abs(mu)))]
    e1 = np.cross(mu, helper)
    e1 /= np.linalg.norm(e1)
    return np.column_stack([e1, np.cross(mu, e1)])


def mekf_update(state: MekfState, meas: DirectionMeasurement, cond_limit: float = 1e14) -> MekfState:
    """Linearized update with one direction reading, Joseph-form covariance."""
    r = state.mean
    if meas.kind == "inertial_ref":
        pred = r.T @ meas.reference
        jac = hat(pred)  # d(R^T a) / d delta for R = R_hat exp(delta^)
    else:
        pred = r @ meas.reference
        jac = -r @ hat(meas.reference)
    basis = _tangent_basis(pred)
    z = basis.T @ (meas.reading - pred)
    hm = basis.T @ jac
    rm = np.eye(2) / meas.kappa
    s = hm @ state.cov @ hm.T + rm
    if not np.all(np.isfinite(s)) or np.linalg.cond(s) > cond_limit:
        raise SingularInnovationCov("innovation covariance is numerically singular")
    k = np.linalg.solve(s, hm @ state.cov).T
    mean = r @ exp_so3(k @ z)
    ikh = np.eye(3) - k @ hm
    cov = _sym(ikh @ state.cov @ ikh.T + k @ rm @ k.T)
    return MekfState(mean, cov, state.frame_of_error)
