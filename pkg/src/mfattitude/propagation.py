"""Uncertainty propagation for the right- and left-trivialized attitude SDEs.

Right trivialization (inertial angular velocity):

    dR = (omega dt + H dW)^ R

Left trivialization (body angular velocity):

    dR = R (Omega dt + H dW)^

both in the Stratonovich sense.  The first moment obeys, to first order in the
step, ``E[R(tau)] = Phi_R E[R(t)]`` and ``E[R(tau)] = E[R(t)] Phi_L``.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .matrix_fisher import MatrixFisher, moments, solve_concentration
from .so3 import exp_so3, exp_so3_batch, hat, log_so3

TRIVIALIZATIONS = ("right", "left")


def _check_triv(triv):
    if triv not in TRIVIALIZATIONS:
        raise ValueError(f"trivialization must be 'right' or 'left', got {triv!r}")


@dataclass(frozen=True)
class AngularVelocitySignal:
    """Sampled angular velocity.

    Attributes:
        frame: ``"inertial"`` (omega) or ``"body"`` (Omega).
        times: strictly increasing sample times, seconds.
        values: ``(n, 3)`` angular velocities, rad/s.
        interpolation: ``"zero_order_hold"`` or ``"linear"``.
    """

    frame: str
    times: np.ndarray
    values: np.ndarray
    interpolation: str = "linear"

    def __post_init__(self):
        t = np.asarray(self.times, dtype=float)
        w = np.asarray(self.values, dtype=float).reshape(len(t), 3)
        if self.frame not in ("inertial", "body"):
            raise ValueError(f"unknown frame {self.frame!r}")
        if self.interpolation not in ("zero_order_hold", "linear"):
            raise ValueError(f"unknown interpolation {self.interpolation!r}")
        if len(t) == 0 or np.any(np.diff(t) <= 0):
            raise ValueError("timestamps must be strictly increasing")
        if not (np.all(np.isfinite(t)) and np.all(np.isfinite(w))):
            raise ValueError("signal must be finite")
        object.__setattr__(self, "times", t)
        object.__setattr__(self, "values", w)

    @classmethod
    def constant(cls, w, frame="inertial", t0=0.0, t1=1.0):
        w = np.asarray(w, dtype=float)
        return cls(frame, np.array([t0, t1]), np.stack([w, w]), "zero_order_hold")

    @classmethod
    def from_function(cls, fun, t0, t1, n, frame="inertial"):
        t = np.linspace(t0, t1, n + 1)
        return cls(frame, t, np.array([fun(x) for x in t]), "linear")

    def __call__(self, t: float) -> np.ndarray:
        ts, ws = self.times, self.values
        if t <= ts[0]:
            return ws[0].copy()
        if t >= ts[-1]:
            return ws[-1].copy()
        k = int(np.searchsorted(ts, t, side="right")) - 1
        if self.interpolation == "zero_order_hold":
            return ws[k].copy()
        a = (t - ts[k]) / (ts[k + 1] - ts[k])
        return (1.0 - a) * ws[k] + a * ws[k + 1]


@dataclass(frozen=True)
class NoiseModel:
    """Diffusion matrix ``H(t)`` in rad/sqrt(s).

    Either ``isotropic_gamma`` (``H = gamma I``) or ``h_matrix``, a callable of
    time returning a 3x3 matrix, must be given.
    """

    isotropic_gamma: Optional[float] = None
    h_matrix: Optional[Callable[[float], np.ndarray]] = None

    def __post_init__(self):
        if (self.isotropic_gamma is None) == (self.h_matrix is None):
            raise ValueError("give exactly one of isotropic_gamma and h_matrix")
        if self.isotropic_gamma is not None and not np.isfinite(self.isotropic_gamma):
            raise ValueError("gamma must be finite")

    def __call__(self, t: float) -> np.ndarray:
        if self.isotropic_gamma is not None:
            return self.isotropic_gamma * np.eye(3)
        return np.asarray(self.h_matrix(t), dtype=float)


def magnus_linear(w0, w1, dt, triv="right") -> np.ndarray:
    """Second-order Magnus vector for an angular velocity linear from ``w0`` to ``w1`` over ``dt``."""
    _check_triv(triv)
    w0 = np.asarray(w0, dtype=float)
    w1 = np.asarray(w1, dtype=float)
    sign = -1.0 if triv == "right" else 1.0
    return 0.5 * (w0 + w1) * dt + sign * dt * dt / 12.0 * np.cross(w0, w1)


def _segments(signal: AngularVelocitySignal, t, tau):
    knots = signal.times[(signal.times > t) & (signal.times < tau)]
    edges = np.concatenate([[t], knots, [tau]])
    for a, b in zip(edges[:-1], edges[1:]):
        if signal.interpolation == "zero_order_hold":
            w = signal(a)
            yield w, w, b - a
        else:
            yield signal(a), signal(b), b - a


def phi_magnus(signal: AngularVelocitySignal, t: float, tau: float, triv: str = "right") -> np.ndarray:
    """Rotation vector of the flow from ``t`` to ``tau``.

    Each interpolation segment uses the closed-form second-order Magnus term;
    segments are composed by multiplying exponentials and taking the log.
    """
    _check_triv(triv)
    if tau < t:
        raise ValueError("backward propagation is not supported")
    if tau == t:
        return np.zeros(3)
    parts = [magnus_linear(w0, w1, dt, triv) for w0, w1, dt in _segments(signal, t, tau)]
    if len(parts) == 1:
        return parts[0]
    r = np.eye(3)
    for p in parts:
        r = exp_so3(p) @ r if triv == "right" else r @ exp_so3(p)
    return log_so3(r)


def gramian(noise: NoiseModel, phi_path: Callable[[float], np.ndarray], t: float, tau: float,
            triv: str = "right", n_nodes: int = 16) -> np.ndarray:
    """Diffusion Gramian by trapezoidal quadrature of the conjugated ``H H^T`` kernel."""
    _check_triv(triv)
    if tau < t:
        raise ValueError("tau must not precede t")
    if tau == t:
        return np.zeros((3, 3))
    sig = np.linspace(t, tau, n_nodes)
    vals = []
    for s in sig:
        h = noise(s)
        e = exp_so3(phi_path(s))
        hh = h @ h.T
        vals.append(e.T @ hh @ e if triv == "right" else e @ hh @ e.T)
    g = np.trapezoid(np.array(vals), sig, axis=0)
    return 0.5 * (g + g.T)


def _diffusion_factor(g):
    return np.eye(3) + 0.5 * (g - np.trace(g) * np.eye(3))


def transition_right(t: float, tau: float, signal: AngularVelocitySignal, noise: NoiseModel,
                     n_nodes: int = 16) -> np.ndarray:
    """``Phi_R(tau, t)`` with ``E[R(tau)] ~ Phi_R E[R(t)]``."""
    phi = phi_magnus(signal, t, tau, "right")
    g = gramian(noise, lambda s: phi_magnus(signal, t, s, "right"), t, tau, "right", n_nodes)
    return exp_so3(phi) @ _diffusion_factor(g)


def transition_left(t: float, tau: float, signal: AngularVelocitySignal, noise: NoiseModel,
                    n_nodes: int = 16) -> np.ndarray:
    """``Phi_L(tau, t)`` with ``E[R(tau)] ~ E[R(t)] Phi_L``."""
    phi = phi_magnus(signal, t, tau, "left")
    g = gramian(noise, lambda s: phi_magnus(signal, t, s, "left"), t, tau, "left", n_nodes)
    return _diffusion_factor(g) @ exp_so3(phi)


def shrink_factor(h: float, gamma: float) -> float:
    f = 1.0 - h * gamma * gamma
    if f <= 0.0:
        raise ValueError(f"step too large for the noise level (1 - h gamma^2 = {f:.3g})")
    return f


def _propagate(f_k: MatrixFisher, u, v, h, gamma):
    if gamma == 0.0:
        return MatrixFisher.from_usv(u, f_k.s, v)
    d = shrink_factor(h, gamma) * moments(f_k.s).d
    s = solve_concentration(d, s0=f_k.s)
    return MatrixFisher.from_usv(u, s, v)


def propagate_mf_right(f_k: MatrixFisher, omega_k, h: float, gamma: float) -> MatrixFisher:
    """One step with inertial angular velocity ``omega_k``: ``U <- exp(h omega^) U``, ``V`` fixed."""
    if h <= 0:
        raise ValueError("h must be positive")
    u = exp_so3(h * np.asarray(omega_k, dtype=float)) @ f_k.u
    return _propagate(f_k, u, f_k.v, h, gamma)


def propagate_mf_left(f_k: MatrixFisher, Omega_k, h: float, gamma: float) -> MatrixFisher:
    """One step with body angular velocity ``Omega_k``: ``V <- exp(-h Omega^) V``, ``U`` fixed."""
    if h <= 0:
        raise ValueError("h must be positive")
    v = exp_so3(-h * np.asarray(Omega_k, dtype=float)) @ f_k.v
    return _propagate(f_k, f_k.u, v, h, gamma)


def _noise_increments(noise, t, h, rng, n):
    xi = rng.standard_normal((n, 3))
    return np.sqrt(h) * xi @ noise(t).T


def simulate_sde(r0, signal: AngularVelocitySignal, noise: NoiseModel, h: float, t_end: float,
                 rng: np.random.Generator, triv: Optional[str] = None):
    """One sample path by geometric Euler-Maruyama.

    The drift increment over each step is the Magnus vector of the signal, which
    reduces to ``w_k h`` for a zero-order-hold signal.

    Returns:
        list of ``(t, R)`` pairs starting with ``(t0, r0)``.
    """
    triv = triv or ("right" if signal.frame == "inertial" else "left")
    _check_triv(triv)
    if h <= 0:
        raise ValueError("h must be positive")
    t0 = signal.times[0]
    n = int(round((t_end - t0) / h))
    r = np.array(r0, dtype=float)
    out = [(t0, r.copy())]
    for k in range(n):
        t = t0 + k * h
        inc = phi_magnus(signal, t, t + h, triv) + _noise_increments(noise, t, h, rng, 1)[0]
        r = exp_so3(inc) @ r if triv == "right" else r @ exp_so3(inc)
        out.append((t + h, r))
    return out


def simulate_sde_ensemble(r0, signal: AngularVelocitySignal, noise: NoiseModel, h: float, t_end: float,
                          rng: np.random.Generator, n_paths: int, triv: Optional[str] = None) -> np.ndarray:
    """Final states of ``n_paths`` independent paths, shape ``(n_paths, 3, 3)``.

    Same scheme as ``simulate_sde`` vectorized across paths.
    """
    triv = triv or ("right" if signal.frame == "inertial" else "left")
    _check_triv(triv)
    t0 = signal.times[0]
    n = int(round((t_end - t0) / h))
    r = np.broadcast_to(np.asarray(r0, dtype=float), (n_paths, 3, 3)).copy()
    for k in range(n):
        t = t0 + k * h
        inc = phi_magnus(signal, t, t + h, triv) + _noise_increments(noise, t, h, rng, n_paths)
        e = exp_so3_batch(inc)
        r = e @ r if triv == "right" else r @ e
    return r


def moment_ode_rhs(signal: AngularVelocitySignal, noise: NoiseModel, t: float, m: np.ndarray,
                   triv: str = "right") -> np.ndarray:
    """Exact time derivative of the first moment (used as a deterministic oracle)."""
    h = noise(t)
    hh = h @ h.T
    a = hat(signal(t)) + 0.5 * (hh - np.trace(hh) * np.eye(3))
    return a @ m if triv == "right" else m @ a
