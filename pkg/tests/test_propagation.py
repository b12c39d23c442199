import math

import numpy as np
import pytest
from scipy.integrate import solve_ivp

from mfattitude.matrix_fisher import MatrixFisher, mean_attitude, moments
from mfattitude.propagation import (
    AngularVelocitySignal,
    NoiseModel,
    gramian,
    magnus_linear,
    moment_ode_rhs,
    phi_magnus,
    propagate_mf_left,
    propagate_mf_right,
    simulate_sde,
    simulate_sde_ensemble,
    transition_left,
    transition_right,
)
from mfattitude.so3 import exp_so3, log_so3, random_rotation

W0 = np.array([1.0, -2.0, 0.5])
W1 = np.array([-0.5, 1.5, 2.0])


def smooth_omega(t):
    return np.array([math.sin(3 * t) + 1, math.cos(2 * t), 0.5])


def product_integral(fun, t, tau, triv, n=20000):
    """Ordered product of midpoint exponentials: the fine-step flow oracle."""
    r = np.eye(3)
    s = np.linspace(t, tau, n + 1)
    for a, b in zip(s[:-1], s[1:]):
        e = exp_so3(fun(0.5 * (a + b)) * (b - a))
        r = e @ r if triv == "right" else r @ e
    return r


def test_magnus_constant_is_exact():
    sig = AngularVelocitySignal.constant([0.3, -0.1, 0.7], t1=2.0)
    for triv in ("right", "left"):
        assert np.allclose(phi_magnus(sig, 0.5, 1.7, triv), 1.2 * np.array([0.3, -0.1, 0.7]), atol=1e-14)


@pytest.mark.parametrize("triv", ["right", "left"])
def test_magnus_sign_resolved_by_oracle(triv):
    # The bracket sign is fixed by the fine-step oracle; the mirrored sign and
    # the reversed leading factor are both far worse.
    h = 0.2
    lin = lambda s: W0 + (W1 - W0) * s / h
    oracle = product_integral(lin, 0.0, h, triv, n=4000)
    sig = AngularVelocitySignal("inertial" if triv == "right" else "body", np.array([0.0, h]), np.stack([W0, W1]))
    phi = phi_magnus(sig, 0.0, h, triv)
    base = 0.5 * (W0 + W1) * h
    corr = h * h / 12 * np.cross(W0, W1)
    expected = base - corr if triv == "right" else base + corr
    assert np.allclose(phi, expected, atol=1e-15)
    good = np.linalg.norm(exp_so3(phi) - oracle)
    mirrored = np.linalg.norm(exp_so3(2 * base - phi) - oracle)
    reversed_lead = np.linalg.norm(exp_so3(-base + (phi - base)) - oracle)
    assert good < 2e-3
    assert mirrored > 20 * good and reversed_lead > 200 * good


@pytest.mark.parametrize("triv", ["right", "left"])
def test_magnus_local_order(triv):
    errs = []
    for h in (0.2, 0.1, 0.05):
        sig = AngularVelocitySignal.from_function(smooth_omega, 0.0, h, 1)
        oracle = product_integral(smooth_omega, 0.0, h, triv)
        errs.append(np.linalg.norm(exp_so3(phi_magnus(sig, 0.0, h, triv)) - oracle))
    ratios = np.array(errs[:-1]) / np.array(errs[1:])
    assert np.all((ratios > 6.5) & (ratios < 10))


def test_magnus_composition_across_segments():
    sig = AngularVelocitySignal.from_function(smooth_omega, 0.0, 1.0, 100)
    phi = phi_magnus(sig, 0.1, 0.9)
    oracle = product_integral(smooth_omega, 0.1, 0.9, "right", n=40000)
    assert np.linalg.norm(exp_so3(phi) - oracle) < 1e-4


def test_magnus_backward_rejected():
    sig = AngularVelocitySignal.constant([1, 0, 0])
    with pytest.raises(ValueError):
        phi_magnus(sig, 0.5, 0.2)


def test_signal_validation():
    with pytest.raises(ValueError):
        AngularVelocitySignal("inertial", np.array([0.0, 0.0]), np.zeros((2, 3)))
    with pytest.raises(ValueError):
        AngularVelocitySignal("inertial", np.array([0.0, 1.0]), np.array([[0, 0, np.nan], [0, 0, 0]]))
    with pytest.raises(ValueError):
        NoiseModel()


def test_gramian_cases():
    zero = lambda s: np.zeros(3)
    g = gramian(NoiseModel(isotropic_gamma=0.3), zero, 0.0, 0.5)
    assert np.allclose(g, 0.09 * 0.5 * np.eye(3))
    assert np.allclose(gramian(NoiseModel(isotropic_gamma=0.0), zero, 0.0, 0.5), 0.0)
    diag = NoiseModel(h_matrix=lambda t: np.diag([0.4, 0.0, 0.0]))
    assert np.allclose(gramian(diag, zero, 1.0, 1.25), 0.16 * 0.25 * np.diag([1.0, 0, 0]))
    # isotropic noise commutes with the conjugation
    sig = AngularVelocitySignal.from_function(smooth_omega, 0.0, 1.0, 10)
    path = lambda s: phi_magnus(sig, 0.0, s)
    assert np.allclose(gramian(NoiseModel(isotropic_gamma=0.3), path, 0.0, 0.4), 0.036 * np.eye(3))


@pytest.mark.parametrize("triv", ["right", "left"])
def test_gramian_symmetric_psd(triv):
    rng = np.random.default_rng(0)
    a = rng.normal(size=(3, 3))
    noise = NoiseModel(h_matrix=lambda t: a * (1 + t))
    sig = AngularVelocitySignal.from_function(smooth_omega, 0.0, 1.0, 10)
    g = gramian(noise, lambda s: phi_magnus(sig, 0.0, s, triv), 0.0, 0.3, triv)
    assert np.abs(g - g.T).max() < 1e-12
    assert np.linalg.eigvalsh(g).min() > -1e-12


def test_transitions_trivial_cases():
    sig = AngularVelocitySignal.constant([0.2, 0.5, -0.3])
    quiet = NoiseModel(isotropic_gamma=0.0)
    assert np.allclose(transition_right(0.1, 0.4, sig, quiet), exp_so3(0.3 * np.array([0.2, 0.5, -0.3])))
    assert np.allclose(transition_left(0.1, 0.4, sig, quiet), exp_so3(0.3 * np.array([0.2, 0.5, -0.3])))
    still = AngularVelocitySignal.constant([0, 0, 0])
    noisy = NoiseModel(isotropic_gamma=0.2)
    for fn in (transition_right, transition_left):
        assert np.allclose(fn(0.0, 0.5, still, noisy), (1 - 0.04 * 0.5) * np.eye(3))
        assert np.allclose(fn(0.3, 0.3, sig, noisy), np.eye(3))


def _exact_moment(signal, noise, m0, t, tau, triv):
    sol = solve_ivp(lambda s, y: moment_ode_rhs(signal, noise, s, y.reshape(3, 3), triv).ravel(),
                    (t, tau), m0.ravel(), method="DOP853", rtol=1e-12, atol=1e-14)
    return sol.y[:, -1].reshape(3, 3)


@pytest.mark.parametrize("triv", ["right", "left"])
def test_transition_error_order(triv):
    # One-step error against the exact moment ODE shrinks as O(h^2).
    sig = AngularVelocitySignal.from_function(smooth_omega, 0.0, 1.0, 400)
    noise = NoiseModel(isotropic_gamma=0.3)
    m0 = 0.8 * exp_so3([0.3, 0.2, -0.5])
    steps = np.array([0.2, 0.1, 0.05, 0.025])
    errs = []
    for h in steps:
        fn = transition_right if triv == "right" else transition_left
        phi = fn(0.0, h, sig, noise)
        pred = phi @ m0 if triv == "right" else m0 @ phi
        errs.append(np.linalg.norm(pred - _exact_moment(sig, noise, m0, 0.0, h, triv)))
    slope = np.polyfit(np.log(steps), np.log(errs), 1)[0]
    assert slope >= 1.8


@pytest.mark.parametrize("triv", ["right", "left"])
def test_transition_matches_sde_ensemble(triv):
    frame = "inertial" if triv == "right" else "body"
    base = AngularVelocitySignal.from_function(smooth_omega, 0.0, 1.0, 100)
    sig = AngularVelocitySignal(frame, base.times, base.values, "linear")
    noise = NoiseModel(isotropic_gamma=0.3)
    r0 = exp_so3([0.3, 0.2, -0.5])
    rs = simulate_sde_ensemble(r0, sig, noise, 0.01, 1.0, np.random.default_rng(1), 100_000)
    mean = rs.mean(axis=0)
    se = rs.std(axis=0, ddof=1) / math.sqrt(len(rs))
    pred = r0.copy()
    for k in range(100):
        phi = (transition_right if triv == "right" else transition_left)(k * 0.01, (k + 1) * 0.01, sig, noise)
        pred = phi @ pred if triv == "right" else pred @ phi
    assert np.all(np.abs(mean - pred) < 3 * se)


def test_simulate_sde_deterministic_flow():
    w = np.array([0.4, -0.2, 0.9])
    sig = AngularVelocitySignal.constant(w, t1=2.0)
    r0 = random_rotation(np.random.default_rng(2))
    path = simulate_sde(r0, sig, NoiseModel(isotropic_gamma=0.0), 0.01, 2.0, np.random.default_rng(0))
    assert len(path) == 201
    assert np.allclose(path[-1][1], exp_so3(2.0 * w) @ r0, atol=1e-9)


def test_simulate_sde_left_right_agree_without_noise():
    # Omega(t) = R(t)^T omega(t) along the right-trivialized solution
    sig = AngularVelocitySignal.from_function(smooth_omega, 0.0, 1.0, 1000)
    r0 = exp_so3([0.1, 0.2, 0.3])
    quiet = NoiseModel(isotropic_gamma=0.0)
    path = simulate_sde(r0, sig, quiet, 0.001, 1.0, np.random.default_rng(0))
    body = np.array([r.T @ sig(t) for t, r in path])
    bsig = AngularVelocitySignal("body", sig.times, body, "linear")
    left = simulate_sde(r0, bsig, quiet, 0.001, 1.0, np.random.default_rng(0))
    assert np.linalg.norm(log_so3(left[-1][1].T @ path[-1][1])) < 1e-5


def test_simulate_sde_stays_on_group():
    sig = AngularVelocitySignal.from_function(smooth_omega, 0.0, 1.0, 10)
    path = simulate_sde(np.eye(3), sig, NoiseModel(isotropic_gamma=1.0), 0.01, 1.0, np.random.default_rng(3))
    r = path[-1][1]
    assert np.allclose(r.T @ r, np.eye(3), atol=1e-12) and np.isclose(np.linalg.det(r), 1.0)


def test_propagate_noise_free():
    rng = np.random.default_rng(4)
    mf = MatrixFisher.from_usv(random_rotation(rng), np.array([9.0, 4.0, 1.0]), random_rotation(rng))
    w = np.array([0.3, -1.1, 0.4])
    out = propagate_mf_right(mf, w, 0.1, 0.0)
    assert np.array_equal(out.s, mf.s)
    assert np.allclose(mean_attitude(out), exp_so3(0.1 * w) @ mean_attitude(mf))
    # same mean from the left when Omega = (U V^T)^T omega
    big_omega = (mf.u @ mf.v.T).T @ w
    left = propagate_mf_left(mf, big_omega, 0.1, 0.0)
    assert np.allclose(mean_attitude(left), mean_attitude(out), atol=1e-12)
    for fn in (propagate_mf_right, propagate_mf_left):
        assert np.allclose(fn(MatrixFisher(np.zeros((3, 3))), w, 0.1, 0.3).f, 0.0)


def test_principal_axes_asymmetry():
    f0 = MatrixFisher(np.diag([150.0, 10.0, 0.0]))
    w = np.array([0.0, 0.0, math.pi / 2])
    h = 1.0 / 30
    right, left = f0, f0
    for _ in range(30):
        right = propagate_mf_right(right, w, h, 0.1)
        left = propagate_mf_left(left, w, h, 0.1)
        assert np.allclose(right.v, f0.v, atol=1e-9)
        assert np.allclose(left.u, f0.u, atol=1e-9)
    assert np.allclose(right.u, exp_so3(w), atol=1e-9)
    assert np.allclose(left.v, exp_so3(-w), atol=1e-9)


def test_principal_axes_noise_free_quarter_turn():
    f0 = MatrixFisher(np.diag([150.0, 10.0, 0.0]))
    w = np.array([0.0, 0.0, math.pi / 2])
    mf = f0
    for _ in range(150):
        mf = propagate_mf_right(mf, w, 1.0 / 150, 0.0)
    assert np.allclose(mf.v, np.eye(3), atol=1e-9)
    assert np.allclose(mf.u, exp_so3(w), atol=1e-9)


def test_shrinkage_reduces_pair_sums():
    mf = MatrixFisher(np.diag([40.0, 12.0, -3.0]))
    for _ in range(10):
        nxt = propagate_mf_right(mf, [0.1, 0.2, 0.3], 0.01, 0.3)
        pairs = lambda s: np.array([s[1] + s[2], s[2] + s[0], s[0] + s[1]])
        assert np.all(pairs(nxt.s) < pairs(mf.s))
        assert np.allclose(moments(nxt.s).d, (1 - 0.01 * 0.09) * moments(mf.s).d, atol=1e-10)
        mf = nxt


def test_propagate_rejects_bad_step():
    mf = MatrixFisher(np.eye(3))
    with pytest.raises(ValueError):
        propagate_mf_right(mf, [0, 0, 0], 0.0, 0.1)
    with pytest.raises(ValueError):
        propagate_mf_left(mf, [0, 0, 0], 2.0, 1.0)
