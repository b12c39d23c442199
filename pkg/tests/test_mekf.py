import numpy as np
import pytest

from mfattitude.measurement import DirectionMeasurement
from mfattitude.mekf import MekfState, SingularInnovationCov, mekf_predict, mekf_update
from mfattitude.so3 import exp_so3, is_rotation, log_so3, random_rotation


def _is_psd(p):
    return np.abs(p - p.T).max() < 1e-12 and np.linalg.eigvalsh(p).min() >= -1e-12 * max(1.0, np.abs(p).max())


def test_unknown_state():
    st = MekfState.unknown()
    assert np.array_equal(st.mean, np.eye(3))
    assert np.allclose(st.cov, 1e8 * np.eye(3))


@pytest.mark.parametrize("frame", ["body", "inertial"])
def test_predict_noise_free_follows_flow(frame):
    r0 = random_rotation(np.random.default_rng(0))
    w = np.array([0.2, -0.4, 0.9])
    st = MekfState(r0, np.diag([0.01, 0.02, 0.03]))
    for _ in range(100):
        st = mekf_predict(st, w, frame, 0.01, 0.0)
    expected = r0 @ exp_so3(w) if frame == "body" else exp_so3(w) @ r0
    assert np.allclose(st.mean, expected, atol=1e-12)
    # cov constant when the rate frame matches the error frame
    if frame == "inertial":
        assert np.allclose(st.cov, np.diag([0.01, 0.02, 0.03]))
    else:
        assert np.allclose(st.cov_in("inertial"), r0 @ np.diag([0.01, 0.02, 0.03]) @ r0.T, atol=1e-12)


@pytest.mark.parametrize("frame", ["body", "inertial"])
def test_predict_random_walk(frame):
    st = MekfState(np.eye(3), 0.1 * np.eye(3))
    nxt = mekf_predict(st, np.zeros(3), frame, 0.02, 0.3)
    assert np.allclose(nxt.cov, st.cov + 0.02 * 0.09 * np.eye(3))
    st = MekfState(np.eye(3), np.diag([1.0, 2.0, 3.0]))
    nxt = mekf_predict(st, [1.0, 2.0, 0.5], frame, 0.02, 0.3)
    assert np.trace(nxt.cov) >= np.trace(st.cov)


def test_predict_rejects_bad_input():
    st = MekfState.unknown()
    with pytest.raises(ValueError):
        mekf_predict(st, [0, 0, 0], "body", 0.0, 0.1)
    with pytest.raises(ValueError):
        mekf_predict(st, [0, 0, 0], "galactic", 0.1, 0.1)


@pytest.mark.parametrize("kind", ["inertial_ref", "body_ref"])
def test_update_consistent_reading(kind):
    r = random_rotation(np.random.default_rng(1))
    ref = np.array([0.0, 0.6, 0.8])
    reading = r.T @ ref if kind == "inertial_ref" else r @ ref
    st = MekfState(r, 1e-8 * np.eye(3))
    out = mekf_update(st, DirectionMeasurement(kind, ref, reading, 200.0))
    assert np.linalg.norm(log_so3(out.mean.T @ r)) < 1e-12
    assert _is_psd(out.cov)


@pytest.mark.parametrize("kind", ["inertial_ref", "body_ref"])
def test_precise_reading_removes_small_error(kind):
    # A small error along the observable directions is removed by a precise reading.
    rng = np.random.default_rng(2)
    truth = random_rotation(rng)
    ref = np.array([1.0, 0.0, 0.0])
    reading = truth.T @ ref if kind == "inertial_ref" else truth @ ref
    delta = np.array([0.0, 0.01, -0.02])
    est = truth @ exp_so3(-delta)
    st = MekfState(est, 1e-2 * np.eye(3))
    out = mekf_update(st, DirectionMeasurement(kind, ref, reading, 1e8))
    pred_out = out.mean.T @ ref if kind == "inertial_ref" else out.mean @ ref
    pred_in = est.T @ ref if kind == "inertial_ref" else est @ ref
    assert np.linalg.norm(pred_out - reading) < 1e-3 * np.linalg.norm(pred_in - reading)


@pytest.mark.parametrize("kind", ["inertial_ref", "body_ref"])
def test_update_reduces_uncertainty_and_stays_on_group(kind):
    rng = np.random.default_rng(3)
    st = MekfState(random_rotation(rng), 0.5 * np.eye(3))
    for _ in range(20):
        ref = rng.normal(size=3)
        ref /= np.linalg.norm(ref)
        reading = rng.normal(size=3)
        reading /= np.linalg.norm(reading)
        out = mekf_update(st, DirectionMeasurement(kind, ref, reading, 50.0))
        assert is_rotation(out.mean, 1e-9)
        assert _is_psd(out.cov)
        assert np.trace(out.cov) <= np.trace(st.cov) + 1e-12
        st = out


def test_update_from_unknown_prior():
    st = MekfState.unknown()
    out = mekf_update(st, DirectionMeasurement("inertial_ref", [1, 0, 0], [0, 1, 0], 200.0))
    assert is_rotation(out.mean, 1e-9) and _is_psd(out.cov)


def test_singular_innovation():
    # one tangent direction carries a huge variance, the other only 1 / kappa
    st = MekfState(np.eye(3), np.diag([0.0, 1e30, 0.0]))
    with pytest.raises(SingularInnovationCov):
        mekf_update(st, DirectionMeasurement("inertial_ref", [1, 0, 0], [1, 0, 0], 1e20))
    st = MekfState(np.eye(3), np.full((3, 3), np.nan))
    with pytest.raises(SingularInnovationCov):
        mekf_update(st, DirectionMeasurement("inertial_ref", [1, 0, 0], [1, 0, 0], 1.0))


def test_cov_frames():
    r = exp_so3([0.3, 0.1, -0.2])
    st = MekfState(r, np.diag([1.0, 2.0, 3.0]))
    assert np.allclose(st.cov_in("body"), st.cov)
    assert np.allclose(st.cov_in("inertial"), r @ st.cov @ r.T)
    with pytest.raises(ValueError):
        st.cov_in("galactic")
