"""Simulation scenarios, filter runs, error metrics and Monte Carlo summaries."""
from __future__ import annotations

import csv
import math
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace
from typing import NamedTuple, Optional, Sequence

import numpy as np

from . import measurement
from .matrix_fisher import MatrixFisher, NoConvergence, moments, solve_concentration
from .measurement import DirectionMeasurement
from .mekf import MekfState, mekf_predict, mekf_update
from .observability import rho_from_d
from .propagation import shrink_factor
from .so3 import exp_so3, log_so3, random_rotation, rotation_angle

COMBOS = ("AVI_RVI", "AVI_RVB", "AVB_RVI", "AVB_RVB")
ESTIMATORS = ("matrix_fisher", "mekf")
TRUTHS = ("spin_precess", "fixed_axis", "file")
PAIR_FLOOR = 1e-16
FIXED_AXIS_RATE = -math.pi / (2.0 * math.sqrt(3.0)) * np.ones(3)


def combo_frames(combo: str):
    """``(gyro frame, measurement kind)`` for a combination name."""
    if combo not in COMBOS:
        raise ValueError(f"unknown combo {combo!r}; expected one of {', '.join(COMBOS)}")
    gyro = "inertial" if combo.startswith("AVI") else "body"
    kind = "inertial_ref" if combo.endswith("RVI") else "body_ref"
    return gyro, kind


@dataclass(frozen=True)
class Scenario:
    duration: float = 60.0
    gyro_rate: float = 150.0
    meas_rate: float = 30.0
    gamma: float = math.radians(10.0)
    kappa: float = 200.0
    ref_vector: tuple = (1.0, 0.0, 0.0)
    combo: str = "AVI_RVI"
    truth: str = "spin_precess"
    seed: int = 0
    random_initial: bool = True
    body_rate: Optional[tuple] = None  # fixed_axis only; defaults to FIXED_AXIS_RATE

    def __post_init__(self):
        combo_frames(self.combo)
        if self.truth not in TRUTHS:
            raise ValueError(f"unknown truth model {self.truth!r}")
        if not (self.gyro_rate > 0 and self.meas_rate > 0 and self.duration > 0):
            raise ValueError("rates and duration must be positive")
        if self.meas_rate > self.gyro_rate:
            raise ValueError("meas_rate must not exceed gyro_rate")
        if not self.kappa > 0 or self.gamma < 0:
            raise ValueError("kappa must be positive and gamma nonnegative")
        ref = np.asarray(self.ref_vector, dtype=float)
        if ref.shape != (3,) or not np.linalg.norm(ref) > 0:
            raise ValueError("ref_vector must be a nonzero 3-vector")
        object.__setattr__(self, "ref_vector", tuple(ref / np.linalg.norm(ref)))

    @property
    def ref(self) -> np.ndarray:
        return np.array(self.ref_vector)

    @property
    def n_steps(self) -> int:
        return int(round(self.duration * self.gyro_rate))


def generate_truth(scenario: Scenario, t: float, r0=None):
    """True attitude and both angular velocities at time ``t``.

    Returns:
        ``(R, omega, Omega)`` with ``omega`` inertial, ``Omega = R^T omega`` body.
    """
    r0 = np.eye(3) if r0 is None else np.asarray(r0, dtype=float)
    if scenario.truth == "spin_precess":
        e2, e3 = np.eye(3)[1], np.eye(3)[2]
        r = exp_so3(t * e2) @ r0 @ exp_so3(6.0 * t * e3)
        omega = e2 + 6.0 * r @ e3
    elif scenario.truth == "fixed_axis":
        big = FIXED_AXIS_RATE if scenario.body_rate is None else np.asarray(scenario.body_rate, dtype=float)
        r = r0 @ exp_so3(t * big)
        omega = r @ big
    else:
        raise ValueError("file truth has no closed form")
    return r, omega, r.T @ omega


class GyroStream(NamedTuple):
    t: np.ndarray
    w: np.ndarray  # (n, 3)
    frame: str


class DirectionStream(NamedTuple):
    t: np.ndarray
    reading: np.ndarray  # (n, 3)
    kind: str


class TruthStream(NamedTuple):
    t: np.ndarray
    r: np.ndarray  # (n, 3, 3)


def initial_attitude(scenario: Scenario, rng: np.random.Generator) -> np.ndarray:
    return random_rotation(rng) if scenario.random_initial else np.eye(3)


def synthesize_measurements(scenario: Scenario, rng: np.random.Generator, r0=None):
    """Truth, gyro and direction streams for one run.

    Gyro samples are the mean rate over each step (so integrating noiseless
    samples reproduces the truth) plus white noise of standard deviation
    ``gamma / sqrt(h)``.  Directions are sampled every ``1 / meas_rate``
    seconds starting at ``t = 0``.

    Returns:
        ``(gyro, directions, truth)``
    """
    gyro_frame, kind = combo_frames(scenario.combo)
    if r0 is None:
        r0 = initial_attitude(scenario, rng)
    n = scenario.n_steps
    h = 1.0 / scenario.gyro_rate
    t = np.arange(n + 1) * h
    rs = np.array([generate_truth(scenario, tk, r0)[0] for tk in t])
    rates = np.empty((n, 3))
    for k in range(n):
        if gyro_frame == "inertial":
            rates[k] = log_so3(rs[k + 1] @ rs[k].T) / h
        else:
            rates[k] = log_so3(rs[k].T @ rs[k + 1]) / h
    rates += scenario.gamma / math.sqrt(h) * rng.standard_normal((n, 3))
    n_meas = int(round(scenario.duration * scenario.meas_rate))
    idx = np.unique(np.round(np.arange(n_meas) / scenario.meas_rate * scenario.gyro_rate).astype(int))
    idx = idx[idx < n]
    ref = scenario.ref
    sampler = measurement.sample_inertial if kind == "inertial_ref" else measurement.sample_body
    readings = np.array([sampler(rs[k], ref, scenario.kappa, rng) for k in idx]).reshape(-1, 3)
    return (
        GyroStream(t[:n], rates, gyro_frame),
        DirectionStream(t[idx], readings, kind),
        TruthStream(t, rs),
    )


def full_error(r_est, r_true) -> float:
    """Angle between two attitudes, degrees."""
    return math.degrees(rotation_angle(np.asarray(r_true).T @ np.asarray(r_est)))


def partial_error(r_est, r_true, kind: str, ref) -> float:
    """Angle between the estimated and true images of the reference direction, degrees."""
    ref = np.asarray(ref, dtype=float)
    if kind == "inertial_ref":
        a, b = np.asarray(r_true).T @ ref, np.asarray(r_est).T @ ref
    elif kind == "body_ref":
        a, b = np.asarray(r_true) @ ref, np.asarray(r_est) @ ref
    else:
        raise ValueError(f"unknown measurement kind {kind!r}")
    return math.degrees(math.acos(float(np.clip(a @ b, -1.0, 1.0))))


class _LazyMatrixFisher:
    """Matrix Fisher belief that defers the concentration solve.

    Prediction only rotates ``U`` or ``V`` and scales the moments ``d``, so ``S``
    is solved when a measurement (or an export) needs it.
    """

    def __init__(self):
        self.u = np.eye(3)
        self.v = np.eye(3)
        self.d = np.zeros(3)
        self.s = np.zeros(3)
        self.anchor = None
        self.fresh = True

    def predict(self, w, frame, h, gamma):
        if frame == "inertial":
            self.u = exp_so3(h * w) @ self.u
        else:
            self.v = exp_so3(-h * w) @ self.v
        if gamma > 0.0:
            self.d = self.d * shrink_factor(h, gamma)
            self.fresh = False

    def resolve(self) -> MatrixFisher:
        if not self.fresh:
            self.s = solve_concentration(self.d, anchor=self.anchor)
            self.fresh = True
        return MatrixFisher.from_usv(self.u, self.s, self.v)

    def update(self, meas: DirectionMeasurement):
        post = measurement.update(self.resolve(), meas)
        self.u, self.s, self.v = post.u, post.s, post.v
        self.d = moments(self.s).d
        self.anchor = (self.s, self.d)
        self.fresh = True

    @property
    def mean(self):
        return self.u @ self.v.T

    def cov(self, frame):
        s = self.s
        pair = np.maximum(np.array([s[1] + s[2], s[2] + s[0], s[0] + s[1]]), PAIR_FLOOR)
        axes = self.u if frame == "inertial" else self.v
        return (axes / pair) @ axes.T


@dataclass
class RunResult:
    """Per-run time series and summary.

    ``t``, ``full_err``, ``partial_err`` and ``rho`` are sampled at every filter
    step; ``t_meas``, ``std_deg`` and ``s`` after each measurement update.
    """

    estimator: str
    combo: str
    t: np.ndarray
    full_err: np.ndarray
    partial_err: np.ndarray
    rho: np.ndarray
    t_meas: np.ndarray
    std_deg: np.ndarray
    s: np.ndarray
    diagnostic: str = ""
    final_state: Optional[object] = None  # MatrixFisher or MekfState at the last time

    @property
    def mean_full(self) -> float:
        return float(np.mean(self.full_err))

    @property
    def mean_partial(self) -> float:
        return float(np.mean(self.partial_err))

    @property
    def ok(self) -> bool:
        return not self.diagnostic

    def series_rows(self):
        """Rows ``t, full_err_deg, partial_err_deg, rho, std1_deg, std2_deg, std3_deg`` at update epochs."""
        if len(self.t_meas) == 0:
            return []
        pos = np.searchsorted(self.t, self.t_meas)
        rows = []
        for p, tm, sd in zip(pos, self.t_meas, self.std_deg):
            if p < len(self.t) and self.t[p] == tm:
                rows.append([tm, self.full_err[p], self.partial_err[p], self.rho[p], *sd])
            else:
                rows.append([tm, math.nan, math.nan, math.nan, *sd])
        return rows


SERIES_HEADER = ["t", "full_err_deg", "partial_err_deg", "rho", "std1_deg", "std2_deg", "std3_deg"]


def run_streams(gyro: GyroStream, directions: DirectionStream, truth: Optional[TruthStream], *,
                ref, kappa: float, gamma: float, estimator: str = "matrix_fisher",
                combo: str = "") -> RunResult:
    """Run one estimator over recorded streams.

    Events are processed on the union of all timestamps.  At each time the
    measurement (if any) is applied, errors are recorded against the truth (if
    any), then the state is predicted to the next time with the latest gyro
    sample.
    """
    if estimator not in ESTIMATORS:
        raise ValueError(f"unknown estimator {estimator!r}")
    ref = np.asarray(ref, dtype=float)
    kind = directions.kind
    cov_frame = "inertial" if kind == "inertial_ref" else "body"
    times = np.unique(np.concatenate([gyro.t, directions.t] + ([truth.t] if truth is not None else [])))
    meas_at = {float(tm): y for tm, y in zip(directions.t, directions.reading)}
    truth_at = {float(tm): r for tm, r in zip(truth.t, truth.r)} if truth is not None else {}
    gyro_idx = np.searchsorted(gyro.t, times, side="right") - 1

    mf = _LazyMatrixFisher() if estimator == "matrix_fisher" else None
    ekf = MekfState.unknown() if estimator == "mekf" else None
    rec_t, full, part, rho = [], [], [], []
    t_meas, stds, s_hist = [], [], []
    diagnostic = ""
    try:
        for n, tk in enumerate(times):
            tk = float(tk)
            if tk in meas_at:
                meas = DirectionMeasurement(kind, ref, meas_at[tk], kappa, tk)
                if mf is not None:
                    mf.update(meas)
                    cov = mf.cov(cov_frame)
                    s_hist.append(mf.s.copy())
                else:
                    ekf = mekf_update(ekf, meas)
                    cov = ekf.cov_in(cov_frame)
                    s_hist.append(np.full(3, math.nan))
                t_meas.append(tk)
                stds.append(np.degrees(np.sqrt(np.maximum(np.diag(cov), 0.0))))
            mean = mf.mean if mf is not None else ekf.mean
            if tk in truth_at:
                rec_t.append(tk)
                full.append(full_error(mean, truth_at[tk]))
                part.append(partial_error(mean, truth_at[tk], kind, ref))
                rho.append(rho_from_d(mf.d) if mf is not None else math.nan)
            if n + 1 < len(times) and gyro_idx[n] >= 0:
                h = float(times[n + 1] - tk)
                w = gyro.w[gyro_idx[n]]
                if mf is not None:
                    mf.predict(w, gyro.frame, h, gamma)
                else:
                    ekf = mekf_predict(ekf, w, gyro.frame, h, gamma)
        final = mf.resolve() if mf is not None else ekf
    except (NoConvergence, np.linalg.LinAlgError) as exc:
        diagnostic = f"{type(exc).__name__} at t={tk:.6g}: {exc}"
        final = None
    return RunResult(
        estimator=estimator,
        combo=combo,
        t=np.array(rec_t),
        full_err=np.array(full),
        partial_err=np.array(part),
        rho=np.array(rho),
        t_meas=np.array(t_meas),
        std_deg=np.array(stds).reshape(-1, 3),
        s=np.array(s_hist).reshape(-1, 3),
        diagnostic=diagnostic,
        final_state=final,
    )


def run_filter(scenario: Scenario, estimator: str = "matrix_fisher", rng=None) -> RunResult:
    """Simulate one run of ``scenario`` (seeded by ``scenario.seed``) and filter it."""
    rng = np.random.default_rng(scenario.seed) if rng is None else rng
    gyro, directions, truth = synthesize_measurements(scenario, rng)
    return run_streams(gyro, directions, truth, ref=scenario.ref, kappa=scenario.kappa,
                       gamma=scenario.gamma, estimator=estimator, combo=scenario.combo)


class SummaryRow(NamedTuple):
    estimator: str
    combo: str
    full_mean: float
    full_sd: float
    partial_mean: float
    partial_sd: float


SUMMARY_HEADER = list(SummaryRow._fields)


def _run_pair(args):
    scenario, estimators = args
    rng = np.random.default_rng(scenario.seed)
    streams = synthesize_measurements(scenario, rng)
    return [
        run_streams(*streams, ref=scenario.ref, kappa=scenario.kappa, gamma=scenario.gamma,
                    estimator=est, combo=scenario.combo)
        for est in estimators
    ]


def monte_carlo(template: Scenario, n_runs: int, estimators: Sequence[str] = ESTIMATORS,
                combos: Optional[Sequence[str]] = None, jobs: int = 1):
    """Monte Carlo error statistics per estimator and combination.

    Run ``i`` of every combo uses seed ``template.seed + i``; all estimators see
    the same streams.  Each run's errors are averaged over time, then mean and
    sample standard deviation are taken across runs (s.d. is 0 for one run).

    Returns:
        ``(summary rows, {(estimator, combo): [RunResult, ...]})``
    """
    if n_runs < 1:
        raise ValueError("n_runs must be at least 1")
    for est in estimators:
        if est not in ESTIMATORS:
            raise ValueError(f"unknown estimator {est!r}")
    combos = list(combos or [template.combo])
    tasks = [(replace(template, combo=c, seed=template.seed + i), tuple(estimators))
             for c in combos for i in range(n_runs)]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            outputs = list(pool.map(_run_pair, tasks))
    else:
        outputs = [_run_pair(t) for t in tasks]
    runs = {}
    for (sc, _), results in zip(tasks, outputs):
        for res in results:
            runs.setdefault((res.estimator, sc.combo), []).append(res)
    rows = []
    for est in estimators:
        for c in combos:
            rs = runs[(est, c)]
            full = np.array([r.mean_full for r in rs])
            part = np.array([r.mean_partial for r in rs])
            sd = lambda x: float(np.std(x, ddof=1)) if len(x) > 1 else 0.0
            rows.append(SummaryRow(est, c, float(full.mean()), sd(full), float(part.mean()), sd(part)))
    return rows, runs


# --- experiment log CSV ---------------------------------------------------

class ParseError(ValueError):
    def __init__(self, line: int, message: str):
        super().__init__(f"line {line}: {message}")
        self.line = line


class SchemaError(ValueError):
    def __init__(self, column: str, message: str = ""):
        super().__init__(message or f"missing column {column!r}")
        self.column = column


LOG_COLUMNS = ["t", "wx", "wy", "wz", "w_frame", "dx", "dy", "dz", "d_kind"]
TRUTH_COLUMNS = [f"rt{i}{j}" for i in range(1, 4) for j in range(1, 4)]
UNIT_TOL = 1e-3


def export_log(path, gyro: GyroStream, directions: DirectionStream, truth: Optional[TruthStream] = None):
    """Write streams in the log CSV format, one row per distinct timestamp."""
    times = np.unique(np.concatenate([gyro.t, directions.t] + ([truth.t] if truth is not None else [])))
    g = {float(t): w for t, w in zip(gyro.t, gyro.w)}
    d = {float(t): y for t, y in zip(directions.t, directions.reading)}
    tr = {float(t): r for t, r in zip(truth.t, truth.r)} if truth is not None else {}
    header = LOG_COLUMNS + (TRUTH_COLUMNS if truth is not None else [])
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(header)
        for t in times:
            t = float(t)
            row = [repr(t)]
            row += [repr(float(x)) for x in g[t]] + [gyro.frame] if t in g else ["", "", "", ""]
            row += [repr(float(x)) for x in d[t]] + [directions.kind] if t in d else ["", "", "", ""]
            if truth is not None:
                row += [repr(float(x)) for x in tr[t].ravel()] if t in tr else [""] * 9
            wr.writerow(row)


def _floats(row, cols, line):
    vals = [row[c].strip() for c in cols]
    if all(v == "" for v in vals):
        return None
    try:
        return np.array([float(v) for v in vals])
    except ValueError:
        raise ParseError(line, f"non-numeric value in {cols}") from None


def ingest_log(path):
    """Read a log CSV into ``(gyro, directions, truth)``; ``truth`` is ``None`` if absent.

    Direction readings and truth rotations off by more than 1e-3 from unit norm
    (orthonormality) are repaired with a warning.
    """
    with open(path, newline="") as fh:
        rd = csv.reader(fh)
        try:
            header = [h.strip() for h in next(rd)]
        except StopIteration:
            raise SchemaError("t", "empty log file") from None
        for col in LOG_COLUMNS:
            if col not in header:
                raise SchemaError(col)
        has_truth = any(c in header for c in TRUTH_COLUMNS)
        if has_truth:
            for col in TRUTH_COLUMNS:
                if col not in header:
                    raise SchemaError(col)
        pos = {c: i for i, c in enumerate(header)}
        gt, gw, gframes, dt, dy, dkinds, tt, tr = [], [], set(), [], [], set(), [], []
        last_t = -math.inf
        for line, raw in enumerate(rd, start=2):
            if not raw or all(not c.strip() for c in raw):
                continue
            if len(raw) != len(header):
                raise ParseError(line, f"expected {len(header)} fields, got {len(raw)}")
            row = {c: raw[i] for c, i in pos.items()}
            try:
                t = float(row["t"])
            except ValueError:
                raise ParseError(line, f"bad time {row['t']!r}") from None
            if not t > last_t:
                raise ParseError(line, "timestamps must be strictly increasing")
            last_t = t
            w = _floats(row, ["wx", "wy", "wz"], line)
            if w is not None:
                frame = row["w_frame"].strip()
                if frame not in ("inertial", "body"):
                    raise ParseError(line, f"bad w_frame {frame!r}")
                gt.append(t)
                gw.append(w)
                gframes.add(frame)
            y = _floats(row, ["dx", "dy", "dz"], line)
            if y is not None:
                kind = row["d_kind"].strip()
                if kind not in ("inertial_ref", "body_ref"):
                    raise ParseError(line, f"bad d_kind {kind!r}")
                norm = float(np.linalg.norm(y))
                if not norm > 0:
                    raise ParseError(line, "zero direction reading")
                if abs(norm - 1.0) > UNIT_TOL:
                    warnings.warn(f"line {line}: direction norm {norm:.6g}, renormalized", stacklevel=2)
                    y = y / norm
                dt.append(t)
                dy.append(y)
                dkinds.add(kind)
            if has_truth:
                r = _floats(row, TRUTH_COLUMNS, line)
                if r is not None:
                    r = r.reshape(3, 3)
                    if np.linalg.norm(r.T @ r - np.eye(3)) > UNIT_TOL or np.linalg.det(r) < 0:
                        warnings.warn(f"line {line}: truth is not a rotation, projected", stacklevel=2)
                        u, _, vt = np.linalg.svd(r)
                        r = u @ np.diag([1.0, 1.0, np.linalg.det(u @ vt)]) @ vt
                    tt.append(t)
                    tr.append(r)
    if len(gframes) > 1 or len(dkinds) > 1:
        raise ParseError(0, "mixed frame tags in one log are not supported")
    gyro = GyroStream(np.array(gt), np.array(gw).reshape(-1, 3), gframes.pop() if gframes else "inertial")
    directions = DirectionStream(np.array(dt), np.array(dy).reshape(-1, 3), dkinds.pop() if dkinds else "inertial_ref")
    truth = TruthStream(np.array(tt), np.array(tr).reshape(-1, 3, 3)) if has_truth else None
    return gyro, directions, truth


def write_csv(path, header, rows):
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(header)
        for row in rows:
            wr.writerow([repr(float(x)) if isinstance(x, (float, np.floating)) else x for x in row])
