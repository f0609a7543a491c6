"""Error-state EKF with IMU propagation and bearing/inverse-depth landmarks.

Robot position and velocity live in the world frame, attitude ``q`` maps body
to world. Landmarks are robocentric: each one is a bearing (azimuth,
elevation) and inverse depth in the frame of the camera that observes it, and
is carried along with that camera's motion during propagation.

Error-state layout: ``[dr(3), dtheta(3), dv(3), db_f(3), db_omega(3)]`` followed
by ``[d_azimuth, d_elevation, d_rho]`` for every active landmark in slot order.
The attitude error is body-local: ``R = R_hat @ Exp(dtheta)``.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.stats import chi2

from dvevio.errors import ImuSampleError, InvalidInputError, OutOfViewError
from dvevio.geometry import (
    PinholeModel,
    bearing_angles,
    bearing_angles_jacobian,
    bearing_vector,
    euler_zyx_to_rot,
    point_from_bearing_jacobian,
    quat_exp,
    quat_multiply,
    quat_normalize,
    quat_to_rot,
    right_jacobian,
    rot_to_quat,
    skew,
    so3_exp,
    so3_log,
)
from dvevio.imaging import Spectrum

logger = logging.getLogger(__name__)

GRAVITY = np.array([0.0, 0.0, -9.81])
ROBOT_DIM = 15
LANDMARK_DIM = 3
R_SL, TH_SL, V_SL, BF_SL, BW_SL = (slice(3 * i, 3 * i + 3) for i in range(5))


@dataclass(frozen=True)
class ImuSample:
    timestamp: float
    f_hat: np.ndarray
    omega_hat: np.ndarray

    def __post_init__(self):
        f = np.asarray(self.f_hat, dtype=float).reshape(3)
        w = np.asarray(self.omega_hat, dtype=float).reshape(3)
        object.__setattr__(self, "f_hat", f)
        object.__setattr__(self, "omega_hat", w)

    def validate(self):
        if not (np.isfinite(self.timestamp) and np.all(np.isfinite(self.f_hat))
                and np.all(np.isfinite(self.omega_hat))):
            raise ImuSampleError(f"non-finite IMU sample at t={self.timestamp}")


@dataclass(frozen=True)
class ImuNoiseConfig:
    """Continuous-time noise densities used by the filter."""

    accel_noise: float = 2e-3        # m/s^2/sqrt(Hz)
    gyro_noise: float = 2e-4         # rad/s/sqrt(Hz)
    accel_bias_walk: float = 1e-4    # m/s^3/sqrt(Hz)
    gyro_bias_walk: float = 1e-5     # rad/s^2/sqrt(Hz)
    bearing_walk: float = 1e-3       # rad/sqrt(s)
    inverse_depth_walk: float = 1e-3  # 1/m/sqrt(s)


@dataclass(frozen=True)
class Camera:
    """Intrinsics plus the fixed body-to-camera transform.

    ``R_bc`` rotates camera-frame vectors into the body frame and ``p_bc`` is
    the camera origin in the body frame.
    """

    spectrum: Spectrum
    intrinsics: PinholeModel
    R_bc: np.ndarray
    p_bc: np.ndarray


@dataclass(frozen=True)
class FilterConfig:
    max_landmarks: int = 25
    sigma_px: float = 1.0
    rho_init: float = 0.5
    sigma_rho: float = 1.0
    rho_min: float = 1e-3
    miss_limit: int = 3
    chi2_prob: float = 0.99
    noise: ImuNoiseConfig = field(default_factory=ImuNoiseConfig)
    init_sigma_position: float = 1e-2
    init_sigma_attitude: float = 1e-2
    init_sigma_yaw: float = 1e-3
    init_sigma_velocity: float = 2e-2
    init_sigma_accel_bias: float = 2e-2
    init_sigma_gyro_bias: float = 1e-3
    view_margin: float = 0.0
    # landmarks correct the robot only once sigma_rho / rho drops below this
    mature_rel_sigma: float = 0.3


@dataclass
class RobotState:
    r: np.ndarray
    q: np.ndarray
    v: np.ndarray
    b_f: np.ndarray
    b_omega: np.ndarray

    @property
    def R(self):
        return quat_to_rot(self.q)

    def copy(self):
        return RobotState(self.r.copy(), self.q.copy(), self.v.copy(),
                          self.b_f.copy(), self.b_omega.copy())


@dataclass
class TrackedLandmark:
    azimuth: float
    elevation: float
    rho: float
    spectrum: Spectrum
    patch: object = None
    frames_tracked: int = 0
    consecutive_misses: int = 0
    landmark_id: int = -1
    last_pixel: tuple | None = None
    # d(azimuth, elevation) / d(reference-patch pixel), carried through propagation
    warp: np.ndarray | None = None

    @property
    def bearing(self):
        return bearing_vector(self.azimuth, self.elevation)

    @property
    def distance(self):
        return 1.0 / self.rho

    def point(self):
        return self.bearing / self.rho


@dataclass
class FilterState:
    timestamp: float
    robot: RobotState
    landmarks: list
    covariance: np.ndarray
    cameras: dict
    insertion_counter: int = 0
    last_imu: ImuSample | None = None

    def active_slots(self):
        return [i for i, lm in enumerate(self.landmarks) if lm is not None]

    def landmark_index(self, slot):
        """Start row of a landmark's block in the covariance."""
        if self.landmarks[slot] is None:
            raise InvalidInputError(f"landmark slot {slot} is empty")
        k = sum(1 for i in range(slot) if self.landmarks[i] is not None)
        return ROBOT_DIM + LANDMARK_DIM * k

    @property
    def dim(self):
        return ROBOT_DIM + LANDMARK_DIM * len(self.active_slots())

    def copy(self):
        return FilterState(
            self.timestamp,
            self.robot.copy(),
            [None if lm is None else replace(lm) for lm in self.landmarks],
            self.covariance.copy(),
            self.cameras,
            self.insertion_counter,
            self.last_imu,
        )

    def pose_covariance(self):
        return self.covariance[:6, :6]


# --- state algebra -----------------------------------------------------------


def retract(state: FilterState, dx) -> FilterState:
    """``state (+) dx`` for an error-state vector ``dx``."""
    dx = np.asarray(dx, dtype=float)
    out = state.copy()
    rb = out.robot
    rb.r = rb.r + dx[R_SL]
    rb.q = quat_normalize(quat_multiply(rb.q, quat_exp(dx[TH_SL])))
    rb.v = rb.v + dx[V_SL]
    rb.b_f = rb.b_f + dx[BF_SL]
    rb.b_omega = rb.b_omega + dx[BW_SL]
    for slot in out.active_slots():
        i = out.landmark_index(slot)
        lm = out.landmarks[slot]
        lm.azimuth += dx[i]
        lm.elevation += dx[i + 1]
        lm.rho += dx[i + 2]
    return out


def local_difference(a: FilterState, b: FilterState):
    """Error-state vector ``a (-) b`` (inverse of :func:`retract`)."""
    if a.active_slots() != b.active_slots():
        raise InvalidInputError("states have different landmark sets")
    d = np.zeros(a.dim)
    d[R_SL] = a.robot.r - b.robot.r
    d[TH_SL] = so3_log(b.robot.R.T @ a.robot.R)
    d[V_SL] = a.robot.v - b.robot.v
    d[BF_SL] = a.robot.b_f - b.robot.b_f
    d[BW_SL] = a.robot.b_omega - b.robot.b_omega
    for slot in a.active_slots():
        i = a.landmark_index(slot)
        la, lb = a.landmarks[slot], b.landmarks[slot]
        d[i:i + 3] = [la.azimuth - lb.azimuth, la.elevation - lb.elevation, la.rho - lb.rho]
    return d


def symmetrize(P):
    return 0.5 * (P + P.T)


# --- initialization ------------------------------------------------------------


def roll_pitch_from_accel(f):
    """Roll and pitch of a level-at-rest IMU from its mean specific force."""
    fx, fy, fz = f
    return float(np.arctan2(fy, fz)), float(np.arctan2(-fx, np.hypot(fy, fz)))


def initial_state(samples, cameras, config: FilterConfig = FilterConfig(), window=0.5):
    """Filter state at rest from the first ``window`` seconds of IMU samples.

    Roll and pitch come from the averaged accelerometer, yaw is zero, position
    is the origin and velocity is zero.
    """
    if not samples:
        raise InvalidInputError("no IMU samples for initialization")
    t0 = samples[0].timestamp
    f = np.mean([s.f_hat for s in samples if s.timestamp <= t0 + window], axis=0)
    roll, pitch = roll_pitch_from_accel(f)
    q = rot_to_quat(euler_zyx_to_rot(roll, pitch, 0.0))
    robot = RobotState(np.zeros(3), q, np.zeros(3), np.zeros(3), np.zeros(3))
    c = config
    sig = np.concatenate([
        np.full(3, c.init_sigma_position),
        [c.init_sigma_attitude, c.init_sigma_attitude, c.init_sigma_yaw],
        np.full(3, c.init_sigma_velocity),
        np.full(3, c.init_sigma_accel_bias),
        np.full(3, c.init_sigma_gyro_bias),
    ])
    # the yaw-axis sigma is specified in the world frame; rotate into body frame
    P = np.diag(sig**2)
    Rb = quat_to_rot(q)
    P[TH_SL, TH_SL] = Rb.T @ P[TH_SL, TH_SL] @ Rb
    return FilterState(t0, robot, [None] * c.max_landmarks, P, dict(cameras),
                       last_imu=samples[0])


# --- propagation -------------------------------------------------------------


@dataclass
class _Step:
    """Nominal quantities of one propagation step reused by its Jacobians."""

    dt: float
    R: np.ndarray
    dR: np.ndarray
    Jr: np.ndarray
    f0c: np.ndarray
    f1c: np.ndarray


def _propagate_robot(robot: RobotState, imu0: ImuSample, imu1: ImuSample, dt):
    R = robot.R
    w_bar = 0.5 * (imu0.omega_hat + imu1.omega_hat) - robot.b_omega
    dR = so3_exp(w_bar * dt)
    R1 = R @ dR
    f0c = imu0.f_hat - robot.b_f
    f1c = imu1.f_hat - robot.b_f
    a0 = R @ f0c + GRAVITY
    a1 = R1 @ f1c + GRAVITY
    new = RobotState(
        robot.r + robot.v * dt + (2.0 * a0 + a1) * (dt * dt / 6.0),
        quat_normalize(quat_multiply(robot.q, quat_exp(w_bar * dt))),
        robot.v + 0.5 * (a0 + a1) * dt,
        robot.b_f.copy(),
        robot.b_omega.copy(),
    )
    return new, _Step(dt, R, dR, right_jacobian(w_bar * dt), f0c, f1c)


def _robot_jacobian(st: _Step):
    dt, R, dR, Jr = st.dt, st.R, st.dR, st.Jr
    R1 = R @ dR
    F = np.eye(ROBOT_DIM)
    da0_dth = -R @ skew(st.f0c)
    da1_dth = -R1 @ skew(st.f1c) @ dR.T
    da0_dbf = -R
    da1_dbf = -R1
    da1_dbw = R1 @ skew(st.f1c) @ Jr * dt

    F[TH_SL, TH_SL] = dR.T
    F[TH_SL, BW_SL] = -Jr * dt

    F[V_SL, TH_SL] = 0.5 * dt * (da0_dth + da1_dth)
    F[V_SL, BF_SL] = 0.5 * dt * (da0_dbf + da1_dbf)
    F[V_SL, BW_SL] = 0.5 * dt * da1_dbw

    k = dt * dt / 6.0
    F[R_SL, V_SL] = dt * np.eye(3)
    F[R_SL, TH_SL] = k * (2.0 * da0_dth + da1_dth)
    F[R_SL, BF_SL] = k * (2.0 * da0_dbf + da1_dbf)
    F[R_SL, BW_SL] = k * da1_dbw
    return F


def _propagate_landmark(lm: TrackedLandmark, cam: Camera, robot: RobotState, st: _Step):
    """New (azimuth, elevation, rho) and Jacobians w.r.t. robot and landmark errors."""
    dt, R, dR = st.dt, st.R, st.dR
    w = robot.v * dt + GRAVITY * (0.5 * dt * dt)
    t_b = R.T @ w + (dt * dt / 6.0) * (2.0 * st.f0c + dR @ st.f1c)
    p_c = lm.point()
    p_b = cam.R_bc @ p_c + cam.p_bc
    p_b1 = dR.T @ (p_b - t_b)
    p_c1 = cam.R_bc.T @ (p_b1 - cam.p_bc)
    az, el = bearing_angles(p_c1)
    rho = 1.0 / np.linalg.norm(p_c1)

    A = cam.R_bc.T @ dR.T  # d p_c1 / d p_b
    D = bearing_angles_jacobian(p_c1)
    J_rob = np.zeros((3, ROBOT_DIM))
    J_rob[:, TH_SL] = -A @ skew(R.T @ w)
    J_rob[:, V_SL] = -A @ R.T * dt
    J_rob[:, BF_SL] = A @ (2.0 * np.eye(3) + dR) * (dt * dt / 6.0)
    J_rob[:, BW_SL] = cam.R_bc.T @ (skew(p_b1) + (dt * dt / 6.0) * skew(st.f1c)) @ (-st.Jr * dt)
    J_lm = A @ cam.R_bc @ point_from_bearing_jacobian(lm.azimuth, lm.elevation, lm.rho)
    return (az, el, rho), D @ J_rob, D @ J_lm


def propagation_jacobian(state: FilterState, imu: ImuSample, dt: float):
    """Analytic error-state transition ``F`` for one :func:`propagate` step."""
    imu0 = state.last_imu if state.last_imu is not None else imu
    _, st = _propagate_robot(state.robot, imu0, imu, dt)
    return _transition(state, st)[1]


def _transition(state: FilterState, st: _Step):
    n = state.dim
    F = np.zeros((n, n))
    F[:ROBOT_DIM, :ROBOT_DIM] = _robot_jacobian(st)
    new_lms = list(state.landmarks)
    for slot in state.active_slots():
        lm = state.landmarks[slot]
        i = state.landmark_index(slot)
        vals, J_rob, J_lm = _propagate_landmark(lm, state.cameras[lm.spectrum], state.robot, st)
        F[i:i + 3, :ROBOT_DIM] = J_rob
        F[i:i + 3, i:i + 3] = J_lm
        warp = None if lm.warp is None else J_lm[:2, :2] @ lm.warp
        new_lms[slot] = replace(lm, azimuth=vals[0], elevation=vals[1], rho=vals[2], warp=warp)
    return new_lms, F


def propagate(state: FilterState, imu: ImuSample, dt: float, noise: ImuNoiseConfig | None = None):
    """Advance the state by ``dt`` seconds to the time of sample ``imu``.

    The IMU signal is treated as linear between the previous sample and
    ``imu`` (trapezoidal velocity, exact-for-linear-acceleration position).
    """
    imu.validate()
    if not (dt > 0.0):
        raise InvalidInputError(f"dt must be positive, got {dt}")
    if dt > 0.1:
        raise InvalidInputError(f"dt {dt} exceeds the 0.1 s propagation limit")
    noise = noise or ImuNoiseConfig()
    imu0 = state.last_imu if state.last_imu is not None else imu

    robot1, st = _propagate_robot(state.robot, imu0, imu, dt)
    new_lms, F = _transition(state, st)

    n = state.dim
    G = np.zeros((n, 12))
    G[:, 0:3] = -F[:, BF_SL]
    G[:, 3:6] = -F[:, BW_SL]
    # white noise acts like a bias over one step but never enters the biases
    G[BF_SL, 0:3] = 0.0
    G[BW_SL, 3:6] = 0.0
    G[BF_SL, 6:9] = np.eye(3)
    G[BW_SL, 9:12] = np.eye(3)
    q_diag = np.concatenate([
        np.full(3, noise.accel_noise**2 / dt),
        np.full(3, noise.gyro_noise**2 / dt),
        np.full(3, noise.accel_bias_walk**2 * dt),
        np.full(3, noise.gyro_bias_walk**2 * dt),
    ])
    P = F @ state.covariance @ F.T + (G * q_diag) @ G.T
    lm_q = np.array([noise.bearing_walk**2, noise.bearing_walk**2, noise.inverse_depth_walk**2]) * dt
    for slot in state.active_slots():
        i = state.landmark_index(slot)
        P[i:i + 3, i:i + 3] += np.diag(lm_q)

    return FilterState(state.timestamp + dt, robot1, new_lms, symmetrize(P), state.cameras,
                       state.insertion_counter, imu)


# --- measurement ---------------------------------------------------------------


def measurement_jacobian(state: FilterState, slot: int, intrinsics: PinholeModel | None = None):
    """Predicted pixel and the full ``2 x dim`` Jacobian of the pixel."""
    lm = state.landmarks[slot]
    if lm is None:
        raise InvalidInputError(f"landmark slot {slot} is empty")
    intr = intrinsics or state.cameras[lm.spectrum].intrinsics
    mu = lm.bearing
    if mu[2] <= 1e-6:
        raise OutOfViewError(f"landmark {slot} is behind its camera")
    pix, J_proj = intr.project(mu)
    dmu = point_from_bearing_jacobian(lm.azimuth, lm.elevation, 1.0)[:, :2]
    H = np.zeros((2, state.dim))
    i = state.landmark_index(slot)
    H[:, i:i + 2] = J_proj @ dmu
    return pix, H


def pixel_angle_jacobian(intrinsics: PinholeModel, azimuth, elevation):
    """2x2 ``d pixel / d (azimuth, elevation)``."""
    _, J_proj = intrinsics.project(bearing_vector(azimuth, elevation))
    return J_proj @ point_from_bearing_jacobian(azimuth, elevation, 1.0)[:, :2]


def patch_warp(state: FilterState, slot: int):
    """Affine map from reference-patch pixel offsets to current-image offsets."""
    lm = state.landmarks[slot]
    if lm.warp is None:
        return np.eye(2)
    intr = state.cameras[lm.spectrum].intrinsics
    return pixel_angle_jacobian(intr, lm.azimuth, lm.elevation) @ lm.warp


def predict_pixel(state: FilterState, landmark_slot: int, intrinsics: PinholeModel | None = None):
    """Projected pixel of a landmark and its 2x2 first-order covariance."""
    pix, H = measurement_jacobian(state, landmark_slot, intrinsics)
    i = state.landmark_index(landmark_slot)
    Hl = H[:, i:i + 3]
    cov = Hl @ state.covariance[i:i + 3, i:i + 3] @ Hl.T
    return pix, symmetrize(cov)


def conditional_depth_sigma(P, i, Prr_inv=None):
    """Std of the inverse depth at row ``i + 2`` given the robot error state.

    Robocentric landmarks inherit the robot's motion uncertainty; conditioning
    on the robot isolates how well the depth itself is triangulated.
    """
    if Prr_inv is None:
        Prr_inv = np.linalg.pinv(P[:ROBOT_DIM, :ROBOT_DIM], hermitian=True)
    c = P[i + 2, :ROBOT_DIM]
    return float(np.sqrt(max(P[i + 2, i + 2] - c @ Prr_inv @ c, 0.0)))


@dataclass
class UpdateReport:
    accepted: list = field(default_factory=list)
    gated: list = field(default_factory=list)
    unconverged: list = field(default_factory=list)
    singular: list = field(default_factory=list)


def update(state: FilterState, matches, intrinsics=None, config: FilterConfig = FilterConfig()):
    """EKF update from patch-alignment results ``[(slot, MatchResult), ...]``.

    Non-converged matches only increment the landmark's miss counter. Each
    converged match is gated by its Mahalanobis distance before the batch
    Joseph-form update. Returns ``(new_state, UpdateReport)``.
    """
    out = state.copy()
    report = UpdateReport()
    gate = chi2.ppf(config.chi2_prob, 2)
    sigma2 = config.sigma_px**2
    P = out.covariance
    rows_H, rows_y, rows_own = [], [], []
    Prr_inv = np.linalg.pinv(P[:ROBOT_DIM, :ROBOT_DIM], hermitian=True)
    for slot, match in matches:
        lm = out.landmarks[slot]
        if lm is None:
            raise InvalidInputError(f"match for empty slot {slot}")
        if not match.converged:
            report.unconverged.append(slot)
            continue
        intr = intrinsics.get(lm.spectrum) if isinstance(intrinsics, dict) else intrinsics
        try:
            pix, H = measurement_jacobian(out, slot, intr)
        except OutOfViewError:
            report.unconverged.append(slot)
            continue
        y = np.asarray(match.measured_pixel, dtype=float) - pix
        S = H @ P @ H.T + sigma2 * np.eye(2)
        try:
            d2 = float(y @ np.linalg.solve(S, y))
        except np.linalg.LinAlgError:
            logger.warning("singular innovation covariance for landmark slot %d", slot)
            report.singular.append(slot)
            continue
        if not np.isfinite(d2):
            report.singular.append(slot)
            continue
        if d2 > gate:
            report.gated.append(slot)
            continue
        rows_H.append(H)
        rows_y.append(y)
        i = out.landmark_index(slot)
        if conditional_depth_sigma(P, i, Prr_inv) > config.mature_rel_sigma * lm.rho:
            rows_own.append(i)
        else:
            rows_own.append(None)
        report.accepted.append(slot)

    if rows_H:
        H = np.vstack(rows_H)
        y = np.concatenate(rows_y)
        S = H @ P @ H.T + sigma2 * np.eye(len(y))
        K = np.linalg.solve(S, H @ P).T
        # immature landmarks only refine their own block (Schmidt gain);
        # Joseph form keeps the covariance exact for any gain
        for k, i in enumerate(rows_own):
            if i is not None:
                col = K[:, 2 * k:2 * k + 2]
                own = col[i:i + 3].copy()
                col[:] = 0.0
                col[i:i + 3] = own
        dx = K @ y
        IKH = np.eye(out.dim) - K @ H
        P_new = IKH @ P @ IKH.T + sigma2 * (K @ K.T)
        out = retract(out, dx)
        out.covariance = symmetrize(P_new)
        for slot in out.active_slots():
            lm = out.landmarks[slot]
            if lm.rho < config.rho_min:
                lm.rho = config.rho_min

    for slot in report.accepted:
        lm = out.landmarks[slot]
        lm.frames_tracked += 1
        lm.consecutive_misses = 0
    for slot in report.gated + report.unconverged + report.singular:
        out.landmarks[slot].consecutive_misses += 1
    return out, report


# --- landmark lifecycle ---------------------------------------------------------


def remove_landmark(state: FilterState, slot: int) -> FilterState:
    out = state.copy()
    i = out.landmark_index(slot)
    keep = np.r_[0:i, i + 3:out.dim]
    out.covariance = out.covariance[np.ix_(keep, keep)]
    out.landmarks[slot] = None
    return out


def insert_landmark(state: FilterState, slot: int, landmark: TrackedLandmark, block) -> FilterState:
    """Place ``landmark`` in empty ``slot`` with an uncorrelated 3x3 covariance."""
    if state.landmarks[slot] is not None:
        raise InvalidInputError(f"slot {slot} is occupied")
    out = state.copy()
    k = sum(1 for i in range(slot) if out.landmarks[i] is not None)
    i = ROBOT_DIM + LANDMARK_DIM * k
    n = out.dim
    P = np.zeros((n + 3, n + 3))
    old = np.r_[0:i, i + 3:n + 3]
    P[np.ix_(old, old)] = out.covariance
    P[i:i + 3, i:i + 3] = block
    out.covariance = P
    out.landmarks[slot] = landmark
    out.insertion_counter += 1
    return out


@dataclass(frozen=True)
class DropPolicy:
    miss_limit: int = 3
    margin: float = 0.0


@dataclass
class InsertionReport:
    inserted: list = field(default_factory=list)   # (slot, FeatureCandidate)
    dropped: list = field(default_factory=list)    # (slot, reason)


def landmark_from_pixel(camera: Camera, candidate, config: FilterConfig, patch=None, landmark_id=-1):
    ray = camera.intrinsics.back_project(candidate.pixel)
    az, el = bearing_angles(ray)
    sb = config.sigma_px / camera.intrinsics.fx
    warp = np.linalg.inv(pixel_angle_jacobian(camera.intrinsics, az, el))
    lm = TrackedLandmark(az, el, config.rho_init, candidate.spectrum, patch,
                         landmark_id=landmark_id, last_pixel=tuple(candidate.pixel), warp=warp)
    block = np.diag([sb**2, sb**2, config.sigma_rho**2])
    return lm, block


def manage_landmarks(state: FilterState, detections, drop_policy: DropPolicy = DropPolicy(),
                     *, config: FilterConfig = FilterConfig(), patch_source=None, selector=None):
    """Drop stale or out-of-view landmarks, then fill free slots.

    ``detections`` are candidates already filtered by mask and distance; they
    are ranked by ``selector(visual, thermal, free_slots)`` (cross-spectral
    :func:`dvevio.tracker.select_best` by default). ``patch_source(candidate)``
    returns the reference patch or raises :class:`OutOfViewError` to skip it.
    Returns ``(new_state, InsertionReport)``.
    """
    if selector is None:
        from dvevio.tracker import select_best as selector
    report = InsertionReport()
    out = state
    for slot in state.active_slots():
        lm = out.landmarks[slot]
        reason = None
        if lm.consecutive_misses >= drop_policy.miss_limit:
            reason = "missed"
        else:
            try:
                pix, _ = predict_pixel(out, slot)
                if not out.cameras[lm.spectrum].intrinsics.in_image(pix, drop_policy.margin):
                    reason = "out_of_view"
            except OutOfViewError:
                reason = "out_of_view"
        if reason:
            out = remove_landmark(out, slot)
            report.dropped.append((slot, reason))

    free = [i for i, lm in enumerate(out.landmarks) if lm is None]
    if not free or not detections:
        return out, report
    visual = [d for d in detections if d.spectrum == Spectrum.VISUAL]
    thermal = [d for d in detections if d.spectrum == Spectrum.THERMAL]
    chosen = selector(visual, thermal, len(free))
    for cand in chosen:
        if not free:
            break
        patch = None
        if patch_source is not None:
            try:
                patch = patch_source(cand)
            except OutOfViewError:
                continue
        slot = free.pop(0)
        lm, block = landmark_from_pixel(out.cameras[cand.spectrum], cand, config, patch,
                                        landmark_id=out.insertion_counter)
        out = insert_landmark(out, slot, lm, block)
        report.inserted.append((slot, cand))
    return out, report
