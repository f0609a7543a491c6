"""Shared fixtures for filter-level tests."""

from __future__ import annotations

import numpy as np

from dvevio.ekf import (
    Camera,
    FilterState,
    ImuSample,
    RobotState,
    TrackedLandmark,
    local_difference,
    measurement_jacobian,
    propagate,
    propagation_jacobian,
    retract,
)
from dvevio.geometry import PinholeModel, quat_normalize, so3_exp
from dvevio.imaging import Spectrum

R_BC = np.array([[0.0, 0.0, 1.0], [-1.0, 0.0, 0.0], [0.0, -1.0, 0.0]])
INTR = PinholeModel(160.0, 160.0, 127.5, 95.5, 256, 192)


def cameras():
    return {
        Spectrum.VISUAL: Camera(Spectrum.VISUAL, INTR, R_BC, np.array([0.1, 0.05, 0.0])),
        Spectrum.THERMAL: Camera(Spectrum.THERMAL, INTR, so3_exp([0.05, 0.02, 0.1]) @ R_BC,
                                 np.array([0.1, -0.05, 0.02])),
    }


def random_state(rng, slots=(0, 2, 3), n_slots=5):
    rb = RobotState(rng.normal(size=3), quat_normalize(rng.normal(size=4)), rng.normal(size=3),
                    0.1 * rng.normal(size=3), 0.01 * rng.normal(size=3))
    lms = [None] * n_slots
    for s in slots:
        spec = Spectrum.THERMAL if s == 2 else Spectrum.VISUAL
        lms[s] = TrackedLandmark(rng.uniform(-0.5, 0.5), rng.uniform(-0.4, 0.4), rng.uniform(0.1, 1.0), spec)
    n = 15 + 3 * len(slots)
    imu0 = ImuSample(0.0, rng.normal(size=3) + [0, 0, 9.81], rng.normal(size=3))
    return FilterState(0.0, rb, lms, np.eye(n), cameras(), last_imu=imu0)


def rel_error(analytic, numeric):
    """Worst column-wise ``max|A - N| / max|N|`` (columns with max|N| < 1e-9 use absolute error)."""
    diff = np.max(np.abs(analytic - numeric), axis=0)
    scale = np.max(np.abs(numeric), axis=0)
    return float(np.max(np.where(scale > 1e-9, diff / np.maximum(scale, 1e-9), diff)))


def numeric_propagation_jacobian(state, imu, dt, eps=1e-6):
    base = propagate(state, imu, dt)
    N = np.zeros((state.dim, state.dim))
    for j in range(state.dim):
        e = np.zeros(state.dim)
        e[j] = eps
        a = propagate(retract(state, e), imu, dt)
        b = propagate(retract(state, -e), imu, dt)
        N[:, j] = (local_difference(a, base) - local_difference(b, base)) / (2 * eps)
    return N


def numeric_measurement_jacobian(state, slot, eps=1e-6):
    N = np.zeros((2, state.dim))
    for j in range(state.dim):
        e = np.zeros(state.dim)
        e[j] = eps
        a, _ = measurement_jacobian(retract(state, e), slot)
        b, _ = measurement_jacobian(retract(state, -e), slot)
        N[:, j] = (np.asarray(a) - np.asarray(b)) / (2 * eps)
    return N


def worst_jacobian_errors(n_states=100, seed=0, dt=0.05):
    rng = np.random.default_rng(seed)
    worst_f = worst_h = 0.0
    for _ in range(n_states):
        st = random_state(rng)
        imu = ImuSample(dt, rng.normal(size=3) + [0, 0, 9.81], rng.normal(size=3))
        F = propagation_jacobian(st, imu, dt)
        worst_f = max(worst_f, rel_error(F, numeric_propagation_jacobian(st, imu, dt)))
        for slot in st.active_slots():
            _, H = measurement_jacobian(st, slot)
            worst_h = max(worst_h, rel_error(H, numeric_measurement_jacobian(st, slot)))
    return worst_f, worst_h
