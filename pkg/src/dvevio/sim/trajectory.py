"""Closed-form trajectories and IMU synthesis.

Every trajectory returns position, velocity and acceleration in the world
frame (z up) together with the body attitude and the body-frame angular rate,
all from analytic derivatives.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from dvevio.ekf import GRAVITY, ImuSample
from dvevio.geometry import euler_zyx_to_rot


@dataclass(frozen=True)
class TrajectoryPoint:
    t: float
    p: np.ndarray
    v: np.ndarray
    a: np.ndarray
    R: np.ndarray
    omega_body: np.ndarray


def _euler_rates_to_body(roll, pitch, droll, dpitch, dyaw):
    cr, sr = np.cos(roll), np.sin(roll)
    cp, sp = np.cos(pitch), np.sin(pitch)
    return np.array([
        droll - dyaw * sp,
        dpitch * cr + dyaw * cp * sr,
        -dpitch * sr + dyaw * cp * cr,
    ])


def _enveloped_sine(u, amp, cycles):
    """``amp * sin(2 pi cycles u) * sin(pi u)**2`` and its first two u-derivatives.

    Value, slope and curvature all vanish at ``u = 0`` and ``u = 1``.
    """
    a = 2.0 * np.pi * cycles
    g, g1, g2 = np.sin(a * u), a * np.cos(a * u), -a * a * np.sin(a * u)
    e = np.sin(np.pi * u) ** 2
    e1 = np.pi * np.sin(2.0 * np.pi * u)
    e2 = 2.0 * np.pi**2 * np.cos(2.0 * np.pi * u)
    return amp * g * e, amp * (g1 * e + g * e1), amp * (g2 * e + 2.0 * g1 * e1 + g * e2)


class Trajectory:
    duration: float

    def at(self, t) -> TrajectoryPoint:
        raise NotImplementedError

    def length(self, samples=2000):
        ts = np.linspace(0.0, self.duration, samples)
        ps = np.array([self.at(t).p for t in ts])
        return float(np.sum(np.linalg.norm(np.diff(ps, axis=0), axis=1)))


@dataclass(frozen=True)
class CorridorTraverse(Trajectory):
    """Hover, fly ``length`` metres along +x with gentle sway, hover again.

    The first ``hold`` seconds are at rest so the estimator can level itself.
    """

    length_m: float = 20.0
    duration: float = 10.0
    hold: float = 1.0
    start: tuple = (0.0, 0.0, 1.5)
    lateral_amp: float = 0.3
    lateral_cycles: float = 2.0
    vertical_amp: float = 0.15
    vertical_cycles: float = 3.0
    yaw_amp: float = 0.12
    yaw_cycles: float = 2.0
    roll_amp: float = 0.05
    roll_cycles: float = 3.0
    pitch_amp: float = 0.04
    pitch_cycles: float = 2.0

    def at(self, t):
        T = self.duration - self.hold
        u = float(np.clip((t - self.hold) / T, 0.0, 1.0))
        moving = 0.0 < (t - self.hold) < T
        k1, k2 = (1.0 / T, 1.0 / T**2) if moving else (0.0, 0.0)
        two_pi = 2.0 * np.pi
        L = self.length_m
        x = L * (u - np.sin(two_pi * u) / two_pi)
        dx = L * (1.0 - np.cos(two_pi * u))
        ddx = L * two_pi * np.sin(two_pi * u)
        y, dy, ddy = _enveloped_sine(u, self.lateral_amp, self.lateral_cycles)
        z, dz, ddz = _enveloped_sine(u, self.vertical_amp, self.vertical_cycles)
        yaw, dyaw, _ = _enveloped_sine(u, self.yaw_amp, self.yaw_cycles)
        roll, droll, _ = _enveloped_sine(u, self.roll_amp, self.roll_cycles)
        pitch, dpitch, _ = _enveloped_sine(u, self.pitch_amp, self.pitch_cycles)
        p = np.array(self.start, dtype=float) + [x, y, z]
        v = np.array([dx, dy, dz]) * k1
        a = np.array([ddx, ddy, ddz]) * k2
        R = euler_zyx_to_rot(roll, pitch, yaw)
        w = _euler_rates_to_body(roll, pitch, droll * k1, dpitch * k1, dyaw * k1)
        return TrajectoryPoint(t, p, v, a, R, w)


@dataclass(frozen=True)
class CircleTrajectory(Trajectory):
    """Uniform circular motion, heading along the tangent."""

    radius: float = 2.0
    rate: float = 0.5
    duration: float = 10.0
    center: tuple = (0.0, 0.0, 1.5)

    def at(self, t):
        w, r = self.rate, self.radius
        c, s = np.cos(w * t), np.sin(w * t)
        p = np.array(self.center, dtype=float) + [r * c, r * s, 0.0]
        v = np.array([-r * w * s, r * w * c, 0.0])
        a = np.array([-r * w * w * c, -r * w * w * s, 0.0])
        R = euler_zyx_to_rot(0.0, 0.0, w * t + np.pi / 2.0)
        return TrajectoryPoint(t, p, v, a, R, np.array([0.0, 0.0, w]))


@dataclass(frozen=True)
class LineTrajectory(Trajectory):
    """Constant velocity along a straight line with fixed attitude."""

    velocity: tuple = (1.0, 0.0, 0.0)
    duration: float = 10.0
    start: tuple = (0.0, 0.0, 1.5)
    yaw: float = 0.0

    def at(self, t):
        v = np.array(self.velocity, dtype=float)
        p = np.array(self.start, dtype=float) + v * t
        return TrajectoryPoint(t, p, v, np.zeros(3), euler_zyx_to_rot(0.0, 0.0, self.yaw), np.zeros(3))


def make_trajectory(kind, length_m=20.0, duration=10.0):
    if kind == "corridor":
        return CorridorTraverse(length_m=length_m, duration=duration)
    if kind == "circle":
        return CircleTrajectory(duration=duration)
    if kind == "line":
        return LineTrajectory(velocity=(length_m / duration, 0.0, 0.0), duration=duration)
    raise ValueError(f"unknown trajectory kind {kind!r}")


@dataclass(frozen=True)
class ImuNoise:
    """Sensor noise for synthesis: white-noise densities, bias random walks and
    constant initial biases."""

    accel_noise: float = 0.0
    gyro_noise: float = 0.0
    accel_bias_walk: float = 0.0
    gyro_bias_walk: float = 0.0
    accel_bias: tuple = (0.0, 0.0, 0.0)
    gyro_bias: tuple = (0.0, 0.0, 0.0)


def synthesize_imu(trajectory: Trajectory, rate=200.0, noise=ImuNoise(), seed=0):
    """IMU samples ``f = R^T (a - g) + b_f + n_f`` and ``w = w_body + b_w + n_w``."""
    rng = np.random.default_rng(seed)
    dt = 1.0 / rate
    n = int(round(trajectory.duration * rate)) + 1
    b_f = np.array(noise.accel_bias, dtype=float)
    b_w = np.array(noise.gyro_bias, dtype=float)
    sd_f = noise.accel_noise / np.sqrt(dt)
    sd_w = noise.gyro_noise / np.sqrt(dt)
    out = []
    for k in range(n):
        t = k * dt
        pt = trajectory.at(t)
        f = pt.R.T @ (pt.a - GRAVITY) + b_f
        w = pt.omega_body + b_w
        if sd_f > 0:
            f = f + rng.normal(0.0, sd_f, 3)
        if sd_w > 0:
            w = w + rng.normal(0.0, sd_w, 3)
        out.append(ImuSample(t, f, w))
        if noise.accel_bias_walk > 0:
            b_f = b_f + rng.normal(0.0, noise.accel_bias_walk * np.sqrt(dt), 3)
        if noise.gyro_bias_walk > 0:
            b_w = b_w + rng.normal(0.0, noise.gyro_bias_walk * np.sqrt(dt), 3)
    return out
