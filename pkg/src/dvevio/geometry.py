"""Rotation, quaternion and camera-projection helpers.

Quaternions are Hamilton, stored as ``[w, x, y, z]``. A quaternion ``q`` maps
body-frame vectors into the world frame: ``v_W = R(q) @ v_B``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from dvevio.errors import InvalidInputError, OutOfViewError

_SMALL_ANGLE = 1e-7


def skew(v):
    """Cross-product matrix, ``skew(a) @ b == np.cross(a, b)``."""
    x, y, z = v
    return np.array([[0.0, -z, y], [z, 0.0, -x], [-y, x, 0.0]])


def so3_exp(phi):
    """Rotation matrix for the rotation vector ``phi`` (Rodrigues)."""
    phi = np.asarray(phi, dtype=float)
    theta = np.linalg.norm(phi)
    K = skew(phi)
    if theta < _SMALL_ANGLE:
        return np.eye(3) + K + 0.5 * K @ K
    return (
        np.eye(3)
        + (np.sin(theta) / theta) * K
        + ((1.0 - np.cos(theta)) / theta**2) * K @ K
    )


def so3_log(R):
    """Rotation vector of the rotation matrix ``R``."""
    cos_theta = np.clip((np.trace(R) - 1.0) * 0.5, -1.0, 1.0)
    theta = np.arccos(cos_theta)
    w = np.array([R[2, 1] - R[1, 2], R[0, 2] - R[2, 0], R[1, 0] - R[0, 1]])
    if theta < _SMALL_ANGLE:
        return 0.5 * w
    if np.pi - theta < 1e-6:
        # near pi: recover the axis from the symmetric part
        A = 0.5 * (R + np.eye(3))
        axis = np.sqrt(np.clip(np.diag(A), 0.0, None))
        k = int(np.argmax(axis))
        axis = A[:, k] / np.sqrt(A[k, k])
        return theta * axis / np.linalg.norm(axis)
    return theta / (2.0 * np.sin(theta)) * w


def right_jacobian(phi):
    """Right Jacobian of SO(3): ``Exp(phi + d) ~= Exp(phi) Exp(Jr(phi) d)``."""
    phi = np.asarray(phi, dtype=float)
    theta = np.linalg.norm(phi)
    K = skew(phi)
    if theta < 1e-5:
        return np.eye(3) - 0.5 * K + (1.0 / 6.0) * K @ K
    return (
        np.eye(3)
        - ((1.0 - np.cos(theta)) / theta**2) * K
        + ((theta - np.sin(theta)) / theta**3) * K @ K
    )


def quat_multiply(p, q):
    pw, px, py, pz = p
    qw, qx, qy, qz = q
    return np.array(
        [
            pw * qw - px * qx - py * qy - pz * qz,
            pw * qx + px * qw + py * qz - pz * qy,
            pw * qy - px * qz + py * qw + pz * qx,
            pw * qz + px * qy - py * qx + pz * qw,
        ]
    )


def quat_normalize(q):
    q = np.asarray(q, dtype=float)
    q = q / np.linalg.norm(q)
    # canonical sign keeps serialized output stable
    return -q if q[0] < 0 else q


def quat_exp(phi):
    """Unit quaternion for the rotation vector ``phi``."""
    phi = np.asarray(phi, dtype=float)
    theta = np.linalg.norm(phi)
    if theta < _SMALL_ANGLE:
        q = np.array([1.0, 0.5 * phi[0], 0.5 * phi[1], 0.5 * phi[2]])
        return q / np.linalg.norm(q)
    half = 0.5 * theta
    return np.concatenate([[np.cos(half)], np.sin(half) * phi / theta])


def quat_to_rot(q):
    w, x, y, z = q
    return np.array(
        [
            [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
            [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
            [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
        ]
    )


def rot_to_quat(R):
    """Unit quaternion of a rotation matrix (Shepperd's method)."""
    tr = np.trace(R)
    if tr > 0:
        s = 2.0 * np.sqrt(tr + 1.0)
        q = [0.25 * s, (R[2, 1] - R[1, 2]) / s, (R[0, 2] - R[2, 0]) / s, (R[1, 0] - R[0, 1]) / s]
    elif R[0, 0] > R[1, 1] and R[0, 0] > R[2, 2]:
        s = 2.0 * np.sqrt(1.0 + R[0, 0] - R[1, 1] - R[2, 2])
        q = [(R[2, 1] - R[1, 2]) / s, 0.25 * s, (R[0, 1] + R[1, 0]) / s, (R[0, 2] + R[2, 0]) / s]
    elif R[1, 1] > R[2, 2]:
        s = 2.0 * np.sqrt(1.0 + R[1, 1] - R[0, 0] - R[2, 2])
        q = [(R[0, 2] - R[2, 0]) / s, (R[0, 1] + R[1, 0]) / s, 0.25 * s, (R[1, 2] + R[2, 1]) / s]
    else:
        s = 2.0 * np.sqrt(1.0 + R[2, 2] - R[0, 0] - R[1, 1])
        q = [(R[1, 0] - R[0, 1]) / s, (R[0, 2] + R[2, 0]) / s, (R[1, 2] + R[2, 1]) / s, 0.25 * s]
    return quat_normalize(q)


def euler_zyx_to_rot(roll, pitch, yaw):
    """``Rz(yaw) @ Ry(pitch) @ Rx(roll)``."""
    cr, sr = np.cos(roll), np.sin(roll)
    cp, sp = np.cos(pitch), np.sin(pitch)
    cy, sy = np.cos(yaw), np.sin(yaw)
    return np.array(
        [
            [cy * cp, cy * sp * sr - sy * cr, cy * sp * cr + sy * sr],
            [sy * cp, sy * sp * sr + cy * cr, sy * sp * cr - cy * sr],
            [-sp, cp * sr, cp * cr],
        ]
    )


def yaw_of(R):
    return float(np.arctan2(R[1, 0], R[0, 0]))


# --- bearing parameterization -------------------------------------------------


def bearing_vector(azimuth, elevation):
    """Unit ray ``(cos b sin a, sin b, cos b cos a)`` in a z-forward camera frame."""
    cb = np.cos(elevation)
    return np.array([cb * np.sin(azimuth), np.sin(elevation), cb * np.cos(azimuth)])


def bearing_angles(p):
    """Inverse of :func:`bearing_vector` for any nonzero vector ``p``."""
    x, y, z = p
    return float(np.arctan2(x, z)), float(np.arctan2(y, np.hypot(x, z)))


def bearing_angles_jacobian(p):
    """d(azimuth, elevation, inverse_distance)/dp for a camera-frame point ``p``."""
    x, y, z = p
    h2 = x * x + z * z
    h = np.sqrt(h2)
    n2 = h2 + y * y
    n = np.sqrt(n2)
    return np.array(
        [
            [z / h2, 0.0, -x / h2],
            [-y * x / (h * n2), h / n2, -y * z / (h * n2)],
            [-x / n**3, -y / n**3, -z / n**3],
        ]
    )


def point_from_bearing_jacobian(azimuth, elevation, rho):
    """dp/d(azimuth, elevation, rho) for ``p = bearing_vector(a, b) / rho``."""
    sa, ca = np.sin(azimuth), np.cos(azimuth)
    sb, cb = np.sin(elevation), np.cos(elevation)
    mu = np.array([cb * sa, sb, cb * ca])
    return np.column_stack(
        [
            np.array([cb * ca, 0.0, -cb * sa]) / rho,
            np.array([-sb * sa, cb, -sb * ca]) / rho,
            -mu / rho**2,
        ]
    )


@dataclass(frozen=True)
class PinholeModel:
    """Pinhole camera with two-term radial distortion."""

    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int
    k1: float = 0.0
    k2: float = 0.0

    def project(self, p):
        """Pixel of camera-frame point ``p`` and the 2x3 Jacobian d(pixel)/dp."""
        x, y, z = p
        if z <= 1e-9:
            raise OutOfViewError("point behind camera")
        xn, yn = x / z, y / z
        r2 = xn * xn + yn * yn
        d = 1.0 + self.k1 * r2 + self.k2 * r2 * r2
        dd = self.k1 + 2.0 * self.k2 * r2  # d(d)/d(r2)
        u = self.fx * xn * d + self.cx
        v = self.fy * yn * d + self.cy
        # d(xn, yn)/dp
        J_n = np.array([[1.0 / z, 0.0, -x / z**2], [0.0, 1.0 / z, -y / z**2]])
        # d(distorted)/d(xn, yn)
        J_d = np.array(
            [
                [d + 2.0 * xn * xn * dd, 2.0 * xn * yn * dd],
                [2.0 * xn * yn * dd, d + 2.0 * yn * yn * dd],
            ]
        )
        J = np.diag([self.fx, self.fy]) @ J_d @ J_n
        return np.array([u, v]), J

    def back_project(self, pixel):
        """Unit ray through ``pixel`` (distortion removed by fixed-point iteration)."""
        xd = (pixel[0] - self.cx) / self.fx
        yd = (pixel[1] - self.cy) / self.fy
        xn, yn = xd, yd
        if self.k1 or self.k2:
            for _ in range(20):
                r2 = xn * xn + yn * yn
                d = 1.0 + self.k1 * r2 + self.k2 * r2 * r2
                xn, yn = xd / d, yd / d
        ray = np.array([xn, yn, 1.0])
        return ray / np.linalg.norm(ray)

    def in_image(self, pixel, margin=0.0):
        return (
            margin <= pixel[0] <= self.width - 1 - margin
            and margin <= pixel[1] <= self.height - 1 - margin
        )


def validate_quaternion(q, tol=1e-6):
    q = np.asarray(q, dtype=float)
    if q.shape != (4,) or not np.all(np.isfinite(q)):
        raise InvalidInputError("quaternion must be 4 finite numbers")
    if abs(np.linalg.norm(q) - 1.0) > tol:
        raise InvalidInputError("quaternion must have unit norm")
    return q
