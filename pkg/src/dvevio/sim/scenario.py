"""Degraded-visual-environment scenarios and dataset rendering."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from dvevio.config import section, write_config
from dvevio.dataset import (
    DUST_HEADER,
    FRAME_HEADER,
    GT_HEADER,
    IMU_HEADER,
    write_calib,
    write_csv,
)
from dvevio.ekf import Camera
from dvevio.errors import InvalidInputError
from dvevio.geometry import PinholeModel, rot_to_quat, so3_exp
from dvevio.imaging import Spectrum, save_frame
from dvevio.sim.trajectory import ImuNoise, make_trajectory, synthesize_imu
from dvevio.sim.world import THERMAL_STYLE, VISUAL_STYLE, Corridor

# camera z forward, x right, y down; body x forward, y left, z up
R_BODY_FORWARD_CAMERA = np.array([[0.0, 0.0, 1.0], [-1.0, 0.0, 0.0], [0.0, -1.0, 0.0]])

# independent random streams so e.g. dust never perturbs the thermal channel
_STREAM_IMU, _STREAM_VIS_TEX, _STREAM_TH_TEX, _STREAM_DUST, _STREAM_VIS_PIX, _STREAM_TH_PIX = range(6)


@dataclass(frozen=True)
class ScenarioConfig:
    trajectory: str = section("scenario", "corridor")
    length_m: float = section("scenario", 20.0)
    duration: float = section("scenario", 10.0)
    corridor_width: float = section("scenario", 3.0)
    corridor_height: float = section("scenario", 3.0)
    seed: int = section("scenario", 0)
    imu_rate: float = section("rates", 200.0)
    cam_rate: float = section("rates", 20.0)
    image_width: int = section("camera", 256)
    image_height: int = section("camera", 192)
    visual_focal: float = section("camera", 160.0)
    thermal_focal: float = section("camera", 170.0)
    fog_beta: float = section("fog", 0.0)
    fog_airlight: float = section("fog", 200.0)
    dust_rate: float = section("dust", 0.0)
    dust_lifetime: int = section("dust", 1)
    dust_radius: float = section("dust", 2.0)
    dust_intensity: float = section("dust", 255.0)
    dust_speed: float = section("dust", 3.0)
    # "start:end:scale" segments separated by ";", brightness outside is 1
    darkness: str = section("darkness", "")
    darkness_ramp: float = section("darkness", 0.5)
    accel_noise: float = section("noise", 2e-3)
    gyro_noise: float = section("noise", 2e-4)
    accel_bias_walk: float = section("noise", 1e-4)
    gyro_bias_walk: float = section("noise", 1e-5)
    accel_bias: tuple = section("noise", (0.01, -0.01, 0.005))
    gyro_bias: tuple = section("noise", (5e-4, -3e-4, 2e-4))
    pixel_noise: float = section("noise", 1.0)

    def __post_init__(self):
        if self.imu_rate <= 0 or self.cam_rate <= 0:
            raise InvalidInputError("rates must be positive")
        if self.fog_beta < 0:
            raise InvalidInputError("fog_beta must be >= 0")
        if self.duration <= 0 or self.length_m <= 0:
            raise InvalidInputError("duration and length must be positive")
        for _, _, scale in self.darkness_segments():
            if not 0.0 < scale <= 1.0:
                raise InvalidInputError("darkness scale must lie in (0, 1]")

    def darkness_segments(self):
        segs = []
        for part in filter(None, (p.strip() for p in self.darkness.split(";"))):
            try:
                a, b, s = (float(x) for x in part.split(":"))
            except ValueError:
                raise InvalidInputError(f"bad darkness segment {part!r}") from None
            segs.append((a, b, s))
        return segs

    def brightness(self, t):
        scale = 1.0
        ramp = max(self.darkness_ramp, 1e-9)
        for a, b, s in self.darkness_segments():
            # weight 1 inside [a, b], linear ramps of width `ramp` outside
            wgt = np.clip(min(t - (a - ramp), (b + ramp) - t) / ramp, 0.0, 1.0)
            scale = min(scale, 1.0 - wgt * (1.0 - s))
        return scale

    def imu_noise(self):
        return ImuNoise(self.accel_noise, self.gyro_noise, self.accel_bias_walk,
                        self.gyro_bias_walk, tuple(self.accel_bias), tuple(self.gyro_bias))

    def noise_free(self):
        return dataclasses.replace(self, accel_noise=0.0, gyro_noise=0.0, accel_bias_walk=0.0,
                                   gyro_bias_walk=0.0, accel_bias=(0.0, 0.0, 0.0),
                                   gyro_bias=(0.0, 0.0, 0.0), pixel_noise=0.0)


PRESETS = {
    "clean": ScenarioConfig().noise_free(),
    "noisy": ScenarioConfig(),
    "foggy": ScenarioConfig(fog_beta=0.15, darkness="4.0:7.0:0.35"),
    # sparse single-frame specks: bright corners that never persist in one region
    "dusty": ScenarioConfig(dust_rate=4.0, dust_lifetime=1, darkness="0:100:0.45",
                            dust_radius=2.0),
}


def default_cameras(cfg: ScenarioConfig):
    w, h = cfg.image_width, cfg.image_height
    cx, cy = (w - 1) / 2.0, (h - 1) / 2.0
    visual = Camera(Spectrum.VISUAL, PinholeModel(cfg.visual_focal, cfg.visual_focal, cx, cy, w, h),
                    R_BODY_FORWARD_CAMERA, np.array([0.10, 0.04, 0.0]))
    tilt = so3_exp([0.0, 0.0, np.deg2rad(1.5)])
    thermal = Camera(Spectrum.THERMAL, PinholeModel(cfg.thermal_focal, cfg.thermal_focal, cx, cy, w, h),
                     tilt @ R_BODY_FORWARD_CAMERA, np.array([0.10, -0.04, 0.01]))
    return {Spectrum.VISUAL: visual, Spectrum.THERMAL: thermal}


class DustField:
    """Short-lived bright speckles drifting across the visual image."""

    def __init__(self, cfg: ScenarioConfig):
        self.cfg = cfg
        self.rng = np.random.default_rng([cfg.seed, _STREAM_DUST])
        self.live = []  # [x, y, vx, vy, radius, frames_left]

    def step(self):
        c = self.cfg
        for s in self.live:
            s[0] += s[2]
            s[1] += s[3]
            s[5] -= 1
        self.live = [s for s in self.live if s[5] > 0]
        for _ in range(self.rng.poisson(c.dust_rate) if c.dust_rate > 0 else 0):
            x = self.rng.uniform(0, c.image_width - 1)
            y = self.rng.uniform(0, c.image_height - 1)
            ang = self.rng.uniform(0, 2 * np.pi)
            sp = self.rng.uniform(0, c.dust_speed)
            r = c.dust_radius * self.rng.uniform(0.7, 1.3)
            self.live.append([x, y, sp * np.cos(ang), sp * np.sin(ang), r, c.dust_lifetime])
        return [(s[0], s[1], s[4]) for s in self.live]


def composite_dust(img, speckles, intensity):
    h, w = img.shape
    for x, y, r in speckles:
        x0, x1 = max(int(x - r - 2), 0), min(int(x + r + 3), w)
        y0, y1 = max(int(y - r - 2), 0), min(int(y + r + 3), h)
        if x0 >= x1 or y0 >= y1:
            continue
        yy, xx = np.mgrid[y0:y1, x0:x1]
        alpha = np.clip(r + 0.5 - np.hypot(xx - x, yy - y), 0.0, 1.0)
        img[y0:y1, x0:x1] = img[y0:y1, x0:x1] * (1 - alpha) + intensity * alpha
    return img


class Renderer:
    """Renders both spectra of a scenario at arbitrary times."""

    def __init__(self, cfg: ScenarioConfig):
        self.cfg = cfg
        self.trajectory = make_trajectory(cfg.trajectory, cfg.length_m, cfg.duration)
        self.cameras = default_cameras(cfg)
        kw = dict(length_m=cfg.length_m, width=cfg.corridor_width, height=cfg.corridor_height)
        self.worlds = {
            Spectrum.VISUAL: Corridor(seed=[cfg.seed, _STREAM_VIS_TEX], style=VISUAL_STYLE, **kw),
            Spectrum.THERMAL: Corridor(seed=[cfg.seed, _STREAM_TH_TEX], style=THERMAL_STYLE, **kw),
        }
        self._rays = {}
        for spectrum, cam in self.cameras.items():
            k = cam.intrinsics
            v, u = np.mgrid[0:k.height, 0:k.width].astype(float)
            rays = np.stack([(u - k.cx) / k.fx, (v - k.cy) / k.fy, np.ones_like(u)], axis=-1).reshape(-1, 3)
            self._rays[spectrum] = rays / np.linalg.norm(rays, axis=1, keepdims=True)

    def radiance(self, spectrum, t):
        """Clean texture intensity and hit depth seen by one camera at time ``t``."""
        pt = self.trajectory.at(t)
        cam = self.cameras[spectrum]
        R_wc = pt.R @ cam.R_bc
        origin = pt.p + pt.R @ cam.p_bc
        dirs = self._rays[spectrum] @ R_wc.T
        k = cam.intrinsics
        intensity, depth = self.worlds[spectrum].cast(origin, dirs, k.fx)
        return intensity.reshape(k.height, k.width), depth.reshape(k.height, k.width)

    def visual(self, t, frame_index, speckles=()):
        c = self.cfg
        img, depth = self.radiance(Spectrum.VISUAL, t)
        if c.fog_beta > 0:
            trans = np.exp(-c.fog_beta * depth)
            img = img * trans + c.fog_airlight * (1.0 - trans)
        img = img * c.brightness(t)
        if speckles:
            img = composite_dust(img, speckles, c.dust_intensity)
        return self._finish(img, _STREAM_VIS_PIX, frame_index)

    def thermal(self, t, frame_index):
        img, _ = self.radiance(Spectrum.THERMAL, t)
        return self._finish(img, _STREAM_TH_PIX, frame_index)

    def _finish(self, img, stream, frame_index):
        if self.cfg.pixel_noise > 0:
            rng = np.random.default_rng([self.cfg.seed, stream, frame_index])
            img = img + rng.normal(0.0, self.cfg.pixel_noise, img.shape)
        return np.clip(np.rint(img), 0, 255).astype(np.uint8)


def frame_times(cfg: ScenarioConfig):
    n = int(np.floor(cfg.duration * cfg.cam_rate + 1e-9)) + 1
    return np.arange(n) / cfg.cam_rate


def render_frames(cfg: ScenarioConfig):
    """Yield ``(index, t, visual, thermal, speckles)`` for every camera tick."""
    renderer = Renderer(cfg)
    dust = DustField(cfg)
    for idx, t in enumerate(frame_times(cfg)):
        speckles = dust.step()
        yield idx, float(t), renderer.visual(t, idx, speckles), renderer.thermal(t, idx), speckles


def render_sequence(cfg: ScenarioConfig, out_dir) -> Path:
    """Write a complete dataset directory for ``cfg`` and return its path."""
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
        for spectrum in Spectrum:
            (out / spectrum.value).mkdir(exist_ok=True)
    except OSError as exc:
        raise OSError(f"cannot create dataset directory {out}: {exc}") from exc

    traj = make_trajectory(cfg.trajectory, cfg.length_m, cfg.duration)
    imu = synthesize_imu(traj, cfg.imu_rate, cfg.imu_noise(), seed=[cfg.seed, _STREAM_IMU])
    write_csv(out / "imu.csv", IMU_HEADER, ([s.timestamp, *s.f_hat, *s.omega_hat] for s in imu))
    gt_rows = []
    for s in imu:
        pt = traj.at(s.timestamp)
        gt_rows.append([s.timestamp, *pt.p, *rot_to_quat(pt.R), *pt.v])
    write_csv(out / "ground_truth.csv", GT_HEADER, gt_rows)
    write_calib(out / "calib.cfg", default_cameras(cfg))
    write_config(out / "scenario.cfg", cfg)

    times, dust_rows = [], []
    for idx, t, vis, th, speckles in render_frames(cfg):
        save_frame(out / "visual" / f"{idx:06d}.png", vis)
        save_frame(out / "thermal" / f"{idx:06d}.png", th)
        times.append([idx, t])
        dust_rows.extend([idx, x, y, r] for x, y, r in speckles)
    for spectrum in Spectrum:
        write_csv(out / f"{spectrum.value}.csv", FRAME_HEADER, times)
    write_csv(out / "dust.csv", DUST_HEADER, dust_rows)
    return out
