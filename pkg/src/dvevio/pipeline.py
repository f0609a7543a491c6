"""Single-trial estimator run over a dataset directory.

Per camera tick: propagate the IMU up to the tick, align every tracked patch
at its predicted pixel, run the EKF update, refresh the entropy masks, detect
new corners and refill free landmark slots.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from dvevio.config import section, write_config
from dvevio.dataset import POSE_HEADER, Dataset, write_csv
from dvevio.ekf import (
    DropPolicy,
    FilterConfig,
    ImuNoiseConfig,
    initial_state,
    manage_landmarks,
    patch_warp,
    pixel_angle_jacobian,
    predict_pixel,
    propagate,
    update,
)
from dvevio.entropy import EntropyMasker, render_overlay
from dvevio.errors import DegenerateCovarianceError, InvalidInputError, OutOfViewError
from dvevio.imaging import Spectrum, compute_gradient
from dvevio.metrics import d_optimality
from dvevio.tracker import ImagePyramid, MatchResult, PatchPyramid, align_patch, detect

log = logging.getLogger(__name__)

METRICS_HEADER = ["timestamp_s", "d_optimality", "active_landmarks", "insertions_cumulative"]
INSERTIONS_HEADER = ["frame_index", "timestamp_s", "spectrum", "x", "y", "region", "landmark_id"]
HYGIENE_HEADER = ["max_asymmetry", "min_eig_ratio", "max_quat_error", "checks"]
SPECTRUM_CODE = {Spectrum.VISUAL: 0, Spectrum.THERMAL: 1}


@dataclass(frozen=True)
class RunConfig:
    dataset_path: str = section("run", "")
    output_dir: str = section("run", "out")
    mask_enabled: bool = section("run", True)
    trials: int = section("run", 10)
    seed_base: int = section("run", 0)
    debug_masks: bool = section("run", False)
    cam_rate: float = section("run", 20.0)
    init_window: float = section("run", 0.5)
    grid_r: int = section("entropy", 8)
    history_k: int = section("entropy", 3)
    bins: int = section("entropy", 64)
    # 0 selects bins / 2 and bins / 6
    center_bin: float = section("entropy", 0.0)
    sigma_bins: float = section("entropy", 0.0)
    min_distance: float = section("tracker", 20.0)
    patch_size: int = section("tracker", 8)
    pyramid_levels: int = section("tracker", 2)
    search_sigma: float = section("tracker", 3.0)
    search_min: float = section("tracker", 6.0)
    search_max: float = section("tracker", 25.0)
    residual_threshold: float = section("tracker", 12.0)
    min_gradient: float = section("tracker", 3.0)
    refresh_residual: float = section("tracker", 6.0)
    refresh_warp: float = section("tracker", 0.2)
    detect_border: float = section("tracker", 12.0)
    min_score: float = section("tracker", 20.0)
    jitter: float = section("tracker", 0.25)
    max_landmarks: int = section("filter", 25)
    sigma_px: float = section("filter", 1.0)
    rho_init: float = section("filter", 0.5)
    sigma_rho: float = section("filter", 1.0)
    miss_limit: int = section("filter", 3)
    chi2_prob: float = section("filter", 0.99)
    mature_rel_sigma: float = section("filter", 0.3)
    accel_noise: float = section("filter", 2e-3)
    gyro_noise: float = section("filter", 2e-4)
    accel_bias_walk: float = section("filter", 1e-4)
    gyro_bias_walk: float = section("filter", 1e-5)
    bearing_walk: float = section("filter", 1e-3)
    inverse_depth_walk: float = section("filter", 1e-3)

    def __post_init__(self):
        positive = [
            "trials", "cam_rate", "init_window", "grid_r", "history_k", "bins",
            "min_distance", "patch_size", "pyramid_levels", "search_sigma", "search_min",
            "search_max", "residual_threshold", "max_landmarks", "sigma_px", "rho_init",
            "sigma_rho", "miss_limit",
        ]
        for name in positive:
            if not getattr(self, name) > 0:
                raise InvalidInputError(f"{name} must be positive")
        if self.center_bin < 0 or self.sigma_bins < 0:
            raise InvalidInputError("center_bin and sigma_bins must be >= 0 (0 = default)")
        if not 0.0 < self.chi2_prob < 1.0:
            raise InvalidInputError("chi2_prob must lie in (0, 1)")

    def filter_config(self) -> FilterConfig:
        noise = ImuNoiseConfig(self.accel_noise, self.gyro_noise, self.accel_bias_walk,
                               self.gyro_bias_walk, self.bearing_walk, self.inverse_depth_walk)
        return FilterConfig(max_landmarks=self.max_landmarks, sigma_px=self.sigma_px,
                            rho_init=self.rho_init, sigma_rho=self.sigma_rho,
                            miss_limit=self.miss_limit, chi2_prob=self.chi2_prob, noise=noise,
                            mature_rel_sigma=self.mature_rel_sigma)


@dataclass
class Hygiene:
    """Worst covariance and quaternion deviations seen during a run."""

    max_asymmetry: float = 0.0      # ||P - P^T||_inf / ||P||_inf
    min_eig_ratio: float = 0.0      # min(0, lambda_min / lambda_max)
    max_quat_error: float = 0.0     # | |q| - 1 |
    checks: int = 0

    def check(self, state):
        P = state.covariance
        norm = np.abs(P).sum(axis=1).max()
        asym = np.abs(P - P.T).sum(axis=1).max() / norm if norm > 0 else 0.0
        eig = np.linalg.eigvalsh(0.5 * (P + P.T))
        ratio = min(0.0, eig[0] / eig[-1]) if eig[-1] > 0 else -np.inf
        self.max_asymmetry = max(self.max_asymmetry, float(asym))
        self.min_eig_ratio = min(self.min_eig_ratio, float(ratio))
        self.max_quat_error = max(self.max_quat_error, abs(float(np.linalg.norm(state.robot.q)) - 1.0))
        self.checks += 1

    def ok(self, sym_tol=1e-9, psd_tol=1e-8, quat_tol=1e-9):
        return (self.max_asymmetry <= sym_tol and self.min_eig_ratio >= -psd_tol
                and self.max_quat_error <= quat_tol)


@dataclass
class RunResult:
    poses: np.ndarray          # rows of POSE_HEADER
    metrics: np.ndarray        # rows of METRICS_HEADER
    insertions: list           # rows of INSERTIONS_HEADER
    hygiene: Hygiene
    frames: list = field(default_factory=list)   # (frame_index, t) per processed tick

    @property
    def total_insertions(self):
        return int(self.metrics[-1, 3]) if len(self.metrics) else 0

    @property
    def terminal_d_optimality(self):
        return float(self.metrics[-1, 1])


def _camera_ticks(ds: Dataset, rate):
    """Visual frame rows decimated to ``rate`` paired with the nearest thermal row."""
    vis = ds.frame_times[Spectrum.VISUAL]
    th = ds.frame_times[Spectrum.THERMAL]
    period = 1.0 / rate
    ticks = []
    last = -np.inf
    for i, (_, t) in enumerate(vis):
        if t - last < period - 1e-6:
            continue
        j = int(np.argmin(np.abs(th[:, 1] - t)))
        ticks.append((i, j if abs(th[j, 1] - t) <= 0.5 * period else None, float(t)))
        last = t
    return ticks


def _search_radius(cov, cfg: RunConfig):
    lam = float(np.linalg.eigvalsh(cov)[-1]) + cfg.sigma_px**2
    return float(np.clip(cfg.search_sigma * np.sqrt(lam), cfg.search_min, cfg.search_max))


class Estimator:
    """Stateful estimator over one dataset; :meth:`step` handles one camera tick."""

    def __init__(self, ds: Dataset, cfg: RunConfig, trial_seed=0, hygiene=None):
        self.ds = ds
        self.cfg = cfg
        self.fcfg = cfg.filter_config()
        self.drop = DropPolicy(cfg.miss_limit)
        self.hygiene = hygiene or Hygiene()
        self.state = initial_state(ds.imu, ds.cameras, self.fcfg, cfg.init_window)
        self.imu_pos = 1
        self.maskers = {}
        self.rngs = {s: np.random.default_rng([trial_seed, SPECTRUM_CODE[s]]) for s in Spectrum}
        for s, cam in ds.cameras.items():
            k = cam.intrinsics
            self.maskers[s] = EntropyMasker(k.width, k.height, cfg.grid_r, cfg.history_k, cfg.bins,
                                            cfg.center_bin or None, cfg.sigma_bins or None)
        self.masks = {}

    def propagate_to(self, t):
        imu = self.ds.imu
        # nearest IMU sample to the camera timestamp
        while self.imu_pos < len(imu) and imu[self.imu_pos].timestamp <= t + 0.5 * self._imu_dt():
            sample = imu[self.imu_pos]
            dt = sample.timestamp - self.state.timestamp
            self.state = propagate(self.state, sample, dt, self.fcfg.noise)
            self.hygiene.check(self.state)
            self.imu_pos += 1

    def _imu_dt(self):
        imu = self.ds.imu
        k = min(self.imu_pos, len(imu) - 1)
        return imu[k].timestamp - imu[k - 1].timestamp

    def _track(self, frames, pyramids):
        matches = []
        for slot in self.state.active_slots():
            lm = self.state.landmarks[slot]
            if lm.spectrum not in frames:
                continue
            try:
                pix, cov = predict_pixel(self.state, slot)
                radius = _search_radius(cov, self.cfg)
                m = align_patch(pyramids[lm.spectrum], lm.patch, pix, radius,
                                residual_threshold=self.cfg.residual_threshold,
                                min_gradient=self.cfg.min_gradient,
                                affine=patch_warp(self.state, slot))
            except OutOfViewError:
                m = MatchResult((np.nan, np.nan), float("inf"), False, 0)
            matches.append((slot, m))
        return matches

    def step(self, frame_index, frames, debug_dir=None):
        """Process one tick; ``frames`` maps spectrum to :class:`Frame`."""
        cfg = self.cfg
        t = next(iter(frames.values())).timestamp
        self.propagate_to(t)
        pyramids = {s: ImagePyramid(f.pixels, cfg.pyramid_levels) for s, f in frames.items()}

        matches = self._track(frames, pyramids)
        self.state, report = update(self.state, matches, None, self.fcfg)
        self.hygiene.check(self.state)
        residuals = dict((slot, m) for slot, m in matches)
        for slot in self.state.active_slots():
            lm = self.state.landmarks[slot]
            try:
                pix, _ = predict_pixel(self.state, slot)
            except OutOfViewError:
                continue
            lm.last_pixel = (float(pix[0]), float(pix[1]))
            if slot not in report.accepted:
                continue
            m = residuals[slot]
            # swap in a fresh template once appearance or warp has drifted
            drift = np.abs(patch_warp(self.state, slot) - np.eye(2)).max()
            if m.photometric_residual > cfg.refresh_residual or drift > cfg.refresh_warp:
                try:
                    lm.patch = PatchPyramid.extract(pyramids[lm.spectrum], pix,
                                                    cfg.patch_size, cfg.pyramid_levels)
                except OutOfViewError:
                    continue
                intr = self.state.cameras[lm.spectrum].intrinsics
                lm.warp = np.linalg.inv(pixel_angle_jacobian(intr, lm.azimuth, lm.elevation))

        detections = []
        for s, frame in frames.items():
            emap = None
            if cfg.mask_enabled:
                emap = self.maskers[s].update(compute_gradient(frame))
                self.masks[s] = emap
            existing = [self.state.landmarks[i].last_pixel for i in self.state.active_slots()
                        if self.state.landmarks[i].spectrum == s and self.state.landmarks[i].last_pixel]
            found = detect(frame, emap, cfg.min_distance, existing=existing, border=cfg.detect_border,
                           min_score=cfg.min_score, rng=self.rngs[s], jitter=cfg.jitter)
            detections.extend(found)
            if debug_dir is not None and emap is not None:
                feats = [(c.x, c.y) for c in found]
                render_overlay(frame.pixels, emap, feats).save(
                    Path(debug_dir) / f"mask_{s.value}_{frame_index:06d}.png")

        def patch_source(cand):
            return PatchPyramid.extract(pyramids[cand.spectrum], cand.pixel, cfg.patch_size,
                                        cfg.pyramid_levels)

        self.state, ins = manage_landmarks(self.state, detections, self.drop, config=self.fcfg,
                                           patch_source=patch_source)
        self.hygiene.check(self.state)
        return report, ins


def run_once(cfg: RunConfig, trial_seed=0, out_dir=None, dataset: Dataset | None = None) -> RunResult:
    """Run the estimator over ``cfg.dataset_path`` and optionally write its CSVs.

    Writes ``pose_estimate.csv``, ``metrics.csv``, ``insertions.csv``, ``hygiene.csv`` and the
    effective ``run.cfg`` into ``out_dir`` (plus ``masks/`` when
    ``cfg.debug_masks``).
    """
    ds = dataset if dataset is not None else Dataset.load(cfg.dataset_path)
    est = Estimator(ds, cfg, trial_seed)
    debug_dir = None
    if out_dir is not None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        if cfg.debug_masks:
            debug_dir = out_dir / "masks"
            debug_dir.mkdir(exist_ok=True)

    poses, metrics, insertions, frames_done = [], [], [], []
    for vi, ti, t in _camera_ticks(ds, cfg.cam_rate):
        frames = {Spectrum.VISUAL: ds.load_frame(Spectrum.VISUAL, vi)}
        if ti is not None:
            frames[Spectrum.THERMAL] = ds.load_frame(Spectrum.THERMAL, ti)
        frame_index = int(ds.frame_times[Spectrum.VISUAL][vi, 0])
        _, ins = est.step(frame_index, frames, debug_dir)
        st = est.state
        for slot, cand in ins.inserted:
            insertions.append([frame_index, t, SPECTRUM_CODE[cand.spectrum], cand.x, cand.y,
                               cand.region_index, st.landmarks[slot].landmark_id])
        rb = st.robot
        poses.append([st.timestamp, *rb.r, *rb.q, *rb.v])
        try:
            dopt = d_optimality(st.pose_covariance())
        except DegenerateCovarianceError:
            log.warning("degenerate pose covariance at t=%.3f", st.timestamp)
            dopt = float("nan")
        metrics.append([st.timestamp, dopt, len(st.active_slots()), st.insertion_counter])
        frames_done.append((frame_index, t))

    result = RunResult(np.array(poses), np.array(metrics), insertions, est.hygiene, frames_done)
    if out_dir is not None:
        write_outputs(result, out_dir)
        write_config(out_dir / "run.cfg", replace(cfg, output_dir=str(out_dir)))
    return result


def write_outputs(result: RunResult, out_dir):
    out_dir = Path(out_dir)
    write_csv(out_dir / "pose_estimate.csv", POSE_HEADER, result.poses)
    write_csv(out_dir / "metrics.csv", METRICS_HEADER,
              ([r[0], r[1], int(r[2]), int(r[3])] for r in result.metrics))
    write_csv(out_dir / "insertions.csv", INSERTIONS_HEADER,
              ([int(r[0]), r[1], int(r[2]), r[3], r[4], int(r[5]), int(r[6])] for r in result.insertions))
    h = result.hygiene
    write_csv(out_dir / "hygiene.csv", HYGIENE_HEADER,
              [[h.max_asymmetry, h.min_eig_ratio, h.max_quat_error, h.checks]])
