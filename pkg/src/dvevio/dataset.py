"""On-disk dataset layout shared by the simulator and the pipeline.

::

    dataset/
      visual/000000.png ...     8-bit grayscale frames
      thermal/000000.png ...
      visual.csv, thermal.csv   frame_index,timestamp_s
      imu.csv                   timestamp_s,fx,fy,fz,wx,wy,wz
      ground_truth.csv          timestamp_s,rx,ry,rz,qw,qx,qy,qz,vx,vy,vz
      calib.cfg                 one section per camera
      dust.csv                  frame_index,x,y,radius   (simulator only, optional)
"""

from __future__ import annotations

import configparser
import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from dvevio.ekf import Camera, ImuSample
from dvevio.errors import IngestionError
from dvevio.geometry import PinholeModel, quat_normalize, quat_to_rot, rot_to_quat
from dvevio.imaging import Frame, Spectrum, load_frame

IMU_HEADER = ["timestamp_s", "fx", "fy", "fz", "wx", "wy", "wz"]
FRAME_HEADER = ["frame_index", "timestamp_s"]
GT_HEADER = ["timestamp_s", "rx", "ry", "rz", "qw", "qx", "qy", "qz", "vx", "vy", "vz"]
DUST_HEADER = ["frame_index", "x", "y", "radius"]
POSE_HEADER = ["timestamp_s", "rx", "ry", "rz", "qw", "qx", "qy", "qz", "vx", "vy", "vz"]


def fmt(x) -> str:
    """Float with nine significant digits; integers pass through."""
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return f"{float(x):.9g}"


def write_csv(path, header, rows):
    with open(path, "w", newline="") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(fmt(v) for v in row) + "\n")


def read_csv(path, header, *, allow_empty=False):
    """Rows of floats from a CSV whose first line must equal ``header``."""
    path = Path(path)
    if not path.is_file():
        raise IngestionError(f"missing file {path}")
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            got = next(reader)
        except StopIteration:
            raise IngestionError(f"{path}: empty file (expected header {','.join(header)})")
        if [h.strip() for h in got] != header:
            raise IngestionError(f"{path}: header {got} != expected {header}")
        rows = []
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(header):
                raise IngestionError(f"{path}:{lineno}: expected {len(header)} fields, got {len(row)}")
            try:
                vals = [float(v) for v in row]
            except ValueError:
                raise IngestionError(f"{path}:{lineno}: non-numeric field in {row}") from None
            if not all(np.isfinite(vals)):
                raise IngestionError(f"{path}:{lineno}: non-finite value")
            rows.append(vals)
    if not rows and not allow_empty:
        raise IngestionError(f"{path}: no data rows")
    return np.array(rows, dtype=float).reshape(-1, len(header))


def write_calib(path, cameras):
    cp = configparser.ConfigParser()
    for spectrum, cam in cameras.items():
        k = cam.intrinsics
        q = rot_to_quat(cam.R_bc)
        cp[spectrum.value] = {
            "fx": fmt(k.fx), "fy": fmt(k.fy), "cx": fmt(k.cx), "cy": fmt(k.cy),
            "width": str(k.width), "height": str(k.height),
            "k1": fmt(k.k1), "k2": fmt(k.k2),
            "q_body_camera": ", ".join(fmt(v) for v in q),
            "t_body_camera": ", ".join(fmt(v) for v in cam.p_bc),
        }
    with open(path, "w") as fh:
        fh.write("# q_body_camera (w, x, y, z) rotates camera-frame vectors into the body frame;\n")
        fh.write("# t_body_camera is the camera origin in the body frame (metres).\n")
        cp.write(fh)


def read_calib(path):
    path = Path(path)
    if not path.is_file():
        raise IngestionError(f"missing file {path}")
    cp = configparser.ConfigParser()
    try:
        cp.read(path)
    except configparser.Error as exc:
        raise IngestionError(f"{path}: {exc}") from exc
    cameras = {}
    for spectrum in Spectrum:
        if spectrum.value not in cp:
            raise IngestionError(f"{path}: missing section [{spectrum.value}]")
        sec = cp[spectrum.value]
        try:
            intr = PinholeModel(
                sec.getfloat("fx"), sec.getfloat("fy"), sec.getfloat("cx"), sec.getfloat("cy"),
                sec.getint("width"), sec.getint("height"),
                sec.getfloat("k1", 0.0), sec.getfloat("k2", 0.0),
            )
            q = [float(v) for v in sec["q_body_camera"].split(",")]
            t = [float(v) for v in sec["t_body_camera"].split(",")]
        except (KeyError, ValueError) as exc:
            raise IngestionError(f"{path}: bad or missing key in [{spectrum.value}] ({exc})") from exc
        if len(q) != 4 or len(t) != 3:
            raise IngestionError(f"{path}: [{spectrum.value}] extrinsics need 4 + 3 values")
        cameras[spectrum] = Camera(spectrum, intr, quat_to_rot(quat_normalize(q)), np.array(t))
    return cameras


@dataclass
class Dataset:
    root: Path
    cameras: dict
    frame_times: dict          # Spectrum -> (N, 2) array of (index, timestamp)
    imu: list
    ground_truth: np.ndarray | None
    dust: np.ndarray | None

    @classmethod
    def load(cls, root):
        root = Path(root)
        if not root.is_dir():
            raise IngestionError(f"dataset directory {root} does not exist")
        cameras = read_calib(root / "calib.cfg")
        frame_times = {}
        for spectrum in Spectrum:
            rows = read_csv(root / f"{spectrum.value}.csv", FRAME_HEADER)
            if np.any(np.diff(rows[:, 1]) <= 0):
                raise IngestionError(f"{root / (spectrum.value + '.csv')}: timestamps not strictly increasing")
            frame_times[spectrum] = rows
        imu_rows = read_csv(root / "imu.csv", IMU_HEADER)
        bad = np.nonzero(np.diff(imu_rows[:, 0]) <= 0)[0]
        if len(bad):
            raise IngestionError(f"{root / 'imu.csv'}:{bad[0] + 3}: timestamp not strictly increasing")
        imu = [ImuSample(r[0], r[1:4], r[4:7]) for r in imu_rows]
        gt_path = root / "ground_truth.csv"
        gt = read_csv(gt_path, GT_HEADER) if gt_path.exists() else None
        dust_path = root / "dust.csv"
        dust = read_csv(dust_path, DUST_HEADER, allow_empty=True) if dust_path.exists() else None
        return cls(root, cameras, frame_times, imu, gt, dust)

    def frame_path(self, spectrum, index):
        return self.root / spectrum.value / f"{int(index):06d}.png"

    def load_frame(self, spectrum, row) -> Frame:
        index, t = self.frame_times[spectrum][row]
        path = self.frame_path(spectrum, index)
        if not path.is_file():
            raise IngestionError(f"missing frame {path}")
        frame = load_frame(path, t, spectrum, spectrum.value)
        k = self.cameras[spectrum].intrinsics
        if (frame.width, frame.height) != (k.width, k.height):
            raise IngestionError(f"{path}: size {frame.width}x{frame.height} != calib {k.width}x{k.height}")
        return frame
