import dataclasses
import filecmp

import numpy as np
import pytest

from dvevio.entropy import EntropyMasker, RegionStatus
from dvevio.errors import InvalidInputError
from dvevio.imaging import Frame, compute_gradient
from dvevio.sim.scenario import PRESETS, DustField, Renderer, ScenarioConfig, render_sequence
from dvevio.sim.trajectory import (
    CircleTrajectory,
    CorridorTraverse,
    ImuNoise,
    LineTrajectory,
    synthesize_imu,
)

from conftest import short


def test_stationary_imu_is_gravity_only():
    imu = synthesize_imu(LineTrajectory(velocity=(0, 0, 0), duration=1.0), 200.0)
    assert len(imu) == 201
    for s in imu:
        assert np.array_equal(s.f_hat, [0.0, 0.0, 9.81])
        assert np.array_equal(s.omega_hat, [0.0, 0.0, 0.0])


def test_circular_motion_centripetal():
    tr = CircleTrajectory(radius=2.0, rate=0.5)
    for s in synthesize_imu(tr, 100.0)[::37]:
        horiz = np.hypot(s.f_hat[0], s.f_hat[1])
        assert horiz == pytest.approx(0.5**2 * 2.0, rel=1e-12)
        assert s.f_hat[2] == pytest.approx(9.81)
        assert s.omega_hat == pytest.approx([0, 0, 0.5])


def test_velocity_matches_position_differences():
    tr = CorridorTraverse()
    h = 1e-4
    for t in np.linspace(0.5, 9.5, 19):
        fd = (tr.at(t + h).p - tr.at(t - h).p) / (2 * h)
        assert tr.at(t).v == pytest.approx(fd, abs=1e-6)
        fa = (tr.at(t + h).v - tr.at(t - h).v) / (2 * h)
        # jerk is discontinuous where the hold ends, hence the looser bound
        assert tr.at(t).a == pytest.approx(fa, abs=1e-4)
    assert tr.at(0).v == pytest.approx(np.zeros(3))
    assert tr.length() == pytest.approx(20.0, rel=0.05)


def test_imu_noise_is_seeded():
    tr = LineTrajectory(duration=0.5)
    n = ImuNoise(1e-2, 1e-3, 1e-4, 1e-5, (0.1, 0, 0), (0, 0, 0.01))
    a = synthesize_imu(tr, 200, n, seed=3)
    b = synthesize_imu(tr, 200, n, seed=3)
    c = synthesize_imu(tr, 200, n, seed=4)
    assert all(np.array_equal(x.f_hat, y.f_hat) for x, y in zip(a, b))
    assert not all(np.array_equal(x.f_hat, y.f_hat) for x, y in zip(a, c))
    assert np.mean([s.f_hat[0] for s in a]) == pytest.approx(0.1, abs=0.01)


def test_config_validation():
    with pytest.raises(InvalidInputError):
        ScenarioConfig(fog_beta=-1)
    with pytest.raises(InvalidInputError):
        ScenarioConfig(cam_rate=0)
    with pytest.raises(InvalidInputError):
        ScenarioConfig(darkness="1:2:0")
    c = ScenarioConfig(darkness="1:2:0.5", darkness_ramp=0.5)
    assert c.brightness(1.5) == 0.5 and c.brightness(0.0) == 1.0
    assert c.brightness(0.75) == pytest.approx(0.75)


def test_render_is_deterministic(tmp_path):
    cfg = short("dusty", duration=0.3)
    a = render_sequence(cfg, tmp_path / "a")
    b = render_sequence(cfg, tmp_path / "b")
    cmp = filecmp.dircmp(a, b)
    assert not cmp.diff_files and not cmp.left_only and not cmp.right_only
    for sub in ("visual", "thermal"):
        _, mismatch, errors = filecmp.cmpfiles(a / sub, b / sub, [p.name for p in (a / sub).iterdir()], shallow=False)
        assert not mismatch and not errors


def test_thermal_invariant_to_visual_degradations():
    base = dataclasses.replace(PRESETS["noisy"], duration=3.0, length_m=6.0)
    degraded = dataclasses.replace(base, fog_beta=0.4, dust_rate=30, darkness="0:1:0.3")
    r1, r2 = Renderer(base), Renderer(degraded)
    for idx, t in enumerate([0.0, 0.5]):
        assert np.array_equal(r1.thermal(t, idx), r2.thermal(t, idx))
    speck = DustField(degraded).step()
    assert speck
    assert not np.array_equal(r1.visual(0.5, 10), r2.visual(0.5, 10, speck))


def test_fog_reduces_region_entropy_monotonically():
    means = []
    for beta in (0.0, 0.2, 0.6, 2.0, 8.0):
        cfg = dataclasses.replace(PRESETS["clean"], fog_beta=beta, fog_airlight=200.0)
        img = Renderer(cfg).visual(3.0, 0)
        masker = EntropyMasker(cfg.image_width, cfg.image_height, K=1)
        emap = masker.update(compute_gradient(Frame(img, 3.0)))
        means.append(float(emap.entropies.mean()))
    assert all(a > b or a == b == 0.0 for a, b in zip(means, means[1:]))
    assert means[-1] == 0.0 and means[0] > 0.1


def dust_regions(grid, speckles):
    """Region indices touched by any speck disc (bounding box plus one pixel)."""
    labels = grid.labels()
    h, w = labels.shape
    hit = set()
    for x, y, r in speckles:
        x0, x1 = max(int(x - r - 1), 0), min(int(x + r + 2), w)
        y0, y1 = max(int(y - r - 1), 0), min(int(y + r + 2), h)
        hit.update(np.unique(labels[y0:y1, x0:x1]).tolist())
    return hit


def test_transient_dust_never_creates_candidates():
    K = 3
    cfg = dataclasses.replace(PRESETS["noisy"], dust_rate=20, dust_lifetime=1, dust_radius=2.5,
                              darkness="0:100:0.3")
    clean = dataclasses.replace(cfg, dust_rate=0)
    r, rc = Renderer(cfg), Renderer(clean)
    dust = DustField(cfg)
    dusty_mask = EntropyMasker(cfg.image_width, cfg.image_height, K=K)
    clean_mask = EntropyMasker(cfg.image_width, cfg.image_height, K=K)
    history = []
    for idx in range(12):
        t = idx / cfg.cam_rate
        speck = dust.step()
        history.append(dust_regions(dusty_mask.grid, speck))
        em = dusty_mask.update(compute_gradient(Frame(r.visual(t, idx, speck), t)))
        ec = clean_mask.update(compute_gradient(Frame(rc.visual(t, idx), t)))
        extra = (em.status == RegionStatus.CANDIDATE) & (ec.status != RegionStatus.CANDIDATE)
        for region in np.flatnonzero(extra.ravel()):
            # only dust present in each of the last K frames can look consistent
            assert all(region in h for h in history[-K:])
