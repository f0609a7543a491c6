import numpy as np
import pytest

from dvevio.entropy import (
    EntropyMasker,
    RegionGrid,
    RegionStatus,
    build_mask,
    gaussian_weights,
    image_entropy,
    mask_lookup,
    region_entropy,
    render_overlay,
)
from dvevio.errors import InvalidInputError
from dvevio.imaging import GradientImage, ProbabilityVector, uniform_edges

from oracles import UNIFORM64_ENTROPY, UNIFORM64_GAUSS32_8_REGION_ENTROPY, entropy_sum


def pv(bins):
    bins = np.asarray(bins, dtype=float)
    return ProbabilityVector(bins, np.arange(len(bins) + 1, dtype=float))


def test_image_entropy_examples():
    assert image_entropy(pv(np.eye(64)[5])) == 0.0
    assert image_entropy(pv(np.full(64, 1 / 64))) == UNIFORM64_ENTROPY
    assert image_entropy(pv([0.5, 0.5])) == 1.0
    assert image_entropy(ProbabilityVector(np.zeros(4), np.arange(5.0), empty=True)) == 0.0


def test_region_entropy_examples():
    p = pv([0.5, 0.5] + [0.0] * 62)
    w = np.zeros(64)
    w[0] = 1.0
    assert region_entropy(p, w) == 0.5
    u = pv(np.full(64, 1 / 64))
    got = region_entropy(u, gaussian_weights(64, 32, 8))
    assert got == pytest.approx(UNIFORM64_GAUSS32_8_REGION_ENTROPY, abs=1e-12)


def test_region_entropy_length_mismatch():
    with pytest.raises(InvalidInputError):
        region_entropy(pv([1.0, 0.0]), np.ones(3))


def test_unit_weights_reduce_to_image_entropy_and_oracle():
    rng = np.random.default_rng(3)
    for _ in range(50):
        p = rng.dirichlet(np.full(64, 0.3))
        a = region_entropy(pv(p), np.ones(64))
        assert a == image_entropy(pv(p))
        assert a == pytest.approx(entropy_sum(p), rel=1e-12)


def test_gaussian_weights_shape():
    w = gaussian_weights(64)
    assert w.center_bin == 32 and w.sigma_bins == pytest.approx(64 / 6)
    assert w.weights.max() == 1.0 and np.all(w.weights > 0)


def test_grid_tiles_exactly():
    g = RegionGrid(3, 11, 7)
    cover = np.zeros((7, 11), dtype=int)
    for x0, y0, x1, y1 in g.region_rects:
        cover[y0:y1, x0:x1] += 1
    assert np.all(cover == 1)
    assert len(g.region_rects) == 9
    # remainder absorbed by the last row and column
    assert g.region_of(10, 6) == (2, 2)
    labels = g.labels()
    for idx, (x0, y0, x1, y1) in enumerate(g.region_rects):
        assert np.all(labels[y0:y1, x0:x1] == idx)


def _two_by_two_gradient(textured=(0,)):
    """2x2 grid on 16x16; listed regions get a spread of gradient magnitudes."""
    mag = np.zeros((16, 16))
    rng = np.random.default_rng(0)
    for r in textured:
        row, col = divmod(r, 2)
        mag[row * 8:(row + 1) * 8, col * 8:(col + 1) * 8] = rng.uniform(0, 1448, (8, 8))
    return GradientImage(mag)


def test_single_textured_region_becomes_candidate():
    grid = RegionGrid(2, 16, 16)
    w = gaussian_weights(64)
    emap = None
    for _ in range(3):
        emap = build_mask(_two_by_two_gradient((0,)), grid, w, emap, K=3)
    status = emap.status
    assert status[0, 0] == RegionStatus.CANDIDATE
    assert np.all(status.ravel()[1:] == RegionStatus.BELOW_MEAN)
    # hand computation: flat regions have a delta histogram in bin 0, entropy 0
    assert np.all(emap.entropies.ravel()[1:] == 0.0)
    assert emap.entropies[0, 0] > 0.0
    assert mask_lookup(emap, (3, 3)) and not mask_lookup(emap, (12, 3))


def test_identical_regions_give_no_candidates():
    grid = RegionGrid(2, 16, 16)
    emap = build_mask(GradientImage(np.full((16, 16), 700.0)), grid, gaussian_weights(64))
    assert emap.count(RegionStatus.CANDIDATE) == 0
    assert np.all(emap.entropies == emap.mean_entropy)


def test_transient_region_is_rejected_until_consistent():
    grid = RegionGrid(2, 16, 16)
    w = gaussian_weights(64)
    emap = None
    seq = [(0,), (0,), (0, 3), (0,), (0, 3), (0, 3), (0, 3)]
    statuses = []
    for textured in seq:
        emap = build_mask(_two_by_two_gradient(textured), grid, w, emap, K=3)
        statuses.append(emap.status[1, 1])
    assert statuses[2] == RegionStatus.REJECTED_TEMPORAL
    assert statuses[4] == RegionStatus.REJECTED_TEMPORAL
    assert statuses[6] == RegionStatus.CANDIDATE


def test_bootstrap_first_frame_candidates():
    grid = RegionGrid(2, 16, 16)
    emap = build_mask(_two_by_two_gradient((1,)), grid, gaussian_weights(64), None, K=3)
    assert emap.status[0, 1] == RegionStatus.CANDIDATE


def test_build_mask_errors():
    grid = RegionGrid(2, 16, 16)
    with pytest.raises(InvalidInputError):
        build_mask(GradientImage(np.zeros((10, 16))), grid, gaussian_weights(64))
    prior = build_mask(GradientImage(np.zeros((16, 16))), grid, gaussian_weights(64), K=3)
    with pytest.raises(InvalidInputError):
        build_mask(GradientImage(np.zeros((16, 16))), RegionGrid(4, 16, 16), gaussian_weights(64), prior, K=3)
    with pytest.raises(InvalidInputError):
        mask_lookup(prior, (16, 0))


def test_candidate_count_bounded_by_above_mean():
    rng = np.random.default_rng(5)
    masker = EntropyMasker(64, 48, grid_r=4, K=2)
    for _ in range(6):
        emap = masker.update(GradientImage(rng.gamma(1.0, rng.uniform(5, 400), (48, 64))))
        assert emap.count(RegionStatus.CANDIDATE) <= int(np.sum(emap.above_mean))
        assert np.all(emap.entropies >= 0) and np.all(emap.entropies <= 6.0)


def test_overlay_colours():
    grid = RegionGrid(2, 16, 16)
    emap = build_mask(_two_by_two_gradient((0,)), grid, gaussian_weights(64))
    img = np.asarray(render_overlay(np.zeros((16, 16), np.uint8), emap, [(4, 4)]))
    assert img.shape == (16, 16, 3)
    assert tuple(img[0, 0]) == (0, 220, 0)


def test_uniform_edges_default_range():
    e = uniform_edges()
    assert len(e) == 65 and e[0] == 0.0 and e[-1] == 1448.0
