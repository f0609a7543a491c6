import numpy as np
import pytest

from dvevio.errors import IngestionError, InvalidInputError
from dvevio.imaging import (
    Frame,
    Spectrum,
    compute_gradient,
    histogram,
    load_frame,
    save_frame,
    uniform_edges,
)


def frame(px, t=0.0):
    return Frame(np.asarray(px, dtype=np.uint8), t, Spectrum.VISUAL, "cam")


def test_constant_frame_has_zero_gradient():
    g = compute_gradient(frame(np.full((6, 7), 128)))
    assert np.all(g.magnitude == 0.0)


def test_ramp_interior_magnitude_is_eight():
    x = np.tile(np.arange(10), (8, 1))
    g = compute_gradient(frame(x)).magnitude
    assert np.all(g[1:-1, 1:-1] == 8.0)
    assert np.all(g[0] == 0) and np.all(g[:, -1] == 0)


def test_vertical_step_peak_is_four_h():
    h = 50
    px = np.zeros((5, 5))
    px[:, 3:] = h
    g = compute_gradient(frame(px)).magnitude
    # direct 3x3 Sobel: columns 2 and 3 see the step with weights 1+2+1
    assert g[2, 2] == 4 * h and g[2, 3] == 4 * h
    assert g.max() == 4 * h


def test_gradient_offset_invariant():
    rng = np.random.default_rng(0)
    px = rng.integers(0, 200, (12, 15))
    a = compute_gradient(frame(px)).magnitude
    b = compute_gradient(frame(px + 40)).magnitude
    assert np.array_equal(a, b)


def test_frame_validation():
    with pytest.raises(InvalidInputError):
        frame(np.zeros((2, 5)))
    with pytest.raises(InvalidInputError):
        Frame(np.zeros((4, 4), dtype=np.float32), 0.0)
    f = frame(np.zeros((4, 5)))
    assert (f.width, f.height) == (5, 4)
    with pytest.raises(ValueError):
        f.pixels[0, 0] = 3


def test_histogram_delta_and_uniform():
    edges = uniform_edges(64)
    p = histogram(np.full(100, 37.0), edges)
    assert p.bins.max() == 1.0 and p.bins.sum() == 1.0
    centers = 0.5 * (edges[:-1] + edges[1:])
    u = histogram(np.repeat(centers, 3), edges)
    assert np.allclose(u.bins, 1.0 / 64, atol=0, rtol=1e-15)


def test_histogram_clamps_and_empty():
    edges = uniform_edges(8, (0.0, 8.0))
    p = histogram([100.0, 7.5], edges)
    assert p.bins[-1] == 1.0
    e = histogram([], edges)
    assert e.empty and e.bins.sum() == 0.0


def test_histogram_rejects_bad_edges():
    with pytest.raises(InvalidInputError):
        histogram([1.0], [0.0, 2.0, 1.0])


def test_png_and_pgm_roundtrip(tmp_path):
    rng = np.random.default_rng(1)
    px = rng.integers(0, 256, (9, 11)).astype(np.uint8)
    for name in ("a.png", "a.pgm"):
        save_frame(tmp_path / name, px)
        f = load_frame(tmp_path / name, 1.5, Spectrum.THERMAL, "t")
        assert np.array_equal(f.pixels, px)
        assert f.spectrum is Spectrum.THERMAL


def test_load_frame_errors(tmp_path):
    with pytest.raises(IngestionError):
        load_frame(tmp_path / "missing.png", 0.0)
    (tmp_path / "bad.png").write_bytes(b"not an image")
    with pytest.raises(IngestionError):
        load_frame(tmp_path / "bad.png", 0.0)
