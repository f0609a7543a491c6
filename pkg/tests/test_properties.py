import numpy as np
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from dvevio.entropy import gaussian_weights, image_entropy, region_entropy
from dvevio.geometry import quat_normalize, quat_to_rot, rot_to_quat, so3_exp, so3_log
from dvevio.imaging import ProbabilityVector, histogram, uniform_edges
from dvevio.metrics import box_stats, d_optimality, f_cdf, f_sf, one_way_anova

finite = st.floats(-1e3, 1e3, allow_nan=False)


def pv(p):
    return ProbabilityVector(p, np.arange(len(p) + 1, dtype=float))


@st.composite
def distributions(draw, n=64):
    w = draw(arrays(float, n, elements=st.floats(0, 1)))
    if w.sum() == 0:
        w[0] = 1.0
    return w / w.sum()


@given(distributions())
def test_entropy_bounds(p):
    h = image_entropy(pv(p))
    assert -1e-12 <= h <= 6.0 + 1e-12
    assert 0.0 <= region_entropy(pv(p), gaussian_weights(64)) <= h + 1e-12


@given(distributions())
def test_unit_weight_identity(p):
    assert region_entropy(pv(p), np.ones(64)) == image_entropy(pv(p))


@given(arrays(float, st.integers(1, 300), elements=st.floats(0, 2000)))
def test_histogram_sums_to_one(values):
    p = histogram(values, uniform_edges(64))
    assert abs(p.bins.sum() - 1.0) < 1e-12 and np.all(p.bins >= 0)


@settings(max_examples=50)
@given(arrays(float, (6, 6), elements=st.floats(-3, 3)), st.floats(0.01, 100))
def test_d_optimality_homogeneous(A, c):
    S = A @ A.T + 0.5 * np.eye(6)
    assert abs(d_optimality(c * S) - c * d_optimality(S)) <= 1e-9 * c * d_optimality(S)


@given(st.lists(finite, min_size=2, max_size=12), st.lists(finite, min_size=2, max_size=12))
def test_anova_p_in_unit_interval(a, b):
    r = one_way_anova([a, b])
    assert 0.0 <= r.p_value <= 1.0
    assert r.f_statistic >= 0.0


@given(st.floats(0.0, 50.0), st.integers(1, 5), st.integers(1, 40))
def test_f_sf_cdf_complement(f, d1, d2):
    assert abs(f_sf(f, d1, d2) + f_cdf(f, d1, d2) - 1.0) < 1e-10


@given(st.lists(st.floats(-1e4, 1e4), min_size=1, max_size=40))
def test_box_stats_ordering(x):
    b = box_stats(x)
    # whiskers are data points inside the fences, so they may sit inside the box
    assert b.q1 <= b.median <= b.q3
    assert b.whisker_low <= b.median <= b.whisker_high
    iqr = b.q3 - b.q1
    assert all(v < b.q1 - 1.5 * iqr or v > b.q3 + 1.5 * iqr for v in b.outliers)
    assert len(b.outliers) < len(x)


@given(arrays(float, 3, elements=st.floats(-3.0, 3.0)))
def test_so3_exp_log_roundtrip(phi):
    R = so3_exp(phi)
    assert np.allclose(R @ R.T, np.eye(3), atol=1e-12)
    assert np.allclose(so3_exp(so3_log(R)), R, atol=1e-9)


@given(arrays(float, 4, elements=st.floats(-1, 1)).filter(lambda q: np.linalg.norm(q) > 1e-3))
def test_quaternion_rotation_roundtrip(q):
    q = quat_normalize(q)
    back = rot_to_quat(quat_to_rot(q))
    assert min(np.abs(back - q).max(), np.abs(back + q).max()) < 1e-9
