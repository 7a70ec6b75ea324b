import numpy as np
import pytest
from hypothesis import given, strategies as st

from hybridvc import resample
from hybridvc.resample import bicubic_down, bicubic_up


def keys(t, a=-0.5):
    t = abs(t)
    if t <= 1:
        return (a + 2) * t**3 - (a + 3) * t**2 + 1
    if t < 2:
        return a * t**3 - 5 * a * t**2 + 8 * a * t - 4 * a
    return 0.0


def oracle_1d(sig, factor):
    """Point-by-point resampler: pixel-centre alignment, clamped taps, normalised weights.

    Down-sampling widens the kernel by 2 (anti-aliasing)."""
    n = len(sig)
    out_n = n * 2 if factor == 2 else n // 2
    scale = 1.0 if factor == 2 else 2.0
    out = []
    for i in range(out_n):
        centre = (i + 0.5) * (n / out_n) - 0.5
        lo = int(np.floor(centre - 2 * scale)) + 1
        acc = wsum = 0.0
        for t in range(lo, lo + int(4 * scale)):
            w = keys((centre - t) / scale)
            acc += w * sig[min(max(t, 0), n - 1)]
            wsum += w
        out.append(acc / wsum)
    return np.array(out)


def oracle_2d(img, factor):
    rows = np.array([oracle_1d(r, factor) for r in img.astype(float)])
    return np.array([oracle_1d(c, factor) for c in rows.T]).T


def test_kernel_partition_of_unity():
    for t in np.linspace(0, 1, 11):
        assert sum(keys(t + k) for k in (-2, -1, 0, 1)) == pytest.approx(1.0)
    np.testing.assert_allclose(resample.cubic([0, 0.5, 1, 1.5, 2]), [keys(v) for v in (0, 0.5, 1, 1.5, 2)])


@pytest.mark.parametrize("shape", [(8, 8), (16, 6), (2, 4)])
def test_float_resamplers_match_pointwise_oracle(shape):
    img = np.random.default_rng(sum(shape)).random(shape) * 255
    np.testing.assert_allclose(resample.down2(img), oracle_2d(img, 0.5), atol=1e-10)
    np.testing.assert_allclose(resample.up2(img), oracle_2d(img, 2), atol=1e-10)


@given(h=st.integers(1, 12), w=st.integers(1, 12), seed=st.integers(0, 999))
def test_adjoints(h, w, seed):
    rng = np.random.default_rng(seed)
    x, g = rng.normal(size=(2 * h, 2 * w)), rng.normal(size=(h, w))
    assert np.sum(resample.down2(x) * g) == pytest.approx(np.sum(x * resample.down2_adjoint(g)))
    x, g = rng.normal(size=(h, w)), rng.normal(size=(2 * h, 2 * w))
    assert np.sum(resample.up2(x) * g) == pytest.approx(np.sum(x * resample.up2_adjoint(g)))


@given(v=st.integers(0, 255), h=st.integers(1, 10), w=st.integers(1, 10))
def test_constant_block_stays_constant(v, h, w):
    block = np.full((2 * h, 2 * w), v)
    assert (bicubic_down(block) == v).all()
    assert (bicubic_up(block) == v).all()


def test_integer_rounding_matches_oracle():
    img = np.random.default_rng(3).integers(0, 256, (12, 10))
    assert np.array_equal(bicubic_down(img), np.clip(np.floor(oracle_2d(img, 0.5) + 0.5), 0, 255))
    assert np.array_equal(bicubic_up(img), np.clip(np.floor(oracle_2d(img, 2) + 0.5), 0, 255))


def test_ramp_round_trip_error_bounded():
    yy, xx = np.mgrid[0:32, 0:32]
    ramp = xx * 3 + yy * 2 + 10
    err = np.abs(bicubic_up(bicubic_down(ramp)) - ramp)
    assert err.max() <= 2  # edge replication bends the ramp at the border
    assert err[3:-3, 3:-3].max() <= 1


def test_checkerboard_shape_and_range():
    board = np.array([[0, 255], [255, 0]])
    small = bicubic_down(board)
    big = bicubic_up(small)
    assert small.shape == (1, 1) and big.shape == (2, 2)
    assert 0 <= big.min() and big.max() <= 255
    assert not np.array_equal(big, board)


def test_odd_dims_rejected():
    with pytest.raises(ValueError):
        bicubic_down(np.zeros((5, 4)))
    with pytest.raises(ValueError):
        bicubic_down(np.zeros((4, 7)))
