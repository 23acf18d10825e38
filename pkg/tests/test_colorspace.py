import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from austkit import colorspace as cs
from austkit.colorspace import ColorSpace, ColorSpaceError, ImagePlane
from austkit.nn import Conv2dParams
from austkit.tensor import Tensor, relu, tsum

from helpers import gradcheck


def _rgb(pixels):
    return ImagePlane(ColorSpace.RGB, np.asarray(pixels, dtype=np.float64).reshape(3, 1, 1))


def test_black_and_white():
    np.testing.assert_allclose(cs.rgb_to_yuv(_rgb([0, 0, 0])).pixels.data.ravel(), [0, 0, 0])
    np.testing.assert_allclose(cs.rgb_to_yuv(_rgb([1, 1, 1])).pixels.data.ravel(), [1, 0, 0], atol=1e-15)


def test_matrix_rows_follow_bt601_definitions():
    r, g, b = 0.2, 0.7, 0.4
    y = 0.299 * r + 0.587 * g + 0.114 * b
    expected = [y, 0.5 * (b - y) / 0.886, 0.5 * (r - y) / 0.701]
    np.testing.assert_allclose(cs.rgb_to_yuv(_rgb([r, g, b])).pixels.data.ravel(), expected, atol=1e-15)


def test_inverse_table_is_numerical_inverse():
    np.testing.assert_allclose(cs.BT601_YUV_TO_RGB @ cs.BT601_RGB_TO_YUV, np.eye(3), atol=1e-14)


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2 ** 31))
def test_round_trip(seed):
    img = np.random.default_rng(seed).random((3, 4, 5))
    back = cs.yuv_to_rgb(cs.rgb_to_yuv(ImagePlane(ColorSpace.RGB, img)))
    assert back.space is ColorSpace.RGB
    np.testing.assert_allclose(back.pixels.data, img, atol=1e-10)


def test_wrong_space_rejected():
    yuv = cs.rgb_to_yuv(_rgb([0.1, 0.2, 0.3]))
    with pytest.raises(ColorSpaceError):
        cs.rgb_to_yuv(yuv)
    with pytest.raises(ColorSpaceError):
        cs.yuv_to_rgb(_rgb([0.1, 0.2, 0.3]))
    params = cs.ColorMapParams.init(np.random.default_rng(0))
    with pytest.raises(ColorSpaceError):
        cs.color_map(_rgb([0.1, 0.2, 0.3]), params)


def test_bad_pixel_shape_rejected():
    with pytest.raises(ColorSpaceError):
        ImagePlane(ColorSpace.RGB, np.zeros((4, 2, 2)))


def _fixed_params(a_bias, b_bias, hidden=4):
    rng = np.random.default_rng(0)
    conv1 = Conv2dParams.init(rng, 3, hidden, 3, padding=1)
    conv2 = Conv2dParams(Tensor(np.zeros((6, hidden, 7, 7))), Tensor(np.array([a_bias] * 3 + [b_bias] * 3)),
                         padding=3)
    return cs.ColorMapParams(conv1, conv2)


def test_identity_map():
    yuv = cs.rgb_to_yuv(ImagePlane(ColorSpace.RGB, np.random.default_rng(1).random((3, 8, 8))))
    out = cs.color_map(yuv, _fixed_params(1.0, 0.0))
    assert out.space is ColorSpace.MAPPED
    np.testing.assert_array_equal(out.pixels.data, yuv.pixels.data)


def test_constant_map():
    yuv = cs.rgb_to_yuv(ImagePlane(ColorSpace.RGB, np.random.default_rng(1).random((3, 8, 8))))
    np.testing.assert_array_equal(cs.color_map(yuv, _fixed_params(0.0, 0.5)).pixels.data, 0.5)


def test_init_starts_near_identity():
    yuv = cs.rgb_to_yuv(ImagePlane(ColorSpace.RGB, np.random.default_rng(2).random((1, 3, 16, 16))))
    params = cs.ColorMapParams.init(np.random.default_rng(0))
    a, b = params.coefficients(yuv.pixels)
    assert abs(a.data.mean() - 1.0) < 0.1 and abs(b.data.mean()) < 0.1


def test_random_weights_match_elementwise_oracle():
    rng = np.random.default_rng(4)
    yuv = cs.rgb_to_yuv(ImagePlane(ColorSpace.RGB, rng.random((2, 3, 8, 8))))
    params = cs.ColorMapParams.init(rng, head_gain=1.0)
    a, b = params.coefficients(yuv.pixels)
    out = cs.color_map(yuv, params).pixels.data
    x = yuv.pixels.data
    expected = np.empty_like(x)
    for n in range(x.shape[0]):
        for c in range(3):
            for i in range(8):
                for j in range(8):
                    expected[n, c, i, j] = a.data[n, c, i, j] * x[n, c, i, j] + b.data[n, c, i, j]
    np.testing.assert_allclose(out, expected, atol=1e-14)


def test_coefficient_split_is_channels_0_2_and_3_5():
    rng = np.random.default_rng(5)
    params = cs.ColorMapParams.init(rng, head_gain=1.0)
    x = Tensor(rng.random((1, 3, 8, 8)))
    p = params.conv2(relu(params.conv1(x))).data
    a, b = params.coefficients(x)
    np.testing.assert_array_equal(a.data, p[:, :3])
    np.testing.assert_array_equal(b.data, p[:, 3:])


def test_head_must_have_six_channels():
    rng = np.random.default_rng(0)
    with pytest.raises(ValueError):
        cs.ColorMapParams(Conv2dParams.init(rng, 3, 4, 3), Conv2dParams.init(rng, 4, 5, 7, padding=3))


def test_affine_in_image_for_fixed_coefficients():
    rng = np.random.default_rng(6)
    i1, i2 = rng.random((1, 3, 4, 4)), rng.random((1, 3, 4, 4))
    a, b = rng.normal(size=(1, 3, 4, 4)), rng.normal(size=(1, 3, 4, 4))
    alpha = 0.3
    mixed = cs.apply_affine(alpha * i1 + (1 - alpha) * i2, a, b)
    combo = alpha * cs.apply_affine(i1, a, b) + (1 - alpha) * cs.apply_affine(i2, a, b)
    np.testing.assert_allclose(mixed, combo, atol=1e-14)


def test_color_map_gradients():
    for seed in range(3):
        rng = np.random.default_rng(seed)
        params = cs.ColorMapParams.init(rng, hidden=3, head_gain=1.0)
        probe = rng.normal(size=(1, 3, 6, 6))

        def f(x, w1, w2):
            params.conv1.kernel, params.conv2.kernel = w1, w2
            yuv = cs.rgb_to_yuv(ImagePlane(ColorSpace.RGB, x))
            return tsum(cs.color_map(yuv, params).pixels * Tensor(probe))

        arrays = [rng.random((1, 3, 6, 6)), params.conv1.kernel.data.copy(), params.conv2.kernel.data.copy()]
        assert gradcheck(f, arrays, coords_per_input=40, rng=rng) < 1e-5
