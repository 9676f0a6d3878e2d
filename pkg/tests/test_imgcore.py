import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from clothlit.errors import (
    DecodeError,
    DegenerateRegionError,
    DimensionError,
    FormatError,
    ParameterError,
)
from clothlit.imgcore import (
    EdgeSet,
    GradientField,
    Image,
    canny,
    fdx,
    fdx_adj,
    fdy,
    fdy_adj,
    gradient,
    gradient_magnitude,
    hadamard,
    load_ciif,
    load_image,
    mean_normalize,
    save_ciif,
    save_png,
    to_luminance,
)


def gray(values):
    return Image(np.asarray(values, dtype=np.float64)[:, :, None])


# ---------------------------------------------------------------------------
# Image type

def test_image_shape_and_channels():
    img = Image(np.zeros((4, 5, 3)))
    assert (img.height, img.width, img.channels) == (4, 5, 3)
    with pytest.raises(DimensionError):
        Image(np.zeros((4, 5, 2)))
    with pytest.raises(ParameterError):
        Image(np.full((2, 2, 1), np.nan))


def test_intensity_check():
    with pytest.raises(ParameterError):
        Image(np.full((2, 2, 1), -0.5)).require_intensity()


# ---------------------------------------------------------------------------
# PNG and CIIF

def test_png_black_and_white_roundtrip():
    black = save_png(gray([[0.0]]))
    white = save_png(gray([[1.0]]))
    assert load_image(black).data[0, 0, 0] == 0.0
    assert load_image(white).data[0, 0, 0] == 1.0


def test_srgb_midgray():
    # 8-bit value 128 decoded through the sRGB transfer; reference value
    # computed from ((128/255 + 0.055)/1.055)**2.4
    import cv2

    ok, buf = cv2.imencode(".png", np.array([[128]], dtype=np.uint8))
    img = load_image(buf.tobytes(), colorspace="srgb")
    assert abs(img.data[0, 0, 0] - 0.215861) < 1e-5


def test_load_rejects_garbage():
    with pytest.raises(DecodeError):
        load_image(b"not a png")
    with pytest.raises(ParameterError):
        load_image(save_png(gray([[0.5]])), colorspace="bogus")


def test_png_16bit_rgb_roundtrip(rng):
    img = Image(rng.uniform(0, 1, (6, 7, 3)))
    back = load_image(save_png(img))
    assert np.abs(back.data - img.data).max() <= 0.5 / 65535 + 1e-9


def test_ciif_roundtrip(rng):
    img = Image(rng.uniform(0, 2, (5, 9, 3)))
    back = load_ciif(save_ciif(img))
    assert back.data.shape == img.data.shape
    assert np.abs(back.data - img.data).max() < 1e-6  # float32 quantization only
    with pytest.raises(FormatError):
        load_ciif(b"XXXX" + b"\0" * 20)
    with pytest.raises(FormatError):
        load_ciif(save_ciif(img)[:-4])


# ---------------------------------------------------------------------------
# luminance / hadamard / normalization

def test_luminance_constant_and_weights():
    img = Image(np.full((3, 3, 3), 0.37))
    assert np.allclose(to_luminance(img).data, 0.37)
    red = Image(np.zeros((1, 1, 3)) + [1.0, 0.0, 0.0])
    assert abs(to_luminance(red).data[0, 0, 0] - 0.2126) < 1e-12
    one = gray([[0.4]])
    assert to_luminance(one) is one


def test_hadamard_identity_and_broadcast():
    r = Image(np.random.default_rng(0).uniform(0, 1, (4, 4, 3)))
    ones = Image(np.ones((4, 4, 1)))
    assert np.array_equal(hadamard(r, ones).data, r.data)
    s = Image(np.full((4, 4, 1), 0.4))
    rc = Image(np.full((4, 4, 3), 0.5))
    assert np.allclose(hadamard(rc, s).data, 0.2)
    with pytest.raises(DimensionError):
        hadamard(r, Image(np.ones((5, 4, 1))))


def test_mean_normalize_examples():
    img = gray([[5.0, 5.0], [5.0, 5.0]])
    out = mean_normalize(img, np.ones((2, 2), dtype=bool))
    assert np.allclose(out.data, 1.0)

    img = gray([[1.0, 1.0, 3.0]])
    out = mean_normalize(img, [(0, 0), (1, 0), (2, 0)])
    assert np.allclose(out.data[0, :, 0], [0.6, 0.6, 1.8])

    with pytest.raises(DegenerateRegionError):
        mean_normalize(img, [])
    with pytest.raises(DegenerateRegionError):
        mean_normalize(gray([[0.0]]), [(0, 0)])


@given(st.floats(min_value=0.01, max_value=100.0))
@settings(max_examples=30, deadline=None)
def test_mean_normalize_scale_invariant_and_idempotent(c):
    rng = np.random.default_rng(7)
    data = rng.uniform(0.1, 2.0, (4, 4, 1))
    mask = np.ones((4, 4), dtype=bool)
    base = mean_normalize(Image(data), mask)
    scaled = mean_normalize(Image(c * data), mask)
    assert np.abs(base.data - scaled.data).max() < 1e-12
    twice = mean_normalize(base, mask)
    assert np.abs(twice.data - base.data).max() < 1e-12


# ---------------------------------------------------------------------------
# gradients

def test_gradient_examples():
    assert np.all(gradient(gray([[3.0, 3.0], [3.0, 3.0]])).gx.data == 0)
    ramp = gradient(gray([[0.0, 1.0, 2.0]]))
    assert np.array_equal(ramp.gx.data[0, :, 0], [1.0, 1.0, 0.0])
    step = gradient(gray([[0.0, 0.0, 1.0, 1.0]]))
    assert np.array_equal(step.gx.data[0, :, 0], [0.0, 1.0, 0.0, 0.0])


def test_gradient_linearity(rng):
    x = rng.normal(size=(6, 5, 3))
    y = rng.normal(size=(6, 5, 3))
    a, b = 2.5, -1.25
    gx1 = fdx(a * x + b * y)
    gx2 = a * fdx(x) + b * fdx(y)
    assert np.abs(gx1 - gx2).max() < 1e-12


def test_gradient_adjoint(rng):
    f = rng.normal(size=(7, 9, 3))
    u = rng.normal(size=(7, 9, 3))
    assert abs((fdx(f) * u).sum() - (f * fdx_adj(u)).sum()) < 1e-10
    assert abs((fdy(f) * u).sum() - (f * fdy_adj(u)).sum()) < 1e-10


def test_gradient_magnitude_pooling():
    gf = GradientField(gray([[3.0]]), gray([[4.0]]))
    assert gradient_magnitude(gf).data[0, 0, 0] == 5.0

    gx = Image(np.array([[[1.0, 0.0, 0.0]]]))
    gy = Image(np.array([[[0.0, 1.0, 0.0]]]))
    assert abs(gradient_magnitude(GradientField(gx, gy)).data[0, 0, 0] - np.sqrt(2)) < 1e-12

    zero = GradientField(gray([[0.0, 0.0]]), gray([[0.0, 0.0]]))
    assert np.all(gradient_magnitude(zero).data == 0)


# ---------------------------------------------------------------------------
# canny

def test_canny_constant_empty():
    assert len(canny(gray(np.full((16, 16), 0.5)))) == 0


def test_canny_step_edge():
    data = np.zeros((24, 24))
    data[:, 12:] = 1.0
    edges = canny(Image(data[:, :, None]), 1.4, 0.05, 0.15)
    assert len(edges) > 0
    cols = {x for x, _ in edges.pixels}
    assert all(abs(c - 11.5) <= 1.0 for c in cols)  # within 1 px of the step
    rows = sorted(y for _, y in edges.pixels)
    assert rows == list(range(24))  # contiguous vertical line

    assert len(canny(Image(data[:, :, None]), 1.4, 0.05, 10.0)) == 0


def test_canny_subset_of_low_threshold():
    from scipy import ndimage

    rng = np.random.default_rng(5)
    data = ndimage.gaussian_filter(rng.uniform(0, 1, (32, 32)), 1.0)
    low, high = 0.01, 0.03
    edges = canny(Image(data[:, :, None]), 1.4, low, high)
    blurred = ndimage.gaussian_filter(data, 1.4, mode="nearest")
    from clothlit.imgcore import _sobel

    gx, gy = _sobel(blurred)
    mag = np.hypot(gx, gy)
    for x, y in edges.pixels:
        assert mag[y, x] > low


def test_canny_parameter_validation():
    img = gray(np.zeros((4, 4)))
    with pytest.raises(ParameterError):
        canny(img, 1.4, 0.2, 0.1)
    with pytest.raises(DimensionError):
        canny(Image(np.zeros((4, 4, 3))))


def test_edgeset_bounds_and_mask():
    es = EdgeSet(4, 3, frozenset({(0, 0), (3, 2)}))
    assert es.mask().sum() == 2
    assert EdgeSet.from_mask(es.mask()) == es
    with pytest.raises(ParameterError):
        EdgeSet(2, 2, frozenset({(2, 0)}))
