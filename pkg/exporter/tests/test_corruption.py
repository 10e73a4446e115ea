import numpy as np

from segexport import kernel_length, motion_blur
from segexport.selftest import symmetric_image


def test_severity_zero_is_bitwise_identity(rng):
    img = rng.uniform(size=(20, 20, 3)).astype(np.float32)
    out = motion_blur(img, 0.0)
    assert out.tobytes() == img.tobytes()
    assert out is not img


def test_kernel_length_grows_with_severity():
    lengths = [kernel_length(s, 15) for s in (0.0, 0.25, 0.5, 0.75, 1.0)]
    assert lengths[0] == 1
    assert lengths[-1] == 15
    assert all(l % 2 == 1 for l in lengths)
    assert all(b >= a for a, b in zip(lengths, lengths[1:]))


def test_constant_image_is_blur_invariant():
    img = np.full((16, 24, 3), 0.6, dtype=np.float32)
    out = motion_blur(img, 1.0, max_len=9, angle=30.0)
    assert np.allclose(out, 0.6, atol=1e-6)


def test_horizontal_blur_smears_a_vertical_stripe():
    img = np.zeros((11, 31, 3), dtype=np.float32)
    img[:, 15] = 1.0
    out = motion_blur(img, 1.0, max_len=7, angle=0.0)
    row = out[5, :, 0]
    assert np.count_nonzero(row > 1e-6) == 7  # energy spread over the streak
    assert row[15] < 1.0
    assert abs(float(row.sum()) - 1.0) < 1e-6  # interior streak conserves mass


def test_vertical_blur_spreads_down_columns():
    img = np.zeros((31, 11, 3), dtype=np.float32)
    img[15, :] = 1.0
    out = motion_blur(img, 1.0, max_len=7, angle=90.0)
    col = out[:, 5, 0]
    assert np.count_nonzero(col > 1e-6) == 7
    assert out[15, 5, 0] < 1.0


def test_horizontal_blur_preserves_mirror_symmetry():
    img = symmetric_image(24, 32, seed=11)
    out = motion_blur(img, 0.8, max_len=9, angle=0.0)
    assert np.allclose(out, out[:, ::-1], atol=1e-6)


def test_blur_reduces_horizontal_variation(rng):
    img = rng.uniform(size=(16, 64, 3)).astype(np.float32)
    out = motion_blur(img, 1.0, max_len=11, angle=0.0)
    tv_in = float(np.abs(np.diff(img, axis=1)).mean())
    tv_out = float(np.abs(np.diff(out, axis=1)).mean())
    assert tv_out < tv_in * 0.5
