import struct

import cv2
import numpy as np
import pytest

from motionblur import fileio
from motionblur.fileio import (FLO_MAGIC, ImageDecodeError, ImageNotFoundError,
                               MagicMismatchError, SequenceError, TruncatedFlowError,
                               UnsupportedChannelsError, generate_synthetic_sequence,
                               load_flow, load_frames, load_image, save_flow, save_frames,
                               save_image, synthesize_blur_pair)
from motionblur.reblur import reblur
from oracles import frame_average


def test_png_round_trip_8bit(tmp_path, rng):
    raw = rng.integers(0, 256, (9, 7, 3), dtype=np.uint8)
    p = tmp_path / "a.png"
    save_image(p, raw / 255.0)
    img = load_image(p)
    assert img.shape == (9, 7, 3)
    np.testing.assert_array_equal(np.round(img * 255).astype(np.uint8), raw)
    q = tmp_path / "b.png"
    save_image(q, img)
    assert p.read_bytes() == q.read_bytes()


def test_png_16bit_and_gray(tmp_path, rng):
    raw = rng.integers(0, 65536, (5, 6), dtype=np.uint16)
    p = tmp_path / "g.png"
    save_image(p, raw / 65535.0, bit_depth=16)
    img = load_image(p)
    assert img.shape == (5, 6, 1)
    np.testing.assert_array_equal(np.round(img[..., 0] * 65535).astype(np.uint16), raw)


def test_rounding_and_clamping(tmp_path):
    p = tmp_path / "h.png"
    save_image(p, np.array([[0.5, -0.2, 1.7, 0.25]]))
    raw = cv2.imread(str(p), cv2.IMREAD_UNCHANGED)
    assert raw.tolist() == [[128, 0, 255, 64]]


def test_rgb_channel_order(tmp_path):
    img = np.zeros((2, 2, 3))
    img[..., 0] = 1.0
    p = tmp_path / "red.png"
    save_image(p, img)
    assert cv2.imread(str(p))[0, 0].tolist() == [0, 0, 255]
    np.testing.assert_array_equal(load_image(p), img)


def test_image_errors(tmp_path):
    with pytest.raises(ImageNotFoundError):
        load_image(tmp_path / "missing.png")
    bad = tmp_path / "bad.png"
    bad.write_bytes(b"not a png at all")
    with pytest.raises(ImageDecodeError):
        load_image(bad)
    rgba = tmp_path / "rgba.png"
    cv2.imwrite(str(rgba), np.zeros((3, 3, 4), np.uint8))
    with pytest.raises(UnsupportedChannelsError):
        load_image(rgba)


def test_flow_round_trip_and_layout(tmp_path, rng):
    flow = rng.standard_normal((5, 4, 2)).astype(np.float32).astype(np.float64)
    p = tmp_path / "f.flo"
    save_flow(p, flow)
    np.testing.assert_array_equal(load_flow(p), flow)
    data = p.read_bytes()
    assert struct.unpack("<f", data[:4])[0] == FLO_MAGIC
    assert struct.unpack("<ii", data[4:12]) == (4, 5)
    assert struct.unpack("<ff", data[12:20]) == tuple(flow[0, 0])


def test_zero_flow_file_size(tmp_path):
    p = tmp_path / "z.flo"
    save_flow(p, np.zeros((2, 2, 2)))
    assert p.stat().st_size == 4 + 8 + 32


def test_flow_errors(tmp_path):
    p = tmp_path / "f.flo"
    save_flow(p, np.zeros((3, 3, 2)))
    data = p.read_bytes()
    bad = tmp_path / "magic.flo"
    bad.write_bytes(struct.pack("<f", 1.0) + data[4:])
    with pytest.raises(MagicMismatchError):
        load_flow(bad)
    short = tmp_path / "short.flo"
    short.write_bytes(data[:-4])
    with pytest.raises(TruncatedFlowError):
        load_flow(short)
    short.write_bytes(data[:6])
    with pytest.raises(TruncatedFlowError):
        load_flow(short)


def test_frames_round_trip(tmp_path, rng):
    frames = [rng.integers(0, 256, (4, 5, 1)) / 255.0 for _ in range(12)]
    save_frames(tmp_path / "seq", frames)
    loaded = load_frames(tmp_path / "seq")
    assert len(loaded) == 12
    for a, b in zip(frames, loaded):
        np.testing.assert_allclose(a, b, atol=1e-12)


def test_frames_need_padded_numbers(tmp_path):
    d = tmp_path / "seq"
    d.mkdir()
    for name in ("1.png", "10.png"):
        save_image(d / name, np.zeros((2, 2)))
    with pytest.raises(SequenceError):
        load_frames(d)
    with pytest.raises(SequenceError):
        load_frames(tmp_path)


@pytest.mark.parametrize("pattern", fileio.PATTERNS)
def test_static_sequence(pattern):
    frames = generate_synthetic_sequence(pattern, (10, 8), (0, 0), 4, seed=3)
    assert frames[0].shape == (8, 10, 1)
    for f in frames[1:]:
        np.testing.assert_array_equal(f, frames[0])


@pytest.mark.parametrize("pattern", fileio.PATTERNS)
def test_integer_velocity_is_exact_shift(pattern):
    frames = generate_synthetic_sequence(pattern, (12, 10), (2, 1), 4, seed=1)
    for i, f in enumerate(frames):
        np.testing.assert_array_equal(f[i:, 2 * i:], frames[0][:10 - i, :12 - 2 * i])


def test_half_pixel_velocity_on_ramp():
    frames = generate_synthetic_sequence("ramp", (12, 8), (0.5, 0), 3)
    np.testing.assert_allclose(frames[2][:, 1:], frames[0][:, :-1], atol=1e-12)


def test_generator_deterministic_and_seeded():
    a = generate_synthetic_sequence("noise", (8, 8), (1, 0), 3, seed=5, channels=3)
    b = generate_synthetic_sequence("noise", (8, 8), (1, 0), 3, seed=5, channels=3)
    c = generate_synthetic_sequence("noise", (8, 8), (1, 0), 3, seed=6, channels=3)
    assert all(np.array_equal(x, y) for x, y in zip(a, b))
    assert not np.array_equal(a[0], c[0])
    assert a[0].shape == (8, 8, 3)
    with pytest.raises(ValueError):
        generate_synthetic_sequence("stripes", (8, 8), (1, 0), 3)


def test_blur_pair_basics(rng):
    frames = [rng.random((6, 6, 1)) for _ in range(12)]
    p = synthesize_blur_pair(frames, 3, 4)
    np.testing.assert_allclose(p.blur_a, frame_average(frames[0:3]), atol=1e-12)
    np.testing.assert_allclose(p.blur_b, frame_average(frames[4:7]), atol=1e-12)
    np.testing.assert_array_equal(p.sharp_a, frames[1])
    np.testing.assert_array_equal(p.sharp_b, frames[5])
    assert p.true_flow_hint is None
    one = synthesize_blur_pair(frames, 1, 2)
    assert one.blur_a.tobytes() == one.sharp_a.tobytes()
    const = synthesize_blur_pair([np.full((4, 4, 1), 0.25)] * 10, 3, 1)
    np.testing.assert_array_equal(const.blur_a, 0.25)


def test_blur_pair_errors(rng):
    frames = [rng.random((4, 4, 1)) for _ in range(10)]
    with pytest.raises(SequenceError):
        synthesize_blur_pair(frames, 4, 1)
    with pytest.raises(SequenceError):
        synthesize_blur_pair(frames, 5, 1)
    with pytest.raises(SequenceError):
        synthesize_blur_pair(frames, 3, 0)


@pytest.mark.parametrize("pattern", ["checkerboard", "noise"])
@pytest.mark.parametrize("velocity", [(1, 0), (2, 0), (1, 1)])
def test_frame_average_equals_reblur(pattern, velocity):
    frames = generate_synthetic_sequence(pattern, (24, 24), velocity, 12, seed=2)
    p = synthesize_blur_pair(frames, 5, 2, velocity=velocity)
    u = np.zeros((24, 24, 2))
    u[...] = velocity
    res = reblur(p.sharp_a, u, 2)
    inner = res.mask > 0
    assert inner.sum() > 200
    np.testing.assert_allclose(res.blurred[inner], p.blur_a[inner], atol=1e-6)
    np.testing.assert_array_equal(p.true_flow_hint[..., 0], 2 * velocity[0])
