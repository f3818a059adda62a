"""PNG and Middlebury ``.flo`` I/O, synthetic sequences and blur-pair synthesis."""

import os
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import List, Optional

import cv2
import numpy as np
from scipy.ndimage import gaussian_filter, map_coordinates

from .core import MotionBlurError, as_flow, as_image

FLO_MAGIC = 202021.25
PATTERNS = ("checkerboard", "noise", "ramp")


class ImageNotFoundError(MotionBlurError, FileNotFoundError):
    pass


class ImageDecodeError(MotionBlurError, ValueError):
    pass


class UnsupportedChannelsError(MotionBlurError, ValueError):
    pass


class FlowFormatError(MotionBlurError, ValueError):
    pass


class MagicMismatchError(FlowFormatError):
    pass


class TruncatedFlowError(FlowFormatError):
    pass


class SequenceError(MotionBlurError, ValueError):
    pass


def load_image(path):
    """Read an 8- or 16-bit PNG as a float64 ``(H, W, C)`` array in ``[0, 1]``."""
    path = Path(path)
    if not path.is_file():
        raise ImageNotFoundError(f"no such image: {path}")
    raw = cv2.imread(str(path), cv2.IMREAD_UNCHANGED)
    if raw is None:
        raise ImageDecodeError(f"cannot decode image: {path}")
    if raw.dtype == np.uint8:
        peak = 255.0
    elif raw.dtype == np.uint16:
        peak = 65535.0
    else:
        raise ImageDecodeError(f"unsupported sample type {raw.dtype} in {path}")
    if raw.ndim == 2:
        raw = raw[:, :, None]
    elif raw.shape[2] == 3:
        raw = raw[:, :, ::-1]
    else:
        raise UnsupportedChannelsError(f"{path} has {raw.shape[2]} channels; expected 1 or 3")
    return raw.astype(np.float64) / peak


def quantize(image, bit_depth=8):
    peak = {8: 255, 16: 65535}[bit_depth]
    dtype = np.uint8 if bit_depth == 8 else np.uint16
    v = np.clip(as_image(image), 0.0, 1.0) * peak
    return np.floor(v + 0.5).astype(dtype)


def save_image(path, image, bit_depth=8):
    """Write ``image`` as PNG, clamping to ``[0, 1]`` and rounding half up."""
    q = quantize(image, bit_depth)
    if q.shape[2] == 3:
        q = np.ascontiguousarray(q[:, :, ::-1])
    else:
        q = q[:, :, 0]
    if not cv2.imwrite(str(path), q):
        raise OSError(f"failed to write {path}")


def save_flow(path, flow):
    flow = as_flow(flow)
    h, w = flow.shape[:2]
    with open(path, "wb") as f:
        f.write(struct.pack("<f", FLO_MAGIC))
        f.write(struct.pack("<ii", w, h))
        f.write(flow.astype("<f4").tobytes())


def load_flow(path):
    data = Path(path).read_bytes()
    if len(data) < 12:
        raise TruncatedFlowError(f"{path}: header truncated")
    (magic,) = struct.unpack("<f", data[:4])
    if magic != FLO_MAGIC:
        raise MagicMismatchError(f"{path}: bad magic {magic!r}")
    w, h = struct.unpack("<ii", data[4:12])
    if w <= 0 or h <= 0:
        raise FlowFormatError(f"{path}: invalid size {w}x{h}")
    need = 12 + 8 * w * h
    if len(data) < need:
        raise TruncatedFlowError(f"{path}: expected {need} bytes, got {len(data)}")
    flow = np.frombuffer(data, dtype="<f4", count=2 * w * h, offset=12)
    return flow.reshape(h, w, 2).astype(np.float64)


def load_frames(directory):
    """Load a directory of zero-padded, numbered PNG frames in name order."""
    directory = Path(directory)
    if not directory.is_dir():
        raise ImageNotFoundError(f"no such directory: {directory}")
    paths = sorted(p for p in directory.iterdir() if p.suffix.lower() == ".png")
    if not paths:
        raise SequenceError(f"no PNG frames in {directory}")
    stems = [p.stem for p in paths]
    if not all(s.isdigit() for s in stems) or len({len(s) for s in stems}) != 1:
        raise SequenceError("frame names must be zero-padded numbers of equal width")
    return [load_image(p) for p in paths]


def save_frames(directory, frames, bit_depth=8):
    os.makedirs(directory, exist_ok=True)
    width = max(4, len(str(len(frames) - 1)))
    for i, frame in enumerate(frames):
        save_image(Path(directory) / f"{i:0{width}d}.png", frame, bit_depth)


def _canvas(pattern, shape, rng, channels):
    ch, cw = shape
    ys, xs = np.mgrid[0:ch, 0:cw].astype(np.float64)
    if pattern == "checkerboard":
        cell = 4
        base = ((xs // cell + ys // cell) % 2) * 0.8 + 0.1
        layers = [base] * channels
    elif pattern == "noise":
        layers = []
        for _ in range(channels):
            n = gaussian_filter(rng.random((ch, cw)), sigma=1.0, mode="wrap")
            n = (n - n.min()) / max(n.max() - n.min(), 1e-12)
            layers.append(0.05 + 0.9 * n)
    elif pattern == "ramp":
        base = (xs + 0.5 * ys) / (cw + 0.5 * ch)
        layers = [base] * channels
    else:
        raise ValueError(f"unknown pattern {pattern!r}; choose from {PATTERNS}")
    return np.stack(layers, axis=2)


def generate_synthetic_sequence(pattern, size, velocity, count, seed=0, channels=1):
    """Frames of ``pattern`` translating by ``velocity`` pixels per frame.

    ``size`` is ``(width, height)``.  Frames are cut from an oversized canvas
    so that the visible content never needs invented borders; sub-pixel
    positions are sampled bilinearly.
    """
    if count < 1:
        raise ValueError("count must be >= 1")
    w, h = size
    vx, vy = velocity
    span_x = int(np.ceil(abs(vx) * (count - 1))) + 2
    span_y = int(np.ceil(abs(vy) * (count - 1))) + 2
    rng = np.random.default_rng(seed)
    canvas = _canvas(pattern, (h + 2 * span_y, w + 2 * span_x), rng, channels)
    ch, cw = canvas.shape[:2]
    ys, xs = np.mgrid[0:h, 0:w].astype(np.float64)
    frames = []
    for i in range(count):
        # Content moves by +velocity, so frame i reads the canvas i*v back.
        sx = xs + span_x - i * vx
        sy = ys + span_y - i * vy
        if float(vx).is_integer() and float(vy).is_integer():
            frame = canvas[sy.astype(np.int64) % ch, sx.astype(np.int64) % cw]
        else:
            frame = np.stack([map_coordinates(canvas[..., c], [sy, sx], order=1,
                                              mode="grid-wrap")
                              for c in range(channels)], axis=2)
        frames.append(frame)
    return frames


@dataclass
class BlurPair:
    blur_a: np.ndarray
    blur_b: np.ndarray
    sharp_a: np.ndarray
    sharp_b: np.ndarray
    true_flow_hint: Optional[np.ndarray] = None


def synthesize_blur_pair(frames: List[np.ndarray], window, stride, velocity=None):
    """Average ``window`` consecutive frames at offsets 0 and ``stride``.

    The sharp reference of each blurry frame is the central frame of its
    window.  When the per-frame ``velocity`` of the sequence is known, the
    constant a-to-b flow ``stride * velocity`` is returned as the hint.
    """
    if window < 1 or window % 2 == 0:
        raise SequenceError(f"window must be a positive odd count, got {window}")
    if stride < 1:
        raise SequenceError("stride must be >= 1")
    if 2 * window + stride > len(frames):
        raise SequenceError(
            f"need at least 2*window + stride = {2 * window + stride} frames, got {len(frames)}")
    frames = [as_image(f) for f in frames]
    mid = window // 2

    def average(start):
        acc = np.zeros_like(frames[start])
        for f in frames[start:start + window]:
            acc += f
        return acc / window

    hint = None
    if velocity is not None:
        h, w = frames[0].shape[:2]
        hint = np.empty((h, w, 2))
        hint[..., 0] = stride * velocity[0]
        hint[..., 1] = stride * velocity[1]
    return BlurPair(average(0), average(stride), frames[mid].copy(),
                    frames[stride + mid].copy(), hint)
