"""Shared types and geometry for the reblurring engine.

Images are ``float64`` arrays of shape ``(H, W, C)``, flow fields are
``(H, W, 2)`` arrays holding ``(dx, dy)`` in pixels, and masks are ``(H, W)``
arrays in ``[0, 1]``.  Pixel ``(x, y)`` has its center at continuous
coordinates ``(x, y)``, so the image domain is ``[0, W-1] x [0, H-1]``.
"""

import os
from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np

DEGENERATE_AREA = 1e-12
# Inclusion slack for points lying on a triangle edge.
EDGE_EPS = 1e-9


class MotionBlurError(Exception):
    """Base class for errors raised by this package."""


class ShapeError(MotionBlurError, ValueError):
    pass


class InvalidDimensionError(MotionBlurError, ValueError):
    pass


class NonFiniteError(MotionBlurError, FloatingPointError):
    pass


def as_image(a, name="image"):
    """Return ``a`` as a float64 ``(H, W, C)`` array, promoting 2-D input."""
    a = np.asarray(a, dtype=np.float64)
    if a.ndim == 2:
        a = a[:, :, None]
    if a.ndim != 3 or a.shape[2] not in (1, 3):
        raise ShapeError(f"{name} must be HxW, HxWx1 or HxWx3, got {a.shape}")
    check_finite(a, name)
    return a


def as_flow(a, name="flow"):
    a = np.asarray(a, dtype=np.float64)
    if a.ndim != 3 or a.shape[2] != 2:
        raise ShapeError(f"{name} must be HxWx2, got {a.shape}")
    check_finite(a, name)
    return a


def as_mask(a, name="mask"):
    a = np.asarray(a, dtype=np.float64)
    if a.ndim == 3 and a.shape[2] == 1:
        a = a[:, :, 0]
    if a.ndim != 2:
        raise ShapeError(f"{name} must be HxW, got {a.shape}")
    return a


def check_same_grid(*arrays, names=None):
    """Raise ShapeError unless all arrays share the same (H, W)."""
    shapes = [np.shape(a)[:2] for a in arrays]
    if len(set(shapes)) > 1:
        label = ", ".join(names) if names else "inputs"
        raise ShapeError(f"grid mismatch between {label}: {shapes}")


def check_finite(a, name):
    if not np.all(np.isfinite(a)):
        raise NonFiniteError(f"{name} contains NaN or Inf")


@dataclass(frozen=True)
class TriangleLattice:
    """Regular triangulation of a ``width x height`` pixel grid.

    Vertex ``k = y * width + x`` sits at pixel center ``(x, y)``.  Every cell
    is split along its lower-left to upper-right diagonal (image ``y`` grows
    downward), giving triangles ``2c`` = (top-left, top-right, bottom-left)
    and ``2c + 1`` = (top-right, bottom-right, bottom-left) for cell ``c``.
    """

    width: int
    height: int
    vertices: np.ndarray
    triangles: np.ndarray

    @property
    def n_triangles(self):
        return len(self.triangles)


def build_lattice(width, height):
    if width < 2 or height < 2:
        raise InvalidDimensionError(
            f"lattice needs at least 2x2 pixels, got {width}x{height}")
    ys, xs = np.mgrid[0:height, 0:width]
    vertices = np.stack([xs.ravel(), ys.ravel()], axis=1).astype(np.float64)

    cy, cx = np.mgrid[0:height - 1, 0:width - 1]
    tl = (cy * width + cx).ravel()
    tr = tl + 1
    bl = tl + width
    br = bl + 1
    tris = np.empty((2 * len(tl), 3), dtype=np.int64)
    tris[0::2] = np.stack([tl, tr, bl], axis=1)
    tris[1::2] = np.stack([tr, br, bl], axis=1)
    vertices.flags.writeable = False
    tris.flags.writeable = False
    return TriangleLattice(width, height, vertices, tris)


def signed_area(v0, v1, v2):
    """Twice the signed area of triangle (v0, v1, v2)."""
    return (v1[0] - v0[0]) * (v2[1] - v0[1]) - (v2[0] - v0[0]) * (v1[1] - v0[1])


def point_in_triangle(p, v0, v1, v2) -> Optional[Tuple[float, float, float]]:
    """Barycentric weights of ``p`` if it lies in the closed triangle, else None.

    Degenerate triangles never cover anything.
    """
    area = signed_area(v0, v1, v2)
    if abs(area) < DEGENERATE_AREA:
        return None
    w0 = signed_area(p, v1, v2) / area
    w1 = signed_area(v0, p, v2) / area
    w2 = signed_area(v0, v1, p) / area
    if w0 < -EDGE_EPS or w1 < -EDGE_EPS or w2 < -EDGE_EPS:
        return None
    return (w0, w1, w2)


@dataclass(frozen=True)
class Fragment:
    pixel: Tuple[int, int]
    triangle_id: int
    barycentric: Tuple[float, float, float]
    motion_magnitude: float


@dataclass(frozen=True)
class ReblurConfig:
    """Virtual-frame count and camera timing for the linear-motion model.

    ``N`` is the half-window: ``2N + 1`` virtual frames are averaged.
    """

    N: int = 8
    exposure_tau: float = 1.0
    frame_interval_dt: float = 1.0

    def __post_init__(self):
        if self.N < 0:
            raise ValueError("N must be >= 0")
        if not (self.exposure_tau > 0 and self.frame_interval_dt > 0):
            raise ValueError("exposure_tau and frame_interval_dt must be positive")
        if self.exposure_tau > self.frame_interval_dt:
            raise ValueError("exposure cannot exceed the frame interval")


def default_threads():
    """Worker count from ``REBLUR_THREADS``, else the CPU count."""
    env = os.environ.get("REBLUR_THREADS")
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            pass
    return os.cpu_count() or 1


_threads = None


def get_threads():
    return _threads if _threads is not None else default_threads()


def set_threads(n):
    global _threads
    _threads = None if n is None else max(1, int(n))
