"""Images and exports: the mu colormap, heatmaps, and binary PPM files.

The colormap is the piecewise-linear blue/white/red ramp:
    mu in [0, 1]   ->  (255*(1-mu), 255*(1-mu), 255)   blue at +1
    mu in [-1, 0)  ->  (255, 255*(1+mu), 255*(1+mu))   red at -1
with channels rounded half-up to integers, so mu = 0 is exact white,
mu = 1 exact blue, mu = -1 exact red.
"""

from __future__ import annotations

import math

import numpy as np

from .errors import DataError, FormatError, InputError
from .fractal import _require_complete

__all__ = [
    "colormap_pixel",
    "colormap",
    "render_heatmap",
    "binary_image",
    "write_ppm",
    "read_ppm",
    "write_histogram_csv",
]


def colormap_pixel(mu: float) -> tuple[int, int, int]:
    """Map one mu in [-1, 1] to an (r, g, b) byte triple."""
    if not (math.isfinite(mu) and -1.0 <= mu <= 1.0):
        raise InputError(f"mu must lie in [-1, 1], got {mu}")
    if mu >= 0.0:
        v = int(math.floor(255.0 * (1.0 - mu) + 0.5))
        return (v, v, 255)
    v = int(math.floor(255.0 * (1.0 + mu) + 0.5))
    return (255, v, v)


def colormap(mu: np.ndarray) -> np.ndarray:
    """Vectorized colormap_pixel: [...] -> [..., 3] uint8."""
    mu = np.asarray(mu, dtype=np.float64)
    if mu.size and not (np.isfinite(mu).all() and (np.abs(mu) <= 1.0).all()):
        raise InputError("all mu values must be finite and lie in [-1, 1]")
    fade = np.floor(255.0 * (1.0 - np.abs(mu)) + 0.5).astype(np.uint8)
    out = np.empty(mu.shape + (3,), dtype=np.uint8)
    positive = mu >= 0.0
    out[..., 0] = np.where(positive, fade, 255)
    out[..., 1] = fade
    out[..., 2] = np.where(positive, 255, fade)
    return out


def render_heatmap(result) -> np.ndarray:
    """Color image of a completed sweep, [att_count, fc_count, 3] uint8.

    The fc rate increases left to right and the attention rate increases
    bottom to top, so the image row order flips the grid's row order.
    """
    _require_complete(result)
    return colormap(result.mu[::-1, :])


def binary_image(mask: np.ndarray, flip_rows: bool = True) -> np.ndarray:
    """Render a boolean map as a black-on-white uint8 image (set pixels
    black). flip_rows keeps the orientation convention of render_heatmap."""
    mask = np.asarray(mask)
    if mask.dtype != bool or mask.ndim != 2:
        raise InputError(f"binary_image expects a 2-d boolean mask, got {mask.dtype} {mask.shape}")
    if flip_rows:
        mask = mask[::-1, :]
    return np.where(mask[..., None], 0, 255).astype(np.uint8).repeat(3, axis=-1).reshape(mask.shape + (3,))


def write_ppm(image: np.ndarray, path) -> None:
    """Write a [height, width, 3] uint8 image as a binary PPM: the header
    b"P6\\n<width> <height>\\n255\\n" followed by rows of RGB bytes."""
    image = np.asarray(image)
    if image.ndim != 3 or image.shape[2] != 3 or image.dtype != np.uint8:
        raise InputError(f"write_ppm expects a [height, width, 3] uint8 image, got {image.dtype} {image.shape}")
    height, width = image.shape[:2]
    if height < 1 or width < 1:
        raise InputError(f"image must have positive extent, got {image.shape}")
    header = f"P6\n{width} {height}\n255\n".encode("ascii")
    try:
        with open(path, "wb") as fh:
            fh.write(header)
            fh.write(image.tobytes())
    except OSError as exc:
        raise DataError(f"cannot write image {path}: {exc}") from exc


def read_ppm(path) -> np.ndarray:
    """Read back a binary PPM written by write_ppm."""
    try:
        with open(path, "rb") as fh:
            blob = fh.read()
    except OSError as exc:
        raise DataError(f"cannot read image {path}: {exc}") from exc
    parts = blob.split(b"\n", 3)
    if len(parts) != 4 or parts[0] != b"P6" or parts[2] != b"255":
        raise FormatError(f"{path} is not a binary 8-bit PPM")
    try:
        width, height = (int(v) for v in parts[1].split())
    except ValueError as exc:
        raise FormatError(f"{path} has a malformed size line: {parts[1]!r}") from exc
    body = parts[3]
    if len(body) != width * height * 3:
        raise FormatError(f"{path}: expected {width * height * 3} pixel bytes, found {len(body)}")
    return np.frombuffer(body, dtype=np.uint8).reshape(height, width, 3).copy()


def write_histogram_csv(histogram, path) -> None:
    """Export a histogram as CSV with header bin_low,bin_high,count."""
    lines = ["bin_low,bin_high,count"]
    for i, count in enumerate(histogram.counts):
        lines.append(f"{float(histogram.edges[i])!r},{float(histogram.edges[i + 1])!r},{int(count)}")
    with open(path, "w", encoding="ascii", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")
