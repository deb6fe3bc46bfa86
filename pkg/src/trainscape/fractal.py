"""Reference fractals, edge extraction, and box-counting dimension.

The box counter is calibrated against shapes with known dimension (a
Sierpinski triangle at log 3 / log 2, a filled square at 2, a straight
line at 1) before being pointed at convergence maps, and the escape-time
set generator provides a rich natural boundary for sanity-checking the
edge extractor.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, IncompleteSweepError, InputError

__all__ = [
    "DimensionEstimate",
    "Histogram",
    "gen_sierpinski",
    "escape_time",
    "gen_multibrot",
    "sobel_edges",
    "binarize_convergence",
    "default_box_sizes",
    "box_count",
    "box_count_dimension",
    "histogram_mu",
    "write_box_counts_csv",
]


@dataclass(frozen=True)
class DimensionEstimate:
    """Least-squares box-counting fit: N(eps) ~ eps^-dimension.

    counts holds (box_size, box_count) pairs sorted by box size ascending;
    the fit regresses log N on log(1/eps) so the slope is the dimension.
    """

    dimension: float
    intercept: float
    r_squared: float
    counts: tuple[tuple[int, int], ...]


@dataclass(frozen=True)
class Histogram:
    """Fixed-range histogram: counts[i] covers [edges[i], edges[i+1])."""

    edges: np.ndarray
    counts: np.ndarray


def _checked_log2(n: int, what: str) -> int:
    if n < 1 or n & (n - 1) != 0:
        raise ConfigError(f"{what} must be a power of two, got {n}")
    return n.bit_length() - 1


def gen_sierpinski(size: int, depth: int) -> np.ndarray:
    """Sierpinski triangle on a size x size boolean raster.

    Recursion: keep three of the four quadrants (drop the one where both
    coordinates have their high bit set) for `depth` levels, then fill each
    surviving base block with the right triangle x_low + y_low < block.
    Equivalently pixel (y, x) is set iff the top `depth` bits of x and y
    never overlap and the remaining low bits sum below the block size.
    Doubling the raster while adding one level scales the pixel count by
    exactly 3, matching dimension log 3 / log 2.
    """
    bits = _checked_log2(size, "size")
    if size < 2:
        raise ConfigError(f"size must be at least 2, got {size}")
    if depth < 1:
        raise ConfigError(f"depth must be positive, got {depth}")
    if depth > bits:
        raise ConfigError(f"depth {depth} exceeds the {bits} subdivision levels of a {size}-pixel side")
    block_bits = bits - depth
    coords = np.arange(size)
    high = coords >> block_bits
    low = coords & ((1 << block_bits) - 1)
    quadrants = (high[:, None] & high[None, :]) == 0
    base_fill = (low[:, None] + low[None, :]) < (1 << block_bits)
    return quadrants & base_fill


def _escape_radius(d: int, escape_radius: float | None) -> float:
    if escape_radius is None:
        # Smallest radius guaranteeing escape for |z| beyond it: |z|^d - |c|
        # grows once |z| > max(2, 2^(1/(d-1))).
        return max(2.0, 2.0 ** (1.0 / (d - 1)))
    if not (escape_radius > 0.0):
        raise ConfigError(f"escape_radius must be positive, got {escape_radius}")
    return float(escape_radius)


def _validate_multibrot(d: int, max_iter: int) -> None:
    if d < 2:
        raise ConfigError(f"multibrot exponent must be at least 2, got {d}")
    if max_iter < 1:
        raise ConfigError(f"max_iter must be positive, got {max_iter}")


def escape_time(c: complex, d: int = 2, max_iter: int = 100, escape_radius: float | None = None) -> int:
    """Iterations until z <- z^d + c (from z = 0) leaves the escape radius;
    0 means it never escaped within max_iter."""
    _validate_multibrot(d, max_iter)
    radius = _escape_radius(d, escape_radius)
    z = 0j
    for it in range(1, max_iter + 1):
        w = z
        for _ in range(d - 1):
            w = w * z
        z = w + c
        if abs(z) > radius:
            return it
    return 0


def gen_multibrot(
    d: int,
    region: tuple[float, float, float, float],
    resolution: int,
    max_iter: int,
    escape_radius: float | None = None,
) -> np.ndarray:
    """Escape-time field of z <- z^d + c over a rectangle of the c plane.

    region is (re_min, re_max, im_min, im_max); the grid samples pixel
    centers at `resolution` points per axis, row 0 at the top (im_max).
    Values are escape_iteration / max_iter in [0, 1]; interior points that
    never escape are exactly 0.
    """
    _validate_multibrot(d, max_iter)
    re_min, re_max, im_min, im_max = region
    if not (re_min < re_max and im_min < im_max):
        raise ConfigError(f"region must satisfy re_min < re_max and im_min < im_max, got {region}")
    if resolution < 2:
        raise ConfigError(f"resolution must be at least 2, got {resolution}")
    radius = _escape_radius(d, escape_radius)
    idx = np.arange(resolution) + 0.5
    re = re_min + idx * (re_max - re_min) / resolution
    im = im_max - idx * (im_max - im_min) / resolution
    c = re[None, :] + 1j * im[:, None]
    z = np.zeros_like(c)
    escaped_at = np.zeros(c.shape, dtype=np.int64)
    alive = np.ones(c.shape, dtype=bool)
    for it in range(1, max_iter + 1):
        za = z[alive]
        w = za
        for _ in range(d - 1):
            w = w * za
        z[alive] = w + c[alive]
        now = alive & (np.abs(z) > radius)
        escaped_at[now] = it
        alive &= ~now
        if not alive.any():
            break
    return escaped_at / max_iter


_SOBEL_X = np.array([[-1.0, 0.0, 1.0], [-2.0, 0.0, 2.0], [-1.0, 0.0, 1.0]])
_SOBEL_Y = _SOBEL_X.T


def sobel_edges(image: np.ndarray, threshold: float | None = None) -> np.ndarray:
    """Boolean edge map: gradient magnitude >= threshold.

    The 3x3 Sobel pair estimates horizontal and vertical derivatives on a
    replicate-padded image, so borders see their own values rather than
    zeros and a constant image yields no edges anywhere. With threshold
    None, a binary image uses 1.0 (half the smallest nonzero step response
    of 2 and safely above float noise) and a grayscale image uses a quarter
    of its own maximum gradient magnitude.
    """
    image = np.asarray(image)
    if image.ndim != 2 or image.shape[0] < 3 or image.shape[1] < 3:
        raise InputError(f"edge extraction needs a 2-d image of at least 3x3, got shape {image.shape}")
    binary = image.dtype == bool
    field = image.astype(np.float64)
    if not binary and field.size and (np.nanmin(field) < 0.0 or np.nanmax(field) > 1.0):
        raise InputError("grayscale image values must lie in [0, 1]")
    p = np.pad(field, 1, mode="edge")
    gx = (
        (p[:-2, 2:] + 2.0 * p[1:-1, 2:] + p[2:, 2:])
        - (p[:-2, :-2] + 2.0 * p[1:-1, :-2] + p[2:, :-2])
    )
    gy = (
        (p[2:, :-2] + 2.0 * p[2:, 1:-1] + p[2:, 2:])
        - (p[:-2, :-2] + 2.0 * p[:-2, 1:-1] + p[:-2, 2:])
    )
    magnitude = np.hypot(gx, gy)
    if threshold is None:
        if binary:
            threshold = 1.0
        else:
            peak = float(magnitude.max())
            if peak == 0.0:
                return np.zeros(image.shape, dtype=bool)
            threshold = 0.25 * peak
    if not (threshold > 0.0):
        raise InputError(f"threshold must be positive, got {threshold}")
    return magnitude >= threshold


def _require_complete(result) -> None:
    if not result.done.all():
        missing = [f"({k // result.grid.fc_count},{k % result.grid.fc_count})" for k in result.pending_cells()]
        head = ", ".join(missing[:20])
        more = f" and {len(missing) - 20} more" if len(missing) > 20 else ""
        raise IncompleteSweepError(f"sweep has {len(missing)} unfinished cells: {head}{more}")


def binarize_convergence(result, by_mu_sign: bool = False) -> np.ndarray:
    """Boolean map of a completed sweep, pixel (i, j) = cell (i, j) with no
    transposition. Default marks cells whose criterion verdict was
    converged; by_mu_sign marks cells with mu > 0 instead (a stricter set,
    since converged cells can still sit above the cutoff area)."""
    _require_complete(result)
    if by_mu_sign:
        return result.mu > 0.0
    return result.converged.copy()


def default_box_sizes(side: int) -> tuple[int, ...]:
    """Powers of two from 2 up to side // 4."""
    bits = _checked_log2(side, "side")
    return tuple(2 ** k for k in range(1, bits - 1))


def box_count(image: np.ndarray, box_size: int) -> int:
    """Number of box_size x box_size blocks containing any set pixel."""
    side = image.shape[0]
    if box_size < 1 or side % box_size != 0:
        raise ConfigError(f"box size {box_size} must evenly divide the side {side}")
    blocks = image.reshape(side // box_size, box_size, side // box_size, box_size)
    return int(blocks.any(axis=(1, 3)).sum())


def box_count_dimension(image: np.ndarray, box_sizes=None) -> DimensionEstimate:
    """Box-counting dimension of a square power-of-two boolean image.

    Counts occupied boxes at each size, then least-squares fits
    log N = dimension * log(1/eps) + intercept. At least two distinct box
    sizes are required and the image must contain a set pixel.
    """
    image = np.asarray(image)
    if image.dtype != bool:
        raise InputError(f"box counting expects a boolean image, got dtype {image.dtype}")
    if image.ndim != 2 or image.shape[0] != image.shape[1]:
        raise ConfigError(f"box counting needs a square image, got shape {image.shape}")
    side = image.shape[0]
    _checked_log2(side, "image side")
    if not image.any():
        raise InputError("cannot estimate a dimension for an image with no set pixels")
    if box_sizes is None:
        box_sizes = default_box_sizes(side)
    sizes = sorted(set(int(s) for s in box_sizes))
    if len(sizes) < 2:
        raise ConfigError(f"need at least two distinct box sizes, got {sizes}")
    for s in sizes:
        if s < 1 or s > side or s & (s - 1) != 0:
            raise ConfigError(f"box sizes must be powers of two within the image side, got {s}")
    counts = [box_count(image, s) for s in sizes]
    x = -np.log(np.array(sizes, dtype=np.float64))  # log(1/eps)
    y = np.log(np.array(counts, dtype=np.float64))
    slope, intercept = np.polyfit(x, y, 1)
    fitted = slope * x + intercept
    ss_res = float(((y - fitted) ** 2).sum())
    ss_tot = float(((y - y.mean()) ** 2).sum())
    r_squared = 1.0 if ss_tot == 0.0 else 1.0 - ss_res / ss_tot
    return DimensionEstimate(
        dimension=float(slope),
        intercept=float(intercept),
        r_squared=r_squared,
        counts=tuple(zip(sizes, counts)),
    )


def histogram_mu(result, bins: int = 100) -> Histogram:
    """Histogram of a completed sweep's mu values over [-1, 1]."""
    _require_complete(result)
    if bins < 1:
        raise ConfigError(f"bins must be positive, got {bins}")
    counts, edges = np.histogram(result.mu.ravel(), bins=bins, range=(-1.0, 1.0))
    return Histogram(edges=edges, counts=counts)


def write_box_counts_csv(estimate: DimensionEstimate, path) -> None:
    lines = ["epsilon,count"]
    for size, count in estimate.counts:
        lines.append(f"{size},{count}")
    with open(path, "w", encoding="ascii", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")
