"""Population generators evaluated at element centroids.

Every generator maps an (m, 2) or (m, 3) array of centroids to strictly
positive per-element population values.  The registry maps the test-case
names used by presets and the CLI to (function, dimension) pairs.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np
from numpy.typing import NDArray


def smoothstep(x: NDArray, center: float = 0.5, width: float = 0.02) -> NDArray:
    """Logistic blend S(x; c, w) = 1 / (1 + exp(-(x - c)/w))."""
    return 1.0 / (1.0 + np.exp(-(x - center) / width))


def basic_sinusoidal(c: NDArray) -> NDArray:
    return 2.0 + np.sin(2.0 * np.pi * c[:, 0]) * np.cos(2.0 * np.pi * c[:, 1])


def complex_sinusoidal(c: NDArray) -> NDArray:
    """Nonuniform-frequency variant; requires y > 0, as on interior centroids."""
    cy = c[:, 1]
    if np.any(cy <= 0.0):
        raise ValueError("complex sinusoidal field needs y > 0 at every centroid")
    return 2.0 + np.sin(np.exp(c[:, 0]) * 2.0 * np.pi) * np.cos(np.log(cy) * np.pi)


def ring(c: NDArray, radius: float = 0.25, thickness: float = 0.25) -> NDArray:
    """Gaussian band of population peaking on the circle d = radius.

    Thinner bands leave most of the domain with near-zero population, which
    the training plateau cannot equalize; the default keeps the dynamic
    range within what the optimizer handles.
    """
    d = np.hypot(c[:, 0] - 0.5, c[:, 1] - 0.5)
    return np.exp(-((d - radius) ** 2) / (2.0 * thickness ** 2))


_PEAK_RECTS = (((0.1, 0.3), (0.6, 0.9)), ((0.6, 0.9), (0.1, 0.3)))


def localized_peaks(c: NDArray, peak: float = 4.0) -> NDArray:
    """Sinusoidal base overridden by a constant peak in two closed rectangles."""
    values = basic_sinusoidal(c)
    for (x0, x1), (y0, y1) in _PEAK_RECTS:
        inside = ((c[:, 0] >= x0) & (c[:, 0] <= x1)
                  & (c[:, 1] >= y0) & (c[:, 1] <= y1))
        values[inside] = peak
    return values


def blended_quadrants(c: NDArray) -> NDArray:
    sx = smoothstep(c[:, 0])
    sy = smoothstep(c[:, 1])
    return (1.0 * (1.0 - sx) * sy
            + 2.5 * sx * sy
            + 3.0 * (1.0 - sx) * (1.0 - sy)
            + 4.0 * sx * (1.0 - sy))


def extreme(c: NDArray, high: float = 10.0, low: float = 0.5) -> NDArray:
    inside = ((c[:, 0] >= 0.3) & (c[:, 0] <= 0.7)
              & (c[:, 1] >= 0.4) & (c[:, 1] <= 0.6))
    return np.where(inside, high, low)


# -- raster masks -----------------------------------------------------------

def read_pgm(path) -> NDArray:
    """Read a PGM image (P2 ascii or P5 binary) as floats in [0, 1]."""
    raw = Path(path).read_bytes()
    if raw[:2] not in (b"P2", b"P5"):
        raise ValueError(f"not a PGM file: {path}")
    binary = raw[:2] == b"P5"

    # Header: magic, width, height, maxval; '#' comments allowed between tokens.
    tokens: list[int] = []
    pos = 2
    while len(tokens) < 3:
        while pos < len(raw) and raw[pos:pos + 1].isspace():
            pos += 1
        if raw[pos:pos + 1] == b"#":
            while pos < len(raw) and raw[pos] != 0x0A:
                pos += 1
            continue
        start = pos
        while pos < len(raw) and not raw[pos:pos + 1].isspace():
            pos += 1
        tokens.append(int(raw[start:pos]))
    width, height, maxval = tokens

    if binary:
        pos += 1  # single whitespace byte after maxval
        dtype = ">u2" if maxval > 255 else np.uint8
        data = np.frombuffer(raw, dtype=dtype, count=width * height, offset=pos)
    else:
        data = np.array(raw[pos:].split()[:width * height], dtype=np.int64)
    return data.reshape(height, width).astype(np.float64) / maxval


def default_mask_path() -> Path:
    return Path(__file__).parent / "assets" / "cu_mask.pgm"


def pattern_mask(c: NDArray, mask_path=None, rho_base: float = 1.0,
                 delta: float = 3.0, threshold: float = 0.5) -> NDArray:
    """Base population raised by delta wherever the mask raster is set.

    Raster row 0 is the top of the image (y = 1 side), so the pattern reads
    upright in map coordinates.
    """
    image = read_pgm(mask_path if mask_path is not None else default_mask_path())
    mask = image >= threshold
    h, w = mask.shape
    col = np.clip((c[:, 0] * w).astype(np.int64), 0, w - 1)
    row = np.clip(((1.0 - c[:, 1]) * h).astype(np.int64), 0, h - 1)
    return rho_base + delta * mask[row, col]


# -- 3D fields --------------------------------------------------------------

def basic_sinusoidal_3d(c: NDArray) -> NDArray:
    return 1.2 + (np.sin(2.0 * np.pi * c[:, 0])
                  * np.cos(2.0 * np.pi * c[:, 1])
                  * np.sin(2.0 * np.pi * c[:, 2]))


def complex_sinusoidal_3d(c: NDArray) -> NDArray:
    return 1.2 + (np.sin(np.exp(c[:, 0]) * 2.0 * np.pi)
                  * np.cos(np.log(c[:, 1] + 1e-5) * np.pi)
                  * np.sin(2.0 * np.pi * c[:, 2]))


def spherical_shell(c: NDArray, radius: float = 0.3,
                    thickness: float = 0.07) -> NDArray:
    d = np.linalg.norm(c - 0.5, axis=1)
    return np.exp(-((d - radius) ** 2) / (2.0 * thickness ** 2))


def blended_octants(c: NDArray) -> NDArray:
    """Weights 1..8 assigned binary-wise: +1 for high x, +2 high y, +4 high z."""
    sx = smoothstep(c[:, 0])
    sy = smoothstep(c[:, 1])
    sz = smoothstep(c[:, 2])
    value = np.zeros(c.shape[0])
    for bits in range(8):
        w = 1.0 + bits
        fx = sx if bits & 1 else 1.0 - sx
        fy = sy if bits & 2 else 1.0 - sy
        fz = sz if bits & 4 else 1.0 - sz
        value += w * fx * fy * fz
    return value


GENERATORS = {
    "basic_sinusoidal": (basic_sinusoidal, 2),
    "complex_sinusoidal": (complex_sinusoidal, 2),
    "ring": (ring, 2),
    "localized_peaks": (localized_peaks, 2),
    "blended_quadrants": (blended_quadrants, 2),
    "cu_pattern": (pattern_mask, 2),
    "extreme": (extreme, 2),
    "basic_sinusoidal_3d": (basic_sinusoidal_3d, 3),
    "complex_sinusoidal_3d": (complex_sinusoidal_3d, 3),
    "spherical_shell": (spherical_shell, 3),
    "blended_octants": (blended_octants, 3),
}


def generator_names(dim: int | None = None) -> list[str]:
    return [k for k, (_, d) in GENERATORS.items() if dim is None or d == dim]


def evaluate(name: str, centroids: NDArray, **params) -> NDArray:
    """Evaluate a registered generator; values must come back positive."""
    if name not in GENERATORS:
        raise KeyError(f"unknown population generator {name!r}; "
                       f"choices: {sorted(GENERATORS)}")
    fn, dim = GENERATORS[name]
    centroids = np.asarray(centroids, dtype=np.float64)
    if centroids.ndim != 2 or centroids.shape[1] != dim:
        raise ValueError(f"{name} expects (m, {dim}) centroids, "
                         f"got {centroids.shape}")
    values = fn(centroids, **params)
    if np.any(values <= 0.0):
        raise ValueError(f"{name} produced non-positive population values")
    return values
