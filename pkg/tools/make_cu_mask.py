"""Generate the 64x64 "CU" stencil shipped as src/ldem/assets/cu_mask.pgm.

Letters are drawn as axis-aligned bar strokes on the unit square, then
written top-row-first as ascii PGM.  Run once; the asset is committed.
"""

from pathlib import Path

import numpy as np

SIZE = 64


def letter_bars():
    # (x0, x1, y0, y1) rectangles in map coordinates (y up).
    c_bars = [
        (0.10, 0.20, 0.20, 0.80),   # C spine
        (0.10, 0.42, 0.70, 0.80),   # C top
        (0.10, 0.42, 0.20, 0.30),   # C bottom
    ]
    u_bars = [
        (0.56, 0.66, 0.30, 0.80),   # U left
        (0.80, 0.90, 0.30, 0.80),   # U right
        (0.56, 0.90, 0.20, 0.30),   # U bottom
    ]
    return c_bars + u_bars


def build_mask(size=SIZE):
    centers = (np.arange(size) + 0.5) / size
    x = centers[None, :]
    y = (1.0 - centers)[:, None]  # row 0 = top of the image
    mask = np.zeros((size, size), dtype=bool)
    for x0, x1, y0, y1 in letter_bars():
        mask |= (x >= x0) & (x <= x1) & (y >= y0) & (y <= y1)
    return mask


def write_pgm(mask, path):
    lines = [f"P2", f"{mask.shape[1]} {mask.shape[0]}", "255"]
    for row in mask:
        lines.append(" ".join("255" if v else "0" for v in row))
    Path(path).write_text("\n".join(lines) + "\n")


if __name__ == "__main__":
    out = Path(__file__).resolve().parent.parent / "src/ldem/assets/cu_mask.pgm"
    write_pgm(build_mask(), out)
    print(f"Saved: {out}")
