"""Binary PGM/PPM output for sample grids and 2-D scatter densities."""

import numpy as np

from .data import unit_to_pixels

SEPARATOR_VALUE = 128


def encode_pgm(pixels):
    """P5 image with maxval 255 from a 2-D uint8 array."""
    pixels = np.asarray(pixels, dtype=np.uint8)
    h, w = pixels.shape
    return f"P5\n{w} {h}\n255\n".encode("ascii") + pixels.tobytes()


def encode_ppm(rgb):
    rgb = np.asarray(rgb, dtype=np.uint8)
    h, w, _ = rgb.shape
    return f"P6\n{w} {h}\n255\n".encode("ascii") + rgb.tobytes()


def decode_pgm(blob):
    header, _, rest = blob.partition(b"\n255\n")
    magic, dims = header.split(b"\n", 1)
    if magic != b"P5":
        raise ValueError(f"not a binary PGM: {magic!r}")
    w, h = (int(v) for v in dims.split())
    return np.frombuffer(rest, dtype=np.uint8).reshape(h, w)


def image_grid(columns, side, separator=SEPARATOR_VALUE):
    """Tile images column-wise with 1-pixel separators.

    ``columns`` is a list (one per class) of ``(rows, side * side)`` arrays of
    values in ``[-1, 1]``; all columns must have the same row count.
    """
    c = len(columns)
    r = columns[0].shape[0] if c else 0
    width = c * side + max(c - 1, 0)
    height = r * side + max(r - 1, 0)
    canvas = np.full((height, width), separator, dtype=np.uint8)
    for j, col in enumerate(columns):
        for i, img in enumerate(col):
            y, x = i * (side + 1), j * (side + 1)
            canvas[y:y + side, x:x + side] = unit_to_pixels(img).reshape(side, side)
    return canvas


def density_image(points, resolution=128):
    """Log-scaled 2-D histogram of points in ``[-1, 1]^2`` (y axis up)."""
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 2)
    hist, _, _ = np.histogram2d(pts[:, 1], pts[:, 0], bins=resolution, range=[[-1, 1], [-1, 1]])
    hist = np.log1p(hist[::-1])
    top = hist.max()
    if top > 0:
        hist = hist / top
    return np.rint(hist * 255).astype(np.uint8)


_PALETTE = np.array(
    [[230, 25, 75], [60, 180, 75], [255, 225, 25], [0, 130, 200], [245, 130, 48],
     [145, 30, 180], [70, 240, 240], [240, 50, 230], [210, 245, 60], [250, 190, 212]],
    dtype=np.uint8,
)


def scatter_image(points, labels, resolution=128):
    """Colour-by-label scatter of 2-D points on a black background."""
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 2)
    img = np.zeros((resolution, resolution, 3), dtype=np.uint8)
    col = np.clip(((pts[:, 0] + 1) / 2 * resolution).astype(int), 0, resolution - 1)
    row = np.clip(((1 - pts[:, 1]) / 2 * resolution).astype(int), 0, resolution - 1)
    img[row, col] = _PALETTE[np.asarray(labels) % len(_PALETTE)]
    return img
