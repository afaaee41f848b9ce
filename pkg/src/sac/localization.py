"""Attention-based localization: pooled heatmap, thresholding, crop box.

The class-summed attention grid is upsampled to image resolution with
align-corners bilinear interpolation, cells at or above ratio * max survive,
and the crop box spans the surviving rows and columns.  Coordinates follow
the (x = row, y = column) convention; both corners are inclusive.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import Tensor


@dataclass(frozen=True)
class CropBox:
    """Inclusive pixel box: P1 = (x1, y1) top-left, P2 = (x2, y2) bottom-right."""

    x1: int
    y1: int
    x2: int
    y2: int

    def __post_init__(self):
        if not (0 <= self.x1 <= self.x2 and 0 <= self.y1 <= self.y2):
            raise ValueError(f"degenerate crop box {self}")

    @property
    def height(self) -> int:
        return self.x2 - self.x1 + 1

    @property
    def width(self) -> int:
        return self.y2 - self.y1 + 1


def pool_correlation(attn, m: int, n: int) -> np.ndarray:
    """Sum the (f, k) attention map over classes into an (m, n) grid, row-major."""
    a = attn.data if isinstance(attn, Tensor) else np.asarray(attn, dtype=np.float64)
    f = a.shape[0]
    if f != m * n:
        raise ValueError(f"{f} attention cells do not unflatten to {m}x{n}")
    return a.sum(axis=1).reshape(m, n)


def bilinear_upsample(grid: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Align-corners bilinear interpolation of an (m, n) grid to (out_h, out_w).

    A length-1 source axis replicates; corner samples are preserved exactly.
    """
    g = np.asarray(grid, dtype=np.float64)
    m, n = g.shape
    if out_h < 1 or out_w < 1:
        raise ValueError(f"target size {out_h}x{out_w} must be at least 1x1")
    rows = np.zeros(out_h) if m == 1 or out_h == 1 else np.arange(out_h) * (m - 1) / (out_h - 1)
    cols = np.zeros(out_w) if n == 1 or out_w == 1 else np.arange(out_w) * (n - 1) / (out_w - 1)
    r0 = np.minimum(rows.astype(np.intp), m - 1)
    c0 = np.minimum(cols.astype(np.intp), n - 1)
    r1 = np.minimum(r0 + 1, m - 1)
    c1 = np.minimum(c0 + 1, n - 1)
    fr = (rows - r0)[:, None]
    fc = (cols - c0)[None, :]
    top = g[np.ix_(r0, c0)] * (1 - fc) + g[np.ix_(r0, c1)] * fc
    bot = g[np.ix_(r1, c0)] * (1 - fc) + g[np.ix_(r1, c1)] * fc
    return top * (1 - fr) + bot * fr


def threshold_bbox(heatmap: np.ndarray, ratio: float = 0.1) -> CropBox:
    """Box spanning all cells with value >= ratio * max(heatmap).

    Cells below the cut are zeroed out of consideration; the box is the
    row/column envelope of the survivors.  The argmax cell always survives.
    """
    h = np.asarray(heatmap, dtype=np.float64)
    if h.ndim != 2:
        raise ValueError(f"heatmap must be 2-D, got shape {h.shape}")
    if not 0.0 < ratio < 1.0:
        raise ValueError(f"ratio must lie strictly inside (0, 1), got {ratio}")
    gamma_max = float(h.max())
    if gamma_max <= 0.0:
        raise ValueError("no activated region: heatmap has no positive value")
    gamma_min = ratio * gamma_max
    selected = h >= gamma_min
    rows, cols = np.nonzero(selected)
    return CropBox(x1=int(rows.min()), y1=int(cols.min()), x2=int(rows.max()), y2=int(cols.max()))


def threshold_keep(heatmap: np.ndarray, ratio: float = 0.1) -> np.ndarray:
    """The updated map: entries below ratio * max set to zero, others kept."""
    h = np.asarray(heatmap, dtype=np.float64)
    return (h >= ratio * h.max()) * h


def crop(image: np.ndarray, box: CropBox) -> np.ndarray:
    """Inclusive sub-image selected by the box (channel-first or 2-D input)."""
    img = np.asarray(image)
    h, w = img.shape[-2], img.shape[-1]
    if box.x2 >= h or box.y2 >= w:
        raise ValueError(f"crop box {box} exceeds image bounds {h}x{w}")
    return img[..., box.x1 : box.x2 + 1, box.y1 : box.y2 + 1]


def resize_bilinear(image: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Align-corners bilinear resize of a (..., H, W) image, channel by channel."""
    img = np.asarray(image, dtype=np.float64)
    if img.ndim == 2:
        return bilinear_upsample(img, out_h, out_w)
    flat = img.reshape(-1, img.shape[-2], img.shape[-1])
    out = np.stack([bilinear_upsample(ch, out_h, out_w) for ch in flat])
    return out.reshape(img.shape[:-2] + (out_h, out_w))


def localize_crop(image: np.ndarray, attn, m: int, n: int, ratio: float = 0.1) -> tuple[np.ndarray, CropBox, np.ndarray]:
    """Full localization path: pooled heatmap -> box -> crop resized to input size.

    Returns (resized crop, box, heatmap).
    """
    img = np.asarray(image)
    h, w = img.shape[-2], img.shape[-1]
    heat = bilinear_upsample(pool_correlation(attn, m, n), h, w)
    box = threshold_bbox(heat, ratio)
    return resize_bilinear(crop(img, box), h, w), box, heat
