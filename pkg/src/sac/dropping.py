"""Attention-guided dropping of inter-class-similar regions.

Each candidate class contributes a binary mask that zeroes the feature cells
whose attention strictly exceeds d_phi times the global attention maximum;
cells at exactly the threshold are kept.  The per-class masks combine with a
logical OR (a cell survives if any class keeps it), with an AND alternative
behind a switch.  Masks are data: no gradient flows through their
construction, only through the surviving feature cells.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import Tensor, astensor, mul


@dataclass
class DropMask:
    """Keep/drop vector for one candidate class; 0 marks a dropped cell."""

    values: np.ndarray
    class_index: int
    threshold: float


@dataclass
class CombinedKeepMask:
    values: np.ndarray


def drop_mask(m_col: np.ndarray, d_phi: float, global_max: float, class_index: int = 0) -> DropMask:
    """Zero where the class attention strictly exceeds d_phi * global_max."""
    if not 0.0 < d_phi < 1.0:
        raise ValueError(f"d_phi must lie strictly inside (0, 1), got {d_phi}")
    col = m_col.data if isinstance(m_col, Tensor) else np.asarray(m_col, dtype=np.float64)
    if col.ndim != 1:
        raise ValueError(f"class attention column must be 1-D, got shape {col.shape}")
    threshold = d_phi * float(global_max)
    values = (~(col > threshold)).astype(np.float64)
    return DropMask(values=values, class_index=class_index, threshold=threshold)


def combine_masks(masks: list[DropMask], mode: str = "or") -> CombinedKeepMask:
    """OR keeps a cell if any class keeps it; AND drops it if any class drops it."""
    if not masks:
        raise ValueError("combine_masks needs at least one mask")
    stacked = np.stack([m.values for m in masks])
    if stacked.ndim != 2:
        raise ValueError("all masks must be 1-D vectors")
    if len({m.values.shape[0] for m in masks}) != 1:
        raise ValueError("mask length mismatch")
    if mode == "or":
        values = stacked.max(axis=0)
    elif mode == "and":
        values = stacked.min(axis=0)
    else:
        raise ValueError(f"unknown combine mode {mode!r}")
    return CombinedKeepMask(values=values)


def keep_mask_from_attention(attn: np.ndarray, d_phi: float, mode: str = "or") -> CombinedKeepMask:
    """All k per-class masks of an (f, k) attention map, combined."""
    a = attn.data if isinstance(attn, Tensor) else np.asarray(attn, dtype=np.float64)
    gmax = float(a.max())
    masks = [drop_mask(a[:, c], d_phi, gmax, class_index=c) for c in range(a.shape[1])]
    return combine_masks(masks, mode=mode)


def apply_feature_drop(feat_flat, keep: CombinedKeepMask) -> Tensor:
    """F'[:, i] = F[:, i] * keep[i]; the mask is a constant for gradients."""
    feat = astensor(feat_flat)
    values = keep.values if isinstance(keep, CombinedKeepMask) else np.asarray(keep)
    if feat.shape[-1] != values.shape[0]:
        raise ValueError(
            f"keep mask length {values.shape[0]} does not match feature cells {feat.shape[-1]}"
        )
    return mul(feat, values.astype(feat.dtype))


def image_level_erase(image: np.ndarray, keep: CombinedKeepMask, m: int, n: int) -> np.ndarray:
    """Zero the image pixels of dropped grid cells.

    The (m, n) keep grid is upsampled to the image by nearest cell; image
    sides must be integer multiples of the grid.
    """
    img = np.asarray(image)
    h, w = img.shape[-2], img.shape[-1]
    values = keep.values if isinstance(keep, CombinedKeepMask) else np.asarray(keep)
    if values.size != m * n:
        raise ValueError(f"keep mask length {values.size} does not match grid {m}x{n}")
    if h % m or w % n:
        raise ValueError(f"image {h}x{w} is not divisible by the {m}x{n} feature grid")
    grid = values.reshape(m, n)
    pixel_mask = np.repeat(np.repeat(grid, h // m, axis=0), w // n, axis=1)
    return img * pixel_mask.astype(img.dtype)
