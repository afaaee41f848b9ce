"""Convolutional feature extractor, coarse classifier head, and top-k search.

The reference backbone is a small four-block CNN: each block is a 3x3
stride-1 convolution (zero padding 1) followed by relu; the first three
blocks end with 2x2 average pooling, the fourth keeps its resolution.  On a
64x64 input with the default widths this yields a 64-channel 8x8 feature map.
The pooled visual feature V is an affine map of the global average pool of F.

The backbone is pluggable: anything exposing ``extract_features`` and
``coarse_logits`` with these shapes can drive the rest of the pipeline.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .autodiff import Tensor, affine, avg_pool2d, conv2d, relu

MIN_IMAGE_SIDE = 16
N_POOLS = 3  # blocks 1-3 pool; block 4 keeps resolution


@dataclass(frozen=True)
class BackboneConfig:
    channels: tuple[int, ...] = (16, 32, 48, 64)
    d_v: int = 128

    @property
    def d_f(self) -> int:
        return self.channels[-1]

    def feature_hw(self, image_hw: tuple[int, int]) -> tuple[int, int]:
        return image_hw[0] >> N_POOLS, image_hw[1] >> N_POOLS


@dataclass
class FeatureMap:
    """Spatial feature tensor F (d_f, m, n) plus pooled visual feature V."""

    F: Tensor
    V: Tensor

    @property
    def d_f(self) -> int:
        return self.F.shape[0]

    @property
    def m(self) -> int:
        return self.F.shape[1]

    @property
    def n(self) -> int:
        return self.F.shape[2]

    @property
    def f(self) -> int:
        return self.m * self.n


@dataclass
class TopKPrediction:
    """The k highest-confidence classes, best first; ties go to the lower index."""

    classes: np.ndarray
    scores: np.ndarray
    n_classes: int

    def __post_init__(self):
        self.classes = np.asarray(self.classes, dtype=np.intp)
        self.scores = np.asarray(self.scores, dtype=np.float64)
        k = len(self.classes)
        if k > self.n_classes:
            raise ValueError(f"k={k} exceeds class count {self.n_classes}")
        if len(set(self.classes.tolist())) != k:
            raise ValueError("top-k classes must be distinct")
        if np.any(np.diff(self.scores) > 0):
            raise ValueError("top-k scores must be non-increasing")

    @property
    def k(self) -> int:
        return len(self.classes)


def validate_image(image: np.ndarray) -> np.ndarray:
    """Check the (3, H, W) layout and the [0, 1] value range."""
    arr = np.asarray(image)
    if arr.ndim != 3 or arr.shape[0] != 3:
        raise ValueError(f"image must have shape (3, H, W), got {arr.shape}")
    h, w = arr.shape[1:]
    if h < MIN_IMAGE_SIDE or w < MIN_IMAGE_SIDE:
        raise ValueError(
            f"image {h}x{w} is smaller than the {MIN_IMAGE_SIDE}-pixel receptive-field minimum"
        )
    if arr.min() < 0.0 or arr.max() > 1.0:
        raise ValueError("image values must lie in [0, 1]")
    return arr


def init_backbone_params(
    cfg: BackboneConfig, n_classes: int, rng: np.random.Generator, dtype=np.float64
) -> dict[str, Tensor]:
    """He-uniform conv weights, 1/sqrt(fan_in)-uniform heads, zero biases."""
    params: dict[str, Tensor] = {}
    c_in = 3
    for i, c_out in enumerate(cfg.channels, start=1):
        fan_in = c_in * 9
        lim = float(np.sqrt(6.0 / fan_in))
        params[f"conv{i}.w"] = Tensor(
            rng.uniform(-lim, lim, size=(c_out, c_in, 3, 3)).astype(dtype), requires_grad=True
        )
        params[f"conv{i}.b"] = Tensor(np.zeros(c_out, dtype=dtype), requires_grad=True)
        c_in = c_out
    for name, (n_out, n_in) in {
        "fc_v": (cfg.d_v, cfg.d_f),
        "head": (n_classes, cfg.d_v),
    }.items():
        lim = float(1.0 / np.sqrt(n_in))
        params[f"{name}.w"] = Tensor(
            rng.uniform(-lim, lim, size=(n_out, n_in)).astype(dtype), requires_grad=True
        )
        params[f"{name}.b"] = Tensor(np.zeros(n_out, dtype=dtype), requires_grad=True)
    return params


def extract_features_batch(
    images: Tensor, params: dict[str, Tensor], cfg: BackboneConfig
) -> tuple[Tensor, Tensor]:
    """(B, 3, H, W) -> F (B, d_f, m, n) and V (B, d_v)."""
    h, w = images.shape[2:]
    if h < MIN_IMAGE_SIDE or w < MIN_IMAGE_SIDE:
        raise ValueError(
            f"image {h}x{w} is smaller than the {MIN_IMAGE_SIDE}-pixel receptive-field minimum"
        )
    if h % (1 << N_POOLS) or w % (1 << N_POOLS):
        raise ValueError(f"image sides must be divisible by {1 << N_POOLS}, got {h}x{w}")
    x = images
    n_blocks = len(cfg.channels)
    for i in range(1, n_blocks + 1):
        x = relu(conv2d(x, params[f"conv{i}.w"], params[f"conv{i}.b"], pad=1))
        if i <= N_POOLS:
            x = avg_pool2d(x, 2)
    feat = x
    pooled = feat.mean(axis=(2, 3))
    v = affine(pooled, params["fc_v.w"], params["fc_v.b"])
    return feat, v


def extract_features(
    image: np.ndarray | Tensor, params: dict[str, Tensor], cfg: BackboneConfig
) -> FeatureMap:
    """Single-image feature extraction; validates the image contract."""
    if isinstance(image, Tensor):
        arr = image
        validate_image(image.data)
    else:
        arr = Tensor(validate_image(image))
    batch = arr.reshape((1,) + tuple(arr.shape))
    feat, v = extract_features_batch(batch, params, cfg)
    return FeatureMap(F=feat[0], V=v[0])


def coarse_logits(v: Tensor, params: dict[str, Tensor]) -> Tensor:
    """Logits over all classes from the visual feature (batched or single)."""
    return affine(v, params["head.w"], params["head.b"])


def topk_search(scores, k: int) -> TopKPrediction:
    """The k highest-scoring classes, non-increasing, ties broken by lower index."""
    arr = scores.data if isinstance(scores, Tensor) else np.asarray(scores, dtype=np.float64)
    if arr.ndim != 1:
        raise ValueError(f"topk_search expects a score vector, got shape {arr.shape}")
    n = arr.shape[0]
    if k < 1:
        raise ValueError(f"k must be at least 1, got {k}")
    if k > n:
        raise ValueError(f"k={k} exceeds class count {n}")
    order = np.argsort(-arr, kind="stable")[:k]
    return TopKPrediction(classes=order, scores=arr[order], n_classes=n)


def topk_indices_batch(scores: np.ndarray, k: int) -> np.ndarray:
    """Row-wise top-k class indices for a (B, N) score matrix, same tie rule."""
    if k < 1 or k > scores.shape[1]:
        raise ValueError(f"k={k} out of range for {scores.shape[1]} classes")
    return np.argsort(-scores, axis=1, kind="stable")[:, :k]
