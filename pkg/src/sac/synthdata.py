"""Procedural fine-grained dataset with ambiguity by design.

Classes come in groups that share a body shape and color; siblings within a
group differ only in a small detail patch (a few percent of the pixels)
whose color, marking and position encode the sibling.  Per-image nuisance
(translation, rotation, background texture, brightness jitter) forces a
classifier to generalize, and the shared bodies concentrate its mistakes
inside the group, which is exactly the top-k ambiguity regime the
reassessment branch targets.

Class names are multi-word by construction: "<detail-color> <detail-mark>
<group-noun>", e.g. "crimson dot finch".  Everything is a pure function of
the dataset spec, including the train/test split.
"""

from __future__ import annotations

import colorsys
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image

DETAIL_COLORS = {
    "crimson": (0.86, 0.08, 0.24),
    "azure": (0.00, 0.50, 1.00),
    "amber": (1.00, 0.75, 0.00),
    "ivory": (1.00, 1.00, 0.94),
    "violet": (0.56, 0.00, 1.00),
    "teal": (0.00, 0.55, 0.55),
    "coral": (1.00, 0.50, 0.31),
    "jade": (0.00, 0.66, 0.42),
}

DETAIL_MARKS = ("dot", "ring", "bar", "wedge")

GROUP_NOUNS = (
    "finch", "wren", "heron", "plover", "kestrel", "tern", "shrike", "siskin",
    "grebe", "curlew", "avocet", "dunlin", "osprey", "pipit", "stint", "godwit",
    "merlin", "fulmar", "gannet", "petrel",
)
NOUN_VARIANTS = (
    "", "crested", "spotted", "banded", "hooded", "masked", "tufted", "collared",
    "speckled", "plumed", "barred", "crowned", "bridled", "streaked", "mottled",
    "laughing", "whistling", "painted", "glossy", "elegant", "sombre", "lesser",
    "greater", "northern", "southern", "eastern", "western", "rufous", "slaty",
    "pied", "sooty", "ashy", "tawny", "dusky", "pale", "shy", "royal", "noble",
    "common", "grand", "little", "silver", "golden", "ochre", "umber", "vivid",
    "bright", "deep", "high", "low",
)

BODY_SHAPES = ("disk", "square", "diamond", "ring", "triangle", "cross")

MAX_CLASSES = 1000


@dataclass(frozen=True)
class DatasetSpec:
    groups: int = 10
    siblings_per_group: int = 4
    images_per_class: int = 50
    image_size: int = 64
    seed: int = 0
    train_fraction: float = 0.7
    nuisance: bool = True

    def __post_init__(self):
        if self.groups < 2 or self.siblings_per_group < 2:
            raise ValueError("need at least 2 groups and 2 siblings per group")
        if self.n_classes > MAX_CLASSES:
            raise ValueError(f"{self.n_classes} classes exceeds the {MAX_CLASSES} limit")
        if self.siblings_per_group > len(DETAIL_COLORS) * len(DETAIL_MARKS):
            raise ValueError("more siblings than distinct detail color/mark pairs")
        if self.groups > len(GROUP_NOUNS) * len(NOUN_VARIANTS):
            raise ValueError("more groups than distinct nouns")
        if self.images_per_class < 2:
            raise ValueError("need at least 2 images per class (one train, one test)")
        if self.image_size < 16 or self.image_size % 8:
            raise ValueError("image size must be >= 16 and divisible by 8")
        if not 0.0 < self.train_fraction < 1.0:
            raise ValueError("train fraction must lie strictly inside (0, 1)")

    @property
    def n_classes(self) -> int:
        return self.groups * self.siblings_per_group


@dataclass(frozen=True)
class ManifestRecord:
    path: str
    class_id: int
    class_name: str
    split: str


def class_name(group: int, sibling: int) -> str:
    color = list(DETAIL_COLORS)[sibling % len(DETAIL_COLORS)]
    mark = DETAIL_MARKS[sibling // len(DETAIL_COLORS)]
    noun = GROUP_NOUNS[group % len(GROUP_NOUNS)]
    variant = NOUN_VARIANTS[group // len(GROUP_NOUNS)]
    noun_full = f"{variant} {noun}".strip()
    return f"{color} {mark} {noun_full}"


def _group_body(group: int) -> tuple[str, tuple[float, float, float]]:
    shape = BODY_SHAPES[group % len(BODY_SHAPES)]
    hue = (group * 0.618033988749895) % 1.0
    rgb = colorsys.hsv_to_rgb(hue, 0.65, 0.75)
    return shape, rgb


def _body_mask(shape: str, px: np.ndarray, py: np.ndarray, r: float) -> np.ndarray:
    if shape == "disk":
        return px * px + py * py <= r * r
    if shape == "square":
        return np.maximum(np.abs(px), np.abs(py)) <= r * 0.9
    if shape == "diamond":
        return np.abs(px) + np.abs(py) <= r * 1.25
    if shape == "ring":
        d2 = px * px + py * py
        return (d2 <= r * r) & (d2 >= (0.45 * r) ** 2)
    if shape == "triangle":
        return (px >= -0.75 * r) & (px <= 0.9 * r) & (np.abs(py) <= 0.55 * (0.9 * r - px))
    if shape == "cross":
        return (np.abs(px) <= 0.38 * r) | (np.abs(py) <= 0.38 * r)
    raise ValueError(f"unknown body shape {shape!r}")


def _detail_mask(mark: str, px: np.ndarray, py: np.ndarray, r: float) -> np.ndarray:
    if mark == "dot":
        return px * px + py * py <= r * r
    if mark == "ring":
        d2 = px * px + py * py
        return (d2 <= r * r) & (d2 >= (0.5 * r) ** 2)
    if mark == "bar":
        return (np.abs(px) <= 0.45 * r) & (np.abs(py) <= r)
    if mark == "wedge":
        return (py >= -r) & (np.abs(px) <= 0.55 * (r - py) / 2 + 0.2) & (py <= r)
    raise ValueError(f"unknown detail mark {mark!r}")


def _class_masks(
    spec: DatasetSpec, class_id: int, shift: np.ndarray, angle: float
) -> tuple[np.ndarray, np.ndarray]:
    """Body and detail boolean masks for one class under a rigid transform."""
    size = spec.image_size
    group, sibling = divmod(class_id, spec.siblings_per_group)
    body_shape, _ = _group_body(group)
    mark = DETAIL_MARKS[sibling // len(DETAIL_COLORS)]

    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64)
    cx, cy = (size - 1) / 2 + shift[0], (size - 1) / 2 + shift[1]
    dx, dy = xx - cy, yy - cx
    cos_a, sin_a = np.cos(angle), np.sin(angle)
    px = cos_a * dx + sin_a * dy
    py = -sin_a * dx + cos_a * dy

    body_r = 0.30 * size
    body = _body_mask(body_shape, px, py, body_r)

    theta = 2 * np.pi * sibling / spec.siblings_per_group + 0.5
    det_cx = 0.55 * body_r * np.cos(theta)
    det_cy = 0.55 * body_r * np.sin(theta)
    det_r = max(2.0, 0.055 * size)
    detail = _detail_mask(mark, px - det_cx, py - det_cy, det_r)
    return body, detail


def canonical_detail_mask(spec: DatasetSpec, class_id: int) -> np.ndarray:
    """Detail-patch mask of the nuisance-free rendering (for region oracles)."""
    _, detail = _class_masks(spec, class_id, np.zeros(2), 0.0)
    return detail


def render_image(
    spec: DatasetSpec, class_id: int, image_index: int, nuisance: bool | None = None
) -> np.ndarray:
    """Render one image as float64 (3, H, W) in [0, 1]; pure in its arguments."""
    if nuisance is None:
        nuisance = spec.nuisance
    size = spec.image_size
    group, sibling = divmod(class_id, spec.siblings_per_group)
    _, body_rgb = _group_body(group)
    color_name = list(DETAIL_COLORS)[sibling % len(DETAIL_COLORS)]
    detail_rgb = DETAIL_COLORS[color_name]

    rng = np.random.default_rng([spec.seed, class_id, image_index])
    if nuisance:
        shift = rng.uniform(-0.10, 0.10, size=2) * size
        angle = float(np.deg2rad(rng.uniform(-15.0, 15.0)))
        brightness = rng.uniform(0.9, 1.1)
        bg_phase = rng.uniform(0, 2 * np.pi, size=2)
        bg_freq = rng.uniform(1.0, 3.0, size=2)
        bg_amp = rng.uniform(0.03, 0.08, size=2)
        bg_angle = rng.uniform(0, np.pi, size=2)
    else:
        shift = np.zeros(2)
        angle = 0.0
        brightness = 1.0
        bg_phase = np.zeros(2)
        bg_freq = np.ones(2)
        bg_amp = np.zeros(2)
        bg_angle = np.zeros(2)

    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64)
    img = np.empty((3, size, size))
    base = 0.25 + sum(
        bg_amp[i]
        * np.sin(
            2 * np.pi * bg_freq[i] * (np.cos(bg_angle[i]) * xx + np.sin(bg_angle[i]) * yy) / size
            + bg_phase[i]
        )
        for i in range(2)
    )
    img[:] = base

    body, detail = _class_masks(spec, class_id, shift, angle)
    for c in range(3):
        img[c][body] = body_rgb[c]
        img[c][detail] = detail_rgb[c]

    return np.clip(img * brightness, 0.0, 1.0)


def _train_count(spec: DatasetSpec) -> int:
    n = int(round(spec.images_per_class * spec.train_fraction))
    return min(max(n, 1), spec.images_per_class - 1)


def generate_dataset(spec: DatasetSpec, out_dir: str | Path) -> list[ManifestRecord]:
    """Write PNG images and a JSON-lines manifest; byte-deterministic in spec."""
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as e:
        raise OSError(f"cannot create output directory {out}: {e}") from e
    records: list[ManifestRecord] = []
    n_train = _train_count(spec)
    for class_id in range(spec.n_classes):
        group, sibling = divmod(class_id, spec.siblings_per_group)
        name = class_name(group, sibling)
        cls_dir = out / "images" / f"{class_id:04d}"
        cls_dir.mkdir(parents=True, exist_ok=True)
        order = np.random.default_rng([spec.seed, 1_000_003, class_id]).permutation(
            spec.images_per_class
        )
        split_of = {int(idx): ("train" if pos < n_train else "test") for pos, idx in enumerate(order)}
        for idx in range(spec.images_per_class):
            arr = render_image(spec, class_id, idx)
            quantized = np.round(arr * 255.0).astype(np.uint8).transpose(1, 2, 0)
            rel = f"images/{class_id:04d}/{idx:04d}.png"
            Image.fromarray(quantized, mode="RGB").save(out / rel)
            records.append(
                ManifestRecord(path=rel, class_id=class_id, class_name=name, split=split_of[idx])
            )
    manifest_path = out / "manifest.jsonl"
    with open(manifest_path, "w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(
                json.dumps(
                    {
                        "path": rec.path,
                        "class_id": rec.class_id,
                        "class_name": rec.class_name,
                        "split": rec.split,
                    }
                )
                + "\n"
            )
    return records


@dataclass
class LoadedDataset:
    root: Path
    records: list[ManifestRecord]
    class_names: list[str]

    def split(self, which: str) -> list[ManifestRecord]:
        return [r for r in self.records if r.split == which]

    def load_image(self, record: ManifestRecord) -> np.ndarray:
        arr = np.asarray(Image.open(self.root / record.path).convert("RGB"), dtype=np.float64)
        return arr.transpose(2, 0, 1) / 255.0

    def load_split(self, which: str, dtype=np.float64) -> tuple[np.ndarray, np.ndarray, list[str]]:
        recs = self.split(which)
        images = np.stack([self.load_image(r) for r in recs]).astype(dtype)
        labels = np.array([r.class_id for r in recs], dtype=np.intp)
        return images, labels, [r.path for r in recs]

    @property
    def n_classes(self) -> int:
        return len(self.class_names)


def load_manifest(path: str | Path) -> LoadedDataset:
    """Parse and validate a manifest; every image path must exist."""
    p = Path(path)
    if not p.exists():
        raise FileNotFoundError(f"manifest {p} does not exist")
    root = p.parent
    records: list[ManifestRecord] = []
    with open(p, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                raw = json.loads(line)
                rec = ManifestRecord(
                    path=str(raw["path"]),
                    class_id=int(raw["class_id"]),
                    class_name=str(raw["class_name"]),
                    split=str(raw["split"]),
                )
                if rec.split not in ("train", "test"):
                    raise ValueError(f"bad split {rec.split!r}")
            except (KeyError, ValueError, TypeError) as e:
                raise ValueError(f"malformed manifest row at line {lineno}: {e}") from e
            if not (root / rec.path).exists():
                raise FileNotFoundError(f"manifest names missing image file {root / rec.path}")
            records.append(rec)
    if not records:
        raise ValueError(f"manifest {p} has no records")
    n = max(r.class_id for r in records) + 1
    names: list[str | None] = [None] * n
    for r in records:
        if r.class_id < 0:
            raise ValueError(f"negative class id {r.class_id}")
        if names[r.class_id] is None:
            names[r.class_id] = r.class_name
        elif names[r.class_id] != r.class_name:
            raise ValueError(f"class {r.class_id} has conflicting names")
    if any(v is None for v in names):
        raise ValueError("class ids are not contiguous from 0")
    for split_name in ("train", "test"):
        have = {r.class_id for r in records if r.split == split_name}
        if len(have) != n:
            raise ValueError(f"some classes have no {split_name} records")
    return LoadedDataset(root=root, records=records, class_names=list(names))
