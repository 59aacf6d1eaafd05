"""Toy curvilinear corpus generator, dataset manifests, ingestion and splitting.

Directory layout::

    <root>/images/<id>.png    8-bit grayscale (or RGB) images
    <root>/masks/<id>.png     8-bit grayscale masks, values {0, 255}
    <root>/captions.jsonl     one segmap and one image caption per id (pair_id = id)
    <root>/manifest.json
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np
from PIL import Image
from scipy import ndimage
from skimage.morphology import skeletonize

from .captions import CaptionRecord, read_captions, validate_record, write_captions


class DatasetError(ValueError):
    """Malformed dataset on disk."""


# -- PNG I/O -----------------------------------------------------------------------


def save_png(path: str | Path, pixels: np.ndarray) -> None:
    Image.fromarray(np.ascontiguousarray(pixels, dtype=np.uint8)).save(path, format="PNG", optimize=False)


def load_png(path: str | Path) -> np.ndarray:
    with Image.open(path) as im:
        if im.mode not in ("L", "RGB"):
            im = im.convert("RGB" if im.mode in ("RGBA", "P", "CMYK") else "L")
        return np.asarray(im, dtype=np.uint8).copy()


def to_gray(pixels: np.ndarray) -> np.ndarray:
    if pixels.ndim == 3:
        return np.round(pixels.astype(np.float64).mean(axis=-1)).astype(np.uint8)
    return pixels


def check_mask(pixels: np.ndarray, name: str = "mask") -> np.ndarray:
    """Accept {0,255} or {0,1} masks; return {0,255} uint8."""
    values = np.unique(pixels)
    if set(values.tolist()) <= {0, 255}:
        return pixels.astype(np.uint8)
    if set(values.tolist()) <= {0, 1}:
        return (pixels * 255).astype(np.uint8)
    raise DatasetError(f"non-binary mask {name}: values {values[:8].tolist()}")


def resize_image(pixels: np.ndarray, size: int) -> np.ndarray:
    if pixels.shape[:2] == (size, size):
        return pixels
    return np.asarray(Image.fromarray(pixels).resize((size, size), Image.BILINEAR))


def resize_mask(pixels: np.ndarray, size: int) -> np.ndarray:
    if pixels.shape[:2] == (size, size):
        return pixels
    return np.asarray(Image.fromarray(pixels).resize((size, size), Image.NEAREST))


# -- manifest ----------------------------------------------------------------------


@dataclass(frozen=True)
class Sample:
    id: str
    image_path: str
    mask_path: str
    pair_id: str
    split: str = "unassigned"


@dataclass
class DatasetManifest:
    name: str
    resolution: int
    root: Path
    samples: list[Sample] = field(default_factory=list)

    def split(self, name: str) -> "DatasetManifest":
        return replace(self, samples=[s for s in self.samples if s.split == name])

    def __len__(self) -> int:
        return len(self.samples)

    def to_json(self) -> str:
        return json.dumps(
            {"name": self.name, "resolution": self.resolution, "samples": [asdict(s) for s in self.samples]},
            indent=1,
            sort_keys=True,
        )

    def save(self, path: str | Path | None = None) -> Path:
        path = Path(path) if path else self.root / "manifest.json"
        path.write_text(self.to_json() + "\n", encoding="utf-8")
        return path

    @classmethod
    def load(cls, path: str | Path) -> "DatasetManifest":
        path = Path(path)
        if path.is_dir():
            path = path / "manifest.json"
        d = json.loads(path.read_text(encoding="utf-8"))
        return cls(d["name"], d["resolution"], path.parent, [Sample(**s) for s in d["samples"]])

    def captions(self) -> list[CaptionRecord]:
        return read_captions(self.root / "captions.jsonl")

    def load_arrays(self) -> tuple[np.ndarray, np.ndarray]:
        """(images, masks): float32 grayscale in [0, 1] and bool masks, each (N, H, W)."""
        images = np.stack([to_gray(load_png(self.root / s.image_path)) for s in self.samples])
        masks = np.stack([check_mask(load_png(self.root / s.mask_path), s.mask_path) for s in self.samples])
        return images.astype(np.float32) / 255.0, masks > 127


# -- toy corpus ------------------------------------------------------------------------


@dataclass(frozen=True)
class ToyGenParams:
    size: int = 32
    curve_count: tuple[int, int] = (1, 3)
    curve_width: tuple[int, int] = (2, 4)
    curve_length: tuple[int, int] = (14, 40)
    waviness: tuple[float, float] = (0.0, 0.6)
    texture: tuple[float, float] = (0.05, 0.25)
    contrast: tuple[float, float] = (0.2, 0.45)
    noise: float = 0.04
    polarity: str = "dark"
    dataset: str = "ToyCurves dataset"
    subject: str = "curvilinear cracks"
    seed: int = 0

    def __post_init__(self):
        if self.size < 16 or self.size & (self.size - 1):
            raise ValueError(f"size must be a power of two >= 16, got {self.size}")
        for name in ("curve_count", "curve_width", "curve_length", "waviness", "texture", "contrast"):
            lo, hi = getattr(self, name)
            if lo > hi or lo < 0:
                raise ValueError(f"degenerate range {name}={lo, hi}")
        if self.curve_count[0] < 1 or self.curve_width[0] < 1:
            raise ValueError("need at least one curve of width >= 1")
        if self.polarity not in ("dark", "bright"):
            raise ValueError(f"polarity must be dark or bright, got {self.polarity!r}")


def random_walk(rng: np.random.Generator, size: int, length: float, max_turn: float, step: float = 1.0) -> np.ndarray:
    """Polyline with per-step turning angle bounded by ``max_turn`` (radians), clipped to the canvas."""
    margin = 2.0
    pos = rng.uniform(margin, size - margin, 2)
    heading = rng.uniform(0, 2 * np.pi)
    pts = [pos.copy()]
    for _ in range(int(length / step)):
        heading += rng.uniform(-max_turn, max_turn)
        nxt = pos + step * np.array([np.cos(heading), np.sin(heading)])
        if not (0 <= nxt[0] <= size - 1 and 0 <= nxt[1] <= size - 1):
            break
        pos = nxt
        pts.append(pos.copy())
    return np.array(pts)  # (n, 2) as (x, y)


def rasterize(polyline: np.ndarray, width: float, size: int) -> np.ndarray:
    """Pixels whose centre lies within width/2 of the polyline."""
    yy, xx = np.mgrid[0:size, 0:size]
    p = np.stack([xx.ravel(), yy.ravel()], axis=1).astype(np.float64)
    a, b = polyline[:-1], polyline[1:]
    if len(a) == 0:
        a, b = polyline, polyline
    ab = b - a
    denom = np.maximum((ab**2).sum(1), 1e-12)
    ap = p[:, None, :] - a[None]
    s = np.clip((ap * ab[None]).sum(-1) / denom[None], 0.0, 1.0)
    closest = a[None] + s[..., None] * ab[None]
    dist = np.sqrt(((p[:, None, :] - closest) ** 2).sum(-1)).min(axis=1)
    return (dist <= width / 2.0).reshape(size, size)


def value_noise(rng: np.random.Generator, size: int, cells: int = 4) -> np.ndarray:
    coarse = rng.uniform(-1, 1, (cells + 1, cells + 1))
    return ndimage.zoom(coarse, size / (cells + 1), order=3, mode="nearest")[:size, :size]


# Descriptors recomputable from the mask alone, so stored captions stay faithful.


def skeleton_length(skel: np.ndarray) -> float:
    """Arc length of a skeleton: unit per 4-neighbour link, sqrt(2) per diagonal link."""
    sk = skel.astype(np.int64)
    orth = (sk[:, 1:] & sk[:, :-1]).sum() + (sk[1:] & sk[:-1]).sum()
    diag = (sk[1:, 1:] & sk[:-1, :-1]).sum() + (sk[1:, :-1] & sk[:-1, 1:]).sum()
    return float(orth + np.sqrt(2.0) * diag)


def mask_thickness(mask: np.ndarray) -> float:
    """Mean perpendicular thickness of the strokes in a binary mask.

    Solves area = w * L + w**2 for w, with L the skeleton arc length; the
    w**2 term accounts for the two end caps the skeleton stops short of.
    Distance-transform readings at skeleton pixels are avoided because they
    quantize to sqrt(2) on diagonal strokes.
    """
    area = float(np.count_nonzero(mask))
    if area == 0:
        return 0.0
    length = skeleton_length(skeletonize(mask))
    return (np.sqrt(length * length + 4.0 * area) - length) / 2.0


def describe_location(mask: np.ndarray) -> str:
    ys, xs = np.nonzero(mask)
    h, w = mask.shape
    vert = "top" if ys.mean() < h / 2 else "bottom"
    horiz = "left" if xs.mean() < w / 2 else "right"
    return f"located in the {vert} {horiz} of the image"


def describe_size(mask: np.ndarray) -> str:
    thickness = mask_thickness(mask)
    width = "thin" if thickness <= 2.5 else "medium width" if thickness <= 4.5 else "thick"
    length = int(skeletonize(mask).sum())
    extent = "short" if length < 20 else "moderately long" if length < 40 else "long"
    percent = int(round(100.0 * mask.mean()))
    return f"{width} and {extent}, covering about {percent} percent of the image"


def describe_trend_shape(mask: np.ndarray) -> str:
    _, n = ndimage.label(mask, structure=np.ones((3, 3)))
    count = "a single curve" if n == 1 else f"{n} separate curves"
    ys, xs = np.nonzero(mask)
    coords = np.stack([xs, ys]).astype(np.float64)
    cov = np.cov(coords) if coords.shape[1] > 1 else np.zeros((2, 2))
    evals, evecs = np.linalg.eigh(cov)
    major = evecs[:, 1]
    angle = math.degrees(math.atan2(major[1], major[0])) % 180.0
    if angle < 22.5 or angle >= 157.5:
        direction = "running horizontally"
    elif angle < 67.5:
        direction = "running diagonally from top left to bottom right"
    elif angle < 112.5:
        direction = "running vertically"
    else:
        direction = "running diagonally from bottom left to top right"
    ratio = evals[0] / evals[1] if evals[1] > 0 else 0.0
    shape = "nearly straight" if ratio < 0.05 else "gently curving" if ratio < 0.2 else "strongly winding"
    return f"{count}, {shape}, {direction}"


SEGMAP_OVERVIEWS = (
    "GT semantic map of a {subject} image",
    "This is a semantic map (ground truth (GT)) of {subject}",
    "Binary GT semantic map marking {subject}",
)
IMAGE_OVERVIEWS = (
    "This is an image of {subject} on a textured surface",
    "A grayscale photograph showing {subject}",
    "Close-up image containing {subject}",
)


def describe_background(base: float, texture: float, grad_dir: str) -> str:
    tone = "bright" if base > 0.62 else "dark" if base < 0.45 else "medium gray"
    grain = "smooth" if texture < 0.12 else "grainy"
    return f"The background is a {tone} {grain} surface brightening toward the {grad_dir}"


@dataclass
class ToySample:
    image: np.ndarray  # uint8 (H, W)
    mask: np.ndarray  # uint8 {0,255}
    segmap_caption: CaptionRecord
    image_caption: CaptionRecord


def toy_sample(params: ToyGenParams, rng: np.random.Generator, pair_id: str = "") -> ToySample:
    size = params.size
    mask = np.zeros((size, size), dtype=bool)
    n_curves = int(rng.integers(params.curve_count[0], params.curve_count[1] + 1))
    drawn = 0
    while drawn < n_curves:
        width = int(rng.integers(params.curve_width[0], params.curve_width[1] + 1))
        length = rng.uniform(*params.curve_length)
        turn = rng.uniform(*params.waviness)
        line = random_walk(rng, size, length, turn)
        if len(line) < 6:
            continue
        mask |= rasterize(line, width, size)
        drawn += 1

    base = rng.uniform(0.35, 0.75)
    texture = rng.uniform(*params.texture)
    directions = {"right": (0, 1), "left": (0, -1), "bottom": (1, 0), "top": (-1, 0)}
    grad_dir = list(directions)[int(rng.integers(4))]
    dy, dx = directions[grad_dir]
    yy, xx = np.mgrid[0:size, 0:size] / (size - 1) - 0.5
    background = base + texture * value_noise(rng, size) + 0.15 * (dy * yy + dx * xx)
    contrast = rng.uniform(*params.contrast)
    soft = ndimage.gaussian_filter(mask.astype(np.float64), 0.5)
    sign = -1.0 if params.polarity == "dark" else 1.0
    img = background + sign * contrast * soft + params.noise * rng.standard_normal((size, size))
    image = np.round(np.clip(img, 0, 1) * 255).astype(np.uint8)

    location, size_desc, trend = describe_location(mask), describe_size(mask), describe_trend_shape(mask)
    seg_over = SEGMAP_OVERVIEWS[int(rng.integers(len(SEGMAP_OVERVIEWS)))].format(subject=params.subject)
    img_over = IMAGE_OVERVIEWS[int(rng.integers(len(IMAGE_OVERVIEWS)))].format(subject=params.subject)
    common = dict(dataset=params.dataset, location=location, size=size_desc, trend_shape=trend, pair_id=pair_id)
    return ToySample(
        image=image,
        mask=mask.astype(np.uint8) * 255,
        segmap_caption=CaptionRecord(overview=seg_over, kind="segmap", **common),
        image_caption=CaptionRecord(
            overview=img_over, background=describe_background(base, texture, grad_dir), kind="image", **common
        ),
    )


def toy_generate(params: ToyGenParams, n: int, root: str | Path, name: str | None = None) -> DatasetManifest:
    """Write ``n`` paired samples plus captions and a manifest under ``root``."""
    if n < 1:
        raise ValueError("n must be >= 1")
    root = Path(root)
    (root / "images").mkdir(parents=True, exist_ok=True)
    (root / "masks").mkdir(parents=True, exist_ok=True)
    children = np.random.SeedSequence(params.seed).spawn(n)
    samples, records = [], []
    for i, child in enumerate(children):
        sid = f"{i:06d}"
        s = toy_sample(params, np.random.default_rng(child), pair_id=sid)
        save_png(root / "images" / f"{sid}.png", s.image)
        save_png(root / "masks" / f"{sid}.png", s.mask)
        records += [s.segmap_caption, s.image_caption]
        samples.append(Sample(sid, f"images/{sid}.png", f"masks/{sid}.png", sid))
    write_captions(root / "captions.jsonl", records)
    manifest = DatasetManifest(name or params.dataset, params.size, root, samples)
    manifest.save()
    return manifest


# -- ingestion / splitting -----------------------------------------------------------


def ingest_dataset(root: str | Path, canonical_size: int = 32, name: str | None = None) -> DatasetManifest:
    """Pair images/masks/captions, resize to the canonical size and write manifest.json.

    Resized copies go to ``<root>/canonical_<size>/`` when any asset is off-size.
    Existing split assignments in a prior manifest are kept.
    """
    root = Path(root)
    for required in ("images", "masks", "captions.jsonl"):
        if not (root / required).exists():
            raise DatasetError(f"{root} lacks {required}")
    images = {p.stem: p for p in sorted((root / "images").glob("*.png"))}
    masks = {p.stem: p for p in sorted((root / "masks").glob("*.png"))}
    unpaired = sorted(set(images) ^ set(masks))
    if unpaired:
        raise DatasetError(f"unpaired image/mask ids: {unpaired}")
    records = read_captions(root / "captions.jsonl")
    kinds: dict[str, set] = {}
    for r in records:
        kinds.setdefault(r.pair_id, set()).add(r.kind)
    missing = sorted(k for k in images if kinds.get(k) != {"segmap", "image"})
    if missing:
        raise DatasetError(f"ids without a segmap+image caption pair: {missing}")
    bad = [(r.pair_id, r.kind, v) for r in records if (v := validate_record(r))]
    if bad:
        raise DatasetError(f"invalid caption records: {bad[:5]}")

    old_splits = {}
    if (root / "manifest.json").exists():
        old_splits = {s.id: s.split for s in DatasetManifest.load(root).samples}

    samples, resized_dir = [], root / f"canonical_{canonical_size}"
    for sid in sorted(images):
        img = load_png(images[sid])
        mask = check_mask(to_gray(load_png(masks[sid])), masks[sid].name)
        img_rel, mask_rel = f"images/{sid}.png", f"masks/{sid}.png"
        if img.shape[:2] != (canonical_size, canonical_size) or mask.shape != (canonical_size, canonical_size):
            (resized_dir / "images").mkdir(parents=True, exist_ok=True)
            (resized_dir / "masks").mkdir(parents=True, exist_ok=True)
            img_rel = f"{resized_dir.name}/images/{sid}.png"
            mask_rel = f"{resized_dir.name}/masks/{sid}.png"
            save_png(root / img_rel, resize_image(img, canonical_size))
            save_png(root / mask_rel, check_mask(resize_mask(mask, canonical_size)))
        samples.append(Sample(sid, img_rel, mask_rel, sid, old_splits.get(sid, "unassigned")))
    dataset = name or (records[0].dataset if records else root.name)
    manifest = DatasetManifest(dataset, canonical_size, root, samples)
    manifest.save()
    return manifest


def split_dataset(manifest: DatasetManifest, train_fraction: float, seed: int) -> DatasetManifest:
    if not 0.0 < train_fraction < 1.0:
        raise ValueError("train_fraction must lie in (0, 1)")
    n = len(manifest.samples)
    n_train = int(round(n * train_fraction))
    if n_train == 0 or n_train == n:
        raise DatasetError(f"split of {n} samples at {train_fraction} leaves one side empty")
    order = np.random.default_rng(seed).permutation(n)
    train_idx = set(order[:n_train].tolist())
    samples = [replace(s, split="train" if i in train_idx else "val") for i, s in enumerate(manifest.samples)]
    return replace(manifest, samples=samples)
