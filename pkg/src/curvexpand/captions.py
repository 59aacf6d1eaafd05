"""Six-field curvilinear caption records, feature-pool sampling and caption composition.

Field order in composed captions is fixed and segments are joined by ``"; "``:

    C_sem = overview; dataset; location; size; trend_shape
    C_img = image overview; dataset; location; size; trend_shape; background
"""

from __future__ import annotations

import json
import re
from collections import defaultdict
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Iterable

import numpy as np

SEPARATOR = "; "
MAX_TOKENS = 77
FEATURE_FIELDS = ("location", "size", "trend_shape")
GT_MARKERS = ("semantic map", "ground truth", "groundtrue", "(gt)")

_TOKEN_RE = re.compile(r"[^\s;]+|;")


def tokenize(caption: str) -> list[str]:
    """Whitespace/semicolon tokenizer; each semicolon is its own token."""
    return _TOKEN_RE.findall(caption.lower())


class CaptionError(ValueError):
    """Malformed caption input or unknown dataset."""


@dataclass(frozen=True)
class CaptionRecord:
    overview: str
    dataset: str
    location: str
    size: str
    trend_shape: str
    background: str | None = None
    kind: str = "image"
    pair_id: str = ""

    def to_json(self) -> str:
        d = asdict(self)
        if d["background"] is None:
            del d["background"]
        return json.dumps(d, ensure_ascii=False, sort_keys=True)

    @classmethod
    def from_dict(cls, d: dict) -> "CaptionRecord":
        return cls(
            overview=d["overview"],
            dataset=d["dataset"],
            location=d["location"],
            size=d["size"],
            trend_shape=d["trend_shape"],
            background=d.get("background"),
            kind=d.get("kind", "image"),
            pair_id=str(d.get("pair_id", "")),
        )


def _has_gt_marker(overview: str) -> bool:
    text = overview.lower()
    if any(m in text for m in GT_MARKERS):
        return True
    return re.search(r"\bgt\b", text) is not None


def validate_record(record: CaptionRecord) -> list[str]:
    """All violations of the record invariants; an empty list means valid."""
    violations = []
    if record.kind not in ("image", "segmap"):
        violations.append("unknown-kind")
    texts = [record.overview, record.dataset, record.location, record.size, record.trend_shape]
    if record.background is not None:
        texts.append(record.background)
    if any(not t or not t.strip() for t in texts):
        violations.append("empty-field")
    if any(";" in t for t in texts):
        violations.append("separator-in-field")
    if record.kind == "segmap":
        if record.background is not None:
            violations.append("background-on-segmap")
        if not _has_gt_marker(record.overview):
            violations.append("missing-gt-marker")
    return violations


def read_captions(path: str | Path) -> list[CaptionRecord]:
    with open(path, encoding="utf-8") as fh:
        return [CaptionRecord.from_dict(json.loads(line)) for line in fh if line.strip()]


def write_captions(path: str | Path, records: Iterable[CaptionRecord]) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for r in records:
            fh.write(r.to_json() + "\n")


# -- feature pool ------------------------------------------------------------------


@dataclass(frozen=True)
class Provenance:
    dataset: str
    pair_id: str
    kind: str


@dataclass(frozen=True)
class FeaturePool:
    """Paired (segmap, image) caption records grouped by dataset name."""

    pairs: dict[str, list[tuple[CaptionRecord, CaptionRecord]]]

    @classmethod
    def from_records(cls, records: Iterable[CaptionRecord]) -> "FeaturePool":
        by_key: dict[tuple[str, str], dict[str, CaptionRecord]] = defaultdict(dict)
        for r in records:
            slot = by_key[(r.dataset, r.pair_id)]
            if r.kind in slot:
                raise CaptionError(f"duplicate {r.kind} record for {r.dataset}/{r.pair_id}")
            slot[r.kind] = r
        pairs: dict[str, list] = defaultdict(list)
        for (dataset, pair_id), slot in sorted(by_key.items()):
            if set(slot) != {"segmap", "image"}:
                raise CaptionError(f"unpaired record {dataset}/{pair_id}: have {sorted(slot)}")
            pairs[dataset].append((slot["segmap"], slot["image"]))
        return cls(dict(pairs))

    @property
    def datasets(self) -> list[str]:
        return sorted(self.pairs)


@dataclass(frozen=True)
class SampledFeatures:
    overview: str
    image_overview: str
    dataset: str
    location: str
    size: str
    trend_shape: str
    background: str
    provenance: dict[str, Provenance] = field(default_factory=dict, compare=False)


def _prov(r: CaptionRecord) -> Provenance:
    return Provenance(r.dataset, r.pair_id, r.kind)


def sample_features(
    pool: FeaturePool, dataset_name: str, rng: np.random.Generator, *, single_record: bool = False
) -> SampledFeatures:
    """Recombine caption features drawn only from ``dataset_name``.

    location/size/trend_shape are drawn independently from the union of segmap
    and image records (``single_record=True`` takes all three from one record).
    The segmap overview is drawn from segmap records and paired with its own
    image record's overview; the background comes from an image record.
    """
    if dataset_name not in pool.pairs:
        raise CaptionError(f"unknown dataset {dataset_name!r}; pool has {pool.datasets}")
    pairs = pool.pairs[dataset_name]
    union = [r for pair in pairs for r in pair]
    picks = {}
    if single_record:
        r = union[rng.integers(len(union))]
        picks = {name: r for name in FEATURE_FIELDS}
    else:
        for name in FEATURE_FIELDS:
            picks[name] = union[rng.integers(len(union))]
    seg, img = pairs[rng.integers(len(pairs))]
    with_bg = [img_r for _, img_r in pairs if img_r.background]
    if not with_bg:
        raise CaptionError(f"no image record in {dataset_name!r} carries a background")
    bg = with_bg[rng.integers(len(with_bg))]
    provenance = {name: _prov(r) for name, r in picks.items()}
    provenance.update(overview=_prov(seg), image_overview=_prov(img), background=_prov(bg))
    return SampledFeatures(
        overview=seg.overview,
        image_overview=img.overview,
        dataset=dataset_name,
        location=picks["location"].location,
        size=picks["size"].size,
        trend_shape=picks["trend_shape"].trend_shape,
        background=bg.background,
        provenance=provenance,
    )


def _join(parts: list[str | None]) -> str:
    if any(p is None or not str(p).strip() for p in parts):
        raise CaptionError(f"missing caption component in {parts}")
    return SEPARATOR.join(parts)


def compose_sem_caption(features: SampledFeatures) -> str:
    f = features
    return _join([f.overview, f.dataset, f.location, f.size, f.trend_shape])


def compose_img_caption(features: SampledFeatures) -> str:
    f = features
    return _join([f.image_overview, f.dataset, f.location, f.size, f.trend_shape, f.background])


def split_caption(caption: str) -> list[str]:
    return caption.split(SEPARATOR)


def truncate_caption(
    caption: str, max_tokens: int = MAX_TOKENS, tokenizer: Callable[[str], list[str]] = tokenize
) -> str:
    """Shorten a composed caption to at most ``max_tokens`` tokens.

    A six-segment caption loses its background segment first; then trailing
    segments are dropped whole, and only the last remaining segment is cut
    word by word.
    """
    if len(tokenizer(caption)) <= max_tokens:
        return caption
    segments = split_caption(caption)
    if len(segments) == 6:
        segments = segments[:5]
    while len(segments) > 1 and len(tokenizer(SEPARATOR.join(segments))) > max_tokens:
        segments = segments[:-1]
    out = SEPARATOR.join(segments)
    if len(tokenizer(out)) > max_tokens:
        words = out.split()
        while words and len(tokenizer(" ".join(words))) > max_tokens:
            words.pop()
        out = " ".join(words)
    return out


def record_caption(record: CaptionRecord) -> str:
    """The composed caption an annotated record stands for (5 segments for segmaps, 6 for images)."""
    parts = [record.overview, record.dataset, record.location, record.size, record.trend_shape]
    if record.kind == "image" and record.background:
        parts.append(record.background)
    return _join(parts)
