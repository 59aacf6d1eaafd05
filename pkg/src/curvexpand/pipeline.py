"""Three-step dataset expansion: recombined captions -> semantic maps -> paired images.

Per-sample randomness comes from seeds derived from (master seed, stream,
sample index, attempt), so each sample is reproducible on its own.
"""

from __future__ import annotations

import hashlib
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from .captions import FeaturePool, compose_img_caption, compose_sem_caption, sample_features, truncate_caption
from .data import DatasetManifest, check_mask, load_png, save_png
from .diffusion import NoiseSchedule, sample_loop
from .nets import Weights, base_predict, scp_predict
from .nets.text import batch_token_ids
from .segeval.metrics import miou
from .segmap_post import OtsuResult, otsu_threshold, plausibility_filter, to_uint8

log = logging.getLogger(__name__)

CAPTION_STREAM, SEGMAP_STREAM, IMAGE_STREAM = 0, 1, 2


class DegenerateGenerator(RuntimeError):
    """Semantic-map generation kept failing the plausibility filter."""

    def __init__(self, message: str, rejections: list[dict]):
        super().__init__(message)
        self.rejections = rejections


@dataclass(frozen=True)
class ExpansionSpec:
    dataset: str
    ratio: int = 5
    master_seed: int = 0
    steps: int | None = None
    max_attempts: int = 8
    min_fg_fraction: float = 0.01
    max_fg_fraction: float = 0.5
    single_record: bool = False
    batch_size: int = 64

    def __post_init__(self):
        if self.ratio < 2:
            raise ValueError("expansion ratio must be >= 2")
        if self.max_attempts < 1:
            raise ValueError("max_attempts must be >= 1")

    def target_count(self, n_orig: int) -> int:
        return (self.ratio - 1) * n_orig


@dataclass
class SynthPair:
    image: np.ndarray  # uint8 (H, W)
    mask: np.ndarray  # uint8 {0, 255}
    c_sem: str
    c_img: str
    seed: int
    provenance: dict = field(default_factory=dict)


def derive_seed(master: int, stream: int, index: int, attempt: int = 0) -> int:
    return int(np.random.SeedSequence([master, stream, index, attempt]).generate_state(1)[0])


def mask_digest(mask: np.ndarray) -> str:
    return hashlib.sha256(np.ascontiguousarray(mask, dtype=np.uint8).tobytes()).hexdigest()


def _text(weights: Weights, captions: list[str]):
    cfg = weights.config
    ids, mask = batch_token_ids(captions, cfg.vocab_size, cfg.max_tokens)
    with torch.no_grad():
        return weights.base.text_encoder.encode_ids(ids, mask)


def _sample(weights, schedule, captions, seeds, steps, segmaps=None):
    res = weights.config.resolution
    shape = (len(captions), weights.config.in_channels, res, res)
    rngs = [torch.Generator().manual_seed(s) for s in seeds]
    text = _text(weights, captions)
    if segmaps is None:
        predictor = lambda z, t, c: base_predict(z, t, c, weights)  # noqa: E731
    else:
        predictor = lambda z, t, c: scp_predict(z, t, c[0], c[1], weights)  # noqa: E731
        text = (text, segmaps)
    out = sample_loop(predictor, text, schedule, steps or schedule.T, rngs, shape, clip_x0=1.0)
    return [to_uint8(x) for x in out]


def generate_segmaps(captions, weights, schedule, seeds, steps=None) -> list[tuple[np.ndarray, OtsuResult]]:
    """Raw 8-bit generations and their Otsu binarizations, one per caption."""
    raw = _sample(weights, schedule, captions, seeds, steps)
    return [(r, otsu_threshold(r)) for r in raw]


def generate_images(masks, captions, weights, schedule, seeds, steps=None, *, use_control: bool = True) -> list[np.ndarray]:
    """Images conditioned on the masks (control branch) or on the captions alone."""
    if not use_control:
        return _sample(weights, schedule, captions, seeds, steps)
    if weights.control is None:
        raise ValueError("control weights required for mask-conditioned generation")
    segmaps = torch.as_tensor(np.stack(masks), dtype=torch.float32)[:, None] / 255.0
    return _sample(weights, schedule, captions, seeds, steps, segmaps)


def generate_segmap(c_sem, generator_weights, schedule, seed, *, steps=None, max_attempts=8,
                    min_fg_fraction=0.01, max_fg_fraction=0.5) -> np.ndarray:
    """One plausible binary semantic map for ``c_sem``; retries with derived seeds."""
    rejections = []
    for attempt in range(max_attempts):
        s = derive_seed(seed, SEGMAP_STREAM, 0, attempt)
        _, otsu = generate_segmaps([c_sem], generator_weights, schedule, [s], steps)[0]
        decision = plausibility_filter(otsu.mask, min_fg_fraction, max_fg_fraction)
        if decision.accepted and not otsu.degenerate:
            return otsu.mask
        rejections.append({"attempt": attempt, "seed": s, "reason": decision.reason or "degenerate"})
    raise DegenerateGenerator(f"no plausible semantic map after {max_attempts} attempts", rejections)


def generate_image(mask, c_img, scp_weights, schedule, seed, *, steps=None) -> np.ndarray:
    return generate_images([mask], [c_img], scp_weights, schedule, [seed], steps)[0]


@dataclass
class ExpansionResult:
    pairs: list[SynthPair]
    rejections: list[dict]


def _batches(items, size):
    for i in range(0, len(items), size):
        yield items[i : i + size]


def expand_dataset(
    n_orig: int,
    spec: ExpansionSpec,
    weights: Weights,
    pool: FeaturePool,
    schedule: NoiseSchedule,
    segmap_weights: Weights | None = None,
) -> ExpansionResult:
    """Generate exactly (ratio - 1) * n_orig synthetic pairs.

    ``segmap_weights`` selects a separate semantic-map generator; by default
    the base inside ``weights`` generates both maps and images.
    """
    m = spec.target_count(n_orig)
    seg_weights = segmap_weights or weights

    # step 1: captions from within-dataset feature recombination
    feats = [
        sample_features(pool, spec.dataset, np.random.default_rng(derive_seed(spec.master_seed, CAPTION_STREAM, j)),
                        single_record=spec.single_record)
        for j in range(m)
    ]
    c_sem = [truncate_caption(compose_sem_caption(f)) for f in feats]
    c_img = [truncate_caption(compose_img_caption(f)) for f in feats]

    # step 2: semantic maps, retrying rejected draws with fresh derived seeds
    masks: list[np.ndarray | None] = [None] * m
    seg_seeds = [0] * m
    attempts = [0] * m
    rejections: list[dict] = []
    pending = list(range(m))
    while pending:
        for chunk in _batches(pending, spec.batch_size):
            seeds = [derive_seed(spec.master_seed, SEGMAP_STREAM, j, attempts[j]) for j in chunk]
            outs = generate_segmaps([c_sem[j] for j in chunk], seg_weights, schedule, seeds, spec.steps)
            for j, s, (_, otsu) in zip(chunk, seeds, outs):
                decision = plausibility_filter(otsu.mask, spec.min_fg_fraction, spec.max_fg_fraction)
                if decision.accepted and not otsu.degenerate:
                    masks[j], seg_seeds[j] = otsu.mask, s
                else:
                    rejections.append({
                        "index": j, "attempt": attempts[j], "seed": s,
                        "reason": decision.reason or "degenerate", "fg_fraction": decision.fg_fraction,
                    })
                    log.debug("rejected segmap %d attempt %d: %s", j, attempts[j], decision.reason)
                attempts[j] += 1
        pending = [j for j in pending if masks[j] is None]
        exhausted = [j for j in pending if attempts[j] >= spec.max_attempts]
        if exhausted:
            raise DegenerateGenerator(
                f"{len(exhausted)} semantic maps failed {spec.max_attempts} attempts (first index {exhausted[0]})",
                rejections,
            )

    # step 3: images conditioned on the accepted maps and the image captions
    img_seeds = [derive_seed(spec.master_seed, IMAGE_STREAM, j) for j in range(m)]
    images: list[np.ndarray] = []
    for chunk in _batches(list(range(m)), spec.batch_size):
        images += generate_images([masks[j] for j in chunk], [c_img[j] for j in chunk], weights, schedule,
                                  [img_seeds[j] for j in chunk], spec.steps)

    pairs = []
    for j in range(m):
        prov = {name: f"{p.dataset}/{p.pair_id}/{p.kind}" for name, p in sorted(feats[j].provenance.items())}
        pairs.append(SynthPair(
            image=images[j], mask=masks[j], c_sem=c_sem[j], c_img=c_img[j], seed=img_seeds[j],
            provenance={
                "features": prov, "dataset": spec.dataset, "segmap_seed": seg_seeds[j],
                "segmap_attempts": attempts[j], "image_seed": img_seeds[j], "mask_sha256": mask_digest(masks[j]),
            },
        ))
    return ExpansionResult(pairs, rejections)


def provenance_audit(pairs: list[SynthPair], dataset: str) -> dict:
    """Count sampled caption features whose source dataset differs from ``dataset``."""
    total = cross = 0
    for p in pairs:
        for source in p.provenance["features"].values():
            total += 1
            cross += source.rsplit("/", 2)[0] != dataset
    return {"features": total, "cross_dataset": cross}


def write_synth(pairs: list[SynthPair], out_dir: str | Path, rejections: list[dict] | None = None) -> Path:
    """images/, masks/ and manifest.jsonl with one line per pair."""
    out = Path(out_dir)
    (out / "images").mkdir(parents=True, exist_ok=True)
    (out / "masks").mkdir(parents=True, exist_ok=True)
    lines = []
    for j, p in enumerate(pairs):
        name = f"synth_{j:06d}.png"
        save_png(out / "images" / name, p.image)
        save_png(out / "masks" / name, p.mask)
        lines.append(json.dumps({
            "image_path": f"images/{name}", "mask_path": f"masks/{name}", "c_sem": p.c_sem,
            "c_img": p.c_img, "provenance": p.provenance, "seed": p.seed,
        }, sort_keys=True))
    path = out / "manifest.jsonl"
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    if rejections is not None:
        (out / "rejections.jsonl").write_text(
            "".join(json.dumps(r, sort_keys=True) + "\n" for r in rejections), encoding="utf-8"
        )
    return path


def read_synth(out_dir: str | Path) -> list[SynthPair]:
    out = Path(out_dir)
    pairs = []
    for line in (out / "manifest.jsonl").read_text(encoding="utf-8").splitlines():
        d = json.loads(line)
        mask = check_mask(load_png(out / d["mask_path"]))
        if mask_digest(mask) != d["provenance"]["mask_sha256"]:
            raise ValueError(f"mask hash mismatch for {d['mask_path']}")
        pairs.append(SynthPair(load_png(out / d["image_path"]), mask, d["c_sem"], d["c_img"], d["seed"], d["provenance"]))
    return pairs


def pairs_to_arrays(pairs: list[SynthPair]) -> tuple[np.ndarray, np.ndarray]:
    return (
        np.stack([p.image for p in pairs]).astype(np.float32) / 255.0,
        np.stack([p.mask for p in pairs]) > 127,
    )


def consistency_score(pairs: list[SynthPair], oracle_segmenter) -> float:
    """Mean per-pair mIoU between the oracle's segmentation of each image and its conditioning mask."""
    if not pairs:
        raise ValueError("no pairs to score")
    images, masks = pairs_to_arrays(pairs)
    preds = oracle_segmenter.predict(images)
    return float(np.mean([miou(p, m) for p, m in zip(preds, masks)]))
