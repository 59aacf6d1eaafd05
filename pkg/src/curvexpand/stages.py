"""Pipeline stages over a run directory, shared by the CLI, scripts and acceptance tests.

Layout under ``cfg.out_dir``::

    checkpoints/  base.safetensors, control.safetensors, oracle.safetensors
    logs/         feature_distance_{base,control}.jsonl
    plots/        loss curves, ratio curves, trajectories
    synth/        scp_k{k}/, text_only_k{k}/   (images/, masks/, manifest.jsonl)
    panels/       segmap | generated image strips
    reports/      expand_k{k}.json, eval_reports.jsonl, comparison.{md,csv}, failures.jsonl
"""

from __future__ import annotations

import hashlib
import json
import logging
from dataclasses import asdict, dataclass, replace
from pathlib import Path

import numpy as np
import torch
from safetensors.torch import load_file, save_file

from .captions import FeaturePool, record_caption
from .config import RunConfig
from .data import DatasetManifest, save_png, split_dataset, toy_generate
from .diffusion import NoiseSchedule, make_schedule
from .nets import SCPControlNet, TrainResult, Weights, load_weights, save_weights, train_base, train_control
from .nets.blocks import ConfigError
from .pipeline import (
    IMAGE_STREAM,
    ExpansionSpec,
    SynthPair,
    consistency_score,
    derive_seed,
    expand_dataset,
    generate_images,
    pairs_to_arrays,
    provenance_audit,
    read_synth,
    write_synth,
)
from .segeval import (
    EvalReport,
    compare_methods,
    expand_with_augmentation,
    feature_distance,
    to_csv,
    to_markdown,
    train_segmenter,
)
from .segeval.report import plot_losses, plot_ratio_curves, plot_trajectories
from .segeval.segmenter import load_segmenter

log = logging.getLogger(__name__)

METHODS = ("original", "cutout", "flip_rotate", "scp", "text_only")
SYNTH_METHODS = ("scp", "text_only")


def _dir(cfg: RunConfig, name: str) -> Path:
    path = Path(cfg.out_dir) / name
    path.mkdir(parents=True, exist_ok=True)
    return path


def schedule_of(cfg: RunConfig) -> NoiseSchedule:
    s = cfg.schedule
    return make_schedule(s.kind, s.T, s.beta_min, s.beta_max)


def load_manifest(cfg: RunConfig) -> DatasetManifest:
    path = Path(cfg.data_dir) / "manifest.json"
    if not path.exists():
        raise ConfigError(f"no dataset manifest at {path}; run toygen or ingest first")
    manifest = DatasetManifest.load(path)
    if not manifest.split("train").samples or not manifest.split("val").samples:
        raise ConfigError(f"{path} has no train/val split")
    return manifest


@dataclass
class TrainingData:
    images: torch.Tensor  # (N, 1, H, W) in [-1, 1]
    masks: torch.Tensor  # (N, 1, H, W) in {0, 1}
    image_captions: list[str]
    segmap_captions: list[str]


def training_data(manifest: DatasetManifest) -> TrainingData:
    train = manifest.split("train")
    records = {(r.pair_id, r.kind): r for r in manifest.captions()}
    x, y = train.load_arrays()
    return TrainingData(
        images=torch.as_tensor(x)[:, None] * 2 - 1,
        masks=torch.as_tensor(y, dtype=torch.float32)[:, None],
        image_captions=[record_caption(records[(s.pair_id, "image")]) for s in train.samples],
        segmap_captions=[record_caption(records[(s.pair_id, "segmap")]) for s in train.samples],
    )


def train_pool(manifest: DatasetManifest) -> FeaturePool:
    """Caption pool restricted to the training split (validation never feeds expansion)."""
    ids = {s.pair_id for s in manifest.split("train").samples}
    return FeaturePool.from_records([r for r in manifest.captions() if r.pair_id in ids])


# -- toygen ---------------------------------------------------------------------------


def run_toygen(cfg: RunConfig) -> DatasetManifest:
    manifest = toy_generate(cfg.toy, cfg.n_samples, cfg.data_dir)
    manifest = split_dataset(manifest, cfg.train_fraction, cfg.split_seed)
    manifest.save()
    return manifest


# -- training ---------------------------------------------------------------------------


def _fd_logger(cfg: RunConfig, phase: str, data: TrainingData, schedule: NoiseSchedule, get_weights):
    """Callback logging the feature distance of fresh samples to the real training images."""
    if cfg.eval_every <= 0:
        return None
    path = _dir(cfg, "logs") / f"feature_distance_{phase}.jsonl"
    path.write_text("", encoding="utf-8")
    real = ((data.images[:, 0] + 1) / 2).numpy()
    n = len(real)
    seeds = [derive_seed(cfg.train_seed, IMAGE_STREAM, j, 1000) for j in range(n)]
    masks = [(m[0].numpy() * 255).astype(np.uint8) for m in data.masks]

    def callback(step, losses):
        if step % cfg.eval_every:
            return
        imgs = generate_images(masks, data.image_captions, get_weights(), schedule, seeds, use_control=phase == "control")
        fd = feature_distance(real, np.stack(imgs).astype(np.float32) / 255.0)
        with path.open("a", encoding="utf-8") as fh:
            fh.write(json.dumps({"step": step, "loss": float(np.mean(losses[-cfg.eval_every:])), "feature_distance": fd}) + "\n")
        log.info("%s step %d feature distance %.4f", phase, step, fd)

    return callback


def run_train_base(cfg: RunConfig) -> TrainResult:
    manifest = load_manifest(cfg)
    data = training_data(manifest)
    schedule = schedule_of(cfg)
    weights = Weights.init(cfg.model, seed=cfg.train_seed)
    callback = _fd_logger(cfg, "base", data, schedule, lambda: weights)
    # segmap records train the same base, so one model generates both maps and images
    result = train_base(
        torch.cat([data.images, data.masks * 2 - 1]),
        data.image_captions + data.segmap_captions,
        schedule, cfg.model, cfg.base_train, cfg.train_seed, init=weights, callback=callback,
    )
    save_weights(result.weights, _dir(cfg, "checkpoints") / "base.safetensors")
    plot_losses(result.losses, _dir(cfg, "plots") / "loss_base.png")
    return result


def state_digest(module: torch.nn.Module) -> str:
    h = hashlib.sha256()
    for name, tensor in sorted(module.state_dict().items()):
        h.update(name.encode())
        h.update(tensor.detach().cpu().contiguous().numpy().tobytes())
    return h.hexdigest()


def _require(path: Path, what: str) -> Path:
    if not path.exists():
        raise ConfigError(f"{what} checkpoint missing: {path}")
    return path


def run_train_control(cfg: RunConfig, *, name: str = "control", seed: int | None = None) -> TrainResult:
    manifest = load_manifest(cfg)
    data = training_data(manifest)
    schedule = schedule_of(cfg)
    base = load_weights(_require(Path(cfg.out_dir) / "checkpoints" / "base.safetensors", "base"))
    before = state_digest(base.base)
    seed = cfg.train_seed + 1 if seed is None else seed
    torch.manual_seed(seed)
    control = SCPControlNet.from_base(base.base, cfg.model)
    callback = _fd_logger(cfg, name, data, schedule, lambda: Weights(base.base, control))
    result = train_control(
        data.images, data.masks, data.image_captions, base, schedule, cfg.control_train, seed,
        control=control, callback=callback,
    )
    if state_digest(result.weights.base) != before:
        raise RuntimeError("base tensors changed during control training")
    save_weights(result.weights, _dir(cfg, "checkpoints") / f"{name}.safetensors")
    plot_losses(result.losses, _dir(cfg, "plots") / f"loss_{name}.png")
    return result


# -- oracle segmenter -----------------------------------------------------------------


def oracle_segmenter(cfg: RunConfig, manifest: DatasetManifest):
    """Segmenter trained on the real training split; cached as a checkpoint."""
    path = _dir(cfg, "checkpoints") / "oracle.safetensors"
    channels = tuple(cfg.segmenter.channels)
    if path.exists():
        return load_segmenter(load_file(str(path)), channels)
    report, state = train_segmenter(
        manifest.split("train").load_arrays(), manifest.split("val").load_arrays(),
        replace(cfg.segmenter, epochs=cfg.oracle_epochs), seed=cfg.train_seed, method="oracle",
    )
    save_file({k: v.contiguous() for k, v in state.items()}, str(path), metadata={"best_miou": f"{report.best_miou:.4f}"})
    return load_segmenter(state, channels)


# -- expansion ----------------------------------------------------------------------------


def synth_dir(cfg: RunConfig, method: str, ratio: int) -> Path:
    return Path(cfg.out_dir) / "synth" / f"{method}_k{ratio}"


def render_panels(pairs: list[SynthPair], path: Path, count: int = 8) -> None:
    """Rows of (segmap | generated image) side by side, with a 2-pixel gutter."""
    rows = []
    for p in pairs[:count]:
        gutter = np.full((p.mask.shape[0], 2), 128, np.uint8)
        rows.append(np.concatenate([p.mask, gutter, p.image], axis=1))
        rows.append(np.full((2, rows[-1].shape[1]), 128, np.uint8))
    panel = np.concatenate(rows[:-1], axis=0)
    panel = np.kron(panel, np.ones((4, 4), np.uint8))
    path.parent.mkdir(parents=True, exist_ok=True)
    save_png(path, panel)


def run_expand(cfg: RunConfig, *, checkpoint: str = "control") -> dict:
    manifest = load_manifest(cfg)
    schedule = schedule_of(cfg)
    weights = load_weights(_require(Path(cfg.out_dir) / "checkpoints" / f"{checkpoint}.safetensors", "control"))
    if weights.control is None:
        raise ConfigError(f"{checkpoint} checkpoint has no control branch")
    e = cfg.expand
    spec = ExpansionSpec(
        manifest.name, ratio=e.ratio, master_seed=e.master_seed, steps=e.steps or None,
        max_attempts=e.max_attempts, min_fg_fraction=e.min_fg_fraction,
        max_fg_fraction=e.max_fg_fraction, batch_size=e.batch_size,
    )
    n = len(manifest.split("train"))
    result = expand_dataset(n, spec, weights, train_pool(manifest), schedule)
    out = synth_dir(cfg, "scp" if checkpoint == "control" else checkpoint, e.ratio)
    write_synth(result.pairs, out, result.rejections)
    render_panels(result.pairs, _dir(cfg, "panels") / f"{out.name}.png")

    oracle = oracle_segmenter(cfg, manifest)
    summary = {
        "dataset": manifest.name, "ratio": e.ratio, "n_orig": n, "n_synth": len(result.pairs),
        "rejections": len(result.rejections), "audit": provenance_audit(result.pairs, manifest.name),
        "consistency_scp": consistency_score(result.pairs, oracle),
    }
    if e.text_only:
        images = []
        for i in range(0, len(result.pairs), e.batch_size):
            chunk = result.pairs[i : i + e.batch_size]
            images += generate_images([p.mask for p in chunk], [p.c_img for p in chunk], weights, schedule,
                                      [p.seed for p in chunk], spec.steps, use_control=False)
        text_pairs = [SynthPair(img, p.mask, p.c_sem, p.c_img, p.seed, p.provenance) for img, p in zip(images, result.pairs)]
        write_synth(text_pairs, synth_dir(cfg, "text_only", e.ratio))
        render_panels(text_pairs, _dir(cfg, "panels") / f"text_only_k{e.ratio}.png")
        summary["consistency_text_only"] = consistency_score(text_pairs, oracle)
    x_val, y_val = manifest.split("val").load_arrays()
    real = [SynthPair((x * 255).round().astype(np.uint8), y.astype(np.uint8) * 255, "", "", 0) for x, y in zip(x_val, y_val)]
    summary["consistency_real_val"] = consistency_score(real, oracle)
    path = _dir(cfg, "reports") / f"expand_{out.name}.json"
    path.write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return summary


# -- evaluation ---------------------------------------------------------------------------


def _synth_prefix(cfg: RunConfig, method: str, ratio: int, count: int) -> list[SynthPair]:
    """The first ``count`` synthetic pairs from any stored expansion large enough.

    Per-index seeds make the first (k-1)*n pairs of a larger expansion equal to
    the k-ratio expansion, so one run at the largest ratio serves all ratios.
    """
    root = Path(cfg.out_dir) / "synth"
    candidates = sorted(root.glob(f"{method}_k*")) if root.exists() else []
    for path in sorted(candidates, key=lambda p: int(p.name.rsplit("_k", 1)[1])):
        if int(path.name.rsplit("_k", 1)[1]) >= ratio and (path / "manifest.jsonl").exists():
            pairs = read_synth(path)
            if len(pairs) >= count:
                return pairs[:count]
    raise ConfigError(f"no {method} synthetic set with >= {count} pairs under {root}; run expand first")


def eval_plan(methods, ratios, seeds) -> list[tuple[str, int | None, int]]:
    plan = []
    for method in methods:
        if method not in METHODS:
            raise ConfigError(f"unknown method {method!r}; choose from {', '.join(METHODS)}")
        for ratio in ([None] if method == "original" else sorted(ratios)):
            if ratio is not None and ratio < 2:
                raise ConfigError("expansion ratios must be >= 2")
            plan.extend((method, ratio, s) for s in seeds)
    return plan


def training_set(cfg: RunConfig, manifest: DatasetManifest, method: str, ratio: int | None, seed: int):
    x, y = manifest.split("train").load_arrays()
    if method == "original":
        return x, y
    if method in SYNTH_METHODS:
        xs, ys = pairs_to_arrays(_synth_prefix(cfg, method, ratio, (ratio - 1) * len(x)))
        return np.concatenate([x, xs]), np.concatenate([y, ys])
    return expand_with_augmentation(x, y, ratio, method, seed)


def run_eval(cfg: RunConfig) -> tuple[list, list[dict]]:
    manifest = load_manifest(cfg)
    ev = cfg.evaluation
    plan = eval_plan(ev.methods, ev.ratios, ev.seeds)
    val = manifest.split("val").load_arrays()
    reports: list[EvalReport] = []
    failures = []
    for method, ratio, seed in plan:
        try:
            report, _ = train_segmenter(training_set(cfg, manifest, method, ratio, seed), val, cfg.segmenter,
                                        seed, method=method, ratio=ratio)
            reports.append(report)
        except Exception as exc:  # recorded; remaining runs continue
            log.error("run %s ratio=%s seed=%d failed: %s", method, ratio, seed, exc)
            failures.append({"method": method, "ratio": ratio, "seed": seed, "error": f"{type(exc).__name__}: {exc}"})
    reports_dir = _dir(cfg, "reports")
    (reports_dir / "eval_reports.jsonl").write_text("".join(r.to_json() + "\n" for r in reports), encoding="utf-8")
    (reports_dir / "failures.jsonl").write_text("".join(json.dumps(f, sort_keys=True) + "\n" for f in failures), encoding="utf-8")
    return write_report(cfg), failures


def write_report(cfg: RunConfig) -> list:
    """Regenerate tables and plots from stored per-run reports."""
    reports_dir = Path(cfg.out_dir) / "reports"
    path = reports_dir / "eval_reports.jsonl"
    if not path.exists():
        raise ConfigError(f"no evaluation reports at {path}; run eval first")
    reports = [EvalReport.from_json(line) for line in path.read_text(encoding="utf-8").splitlines() if line]
    rows = compare_methods(reports)
    (reports_dir / "comparison.csv").write_text(to_csv(rows), encoding="utf-8")
    (reports_dir / "comparison.md").write_text(to_markdown(rows), encoding="utf-8")
    if rows:
        plot_ratio_curves(rows, _dir(cfg, "plots") / "ratio_miou.png")
        plot_trajectories(reports, _dir(cfg, "plots") / "trajectories.png")
    return rows


def config_snapshot(cfg: RunConfig) -> dict:
    return json.loads(json.dumps(asdict(cfg), default=str))


# -- SPADE placement ablation ----------------------------------------------------------------


def val_consistency(cfg: RunConfig, weights: Weights, manifest: DatasetManifest, oracle, *, use_control: bool = True) -> float:
    """Consistency of images generated for the real validation masks and their image captions."""
    val = manifest.split("val")
    _, masks = val.load_arrays()
    captions = {r.pair_id: record_caption(r) for r in val.captions() if r.kind == "image"}
    caps = [captions[s.pair_id] for s in val.samples]
    masks_u8 = [m.astype(np.uint8) * 255 for m in masks]
    seeds = [derive_seed(cfg.expand.master_seed, IMAGE_STREAM, j) for j in range(len(caps))]
    schedule = schedule_of(cfg)
    images = []
    for i in range(0, len(caps), cfg.expand.batch_size):
        sl = slice(i, i + cfg.expand.batch_size)
        images += generate_images(masks_u8[sl], caps[sl], weights, schedule, seeds[sl], cfg.expand.steps or None,
                                  use_control=use_control)
    pairs = [SynthPair(img, m, "", c, s) for img, m, c, s in zip(images, masks_u8, caps, seeds)]
    return consistency_score(pairs, oracle)


def run_ablation(cfg: RunConfig, variants: dict[str, frozenset[str]], seeds) -> dict:
    """Train one control branch per (SPADE placement, seed) on the shared base and score each.

    Returns ``{variant: {"stages": [...], "scores": [...], "mean": m}}`` and writes reports/ablation.json.
    """
    manifest = load_manifest(cfg)
    oracle = oracle_segmenter(cfg, manifest)
    out = {}
    for variant, stage_set in variants.items():
        v_cfg = replace(cfg, model=replace(cfg.model, spade_stages=frozenset(stage_set)))
        v_cfg.model.validate()
        scores = []
        for seed in seeds:
            result = run_train_control(v_cfg, name=f"ablation_{variant}_s{seed}", seed=seed)
            scores.append(val_consistency(v_cfg, result.weights.eval(), manifest, oracle))
            log.info("ablation %s seed %d consistency %.2f", variant, seed, scores[-1])
        out[variant] = {"stages": sorted(stage_set), "scores": scores, "mean": float(np.mean(scores))}
    path = _dir(cfg, "reports") / "ablation.json"
    path.write_text(json.dumps(out, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return out


def run_all(cfg: RunConfig, *, reuse: bool = False) -> dict:
    """toygen -> train-base -> train-control -> expand -> eval. With ``reuse``, stages whose outputs exist are skipped."""
    out = Path(cfg.out_dir)
    ckpt = out / "checkpoints"
    expand_report = out / "reports" / f"expand_scp_k{cfg.expand.ratio}.json"
    if not (reuse and (Path(cfg.data_dir) / "manifest.json").exists()):
        run_toygen(cfg)
    if not (reuse and (ckpt / "base.safetensors").exists()):
        run_train_base(cfg)
    if not (reuse and (ckpt / "control.safetensors").exists()):
        run_train_control(cfg)
    if reuse and expand_report.exists():
        expansion = json.loads(expand_report.read_text(encoding="utf-8"))
    else:
        expansion = run_expand(cfg)
    if reuse and (out / "reports" / "eval_reports.jsonl").exists():
        rows, failures = write_report(cfg), []
    else:
        rows, failures = run_eval(cfg)
    return {"expansion": expansion, "rows": rows, "failures": failures}
