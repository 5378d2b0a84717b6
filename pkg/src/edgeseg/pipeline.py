"""Stage runners: in-memory building blocks plus file-based stage wrappers.

Every stage writes into its own run directory, which holds ``config.txt``
(the fully resolved config, seed included) alongside its artifacts.
Re-running a stage from that echo reproduces its outputs.
"""

from __future__ import annotations

import json
import logging
import shutil
import time
import zlib
from pathlib import Path

import numpy as np
import torch

from . import core, edgemap, preprocess
from .config import Config
from .diagramgen import cone as cone_mod
from .diagramgen import recipes as rec
from .diagramgen import vae as vae_mod
from .gan import training as gan_mod
from .maskextract import extract as mx
from .manifest import Manifest, Record, read_manifest, write_manifest
from .metrics import MetricsReport, evaluate_dataset
from .segnet import SegModel, fine_tune, load_segmenter, predict, save_segmenter, train_segmenter
from .toy import gen_toy_images

log = logging.getLogger("edgeseg")

STAGES = ("gen-toy", "preprocess", "extract-edges", "train-vae", "synth-diagrams", "train-gan",
          "gen-dataset", "train-seg", "finetune-seg", "extract-masks", "evaluate", "e2e-toy")


def stage_rng(seed: int, stage: str) -> np.random.Generator:
    """Independent, reproducible stream per (seed, stage)."""
    return np.random.default_rng([seed, zlib.crc32(stage.encode())])


def set_determinism(seed: int) -> None:
    torch.manual_seed(seed)
    torch.use_deterministic_algorithms(True)


# in-memory building blocks ----------------------------------------------------

def prepare_image(img: np.ndarray, cfg: Config, boxes=()) -> np.ndarray:
    """Dataset-specific preprocessing to ``run.image_size``."""
    size = cfg.run.image_size
    if cfg.run.dataset == "kidney":
        p = cfg.prep
        pc = preprocess.PreprocessConfig(p.clahe_clip, p.clahe_tiles, p.trim_lo, p.trim_hi,
                                         p.despeckle_window, p.text_boxes_path, p.border_tol, size)
        return preprocess.preprocess_us(img, pc, boxes)
    if cfg.run.dataset == "skin":
        return preprocess.preprocess_skin(img, size)
    img = core.to_grayscale(img)
    img = preprocess.despeckle(img, cfg.prep.despeckle_window)
    if img.shape != (size, size):
        img = core.resize(img, size, size, "bilinear")
    return img


def prepare_mask(mask: np.ndarray, size: int) -> np.ndarray:
    if mask.shape == (size, size):
        return mask
    return core.resize(mask.astype(np.float64), size, size, "nearest") > 0.5


def edge_diagram(img: np.ndarray, cfg: Config, sidecar=None) -> np.ndarray:
    soft = None
    if cfg.edge.source == "external_sidecar":
        soft = edgemap.detect_edges(img, "external_sidecar", sidecar)
    return edgemap.make_edge_diagram(img, cfg.edge, soft)


def sample_recipes(cfg: Config, rng: np.random.Generator, n: int, cone_model=None):
    """``n`` (recipe, cone-or-None) draws for the configured dataset."""
    out = []
    for _ in range(n):
        if cfg.run.dataset == "kidney":
            if cone_model is None:
                raise ValueError("kidney recipes need a trained cone VAE")
            c = vae_mod.sample_cone(cone_model, rng)
            out.append((rec.sample_kidney_recipe(rng, c, cfg.kidney), c))
        else:
            out.append((rec.sample_lesion_recipe(rng, cfg.lesion), None))
    return out


def render_pairs(bundle, drawn, image_size: int):
    """Translate rasterised recipes into (synthetic image, mask) pairs."""
    scale = image_size // rec.GRID
    pairs = []
    for r, c in drawn:
        d, m = rec.rasterize(r, c, scale)
        pairs.append((gan_mod.translate(bundle, d.astype(np.float64)), m))
    return pairs


def gan_pairs(diagrams, images, image_size: int):
    scale = image_size // edgemap.COARSE
    return [(core.upscale_mask(d, scale).astype(np.float64), x) for d, x in zip(diagrams, images)]


def train_and_select_gan(pairs, cfg: Config, out_dir: Path):
    rng = stage_rng(cfg.run.seed, "train-gan")
    bundle, cks, rows = gan_mod.train_gan(pairs, cfg.gan, rng, out_dir)
    epoch = gan_mod.select_checkpoint(cks)
    gan_mod.load_generator(bundle, cks[epoch - 1])
    (out_dir / "selected_epoch.txt").write_text(f"{epoch}\n")
    shutil.copyfile(out_dir / f"ckpt_epoch{epoch:03d}.pt", out_dir / "generator.pt")
    return bundle, rows, epoch


def evaluate_model(model: SegModel, eval_items) -> tuple[MetricsReport, dict]:
    preds = {sid: predict(model, x) for sid, x, _ in eval_items}
    gts = {sid: m for sid, _, m in eval_items}
    return evaluate_dataset(preds, gts), preds


def write_seg_log(path: Path, model: SegModel) -> None:
    with open(path, "w") as fh:
        for row in model.log:
            fh.write(json.dumps(row, sort_keys=True) + "\n")


def write_report(out: Path, report: MetricsReport, stem: str = "report", title: str = "") -> None:
    (out / f"{stem}.txt").write_text(report.table(title))
    (out / f"{stem}.jsonl").write_text(report.records())


# run directories --------------------------------------------------------------

def run_dir(cfg: Config, stage: str) -> Path:
    out = Path(cfg.run.runs_dir) / f"{stage}-{cfg.digest(stage)}"
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.txt").write_text(cfg.echo())
    return out


def _upstream(path: str, what: str, needed: str) -> Path:
    if not path:
        raise FileNotFoundError(f"missing upstream artifact: set run.{what}")
    p = Path(path)
    if not (p / needed).exists():
        raise FileNotFoundError(f"missing upstream artifact: {p / needed}")
    return p


def _input_manifest(cfg: Config) -> Manifest:
    if not cfg.run.manifest:
        raise FileNotFoundError("missing upstream artifact: set run.manifest")
    return read_manifest(cfg.run.manifest)


def _labelled(records, what: str):
    missing = [r.id for r in records if r.mask is None]
    if missing:
        raise ValueError(f"{what} records without masks: {missing[:5]}")
    return [(r.id, core.read_image(r.image), core.read_mask(r.mask)) for r in records]


# file-based stages -------------------------------------------------------------

def stage_gen_toy(cfg: Config, out: Path, **_) -> None:
    r = cfg.run
    n = r.toy_train + r.toy_eval + r.toy_finetune
    if n < 20:
        raise ValueError("toy corpus needs at least 20 samples")
    write_toy_corpus(stage_rng(r.seed, "gen-toy"), out, r.image_size, r.toy_train, r.toy_eval, r.toy_finetune)


def write_toy_corpus(rng, out: Path, size: int, n_train: int, n_eval: int, n_finetune: int) -> Manifest:
    """Render a toy corpus to PNGs and return its manifest (train, finetune, eval order)."""
    total = n_train + n_eval + n_finetune
    if total < 20:
        raise ValueError(f"toy corpus needs at least 20 images, got {total}")
    items = gen_toy_images(rng, total, size)
    (out / "images").mkdir(parents=True, exist_ok=True)
    (out / "masks").mkdir(exist_ok=True)
    records = []
    for k, (img, mask, _) in enumerate(items):
        split = "train" if k < n_train else "finetune" if k < n_train + n_finetune else "eval"
        sid = f"toy{k:04d}"
        ip, mp = out / "images" / f"{sid}.png", out / "masks" / f"{sid}.png"
        core.write_image(ip, img)
        core.write_mask(mp, mask)
        records.append(Record(sid, ip, mp, split, "toy"))
    return write_manifest(out / "manifest.tsv", records)


def stage_preprocess(cfg: Config, out: Path, **_) -> None:
    man = _input_manifest(cfg)
    boxes = preprocess.read_text_boxes(cfg.prep.text_boxes_path) if cfg.prep.text_boxes_path else {}
    (out / "images").mkdir(exist_ok=True)
    (out / "masks").mkdir(exist_ok=True)
    records = []
    for r in man.records:
        img = prepare_image(core.read_image(r.image, gray=cfg.run.dataset != "skin"), cfg, boxes.get(r.id, ()))
        ip = out / "images" / f"{r.id}.png"
        core.write_image(ip, img)
        mp = None
        if r.mask is not None:
            mp = out / "masks" / f"{r.id}.png"
            core.write_mask(mp, prepare_mask(core.read_mask(r.mask), cfg.run.image_size))
        records.append(Record(r.id, ip, mp, r.split, r.tag))
    write_manifest(out / "manifest.tsv", records)


def stage_extract_edges(cfg: Config, out: Path, **_) -> None:
    man = _input_manifest(cfg)
    (out / "diagrams").mkdir(exist_ok=True)
    kept, failed = [], []
    for r in man.split("train"):
        try:
            d = edge_diagram(core.read_image(r.image), cfg, edgemap.sidecar_path(r.image))
        except ValueError as exc:
            failed.append(f"{r.id}\t{exc}")
            continue
        core.write_mask(out / "diagrams" / f"{r.id}.png", d)
        kept.append(r)
    write_manifest(out / "manifest.tsv", kept)
    (out / "failed.txt").write_text("".join(f + "\n" for f in failed))
    log.info("extract-edges: %d diagrams, %d failures", len(kept), len(failed))


def _load_diagrams(edges: Path):
    man = read_manifest(edges / "manifest.tsv")
    return man, [core.read_mask(edges / "diagrams" / f"{r.id}.png") for r in man.records]


def stage_train_vae(cfg: Config, out: Path, **_) -> None:
    edges = _upstream(cfg.run.edges_run, "edges_run", "manifest.tsv")
    _, diagrams = _load_diagrams(edges)
    cones = []
    for d in diagrams:
        try:
            cones.append(cone_mod.outline(cone_mod.extract_cone_profile(d)).astype(np.float64))
        except ValueError:
            continue
    model = vae_mod.train_cone_vae(cones, cfg.vae)
    vae_mod.save_vae(out / "vae.pt", model)
    _write_rows(out / "vae_log.tsv", model.log, ("epoch", "recon", "kl", "elbo_loss"))


def stage_synth_diagrams(cfg: Config, out: Path, **_) -> None:
    cone_model = None
    if cfg.run.dataset == "kidney":
        cone_model = vae_mod.load_vae(_upstream(cfg.run.vae_run, "vae_run", "vae.pt") / "vae.pt")
    drawn = sample_recipes(cfg, stage_rng(cfg.run.seed, "synth-diagrams"), cfg.run.n_diagrams, cone_model)
    rec.write_recipes(out / "recipes.jsonl", [r for r, _ in drawn])
    (out / "cones").mkdir(exist_ok=True)
    for k, (_, c) in enumerate(drawn):
        if c is not None:
            core.write_mask(out / "cones" / f"{k:05d}.png", c)


def _load_drawn(diagrams_run: Path):
    drawn = []
    for k, r in enumerate(rec.read_recipes(diagrams_run / "recipes.jsonl")):
        cp = diagrams_run / "cones" / f"{k:05d}.png"
        drawn.append((r, core.read_mask(cp) if cp.exists() else None))
    return drawn


def stage_train_gan(cfg: Config, out: Path, **_) -> None:
    edges = _upstream(cfg.run.edges_run, "edges_run", "manifest.tsv")
    man, diagrams = _load_diagrams(edges)
    images = [core.read_image(r.image) for r in man.records]
    train_and_select_gan(gan_pairs(diagrams, images, cfg.gan.image_size), cfg, out)


def stage_gen_dataset(cfg: Config, out: Path, until_plateau: bool = False, **_) -> None:
    gan_run = _upstream(cfg.run.gan_run, "gan_run", "generator.pt")
    drawn = _load_drawn(_upstream(cfg.run.diagrams_run, "diagrams_run", "recipes.jsonl"))
    bundle, _ = gan_mod.load_checkpoint(gan_run / "generator.pt")
    (out / "images").mkdir(exist_ok=True)
    (out / "masks").mkdir(exist_ok=True)
    records: list[Record] = []

    def emit(chunk, offset):
        for k, (x, m) in enumerate(render_pairs(bundle, chunk, cfg.gan.image_size), offset):
            sid = f"syn{k:05d}"
            ip, mp = out / "images" / f"{sid}.png", out / "masks" / f"{sid}.png"
            core.write_image(ip, x)
            core.write_mask(mp, m)
            records.append(Record(sid, ip, mp, "train", cfg.run.dataset))

    if not until_plateau:
        emit(drawn[:cfg.run.n_pairs], 0)
    else:
        val = [(x, m) for _, x, m in _labelled(_input_manifest(cfg).split("val"), "validation")]
        if not val:
            raise ValueError("--until-plateau needs labelled val records in run.manifest")
        best, stale, rows = -1.0, 0, []
        for start in range(0, len(drawn), cfg.run.plateau_chunk):
            emit(drawn[start:start + cfg.run.plateau_chunk], start)
            pairs = [(core.read_image(r.image), core.read_mask(r.mask)) for r in records]
            model = train_segmenter(pairs, cfg.seg, stage_rng(cfg.run.seed, "gen-dataset"), val_pairs=val)
            dice = model.log[-1]["val_dice"]
            rows.append({"pairs": len(records), "val_dice": dice})
            if dice > best + cfg.run.plateau_min_delta:
                best, stale = dice, 0
            else:
                stale += 1
                if stale >= cfg.run.plateau_patience:
                    break
        _write_rows(out / "plateau_log.tsv", rows, ("pairs", "val_dice"))
    write_manifest(out / "manifest.tsv", records)


def stage_train_seg(cfg: Config, out: Path, **_) -> None:
    ds = _upstream(cfg.run.dataset_run, "dataset_run", "manifest.tsv")
    man = read_manifest(ds / "manifest.tsv")
    pairs = [(x, m) for _, x, m in _labelled(man.records, "training")]
    model = train_segmenter(pairs, cfg.seg, stage_rng(cfg.run.seed, "train-seg"))
    save_segmenter(out / "model.pt", model)
    write_seg_log(out / "seg_log.jsonl", model)


def stage_finetune_seg(cfg: Config, out: Path, **_) -> None:
    src = _upstream(cfg.run.model_run, "model_run", "model.pt")
    man = _input_manifest(cfg)
    labelled = _labelled(man.split("finetune"), "fine-tune")
    model = fine_tune(load_segmenter(src / "model.pt"), [(x, m) for _, x, m in labelled], cfg.seg,
                      stage_rng(cfg.run.seed, "finetune-seg"),
                      labelled_ids=[s for s, _, _ in labelled], eval_ids=man.ids("eval"))
    save_segmenter(out / "model.pt", model)
    write_seg_log(out / "seg_log.jsonl", model)


def annotated_path(image_path: Path) -> Path:
    return image_path.with_name(image_path.stem + ".annotated.png")


def stage_extract_masks(cfg: Config, out: Path, debug_panels: bool = False, **_) -> None:
    man = _input_manifest(cfg)
    (out / "masks").mkdir(exist_ok=True)
    records, rejected = [], []
    for r in man.records:
        ann = annotated_path(r.image)
        if not ann.exists():
            records.append(r)
            continue
        panels = {} if debug_panels else None
        try:
            mask = mx.extract_gt_mask(core.read_image(ann), core.read_image(r.image), cfg.extract, panels)
        except ValueError as exc:
            rejected.append(f"{r.id}\t{exc}")
            continue
        finally:
            if panels:
                mx.write_panels(out / "panels", r.id, panels)
        mp = out / "masks" / f"{r.id}.png"
        core.write_mask(mp, mask)
        records.append(Record(r.id, r.image, mp, r.split, r.tag))
    write_manifest(out / "manifest.tsv", records)
    (out / "rejected.txt").write_text("".join(x + "\n" for x in rejected))


def stage_evaluate(cfg: Config, out: Path, **_) -> None:
    src = _upstream(cfg.run.model_run, "model_run", "model.pt")
    man = _input_manifest(cfg)
    items = _labelled(man.split("eval"), "evaluation")
    if not items:
        raise ValueError("manifest has no eval records")
    model = load_segmenter(src / "model.pt")
    report, preds = evaluate_model(model, items)
    (out / "pred").mkdir(exist_ok=True)
    for sid, p in preds.items():
        core.write_mask(out / "pred" / f"{sid}.png", p)
    write_report(out, report, title=f"evaluate {src.name}")


# end to end -------------------------------------------------------------------

def run_e2e_toy(cfg: Config, out: Path, **_) -> dict:
    """Toy corpus -> edges -> GAN -> synthetic pairs -> U-net -> eval, then fine-tune -> eval."""
    r = cfg.run
    timings = {}
    t0 = time.perf_counter()

    def tick(name):
        nonlocal t0
        now = time.perf_counter()
        timings[name] = round(now - t0, 2)
        t0 = now

    man = write_toy_corpus(stage_rng(r.seed, "gen-toy"), out / "data", r.image_size,
                           r.toy_train, r.toy_eval, r.toy_finetune)
    images = {rec_.id: prepare_image(core.read_image(rec_.image), cfg) for rec_ in man.records}
    masks = {rec_.id: core.read_mask(rec_.mask) for rec_ in man.records}
    tick("data")

    train_ids, diagrams = [], []
    for sid in man.ids("train"):
        try:
            diagrams.append(edge_diagram(images[sid], cfg))
            train_ids.append(sid)
        except ValueError:
            continue
    (out / "diagrams").mkdir(exist_ok=True)
    for sid, d in zip(train_ids, diagrams):
        core.write_mask(out / "diagrams" / f"{sid}.png", d)
    tick("edges")

    gan_dir = out / "gan"
    gan_dir.mkdir(exist_ok=True)
    bundle, gan_rows, epoch = train_and_select_gan(
        gan_pairs(diagrams, [images[s] for s in train_ids], cfg.gan.image_size), cfg, gan_dir)
    tick("gan")

    drawn = sample_recipes(cfg, stage_rng(r.seed, "synth-diagrams"), r.n_pairs)
    rec.write_recipes(out / "recipes.jsonl", [d for d, _ in drawn])
    synth = render_pairs(bundle, drawn, cfg.gan.image_size)
    tick("synthesis")

    model = train_segmenter(synth, cfg.seg, stage_rng(r.seed, "train-seg"))
    save_segmenter(out / "model_unsup.pt", model)
    write_seg_log(out / "seg_log_unsup.jsonl", model)
    tick("train_seg")

    eval_items = [(s, images[s], masks[s]) for s in man.ids("eval")]
    rep_u, _ = evaluate_model(model, eval_items)
    write_report(out, rep_u, "report_unsup", "unsupervised")

    ft_ids = man.ids("finetune")
    tuned = fine_tune(model, [(images[s], masks[s]) for s in ft_ids], cfg.seg,
                      stage_rng(r.seed, "finetune-seg"), labelled_ids=ft_ids, eval_ids=man.ids("eval"))
    save_segmenter(out / "model_semi.pt", tuned)
    write_seg_log(out / "seg_log_semi.jsonl", tuned)
    rep_s, _ = evaluate_model(tuned, eval_items)
    write_report(out, rep_s, "report_semi", "semi-supervised")
    tick("finetune_eval")

    summary = {"miou_unsup": rep_u.aggregates["miou"][0], "miou_semi": rep_s.aggregates["miou"][0],
               "gan_epoch": epoch, "n_diagrams": len(diagrams), "n_synthetic": len(synth)}
    summary["miou_gain"] = summary["miou_semi"] - summary["miou_unsup"]
    (out / "summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    # wall-clock times live apart from the reproducible artifacts
    (out / "timings.json").write_text(json.dumps(timings, indent=2) + "\n")
    return summary


def _write_rows(path: Path, rows, cols) -> None:
    with open(path, "w") as fh:
        fh.write("\t".join(cols) + "\n")
        for row in rows:
            fh.write("\t".join(repr(row[c]) if isinstance(row[c], float) else str(row[c]) for c in cols) + "\n")


RUNNERS = {
    "gen-toy": stage_gen_toy,
    "preprocess": stage_preprocess,
    "extract-edges": stage_extract_edges,
    "train-vae": stage_train_vae,
    "synth-diagrams": stage_synth_diagrams,
    "train-gan": stage_train_gan,
    "gen-dataset": stage_gen_dataset,
    "train-seg": stage_train_seg,
    "finetune-seg": stage_finetune_seg,
    "extract-masks": stage_extract_masks,
    "evaluate": stage_evaluate,
    "e2e-toy": run_e2e_toy,
}


def run_stage(stage: str, cfg: Config, debug_panels: bool = False, until_plateau: bool = False) -> Path:
    if stage not in RUNNERS:
        raise ValueError(f"unknown stage {stage!r}; choose from {', '.join(STAGES)}")
    set_determinism(cfg.run.seed)
    out = run_dir(cfg, stage)
    handler = logging.FileHandler(out / "stage.log", mode="w")
    handler.setFormatter(logging.Formatter("%(levelname)s %(name)s: %(message)s"))
    root = logging.getLogger()
    root.addHandler(handler)
    try:
        RUNNERS[stage](cfg, out, debug_panels=debug_panels, until_plateau=until_plateau)
    finally:
        root.removeHandler(handler)
        handler.close()
    return out
