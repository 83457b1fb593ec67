"""Command-line driver for the two-stage lumbar pipeline.

Subcommands::

    phantom                       write a synthetic dataset and its manifest
    localize {train,predict,eval} stage 1: box regressor, boxes.csv, sensitivity.csv
    segment {pretrain,train,predict}  stage 2: binary/multiclass U-Net, label volumes
    eval                          dice.csv, dice_table.csv, overlays and figures
    pipeline                      everything above in order

Settings come from built-in defaults, then the toy profile (``--toy``), then a
flat ``key = value`` file (``--config``), then command-line flags.  Every run
directory receives ``config.txt`` and ``seeds.txt`` describing the last
invocation.
"""

from __future__ import annotations

import argparse
import contextlib
import csv
import logging
import os
import re
import sys
import time
from dataclasses import asdict, dataclass, fields, replace

import numpy as np

from . import localizer as loc
from . import segmenter as seg
from .metrics import COLUMNS, report, write_sensitivity_csv
from .phantom import TOY_PHANTOM, PhantomConfig, gen_suite, ground_truth_box, read_manifest
from .localizer.voting import PLANES
from .postprocess import postprocess
from .volume import (
    AXIAL,
    CORONAL,
    SAGITTAL,
    BoundingBox,
    crop,
    extract_slice,
    load_labels,
    load_volume,
    save_volume,
)

log = logging.getLogger("lumbarseg")

THREADS_ENV = "LUMBARSEG_THREADS"

# background shows the image; L1..L5 are blended over it
PALETTE = np.array([
    [0, 0, 0], [255, 0, 0], [0, 255, 0], [0, 0, 255], [255, 255, 0], [255, 0, 255],
], dtype=np.float64)
OVERLAY_ALPHA = 0.5


class StageError(RuntimeError):
    def __init__(self, stage: str, message: str):
        super().__init__(message)
        self.stage = stage


@contextlib.contextmanager
def stage(name: str):
    try:
        yield
    except StageError:
        raise
    except (OSError, ValueError, RuntimeError, KeyError) as exc:
        raise StageError(name, f"{type(exc).__name__}: {exc}") from exc


# ---------------------------------------------------------------- configuration


@dataclass
class PipelineConfig:
    manifest: str = ""
    run_dir: str = "run"
    seed: int = 0
    toy: bool = False
    phantom_train: int = 20
    phantom_test: int = 10
    loc_features: int = 500
    loc_epochs: int = 1000
    loc_lr: float = 1e-3
    loc_momentum: float = 0.9
    loc_batch: int = 64
    loc_samples: int = 2000
    loc_pool: int = 4000
    loc_augment: int = 2
    loc_tolerance: int = 15
    loc_max_voxels: int = 10000
    seg_levels: int = 5
    seg_base: int = 32
    seg_epochs_binary: int = 3000
    seg_epochs_multi: int = 2000
    seg_lr: float = 1e-4
    seg_batch: int = 8
    seg_slices_per_crop: int = 0  # 0 means every sagittal slice
    seg_deltas: str = "5,10,15,20,25"
    seg_augment: bool = True
    seg_max_translation: float = 10.0
    close_radius: int = 2

    @property
    def deltas(self) -> tuple[int, ...]:
        return tuple(int(d) for d in self.seg_deltas.split(",") if d.strip())

    def augment(self) -> seg.AugmentConfig:
        return seg.AugmentConfig(delta_set=self.deltas, max_translation=self.seg_max_translation)

    def validate(self) -> None:
        checks = [
            (self.phantom_train >= 1 and self.phantom_test >= 1, "phantom_train/test >= 1"),
            (self.loc_features >= 1, "loc_features >= 1"),
            (self.loc_epochs >= 1 and self.seg_epochs_binary >= 0 and self.seg_epochs_multi >= 1,
             "epoch counts must be positive"),
            (self.loc_lr > 0 and self.seg_lr > 0, "learning rates must be positive"),
            (0 <= self.loc_momentum < 1, "loc_momentum in [0, 1)"),
            (self.loc_batch >= 1 and self.seg_batch >= 1, "batch sizes >= 1"),
            (self.loc_samples >= 1 and self.loc_pool >= 1 and self.loc_augment >= 0,
             "localiser sampling sizes"),
            (self.loc_tolerance >= 0, "loc_tolerance >= 0"),
            (1 <= self.seg_levels <= 7 and self.seg_base >= 1, "seg_levels in [1, 7], seg_base >= 1"),
            (self.seg_slices_per_crop >= 0, "seg_slices_per_crop >= 0"),
            (bool(self.deltas) and min(self.deltas) > 0, "seg_deltas must be positive integers"),
            (self.seg_max_translation >= 0, "seg_max_translation >= 0"),
            (self.close_radius >= 1, "close_radius >= 1"),
        ]
        for ok, what in checks:
            if not ok:
                raise ValueError(f"invalid configuration: {what}")

    def localizer_hyper(self) -> loc.LocalizerHyper:
        return loc.LocalizerHyper(
            epochs=self.loc_epochs, lr=self.loc_lr, momentum=self.loc_momentum,
            batch_size=self.loc_batch, samples_per_volume=self.loc_samples,
            pool_per_volume=self.loc_pool, n_augment=self.loc_augment, seed=self.seed,
        )

    def unet(self) -> seg.UNetConfig:
        return seg.UNetConfig(levels=self.seg_levels, base_channels=self.seg_base)

    def seg_hyper(self, epochs: int, seed: int) -> seg.SegHyper:
        return seg.SegHyper(epochs=epochs, lr=self.seg_lr, batch_size=self.seg_batch,
                            slices_per_crop=self.seg_slices_per_crop or None,
                            augment=self.seg_augment, seed=seed)

    def seeds(self) -> dict[str, int]:
        s = self.seed
        return {"phantom": s, "features": s, "localizer": s, "segment_binary": s + 1,
                "segment_multi": s + 2, "transfer": s + 3}


TOY_PROFILE = {
    "loc_epochs": 200, "loc_samples": 200, "loc_pool": 1000,
    "seg_levels": 3, "seg_base": 8, "seg_epochs_binary": 300, "seg_epochs_multi": 200,
    "seg_lr": 1e-3, "seg_slices_per_crop": 4, "seg_deltas": "1,2,3,4,5", "seg_max_translation": 2.0,
}

_FIELDS = {f.name: f for f in fields(PipelineConfig)}


def _convert(key: str, raw):
    if key not in _FIELDS:
        raise ValueError(f"unknown configuration key {key!r}")
    kind = type(getattr(PipelineConfig(), key))
    if not isinstance(raw, str):
        return kind(raw)
    if kind is bool:
        low = raw.strip().lower()
        if low not in ("1", "0", "true", "false", "yes", "no", "on", "off"):
            raise ValueError(f"{key}: expected a boolean, got {raw!r}")
        return low in ("1", "true", "yes", "on")
    try:
        return kind(raw.strip())
    except ValueError:
        raise ValueError(f"{key}: cannot parse {raw!r} as {kind.__name__}") from None


def read_config_file(path: str) -> dict:
    """``key = value`` lines; ``#`` starts a comment."""
    out = {}
    with open(path) as fh:
        for n, line in enumerate(fh, 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ValueError(f"{path}:{n}: expected 'key = value'")
            key, value = (s.strip() for s in line.split("=", 1))
            out[key] = _convert(key, value)
    return out


def write_config_file(cfg: PipelineConfig, path: str, command: str) -> None:
    with open(path, "w") as fh:
        fh.write(f"# lumbarseg {command}\n")
        for key, value in asdict(cfg).items():
            fh.write(f"{key} = {str(value).lower() if isinstance(value, bool) else value}\n")


def resolve_config(file_values: dict, flag_values: dict) -> PipelineConfig:
    merged = {k: _convert(k, v) for k, v in {**file_values, **flag_values}.items()}
    cfg = PipelineConfig()
    if merged.get("toy", False):
        cfg = replace(cfg, **TOY_PROFILE)
    cfg = replace(cfg, **merged)
    cfg.validate()
    return cfg


# ---------------------------------------------------------------- run directory


def _path(cfg, *parts):
    return os.path.join(cfg.run_dir, *parts)


def prepare_run(cfg: PipelineConfig, command: str) -> None:
    for sub in ("", "checkpoints", "predictions", "overlays", "figures"):
        os.makedirs(_path(cfg, sub), exist_ok=True)
    write_config_file(cfg, _path(cfg, "config.txt"), command)
    with open(_path(cfg, "seeds.txt"), "w") as fh:
        for name, value in cfg.seeds().items():
            fh.write(f"{name} = {value}\n")


def _cases(cfg, split=None):
    if not cfg.manifest:
        raise ValueError("no dataset manifest given (--manifest)")
    if not os.path.isfile(cfg.manifest):
        raise FileNotFoundError(f"manifest {cfg.manifest} does not exist")
    cases = read_manifest(cfg.manifest)
    return [c for c in cases if split is None or c.split == split]


def _require(path: str, what: str) -> str:
    if not os.path.isfile(path):
        raise FileNotFoundError(f"{what} {path} not found")
    return path


def write_boxes_csv(path: str, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["case", *PLANES])
        for cid, box in rows:
            w.writerow([cid, *box.as_tuple()])


def read_boxes_csv(path: str) -> dict[str, BoundingBox]:
    with open(_require(path, "boxes file")) as fh:
        rows = list(csv.reader(fh))
    if not rows or rows[0] != ["case", *PLANES]:
        raise ValueError(f"{path}: unexpected header")
    return {r[0]: BoundingBox(*map(int, r[1:])) for r in rows[1:]}


# ---------------------------------------------------------------- overlays and figures


def overlay_rgb(image: np.ndarray, labels: np.ndarray, window=(0.0, 1000.0)) -> np.ndarray:
    """Grey image with labels 1..5 alpha-blended in their palette colour."""
    grey = np.clip((image - window[0]) / (window[1] - window[0]), 0, 1) * 255.0
    rgb = np.repeat(grey[..., None], 3, axis=-1)
    fg = labels > 0
    rgb[fg] = (1 - OVERLAY_ALPHA) * rgb[fg] + OVERLAY_ALPHA * PALETTE[labels[fg]]
    return np.rint(rgb).astype(np.uint8)


def write_ppm(path: str, rgb: np.ndarray) -> None:
    h, w, _ = rgb.shape
    with open(path, "wb") as fh:
        fh.write(f"P6\n{w} {h}\n255\n".encode("ascii"))
        fh.write(np.ascontiguousarray(rgb, dtype=np.uint8).tobytes())


def read_ppm(path: str) -> np.ndarray:
    with open(path, "rb") as fh:
        buf = fh.read()
    # header tokens are whitespace separated; exactly one whitespace byte follows maxval
    m = re.match(rb"(P6)\s+(\d+)\s+(\d+)\s+(\d+)\s", buf)
    if m is None or m.group(4) != b"255":
        raise ValueError(f"{path}: not an 8-bit binary PPM")
    w, h = int(m.group(2)), int(m.group(3))
    return np.frombuffer(buf, dtype=np.uint8, count=h * w * 3, offset=m.end()).reshape(h, w, 3)


def write_overlays(out_dir: str, case_id: str, vol, lab) -> list[str]:
    paths = []
    for axis in (SAGITTAL, CORONAL, AXIAL):
        idx = vol.dims[(SAGITTAL, CORONAL, AXIAL).index(axis)] // 2
        img, labs = extract_slice(vol, axis, idx), extract_slice(lab, axis, idx)
        if axis != AXIAL:
            img, labs = img[::-1], labs[::-1]  # superior at the top
        path = os.path.join(out_dir, f"{case_id}_{axis}.ppm")
        write_ppm(path, overlay_rgb(img, labs))
        paths.append(path)
    return paths


def _pyplot():
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    return plt


def plot_dice(rep, path: str) -> None:
    plt = _pyplot()
    fig, ax = plt.subplots(figsize=(6, 3.5))
    ax.boxplot([rep.scores[:, i] for i in range(len(COLUMNS))])
    ax.set_xticks(range(1, len(COLUMNS) + 1), list(COLUMNS))
    ax.set_ylabel("Dice (%)")
    ax.set_ylim(min(50.0, float(rep.scores.min()) - 5), 101)
    ax.grid(axis="y", alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def plot_losses(curves: dict[str, list[float]], path: str) -> None:
    curves = {k: v for k, v in curves.items() if v}
    if not curves:
        return
    plt = _pyplot()
    fig, axes = plt.subplots(1, len(curves), figsize=(4 * len(curves), 3), squeeze=False)
    for ax, (name, values) in zip(axes[0], curves.items()):
        ax.semilogy(np.arange(1, len(values) + 1), values)
        ax.set_title(name)
        ax.set_xlabel("epoch")
    axes[0][0].set_ylabel("training loss")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


# ---------------------------------------------------------------- commands


def cmd_phantom(args, cfg: PipelineConfig) -> str:
    base = TOY_PHANTOM if cfg.toy else PhantomConfig()
    out = args.out or _path(cfg, "data")
    with stage("phantom"):
        path = gen_suite(cfg.phantom_train, cfg.phantom_test, base, cfg.seed, out)
    print(path)
    return path


def localize_train(cfg):
    with stage("localize"):
        train = []
        for case in _cases(cfg, "train"):
            vol, lab = case.load()
            train.append((vol, ground_truth_box(lab)))
        spec = loc.FeatureSpec.generate(cfg.loc_features, seed=cfg.seeds()["features"])
        model = loc.train_localizer(train, spec, cfg.localizer_hyper())
        loc.save_localizer(model, _path(cfg, "checkpoints", "localizer.ckpt"))
    return model


def localize_predict(cfg, split):
    with stage("localize"):
        model = loc.load_localizer(_require(_path(cfg, "checkpoints", "localizer.ckpt"),
                                            "localiser checkpoint"))
        rows = []
        for case in _cases(cfg, split):
            vol = load_volume(case.image_path)
            box, _ = loc.localize(model, vol, cfg.loc_tolerance, cfg.loc_max_voxels, seed=cfg.seed)
            rows.append((case.case_id, box))
        write_boxes_csv(_path(cfg, "boxes.csv"), rows)
    return rows


def localize_eval(cfg, split):
    with stage("localize"):
        boxes = read_boxes_csv(_path(cfg, "boxes.csv"))
        ids, values = [], []
        for case in _cases(cfg, split):
            if case.case_id not in boxes:
                raise KeyError(f"no box for case {case.case_id}")
            ids.append(case.case_id)
            values.append(loc.sensitivity(load_labels(case.label_path), boxes[case.case_id]))
        mean = write_sensitivity_csv(_path(cfg, "sensitivity.csv"), ids, values)
    print(f"mean sensitivity {mean:.4f}")
    return mean


def cmd_localize(args, cfg):
    if args.action == "train":
        localize_train(cfg)
    elif args.action == "predict":
        localize_predict(cfg, args.split)
    else:
        localize_eval(cfg, args.split)


def _training_crops(cfg):
    crops = []
    for case in _cases(cfg, "train"):
        vol, lab = case.load()
        box = ground_truth_box(lab)
        crops.append((crop(vol, box), crop(lab, box)))
    return crops


def segment_pretrain(cfg):
    with stage("segment"):
        aug = cfg.augment()
        hyper = cfg.seg_hyper(cfg.seg_epochs_binary, cfg.seeds()["segment_binary"])
        model = seg.train_segmenter(_training_crops(cfg), cfg.unet(), aug, seg.BINARY, hyper=hyper)
        seg.save_segmenter(model, _path(cfg, "checkpoints", "segmenter_binary.ckpt"))
    return model


def segment_train(cfg, scratch=False):
    with stage("segment"):
        init = None
        if not scratch:
            path = _path(cfg, "checkpoints", "segmenter_binary.ckpt")
            if not os.path.isfile(path):
                raise seg.MissingInitError(
                    f"no pretrained checkpoint at {path}; run 'segment pretrain' or pass --scratch")
            init = seg.transfer_weights(seg.load_segmenter(path), seed=cfg.seeds()["transfer"])
        aug = cfg.augment()
        hyper = cfg.seg_hyper(cfg.seg_epochs_multi, cfg.seeds()["segment_multi"])
        model = seg.train_segmenter(_training_crops(cfg), cfg.unet(), aug, seg.MULTICLASS,
                                    init=init, scratch=scratch, hyper=hyper)
        seg.save_segmenter(model, _path(cfg, "checkpoints", "segmenter.ckpt"))
    return model


def segment_predict(cfg, split, use_gt_boxes=False):
    with stage("segment"):
        model = seg.load_segmenter(_require(_path(cfg, "checkpoints", "segmenter.ckpt"),
                                            "segmenter checkpoint"))
        boxes = None if use_gt_boxes else read_boxes_csv(_path(cfg, "boxes.csv"))
        written = []
        for case in _cases(cfg, split):
            vol = load_volume(case.image_path)
            if use_gt_boxes:
                box = ground_truth_box(load_labels(case.label_path))
            elif case.case_id in boxes:
                box = boxes[case.case_id]
            else:
                raise KeyError(f"no box for case {case.case_id}")
            labels = seg.reinstate(seg.segment_crop(model, crop(vol, box)), box, vol.dims)
            labels = postprocess(labels, cfg.close_radius)
            path = _path(cfg, "predictions", f"{case.case_id}_labels.mhd")
            save_volume(labels, path)
            written.append(path)
    return written


def cmd_segment(args, cfg):
    if args.action == "pretrain":
        segment_pretrain(cfg)
    elif args.action == "train":
        segment_train(cfg, scratch=args.scratch)
    else:
        segment_predict(cfg, args.split, args.use_gt_boxes)


def evaluate(cfg, split):
    with stage("eval"):
        preds, gts, ids = [], [], []
        for case in _cases(cfg, split):
            pred = load_labels(_require(_path(cfg, "predictions", f"{case.case_id}_labels.mhd"),
                                        "prediction"))
            vol, gt = case.load()
            preds.append(pred)
            gts.append(gt)
            ids.append(case.case_id)
            write_overlays(_path(cfg, "overlays"), case.case_id, vol, pred)
        if not ids:
            raise ValueError(f"no {split} cases in the manifest")
        rep = report(preds, gts, ids)
        rep.write_long_csv(_path(cfg, "dice.csv"))
        rep.write_table_csv(_path(cfg, "dice_table.csv"))
        plot_dice(rep, _path(cfg, "figures", "dice_boxplot.png"))
    print(rep.summary())
    return rep


def cmd_eval(args, cfg):
    evaluate(cfg, args.split)


def _loss_curves(cfg):
    curves = {}
    for name, path, loader in (
        ("localiser (MSE, voxel^2)", "localizer.ckpt", loc.load_localizer),
        ("binary U-Net (CE)", "segmenter_binary.ckpt", seg.load_segmenter),
        ("multiclass U-Net (CE)", "segmenter.ckpt", seg.load_segmenter),
    ):
        full = _path(cfg, "checkpoints", path)
        if os.path.isfile(full):
            curves[name] = loader(full).losses
    return curves


def cmd_pipeline(args, cfg):
    if not cfg.manifest:
        with stage("phantom"):
            base = TOY_PHANTOM if cfg.toy else PhantomConfig()
            cfg.manifest = gen_suite(cfg.phantom_train, cfg.phantom_test, base, cfg.seed,
                                     _path(cfg, "data"))
        write_config_file(cfg, _path(cfg, "config.txt"), "pipeline")
    mean_sens = None
    if not args.use_gt_boxes:
        localize_train(cfg)
        localize_predict(cfg, "test")
        mean_sens = localize_eval(cfg, "test")
    if args.scratch:
        segment_train(cfg, scratch=True)
    else:
        segment_pretrain(cfg)
        segment_train(cfg)
    segment_predict(cfg, "test", args.use_gt_boxes)
    rep = evaluate(cfg, "test")
    with stage("eval"):
        plot_losses(_loss_curves(cfg), _path(cfg, "figures", "losses.png"))
    sens = "n/a (ground-truth boxes)" if mean_sens is None else f"{mean_sens:.4f}"
    print(f"summary: mean sensitivity {sens}; mean lumbar dice {rep.mean[-1]:.2f}; run {cfg.run_dir}")
    return rep


# ---------------------------------------------------------------- argument parsing


def _add_common(p):
    p.add_argument("--config", help="flat 'key = value' settings file")
    p.add_argument("--run", dest="run_dir", help="run directory (default: ./run)")
    p.add_argument("--manifest", help="dataset manifest written by 'phantom'")
    p.add_argument("--seed", type=int, help="global seed")
    p.add_argument("--toy", action="store_const", const=True, help="desk-scale profile")
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                   help="override any configuration key (repeatable)")
    for f in fields(PipelineConfig):
        if f.name in ("manifest", "run_dir", "seed", "toy"):
            continue
        p.add_argument("--" + f.name.replace("_", "-"), dest=f.name, metavar="V",
                       help=argparse.SUPPRESS)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="lumbarseg", description=__doc__.split("\n\n")[0],
                                     epilog=f"Thread count: set {THREADS_ENV} (default 1).")
    parser.add_argument("-v", "--verbose", action="store_true", help="log training progress")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("phantom", help="generate a synthetic dataset")
    _add_common(p)
    p.add_argument("--train", dest="phantom_train", type=int, help="number of training cases")
    p.add_argument("--test", dest="phantom_test", type=int, help="number of test cases")
    p.add_argument("--out", help="output directory (default: <run>/data)")

    p = sub.add_parser("localize", help="stage 1: bounding-box localisation")
    p.add_argument("action", choices=["train", "predict", "eval"])
    _add_common(p)
    p.add_argument("--split", default="test", choices=["train", "test"])

    p = sub.add_parser("segment", help="stage 2: U-Net segmentation")
    p.add_argument("action", choices=["pretrain", "train", "predict"])
    _add_common(p)
    p.add_argument("--split", default="test", choices=["train", "test"])
    p.add_argument("--scratch", action="store_true", help="train without binary pretraining")
    p.add_argument("--use-gt-boxes", action="store_true", help="crop with ground-truth boxes")

    p = sub.add_parser("eval", help="Dice tables, overlays and figures")
    _add_common(p)
    p.add_argument("--split", default="test", choices=["train", "test"])

    p = sub.add_parser("pipeline", help="run every stage end to end")
    _add_common(p)
    p.add_argument("--scratch", action="store_true", help="skip binary pretraining")
    p.add_argument("--use-gt-boxes", action="store_true", help="skip stage 1")
    return parser


def config_from_args(args) -> PipelineConfig:
    file_values = read_config_file(args.config) if args.config else {}
    flags = {}
    for key in _FIELDS:
        value = getattr(args, key, None)
        if value is not None:
            flags[key] = value
    for item in args.set:
        if "=" not in item:
            raise ValueError(f"--set expects KEY=VALUE, got {item!r}")
        key, value = (s.strip() for s in item.split("=", 1))
        flags[key] = value
    return resolve_config(file_values, flags)


COMMANDS = {"phantom": cmd_phantom, "localize": cmd_localize, "segment": cmd_segment,
            "eval": cmd_eval, "pipeline": cmd_pipeline}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(name)s %(message)s")
    try:
        with stage("config"):
            cfg = config_from_args(args)
            if args.command != "phantom":
                prepare_run(cfg, args.command)
        start = time.time()
        COMMANDS[args.command](args, cfg)
        log.info("%s finished in %.1f s", args.command, time.time() - start)
    except StageError as exc:
        print(f"lumbarseg: [{exc.stage}] {exc}", file=sys.stderr)
        return 1
    return 0
