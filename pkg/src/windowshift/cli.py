"""Command-line pipeline: analyze, augment, preprocess, report.

Every output is a pure function of (inputs, config, seed); the resolved
config is embedded in output manifests. Exit codes: 0 success, 2 config
error, 3 data error, 4 internal error.
"""

from __future__ import annotations

import argparse
import json
import sys
import traceback
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import augment as augmod
from . import metrics, rng, stats as statsmod
from .errors import WindowshiftError
from .npyio import read_npy, write_npy
from .stats import ForegroundStats, derive_base_window, derive_shift_bounds, normalization_params
from .volume_io import read_mask_labels, read_volume
from .windowing import apply_window, preprocess_inference, rescale_unit

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_INTERNAL = 4

VOLUME_EXTENSIONS = (".hvol", ".nii", ".nii.gz")

MANIFEST_SCHEMA_VERSION = 1


class ConfigError(Exception):
    pass


class DataError(Exception):
    pass


@dataclass
class RunConfig:
    command: str
    data: Path | None = None
    labels: Path | None = None
    stats: Path | None = None
    policy: Path | None = None
    pred: Path | None = None
    out: Path | None = None
    seed: int = 0
    epochs: int = 1
    p: float | None = None
    threads: int = 1
    threshold_hu: float = 20.0
    foreground: tuple[int, ...] = (1, 2)
    shift_classes: tuple[int, ...] = (1, 2)

    def require(self, *names):
        for name in names:
            if getattr(self, name) is None:
                raise ConfigError(f"{self.command}: --{name.replace('_', '-')} is required")


def _parse_labels_list(text) -> tuple[int, ...]:
    try:
        values = tuple(sorted({int(part) for part in str(text).split(",") if part.strip()}))
    except ValueError as exc:
        raise ConfigError(f"bad label list {text!r}: {exc}") from exc
    if not values:
        raise ConfigError(f"label list {text!r} is empty")
    return values


def _read_config_file(path: Path) -> dict:
    values = {}
    for lineno, line in enumerate(path.read_text().splitlines(), start=1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected KEY=VALUE, got {line!r}")
        key, _, value = line.partition("=")
        values[key.strip().lower().replace("-", "_")] = value.strip()
    return values


def build_config(args: argparse.Namespace) -> RunConfig:
    """Merge CLI flags over config-file values; flags win."""
    file_values = {}
    if getattr(args, "config", None):
        config_path = Path(args.config)
        if not config_path.is_file():
            raise ConfigError(f"config file not found: {config_path}")
        file_values = _read_config_file(config_path)

    def pick(name, default=None):
        flag = getattr(args, name, None)
        if flag is not None:
            return flag
        if name in file_values:
            return file_values[name]
        return default

    def pick_path(name, must_exist=True):
        value = pick(name)
        if value is None:
            return None
        path = Path(value)
        if must_exist and not path.exists():
            raise ConfigError(f"--{name.replace('_', '-')} path does not exist: {path}")
        return path

    try:
        cfg = RunConfig(
            command=args.command,
            data=pick_path("data"),
            labels=pick_path("labels"),
            stats=pick_path("stats", must_exist=(args.command != "analyze")),
            policy=pick_path("policy"),
            pred=pick_path("pred"),
            out=Path(pick("out")) if pick("out") is not None else None,
            seed=int(pick("seed", 0)),
            epochs=int(pick("epochs", 1)),
            p=float(pick("p")) if pick("p") is not None else None,
            threads=int(pick("threads", 1)),
            threshold_hu=float(pick("threshold_hu", metrics.DIFFICULT_THRESHOLD_HU)),
            foreground=_parse_labels_list(pick("foreground", "1,2")),
            shift_classes=_parse_labels_list(pick("shift_classes", "1,2")),
        )
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    if cfg.p is not None and not 0.0 <= cfg.p <= 1.0:
        raise ConfigError(f"--p must be in [0, 1], got {cfg.p}")
    if cfg.epochs < 1:
        raise ConfigError(f"--epochs must be >= 1, got {cfg.epochs}")
    if cfg.threads < 1:
        raise ConfigError(f"--threads must be >= 1, got {cfg.threads}")
    return cfg


# ---------------------------------------------------------------------------
# Dataset discovery
# ---------------------------------------------------------------------------

def list_volume_files(data_dir: Path) -> list[Path]:
    files = sorted(p for p in data_dir.iterdir()
                   if p.is_file() and any(p.name.endswith(ext) for ext in VOLUME_EXTENSIONS))
    return files


def _mask_path_for(volume_path: Path, labels_dir: Path | None) -> Path | None:
    if labels_dir is None:
        return None
    candidate = labels_dir / volume_path.name
    return candidate if candidate.exists() else None


def _load_pairs(cfg: RunConfig, mask_required: bool):
    """Yield (vol, mask) pairs in sorted file order; report unreadable files."""
    files = list_volume_files(cfg.data)
    if not files:
        raise DataError(f"no volumes found under {cfg.data}")

    def load(path: Path):
        mask_path = _mask_path_for(path, cfg.labels)
        if mask_required and mask_path is None:
            raise DataError(f"no mask for {path.name} under {cfg.labels}")
        return read_volume(path, mask_path=mask_path)

    failures = []
    loaded = 0
    if cfg.threads > 1:
        with ThreadPoolExecutor(max_workers=cfg.threads) as pool:
            results = pool.map(lambda p: _try_load(load, p), files)
            for path, result, error in results:
                if error is not None:
                    failures.append((path, error))
                    print(f"error: {path}: {error}", file=sys.stderr)
                else:
                    loaded += 1
                    yield result
    else:
        for path in files:
            path, result, error = _try_load(load, path)
            if error is not None:
                failures.append((path, error))
                print(f"error: {path}: {error}", file=sys.stderr)
            else:
                loaded += 1
                yield result
    if loaded == 0:
        raise DataError(f"all {len(failures)} volumes failed to load under {cfg.data}")


def _try_load(load, path):
    try:
        return path, load(path), None
    except (WindowshiftError, DataError, OSError, ValueError) as exc:
        return path, None, exc


# ---------------------------------------------------------------------------
# analyze
# ---------------------------------------------------------------------------

def cmd_analyze(cfg: RunConfig) -> int:
    cfg.require("data", "labels", "out")
    cfg.out.mkdir(parents=True, exist_ok=True)
    p = cfg.p if cfg.p is not None else 0.3

    stats = ForegroundStats()
    for vol, mask in _load_pairs(cfg, mask_required=True):
        stats.accumulate(vol, mask, cfg.foreground)
    if stats.n_foreground == 0:
        raise DataError("dataset contains no foreground voxels")

    window = derive_base_window(stats)
    bounds = derive_shift_bounds(stats, cfg.shift_classes, p)
    norm = normalization_params(stats, window)

    stats_path = cfg.stats if cfg.stats is not None else cfg.out / "stats.json"
    statsmod.save_stats(
        stats_path, stats,
        base_window=window, shift_policy=bounds, normalization=norm,
        foreground_labels=cfg.foreground, shift_classes=cfg.shift_classes,
    )

    hist_path = cfg.out / "foreground_histogram.csv"
    with open(hist_path, "w") as fh:
        fh.write("hu,count\n")
        for i, count in enumerate(stats.histogram.tolist()):
            if count:
                fh.write(f"{stats.hist_lo + i},{count}\n")
    medians_path = cfg.out / "per_volume_medians.csv"
    with open(medians_path, "w") as fh:
        fh.write("source_id,class_label,median_hu\n")
        for (sid, cls), median in stats.per_volume_medians.items():
            fh.write(f"{sid},{cls},{median!r}\n")

    print(f"analyzed {len(set(sid for sid, _ in stats.per_volume_medians))} volumes, "
          f"{stats.n_foreground} foreground voxels")
    print(f"base window: level={window.level:.2f} width={window.width:.2f}")
    print(f"shift bounds: [{bounds.level_low:.2f}, {bounds.level_high:.2f}] p={bounds.probability}")
    print(f"wrote {stats_path}, {hist_path}, {medians_path}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# augment / preprocess
# ---------------------------------------------------------------------------

def _load_pipeline_inputs(cfg: RunConfig):
    doc = statsmod.load_stats_document(cfg.stats)
    base = statsmod.window_from_document(doc)
    norm = statsmod.normalization_from_document(doc)
    return doc, base, norm


def _resolve_policy(cfg: RunConfig, doc: dict) -> augmod.AugmentationPolicy:
    if cfg.policy is not None:
        policy = augmod.load_policy(cfg.policy)
        if cfg.p is not None:
            specs = tuple(
                augmod.AugmentationSpec(s.kind, cfg.p, s.params) if s.kind == "window_shift" else s
                for s in policy.specs
            )
            policy = augmod.AugmentationPolicy(specs)
        return policy
    shift = statsmod.shift_policy_from_document(doc, probability=cfg.p)
    return augmod.make_window_shift_policy(shift)


def _liver_slices(vol, mask):
    liver = mask.label_for("liver", 1)
    return [z for z in range(vol.dims[2]) if np.any(mask.axial_slice(z) == liver)]


def _check_seed_collision(cfg: RunConfig, manifest_path: Path) -> None:
    if not manifest_path.exists():
        return
    try:
        previous = json.loads(manifest_path.read_text())
    except (OSError, json.JSONDecodeError):
        return
    if previous.get("config", {}).get("seed") == cfg.seed:
        warnings.warn(f"output {manifest_path.parent} already holds a run with seed {cfg.seed}; "
                      "files will be overwritten")


def cmd_augment(cfg: RunConfig) -> int:
    cfg.require("data", "labels", "stats", "out")
    cfg.out.mkdir(parents=True, exist_ok=True)
    doc, base, norm = _load_pipeline_inputs(cfg)
    policy = _resolve_policy(cfg, doc)
    manifest_path = cfg.out / "manifest.json"
    _check_seed_collision(cfg, manifest_path)

    volumes = list(_load_pairs(cfg, mask_required=True))

    def run_volume(job):
        epoch, (vol, mask) = job
        epoch_dir = cfg.out / f"e{epoch:03d}"
        epoch_dir.mkdir(parents=True, exist_ok=True)
        entries = []
        for z in _liver_slices(vol, mask):
            gen = rng.slice_stream(cfg.seed, vol.source_id, z, epoch)
            pixels, mask_slice, audit = augmod.apply_policy(
                vol.axial_slice(z), mask.axial_slice(z), policy, base, norm, gen)
            name = f"{vol.source_id}_z{z:04d}.npy"
            mask_name = f"{vol.source_id}_z{z:04d}_mask.npy"
            write_npy(epoch_dir / name, pixels)
            write_npy(epoch_dir / mask_name, mask_slice)
            entries.append({
                "source_id": vol.source_id,
                "slice_index": z,
                "epoch": epoch,
                "file": f"e{epoch:03d}/{name}",
                "mask_file": f"e{epoch:03d}/{mask_name}",
                "window": audit["window"],
                "window_shifted": audit["window_shifted"],
                "ops": audit["ops"],
            })
        return entries

    jobs = [(epoch, pair) for epoch in range(cfg.epochs) for pair in volumes]
    if cfg.threads > 1:
        with ThreadPoolExecutor(max_workers=cfg.threads) as pool:
            per_job = list(pool.map(run_volume, jobs))
    else:
        per_job = [run_volume(job) for job in jobs]

    slices = [entry for entries in per_job for entry in entries]
    slices.sort(key=lambda e: (e["epoch"], e["source_id"], e["slice_index"]))
    manifest = {
        "schema_version": MANIFEST_SCHEMA_VERSION,
        "config": {
            "command": "augment",
            "seed": cfg.seed,
            "epochs": cfg.epochs,
            "stats": str(cfg.stats),
            "policy": augmod.policy_document(policy),
            "base_window": {"level": base.level, "width": base.width},
            "normalization": {"mean": norm[0], "std": norm[1]},
        },
        "slices": slices,
    }
    manifest_path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    print(f"wrote {len(slices)} augmented slices over {cfg.epochs} epoch(s) to {cfg.out}")
    return EXIT_OK


def cmd_preprocess(cfg: RunConfig) -> int:
    cfg.require("data", "stats", "out")
    cfg.out.mkdir(parents=True, exist_ok=True)
    _, base, norm = _load_pipeline_inputs(cfg)

    entries = []
    for vol, mask in _load_pairs(cfg, mask_required=cfg.labels is not None):
        indices = _liver_slices(vol, mask) if mask is not None else range(vol.dims[2])
        for z in indices:
            pixels = preprocess_inference(vol.axial_slice(z), base, norm)
            name = f"{vol.source_id}_z{z:04d}.npy"
            write_npy(cfg.out / name, pixels)
            entry = {"source_id": vol.source_id, "slice_index": z, "file": name}
            if mask is not None:
                mask_name = f"{vol.source_id}_z{z:04d}_mask.npy"
                write_npy(cfg.out / mask_name, mask.axial_slice(z))
                entry["mask_file"] = mask_name
            entries.append(entry)

    manifest = {
        "schema_version": MANIFEST_SCHEMA_VERSION,
        "config": {
            "command": "preprocess",
            "stats": str(cfg.stats),
            "base_window": {"level": base.level, "width": base.width},
            "normalization": {"mean": norm[0], "std": norm[1]},
        },
        "slices": entries,
    }
    (cfg.out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    print(f"wrote {len(entries)} preprocessed slices to {cfg.out}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# report
# ---------------------------------------------------------------------------

def _unit_means(vol, mask, window, liver_label, tumor_label, alpha=None):
    unit = rescale_unit(apply_window(vol.voxels, window), window)
    if alpha is not None:
        unit = augmod.additive_brightness(unit, alpha)
    mean_liver = float(unit[mask.labels == liver_label].mean(dtype=np.float64))
    mean_tumor = float(unit[mask.labels == tumor_label].mean(dtype=np.float64))
    return mean_liver, mean_tumor, abs(mean_liver - mean_tumor)


def _find_prediction(pred_dir: Path, source_id: str) -> Path | None:
    for ext in VOLUME_EXTENSIONS:
        candidate = pred_dir / f"{source_id}{ext}"
        if candidate.exists():
            return candidate
    return None


def cmd_report(cfg: RunConfig) -> int:
    cfg.require("data", "labels", "stats", "out")
    cfg.out.mkdir(parents=True, exist_ok=True)
    doc = statsmod.load_stats_document(cfg.stats)
    base = statsmod.window_from_document(doc)
    bounds = statsmod.shift_policy_from_document(doc)

    pairs = list(_load_pairs(cfg, mask_required=True))

    contrast_report = metrics.identify_difficult(pairs, threshold_hu=cfg.threshold_hu)
    metrics.save_contrast_report(cfg.out / "contrast_report.json", contrast_report)
    metrics.write_contrast_csv(cfg.out / "contrast_report.csv", contrast_report)

    if cfg.pred is not None:
        dice_pairs = []
        for vol, mask in pairs:
            pred_path = _find_prediction(cfg.pred, vol.source_id)
            if pred_path is None:
                print(f"error: no prediction for {vol.source_id} under {cfg.pred}", file=sys.stderr)
                continue
            pred_labels = read_mask_labels(pred_path)
            if pred_labels.shape != vol.dims:
                print(f"error: {vol.source_id}: prediction dims {pred_labels.shape} != {vol.dims}",
                      file=sys.stderr)
                continue
            tumor = mask.label_for("tumor", 2)
            dice_pairs.append((vol.source_id, pred_labels == tumor, mask.labels == tumor))
        if dice_pairs:
            dice_report = metrics.evaluate_dice(dice_pairs)
            metrics.save_dice_report(cfg.out / "dice_report.json", dice_report)
            metrics.write_dice_csv(cfg.out / "dice_report.csv", dice_report)
            print(f"dice over {len(dice_pairs)} volumes: {dice_report.dice:.4f}")

    # Per-volume liver/tumor separation of unit-scaled means: base window,
    # window shifted toward the volume's liver median (clamped to the shift
    # bounds), and additive brightness of the equivalent magnitude.
    sep_path = cfg.out / "separation.csv"
    with open(sep_path, "w") as fh:
        fh.write("source_id,shifted_level,alpha,sep_base,sep_shifted,sep_additive\n")
        for vol, mask in pairs:
            liver = mask.label_for("liver", 1)
            tumor = mask.label_for("tumor", 2)
            if not (np.any(mask.labels == liver) and np.any(mask.labels == tumor)):
                continue
            liver_median = float(np.median(vol.voxels[mask.labels == liver]))
            level = min(max(liver_median, bounds.level_low), bounds.level_high)
            alpha = (base.level - level) / base.width
            _, _, sep_base = _unit_means(vol, mask, base, liver, tumor)
            _, _, sep_shift = _unit_means(vol, mask, base.shifted_to(level), liver, tumor)
            _, _, sep_add = _unit_means(vol, mask, base, liver, tumor, alpha=alpha)
            fh.write(f"{vol.source_id},{level!r},{alpha!r},{sep_base!r},{sep_shift!r},{sep_add!r}\n")

    n_difficult = len(contrast_report.difficult_ids())
    print(f"contrast report: {len(contrast_report.per_volume)} volumes, "
          f"{n_difficult} difficult (< {cfg.threshold_hu} HU)")
    print(f"wrote {cfg.out / 'contrast_report.json'}, {sep_path}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# pipeline worker (line-delimited JSON over stdio; used by host bindings)
# ---------------------------------------------------------------------------

def cmd_pipeline_worker(cfg: RunConfig) -> int:
    cfg.require("stats")
    doc, base, norm = _load_pipeline_inputs(cfg)
    policy = _resolve_policy(cfg, doc)
    out = sys.stdout
    out.write(json.dumps({"ok": True, "ready": True,
                          "window": {"level": base.level, "width": base.width}}) + "\n")
    out.flush()
    for line in sys.stdin:
        line = line.strip()
        if not line:
            continue
        try:
            req = json.loads(line)
            op = req["op"]
            if op == "shutdown":
                out.write(json.dumps({"ok": True, "bye": True}) + "\n")
                out.flush()
                break
            pixels = read_npy(req["slice"]).astype(np.float32)
            mask = read_npy(req["mask"]) if req.get("mask") else None
            if op == "augment":
                gen = rng.slice_stream(cfg.seed, req["source_id"], int(req["slice_index"]),
                                       int(req["epoch"]))
                result, out_mask, audit = augmod.apply_policy(pixels, mask, policy, base, norm, gen)
            elif op == "preprocess":
                result, out_mask, audit = preprocess_inference(pixels, base, norm), mask, None
            else:
                raise ValueError(f"unknown op {op!r}")
            write_npy(req["out"], result)
            if req.get("out_mask") and out_mask is not None:
                write_npy(req["out_mask"], out_mask)
            out.write(json.dumps({"ok": True, "audit": audit}) + "\n")
        except Exception as exc:  # keep serving; the client sees the error
            out.write(json.dumps({"ok": False, "error": f"{type(exc).__name__}: {exc}"}) + "\n")
        out.flush()
    return EXIT_OK


# ---------------------------------------------------------------------------
# entry point
# ---------------------------------------------------------------------------

def _add_common(sub: argparse.ArgumentParser) -> None:
    sub.add_argument("--config", help="KEY=VALUE config file; flags override it")
    sub.add_argument("--data", help="directory of volumes (.hvol, .nii, .nii.gz)")
    sub.add_argument("--labels", help="directory of masks named like their volumes")
    sub.add_argument("--stats", help="stats.json path (output of analyze, input elsewhere)")
    sub.add_argument("--policy", help="policy.json path")
    sub.add_argument("--pred", help="directory of predicted masks (report)")
    sub.add_argument("--out", help="output directory")
    sub.add_argument("--seed", type=int)
    sub.add_argument("--epochs", type=int)
    sub.add_argument("--p", type=float, help="window-shift gate probability")
    sub.add_argument("--threads", type=int)
    sub.add_argument("--threshold-hu", dest="threshold_hu", type=float)
    sub.add_argument("--foreground", help="comma list of foreground labels (default 1,2)")
    sub.add_argument("--shift-classes", dest="shift_classes",
                     help="comma list of classes pooled for shift bounds (default 1,2)")


def make_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="windowshift",
                                     description="CT windowing, window-shift augmentation, "
                                                 "dataset statistics, and segmentation reports")
    commands = parser.add_subparsers(dest="command", required=True)
    for name, func, description in (
        ("analyze", cmd_analyze, "scan a dataset and derive window statistics"),
        ("augment", cmd_augment, "emit augmented training slices with a full audit manifest"),
        ("preprocess", cmd_preprocess, "emit inference-ready slices under the base window"),
        ("report", cmd_report, "dice, contrast, difficult-case, and separation reports"),
        ("pipeline-worker", cmd_pipeline_worker, "serve the pipeline over stdio (for bindings)"),
    ):
        sub = commands.add_parser(name, help=description)
        _add_common(sub)
        sub.set_defaults(func=func)
    return parser


def main(argv=None) -> int:
    args = make_parser().parse_args(argv)
    try:
        cfg = build_config(args)
        return args.func(cfg)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DataError, WindowshiftError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except Exception:
        traceback.print_exc()
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
