"""Experiment harness: calibrate, attack, train, defend, metrics.

Every subcommand takes --config <json>, --out <dir>, --seed <int>, writes its
artifacts plus a report.json echoing the config, the seed, and a SHA-256 per
written file, and is byte-deterministic under a fixed seed. Exit codes:
0 success, 2 config error, 3 data/format error, 4 numeric divergence.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import sys
from pathlib import Path

import numpy as np

from . import defaults
from .attacks import AttackConfig, PatchArtifact, craft_defense_aware, craft_patch
from .calibration import CalibrationProfile, calibrate
from .errors import ConfigError, DataError, DivergenceError, FormatError, ZmaskError
from .fusion import FusionParams
from .heatmaps import LayerSetConfig, shallow_deep_heatmaps, tone_map
from .metrics import binary_iou, detection_rates, miou
from .netpbm import image_read, image_write
from .npyio import npy_read, npy_write
from .patching import apply_patch, sample_transform
from .pipeline import defend_image
from .roc import roc_and_cutoff
from .scenes import generate_scene
from .toymodel import ToySegNet, default_net, forward_trace, load_weights
from .traceio import iter_traces, load_manifest, validate_manifest
from .training import train_fusion

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_DIVERGED = 4

PALETTE_PATH = Path(__file__).parent / "data" / "palette.json"


def _load_config(path) -> dict:
    try:
        doc = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"{path}: cannot read config: {exc}") from exc
    if not isinstance(doc, dict):
        raise ConfigError(f"{path}: config must be a JSON object")
    return doc


def _write_json(path: Path, doc) -> None:
    path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


class Report:
    """Accumulates run metadata; written last so it can hash every artifact."""

    def __init__(self, out_dir: Path, command: str, config: dict, seed: int):
        self.out_dir = out_dir
        self.doc = {
            "command": command,
            "config": config,
            "seed": seed,
            "metrics": {},
            "artifacts": {},
        }

    def add_artifact(self, path: Path) -> None:
        self.doc["artifacts"][str(path.relative_to(self.out_dir))] = _sha256(path)

    def write(self) -> Path:
        path = self.out_dir / "report.json"
        _write_json(path, self.doc)
        return path


def _net_from_config(config: dict) -> ToySegNet:
    weights_dir = config.get("weights_dir")
    return load_weights(weights_dir) if weights_dir else default_net()


def _layer_config(config: dict) -> LayerSetConfig:
    ref = config.get("layer_config", "default")
    if ref == "default":
        return defaults.default_layer_config()
    return LayerSetConfig.load(ref)


def _profile(config: dict) -> CalibrationProfile:
    path = config.get("profile")
    if not path:
        raise ConfigError("config needs a 'profile' path")
    return CalibrationProfile.load(path)


def _fusion_params(config: dict) -> FusionParams:
    path = config.get("fusion_params")
    if not path:
        raise ConfigError("config needs a 'fusion_params' path")
    return FusionParams.load(path)


def _patch_hw(config: dict) -> tuple[int, int]:
    size = config.get("patch_size", "L")
    if isinstance(size, str):
        if size not in defaults.PATCH_SIZES:
            raise ConfigError(f"unknown patch size {size!r}; have {list(defaults.PATCH_SIZES)}")
        return defaults.PATCH_SIZES[size]
    return int(size[0]), int(size[1])


def _scene_pool(config: dict, default_base: int, default_count: int):
    spec = config.get("scenes", {})
    base = int(spec.get("seed_base", default_base))
    count = int(spec.get("count", default_count))
    if count < 1:
        raise ConfigError("scene count must be >= 1")
    return [generate_scene(base + i) for i in range(count)]


# ---------------------------------------------------------------------------
# subcommands


def cmd_calibrate(config: dict, out_dir: Path, seed: int) -> Report:
    report = Report(out_dir, "calibrate", config, seed)
    source = config.get("source", {})
    kind = source.get("type", "toy")
    if kind == "toy":
        count = int(source.get("count", 64))
        if count < 1:
            raise ConfigError("calibration needs at least one scene")
        base = int(source.get("seed_base", defaults.CALIBRATION_SEED_BASE))
        net = _net_from_config(config)
        traces = (forward_trace(net, generate_scene(base + i).image)[1] for i in range(count))
        profile = calibrate(traces, config.get("model_id", "toy-segnet-v1"),
                            config.get("dataset_id", f"toy-scenes-{base}-{base + count - 1}"))
    elif kind == "traces":
        manifest = load_manifest(source.get("manifest", ""))
        validate_manifest(manifest)
        layers = config.get("layers")
        traces = (trace for _, trace in iter_traces(manifest, layers))
        profile = calibrate(traces, manifest.model_id,
                            config.get("dataset_id", str(manifest.root)))
    else:
        raise ConfigError(f"unknown calibration source type {kind!r}")
    path = out_dir / "profile.json"
    profile.save(path)
    report.add_artifact(path)
    report.doc["metrics"]["image_count"] = profile.image_count
    report.doc["metrics"]["layer_channels"] = {
        name: stats.channels for name, stats in profile.layers.items()
    }
    return report


def _attack_mode(cli_mode: str) -> str:
    return {"plain": "plain", "beta": "beta_mixed",
            "adv-mask": "adv_mask", "adv-flag": "adv_flag"}[cli_mode]


def cmd_attack(config: dict, out_dir: Path, seed: int, mode: str, sweep: bool) -> Report:
    report = Report(out_dir, "attack", {**config, "mode": mode, "sweep": sweep}, seed)
    internal_mode = _attack_mode(mode)
    scenes = _scene_pool(config, defaults.ATTACK_SCENE_SEED_BASE, defaults.ATTACK_SCENES)
    net = _net_from_config(config)
    weights = config.get("loss_weights", defaults.LOSS_WEIGHTS)
    palette = None
    if float(weights.get("w_nps", 0.0)) > 0:
        palette_ref = config.get("palette", "default")
        palette_path = PALETTE_PATH if palette_ref == "default" else Path(palette_ref)
        palette = np.asarray(json.loads(palette_path.read_text()), dtype=np.float64)

    def make_cfg(**mix) -> AttackConfig:
        return AttackConfig(
            mode=internal_mode,
            patch_hw=_patch_hw(config),
            epochs=int(config.get("epochs", defaults.ATTACK_EPOCHS)),
            lr=float(config.get("lr", defaults.ATTACK_LR)),
            eot_samples=int(config.get("eot_samples", defaults.EOT_SAMPLES)),
            seed=seed,
            w_adv=float(weights.get("w_adv", 1.0)),
            w_nps=float(weights.get("w_nps", 0.0)),
            w_smooth=float(weights.get("w_smooth", 0.1)),
            palette=palette,
            **mix,
        )

    jobs: list[tuple[str, AttackConfig]] = []
    if internal_mode == "plain":
        jobs.append(("plain", make_cfg()))
    elif internal_mode == "beta_mixed":
        betas = config.get("betas", defaults.SWEEP_BETAS) if sweep else [config.get("beta", 1.0)]
        jobs.extend((f"beta{float(b):.2f}", make_cfg(beta=float(b))) for b in betas)
    else:
        alphas = config.get("alphas", defaults.SWEEP_ALPHAS) if sweep else [config.get("alpha", 0.0)]
        jobs.extend((f"{internal_mode}_alpha{float(a):.2f}", make_cfg(alpha=float(a)))
                    for a in alphas)

    needs_profile = internal_mode != "plain"
    profile = _profile(config) if needs_profile else None
    layer_cfg = _layer_config(config) if needs_profile else None
    fusion_params = _fusion_params(config) if internal_mode in ("adv_mask", "adv_flag") else None

    for tag, atk_cfg in jobs:
        if internal_mode in ("plain", "beta_mixed"):
            artifact = craft_patch(
                net, scenes, atk_cfg, profile=profile,
                shallow_layers=layer_cfg.shallow_layers if layer_cfg else None,
            )
        else:
            artifact = craft_defense_aware(net, profile, layer_cfg, fusion_params, scenes, atk_cfg)
        stem = out_dir / f"patch_{tag}"
        artifact.save(stem)
        report.add_artifact(out_dir / f"patch_{tag}.npy")
        report.add_artifact(out_dir / f"patch_{tag}.json")
    return report


def cmd_train(config: dict, out_dir: Path, seed: int) -> Report:
    report = Report(out_dir, "train", config, seed)
    profile = _profile(config)
    layer_cfg = _layer_config(config)
    net = _net_from_config(config)
    patches_dir = Path(config.get("patches", ""))
    patch_files = sorted(patches_dir.glob("patch_*.npy"))
    if not patch_files:
        raise ConfigError(f"{patches_dir}: no patch_*.npy artifacts found")
    patch_set = [PatchArtifact.load(p.with_suffix("")) for p in patch_files]
    scenes = _scene_pool(config, defaults.TRAIN_SCENE_SEED_BASE, 32)

    rng = np.random.default_rng(np.random.PCG64(seed))
    dataset = []
    positive_scores_input = []
    for patch in patch_set:
        for scene in scenes:
            spec = sample_transform(rng, scene.image.shape[1:], patch.values.shape[1:])
            patched = apply_patch(scene.image, patch.values, spec, layer_cfg.resize_dims)
            _, trace = forward_trace(net, patched.image)
            shallow, deep = shallow_deep_heatmaps(trace, profile, layer_cfg)
            dataset.append((shallow, deep, patched.footprint_resized))
            positive_scores_input.append((shallow, deep))

    epochs = int(config.get("epochs", defaults.FUSION_EPOCHS))
    lr = float(config.get("lr", defaults.FUSION_LR))
    params, loss_trace = train_fusion(dataset, epochs=epochs, lr=lr)

    from .fusion import fusion_forward, overactivation_score

    scores, labels = [], []
    for shallow, deep in positive_scores_input:
        soft = fusion_forward(shallow, deep, params)
        scores.append(overactivation_score(shallow, deep, soft))
        labels.append(1)
    for scene in scenes:
        _, trace = forward_trace(net, scene.image)
        shallow, deep = shallow_deep_heatmaps(trace, profile, layer_cfg)
        soft = fusion_forward(shallow, deep, params)
        scores.append(overactivation_score(shallow, deep, soft))
        labels.append(0)
    curve, lambda0 = roc_and_cutoff(scores, labels)
    params.lambda0 = lambda0

    params_path = out_dir / "fusion_params.json"
    params.save(params_path)
    report.add_artifact(params_path)

    log_path = out_dir / "training_log.csv"
    log_path.write_text("epoch,loss\n" + "".join(
        f"{i},{loss!r}\n" for i, loss in enumerate(loss_trace)
    ))
    report.add_artifact(log_path)

    roc_csv = out_dir / "roc.csv"
    roc_csv.write_text("threshold,fpr,tpr\n" + "".join(
        f"{t!r},{f!r},{p!r}\n" for t, f, p in curve.rows()
    ))
    report.add_artifact(roc_csv)
    roc_json = out_dir / "roc.json"
    _write_json(roc_json, {"auc": curve.auc, "lambda0": lambda0})
    report.add_artifact(roc_json)
    report.doc["metrics"]["auc"] = curve.auc
    report.doc["metrics"]["lambda0"] = lambda0
    report.doc["metrics"]["final_loss"] = loss_trace[-1] if loss_trace else None
    return report


def cmd_defend(config: dict, out_dir: Path, seed: int) -> Report:
    report = Report(out_dir, "defend", config, seed)
    profile = _profile(config)
    layer_cfg = _layer_config(config)
    params = _fusion_params(config)
    net = _net_from_config(config)
    input_ref = Path(config.get("input", ""))
    if input_ref.is_dir():
        files = sorted(p for p in input_ref.iterdir() if p.suffix in (".ppm", ".pgm"))
    elif input_ref.is_file():
        files = [input_ref]
    else:
        raise ConfigError(f"{input_ref}: input image or directory not found")
    if not files:
        raise DataError(f"{input_ref}: no .ppm/.pgm images to defend")
    gt_dir = config.get("gt_masks")
    records = []
    for path in files:
        image = image_read(path)
        result = defend_image(image, net, profile, layer_cfg, params)
        masked_path = out_dir / f"masked_{path.stem}.ppm"
        image_write(result.masked_image, masked_path)
        mask_path = out_dir / f"mask_{path.stem}.pgm"
        image_write(result.keep_mask[None], mask_path)
        soft_path = out_dir / f"soft_{path.stem}.pgm"
        image_write(tone_map(result.soft_mask)[None], soft_path)
        for artifact in (masked_path, mask_path, soft_path):
            report.add_artifact(artifact)
        record = {
            "image": path.name,
            "score": result.score,
            "flag": bool(result.flagged),
            "mask": mask_path.name,
            "masked_image": masked_path.name,
        }
        if gt_dir:
            gt_path = Path(gt_dir) / f"{path.stem}.npy"
            if gt_path.exists():
                footprint = npy_read(gt_path)
                record["mask_iou"] = binary_iou(1.0 - result.keep_mask, footprint)
        records.append(record)
    results_path = out_dir / "defend_results.json"
    _write_json(results_path, records)
    report.add_artifact(results_path)
    report.doc["metrics"]["images"] = len(records)
    report.doc["metrics"]["flagged"] = sum(r["flag"] for r in records)
    return report


def cmd_metrics(config: dict, out_dir: Path, seed: int) -> Report:
    report = Report(out_dir, "metrics", config, seed)
    preds_dir = Path(config.get("predictions", ""))
    labels_dir = Path(config.get("labels", ""))
    pred_files = sorted(preds_dir.glob("*.npy"))
    if not pred_files:
        raise ConfigError(f"{preds_dir}: no prediction arrays found")
    n_classes = int(config.get("n_classes", defaults.N_CLASSES))
    preds, labels, excludes = [], [], []
    masks_dir = config.get("patch_masks")
    keep_dir = config.get("keep_masks")
    mask_ious = []
    for pred_path in pred_files:
        label_path = labels_dir / pred_path.name
        if not label_path.exists():
            raise DataError(f"{label_path}: no label array for {pred_path.name}")
        preds.append(npy_read(pred_path).astype(np.int64))
        labels.append(npy_read(label_path).astype(np.int64))
        if masks_dir:
            mask_path = Path(masks_dir) / pred_path.name
            if not mask_path.exists():
                raise DataError(f"{mask_path}: no patch mask for {pred_path.name}")
            footprint = npy_read(mask_path)
            excludes.append(footprint)
            if keep_dir:
                keep_path = Path(keep_dir) / pred_path.name
                if keep_path.exists():
                    mask_ious.append(binary_iou(1.0 - npy_read(keep_path), footprint))
    value = miou(preds, labels, n_classes, excludes if masks_dir else None)
    report.doc["metrics"]["miou_outside_patch" if masks_dir else "miou"] = value
    if mask_ious:
        report.doc["metrics"]["mask_iou_mean"] = float(np.mean(mask_ious))
    scores_path = config.get("scores")
    if scores_path:
        rows = [line.split(",") for line in
                Path(scores_path).read_text().strip().splitlines()[1:]]
        scores = [float(r[0]) for r in rows]
        flags = [int(r[1]) for r in rows]
        lambda0 = config.get("lambda0")
        if lambda0 is None:
            raise ConfigError("scores given but no lambda0 to threshold them")
        tpr, fpr = detection_rates(scores, flags, float(lambda0))
        report.doc["metrics"]["tpr"] = tpr
        report.doc["metrics"]["fpr"] = fpr
    csv_path = out_dir / "metrics.csv"
    csv_path.write_text("name,value\n" + "".join(
        f"{k},{v!r}\n" for k, v in sorted(report.doc["metrics"].items())
    ))
    report.add_artifact(csv_path)
    return report


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="zmask", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)
    for name in ("calibrate", "train", "defend", "metrics"):
        p = sub.add_parser(name)
        p.add_argument("--config", required=True)
        p.add_argument("--out", required=True)
        p.add_argument("--seed", type=int, default=0)
    attack = sub.add_parser("attack")
    attack.add_argument("--config", required=True)
    attack.add_argument("--out", required=True)
    attack.add_argument("--seed", type=int, default=0)
    attack.add_argument("--mode", choices=("plain", "beta", "adv-mask", "adv-flag"),
                        default="plain")
    attack.add_argument("--sweep", action="store_true")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        config = _load_config(args.config)
        out_dir = Path(args.out)
        out_dir.mkdir(parents=True, exist_ok=True)
        if args.command == "calibrate":
            report = cmd_calibrate(config, out_dir, args.seed)
        elif args.command == "attack":
            report = cmd_attack(config, out_dir, args.seed, args.mode, args.sweep)
        elif args.command == "train":
            report = cmd_train(config, out_dir, args.seed)
        elif args.command == "defend":
            report = cmd_defend(config, out_dir, args.seed)
        else:
            report = cmd_metrics(config, out_dir, args.seed)
        report.write()
        return EXIT_OK
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DataError, FormatError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except DivergenceError as exc:
        print(f"diverged: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    except ZmaskError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
