"""Command-line entry point: tile, train, score, evaluate.

Runs are reproducible: every command prints a reproduce line holding the
hash of the effective configuration and the seed; identical lines on
identical inputs imply identical outputs. All files are written atomically
(temp + rename). Exit codes: 0 ok, 2 input error, 3 data/coverage error,
4 internal failure.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import os
import sys
from pathlib import Path

from .classifiers import KnnParams, MlpParams, SvmParams, TreeParams, load_model, model_id, save_model
from .errors import ConfigError, DegenerateSlideError, Her2ScoreError, InputError
from .evaluation import SyntheticCohortSpec, generate_synthetic_cohort, report_tables, run_lopo
from .features import DescriptorId, HistogramConfig, LbpParams
from .imaging import (
    STANDARD_TILE_SIZE,
    SUPPORTED_EXTENSIONS,
    TissueFilterConfig,
    load_image,
    load_patch,
    save_patch_png,
    tile_image,
    tissue_filter,
)
from .ioutil import atomic_write_text, canonical_json
from .manifest import load_manifest
from .pipeline import (
    CaseRecord,
    FeatureCache,
    ClassifierSpec,
    ClassMode,
    PipelineConfig,
    classify_slide_patches,
    occurrence_vector,
    predict_score,
    score_of,
    train_image_level,
    train_patient_level,
)

logger = logging.getLogger("her2score")

_DEFAULTS = {
    "descriptor": "hsv",
    "bins": 32,
    "normalize_histograms": True,
    "lbp_radius": 1.0,
    "image_classifier": "knn",
    "patient_classifier": "svm",
    "class_mode": "four",
    "include_noise_fraction": True,
    "seed": 0,
    "grid_folds": 3,
    "knn_k": 1,
    "mlp_hidden_units": 100,
    "mlp_max_epochs": 200,
    "svm_grid_c": "",
    "svm_grid_gamma": "",
    "svm_grid_kernels": "",
    "tile_size": STANDARD_TILE_SIZE,
    "background_luma_threshold": 220.0,
    "max_background_fraction": 0.75,
    "min_luma_stddev": 8.0,
    "threads": 0,  # 0 means machine parallelism
    "manifest": "",
    "model_dir": "",
    "output_dir": "",
    "synthetic_cases_per_class": 10,
    "synthetic_patches_per_slide": 40,
    "synthetic_curated_per_slide": 6,
    "synthetic_noise_rate": 0.1,
    "synthetic_patch_size": 250,
}


def load_run_config(path: str | None, overrides: dict) -> dict:
    """Flat key-value config; unknown keys are rejected; flags win."""
    config = dict(_DEFAULTS)
    if path:
        file_path = Path(path)
        if not file_path.is_file():
            raise ConfigError(f"config file not found: {file_path}")
        try:
            payload = json.loads(file_path.read_text())
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config file is not valid JSON: {exc}") from exc
        if not isinstance(payload, dict):
            raise ConfigError("config file must hold a flat JSON object")
        unknown = set(payload) - set(_DEFAULTS)
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        config.update(payload)
    for key, value in overrides.items():
        if value is not None:
            config[key] = value
    return config


def _parse_float_list(text: str) -> list[float]:
    return [float(part) for part in text.split(",") if part.strip()]


def _svm_grid_from_config(config: dict):
    c_values = _parse_float_list(str(config["svm_grid_c"]))
    gamma_values = _parse_float_list(str(config["svm_grid_gamma"]))
    kernels = [k.strip() for k in str(config["svm_grid_kernels"]).split(",") if k.strip()]
    if not (c_values or gamma_values or kernels):
        return None  # default exhaustive grid
    c_values = c_values or [2.0**e for e in range(-5, 17, 2)]
    gamma_values = gamma_values or [2.0**e for e in range(-15, 5, 2)]
    kernels = kernels or ["linear", "rbf"]
    return [
        SvmParams(c=c, gamma=g, kernel=k)
        for k in kernels
        for c in c_values
        for g in gamma_values
    ]


def _classifier_spec(kind: str, config: dict) -> ClassifierSpec:
    if kind == "knn":
        return ClassifierSpec("knn", KnnParams(k=int(config["knn_k"])))
    if kind == "tree":
        return ClassifierSpec("tree", TreeParams())
    if kind == "mlp":
        return ClassifierSpec(
            "mlp",
            MlpParams(
                hidden_units=int(config["mlp_hidden_units"]),
                max_epochs=int(config["mlp_max_epochs"]),
                seed=int(config["seed"]),
            ),
        )
    if kind == "svm":
        return ClassifierSpec("svm", _svm_grid_from_config(config))
    raise ConfigError(f"unknown classifier kind {kind!r}")


def pipeline_config(config: dict) -> PipelineConfig:
    return PipelineConfig(
        descriptor=DescriptorId(config["descriptor"]),
        histogram=HistogramConfig(int(config["bins"]), bool(config["normalize_histograms"])),
        lbp=LbpParams(radius=float(config["lbp_radius"])),
        image_level=_classifier_spec(str(config["image_classifier"]), config),
        patient_level=_classifier_spec(str(config["patient_classifier"]), config),
        class_mode=ClassMode(config["class_mode"]),
        include_noise_fraction=bool(config["include_noise_fraction"]),
        seed=int(config["seed"]),
        grid_folds=int(config["grid_folds"]),
    )


def tissue_config(config: dict) -> TissueFilterConfig:
    return TissueFilterConfig(
        background_luma_threshold=float(config["background_luma_threshold"]),
        max_background_fraction=float(config["max_background_fraction"]),
        min_luma_stddev=float(config["min_luma_stddev"]),
    )


def _threads(config: dict) -> int:
    requested = int(config["threads"])
    return requested if requested > 0 else (os.cpu_count() or 1)


def print_reproduce_line(config: dict) -> None:
    hashed = {k: v for k, v in config.items() if k != "threads"}
    digest = hashlib.sha256(canonical_json(hashed).encode("utf-8")).hexdigest()[:12]
    print(f"reproduce: config-sha256={digest} seed={config['seed']}")


def cmd_tile(args, config: dict) -> int:
    input_dir = Path(args.input_dir)
    output_dir = Path(args.output_dir)
    if not input_dir.is_dir():
        raise InputError(f"input directory not found: {input_dir}")
    output_dir.mkdir(parents=True, exist_ok=True)
    cfg = tissue_config(config)
    tile_size = int(config["tile_size"])
    report: dict[str, dict] = {}
    for path in sorted(input_dir.iterdir()):
        if path.suffix.lower() not in SUPPORTED_EXTENSIONS:
            continue
        slide_id = path.stem
        image = load_image(path)
        tiles = tile_image(image, tile_size, slide_id=slide_id)
        kept = 0
        for tile in tiles:
            if tissue_filter(tile, cfg):
                save_patch_png(tile, output_dir)
                kept += 1
        report[slide_id] = {"kept": kept, "rejected": len(tiles) - kept}
        logger.info("%s: kept %d of %d tiles", slide_id, kept, len(tiles))
    atomic_write_text(output_dir / "tiling_report.json", canonical_json(report) + "\n")
    print_reproduce_line(config)
    return 0


def cmd_train(args, config: dict) -> int:
    manifest_path = args.manifest or config["manifest"]
    if not manifest_path:
        raise ConfigError("train needs a manifest (--manifest or config key)")
    out_dir = Path(args.output or config["output_dir"] or "models")
    out_dir.mkdir(parents=True, exist_ok=True)
    cases = load_manifest(
        manifest_path,
        tile_size=int(config["tile_size"]),
        tissue_cfg=tissue_config(config),
        require_ground_truth=True,
    )
    pcfg = pipeline_config(config)
    cache = FeatureCache(pcfg, threads=_threads(config))
    image_trace: list = []
    image_model = train_image_level(cases, pcfg, cache, grid_trace=image_trace)
    occurrences = []
    truths = []
    for case in cases:
        counts = classify_slide_patches(image_model, case, cache)
        occurrences.append(occurrence_vector(counts, pcfg.include_noise_fraction, case.slide_id))
        truths.append(score_of(case.ground_truth, pcfg.class_mode))
    patient_trace: list = []
    patient_model = train_patient_level(occurrences, truths, pcfg, grid_trace=patient_trace)

    save_model(image_model, out_dir / "image_model.json")
    save_model(patient_model, out_dir / "patient_model.json")
    log = {
        "config": pcfg.echo(),
        "n_cases": len(cases),
        "n_curated": sum(len(c.curated) for c in cases),
        "image_model_id": model_id(image_model),
        "patient_model_id": model_id(patient_model),
        "image_grid_trace": image_trace,
        "patient_grid_trace": patient_trace,
    }
    atomic_write_text(out_dir / "training_log.json", canonical_json(log) + "\n")
    logger.info("models written to %s", out_dir)
    print_reproduce_line(config)
    return 0


def _case_from_input(args, config: dict) -> CaseRecord:
    if args.slide:
        path = Path(args.slide)
        image = load_image(path)
        tiles = tile_image(image, int(config["tile_size"]), slide_id=path.stem)
        cfg = tissue_config(config)
        patches = [t for t in tiles if tissue_filter(t, cfg)]
        return CaseRecord(patient_id=path.stem, slide_id=path.stem, all_patches=patches)
    patch_dir = Path(args.patches)
    if not patch_dir.is_dir():
        raise InputError(f"patch directory not found: {patch_dir}")
    files = sorted(p for p in patch_dir.iterdir() if p.suffix.lower() in SUPPORTED_EXTENSIONS)
    patches = [load_patch(p, slide_id=patch_dir.name) for p in files]
    return CaseRecord(patient_id=patch_dir.name, slide_id=patch_dir.name, all_patches=patches)


def cmd_score(args, config: dict) -> int:
    model_dir = Path(args.models or config["model_dir"] or "models")
    image_model = load_model(model_dir / "image_model.json")
    patient_model = load_model(model_dir / "patient_model.json")
    case = _case_from_input(args, config)
    report: dict = {
        "slide_id": case.slide_id,
        "image_model_id": model_id(image_model),
        "patient_model_id": model_id(patient_model),
    }
    exit_code = 0
    try:
        counts = classify_slide_patches(image_model, case)
        occurrence = occurrence_vector(
            counts,
            include_noise=patient_model.metadata["include_noise_fraction"],
            slide_id=case.slide_id,
        )
        score = predict_score(patient_model, occurrence)
        report.update(
            {
                "status": "scored",
                "score": score.value,
                "patch_counts": {cls.value: n for cls, n in counts.items()},
                "occurrence": {cls.value: frac for cls, frac in occurrence.fractions.items()},
                "total_patches": occurrence.total_patches,
            }
        )
    except DegenerateSlideError as exc:
        report.update({"status": "unscorable", "reason": str(exc)})
        exit_code = DegenerateSlideError.exit_code
    out_path = Path(args.output or config["output_dir"] or f"{case.slide_id}_score.json")
    if out_path.is_dir():
        out_path = out_path / f"{case.slide_id}_score.json"
    atomic_write_text(out_path, canonical_json(report) + "\n")
    print(f"{case.slide_id}: {report['status']}"
          + (f" ({report['score']})" if report["status"] == "scored" else ""))
    print_reproduce_line(config)
    return exit_code


def cmd_evaluate(args, config: dict) -> int:
    pcfg = pipeline_config(config)
    if args.synthetic:
        spec = SyntheticCohortSpec(
            cases_per_class=int(config["synthetic_cases_per_class"]),
            patches_per_slide=int(config["synthetic_patches_per_slide"]),
            curated_per_slide=int(config["synthetic_curated_per_slide"]),
            noise_rate=float(config["synthetic_noise_rate"]),
            patch_size=int(config["synthetic_patch_size"]),
            class_mode=pcfg.class_mode,
            seed=int(config["seed"]),
        )
        cases = generate_synthetic_cohort(spec)
    else:
        manifest_path = args.manifest or config["manifest"]
        if not manifest_path:
            raise ConfigError("evaluate needs a manifest or --synthetic")
        cases = load_manifest(
            manifest_path,
            tile_size=int(config["tile_size"]),
            tissue_cfg=tissue_config(config),
            require_ground_truth=True,
        )
    result = run_lopo(cases, pcfg, threads=_threads(config))
    out_dir = Path(args.output or config["output_dir"] or "evaluation")
    out_dir.mkdir(parents=True, exist_ok=True)
    atomic_write_text(out_dir / "lopo_result.json", result.to_json())
    tables = report_tables([result])
    atomic_write_text(out_dir / "image_level.csv", tables["image_level_csv"])
    atomic_write_text(out_dir / "patient_level.csv", tables["patient_level_csv"])
    atomic_write_text(out_dir / "tables.txt", tables["text"])
    sens = "n/a" if result.sensitivity is None else f"{result.sensitivity:.4f}"
    spec_str = "n/a" if result.specificity is None else f"{result.specificity:.4f}"
    print(
        f"lopo accuracy={result.accuracy:.4f} sensitivity={sens} specificity={spec_str} "
        f"slides={len(result.predictions)} skipped_folds={len(result.skipped)}"
    )
    print_reproduce_line(config)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="her2score",
        description="Segmentation-free HER-2 scoring: tile, train, score, evaluate.",
    )
    parser.add_argument("--config", help="flat JSON config file")
    parser.add_argument("--seed", type=int, help="override the config seed")
    parser.add_argument("--threads", type=int, help="parallelism bound (0 = machine)")
    parser.add_argument("--output", help="output file or directory")
    sub = parser.add_subparsers(dest="command", required=True)

    tile = sub.add_parser("tile", help="tile slide images into tissue patches")
    tile.add_argument("input_dir")
    tile.add_argument("output_dir")
    tile.add_argument("--tile-size", type=int, dest="tile_size")
    tile.add_argument("--background-luma", type=float, dest="background_luma_threshold")
    tile.add_argument("--max-background-fraction", type=float, dest="max_background_fraction")
    tile.add_argument("--min-luma-stddev", type=float, dest="min_luma_stddev")

    train = sub.add_parser("train", help="train image- and patient-level models")
    train.add_argument("--manifest")

    score = sub.add_parser("score", help="score one slide or patch directory")
    score.add_argument("--models")
    group = score.add_mutually_exclusive_group(required=True)
    group.add_argument("--slide")
    group.add_argument("--patches")

    evaluate = sub.add_parser("evaluate", help="leave-one-patient-out evaluation")
    evaluate.add_argument("--manifest")
    evaluate.add_argument("--synthetic", action="store_true")
    return parser


_COMMANDS = {"tile": cmd_tile, "train": cmd_train, "score": cmd_score, "evaluate": cmd_evaluate}


def main(argv=None) -> int:
    logging.basicConfig(stream=sys.stderr, level=logging.INFO, format="%(levelname)s %(message)s")
    parser = build_parser()
    args = parser.parse_args(argv)
    overrides = {
        "seed": args.seed,
        "threads": args.threads,
    }
    for key in ("tile_size", "background_luma_threshold", "max_background_fraction", "min_luma_stddev"):
        if hasattr(args, key):
            overrides[key] = getattr(args, key)
    try:
        config = load_run_config(args.config, overrides)
        return _COMMANDS[args.command](args, config)
    except Her2ScoreError as exc:
        logger.error("%s", exc)
        return exc.exit_code
    except Exception as exc:  # internal invariant failure
        logger.error("internal error: %s", exc)
        return 4


if __name__ == "__main__":
    raise SystemExit(main())
