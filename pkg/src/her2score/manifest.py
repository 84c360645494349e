"""Dataset manifest loading (CSV or JSON).

A manifest row describes one slide: its patient, a path to either a
pre-tiled patch directory or a raster image (which gets tiled and tissue
filtered on load), an optional clinical grade, and optional curated
patches given as path=label pairs. Relative paths resolve against the
manifest's own directory.
"""

from __future__ import annotations

import csv
import json
from pathlib import Path

from .errors import ManifestError
from .imaging import (
    STANDARD_TILE_SIZE,
    SUPPORTED_EXTENSIONS,
    TissueFilterConfig,
    load_image,
    load_patch,
    tile_image,
    tissue_filter,
)
from .pipeline import CaseRecord, CuratedPatch

_CASE_KEYS = {"patient_id", "slide_id", "path", "ground_truth", "curated"}
_GRADES = {"0", "1+", "2+", "3+", "0/1+"}
_PATCH_LABELS = _GRADES | {"noise"}


def _load_slide_patches(path: Path, slide_id: str, tile_size: int, cfg: TissueFilterConfig):
    if path.is_dir():
        files = sorted(p for p in path.iterdir() if p.suffix.lower() in SUPPORTED_EXTENSIONS)
        return [load_patch(p, slide_id=slide_id) for p in files]
    image = load_image(path)
    tiles = tile_image(image, tile_size, slide_id=slide_id)
    return [t for t in tiles if tissue_filter(t, cfg)]


def _parse_curated_entry(entry, base: Path, row_name: str) -> CuratedPatch:
    if isinstance(entry, dict):
        unknown = set(entry) - {"path", "label"}
        if unknown:
            raise ManifestError(f"{row_name}: unknown curated keys {sorted(unknown)}")
        rel, label = entry.get("path"), entry.get("label")
    else:
        text = str(entry)
        if "=" not in text:
            raise ManifestError(f"{row_name}: curated entry {text!r} is not path=label")
        rel, label = text.rsplit("=", 1)
    if not rel or not label:
        raise ManifestError(f"{row_name}: curated entry needs both path and label")
    label = label.strip().lower()
    if label not in _PATCH_LABELS:
        raise ManifestError(f"{row_name}: unknown curated label {label!r}")
    return CuratedPatch(patch=load_patch(base / rel), label=label)


def _case_from_row(row: dict, base: Path, row_name: str, tile_size: int,
                   cfg: TissueFilterConfig, require_ground_truth: bool) -> CaseRecord:
    unknown = set(row) - _CASE_KEYS
    if unknown:
        raise ManifestError(f"{row_name}: unknown keys {sorted(unknown)}")
    for key in ("patient_id", "slide_id", "path"):
        if not row.get(key):
            raise ManifestError(f"{row_name}: missing {key}")
    ground_truth = row.get("ground_truth") or None
    if ground_truth is not None:
        ground_truth = str(ground_truth).strip().lower()
        if ground_truth not in _GRADES:
            raise ManifestError(f"{row_name}: unknown ground_truth {ground_truth!r}")
    if require_ground_truth and ground_truth is None:
        raise ManifestError(f"{row_name}: missing ground_truth")
    slide_path = base / str(row["path"])
    if not slide_path.exists():
        raise ManifestError(f"{row_name}: path does not exist: {slide_path}")
    curated_raw = row.get("curated") or []
    if isinstance(curated_raw, str):
        curated_raw = [part for part in curated_raw.split(";") if part.strip()]
    curated = [_parse_curated_entry(entry, base, row_name) for entry in curated_raw]
    return CaseRecord(
        patient_id=str(row["patient_id"]),
        slide_id=str(row["slide_id"]),
        all_patches=_load_slide_patches(slide_path, str(row["slide_id"]), tile_size, cfg),
        ground_truth=ground_truth,
        curated=curated,
    )


def load_manifest(path, tile_size: int = STANDARD_TILE_SIZE,
                  tissue_cfg: TissueFilterConfig | None = None,
                  require_ground_truth: bool = False) -> list[CaseRecord]:
    """Read a JSON ({"cases": [...]}) or CSV manifest into CaseRecords."""
    path = Path(path)
    if not path.is_file():
        raise ManifestError(f"manifest not found: {path}")
    cfg = tissue_cfg or TissueFilterConfig()
    base = path.parent
    rows: list[dict]
    if path.suffix.lower() == ".json":
        try:
            payload = json.loads(path.read_text())
        except json.JSONDecodeError as exc:
            raise ManifestError(f"manifest is not valid JSON: {exc}") from exc
        if not isinstance(payload, dict) or "cases" not in payload:
            raise ManifestError('JSON manifest must be an object with a "cases" list')
        unknown = set(payload) - {"cases"}
        if unknown:
            raise ManifestError(f"manifest: unknown top-level keys {sorted(unknown)}")
        rows = payload["cases"]
    else:
        with path.open(newline="") as fh:
            rows = [dict(r) for r in csv.DictReader(fh)]
    cases = []
    seen_slides = set()
    for i, row in enumerate(rows):
        row_name = f"cases[{i}]"
        case = _case_from_row(row, base, row_name, tile_size, cfg, require_ground_truth)
        if case.slide_id in seen_slides:
            raise ManifestError(f"{row_name}: duplicate slide_id {case.slide_id!r}")
        seen_slides.add(case.slide_id)
        cases.append(case)
    return cases
