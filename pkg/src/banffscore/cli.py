"""Batch command-line front-end.

Subcommands: ``score``, ``evaluate``, ``synth``, ``sensitivity``, ``render``.
Exit codes: 0 success, 2 input/validation error, 1 internal failure.
All outputs are computed in memory first and then written atomically
(write-to-temp + rename), so a failing run leaves no partial files.
"""

from __future__ import annotations

import argparse
import csv
import os
import sys
import tempfile
import traceback
from pathlib import Path
from typing import Dict, List, Optional, Tuple

from . import __version__
from .config import RunConfig, merge_config, parse_config_text
from .errors import BanffScoreError, EmptyMatrix
from .evaluation import accumulate, confusion_to_csv, summarize, summary_to_dict
from .ingest import (
    canonical_json_bytes,
    load_json_bytes,
    parse_detections,
    parse_ground_truth,
    parse_structures,
    read_scene,
    write_scene,
)
from .model import SectionScene
from .render import render_svg
from .scoring import report_from_dict, report_to_json, score_section, with_config_snapshot
from .synth import PerturbationSpec, SceneSpec, generate_scene, sensitivity_run

Output = Tuple[Path, bytes]


def _write_atomic(path: Path, data: bytes) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp_name = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as handle:
            handle.write(data)
        os.replace(tmp_name, path)
    except BaseException:
        try:
            os.unlink(tmp_name)
        except OSError:
            pass
        raise


def _write_all(outputs: List[Output]) -> None:
    for path, data in outputs:
        _write_atomic(path, data)


def _require_file(path: Path) -> Path:
    if not path.is_file():
        raise BanffScoreError(f"file not found: {path}")
    return path


def _load_run_config(args: argparse.Namespace) -> RunConfig:
    file_overrides = None
    if args.config is not None:
        file_overrides = parse_config_text(_require_file(Path(args.config)).read_text("utf-8"))
    flag_overrides = {
        "min_confidence": args.min_confidence,
        "cell_classes": tuple(
            c.strip() for c in args.classes.split(",") if c.strip()
        )
        if getattr(args, "classes", None)
        else None,
        "dedup_radius": args.dedup_radius,
        "seed": getattr(args, "seed", None),
        "section_id": getattr(args, "section_id", None),
    }
    return merge_config(file_overrides, flag_overrides)


def _provenance(config: RunConfig) -> dict:
    return {"tool_version": __version__, **config.snapshot()}


# ---------------------------------------------------------------------------
# subcommands

def _cmd_score(args: argparse.Namespace) -> int:
    config = _load_run_config(args)
    structures_path = _require_file(Path(args.structures))
    detections_path = _require_file(Path(args.detections))
    gt_path = _require_file(Path(args.gt)) if args.gt else None
    instances = parse_structures(structures_path.read_bytes(), config.structure_aliases)
    detections = parse_detections(
        detections_path.read_bytes(), min_confidence=0.0, classes=None, aliases=config.cell_aliases
    )
    section_id = config.section_id or structures_path.stem
    scene = SectionScene(section_id=section_id, instances=instances, detections=detections)
    report = score_section(scene, config.scoring_config())
    report = with_config_snapshot(report, _provenance(config))
    doc = report_to_json(report)
    if gt_path is not None:
        gt = parse_ground_truth(gt_path.read_bytes())
        merged = load_json_bytes(doc)
        merged["ground_truth"] = {"g": gt.g, "ptc": gt.ptc, "v": gt.v}
        doc = canonical_json_bytes(merged)
    out_dir = Path(args.out_dir)
    _write_all([(out_dir / f"{section_id}.score.json", doc)])
    return 0


def _read_manifest(path: Path) -> List[Tuple[Path, Path]]:
    rows: List[Tuple[Path, Path]] = []
    base = path.parent
    with path.open(newline="", encoding="utf-8") as handle:
        for i, row in enumerate(csv.reader(handle)):
            if not row or (row[0].strip().startswith("#")):
                continue
            if i == 0 and [c.strip().lower() for c in row[:2]] == ["report", "ground_truth"]:
                continue
            if len(row) < 2:
                raise BanffScoreError(f"manifest row {i + 1}: expected 'report,ground_truth'")
            rows.append((base / row[0].strip(), base / row[1].strip()))
    if not rows:
        raise BanffScoreError("manifest lists no report/ground-truth pairs")
    return rows


def _cmd_evaluate(args: argparse.Namespace) -> int:
    config = _load_run_config(args)
    manifest = _read_manifest(_require_file(Path(args.manifest)))
    pairs: Dict[str, list] = {"g": [], "ptc": [], "v": []}
    for report_path, gt_path in manifest:
        report = report_from_dict(load_json_bytes(_require_file(report_path).read_bytes()))
        gt = parse_ground_truth(_require_file(gt_path).read_bytes())
        for name in ("g", "ptc", "v"):
            pairs[name].append((report.grade(name), getattr(gt, name)))
    provenance = _provenance(config)
    comment = f"banffscore {__version__} rows=expert columns=predicted"
    outputs: List[Output] = []
    out_dir = Path(args.out_dir)
    summary_doc: dict = {"schema": "banffscore.evaluation/1", "config": provenance, "indicators": {}}
    for name in ("g", "ptc", "v"):
        matrix = accumulate(pairs[name], name)
        try:
            summary = summarize(matrix)
        except EmptyMatrix:
            summary = None
        summary_doc["indicators"][name] = summary_to_dict(matrix, summary)
        outputs.append((out_dir / f"confusion_{name}.csv", confusion_to_csv(matrix, comment)))
    outputs.append((out_dir / "summary.json", canonical_json_bytes(summary_doc)))
    _write_all(outputs)
    return 0


def _cmd_synth(args: argparse.Namespace) -> int:
    config = _load_run_config(args)
    spec = SceneSpec.from_dict(load_json_bytes(_require_file(Path(args.spec)).read_bytes()))
    if config.seed is not None:
        spec = SceneSpec.from_dict({**spec.to_dict(), "seed": config.seed})
    scene, gt = generate_scene(spec)
    scene.metadata["config"] = _provenance(config)
    gt_doc = {
        "type": "FeatureCollection",
        "features": [],
        "properties": {"section_id": gt.section_id},
    }
    for name in ("g", "ptc", "v"):
        value = getattr(gt, name)
        if value is not None:
            gt_doc["properties"][f"banff_{name}"] = value
    out_dir = Path(args.out_dir)
    _write_all(
        [
            (out_dir / f"{spec.section_id}.scene.json", write_scene(scene)),
            (out_dir / f"{spec.section_id}.gt.geojson", canonical_json_bytes(gt_doc)),
        ]
    )
    return 0


def _cmd_sensitivity(args: argparse.Namespace) -> int:
    config = _load_run_config(args)
    scene = read_scene(_require_file(Path(args.scene)).read_bytes())
    pspec = PerturbationSpec.from_dict(load_json_bytes(_require_file(Path(args.perturb)).read_bytes()))
    if config.seed is not None:
        pspec = PerturbationSpec.from_dict({**pspec.to_dict(), "seed": config.seed})
    report = sensitivity_run(
        scene, pspec, trials=args.trials, config=config.scoring_config(), workers=args.workers
    )
    provenance = _provenance(config)
    doc = {
        "schema": "banffscore.sensitivity/1",
        "config": provenance,
        "section_id": scene.section_id,
        "perturbation": pspec.to_dict(),
        **report.to_dict(),
    }
    comment = f"banffscore {__version__} section={scene.section_id} trials={report.trials}"
    out_dir = Path(args.out_dir)
    _write_all(
        [
            (out_dir / f"{scene.section_id}.sensitivity.json", canonical_json_bytes(doc)),
            (out_dir / f"{scene.section_id}.sensitivity.csv", report.to_csv(comment)),
        ]
    )
    return 0


def _cmd_render(args: argparse.Namespace) -> int:
    scene_path = _require_file(Path(args.scene))
    scene = read_scene(scene_path.read_bytes())
    report = None
    if args.report:
        report = report_from_dict(load_json_bytes(_require_file(Path(args.report)).read_bytes()))
    svg = render_svg(scene, report)
    out_dir = Path(args.out_dir)
    _write_all([(out_dir / f"{scene_path.stem}.svg", svg)])
    return 0


# ---------------------------------------------------------------------------
# parser wiring

def _add_config_flags(sub: argparse.ArgumentParser) -> None:
    sub.add_argument("--config", help="config file (key = value lines)")
    sub.add_argument("--out-dir", default=".", help="output directory (default: .)")
    sub.add_argument("--min-confidence", type=float, default=None, help="detection confidence floor")
    sub.add_argument("--classes", default=None, help="comma-separated cell classes to count")
    sub.add_argument("--dedup-radius", type=float, default=None, help="same-class suppression radius, px")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="banffscore",
        description="Banff lesion grading (g, ptc, v) from structure and cell annotations",
    )
    parser.add_argument("--version", action="version", version=f"banffscore {__version__}")
    subs = parser.add_subparsers(dest="command", required=True)

    score = subs.add_parser("score", help="grade one section from annotation files")
    score.add_argument("--structures", required=True, help="GeoJSON structure annotations")
    score.add_argument("--detections", required=True, help="detection JSON")
    score.add_argument("--gt", default=None, help="optional expert-grade GeoJSON to embed")
    score.add_argument("--section-id", default=None, help="section id (default: structures stem)")
    _add_config_flags(score)
    score.set_defaults(func=_cmd_score)

    evaluate = subs.add_parser("evaluate", help="confusion matrices from a report/gt manifest")
    evaluate.add_argument("--manifest", required=True, help="CSV of report,ground_truth path pairs")
    _add_config_flags(evaluate)
    evaluate.set_defaults(func=_cmd_evaluate)

    synth = subs.add_parser("synth", help="generate a synthetic scene from a spec")
    synth.add_argument("--spec", required=True, help="scene spec JSON")
    synth.add_argument("--seed", type=int, default=None, help="override the spec seed")
    _add_config_flags(synth)
    synth.set_defaults(func=_cmd_synth)

    sensitivity = subs.add_parser("sensitivity", help="grade-flip statistics under perturbation")
    sensitivity.add_argument("--scene", required=True, help="scene JSON (from synth or export)")
    sensitivity.add_argument("--perturb", required=True, help="perturbation spec JSON")
    sensitivity.add_argument("--trials", type=int, default=1000, help="number of trials")
    sensitivity.add_argument("--workers", type=int, default=1, help="parallel trial workers")
    sensitivity.add_argument("--seed", type=int, default=None, help="override the spec seed")
    _add_config_flags(sensitivity)
    sensitivity.set_defaults(func=_cmd_sensitivity)

    render = subs.add_parser("render", help="SVG overlay of a scene (and optional report)")
    render.add_argument("--scene", required=True, help="scene JSON")
    render.add_argument("--report", default=None, help="score report JSON for count labels")
    _add_config_flags(render)
    render.set_defaults(func=_cmd_render)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except BanffScoreError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except FileNotFoundError as exc:
        print(f"error: file not found: {exc.filename}", file=sys.stderr)
        return 2
    except Exception:  # pragma: no cover - internal failure path
        traceback.print_exc()
        return 1


def entrypoint() -> None:  # console-script shim
    raise SystemExit(main())
