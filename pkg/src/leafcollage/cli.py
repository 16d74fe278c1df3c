"""Command-line surface for the collage pipeline.

Four subcommands cover the workflow end to end: ``ingest`` builds a leaf
bank from annotated sources, ``generate`` renders a synthetic dataset,
``evaluate`` scores predicted label masks against ground truth, and
``inspect`` renders a boundary-overlay preview of one scene.

Options resolve in three layers: built-in defaults (for ``generate``, the
chosen preset), then the matching section of an INI config file passed via
--config, then explicit flags. Unknown config sections or keys are rejected
with every offender listed. Every resolved option is echoed to
``run_metadata.txt`` in the output directory. All human-readable output
goes to stderr; data lives in files. Exit code 0 means zero errors.
"""

from __future__ import annotations

import argparse
import configparser
import dataclasses
import sys
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import dataset_io, leafbank, metrics, synth
from .errors import ConfigurationError, LeafCollageError
from .raster import label_boundaries

OVERLAY_COLOR = (255, 0, 255)


@dataclass(frozen=True)
class _Opt:
    typ: str  # int | float | str | bool | optfloat
    default: object = None
    help: str = ""
    choices: tuple[str, ...] | None = None
    required: bool = False


_SHARED: dict[str, _Opt] = {
    "seed": _Opt("int", 0, "global random seed"),
    "workers": _Opt("int", 1, "worker processes (no effect on outputs)"),
    "out": _Opt("str", None, "output directory", required=True),
}

_TABLES: dict[str, dict[str, _Opt]] = {
    "ingest": {
        "src": _Opt("str", None, "directory of *_rgb.png / *_label.png pairs", required=True),
        "kind": _Opt(
            "str", "structured", "pipeline the bank feeds", choices=("structured", "naive")
        ),
        "subset_tag": _Opt("str", "custom", "tag recorded on every cutout"),
        "min_area": _Opt("int", 100, "discard leaves smaller than this many pixels"),
        "base_dist_frac": _Opt(
            "optfloat",
            "default",
            "max anchor distance from the plant center as a fraction of the "
            "source diagonal; 'none' disables, 'default' means 0.15 for "
            "structured banks and disabled for naive banks",
        ),
        "max_boundary_occlusion": _Opt(
            "float", 0.05, "discard leaves with more occluded boundary than this fraction"
        ),
        "prescale_longest_dim": _Opt(
            "int", 600, "longest side after prescaling (naive banks only)"
        ),
        **_SHARED,
    },
    "generate": {
        "kind": _Opt(
            "str", "structured", "collage procedure", choices=("structured", "naive")
        ),
        "preset": _Opt(
            "str", None, "structured parameter preset", choices=tuple(synth.PRESETS)
        ),
        "count": _Opt("int", 1, "number of scenes to generate"),
        "bank": _Opt("str", None, "leaf bank directory", required=True),
        "backgrounds": _Opt("str", None, "background image directory", required=True),
        "train_w": _Opt("int", help="canvas width (structured)"),
        "train_h": _Opt("int", help="canvas height (structured)"),
        "center_x": _Opt("float", help="plant center x (structured)"),
        "center_y": _Opt("float", help="plant center y (structured)"),
        "center_delta_w": _Opt("float", help="plant center box width (structured)"),
        "center_delta_h": _Opt("float", help="plant center box height (structured)"),
        "leaves_min": _Opt("int", help="minimum leaves per scene"),
        "leaves_max": _Opt("int", help="maximum leaves per scene"),
        "within_triad_mean": _Opt("float", help="mean within-triad angle step (structured)"),
        "within_triad_jitter": _Opt("float", help="within-triad step jitter (structured)"),
        "triad_offset_base": _Opt("float", help="triad-opening step base (structured)"),
        "triad_offset_jitter_base": _Opt(
            "float", help="triad-opening jitter base (structured)"
        ),
        "min_visible": _Opt("int", help="drop leaves with fewer visible pixels"),
        "order_by_area": _Opt("bool", help="place larger leaves first (structured)"),
        "canvas_w": _Opt("int", help="canvas width (naive)"),
        "canvas_h": _Opt("int", help="canvas height (naive)"),
        "scale_min": _Opt("float", help="minimum axis scale (naive)"),
        "scale_max": _Opt("float", help="maximum axis scale (naive)"),
        "prescale_longest_dim": _Opt("int", help="expected bank prescale side (naive)"),
        **_SHARED,
    },
    "evaluate": {
        "pred": _Opt("str", None, "directory of predicted *_label.png", required=True),
        "gt": _Opt("str", None, "directory of ground-truth *_label.png", required=True),
        **_SHARED,
    },
    "inspect": {
        "scene_dir": _Opt("str", None, "dataset directory holding the scene", required=True),
        "image_id": _Opt("str", None, "scene id, e.g. 00000", required=True),
        "seed": _SHARED["seed"],
        "workers": _SHARED["workers"],
        "out": _Opt("str", None, "output directory (defaults to the scene directory)"),
    },
}

# Generate keys owned by exactly one procedure; setting one under the other
# procedure is a configuration error, not a silent ignore.
_STRUCTURED_ONLY = (
    "preset",
    "train_w",
    "train_h",
    "center_x",
    "center_y",
    "center_delta_w",
    "center_delta_h",
    "within_triad_mean",
    "within_triad_jitter",
    "triad_offset_base",
    "triad_offset_jitter_base",
    "order_by_area",
)
_NAIVE_ONLY = ("canvas_w", "canvas_h", "scale_min", "scale_max", "prescale_longest_dim")


def _convert(opt: _Opt, raw: str):
    if opt.typ == "int":
        return int(raw)
    if opt.typ == "float":
        return float(raw)
    if opt.typ == "optfloat":
        lowered = raw.strip().lower()
        if lowered in ("none", "default"):
            return lowered
        return float(raw)
    if opt.typ == "bool":
        lowered = raw.strip().lower()
        if lowered in ("1", "true", "yes", "on"):
            return True
        if lowered in ("0", "false", "no", "off"):
            return False
        raise ValueError(f"{raw!r} is not a boolean")
    if opt.choices and raw not in opt.choices:
        raise ValueError(f"{raw!r} not one of {list(opt.choices)}")
    return raw


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="leafcollage",
        description="Synthetic leaf-collage dataset pipeline: bank building, "
        "scene generation, evaluation, and inspection.",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for command, table in _TABLES.items():
        p = sub.add_parser(command, help=f"{command} subcommand")
        p.add_argument("--config", default=None, help="INI config file with per-command sections")
        for key, opt in table.items():
            flag = "--" + key.replace("_", "-")
            if opt.typ == "bool":
                p.add_argument(flag, dest=key, action=argparse.BooleanOptionalAction, default=None)
            elif opt.typ == "int":
                p.add_argument(flag, dest=key, type=int, default=None, help=opt.help)
            elif opt.typ == "float":
                p.add_argument(flag, dest=key, type=float, default=None, help=opt.help)
            else:
                # str and optfloat stay raw; choices/parsing run during resolution
                # so config values and flags go through identical validation.
                p.add_argument(flag, dest=key, type=str, default=None, help=opt.help)
    return parser


def _load_config(path: str) -> configparser.ConfigParser:
    cp = configparser.ConfigParser(interpolation=None)
    try:
        with open(path, encoding="utf-8") as fh:
            cp.read_file(fh)
    except (OSError, configparser.Error) as exc:
        raise ConfigurationError(f"cannot read config {path}: {exc}") from exc
    problems = []
    for section in cp.sections():
        if section not in _TABLES:
            problems.append(f"[{section}]: unknown section")
            continue
        for key in cp[section]:
            if key not in _TABLES[section]:
                problems.append(f"[{section}] {key}: unknown key")
    if problems:
        raise ConfigurationError("invalid config: " + "; ".join(sorted(problems)))
    return cp


def _resolve(args: argparse.Namespace) -> dict:
    """Merge flags over config over defaults; report every problem at once."""
    command = args.command
    table = _TABLES[command]
    section: dict[str, str] = {}
    if args.config is not None:
        cp = _load_config(args.config)
        if cp.has_section(command):
            section = dict(cp[command])
    resolved: dict = {"command": command}
    problems: list[str] = []
    for key, opt in table.items():
        flag_value = getattr(args, key)
        raw = None
        if flag_value is not None:
            raw = flag_value
        elif key in section:
            raw = section[key]
        if raw is None:
            resolved[key] = opt.default
            continue
        try:
            resolved[key] = _convert(opt, raw) if isinstance(raw, str) else raw
        except ValueError as exc:
            problems.append(f"{key}: {exc}")
    missing = sorted(
        key for key, opt in table.items() if opt.required and resolved.get(key) is None
    )
    problems.extend(f"{key}: required option not set" for key in missing)
    if problems:
        raise ConfigurationError(f"invalid {command} options: " + "; ".join(problems))
    return resolved


def _say(message: str) -> None:
    print(message, file=sys.stderr)


def _echo_metadata(out_dir: Path, resolved: dict) -> None:
    printable = {k: ("none" if v is None else v) for k, v in resolved.items()}
    dataset_io.write_run_metadata(out_dir, printable)


# ---------------------------------------------------------------- commands


def _cmd_ingest(resolved: dict) -> int:
    kind = "aligned" if resolved["kind"] == "structured" else "prescaled"
    base_dist = resolved["base_dist_frac"]
    if base_dist == "default":
        base_dist = 0.15 if kind == "aligned" else None
    elif base_dist == "none":
        base_dist = None
    thresholds = leafbank.FilterThresholds(
        min_area=resolved["min_area"],
        base_dist_frac=base_dist,
        max_boundary_occlusion=resolved["max_boundary_occlusion"],
    )
    records = dataset_io.discover_sources(resolved["src"], subset_tag=resolved["subset_tag"])
    sources = [dataset_io.load_annotated(rec) for rec in records]
    bank, report = leafbank.build_bank(
        sources, kind, thresholds, prescale_longest_dim=resolved["prescale_longest_dim"]
    )
    out_dir = Path(resolved["out"])
    dataset_io.save_bank(bank, out_dir)
    resolved = dict(resolved, kind=kind, base_dist_frac=base_dist)
    _echo_metadata(out_dir, resolved)
    _say(f"kept {len(report.kept)} leaves from {len(sources)} sources into {out_dir}")
    for reason, count in sorted(report.counts_by_reason().items()):
        _say(f"discarded {reason}: {count}")
    return 0


def _structured_params(resolved: dict) -> synth.SubsetParams:
    wrong = sorted(k for k in _NAIVE_ONLY if resolved[k] is not None)
    if wrong:
        raise ConfigurationError(
            "options not applicable to structured generation: " + ", ".join(wrong)
        )
    preset = resolved["preset"] or "A1"
    base = synth.PRESETS[preset]
    resolved["preset"] = preset
    overrides = {}
    for key in (
        "train_w",
        "train_h",
        "center_delta_w",
        "center_delta_h",
        "leaves_min",
        "leaves_max",
        "within_triad_mean",
        "within_triad_jitter",
        "triad_offset_base",
        "triad_offset_jitter_base",
        "min_visible",
        "order_by_area",
    ):
        if resolved[key] is not None:
            overrides[key] = resolved[key]
    if resolved["center_x"] is not None or resolved["center_y"] is not None:
        cx = base.center[0] if resolved["center_x"] is None else resolved["center_x"]
        cy = base.center[1] if resolved["center_y"] is None else resolved["center_y"]
        overrides["center"] = (cx, cy)
    return dataclasses.replace(base, **overrides)


def _naive_params(resolved: dict) -> synth.NaiveParams:
    wrong = sorted(k for k in _STRUCTURED_ONLY if resolved[k] is not None)
    if wrong:
        raise ConfigurationError(
            "options not applicable to naive generation: " + ", ".join(wrong)
        )
    overrides = {
        key: resolved[key]
        for key in (
            "canvas_w",
            "canvas_h",
            "leaves_min",
            "leaves_max",
            "scale_min",
            "scale_max",
            "prescale_longest_dim",
            "min_visible",
        )
        if resolved[key] is not None
    }
    return synth.NaiveParams(**overrides)


def _cmd_generate(resolved: dict) -> int:
    kind = resolved["kind"]
    params = _structured_params(resolved) if kind == "structured" else _naive_params(resolved)
    out_dir = synth.generate_batch(
        kind,
        resolved["count"],
        params,
        resolved["bank"],
        resolved["backgrounds"],
        resolved["seed"],
        resolved["out"],
        workers=resolved["workers"],
    )
    echo = {
        k: v
        for k, v in resolved.items()
        if k in ("command", "kind", "preset", "count", "seed", "workers", "out", "bank", "backgrounds")
    }
    for f in dataclasses.fields(params):
        value = getattr(params, f.name)
        if f.name == "center":
            echo["center_x"], echo["center_y"] = value
        else:
            echo[f.name] = value
    _echo_metadata(out_dir, echo)
    _say(
        f"generated {resolved['count']} {kind} scenes into {out_dir} "
        f"(seed {resolved['seed']}, workers {resolved['workers']})"
    )
    for f in dataclasses.fields(params):
        _say(f"  {f.name} = {getattr(params, f.name)}")
    return 0


def _cmd_evaluate(resolved: dict) -> int:
    report = metrics.evaluate_dataset(resolved["pred"], resolved["gt"])
    out_dir = Path(resolved["out"])
    per_image, aggregate = dataset_io.write_metrics_csvs(report, out_dir)
    _echo_metadata(out_dir, resolved)
    agg = report.aggregates()
    for key in ("best_dice", "fgbg_dice", "diff_fg", "abs_diff_fg"):
        _say(f"{key} = {agg[key]}")
    _say(f"wrote {per_image} and {aggregate}")
    for image_id in report.missing_pred:
        _say(f"missing prediction for {image_id}")
    for image_id in report.missing_gt:
        _say(f"missing ground truth for {image_id}")
    if report.missing_pred or report.missing_gt:
        return 1
    return 0


def _cmd_inspect(resolved: dict) -> int:
    scene_dir = Path(resolved["scene_dir"])
    image_id = resolved["image_id"]
    paths = dataset_io.scene_paths(scene_dir, image_id)
    rgb = dataset_io.load_rgb(paths["rgb"])
    labels = dataset_io.load_labels(paths["label"])
    out_dir = Path(resolved["out"]) if resolved["out"] is not None else scene_dir
    out_dir.mkdir(parents=True, exist_ok=True)
    overlay = rgb.copy()
    edges = label_boundaries(labels)
    tint = np.asarray(OVERLAY_COLOR, dtype=np.uint16)
    overlay[edges] = ((overlay[edges].astype(np.uint16) + tint + 1) // 2).astype(np.uint8)
    overlay_path = out_dir / f"{image_id}_overlay.png"
    dataset_io.save_rgb(overlay_path, overlay)
    resolved = dict(resolved, out=str(out_dir))
    _echo_metadata(out_dir, resolved)
    _say(f"wrote {overlay_path}")
    return 0


_HANDLERS = {
    "ingest": _cmd_ingest,
    "generate": _cmd_generate,
    "evaluate": _cmd_evaluate,
    "inspect": _cmd_inspect,
}


def main(argv: list[str] | None = None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        resolved = _resolve(args)
        return _HANDLERS[args.command](resolved)
    except LeafCollageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
