"""Command-line entry point: ``perspcam {gen,solve,eval,distortion,roundtrip}``.

Every option can also come from a flat ``key = value`` config file
(``--config``) or from an environment variable ``PERSPCAM_<KEY>`` (for
example ``PERSPCAM_SEED=7``). Precedence is command line, then environment,
then config file, then built-in defaults.

Exit codes: 0 success, 2 usage or invalid argument, 3 data or I/O error,
4 numerical failure. Machine-readable results go to files (floats at 9
significant digits); standard output carries a short human summary.
"""

from __future__ import annotations

import argparse
import configparser
import contextlib
import json
import logging
import math
import os
import shutil
import sys
import tempfile
import time
from pathlib import Path

import numpy as np

from . import plotting
from .body_model import Mesh, load_model, load_obj, make_default_model
from .errors import InvalidArgumentError, PerspcamError
from .metrics import Prediction, evaluate_dataset, fmt, read_predictions
from .projection import distortion_magnitude
from .rasterizer import read_pgm
from .scenegen import GenConfig, generate_dataset, read_manifest
from .solver import CameraSolveConfig, solve_camera

log = logging.getLogger("perspcam")

ENV_PREFIX = "PERSPCAM_"
EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 2, 3, 4
REQUIRED = object()


def _bool(text):
    if isinstance(text, bool):
        return text
    value = str(text).strip().lower()
    if value in ("1", "true", "yes", "on"):
        return True
    if value in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


COMMON = {
    "seed": (int, 0, "global random seed"),
    "threads": (int, 1, "worker threads (never changes outputs)"),
    "log_level": (str, "WARNING", "logging level"),
}

OPTIONS = {
    "gen": {
        "n": (int, 100, "number of scenes"),
        "size": (int, 256, "image width and height in pixels"),
        "near_fraction": (float, 0.8, "share of scenes in the near depth band"),
        "model": (str, None, "body model JSON (default: built-in capsule body)"),
        "out": (str, REQUIRED, "output directory"),
    },
    "solve": {
        "mesh": (str, REQUIRED, "posed body mesh (OBJ, pelvis at origin)"),
        "mask": (str, REQUIRED, "target silhouette (PGM)"),
        "tz": (float, REQUIRED, "initial pelvis depth in metres"),
        "refine_tz": (_bool, False, "also optimize the depth"),
        "sigma": (float, 2.0, "final blur in pixels"),
        "max_iters": (int, 300, "iteration budget"),
        "out": (str, REQUIRED, "result JSON path"),
    },
    "eval": {
        "manifest": (str, REQUIRED, "dataset manifest.jsonl"),
        "predictions": (str, REQUIRED, "predictions JSON-lines file"),
        "model": (str, None, "body model JSON"),
        "out": (str, REQUIRED, "report directory"),
    },
    "distortion": {
        "model": (str, None, "body model JSON"),
        "tz_min": (float, 0.3, "smallest depth"),
        "tz_max": (float, 10.0, "largest depth"),
        "points": (int, 30, "grid points (log-spaced)"),
        "out": (str, REQUIRED, "report directory"),
    },
    "roundtrip": {
        "n": (int, 20, "number of scenes"),
        "size": (int, 256, "image width and height in pixels"),
        "refine_tz": (_bool, False, "also optimize the depth"),
        "sigma": (float, 2.0, "final blur in pixels"),
        "max_iters": (int, 300, "iteration budget per scene"),
        "model": (str, None, "body model JSON"),
        "out": (str, REQUIRED, "report directory"),
    },
}

ALL_KEYS = set(COMMON) | {k for opts in OPTIONS.values() for k in opts}


class UsageError(Exception):
    pass


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="perspcam", description="Perspective camera recovery for close-range human bodies.")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, opts in OPTIONS.items():
        p = sub.add_parser(name, argument_default=argparse.SUPPRESS)
        p.add_argument("--config", help="flat key = value config file")
        for key, (kind, default, help_text) in {**COMMON, **opts}.items():
            flag = "--" + key.replace("_", "-")
            if kind is _bool:
                p.add_argument(flag, dest=key, action="store_const", const=True, help=help_text)
                p.add_argument("--no-" + key.replace("_", "-"), dest=key, action="store_const",
                               const=False, help=argparse.SUPPRESS)
            else:
                shown = "required" if default is REQUIRED else f"default: {default}"
                p.add_argument(flag, dest=key, metavar=key.upper(), help=f"{help_text} ({shown})")
    return parser


def _read_config(path) -> dict:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise UsageError(f"config: cannot read {path}: {exc}") from None
    parser = configparser.ConfigParser(interpolation=None, comment_prefixes=("#", ";"))
    try:
        parser.read_string("[run]\n" + text, source=str(path))
    except configparser.Error as exc:
        raise UsageError(f"config {path}: {exc}") from None
    out = {}
    for key, value in parser["run"].items():
        norm = key.strip().replace("-", "_")
        if norm not in ALL_KEYS:
            raise UsageError(f"config {path}: unknown key {key!r}")
        out[norm] = value
    return out


def resolve_options(command: str, cli: dict, environ=None) -> dict:
    """Merge defaults, config file, environment and command-line values, then validate."""
    environ = os.environ if environ is None else environ
    table = {**COMMON, **OPTIONS[command]}
    cli = dict(cli)
    config_path = cli.pop("config", None) or environ.get(ENV_PREFIX + "CONFIG")
    layers = [("config", _read_config(config_path) if config_path else {})]
    layers.append(("env", {k: environ[ENV_PREFIX + k.upper()] for k in table
                           if ENV_PREFIX + k.upper() in environ}))
    layers.append(("argument", cli))

    resolved = {}
    for key, (kind, default, _) in table.items():
        value, source = default, "default"
        for name, layer in layers:
            if key in layer:
                value, source = layer[key], name
        if value is REQUIRED:
            raise UsageError(f"{command}.{key}: required (pass --{key.replace('_', '-')})")
        if value is not None and source != "default":
            try:
                value = kind(value)
            except (TypeError, ValueError) as exc:
                raise UsageError(f"{command}.{key}: invalid value {value!r} from {source}: {exc}") \
                    from None
        resolved[key] = value
    if resolved["threads"] < 1:
        raise UsageError(f"{command}.threads: must be >= 1, got {resolved['threads']}")
    level = str(resolved["log_level"]).upper()
    if not isinstance(logging.getLevelName(level), int):
        raise UsageError(f"{command}.log_level: unknown level {resolved['log_level']!r}")
    resolved["log_level"] = level
    return resolved


# --- output helpers ------------------------------------------------------------

def rounded(obj):
    """Recursively round floats to 9 significant digits for file output."""
    if isinstance(obj, dict):
        return {k: rounded(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [rounded(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return rounded(obj.tolist())
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (float, np.floating)):
        return float(fmt(obj)) if math.isfinite(obj) else None
    if isinstance(obj, np.integer):
        return int(obj)
    return obj


def dump_json(obj, path) -> None:
    Path(path).write_text(json.dumps(rounded(obj), indent=1, sort_keys=True) + "\n")


@contextlib.contextmanager
def staged_dir(out_dir):
    """Yield a scratch directory whose contents move into ``out_dir`` on success.

    On any error the scratch directory is deleted, so a failed run leaves no
    partial files behind.
    """
    out = Path(out_dir)
    parent = out.parent
    if not parent.is_dir():
        raise OSError(f"parent directory {parent} does not exist")
    stage = Path(tempfile.mkdtemp(prefix=f".{out.name}.", dir=parent))
    try:
        yield stage
        out.mkdir(exist_ok=True)
        for item in sorted(stage.iterdir()):
            dest = out / item.name
            if dest.is_dir() and not dest.is_symlink():
                shutil.rmtree(dest)
            os.replace(item, dest)
    finally:
        shutil.rmtree(stage, ignore_errors=True)


def _write_file_atomic(path, writer) -> None:
    path = Path(path)
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", dir=path.parent)
    os.close(fd)
    try:
        writer(tmp)
        os.replace(tmp, path)
    finally:
        if os.path.exists(tmp):
            os.unlink(tmp)


def _load_model(path):
    if path:
        return load_model(path), {"kind": "file", "path": str(path)}
    return make_default_model(), {"kind": "default", "segments": 8, "rings": 4}


# --- subcommands ---------------------------------------------------------------

def cmd_gen(opts: dict) -> int:
    model, info = _load_model(opts["model"])
    cfg = GenConfig(n_records=opts["n"], global_seed=opts["seed"], image_size=opts["size"],
                    near_fraction=opts["near_fraction"])
    with staged_dir(opts["out"]) as stage:
        header = generate_dataset(cfg, model, stage, threads=opts["threads"], model_info=info)
        _, records = read_manifest(stage / "manifest.jsonl")
        plotting.plot_tz_histogram([r.translation.tz for r in records], stage / "tz_hist.png",
                                   cfg.near_band)
    print(f"wrote {header['n_written']} scenes to {opts['out']}"
          f" ({len(header['skipped'])} skipped)")
    return EXIT_OK


def _solver_config(opts) -> CameraSolveConfig:
    return CameraSolveConfig(sigma_px=opts["sigma"], max_iters=opts["max_iters"],
                             optimize_tz=opts["refine_tz"])


def cmd_solve(opts: dict) -> int:
    verts, faces = load_obj(opts["mesh"])
    if len(faces) == 0:
        raise InvalidArgumentError(f"{opts['mesh']}: mesh has no faces")
    mesh = Mesh(verts, faces, np.zeros((1, 3)))
    target = read_pgm(opts["mask"])
    start = time.perf_counter()
    result = solve_camera(mesh, target, opts["tz"], _solver_config(opts))
    doc = result.to_json()
    _write_file_atomic(opts["out"], lambda tmp: dump_json(doc, tmp))
    print(f"f = {result.f_px:.2f} px, T = ({result.tx:.4f}, {result.ty:.4f}, {result.tz:.4f}) m, "
          f"soft IoU {result.soft_iou:.4f}, {result.iters_used} iterations, "
          f"{time.perf_counter() - start:.1f} s")
    return EXIT_OK


def _summary_line(report) -> str:
    agg = report.aggregates
    return (f"{len(report.rows)} scored, {len(report.missing)} missing | median E_f "
            f"{agg['e_f']['median']:.4f}, median E_Txy {agg['e_txy']['median']:.4f} m, "
            f"median mIoU {agg['miou_pct']['median']:.2f}%")


def _report_figures(report, records, stage, preds) -> None:
    by_id = {r.id: r for r in records}
    scored = [by_id[row["id"]] for row in report.rows]
    plotting.plot_metric_report(
        report.rows, stage / "metrics.png",
        tz=[r.translation.tz for r in scored],
        f_gt=[r.camera.focal_px for r in scored],
        f_pred=[preds[r.id].f_px for r in scored],
    )


def cmd_eval(opts: dict) -> int:
    model, _ = _load_model(opts["model"])
    manifest = Path(opts["manifest"])
    _, records = read_manifest(manifest)
    preds = read_predictions(opts["predictions"])
    with staged_dir(opts["out"]) as stage:
        report = evaluate_dataset(records, preds, model, mask_root=manifest.parent,
                                  threads=opts["threads"])
        report.write(stage)
        _report_figures(report, records, stage, preds)
    print(_summary_line(report))
    return EXIT_OK


def distortion_curve(model, tz_grid) -> np.ndarray:
    mesh = model_rest_mesh(model)
    return np.array([distortion_magnitude(mesh.vertices, tz) for tz in tz_grid])


def model_rest_mesh(model):
    from .body_model import synthesize

    return synthesize(model, np.zeros(model.num_betas), np.zeros((model.joint_count, 3)))


def cmd_distortion(opts: dict) -> int:
    if not 0 < opts["tz_min"] < opts["tz_max"]:
        raise InvalidArgumentError("distortion: need 0 < tz_min < tz_max")
    if opts["points"] < 2:
        raise InvalidArgumentError("distortion: points must be >= 2")
    model, _ = _load_model(opts["model"])
    grid = np.geomspace(opts["tz_min"], opts["tz_max"], opts["points"])
    values = distortion_curve(model, grid)
    with staged_dir(opts["out"]) as stage:
        lines = ["tz_m,distortion"] + [f"{fmt(t)},{fmt(d)}" for t, d in zip(grid, values)]
        (stage / "distortion.csv").write_text("\n".join(lines) + "\n")
        plotting.plot_distortion(grid, values, stage / "distortion.png", marks=(1.2,))
    print(f"distortion {values[0]:.4f} at {grid[0]:.2f} m down to {values[-1]:.5f} "
          f"at {grid[-1]:.2f} m")
    return EXIT_OK


def cmd_roundtrip(opts: dict) -> int:
    model, info = _load_model(opts["model"])
    cfg = GenConfig(n_records=opts["n"], global_seed=opts["seed"], image_size=opts["size"])
    scfg = _solver_config(opts)
    with staged_dir(opts["out"]) as stage:
        data = stage / "dataset"
        generate_dataset(cfg, model, data, threads=opts["threads"], model_info=info)
        _, records = read_manifest(data / "manifest.jsonl")
        preds = {}
        for record in records:
            target = read_pgm(data / record.mask_path)
            result = solve_camera(record.mesh(model), target, record.translation.tz, scfg)
            preds[record.id] = Prediction(record.id, result.f_px,
                                          (result.tx, result.ty, result.tz))
            log.info("%s: f %.1f (gt %.1f), soft IoU %.4f, %d iters", record.id, result.f_px,
                     record.camera.focal_px, result.soft_iou, result.iters_used)
        lines = [json.dumps(rounded(p.to_json()), sort_keys=True) for p in preds.values()]
        (stage / "predictions.jsonl").write_text("".join(line + "\n" for line in lines))
        report = evaluate_dataset(records, preds, model, mask_root=data, threads=opts["threads"])
        report.write(stage)
        dump_json({"n": len(report.rows), "seed": opts["seed"], "size": opts["size"],
                   "aggregates": report.aggregates}, stage / "summary.json")
        _report_figures(report, records, stage, preds)
        plotting.plot_tz_histogram([r.translation.tz for r in records], stage / "tz_hist.png",
                                   cfg.near_band)
    print(_summary_line(report))
    return EXIT_OK


COMMANDS = {"gen": cmd_gen, "solve": cmd_solve, "eval": cmd_eval,
            "distortion": cmd_distortion, "roundtrip": cmd_roundtrip}


def main(argv=None) -> int:
    parser = build_parser()
    args = vars(parser.parse_args(argv))
    command = args.pop("command")
    try:
        opts = resolve_options(command, args)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"perspcam: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    logging.basicConfig(level=opts["log_level"], format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[command](opts)
    except PerspcamError as exc:
        print(f"perspcam {command}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        print(f"perspcam {command}: I/O error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (ArithmeticError, FloatingPointError) as exc:
        print(f"perspcam {command}: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
