"""Command-line entry point.

Exit codes: 0 success, 2 bad configuration or inputs, 3 I/O failure while
writing outputs, 4 a pipeline stage failed. On failure a single JSON object
is written to stderr, e.g. ``{"error": "insufficient-data", ...}``.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from pathlib import Path

from . import io as rio
from .capsim import simulate
from .config import RunConfig, config_from_json
from .core import CaptureStream
from .errors import InvalidArgument, PipelineError
from .eval import evaluate_model
from .reduce import reduce_stream
from .sfm.reconstruct import reconstruct

STREAM_DIR = "stream"
REDUCED_DIR = "reduced"
MODEL_DIR = "model"
REDUCTION_REPORT = "reduction_report.json"
RECON_REPORT = "reconstruction.json"
EVAL_FILE = "evaluation.json"
REPORT_FILE = "report.json"


class CliError(Exception):
    def __init__(self, exit_code: int, error: str, message: str, stage: str | None = None):
        super().__init__(message)
        self.exit_code = exit_code
        self.error = error
        self.stage = stage

    def line(self) -> str:
        rec = {"error": self.error, "exit_code": self.exit_code, "message": str(self)}
        if self.stage:
            rec["stage"] = self.stage
        return json.dumps(rec, sort_keys=True)


def _reading(what: str, fn, *args):
    try:
        return fn(*args)
    except InvalidArgument as e:
        raise CliError(2, e.code, f"{what}: {e}") from None
    except (FileNotFoundError, NotADirectoryError, IsADirectoryError) as e:
        raise CliError(2, "missing-input", f"{what}: {e}") from None
    except UnicodeDecodeError as e:
        raise CliError(2, "invalid-argument", f"{what}: not valid UTF-8 ({e.reason})") from None
    except OSError as e:
        raise CliError(3, "io-error", f"{what}: {e}") from None


def _writing(what: str, fn, *args):
    try:
        return fn(*args)
    except OSError as e:
        raise CliError(3, "io-error", f"{what}: {e}") from None


def _stage(name: str, fn, *args, **kwargs):
    try:
        return fn(*args, **kwargs)
    except InvalidArgument as e:
        raise CliError(2, e.code, str(e), stage=name) from None
    except PipelineError as e:
        raise CliError(4, e.code, str(e), stage=name) from None


def load_config(path: str | None, seed: int | None = None) -> RunConfig:
    cfg = RunConfig() if path is None else _reading("config", lambda: config_from_json(Path(path).read_text("utf-8")))
    if seed is not None:
        if seed < 0:
            raise CliError(2, "invalid-argument", "--seed must be nonnegative")
        cfg = cfg.with_overrides(seed=seed)
    return cfg


# -- stage runners ---------------------------------------------------------

def run_simulate(cfg: RunConfig, out: Path):
    stream, gt = _stage("simulate", simulate, cfg.scene, cfg.trajectory, cfg.camera, cfg.seed)
    _writing("simulate output", _write_simulation, out, stream, gt)
    return stream, gt


def _write_simulation(out: Path, stream, gt):
    rio.ensure_dir(out)
    rio.write_stream(out, stream)
    rio.write_ground_truth(out / rio.GT_FILE, gt)


def run_reduce(stream: CaptureStream, cfg: RunConfig, out: Path, threads: int):
    kept, report = _stage("reduce", reduce_stream, stream, cfg.reduce, threads=threads)

    def write():
        rio.ensure_dir(out)
        rio.write_stream(out, CaptureStream(stream.intrinsics, tuple(kept)))
        rio.write_json(out / REDUCTION_REPORT, report.to_dict())

    _writing("reduce output", write)
    return kept, report


def run_reconstruct(frames, K, cfg: RunConfig, out: Path, threads: int):
    model = _stage("reconstruct", reconstruct, frames, K, cfg.reconstruct, cfg.ba, threads)
    summary = {
        "frames_total": len(frames),
        "frames_registered": len(model.poses),
        "skipped_frames": list(model.skipped_frames),
        "points": len(model.points),
        "reproj_rmse_px": model.reprojection_rmse(),
    }

    def write():
        rio.ensure_dir(out)
        rio.write_model(out / "model.json", model)
        rio.write_poses(out / "poses.json", model)
        rio.write_ply(out / "points.ply", model)
        rio.write_json(out / RECON_REPORT, summary)

    _writing("reconstruct output", write)
    return model


# -- subcommands -------------------------------------------------------------

def cmd_simulate(args) -> int:
    cfg = load_config(args.config, args.seed)
    out = Path(args.out or cfg.out_dir)
    stream, _ = run_simulate(cfg, out)
    print(len(stream.frames))
    return 0


def cmd_reduce(args) -> int:
    cfg = load_config(args.config, args.seed)
    stream = _reading("input stream", rio.read_stream, args.input)
    if not stream.frames:
        raise CliError(2, "invalid-argument", f"no frames in {args.input}")
    _, report = run_reduce(stream, cfg, Path(args.out or cfg.out_dir), args.threads)
    print(rio.dump_json(report.to_dict()), end="")
    return 0


def cmd_reconstruct(args) -> int:
    cfg = load_config(args.config, args.seed)
    stream = _reading("input stream", rio.read_stream, args.input)
    model = run_reconstruct(list(stream.frames), stream.intrinsics, cfg, Path(args.out or cfg.out_dir), args.threads)
    print(f"{len(model.poses)}/{len(stream.frames)} frames registered")
    return 0


def cmd_evaluate(args) -> int:
    model = _reading("model", rio.read_model, args.model)
    gt = _reading("ground truth", rio.read_ground_truth, args.gt)
    result = _stage("evaluate", evaluate_model, model, gt).to_dict()
    if args.out:
        def write():
            rio.ensure_dir(args.out)
            rio.write_json(Path(args.out) / EVAL_FILE, result)

        _writing("evaluation output", write)
    print(rio.dump_json(result), end="")
    return 0


def cmd_pipeline(args) -> int:
    cfg = load_config(args.config, args.seed)
    out = Path(args.out or cfg.out_dir)
    _writing("output directory", rio.ensure_dir, out)
    times = {}

    t0 = time.perf_counter()
    stream, gt = run_simulate(cfg, out / STREAM_DIR)
    times["simulate"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    kept, red = run_reduce(stream, cfg, out / REDUCED_DIR, args.threads)
    times["reduce"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    model = run_reconstruct(kept, stream.intrinsics, cfg, out / MODEL_DIR, args.threads)
    times["reconstruct"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    ev = _stage("evaluate", evaluate_model, model, gt)
    _writing("evaluation output", rio.write_json, out / EVAL_FILE, ev.to_dict())
    times["evaluate"] = time.perf_counter() - t0

    report = {
        "seed": cfg.seed,
        "frames_total": red.total,
        "frames_kept": len(kept),
        "frames_registered": len(model.poses),
        "skipped_frames": list(model.skipped_frames),
        "dropped": dict(red.dropped),
        "reduction_ratio": red.reduction_ratio,
        "median_rel_err": ev.median_rel_err,
        "reproj_rmse_px": ev.reproj_rmse_px,
        "wall_time_s": times,
    }
    _writing("report", rio.write_json, out / REPORT_FILE, report)
    print(rio.dump_json({k: v for k, v in report.items() if k != "wall_time_s"}), end="")
    return 0


def cmd_print_default_config(args) -> int:
    print(load_config(None, args.seed).to_json(), end="")
    return 0


# -- argument parsing --------------------------------------------------------

class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise CliError(2, "usage", message)


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", metavar="PATH", help="JSON run configuration (defaults if omitted)")
    common.add_argument("--out", metavar="DIR", help="output directory (default: config out_dir)")
    common.add_argument("--seed", type=int, help="override the configured seed")
    common.add_argument("--threads", type=int, default=1, help="worker threads, 0 = auto (default 1)")
    common.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")

    p = _Parser(prog="roomrecon", description="Simulated capture, frame reduction and sparse reconstruction.")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)
    s = sub.add_parser("simulate", parents=[common], help="render a synthetic capture stream")
    s.set_defaults(func=cmd_simulate)
    s = sub.add_parser("reduce", parents=[common], help="select a quality, non-redundant frame subset")
    s.add_argument("input", help="stream directory")
    s.set_defaults(func=cmd_reduce)
    s = sub.add_parser("reconstruct", parents=[common], help="sparse reconstruction of a stream directory")
    s.add_argument("input", help="stream directory")
    s.set_defaults(func=cmd_reconstruct)
    s = sub.add_parser("evaluate", parents=[common], help="compare a model with simulator ground truth")
    s.add_argument("model", help="model.json written by reconstruct")
    s.add_argument("gt", help="ground_truth.json written by simulate")
    s.set_defaults(func=cmd_evaluate)
    s = sub.add_parser("pipeline", parents=[common], help="simulate, reduce, reconstruct and evaluate")
    s.set_defaults(func=cmd_pipeline)
    s = sub.add_parser("print-default-config", parents=[common], help="print the default configuration")
    s.set_defaults(func=cmd_print_default_config)
    return p


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        if args.threads < 0:
            raise CliError(2, "usage", "--threads must be >= 0")
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                            format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
        return args.func(args)
    except CliError as e:
        print(e.line(), file=sys.stderr)
        return e.exit_code


if __name__ == "__main__":
    sys.exit(main())
