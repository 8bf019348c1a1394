"""Command-line entry point: ``octds <stage> [options]``.

Every stage reads its inputs from, and writes its outputs to, one output
tree (``--out``)::

    config.json                 resolved configuration
    raw/                        OCTV stack from the simulator
    truth/                      ground-truth depth, mask, sine parameters
    endo/frames/                annular endoscope frames (PGM) + frames.json
    undistorted/, fits.json     flattened stack and per-slice sine fits
    surface/                    depth / intensity / valid PGMs + surface.json
    volume/                     hollow-cylinder voxel stack (OCTV)
    endo/panorama.pgm           stitched endoscope panorama
    segment/                    pattern mask + threshold
    compare/                    Jaccard report and difference image

Logs go to stderr as one JSON object per line; the level comes from the
``OCTDS_LOG`` environment variable (default ``INFO``, ``OFF`` silences).
Failures exit nonzero after writing an error object tagged with the stage.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import time
from pathlib import Path

import numpy as np

from .acquisition import simulate_oct
from .config import load_config
from .endo_stitch import PanoramaStitcher, normalized_cross_correlation
from .endoscope import AnnulusFrame, simulate_endo_frames
from .exceptions import ConfigurationError, OctdsError, StackIOError, ValidationError
from .phantom import build_phantom
from .raw_io import (
    read_mask_pgm, read_pgm, read_stack, write_depth_pgm, write_json, write_mask, write_pgm,
    write_stack, write_surface_map,
)
from .segmetrics import LEGEND, PatternMask, difference_image, jaccard, resample_nearest, segment
from .surface import SurfaceExtractor, build_volume, write_volume
from .undistort import FitReport, SliceUndistorter

STAGES = ("simulate", "undistort", "surface", "volume", "endostitch", "segment", "compare", "pipeline")

log = logging.getLogger("octds")


class _JsonFormatter(logging.Formatter):
    def format(self, record):
        obj = {"level": record.levelname.lower(), "msg": record.getMessage()}
        obj.update(getattr(record, "fields", {}))
        return json.dumps(obj, sort_keys=True)


def _setup_logging():
    level = os.environ.get("OCTDS_LOG", "INFO").upper()
    log.handlers.clear()
    log.propagate = False
    if level == "OFF":
        log.disabled = True
        return
    log.disabled = False
    handler = logging.StreamHandler(sys.stderr)
    handler.setFormatter(_JsonFormatter())
    log.addHandler(handler)
    value = logging.getLevelName(level)
    log.setLevel(value if isinstance(value, int) else logging.INFO)


def _emit(stage, event, **fields):
    log.info(event, extra={"fields": dict(stage=stage, event=event, **fields)})


class StageError(Exception):
    """An error annotated with the stage that raised it."""

    def __init__(self, stage, cause):
        super().__init__(str(cause))
        self.stage = stage
        self.cause = cause

    def to_dict(self):
        if isinstance(self.cause, OctdsError):
            d = self.cause.to_dict()
        elif isinstance(self.cause, OSError):
            d = {"error": "io_error", "message": str(self.cause)}
        else:
            d = {"error": "internal_error", "message": f"{type(self.cause).__name__}: {self.cause}"}
        d["stage"] = self.stage
        return d

    @property
    def exit_code(self):
        if isinstance(self.cause, (ValidationError, ConfigurationError)):
            return 2
        if isinstance(self.cause, (OctdsError, OSError)):
            return 1
        return 70


# -- paths -------------------------------------------------------------------

class Tree:
    def __init__(self, root):
        self.root = Path(root)

    def __getattr__(self, name):
        rel = {
            "raw": "raw",
            "truth": "truth",
            "frames": "endo/frames",
            "undistorted": "undistorted",
            "fits": "fits.json",
            "surface": "surface",
            "volume": "volume",
            "panorama": "endo",
            "segment": "segment",
            "compare": "compare",
        }.get(name)
        if rel is None:
            raise AttributeError(name)
        return self.root / rel


def _require(path, producer):
    if not Path(path).exists():
        raise StackIOError(f"missing input {path}; run `octds {producer}` first")
    return Path(path)


def _write_config(cfg, tree):
    write_json(tree.root / "config.json", cfg.resolved())


# -- stages ------------------------------------------------------------------

def run_simulate(cfg, tree):
    geom = build_phantom(cfg.phantom)
    stack, truth = simulate_oct(geom, cfg.acquisition, cfg.parallel)
    write_stack(stack, tree.raw)
    t = tree.truth
    write_depth_pgm(t / "surface_depth.pgm", truth.surface_depth_samples())
    write_mask(truth.pattern_mask, t / "pattern_mask.pgm")
    write_pgm(t / "reflectivity.pgm", np.clip(np.rint(255.0 * truth.reflectivity), 0, 255).astype(np.uint8))
    write_json(t / "sine_params.json", [m.to_dict() for m in truth.sine_params_per_slice])
    write_json(t / "truth.json", {
        "hole_radius": float(truth.hole_radius),
        "depth_resolution": float(truth.depth_resolution),
        "shape": list(truth.surface_depth.shape),
        "surface_depth_um_min": float(truth.surface_depth.min()),
        "surface_depth_um_max": float(truth.surface_depth.max()),
        "pattern_fraction": float(truth.pattern_mask.mean()),
    })
    out = {"slices": len(stack), "a_scans_per_rotation": int(stack.shape[1]), "depth_samples": int(stack.shape[2])}
    endo = cfg.endoscope
    if endo["enabled"]:
        frames = simulate_endo_frames(geom, endo["feed_step"], endo["frame_size"], endo["window"],
                                      speckle_sigma=endo["speckle_sigma"])
        for k, f in enumerate(frames):
            write_pgm(tree.frames / f"frame_{k:05d}.pgm", f.image, maxval=255)
        write_json(tree.frames / "frames.json", {
            "feed_step": float(endo["feed_step"]),
            "frames": [f.to_meta() for f in frames],
        })
        out["endo_frames"] = len(frames)
    return out


def _read_fits(tree):
    data = json.loads(_require(tree.fits, "undistort").read_text())
    return [FitReport.from_dict(d) for d in data]


def run_undistort(cfg, tree):
    stack = read_stack(_require(tree.raw, "simulate"))
    est = SliceUndistorter(cfg.enhance, cfg.binarize, cfg.ransac, random_state=cfg.seed, n_jobs=cfg.parallel)
    est.fit(stack)
    flat = est.transform(stack)
    write_stack(flat, tree.undistorted)
    reports = est.reports_
    write_json(tree.fits, [r.to_dict() for r in reports])
    accepted = sum(bool(r.accepted) for r in reports)
    return {"slices": len(reports), "accepted": accepted, "fallback": len(reports) - accepted}


def run_surface(cfg, tree):
    flat = read_stack(_require(tree.undistorted, "undistort"))
    sm = SurfaceExtractor(cfg.crop_margin, cfg.min_peak).transform(flat)
    write_surface_map(sm, tree.surface / "surface")
    write_json(tree.surface / "surface.json", {
        "shape": list(sm.shape),
        "depth_resolution": sm.depth_resolution,
        "pullback_step": sm.pullback_step,
        "crop_margin": cfg.crop_margin,
        "valid_fraction": float(sm.valid.mean()),
    })
    return {"shape": list(sm.shape), "valid_fraction": round(float(sm.valid.mean()), 6)}


def run_volume(cfg, tree):
    stack = read_stack(_require(tree.raw, "simulate"))
    vol = build_volume(stack, _read_fits(tree), cfg.crop_margin)
    write_volume(vol, tree.volume)
    return {"shape": list(vol.voxels.shape)}


def _read_frames(tree):
    meta = json.loads(_require(tree.frames / "frames.json", "simulate").read_text())
    frames = []
    for k, m in enumerate(meta["frames"]):
        img = read_pgm(_require(tree.frames / f"frame_{k:05d}.pgm", "simulate"))
        frames.append(AnnulusFrame(img, tuple(m["center"]), m["r_inner"], m["r_outer"], m["axial_position"],
                                   m["window"]))
    return frames, meta


def run_endostitch(cfg, tree):
    frames, meta = _read_frames(tree)
    pano = PanoramaStitcher(cfg.endoscope["columns"], meta["feed_step"]).transform(frames)
    write_pgm(tree.panorama / "panorama.pgm", pano.image, maxval=255)
    geom = build_phantom(cfg.phantom)
    theta = 2.0 * np.pi * np.arange(pano.image.shape[1]) / pano.image.shape[1]
    ref = geom.surface_reflectivity(pano.row_positions()[:, None], theta[None, :])
    ncc = normalized_cross_correlation(pano.image, ref)
    write_json(tree.panorama / "panorama.json", {
        "shape": list(pano.image.shape),
        "um_per_row": pano.um_per_row,
        "z_origin": pano.z_origin,
        "ncc_vs_truth": ncc,
    })
    return {"shape": list(pano.image.shape), "ncc_vs_truth": round(ncc, 6)}


def run_segment(cfg, tree, image=None):
    if image is not None:
        arr = read_pgm(_require(image, "segment"))
    else:
        name = "surface_depth.pgm" if cfg.channel == "depth" else "surface_intensity.pgm"
        arr = read_pgm(_require(tree.surface / name, "surface"))
    mask, thr = segment(arr, cfg.channel, cfg.polarity)
    source = "oct_depth" if cfg.channel == "depth" else ("endo" if image is not None else "oct_intensity")
    mask = PatternMask(mask.mask, source)
    write_mask(mask, tree.segment / "mask.pgm")
    write_json(tree.segment / "segment.json", {
        "channel": cfg.channel,
        "polarity": cfg.polarity,
        "source": mask.source,
        "threshold": thr,
        "foreground_fraction": float(mask.mask.mean()),
        "input": str(image) if image is not None else None,
    })
    return {"threshold": thr, "foreground_fraction": round(float(mask.mask.mean()), 6)}


def run_compare(cfg, tree, a=None, b=None, resample=False):
    pa = _require(a if a is not None else tree.segment / "mask.pgm", "segment")
    pb = _require(b if b is not None else tree.truth / "pattern_mask.pgm", "simulate")
    ma, mb = read_mask_pgm(pa), read_mask_pgm(pb)
    if ma.shape != mb.shape:
        if not resample:
            raise ValidationError(f"mask shapes differ: {ma.shape} vs {mb.shape}; pass --resample", field="mask")
        ma = resample_nearest(ma, mb.shape)
    thr = None
    seg_json = tree.segment / "segment.json"
    if a is None and seg_json.is_file():
        thr = json.loads(seg_json.read_text())["threshold"]
    report = jaccard(ma, mb, thr)
    write_json(tree.compare / "metrics.json", report.to_dict())
    write_pgm(tree.compare / "difference.pgm", difference_image(ma, mb), maxval=255)
    write_json(tree.compare / "difference_legend.json", LEGEND)
    return report


# -- driver ------------------------------------------------------------------

def _stage(name, fn, *args, **kwargs):
    t0 = time.perf_counter()
    _emit(name, "start")
    try:
        result = fn(*args, **kwargs)
    except Exception as exc:
        raise StageError(name, exc) from exc
    fields = result.to_dict() if hasattr(result, "to_dict") else (result or {})
    _emit(name, "done", seconds=round(time.perf_counter() - t0, 3), **fields)
    return result


def _u64(text):
    try:
        v = int(text, 0)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not an integer: {text!r}")
    if not 0 <= v < 2**64:
        raise argparse.ArgumentTypeError("seed must fit in an unsigned 64-bit integer")
    return v


def _positive_int(text):
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError("must be >= 1")
    return v


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    g = common.add_argument_group("configuration")
    g.add_argument("--config", metavar="PATH", help="JSON config with per-stage sections")
    g.add_argument("--seed", type=_u64, help="master seed (also seeds the phantom)")
    g.add_argument("--parallel", type=_positive_int, metavar="N", help="worker threads; never changes results")
    g.add_argument("--out", metavar="DIR", help="output tree (default octds_out)")
    g.add_argument("--eccentricity-um", type=float, dest="eccentricity_um", help="catheter offset amplitude")
    g.add_argument("--nurd-rad", type=float, dest="nurd_rad", help="angular jitter standard deviation")
    g.add_argument("--speckle-sigma", type=float, dest="speckle_sigma", help="log-normal speckle sigma")
    g.add_argument("--crop-margin", type=int, dest="crop_margin", help="rows skipped below the glass border")
    g.add_argument("--channel", choices=("depth", "intensity"), help="surface channel to segment")

    parser = argparse.ArgumentParser(prog="octds", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True, metavar="STAGE")
    sub.add_parser("simulate", parents=[common], help="render phantom, OCT stack, truth and endoscope frames")
    sub.add_parser("undistort", parents=[common], help="fit and remove the eccentric glass sinusoid")
    sub.add_parser("surface", parents=[common], help="MIP depth and intensity maps")
    sub.add_parser("volume", parents=[common], help="hollow-cylinder voxel export")
    sub.add_parser("endostitch", parents=[common], help="unroll and stitch endoscope frames")
    p = sub.add_parser("segment", parents=[common], help="Li threshold of a surface channel")
    p.add_argument("--image", metavar="PGM", help="segment this PGM instead of the surface map")
    p = sub.add_parser("compare", parents=[common], help="Jaccard index of two masks")
    p.add_argument("--a", metavar="PGM", help="first mask (default segment/mask.pgm)")
    p.add_argument("--b", metavar="PGM", help="second mask (default truth/pattern_mask.pgm)")
    p.add_argument("--resample", action="store_true", help="nearest-neighbour resample a onto b's grid")
    sub.add_parser("pipeline", parents=[common], help="simulate, undistort, surface, endostitch, segment, compare")
    return parser


def _overrides(args):
    o = {}
    for key in ("seed", "parallel", "out"):
        if getattr(args, key) is not None:
            o[key] = getattr(args, key)
    acq = {}
    if args.eccentricity_um is not None:
        acq["eccentricity_amplitude"] = args.eccentricity_um
    noise = {}
    if args.nurd_rad is not None:
        noise["nurd_amplitude"] = args.nurd_rad
    if args.speckle_sigma is not None:
        noise["speckle_sigma"] = args.speckle_sigma
    if noise:
        acq["noise"] = noise
    if acq:
        o["acquisition"] = acq
    if args.crop_margin is not None:
        o["surface"] = {"crop_margin": args.crop_margin}
    if args.channel is not None:
        o["segment"] = {"channel": args.channel}
    return o


def run(args):
    """Execute a parsed command line; returns the compare report when one was made."""
    try:
        cfg = load_config(args.config, _overrides(args))
    except Exception as exc:
        raise StageError("config", exc) from exc
    tree = Tree(cfg.out)
    tree.root.mkdir(parents=True, exist_ok=True)
    _write_config(cfg, tree)
    cmd = args.command
    if cmd == "pipeline":
        _stage("simulate", run_simulate, cfg, tree)
        _stage("undistort", run_undistort, cfg, tree)
        _stage("surface", run_surface, cfg, tree)
        if cfg.endoscope["enabled"]:
            _stage("endostitch", run_endostitch, cfg, tree)
        _stage("segment", run_segment, cfg, tree)
        return _stage("compare", run_compare, cfg, tree)
    if cmd == "segment":
        return _stage(cmd, run_segment, cfg, tree, args.image)
    if cmd == "compare":
        return _stage(cmd, run_compare, cfg, tree, args.a, args.b, args.resample)
    fn = {"simulate": run_simulate, "undistort": run_undistort, "surface": run_surface,
          "volume": run_volume, "endostitch": run_endostitch}[cmd]
    return _stage(cmd, fn, cfg, tree)


def main(argv=None):
    _setup_logging()
    args = build_parser().parse_args(argv)
    try:
        result = run(args)
    except StageError as err:
        sys.stderr.write(json.dumps(err.to_dict(), sort_keys=True) + "\n")
        return err.exit_code
    if args.command in ("pipeline", "compare"):
        sys.stdout.write(json.dumps(result.to_dict(), sort_keys=True) + "\n")
    return 0


if __name__ == "__main__":
    sys.exit(main())
