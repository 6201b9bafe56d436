"""Command-line interface: ``mappose {ingest-osm,estimate,synth,eval}``.

Exit status 0 on success, 2 for input/format errors, 3 for pipeline
failures. Every failure prints one JSON line ``{"status": "error", ...}`` to
stderr and leaves no output files behind.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import tempfile
from pathlib import Path
from typing import Optional, Sequence

from . import formats
from .alignment import EstimationInputs, multi_start_estimate
from .config import DEFAULT_CONFIG, Config
from .errors import FormatError, InputError, MapPoseError
from .map_model import MapModel
from .orientation import segments_from_array
from .translation import GrayRaster

EXIT_OK, EXIT_INPUT, EXIT_PIPELINE = 0, 2, 3


class _Outputs:
    """Collects output files; each is written to a temp path and moved into
    place only when the whole command succeeds."""

    def __init__(self):
        self._pending: list[tuple[Path, Path]] = []

    def path(self, final) -> Path:
        final = Path(final)
        final.parent.mkdir(parents=True, exist_ok=True)
        fd, tmp = tempfile.mkstemp(prefix=f".{final.name}.", dir=final.parent)
        os.close(fd)
        self._pending.append((Path(tmp), final))
        return Path(tmp)

    def commit(self) -> None:
        for tmp, final in self._pending:
            os.replace(tmp, final)
        self._pending.clear()

    def discard(self) -> None:
        formats.remove_quietly([tmp for tmp, _ in self._pending])
        self._pending.clear()


def _load_config(path: Optional[str], **overrides) -> Config:
    cfg = DEFAULT_CONFIG
    if path:
        try:
            with open(path, encoding="utf-8") as fh:
                cfg = Config.from_dict(json.load(fh))
        except (json.JSONDecodeError, TypeError, ValueError) as exc:
            raise FormatError(f"{path}: bad config ({exc})") from exc
    return cfg.with_overrides(**overrides) if overrides else cfg


def cmd_ingest_osm(args, out: _Outputs) -> dict:
    doc = formats.read_osm(args.input)
    frame = formats.LocalFrame(args.lat, args.lon)
    bmap = formats.osm_to_map(doc, frame, args.default_height, args.radius)
    formats.write_map(out.path(args.out), bmap)
    return {"buildings": len(bmap), "warnings": [list(w) for w in doc.warnings]}


def _estimation_inputs(args) -> EstimationInputs:
    K = formats.read_intrinsics(args.intrinsics)
    windows = formats.read_mask_pgm(args.windows) if args.windows else None
    return EstimationInputs(
        MapModel(formats.read_map(args.map)),
        K,
        formats.read_pose(args.sensor_pose),
        segments_from_array(formats.read_segments(args.segments), K),
        GrayRaster(formats.read_pgm(args.image)),
        formats.read_probraster(args.probs),
        windows,
    )


def cmd_estimate(args, out: _Outputs) -> dict:
    cfg = _load_config(args.config, multiclass=True) if args.multiclass else _load_config(args.config)
    inp = _estimation_inputs(args)
    result = multi_start_estimate(inp, cfg)
    pose = result.best.pose
    formats.write_pose(out.path(args.out), pose)
    if args.overlay:
        svg = formats.overlay_svg(inp.model.map, pose, inp.K, cfg.near_clip_m)
        out.path(args.overlay).write_text(svg, encoding="utf-8")
    return {"score": result.best.score, "hypotheses": len(result.hypotheses)}


def cmd_synth(args, out: _Outputs) -> dict:
    from .synth import SceneSpec, generate_scene

    try:
        with open(args.spec, encoding="utf-8") as fh:
            spec = SceneSpec.from_dict(json.load(fh))
    except (json.JSONDecodeError, TypeError, ValueError) as exc:
        raise FormatError(f"{args.spec}: bad scene spec ({exc})") from exc
    bundle = generate_scene(spec)
    with tempfile.TemporaryDirectory() as tmp:
        for p in formats.write_bundle(tmp, bundle):
            dest = out.path(Path(args.out) / p.name)
            os.replace(p, dest)
    return {"scene": bundle.scene_id}


def cmd_eval(args, out: _Outputs) -> dict:
    from .synth import evaluate_bundle, pipeline_estimator, summarize

    cfg = _load_config(args.config)
    estimator = pipeline_estimator(cfg)
    results = []
    for d in sorted(args.scenes):
        bundle = formats.read_bundle(d)
        res = evaluate_bundle(bundle, estimator)
        res.scene_id = Path(d).name
        results.append(res)
    report = summarize(results)
    payload = {
        "summary": report.summary,
        "results": [vars(r) for r in report.results],
    }
    with open(out.path(args.report), "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=1)
        fh.write("\n")
    if args.curves:
        formats.write_curves_csv(out.path(args.curves), report)
    return report.summary


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="mappose", description="Refine a sensor camera pose against a 2.5D building map.")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("ingest-osm", help="convert OSM XML buildings to map.json")
    s.add_argument("--in", dest="input", required=True)
    s.add_argument("--lat", type=float, required=True)
    s.add_argument("--lon", type=float, required=True)
    s.add_argument("--radius", type=float, default=150.0)
    s.add_argument("--default-height", type=float, default=10.0)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_ingest_osm)

    s = sub.add_parser("estimate", help="refine a sensor pose")
    s.add_argument("--map", required=True)
    s.add_argument("--intrinsics", required=True)
    s.add_argument("--sensor-pose", required=True)
    s.add_argument("--segments", required=True)
    s.add_argument("--image", required=True)
    s.add_argument("--probs", required=True)
    s.add_argument("--windows")
    s.add_argument("--multiclass", action="store_true")
    s.add_argument("--config")
    s.add_argument("--out", required=True)
    s.add_argument("--overlay")
    s.set_defaults(func=cmd_estimate)

    s = sub.add_parser("synth", help="generate a synthetic ground-truth bundle")
    s.add_argument("--spec", required=True)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_synth)

    s = sub.add_parser("eval", help="benchmark bundles and write ranked error curves")
    s.add_argument("--scenes", nargs="+", required=True)
    s.add_argument("--report", required=True)
    s.add_argument("--curves")
    s.add_argument("--config")
    s.set_defaults(func=cmd_eval)
    return p


def _fail(code: int, reason: str, message: str) -> int:
    record = {"status": "error", "exit": code, "reason": reason, "message": message}
    print(json.dumps(record), file=sys.stderr)
    return code


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else _fail(EXIT_INPUT, "usage", "invalid arguments")
    out = _Outputs()
    try:
        info = args.func(args, out)
        out.commit()
    except InputError as exc:
        out.discard()
        return _fail(EXIT_INPUT, exc.reason, str(exc))
    except MapPoseError as exc:
        out.discard()
        return _fail(EXIT_PIPELINE, exc.reason, str(exc))
    except (OSError, UnicodeDecodeError) as exc:
        out.discard()
        return _fail(EXIT_INPUT, "io_error", str(exc))
    except BaseException:
        out.discard()
        raise
    print(json.dumps({"status": "ok", **info}, default=float))
    return EXIT_OK


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
