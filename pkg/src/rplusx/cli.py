"""Command line entry point ``rx``.

Exit codes: 0 success, 2 invalid input, 3 stage failure, 4 transport failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import __version__
from .assets import read_depth
from .errors import RxError, StageError, ValidationError
from .pipeline import (
    EXPORT_FORMATS,
    dumps_result,
    execute_command,
    export_result,
    ingest,
    load_config,
    load_hands,
    load_live_frame,
    load_result,
    load_tracks,
    make_client,
)
from .retrieval import evaluate_retrieval, load_annotations, mean_scores, retrieve_clips, segment_by_presence
from .stabilization import estimate_frame_poses

def _emit(doc) -> None:
    print(json.dumps(doc, indent=1, sort_keys=True))


def _config(args, **overrides):
    return load_config(getattr(args, "config", None), overrides)


def cmd_ingest(args):
    rec = ingest(args.manifest, require_hands=not args.no_hands)
    _emit({"recording_id": rec.recording_id, "frames": len(rec), "fps": rec.fps, "duration_s": rec.duration})


def cmd_retrieve(args):
    config = _config(args, vlm_script=args.vlm_script, min_gap=args.min_gap)
    rec = ingest(args.recording)
    _, timeline = load_hands(rec)
    view = segment_by_presence(rec, timeline, config.min_gap)
    spans = retrieve_clips(make_client(config), view, args.command)
    _emit({"command": args.command, "spans": [s.as_list() for s in spans],
           "frames": [view.original_frames(s) for s in spans]})


def cmd_execute(args):
    config = _config(args, backend=args.backend, seed=args.seed, vlm_script=args.vlm_script, k=args.k)
    rec = ingest(args.recording)
    live = load_live_frame(args.live)
    try:
        result = execute_command(rec, live, args.command, config)
    except StageError as exc:
        if args.out:
            export_result(exc.partial, args.out, ("json",), stem="partial")
        raise
    formats = tuple(args.formats.split(",")) if args.formats else ("json",)
    if args.out:
        for path in export_result(result, args.out, formats):
            print(path)
    else:
        print(dumps_result(result))


def cmd_eval_retrieval(args):
    config = _config(args, vlm_script=args.vlm_script)
    rec = ingest(args.recording)
    _, timeline = load_hands(rec)
    view = segment_by_presence(rec, timeline, config.min_gap)
    client = make_client(config)
    per_task, scores = {}, []
    for task, truth in sorted(load_annotations(args.annotations).items()):
        try:
            predicted = retrieve_clips(client, view, task)
        except RxError as exc:
            if isinstance(exc, ValidationError):
                raise
            predicted = []
        score = evaluate_retrieval(predicted, truth, args.tolerance)
        scores.append(score)
        per_task[task] = score._asdict()
    precision, recall = mean_scores(scores)
    _emit({"tasks": per_task, "mean_precision": precision, "mean_recall": recall,
           "tolerance_s": args.tolerance})


def cmd_stabilize(args):
    config = _config(args)
    rec = ingest(args.recording, require_hands=False)
    try:
        start, end = (int(x) for x in args.clip.split(","))
    except ValueError as exc:
        raise ValidationError(f"--clip expects START,END frame indices, got {args.clip!r}") from exc
    if not 0 <= start <= end < len(rec):
        raise ValidationError(f"clip [{start}, {end}] outside recording of {len(rec)} frames")
    frames = list(range(start, end + 1))
    tracks = load_tracks(rec, frames).restrict(frames)
    depths = {t: read_depth(rec.frame(t).depth) for t in frames}
    poses = estimate_frame_poses(tracks, depths, rec.intrinsics, config.inlier_threshold,
                                 config.max_iterations, config.seed)
    _emit({"frames": {str(t): {"rotation": poses[t].rotation.tolist(),
                               "translation": poses[t].translation.tolist(),
                               "inliers": int(poses.inlier_counts.get(t, 0))} for t in frames},
           "flagged": list(map(int, poses.flagged))})


def cmd_export(args):
    result = load_result(args.result)
    formats = tuple(f for f in args.formats.split(",") if f)
    for path in export_result(result, args.out, formats, stem=Path(args.result).stem):
        print(path)


def cmd_make_synthetic(args):
    from .synthetic import write_scene
    scene = write_scene(args.out, seed=args.seed)
    _emit({k: str(scene[k]) for k in ("manifest", "live", "vlm_script", "annotations", "config", "command")})


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="rx", description="Retrieve human demonstrations and execute them on a gripper.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="verb", required=True)

    s = sub.add_parser("ingest", help="validate a recording manifest")
    s.add_argument("manifest")
    s.add_argument("--no-hands", action="store_true", help="allow frames without a hands file")
    s.set_defaults(func=cmd_ingest)

    s = sub.add_parser("retrieve", help="retrieve clips for a command")
    s.add_argument("recording")
    s.add_argument("--command", required=True)
    s.add_argument("--config")
    s.add_argument("--vlm-script")
    s.add_argument("--min-gap", type=int)
    s.set_defaults(func=cmd_retrieve)

    s = sub.add_parser("execute", help="run the full pipeline for a command and a live frame")
    s.add_argument("recording")
    s.add_argument("--command", required=True)
    s.add_argument("--live", required=True)
    s.add_argument("--backend", choices=["baseline", "echo", "llm"])
    s.add_argument("--seed", type=int)
    s.add_argument("--k", type=int)
    s.add_argument("--config")
    s.add_argument("--vlm-script")
    s.add_argument("--out")
    s.add_argument("--formats", help=f"comma separated subset of {','.join(EXPORT_FORMATS)}")
    s.set_defaults(func=cmd_execute)

    s = sub.add_parser("eval-retrieval", help="score retrieval against annotations")
    s.add_argument("recording")
    s.add_argument("--annotations", required=True)
    s.add_argument("--tolerance", type=float, default=3.0)
    s.add_argument("--config")
    s.add_argument("--vlm-script")
    s.set_defaults(func=cmd_eval_retrieval)

    s = sub.add_parser("stabilize", help="estimate per-frame camera poses over a clip")
    s.add_argument("recording")
    s.add_argument("--clip", required=True, help="START,END original frame indices (inclusive)")
    s.add_argument("--config")
    s.set_defaults(func=cmd_stabilize)

    s = sub.add_parser("export", help="re-export a saved result")
    s.add_argument("result")
    s.add_argument("--formats", default="json")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_export)

    s = sub.add_parser("make-synthetic", help="write a small synthetic recording to try the tool on")
    s.add_argument("out")
    s.add_argument("--seed", type=int, default=0)
    s.set_defaults(func=cmd_make_synthetic)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        args.func(args)
    except RxError as exc:
        print(f"rx: error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return exc.exit_code
    return 0


if __name__ == "__main__":
    sys.exit(main())
