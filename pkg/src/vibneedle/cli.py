"""Command-line front end: ``vibneedle <subcommand> [flags]``."""

import argparse
import json
import os
import sys

import numpy as np

from . import (annotate, dataio, evaluate, geometry, gradcheck, losses, model, pipeline, postproc,
               sim, spectral, trainer)
from .errors import BudgetExceeded, DataError, VibNeedleError

EXIT_OK, EXIT_FAIL, EXIT_USAGE, EXIT_DATA, EXIT_BUDGET = 0, 1, 2, 3, 4
THREADS_ENV = "VIBNEEDLE_THREADS"
OVERLAY_MASK_LEVEL = 170
OVERLAY_LINE_LEVEL = 255


def default_threads():
    try:
        return max(1, int(os.environ.get(THREADS_ENV, "1")))
    except ValueError:
        return 1


def log_config(args):
    cfg = {k: v for k, v in sorted(vars(args).items()) if k != "func"}
    print(json.dumps({"config": cfg}, default=str), file=sys.stderr)


def _spectral_cfg(args):
    return spectral.SpectralConfig(L=args.L, fs=args.fs, band=tuple(args.band))


def _add_spectral(p):
    p.add_argument("--L", type=int, default=30, help="window length in frames")
    p.add_argument("--fs", type=float, default=30.0, help="frame rate (Hz)")
    p.add_argument("--band", type=float, nargs=2, default=(2.0, 3.0), metavar=("LO", "HI"))


def _add_detector(p):
    p.add_argument("--source", choices=("spectral", "model"), default="spectral")
    p.add_argument("--params", help="trained parameter file (model source)")
    p.add_argument("--threshold", type=float, default=0.5)
    p.add_argument("--energy-factor", type=float, default=8.0)
    p.add_argument("--energy-floor", type=float, default=1e-3)
    p.add_argument("--tol", type=float, default=2.0, help="RANSAC inlier tolerance (px)")
    p.add_argument("--iterations", type=int, default=500)
    p.add_argument("--seed", type=int, default=0)


def _add_training(p):
    _add_spectral(p)
    p.add_argument("--alpha", type=float, default=0.5)
    p.add_argument("--beta", type=float, default=0.02)
    p.add_argument("--delta", type=int, default=5)
    p.add_argument("--lr", type=float, default=1e-4)
    p.add_argument("--batch-size", type=int, default=4)
    p.add_argument("--epochs", type=int, default=20)
    p.add_argument("--patience", type=int, default=2)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--augment", action="store_true")
    p.add_argument("--focal-form", choices=("printed", "canonical"), default="printed")


def _detector_cfg(args):
    params = model.ModelParams.load(args.params) if args.params else None
    return pipeline.DetectorConfig(args.source, params, args.threshold, args.energy_factor,
                                   args.energy_floor, args.tol, args.iterations, args.seed)


def _train_cfgs(args):
    scfg = _spectral_cfg(args)
    tcfg = trainer.TrainConfig(lr=args.lr, batch_size=args.batch_size, delta=args.delta, L=args.L,
                               max_epochs=args.epochs, patience=args.patience, seed=args.seed,
                               augment=args.augment, spectral_cfg=scfg)
    lcfg = losses.LossConfig(alpha=args.alpha, beta=args.beta, delta=args.delta,
                             focal_form=args.focal_form)
    return tcfg, lcfg


# ---------------------------------------------------------------- simulate

def cmd_simulate(args):
    angles = args.angle
    shape = tuple(args.size)
    videos = []
    for i in range(args.videos):
        angle = angles[i % len(angles)]
        profile = sim.InsertionProfile(
            entry_point=tuple(args.entry), shaft_angle_deg=angle,
            velocity=sim.advance_retract_velocity(args.frames, args.speed),
            initial_depth=args.initial_depth, needle_contrast=args.contrast, needle_width=args.width)
        vib = sim.VibrationSpec(args.f_vib, args.amplitude)
        seed = args.seed + i
        frames, truths = sim.generate_sequence(profile, vib, seed, args.frames, args.fs, shape=shape,
                                               noise_mode=args.noise_mode, min_frames=args.L)
        vid = f"sim{angle:g}_{i:03d}"
        videos.append(dataio.video_from_sim(vid, frames, truths, args.fs, angle,
                                            {"seed": seed, "contrast": args.contrast,
                                             "amplitude": args.amplitude}))
    dataio.write_dataset(args.out, videos, L=args.L)
    print(f"wrote {len(videos)} video(s) to {args.out}")
    return EXIT_OK


# ---------------------------------------------------------------- detect / stream

def _overlay(frame, mask, det):
    img = np.round(np.clip(frame, 0.0, 1.0) * 127.0).astype(np.uint8)
    if mask is not None:
        img[mask] = OVERLAY_MASK_LEVEL
    if det is not None:
        h, w = img.shape
        d = geometry.direction_from_angle(det.angle_deg)
        s = np.arange(-(h + w), h + w, 0.5)
        pts = np.round(det.tip_px[None, :] + s[:, None] * d[None, :]).astype(int)
        ok = (pts[:, 0] >= 0) & (pts[:, 0] < h) & (pts[:, 1] >= 0) & (pts[:, 1] < w)
        img[pts[ok, 0], pts[ok, 1]] = OVERLAY_LINE_LEVEL
    return img


def _stream_video(frames, spacing, scfg, dcfg, overlay_dir=None):
    """Yield (frame index, Detection or None) for every post-warm-up frame."""
    state = pipeline.StreamState(frames.shape[1:], spacing, scfg, dcfg)
    for t in range(frames.shape[0]):
        det = state.push_frame(frames[t])
        if t < state.warmup:
            continue
        if overlay_dir is not None:
            mask = pipeline.feature_mask(state.sdft.snapshot(), dcfg)
            dataio.write_pgm(os.path.join(overlay_dir, f"{t:06d}.pgm"), _overlay(frames[t], mask, det))
        yield t, det


def cmd_detect(args):
    scfg, dcfg = _spectral_cfg(args), _detector_cfg(args)
    manifest, videos = dataio.read_dataset(args.inp)
    with open(args.out, "w") as fh:
        fh.write(",".join(("video",) + postproc.DETECTION_FIELDS) + "\n")
        for v in videos:
            odir = None
            if args.overlay:
                odir = os.path.join(args.overlay, v.video_id)
                os.makedirs(odir, exist_ok=True)
            for t, det in _stream_video(v.frames, v.spacing, scfg, dcfg, odir):
                fh.write(f"{v.video_id},{postproc.format_detection(t, det)}\n")
    print(f"detections for {len(videos)} video(s) written to {args.out}")
    return EXIT_OK


def _raw_frames(stream, shape):
    n = shape[0] * shape[1]
    while True:
        buf = stream.read(n)
        if not buf:
            return
        if len(buf) != n:
            raise DataError(f"truncated frame: {len(buf)} of {n} bytes")
        yield np.frombuffer(buf, dtype=np.uint8).reshape(shape).astype(float) / 255.0


def cmd_stream(args):
    scfg, dcfg = _spectral_cfg(args), _detector_cfg(args)
    if args.inp:
        meta = dataio.read_meta(args.inp)
        shape, spacing = tuple(meta["shape"]), tuple(meta["spacing"])
        source = dataio.iter_frames(args.inp)
    else:
        if args.shape is None:
            raise DataError("--shape is required when reading frames from stdin")
        shape = tuple(args.shape)
        spacing = tuple(args.spacing) if args.spacing else sim.default_spacing(height_px=shape[0],
                                                                              width_px=shape[1])
        source = _raw_frames(sys.stdin.buffer, shape)
    state = pipeline.StreamState(shape, spacing, scfg, dcfg)
    out = sys.stdout
    out.write(",".join(postproc.DETECTION_FIELDS) + "\n")
    for t, frame in enumerate(source):
        det = state.push_frame(frame)
        if t >= state.warmup:
            out.write(postproc.format_detection(t, det) + "\n")
            out.flush()
    return EXIT_OK


# ---------------------------------------------------------------- train / ablate

def _split_pairs(root, name, tcfg, required=True):
    manifest = dataio.load_manifest(root)
    if not manifest.splits:
        if name == "train":
            print("manifest has no split; training on every video", file=sys.stderr)
            ids = [v.video_id for v in manifest.videos]
        else:
            ids = []
    else:
        ids = manifest.ids(name)
    if required and not ids:
        raise DataError(f"{root}: split {name!r} is empty")
    pairs = []
    for vid in ids:
        pairs.extend(trainer.pairs_from_video(dataio.read_video(os.path.join(root, manifest.entry(vid).path or vid)),
                                              tcfg))
    return pairs


def cmd_train(args):
    tcfg, lcfg = _train_cfgs(args)
    train_pairs = _split_pairs(args.inp, "train", tcfg)
    val_pairs = _split_pairs(args.inp, "val", tcfg, required=False)
    res = trainer.train(train_pairs, tcfg, lcfg, val=val_pairs or None)
    res.params.save(args.out)
    if args.history:
        trainer.write_history_csv(args.history, res.history)
    print(f"trained {len(res.epoch_losses)} epoch(s), best epoch {res.best_epoch}; "
          f"epoch losses {[round(x, 6) for x in res.epoch_losses]}")
    return EXIT_OK


def _parse_grid(text):
    grid = []
    for cell in text.split(","):
        a, b = cell.split(":")
        grid.append((float(a), float(b)))
    return tuple(grid)


def cmd_ablate(args):
    tcfg, lcfg = _train_cfgs(args)
    train_pairs = _split_pairs(args.inp, "train", tcfg)
    val_pairs = _split_pairs(args.inp, "val", tcfg, required=False)
    test_pairs = _split_pairs(args.inp, "test", tcfg)
    rows = trainer.ablation_sweep(train_pairs, test_pairs, _parse_grid(args.grid), tcfg, lcfg,
                                  val_pairs or None, args.threshold, args.workers)
    print(trainer.ablation_table(rows))
    if args.csv:
        with open(args.csv, "w") as fh:
            fh.write(evaluate.summary_csv([(r.label, r.summary) for r in rows]))
    return EXIT_OK


# ---------------------------------------------------------------- eval

def read_detections(path):
    """{video_id: {frame: Detection or None}} from a detect CSV."""
    out = {}
    with open(path) as fh:
        header = fh.readline().strip().split(",")
        if header[:1] != ["video"]:
            raise DataError(f"{path}: expected a 'video' column first")
        for n, line in enumerate(fh, start=2):
            if not line.strip():
                continue
            vid, rest = line.split(",", 1)
            try:
                frame, det = postproc.parse_detection(rest)
            except (ValueError, IndexError) as exc:
                raise DataError(f"{path}:{n}: {exc}") from exc
            out.setdefault(vid, {})[frame] = det
    return out


def cmd_eval(args):
    preds = read_detections(args.pred)
    manifest = dataio.load_manifest(args.gt)
    records = []
    for vid in sorted(preds):
        try:
            entry = manifest.entry(vid)
        except KeyError:
            raise DataError(f"prediction for unknown video {vid!r}") from None
        gdir = os.path.join(args.gt, entry.path or vid)
        spacing = tuple(dataio.read_meta(gdir)["spacing"])
        tips, angles = dataio.read_tips(gdir)
        for frame, det in sorted(preds[vid].items()):
            if not 0 <= frame < len(tips):
                raise DataError(f"{vid}: frame {frame} has no ground truth")
            records.append(evaluate.make_record((vid, frame), det, tips[frame], angles[frame], spacing,
                                                args.tip_threshold, args.angle_threshold))
    summary = evaluate.summarize(records)
    print(evaluate.summary_table([(args.label, summary)]))
    if args.csv:
        with open(args.csv, "w") as fh:
            fh.write(evaluate.summary_csv([(args.label, summary)]))
    return EXIT_OK


# ---------------------------------------------------------------- annotate / split

def cmd_annotate(args):
    track = annotate.TrackLog.read_csv(args.track)
    shape = tuple(args.shape)
    spacing = tuple(args.spacing) if args.spacing else sim.default_spacing(height_px=shape[0],
                                                                          width_px=shape[1])
    bundle = annotate.annotate_video(args.tip, args.entry, track, spacing, shape, args.width,
                                     discard_prefix=args.discard, rough_angle_deg=args.rough_angle,
                                     max_deviation_deg=args.max_dev)
    tips, masks = bundle.kept()
    angles = bundle.angles[bundle.discard_prefix:]
    if args.frames_from:
        frames = np.stack(list(dataio.iter_frames(args.frames_from)))[bundle.discard_prefix:]
        if frames.shape[0] != masks.shape[0]:
            raise DataError(f"{args.frames_from}: {frames.shape[0]} frames after discard, "
                            f"track gives {masks.shape[0]}")
    else:
        frames = np.zeros(masks.shape)
    label = args.rough_angle if args.rough_angle is not None else float(np.median(angles))
    video = dataio.VideoRecord(args.video_id, frames, masks, tips, angles, args.fs, spacing, label)
    dataio.write_video(args.out, video)
    sidecar = {"accepted": bundle.accepted, "reason": bundle.reason,
               "discard_prefix": bundle.discard_prefix, "initial_frame": bundle.initial_frame}
    with open(os.path.join(args.out, "acceptance.json"), "w") as fh:
        json.dump(sidecar, fh, indent=2)
    print(f"{args.video_id}: {'accepted' if bundle.accepted else 'rejected: ' + bundle.reason}")
    return EXIT_OK


def cmd_split(args):
    old = dataio.load_manifest(args.inp)
    new = dataio.split(old.videos, tuple(args.fractions), args.seed, not args.no_stratify)
    new.fs, new.spacing, new.L = old.fs, old.spacing, old.L
    new.save(args.inp)
    strata = sorted({v.angle_deg for v in new.videos}) if not args.no_stratify else [None]
    for a in strata:
        c = new.counts(a)
        tag = "all" if a is None else f"{a:g} deg"
        print(f"{tag}: train/val/test = {c['train']}/{c['val']}/{c['test']}")
    return EXIT_OK


# ---------------------------------------------------------------- losscheck / bench

def cmd_losscheck(args):
    rep = gradcheck.run(args.trials, args.seed)
    print(f"trials={rep.trials} points={rep.points} max_rel_err_loss={rep.max_loss_error:.3e} "
          f"max_rel_err_params={rep.max_param_error:.3e} max_rel_err={rep.max_error:.3e}")
    return EXIT_OK if rep.max_error < args.tol else EXIT_FAIL


def cmd_bench(args):
    shape = tuple(args.size)
    scfg = _spectral_cfg(args)
    profile = sim.InsertionProfile(entry_point=(8.0, 12.0), shaft_angle_deg=30.0,
                                   velocity=sim.advance_retract_velocity(args.frames), initial_depth=60.0,
                                   needle_contrast=0.0)
    frames, _ = sim.generate_sequence(profile, sim.VibrationSpec(), args.seed, args.frames, args.fs,
                                      shape=shape, min_frames=args.L)
    x = sim.stack_frames(frames)
    spacing = frames[0].pixel_spacing
    dcfg = _detector_cfg(args)
    rep = pipeline.benchmark(lambda: pipeline.StreamState(shape, spacing, scfg, dcfg), x, args.repetitions)
    print(rep)
    if not rep.within(args.budget_ms):
        raise BudgetExceeded(f"p95 {rep.p95_ms:.2f} ms exceeds budget {args.budget_ms:.2f} ms")
    return EXIT_OK


# ---------------------------------------------------------------- parser

def build_parser():
    ap = argparse.ArgumentParser(prog="vibneedle", description="Vibrating-needle detection toolkit.")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="generate a synthetic dataset")
    p.add_argument("--out", required=True)
    p.add_argument("--angle", type=float, nargs="+", default=[30.0])
    p.add_argument("--frames", type=int, default=300)
    p.add_argument("--videos", type=int, default=1)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--size", type=int, nargs=2, default=(256, 256), metavar=("H", "W"))
    p.add_argument("--entry", type=float, nargs=2, default=(8.0, 12.0), metavar=("ROW", "COL"))
    p.add_argument("--initial-depth", type=float, default=60.0)
    p.add_argument("--speed", type=float, default=0.6, help="axial speed (px/frame)")
    p.add_argument("--contrast", type=float, default=0.3)
    p.add_argument("--width", type=float, default=3.0)
    p.add_argument("--amplitude", type=float, default=1.0, help="vibration amplitude (px)")
    p.add_argument("--f-vib", type=float, default=2.5)
    p.add_argument("--fs", type=float, default=30.0)
    p.add_argument("--L", type=int, default=30)
    p.add_argument("--noise-mode", choices=("live", "frozen"), default="live")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("detect", help="stream every video of a dataset through the detector")
    p.add_argument("--in", dest="inp", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--overlay", help="directory for per-frame PGM overlays")
    _add_spectral(p)
    _add_detector(p)
    p.set_defaults(func=cmd_detect)

    p = sub.add_parser("stream", help="detect on raw 8-bit frames from stdin or a video directory")
    p.add_argument("--in", dest="inp", help="video directory (default: stdin)")
    p.add_argument("--shape", type=int, nargs=2, metavar=("H", "W"))
    p.add_argument("--spacing", type=float, nargs=2, metavar=("ROW_MM", "COL_MM"))
    _add_spectral(p)
    _add_detector(p)
    p.set_defaults(func=cmd_stream)

    p = sub.add_parser("train", help="train the pixel classifier")
    p.add_argument("--in", dest="inp", required=True)
    p.add_argument("--out", required=True, help="parameter file")
    p.add_argument("--history", help="loss history CSV")
    _add_training(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("ablate", help="loss-weight ablation table")
    p.add_argument("--in", dest="inp", required=True)
    p.add_argument("--grid", default=",".join(f"{a:g}:{b:g}" for a, b in trainer.ABLATION_GRID),
                   help="comma-separated alpha:beta cells")
    p.add_argument("--threshold", type=float, default=0.5)
    p.add_argument("--workers", type=int, default=default_threads())
    p.add_argument("--csv")
    _add_training(p)
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("eval", help="score detections against ground truth")
    p.add_argument("--pred", required=True)
    p.add_argument("--gt", required=True)
    p.add_argument("--tip-threshold", type=float, default=evaluate.TIP_THRESHOLD_MM)
    p.add_argument("--angle-threshold", type=float, default=evaluate.ANGLE_THRESHOLD_DEG)
    p.add_argument("--label", default="detector")
    p.add_argument("--csv")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("annotate", help="masks from one tip annotation and a displacement track")
    p.add_argument("--track", required=True)
    p.add_argument("--tip", type=float, nargs=2, required=True, metavar=("ROW", "COL"))
    p.add_argument("--entry", type=float, nargs=2, required=True, metavar=("ROW", "COL"))
    p.add_argument("--shape", type=int, nargs=2, required=True, metavar=("H", "W"))
    p.add_argument("--spacing", type=float, nargs=2, metavar=("ROW_MM", "COL_MM"))
    p.add_argument("--width", type=float, default=3.0)
    p.add_argument("--discard", type=int, default=0)
    p.add_argument("--rough-angle", type=float)
    p.add_argument("--max-dev", type=float, default=annotate.DEFAULT_MAX_DEVIATION_DEG)
    p.add_argument("--frames-from", help="video directory supplying the frames")
    p.add_argument("--video-id", default="annotated")
    p.add_argument("--fs", type=float, default=30.0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_annotate)

    p = sub.add_parser("split", help="stratified train/val/test assignment")
    p.add_argument("--in", dest="inp", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--fractions", type=float, nargs=3, default=(0.8, 0.1, 0.1))
    p.add_argument("--no-stratify", action="store_true")
    p.set_defaults(func=cmd_split)

    p = sub.add_parser("losscheck", help="finite-difference gradient check")
    p.add_argument("--trials", type=int, default=100)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--tol", type=float, default=1e-5)
    p.set_defaults(func=cmd_losscheck)

    p = sub.add_parser("bench", help="streaming latency on a simulated sequence")
    p.add_argument("--size", type=int, nargs=2, default=(256, 256), metavar=("H", "W"))
    p.add_argument("--frames", type=int, default=120)
    p.add_argument("--repetitions", type=int, default=1)
    p.add_argument("--budget-ms", type=float, default=pipeline.BUDGET_MS)
    _add_spectral(p)
    _add_detector(p)
    p.set_defaults(func=cmd_bench)
    return ap


def run(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    log_config(args)
    try:
        return args.func(args)
    except BudgetExceeded as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_BUDGET
    except (VibNeedleError, OSError) as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_DATA
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


def main():
    sys.exit(run())
