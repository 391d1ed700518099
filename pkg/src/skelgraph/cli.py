"""Command-line entry point.

Exit codes: 0 success, 1 usage error, 2 data/format error, 3 numeric failure.
Settings resolve as built-in defaults < ``--config`` JSON file < flags.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from .checkpoint import load_checkpoint
from .data.io import (
    atomic_write_text,
    document_to_sequence,
    dumps_document,
    load_directory,
    load_sequence,
    save_sequence,
    sequence_to_document,
)
from .data.sequence import SkeletonSequence, center_on_torso, window_samples
from .data.synthetic import SynthConfig, attach_images, synthesize
from .errors import DataError, SkelGraphError, UsageError
from .losses import LossWeights
from .metrics import report_from_curves
from .model import ModelConfig, predict
from .plotting import curves_svg, skeleton_frames
from .trainer import ImageLoader, TrainConfig, evaluate, evaluate_predictions, train

log = logging.getLogger("skelgraph")

DEFAULTS = {
    "synth": {"n": 8, "length": 120, "joints": 21, "fps": 30.0, "motion": "gait", "seed": 0, "noise": 0.0,
              "bone_length": 0.25, "images": False, "image_size": 64},
    "train": {"epochs": 450, "lr": 0.01, "decay_factor": 0.2, "decay_every": 200, "batch_size": 128, "seed": 0,
              "obs": 30, "pred": 60, "n_spgcnn": 1, "n_txcnn": 11, "vision": "none", "learn_adjacency": True,
              "adjacency_norm": False, "lambda1": 0.0005, "lambda2": 0.1, "stride": 1, "momentum": 0.0,
              "clip_norm": None, "checkpoint_every": 0, "dtype": "float32", "cos_pairs": "index",
              "eval_data": None, "eval_every": 0, "image_size": 128},
    "eval": {"ckpt": None, "data": None, "pred": None, "gt": None, "out": None, "stride": None, "fps": None,
             "ade_mode": "all", "seed": 0},
    "predict": {"ckpt": None, "start": None, "vision": None, "copy_gt": False, "obs": 30, "pred": 60, "seed": 0},
    "plot": {"frames": None, "every": 10, "seed": 0},
    "export-adjacency": {"seed": 0},
}


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _bool_flag(p, name: str, help: str) -> None:
    p.add_argument(f"--{name}", dest=name.replace("-", "_"), action="store_true", default=argparse.SUPPRESS, help=help)
    p.add_argument(f"--no-{name}", dest=name.replace("-", "_"), action="store_false", default=argparse.SUPPRESS)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="skelgraph", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    S = argparse.SUPPRESS

    def add(name, help):
        p = sub.add_parser(name, help=help, argument_default=S)
        p.add_argument("--config", help="JSON file of settings for this subcommand")
        p.add_argument("--seed", type=int)
        return p

    p = add("synth", "generate synthetic SKELSEQ sequences")
    p.add_argument("--out", required=True)
    p.add_argument("--n", type=int)
    p.add_argument("--length", type=int)
    p.add_argument("--joints", type=int)
    p.add_argument("--fps", type=float)
    p.add_argument("--motion", choices=["static", "linear", "gait"])
    p.add_argument("--noise", type=float)
    p.add_argument("--bone-length", type=float)
    p.add_argument("--image-size", type=int)
    _bool_flag(p, "images", "render a PNG per frame")

    p = add("train", "train a model on a directory of sequences")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True, help="checkpoint directory")
    p.add_argument("--epochs", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--decay-factor", type=float)
    p.add_argument("--decay-every", type=int)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--obs", type=int)
    p.add_argument("--pred", type=int)
    p.add_argument("--n-spgcnn", type=int)
    p.add_argument("--n-txcnn", type=int)
    p.add_argument("--vision", choices=["none", "last_image", "last", "sequence"])
    p.add_argument("--image-size", type=int)
    _bool_flag(p, "learn-adjacency", "learn the adjacency with a CNN")
    _bool_flag(p, "adjacency-norm", "symmetric degree normalization of the skeleton adjacency")
    p.add_argument("--lambda1", type=float)
    p.add_argument("--lambda2", type=float)
    p.add_argument("--stride", type=int)
    p.add_argument("--momentum", type=float)
    p.add_argument("--clip-norm", type=float)
    p.add_argument("--checkpoint-every", type=int)
    p.add_argument("--dtype", choices=["float32", "float64"])
    p.add_argument("--cos-pairs", choices=["index", "bones"])
    p.add_argument("--eval-data")
    p.add_argument("--eval-every", type=int)

    p = add("eval", "evaluate a checkpoint, or a prediction file against ground truth")
    p.add_argument("--ckpt")
    p.add_argument("--data")
    p.add_argument("--pred")
    p.add_argument("--gt")
    p.add_argument("--out")
    p.add_argument("--stride", type=int)
    p.add_argument("--fps", type=float)
    p.add_argument("--ade-mode", choices=["all", "checkpoints"])

    p = add("predict", "predict future 3D poses for one sequence window")
    p.add_argument("--ckpt")
    p.add_argument("--sequence", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--start", type=int, help="first observed frame (default: last full window)")
    p.add_argument("--vision", choices=["none", "last_image", "last", "sequence"])
    p.add_argument("--copy-gt", action="store_true", help="emit the ground-truth future instead of a model output")
    p.add_argument("--obs", type=int)
    p.add_argument("--pred", type=int)

    p = add("plot", "render SVG overlays and error curves")
    p.add_argument("--gt", required=True)
    p.add_argument("--pred", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--frames", help="comma-separated prediction frame indices")
    p.add_argument("--every", type=int)

    p = add("export-adjacency", "write the learned adjacency as CSV")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--out", required=True)
    return parser


def resolve_settings(command: str, args: argparse.Namespace) -> dict:
    settings = dict(DEFAULTS[command])
    flags = {k: v for k, v in vars(args).items() if k not in ("command", "config")}
    if getattr(args, "config", None):
        try:
            file_cfg = json.loads(Path(args.config).read_text(encoding="utf-8"))
        except OSError as exc:
            raise DataError(f"{args.config}: cannot read config ({exc.strerror})") from None
        except json.JSONDecodeError as exc:
            raise DataError(f"{args.config}: line {exc.lineno}: {exc.msg}") from None
        if not isinstance(file_cfg, dict):
            raise UsageError(f"{args.config}: config must be a JSON object")
        file_cfg = {k.replace("-", "_"): v for k, v in file_cfg.items()}
        known = set(settings) | set(flags) | {"out", "data", "sequence", "gt", "pred", "ckpt"}
        unknown = sorted(set(file_cfg) - known)
        if unknown:
            raise UsageError(f"{args.config}: unknown settings {unknown}")
        settings.update(file_cfg)
    settings.update(flags)
    return settings


# -- subcommands -----------------------------------------------------------------------------

def cmd_synth(s: dict) -> None:
    cfg = SynthConfig(n_sequences=s["n"], length=s["length"], joints=s["joints"], fps=s["fps"], seed=s["seed"],
                      motion=s["motion"], noise=s["noise"], bone_length=s["bone_length"], images=s["images"],
                      image_size=s["image_size"])
    out = Path(s["out"])
    out.mkdir(parents=True, exist_ok=True)
    image_rng = np.random.default_rng([cfg.seed, 2])
    for seq in synthesize(cfg):
        if cfg.images:
            attach_images(seq, out, cfg, image_rng)
        save_sequence(seq, out / f"{seq.meta['name']}.json")
    log.info("wrote %d sequences to %s", cfg.n_sequences, out)


def _windows(seqs: list[SkeletonSequence], obs: int, pred: int, stride: int, images: bool):
    samples = [w for q in seqs for w in window_samples(q, obs, pred, stride, use_images=images)]
    if not samples:
        raise DataError(f"no samples: no sequence holds {obs + pred} frames")
    return samples


def _check_skeletons(seqs: list[SkeletonSequence]) -> None:
    ref = seqs[0]
    for q in seqs[1:]:
        if q.joints != ref.joints or q.bones != ref.bones or q.path_joint != ref.path_joint:
            raise DataError(f"sequence {q.meta.get('name')} uses a different skeleton than {ref.meta.get('name')}")


def cmd_train(s: dict) -> None:
    seqs = load_directory(s["data"])
    if not seqs:
        raise DataError(f"no samples: {s['data']} holds no .json sequences")
    _check_skeletons(seqs)
    model_cfg = ModelConfig(obs_steps=s["obs"], pred_steps=s["pred"], joints=seqs[0].joints,
                            n_spgcnn=s["n_spgcnn"], n_txcnn=s["n_txcnn"], vision_mode=s["vision"],
                            learn_adjacency=s["learn_adjacency"], adjacency_norm=s["adjacency_norm"],
                            image_size=s["image_size"], dtype=s["dtype"])
    config = TrainConfig(lr0=s["lr"], decay_factor=s["decay_factor"], decay_every=s["decay_every"],
                         epochs=s["epochs"], batch_size=s["batch_size"], seed=s["seed"],
                         loss_weights=LossWeights(s["lambda1"], s["lambda2"]), model=model_cfg,
                         momentum=s["momentum"], clip_norm=s["clip_norm"], checkpoint_dir=s["out"],
                         checkpoint_every=s["checkpoint_every"], eval_every=s["eval_every"],
                         fps=seqs[0].fps, cos_pairs=s["cos_pairs"])
    use_images = model_cfg.vision_mode != "none"
    samples = _windows(seqs, model_cfg.obs_steps, model_cfg.pred_steps, s["stride"], use_images)
    eval_samples = None
    if s["eval_data"]:
        eval_seqs = load_directory(s["eval_data"])
        eval_samples = _windows(eval_seqs, model_cfg.obs_steps, model_cfg.pred_steps, model_cfg.pred_steps, use_images)
    log.info("training on %d samples", len(samples))
    state, history = train(config, samples, eval_samples)
    log.info("final loss %.6g after %d epochs", history[-1]["loss"] if history else float("nan"), len(history))


def _write_metrics(rep, out: Path) -> None:
    atomic_write_text(out, rep.to_json())
    sys.stdout.write(rep.to_json())


def cmd_eval(s: dict) -> None:
    if s["ckpt"]:
        if not s["data"]:
            raise UsageError("eval --ckpt needs --data")
        state = load_checkpoint(s["ckpt"])
        seqs = load_directory(s["data"])
        cfg = state.model.config
        if seqs and seqs[0].joints != cfg.joints:
            raise DataError(f"data has {seqs[0].joints} joints, checkpoint expects {cfg.joints}")
        stride = s["stride"] or cfg.pred_steps
        samples = _windows(seqs, cfg.obs_steps, cfg.pred_steps, stride, cfg.vision_mode != "none")
        fps = s["fps"] or seqs[0].fps
        rep = evaluate(state, samples, fps)
        if s["ade_mode"] != "all":
            rep = report_from_curves(rep.pose_curve, rep.path_curve, fps, rep.num_samples, s["ade_mode"])
        ckpt_path = Path(s["ckpt"])
        out = Path(s["out"]) if s["out"] else (ckpt_path if ckpt_path.is_dir() else ckpt_path.parent) / "metrics.json"
    elif s["pred"] and s["gt"]:
        pred_seq = load_sequence(s["pred"])
        gt_seq = load_sequence(s["gt"])
        gt, pr = _aligned(gt_seq, pred_seq)
        fps = s["fps"] or gt_seq.fps
        rep = evaluate_predictions([(gt, pr)], fps, gt_seq.path_joint)
        if s["ade_mode"] != "all":
            rep = report_from_curves(rep.pose_curve, rep.path_curve, fps, rep.num_samples, s["ade_mode"])
        out = Path(s["out"]) if s["out"] else Path(s["pred"]).with_suffix(".metrics.json")
    else:
        raise UsageError("eval needs either --ckpt and --data, or --pred and --gt")
    _write_metrics(rep, out)


def _aligned(gt_seq: SkeletonSequence, pred_seq: SkeletonSequence) -> tuple[np.ndarray, np.ndarray]:
    if gt_seq.joints != pred_seq.joints:
        raise DataError(f"ground truth has {gt_seq.joints} joints, prediction has {pred_seq.joints}")
    start = int(pred_seq.meta.get("start_frame", 0))
    steps = len(pred_seq)
    if start < 0 or start + steps > len(gt_seq):
        raise DataError(f"prediction frames [{start}, {start + steps}) fall outside the ground truth "
                        f"({len(gt_seq)} frames)")
    return gt_seq.p3d[start : start + steps], pred_seq.p3d


def cmd_predict(s: dict) -> None:
    seq = load_sequence(s["sequence"])
    state = None
    if s["copy_gt"]:
        obs, pred = s["obs"], s["pred"]
        if s["ckpt"]:
            state = load_checkpoint(s["ckpt"])
            obs, pred = state.model.config.obs_steps, state.model.config.pred_steps
    else:
        if not s["ckpt"]:
            raise UsageError("predict needs --ckpt (or --copy-gt)")
        state = load_checkpoint(s["ckpt"])
        obs, pred = state.model.config.obs_steps, state.model.config.pred_steps
        if seq.joints != state.model.config.joints:
            raise DataError(f"sequence has {seq.joints} joints, checkpoint expects {state.model.config.joints}")

    start = s["start"]
    if start is None:
        start = max(len(seq) - obs - pred, 0) if s["copy_gt"] or len(seq) >= obs + pred else max(len(seq) - obs, 0)
    if start < 0 or start + obs > len(seq):
        raise DataError(f"observation window [{start}, {start + obs}) needs {obs} frames; sequence has {len(seq)}")
    first = start + obs

    if s["copy_gt"]:
        if first + pred > len(seq):
            raise DataError(f"--copy-gt needs {pred} future frames after frame {first}")
        poses = seq.p3d[first : first + pred].copy()
    else:
        cfg = state.model.config
        if s["vision"] is not None:
            requested = "last_image" if s["vision"] == "last" else s["vision"]
            if requested != cfg.vision_mode:
                raise UsageError(f"--vision {requested} conflicts with the checkpoint's vision mode {cfg.vision_mode}")
        if seq.p2d is None:
            raise DataError("sequence has no 2D observations")
        window = window_samples(_padded(seq, start, obs, pred), obs, pred, stride=1,
                                use_images=cfg.vision_mode != "none")[0]
        images = ImageLoader(cfg)(window) if cfg.vision_mode != "none" else None
        poses = predict(state.model, window.obs_graph, state.normalization, images, seq.path_joint).poses
    _, path = center_on_torso(poses, seq.path_joint)
    out_seq = SkeletonSequence(joints=seq.joints, fps=seq.fps, bones=seq.bones, path_joint=seq.path_joint, p3d=poses)
    extra = {"kind": "prediction", "source": Path(s["sequence"]).name, "start_frame": first,
             "obs_steps": obs, "path": path.tolist()}
    atomic_write_text(s["out"], dumps_document(sequence_to_document(out_seq, extra)))
    log.info("wrote %d predicted frames to %s", pred, s["out"])


def _padded(seq: SkeletonSequence, start: int, obs: int, pred: int) -> SkeletonSequence:
    """Observation window plus placeholder future frames, so windowing applies."""
    end = start + obs
    future = np.repeat(seq.p3d[end - 1 : end], pred, axis=0)
    p3d = np.concatenate([seq.p3d[start:end], future])
    p2d = np.concatenate([seq.p2d[start:end], np.repeat(seq.p2d[end - 1 : end], pred, axis=0)])
    images = None
    if seq.images is not None:
        images = list(seq.images[start:end]) + [seq.images[end - 1]] * pred
    return SkeletonSequence(joints=seq.joints, fps=seq.fps, bones=seq.bones, path_joint=seq.path_joint,
                            p3d=p3d, p2d=p2d, images=images, meta=dict(seq.meta))


def cmd_plot(s: dict) -> None:
    gt_seq, pred_seq = load_sequence(s["gt"]), load_sequence(s["pred"])
    gt, pr = _aligned(gt_seq, pred_seq) if "start_frame" in pred_seq.meta else (gt_seq.p3d, pred_seq.p3d)
    if gt.shape != pr.shape:
        raise DataError(f"ground truth {gt.shape} and prediction {pr.shape} differ in frames or joints")
    if s["frames"]:
        try:
            frames = [int(f) for f in s["frames"].split(",")]
        except ValueError:
            raise UsageError(f"--frames must be comma-separated integers, got {s['frames']!r}") from None
        if any(not 0 <= f < len(gt) for f in frames):
            raise DataError(f"--frames outside [0, {len(gt)})")
    else:
        frames = list(range(0, len(gt), max(1, s["every"])))
        if frames[-1] != len(gt) - 1:
            frames.append(len(gt) - 1)
    out = Path(s["out"])
    for t, svg in skeleton_frames(gt, pr, gt_seq.bones, frames).items():
        atomic_write_text(out / f"frame_{t:04d}.svg", svg)
    rep = evaluate_predictions([(gt, pr)], gt_seq.fps, gt_seq.path_joint)
    atomic_write_text(out / "mpjpe_curves.svg", curves_svg(rep.pose_curve, rep.path_curve, gt_seq.fps))
    log.info("wrote %d frame plots and mpjpe_curves.svg to %s", len(frames), out)


def write_adjacency_csv(adjacency: np.ndarray, path) -> None:
    t, j, _ = adjacency.shape
    lines = [f"# T={t} J={j}"]
    lines += [",".join(repr(float(v)) for v in row) for row in adjacency.reshape(t * j, j)]
    atomic_write_text(path, "\n".join(lines) + "\n")


def load_adjacency_csv(path) -> np.ndarray:
    text = Path(path).read_text(encoding="utf-8").splitlines()
    if not text or not text[0].startswith("# T="):
        raise DataError(f"{path}: missing '# T=.. J=..' header")
    fields = dict(part.split("=") for part in text[0][2:].split())
    t, j = int(fields["T"]), int(fields["J"])
    rows = np.array([[float(v) for v in line.split(",")] for line in text[1:] if line.strip()])
    if rows.shape != (t * j, j):
        raise DataError(f"{path}: expected {t * j} rows of {j} values, got {rows.shape}")
    return rows.reshape(t, j, j)


def cmd_export_adjacency(s: dict) -> None:
    state = load_checkpoint(s["ckpt"])
    bones = state.skeleton.get("bones")
    if bones is None:
        raise DataError("checkpoint does not record the skeleton bones")
    write_adjacency_csv(state.model.learned_adjacency([tuple(b) for b in bones]).astype(np.float64), s["out"])


COMMANDS = {"synth": cmd_synth, "train": cmd_train, "eval": cmd_eval, "predict": cmd_predict, "plot": cmd_plot,
            "export-adjacency": cmd_export_adjacency}


def _configure_logging() -> None:
    level = os.environ.get("SKELGRAPH_LOG", "info").lower()
    levels = {"error": logging.ERROR, "info": logging.INFO, "debug": logging.DEBUG}
    if level not in levels:
        level = "info"
    root = logging.getLogger("skelgraph")
    root.handlers.clear()
    handler = logging.StreamHandler(sys.stderr)
    handler.setFormatter(logging.Formatter("%(levelname)s %(name)s: %(message)s"))
    root.addHandler(handler)
    root.setLevel(levels[level])
    root.propagate = False


def run(argv=None) -> int:
    _configure_logging()
    try:
        args = build_parser().parse_args(argv)
        settings = resolve_settings(args.command, args)
        log.info("effective config for %s: %s", args.command, json.dumps(settings, sort_keys=True, default=str))
        COMMANDS[args.command](settings)
    except SkelGraphError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    except KeyError as exc:
        print(f"error: malformed input, missing {exc}", file=sys.stderr)
        return 2
    return 0


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
