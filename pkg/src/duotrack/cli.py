"""Command-line entry point: synth / train / track / eval / gradcheck."""

from __future__ import annotations

import argparse
import json
import os
import sys
import time
from pathlib import Path

import numpy as np

from . import autodiff as ad
from . import data as D
from . import metrics as M
from .config import RunConfig, build_config
from .optim import Adam, warmup_lr
from .predictor import MotionPredictor, PredictorConfig, gradient_check, smooth_l1_loss
from .tracker import (Detection, KalmanAdapter, LearnedAdapter, NoMotionAdapter,
                      Tracker)

VERBOSE = os.environ.get("DUOTRACK_LOG", "").lower() in ("1", "debug", "verbose")


def _log(msg: str):
    if VERBOSE:
        print(msg, file=sys.stderr)


def _scene_dirs(root: Path) -> list[Path]:
    dirs = sorted(d for d in Path(root).iterdir()
                  if d.is_dir() and (d / "seqmeta.txt").exists())
    if not dirs:
        raise FileNotFoundError(f"no sequence directories under {root}")
    return dirs


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------

def cmd_synth(args, cfg: RunConfig) -> int:
    spec = json.loads(Path(args.spec).read_text())
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    if "template" in spec:
        if spec["template"] != "benchmark":
            raise ValueError(f"unknown template {spec['template']!r}")
        specs = D.benchmark_scene_specs(
            n_scenes=spec.get("n_scenes", 20),
            seed=spec.get("seed", cfg.seed),
            n_frames=spec.get("n_frames", 80),
            noise_std=spec.get("noise_std", 0.01),
            drop_rate=spec.get("drop_rate", 0.1),
            prefix=spec.get("prefix", "scene"),
        )
    else:
        specs = [D.SceneSpec(**s) for s in spec["scenes"]]
    for sc in specs:
        gt, det = D.synth_scene(sc)
        D.write_scene(det, out / sc.name, gt=gt)
        _log(f"synth {sc.name}: {gt.total_boxes()} gt boxes, {det.total_boxes()} detections")
    cfg.save(out / "resolved_config.json")
    return 0


def train_model(scene_dirs: list[Path], cfg: RunConfig, log_stream=None) -> MotionPredictor:
    samples = []
    for d in scene_dirs:
        scene = D.load_scene(d, "gt")
        samples.extend(D.extract_windows(scene, cfg.n_past))
    if not samples:
        raise ValueError("no training windows extracted")
    model = MotionPredictor(cfg.predictor_config(), seed=cfg.seed)
    model.training = True
    opt = Adam(model.params)
    rng = np.random.default_rng(cfg.seed)
    policy = cfg.augment_policy()

    def batch_loss(idx, augmented=True):
        losses = []
        for i in idx:
            s = D.augment(samples[i], policy, rng) if augmented else samples[i]
            pred = model.forward(s.window.as_matrix())
            losses.append(smooth_l1_loss(pred, np.array([s.target.as_tuple()])))
        return ad.scale(ad.add_n(losses), 1.0 / len(losses))

    t0 = time.time()
    for step in range(1, cfg.steps + 1):
        idx = rng.integers(0, len(samples), size=cfg.batch_size)
        loss = batch_loss(idx)
        ad.backward(loss)
        opt.step(warmup_lr(step, cfg.d_m, cfg.warmup))
        opt.zero_grad()
        if log_stream is not None and (step == 1 or step % 50 == 0 or step == cfg.steps):
            log_stream.write(json.dumps({
                "step": step, "loss": loss.item(),
                "lr": warmup_lr(step, cfg.d_m, cfg.warmup),
                "elapsed_s": round(time.time() - t0, 2),
            }) + "\n")
            log_stream.flush()
    model.training = False
    return model


def cmd_train(args, cfg: RunConfig) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    dirs = _scene_dirs(Path(args.data))
    with open(out / "train_log.jsonl", "w") as log:
        model = train_model(dirs, cfg, log_stream=log)
    model.save(out / "model.ckpt")
    cfg.save(out / "resolved_config.json")
    _log(f"trained on {len(dirs)} scenes -> {out / 'model.ckpt'}")
    return 0


def make_adapter(cfg: RunConfig, checkpoint=None):
    if cfg.predictor == "none":
        return NoMotionAdapter()
    if cfg.predictor == "kalman":
        return KalmanAdapter()
    if cfg.predictor == "learned":
        if checkpoint is None:
            raise ValueError("learned predictor needs --checkpoint")
        return LearnedAdapter(MotionPredictor.load(checkpoint))
    raise ValueError(f"unknown predictor '{cfg.predictor}'")


def track_scene(seq_dir: Path, adapter, cfg: RunConfig, diag_stream=None):
    scene = D.load_scene(seq_dir, "det")
    tracker = Tracker(adapter, cfg.tracker_config(), diag_stream=diag_stream)
    rows = []
    for frame in range(1, scene.n_frames() + 1):
        dets = [Detection(d.box, d.conf) for d in scene.frames.get(frame, [])]
        for track_id, box in tracker.step(frame, dets):
            rows.append((frame, track_id, box, 1.0))
    return rows, scene


def cmd_track(args, cfg: RunConfig) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    adapter_factory = lambda: make_adapter(cfg, args.checkpoint)
    for seq_dir in _scene_dirs(Path(args.data)):
        diag = None
        if VERBOSE:
            diag = open(out / f"{seq_dir.name}.diag.jsonl", "w")
        try:
            rows, scene = track_scene(seq_dir, adapter_factory(), cfg, diag_stream=diag)
        finally:
            if diag is not None:
                diag.close()
        D.write_mot(rows, out / f"{seq_dir.name}.txt", scene.width, scene.height)
        _log(f"tracked {seq_dir.name}: {len(rows)} rows")
    cfg.save(out / "resolved_config.json")
    return 0


def cmd_eval(args, cfg: RunConfig) -> int:
    gt_root = Path(args.gt)
    hyp_root = Path(args.hyp)
    reports = {}
    for seq_dir in _scene_dirs(gt_root):
        hyp_path = hyp_root / f"{seq_dir.name}.txt"
        if not hyp_path.exists():
            raise FileNotFoundError(f"no hypothesis file for {seq_dir.name}: {hyp_path}")
        gt = D.load_scene(seq_dir, "gt")
        meta = D.read_meta(seq_dir)
        hyp = D.parse_mot(hyp_path, meta["width"], meta["height"], seq_dir.name)
        reports[seq_dir.name] = M.evaluate(gt, hyp)
    agg = M.aggregate(list(reports.values()))
    lines = [f"{name:<16} {rep.as_text()}" for name, rep in sorted(reports.items())]
    lines.append(f"{'TOTAL':<16} {agg.as_text()}")
    text = "\n".join(lines)
    print(text)
    payload = {name: json.loads(rep.as_json()) for name, rep in reports.items()}
    payload["TOTAL"] = json.loads(agg.as_json())
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "report.json").write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")
        (out / "report.txt").write_text(text + "\n")
        cfg.save(out / "resolved_config.json")
    return 0


def cmd_gradcheck(args, cfg: RunConfig) -> int:
    pconfig = PredictorConfig(d_m=cfg.d_m, layers=cfg.layers, heads=cfg.heads,
                              n_past=cfg.n_past, pooling=cfg.pooling,
                              enable_mhsa=cfg.enable_mhsa,
                              enable_dymlp=cfg.enable_dymlp)
    seeds = [cfg.seed + i for i in range(args.n_seeds)]
    worst = 0.0
    for seed in seeds:
        res = gradient_check(pconfig, seed)
        status = "ok" if res["max_rel_err"] < args.tol else "FAIL"
        print(f"seed {seed}: max rel err {res['max_rel_err']:.3e} "
              f"over {res['n_params']} params [{status}]")
        worst = max(worst, res["max_rel_err"])
    if worst >= args.tol:
        print(f"gradcheck FAILED: {worst:.3e} >= {args.tol:g}")
        return 1
    return 0


# ---------------------------------------------------------------------------
# argument parsing
# ---------------------------------------------------------------------------

def _add_common(p: argparse.ArgumentParser):
    p.add_argument("--config", help="JSON config file")
    p.add_argument("--preset", choices=("paper", "desk"))
    p.add_argument("--seed", type=int)
    p.add_argument("--pooling", choices=("mean", "last", "sum"))
    p.add_argument("--no-mhsa", action="store_true")
    p.add_argument("--no-dymlp", action="store_true")
    p.add_argument("--drop-prob", type=float)
    p.add_argument("--jitter", type=float)
    p.add_argument("--rand-len", action="store_true")
    p.add_argument("--n-past", type=int)
    p.add_argument("--t-max", type=int)
    p.add_argument("--iou-gate", type=float)
    p.add_argument("--steps", type=int)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--warmup", type=int)


def _resolve(args) -> RunConfig:
    overrides = {
        "seed": args.seed,
        "pooling": args.pooling,
        "drop_prob": args.drop_prob,
        "jitter": args.jitter,
        "n_past": args.n_past,
        "t_max": args.t_max,
        "iou_gate": args.iou_gate,
        "steps": args.steps,
        "batch_size": args.batch_size,
        "warmup": args.warmup,
    }
    if args.no_mhsa:
        overrides["enable_mhsa"] = False
    if args.no_dymlp:
        overrides["enable_dymlp"] = False
    if args.rand_len:
        overrides["random_length"] = True
    if getattr(args, "predictor", None):
        overrides["predictor"] = args.predictor
    return build_config(preset=args.preset, config_file=args.config,
                        overrides=overrides)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="duotrack")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate synthetic scenes (gt + noisy det)")
    p.add_argument("--spec", required=True)
    p.add_argument("--out", required=True)
    _add_common(p)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", help="train the motion predictor")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    _add_common(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("track", help="run the tracker over sequences")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--checkpoint")
    p.add_argument("--predictor", choices=("learned", "kalman", "none"))
    _add_common(p)
    p.set_defaults(func=cmd_track)

    p = sub.add_parser("eval", help="score tracker output against ground truth")
    p.add_argument("--gt", required=True)
    p.add_argument("--hyp", required=True)
    p.add_argument("--out")
    _add_common(p)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("gradcheck", help="finite-difference gradient audit")
    p.add_argument("--n-seeds", type=int, default=5)
    p.add_argument("--tol", type=float, default=1e-3)
    _add_common(p)
    p.set_defaults(func=cmd_gradcheck)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = _resolve(args)
        return args.func(args, cfg)
    except Exception as exc:  # one-line machine-parsable failure
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
