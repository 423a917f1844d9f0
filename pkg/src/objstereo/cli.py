"""Command-line entry point: synth, train, match, eval-depth, eval-det, gradcheck, ablate."""

from __future__ import annotations

import argparse
import os
import sys
import time
import zipfile

import numpy as np

from . import io as fio
from .autodiff import ParamStore
from .config import PipelineConfig, describe, load_config, method_config, save_config, toy_config
from .detection.evaluation import DIFFICULTIES, average_precision
from .disparity import evaluate_depth
from .model import predict, train
from .synth import DEFAULT_MIX, make_dataset

CHECKPOINT = "checkpoint.npz"
CONFIG = "config.json"
LOSS_CURVE = "loss_curve.txt"
LOSS_COLUMNS = ("step", "L_disp", "L_rpn", "L_header", "total")


class CliError(Exception):
    pass


# ---------------------------------------------------------------- checkpoints

def save_checkpoint(path, params):
    """``np.savez`` layout with fixed zip timestamps so reruns are byte-identical."""
    with zipfile.ZipFile(path, "w", zipfile.ZIP_STORED) as zf:
        for key, arr in sorted(params.state_dict().items()):
            info = zipfile.ZipInfo(key + ".npy", date_time=(1980, 1, 1, 0, 0, 0))
            with zf.open(info, "w") as fh:
                np.lib.format.write_array(fh, np.asanyarray(arr), allow_pickle=False)


def load_checkpoint(path):
    if not os.path.exists(path):
        raise CliError(f"{path}: checkpoint not found")
    with np.load(path, allow_pickle=False) as data:
        return ParamStore.from_state({k: data[k] for k in data.files})


def _load_run(folder):
    cfg_path = os.path.join(folder, CONFIG)
    if not os.path.exists(cfg_path):
        raise CliError(f"{cfg_path}: config not found (is this a train output directory?)")
    return load_config(cfg_path), load_checkpoint(os.path.join(folder, CHECKPOINT))


def _load_scenes(root):
    try:
        paths = fio.list_scenes(root)
    except FileNotFoundError as e:
        raise CliError(str(e)) from None
    if not paths:
        raise CliError(f"{root}: no scene folders found")
    return [fio.read_scene(p) for p in paths]


def _append_loss_rows(path, rows):
    new = not os.path.exists(path) or os.path.getsize(path) == 0
    with open(path, "a") as fh:
        if new:
            fh.write(" ".join(f"{c:>10}" for c in LOSS_COLUMNS) + "\n")
        for r in rows:
            vals = [r["disp"], r["rpn"], r["header"], r["total"]]
            fh.write(f"{r['step']:>10d} " + " ".join(f"{v:>10.6f}" for v in vals) + "\n")


# ---------------------------------------------------------------- commands

def cmd_synth(args):
    scenes = make_dataset(args.n, args.seed, mix=tuple(args.mix))
    for i, sc in enumerate(scenes):
        fio.write_scene(os.path.join(args.out, "scenes", fio.scene_id(i)), sc)
    print(f"wrote {len(scenes)} scenes to {os.path.join(args.out, 'scenes')}")
    return 0


def _base_config(args):
    if args.config:
        cfg = load_config(args.config)
    else:
        cfg = toy_config() if args.toy else PipelineConfig()
    changes = {}
    if args.steps is not None:
        changes["steps"] = args.steps
    if args.seed is not None:
        changes["seed"] = args.seed
    return cfg.replace(**changes) if changes else cfg


def _train_into(cfg, data, out):
    os.makedirs(out, exist_ok=True)
    scenes = _load_scenes(data)
    save_config(os.path.join(out, CONFIG), cfg)
    curve = os.path.join(out, LOSS_CURVE)
    pending = []

    def log(row):
        pending.append(row)
        if len(pending) >= 50:
            _append_loss_rows(curve, pending)
            pending.clear()

    res = train(cfg, scenes, log=log)
    _append_loss_rows(curve, pending)
    save_checkpoint(os.path.join(out, CHECKPOINT), res.params)
    last = res.history[-1] if res.history else None
    msg = f"trained {describe(cfg)} for {len(res.history)} steps in {res.seconds:.1f}s"
    if last:
        msg += f", final total {last['total']:.4f}"
    print(msg)
    return res


def cmd_train(args):
    cfg = _base_config(args)
    if args.method is not None:
        cfg = method_config(args.method, cfg)
    _train_into(cfg, args.data, args.out)
    return 0


def _match_into(run, data, out, with_dets):
    cfg, params = _load_run(run)
    for path in fio.list_scenes(data):
        sc = fio.read_scene(path)
        disp, dets = predict(params, cfg, sc.left, sc.right, sc.camera)
        folder = os.path.join(out, sc.name)
        os.makedirs(folder, exist_ok=True)
        fio.write_pfm(os.path.join(folder, "disp.pfm"), disp)
        if with_dets:
            fio.write_detections(os.path.join(folder, "detections.txt"), dets, sc.camera)
    print(f"wrote predictions to {out}")


def cmd_match(args):
    if not os.path.isdir(args.data):
        raise CliError(f"{args.data}: not a directory")
    _match_into(args.checkpoint, args.data, args.out, args.detections)
    return 0


def _pred_folders(root):
    """Scene name -> folder under a prediction (or dataset) directory."""
    try:
        return {os.path.basename(p): p for p in fio.list_scenes(root)}
    except FileNotFoundError as e:
        raise CliError(str(e)) from None


def _depth_table(pred_root, gt_root):
    preds = _pred_folders(pred_root)
    rows = []
    for gt_path in fio.list_scenes(gt_root):
        name = os.path.basename(gt_path)
        if name not in preds:
            raise CliError(f"{os.path.join(pred_root, name)}: missing prediction for scene {name}")
        pred_disp = fio.read_pfm(os.path.join(preds[name], "disp.pfm"))
        gt_disp = fio.read_pfm(os.path.join(gt_path, "disp.pfm"))
        if pred_disp.shape != gt_disp.shape:
            raise CliError(f"{preds[name]}: disparity shape {pred_disp.shape} != ground truth {gt_disp.shape}")
        cam = fio.read_calib(os.path.join(gt_path, "calib.txt")).camera(*gt_disp.shape)
        rows.append(evaluate_depth(pred_disp, gt_disp, cam.geometry))
    if not rows:
        raise CliError(f"{gt_root}: no scenes to evaluate")
    return {k: float(np.mean([r[k] for r in rows])) for k in ("abs_rel", "sq_rel", "rmse")}, len(rows)


def _print_depth(metrics, n):
    print(f"{'abs_rel':>10}{'sq_rel':>10}{'rmse':>10}{'scenes':>8}")
    print(f"{metrics['abs_rel']:>10.4f}{metrics['sq_rel']:>10.4f}{metrics['rmse']:>10.4f}{n:>8d}")
    print("depth " + " ".join(f"{k}={metrics[k]:.9g}" for k in ("abs_rel", "sq_rel", "rmse")))


def cmd_eval_depth(args):
    metrics, n = _depth_table(args.pred, args.gt)
    _print_depth(metrics, n)
    return 0


def _det_table(pred_root, gt_root, iou):
    preds = _pred_folders(pred_root)
    dets, labels = [], []
    for gt_path in fio.list_scenes(gt_root):
        name = os.path.basename(gt_path)
        sc = fio.read_scene(gt_path)
        if sc.labels is None:
            raise CliError(f"{os.path.join(gt_path, 'labels.txt')}: missing labels")
        det_path = os.path.join(preds.get(name, os.path.join(pred_root, name)), "detections.txt")
        if not os.path.exists(det_path):
            raise CliError(f"{det_path}: missing detections for scene {name}")
        dets.append(fio.read_detections(det_path, sc.camera))
        labels.append(sc.labels)
    return {mode: average_precision(dets, labels, iou, mode) for mode in ("bev", "3d")}


def _print_det(ap, iou):
    def fmt(v):
        return "n/a" if v is None else f"{v:.4f}"

    print(f"{'AP@' + format(iou, 'g'):<8}" + "".join(f"{d:>10}" for d in DIFFICULTIES))
    for mode in ("bev", "3d"):
        print(f"{mode.upper():<8}" + "".join(f"{fmt(ap[mode][d]):>10}" for d in DIFFICULTIES))
    for mode in ("bev", "3d"):
        print(f"ap_{mode} " + " ".join(f"{d}={fmt(ap[mode][d])}" for d in DIFFICULTIES))


def cmd_eval_det(args):
    _print_det(_det_table(args.pred, args.gt, args.iou), args.iou)
    return 0


def cmd_gradcheck(args):
    from .gradsuite import format_rows, run_suite

    t0 = time.perf_counter()
    rows = run_suite(args.instances, args.seed)
    print(format_rows(rows))
    bad = [r.name for r in rows if not r.ok]
    print(f"{len(rows) - len(bad)}/{len(rows)} passed in {time.perf_counter() - t0:.1f}s")
    if bad:
        print("FAILED: " + ", ".join(bad))
    return 1 if bad else 0


def cmd_ablate(args):
    cfg = method_config(args.method, _base_config(args))
    print(f"method {args.method}: {describe(cfg)}")
    _train_into(cfg, args.data, args.out)
    test = args.test or args.data
    pred = os.path.join(args.out, "pred")
    _match_into(args.out, test, pred, cfg.header_on)
    _print_depth(*_depth_table(pred, test))
    if cfg.header_on:
        _print_det(_det_table(pred, test, 0.7), 0.7)
    return 0


# ---------------------------------------------------------------- parser

def _add_train_options(p):
    p.add_argument("--data", required=True, help="dataset directory (contains scenes/)")
    p.add_argument("--out", required=True, help="run directory for checkpoint, config and loss curve")
    p.add_argument("--config", help="JSON config file; missing keys take defaults")
    p.add_argument("--toy", action="store_true", help="start from the small desk-scale preset")
    p.add_argument("--steps", type=int, help="override the number of training steps")
    p.add_argument("--seed", type=int, help="override the config seed")


def build_parser():
    parser = argparse.ArgumentParser(prog="objstereo", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="render a synthetic stereo dataset")
    p.add_argument("--out", required=True)
    p.add_argument("--n", type=int, default=32)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--mix", type=float, nargs=3, default=DEFAULT_MIX, metavar=("EASY", "MOD", "HARD"))
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", help="train the network on a dataset")
    _add_train_options(p)
    p.add_argument("--method", type=int, choices=range(1, 10), help="apply a Method 1-9 flag preset")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("match", help="predict disparity (and detections) for every scene")
    p.add_argument("--data", required=True)
    p.add_argument("--checkpoint", required=True, help="train output directory")
    p.add_argument("--out", required=True)
    p.add_argument("--detections", action="store_true", help="also write detections.txt")
    p.set_defaults(func=cmd_match)

    p = sub.add_parser("eval-depth", help="abs_rel / sq_rel / rmse of predicted depth")
    p.add_argument("--pred", required=True)
    p.add_argument("--gt", required=True)
    p.set_defaults(func=cmd_eval_depth)

    p = sub.add_parser("eval-det", help="AP (BEV and 3D) per difficulty")
    p.add_argument("--pred", required=True)
    p.add_argument("--gt", required=True)
    p.add_argument("--iou", type=float, default=0.7)
    p.set_defaults(func=cmd_eval_det)

    p = sub.add_parser("gradcheck", help="finite-difference check of every primitive and composite")
    p.add_argument("--instances", type=int, default=10)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("ablate", help="train, match and evaluate one Method 1-9 configuration")
    _add_train_options(p)
    p.add_argument("--method", type=int, required=True, choices=range(1, 10))
    p.add_argument("--test", help="held-out dataset directory (defaults to --data)")
    p.set_defaults(func=cmd_ablate)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (CliError, fio.FormatError, FileNotFoundError, ValueError) as e:
        print(f"objstereo {args.command}: error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
