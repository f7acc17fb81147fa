"""Command-line surface: reproducible experiment runs with stable outputs.

Every subcommand writes canonical JSON (sorted keys, fixed float format) and
binary PPM renders, and drops a run manifest next to its main output. Two
invocations with the same flags produce byte-identical artifacts except for
the manifest's wall-clock duration.

Exit codes: 0 success, 1 usage or input problem, 2 numeric failure.
"""

import argparse
import json
import os
import sys
import time

import numpy as np

from . import __version__
from . import tensor as T
from .tensor import Tensor, NumericError
from .backbone import Backbone
from .embedding import attach_coords, displacement_field
from .kernels import KernelParams, fuse_scores, steered_laplacian
from .losses import SegmentSet, mask_bce, pull_to_mean_loss
from . import dilemma as dilemma_mod
from . import seedcut as seedcut_mod
from . import synth
from . import render


class UsageError(Exception):
    pass


class CliParser(argparse.ArgumentParser):
    # argparse exits 2 on bad usage; this surface reserves 2 for numeric failure
    def error(self, message):
        raise UsageError(message)


# -- canonical JSON -----------------------------------------------------------

def format_float(x):
    if not np.isfinite(x):
        raise NumericError("non-finite value in JSON output")
    return "%.17g" % x


def canonical_json(obj, indent=0):
    """Serialize with sorted keys and fixed float formatting, byte-stable."""
    pad = "  " * indent
    inner = "  " * (indent + 1)
    if isinstance(obj, dict):
        if not obj:
            return "{}"
        items = [f'{inner}{json.dumps(str(k))}: {canonical_json(obj[k], indent + 1)}'
                 for k in sorted(obj, key=str)]
        return "{\n" + ",\n".join(items) + "\n" + pad + "}"
    if isinstance(obj, (list, tuple)):
        if len(obj) == 0:
            return "[]"
        items = [f"{inner}{canonical_json(v, indent + 1)}" for v in obj]
        return "[\n" + ",\n".join(items) + "\n" + pad + "]"
    if isinstance(obj, bool):
        return "true" if obj else "false"
    if isinstance(obj, (int, np.integer)):
        return str(int(obj))
    if isinstance(obj, (float, np.floating)):
        return format_float(float(obj))
    if obj is None:
        return "null"
    return json.dumps(str(obj))


def write_json(path, obj):
    with open(path, "w") as fh:
        fh.write(canonical_json(obj))
        fh.write("\n")


def write_manifest(subcommand, args, outputs, started):
    cfg = {k: v for k, v in sorted(vars(args).items()) if k != "func"}
    doc = {
        "subcommand": subcommand,
        "config": cfg,
        "seeds": [args.seed] if hasattr(args, "seed") else [],
        "version": f"semiconv-{__version__}",
        "duration_s": time.perf_counter() - started,
        "outputs": [str(p) for p in outputs],
    }
    path = str(args.out) + ".manifest.json"
    write_json(path, doc)
    return path


# -- gradient check suite --------------------------------------------------------

def gradcheck_report(instances=20, seed=0):
    """Finite-difference checks over every differentiable op in the package."""
    worst = {}

    def record(name, err):
        worst[name] = max(worst.get(name, 0.0), err)

    for i in range(instances):
        rng = np.random.default_rng(seed + i)

        x = rng.standard_normal((2, 5, 5))
        w0 = rng.standard_normal((3, 2, 3, 3)) * 0.5
        record("conv2d", T.grad_check(
            lambda w: T.tsum(T.conv2d(Tensor(x), w, padding="circular", pad=1)),
            Tensor(w0)))

        rows = rng.standard_normal((6, 3))
        segs = SegmentSet([[0, 1, 2], [3, 4, 5]], [], 6)
        record("pull_to_mean_loss", T.grad_check(
            lambda r: pull_to_mean_loss(r, segs), Tensor(rows)))

        a, b = rng.standard_normal(4), rng.standard_normal(4)
        record("steered_laplacian", T.grad_check(
            lambda ls: steered_laplacian(a, b, T.exp(ls)),
            Tensor(rng.uniform(-0.5, 0.5, size=1))))

        s0 = rng.standard_normal(5)
        frows = rng.standard_normal((5, 3))
        record("fuse_scores_soft", T.grad_check(
            lambda s: T.tsum(fuse_scores(s, Tensor(frows),
                                         KernelParams("gaussian"), "soft").fused_scores),
            Tensor(s0)))

        gt = (rng.random(6) > 0.5).astype(float)
        record("mask_bce", T.grad_check(
            lambda logits: mask_bce(T.sigmoid(logits), gt),
            Tensor(rng.uniform(-2.0, 2.0, size=6))))

    threshold = 1e-4
    return {"ops": worst, "threshold": threshold,
            "instances_per_op": instances,
            "ok": all(v < threshold for v in worst.values())}


# -- subcommands -------------------------------------------------------------------

def cmd_dilemma(args):
    report = dilemma_mod.report(half_extent=args.half_extent, step=args.step,
                                n_stacks=args.stacks, seed=args.seed)
    write_json(args.out, report)
    return [args.out]


def cmd_synth_gen(args):
    scene = synth.generate_scene(args.rows, args.cols, args.radius,
                                 args.spacing, args.noise, args.seed)
    write_json(args.out, synth.scene_to_json(scene))
    return [args.out]


def cmd_train(args):
    scene = synth.load_scene(args.scene)
    cfg = synth.TrainConfig(mode=args.mode, dims=args.dims, epochs=args.epochs,
                            lr=args.lr, lr_decay=args.lr_decay, seed=args.seed)
    model, losses = synth.train(scene, cfg)
    model.save(args.out)
    outputs = [args.out]
    if args.losses:
        write_json(args.losses, {"losses": losses, "mode": args.mode})
        outputs.append(args.losses)
    return outputs


def cmd_cluster(args):
    scene = synth.load_scene(args.scene)
    model = Backbone.load(args.model)
    field = synth.build_field(model, scene.image, args.mode)
    k = args.k if args.k > 0 else scene.gt.K
    pred = synth.decode_kmeans(field, scene.gt.foreground_mask(), k, args.seed)
    metrics = synth.score(pred, scene.gt)
    segs = SegmentSet.from_labels(scene.gt)
    metrics.update(mode=args.mode,
                   final_loss=pull_to_mean_loss(field, segs).item())
    write_json(args.out, metrics)
    outputs = [args.out]
    if args.render:
        render.write_ppm(args.render, render.render_labels(pred))
        outputs.append(args.render)
    return outputs


def cmd_seedcut(args):
    scene = synth.load_scene(args.scene)
    cfg = synth.TrainConfig(mode=args.mode, dims=args.dims, epochs=args.epochs,
                            lr=args.lr, lr_decay=args.lr_decay, seed=args.seed)
    params = KernelParams("steered_laplacian", sigma=args.sigma_init)
    boxes = seedcut_mod.gt_boxes_from_labels(scene.gt)
    model, params, losses = seedcut_mod.train_seedcut(scene, boxes, cfg,
                                                      params=params)
    masks, boxes, ious = seedcut_mod.cut_all_boxes(
        scene, model, params, cfg_mode=args.mode, threshold=args.threshold)
    doc = {
        "boxes": [list(b) for b in boxes],
        "masks": [seedcut_mod.rle_encode(m) for m in masks],
        "ious": ious,
        "mean_iou": float(np.mean(ious)),
        "sigma": params.sigma,
        "final_loss": losses[-1] if losses else None,
    }
    write_json(args.out, doc)
    outputs = [args.out]
    if args.render:
        combined = np.zeros(scene.shape, dtype=np.int32)
        for i, ((x0, y0, x1, y1), m) in enumerate(zip(boxes, masks), start=1):
            patch = combined[y0:y1, x0:x1]
            patch[m] = i
        render.write_ppm(args.render, render.render_labels(combined))
        outputs.append(args.render)
    return outputs


def cmd_gradcheck(args):
    report = gradcheck_report(instances=args.instances, seed=args.seed)
    write_json(args.out, report)
    if not report["ok"]:
        raise NumericError("gradient check exceeded threshold")
    return [args.out]


def cmd_render_arrows(args):
    if args.mode != "semiconv":
        raise UsageError("arrows require --mode semiconv")
    scene = synth.load_scene(args.scene)
    model = Backbone.load(args.model)
    field = synth.build_field(model, scene.image, "semiconv")
    disp = displacement_field(field)
    rgb = render.render_arrows(scene.image, disp, stride=args.stride)
    render.write_ppm(args.out, rgb)
    return [args.out]


# -- wiring -------------------------------------------------------------------------

def _add_common(p):
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.add_argument("--config", default=None,
                   help="JSON file whose entries override flags")


def _add_train_flags(p):
    p.add_argument("--mode", choices=("semiconv", "conv"), default="semiconv")
    p.add_argument("--epochs", type=int, default=400)
    p.add_argument("--lr", type=float, default=0.03)
    p.add_argument("--lr-decay", type=float, default=0.02)
    p.add_argument("--dims", type=int, default=8)


def build_parser():
    parser = CliParser(prog="semiconv",
                       description="semi-convolutional instance embeddings")
    sub = parser.add_subparsers(dest="subcommand", parser_class=CliParser)

    p = sub.add_parser("dilemma", help="1-d coloring contrast report")
    _add_common(p)
    p.add_argument("--half-extent", type=float, default=4.0)
    p.add_argument("--step", type=float, default=0.25)
    p.add_argument("--stacks", type=int, default=5)
    p.set_defaults(func=cmd_dilemma)

    p = sub.add_parser("synth-gen", help="generate a dot-grid scene")
    _add_common(p)
    p.add_argument("--rows", type=int, default=4)
    p.add_argument("--cols", type=int, default=4)
    p.add_argument("--radius", type=int, default=3)
    p.add_argument("--spacing", type=int, default=32)
    p.add_argument("--noise", type=float, default=0.0)
    p.set_defaults(func=cmd_synth_gen)

    p = sub.add_parser("train", help="fit embeddings to a scene")
    _add_common(p)
    _add_train_flags(p)
    p.add_argument("--scene", required=True)
    p.add_argument("--losses", default=None, help="also write the loss curve")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("cluster", help="k-means decode and score")
    _add_common(p)
    p.add_argument("--scene", required=True)
    p.add_argument("--model", required=True)
    p.add_argument("--mode", choices=("semiconv", "conv"), default="semiconv")
    p.add_argument("--k", type=int, default=0, help="0 uses the true count")
    p.add_argument("--render", default=None, help="also write a cluster PPM")
    p.set_defaults(func=cmd_cluster)

    p = sub.add_parser("seedcut", help="train and cut instance masks")
    _add_common(p)
    _add_train_flags(p)
    p.add_argument("--scene", required=True)
    p.add_argument("--threshold", type=float, default=0.5)
    p.add_argument("--sigma-init", type=float, default=1.0)
    p.add_argument("--render", default=None)
    p.set_defaults(func=cmd_seedcut)

    p = sub.add_parser("gradcheck", help="finite-difference gradient audit")
    _add_common(p)
    p.add_argument("--instances", type=int, default=20)
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("render-arrows", help="displacement arrow overlay")
    _add_common(p)
    p.add_argument("--scene", required=True)
    p.add_argument("--model", required=True)
    p.add_argument("--mode", choices=("semiconv", "conv"), default="semiconv")
    p.add_argument("--stride", type=int, default=4)
    p.set_defaults(func=cmd_render_arrows)

    return parser


def _apply_config_file(args):
    if not getattr(args, "config", None):
        return
    with open(args.config) as fh:
        overrides = json.load(fh)
    if not isinstance(overrides, dict):
        raise UsageError("config file must hold a JSON object")
    for key, val in overrides.items():
        attr = key.replace("-", "_")
        if not hasattr(args, attr) or attr in ("func", "config", "subcommand"):
            raise UsageError(f"config key '{key}' is not a flag of this subcommand")
        setattr(args, attr, val)


def _check_threads_env():
    raw = os.environ.get("SEMICONV_THREADS")
    if raw is None:
        return
    try:
        n = int(raw)
    except ValueError:
        raise UsageError(f"SEMICONV_THREADS must be an integer, got '{raw}'")
    if n < 0:
        raise UsageError("SEMICONV_THREADS must be >= 0")
    # execution is serial either way; the cap is accepted for compatibility


def main(argv=None):
    argv = sys.argv[1:] if argv is None else list(argv)
    parser = build_parser()
    if not argv:
        parser.print_usage(sys.stderr)
        return 1
    started = time.perf_counter()
    try:
        args = parser.parse_args(argv)
        if not hasattr(args, "func"):
            parser.print_usage(sys.stderr)
            return 1
        _check_threads_env()
        _apply_config_file(args)
        # non-finite intermediates raise NumericError from the op itself;
        # numpy's warnings on the same event are just noise on stderr
        with np.errstate(all="ignore"):
            outputs = args.func(args)
        write_manifest(args.subcommand, args, outputs, started)
    except UsageError as err:
        print(f"error: {err}", file=sys.stderr)
        return 1
    except (FileNotFoundError, json.JSONDecodeError, KeyError) as err:
        print(f"error: {err}", file=sys.stderr)
        return 1
    except ValueError as err:
        print(f"error: {err}", file=sys.stderr)
        return 1
    except NumericError as err:
        print(f"numeric failure: {err}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
