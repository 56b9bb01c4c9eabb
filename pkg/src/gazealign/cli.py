"""``gazealign`` command line: one subcommand per pipeline stage.

Exit codes: 0 success, 1 usage error, 2 data error.
"""
from __future__ import annotations

import argparse
import csv
import sys
from pathlib import Path

import numpy as np

from . import attention, gaze, grids, losses, metrics, perturb, toy

EXIT_USAGE, EXIT_DATA = 1, 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _size(text):
    try:
        return grids.parse_size(text)
    except ValueError as e:
        raise argparse.ArgumentTypeError(str(e)) from None


def _grid(text):
    try:
        return attention.PatchGrid.parse(text)
    except ValueError as e:
        raise argparse.ArgumentTypeError(str(e)) from None


# -- subcommands ----------------------------------------------------------------

def cmd_gazemap(args):
    h, w = args.size
    if args.fixations:
        fixes = gaze.read_fixations_csv(args.fixations)
    else:
        samples = gaze.filter_samples(gaze.read_samples_csv(args.samples), h, w)
        fixes = gaze.detect_fixations_idt(samples, args.dispersion, args.min_dur)
    grids.save_map(args.out, gaze.build_gaze_map(fixes, h, w, args.sigma))


def _session_from_csv(path, size):
    h, w = size
    return gaze.Session(Path(path).stem, h, w, fixations=gaze.read_fixations_csv(path))


def cmd_filter_sessions(args):
    if args.table:
        with open(args.table, newline="") as fh:
            sessions = [gaze.Session(r["id"], 1, 1, view_ms=float(r["total_view_ms"]))
                        for r in csv.DictReader(fh)]
    else:
        sessions = [_session_from_csv(p, (1, 1)) for p in args.fixations]
    if not sessions:
        raise UsageError("filter-sessions: give fixation CSV files or --table")
    kept = gaze.filter_sessions(sessions, args.drop_pct)
    text = "".join(f"{s.id}\n" for s in kept)
    if args.out:
        Path(args.out).write_text(text)
    else:
        sys.stdout.write(text)


def cmd_attnmap(args):
    t = grids.read_atn(args.tensor)
    if args.grid.size != t.shape[3]:
        raise ValueError(f"grid {args.grid.rows}x{args.grid.cols} does not cover "
                         f"{t.shape[3]} patches")
    h, w = args.out_size
    if args.keep_axis is None:
        grids.save_map(args.out, attention.attention_map(t, args.layers, args.grid, h, w))
        return
    per = attention.aggregate_attention(t, args.layers, keep_axis=args.keep_axis)
    out = Path(args.out)
    for k, v in enumerate(per):
        m = attention.to_image_map(attention.to_patch_map(v, args.grid), h, w)
        grids.save_map(out.with_name(f"{out.stem}_{args.keep_axis}{k}{out.suffix}"), m)


def cmd_metrics(args):
    g, a = grids.load_map(args.g), grids.load_map(args.a)
    rep = metrics.report(g, a)
    print(rep.json() if args.json else rep.line())


def _loss_cfg(args):
    return losses.LossConfig(alpha=args.alpha, gamma=args.gamma, lambda_dice=args.lambda_dice,
                             lambda_bce=args.lambda_bce, eps=args.eps, scale=args.scale)


def cmd_loss(args):
    g, a = grids.load_map(args.g), grids.load_map(args.a)
    if g.shape != a.shape:
        raise ValueError(f"map shapes differ: {g.shape} vs {a.shape}")
    # pixel losses take [0,1] maps, KLD takes distributions
    if args.kind == "kld":
        g, a = grids.dist_normalize(g), grids.dist_normalize(a)
    else:
        g, a = grids.minmax_normalize(g), grids.minmax_normalize(a)
    cfg = _loss_cfg(args)
    res = losses.compute(args.kind, g, a, cfg)
    print(f"loss={res.loss * cfg.scale:.9g}")
    if args.grad_out:
        grids.write_gam(args.grad_out, res.grad * cfg.scale)


def cmd_grad_check(args):
    g, a = losses.random_instance(args.kind, args.seed, (args.size, args.size))
    err = losses.finite_diff_check(args.kind, g, a, _loss_cfg(args), args.h)
    print(f"max_rel_error={err:.3e}")


def cmd_perturb(args):
    suffix = Path(args.img).suffix.lower()
    img = grids.read_png(args.img) if suffix == ".png" else grids.load_map(args.img)
    g = grids.load_map(args.gaze)
    if g.shape != img.shape[:2]:
        raise ValueError(f"gaze map {g.shape} does not match image {img.shape[:2]}")
    out = perturb.perturb(img, grids.minmax_normalize(g), args.mode, args.invert,
                          args.threshold, args.kernel, args.sigma)
    dest = Path(args.out)
    if dest.suffix.lower() == ".png":
        grids.write_png(dest, np.clip(np.floor(out + 0.5), 0, 255).astype(np.uint8))
    elif dest.suffix.lower() == ".pgm":
        if out.ndim == 3:
            raise ValueError("color input needs a .png output")
        grids.write_pgm(dest, out, normalize=False)
    elif dest.suffix.lower() == ".gam" and out.ndim == 2:
        grids.write_gam(dest, out)
    else:
        raise ValueError(f"unsupported output type: {dest}")


def cmd_synth(args):
    toy.write_dataset(toy.synth_dataset(args.n, args.grid, args.seed, args.sigma), args.out)


def cmd_train_toy(args):
    cfg = toy.TrainConfig.from_text(Path(args.config).read_text())
    if args.data:
        data = toy.read_dataset(args.data)
    else:
        data = toy.synth_dataset(args.n, args.grid, cfg.seed, cfg.sigma)
    model, history = toy.train(cfg, data)
    model.save(args.out)
    if args.history:
        toy.write_history(args.history, history)
    last = history[-1]
    print(f"epochs={len(history)} accuracy={last['accuracy']:.4f} cc={last['cc']:.4f} "
          f"kl={last['kl']:.4f} sim={last['sim']:.4f}")


def cmd_render(args):
    m = grids.load_map(args.inp)
    if args.overlay:
        base = grids.load_map(args.overlay)
        if m.shape != base.shape:
            m = grids.bilinear_resize(m, *base.shape)
        rgb = grids.overlay(grids.colorize(m), base, args.alpha)
    else:
        rgb = grids.colorize(m)
    grids.write_png(args.out, rgb)


# -- parser -------------------------------------------------------------------

def _loss_flags(p):
    d = losses.LossConfig()
    p.add_argument("--kind", required=True, choices=losses.KINDS)
    p.add_argument("--alpha", type=float, default=d.alpha, help="W-MSE weight offset (default %(default)s)")
    p.add_argument("--gamma", type=float, default=d.gamma, help="focal focusing exponent (default %(default)s)")
    p.add_argument("--lambda-dice", type=float, default=d.lambda_dice, help="(default %(default)s)")
    p.add_argument("--lambda-bce", type=float, default=d.lambda_bce, help="(default %(default)s)")
    p.add_argument("--eps", type=float, default=d.eps, help="stability epsilon (default %(default)s)")
    p.add_argument("--scale", type=float, default=d.scale, help="loss magnitude coefficient (default %(default)s)")


def build_parser():
    top = _Parser(prog="gazealign", description=__doc__.splitlines()[0])
    sub = top.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("gazemap", help="fixations or raw samples -> gaze map")
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--fixations", help="CSV x_px,y_px,start_us,duration_ms")
    src.add_argument("--samples", help="CSV t_us,x_px,y_px,valid (runs I-DT)")
    p.add_argument("--size", type=_size, required=True, help="HxW of the chart in pixels")
    p.add_argument("--sigma", type=float, default=gaze.DEFAULT_SIGMA_PX, help="Gaussian sigma in px (default %(default)s)")
    p.add_argument("--dispersion", type=float, default=gaze.DEFAULT_DISPERSION_PX, help="I-DT dispersion px (default %(default)s)")
    p.add_argument("--min-dur", type=float, default=gaze.DEFAULT_MIN_DUR_MS, help="I-DT min duration ms (default %(default)s)")
    p.add_argument("--out", required=True, help=".gam, .pgm or .png")
    p.set_defaults(func=cmd_gazemap)

    p = sub.add_parser("filter-sessions", help="drop the lowest-viewing-time sessions")
    p.add_argument("fixations", nargs="*", help="one fixation CSV per session (id = file stem)")
    p.add_argument("--table", help="CSV id,total_view_ms instead of fixation files")
    p.add_argument("--drop-pct", type=float, default=3.0, help="percent to drop (default %(default)s)")
    p.add_argument("--out", help="write kept ids here instead of stdout")
    p.set_defaults(func=cmd_filter_sessions)

    p = sub.add_parser("attnmap", help="ATN1 tensor -> image-aligned attention map")
    p.add_argument("--tensor", required=True)
    p.add_argument("--layers", type=int, required=True, help="average the first M layers")
    p.add_argument("--grid", type=_grid, required=True, help="patch grid RxC")
    p.add_argument("--out-size", type=_size, required=True, help="image HxW")
    p.add_argument("--keep-axis", choices=attention.AXES, help="debug: one map per index of this axis")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_attnmap)

    p = sub.add_parser("metrics", help="CC, KL and SIM of an attention map against a gaze map")
    p.add_argument("--g", required=True, help="gaze map (reference)")
    p.add_argument("--a", required=True, help="attention map")
    p.add_argument("--json", action="store_true")
    p.set_defaults(func=cmd_metrics)

    p = sub.add_parser("loss", help="alignment loss between gaze and attention maps")
    _loss_flags(p)
    p.add_argument("--g", required=True)
    p.add_argument("--a", required=True)
    p.add_argument("--grad-out", help="write dloss/dA as GAM1")
    p.set_defaults(func=cmd_loss)

    p = sub.add_parser("grad-check", help="finite-difference check of a loss gradient")
    _loss_flags(p)
    p.add_argument("--seed", type=int, default=0, help="(default %(default)s)")
    p.add_argument("--size", type=int, default=8, help="map side (default %(default)s)")
    p.add_argument("--h", type=float, default=1e-5, help="step (default %(default)s)")
    p.set_defaults(func=cmd_grad_check)

    p = sub.add_parser("perturb", help="zero or blur gaze / non-gaze regions of an image")
    p.add_argument("--img", required=True, help=".pgm, .gam or .png (color handled per plane)")
    p.add_argument("--gaze", required=True)
    p.add_argument("--mode", required=True, choices=perturb.MODES)
    p.add_argument("--invert", action="store_true", help="act on the non-gaze region")
    p.add_argument("--threshold", type=float, default=perturb.DEFAULT_THRESHOLD, help="(default %(default)s)")
    p.add_argument("--kernel", type=int, default=perturb.DEFAULT_KERNEL, help="blur kernel size (default %(default)s)")
    p.add_argument("--sigma", type=float, default=perturb.DEFAULT_SIGMA, help="blur sigma (default %(default)s)")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_perturb)

    p = sub.add_parser("synth", help="write a synthetic bar-chart dataset")
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--grid", type=int, default=8, help="(default %(default)s)")
    p.add_argument("--seed", type=int, default=0, help="(default %(default)s)")
    p.add_argument("--sigma", type=float, default=0.7, help="target gaze sigma in cells (default %(default)s)")
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train-toy", help="train the toy gaze-supervised model")
    p.add_argument("--config", required=True, help="key = value TrainConfig file")
    p.add_argument("--data", help="directory written by synth (default: generate)")
    p.add_argument("--n", type=int, default=1000, help="instances when generating (default %(default)s)")
    p.add_argument("--grid", type=int, default=8, help="grid when generating (default %(default)s)")
    p.add_argument("--out", required=True, help="model file")
    p.add_argument("--history", help="per-epoch CSV")
    p.set_defaults(func=cmd_train_toy)

    p = sub.add_parser("render", help="colormapped heatmap PNG, optionally over a chart")
    p.add_argument("--in", dest="inp", required=True)
    p.add_argument("--out", required=True, help=".png")
    p.add_argument("--overlay", help="grey chart image (.pgm/.png/.gam)")
    p.add_argument("--alpha", type=float, default=0.6, help="heatmap opacity (default %(default)s)")
    p.set_defaults(func=cmd_render)
    return top


def run(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        args.func(args)
    except UsageError as e:
        print(str(e).splitlines()[0], file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as e:  # --help
        return int(e.code or 0)
    except (ValueError, OSError, KeyError, FloatingPointError) as e:
        print(f"gazealign: error: {e}", file=sys.stderr)
        return EXIT_DATA
    return 0


def main():
    sys.exit(run())


if __name__ == "__main__":
    main()
