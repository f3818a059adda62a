"""Command-line interface.

Exit codes: 0 success, 1 failed check, 2 usage or I/O error, 3 numeric
abort (non-finite gradients).  Errors go to standard error only.
"""

import argparse
import json
import logging
import math
import sys
import time
import warnings
from pathlib import Path

from . import __version__, core, fileio, metrics
from .core import MotionBlurError, NonFiniteError, ReblurConfig
from .reblur import reblur, scale_flow_to_exposure

EXIT_OK, EXIT_CHECK, EXIT_USAGE, EXIT_NUMERIC = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: error: {message}")


def _dump(obj, path=None):
    text = json.dumps(obj, indent=2, sort_keys=True, allow_nan=False)
    if path is None:
        sys.stdout.write(text + "\n")
    else:
        Path(path).write_text(text + "\n")


def _number(x):
    # JSON has no infinity; report it as a string
    return "inf" if math.isinf(x) else x


def _pair(text, sep, kind, name):
    try:
        a, b = text.lower().split(sep)
        return kind(a), kind(b)
    except ValueError:
        raise UsageError(f"{name} must look like A{sep}B, got {text!r}") from None


# --------------------------------------------------------------- commands

def cmd_reblur(args):
    sharp = fileio.load_image(args.sharp)
    flow = fileio.load_flow(args.flow)
    if args.tau is not None or args.dt is not None:
        cfg = ReblurConfig(args.n, args.tau if args.tau is not None else 1.0,
                           args.dt if args.dt is not None else 1.0)
        flow = scale_flow_to_exposure(flow, cfg)
    res = reblur(sharp, flow, args.n)
    fileio.save_image(args.out, res.blurred, args.bit_depth)
    if args.mask_out:
        fileio.save_image(args.mask_out, res.mask)
    return EXIT_OK


def _history_entry(rep):
    return {"l_self": rep.l_self, "l_fwbw": rep.l_fwbw, "total": rep.total,
            "regularizer": rep.regularizer, "objective": rep.objective}


def cmd_deblur(args):
    from .plotting import plot_loss_history, plot_panels
    from .solver import SolverConfig, solve

    blur_a = fileio.load_image(args.blur_a)
    blur_b = fileio.load_image(args.blur_b)
    config = SolverConfig(iterations=args.iters, lam=args.lam, N=args.n,
                          pyramid_levels=args.levels, seed=args.seed,
                          tv_weight_flow=args.tv_flow, exposure_tau=args.tau,
                          frame_interval_dt=args.dt)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)

    t0 = time.perf_counter()
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        state = solve(blur_a, blur_b, config)
    t_solve = time.perf_counter() - t0
    for w in caught:
        print(f"warning: {w.message}", file=sys.stderr)

    fileio.save_image(out / "I_a.png", state.I_a)
    fileio.save_image(out / "I_b.png", state.I_b)
    fileio.save_flow(out / "flow_ab.flo", state.flow_ab)
    fileio.save_flow(out / "flow_ba.flo", state.flow_ba)

    history = state.loss_history
    objective = [r.objective for r in history]
    report = {
        "config": {k: getattr(config, k) for k in config.__dataclass_fields__},
        "final": _history_entry(history[-1]),
        "masked_pixel_counts": history[-1].masked_pixel_counts,
        "loss_history": [_history_entry(r) for r in history],
        "levels": len(state.level_histories),
        "monotone": bool(all(b <= a for a, b in zip(objective, objective[1:]))),
        "counters": dict(state.counters),
    }
    _dump(report, out / "report.json")

    t1 = time.perf_counter()
    fig_dir = out / "figures"
    fig_dir.mkdir(exist_ok=True)
    plot_loss_history(history, fig_dir / "loss_history.png", state.level_histories)
    plot_panels(state, fig_dir / "panels.png")
    t_plot = time.perf_counter() - t1
    # Wall-clock times vary between runs, so they live beside the report.
    _dump({"solve_seconds": round(t_solve, 3), "plot_seconds": round(t_plot, 3),
           "threads": core.get_threads()}, out / "timings.json")
    return EXIT_OK


def cmd_synth(args):
    frames = fileio.load_frames(args.frames)
    manifest_in = Path(args.frames) / "manifest.json"
    velocity = None
    if manifest_in.is_file():
        velocity = json.loads(manifest_in.read_text()).get("velocity")
    pair = fileio.synthesize_blur_pair(frames, args.window, args.stride, velocity)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    for name in ("blur_a", "blur_b", "sharp_a", "sharp_b"):
        fileio.save_image(out / f"{name}.png", getattr(pair, name), args.bit_depth)
    manifest = {"window": args.window, "stride": args.stride, "frames": len(frames),
                "velocity": velocity}
    if pair.true_flow_hint is not None:
        fileio.save_flow(out / "flow_ab_true.flo", pair.true_flow_hint)
        manifest["true_flow_ab"] = [args.stride * velocity[0], args.stride * velocity[1]]
    _dump(manifest, out / "manifest.json")
    return EXIT_OK


def cmd_gensequence(args):
    vx, vy = _pair(args.velocity, ",", float, "--velocity")
    w, h = _pair(args.size, "x", int, "--size")
    if w < 1 or h < 1:
        raise UsageError("--size must be positive")
    frames = fileio.generate_synthetic_sequence(args.pattern, (w, h), (vx, vy), args.count,
                                                seed=args.seed, channels=args.channels)
    fileio.save_frames(args.out_dir, frames, args.bit_depth)
    _dump({"pattern": args.pattern, "velocity": [vx, vy], "count": args.count,
           "size": [w, h], "seed": args.seed, "channels": args.channels},
          Path(args.out_dir) / "manifest.json")
    return EXIT_OK


def cmd_eval(args):
    ref = fileio.load_image(args.ref)
    test = fileio.load_image(args.test)
    result = {}
    if args.metric in ("psnr", "both"):
        result["psnr"] = _number(metrics.psnr(ref, test))
    if args.metric in ("ssim", "both"):
        result["ssim"] = metrics.ssim(ref, test)
    _dump(result)
    return EXIT_OK


def cmd_gradcheck(args):
    from . import gradcheck

    if args.trials < 1:
        raise UsageError("--trials must be >= 1")
    results = gradcheck.run_gradcheck(args.seed, args.trials)
    ok = all(r.ok for r in results.values())
    _dump({"seed": args.seed, "trials": args.trials, "ok": ok,
           "suites": {k: r.as_dict() for k, r in results.items()}})
    return EXIT_OK if ok else EXIT_CHECK


# ----------------------------------------------------------------- parser

def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--threads", type=int, default=None,
                        help="worker threads (default: REBLUR_THREADS or CPU count)")
    common.add_argument("-v", "--verbose", action="store_true")

    p = _Parser(prog="motionblur", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("reblur", parents=[common], help="synthesize blur from sharp + flow")
    s.add_argument("--sharp", required=True)
    s.add_argument("--flow", required=True)
    s.add_argument("--n", type=int, required=True)
    s.add_argument("--tau", type=float)
    s.add_argument("--dt", type=float)
    s.add_argument("--out", required=True)
    s.add_argument("--mask-out")
    s.add_argument("--bit-depth", type=int, choices=(8, 16), default=8)
    s.set_defaults(func=cmd_reblur)

    s = sub.add_parser("deblur", parents=[common], help="variational deblurring of a pair")
    s.add_argument("--blur-a", required=True)
    s.add_argument("--blur-b", required=True)
    s.add_argument("--out-dir", required=True)
    s.add_argument("--iters", type=int, default=150)
    s.add_argument("--lambda", dest="lam", type=float, default=2.0)
    s.add_argument("--n", type=int, default=8)
    s.add_argument("--levels", type=int, default=3)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--tv-flow", type=float, default=0.01)
    s.add_argument("--tau", type=float, default=1.0, help="exposure time")
    s.add_argument("--dt", type=float, default=1.0, help="frame interval")
    s.set_defaults(func=cmd_deblur)

    s = sub.add_parser("synth", parents=[common], help="average frames into a blurry pair")
    s.add_argument("--frames", required=True)
    s.add_argument("--window", type=int, required=True)
    s.add_argument("--stride", type=int, required=True)
    s.add_argument("--out-dir", required=True)
    s.add_argument("--bit-depth", type=int, choices=(8, 16), default=8)
    s.set_defaults(func=cmd_synth)

    s = sub.add_parser("gensequence", parents=[common], help="write a translating pattern")
    s.add_argument("--pattern", choices=fileio.PATTERNS, required=True)
    s.add_argument("--velocity", required=True, help="VX,VY in pixels per frame")
    s.add_argument("--count", type=int, required=True)
    s.add_argument("--size", required=True, help="WxH")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--channels", type=int, choices=(1, 3), default=1)
    s.add_argument("--out-dir", required=True)
    s.add_argument("--bit-depth", type=int, choices=(8, 16), default=8)
    s.set_defaults(func=cmd_gensequence)

    s = sub.add_parser("eval", parents=[common], help="PSNR / SSIM of two images")
    s.add_argument("--ref", required=True)
    s.add_argument("--test", required=True)
    s.add_argument("--metric", choices=("psnr", "ssim", "both"), default="both")
    s.set_defaults(func=cmd_eval)

    s = sub.add_parser("gradcheck", parents=[common], help="finite-difference gradient suites")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--trials", type=int, default=100)
    s.set_defaults(func=cmd_gradcheck)
    return p


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as e:
        print(e, file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as e:  # --help / --version
        return int(e.code or 0)

    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    if args.threads is not None:
        if args.threads < 1:
            print("error: --threads must be >= 1", file=sys.stderr)
            return EXIT_USAGE
        core.set_threads(args.threads)
    try:
        return args.func(args)
    except NonFiniteError as e:
        print(f"error: numeric abort: {e}", file=sys.stderr)
        return EXIT_NUMERIC
    except (UsageError, MotionBlurError, ValueError, OSError, KeyError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USAGE
    finally:
        core.set_threads(None)


def entry():
    sys.exit(main())


if __name__ == "__main__":
    entry()
