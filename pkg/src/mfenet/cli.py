"""Batch command-line front end.

Subcommands: gen-data, train, infer, eval, selftest.  Exit codes: 0 on
success, 1 for contract/validation errors (including bad flags), 2 for I/O
errors.  stdout carries machine-parseable results only; diagnostics go to
stderr.  Set MFE_THREADS to cap internal (BLAS) parallelism, 0 = auto; the
variable is applied before numpy loads, which is why this module keeps its
heavy imports below the environment setup.
"""

import os
import sys


def _configure_threads():
    raw = os.environ.get("MFE_THREADS")
    if not raw:
        return
    try:
        n = int(raw)
    except ValueError:
        print(f"warning: ignoring non-integer MFE_THREADS={raw!r}",
              file=sys.stderr)
        return
    if n > 0:
        for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS",
                    "MKL_NUM_THREADS", "NUMEXPR_NUM_THREADS"):
            os.environ.setdefault(var, str(n))


_configure_threads()

import argparse
import math
import time

import numpy as np

from . import data as datamod
from . import metrics as metricsmod
from . import network, selftest, trainer
from .errors import (CheckpointFormatError, CheckpointMismatchError,
                     ContractViolation, ImageFormatError, TrainingDiverged)

_IMAGE_EXTS = (".ppm", ".png")


class _Parser(argparse.ArgumentParser):
    """argparse that exits 1 (not 2) on usage errors, per the CLI contract."""

    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(1)


def _build_parser():
    parser = _Parser(prog="mfenet",
                     description="multi-scale frequency-enhanced deblurring")
    sub = parser.add_subparsers(dest="command", required=True,
                                parser_class=_Parser)

    p = sub.add_parser("gen-data", help="generate a synthetic blur corpus")
    p.add_argument("--count", type=int, required=True)
    p.add_argument("--size", type=int, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_gen_data)

    p = sub.add_parser("train", help="train a model on a corpus")
    p.add_argument("--corpus", required=True,
                   help="manifest path or corpus directory")
    p.add_argument("--out-checkpoint", required=True)
    p.add_argument("--iters", type=int, default=200)
    p.add_argument("--c-base", type=int, default=32)
    p.add_argument("--resblocks", type=int, default=8)
    p.add_argument("--lambda", dest="lam", type=float, default=0.1)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--no-msfe", action="store_true")
    p.add_argument("--no-febp", action="store_true")
    p.add_argument("--lr", type=float, default=1e-4)
    p.add_argument("--batch-size", type=int, default=4)
    p.add_argument("--patch", type=int, default=None)
    p.add_argument("--eval-every", type=int, default=0)
    p.add_argument("--resume", default=None)
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("infer", help="deblur one image with a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--input", required=True)
    p.add_argument("--output", required=True)
    p.set_defaults(func=_cmd_infer)

    p = sub.add_parser("eval", help="image-quality metrics table")
    p.add_argument("--checkpoint", default=None)
    p.add_argument("--corpus", default=None,
                   help="manifest path or corpus directory")
    p.add_argument("--pairs", nargs=2, metavar=("REF_DIR", "OTHER_DIR"),
                   default=None)
    p.set_defaults(func=_cmd_eval)

    p = sub.add_parser("selftest", help="run the built-in oracle suites")
    p.add_argument("--level", choices=(selftest.QUICK, selftest.FULL),
                   default=selftest.QUICK)
    p.add_argument("--perturb", default=None,
                   help="test-harness hook: inject an error into one suite")
    p.set_defaults(func=_cmd_selftest)
    return parser


def _resolve_manifest(corpus):
    if os.path.isdir(corpus):
        return os.path.join(corpus, datamod.MANIFEST_NAME)
    return corpus


def _cmd_gen_data(args):
    manifest = datamod.generate_corpus(args.count, args.size, args.seed,
                                       args.out)
    print(manifest)
    return 0


def _cmd_train(args):
    config = network.ModelConfig(
        c_base=args.c_base, n_resblocks=args.resblocks,
        use_msfe=not args.no_msfe, use_febp=not args.no_febp)
    tcfg = trainer.TrainConfig(
        lr=args.lr, batch_size=args.batch_size, iterations=args.iters,
        lam=args.lam, seed=args.seed, eval_every=args.eval_every,
        checkpoint_path=args.out_checkpoint, patch_size=args.patch)
    log_path = args.out_checkpoint + ".log"
    ckpt, _ = trainer.train(config, tcfg, _resolve_manifest(args.corpus),
                            resume_from=args.resume, log_path=log_path,
                            quiet=False)
    print(f"{ckpt} {log_path}")
    return 0


def _pad_to_grid(arr, multiple, minimum):
    """Reflect-pad (h, w, 3) float array up to the size grid."""
    h, w = arr.shape[:2]
    th = max(minimum, math.ceil(h / multiple) * multiple)
    tw = max(minimum, math.ceil(w / multiple) * multiple)
    ph, pw = th - h, tw - w
    if ph == 0 and pw == 0:
        return arr, h, w
    mode = "reflect" if ph < h and pw < w else "symmetric"
    return np.pad(arr, ((0, ph), (0, pw), (0, 0)), mode=mode), h, w


def _cmd_infer(args):
    config, params, _, _, _ = trainer.load_checkpoint(args.checkpoint)
    img = datamod.load_image(args.input)
    arr = img.pixels.astype(np.float32) / np.float32(255.0)
    minimum = 16 if config.use_febp else 8
    padded, h, w = _pad_to_grid(arr, 8, minimum)
    start = time.perf_counter()
    tensor = padded.transpose(2, 0, 1)[None]
    out, _, _ = network.forward(params, config, tensor, training=False)
    elapsed = time.perf_counter() - start
    restored = datamod.quantize_unit(out[0].transpose(1, 2, 0)[:h, :w])
    datamod.save_image(datamod.Image(restored), args.output)
    print(f"{args.output} {elapsed:.3f}")
    return 0


def _format_psnr(value):
    return "inf" if math.isinf(value) else f"{value:.6f}"


def _print_metric_rows(rows, mean):
    for name, rep in rows:
        print(f"{name} {_format_psnr(rep.psnr)} {rep.ssim:.6f} {rep.vif:.6f}")
    print(f"MEAN {_format_psnr(mean.psnr)} {mean.ssim:.6f} {mean.vif:.6f}")


def _cmd_eval(args):
    if args.pairs is not None:
        ref_dir, other_dir = args.pairs
        names = sorted(n for n in os.listdir(ref_dir)
                       if n.lower().endswith(_IMAGE_EXTS))
        if not names:
            raise FileNotFoundError(f"no images in {ref_dir}")
        rows = []
        for name in names:
            other = os.path.join(other_dir, name)
            if not os.path.exists(other):
                raise FileNotFoundError(f"missing counterpart {other}")
            ref = datamod.load_image(os.path.join(ref_dir, name)).pixels
            cmp_ = datamod.load_image(other).pixels
            rows.append((name, metricsmod.metric_report(ref, cmp_)))
        mean = trainer._mean_report([r for _, r in rows])
    elif args.corpus is not None:
        rows, mean = trainer.evaluate(args.checkpoint,
                                      _resolve_manifest(args.corpus))
    else:
        raise ContractViolation("eval needs --corpus or --pairs")
    _print_metric_rows(rows, mean)
    return 0


def _cmd_selftest(args):
    results = selftest.run_suites(args.level, perturb=args.perturb)
    failed = False
    for name, ok, detail in results:
        print(f"{name} {'PASS' if ok else 'FAIL'}")
        print(f"  {name}: {detail}", file=sys.stderr)
        if not ok:
            failed = True
    return 1 if failed else 0


def main(argv=None):
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return exc.code if exc.code is not None else 0
    try:
        return args.func(args)
    except (ContractViolation, CheckpointMismatchError,
            TrainingDiverged) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (OSError, ImageFormatError, CheckpointFormatError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
