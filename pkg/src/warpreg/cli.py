"""Command line interface.

Subcommands: synth, train, register, eval, gradcheck, interp-bench.
Exit codes: 0 success, 1 validation or input errors (including unknown
flags), 2 numerical failure (non-finite loss), with the offending term
named on stderr.

The WARPREG_THREADS environment variable caps BLAS worker threads (0 or
unset picks the library default).  It must take effect before numpy loads,
which is why this module defers every heavy import until after
``_apply_thread_cap`` has run.
"""

from __future__ import annotations

import argparse
import json
import os
import sys


class CliError(Exception):
    """Invalid command line or input; maps to exit code 1."""


class _Parser(argparse.ArgumentParser):
    # argparse exits with code 2 on bad flags; route through CliError instead
    def error(self, message):
        raise CliError(message)


def _apply_thread_cap() -> None:
    raw = os.environ.get("WARPREG_THREADS", "").strip()
    if not raw:
        return
    try:
        n = int(raw)
    except ValueError:
        raise CliError(f"WARPREG_THREADS must be an integer, got {raw!r}") from None
    if n < 0:
        raise CliError(f"WARPREG_THREADS must be >= 0, got {n}")
    if n == 0:
        return  # auto: leave the BLAS default alone
    for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
        os.environ.setdefault(var, str(n))


def _build_parser() -> _Parser:
    parser = _Parser(prog="warpreg", description="Deformable 2D image registration")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("synth", help="generate synthetic pairs")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--count", type=int, default=8)
    p.add_argument("--size", type=int, default=64)
    p.add_argument("--amplitude", type=float, default=5.0)
    p.add_argument("--control-grid", type=int, default=16)
    p.add_argument("--seed", type=int, default=0)

    p = sub.add_parser("train", help="train on a synthetic dataset")
    p.add_argument("--data-dir", required=True)
    p.add_argument("--out", required=True, help="checkpoint output path")
    p.add_argument("--levels", type=int, default=4)
    p.add_argument("--iters", type=int, default=200)
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--lambda", dest="lam", type=float, default=1e-3)
    p.add_argument("--batch", type=int, default=4)
    p.add_argument("--seed", type=int, default=1)
    p.add_argument("--width-scale", type=float, default=1.0)
    p.add_argument("--image-kernel", default="bilinear")
    p.add_argument("--dvf-kernel", default="catmull_rom")
    p.add_argument("--loss-csv", default=None, help="write the loss curve here")
    p.add_argument("--quiet", action="store_true")

    p = sub.add_parser("register", help="register one pair")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--source", required=True)
    p.add_argument("--target", required=True)
    p.add_argument("--out-dvf", required=True)
    p.add_argument("--out-warped", default=None)
    p.add_argument("--overlay", default=None, help="magenta/green PPM overlay")

    p = sub.add_parser("eval", help="evaluate on a dataset")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data-dir", required=True)
    p.add_argument("--out", required=True, help="metrics JSON path")
    p.add_argument("--mask-threshold", type=float, default=0.5)

    p = sub.add_parser("gradcheck", help="finite-difference audit")
    p.add_argument("--seed", type=int, default=0)

    p = sub.add_parser("interp-bench", help="compare displacement resampling kernels")
    p.add_argument("--out", required=True, help="CSV output path")
    p.add_argument("--iters", type=int, default=200)
    p.add_argument("--size", type=int, default=32)
    p.add_argument("--seed", type=int, default=0)

    return parser


def _read_image(path):
    from . import formats
    from .validation import as_image

    if str(path).endswith(".pgm"):
        return as_image(formats.read_pgm(path))
    return as_image(formats.read_imgf(path))


def _cmd_synth(args) -> int:
    from .synth import SynthConfig, write_dataset

    cfg = SynthConfig(
        size=args.size,
        count=args.count,
        amplitude=args.amplitude,
        control_grid=args.control_grid,
        seed=args.seed,
    )
    written = write_dataset(cfg, args.out_dir)
    print(f"wrote {len(written)} pairs to {args.out_dir}")
    return 0


def _cmd_train(args) -> int:
    from .model import ModelConfig, scaled_channels
    from .formats import save_checkpoint
    from .loss import LossConfig
    from .synth import load_dataset
    from .train import train_model, write_history_csv

    pairs = load_dataset(args.data_dir)
    config = ModelConfig(
        levels=args.levels,
        channels=scaled_channels(args.width_scale),
        image_warp_kernel=args.image_kernel,
        dvf_kernel=args.dvf_kernel,
    )

    def progress(it, breakdown):
        if not args.quiet and (it % 25 == 0 or it == args.iters - 1):
            print(f"iter {it:5d}  total {breakdown.total:.6f}  data {breakdown.data:.6f}")

    result = train_model(
        pairs,
        config,
        iters=args.iters,
        lr=args.lr,
        loss_cfg=LossConfig(lam=args.lam),
        batch_size=args.batch,
        seed=args.seed,
        progress=progress,
    )
    save_checkpoint(args.out, result.checkpoint)
    if args.loss_csv:
        write_history_csv(args.loss_csv, result.history, config.levels)
    print(f"saved checkpoint to {args.out}")
    return 0


def _cmd_register(args) -> int:
    import numpy as np

    from . import formats
    from .model import register
    from .validation import pad_to_divisor

    ckpt = formats.load_checkpoint(args.checkpoint)
    source = _read_image(args.source)
    target = _read_image(args.target)
    if source.shape != target.shape:
        raise CliError(f"source {source.shape} and target {target.shape} sizes differ")
    div = ckpt.config.size_divisor()
    padded_src, (ph, pw) = pad_to_divisor(source, div)
    padded_tgt, _ = pad_to_divisor(target, div)
    if ph or pw:
        print(
            f"note: padded ({source.shape[1]}, {source.shape[2]}) by ({ph}, {pw}) "
            f"to a multiple of {div}; outputs cropped back",
            file=sys.stderr,
        )
    u, warped = register(padded_src, padded_tgt, ckpt)
    h, w = source.shape[1:]
    u = u[:, :h, :w]
    warped = warped[:, :h, :w]
    formats.write_dvf2(args.out_dvf, u)
    if args.out_warped:
        if str(args.out_warped).endswith(".pgm"):
            formats.write_pgm(args.out_warped, warped)
        else:
            formats.write_imgf(args.out_warped, warped)
    if args.overlay:
        # magenta = warped source, green = target
        overlay = np.concatenate([warped, target, warped], axis=0)
        formats.write_ppm(args.overlay, overlay)
    print(f"wrote field to {args.out_dvf}")
    return 0


def _cmd_eval(args) -> int:
    import numpy as np

    from . import formats
    from .loss import LossConfig
    from .metrics import dice_jaccard, endpoint_error, threshold_mask
    from .model import PyramidPair, coarse_to_fine_batch
    from .synth import load_dataset
    from .train import evaluate_loss

    ckpt = formats.load_checkpoint(args.checkpoint)
    triples = load_dataset(args.data_dir, with_fields=True)
    dices, jaccards, epe_means, epe_maxes = [], [], [], []
    breakdowns = []
    for source, target, u_true in triples:
        pyr = PyramidPair.build(source, target, ckpt.config.levels)
        result = coarse_to_fine_batch(
            [pyr], ckpt.params, ckpt.config, training=False, update_running=False
        )[0]
        breakdowns.append(evaluate_loss(result, pyr.target, LossConfig()))
        d, j = dice_jaccard(
            threshold_mask(result.warped_final.values, args.mask_threshold),
            threshold_mask(target, args.mask_threshold),
        )
        em, ex = endpoint_error(result.u_final.values, u_true)
        dices.append(d)
        jaccards.append(j)
        epe_means.append(em)
        epe_maxes.append(ex)
    levels = ckpt.config.levels
    metrics = {
        "dice": float(np.mean(dices)),
        "jaccard": float(np.mean(jaccards)),
        "epe_mean": float(np.mean(epe_means)),
        "epe_max": float(np.mean(epe_maxes)),
        "loss_breakdown": {
            "data": float(np.mean([b.data for b in breakdowns])),
            "reg": float(np.mean([b.reg for b in breakdowns])),
            "level_terms": [
                float(np.mean([b.level_terms[i] for b in breakdowns]))
                for i in range(levels - 1)
            ],
            "total": float(np.mean([b.total for b in breakdowns])),
        },
    }
    with open(args.out, "w") as fh:
        json.dump(metrics, fh, indent=2, sort_keys=True)
        fh.write("\n")
    print(f"dice {metrics['dice']:.4f}  epe_mean {metrics['epe_mean']:.4f}")
    return 0


def _cmd_gradcheck(args) -> int:
    from .gradcheck import run_suite, suite_tolerances

    errors = run_suite(seed=args.seed)
    tols = suite_tolerances()
    failed = []
    for name, err in errors.items():
        status = "ok" if err < tols[name] else "FAIL"
        print(f"{name:20s} {err:12.3e}  (tol {tols[name]:.0e})  {status}")
        if err >= tols[name]:
            failed.append(name)
    if failed:
        print(f"gradcheck failed for: {', '.join(failed)}", file=sys.stderr)
        return 1
    return 0


def _cmd_interp_bench(args) -> int:
    from .bench import interp_bench, write_bench_csv

    rows = interp_bench(size=args.size, iters=args.iters, seed=args.seed)
    write_bench_csv(args.out, rows)
    for row in rows:
        print(
            f"{row['kernel']:12s} resample_rmse {row['resample_rmse']:.6f} "
            f"final_loss {row['final_loss']:.6f}"
        )
    return 0


_COMMANDS = {
    "synth": _cmd_synth,
    "train": _cmd_train,
    "register": _cmd_register,
    "eval": _cmd_eval,
    "gradcheck": _cmd_gradcheck,
    "interp-bench": _cmd_interp_bench,
}


def main(argv=None) -> int:
    try:
        _apply_thread_cap()
        args = _build_parser().parse_args(argv)
        # imported late so the thread cap above precedes numpy's BLAS setup
        from .formats import FormatError
        from .tensor import ShapeError
        from .train import NumericalError

        try:
            return _COMMANDS[args.command](args)
        except NumericalError as exc:
            print(f"error: {exc}", file=sys.stderr)
            return 2
        except (FormatError, ShapeError, ValueError, OSError) as exc:
            print(f"error: {exc}", file=sys.stderr)
            return 1
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
