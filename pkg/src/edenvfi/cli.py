"""Command-line entry point: ``edenvfi <subcommand> ...``.

Exit status: 0 success, 1 usage error, 2 I/O failure (missing or malformed
files), 3 numeric or contract failure (including failed gradient checks).
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import ConfigError, ContractError, DimensionError, NumericError, WeightsFormatError
from .imageio import ImageFormatError

EXIT_OK, EXIT_USAGE, EXIT_IO, EXIT_NUMERIC = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _depths(text: str) -> tuple[int, int]:
    try:
        parts = tuple(int(p) for p in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected D1,D2 integers, got {text!r}") from None
    if len(parts) != 2 or min(parts) < 0:
        raise argparse.ArgumentTypeError(f"expected two non-negative depths D1,D2, got {text!r}")
    return parts


def _positive(text: str) -> int:
    try:
        v = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected an integer, got {text!r}") from None
    if v < 1:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {v}")
    return v


def _non_negative(text: str) -> int:
    try:
        v = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected an integer, got {text!r}") from None
    if v < 0:
        raise argparse.ArgumentTypeError(f"expected a non-negative integer, got {v}")
    return v


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="edenvfi", description="Dual-encoder video frame interpolation.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("interpolate", help="synthesize the midpoint frame of four inputs")
    p.add_argument("--weights", required=True, help="weights file")
    p.add_argument("--inputs", required=True, nargs=4, metavar=("F0", "F1", "F2", "F3"))
    p.add_argument("--output", required=True, help="output .png or .ppm")

    p = sub.add_parser("train-toy", help="train a small model on synthetic motion")
    p.add_argument("--steps", type=_non_negative, default=500)
    p.add_argument("--seed", type=int, default=7)
    p.add_argument("--size", type=_positive, default=48)
    p.add_argument("--out", required=True, help="weights file to write")
    p.add_argument("--history", help="CSV path for step,loss,lr lines (default: standard output)")

    p = sub.add_parser("gradcheck", help="finite-difference gradient checks")
    p.add_argument("--op", default="all", help="check name or 'all'")
    p.add_argument("--tolerance", type=float, default=1e-4)

    p = sub.add_parser("params", help="print the parameter count of a configuration")
    p.add_argument("--depths", type=_depths, default=(9, 12), help="transformer depths D1,D2")
    p.add_argument("--no-pvt", action="store_true")
    p.add_argument("--no-cnn", action="store_true")

    p = sub.add_parser("eval", help="PSNR over a directory of quadruplets")
    p.add_argument("--dataset", required=True)
    p.add_argument("--weights", required=True)

    p = sub.add_parser("bench", help="runtime and peak tensor memory")
    p.add_argument("--width", type=_positive, required=True)
    p.add_argument("--height", type=_positive, required=True)
    p.add_argument("--runs", type=_positive, default=3)
    p.add_argument("--weights")
    p.add_argument("--csv", action="store_true", help="also print a CSV line")
    return parser


def _interpolate(args) -> int:
    from .imageio import read_image, write_image
    from .weights import load_weights

    if Path(args.output).suffix.lower() not in (".png", ".ppm"):
        raise UsageError(f"edenvfi interpolate: output must end in .png or .ppm, got {args.output}")
    frames = [read_image(p) for p in args.inputs]
    for p, f in zip(args.inputs, frames):
        if f.shape != frames[0].shape:
            raise ImageFormatError(f"{Path(p).name} is {f.shape[2]}x{f.shape[1]}, "
                                   f"expected {frames[0].shape[2]}x{frames[0].shape[1]}")
    model = load_weights(args.weights)
    write_image(args.output, model.predict(frames))
    return EXIT_OK


def _train_toy(args) -> int:
    from .training import train_toy
    from .weights import save_weights

    fh = open(args.history, "w") if args.history else sys.stdout
    try:
        fh.write("step,loss,lr\n")
        result = train_toy(steps=args.steps, seed=args.seed, size=args.size,
                           log=lambda s, loss, lr: fh.write(f"{s},{loss:.8g},{lr:.8g}\n"))
    finally:
        if fh is not sys.stdout:
            fh.close()
    save_weights(result.model, args.out)
    step, l1, p = result.validation[-1]
    print(f"validation after {step} steps: L1 {l1:.6f}, PSNR {p:.3f} dB", file=sys.stderr)
    return EXIT_OK


def _gradcheck(args) -> int:
    from .checks import GRAD_CHECKS, run_grad_checks

    if args.op != "all" and args.op not in GRAD_CHECKS:
        raise UsageError(f"edenvfi gradcheck: unknown op {args.op!r}; choose from all, {', '.join(GRAD_CHECKS)}")
    names = None if args.op == "all" else [args.op]
    failed = 0
    for name, err in run_grad_checks(names).items():
        ok = err <= args.tolerance
        failed += not ok
        print(f"{name:18s} {err:.3e}  {'ok' if ok else 'FAIL'}")
    return EXIT_OK if failed == 0 else EXIT_NUMERIC


def _params(args) -> int:
    from .model import ModelConfig, build_model, count_parameters

    cfg = ModelConfig(pvt_depths=args.depths, use_pvt=not args.no_pvt, use_cnn=not args.no_cnn)
    print(count_parameters(build_model(cfg)))
    return EXIT_OK


def _eval(args) -> int:
    from .imageio import find_quadruplets, load_quadruplet
    from .metrics import psnr
    from .weights import load_weights

    model = load_weights(args.weights)
    dirs = find_quadruplets(args.dataset)
    if not dirs:
        raise FileNotFoundError(f"no quadruplets (gt.png / gt.ppm) found under {args.dataset}")
    scores = []
    for d in dirs:
        rec = load_quadruplet(d)
        score = psnr(model.predict(rec.frames), rec.gt)
        scores.append(score)
        print(f"{d.name}\t{score:.4f}")
    print(f"mean\t{float(np.mean(scores)):.4f}")
    return EXIT_OK


def _bench(args) -> int:
    from .bench import CSV_HEADER, benchmark
    from .model import build_model
    from .weights import load_weights

    model = load_weights(args.weights) if args.weights else build_model()
    report = benchmark(model, args.width, args.height, args.runs)
    print(report.text())
    if args.csv:
        print(CSV_HEADER)
        print(report.csv())
    return EXIT_OK


COMMANDS = {
    "interpolate": _interpolate,
    "train-toy": _train_toy,
    "gradcheck": _gradcheck,
    "params": _params,
    "eval": _eval,
    "bench": _bench,
}


def run_cli(argv: Sequence[str] | None = None) -> int:
    """Parse ``argv`` and run one subcommand; returns the exit status."""
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return COMMANDS[args.command](args)
    except SystemExit as exc:  # --help
        return int(exc.code or 0)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    except (OSError, WeightsFormatError, ImageFormatError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (NumericError, ContractError, ConfigError, DimensionError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


def main() -> None:
    sys.exit(run_cli())


if __name__ == "__main__":
    main()
