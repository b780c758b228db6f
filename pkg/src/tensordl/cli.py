"""Command-line experiment harness.

Subcommands::

    tensordl learn          train a dictionary from image patches
    tensordl complete       fill the missing pixels of a masked image
    tensordl bench-solvers  run ista / fista / ista_aa on one completion instance
    tensordl nsp            null space property and recovery grid

Every subcommand accepts ``--config FILE``, a flat ``key = value`` file whose
keys are flag names (``max-iter`` or ``max_iter``).  Explicit flags win over
the file, the file wins over built-in defaults.

Exit status: 0 on success, 1 when a computation fails, 2 for usage or I/O
errors.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import completion, dict_learning, recovery
from .errors import ConfigError, TensorError
from .prox_solvers import SOLVERS
from .seeding import fork
from .tensor_core import load_tns, save_tns

EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2


class UsageError(Exception):
    """Bad flag value or unreadable input; maps to exit status 2."""


# ---------------------------------------------------------------- parsing helpers

def _dims(text: str) -> tuple:
    """``"20x20"`` -> ``(20, 20)``."""
    try:
        parts = tuple(int(p) for p in str(text).lower().split("x"))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected HxW, got {text!r}") from None
    if len(parts) != 2:
        raise argparse.ArgumentTypeError(f"expected HxW, got {text!r}")
    return parts


def _int_list(text: str) -> list:
    try:
        return [int(p) for p in str(text).split(",") if p.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def _float_list(text: str) -> list:
    try:
        return [float(p) for p in str(text).split(",") if p.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def _bool(text) -> bool:
    if isinstance(text, bool):
        return text
    low = str(text).strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise argparse.ArgumentTypeError(f"expected a boolean, got {text!r}")


def read_config(path) -> dict:
    """Parse a flat ``key = value`` file; ``#`` starts a comment."""
    out = {}
    try:
        lines = Path(path).read_text().splitlines()
    except OSError as exc:
        raise UsageError(f"--config: cannot read {path}: {exc.strerror}") from None
    for n, line in enumerate(lines, 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"--config: {path}:{n}: expected key = value")
        key, value = (s.strip() for s in line.split("=", 1))
        out[key.replace("-", "_")] = value
    return out


def _require(cond: bool, flag: str, msg: str) -> None:
    if not cond:
        raise UsageError(f"{flag}: {msg}")


def _out_dir(path) -> Path:
    out = Path(path)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise UsageError(f"--out: cannot create {out}: {exc.strerror}") from None
    return out


def _read_image(path, flag="--image") -> np.ndarray:
    if not Path(path).is_file():
        raise UsageError(f"{flag}: no such file {path}")
    try:
        return completion.load_image(path)
    except OSError as exc:
        raise UsageError(f"{flag}: cannot read image {path}: {exc}") from None


def _read_dictionary(path) -> np.ndarray:
    if not Path(path).is_file():
        raise UsageError(f"--dict: no such file {path}")
    try:
        return load_tns(path)
    except (OSError, ValueError) as exc:
        raise UsageError(f"--dict: {exc}") from None


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


# ---------------------------------------------------------------- commands

def cmd_learn(args) -> int:
    h, w = args.patch
    _require(h >= 1 and w >= 1, "--patch", "patch dimensions must be positive")
    _require(args.atoms >= 1, "--atoms", f"must be positive, got {args.atoms}")
    _require(1 <= args.max_atoms <= args.atoms, "--max-atoms",
             f"must lie in [1, --atoms], got {args.max_atoms}")
    _require(args.patches >= 1, "--patches", f"must be positive, got {args.patches}")
    _require(args.a > 0, "--a", f"must be positive, got {args.a}")
    _require(args.b >= 0, "--b", f"must be nonnegative, got {args.b}")
    _require(args.epochs >= 1, "--epochs", f"must be positive, got {args.epochs}")
    _require(bool(args.image), "--image", "at least one training image is required")
    images = [_read_image(p) for p in args.image]
    for p, img in zip(args.image, images):
        _require(img.shape[0] >= h and img.shape[1] >= w, "--patch",
                 f"{h}x{w} does not fit image {p} ({img.shape[0]}x{img.shape[1]})")
    out = _out_dir(args.out)

    rng = fork(args.seed, "patches")
    per_image = [args.patches // len(images) + (i < args.patches % len(images))
                 for i in range(len(images))]
    signals = []
    for img, count in zip(images, per_image):
        signals.extend(completion.sample_patches(img, h, w, count, rng))
    cfg = dict_learning.TrainConfig(
        method=args.method, n_atoms=args.atoms, max_atoms=args.max_atoms,
        a=args.a, b=args.b, epochs=args.epochs, seed=args.seed,
    )
    dictionary, trace = dict_learning.train(signals, cfg)
    save_tns(out / "dictionary.tns", dictionary)
    trace.to_csv(out / "learn_trace.csv")
    print(f"wrote {out / 'dictionary.tns'} {dictionary.shape} after {len(trace)} steps")
    return EXIT_OK


def _completion_inputs(args):
    _require(0 < args.rho <= 1, "--rho", f"must lie in (0, 1], got {args.rho}")
    _require(args.lam >= 0, "--lam", f"must be nonnegative, got {args.lam}")
    _require(args.max_iter >= 1, "--max-iter", f"must be positive, got {args.max_iter}")
    _require(args.m >= 1, "--m", f"must be positive, got {args.m}")
    _require(args.tol >= 0, "--tol", f"must be nonnegative, got {args.tol}")
    _require(args.stride is None or args.stride >= 1, "--stride",
             f"must be positive, got {args.stride}")
    _require(args.lipschitz_factor >= 1, "--lipschitz-factor",
             f"must be at least 1, got {args.lipschitz_factor}")
    img = _read_image(args.image)
    d = _read_dictionary(args.dict)
    _require(d.ndim == 4 and d.shape[3] == img.shape[2], "--dict",
             f"dictionary {d.shape} is not an h x d x w x {img.shape[2]} tensor")
    _require(d.shape[0] <= img.shape[0] and d.shape[2] <= img.shape[1], "--dict",
             f"patch {d.shape[0]}x{d.shape[2]} does not fit image {img.shape[0]}x{img.shape[1]}")
    mask = completion.random_mask(img.shape, args.rho, fork(args.seed, "mask"))
    return completion.MaskedImage(img, mask), d


def cmd_complete(args) -> int:
    _require(args.solver in SOLVERS, "--solver",
             f"unknown solver {args.solver!r}; choose from {', '.join(SOLVERS)}")
    masked, d = _completion_inputs(args)
    out = _out_dir(args.out)
    rec, metrics, trace = completion.complete_image(
        masked, d, args.lam, args.solver, stride=args.stride, max_iter=args.max_iter,
        tol=args.tol, m=args.m, lipschitz_factor=args.lipschitz_factor,
    )
    completion.save_image(out / "completed.png", rec)
    _write_json(out / "metrics.json", dict(metrics))
    trace.to_csv(out / "trace.csv")
    print(f"psnr={metrics['psnr']} rmse={metrics['rmse']:.6g} iterations={len(trace)}")
    return EXIT_OK


def cmd_bench_solvers(args) -> int:
    for s in args.solver:
        _require(s in SOLVERS, "--solver", f"unknown solver {s!r}; choose from {', '.join(SOLVERS)}")
    masked, d = _completion_inputs(args)
    out = _out_dir(args.out)
    summary = {}
    for s in args.solver:
        # tol = 0 keeps every trace on the same iteration grid
        _, metrics, trace = completion.complete_image(
            masked, d, args.lam, s, stride=args.stride, max_iter=args.max_iter,
            tol=0.0, m=args.m, lipschitz_factor=args.lipschitz_factor,
            track_error=True,
        )
        trace.to_csv(out / f"trace_{s}.csv")
        summary[s] = dict(metrics)
        print(f"{s}: final error {trace.error[-1]:.6g} after {len(trace)} iterations")
    _write_json(out / "bench_metrics.json", summary)
    return EXIT_OK


def cmd_nsp(args) -> int:
    _require(args.d and all(v >= 1 for v in args.d), "--d", "atom counts must be positive")
    _require(args.s and all(v >= 1 for v in args.s), "--s", "support sizes must be positive")
    _require(args.rho and all(0 < v <= 1 for v in args.rho), "--rho", "fractions must lie in (0, 1]")
    _require(args.m1 >= 1, "--m1", f"must be positive, got {args.m1}")
    _require(all(v >= 1 for v in args.trailing), "--trailing", "tube dimensions must be positive")
    _require(args.samples >= 1, "--samples", f"must be positive, got {args.samples}")
    _require(args.trials >= 1, "--trials", f"must be positive, got {args.trials}")
    out = _out_dir(args.out)
    rows, reports = recovery.grid_experiment(
        args.d, args.s, args.rho, args.m1, tuple(args.trailing), seed=args.seed,
        samples=args.samples, trials=args.trials, duplicate=args.duplicate,
    )
    recovery.write_grid_csv(out / "nsp_grid.csv", rows)
    _write_json(out / "nsp_reports.json", reports)
    for r in rows:
        print(f"d={r['d']} s={r['s']} rho={r['mask_rho']}: {r['verdict']}, success {r['success_rate']}")
    return EXIT_OK


# ---------------------------------------------------------------- parser

def _completion_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--image", required=True, help="RGB image to mask and complete")
    p.add_argument("--dict", required=True, help="dictionary checkpoint (TNS1)")
    p.add_argument("--rho", type=float, default=0.2, help="observed pixel fraction")
    p.add_argument("--lam", type=float, default=1e-3, help="l1 weight")
    p.add_argument("--m", type=int, default=5, help="Anderson history depth")
    p.add_argument("--max-iter", type=int, default=300)
    p.add_argument("--stride", type=int, default=None, help="patch stride (default h/2)")
    p.add_argument("--lipschitz-factor", type=float, default=1.0,
                   help="step is 1/(factor * rho(D^T D)); 2 gives the conservative step")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="tensordl", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("learn", help="train a dictionary from image patches")
    p.add_argument("--image", nargs="+", help="training image(s)")
    p.add_argument("--method", choices=dict_learning.METHODS, default="opsgd")
    p.add_argument("--patch", type=_dims, default=(20, 20), help="patch size HxW")
    p.add_argument("--atoms", type=int, default=24, help="number of atoms d")
    p.add_argument("--max-atoms", type=int, default=6, help="OMP sparsity K")
    p.add_argument("--patches", type=int, default=300, help="training patch count")
    p.add_argument("--a", type=float, default=10.0)
    p.add_argument("--b", type=float, default=5.0)
    p.add_argument("--epochs", type=int, default=1)
    p.set_defaults(func=cmd_learn)

    p = sub.add_parser("complete", help="complete a randomly masked image")
    _completion_flags(p)
    p.add_argument("--solver", default="ista_aa", help="ista | fista | ista_aa")
    p.add_argument("--tol", type=float, default=1e-8, help="relative-change stopping tolerance")
    p.set_defaults(func=cmd_complete)

    p = sub.add_parser("bench-solvers", help="compare solvers on one completion instance")
    _completion_flags(p)
    p.add_argument("--solver", type=lambda t: [s.strip() for s in t.split(",") if s.strip()],
                   default=list(SOLVERS), help="comma-separated subset of ista,fista,ista_aa")
    p.add_argument("--tol", type=float, default=0.0, help=argparse.SUPPRESS)
    p.set_defaults(func=cmd_bench_solvers)

    p = sub.add_parser("nsp", help="null space property / recovery grid")
    p.add_argument("--d", type=_int_list, default=[6], help="atom counts, e.g. 6,8")
    p.add_argument("--s", type=_int_list, default=[1], help="support sizes")
    p.add_argument("--rho", type=_float_list, default=[1.0], help="observed fractions")
    p.add_argument("--m1", type=int, default=8, help="atom height M1")
    p.add_argument("--trailing", type=_int_list, default=[3], help="tube dimensions, e.g. 3,2")
    p.add_argument("--samples", type=int, default=200, help="kernel samples per check")
    p.add_argument("--trials", type=int, default=10, help="recovery trials per cell")
    p.add_argument("--duplicate", type=_bool, nargs="?", const=True, default=False,
                   help="make atom 1 a copy of atom 0")
    p.set_defaults(func=cmd_nsp)

    for p in sub.choices.values():
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--out", default=".", help="output directory")
        p.add_argument("--config", default=None, help="key = value defaults file")
    return parser


def _prescan(argv) -> tuple:
    """Subcommand name and ``--config`` value, found before full parsing."""
    command = config = None
    it = iter(argv)
    for tok in it:
        if tok == "--config":
            config = next(it, None)
        elif tok.startswith("--config="):
            config = tok.split("=", 1)[1]
        elif command is None and not tok.startswith("-"):
            command = tok
    return command, config


def parse_args(parser: argparse.ArgumentParser, argv) -> argparse.Namespace:
    """Parse ``argv`` with config-file values installed as defaults."""
    command, config = _prescan(argv)
    sub = parser._subparsers._group_actions[0].choices.get(command)  # noqa: SLF001
    if config is not None and sub is not None:
        known = {a.dest: a for a in sub._actions}  # noqa: SLF001
        converted = {}
        for key, raw in read_config(config).items():
            action = known.get(key)
            if action is None or key in ("config", "help", "func"):
                raise UsageError(f"--config: unknown key {key!r} for {command}")
            try:
                conv = action.type or (lambda v: v)
                if action.nargs == "+":
                    converted[key] = [conv(v) for v in raw.split()]
                else:
                    converted[key] = conv(raw)
            except (argparse.ArgumentTypeError, ValueError) as exc:
                raise UsageError(f"--config: bad value for {key}: {exc}") from None
            action.required = False
        sub.set_defaults(**converted)
    return parser.parse_args(argv)


def main(argv=None) -> int:
    parser = build_parser()
    argv = sys.argv[1:] if argv is None else list(argv)
    try:
        args = parse_args(parser, argv)
        return args.func(args)
    except SystemExit as exc:  # argparse usage errors and --help
        return int(exc.code or 0)
    except UsageError as exc:
        print(f"tensordl: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except ConfigError as exc:
        print(f"tensordl: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (TensorError, ArithmeticError, np.linalg.LinAlgError) as exc:
        print(f"tensordl: computation failed: {exc}", file=sys.stderr)
        return EXIT_FAIL


if __name__ == "__main__":
    sys.exit(main())
