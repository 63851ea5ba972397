"""Command-line verification and benchmark surface.

Subcommands: params (parameter-count tables, self-checked against the
published per-block counts), bench (FLOPs accounting and wall-clock timing
per kernel variant), gradcheck (finite-difference sweep), train-toy (the
overfit harness), eval (metrics over an episode manifest), and
verify-decomposition (randomized equivalence of the two convolution paths).

Exit codes: 0 all checks passed, 1 a check failed, 2 usage or I/O trouble.
Failures also print machine-readable lines starting with FAIL. A plain
key=value config file can set defaults for any long flag via --config.
"""

from __future__ import annotations

import argparse
import sys
import time
from typing import Dict, List, Optional

import numpy as np

from .arch import (EXPECTED_BLOCK_KCOUNTS, EXPECTED_TOTAL_M, PRESETS, get_arch,
                   round_k, round_m)
from .checks import GRAD_TOL, composite_checks, gradient_checks
from .conv4d import (CENTER_PIVOT, ORIGINAL, SEPARABLE, Conv4dConfig, Kernel4d,
                     conv4d_center_pivot, conv4d_original, conv4d_separable,
                     decomposition_max_error, init_kernel)
from .decoder import VoteConfig
from .episodes import SyntheticEpisodeSpec, generate_synthetic_episode, read_manifest
from .errors import InvalidInputError, TensorIOError
from .metrics import EvalAccumulator, fbiou, miou, report
from .model import Model
from .trainer import (AdamConfig, AdamState, TrainConfig, evaluate,
                      load_checkpoint, save_checkpoint, train_episodes)

VARIANTS = (CENTER_PIVOT, ORIGINAL, SEPARABLE)


def _read_config(path: Optional[str]) -> Dict[str, str]:
    if path is None:
        return {}
    cfg = {}
    with open(path) as fh:
        for ln, raw in enumerate(fh, 1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise InvalidInputError(f"{path}:{ln}: expected key=value, got {line!r}")
            key, _, value = line.partition("=")
            cfg[key.strip().replace("-", "_")] = value.strip()
    return cfg


def _fill_defaults(args: argparse.Namespace, cfg: Dict[str, str]) -> None:
    """Config values stand in for flags the user did not pass."""
    for key, value in cfg.items():
        if getattr(args, key, None) is None and hasattr(args, key):
            default = _DEFAULTS.get((args.command, key))
            caster = type(default) if default is not None else str
            setattr(args, key, caster(value))
    for (command, key), default in _DEFAULTS.items():
        if command == args.command and getattr(args, key, None) is None:
            setattr(args, key, default)


_DEFAULTS = {
    ("params", "backbone"): "all", ("params", "kernel"): "all",
    ("bench", "backbone"): "resnet101", ("bench", "extent"): 6,
    ("bench", "channels"): 2, ("bench", "seed"): 0,
    ("gradcheck", "seed"): 0, ("gradcheck", "samples"): 20,
    ("train-toy", "steps"): 500, ("train-toy", "seed"): 0,
    ("train-toy", "target_loss"): 0.05, ("train-toy", "shots"): 1,
    ("train-toy", "noise"): 0.05, ("train-toy", "batch"): 1,
    ("train-toy", "lr"): 1e-3,
    ("eval", "threshold"): 0.5,
    ("verify-decomposition", "trials"): 100, ("verify-decomposition", "seed"): 0,
}


def cmd_params(args) -> int:
    backbones = [b for b in ("vgg16", "resnet50", "resnet101")
                 if args.backbone in ("all", b)]
    kernels = [v for v in VARIANTS if args.kernel in ("all", v)]
    if not backbones or not kernels:
        print(f"ERROR unknown backbone {args.backbone!r} or kernel {args.kernel!r}")
        return 2
    failures = []
    for backbone in backbones:
        arch = get_arch(backbone)
        for variant in kernels:
            table = arch.param_table(variant)
            expected = EXPECTED_BLOCK_KCOUNTS[backbone] if variant == CENTER_PIVOT else {}
            print(f"\nbackbone={backbone} kernel={variant}")
            print(f"{'block':<10} {'params':>10} {'rounded_k':>10} {'expected_k':>11}")
            for block, count in table.items():
                want = expected.get(block)
                mark = ""
                if want is not None and round_k(count) != want:
                    mark = "  MISMATCH"
                    failures.append(f"FAIL check=params backbone={backbone} "
                                    f"kernel={variant} block={block} "
                                    f"expected_k={want} actual_k={round_k(count)}")
                print(f"{block:<10} {count:>10} {round_k(count):>10} "
                      f"{want if want is not None else '-':>11}{mark}")
            total = sum(table.values())
            want_m = EXPECTED_TOTAL_M.get(variant) if backbone == "resnet101" else None
            line = f"{'total':<10} {total:>10} {round_m(total):>9}M"
            if want_m is not None:
                line += f" {want_m:>10}M"
                if round_m(total) != want_m:
                    line += "  MISMATCH"
                    failures.append(f"FAIL check=params backbone={backbone} "
                                    f"kernel={variant} block=total "
                                    f"expected_m={want_m} actual_m={round_m(total)}")
            print(line)
    for f in failures:
        print(f)
    print(f"\nRESULT {'fail' if failures else 'pass'}")
    return 1 if failures else 0


def cmd_bench(args) -> int:
    arch = get_arch(args.backbone)
    print(f"backbone={args.backbone} full-scale 4D-conv stack FLOPs per variant")
    flops = {v: arch.total_conv4d_flops(v) for v in VARIANTS}
    for v in VARIANTS:
        print(f"flops_{v.replace('-', '_')}={flops[v]}")

    e, c = args.extent, args.channels
    rng = np.random.default_rng(args.seed)
    x = rng.standard_normal((c, e, e, e, e))
    print(f"\nwall time, single conv at input ({c},{e},{e},{e},{e}), kernel 3:")
    run = {CENTER_PIVOT: conv4d_center_pivot, ORIGINAL: conv4d_original,
           SEPARABLE: conv4d_separable}
    for v in VARIANTS:
        cfg = Conv4dConfig(c, c, 3, (1, 1, 2, 2), variant=v)
        kern = init_kernel(cfg, rng)
        run[v](x, kern, cfg)  # warm-up
        t0 = time.perf_counter()
        run[v](x, kern, cfg)
        dt = time.perf_counter() - t0
        print(f"time_{v.replace('-', '_')}_ms={1000 * dt:.3f}")

    ok = flops[CENTER_PIVOT] < flops[SEPARABLE] < flops[ORIGINAL]
    if not ok:
        print(f"FAIL check=bench ordering=center-pivot<separable<original "
              f"cp={flops[CENTER_PIVOT]} sep={flops[SEPARABLE]} orig={flops[ORIGINAL]}")
    print(f"\nRESULT {'pass' if ok else 'fail'}")
    return 0 if ok else 1


def cmd_gradcheck(args) -> int:
    errors = gradient_checks(args.seed)
    errors.update(composite_checks(args.seed, samples=args.samples))
    failures = []
    for name, err in errors.items():
        status = "ok" if err < GRAD_TOL else "FAIL"
        print(f"{name:<28} max_rel_err={err:.3e}  {status}")
        if err >= GRAD_TOL:
            failures.append(f"FAIL check=gradcheck op={name} "
                            f"max_rel_err={err:.3e} tol={GRAD_TOL}")
    for f in failures:
        print(f)
    print(f"\nRESULT {'fail' if failures else 'pass'}")
    return 1 if failures else 0


def cmd_train_toy(args) -> int:
    spec = SyntheticEpisodeSpec(seed=args.seed, shots=args.shots, noise=args.noise)
    episode = generate_synthetic_episode(spec)
    model = Model(get_arch("toy"), seed=args.seed)
    cfg = TrainConfig(max_steps=args.steps, batch_size=args.batch, seed=args.seed,
                      adam=AdamConfig(lr=args.lr))
    state = AdamState(model.params)
    trace = train_episodes(model, [episode], cfg, state, log=print)
    acc = evaluate(model, [episode])
    score = miou(acc)
    print(f"final_loss={trace[-1]:.6f}")
    print(f"episode_miou={score:.6f}")
    print(f"episode_fbiou={fbiou(acc):.6f}")
    if args.out:
        path = save_checkpoint(args.out, model, state)
        print(f"checkpoint={path}")
    ok = trace[-1] < args.target_loss and score == 1.0
    if not ok:
        print(f"FAIL check=train-toy final_loss={trace[-1]:.6f} "
              f"target_loss={args.target_loss} miou={score:.6f}")
    print(f"RESULT {'pass' if ok else 'fail'}")
    return 0 if ok else 1


def cmd_eval(args) -> int:
    backbone, episodes = read_manifest(args.manifest)
    acc = EvalAccumulator(exclude_ignored=not args.include_ignored)
    if args.from_predictions:
        evaluate(None, episodes, acc=acc, from_predictions=True)
    else:
        model = Model(get_arch(backbone), seed=0)
        if args.checkpoint:
            load_checkpoint(args.checkpoint, model)
        else:
            print("# note: no checkpoint given; evaluating freshly "
                  "initialized weights")
        evaluate(model, episodes, VoteConfig(args.threshold), acc)
    print(f"backbone={backbone}")
    print(f"episodes={len(episodes)}")
    print(report(acc))
    return 0


def cmd_verify_decomposition(args) -> int:
    t0 = time.perf_counter()
    err64 = decomposition_max_error(args.trials, args.seed, np.float64)
    err32 = decomposition_max_error(args.trials, args.seed + 1, np.float32)
    dt = time.perf_counter() - t0
    print(f"trials={args.trials}")
    print(f"max_abs_err_real64={err64:.3e}")
    print(f"max_abs_err_real32={err32:.3e}")
    print(f"elapsed_s={dt:.2f}")
    ok = err64 < 1e-12 and err32 < 1e-6
    if not ok:
        print(f"FAIL check=verify-decomposition err64={err64:.3e} err32={err32:.3e} "
              f"tol64=1e-12 tol32=1e-6")
    print(f"RESULT {'pass' if ok else 'fail'}")
    return 0 if ok else 1


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(
        prog="corrseg",
        description="verification and benchmark tools for the correlation "
                    "segmentation library")
    ap.add_argument("--config", help="key=value file supplying flag defaults")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("params", help="parameter-count tables vs published counts")
    p.add_argument("--backbone", choices=["vgg16", "resnet50", "resnet101", "all"])
    p.add_argument("--kernel", choices=list(VARIANTS) + ["all"])

    p = sub.add_parser("bench", help="FLOPs accounting and single-conv timing")
    p.add_argument("--backbone", choices=sorted(PRESETS))
    p.add_argument("--extent", type=int)
    p.add_argument("--channels", type=int)
    p.add_argument("--seed", type=int)

    p = sub.add_parser("gradcheck", help="finite-difference gradient sweep")
    p.add_argument("--seed", type=int)
    p.add_argument("--samples", type=int, help="coordinates probed in composites")

    p = sub.add_parser("train-toy", help="overfit one synthetic episode")
    p.add_argument("--steps", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--target-loss", dest="target_loss", type=float)
    p.add_argument("--shots", type=int)
    p.add_argument("--noise", type=float)
    p.add_argument("--batch", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--out", help="directory for the final checkpoint")

    p = sub.add_parser("eval", help="mIoU / FB-IoU over an episode manifest")
    p.add_argument("--manifest", required=True)
    p.add_argument("--checkpoint")
    p.add_argument("--from-predictions", dest="from_predictions", action="store_true",
                   help="score the manifest's stored pred= masks instead of "
                        "running the model")
    p.add_argument("--include-ignored", dest="include_ignored", action="store_true",
                   help="count ignore-labeled pixels as background")
    p.add_argument("--threshold", type=float, help="voting threshold")

    p = sub.add_parser("verify-decomposition",
                       help="randomized equivalence of the two conv paths")
    p.add_argument("--trials", type=int)
    p.add_argument("--seed", type=int)
    return ap


_RUNNERS = {
    "params": cmd_params,
    "bench": cmd_bench,
    "gradcheck": cmd_gradcheck,
    "train-toy": cmd_train_toy,
    "eval": cmd_eval,
    "verify-decomposition": cmd_verify_decomposition,
}


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = _read_config(args.config)
        _fill_defaults(args, cfg)
        return _RUNNERS[args.command](args)
    except (InvalidInputError, TensorIOError, OSError) as exc:
        print(f"ERROR {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
