"""Command-line surface for the reversible-training engine.

Exit codes: 0 success, 1 configuration error, 2 numeric failure
(NaN/divergence), 3 invariant violation.
"""

from __future__ import annotations

import argparse
import sys

from .analysis import gradient_error_map, reconstruction_error, \
    write_error_map_csv, write_error_map_pgm
from .blocks import load_checkpoint, save_checkpoint
from .errors import ConfigError, DrrNetError
from .harness import REGIMES, finetune, load_config, mem_bench, pretrain, \
    time_bench, write_metrics_log
from .numerics import Prng
from .revcore import build_drr_network


def _parse_grid(spec: str, name: str) -> list[float]:
    """Inclusive START:STOP:STEP grid, e.g. 0:1:0.1."""
    try:
        start, stop, step = (float(v) for v in spec.split(":"))
    except ValueError:
        raise ConfigError(f"--{name}: expected START:STOP:STEP, got {spec!r}")
    if step <= 0 or stop < start:
        raise ConfigError(f"--{name}: bad range {spec!r}")
    values = []
    k = 0
    while True:
        v = round(start + k * step, 10)
        if v > stop + 1e-12:
            break
        values.append(v)
        k += 1
    return values


def _parse_depths(spec: str) -> list[int]:
    try:
        return [int(v) for v in spec.split(",")]
    except ValueError:
        raise ConfigError(f"--depths: expected comma-separated ints, got {spec!r}")


def _cmd_pretrain(args) -> int:
    cfg = load_config(args.config)
    ckpt, accuracy = pretrain(cfg)
    save_checkpoint(ckpt, args.out)
    print(f"pretrain: task-A accuracy {accuracy:.4f}, checkpoint -> {args.out}")
    return 0


def _cmd_finetune(args) -> int:
    cfg = load_config(args.config)
    cfg.regime = args.regime
    cfg.validate()
    ckpt = load_checkpoint(args.init) if args.init else None
    records, _ = finetune(cfg, ckpt)
    write_metrics_log(records, args.log)
    final = records[-1]
    print(f"finetune[{args.regime}]: final accuracy {final.eval_accuracy:.4f}, "
          f"metrics -> {args.log}")
    return 0


def _cmd_error_map(args) -> int:
    cfg = load_config(args.config)
    alpha_grid = _parse_grid(args.alpha_grid, "alpha-grid")
    beta_grid = _parse_grid(args.beta_grid, "beta-grid")
    error_map = gradient_error_map(cfg.model_config(), alpha_grid, beta_grid,
                                   rtol=args.rtol, seed=cfg.seed,
                                   seq_len=cfg.seq_len)
    write_error_map_csv(error_map, args.out)
    print(f"error-map: {len(alpha_grid)}x{len(beta_grid)} cells -> {args.out}")
    if args.heatmap:
        write_error_map_pgm(error_map, args.heatmap)
        print(f"error-map: heatmap -> {args.heatmap}")
    return 0


def _cmd_reverse_check(args) -> int:
    cfg = load_config(args.config)
    prng = Prng(cfg.seed).child("reverse-check")
    net = build_drr_network(cfg.model_config(), prng.child("init"),
                            alpha=cfg.alpha_end, beta=cfg.beta_end,
                            mode="reversible")
    x0 = prng.child("input").normal((cfg.seq_len, cfg.width), cfg.precision)
    worst = reconstruction_error(net, x0, trials=args.trials,
                                 prng=prng.child("trials"))
    print(f"reverse-check: {args.trials} trials at (alpha={cfg.alpha_end}, "
          f"beta={cfg.beta_end}), max abs reconstruction error {worst:.3e}")
    return 0


def _cmd_mem_bench(args) -> int:
    cfg = load_config(args.config)
    rows = mem_bench(cfg, _parse_depths(args.depths))
    print(f"{'depth':>5} {'mode':>10} {'peak_bytes':>12}")
    for depth, mode, peak in rows:
        print(f"{depth:>5} {mode:>10} {peak:>12}")
    return 0


def _cmd_time_bench(args) -> int:
    cfg = load_config(args.config)
    cached_ms, reversible_ms, ratio = time_bench(cfg, args.trials)
    print(f"time-bench: cached {cached_ms:.1f} ms, reversible "
          f"{reversible_ms:.1f} ms, ratio {ratio:.3f}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="drrnet",
        description="Reversible dual-residual network training engine")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("pretrain", help="train a plain network on task A")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True, help="checkpoint output path")
    p.set_defaults(func=_cmd_pretrain)

    p = sub.add_parser("finetune", help="train on task B under one regime")
    p.add_argument("--config", required=True)
    p.add_argument("--regime", required=True, choices=REGIMES)
    p.add_argument("--init", help="pretrained checkpoint (required except rev-scratch)")
    p.add_argument("--log", required=True, help="metrics JSONL output path")
    p.set_defaults(func=_cmd_finetune)

    p = sub.add_parser("error-map",
                       help="gradient error map over the coefficient grid")
    p.add_argument("--config", required=True)
    p.add_argument("--alpha-grid", default="0:1:0.1")
    p.add_argument("--beta-grid", default="0.1:1:0.1")
    p.add_argument("--rtol", type=float, default=1e-5)
    p.add_argument("--out", required=True, help="CSV output path")
    p.add_argument("--heatmap", help="optional PGM heatmap path")
    p.set_defaults(func=_cmd_error_map)

    p = sub.add_parser("reverse-check",
                       help="measure activation reconstruction error")
    p.add_argument("--config", required=True)
    p.add_argument("--trials", type=int, default=10)
    p.set_defaults(func=_cmd_reverse_check)

    p = sub.add_parser("mem-bench", help="peak activation bytes per depth/mode")
    p.add_argument("--config", required=True)
    p.add_argument("--depths", default="4,8,16")
    p.set_defaults(func=_cmd_mem_bench)

    p = sub.add_parser("time-bench", help="step time cached vs reversible")
    p.add_argument("--config", required=True)
    p.add_argument("--trials", type=int, default=5)
    p.set_defaults(func=_cmd_time_bench)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except DrrNetError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return getattr(exc, "exit_code", 3)


if __name__ == "__main__":
    sys.exit(main())
