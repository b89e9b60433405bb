"""Memory and step-time benchmarks comparing cached vs reversible execution."""

from __future__ import annotations

import statistics
import time
from dataclasses import replace

from ..numerics import Prng, Tensor
from ..revcore import build_drr_network, drr_named_parameters
from .config import TrainConfig
from .train import adam_init, drr_train_step


def _synthetic_batch(cfg: TrainConfig, prng: Prng):
    """Random inputs and labels; benchmarks need work, not learnability."""
    inputs = prng.normal((cfg.batch, cfg.seq_len, cfg.width), cfg.precision)
    labels = prng.integers(cfg.batch, cfg.classes)
    return [(Tensor(inputs.data[i].copy()), int(labels[i]))
            for i in range(cfg.batch)]


def _one_step(cfg: TrainConfig, depth: int, mode: str, seed_label: str
              ) -> tuple[int, float]:
    """Run one full train step; returns (peak activation bytes, wall ms)."""
    step_cfg = replace(cfg, depth_per_stage=depth)
    prng = Prng(cfg.seed).child(seed_label)
    net = build_drr_network(step_cfg.model_config(), prng.child("init"),
                            alpha=step_cfg.alpha_end, beta=step_cfg.beta_end,
                            mode=mode)
    batch = _synthetic_batch(step_cfg, prng.child("batch"))
    opt_state = adam_init(drr_named_parameters(net))
    t0 = time.perf_counter()
    _, _, peak = drr_train_step(net, batch, step_cfg.lr, opt_state, step_cfg)
    elapsed_ms = (time.perf_counter() - t0) * 1000.0
    return peak, elapsed_ms


def mem_bench(cfg: TrainConfig, depths: list[int]
              ) -> list[tuple[int, str, int]]:
    """Ledger peak bytes for one train step per (depth, mode)."""
    if list(depths) != sorted(depths):
        raise ValueError(f"depths must be ascending, got {depths}")
    rows = []
    for depth in depths:
        for mode in ("cached", "reversible"):
            peak, _ = _one_step(cfg, depth, mode, f"mem-{depth}-{mode}")
            rows.append((depth, mode, peak))
    return rows


def time_bench(cfg: TrainConfig, trials: int, warmup: int = 3
               ) -> tuple[float, float, float]:
    """Median step time per mode and the reversible/cached ratio."""
    if trials < 1:
        raise ValueError(f"trials must be >= 1, got {trials}")
    times = {"cached": [], "reversible": []}
    for mode in ("cached", "reversible"):
        for trial in range(warmup + trials):
            _, ms = _one_step(cfg, cfg.depth_per_stage, mode,
                              f"time-{mode}-{trial}")
            if trial >= warmup:
                times[mode].append(ms)
    cached_ms = statistics.median(times["cached"])
    reversible_ms = statistics.median(times["reversible"])
    return cached_ms, reversible_ms, reversible_ms / cached_ms
