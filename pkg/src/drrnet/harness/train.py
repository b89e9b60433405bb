"""Training loops: simulated pretraining, the six finetuning regimes, the
adaptive-moment optimizer, and the per-epoch metrics stream.
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass

import numpy as np

from ..blocks import (
    Checkpoint,
    PlainResidualNetwork,
    checkpoint_from_network,
    build_plain_network,
    named_parameters,
    network_from_checkpoint,
    plain_backprop,
    plain_forward,
    set_parameters,
)
from ..errors import ConfigError, NumericError
from ..numerics import Prng, Tensor
from ..revcore import (
    DrrNetwork,
    backprop_cached,
    backprop_reversible,
    build_drr_network,
    drr_named_parameters,
    drr_set_parameters,
    forward_cached,
    forward_reversible,
    init_from_pretrained,
)
from ..schedule import coefficients_at
from .config import REGIMES, STEPS_PER_EPOCH, TrainConfig
from .task import SyntheticTask, evaluate, make_task


@dataclass
class MetricsRecord:
    epoch: int
    step: int
    alpha: float
    beta: float
    train_loss: float
    eval_accuracy: float
    peak_activation_bytes: int
    step_time_ms: float

    def to_json(self) -> str:
        payload = {
            "epoch": self.epoch,
            "step": self.step,
            "α": self.alpha,
            "β": self.beta,
            "train_loss": self.train_loss,
            "eval_accuracy": self.eval_accuracy,
            "peak_activation_bytes": self.peak_activation_bytes,
            "step_time_ms": self.step_time_ms,
        }
        return json.dumps(payload, ensure_ascii=False)


def write_metrics_log(records: list[MetricsRecord], path: str) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for record in records:
            fh.write(record.to_json() + "\n")


# ---------------------------------------------------------------------------
# Optimizer and loss
# ---------------------------------------------------------------------------

def adam_init(params: dict[str, Tensor]) -> dict:
    return {
        "t": 0,
        "m": {k: np.zeros_like(p.data) for k, p in params.items()},
        "v": {k: np.zeros_like(p.data) for k, p in params.items()},
    }


def adam_step(params: dict[str, Tensor], grads: dict[str, np.ndarray],
              state: dict, lr: float, beta1: float = 0.9, beta2: float = 0.999,
              eps: float = 1e-8) -> tuple[dict[str, Tensor], dict]:
    """One adaptive-moment update; pure in (params, grads, state)."""
    t = state["t"] + 1
    new_m, new_v, new_params = {}, {}, {}
    correction1 = 1.0 - beta1 ** t
    correction2 = 1.0 - beta2 ** t
    for name, p in params.items():
        g = grads[name]
        m = beta1 * state["m"][name] + (1.0 - beta1) * g
        v = beta2 * state["v"][name] + (1.0 - beta2) * (g * g)
        m_hat = m / correction1
        v_hat = v / correction2
        new_params[name] = Tensor(
            p.data - p.data.dtype.type(lr) * m_hat / (np.sqrt(v_hat) + eps))
        new_m[name], new_v[name] = m, v
    untouched = {k: state["m"][k] for k in state["m"] if k not in params}
    untouched_v = {k: state["v"][k] for k in state["v"] if k not in params}
    new_m.update(untouched)
    new_v.update(untouched_v)
    return new_params, {"t": t, "m": new_m, "v": new_v}


def cross_entropy(logits: np.ndarray, label: int) -> tuple[float, np.ndarray]:
    """Softmax cross-entropy loss and its gradient w.r.t. the logits."""
    shifted = logits - logits.max()
    e = np.exp(shifted)
    p = e / e.sum()
    loss = -float(np.log(p[label]))
    g = p.copy()
    g[label] -= 1.0
    return loss, g


# ---------------------------------------------------------------------------
# Single train steps (one optimizer update over a batch)
# ---------------------------------------------------------------------------

def _plain_cache_nbytes(cache) -> int:
    total = cache.pooled.nbytes
    for xs in cache.stage_x:
        total += sum(a.nbytes for a in xs)
    total += sum(a.nbytes for a in cache.trans_inputs)
    return total


def plain_train_step(net: PlainResidualNetwork, batch, lr: float, opt_state,
                     cfg: TrainConfig, trainable: set[str] | None = None
                     ) -> tuple[float, dict, int]:
    """Returns (mean loss, new optimizer state, peak cache bytes)."""
    params = named_parameters(net)
    grad_sum = {k: np.zeros_like(p.data) for k, p in params.items()}
    loss_sum = 0.0
    peak = 0
    for x, label in batch:
        logits, cache = plain_forward(net, x)
        peak = max(peak, _plain_cache_nbytes(cache))
        loss, g_logits = cross_entropy(logits.data, label)
        loss_sum += loss
        grads, _ = plain_backprop(net, cache, Tensor(g_logits))
        for k, g in grads.items():
            grad_sum[k] += g.data
    scale = 1.0 / len(batch)
    mean_grads = {k: g * scale for k, g in grad_sum.items()}
    if trainable is not None:
        params = {k: p for k, p in params.items() if k in trainable}
        mean_grads = {k: mean_grads[k] for k in params}
    new_params, opt_state = adam_step(params, mean_grads, opt_state, lr,
                                      cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps)
    set_parameters(net, new_params)
    return loss_sum * scale, opt_state, peak


def drr_train_step(net: DrrNetwork, batch, lr: float, opt_state,
                   cfg: TrainConfig) -> tuple[float, dict, int]:
    """One update in the network's own mode; the ledger resets here, once."""
    net.ledger.reset()
    params = drr_named_parameters(net)
    grad_sum = {k: np.zeros_like(p.data) for k, p in params.items()}
    loss_sum = 0.0
    for x, label in batch:
        if net.mode == "reversible":
            boundaries, logits = forward_reversible(net, x)
            loss, g_logits = cross_entropy(logits.data, label)
            grads, _ = backprop_reversible(net, boundaries, Tensor(g_logits))
        else:
            logits, cache = forward_cached(net, x)
            loss, g_logits = cross_entropy(logits.data, label)
            grads, _ = backprop_cached(net, cache, Tensor(g_logits))
        loss_sum += loss
        for k, g in grads.items():
            grad_sum[k] += g.data
    scale = 1.0 / len(batch)
    mean_grads = {k: g * scale for k, g in grad_sum.items()}
    new_params, opt_state = adam_step(params, mean_grads, opt_state, lr,
                                      cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps)
    drr_set_parameters(net, new_params)
    return loss_sum * scale, opt_state, net.ledger.peak_bytes


def _check_loss(loss: float, cfg: TrainConfig, step: int, context: str) -> None:
    if not np.isfinite(loss):
        raise NumericError(
            f"{context} diverged at step {step} (loss={loss}); "
            f"seed={cfg.seed} regime={cfg.regime} lr={cfg.lr} "
            f"width={cfg.width} depth={cfg.depth_per_stage} precision={cfg.precision}")


# ---------------------------------------------------------------------------
# Pretraining and finetuning
# ---------------------------------------------------------------------------

def pretrain(cfg: TrainConfig, task: SyntheticTask | None = None
             ) -> tuple[Checkpoint, float]:
    """Train a plain network on task A; returns the checkpoint and final accuracy."""
    model_cfg = cfg.model_config()
    if task is None:
        task = make_task(cfg.seed, model_cfg, cfg.seq_len, cfg.sigma)
    net = build_plain_network(model_cfg, Prng(cfg.seed).child("pretrain-init"))
    opt_state = adam_init(named_parameters(net))
    for step in range(cfg.pretrain_steps):
        batch = task.train_batch("a", step, cfg.batch)
        loss, opt_state, _ = plain_train_step(net, batch, cfg.lr, opt_state, cfg)
        _check_loss(loss, cfg, step, "pretrain")
    accuracy = evaluate(net, task, cfg.eval_samples, tag="a")
    return checkpoint_from_network(net, model_cfg), accuracy


def _build_finetune_model(cfg: TrainConfig, ckpt: Checkpoint | None):
    model_cfg = cfg.model_config()
    regime = cfg.regime
    if regime not in REGIMES:
        raise ConfigError(f"unknown regime {regime!r}; options {REGIMES}")
    if regime != "rev-scratch" and ckpt is None:
        raise ConfigError(f"regime {regime} requires a pretrained checkpoint")
    if regime in ("conventional", "frozen"):
        net = network_from_checkpoint(ckpt)
        if model_cfg != ckpt.config:
            raise ConfigError(
                f"config topology {model_cfg} differs from checkpoint {ckpt.config}")
        return net
    if regime == "rev-scratch":
        return build_drr_network(model_cfg, Prng(cfg.seed).child("scratch-init"),
                                 alpha=0.0, beta=1.0, mode="reversible")
    if regime == "hard":
        return init_from_pretrained(model_cfg, ckpt, hard=True)
    return init_from_pretrained(model_cfg, ckpt)  # dr2-vanilla / dr2-dynamic


def finetune(cfg: TrainConfig, ckpt: Checkpoint | None = None,
             task: SyntheticTask | None = None
             ) -> tuple[list[MetricsRecord], object]:
    """Train on task B under one regime; emits a metrics record every epoch."""
    if task is None:
        task = make_task(cfg.seed, cfg.model_config(), cfg.seq_len, cfg.sigma)
    model = _build_finetune_model(cfg, ckpt)
    policy = cfg.schedule_policy()
    dynamic = cfg.regime == "dr2-dynamic"
    plain = isinstance(model, PlainResidualNetwork)
    trainable = {"head"} if cfg.regime == "frozen" else None
    if plain:
        params = named_parameters(model)
        coeffs = lambda step: (1.0, 0.0)
    else:
        params = drr_named_parameters(model)
        coeffs = (lambda step: coefficients_at(policy, step)) if dynamic \
            else (lambda step: (model.alpha, model.beta))
    if trainable is not None:
        opt_state = adam_init({k: params[k] for k in trainable})
    else:
        opt_state = adam_init(params)

    records: list[MetricsRecord] = []
    for step in range(cfg.steps):
        t0 = time.perf_counter()
        alpha, beta = coeffs(step)
        if dynamic:
            model.set_coefficients(alpha, beta)
        batch = task.train_batch("b", step, cfg.batch)
        if plain:
            loss, opt_state, peak = plain_train_step(
                model, batch, cfg.lr, opt_state, cfg, trainable)
        else:
            loss, opt_state, peak = drr_train_step(
                model, batch, cfg.lr, opt_state, cfg)
        _check_loss(loss, cfg, step, f"finetune[{cfg.regime}]")
        elapsed_ms = (time.perf_counter() - t0) * 1000.0
        if step % STEPS_PER_EPOCH == 0 or step == cfg.steps - 1:
            records.append(MetricsRecord(
                epoch=step // STEPS_PER_EPOCH,
                step=step,
                alpha=alpha,
                beta=beta,
                train_loss=loss,
                eval_accuracy=evaluate(model, task, cfg.eval_samples, tag="b"),
                peak_activation_bytes=peak,
                step_time_ms=elapsed_ms,
            ))
    return records, model
