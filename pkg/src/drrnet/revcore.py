"""Dual-residual network: forward in two modes, exact reverse reconstruction,
memory-efficient backpropagation, and activation-byte accounting.

Every module computes

    y_i = beta * x_{i-1}
    x_i = (F_i(x_{i-1}) + alpha * x_{i-1}) + y_{i-1}

with y_0 = beta * x_0 at each stage entry, so the cached execution at
(alpha=1, beta=0) reproduces the plain residual network exactly. With
beta != 0 the module is invertible: x_{i-1} = y_i / beta first, then
y_{i-1} = x_i - G_i(x_{i-1}). Cached and reversible execution share the
same arithmetic in the same order, so they agree bit-for-bit; gradients
differ only through floating-point reconstruction error.
"""

from __future__ import annotations

from contextlib import contextmanager
from dataclasses import dataclass, field

import numpy as np

from .blocks import (
    Checkpoint,
    FBlock,
    NetworkConfig,
    _forward_tape,
    _vjp_from_tape,
    make_blocks,
)
from .errors import InvariantError, NumericError, ShapeError
from .numerics import Prng, Tensor


@dataclass
class ActivationLedger:
    """Live/peak byte accounting for retained activations, one per network."""

    live_bytes: int = 0
    peak_bytes: int = 0
    cached_tensor_count: int = 0
    suspended: bool = False

    def reset(self) -> None:
        self.live_bytes = 0
        self.peak_bytes = 0
        self.cached_tensor_count = 0

    def retain(self, arr: np.ndarray) -> None:
        if self.suspended:
            return
        self.live_bytes += arr.nbytes
        self.cached_tensor_count += 1
        if self.live_bytes > self.peak_bytes:
            self.peak_bytes = self.live_bytes

    def release(self, arr: np.ndarray) -> None:
        if self.suspended:
            return
        self.live_bytes -= arr.nbytes
        self.cached_tensor_count -= 1
        if self.live_bytes < 0:
            raise InvariantError("activation ledger went negative")

    @contextmanager
    def paused(self):
        previous = self.suspended
        self.suspended = True
        try:
            yield
        finally:
            self.suspended = previous


@dataclass
class DrrStage:
    """A run of dimension-preserving modules sharing one (alpha, beta) pair."""

    blocks: list[FBlock]
    alpha: float
    beta: float


@dataclass
class DrrNetwork:
    stages: list[DrrStage]
    transitions: list[Tensor]  # transitions[k] maps stage k output to stage k+1 input
    head: Tensor
    mode: str  # "cached" | "reversible"
    ledger: ActivationLedger = field(default_factory=ActivationLedger)

    @property
    def alpha(self) -> float:
        return self.stages[0].alpha

    @property
    def beta(self) -> float:
        return self.stages[0].beta

    def set_coefficients(self, alpha: float, beta: float) -> None:
        """Set the single global (alpha, beta) pair on every stage."""
        if not (0.0 <= alpha <= 1.0 and 0.0 <= beta <= 1.0):
            raise InvariantError(f"coefficients out of range: ({alpha}, {beta})")
        for stage in self.stages:
            stage.alpha = alpha
            stage.beta = beta


def build_drr_network(cfg: NetworkConfig, prng: Prng, alpha: float, beta: float,
                      mode: str = "reversible") -> DrrNetwork:
    """Randomly initialized dual-residual network with the given coefficients."""
    cfg.validate()
    s = cfg.width ** -0.5
    stages = [DrrStage(make_blocks(cfg, prng), alpha, beta)
              for _ in range(cfg.stages)]
    transitions = [
        Tensor(prng.normal((cfg.width, cfg.width), cfg.precision).data * s)
        for _ in range(cfg.stages - 1)
    ]
    head = Tensor(prng.normal((cfg.width, cfg.num_classes), cfg.precision).data * s)
    net = DrrNetwork(stages, transitions, head, mode)
    net.set_coefficients(alpha, beta)
    return net


def drr_named_parameters(net: DrrNetwork) -> dict[str, Tensor]:
    out: dict[str, Tensor] = {}
    for si, stage in enumerate(net.stages):
        for bi, block in enumerate(stage.blocks):
            for pname in block.param_names():
                out[f"stage{si}.block{bi}.{pname}"] = block.params[pname]
        if si < len(net.transitions):
            out[f"stage{si}.transition"] = net.transitions[si]
    out["head"] = net.head
    return out


def drr_set_parameters(net: DrrNetwork, values: dict[str, Tensor]) -> None:
    current = drr_named_parameters(net)
    for name, tensor in values.items():
        if name not in current:
            raise InvariantError(f"unknown parameter {name!r}")
        if current[name].shape != tensor.shape:
            raise ShapeError(
                f"parameter {name}: shape {tensor.shape} vs {current[name].shape}")
        current[name].data = np.ascontiguousarray(tensor.data)


def init_from_pretrained(cfg: NetworkConfig, ckpt: Checkpoint,
                         hard: bool = False, mode: str = "reversible"
                         ) -> DrrNetwork:
    """Dual-residual network carrying the pretrained parameters.

    Standard initialization uses (alpha, beta) = (1, 0.1) so the network
    starts close to the pretrained function; the hard variant jumps straight
    to the fully reversible point (0, 1).
    """
    diffs = [
        f"{name}: config {getattr(cfg, name)} vs checkpoint {getattr(ckpt.config, name)}"
        for name in ("width", "hidden", "stages", "depth_per_stage", "pattern",
                     "num_classes")
        if getattr(cfg, name) != getattr(ckpt.config, name)
    ]
    if diffs:
        raise InvariantError("checkpoint topology mismatch: " + "; ".join(diffs))
    alpha, beta = (0.0, 1.0) if hard else (1.0, 0.1)
    net = build_drr_network(cfg, Prng(0), alpha, beta, mode)
    params = {name: t.to_precision(cfg.precision) for name, t in ckpt.params}
    drr_set_parameters(net, params)
    return net


def _coeff(value: float, dtype) -> np.generic:
    return dtype.type(value)


def _require_reversible(beta: float, op: str) -> None:
    if beta == 0.0:
        raise InvariantError(f"{op}: beta = 0 breaks reversibility")


# ---------------------------------------------------------------------------
# Forward passes
# ---------------------------------------------------------------------------

def _stage_forward(stage: DrrStage, x0: np.ndarray, ledger: ActivationLedger,
                   keep_all: bool):
    """Run one stage; returns (x_N, y_N) plus full (xs, ys) when keep_all."""
    dt = x0.dtype
    a = _coeff(stage.alpha, dt)
    b = _coeff(stage.beta, dt)
    # beta = 0 replicates the input through an exactly-zero second pathway
    y = np.zeros_like(x0) if stage.beta == 0.0 else b * x0
    x = x0
    ledger.retain(x)
    ledger.retain(y)
    xs = [x] if keep_all else None
    ys = [y] if keep_all else None
    for block in stage.blocks:
        f_out, _ = _forward_tape(block, x)
        y_new = np.zeros_like(x) if stage.beta == 0.0 else b * x
        x_new = (f_out + a * x) + y
        ledger.retain(x_new)
        ledger.retain(y_new)
        if keep_all:
            xs.append(x_new)
            ys.append(y_new)
        else:
            ledger.release(x)
            ledger.release(y)
        x, y = x_new, y_new
    return x, y, xs, ys


@dataclass
class DrrCache:
    """Every intermediate activation of a cached-mode forward pass."""

    stage_x: list[list[np.ndarray]]  # per stage: x_0 .. x_N
    stage_y: list[list[np.ndarray]]  # per stage: y_0 .. y_N
    pooled: np.ndarray
    alpha: float
    beta: float
    signature: tuple


def _drr_signature(net: DrrNetwork) -> tuple:
    return tuple((name, t.shape, t.elem)
                 for name, t in drr_named_parameters(net).items())


def _head_forward(head: Tensor, x_final: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    pooled = x_final.mean(axis=0)
    return pooled @ head.data, pooled


def forward_cached(net: DrrNetwork, x0: Tensor) -> tuple[Tensor, DrrCache]:
    """Same arithmetic as the reversible pass but every activation is kept."""
    x = x0.data
    stage_x, stage_y = [], []
    for si, stage in enumerate(net.stages):
        x, _, xs, ys = _stage_forward(stage, x, net.ledger, keep_all=True)
        stage_x.append(xs)
        stage_y.append(ys)
        if si < len(net.transitions):
            x = x @ net.transitions[si].data
    logits, pooled = _head_forward(net.head, x)
    cache = DrrCache(stage_x, stage_y, pooled, net.alpha, net.beta,
                     _drr_signature(net))
    return Tensor(logits), cache


def forward_reversible(net: DrrNetwork, x0: Tensor
                       ) -> tuple[list[tuple[Tensor, Tensor]], Tensor]:
    """Forward pass retaining only the (x_N, y_N) boundary pair per stage."""
    if net.mode != "reversible":
        raise InvariantError(f"forward_reversible called in mode {net.mode!r}")
    _require_reversible(net.beta, "forward_reversible")
    x = x0.data
    boundaries = []
    for si, stage in enumerate(net.stages):
        x, y, _, _ = _stage_forward(stage, x, net.ledger, keep_all=False)
        boundaries.append((Tensor(x), Tensor(y)))
        if si < len(net.transitions):
            x = x @ net.transitions[si].data
    logits, _ = _head_forward(net.head, x)
    return boundaries, Tensor(logits)


# ---------------------------------------------------------------------------
# Reverse reconstruction
# ---------------------------------------------------------------------------

def _reconstruct_module(block: FBlock, alpha, beta, x_i: np.ndarray,
                        y_i: np.ndarray):
    """Invert one module: x_{i-1} = y_i / beta first, then y_{i-1}."""
    x_prev = y_i / beta
    f_out, tape = _forward_tape(block, x_prev)
    y_prev = x_i - (f_out + alpha * x_prev)
    return x_prev, y_prev, tape


def reverse_stage(stage: DrrStage, x_n: Tensor, y_n: Tensor
                  ) -> list[tuple[Tensor, Tensor]]:
    """Reconstruct all interior (x_i, y_i) pairs, ordered i = N-1 down to 0."""
    _require_reversible(stage.beta, "reverse_stage")
    if x_n.shape != y_n.shape:
        raise ShapeError(f"reverse_stage: pair shapes {x_n.shape} vs {y_n.shape}")
    dt = x_n.data.dtype
    a = _coeff(stage.alpha, dt)
    b = _coeff(stage.beta, dt)
    x, y = x_n.data, y_n.data
    out = []
    for block in reversed(stage.blocks):
        x, y, _ = _reconstruct_module(block, a, b, x, y)
        out.append((Tensor(x), Tensor(y)))
    return out


# ---------------------------------------------------------------------------
# Backpropagation
# ---------------------------------------------------------------------------

def _head_backward(head: Tensor, pooled: np.ndarray, n_tokens: int,
                   g_logits: np.ndarray):
    g_head = np.outer(pooled, g_logits)
    g_pool = head.data @ g_logits
    g_x = np.broadcast_to(g_pool, (n_tokens, g_pool.size))
    return g_head, (g_x / n_tokens).astype(g_pool.dtype, copy=True)


def _module_grad_step(block: FBlock, tape: dict, alpha, beta,
                      g_x: np.ndarray, g_y: np.ndarray):
    """Gradient chain of one module; shared by both backprop modes.

    From the forward equations: the previous x receives beta * g_y through
    the second pathway, the block VJP, and alpha * g_x through the shortcut;
    the previous y receives g_x unchanged.
    """
    g_f, g_params = _vjp_from_tape(block, tape, g_x)
    g_x_prev = (beta * g_y + g_f) + alpha * g_x
    return g_x_prev, g_x, g_params


def _finish_stage_input_grad(beta, g_x: np.ndarray, g_y: np.ndarray) -> np.ndarray:
    # the stage input also feeds y_0 = beta * x_0
    return g_x + beta * g_y


def backprop_cached(net: DrrNetwork, cache: DrrCache, g_logits: Tensor
                    ) -> tuple[dict[str, Tensor], Tensor]:
    """Reference gradients computed from stored activations."""
    if cache.signature != _drr_signature(net):
        raise InvariantError("stale cache: network topology changed since forward")
    if (cache.alpha, cache.beta) != (net.alpha, net.beta):
        raise InvariantError("stale cache: coefficients changed since forward")
    grads: dict[str, np.ndarray] = {}
    num_stages = len(net.stages)
    dt = cache.stage_x[0][0].dtype
    a = _coeff(net.alpha, dt)
    b = _coeff(net.beta, dt)
    final_x = cache.stage_x[-1][-1]
    grads["head"], g_x = _head_backward(net.head, cache.pooled,
                                        final_x.shape[0], g_logits.data)
    for si in range(num_stages - 1, -1, -1):
        stage = net.stages[si]
        xs, ys = cache.stage_x[si], cache.stage_y[si]
        g_y = np.zeros_like(g_x)
        for bi in range(len(stage.blocks) - 1, -1, -1):
            _, tape = _forward_tape(stage.blocks[bi], xs[bi])
            g_x, g_y, g_params = _module_grad_step(
                stage.blocks[bi], tape, a, b, g_x, g_y)
            for pname, arr in g_params.items():
                grads[f"stage{si}.block{bi}.{pname}"] = arr
            net.ledger.release(xs[bi + 1])
            net.ledger.release(ys[bi + 1])
        g_in = _finish_stage_input_grad(b, g_x, g_y)
        net.ledger.release(xs[0])
        net.ledger.release(ys[0])
        if si > 0:
            prev_out = cache.stage_x[si - 1][-1]
            grads[f"stage{si - 1}.transition"] = prev_out.T @ g_in
            g_x = g_in @ net.transitions[si - 1].data.T
        else:
            g_x = g_in
    return {name: Tensor(arr) for name, arr in grads.items()}, Tensor(g_x)


def backprop_reversible(net: DrrNetwork,
                        boundaries: list[tuple[Tensor, Tensor]],
                        g_logits: Tensor) -> tuple[dict[str, Tensor], Tensor]:
    """Gradients with activations rebuilt module-by-module from stage outputs.

    Matches backprop_cached up to floating-point reconstruction error; peak
    retained bytes stay bounded by the stage boundaries plus one module's
    working pair regardless of stage depth.
    """
    _require_reversible(net.beta, "backprop_reversible")
    if len(boundaries) != len(net.stages):
        raise ShapeError(
            f"expected {len(net.stages)} boundary pairs, got {len(boundaries)}")
    grads: dict[str, np.ndarray] = {}
    dt = boundaries[-1][0].data.dtype
    a = _coeff(net.alpha, dt)
    b = _coeff(net.beta, dt)
    # the head consumes the last stage's x_N; no transition follows it
    x_head = boundaries[-1][0].data
    pooled = x_head.mean(axis=0)
    grads["head"], g_x = _head_backward(net.head, pooled, x_head.shape[0],
                                        g_logits.data)
    for si in range(len(net.stages) - 1, -1, -1):
        stage = net.stages[si]
        x_t, y_t = boundaries[si]
        x_i, y_i = x_t.data, y_t.data
        g_y = np.zeros_like(g_x)
        for bi in range(len(stage.blocks) - 1, -1, -1):
            x_prev, y_prev, tape = _reconstruct_module(
                stage.blocks[bi], a, b, x_i, y_i)
            if not (np.isfinite(x_prev).all() and np.isfinite(y_prev).all()):
                raise NumericError(
                    f"non-finite reconstruction in stage {si}, module {bi}")
            net.ledger.retain(x_prev)
            net.ledger.retain(y_prev)
            g_x, g_y, g_params = _module_grad_step(
                stage.blocks[bi], tape, a, b, g_x, g_y)
            for pname, arr in g_params.items():
                grads[f"stage{si}.block{bi}.{pname}"] = arr
            net.ledger.release(x_i)
            net.ledger.release(y_i)
            x_i, y_i = x_prev, y_prev
        g_in = _finish_stage_input_grad(b, g_x, g_y)
        net.ledger.release(x_i)
        net.ledger.release(y_i)
        if si > 0:
            prev_x, _ = boundaries[si - 1]
            grads[f"stage{si - 1}.transition"] = prev_x.data.T @ g_in
            g_x = g_in @ net.transitions[si - 1].data.T
        else:
            g_x = g_in
    return {name: Tensor(arr) for name, arr in grads.items()}, Tensor(g_x)


def ledger_report(net: DrrNetwork) -> tuple[int, int, int]:
    """(live_bytes, peak_bytes, cached_tensor_count) for the last step."""
    ledger = net.ledger
    return ledger.live_bytes, ledger.peak_bytes, ledger.cached_tensor_count
