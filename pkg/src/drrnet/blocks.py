"""F-blocks (MLP / single-head attention), the plain residual network, and
checkpoint serialization.

Blocks are dimension-preserving maps on token matrices [L x d]. Each block
ships an exact hand-written VJP; forward passes record a small tape of
intermediates so the backward half never re-derives them.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, InvariantError, ShapeError
from .numerics import (
    GELU,
    Prng,
    Tensor,
    _gelu,
    _gelu_derivative,
    _softmax_rows,
    _softmax_rows_vjp,
    _same_precision,
)

MLP_PARAM_NAMES = ("W1", "b1", "W2", "b2")
ATTENTION_PARAM_NAMES = ("Wq", "Wk", "Wv", "Wo")


@dataclass
class FBlock:
    """A dimension-preserving sub-network: 'mlp' or single-head 'attention'."""

    kind: str
    params: dict[str, Tensor]
    width: int

    def param_names(self) -> tuple[str, ...]:
        return MLP_PARAM_NAMES if self.kind == "mlp" else ATTENTION_PARAM_NAMES


def init_mlp(prng: Prng, width: int, hidden: int, elem: str = "f64") -> FBlock:
    s = width ** -0.5
    params = {
        "W1": Tensor(prng.normal((width, hidden), elem).data * s),
        "b1": Tensor.zeros((hidden,), elem),
        "W2": Tensor(prng.normal((hidden, width), elem).data * s),
        "b2": Tensor.zeros((width,), elem),
    }
    return FBlock("mlp", params, width)


def init_attention(prng: Prng, width: int, elem: str = "f64") -> FBlock:
    s = width ** -0.5
    params = {
        name: Tensor(prng.normal((width, width), elem).data * s)
        for name in ATTENTION_PARAM_NAMES
    }
    return FBlock("attention", params, width)


def _check_input(block: FBlock, x: Tensor) -> None:
    if len(x.shape) != 2 or x.shape[1] != block.width:
        raise ShapeError(
            f"{block.kind} block of width {block.width} got input shape {x.shape}")
    _same_precision(x, block.params[block.param_names()[0]], "block_forward")


def _forward_tape(block: FBlock, x: np.ndarray) -> tuple[np.ndarray, dict]:
    p = block.params
    if block.kind == "mlp":
        pre = x @ p["W1"].data + p["b1"].data
        act = _gelu(pre)
        out = act @ p["W2"].data + p["b2"].data
        return out, {"x": x, "pre": pre, "act": act}
    if block.kind == "attention":
        q = x @ p["Wq"].data
        k = x @ p["Wk"].data
        v = x @ p["Wv"].data
        inv = x.dtype.type(1.0 / np.sqrt(block.width))
        attn = _softmax_rows((q @ k.T) * inv)
        z = attn @ v
        out = z @ p["Wo"].data
        return out, {"x": x, "q": q, "k": k, "v": v, "attn": attn, "z": z, "inv": inv}
    raise InvariantError(f"unknown block kind {block.kind!r}")


def _vjp_from_tape(block: FBlock, tape: dict, g: np.ndarray
                   ) -> tuple[np.ndarray, dict[str, np.ndarray]]:
    p = block.params
    if block.kind == "mlp":
        x, pre, act = tape["x"], tape["pre"], tape["act"]
        g_act = g @ p["W2"].data.T
        g_pre = g_act * _gelu_derivative(pre)
        grads = {
            "W2": act.T @ g,
            "b2": g.sum(axis=0),
            "W1": x.T @ g_pre,
            "b1": g_pre.sum(axis=0),
        }
        return g_pre @ p["W1"].data.T, grads
    x, q, k, v, attn, z, inv = (tape["x"], tape["q"], tape["k"], tape["v"],
                                tape["attn"], tape["z"], tape["inv"])
    g_z = g @ p["Wo"].data.T
    g_attn = g_z @ v.T
    g_scores = _softmax_rows_vjp(attn, g_attn)
    g_q = (g_scores @ k) * inv
    g_k = (g_scores.T @ q) * inv
    g_v = attn.T @ g_z
    grads = {
        "Wo": z.T @ g,
        "Wq": x.T @ g_q,
        "Wk": x.T @ g_k,
        "Wv": x.T @ g_v,
    }
    g_x = g_q @ p["Wq"].data.T + g_k @ p["Wk"].data.T + g_v @ p["Wv"].data.T
    return g_x, grads


def block_forward(block: FBlock, x: Tensor) -> Tensor:
    """Apply the block; output shape equals input shape."""
    _check_input(block, x)
    out, _ = _forward_tape(block, x.data)
    return Tensor(out)


def block_vjp(block: FBlock, x: Tensor, g_out: Tensor
              ) -> tuple[Tensor, dict[str, Tensor]]:
    """Exact reverse-mode derivative of block_forward at x."""
    _check_input(block, x)
    if g_out.shape != x.shape:
        raise ShapeError(f"block_vjp: grad shape {g_out.shape} vs input {x.shape}")
    out, tape = _forward_tape(block, x.data)
    g_x, grads = _vjp_from_tape(block, tape, g_out.data)
    return Tensor(g_x), {name: Tensor(arr) for name, arr in grads.items()}


def g_apply(block: FBlock, alpha: float, x: Tensor) -> Tensor:
    """Block output plus the alpha-weighted shortcut, evaluated as F(x) + alpha*x."""
    _check_input(block, x)
    out, _ = _forward_tape(block, x.data)
    return Tensor(out + x.data.dtype.type(alpha) * x.data)


# ---------------------------------------------------------------------------
# Plain (non-reversible) residual network
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class NetworkConfig:
    """Topology shared by the plain network and its reversible counterpart."""

    width: int
    hidden: int
    stages: int
    depth_per_stage: int
    pattern: str  # interleaved | mlp | attention
    num_classes: int
    precision: str = "f64"

    def validate(self) -> None:
        if self.pattern not in ("interleaved", "mlp", "attention"):
            raise ConfigError(f"unknown block pattern {self.pattern!r}")
        for field in ("width", "hidden", "stages", "depth_per_stage", "num_classes"):
            if getattr(self, field) < 1:
                raise ConfigError(f"{field} must be >= 1, got {getattr(self, field)}")


@dataclass
class PlainStage:
    blocks: list[FBlock]
    transition: Tensor | None  # linear projection applied after the stage


@dataclass
class PlainResidualNetwork:
    stages: list[PlainStage]
    head: Tensor  # [width x num_classes], applied to mean-pooled tokens


def _block_kind(pattern: str, index: int) -> str:
    if pattern == "interleaved":
        # attention first, then alternating
        return "attention" if index % 2 == 0 else "mlp"
    return pattern


def make_blocks(cfg: NetworkConfig, prng: Prng) -> list[FBlock]:
    blocks = []
    for b in range(cfg.depth_per_stage):
        kind = _block_kind(cfg.pattern, b)
        if kind == "mlp":
            blocks.append(init_mlp(prng, cfg.width, cfg.hidden, cfg.precision))
        else:
            blocks.append(init_attention(prng, cfg.width, cfg.precision))
    return blocks


def build_plain_network(cfg: NetworkConfig, prng: Prng) -> PlainResidualNetwork:
    """Random plain residual network; weights ~ N(0, 1/width), biases zero."""
    cfg.validate()
    s = cfg.width ** -0.5
    stages = []
    for si in range(cfg.stages):
        blocks = make_blocks(cfg, prng)
        transition = None
        if si < cfg.stages - 1:
            transition = Tensor(
                prng.normal((cfg.width, cfg.width), cfg.precision).data * s)
        stages.append(PlainStage(blocks, transition))
    head = Tensor(prng.normal((cfg.width, cfg.num_classes), cfg.precision).data * s)
    return PlainResidualNetwork(stages, head)


def named_parameters(net: PlainResidualNetwork) -> dict[str, Tensor]:
    """Deterministically ordered name -> Tensor view of every parameter."""
    out: dict[str, Tensor] = {}
    for si, stage in enumerate(net.stages):
        for bi, block in enumerate(stage.blocks):
            for pname in block.param_names():
                out[f"stage{si}.block{bi}.{pname}"] = block.params[pname]
        if stage.transition is not None:
            out[f"stage{si}.transition"] = stage.transition
    out["head"] = net.head
    return out


def set_parameters(net: PlainResidualNetwork, values: dict[str, Tensor]) -> None:
    """Write parameter tensors back by name; shapes must match."""
    current = named_parameters(net)
    for name, tensor in values.items():
        if name not in current:
            raise InvariantError(f"unknown parameter {name!r}")
        if current[name].shape != tensor.shape:
            raise ShapeError(
                f"parameter {name}: shape {tensor.shape} vs {current[name].shape}")
        current[name].data = np.ascontiguousarray(tensor.data)


def _pool_mean(x: np.ndarray) -> np.ndarray:
    return x.mean(axis=0)


def _topology_signature(net: PlainResidualNetwork) -> tuple:
    return tuple(
        (name, t.shape, t.elem) for name, t in named_parameters(net).items())


@dataclass
class PlainCache:
    """All forward activations; consumed by plain_backprop."""

    stage_x: list[list[np.ndarray]]  # per stage: x_0 .. x_N
    trans_inputs: list[np.ndarray]
    pooled: np.ndarray
    signature: tuple


def plain_forward(net: PlainResidualNetwork, x0: Tensor
                  ) -> tuple[Tensor, PlainCache]:
    """Residual forward pass x_i = F_i(x_{i-1}) + x_{i-1}, caching everything."""
    x = x0.data
    stage_x: list[list[np.ndarray]] = []
    trans_inputs: list[np.ndarray] = []
    for stage in net.stages:
        xs = [x]
        for block in stage.blocks:
            out, _ = _forward_tape(block, x)
            x = out + x
            xs.append(x)
        stage_x.append(xs)
        if stage.transition is not None:
            trans_inputs.append(x)
            x = x @ stage.transition.data
    pooled = _pool_mean(x)
    logits = pooled @ net.head.data
    cache = PlainCache(stage_x, trans_inputs, pooled, _topology_signature(net))
    return Tensor(logits), cache


def plain_backprop(net: PlainResidualNetwork, cache: PlainCache, g_logits: Tensor
                   ) -> tuple[dict[str, Tensor], Tensor]:
    """Exact reverse-mode gradients through the cached plain forward."""
    if cache.signature != _topology_signature(net):
        raise InvariantError("stale cache: network topology changed since forward")
    g = g_logits.data
    grads: dict[str, np.ndarray] = {}
    pooled = cache.pooled
    grads["head"] = np.outer(pooled, g)
    g_x = np.broadcast_to(net.head.data @ g, cache.stage_x[-1][-1].shape)
    g_x = (g_x / cache.stage_x[-1][-1].shape[0]).astype(g.dtype, copy=True)
    ti = len(cache.trans_inputs)
    for si in range(len(net.stages) - 1, -1, -1):
        stage = net.stages[si]
        if stage.transition is not None:
            ti -= 1
            grads[f"stage{si}.transition"] = cache.trans_inputs[ti].T @ g_x
            g_x = g_x @ stage.transition.data.T
        xs = cache.stage_x[si]
        for bi in range(len(stage.blocks) - 1, -1, -1):
            block = stage.blocks[bi]
            _, tape = _forward_tape(block, xs[bi])
            g_f, g_p = _vjp_from_tape(block, tape, g_x)
            for pname, arr in g_p.items():
                grads[f"stage{si}.block{bi}.{pname}"] = arr
            g_x = g_f + g_x
    return {name: Tensor(arr) for name, arr in grads.items()}, Tensor(g_x)


# ---------------------------------------------------------------------------
# checkpoint I/O
# ---------------------------------------------------------------------------

CHECKPOINT_HEADER = "DRRNET-CKPT v1"
_CONFIG_FIELDS = ("width", "hidden", "stages", "depth_per_stage", "pattern",
                  "num_classes", "precision")


@dataclass
class Checkpoint:
    """Versioned network config plus ordered (name, tensor) parameter records."""

    config: NetworkConfig
    params: list[tuple[str, Tensor]]


def checkpoint_from_network(net: PlainResidualNetwork,
                            cfg: NetworkConfig) -> Checkpoint:
    params = [(name, t.copy()) for name, t in named_parameters(net).items()]
    return Checkpoint(cfg, params)


def network_from_checkpoint(ckpt: Checkpoint) -> PlainResidualNetwork:
    """Rebuild a plain network and load the stored parameter values."""
    net = build_plain_network(ckpt.config, Prng(0))
    set_parameters(net, dict(ckpt.params))
    return net


def save_checkpoint(ckpt: Checkpoint, path: str) -> None:
    lines = [CHECKPOINT_HEADER]
    for field in _CONFIG_FIELDS:
        lines.append(f"config {field} {getattr(ckpt.config, field)}")
    for name, tensor in ckpt.params:
        dims = " ".join(str(d) for d in tensor.shape)
        values = " ".join(f"{v:.17g}" for v in tensor.data.reshape(-1))
        lines.append(f"{name} dims {dims} : {values}")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")


def load_checkpoint(path: str) -> Checkpoint:
    with open(path, "r", encoding="utf-8") as fh:
        lines = [line.rstrip("\n") for line in fh]
    if not lines or lines[0] != CHECKPOINT_HEADER:
        raise ConfigError(f"{path}: missing checkpoint header {CHECKPOINT_HEADER!r}")
    config_values: dict[str, str] = {}
    params: list[tuple[str, Tensor]] = []
    for line in lines[1:]:
        if not line.strip():
            continue
        if line.startswith("config "):
            _, key, value = line.split(" ", 2)
            config_values[key] = value
            continue
        head, _, values = line.partition(" : ")
        parts = head.split()
        if len(parts) < 3 or parts[1] != "dims":
            raise ConfigError(f"{path}: malformed parameter record {line[:60]!r}")
        name = parts[0]
        shape = tuple(int(d) for d in parts[2:])
        elem = config_values.get("precision", "f64")
        data = np.array([float(v) for v in values.split()], dtype=np.float64)
        if data.size != int(np.prod(shape)):
            raise ConfigError(
                f"{path}: parameter {name} has {data.size} values for shape {shape}")
        params.append((name, Tensor(data.reshape(shape)).to_precision(elem)))
    missing = [f for f in _CONFIG_FIELDS if f not in config_values]
    if missing:
        raise ConfigError(f"{path}: checkpoint config missing fields {missing}")
    cfg = NetworkConfig(
        width=int(config_values["width"]),
        hidden=int(config_values["hidden"]),
        stages=int(config_values["stages"]),
        depth_per_stage=int(config_values["depth_per_stage"]),
        pattern=config_values["pattern"],
        num_classes=int(config_values["num_classes"]),
        precision=config_values["precision"],
    )
    return Checkpoint(cfg, params)
