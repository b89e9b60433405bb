"""Numerical-precision instrumentation for the dual-residual engine.

Measures how far reconstruction-based gradients drift from cached-activation
gradients across the (alpha, beta) grid, quantifies raw activation
reconstruction error, and verifies the module Jacobian determinant law
det = beta^d by dense finite differences.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass

import numpy as np

from .blocks import FBlock, NetworkConfig, _forward_tape
from .errors import InvariantError, NumericError, ShapeError
from .numerics import Prng, Tensor
from .revcore import (
    DrrNetwork,
    build_drr_network,
    backprop_cached,
    backprop_reversible,
    forward_cached,
    forward_reversible,
    reverse_stage,
)

# decade ladder of absolute tolerances probed by min_atol
TOLERANCE_LADDER = tuple(10.0 ** -e for e in range(12, 0, -1))
ABOVE_LADDER = math.inf


def _pairs(g_a, g_b):
    if isinstance(g_a, dict) != isinstance(g_b, dict):
        raise ShapeError("min_atol: operands must both be dicts or both sequences")
    if isinstance(g_a, dict):
        if set(g_a) != set(g_b):
            raise ShapeError(f"min_atol: key mismatch {set(g_a) ^ set(g_b)}")
        return [(g_a[k], g_b[k]) for k in sorted(g_a)]
    if len(g_a) != len(g_b):
        raise ShapeError(f"min_atol: {len(g_a)} vs {len(g_b)} tensors")
    return list(zip(g_a, g_b))


def gradients_close(g_a, g_b, rtol: float, atol: float) -> bool:
    """Elementwise |a - b| <= atol + rtol * |b| over every tensor pair."""
    for a, b in _pairs(g_a, g_b):
        if a.shape != b.shape:
            raise ShapeError(f"gradients_close: shape {a.shape} vs {b.shape}")
        if not np.all(np.abs(a.data - b.data) <= atol + rtol * np.abs(b.data)):
            return False
    return True


def min_atol(g_a, g_b, rtol: float = 1e-5) -> float:
    """Smallest ladder tolerance at which the two gradient sets agree.

    The closeness predicate is monotone in atol, so the first passing decade
    is the answer; ABOVE_LADDER marks sets that disagree even at 1e-1.
    """
    # a single max over the normalized residual gives the whole ladder at once
    worst = 0.0
    for a, b in _pairs(g_a, g_b):
        if a.shape != b.shape:
            raise ShapeError(f"min_atol: shape {a.shape} vs {b.shape}")
        residual = np.abs(a.data - b.data) - rtol * np.abs(b.data)
        if residual.size:
            worst = max(worst, float(residual.max()))
    if not math.isfinite(worst):
        return ABOVE_LADDER
    for atol in TOLERANCE_LADDER:
        if worst <= atol:
            return atol
    return ABOVE_LADDER


@dataclass
class ErrorMapCell:
    alpha: float
    beta: float
    min_atol: float
    max_abs_err: float
    max_rel_err: float
    finite: bool = True


@dataclass
class ErrorMap:
    alpha_grid: list[float]
    beta_grid: list[float]
    cells: dict[tuple[int, int], ErrorMapCell]
    meta: dict

    def cell(self, alpha: float, beta: float) -> ErrorMapCell:
        ai = self.alpha_grid.index(alpha)
        bi = self.beta_grid.index(beta)
        return self.cells[(ai, bi)]


def _config_digest(cfg: NetworkConfig) -> str:
    text = repr(tuple(getattr(cfg, f) for f in (
        "width", "hidden", "stages", "depth_per_stage", "pattern",
        "num_classes", "precision")))
    return hashlib.sha256(text.encode()).hexdigest()[:12]


# Map networks stand in for pretrained backbones: weights are drawn at
# reduced magnitude and MLP biases at O(1), which keeps activation scale flat
# with depth (the role normalization layers play in real networks). Absolute
# gradient errors then reflect (alpha, beta) reconstruction precision rather
# than signal blow-up or decay.
MAP_WEIGHT_SCALE = 0.5
MAP_BIAS_STD = 0.5


def _map_network(cfg: NetworkConfig, seed: int,
                 weight_scale: float = MAP_WEIGHT_SCALE,
                 bias_std: float = MAP_BIAS_STD) -> "DrrNetwork":
    """The map's shared seed-fixed parameters, independent of the grid point."""
    prng = Prng(seed).child("theta")
    net = build_drr_network(cfg, prng, alpha=0.0, beta=1.0, mode="reversible")
    bias_prng = prng.child("bias")
    for stage in net.stages:
        for block in stage.blocks:
            for name, tensor in block.params.items():
                if name.startswith("b"):
                    fresh = bias_prng.normal(tensor.shape, tensor.elem).data
                    tensor.data = fresh * fresh.dtype.type(bias_std)
                else:
                    tensor.data = tensor.data * tensor.data.dtype.type(weight_scale)
    return net


# worst case over a few probe inputs per cell so rung assignments reflect the
# cell's structural error level rather than single-draw luck
MAP_TRIALS = 5


def error_map_cell(cfg: NetworkConfig, alpha: float, beta: float,
                   rtol: float, seed: int, cell_label: str,
                   seq_len: int = 8, trials: int = MAP_TRIALS,
                   net: "DrrNetwork | None" = None) -> ErrorMapCell:
    """Compare both backprop modes at one grid point.

    The parameters are fixed by the map seed; only the probe inputs come
    from the cell's own child generator, so cells can be evaluated in any
    order (or concurrently) with identical results. The recorded tolerance
    is the smallest ladder rung that covers every trial.
    """
    if net is None:
        net = _map_network(cfg, seed)
    net.set_coefficients(alpha, beta)
    cell_prng = Prng(seed).child(cell_label)
    worst_atol = 0.0
    abs_err = 0.0
    rel_err = 0.0
    for trial in range(trials):
        x0 = cell_prng.child(f"input-{trial}").normal(
            (seq_len, cfg.width), cfg.precision)
        ones = Tensor(np.ones(cfg.num_classes, dtype=x0.data.dtype))
        with net.ledger.paused():
            try:
                boundaries, _ = forward_reversible(net, x0)
                g_rev, _ = backprop_reversible(net, boundaries, ones)
            except NumericError:
                return ErrorMapCell(alpha, beta, ABOVE_LADDER, math.nan,
                                    math.nan, finite=False)
            _, cache = forward_cached(net, x0)
            g_ref, _ = backprop_cached(net, cache, ones)
        if not all(t.is_finite() for t in g_rev.values()):
            return ErrorMapCell(alpha, beta, ABOVE_LADDER, math.nan, math.nan,
                                finite=False)
        worst_atol = max(worst_atol, min_atol(g_rev, g_ref, rtol))
        for name in g_ref:
            diff = np.abs(g_rev[name].data - g_ref[name].data)
            abs_err = max(abs_err, float(diff.max()))
            denom = np.abs(g_ref[name].data) + np.finfo(diff.dtype).tiny
            with np.errstate(over="ignore"):
                rel_err = max(rel_err, float((diff / denom).max()))
    return ErrorMapCell(alpha, beta, worst_atol, abs_err, rel_err)


def gradient_error_map(cfg: NetworkConfig, alpha_grid, beta_grid,
                       rtol: float = 1e-5, seed: int = 0,
                       seq_len: int = 8, trials: int = MAP_TRIALS) -> ErrorMap:
    """Minimal-tolerance map over the coefficient grid."""
    alpha_grid = [float(a) for a in alpha_grid]
    beta_grid = [float(b) for b in beta_grid]
    if any(b == 0.0 for b in beta_grid):
        raise InvariantError("gradient_error_map: beta grid must exclude 0")
    net = _map_network(cfg, seed)
    cells = {}
    for ai, alpha in enumerate(alpha_grid):
        for bi, beta in enumerate(beta_grid):
            cells[(ai, bi)] = error_map_cell(
                cfg, alpha, beta, rtol, seed, f"cell-{ai}-{bi}", seq_len,
                trials, net)
    meta = {"seed": seed, "precision": cfg.precision,
            "config_digest": _config_digest(cfg), "rtol": rtol,
            "trials": trials}
    return ErrorMap(alpha_grid, beta_grid, cells, meta)


DEFAULT_ALPHA_GRID = tuple(round(0.1 * i, 10) for i in range(11))
DEFAULT_BETA_GRID = tuple(round(0.1 * i, 10) for i in range(1, 11))

# canonical topology for coefficient-grid error studies: deep single stage so
# reconstruction chains dominate, f32 to expose the precision structure
DEFAULT_MAP_CONFIG = NetworkConfig(
    width=24, hidden=48, stages=1, depth_per_stage=16,
    pattern="interleaved", num_classes=10, precision="f32")


def reconstruction_error(net: DrrNetwork, x0: Tensor, trials: int = 1,
                         prng: Prng | None = None) -> float:
    """Max |reconstructed - forward| over all interior activations and trials."""
    if trials > 1 and prng is None:
        raise InvariantError("reconstruction_error: trials > 1 needs a prng")
    worst = 0.0
    with net.ledger.paused():
        for trial in range(trials):
            x_in = x0 if trial == 0 else prng.normal(x0.shape, x0.elem)
            _, cache = forward_cached(net, x_in)
            for si, stage in enumerate(net.stages):
                xs, ys = cache.stage_x[si], cache.stage_y[si]
                pairs = reverse_stage(stage, Tensor(xs[-1]), Tensor(ys[-1]))
                for k, (xr, yr) in enumerate(pairs):
                    i = len(stage.blocks) - 1 - k
                    worst = max(worst,
                                float(np.abs(xr.data - xs[i]).max()),
                                float(np.abs(yr.data - ys[i]).max()))
    return worst


def jacobian_det_check(block: FBlock, alpha: float, beta: float, x: Tensor,
                       step: float = 1e-6) -> tuple[float, float]:
    """Dense numeric determinant of one module map vs the closed form beta^d.

    The module maps (x_prev, y_prev) to (y_next, x_next); in that ordering the
    Jacobian is block triangular, so its determinant is beta^d independent of
    the block and alpha.
    """
    if x.elem != "f64":
        raise InvariantError("jacobian_det_check requires f64 input")
    d = x.size
    if d > 4:
        raise ShapeError(f"jacobian_det_check: total dimension {d} > 4")
    a = np.float64(alpha)
    b = np.float64(beta)

    def apply(u: np.ndarray) -> np.ndarray:
        x_prev = u[:d].reshape(x.shape)
        y_prev = u[d:].reshape(x.shape)
        f_out, _ = _forward_tape(block, x_prev)
        y_next = b * x_prev
        x_next = (f_out + a * x_prev) + y_prev
        return np.concatenate([y_next.reshape(-1), x_next.reshape(-1)])

    u0 = np.concatenate([x.data.reshape(-1), np.zeros(d)])
    jac = np.zeros((2 * d, 2 * d))
    for j in range(2 * d):
        up = u0.copy()
        up[j] += step
        um = u0.copy()
        um[j] -= step
        jac[:, j] = (apply(up) - apply(um)) / (2.0 * step)
    numeric = float(np.linalg.det(jac))
    analytic = float(beta) ** d
    if beta != 0.0 and numeric == 0.0:
        raise InvariantError(
            "numeric Jacobian is singular with beta != 0: implementation bug")
    return numeric, analytic


# ---------------------------------------------------------------------------
# File outputs
# ---------------------------------------------------------------------------

def write_error_map_csv(error_map: ErrorMap, path: str) -> None:
    lines = ["alpha,beta,min_atol,max_abs_err,max_rel_err"]
    for ai in range(len(error_map.alpha_grid)):
        for bi in range(len(error_map.beta_grid)):
            c = error_map.cells[(ai, bi)]
            lines.append(f"{c.alpha!r},{c.beta!r},{c.min_atol!r},"
                         f"{c.max_abs_err!r},{c.max_rel_err!r}")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")


def write_error_map_pgm(error_map: ErrorMap, path: str) -> None:
    """Plain (ASCII) PGM heatmap: log10(min_atol) mapped linearly onto 0..255.

    Rows follow the alpha grid, columns the beta grid; the ladder floor
    (1e-12) maps to 0 and the ceiling (1e-1) to 255. Cells above the ladder
    saturate at 255.
    """
    rows = []
    for ai in range(len(error_map.alpha_grid)):
        row = []
        for bi in range(len(error_map.beta_grid)):
            atol = error_map.cells[(ai, bi)].min_atol
            if not math.isfinite(atol):
                row.append(255)
                continue
            level = (math.log10(atol) + 12.0) / 11.0
            row.append(int(round(255 * min(1.0, max(0.0, level)))))
        rows.append(row)
    lines = ["P2",
             f"{len(error_map.beta_grid)} {len(error_map.alpha_grid)}",
             "255"]
    lines.extend(" ".join(str(v) for v in row) for row in rows)
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")
