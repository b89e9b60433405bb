"""Reversible dual-residual network training engine.

Core pieces: differentiable primitives with a finite-difference oracle
(numerics), MLP/attention blocks and the plain residual baseline (blocks),
the dual-residual network with reconstruction-based backpropagation
(revcore), dynamic coefficient schedules (schedule), gradient-precision
instrumentation (analysis), and the synthetic pretrain/finetune harness
with its CLI (harness, cli).
"""

from .blocks import (
    Checkpoint,
    FBlock,
    NetworkConfig,
    PlainResidualNetwork,
    block_forward,
    block_vjp,
    g_apply,
    load_checkpoint,
    plain_backprop,
    plain_forward,
    save_checkpoint,
)
from .errors import ConfigError, DrrNetError, InvariantError, NumericError, \
    PrecisionError, ShapeError
from .numerics import Prng, Tensor, finite_difference_grad, map_unary, matmul, \
    softmax_rows
from .revcore import (
    ActivationLedger,
    DrrNetwork,
    DrrStage,
    backprop_cached,
    backprop_reversible,
    build_drr_network,
    forward_cached,
    forward_reversible,
    init_from_pretrained,
    ledger_report,
    reverse_stage,
)
from .schedule import SchedulePolicy, coefficients_at, schedule_events
from .analysis import (
    ErrorMap,
    gradient_error_map,
    jacobian_det_check,
    min_atol,
    reconstruction_error,
)

__version__ = "0.1.0"
