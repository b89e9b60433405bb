"""Teacher-generated synthetic classification tasks.

A fixed-seed plain residual network labels standard-normal token matrices
by argmax of its logits. The downstream task uses a perturbed copy of the
teacher (all parameters shifted by sigma-scaled Gaussian noise), so
pretraining transfers but does not trivially solve it. Every sample is
addressable by (stream, index), which makes runs fully reproducible.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..blocks import (
    NetworkConfig,
    PlainResidualNetwork,
    build_plain_network,
    named_parameters,
    plain_forward,
    set_parameters,
)
from ..errors import ConfigError, NumericError
from ..numerics import Prng, Tensor
from ..revcore import DrrNetwork, forward_cached

DISTRIBUTION_SAMPLE = 10_000
_MIN_CLASS_SHARE = 0.02
_DOMINANT_SHARE = 0.90

# teachers are shallow regardless of the trainee topology: deep random plain
# networks concentrate their logits on a few classes, while two residual
# blocks give well-spread argmax labels that deeper students can still fit
TEACHER_DEPTH = 2


@dataclass
class SyntheticTask:
    input_dim: int
    seq_len: int
    num_classes: int
    sigma: float
    seed: int
    teacher_a: PlainResidualNetwork
    teacher_b: PlainResidualNetwork
    precision: str = "f32"
    _cache: dict = field(default_factory=dict, repr=False)

    def _input(self, stream: str, index: int) -> Tensor:
        prng = Prng(self.seed).child(f"sample-{stream}-{index}")
        return prng.normal((self.seq_len, self.input_dim), self.precision)

    def _teacher(self, tag: str) -> PlainResidualNetwork:
        return self.teacher_a if tag == "a" else self.teacher_b

    def example(self, tag: str, stream: str, index: int) -> tuple[Tensor, int]:
        """Deterministic (input, label) for one indexed sample of task a/b."""
        key = (tag, stream, index)
        hit = self._cache.get(key)
        if hit is not None:
            return hit
        x = self._input(stream, index)
        logits, _ = plain_forward(self._teacher(tag), x)
        label = int(np.argmax(logits.data))
        self._cache[key] = (x, label)
        return x, label

    def train_batch(self, tag: str, step: int, batch: int
                    ) -> list[tuple[Tensor, int]]:
        base = step * batch
        return [self.example(tag, f"train-{tag}", base + i) for i in range(batch)]

    def eval_set(self, tag: str, n: int) -> list[tuple[Tensor, int]]:
        return [self.example(tag, f"eval-{tag}", i) for i in range(n)]


def _class_shares(task: SyntheticTask, tag: str, n: int) -> np.ndarray:
    counts = np.zeros(task.num_classes, dtype=np.int64)
    for i in range(n):
        _, label = task.example(tag, "dist-check", i)
        counts[label] += 1
    return counts / n


def make_task(seed: int, cfg: NetworkConfig, seq_len: int, sigma: float,
              distribution_sample: int = DISTRIBUTION_SAMPLE) -> SyntheticTask:
    """Build the paired pretraining/downstream task for one seed.

    Rejects degenerate teachers (a dominant or starved class) with guidance
    to reseed rather than silently producing an unlearnable task.
    """
    teacher_cfg = NetworkConfig(
        width=cfg.width, hidden=cfg.hidden, stages=1,
        depth_per_stage=TEACHER_DEPTH, pattern="interleaved",
        num_classes=cfg.num_classes, precision=cfg.precision)
    root = Prng(seed)
    teacher_a = build_plain_network(teacher_cfg, root.child("teacher"))
    teacher_b = build_plain_network(teacher_cfg, Prng(0))
    noise = root.child("task-shift")
    shifted = {}
    for name, tensor in named_parameters(teacher_a).items():
        # sigma is relative: noise is scaled by each tensor's RMS, so zero
        # tensors (fresh biases) stay zero and class balance survives
        rms = float(np.sqrt(np.mean(tensor.data.astype(np.float64) ** 2)))
        delta = noise.normal(tensor.shape, tensor.elem).data * tensor.data.dtype.type(sigma * rms)
        shifted[name] = Tensor(tensor.data + delta)
    set_parameters(teacher_b, shifted)
    task = SyntheticTask(cfg.width, seq_len, cfg.num_classes, sigma, seed,
                         teacher_a, teacher_b, cfg.precision)
    for tag in ("a", "b"):
        shares = _class_shares(task, tag, distribution_sample)
        if shares.max() > _DOMINANT_SHARE or shares.min() < _MIN_CLASS_SHARE:
            raise ConfigError(
                f"degenerate task-{tag} teacher for seed {seed}: class shares "
                f"{np.round(shares, 3).tolist()}; pick a different seed")
    return task


def label_agreement(task: SyntheticTask, n: int = 1000) -> float:
    """Fraction of shared inputs on which task a and task b agree."""
    same = 0
    for i in range(n):
        _, la = task.example("a", "agreement", i)
        _, lb = task.example("b", "agreement", i)
        same += int(la == lb)
    return same / n


def predict(model, x: Tensor) -> int:
    """Argmax class of a plain or dual-residual network."""
    if isinstance(model, DrrNetwork):
        with model.ledger.paused():
            logits, _ = forward_cached(model, x)
    else:
        logits, _ = plain_forward(model, x)
    if not logits.is_finite():
        raise NumericError("non-finite logits during evaluation")
    return int(np.argmax(logits.data))


def evaluate(model, task: SyntheticTask, n: int, tag: str = "b") -> float:
    """Fraction of argmax-correct predictions on the deterministic eval set."""
    if n < 1:
        raise ConfigError(f"evaluate: n must be >= 1, got {n}")
    correct = 0
    for x, label in task.eval_set(tag, n):
        correct += int(predict(model, x) == label)
    return correct / n
