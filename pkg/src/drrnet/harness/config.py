"""Line-oriented `key = value` experiment configuration.

Dotted keys select subsystems (model.*, train.*, schedule.*, task.*). Any
key outside the valid set is rejected with the full list so typos surface
immediately. Blank lines and lines starting with '#' are ignored.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

from ..blocks import NetworkConfig
from ..errors import ConfigError
from ..schedule import SchedulePolicy

REGIMES = ("conventional", "frozen", "rev-scratch", "hard",
           "dr2-vanilla", "dr2-dynamic")

# epoch length used whenever schedules or metrics are epoch-denominated
STEPS_PER_EPOCH = 100


@dataclass
class TrainConfig:
    width: int = 32
    stages: int = 2
    depth_per_stage: int = 6
    pattern: str = "interleaved"
    seq_len: int = 8
    hidden: int = 0  # 0 -> resolved to 2 * width
    lr: float = 1e-3
    steps: int = 1000
    batch: int = 64
    pretrain_steps: int = 2000
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    schedule_shape: str = "linear"
    schedule_order: str = "simultaneous"
    eta: int = 2
    eta_unit: str = "iterations"
    tau: int = 500
    alpha_end: float = 0.3
    beta_end: float = 0.7
    sigma: float = 0.1
    classes: int = 10
    eval_samples: int = 500
    seed: int = 7
    precision: str = "f32"
    regime: str | None = None

    def resolved_hidden(self) -> int:
        return self.hidden if self.hidden else 2 * self.width

    def model_config(self) -> NetworkConfig:
        return NetworkConfig(
            width=self.width,
            hidden=self.resolved_hidden(),
            stages=self.stages,
            depth_per_stage=self.depth_per_stage,
            pattern=self.pattern,
            num_classes=self.classes,
            precision=self.precision,
        )

    def schedule_policy(self) -> SchedulePolicy:
        return SchedulePolicy(
            shape=self.schedule_shape,
            order=self.schedule_order,
            eta=self.eta,
            eta_unit=self.eta_unit,
            tau=self.tau,
            alpha_end=self.alpha_end,
            beta_end=self.beta_end,
            steps_per_epoch=STEPS_PER_EPOCH,
        )

    def validate(self) -> None:
        if self.precision not in ("f32", "f64"):
            raise ConfigError(f"precision must be f32|f64, got {self.precision!r}")
        if self.regime is not None and self.regime not in REGIMES:
            raise ConfigError(
                f"unknown regime {self.regime!r}; options {REGIMES}")
        for name in ("width", "stages", "depth_per_stage", "seq_len", "steps",
                     "batch", "classes", "eval_samples"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1, got {getattr(self, name)}")
        if self.pretrain_steps < 0:
            raise ConfigError(f"pretrain_steps must be >= 0, got {self.pretrain_steps}")
        if self.sigma < 0:
            raise ConfigError(f"task.sigma must be >= 0, got {self.sigma}")
        self.model_config().validate()
        self.schedule_policy()  # raises on bad schedule values


_KEYS: dict[str, tuple[str, type]] = {
    "model.width": ("width", int),
    "model.stages": ("stages", int),
    "model.depth_per_stage": ("depth_per_stage", int),
    "model.pattern": ("pattern", str),
    "model.seq_len": ("seq_len", int),
    "model.hidden": ("hidden", int),
    "train.lr": ("lr", float),
    "train.steps": ("steps", int),
    "train.batch": ("batch", int),
    "train.pretrain_steps": ("pretrain_steps", int),
    "schedule.policy": ("schedule_shape", str),
    "schedule.order": ("schedule_order", str),
    "schedule.eta": ("eta", int),
    "schedule.eta_unit": ("eta_unit", str),
    "schedule.tau": ("tau", int),
    "schedule.alpha_end": ("alpha_end", float),
    "schedule.beta_end": ("beta_end", float),
    "task.sigma": ("sigma", float),
    "task.classes": ("classes", int),
    "eval.samples": ("eval_samples", int),
    "seed": ("seed", int),
    "precision": ("precision", str),
}


def parse_config_text(text: str, source: str = "<config>") -> TrainConfig:
    cfg = TrainConfig()
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value', got {raw!r}")
        key, _, value = line.partition("=")
        key = key.strip()
        value = value.strip()
        if key not in _KEYS:
            valid = ", ".join(sorted(_KEYS))
            raise ConfigError(f"{source}:{lineno}: unknown key {key!r}; "
                              f"valid keys: {valid}")
        attr, conv = _KEYS[key]
        try:
            setattr(cfg, attr, conv(value))
        except ValueError:
            raise ConfigError(
                f"{source}:{lineno}: cannot parse {value!r} as {conv.__name__} "
                f"for key {key}")
    cfg.validate()
    return cfg


def load_config(path: str) -> TrainConfig:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}")
    return parse_config_text(text, source=path)
