"""Flat ``key = value`` configuration files mapped onto :class:`TrainConfig`."""
from __future__ import annotations

import dataclasses
import hashlib
import math
from dataclasses import dataclass, fields
from pathlib import Path

MODES = ("ddss", "kdss", "ssdu", "supervised")
LR_SCHEDULES = ("constant", "cosine")
CLASSICAL_KEYS = ("cg_lambda", "cg_iters", "l1_mu", "l1_iters")


@dataclass(frozen=True)
class TrainConfig:
    """Training run description.  Defaults are the desk-scale setup."""

    mode: str = "ddss"
    # optimizer
    lr: float = 3e-3
    lr_schedule: str = "cosine"
    beta1: float = 0.9
    beta2: float = 0.999
    batch: int = 1
    epochs: int = 30
    seed: int = 0
    # network
    n_iter: int = 6
    lam_init: float = 1.0
    regularizer: str = "plain"
    width: int = 16
    depth: int = 4
    share_weights: bool = False
    # losses
    lambda_img: float = 2.0
    lambda_grad: float = 1.0
    lambda_pdc: float = 10.0
    rate_min: float = 0.2
    rate_max: float = 0.8
    # data; an empty ``dataset`` means "simulate from the keys below"
    dataset: str = ""
    size: int = 64
    accel: float = 2.0
    n_train: int = 60
    n_eval: int = 10
    ncoil: int = 8
    noise_sigma: float = 5e-4
    data_seed: int = 1
    per_example_trajectory: bool = False
    # classical baselines (not part of any learned model)
    cg_lambda: float = 1e-4
    cg_iters: int = 50
    l1_mu: float = 1e-3
    l1_iters: int = 100

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.lr_schedule not in LR_SCHEDULES:
            raise ValueError(f"lr_schedule must be one of {LR_SCHEDULES}, got {self.lr_schedule!r}")
        for name in ("lambda_img", "lambda_grad", "lambda_pdc", "lr"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")
        if self.mode == "ddss" and self.lambda_pdc == 0:
            raise ValueError(
                "lambda_pdc = 0 is rejected for DDSS: training on the appearance-consistency "
                "loss alone does not converge (its minimizer is any image the three "
                "reconstructions agree on, e.g. zero); use lambda_pdc > 0"
            )
        if not 0 < self.rate_min <= self.rate_max < 1:
            raise ValueError("partition rate range must satisfy 0 < rate_min <= rate_max < 1")
        if self.cg_lambda < 0 or self.l1_mu <= 0:
            raise ValueError("cg_lambda must be >= 0 and l1_mu > 0")
        if self.batch < 1 or self.epochs < 0:
            raise ValueError("batch must be >= 1 and epochs >= 0")

    def lr_at(self, step: int, total: int) -> float:
        """Learning rate for optimizer step ``step`` of ``total``."""
        if self.lr_schedule == "constant" or total <= 1:
            return self.lr
        return 0.5 * self.lr * (1 + math.cos(math.pi * step / total))

    def replace(self, **changes) -> "TrainConfig":
        return dataclasses.replace(self, **changes)

    def signature(self) -> str:
        """Stable hash of every setting (the seed included)."""
        text = "\n".join(f"{f.name}={getattr(self, f.name)!r}" for f in fields(self))
        return hashlib.sha256(text.encode()).hexdigest()[:16]

    def model_key(self) -> str:
        """Hash of the settings that determine a trained model (baseline keys excluded)."""
        text = "\n".join(f"{f.name}={getattr(self, f.name)!r}" for f in fields(self)
                         if f.name not in CLASSICAL_KEYS)
        return hashlib.sha256(text.encode()).hexdigest()[:16]

    def to_text(self) -> str:
        return "".join(f"{f.name} = {_fmt(getattr(self, f.name))}\n" for f in fields(self))


def _fmt(value):
    if isinstance(value, bool):
        return "true" if value else "false"
    return str(value)


def _parse(value: str, typ):
    if typ in (bool, "bool"):
        low = value.lower()
        if low in ("1", "true", "yes", "on"):
            return True
        if low in ("0", "false", "no", "off"):
            return False
        raise ValueError(f"not a boolean: {value!r}")
    if typ in (int, "int"):
        return int(value)
    if typ in (float, "float"):
        return float(value)
    return value


def parse_config(text: str, base: TrainConfig | None = None) -> TrainConfig:
    """Parse ``key = value`` lines (``#`` starts a comment) over ``base``."""
    types = {f.name: f.type for f in fields(TrainConfig)}
    changes = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"line {lineno}: expected 'key = value', got {raw!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        if key not in types:
            raise ValueError(f"line {lineno}: unknown key {key!r}")
        try:
            changes[key] = _parse(value, types[key])
        except ValueError as exc:
            raise ValueError(f"line {lineno}: {exc}") from None
    return dataclasses.replace(base or TrainConfig(), **changes)


def load_config(path, base: TrainConfig | None = None) -> TrainConfig:
    return parse_config(Path(path).read_text(), base)
