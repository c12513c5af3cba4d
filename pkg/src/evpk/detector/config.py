"""Detector configuration and its flat ``key=value`` file form."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass

import numpy as np

from ..representations import KINDS

MEMORY_MODES = ("full", "lrm", "srm", "none")


@dataclass
class DetectorConfig:
    input_size: int = 64
    widths: tuple = (16, 32, 64)
    strides: tuple = (2, 4, 8)
    anchor_scale: float = 4.0  # anchor side = anchor_scale * stride
    num_classes: int = 2
    head_width: int = 32
    cls_prior: float = 0.01  # initial foreground probability of the class logits
    # temporal modules
    memory: str = "full"  # full | lrm | srm | none
    skip_sum: bool = True
    srm_reduction: int = 8
    # input representation
    representation: str = "eventpillars"
    pillar_channels: int = 16
    max_events: int = 5
    max_pillars: int = 100_000
    slices: int = 1
    bins: int = 5
    window_ms: float = 50.0
    # losses and decoding
    focal_gamma: float = 2.0
    focal_alpha: float = 0.25
    pos_iou: float = 0.5
    neg_iou: float = 0.4
    nms_iou: float = 0.5
    score_threshold: float = 0.05
    max_detections: int = 100
    # optimization
    bptt: int = 10
    lr: float = 2e-4
    lr_min: float = 0.0
    epochs: int = 1
    steps: int = 0  # >0 overrides epochs with a fixed optimizer-step budget
    box_loss_weight: float = 1.0
    seed: int = 0
    dtype: str = "float64"
    # synthetic benchmark (train subcommand)
    train_sequences: int = 50
    test_sequences: int = 10
    sequence_windows: int = 10
    data_seed: int = 0

    def __post_init__(self):
        self.widths = tuple(int(w) for w in self.widths)
        self.strides = tuple(int(s) for s in self.strides)
        if len(self.widths) != 3 or len(self.strides) != 3:
            raise ValueError("detector needs exactly 3 scales")
        if self.bptt < 1:
            raise ValueError(f"bptt must be >= 1, got {self.bptt}")
        if self.memory not in MEMORY_MODES:
            raise ValueError(f"memory must be one of {MEMORY_MODES}, got {self.memory!r}")
        if self.representation != "eventpillars" and self.representation not in KINDS:
            raise ValueError(f"unknown representation {self.representation!r}")
        if self.input_size % 8:
            raise ValueError(f"input size {self.input_size} not divisible by 8")

    @property
    def np_dtype(self):
        return np.dtype(self.dtype)

    @property
    def use_srm(self):
        return self.memory in ("full", "srm")

    @property
    def use_lrm(self):
        return self.memory in ("full", "lrm")

    @property
    def window_us(self):
        return int(round(self.window_ms * 1000))

    def input_channels(self):
        if self.representation == "eventpillars":
            return 2 * self.pillar_channels
        from ..representations import ReprConfig
        return ReprConfig(self.representation, self.bins).channels()

    def replace(self, **kw):
        return dataclasses.replace(self, **kw)


def _coerce(value, default):
    if isinstance(default, bool):
        v = value.strip().lower()
        if v in ("1", "true", "yes", "on"):
            return True
        if v in ("0", "false", "no", "off"):
            return False
        raise ValueError(f"not a boolean: {value!r}")
    if isinstance(default, int):
        return int(value)
    if isinstance(default, float):
        return float(value)
    if isinstance(default, tuple):
        return tuple(int(v) for v in value.split(","))
    return value.strip()


def config_from_text(text, base=None):
    """Parse ``key=value`` lines; ``#`` starts a comment. Unknown keys raise."""
    base = base or DetectorConfig()
    fields_ = {f.name: f for f in dataclasses.fields(DetectorConfig)}
    updates = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"line {lineno}: expected key=value, got {raw!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        if key not in fields_:
            raise ValueError(f"line {lineno}: unknown config key {key!r}")
        try:
            updates[key] = _coerce(value, getattr(base, key))
        except ValueError as exc:
            raise ValueError(f"line {lineno}: bad value for {key}: {exc}") from None
    return dataclasses.replace(base, **updates)


def config_to_text(cfg):
    lines = []
    for f in dataclasses.fields(cfg):
        v = getattr(cfg, f.name)
        if isinstance(v, tuple):
            v = ",".join(str(x) for x in v)
        elif isinstance(v, bool):
            v = "true" if v else "false"
        lines.append(f"{f.name}={v}")
    return "\n".join(lines) + "\n"


def load_config(path, base=None):
    with open(path, "r", encoding="utf-8") as fh:
        return config_from_text(fh.read(), base)


def save_config(cfg, path):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(config_to_text(cfg))
