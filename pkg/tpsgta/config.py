"""
Validated configuration records shared by the library and the command line.
"""
import zlib
from typing import Literal, Optional

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator

VARIANTS = (
    "fcn",
    "fcn+gta",
    "fcn+tps",
    "fcn+tps+pe",
    "resnet",
    "resnet+gta",
    "resnet+tps",
    "resnet+tps+pe",
    "sa-standalone",
    "sa+pe",
    "tps-standalone",
    "tps+pe",
)


class AttentionConfig(BaseModel):
    """
    Hyperparameters of the temporal attention and encoder blocks.

    r: reduction factor of the CTA/GTA bottlenecks
    b: floor of the pseudo-Gaussian spreads (sigma >= b)
    d: encoder width
    heads / layers: attention heads and stacked attention layers
    scaling: S(.) applied to the softmax attention, identity or a learnable
        positive scalar per head
    distance: |i-j| ("linear") or (i-j)^2 ("squared") in the pseudo-Gaussian
    ff_multiplier: feed-forward width as a multiple of d
    pe_kind: learnable position table or fixed sinusoids
    """

    model_config = ConfigDict(extra="forbid")

    r: int = Field(16, ge=1)
    b: float = Field(1.0, gt=0)
    d: int = Field(128, ge=1)
    heads: int = Field(1, ge=1)
    layers: int = Field(1, ge=1)
    scaling: Literal["identity", "learnable"] = "identity"
    distance: Literal["linear", "squared"] = "linear"
    ff_multiplier: int = Field(4, ge=1)
    pe_kind: Literal["learnable", "sinusoidal"] = "learnable"

    @model_validator(mode="after")
    def heads_divide_width(self):
        if self.d % self.heads:
            raise ValueError(f"d={self.d} is not divisible by heads={self.heads}")
        return self


class TrainConfig(BaseModel):
    """
    Optimization protocol. Defaults follow the published setup: Adam at
    1e-4, categorical cross-entropy, 400 epochs, batches of 64 and a
    x0.1 learning-rate cut after 20 epochs without validation improvement.
    """

    model_config = ConfigDict(extra="forbid")

    learning_rate: float = Field(1e-4, gt=0)
    epochs: int = Field(400, ge=1)
    batch_size: int = Field(64, ge=1)
    lr_factor: float = Field(0.1, gt=0, lt=1)
    lr_patience: int = Field(20, ge=1)
    min_lr: float = Field(0.0, ge=0)
    beta1: float = Field(0.9, ge=0, lt=1)
    beta2: float = Field(0.999, ge=0, lt=1)
    eps: float = Field(1e-8, gt=0)
    val_fraction: float = Field(0.2, gt=0, lt=1)
    seed: int = Field(0, ge=0)
    log_every: int = Field(50, ge=1)


class SyntheticSpec(BaseModel):
    """
    Recipe for a seeded synthetic classification set.

    positioned-bump: classes differ only in where an identical bump sits
    shifted-pattern: classes differ in waveform shape, placed at random shifts
    frequency-mix: classes differ in sinusoid frequency, random phases
    """

    model_config = ConfigDict(extra="forbid")

    kind: Literal["positioned-bump", "shifted-pattern", "frequency-mix"] = "positioned-bump"
    n_samples: int = Field(120, ge=2)
    d: int = Field(2, ge=1)
    N: int = Field(64, ge=1)
    n_classes: int = Field(3, ge=2)
    noise: float = Field(0.0, ge=0)
    seed: int = Field(0, ge=0)

    @model_validator(mode="after")
    def enough_room(self):
        if self.n_samples < 2 * self.n_classes:
            raise ValueError("n_samples must give every class a sample in both splits")
        if self.N < 2 * self.n_classes:
            raise ValueError(f"N={self.N} is too short to separate {self.n_classes} classes")
        return self


class CliConfig(BaseModel):
    """
    Effective configuration of one command-line invocation.
    """

    model_config = ConfigDict(extra="forbid")

    command: str
    variant: Optional[str] = None
    train_path: Optional[str] = None
    test_path: Optional[str] = None
    synth: Optional[SyntheticSpec] = None
    znorm: Optional[bool] = None
    checkpoint: Optional[str] = None
    index: int = 0
    split: Literal["train", "test"] = "test"
    dims: int = Field(2, ge=1)
    length: int = Field(8, ge=1)
    classes: int = Field(2, ge=2)
    runs: int = Field(1, ge=1)
    seed: int = Field(0, ge=0)
    out_dir: str = "output"
    record_time: bool = False
    attention: AttentionConfig = Field(default_factory=AttentionConfig)
    train: TrainConfig = Field(default_factory=TrainConfig)

    @model_validator(mode="after")
    def known_variant(self):
        if self.variant is not None and self.variant not in VARIANTS:
            raise ValueError(
                f"unknown variant {self.variant!r}; valid variants: {', '.join(VARIANTS)}"
            )
        return self


def derive_seed(root: int, component: str) -> int:
    """
    Derives a reproducible seed for one component (e.g. "init", "shuffle")
    from the root seed.
    """
    key = zlib.crc32(component.encode("utf-8"))
    return int(np.random.SeedSequence(root, spawn_key=(key,)).generate_state(1)[0])
