"""
Classifiers built from validated layer plans.

A plan (ModelSpec) is an ordered list of LayerSpecs ending in a single
classification head. Convolutional stages run on channels-first maps
(B, d, N); embedding, positional and encoder stages run on sequences
(B, N, d). The model transposes between the two layouts where the plan
switches from one to the other.
"""
import logging
from typing import Dict, List, Literal, Optional, Tuple

import numpy as np
import pandas as pd
from pydantic import BaseModel, ConfigDict, Field

from .attention import CtaBlock, Encoder, GtaBlock, PositionalEncoding, cta_forward, gta_forward
from .config import VARIANTS, AttentionConfig, derive_seed
from .errors import CompositionError, ShapeError, UsageError
from .layers import BatchNorm1d, Conv1d, Dense, Module
from .tensor import as_tensor, global_avg_pool, relu

logger = logging.getLogger(__name__)

FCN_PLAN = ((128, 8), (256, 5), (128, 3))
RESNET_CHANNELS = (64, 128, 128)
RESNET_KERNELS = (8, 5, 3)

_CHANNEL_KINDS = {"conv", "residual", "gta", "cta"}
_SEQUENCE_KINDS = {"embed", "pe", "encoder"}
_SINGLE_KINDS = {"embed", "pe", "encoder", "head"}


class LayerSpec(BaseModel):
    """
    One stage of a layer plan.

    conv: conv(channels, kernel) -> BN -> ReLU
    residual: three conv/BN stages (kernels 8, 5, 3) with a shortcut
    gta / cta: temporal gate on the preceding conv stage's feature map
    embed: per-step dense projection to `channels`
    pe: positional encoding added to the sequence
    encoder: attention encoder ("tps" or "sa")
    head: global average pooling over time and a dense classifier
    """

    model_config = ConfigDict(extra="forbid")

    kind: Literal["conv", "residual", "gta", "cta", "embed", "pe", "encoder", "head"]
    channels: Optional[int] = Field(None, ge=1)
    kernel: Optional[int] = Field(None, ge=1)
    attention: Literal["tps", "sa"] = "tps"


class ModelSpec(BaseModel):
    """
    A complete, serializable description of a classifier.
    """

    model_config = ConfigDict(extra="forbid")

    variant: Optional[str] = None
    d_dataset: int = Field(ge=1)
    length: int = Field(ge=1)
    num_classes: int = Field(ge=1)
    layers: List[LayerSpec]
    attention: AttentionConfig = Field(default_factory=AttentionConfig)
    seed: int = Field(0, ge=0)


def validate_plan(spec: ModelSpec):
    """
    Checks that a plan can be built.

    Raises:
    CompositionError if the plan does not end in exactly one head, a gate
        does not follow a conv stage, a conv stage follows a sequence stage,
        a single-use stage repeats, or the encoder input width differs from
        the attention width
    """
    if not spec.layers or spec.layers[-1].kind != "head":
        raise CompositionError("a layer plan must end with a classification head")
    kinds = [layer.kind for layer in spec.layers]
    for kind in _SINGLE_KINDS:
        if kinds.count(kind) > 1:
            raise CompositionError(f"a layer plan may contain at most one {kind!r} stage")
    width = spec.d_dataset
    layout = "channels"
    previous = None
    for layer in spec.layers:
        kind = layer.kind
        if kind in ("conv", "residual"):
            if layout != "channels":
                raise CompositionError(f"{kind} stage cannot follow a sequence stage")
            if layer.channels is None or (kind == "conv" and layer.kernel is None):
                raise CompositionError(f"{kind} stage needs channels and a kernel size")
            width = layer.channels
        elif kind in ("gta", "cta"):
            if previous not in ("conv", "residual"):
                raise CompositionError(f"{kind} gates may only follow conv or residual stages, not {previous}")
        elif kind == "embed":
            if layer.channels is None:
                raise CompositionError("embed stage needs an output width")
            width = layer.channels
            layout = "sequence"
        elif kind == "encoder":
            if width != spec.attention.d:
                raise CompositionError(
                    f"encoder width {spec.attention.d} does not match the incoming feature width {width}"
                )
            layout = "sequence"
        elif kind == "pe":
            layout = "sequence"
        previous = kind


class ConvBlock(Module):
    def __init__(self, in_channels: int, out_channels: int, kernel: int, rng: np.random.Generator):
        self.conv = Conv1d(in_channels, out_channels, kernel, rng)
        self.bn = BatchNorm1d(out_channels)

    def forward(self, x):
        return relu(self.bn(self.conv(x)))


class ResidualBlock(Module):
    """
    Three conv/BN stages with a shortcut: a 1x1 conv and BN when the channel
    count changes, BN alone otherwise.
    """

    def __init__(self, in_channels: int, out_channels: int, rng: np.random.Generator):
        widths = (in_channels, out_channels, out_channels)
        self.convs = [Conv1d(w, out_channels, k, rng) for w, k in zip(widths, RESNET_KERNELS)]
        self.norms = [BatchNorm1d(out_channels) for _ in RESNET_KERNELS]
        self.shortcut = Conv1d(in_channels, out_channels, 1, rng) if in_channels != out_channels else None
        self.shortcut_norm = BatchNorm1d(out_channels)

    def forward(self, x):
        h = x
        for i, (conv, norm) in enumerate(zip(self.convs, self.norms)):
            h = norm(conv(h))
            if i < len(self.convs) - 1:
                h = relu(h)
        shortcut = self.shortcut(x) if self.shortcut is not None else x
        return relu(h + self.shortcut_norm(shortcut))


class Model(Module):
    """
    A classifier assembled from a ModelSpec. Inputs are (B, d_dataset, N)
    or a single (d_dataset, N) series; outputs are logits (B, num_classes)
    or (num_classes,).
    """

    def __init__(self, spec: ModelSpec):
        validate_plan(spec)
        self.spec = spec
        rng = np.random.default_rng(derive_seed(spec.seed, "init"))
        self._stages: List[Tuple[str, LayerSpec]] = []
        counts: Dict[str, int] = {}
        width = spec.d_dataset
        for layer in spec.layers:
            kind = layer.kind
            if kind in _SINGLE_KINDS:
                name = kind
            else:
                counts[kind] = counts.get(kind, 0) + 1
                name = f"{kind}{counts[kind]}"
            block, width = self._make_block(layer, width, rng)
            setattr(self, name, block)
            self._stages.append((name, layer))
        logger.debug("Built %s with stages %s", spec.variant or "model", ", ".join(self.stage_names))

    def _make_block(self, layer: LayerSpec, width: int, rng):
        spec = self.spec
        if layer.kind == "conv":
            return ConvBlock(width, layer.channels, layer.kernel, rng), layer.channels
        if layer.kind == "residual":
            return ResidualBlock(width, layer.channels, rng), layer.channels
        if layer.kind == "gta":
            return GtaBlock(width, spec.length, rng, r=spec.attention.r), width
        if layer.kind == "cta":
            return CtaBlock(width, rng, r=spec.attention.r), width
        if layer.kind == "embed":
            return Dense(width, layer.channels, rng), layer.channels
        if layer.kind == "pe":
            return PositionalEncoding(spec.length, width, rng, kind=spec.attention.pe_kind), width
        if layer.kind == "encoder":
            return Encoder(width, rng, spec.attention, attention=layer.attention), width
        return Dense(width, spec.num_classes, rng), spec.num_classes

    @property
    def stage_names(self) -> List[str]:
        return [name for name, _ in self._stages]

    def forward(self, x):
        return self.forward_with_maps(x)[0]

    def forward_with_maps(self, x):
        """
        Runs the model and also returns the attention maps of every gate and
        encoder stage, keyed by stage name.
        """
        x = as_tensor(x)
        unbatched = x.ndim == 2
        if unbatched:
            x = x.reshape((1,) + x.shape)
        if x.ndim != 3 or x.shape[1] != self.spec.d_dataset:
            raise ShapeError(
                f"model expects (B, {self.spec.d_dataset}, N) inputs, got shape {x.shape}"
            )
        layout = "channels"
        maps = {}
        for name, layer in self._stages:
            block = getattr(self, name)
            wanted = "channels" if layer.kind in _CHANNEL_KINDS else "sequence" if layer.kind in _SEQUENCE_KINDS else layout
            if wanted != layout:
                x = x.transpose(0, 2, 1)
                layout = wanted
            if layer.kind == "gta":
                x, maps[name] = gta_forward(block, x)
            elif layer.kind == "cta":
                x, maps[name] = cta_forward(block, x)
            elif layer.kind == "encoder":
                x, maps[name] = block.forward_with_maps(x)
            elif layer.kind == "head":
                x = block(global_avg_pool(x, axis=-1 if layout == "channels" else -2))
            else:
                x = block(x)
        if unbatched:
            x = x.reshape(x.shape[1:])
        return x, maps


# Plans and builders


def fcn_plan(gta: bool = False) -> List[LayerSpec]:
    layers = []
    for channels, kernel in FCN_PLAN:
        layers.append(LayerSpec(kind="conv", channels=channels, kernel=kernel))
        if gta:
            layers.append(LayerSpec(kind="gta"))
    layers.append(LayerSpec(kind="head"))
    return layers


def resnet_plan(gta: bool = False) -> List[LayerSpec]:
    layers = []
    for channels in RESNET_CHANNELS:
        layers.append(LayerSpec(kind="residual", channels=channels))
        if gta:
            layers.append(LayerSpec(kind="gta"))
    layers.append(LayerSpec(kind="head"))
    return layers


def _plan_width(d_dataset: int, layers: List[LayerSpec]) -> int:
    width = d_dataset
    for layer in layers:
        if layer.kind in ("conv", "residual", "embed"):
            width = layer.channels
    return width


def _attach_plan(d_dataset, layers, cfg: AttentionConfig, pe: bool, attention: str) -> List[LayerSpec]:
    if not layers or layers[-1].kind != "head":
        raise CompositionError("the base plan has no classification head to replace")
    body = list(layers[:-1])
    if not any(layer.kind in ("conv", "residual", "embed") for layer in body):
        raise CompositionError("the base model exposes no temporal feature map to attach an encoder to")
    if any(layer.kind == "encoder" for layer in body):
        raise CompositionError("the base model already ends in an attention encoder")
    if _plan_width(d_dataset, body) != cfg.d:
        body.append(LayerSpec(kind="embed", channels=cfg.d))
    if pe:
        body.append(LayerSpec(kind="pe"))
    body.append(LayerSpec(kind="encoder", attention=attention))
    body.append(LayerSpec(kind="head"))
    return body


def build_fcn(d_dataset: int, N: int, num_classes: int, gta: bool = False, seed: int = 0) -> Model:
    """
    Three conv(128, 8) / conv(256, 5) / conv(128, 3) stages with BN and
    ReLU, optionally each followed by a GTA gate, then GAP and a dense head.
    """
    spec = ModelSpec(
        variant="fcn+gta" if gta else "fcn",
        d_dataset=d_dataset,
        length=N,
        num_classes=num_classes,
        layers=fcn_plan(gta),
        seed=seed,
    )
    return Model(spec)


def build_resnet(d_dataset: int, N: int, num_classes: int, gta: bool = False, seed: int = 0) -> Model:
    """
    Three residual blocks of 64, 128 and 128 channels, optionally each
    followed by a GTA gate, then GAP and a dense head.
    """
    spec = ModelSpec(
        variant="resnet+gta" if gta else "resnet",
        d_dataset=d_dataset,
        length=N,
        num_classes=num_classes,
        layers=resnet_plan(gta),
        seed=seed,
    )
    return Model(spec)


def build_tps_standalone(
    d_dataset: int,
    N: int,
    num_classes: int,
    pe: bool = True,
    cfg: Optional[AttentionConfig] = None,
    attention: str = "tps",
    seed: int = 0,
) -> Model:
    """
    Dense per-step projection to cfg.d, optional positional encoding, an
    attention encoder, GAP over time and a dense head. attention="sa" gives
    the plain self-attention baseline.
    """
    cfg = cfg or AttentionConfig()
    layers = [LayerSpec(kind="embed", channels=cfg.d)]
    if pe:
        layers.append(LayerSpec(kind="pe"))
    layers += [LayerSpec(kind="encoder", attention=attention), LayerSpec(kind="head")]
    name = "tps" if attention == "tps" else "sa"
    spec = ModelSpec(
        variant=f"{name}+pe" if pe else f"{name}-standalone",
        d_dataset=d_dataset,
        length=N,
        num_classes=num_classes,
        layers=layers,
        attention=cfg,
        seed=seed,
    )
    return Model(spec)


def attach_tps(
    base: Model,
    cfg: Optional[AttentionConfig] = None,
    pe: bool = False,
    attention: str = "tps",
) -> Model:
    """
    Replaces a base model's pooling and head with [projection] -> [PE] ->
    encoder -> GAP -> head. The base's stage weights are copied into the new
    model; a projection to cfg.d is inserted when the base feature width
    differs.

    Raises:
    CompositionError if the base has no temporal feature map or already
        ends in an encoder
    """
    cfg = cfg or base.spec.attention
    spec = base.spec
    layers = _attach_plan(spec.d_dataset, spec.layers, cfg, pe, attention)
    suffix = "+tps" if attention == "tps" else "+sa"
    variant = (spec.variant or "model") + suffix + ("+pe" if pe else "")
    model = Model(spec.model_copy(update={"layers": layers, "attention": cfg, "variant": variant}))
    copy_state(base, model)
    return model


def copy_state(source: Module, target: Module):
    """
    Copies parameters and buffers that share a name and shape from source
    into target.
    """
    target_params = dict(target.named_parameters())
    for name, param in source.named_parameters():
        if name in target_params and target_params[name].shape == param.shape:
            target_params[name].data = param.data.copy()
    target_buffers = dict(target.named_buffers())
    for name, array in source.named_buffers():
        if name in target_buffers and target_buffers[name].shape == array.shape:
            target_buffers[name][...] = array


def variant_spec(
    variant: str,
    d_dataset: int,
    N: int,
    num_classes: int,
    cfg: Optional[AttentionConfig] = None,
    seed: int = 0,
) -> ModelSpec:
    """
    Returns the layer plan of a named variant.

    Raises:
    UsageError for an unknown variant name
    """
    if variant not in VARIANTS:
        raise UsageError(f"unknown variant {variant!r}; valid variants: {', '.join(VARIANTS)}")
    cfg = cfg or AttentionConfig()
    base, _, extras = variant.partition("+")
    if base in ("fcn", "resnet"):
        plan = fcn_plan if base == "fcn" else resnet_plan
        layers = plan(gta=extras == "gta")
        if extras.startswith("tps"):
            layers = _attach_plan(d_dataset, plan(), cfg, pe=extras.endswith("pe"), attention="tps")
    else:
        attention = "sa" if variant.startswith("sa") else "tps"
        layers = [LayerSpec(kind="embed", channels=cfg.d)]
        if variant.endswith("+pe"):
            layers.append(LayerSpec(kind="pe"))
        layers += [LayerSpec(kind="encoder", attention=attention), LayerSpec(kind="head")]
    return ModelSpec(
        variant=variant,
        d_dataset=d_dataset,
        length=N,
        num_classes=num_classes,
        layers=layers,
        attention=cfg,
        seed=seed,
    )


def build_model(
    variant: str,
    d_dataset: int,
    N: int,
    num_classes: int,
    cfg: Optional[AttentionConfig] = None,
    seed: int = 0,
) -> Model:
    return Model(variant_spec(variant, d_dataset, N, num_classes, cfg, seed))


def count_parameters(model: Module):
    """
    Counts learnable parameters.

    Returns:
    Tuple of the total count and a DataFrame with one row per parameter
    (name, shape, count) in enumeration order
    """
    rows = [
        {"name": name, "shape": "x".join(str(s) for s in p.shape), "count": int(p.data.size)}
        for name, p in model.named_parameters()
    ]
    breakdown = pd.DataFrame(rows, columns=["name", "shape", "count"])
    return int(breakdown["count"].sum()), breakdown
