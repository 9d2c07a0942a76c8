"""
Temporal attention blocks.

Layouts: the temporal gates (CTA, GTA) take channels-first feature maps
(d, N) or (B, d, N). The self-attention family (SA, TPS) and the positional
encoding take sequences (N, d) or (B, N, d).
"""
import math
from typing import NamedTuple, Optional

import numpy as np

from .config import AttentionConfig
from .errors import CapacityError, ShapeError
from .layers import Dense, LayerNorm, Module, Parameter, glorot_uniform
from .tensor import Tensor, as_tensor, relu, sigmoid, softmax


class AttentionOutput(NamedTuple):
    """
    Result of a self-attention pass. Maps are averaged over heads; `a2`,
    `sigma_hat` and `sigma` are None for plain self-attention. With stacked
    layers the maps are those of the last layer.
    """

    output: Tensor
    attention: Tensor
    a1: Tensor
    a2: Optional[Tensor] = None
    sigma_hat: Optional[Tensor] = None
    sigma: Optional[Tensor] = None


# Classic and global temporal attention


class CtaBlock(Module):
    """
    Classic temporal attention: a per-step gate computed from that step's
    features only, normalized with a softmax over time.
    """

    def __init__(self, d: int, rng: np.random.Generator, r: int = 16):
        hidden = max(1, d // r)
        self.d = d
        self.r = r
        self.w1 = Parameter(glorot_uniform(rng, (hidden, d), d, hidden))
        self.w2 = Parameter(glorot_uniform(rng, (1, hidden), hidden, 1))

    def forward(self, features):
        return cta_forward(self, features)[0]


class GtaBlock(Module):
    """
    Global temporal attention: a per-step gate computed from the whole
    sequence by bottleneck layers that mix the time axis, so the gate depends
    on temporal location. The block is tied to the length T it was built for.
    """

    def __init__(self, d: int, T: int, rng: np.random.Generator, r: int = 16):
        hidden = max(1, T // r)
        self.d = d
        self.T = T
        self.r = r
        self.w1 = Parameter(glorot_uniform(rng, (1, d), d, 1))
        self.w2 = Parameter(glorot_uniform(rng, (hidden, T), T, hidden))
        self.w3 = Parameter(glorot_uniform(rng, (T, hidden), hidden, T))

    def forward(self, features):
        return gta_forward(self, features)[0]


def _check_channels(name, features, d):
    if features.ndim not in (2, 3) or features.shape[-2] != d:
        raise ShapeError(f"{name}: expected a ({d}, N) feature map, got shape {features.shape}")


def cta_forward(block: CtaBlock, features):
    """
    Applies classic temporal attention.

    Parameters:
    block: (CtaBlock)
    features: (Tensor) F of shape (d, N) or (B, d, N)

    Returns:
    Tuple of the gated features O = F diag(A) and the attention row A of
    shape (1, N) (or (B, 1, N)), which sums to 1 over time
    """
    features = as_tensor(features)
    _check_channels("cta", features, block.d)
    scores = block.w2 @ relu(block.w1 @ features)
    attention = softmax(scores, axis=-1)
    return features * attention, attention


def gta_forward(block: GtaBlock, features):
    """
    Applies global temporal attention.

    Parameters:
    block: (GtaBlock)
    features: (Tensor) F of shape (d, T) or (B, d, T)

    Returns:
    Tuple of the gated features O = F diag(A) and the gate A of shape (1, T)
    (or (B, 1, T)) with entries in (0, 1)

    Raises:
    ShapeError if the series length differs from the block's T
    """
    features = as_tensor(features)
    _check_channels("gta", features, block.d)
    if features.shape[-1] != block.T:
        raise ShapeError(
            f"gta: block was built for length {block.T} but got {features.shape[-1]}; "
            f"rebuild the block for this length or pad the series to {block.T}"
        )
    a1 = relu(block.w1 @ features)
    hidden = relu(a1 @ block.w2.transpose())
    attention = sigmoid(hidden @ block.w3.transpose())
    return features * attention, attention


# Self-attention and pseudo-Gaussian augmented self-attention


class AttentionLayer(Module):
    """
    One stacked attention layer: the query projection, the key projection
    shared by all heads, and for TPS the spread weights W and W'.
    """

    def __init__(
        self,
        d: int,
        heads: int,
        rng: np.random.Generator,
        pseudo_gaussian: bool = False,
        learnable_scale: bool = False,
    ):
        head_width = d // heads
        self.query = Parameter(glorot_uniform(rng, (d, d), d, d))
        self.key = Parameter(glorot_uniform(rng, (head_width, d), d, head_width))
        if pseudo_gaussian:
            self.w_prime = Parameter(glorot_uniform(rng, (1, d), d, 1))
            self.w = Parameter(glorot_uniform(rng, (1, d), d, 1))
        if learnable_scale:
            # S(A) = exp(log_scale) * A, one positive scale per head
            self.log_scale = Parameter(np.zeros(heads))


class SaBlock(Module):
    """
    Scaled dot-product self-attention over time steps. The value projection
    (with bias) is applied once; each stacked layer re-attends the running
    values.
    """

    pseudo_gaussian = False

    def __init__(self, d: int, rng: np.random.Generator, heads: int = 1, layers: int = 1):
        if d % heads:
            raise ShapeError(f"attention width {d} is not divisible by {heads} heads")
        self.d = d
        self.heads = heads
        self.value = Dense(d, d, rng)
        self.layers = [self._make_layer(rng) for _ in range(layers)]

    def _make_layer(self, rng):
        return AttentionLayer(self.d, self.heads, rng)

    def forward(self, sequence):
        return self.attend(sequence).output

    def attend(self, sequence) -> AttentionOutput:
        sequence = as_tensor(sequence)
        if sequence.ndim not in (2, 3) or sequence.shape[-1] != self.d:
            raise ShapeError(f"attention: expected an (N, {self.d}) sequence, got shape {sequence.shape}")
        running = sequence
        values = self.value(sequence)
        maps = None
        for layer in self.layers:
            attention, maps = self._attention_matrix(layer, running, values)
            values = _merge_heads(attention @ _split_heads(values, self.heads))
            running = values
        return maps._replace(output=values)

    def _content_attention(self, layer, running):
        head_width = self.d // self.heads
        queries = _split_heads(running @ layer.query.transpose(), self.heads)
        keys = running @ layer.key.transpose()
        keys = keys.reshape(keys.shape[:-2] + (1,) + keys.shape[-2:])
        logits = (queries @ keys.transpose()) * (1.0 / math.sqrt(head_width))
        return softmax(logits, axis=-1)

    def _attention_matrix(self, layer, running, values):
        a1 = self._content_attention(layer, running)
        head_mean = a1.mean(axis=-3)
        return a1, AttentionOutput(output=None, attention=head_mean, a1=head_mean)


class TpsBlock(SaBlock):
    """
    Self-attention averaged with a pseudo-Gaussian neighbourhood matrix A2
    whose backward and forward spreads are predicted from each step's value
    vector, then row-normalized.
    """

    pseudo_gaussian = True

    def __init__(
        self,
        d: int,
        rng: np.random.Generator,
        heads: int = 1,
        layers: int = 1,
        b: float = 1.0,
        scaling: str = "identity",
        distance: str = "linear",
    ):
        if b <= 0:
            raise ValueError(f"pseudo-Gaussian bias b must be positive, got {b}")
        self.b = b
        self.scaling = scaling
        self.distance = distance
        super().__init__(d, rng, heads=heads, layers=layers)

    def _make_layer(self, rng):
        return AttentionLayer(
            self.d,
            self.heads,
            rng,
            pseudo_gaussian=True,
            learnable_scale=self.scaling == "learnable",
        )

    def _attention_matrix(self, layer, running, values):
        a1 = self._content_attention(layer, running)
        if self.scaling == "learnable":
            a1 = a1 * layer.log_scale.exp().reshape(-1, 1, 1)
        sigma_hat, sigma = _sigma(layer, values, self.b)
        a2 = tps_pseudo_gaussian(sigma_hat, sigma, self.distance)
        a2_heads = a2.reshape(a2.shape[:-2] + (1,) + a2.shape[-2:])
        attention = tps_combine(a1, a2_heads)
        maps = AttentionOutput(
            output=None,
            attention=attention.mean(axis=-3),
            a1=a1.mean(axis=-3),
            a2=a2,
            sigma_hat=sigma_hat,
            sigma=sigma,
        )
        return attention, maps


def _split_heads(x, heads):
    # (..., N, d) -> (..., h, N, d/h)
    n, d = x.shape[-2], x.shape[-1]
    x = x.reshape(x.shape[:-2] + (n, heads, d // heads))
    axes = list(range(x.ndim))
    axes[-3], axes[-2] = axes[-2], axes[-3]
    return x.transpose(tuple(axes))


def _merge_heads(x):
    # (..., h, N, d/h) -> (..., N, d)
    axes = list(range(x.ndim))
    axes[-3], axes[-2] = axes[-2], axes[-3]
    x = x.transpose(tuple(axes))
    return x.reshape(x.shape[:-2] + (x.shape[-2] * x.shape[-1],))


def _sigma(layer, values, b):
    sigma_hat = (values @ layer.w_prime.transpose()).abs() + b
    sigma = (values @ layer.w.transpose()).abs() + b
    return sigma_hat.reshape(sigma_hat.shape[:-1]), sigma.reshape(sigma.shape[:-1])


def sa_attention(block: SaBlock, sequence):
    """
    Plain self-attention.

    Parameters:
    block: (SaBlock)
    sequence: (Tensor) F of shape (N, d) or (B, N, d)

    Returns:
    Tuple (O, A) with A row-stochastic of shape (N, N) and O = A V
    """
    result = block.attend(sequence)
    return result.output, result.attention


def tps_sigma(block: TpsBlock, values, layer: int = 0):
    """
    Pseudo-Gaussian spreads of each time step.

    Parameters:
    block: (TpsBlock) supplies W, W' and b
    values: (Tensor) V of shape (N, d) or (B, N, d)
    layer: (int) which stacked layer's weights to use

    Returns:
    Tuple (sigma_hat, sigma), each of shape (N,) (or (B, N)) and >= b:
    sigma_hat = |W' v_i| + b governs earlier steps, sigma = |W v_i| + b the
    current and later steps
    """
    return _sigma(block.layers[layer], as_tensor(values), block.b)


def tps_pseudo_gaussian(sigma_hat, sigma, distance: str = "linear"):
    """
    Builds the pseudo-Gaussian matrix A2 from per-step spreads.

    Row i is P_i with p_ij = exp(-dist(i, j) / (4 sigma_hat_i^2)) for j < i
    and exp(-dist(i, j) / (4 sigma_i^2)) for j >= i, where dist is |i - j|
    ("linear") or (i - j)^2 ("squared"). The diagonal is exactly 1.

    Parameters:
    sigma_hat: (Tensor) shape (N,) or (B, N), all entries > 0
    sigma: (Tensor) same shape as sigma_hat
    distance: (str) "linear" or "squared"

    Returns:
    Tensor A2 of shape (N, N) or (B, N, N)
    """
    sigma_hat, sigma = as_tensor(sigma_hat), as_tensor(sigma)
    n = sigma.shape[-1]
    offsets = np.arange(n)[:, None] - np.arange(n)[None, :]
    if distance == "linear":
        dist = np.abs(offsets).astype(float)
    elif distance == "squared":
        dist = (offsets**2).astype(float)
    else:
        raise ValueError(f"distance must be 'linear' or 'squared', got {distance!r}")
    before = (offsets > 0).astype(float)
    column = sigma.shape + (1,)
    variance = (sigma_hat * sigma_hat).reshape(column) * before + (sigma * sigma).reshape(column) * (
        1.0 - before
    )
    return (-dist / (variance * 4.0)).exp()


def tps_combine(a1, a2):
    """
    Averages content attention A1 with the pseudo-Gaussian matrix A2 and
    divides every row by its sum. The halving is kept although the row
    normalization cancels it.
    """
    combined = (as_tensor(a1) + a2) * 0.5
    return combined / combined.sum(axis=-1, keepdims=True)


def tps_attention(block: TpsBlock, sequence) -> AttentionOutput:
    """
    Pseudo-Gaussian augmented self-attention.

    Parameters:
    block: (TpsBlock)
    sequence: (Tensor) F of shape (N, d) or (B, N, d)

    Returns:
    AttentionOutput with O = A V, the row-stochastic A, the scaled content
    attention A1, the pseudo-Gaussian A2 and the spreads sigma_hat, sigma
    """
    return block.attend(sequence)


# Positional encoding and the encoder


class PositionalEncoding(Module):
    """
    Position embeddings added to a sequence before self-attention. The
    "learnable" kind is a trained (N_max, d) table; "sinusoidal" is the fixed
    sine/cosine table and has no parameters.
    """

    def __init__(self, n_max: int, d: int, rng: np.random.Generator, kind: str = "learnable"):
        self.n_max = n_max
        self.d = d
        self.kind = kind
        if kind == "learnable":
            self.table = Parameter(glorot_uniform(rng, (n_max, d), n_max, d))
        elif kind == "sinusoidal":
            self._fixed = Tensor(sinusoidal_table(n_max, d))
        else:
            raise ValueError(f"positional encoding kind must be 'learnable' or 'sinusoidal', got {kind!r}")

    def forward(self, sequence):
        return pe_apply(self, sequence)


def sinusoidal_table(n_max: int, d: int) -> np.ndarray:
    positions = np.arange(n_max)[:, None]
    rates = np.exp(-math.log(10000.0) * (2 * (np.arange(d) // 2)) / d)[None, :]
    angles = positions * rates
    return np.where(np.arange(d)[None, :] % 2 == 0, np.sin(angles), np.cos(angles))


def pe_apply(pe: PositionalEncoding, sequence):
    """
    Adds the first N position embeddings to an (N, d) or (B, N, d) sequence.

    Raises:
    CapacityError if N exceeds the table length
    """
    sequence = as_tensor(sequence)
    n = sequence.shape[-2]
    if n > pe.n_max:
        raise CapacityError(f"sequence length {n} exceeds the positional table capacity {pe.n_max}")
    table = pe.table if pe.kind == "learnable" else pe._fixed
    return sequence + table[:n]


class Encoder(Module):
    """
    Post-norm encoder: attention sublayer, residual add, layer norm,
    position-wise feed-forward (d -> ff_multiplier*d -> d, ReLU), residual
    add, layer norm.
    """

    def __init__(self, d: int, rng: np.random.Generator, cfg: AttentionConfig, attention: str = "tps"):
        if attention == "tps":
            self.attention = TpsBlock(
                d,
                rng,
                heads=cfg.heads,
                layers=cfg.layers,
                b=cfg.b,
                scaling=cfg.scaling,
                distance=cfg.distance,
            )
        elif attention == "sa":
            self.attention = SaBlock(d, rng, heads=cfg.heads, layers=cfg.layers)
        else:
            raise ValueError(f"encoder attention must be 'tps' or 'sa', got {attention!r}")
        self.norm1 = LayerNorm(d)
        self.ff1 = Dense(d, d * cfg.ff_multiplier, rng)
        self.ff2 = Dense(d * cfg.ff_multiplier, d, rng)
        self.norm2 = LayerNorm(d)

    def forward(self, sequence):
        return self.forward_with_maps(sequence)[0]

    def forward_with_maps(self, sequence):
        maps = self.attention.attend(sequence)
        hidden = self.norm1(sequence + maps.output)
        out = self.norm2(hidden + self.ff2(relu(self.ff1(hidden))))
        return out, maps


def encoder_forward(encoder: Encoder, sequence):
    """
    Runs an (N, d) or (B, N, d) sequence through an encoder and returns a
    tensor of the same shape.
    """
    return encoder(sequence)
