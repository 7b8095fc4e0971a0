"""Deterministic forward passes of the EMG pose network.

Covers the TDS convolutional featurizer (16-channel, 2 kHz EMG to a 256-d
sequence at ~37.5 Hz), squeeze-and-excitation gating, a pre-norm transformer
with rotary positional encoding, the per-frame pose head, temporal attention
pooling, and the residual vision/EMG fusion combiner. No training: weights
are supplied externally or drawn from a seeded fan-in initializer, and every
pass is a pure function of (input, weights).

Architecture constants follow the published layer list: Conv1d 16->256 k11 s5,
Conv1d 256->256 k5 s2, then two TDS stages (in-conv k9 s5 / k3 s1, depthwise
width 5 / 3 over an 8 x 32 channel grid, two 256x256 channel-mix linears) with
global SE after each stage. All convolutions are valid (unpadded); the TDS
residual center-crops (k-1)/2 frames per side. Unstated details are fixed
here as conventions: ReLU after the frontend and in-convs, SE ratio 4,
pre-norm transformer with (tanh-approximate) GELU, bidirectional attention,
RoPE base 10000.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .emg_dsp import EmgWindow, N_CHANNELS
from .errors import ConfigurationError, InvalidInputError
from .hand_model import N_DOF, forward_kinematics, JointAngles22

D_FEATURE = 256
SE_RATIO = 4
ROPE_BASE = 10000.0
TDS_GRID = (8, 32)                      # channel grid: 8 x 32 = 256
# (kernel, stride) of the four strided convolutions, in order
_CONV_LAYOUT = ((11, 5), (5, 2), (9, 5), (3, 1))
_TDS_WIDTHS = (5, 3)                    # depthwise widths of stage 1 / stage 2
FRAME_STRIDE = 50                       # input samples per output frame


def _conv_out_len(n: int, kernel: int, stride: int) -> int:
    return (n - kernel) // stride + 1


def featurizer_lengths(n_samples: int):
    """Intermediate sequence lengths through the six temporal layers."""
    lengths = []
    n = n_samples
    for (kernel, stride), tds_width in zip(_CONV_LAYOUT, (None, None) + _TDS_WIDTHS):
        n = _conv_out_len(n, kernel, stride)
        lengths.append(n)
        if tds_width is not None:
            n = n - (tds_width - 1)
            lengths.append(n)
    return lengths


def _min_input_samples() -> int:
    lo, hi = 1, 10000
    while lo < hi:
        mid = (lo + hi) // 2
        if featurizer_lengths(mid)[-1] >= 1:
            hi = mid
        else:
            lo = mid + 1
    return lo


MIN_INPUT_SAMPLES = _min_input_samples()   # 511 by the valid-conv arithmetic


def relu(x):
    return np.maximum(x, 0.0)


def gelu(x):
    """Tanh-approximate GELU."""
    return 0.5 * x * (1.0 + np.tanh(np.sqrt(2.0 / np.pi) * (x + 0.044715 * x ** 3)))


def _sigmoid(x):
    return np.where(x >= 0, 1.0 / (1.0 + np.exp(-np.abs(x))),
                    np.exp(-np.abs(x)) / (1.0 + np.exp(-np.abs(x))))


def conv1d_valid(x: np.ndarray, weight: np.ndarray, bias: np.ndarray,
                 stride: int) -> np.ndarray:
    """Valid (unpadded) 1-D convolution: (C_in, T) -> (C_out, T')."""
    kernel = weight.shape[2]
    windows = np.lib.stride_tricks.sliding_window_view(x, kernel, axis=1)
    windows = windows[:, ::stride]                       # (C_in, T', k)
    return np.einsum("oik,itk->ot", weight, windows) + bias[:, None]


def _check_shape(name, arr, shape):
    if arr.shape != shape:
        raise InvalidInputError(f"{name} must have shape {shape}, got {arr.shape}")


@dataclass(frozen=True)
class SeWeights:
    """Squeeze-and-excitation: d -> d/ratio -> d with a logistic gate."""

    w1: np.ndarray
    b1: np.ndarray
    w2: np.ndarray
    b2: np.ndarray

    def __post_init__(self):
        hidden = self.w1.shape[0]
        d = self.w1.shape[1]
        _check_shape("se.w1", self.w1, (hidden, d))
        _check_shape("se.b1", self.b1, (hidden,))
        _check_shape("se.w2", self.w2, (d, hidden))
        _check_shape("se.b2", self.b2, (d,))


@dataclass(frozen=True)
class TdsBlockWeights:
    """Depthwise temporal conv over the channel grid + two channel-mix linears."""

    depthwise_w: np.ndarray   # (grid channels, width)
    depthwise_b: np.ndarray   # (grid channels,)
    mix1_w: np.ndarray        # (256, 256)
    mix1_b: np.ndarray
    mix2_w: np.ndarray
    mix2_b: np.ndarray

    def __post_init__(self):
        g = TDS_GRID[0]
        if self.depthwise_w.ndim != 2 or self.depthwise_w.shape[0] != g:
            raise InvalidInputError(
                f"depthwise kernel must be ({g}, width), got {self.depthwise_w.shape}")
        _check_shape("tds.depthwise_b", self.depthwise_b, (g,))
        for name in ("mix1", "mix2"):
            _check_shape(f"tds.{name}_w", getattr(self, f"{name}_w"),
                         (D_FEATURE, D_FEATURE))
            _check_shape(f"tds.{name}_b", getattr(self, f"{name}_b"), (D_FEATURE,))

    @property
    def width(self) -> int:
        return self.depthwise_w.shape[1]


@dataclass(frozen=True)
class FeaturizerWeights:
    conv1_w: np.ndarray
    conv1_b: np.ndarray
    conv2_w: np.ndarray
    conv2_b: np.ndarray
    stage1_in_w: np.ndarray
    stage1_in_b: np.ndarray
    stage1_tds: TdsBlockWeights
    stage2_in_w: np.ndarray
    stage2_in_b: np.ndarray
    stage2_tds: TdsBlockWeights
    se1: SeWeights
    se2: SeWeights

    def __post_init__(self):
        d = D_FEATURE
        _check_shape("conv1_w", self.conv1_w, (d, N_CHANNELS, _CONV_LAYOUT[0][0]))
        _check_shape("conv2_w", self.conv2_w, (d, d, _CONV_LAYOUT[1][0]))
        _check_shape("stage1_in_w", self.stage1_in_w, (d, d, _CONV_LAYOUT[2][0]))
        _check_shape("stage2_in_w", self.stage2_in_w, (d, d, _CONV_LAYOUT[3][0]))
        for name in ("conv1_b", "conv2_b", "stage1_in_b", "stage2_in_b"):
            _check_shape(name, getattr(self, name), (d,))
        if self.stage1_tds.width != _TDS_WIDTHS[0] or self.stage2_tds.width != _TDS_WIDTHS[1]:
            raise InvalidInputError("TDS depthwise widths must be 5 and 3")


@dataclass(frozen=True)
class FeatureSequence:
    """A (d_model, T) feature map with its frame rate in Hz."""

    data: np.ndarray
    frame_rate: float

    def __post_init__(self):
        data = np.asarray(self.data, dtype=float)
        if data.ndim != 2:
            raise InvalidInputError("feature data must be 2-D (d_model, T)")
        object.__setattr__(self, "data", data)

    @property
    def n_frames(self) -> int:
        return self.data.shape[1]


def se_gate(features: FeatureSequence, se_weights: SeWeights) -> FeatureSequence:
    """Scale each channel by a logistic gate of its time-mean activation."""
    x = features.data
    squeeze = x.mean(axis=1)
    g = _sigmoid(se_weights.w2 @ relu(se_weights.w1 @ squeeze + se_weights.b1)
                 + se_weights.b2)
    return FeatureSequence(data=x * g[:, None], frame_rate=features.frame_rate)


def _tds_block(x: np.ndarray, w: TdsBlockWeights) -> np.ndarray:
    """Depthwise temporal conv with center-cropped residual, then channel mix."""
    g, width = TDS_GRID
    k = w.width
    grid = x.reshape(g, width, -1)                               # (8, 32, T)
    windows = np.lib.stride_tricks.sliding_window_view(grid, k, axis=2)
    y = np.einsum("gk,gwtk->gwt", w.depthwise_w, windows) + w.depthwise_b[:, None, None]
    crop = (k - 1) // 2
    y = relu(y) + grid[:, :, crop:crop + y.shape[2]]
    f = y.reshape(g * width, -1)
    return w.mix2_w @ relu(w.mix1_w @ f + w.mix1_b[:, None]) + w.mix2_b[:, None] + f


def featurizer_stages(window: EmgWindow, weights: FeaturizerWeights):
    """Run the frontend, returning (pre-SE stage-1, pre-SE stage-2, output).

    The pre-SE activations have strictly local receptive fields (SE gating is
    the only global step), which is what receptive-field checks probe.
    """
    if window.samples.shape[1] != N_CHANNELS:
        raise InvalidInputError(f"expected {N_CHANNELS} EMG channels")
    if window.n_samples < MIN_INPUT_SAMPLES:
        raise InvalidInputError(
            f"window of {window.n_samples} samples is too short; the valid-conv "
            f"stack needs at least {MIN_INPUT_SAMPLES} samples for one frame")
    frame_rate = window.sample_rate / FRAME_STRIDE
    x = window.samples.T                                         # (16, T)
    x = relu(conv1d_valid(x, weights.conv1_w, weights.conv1_b, _CONV_LAYOUT[0][1]))
    x = relu(conv1d_valid(x, weights.conv2_w, weights.conv2_b, _CONV_LAYOUT[1][1]))
    x = relu(conv1d_valid(x, weights.stage1_in_w, weights.stage1_in_b,
                          _CONV_LAYOUT[2][1]))
    stage1 = _tds_block(x, weights.stage1_tds)
    x = se_gate(FeatureSequence(stage1, frame_rate), weights.se1).data
    x = relu(conv1d_valid(x, weights.stage2_in_w, weights.stage2_in_b,
                          _CONV_LAYOUT[3][1]))
    stage2 = _tds_block(x, weights.stage2_tds)
    out = se_gate(FeatureSequence(stage2, frame_rate), weights.se2)
    return stage1, stage2, out


def tds_featurize(window: EmgWindow, weights: FeaturizerWeights) -> FeatureSequence:
    """Full frontend: conv stack, two TDS stages, SE after each stage."""
    return featurizer_stages(window, weights)[2]


# ---------------------------------------------------------------------------
# transformer with rotary positional encoding


_VARIANTS = {"S": (3, 256, 4, 512), "M": (6, 256, 8, 1024), "L": (8, 384, 12, 1536)}


@dataclass(frozen=True)
class TransformerConfig:
    n_layers: int
    d_model: int
    n_heads: int
    d_ffn: int

    def __post_init__(self):
        if min(self.n_layers, self.d_model, self.n_heads, self.d_ffn) < 1:
            raise ConfigurationError("all transformer dimensions must be >= 1")
        if self.d_model % self.n_heads:
            raise ConfigurationError("d_model must be divisible by n_heads")
        if (self.d_model // self.n_heads) % 2:
            raise ConfigurationError("head dimension must be even for RoPE pairing")

    @property
    def head_dim(self) -> int:
        return self.d_model // self.n_heads

    @classmethod
    def variant(cls, name: str) -> "TransformerConfig":
        if name not in _VARIANTS:
            raise ConfigurationError(f"unknown variant {name!r}; choose from S/M/L")
        return cls(*_VARIANTS[name])


@dataclass(frozen=True)
class LayerWeights:
    ln1_g: np.ndarray
    ln1_b: np.ndarray
    wq: np.ndarray
    bq: np.ndarray
    wk: np.ndarray
    bk: np.ndarray
    wv: np.ndarray
    bv: np.ndarray
    wo: np.ndarray
    bo: np.ndarray
    ln2_g: np.ndarray
    ln2_b: np.ndarray
    ffn1_w: np.ndarray
    ffn1_b: np.ndarray
    ffn2_w: np.ndarray
    ffn2_b: np.ndarray


@dataclass(frozen=True)
class TransformerWeights:
    layers: tuple
    final_ln_g: np.ndarray
    final_ln_b: np.ndarray
    input_proj_w: np.ndarray | None = None   # (d_model, d_in) when d_in differs
    input_proj_b: np.ndarray | None = None


def rope_apply(x: np.ndarray, positions: np.ndarray,
               base: float = ROPE_BASE) -> np.ndarray:
    """Rotate consecutive coordinate pairs of (heads, T, head_dim) by pos*theta_i."""
    head_dim = x.shape[-1]
    if head_dim % 2:
        raise ConfigurationError("RoPE needs an even head dimension")
    positions = np.asarray(positions, dtype=float)
    theta = base ** (-2.0 * np.arange(head_dim // 2) / head_dim)
    angle = positions[:, None] * theta[None, :]              # (T, head_dim/2)
    cos, sin = np.cos(angle), np.sin(angle)
    x_even, x_odd = x[..., 0::2], x[..., 1::2]
    out = np.empty_like(x)
    out[..., 0::2] = x_even * cos - x_odd * sin
    out[..., 1::2] = x_even * sin + x_odd * cos
    return out


def _layer_norm(x, gamma, beta, eps=1e-5):
    mu = x.mean(axis=-1, keepdims=True)
    var = x.var(axis=-1, keepdims=True)
    return (x - mu) / np.sqrt(var + eps) * gamma + beta


def _softmax(x, axis=-1):
    e = np.exp(x - x.max(axis=axis, keepdims=True))
    return e / e.sum(axis=axis, keepdims=True)


def multi_head_attention(x: np.ndarray, layer: LayerWeights,
                         config: TransformerConfig, positions: np.ndarray):
    """Bidirectional self-attention with RoPE; returns (output, probs).

    x is (T, d_model); probs is (n_heads, T, T), rows summing to 1.
    """
    n_frames = x.shape[0]
    heads, head_dim = config.n_heads, config.head_dim

    def split(m):
        return m.reshape(n_frames, heads, head_dim).transpose(1, 0, 2)

    q = rope_apply(split(x @ layer.wq.T + layer.bq), positions)
    k = rope_apply(split(x @ layer.wk.T + layer.bk), positions)
    v = split(x @ layer.wv.T + layer.bv)
    scores = q @ k.transpose(0, 2, 1) / np.sqrt(head_dim)
    probs = _softmax(scores, axis=-1)
    mixed = (probs @ v).transpose(1, 0, 2).reshape(n_frames, config.d_model)
    return mixed @ layer.wo.T + layer.bo, probs


def transformer_forward(features: FeatureSequence, config: TransformerConfig,
                        weights: TransformerWeights,
                        return_attention: bool = False):
    """Pre-norm transformer over the feature sequence; (d_in, T) -> (d_model, T)."""
    x = features.data.T                                      # (T, d_in)
    if x.shape[1] != config.d_model:
        if weights.input_proj_w is None:
            raise ConfigurationError(
                f"feature dim {x.shape[1]} != d_model {config.d_model} and no "
                f"input projection supplied")
        x = x @ weights.input_proj_w.T + weights.input_proj_b
    if len(weights.layers) != config.n_layers:
        raise ConfigurationError("layer count does not match the config")
    positions = np.arange(x.shape[0])
    attention = []
    for layer in weights.layers:
        attn, probs = multi_head_attention(
            _layer_norm(x, layer.ln1_g, layer.ln1_b), layer, config, positions)
        if return_attention:
            attention.append(probs)
        x = x + attn
        h = _layer_norm(x, layer.ln2_g, layer.ln2_b)
        x = x + gelu(h @ layer.ffn1_w.T + layer.ffn1_b) @ layer.ffn2_w.T + layer.ffn2_b
    x = _layer_norm(x, weights.final_ln_g, weights.final_ln_b)
    out = FeatureSequence(data=x.T, frame_rate=features.frame_rate)
    return (out, attention) if return_attention else out


# ---------------------------------------------------------------------------
# heads, pooling, fusion


def pose_head(features: FeatureSequence, weight: np.ndarray,
              bias: np.ndarray) -> np.ndarray:
    """Per-frame linear map d_model -> 22 joint angles (deg); returns (T, 22)."""
    _check_shape("pose_head bias", bias, (N_DOF,))
    if weight.shape != (N_DOF, features.data.shape[0]):
        raise InvalidInputError(
            f"pose head weight must be ({N_DOF}, {features.data.shape[0]})")
    return features.data.T @ weight.T + bias


@dataclass(frozen=True)
class AttentionPoolWeights:
    w: np.ndarray   # (d_hidden, d_model)
    u: np.ndarray   # (d_hidden,)


def attention_pool(features: FeatureSequence,
                   weights: AttentionPoolWeights) -> np.ndarray:
    """Softmax-weighted time pooling with scores u . tanh(W h_t)."""
    h = features.data                                        # (d, T)
    scores = weights.u @ np.tanh(weights.w @ h)              # (T,)
    alpha = _softmax(scores)
    return h @ alpha


@dataclass(frozen=True)
class FusionWeights:
    """Vision head plus the correction head on the 512-d concatenation."""

    vision_w: np.ndarray    # (22, 256)
    vision_b: np.ndarray
    fusion1_w: np.ndarray   # (hidden, 512)
    fusion1_b: np.ndarray
    fusion2_w: np.ndarray   # (22, hidden); zero-initialized at the start
    fusion2_b: np.ndarray


def fusion_predict(vision_feature: np.ndarray, emg_feature: np.ndarray,
                   weights: FusionWeights):
    """Residual fusion: y = y_v + delta, delta from the concatenated features."""
    y_v = weights.vision_w @ vision_feature + weights.vision_b
    joint = np.concatenate([vision_feature, emg_feature])
    delta = weights.fusion2_w @ relu(weights.fusion1_w @ joint + weights.fusion1_b) \
        + weights.fusion2_b
    return y_v + delta, y_v, delta


def loss_l1_fingertip(pred: np.ndarray, gt: np.ndarray, skeleton,
                      fingertip_weight: float = 0.01) -> float:
    """Mean |pred - gt| plus weighted mean fingertip distance via FK."""
    pred, gt = np.asarray(pred, float), np.asarray(gt, float)
    if pred.shape != gt.shape or pred.ndim != 2 or pred.shape[1] != N_DOF:
        raise InvalidInputError("pred and gt must both be (T, 22)")
    l1 = np.abs(pred - gt).mean()
    if fingertip_weight == 0.0:
        return float(l1)
    tips = list(skeleton.fingertip_indices)
    dist = 0.0
    for row_p, row_g in zip(pred, gt):
        tp = forward_kinematics(skeleton, JointAngles22(row_p)).points[tips]
        tg = forward_kinematics(skeleton, JointAngles22(row_g)).points[tips]
        dist += np.linalg.norm(tp - tg, axis=1).mean()
    return float(l1 + fingertip_weight * dist / len(pred))


# ---------------------------------------------------------------------------
# seeded initialization (tests only; training is out of scope)


def _fan_in_uniform(rng, shape, fan_in):
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, shape)


def init_se_weights(rng, d: int = D_FEATURE, ratio: int = SE_RATIO) -> SeWeights:
    hidden = d // ratio
    return SeWeights(w1=_fan_in_uniform(rng, (hidden, d), d),
                     b1=np.zeros(hidden),
                     w2=_fan_in_uniform(rng, (d, hidden), hidden),
                     b2=np.zeros(d))


def _init_tds(rng, width: int) -> TdsBlockWeights:
    g = TDS_GRID[0]
    return TdsBlockWeights(
        depthwise_w=_fan_in_uniform(rng, (g, width), width),
        depthwise_b=np.zeros(g),
        mix1_w=_fan_in_uniform(rng, (D_FEATURE, D_FEATURE), D_FEATURE),
        mix1_b=np.zeros(D_FEATURE),
        mix2_w=_fan_in_uniform(rng, (D_FEATURE, D_FEATURE), D_FEATURE),
        mix2_b=np.zeros(D_FEATURE))


def init_featurizer_weights(seed: int) -> FeaturizerWeights:
    rng = np.random.default_rng(seed)
    d = D_FEATURE
    return FeaturizerWeights(
        conv1_w=_fan_in_uniform(rng, (d, N_CHANNELS, 11), N_CHANNELS * 11),
        conv1_b=np.zeros(d),
        conv2_w=_fan_in_uniform(rng, (d, d, 5), d * 5),
        conv2_b=np.zeros(d),
        stage1_in_w=_fan_in_uniform(rng, (d, d, 9), d * 9),
        stage1_in_b=np.zeros(d),
        stage1_tds=_init_tds(rng, 5),
        stage2_in_w=_fan_in_uniform(rng, (d, d, 3), d * 3),
        stage2_in_b=np.zeros(d),
        stage2_tds=_init_tds(rng, 3),
        se1=init_se_weights(rng),
        se2=init_se_weights(rng))


def init_transformer_weights(config: TransformerConfig, seed: int,
                             d_in: int | None = None) -> TransformerWeights:
    rng = np.random.default_rng(seed)
    d, f = config.d_model, config.d_ffn
    layers = []
    for _ in range(config.n_layers):
        layers.append(LayerWeights(
            ln1_g=np.ones(d), ln1_b=np.zeros(d),
            wq=_fan_in_uniform(rng, (d, d), d), bq=np.zeros(d),
            wk=_fan_in_uniform(rng, (d, d), d), bk=np.zeros(d),
            wv=_fan_in_uniform(rng, (d, d), d), bv=np.zeros(d),
            wo=_fan_in_uniform(rng, (d, d), d), bo=np.zeros(d),
            ln2_g=np.ones(d), ln2_b=np.zeros(d),
            ffn1_w=_fan_in_uniform(rng, (f, d), d), ffn1_b=np.zeros(f),
            ffn2_w=_fan_in_uniform(rng, (d, f), f), ffn2_b=np.zeros(d)))
    proj_w = proj_b = None
    if d_in is not None and d_in != d:
        proj_w = _fan_in_uniform(rng, (d, d_in), d_in)
        proj_b = np.zeros(d)
    return TransformerWeights(layers=tuple(layers),
                              final_ln_g=np.ones(d), final_ln_b=np.zeros(d),
                              input_proj_w=proj_w, input_proj_b=proj_b)
