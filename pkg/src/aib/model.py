"""Full forward pipeline: backbone, variational attention, quantizer, encoder, decoder.

The backbone is a small configurable stack of conv3x3 -> relu -> pool
blocks standing in for full-scale feature extractors; everything
downstream (attention head, anchor quantization, variational encoder,
decoder) is the mechanism under study and is independent of backbone size.

Shapes: input [N, C_in, H, W]; the attention map lives on the feature
grid [N, 1, H_a, W_a] where (H_a, W_a) is the backbone output resolution.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .exceptions import ConfigError, ContractError, DimensionError
from . import tensor as T
from .quantizer import AnchorSet, AttentionMaps, init_anchors, quantize, straight_through
from .tensor import Parameter, Tensor
from .variational import DiagonalGaussian, NoiseSource, reparam_sample


@dataclass
class ModelConfig:
    num_classes: int = 10
    in_channels: int = 3
    height: int = 32
    width: int = 32
    beta: float = 0.01
    lambda_q: float = 0.4
    lambda_c: float = 0.1
    latent_dim: int = 256  # K
    num_anchors: int = 20  # Q
    n_att_samples: int = 4
    n_z_samples: int = 12
    backbone_widths: tuple = (32, 64)
    encoder_widths: tuple = (64,)
    use_quantizer: bool = True
    sigma_floor: float = 1e-6
    precision: str = "double"

    def validate(self) -> None:
        # beta = 0 is permitted: it switches the KL term off for ablation
        # and cross-entropy-equivalence runs
        if self.beta < 0 or self.lambda_q < 0 or self.lambda_c < 0:
            raise ConfigError("loss coefficients must be non-negative")
        if self.latent_dim < 1:
            raise ConfigError("latent_dim must be >= 1")
        if self.num_anchors < 1:
            raise ConfigError("num_anchors must be >= 1")
        if self.n_att_samples < 1 or self.n_z_samples < 1:
            raise ConfigError("sample counts must be >= 1")
        if self.num_classes < 2:
            raise ConfigError("num_classes must be >= 2")
        if self.in_channels < 1 or self.height < 1 or self.width < 1:
            raise ConfigError("input shape extents must be positive")
        if not self.backbone_widths or any(w < 1 for w in self.backbone_widths):
            raise ConfigError("backbone_widths must be a non-empty tuple of positives")
        if any(w < 1 for w in self.encoder_widths):
            raise ConfigError("encoder_widths must be positive")
        if self.precision not in ("double", "single"):
            raise ConfigError("precision must be 'double' or 'single'")
        h, w = self.height, self.width
        for _ in self.backbone_widths:
            h, w = h // 2, w // 2
        if h < 1 or w < 1:
            raise ConfigError(
                "input too small: backbone pooling collapses the feature grid"
            )

    @property
    def dtype(self):
        return np.float64 if self.precision == "double" else np.float32

    def attention_grid(self) -> tuple:
        """Spatial size (H_a, W_a) of the feature map and attention map."""
        h, w = self.height, self.width
        for _ in self.backbone_widths:
            h, w = h // 2, w // 2
        return h, w


@dataclass
class FrozenQuant:
    """Snapshot of one epsilon-branch's quantization at a linearization point.

    Adding ``offset`` to the continuous map reproduces the quantized
    forward values while keeping the map smooth in the parameters, which
    is what finite differences of the straight-through convention need.
    """

    offset: np.ndarray
    assignment: np.ndarray | None
    a_const: np.ndarray
    aq_const: np.ndarray


@dataclass
class EpsBranch:
    """Everything tied to one attention draw: maps, latent, per-draw logits."""

    a: Tensor
    maps: AttentionMaps | None
    frozen: FrozenQuant | None
    z_dist: DiagonalGaussian
    logits: list


@dataclass
class ForwardResult:
    att_dist: DiagonalGaussian
    branches: list

    def logit_arrays(self) -> list:
        return [lg.data for br in self.branches for lg in br.logits]

    def mean_probs(self) -> np.ndarray:
        """Predictive distribution averaged over all draws."""
        arrays = self.logit_arrays()
        acc = np.zeros_like(arrays[0])
        for lg in arrays:
            acc += T.softmax(lg)
        return acc / len(arrays)

    def mean_log_probs(self) -> np.ndarray:
        arrays = self.logit_arrays()
        acc = np.zeros_like(arrays[0])
        for lg in arrays:
            m = lg.max(axis=-1, keepdims=True)
            acc += (lg - m) - np.log(np.exp(lg - m).sum(axis=-1, keepdims=True))
        return acc / len(arrays)

    def predictions(self, average: str = "prob") -> np.ndarray:
        if average == "prob":
            return self.mean_probs().argmax(axis=1)
        if average == "logprob":
            return self.mean_log_probs().argmax(axis=1)
        raise ConfigError(f"unknown averaging mode {average!r}")

    def mean_attention(self) -> np.ndarray:
        """The deterministic mean map mu_a, [N, 1, H_a, W_a]."""
        return self.att_dist.mu.data


def modulate(f: Tensor, a_q: Tensor) -> Tensor:
    """Mask features with the attention map, broadcast across channels."""
    if f.data.ndim != 4 or a_q.data.ndim != 4 or a_q.data.shape[1] != 1:
        raise DimensionError("modulate: expected [N,C,H,W] features and [N,1,H,W] map")
    if f.data.shape[0] != a_q.data.shape[0] or f.data.shape[2:] != a_q.data.shape[2:]:
        raise DimensionError(
            f"modulate: spatial shapes differ ({f.data.shape} vs {a_q.data.shape})"
        )
    return T.mul(f, a_q)


class AibModel:
    """Attention-bottleneck classifier with learnable-anchor quantization."""

    def __init__(self, config: ModelConfig, seed: int = 0):
        config.validate()
        self.config = config
        dtype = config.dtype
        gen = NoiseSource(seed).generator("init")
        self._params: list = []

        def conv_param(name, f, c, k):
            fan_in = c * k * k
            w = self._add(
                Parameter(_uniform(gen, (f, c, k, k), fan_in, dtype), name=f"{name}.w")
            )
            b = self._add(
                Parameter(np.zeros(f, dtype=dtype), name=f"{name}.b")
            )
            return w, b

        def fc_param(name, d, m, decay_bias=True):
            w = self._add(
                Parameter(_uniform(gen, (d, m), d, dtype), name=f"{name}.w")
            )
            b = self._add(
                Parameter(np.zeros(m, dtype=dtype), name=f"{name}.b", decay=decay_bias)
            )
            return w, b

        c = config.in_channels
        self.feat = []
        for i, width in enumerate(config.backbone_widths):
            self.feat.append(conv_param(f"feat{i}", width, c, 3))
            c = width
        self.c_feat = c

        self.att_mu = conv_param("att.mu", 1, c, 3)
        self.att_sigma = conv_param("att.sigma", 1, 1, 1)
        self._params[-1].decay = False  # att.sigma.b produces a scale

        self.enc = []
        for i, width in enumerate(config.encoder_widths):
            self.enc.append(conv_param(f"enc{i}", width, c, 3))
            c = width
        ha, wa = config.attention_grid()
        flat_dim = c * ha * wa
        # single FC to a 2K vector; second half feeds softplus to become
        # sigma, so its bias is exempt from weight decay along with it
        self.enc_fc = fc_param("enc.fc", flat_dim, 2 * config.latent_dim, decay_bias=False)

        k = config.latent_dim
        self.dec_fc1 = fc_param("dec.fc1", k, k)
        self.dec_fc2 = fc_param("dec.fc2", k, config.num_classes)

        self.anchors = init_anchors(config.num_anchors, dtype=dtype)
        self._add(self.anchors.values)

    def _add(self, p: Parameter) -> Parameter:
        self._params.append(p)
        return p

    def parameters(self) -> list:
        return list(self._params)

    def named_parameters(self) -> list:
        return [(p.name, p) for p in self._params]

    def state_arrays(self):
        return {p.name: p.data for p in self._params}

    def load_state(self, arrays) -> None:
        from .exceptions import FormatError

        names = {p.name for p in self._params}
        extra = [k for k in arrays if k not in names]
        if extra:
            raise FormatError(f"checkpoint contains unknown arrays: {sorted(extra)}")
        for p in self._params:
            if p.name not in arrays:
                raise FormatError(f"checkpoint missing array {p.name!r}")
            arr = arrays[p.name]
            if tuple(arr.shape) != tuple(p.data.shape):
                raise DimensionError(
                    f"checkpoint array {p.name!r} has shape {tuple(arr.shape)}, "
                    f"model expects {tuple(p.data.shape)}"
                )
            p.data = arr.astype(self.config.dtype, copy=True)
            p.grad = None

    # forward pieces

    def extract_features(self, x: Tensor) -> Tensor:
        expected = (self.config.in_channels, self.config.height, self.config.width)
        if x.data.ndim != 4 or x.data.shape[1:] != expected:
            raise DimensionError(
                f"input shape {x.data.shape} does not match config [N,{expected[0]},"
                f"{expected[1]},{expected[2]}]"
            )
        h = x
        for w, b in self.feat:
            h = T.max_pool2d(T.relu(T.conv2d(h, w, b, stride=1, padding=1)), 2)
        return h

    def attention_forward(self, f: Tensor) -> DiagonalGaussian:
        w, b = self.att_mu
        mu = T.sigmoid(T.conv2d(f, w, b, stride=1, padding=1))
        ws, bs = self.att_sigma
        sigma = T.add(
            T.softplus(T.conv2d(mu, ws, bs, stride=1, padding=0)),
            self.config.sigma_floor,
        )
        return DiagonalGaussian(mu, sigma)

    def encode(self, f_masked: Tensor) -> DiagonalGaussian:
        h = f_masked
        for w, b in self.enc:
            h = T.relu(T.conv2d(h, w, b, stride=1, padding=1))
        h = T.flatten(h)
        w, b = self.enc_fc
        out = T.linear(h, w, b)
        k = self.config.latent_dim
        mu = out[:, :k]
        sigma = T.softplus(out[:, k:])
        return DiagonalGaussian(mu, sigma)

    def decode(self, z: Tensor) -> Tensor:
        w1, b1 = self.dec_fc1
        w2, b2 = self.dec_fc2
        return T.linear(T.relu(T.linear(z, w1, b1)), w2, b2)

    def forward(
        self,
        x,
        noise: NoiseSource | None = None,
        mode: str = "mean",
        frozen_st: list | None = None,
    ) -> ForwardResult:
        """Run the pipeline.

        ``mean`` substitutes mu for both attention and latent samples and
        is fully deterministic; ``stochastic`` draws n_att_samples
        attention maps and n_z_samples latents per map from ``noise``.
        ``frozen_st`` replays quantization decisions captured by
        ``capture_st_state`` so the whole loss is smooth (gradient checks).
        """
        if mode not in ("mean", "stochastic"):
            raise ConfigError(f"unknown forward mode {mode!r}")
        if mode == "stochastic" and noise is None:
            raise ContractError("stochastic mode requires a noise source")
        cfg = self.config
        xt = x if isinstance(x, Tensor) else Tensor(np.asarray(x), dtype=cfg.dtype)
        f = self.extract_features(xt)
        att = self.attention_forward(f)

        if mode == "mean":
            a_list = [att.mu]
        else:
            a_list = [
                reparam_sample(att, noise.draw("attention", att.shape))
                for _ in range(cfg.n_att_samples)
            ]
        if frozen_st is not None and len(frozen_st) != len(a_list):
            raise ContractError(
                f"frozen state length {len(frozen_st)} != draw count {len(a_list)}"
            )

        branches = []
        for i, a in enumerate(a_list):
            maps = None
            frozen = None
            if frozen_st is not None:
                frozen = frozen_st[i]
                a_q = T.add(a, Tensor(frozen.offset))
            elif cfg.use_quantizer:
                maps = quantize(a, self.anchors)
                a_q = straight_through(a, maps.quantized)
            else:
                a_q = a
            fm = modulate(f, a_q)
            z_dist = self.encode(fm)
            if mode == "mean":
                zs = [z_dist.mu]
            else:
                zs = [
                    reparam_sample(z_dist, noise.draw("latent", z_dist.shape))
                    for _ in range(cfg.n_z_samples)
                ]
            logits = [self.decode(z) for z in zs]
            branches.append(
                EpsBranch(a=a, maps=maps, frozen=frozen, z_dist=z_dist, logits=logits)
            )
        return ForwardResult(att_dist=att, branches=branches)

    def capture_st_state(self, x, noise: NoiseSource) -> list:
        """Record per-draw quantization offsets/assignments at the current point.

        Feeding the result back through ``forward(frozen_st=...)`` yields a
        surrogate whose finite differences match the straight-through
        gradients of the true loss.
        """
        res = self.forward(x, noise, mode="stochastic")
        captured = []
        for br in res.branches:
            if br.maps is None:
                zeros = np.zeros_like(br.a.data)
                captured.append(
                    FrozenQuant(
                        offset=zeros,
                        assignment=None,
                        a_const=br.a.data.copy(),
                        aq_const=br.a.data.copy(),
                    )
                )
            else:
                captured.append(
                    FrozenQuant(
                        offset=br.maps.quantized.data - br.a.data,
                        assignment=br.maps.assignment.copy(),
                        a_const=br.a.data.copy(),
                        aq_const=br.maps.quantized.data.copy(),
                    )
                )
        return captured


def _uniform(gen: np.random.Generator, shape, fan_in: int, dtype) -> np.ndarray:
    bound = float(np.sqrt(6.0 / fan_in))
    return gen.uniform(-bound, bound, shape).astype(dtype)
