"""Pose VQ-VAE: convolutional encoder/decoder over the token axis, and the
logit head that soft-quantizes against a frozen codebook."""

from dataclasses import asdict, dataclass, fields

import numpy as np

from ..errors import ConfigError, ShapeError
from ..nn import tensor as T
from ..nn.layers import MLP, Conv1d, Linear, Module, ResBlock
from ..nn.tensor import Tensor
from .codebook import Codebook, quantize, soft_quantize


@dataclass
class TokenizerConfig:
    num_joints: int = 21
    num_tokens: int = 32  # M
    codebook_size: int = 256  # K
    code_dim: int = 64  # d_c
    width: int = 64
    lambda_re: float = 50.0
    lambda_e: float = 1.0
    lambda_c: float = 1.0
    noise_start: float = 1e-3
    noise_growth_interval: int = 5000
    noise: bool = True
    ema: bool = True
    ema_decay: float = 0.99
    code_reset: bool = True
    reset_threshold: float = 1.0
    learning_rate: float = 2e-4
    batch_size: int = 32
    iterations: int = 20000
    seed: int = 0
    dtype: str = "f32"
    log_every: int = 500

    def __post_init__(self):
        if self.codebook_size < 2:
            raise ConfigError("codebook_size must be at least 2")
        if min(self.num_tokens, self.code_dim, self.width, self.num_joints) < 1:
            raise ConfigError("sizes must be positive")
        if self.dtype not in ("f32", "f64"):
            raise ConfigError(f"dtype must be 'f32' or 'f64', got {self.dtype!r}")

    @classmethod
    def published_scale(cls, **overrides):
        """160 tokens, 2048 x 256 codebook, batch 256, 150K iterations."""
        base = dict(num_tokens=160, codebook_size=2048, code_dim=256, width=256, batch_size=256, iterations=150_000)
        base.update(overrides)
        return cls(**base)

    @classmethod
    def from_dict(cls, doc):
        known = {f.name for f in fields(cls)}
        unknown = set(doc) - known
        if unknown:
            raise ConfigError(f"unknown tokenizer config keys: {sorted(unknown)}")
        return cls(**doc)

    def to_dict(self):
        return asdict(self)

    def noise_sigma(self, iteration):
        """Noise std at ``iteration``: ``noise_start`` grown linearly, one step
        of ``noise_start`` per ``noise_growth_interval`` iterations."""
        if not self.noise:
            return 0.0
        return self.noise_start * (1 + iteration // self.noise_growth_interval)

    @property
    def np_dtype(self):
        return np.float32 if self.dtype == "f32" else np.float64


class Encoder(Module):
    """(B, J, 6) rotations -> (B, M, d_c) latents.

    The joint axis is first mapped to M token positions by a learned linear
    expansion, then 4 convolutions and one residual block run along it.
    """

    def __init__(self, cfg, rng):
        self.expand = Linear(cfg.num_joints, cfg.num_tokens, rng)
        self.conv_in = Conv1d(6, cfg.width, rng)
        self.res = ResBlock(cfg.width, rng)
        self.conv2 = Conv1d(cfg.width, cfg.width, rng)
        self.conv3 = Conv1d(cfg.width, cfg.width, rng)
        self.conv_out = Conv1d(cfg.width, cfg.code_dim, rng)

    def forward(self, x):
        h = self.expand(T.transpose(x, (0, 2, 1)))  # (B, 6, M)
        h = T.gelu(self.conv_in(h))
        h = self.res(h)
        h = T.gelu(self.conv2(h))
        h = T.gelu(self.conv3(h))
        return T.transpose(self.conv_out(h), (0, 2, 1))


class Decoder(Module):
    """(B, M, d_c) -> (B, J, 6); mirror of :class:`Encoder`."""

    def __init__(self, cfg, rng):
        self.conv_in = Conv1d(cfg.code_dim, cfg.width, rng)
        self.res = ResBlock(cfg.width, rng)
        self.conv2 = Conv1d(cfg.width, cfg.width, rng)
        self.conv3 = Conv1d(cfg.width, cfg.width, rng)
        self.conv_out = Conv1d(cfg.width, 6, rng)
        self.contract = Linear(cfg.num_tokens, cfg.num_joints, rng)

    def forward(self, zq):
        h = T.gelu(self.conv_in(T.transpose(zq, (0, 2, 1))))
        h = self.res(h)
        h = T.gelu(self.conv2(h))
        h = T.gelu(self.conv3(h))
        h = self.contract(self.conv_out(h))  # (B, 6, J)
        return T.transpose(h, (0, 2, 1))


class PoseVQVAE(Module):
    def __init__(self, cfg, rng=None):
        rng = np.random.default_rng(cfg.seed) if rng is None else rng
        self.cfg = cfg
        with T.default_dtype(cfg.np_dtype):
            self.encoder = Encoder(cfg, rng)
            self.decoder = Decoder(cfg, rng)
        self.codebook = Codebook.from_codes(
            rng.normal(size=(cfg.codebook_size, cfg.code_dim)).astype(cfg.np_dtype)
        )
        self._codes_param = None

    def codes_tensor(self):
        """The codebook as a tensor sharing memory with ``codebook.codes``;
        it requires grad only when the codebook is learned by gradient."""
        if self._codes_param is None or self._codes_param.data is not self.codebook.codes:
            t = Tensor(self.codebook.codes, requires_grad=not self.cfg.ema)
            t.data = self.codebook.codes
            self._codes_param = t
        return self._codes_param

    def named_parameters(self, prefix=""):
        yield from self.encoder.named_parameters(prefix + "encoder.")
        yield from self.decoder.named_parameters(prefix + "decoder.")
        if not self.cfg.ema:
            yield prefix + "codebook.codes", self.codes_tensor()

    def _check_pose(self, x):
        if x.ndim != 3 or x.shape[1:] != (self.cfg.num_joints, 6):
            raise ShapeError(f"expected poses of shape (B, {self.cfg.num_joints}, 6), got {x.shape}")

    def encode(self, x):
        x = T.as_tensor(x)
        self._check_pose(x)
        return self.encoder(x)

    def quantize(self, z):
        return quantize(z.data if isinstance(z, Tensor) else z, self.codebook)

    def decode(self, zq):
        zq = T.as_tensor(zq)
        if zq.ndim != 3 or zq.shape[1:] != (self.cfg.num_tokens, self.cfg.code_dim):
            raise ShapeError(
                f"expected latents of shape (B, {self.cfg.num_tokens}, {self.cfg.code_dim}), got {zq.shape}"
            )
        return self.decoder(zq)

    def forward(self, x):
        """Training forward pass.

        Returns ``(recon, z, z_hat, indices)`` where ``z_hat`` is the gathered
        codebook rows (a tensor connected to the codebook) and the decoder
        sees ``z + sg[z_hat - z]`` (straight-through estimator).
        """
        z = self.encode(x)
        _, indices = self.quantize(z)
        z_hat = T.take_rows(self.codes_tensor(), indices)
        zq = z + T.stop_gradient(z_hat - z)
        return self.decode(zq), z, z_hat, indices

    def reconstruct(self, x):
        with T.no_grad():
            z = self.encode(x)
            z_hat, indices = self.quantize(z)
            return self.decode(z_hat).data, indices

    def decode_indices(self, indices):
        with T.no_grad():
            return self.decode(self.codebook.codes[np.asarray(indices)]).data

    def decode_logits(self, logits):
        """Soft-quantize logits (B, M, K) against the codebook and decode."""
        return self.decode(soft_quantize(logits, self.codes_tensor()))

    def state_arrays(self):
        out = {f"encoder.{k}": v for k, v in self.encoder.state_dict().items()}
        out.update({f"decoder.{k}": v for k, v in self.decoder.state_dict().items()})
        cb = self.codebook
        out["codebook.codes"] = cb.codes
        out["codebook.ema_cluster_size"] = cb.ema_cluster_size
        out["codebook.ema_embed_sum"] = cb.ema_embed_sum
        out["codebook.usage_count"] = cb.usage_count.astype(np.float64)
        return out

    def load_arrays(self, arrays):
        self.encoder.load_state_dict({k[8:]: v for k, v in arrays.items() if k.startswith("encoder.")})
        self.decoder.load_state_dict({k[8:]: v for k, v in arrays.items() if k.startswith("decoder.")})
        dt = self.cfg.np_dtype
        self.codebook = Codebook(
            codes=np.array(arrays["codebook.codes"], dtype=dt),
            ema_cluster_size=np.array(arrays["codebook.ema_cluster_size"], dtype=dt),
            ema_embed_sum=np.array(arrays["codebook.ema_embed_sum"], dtype=dt),
            usage_count=np.asarray(arrays["codebook.usage_count"]).astype(np.int64),
        )
        self._codes_param = None


class TokenHead(Module):
    """Feature vector -> token logits (M, K): four residual blocks of two
    linear layers with a GELU, then a linear map to M*K logits."""

    def __init__(self, in_dim, num_tokens, codebook_size, rng, hidden=None, blocks=4):
        hidden = hidden or in_dim
        self.blocks = [MLP(in_dim, hidden, in_dim, rng) for _ in range(blocks)]
        self.out = Linear(in_dim, num_tokens * codebook_size, rng)
        self.num_tokens = num_tokens
        self.codebook_size = codebook_size

    def forward(self, feats):
        h = T.as_tensor(feats)
        for block in self.blocks:
            h = h + block(h)
        logits = self.out(h)
        return T.reshape(logits, (h.shape[0], self.num_tokens, self.codebook_size))
