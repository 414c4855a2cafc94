"""Codebook, nearest-code quantization, soft quantization, EMA updates and
dead-code reset."""

from dataclasses import dataclass

import numpy as np

from ..errors import InvalidArgument, ShapeError
from ..nn import tensor as T


@dataclass
class Codebook:
    codes: np.ndarray  # (K, d_c)
    ema_cluster_size: np.ndarray  # (K,)
    ema_embed_sum: np.ndarray  # (K, d_c)
    usage_count: np.ndarray  # (K,) int

    @classmethod
    def from_codes(cls, codes):
        """Fresh statistics: every code counts as one observation of itself."""
        codes = np.array(codes)
        if codes.ndim != 2 or codes.shape[0] < 2:
            raise InvalidArgument(f"codebook must be (K>=2, d_c), got {codes.shape}")
        return cls(
            codes=codes,
            ema_cluster_size=np.ones(codes.shape[0], dtype=codes.dtype),
            ema_embed_sum=codes.copy(),
            usage_count=np.zeros(codes.shape[0], dtype=np.int64),
        )

    @classmethod
    def from_samples(cls, z, size, rng):
        """Initialize ``size`` codes from randomly chosen rows of ``z``."""
        z = np.asarray(z).reshape(-1, np.shape(z)[-1])
        replace = z.shape[0] < size
        rows = rng.choice(z.shape[0], size=size, replace=replace)
        codes = z[rows].copy()
        if replace:
            codes += rng.normal(scale=1e-2 * (z.std() + 1e-8), size=codes.shape).astype(codes.dtype)
        return cls.from_codes(codes)

    @property
    def size(self):
        return self.codes.shape[0]

    @property
    def dim(self):
        return self.codes.shape[1]


def quantize(z, cb):
    """Nearest code (Euclidean) for every row of ``z`` (..., d_c).

    Returns ``(z_hat, indices)``; ties go to the lowest index. Candidates
    are screened with the expanded distance and the near-minimal ones are
    re-ranked with the direct squared distance.
    """
    codes = cb.codes if isinstance(cb, Codebook) else np.asarray(cb)
    if codes.shape[0] == 0:
        raise InvalidArgument("empty codebook")
    z = np.asarray(z)
    if z.shape[-1] != codes.shape[1]:
        raise ShapeError(f"latent dim {z.shape[-1]} does not match codebook dim {codes.shape[1]}")
    flat = z.reshape(-1, codes.shape[1])
    d = (flat * flat).sum(1)[:, None] - 2.0 * (flat @ codes.T) + (codes * codes).sum(1)[None, :]
    idx = np.argmin(d, axis=1)
    dmin = d[np.arange(len(flat)), idx]
    scale = np.maximum(np.abs(d).max(axis=1), 1.0)
    tol = 1e-10 * scale if flat.dtype == np.float64 else 1e-5 * scale
    close = d <= (dmin + tol)[:, None]
    ambiguous = np.flatnonzero(close.sum(1) > 1)
    for r in ambiguous:
        cand = np.flatnonzero(close[r])
        diff = flat[r] - codes[cand]
        exact = (diff * diff).sum(-1)
        idx[r] = cand[np.argmin(exact)]
    idx = idx.reshape(z.shape[:-1])
    return codes[idx], idx


def soft_quantize(logits, codes):
    """``softmax(logits over K) @ codes``; differentiable in both arguments.

    logits: (..., M, K); codes: (K, d_c). Returns (..., M, d_c).
    """
    logits = T.as_tensor(logits)
    codes = T.as_tensor(codes.codes if isinstance(codes, Codebook) else codes)
    if logits.shape[-1] != codes.shape[0]:
        raise ShapeError(f"logits {logits.shape} do not match codebook {codes.shape}")
    return T.matmul(T.softmax(logits, axis=-1), codes)


def ema_update(cb, z, indices, decay, eps=1e-5):
    """Exponential-moving-average codebook update, in place.

    size  <- decay * size + (1 - decay) * count
    sum   <- decay * sum  + (1 - decay) * sum of assigned z
    codes <- sum / max(size, eps)
    """
    z = np.asarray(z).reshape(-1, cb.dim)
    indices = np.asarray(indices).reshape(-1)
    if indices.size and (indices.min() < 0 or indices.max() >= cb.size):
        raise InvalidArgument("code index out of range")
    counts = np.bincount(indices, minlength=cb.size)
    sums = np.zeros_like(cb.ema_embed_sum)
    np.add.at(sums, indices, z.astype(sums.dtype))
    cb.ema_cluster_size *= decay
    cb.ema_cluster_size += (1.0 - decay) * counts
    cb.ema_embed_sum *= decay
    cb.ema_embed_sum += (1.0 - decay) * sums
    cb.codes[...] = cb.ema_embed_sum / np.maximum(cb.ema_cluster_size, eps)[:, None]
    cb.usage_count += counts
    return cb


def code_reset(cb, z_batch, reset_threshold, rng):
    """Re-seed codes whose EMA cluster size fell below ``reset_threshold``
    with random encoder outputs from the batch, in place. Returns the reset
    code indices."""
    z = np.asarray(z_batch).reshape(-1, cb.dim)
    if z.shape[0] == 0:
        raise InvalidArgument("code reset needs a non-empty batch")
    dead = np.flatnonzero(cb.ema_cluster_size < reset_threshold)
    if dead.size == 0:
        return dead
    rows = rng.choice(z.shape[0], size=dead.size, replace=dead.size > z.shape[0])
    cb.codes[dead] = z[rows]
    cb.ema_embed_sum[dead] = z[rows]
    cb.ema_cluster_size[dead] = 1.0
    return dead


def utilization(indices, codebook_size):
    """Fraction of codes selected at least once."""
    return np.unique(np.asarray(indices)).size / float(codebook_size)
