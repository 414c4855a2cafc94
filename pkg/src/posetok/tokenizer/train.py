"""Training and evaluation of the pose tokenizer."""

import csv
import logging
from dataclasses import dataclass, field

import numpy as np

from .. import rotmath
from ..errors import DataError
from ..kinematics import fk_batch
from ..metrics import mpjpe
from ..nn import tensor as T
from ..nn.checkpoint import load_checkpoint, save_checkpoint
from ..nn.optim import Adam
from .codebook import Codebook, code_reset, ema_update, utilization
from .data import noise_augment
from .loss import identity_orient, vq_loss
from .model import PoseVQVAE, TokenizerConfig

log = logging.getLogger(__name__)

LOG_FIELDS = [
    "iter", "total", "recon", "recon_pose", "recon_joints", "embedding", "commitment",
    "noise_sigma", "train_utilization", "val_utilization", "val_geodesic",
]


@dataclass
class TrainResult:
    model: PoseVQVAE
    history: list = field(default_factory=list)
    initial_val_geodesic: float = float("nan")
    final: dict = field(default_factory=dict)


def _decode_rotmats(rot6d):
    # Gram-Schmidt with a floor on the norms so untrained outputs never raise
    a, b = rot6d[..., :3], rot6d[..., 3:]
    c1 = a / np.maximum(np.linalg.norm(a, axis=-1, keepdims=True), 1e-12)
    u = b - np.sum(c1 * b, axis=-1, keepdims=True) * c1
    c2 = u / np.maximum(np.linalg.norm(u, axis=-1, keepdims=True), 1e-12)
    return np.stack([c1, c2, np.cross(c1, c2)], axis=-1)


def evaluate(model, poses6d, skel, batch_size=256):
    """Mean per-joint geodesic error (rad), MPJPE (mm) with identity global
    orientation, and codebook utilization over ``poses6d`` (N, J, 6)."""
    poses6d = np.asarray(poses6d)
    geo, errs, all_idx = [], [], []
    for start in range(0, len(poses6d), batch_size):
        gt = poses6d[start : start + batch_size].astype(model.cfg.np_dtype)
        recon, idx = model.reconstruct(gt)
        all_idx.append(idx.reshape(-1))
        r_pred = _decode_rotmats(recon.astype(np.float64))
        r_gt = _decode_rotmats(gt.astype(np.float64))
        geo.append(rotmath.geodesic_distance(r_pred, r_gt).reshape(-1))
        bsz = len(gt)
        glob = identity_orient(bsz)
        zero = np.zeros((bsz, 3))
        local_pred = rotmath.rotmat_to_rot6d(r_pred)
        j_pred = fk_batch(local_pred, glob, zero, skel)
        j_gt = fk_batch(gt.astype(np.float64), glob, zero, skel)
        errs.extend(mpjpe(p, g) for p, g in zip(j_pred, j_gt))
    return {
        "geodesic": float(np.mean(np.concatenate(geo))),
        "mpjpe": float(np.mean(errs)),
        "utilization": utilization(np.concatenate(all_idx), model.cfg.codebook_size),
    }


def split_dataset(poses6d, val_fraction, seed):
    rng = np.random.default_rng(seed + 7919)
    order = rng.permutation(len(poses6d))
    n_val = int(round(len(poses6d) * val_fraction))
    if n_val == 0 or n_val >= len(poses6d):
        return poses6d, poses6d
    return poses6d[order[n_val:]], poses6d[order[:n_val]]


def train_tokenizer(train6d, cfg, skel, val6d=None, log_path=None, eval_every=None, progress=None):
    """Train a :class:`PoseVQVAE` on 6D poses (N, J, 6).

    Every ``cfg.log_every`` iterations a row of loss parts, noise level,
    utilization and validation geodesic error is recorded (and written to
    ``log_path`` as CSV when given).
    """
    train6d = np.asarray(train6d)
    if train6d.ndim != 3 or len(train6d) == 0:
        raise DataError(f"training set must be a non-empty (N, J, 6) array, got {train6d.shape}")
    if train6d.shape[1:] != (cfg.num_joints, 6):
        raise DataError(f"poses have shape {train6d.shape[1:]}, config expects ({cfg.num_joints}, 6)")
    dt = cfg.np_dtype
    train6d = train6d.astype(dt)
    val6d = train6d if val6d is None else np.asarray(val6d).astype(dt)
    eval_every = eval_every or cfg.log_every

    rng = np.random.default_rng(cfg.seed)
    model = PoseVQVAE(cfg, rng)
    first = train6d[rng.integers(0, len(train6d), size=cfg.batch_size)]
    with T.no_grad():
        z0 = model.encode(first).data
    model.codebook = Codebook.from_samples(z0, cfg.codebook_size, rng)
    model._codes_param = None

    opt = Adam(model.parameters(), lr=cfg.learning_rate)
    result = TrainResult(model=model)
    result.initial_val_geodesic = evaluate(model, val6d, skel)["geodesic"]

    writer = None
    fh = None
    if log_path is not None:
        fh = open(log_path, "w", newline="")
        writer = csv.DictWriter(fh, fieldnames=LOG_FIELDS)
        writer.writeheader()
    try:
        window_idx = []
        for it in range(1, cfg.iterations + 1):
            gt = train6d[rng.integers(0, len(train6d), size=cfg.batch_size)]
            sigma = cfg.noise_sigma(it - 1)
            x = noise_augment(gt, sigma, rng) if sigma > 0 else gt
            recon, z, z_hat, indices = model(x)
            loss, parts = vq_loss(gt, recon, z, z_hat, skel, cfg)
            if not np.isfinite(parts["total"]):
                raise FloatingPointError(f"non-finite loss at iteration {it}")
            opt.zero_grad()
            loss.backward()
            opt.step()
            if cfg.ema:
                ema_update(model.codebook, z.data, indices, cfg.ema_decay)
            if cfg.code_reset:
                code_reset(model.codebook, z.data, cfg.reset_threshold, rng)
            window_idx.append(indices.reshape(-1))
            if it % cfg.log_every == 0 or it == cfg.iterations:
                row = {"iter": it, **parts, "noise_sigma": sigma}
                row["train_utilization"] = utilization(np.concatenate(window_idx), cfg.codebook_size)
                window_idx = []
                if it % eval_every == 0 or it == cfg.iterations:
                    ev = evaluate(model, val6d, skel)
                    row["val_utilization"] = ev["utilization"]
                    row["val_geodesic"] = ev["geodesic"]
                result.history.append(row)
                if writer:
                    writer.writerow({k: row.get(k, "") for k in LOG_FIELDS})
                    fh.flush()
                if progress:
                    progress(row)
                log.debug("iter %d loss %.5f", it, parts["total"])
    finally:
        if fh:
            fh.close()
    result.final = evaluate(model, val6d, skel)
    return result


def save_tokenizer(model, path, extra_meta=None):
    meta = {"config": model.cfg.to_dict()}
    meta.update(extra_meta or {})
    return save_checkpoint(path, model.state_arrays(), meta)


def load_tokenizer(path):
    arrays, meta = load_checkpoint(path)
    cfg = TokenizerConfig.from_dict(meta["config"])
    model = PoseVQVAE(cfg)
    model.load_arrays(arrays)
    return model, meta
