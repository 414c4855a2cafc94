"""Pose datasets: a synthetic pose manifold, PTK1 binary files and JSON lines.

PTK1 layout (little endian): magic ``b"PTK1"``, u32 pose count N, u32 joint
count J, then N*J*3 float32 axis-angle values. JSON lines hold one
``{"pose": [[x, y, z], ...]}`` object per line.
"""

import json
import struct
from pathlib import Path

import numpy as np

from .. import rotmath
from ..errors import DataError

MAGIC = b"PTK1"

# per-joint rotation ranges (radians) for the 21 body joints of the default skeleton
_JOINT_RANGE = np.array(
    [
        0.9, 0.9, 0.35,  # LHip RHip Spine
        1.1, 1.1, 0.3,  # LKnee RKnee Thorax
        0.5, 0.5, 0.3,  # LAnkle RAnkle Thorax2
        0.2, 0.2, 0.5,  # LToe RToe Neck
        0.3, 0.3, 0.5,  # LCollar RCollar Jaw
        1.2, 1.2, 1.2,  # LShoulder RShoulder LElbow
        1.2, 0.6, 0.6,  # RElbow LWrist RWrist
    ]
)


def synthetic_pose_manifold(n, seed=0, num_joints=21, latent_dim=6, hidden=32):
    """Axis-angle poses (n, num_joints, 3) from a smooth random map of a
    low-dimensional Gaussian latent.

    The map ``u -> range * tanh(A2 tanh(A1 u + b1) + b2)`` is drawn from
    ``seed``, so the same seed gives the same manifold and the same samples.
    """
    rng = np.random.default_rng(seed)
    a1 = rng.normal(scale=1.0 / np.sqrt(latent_dim), size=(latent_dim, hidden))
    b1 = rng.normal(scale=0.3, size=hidden)
    a2 = rng.normal(scale=1.0 / np.sqrt(hidden), size=(hidden, num_joints * 3))
    b2 = rng.normal(scale=0.2, size=num_joints * 3)
    ranges = _JOINT_RANGE if num_joints == 21 else np.full(num_joints, 0.8)
    u = rng.normal(size=(n, latent_dim))
    h = np.tanh(u @ a1 + b1)
    out = np.tanh(h @ a2 + b2).reshape(n, num_joints, 3)
    return out * ranges[None, :, None]


def write_ptk(path, poses_aa):
    poses = np.asarray(poses_aa, dtype="<f4")
    if poses.ndim != 3 or poses.shape[2] != 3:
        raise DataError(f"poses must be (N, J, 3), got {poses.shape}")
    n, j, _ = poses.shape
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<II", n, j))
        fh.write(poses.tobytes())


def read_ptk(path):
    raw = Path(path).read_bytes()
    if raw[:4] != MAGIC:
        raise DataError(f"{path}: bad magic {raw[:4]!r}", index=None)
    if len(raw) < 12:
        raise DataError(f"{path}: truncated header")
    n, j = struct.unpack("<II", raw[4:12])
    need = n * j * 3 * 4
    body = raw[12:]
    if len(body) < need:
        complete = len(body) // (j * 3 * 4) if j else 0
        raise DataError(f"{path}: file ends inside a pose record", index=complete)
    poses = np.frombuffer(body, dtype="<f4", count=n * j * 3).reshape(n, j, 3).astype(np.float64)
    bad = np.flatnonzero(~np.all(np.isfinite(poses), axis=(1, 2)))
    if bad.size:
        raise DataError("non-finite axis-angle values", index=int(bad[0]))
    return poses


def read_jsonl(path):
    poses = []
    with open(path, encoding="utf-8") as fh:
        for i, line in enumerate(fh):
            if not line.strip():
                continue
            try:
                pose = np.asarray(json.loads(line)["pose"], dtype=np.float64)
            except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
                raise DataError(f"cannot parse pose ({exc})", index=i) from None
            if pose.ndim != 2 or pose.shape[1] != 3 or not np.all(np.isfinite(pose)):
                raise DataError(f"pose must be a finite [J][3] array, got shape {pose.shape}", index=i)
            if poses and pose.shape != poses[0].shape:
                raise DataError("joint count differs from the first record", index=i)
            poses.append(pose)
    if not poses:
        raise DataError(f"{path}: no poses")
    return np.stack(poses)


def write_jsonl(path, poses_aa):
    with open(path, "w", encoding="utf-8") as fh:
        for pose in np.asarray(poses_aa):
            fh.write(json.dumps({"pose": pose.tolist()}) + "\n")


def load_poses(path):
    """Axis-angle poses (N, J, 3) from a PTK1 or JSON-lines file."""
    path = Path(path)
    with open(path, "rb") as fh:
        head = fh.read(4)
    if head == MAGIC:
        return read_ptk(path)
    return read_jsonl(path)


def to_rot6d(poses_aa):
    return rotmath.aa_to_rot6d(poses_aa)


def noise_augment(rot6d, sigma, rng, prob=0.5):
    """Perturb a random subset of joints (each with probability ``prob``) by
    Gaussian noise of std ``sigma`` in 6D space, then re-orthonormalize.

    Works on a single pose (N, 6) or a batch (B, N, 6).
    """
    rot6d = np.asarray(rot6d)
    if sigma < 0:
        raise ValueError("sigma must be non-negative")
    if sigma == 0:
        return rot6d.copy()
    mask = rng.random(rot6d.shape[:-1]) < prob
    noise = rng.normal(scale=sigma, size=rot6d.shape) * mask[..., None]
    out = rotmath.rotmat_to_rot6d(rotmath.rot6d_to_rotmat(rot6d + noise))
    # untouched joints stay bit-identical
    return np.where(mask[..., None], out, rot6d).astype(rot6d.dtype)
