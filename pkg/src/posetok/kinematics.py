"""Skeletons, body poses and forward kinematics.

A skeleton is a kinematic tree whose joints are stored parents-first. Joint 0
is the root; it is driven by the global orientation, and every other joint
``j`` by the body rotation ``j - 1``.
"""

import json
from dataclasses import dataclass
from importlib import resources

import numpy as np

from . import rotmath
from .errors import InvalidArgument, InvalidSkeleton
from .nn import tensor as T
from .nn.tensor import Tensor

NUM_BODY_JOINTS = 21


@dataclass(frozen=True)
class Skeleton:
    names: tuple
    parents: np.ndarray  # (J,), -1 for the root
    offsets: np.ndarray  # (J, 3) meters, relative to the parent

    @property
    def num_joints(self):
        return len(self.names)

    @property
    def num_bones(self):
        return len(self.names) - 1

    @property
    def body_joint_names(self):
        """Names of the joints driven by body rotations (all but the root)."""
        return self.names[1:]

    def index(self, name):
        return self.names.index(name)

    def to_json(self):
        return {
            "joints": [
                {"name": n, "parent": int(p), "offset": [float(v) for v in o]}
                for n, p, o in zip(self.names, self.parents, self.offsets)
            ]
        }


def skeleton_from_dict(doc):
    try:
        raw = [(str(j["name"]), int(j["parent"]), np.asarray(j["offset"], dtype=np.float64)) for j in doc["joints"]]
    except (KeyError, TypeError, ValueError) as exc:
        raise InvalidSkeleton(f"malformed skeleton document: {exc}") from None
    n = len(raw)
    if n == 0:
        raise InvalidSkeleton("skeleton has no joints")
    names = [r[0] for r in raw]
    if len(set(names)) != n:
        raise InvalidSkeleton("joint names are not unique")
    parents = [r[1] for r in raw]
    for i, (name, p, off) in enumerate(raw):
        if off.shape != (3,) or not np.all(np.isfinite(off)):
            raise InvalidSkeleton(f"joint {name!r} has an invalid offset")
        if p == i:
            raise InvalidSkeleton(f"joint {name!r} is its own parent (cycle)")
        if p < -1 or p >= n:
            raise InvalidSkeleton(f"joint {name!r} has out-of-range parent {p}")
    roots = [i for i, p in enumerate(parents) if p == -1]
    if len(roots) != 1:
        raise InvalidSkeleton(f"expected exactly one root, found {len(roots)}")

    # stable topological order: repeatedly place joints whose parent is placed
    order, placed = [roots[0]], {roots[0]}
    progress = True
    while len(order) < n and progress:
        progress = False
        for i in range(n):
            if i not in placed and parents[i] in placed:
                order.append(i)
                placed.add(i)
                progress = True
    if len(order) < n:
        stuck = sorted(names[i] for i in set(range(n)) - placed)
        raise InvalidSkeleton(f"cycle detected among joints {stuck}")

    remap = {old: new for new, old in enumerate(order)}
    new_parents = np.array([-1 if parents[o] == -1 else remap[parents[o]] for o in order], dtype=np.int64)
    offsets = np.stack([raw[o][2] for o in order])
    offsets[0] = 0.0
    return Skeleton(tuple(names[o] for o in order), new_parents, offsets)


def load_skeleton(path):
    with open(path, encoding="utf-8") as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise InvalidSkeleton(f"{path}: not valid JSON ({exc})") from None
    return skeleton_from_dict(doc)


def default_skeleton():
    """22-joint humanoid (root + 21 posed joints) of about 1.7 m, y up."""
    text = resources.files("posetok.data").joinpath("humanoid22.json").read_text(encoding="utf-8")
    return skeleton_from_dict(json.loads(text))


@dataclass
class BodyPose:
    """Body rotations in 6D, global orientation in 6D, root translation."""

    rot6d: np.ndarray  # (N, 6)
    global_orient: np.ndarray  # (6,)
    root_translation: np.ndarray  # (3,)

    def __post_init__(self):
        self.rot6d = np.asarray(self.rot6d, dtype=np.float64)
        self.global_orient = np.asarray(self.global_orient, dtype=np.float64)
        self.root_translation = np.asarray(self.root_translation, dtype=np.float64)
        if self.rot6d.ndim != 2 or self.rot6d.shape[1] != 6:
            raise InvalidArgument(f"body rotations must be (N, 6), got {self.rot6d.shape}")
        if self.global_orient.shape != (6,) or self.root_translation.shape != (3,):
            raise InvalidArgument("global_orient must be (6,) and root_translation (3,)")
        # raises DegenerateRotation for unusable 6D vectors
        rotmath.rot6d_to_rotmat(self.rot6d)
        rotmath.rot6d_to_rotmat(self.global_orient)

    @property
    def num_rotations(self):
        return self.rot6d.shape[0]

    @classmethod
    def from_axis_angle(cls, body_aa, global_aa=(0.0, 0.0, 0.0), root_translation=(0.0, 0.0, 0.0)):
        return cls(
            rotmath.aa_to_rot6d(np.asarray(body_aa, dtype=np.float64).reshape(-1, 3)),
            rotmath.aa_to_rot6d(global_aa),
            root_translation,
        )

    @classmethod
    def identity(cls, n=NUM_BODY_JOINTS):
        return cls.from_axis_angle(np.zeros((n, 3)))

    def body_rotmats(self):
        return rotmath.rot6d_to_rotmat(self.rot6d)

    def global_rotmat(self):
        return rotmath.rot6d_to_rotmat(self.global_orient)

    def to_axis_angle(self):
        """``(body_aa (N,3), global_aa (3,), root_translation (3,))``"""
        return (
            rotmath.rotmat_to_aa(self.body_rotmats()),
            rotmath.rotmat_to_aa(self.global_rotmat()),
            self.root_translation.copy(),
        )


def _check_counts(n_rot, skel):
    if n_rot + 1 != skel.num_joints:
        raise InvalidArgument(
            f"pose has {n_rot} body rotations but skeleton has {skel.num_joints} joints (expected {skel.num_joints - 1})"
        )


def _fk_chain(local, glob, offsets, parents):
    """local: (B, N, 3, 3); glob: (B, 3, 3). Returns positions (B, J, 3) with
    the root at the origin and world rotations (B, J, 3, 3)."""
    bsz = glob.shape[0]
    nj = len(parents)
    world = np.empty((bsz, nj, 3, 3), dtype=glob.dtype)
    pos = np.zeros((bsz, nj, 3), dtype=glob.dtype)
    world[:, 0] = glob
    for j in range(1, nj):
        p = parents[j]
        pos[:, j] = pos[:, p] + world[:, p] @ offsets[j]
        world[:, j] = world[:, p] @ local[:, j - 1]
    return pos, world


def fk_op(local, glob, skel):
    """Differentiable forward kinematics.

    local: Tensor (B, N, 3, 3) body rotation matrices; glob: Tensor (B, 3, 3).
    Returns a Tensor (B, J, 3) of root-relative joint positions.
    """
    _check_counts(local.shape[1], skel)
    parents = skel.parents
    offsets = skel.offsets.astype(glob.dtype)
    pos, world = _fk_chain(local.data, glob.data, offsets, parents)

    def backward(g):
        gpos = g.copy()
        gworld = np.zeros_like(world)
        glocal = np.zeros_like(local.data)
        for j in range(len(parents) - 1, 0, -1):
            p = parents[j]
            gpos[:, p] += gpos[:, j]
            gworld[:, p] += gpos[:, j][:, :, None] * offsets[j][None, None, :]
            lj = local.data[:, j - 1]
            gworld[:, p] += gworld[:, j] @ np.swapaxes(lj, -1, -2)
            glocal[:, j - 1] = np.swapaxes(world[:, p], -1, -2) @ gworld[:, j]
        return glocal, gworld[:, 0]

    return Tensor.from_op(pos, (local, glob), backward)


def rot6d_to_rotmat_t(x):
    """Gram-Schmidt 6D decode on tensors (differentiable)."""
    a = x[..., 0:3]
    b = x[..., 3:6]
    c1 = a / T.norm(a, axis=-1, keepdims=True)
    u = b - T.tsum(c1 * b, axis=-1, keepdims=True) * c1
    c2 = u / T.norm(u, axis=-1, keepdims=True)
    c3 = T.cross(c1, c2)
    return T.stack([c1, c2, c3], axis=-1)


def aa_to_rotmat_t(aa):
    """Rodrigues map on tensors (differentiable); aa: (..., 3).

    Vectors shorter than about 1e-8 rad lose their first-order term; the
    attack and fitting code only evaluates it away from zero.
    """
    aa = T.as_tensor(aa)
    theta = T.sqrt(T.tsum(aa * aa, axis=-1, keepdims=True) + 1e-16)
    k = aa / theta
    kx, ky, kz = k[..., 0:1], k[..., 1:2], k[..., 2:3]
    zero = kx * 0.0
    rows = [
        T.concat([zero, -kz, ky], axis=-1),
        T.concat([kz, zero, -kx], axis=-1),
        T.concat([-ky, kx, zero], axis=-1),
    ]
    kmat = T.stack(rows, axis=-2)
    s = T.reshape(T.sin(theta), theta.shape + (1,))
    c = T.reshape(1.0 - T.cos(theta), theta.shape + (1,))
    eye = np.eye(3, dtype=aa.dtype)
    return eye + s * kmat + c * (kmat @ kmat)


def fk_from_rot6d(rot6d, glob, skel, translation=None):
    """Joint positions from 6D body rotations.

    rot6d: Tensor (B, N, 6); glob: Tensor or array (B, 3, 3) rotation
    matrices; translation: optional (B, 3). Returns Tensor (B, J, 3).
    """
    rot6d = T.as_tensor(rot6d)
    glob = T.as_tensor(glob)
    pos = fk_op(rot6d_to_rotmat_t(rot6d), glob, skel)
    if translation is not None:
        pos = pos + T.reshape(T.as_tensor(translation), (pos.shape[0], 1, 3))
    return pos


def fk_batch(rot6d, glob_rotmat, translation, skel):
    """Numpy forward kinematics for a batch. rot6d: (B, N, 6)."""
    rot6d = np.asarray(rot6d, dtype=np.float64)
    _check_counts(rot6d.shape[1], skel)
    glob = np.asarray(glob_rotmat, dtype=np.float64)
    local = rotmath.rot6d_to_rotmat(rot6d)
    pos, _ = _fk_chain(local, glob, skel.offsets, skel.parents)
    return pos + np.asarray(translation, dtype=np.float64)[:, None, :]


def forward_kinematics(pose, skel):
    """Joint positions (J, 3) of ``pose`` on ``skel``."""
    _check_counts(pose.num_rotations, skel)
    return fk_batch(pose.rot6d[None], pose.global_rotmat()[None], pose.root_translation[None], skel)[0]
