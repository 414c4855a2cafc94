"""Threshold-adaptive loss scaling.

Errors smaller than what a wrong camera model alone would produce carry no
useful training signal, so per-joint losses whose error metric falls at or
below a threshold are multiplied by a small factor ``alpha``. This module
holds the thresholds, the two scaled losses (rotations and 2D keypoints)
and the procedures that estimate thresholds from data.
"""

import json
import logging
import warnings
from dataclasses import dataclass, field
from importlib import resources

import numpy as np

from . import rotmath
from .camera import Keypoints2D, project_perspective
from .errors import BehindCamera, ConfigError, InvalidArgument
from .kinematics import BodyPose, default_skeleton, forward_kinematics
from .nn import tensor as T

log = logging.getLogger(__name__)

DEFAULT_ALPHA = 0.01
MAX_NORMALIZED_COORD = 0.75

# Skeleton joint -> name of the matching 2D keypoint in the shipped table.
# Joints not listed here use their own name and are usually absent from it.
KEYPOINT_ALIASES = {
    "Pelvis": "OP MidHip",
    "LHip": "OP LHip",
    "RHip": "OP RHip",
    "Spine": "H36M Spine",
    "LKnee": "OP LKnee",
    "RKnee": "OP RKnee",
    "Thorax": "MPII Thorax",
    "LAnkle": "OP LAnkle",
    "RAnkle": "OP RAnkle",
    "LToe": "OP LBigToe",
    "RToe": "OP RBigToe",
    "Neck": "OP Neck",
    "Jaw": "OP Nose",
    "LShoulder": "OP LShoulder",
    "RShoulder": "OP RShoulder",
    "LElbow": "OP LElbow",
    "RElbow": "OP RElbow",
    "LWrist": "OP LWrist",
    "RWrist": "OP RWrist",
}


def keypoint_names(joint_names):
    return [KEYPOINT_ALIASES.get(n, n) for n in joint_names]


def _check_eps(table, label):
    out = {}
    for name, value in table.items():
        value = float(value)
        if not np.isfinite(value) or value < 0:
            raise ConfigError(f"{label} threshold for {name!r} must be finite and >= 0, got {value}")
        out[str(name)] = value
    return out


@dataclass
class TalsThresholds:
    """Per-joint thresholds (2D in normalized image units, rotations in
    radians) and the below-threshold multipliers."""

    eps_2d: dict = field(default_factory=dict)
    eps_pose: dict = field(default_factory=dict)
    alpha_pose: float = DEFAULT_ALPHA
    alpha_2d: float = DEFAULT_ALPHA

    def __post_init__(self):
        self.eps_2d = _check_eps(self.eps_2d, "2D")
        self.eps_pose = _check_eps(self.eps_pose, "pose")
        for label in ("alpha_pose", "alpha_2d"):
            a = float(getattr(self, label))
            if not 0.0 < a <= 1.0:
                raise ConfigError(f"{label} must lie in (0, 1], got {a}")
            setattr(self, label, a)

    @classmethod
    def from_json(cls, doc):
        if not isinstance(doc, dict):
            raise ConfigError("thresholds document must be a JSON object")
        unknown = set(doc) - {"alpha_pose", "alpha_2d", "eps_2d", "eps_pose"}
        if unknown:
            raise ConfigError(f"unknown threshold keys: {sorted(unknown)}")
        return cls(
            eps_2d=doc.get("eps_2d", {}),
            eps_pose=doc.get("eps_pose", {}),
            alpha_pose=doc.get("alpha_pose", DEFAULT_ALPHA),
            alpha_2d=doc.get("alpha_2d", DEFAULT_ALPHA),
        )

    def to_json(self):
        return {
            "alpha_pose": self.alpha_pose,
            "alpha_2d": self.alpha_2d,
            "eps_2d": dict(self.eps_2d),
            "eps_pose": dict(self.eps_pose),
        }

    @classmethod
    def load(cls, path):
        with open(path, encoding="utf-8") as fh:
            try:
                doc = json.load(fh)
            except json.JSONDecodeError as exc:
                raise ConfigError(f"{path}: not valid JSON ({exc})") from None
        return cls.from_json(doc)

    def save(self, path):
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_json(), fh, indent=2)
            fh.write("\n")

    @classmethod
    def published(cls):
        """The shipped table of thresholds estimated on real data."""
        text = resources.files("posetok.data").joinpath("tals_table_s1.json").read_text(encoding="utf-8")
        return cls.from_json(json.loads(text))

    def pose_eps(self, joint_names):
        """Thresholds for ``joint_names``; every joint must be present."""
        missing = [n for n in joint_names if n not in self.eps_pose]
        if missing:
            raise ConfigError(f"no pose threshold for joints {missing}")
        return np.array([self.eps_pose[n] for n in joint_names])

    def keypoint_eps(self, names):
        """Thresholds for 2D keypoints ``names``; missing ones are NaN and a
        warning lists them."""
        missing = [n for n in names if n not in self.eps_2d]
        if missing:
            warnings.warn(f"no 2D threshold for keypoints {missing}; they are skipped", stacklevel=2)
        return np.array([self.eps_2d.get(n, np.nan) for n in names])


# -- losses -------------------------------------------------------------------
def _rot6d_of(pose):
    if isinstance(pose, BodyPose):
        return pose.rot6d
    return pose


def tals_pose_loss(pred, pgt, th, joint_names=None):
    """Scaled squared-difference loss on 6D rotations.

    ``pred`` is a Tensor, array or :class:`BodyPose` with rotations
    (..., N, 6); ``pgt`` the same without gradients. For each joint the
    geodesic angle between the decoded rotations picks the branch: above
    ``eps_pose`` the full ``|pred - pgt|^2`` counts, otherwise ``alpha_pose``
    times it. Joint terms are summed and averaged over any leading batch
    dimensions.

    Returns ``(loss, parts)`` where ``parts`` holds per-joint ``error``
    (radians), ``term`` and the boolean ``above`` mask.
    """
    pred = T.as_tensor(_rot6d_of(pred))
    target = np.asarray(_rot6d_of(pgt), dtype=pred.dtype)
    if pred.shape != target.shape or pred.shape[-1] != 6:
        raise InvalidArgument(f"rotation sets must share a (..., N, 6) shape, got {pred.shape} and {target.shape}")
    if joint_names is None:
        joint_names = default_skeleton().body_joint_names
    if len(joint_names) != pred.shape[-2]:
        raise InvalidArgument(f"{len(joint_names)} joint names for {pred.shape[-2]} rotations")
    eps = th.pose_eps(joint_names)
    error = rotmath.geodesic_distance(rotmath.rot6d_to_rotmat(pred.data), rotmath.rot6d_to_rotmat(target))
    above = error > eps
    weight = np.where(above, 1.0, th.alpha_pose).astype(pred.dtype)
    diff = pred - target
    per_joint = weight * T.tsum(diff * diff, axis=-1)
    n_batch = int(np.prod(pred.shape[:-2]))
    loss = T.tsum(per_joint) / float(n_batch) if n_batch > 1 else T.tsum(per_joint)
    return loss, {"error": error, "term": per_joint.data, "above": above}


def _points_and_conf(kp):
    if isinstance(kp, Keypoints2D):
        return kp.points, kp.confidence
    return kp, None


def _check_normalized(values, label):
    if np.any(np.abs(values) > MAX_NORMALIZED_COORD):
        raise InvalidArgument(
            f"{label} keypoints exceed |{MAX_NORMALIZED_COORD}|; normalize them with normalize_keypoints first"
        )


def tals_2d_loss(pred2d, pgt2d, th, names=None):
    """Scaled L1 loss on normalized 2D keypoints.

    A joint's error is the mean absolute coordinate difference. Above
    ``eps_2d`` the term is that error, otherwise ``alpha_2d`` times it, and
    each term is weighted by the target's confidence. Keypoints without a
    threshold are skipped. ``names`` defaults to the 2D names of the default
    skeleton's joints.

    Returns ``(loss, parts)`` with per-joint ``error``, ``term``, ``above``
    and the ``used`` mask.
    """
    pred_pts, _ = _points_and_conf(pred2d)
    gt_pts, conf = _points_and_conf(pgt2d)
    pred = T.as_tensor(pred_pts)
    target = np.asarray(gt_pts, dtype=pred.dtype)
    if pred.shape != target.shape or pred.shape[-1] != 2:
        raise InvalidArgument(f"keypoint sets must share a (..., J, 2) shape, got {pred.shape} and {target.shape}")
    _check_normalized(pred.data, "predicted")
    _check_normalized(target, "target")
    conf = np.ones(target.shape[:-1]) if conf is None else np.broadcast_to(conf, target.shape[:-1])
    if names is None:
        names = keypoint_names(default_skeleton().names)
    if len(names) != pred.shape[-2]:
        raise InvalidArgument(f"{len(names)} keypoint names for {pred.shape[-2]} keypoints")
    eps = th.keypoint_eps(names)
    used = ~np.isnan(eps)
    diff = T.tabs(pred - target)
    error_t = T.mean(diff, axis=-1)
    error = error_t.data
    above = error > np.where(used, eps, np.inf)
    weight = (np.where(above, 1.0, th.alpha_2d) * conf * used).astype(pred.dtype)
    per_joint = weight * error_t
    n_batch = int(np.prod(pred.shape[:-2]))
    loss = T.tsum(per_joint) / float(n_batch) if n_batch > 1 else T.tsum(per_joint)
    return loss, {"error": error, "term": per_joint.data, "above": above, "used": used}


# -- threshold estimation -----------------------------------------------------
@dataclass
class ThresholdEstimate:
    eps: dict
    num_scenes: int
    skipped: int

    def to_json(self):
        return {"eps": self.eps, "num_scenes": self.num_scenes, "skipped": self.skipped}


def estimate_thresholds_2d(gt_poses, gt_cams, wrong_cam_factory, skel, image_sizes):
    """Mean normalized L1 gap between projections under the true and a
    wrong camera, per joint.

    ``wrong_cam_factory(j3d_world, gt_cam, image_size)`` returns the wrong
    camera for a scene. Scenes in which either camera sees a joint behind it
    are skipped and counted. Differences are divided by the image width and
    the absolute values averaged over both axes, then over scenes. Keys are
    the 2D keypoint names of the skeleton's joints.
    """
    gt_poses = list(gt_poses)
    gt_cams = list(gt_cams)
    if not gt_poses:
        raise InvalidArgument("need at least one scene")
    if len(gt_poses) != len(gt_cams):
        raise InvalidArgument(f"{len(gt_poses)} poses but {len(gt_cams)} cameras")
    sizes = np.asarray(image_sizes, dtype=np.float64)
    if sizes.ndim == 1:
        sizes = np.broadcast_to(sizes, (len(gt_poses), 2))
    gaps = []
    skipped = 0
    for pose, cam, size in zip(gt_poses, gt_cams, sizes):
        j3d = forward_kinematics(pose, skel)
        try:
            ref = project_perspective(j3d, cam).points
            wrong = wrong_cam_factory(j3d, cam, size)
            uv = project_perspective(j3d, wrong).points
        except BehindCamera as exc:
            skipped += 1
            log.warning("scene skipped: joints %s behind the camera", exc.indices)
            continue
        gaps.append(np.abs(uv - ref).mean(axis=-1) / size[0])
    if not gaps:
        raise InvalidArgument("every scene was skipped")
    mean_gap = np.mean(gaps, axis=0)
    eps = {name: float(v) for name, v in zip(keypoint_names(skel.names), mean_gap)}
    return ThresholdEstimate(eps=eps, num_scenes=len(gaps), skipped=skipped)


def _rotmats(poses):
    if isinstance(poses, (list, tuple)) and poses and isinstance(poses[0], BodyPose):
        return np.stack([p.body_rotmats() for p in poses])
    arr = np.asarray(poses, dtype=np.float64)
    if arr.shape[-1] == 6:
        return rotmath.rot6d_to_rotmat(arr)
    if arr.shape[-2:] == (3, 3):
        return arr
    raise InvalidArgument(f"cannot read rotations from an array of shape {arr.shape}")


def estimate_thresholds_pose(pred_poses, gt_poses, joint_names=None):
    """Per-joint mean geodesic distance (radians) between paired predicted
    and ground-truth rotations. Inputs are lists of :class:`BodyPose` or
    arrays of 6D vectors (S, N, 6) or matrices (S, N, 3, 3)."""
    if len(pred_poses) != len(gt_poses):
        raise InvalidArgument(f"{len(pred_poses)} predictions but {len(gt_poses)} ground-truth poses")
    if len(pred_poses) == 0:
        raise InvalidArgument("need at least one pose pair")
    r_pred = _rotmats(pred_poses)
    r_gt = _rotmats(gt_poses)
    if r_pred.shape != r_gt.shape:
        raise InvalidArgument(f"pose sets differ in shape: {r_pred.shape} vs {r_gt.shape}")
    if joint_names is None:
        joint_names = default_skeleton().body_joint_names
    if len(joint_names) != r_pred.shape[1]:
        raise InvalidArgument(f"{len(joint_names)} joint names for {r_pred.shape[1]} joints")
    mean = rotmath.geodesic_distance(r_pred, r_gt).mean(axis=0)
    return {name: float(v) for name, v in zip(joint_names, mean)}
