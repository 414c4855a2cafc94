"""Perspective and weak-perspective projection, keypoint normalization and
the fixed-focal camera used to reproduce regression-style camera bias."""

import json
from dataclasses import dataclass, field

import numpy as np

from .errors import BehindCamera, InvalidArgument
from .nn import tensor as T
from .nn.optim import AdamState, adam_step

MIN_DEPTH = 1e-6
# fixed focal length of 5000 px for a 256 px crop
CROP_FOCAL = 5000.0
CROP_RESOLUTION = 256.0


@dataclass
class PerspectiveCamera:
    focal: float
    principal: np.ndarray
    rotation: np.ndarray = field(default_factory=lambda: np.eye(3))
    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        self.focal = float(self.focal)
        self.principal = np.asarray(self.principal, dtype=np.float64).reshape(2)
        self.rotation = np.asarray(self.rotation, dtype=np.float64).reshape(3, 3)
        self.translation = np.asarray(self.translation, dtype=np.float64).reshape(3)
        if not self.focal > 0:
            raise InvalidArgument(f"focal must be positive, got {self.focal}")

    def to_camera_frame(self, points):
        return np.asarray(points, dtype=np.float64) @ self.rotation.T + self.translation

    def to_json(self):
        return {
            "type": "perspective",
            "focal": self.focal,
            "principal": self.principal.tolist(),
            "rotation": self.rotation.tolist(),
            "translation": self.translation.tolist(),
        }


@dataclass
class WeakPerspectiveCamera:
    scale: float
    offset: np.ndarray = field(default_factory=lambda: np.zeros(2))

    def __post_init__(self):
        self.scale = float(self.scale)
        self.offset = np.asarray(self.offset, dtype=np.float64).reshape(2)
        if not self.scale > 0:
            raise InvalidArgument(f"scale must be positive, got {self.scale}")

    def to_json(self):
        return {"type": "weak", "scale": self.scale, "offset": self.offset.tolist()}


def camera_from_json(doc):
    kind = doc.get("type")
    if kind == "perspective":
        return PerspectiveCamera(
            focal=doc["focal"],
            principal=doc["principal"],
            rotation=doc.get("rotation", np.eye(3)),
            translation=doc.get("translation", np.zeros(3)),
        )
    if kind == "weak":
        return WeakPerspectiveCamera(scale=doc["scale"], offset=doc.get("offset", (0.0, 0.0)))
    raise InvalidArgument(f"unknown camera type {kind!r}")


def load_camera(path):
    with open(path, encoding="utf-8") as fh:
        return camera_from_json(json.load(fh))


@dataclass
class Keypoints2D:
    points: np.ndarray  # (J, 2)
    confidence: np.ndarray = None  # (J,)

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=np.float64)
        if self.confidence is None:
            self.confidence = np.ones(self.points.shape[:-1])
        self.confidence = np.asarray(self.confidence, dtype=np.float64)

    def __len__(self):
        return self.points.shape[0]


def project_perspective(j3d, cam):
    """Pinhole projection. Raises :class:`BehindCamera` listing the joints
    whose camera-frame depth is not above 1e-6 m."""
    pc = cam.to_camera_frame(j3d)
    bad = np.flatnonzero(~(pc[..., 2] > MIN_DEPTH))
    if bad.size:
        raise BehindCamera(bad)
    uv = cam.focal * pc[..., :2] / pc[..., 2:3] + cam.principal
    return Keypoints2D(uv)


def project_weak_perspective(j3d, cam):
    j3d = np.asarray(j3d, dtype=np.float64)
    return Keypoints2D(cam.scale * j3d[..., :2] + cam.offset)


def normalize_keypoints(kp, image_width, image_height):
    """Map pixels to ``(p - (w/2, h/2)) / w``; both axes use the width."""
    if not image_width > 0:
        raise InvalidArgument(f"image width must be positive, got {image_width}")
    center = np.array([image_width / 2.0, image_height / 2.0])
    return Keypoints2D((kp.points - center) / image_width, kp.confidence.copy())


def denormalize_keypoints(kp, image_width, image_height):
    if not image_width > 0:
        raise InvalidArgument(f"image width must be positive, got {image_width}")
    center = np.array([image_width / 2.0, image_height / 2.0])
    return Keypoints2D(kp.points * image_width + center, kp.confidence.copy())


def project_perspective_t(points, focal, principal, translation):
    """Differentiable projection of camera-frame points (Tensor (..., J, 3))
    shifted by ``translation`` (Tensor (3,))."""
    pc = points + translation
    z = pc[..., 2:3]
    return pc[..., 0:2] / z * focal + np.asarray(principal)


def fit_translation(points_cam, target_uv, focal, principal, init, steps=100, lr=1e-3):
    """Refine a camera translation so that ``points_cam + t`` projects onto
    ``target_uv`` (pixels) in the least-squares sense.

    Gradient steps (Adam) run in the well-conditioned parameters
    ``(tx/tz, ty/tz, log tz)``. Returns the translation (3,).
    """
    init = np.asarray(init, dtype=np.float64)
    params = np.array([init[0] / init[2], init[1] / init[2], np.log(init[2])])
    state = AdamState(learning_rate=lr)
    pts = T.Tensor(np.asarray(points_cam, dtype=np.float64))
    target = np.asarray(target_uv, dtype=np.float64)
    scale = 1.0 / focal
    for _ in range(steps):
        p = T.Tensor(params, requires_grad=True)
        tz = T.exp(p[2:3])
        trans = T.concat([p[0:1] * tz, p[1:2] * tz, tz])
        uv = project_perspective_t(pts, focal, principal, trans)
        res = (uv - target) * scale
        loss = T.mean(res * res)
        loss.backward()
        adam_step(state, [params], [p.grad])
    tz = np.exp(params[2])
    return np.array([params[0] * tz, params[1] * tz, tz])


def linear_translation_init(points_cam, target_uv, focal, principal):
    """Closed-form translation from the linearized projection equations
    ``f (x + tx) - (u - cx)(z + tz) = 0`` (and likewise for y)."""
    pts = np.asarray(points_cam, dtype=np.float64)
    du = np.asarray(target_uv, dtype=np.float64) - principal
    n = pts.shape[0]
    a = np.zeros((2 * n, 3))
    rhs = np.zeros(2 * n)
    a[0::2, 0] = focal
    a[0::2, 2] = -du[:, 0]
    rhs[0::2] = du[:, 0] * pts[:, 2] - focal * pts[:, 0]
    a[1::2, 1] = focal
    a[1::2, 2] = -du[:, 1]
    rhs[1::2] = du[:, 1] * pts[:, 2] - focal * pts[:, 1]
    sol, *_ = np.linalg.lstsq(a, rhs, rcond=None)
    return sol


def keypoint_bbox(uv):
    lo = uv.min(axis=0)
    hi = uv.max(axis=0)
    return lo, hi


class FixedFocalCamera:
    """Wrong-camera factory: a fixed-focal perspective camera in the style of
    crop-based regressors (``focal = 5000 / 256 * crop_size``), principal
    point at the crop center, no camera rotation relative to the body's
    camera frame, and a translation fitted to the true 2D keypoints.

    ``focal_multiplier`` replaces the crop rule with ``k * true_focal`` when
    set, for controlled mismatch sweeps.
    """

    def __init__(self, crop_scale=1.2, focal_multiplier=None, fit_steps=100):
        self.crop_scale = crop_scale
        self.focal_multiplier = focal_multiplier
        self.fit_steps = fit_steps

    def __call__(self, j3d_world, gt_cam, image_size=None):
        target = project_perspective(j3d_world, gt_cam).points
        lo, hi = keypoint_bbox(target)
        center = 0.5 * (lo + hi)
        crop = self.crop_scale * float(np.max(hi - lo))
        if self.focal_multiplier is None:
            focal = CROP_FOCAL / CROP_RESOLUTION * crop
        else:
            focal = self.focal_multiplier * gt_cam.focal
        # body in the true camera's orientation; the wrong camera only translates
        pts = np.asarray(j3d_world) @ gt_cam.rotation.T
        root = pts[0].copy()
        rel = pts - root
        init = linear_translation_init(rel, target, focal, center)
        if init[2] <= 0:
            init = np.array([0.0, 0.0, focal / crop * 2.0])
        trans = fit_translation(rel, target, focal, center, init, steps=self.fit_steps)
        # world-frame camera: R p + (trans - R p_root) = rel + trans
        return PerspectiveCamera(focal, center, gt_cam.rotation, trans - root)


def matched_camera(j3d_world, gt_cam, image_size=None):
    """Wrong-camera factory that returns the ground-truth camera."""
    return gt_cam
