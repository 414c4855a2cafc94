"""Camera-bias experiments on synthetic scenes.

Two experiments show why fitting 2D keypoints under a wrong camera distorts
3D pose:

* :func:`camera_mismatch_experiment` projects ground-truth bodies with a
  fixed-focal camera (translation fitted to the true keypoints) and scores the
  result with PCK against the true projection.
* :func:`adversarial_attack` keeps the projection under that camera close to
  the true keypoints while pushing the 3D joints away from the truth,
  showing that good 2D alignment says little about 3D accuracy.
"""

import csv
import json
import logging
from dataclasses import asdict, dataclass, field

import numpy as np

from .camera import FixedFocalCamera, PerspectiveCamera, project_perspective, project_perspective_t
from .errors import BehindCamera, InvalidArgument
from .kinematics import BodyPose, aa_to_rotmat_t, default_skeleton, fk_op, forward_kinematics
from .metrics import mpjpe, pck
from .nn import tensor as T
from .nn.optim import Adam

log = logging.getLogger(__name__)

IMAGE_SIZE = (1000.0, 1000.0)
# squared pixels added under the per-joint 2D distance so it is smooth at zero
SMOOTH_PX2 = 1.0
# generated bodies stay within this fraction of the half-image around the center
FRAME_FILL = 0.95


@dataclass
class SyntheticScene:
    gt_pose: BodyPose
    gt_cam: PerspectiveCamera
    image_size: np.ndarray

    def __post_init__(self):
        self.image_size = np.asarray(self.image_size, dtype=np.float64).reshape(2)

    def joints(self, skel):
        return forward_kinematics(self.gt_pose, skel)

    def keypoints(self, skel):
        return project_perspective(self.joints(skel), self.gt_cam).points


@dataclass
class AttackConfig:
    w_2d: float = 4.0
    w_3d: float = 40.5
    margin: float = 20.0
    iterations: int = 200
    step_size: float = 1e-2
    decay: float = 0.999
    unfloored: bool = False

    def __post_init__(self):
        if self.w_2d <= 0 or self.w_3d < 0:
            raise InvalidArgument("attack weights must be positive (w_3d may be 0)")
        if self.iterations < 1 or self.step_size <= 0:
            raise InvalidArgument("iterations and step size must be positive")


# -- scenes -------------------------------------------------------------------
def _walking_pose(rng, skel):
    """Axis-angle body rotations (N, 3) of a standing or mid-stride person
    with the arms hanging down."""
    names = skel.body_joint_names
    aa = rng.normal(scale=0.05, size=(len(names), 3))
    idx = {n: i for i, n in enumerate(names)}
    stride = rng.uniform(0.0, 0.5)
    phase = rng.uniform(0.0, 2.0 * np.pi)
    swing = stride * np.sin(phase)
    # negative x-rotation swings a leg forward (+z)
    aa[idx["LHip"], 0] += -swing
    aa[idx["RHip"], 0] += swing
    aa[idx["LKnee"], 0] += stride * max(0.0, np.cos(phase)) * 1.2 + rng.uniform(0.0, 0.1)
    aa[idx["RKnee"], 0] += stride * max(0.0, -np.cos(phase)) * 1.2 + rng.uniform(0.0, 0.1)
    # arms from the rest (T) pose down to the sides, swinging against the legs
    drop = rng.uniform(1.1, 1.4)
    aa[idx["LShoulder"]] += (0.6 * swing, 0.0, -drop)
    aa[idx["RShoulder"]] += (-0.6 * swing, 0.0, drop)
    aa[idx["LElbow"], 1] += rng.uniform(0.0, 0.4)
    aa[idx["RElbow"], 1] -= rng.uniform(0.0, 0.4)
    return aa


def _look_camera(height, pitch, focal, image_size):
    """Camera at (0, height, 0) looking along -z, tilted down by ``-pitch``
    (pitch <= 0). Camera axes: x right, y down, z forward."""
    fwd = np.array([0.0, np.sin(pitch), -np.cos(pitch)])
    right = np.cross(fwd, [0.0, 1.0, 0.0])
    right /= np.linalg.norm(right)
    down = np.cross(fwd, right)
    rot = np.stack([right, down, fwd])
    center = np.array([0.0, height, 0.0])
    principal = np.asarray(image_size, dtype=np.float64) / 2.0
    return PerspectiveCamera(focal, principal, rot, -rot @ center)


def generate_scenes(n, seed, skel=None, image_size=IMAGE_SIZE):
    """``n`` scenes of a person standing on the floor 2-5 m in front of an
    eye-height camera (1.5-1.7 m, pitch in [-15, 0] degrees, focal 800-1500
    px), turned by up to 60 degrees from facing the camera. The focal length
    is lowered for scenes where the body would otherwise leave the frame."""
    if n < 1:
        raise InvalidArgument("need at least one scene")
    skel = default_skeleton() if skel is None else skel
    rng = np.random.default_rng(seed)
    scenes = []
    while len(scenes) < n:
        body = _walking_pose(rng, skel)
        yaw = rng.uniform(-np.pi / 3, np.pi / 3)
        pose = BodyPose.from_axis_angle(body, (0.0, yaw, 0.0))
        feet = forward_kinematics(pose, skel)[:, 1].min()
        dist = rng.uniform(2.0, 5.0)
        lateral = rng.uniform(-0.5, 0.5)
        pose.root_translation = np.array([lateral, -feet, -dist])
        cam = _look_camera(
            height=rng.uniform(1.5, 1.7),
            pitch=np.deg2rad(rng.uniform(-15.0, 0.0)),
            focal=rng.uniform(800.0, 1500.0),
            image_size=image_size,
        )
        try:
            kp = project_perspective(forward_kinematics(pose, skel), cam).points
        except BehindCamera:  # pragma: no cover - cannot happen at these distances
            continue
        # shorten the focal length when needed so the whole body is in frame
        reach = np.max(np.abs(kp - cam.principal) / (FRAME_FILL * cam.principal))
        if reach > 1.0:
            cam.focal /= reach
        scenes.append(SyntheticScene(pose, cam, image_size))
    return scenes


# -- mismatch experiment --------------------------------------------------------
@dataclass
class MismatchReport:
    pck05: float
    pck10: float
    mean_error_px: float
    mean_error_norm: float
    per_joint_error_px: dict
    num_scenes: int
    excluded: int

    def to_json(self):
        return asdict(self)


def camera_mismatch_experiment(scenes, wrong_cam_factory=None, skel=None):
    """Score ground-truth bodies projected by a wrong camera against their
    true projections.

    ``wrong_cam_factory(j3d_world, gt_cam, image_size)`` defaults to
    :class:`~posetok.camera.FixedFocalCamera`. PCK thresholds are 0.5 and
    1.0 times a tenth of the keypoint bounding-box diagonal. Scenes in which
    the wrong camera sees a joint behind it are excluded and counted.
    """
    scenes = list(scenes)
    if not scenes:
        raise InvalidArgument("need at least one scene")
    skel = default_skeleton() if skel is None else skel
    factory = FixedFocalCamera() if wrong_cam_factory is None else wrong_cam_factory
    p05, p10, errs, norm_errs = [], [], [], []
    excluded = 0
    for scene in scenes:
        j3d = scene.joints(skel)
        ref = project_perspective(j3d, scene.gt_cam).points
        try:
            uv = project_perspective(j3d, factory(j3d, scene.gt_cam, scene.image_size)).points
        except BehindCamera:
            excluded += 1
            continue
        p05.append(pck(uv, ref, 0.5))
        p10.append(pck(uv, ref, 1.0))
        err = np.linalg.norm(uv - ref, axis=-1)
        errs.append(err)
        norm_errs.append(err / scene.image_size[0])
    if not errs:
        raise InvalidArgument("every scene was excluded")
    errs = np.asarray(errs)
    return MismatchReport(
        pck05=float(np.mean(p05)),
        pck10=float(np.mean(p10)),
        mean_error_px=float(errs.mean()),
        mean_error_norm=float(np.mean(norm_errs)),
        per_joint_error_px={name: float(v) for name, v in zip(skel.names, errs.mean(axis=0))},
        num_scenes=len(errs),
        excluded=excluded,
    )


# -- adversarial attack -------------------------------------------------------
@dataclass
class AttackResult:
    trajectory: list = field(default_factory=list)  # dicts: iter, err2d, mpjpe, loss
    initial_err2d: float = 0.0
    aborted: bool = False

    def column(self, key):
        return np.array([row[key] for row in self.trajectory])

    def at(self, iteration):
        for row in self.trajectory:
            if row["iter"] == iteration:
                return row
        raise KeyError(iteration)


def _mean_err2d(uv, target, width):
    return float(np.mean(np.linalg.norm(uv - target, axis=-1)) / width)


def adversarial_attack(scene, cfg=None, skel=None, wrong_cam_factory=None):
    """Optimize body pose, global orientation and camera translation so the
    projection through the wrong camera stays on the true keypoints while
    the root-relative 3D joints move away from the truth.

    Objective per step, with the 2D distances in pixels and the 3D distances
    in meters, each averaged over joints::

        max(0, w_2d |proj - kp_true| - w_3d |J3D - J3D_true| + margin)

    The 3D distances are root-relative. Each 2D distance is computed as
    ``sqrt(d^2 + SMOOTH_PX2)`` so it has a gradient at zero residual.
    ``cfg.unfloored`` drops the ``max(0, .)``.

    Variables are the axis-angle body pose, the axis-angle global
    orientation and the translation as ``(tx, ty, log tz)``. They are updated
    by Adam with step size ``cfg.step_size``, decayed by ``cfg.decay`` per
    iteration. The run starts from the true pose and the wrong camera's
    fitted translation. Each trajectory row holds the mean per-joint 2D
    error in image widths and the MPJPE in mm.
    """
    cfg = AttackConfig() if cfg is None else cfg
    skel = default_skeleton() if skel is None else skel
    factory = FixedFocalCamera() if wrong_cam_factory is None else wrong_cam_factory
    j3d_gt = scene.joints(skel)
    kp_gt = project_perspective(j3d_gt, scene.gt_cam).points
    cam = factory(j3d_gt, scene.gt_cam, scene.image_size)
    width = float(scene.image_size[0])
    rot_t = cam.rotation.T
    rel_gt = j3d_gt - j3d_gt[0]

    body_aa, orient_aa, _ = scene.gt_pose.to_axis_angle()
    body = T.Tensor(body_aa, requires_grad=True)
    orient = T.Tensor(orient_aa, requires_grad=True)
    t0 = cam.rotation @ j3d_gt[0] + cam.translation
    # translation as (tx, ty, log tz): a step on the depth is a relative zoom
    tparam = T.Tensor(np.array([t0[0], t0[1], np.log(t0[2])]), requires_grad=True)
    opt = Adam([body, orient, tparam], lr=cfg.step_size)

    def forward():
        glob = aa_to_rotmat_t(T.reshape(orient, (1, 3)))
        rel = fk_op(aa_to_rotmat_t(T.reshape(body, (1,) + body.shape)), glob, skel)
        pts = T.reshape(rel, rel.shape[1:]) @ rot_t
        trans = T.concat([tparam[0:2], T.exp(tparam[2:3])])
        uv = project_perspective_t(pts, cam.focal, cam.principal, trans)
        d2 = uv - kp_gt
        d3 = T.reshape(rel, rel.shape[1:]) - rel_gt
        e2 = T.mean(T.sqrt(T.tsum(d2 * d2, axis=-1) + SMOOTH_PX2))
        e3 = T.mean(T.sqrt(T.tsum(d3 * d3, axis=-1) + 1e-12))
        raw = cfg.w_2d * e2 - cfg.w_3d * e3 + cfg.margin
        loss = raw if cfg.unfloored else T.maximum(raw, 0.0)
        return loss, uv.data, rel.data[0]

    result = AttackResult()
    with T.no_grad():
        _, uv0, _ = forward()
    result.initial_err2d = _mean_err2d(uv0, kp_gt, width)
    for it in range(1, cfg.iterations + 1):
        loss, _, _ = forward()
        if not np.isfinite(loss.data):
            log.warning("attack diverged at iteration %d", it)
            result.aborted = True
            break
        opt.zero_grad()
        loss.backward()
        opt.step()
        opt.lr = opt.lr * cfg.decay
        with T.no_grad():
            loss_after, uv, rel = forward()
        if not (np.all(np.isfinite(uv)) and np.all(np.isfinite(rel))):
            result.aborted = True
            break
        result.trajectory.append(
            {
                "iter": it,
                "err2d": _mean_err2d(uv, kp_gt, width),
                "mpjpe": mpjpe(rel, rel_gt),
                "loss": float(loss_after.data),
            }
        )
    return result


def attack_summary(results, checkpoints=(100, 200), mpjpe_target=100.0, err2d_factor=3.0):
    """Aggregate attack trajectories: per-checkpoint MPJPE means and the
    fraction of scenes that pass the 3D-error and 2D-alignment checks."""
    rows = []
    for res in results:
        if not res.trajectory:
            rows.append({"passed": False})
            continue
        last = res.trajectory[-1]
        err2d_max = float(res.column("err2d").max())
        row = {
            "initial_err2d": res.initial_err2d,
            "max_err2d": err2d_max,
            "final_mpjpe": last["mpjpe"],
            "aborted": res.aborted,
        }
        for c in checkpoints:
            row[f"mpjpe_{c}"] = res.at(c)["mpjpe"] if c <= last["iter"] else float("nan")
        lo, hi = checkpoints[0], checkpoints[-1]
        row["passed"] = bool(
            not res.aborted
            and last["mpjpe"] > mpjpe_target
            and err2d_max <= err2d_factor * res.initial_err2d
            and row[f"mpjpe_{hi}"] >= row[f"mpjpe_{lo}"]
        )
        rows.append(row)
    return {
        "num_scenes": len(rows),
        "pass_fraction": float(np.mean([r["passed"] for r in rows])),
        "mean_final_mpjpe": float(np.nanmean([r.get("final_mpjpe", np.nan) for r in rows])),
        **{
            f"mean_mpjpe_{c}": float(np.nanmean([r.get(f"mpjpe_{c}", np.nan) for r in rows]))
            for c in checkpoints
        },
        "scenes": rows,
    }


# -- reports ------------------------------------------------------------------
def write_trajectory_csv(path, result):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["iter", "err2d", "mpjpe"])
        for row in result.trajectory:
            writer.writerow([row["iter"], repr(row["err2d"]), repr(row["mpjpe"])])


def write_json(path, doc):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")


def svg_polyline_plot(series, title="", xlabel="", ylabel="", width=640, height=420):
    """Line plot as an SVG document string. ``series`` maps a label to
    ``(x, y)`` sequences; all series share the axes."""
    palette = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e"]
    margin = 60
    xs = np.concatenate([np.asarray(x, dtype=float) for x, _ in series.values()])
    ys = np.concatenate([np.asarray(y, dtype=float) for _, y in series.values()])
    x0, x1 = float(xs.min()), float(xs.max())
    y0, y1 = float(ys.min()), float(ys.max())
    x1 = x1 if x1 > x0 else x0 + 1.0
    y1 = y1 if y1 > y0 else y0 + 1.0

    def sx(v):
        return margin + (v - x0) / (x1 - x0) * (width - 2 * margin)

    def sy(v):
        return height - margin - (v - y0) / (y1 - y0) * (height - 2 * margin)

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" viewBox="0 0 {width} {height}">',
        f'<rect width="{width}" height="{height}" fill="white"/>',
        f'<line x1="{margin}" y1="{height - margin}" x2="{width - margin}" y2="{height - margin}" stroke="black"/>',
        f'<line x1="{margin}" y1="{margin}" x2="{margin}" y2="{height - margin}" stroke="black"/>',
        f'<text x="{width / 2}" y="{margin / 2}" text-anchor="middle" font-size="14">{title}</text>',
        f'<text x="{width / 2}" y="{height - 15}" text-anchor="middle" font-size="12">{xlabel}</text>',
        f'<text x="15" y="{height / 2}" text-anchor="middle" font-size="12" '
        f'transform="rotate(-90 15 {height / 2})">{ylabel}</text>',
    ]
    for v, anchor, xpos in ((x0, "start", margin), (x1, "end", width - margin)):
        parts.append(f'<text x="{xpos}" y="{height - margin + 15}" text-anchor="{anchor}" font-size="10">{v:.4g}</text>')
    for v in (y0, y1):
        parts.append(f'<text x="{margin - 5}" y="{sy(v):.1f}" text-anchor="end" font-size="10">{v:.4g}</text>')
    for k, (label, (x, y)) in enumerate(series.items()):
        color = palette[k % len(palette)]
        pts = " ".join(f"{sx(a):.2f},{sy(b):.2f}" for a, b in zip(x, y))
        parts.append(f'<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{pts}"/>')
        parts.append(
            f'<text x="{width - margin}" y="{margin + 15 * (k + 1)}" text-anchor="end" '
            f'font-size="11" fill="{color}">{label}</text>'
        )
    parts.append("</svg>")
    return "\n".join(parts) + "\n"
