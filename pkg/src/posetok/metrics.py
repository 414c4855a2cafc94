"""Pose metrics: MPJPE, Procrustes-aligned MPJPE and PCK.

3D inputs are in meters; MPJPE-style results are returned in millimeters.
"""

from dataclasses import dataclass

import numpy as np

from .errors import DegenerateConfiguration, InvalidArgument


@dataclass
class SimilarityTransform:
    scale: float
    rotation: np.ndarray
    translation: np.ndarray

    def apply(self, points):
        return self.scale * np.asarray(points) @ self.rotation.T + self.translation


def _pair(pred, gt):
    pred = np.asarray(pred, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    if pred.shape != gt.shape:
        raise InvalidArgument(f"joint sets differ in shape: {pred.shape} vs {gt.shape}")
    return pred, gt


def mpjpe(pred, gt, root=0):
    """Root-relative mean per-joint position error in millimeters."""
    pred, gt = _pair(pred, gt)
    pred = pred - pred[..., root : root + 1, :]
    gt = gt - gt[..., root : root + 1, :]
    return 1000.0 * float(np.mean(np.linalg.norm(pred - gt, axis=-1)))


def procrustes_align(pred, gt):
    """Similarity transform (s, R, t) minimizing sum |s R pred_i + t - gt_i|^2.

    Solved from the SVD of the cross-covariance; the sign of the last
    singular direction is flipped when needed so that det(R) = +1.
    """
    pred, gt = _pair(pred, gt)
    if pred.ndim != 2 or pred.shape[1] != 3:
        raise InvalidArgument(f"expected (J, 3) joint sets, got {pred.shape}")
    if pred.shape[0] < 3:
        raise DegenerateConfiguration("Procrustes alignment needs at least 3 joints")
    mu_p = pred.mean(axis=0)
    mu_g = gt.mean(axis=0)
    p = pred - mu_p
    g = gt - mu_g
    sv = np.linalg.svd(p, compute_uv=False)
    if sv[0] <= 1e-12 or sv[1] <= 1e-9 * sv[0]:
        raise DegenerateConfiguration("predicted joints are coincident or collinear")
    var_p = np.sum(p * p)
    cov = g.T @ p  # sum_i g_i p_i^T
    u, s, vt = np.linalg.svd(cov)
    d = np.ones(3)
    if np.linalg.det(u @ vt) < 0:
        d[-1] = -1.0
    rot = u @ np.diag(d) @ vt
    scale = float(np.sum(s * d) / var_p)
    trans = mu_g - scale * rot @ mu_p
    return SimilarityTransform(scale, rot, trans)


def pa_mpjpe(pred, gt):
    """MPJPE (mm) after optimal similarity alignment of ``pred`` onto ``gt``."""
    pred, gt = _pair(pred, gt)
    aligned = procrustes_align(pred, gt).apply(pred)
    return 1000.0 * float(np.mean(np.linalg.norm(aligned - gt, axis=-1)))


def pck_reference(gt2d):
    """10% of the diagonal of the keypoints' bounding box."""
    gt2d = np.asarray(gt2d, dtype=np.float64)
    return 0.1 * float(np.linalg.norm(gt2d.max(axis=0) - gt2d.min(axis=0)))


def pck(pred2d, gt2d, threshold_factor):
    """Fraction of keypoints with error below ``threshold_factor`` times the
    reference size (:func:`pck_reference`). ``PCK0.5`` is factor 0.5."""
    pred = np.asarray(getattr(pred2d, "points", pred2d), dtype=np.float64)
    gt = np.asarray(getattr(gt2d, "points", gt2d), dtype=np.float64)
    if pred.shape != gt.shape:
        raise InvalidArgument(f"keypoint sets differ in shape: {pred.shape} vs {gt.shape}")
    if pred.shape[0] == 0:
        raise InvalidArgument("empty keypoint set")
    ref = pck_reference(gt)
    if not ref > 0:
        raise InvalidArgument("reference size must be positive")
    err = np.linalg.norm(pred - gt, axis=-1)
    return float(np.mean(err < threshold_factor * ref))
