"""VQ-VAE training objective."""

import numpy as np

from ..kinematics import fk_from_rot6d
from ..nn import tensor as T


def identity_orient(batch, dtype=np.float64):
    return np.broadcast_to(np.eye(3, dtype=dtype), (batch, 3, 3)).copy()


def reconstruction_loss(pose_g, recon, skel, j3d_g=None):
    """L1 on the 6D parameters plus L1 on FK joints (identity global
    orientation, root at the origin). Returns ``(loss, pose_term, joint_term)``."""
    pose_g = np.asarray(pose_g)
    bsz = pose_g.shape[0]
    glob = identity_orient(bsz, recon.dtype)
    if j3d_g is None:
        with T.no_grad():
            j3d_g = fk_from_rot6d(T.Tensor(pose_g, dtype=recon.dtype), T.Tensor(glob), skel).data
    j3d = fk_from_rot6d(recon, T.Tensor(glob), skel)
    pose_term = T.l1_loss(recon, pose_g.astype(recon.dtype))
    joint_term = T.l1_loss(j3d, np.asarray(j3d_g, dtype=recon.dtype))
    return pose_term + joint_term, pose_term, joint_term


def vq_loss(pose_g, recon, z, z_hat, skel, cfg):
    """``lambda_re * L_re + lambda_e * |sg[z] - e|^2 + lambda_c * |z - sg[e]|^2``.

    The embedding and commitment terms are mean squared errors. Returns the
    total loss tensor and a dict of float parts for logging.
    """
    l_re, l_pose, l_joint = reconstruction_loss(pose_g, recon, skel)
    l_e = T.l2sq_loss(T.stop_gradient(z), z_hat)
    l_c = T.l2sq_loss(z, T.stop_gradient(z_hat))
    total = cfg.lambda_re * l_re + cfg.lambda_e * l_e + cfg.lambda_c * l_c
    parts = {
        "total": float(total.data),
        "recon": float(l_re.data),
        "recon_pose": float(l_pose.data),
        "recon_joints": float(l_joint.data),
        "embedding": float(l_e.data),
        "commitment": float(l_c.data),
    }
    return total, parts
