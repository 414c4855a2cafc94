"""Rotation representations on SO(3): axis-angle, rotation matrix and 6D.

All functions accept a single element or a batch (leading dimensions) and
return float64 arrays. Rotation matrices are the canonical representation;
the 6D form stores the first two matrix columns as ``[a, b]``.
"""

import numpy as np

from .errors import DegenerateRotation, InvalidArgument

SMALL_ANGLE = 1e-7


def skew(v):
    v = np.asarray(v, dtype=np.float64)
    out = np.zeros(v.shape[:-1] + (3, 3))
    out[..., 0, 1] = -v[..., 2]
    out[..., 0, 2] = v[..., 1]
    out[..., 1, 0] = v[..., 2]
    out[..., 1, 2] = -v[..., 0]
    out[..., 2, 0] = -v[..., 1]
    out[..., 2, 1] = v[..., 0]
    return out


def _vee_antisym(r):
    # sin(angle) * axis, read from the antisymmetric part of r
    return 0.5 * np.stack(
        [r[..., 2, 1] - r[..., 1, 2], r[..., 0, 2] - r[..., 2, 0], r[..., 1, 0] - r[..., 0, 1]],
        axis=-1,
    )


def aa_to_rotmat(aa):
    """Rodrigues' formula. Below an angle of 1e-7 the second-order Taylor
    expansion ``I + K + K^2 / 2`` is used instead."""
    aa = np.asarray(aa, dtype=np.float64)
    if aa.shape[-1] != 3:
        raise InvalidArgument(f"axis-angle must have trailing dimension 3, got {aa.shape}")
    if not np.all(np.isfinite(aa)):
        raise InvalidArgument("axis-angle contains non-finite values")
    angle = np.linalg.norm(aa, axis=-1)[..., None, None]
    k = skew(aa)
    k2 = k @ k
    small = angle < SMALL_ANGLE
    safe = np.where(small, 1.0, angle)
    sin_term = np.where(small, 1.0, np.sin(safe) / safe)
    cos_term = np.where(small, 0.5, (1.0 - np.cos(safe)) / safe**2)
    return np.eye(3) + sin_term * k + cos_term * k2


def is_rotmat(r, tol=1e-6):
    r = np.asarray(r, dtype=np.float64)
    if r.shape[-2:] != (3, 3) or not np.all(np.isfinite(r)):
        return False
    gram = np.swapaxes(r, -1, -2) @ r
    return bool(
        np.all(np.abs(gram - np.eye(3)) <= tol) and np.all(np.abs(np.linalg.det(r) - 1.0) <= tol)
    )


def _canonical_sign(axis):
    # flip so the first component that is not ~0 is positive
    flat = axis.reshape(-1, 3)
    for row in flat:
        nz = np.flatnonzero(np.abs(row) > 1e-12)
        if nz.size and row[nz[0]] < 0:
            row *= -1.0
    return flat.reshape(axis.shape)


def rotmat_to_aa(r):
    """Inverse of :func:`aa_to_rotmat` with the angle in ``[0, pi]``.

    For a rotation by exactly pi the axis is ambiguous; the one whose first
    nonzero component is positive is returned.
    """
    r = np.asarray(r, dtype=np.float64)
    if not is_rotmat(r, tol=1e-6):
        raise InvalidArgument("input is not a rotation matrix within 1e-6")
    v = _vee_antisym(r)
    sin_a = np.linalg.norm(v, axis=-1)
    cos_a = 0.5 * (np.trace(r, axis1=-2, axis2=-1) - 1.0)
    angle = np.arctan2(sin_a, cos_a)

    # generic branch: axis = v / sin
    safe_sin = np.where(sin_a > 0, sin_a, 1.0)
    axis = v / safe_sin[..., None]

    # near pi the antisymmetric part vanishes; read the axis from the symmetric part
    near_pi = cos_a < -0.5
    if np.any(near_pi):
        sym = 0.5 * (r + np.swapaxes(r, -1, -2))
        outer = (sym - cos_a[..., None, None] * np.eye(3)) / (1.0 - cos_a)[..., None, None]
        diag = np.diagonal(outer, axis1=-2, axis2=-1)
        col = np.argmax(diag, axis=-1)
        pick = np.take_along_axis(outer, col[..., None, None], axis=-1)[..., 0]
        pick = pick / np.linalg.norm(pick, axis=-1, keepdims=True)
        # sign from sin(angle) * axis; at exactly pi fall back to the canonical sign
        dot = np.sum(pick * v, axis=-1)
        exact_pi = np.abs(dot) < 1e-14
        pick = np.where((dot < 0)[..., None], -pick, pick)
        if np.any(exact_pi & near_pi):
            pick = np.where((exact_pi & near_pi)[..., None], _canonical_sign(pick.copy()), pick)
        axis = np.where(near_pi[..., None], pick, axis)

    small = angle < SMALL_ANGLE
    # tiny angle: v ~ angle * axis already
    return np.where(small[..., None], v, axis * angle[..., None])


def rot6d_to_rotmat(r6):
    """Gram-Schmidt decode of ``[a, b]`` into a rotation matrix with columns
    ``a/|a|``, the normalized part of ``b`` orthogonal to it, and their cross."""
    r6 = np.asarray(r6, dtype=np.float64)
    if r6.shape[-1] != 6:
        raise InvalidArgument(f"6D rotation must have trailing dimension 6, got {r6.shape}")
    a, b = r6[..., :3], r6[..., 3:]
    na = np.linalg.norm(a, axis=-1, keepdims=True)
    if np.any(na <= 1e-8):
        raise DegenerateRotation("first 6D column has (near) zero norm")
    c1 = a / na
    u = b - np.sum(c1 * b, axis=-1, keepdims=True) * c1
    nu = np.linalg.norm(u, axis=-1, keepdims=True)
    if np.any(nu <= 1e-8 * np.maximum(1.0, np.linalg.norm(b, axis=-1, keepdims=True))):
        raise DegenerateRotation("6D columns are parallel")
    c2 = u / nu
    c3 = np.cross(c1, c2)
    return np.stack([c1, c2, c3], axis=-1)


def rotmat_to_rot6d(r):
    r = np.asarray(r, dtype=np.float64)
    return np.concatenate([r[..., :, 0], r[..., :, 1]], axis=-1)


def aa_to_rot6d(aa):
    return rotmat_to_rot6d(aa_to_rotmat(aa))


def rot6d_to_aa(r6):
    return rotmat_to_aa(rot6d_to_rotmat(r6))


def geodesic_distance(r1, r2):
    """Angle (radians) of the relative rotation ``r1^T r2``.

    Equal to ``arccos((trace(r1^T r2) - 1) / 2)`` clamped to [-1, 1], but
    evaluated through ``atan2`` so it stays accurate near 0 and pi.
    """
    r1 = np.asarray(r1, dtype=np.float64)
    r2 = np.asarray(r2, dtype=np.float64)
    rel = np.swapaxes(r1, -1, -2) @ r2
    cos_a = np.clip(0.5 * (np.trace(rel, axis1=-2, axis2=-1) - 1.0), -1.0, 1.0)
    sin_a = np.linalg.norm(_vee_antisym(rel), axis=-1)
    return np.arctan2(sin_a, cos_a)


def random_rotmats(rng, n):
    """Uniformly distributed rotations (via normalized Gaussian quaternions)."""
    q = rng.normal(size=(n, 4))
    q /= np.linalg.norm(q, axis=-1, keepdims=True)
    w, x, y, z = q.T
    return np.stack(
        [
            np.stack([1 - 2 * (y * y + z * z), 2 * (x * y - z * w), 2 * (x * z + y * w)], -1),
            np.stack([2 * (x * y + z * w), 1 - 2 * (x * x + z * z), 2 * (y * z - x * w)], -1),
            np.stack([2 * (x * z - y * w), 2 * (y * z + x * w), 1 - 2 * (x * x + y * y)], -1),
        ],
        axis=-2,
    )
