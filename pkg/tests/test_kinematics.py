import json

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from posetok import rotmath
from posetok.errors import DegenerateRotation, InvalidArgument, InvalidSkeleton
from posetok.kinematics import (
    BodyPose,
    aa_to_rotmat_t,
    fk_batch,
    fk_from_rot6d,
    fk_op,
    forward_kinematics,
    load_skeleton,
    skeleton_from_dict,
)
from posetok.nn import tensor as T

from .helpers import numeric_grad, rel_err


def homogeneous_fk(skel, body_rotmats, global_rotmat, translation):
    """Oracle: chain 4x4 homogeneous transforms joint by joint."""
    n = skel.num_joints
    mats = [None] * n
    root = np.eye(4)
    root[:3, :3] = global_rotmat
    root[:3, 3] = translation
    mats[0] = root
    for j in range(1, n):
        local = np.eye(4)
        local[:3, :3] = body_rotmats[j - 1]
        local[:3, 3] = skel.offsets[j]
        mats[j] = mats[skel.parents[j]] @ local
    return np.array([m[:3, 3] for m in mats])


def chain_doc(parents, offsets=None):
    offsets = offsets or [[0.0, 0.1 * i, 0.0] for i in range(len(parents))]
    return {
        "joints": [{"name": f"j{i}", "parent": p, "offset": o} for i, (p, o) in enumerate(zip(parents, offsets))]
    }


class TestSkeleton:
    def test_default_has_22_joints_parents_first(self, skel):
        assert skel.num_joints == 22 and skel.num_bones == 21
        assert skel.parents[0] == -1
        assert all(skel.parents[j] < j for j in range(1, 22))
        assert len(skel.body_joint_names) == 21

    def test_reorders_parents_first(self):
        doc = {
            "joints": [
                {"name": "hand", "parent": 2, "offset": [0, 0, 1]},
                {"name": "root", "parent": -1, "offset": [9, 9, 9]},
                {"name": "arm", "parent": 1, "offset": [0, 1, 0]},
            ]
        }
        sk = skeleton_from_dict(doc)
        assert sk.names == ("root", "arm", "hand")
        assert sk.parents.tolist() == [-1, 0, 1]
        np.testing.assert_array_equal(sk.offsets[0], 0.0)

    @pytest.mark.parametrize(
        "doc",
        [
            {"joints": []},
            chain_doc([-1, -1]),
            chain_doc([-1, 1]),
            chain_doc([-1, 2, 1]),
            chain_doc([-1, 5]),
            {"joints": [{"name": "a", "parent": -1, "offset": [0, 0, 0]}, {"name": "a", "parent": 0, "offset": [0, 0, 0]}]},
            {"joints": [{"name": "a", "parent": -1, "offset": [0, 0]}]},
            {"joints": [{"name": "a", "parent": -1, "offset": [0, np.nan, 0]}]},
            {"bones": []},
        ],
        ids=["empty", "two-roots", "self-parent", "cycle", "bad-parent", "dup-name", "short-offset", "nan", "no-joints"],
    )
    def test_invalid(self, doc):
        with pytest.raises(InvalidSkeleton):
            skeleton_from_dict(doc)

    def test_json_roundtrip(self, skel, tmp_path):
        path = tmp_path / "sk.json"
        path.write_text(json.dumps(skel.to_json()))
        back = load_skeleton(path)
        assert back.names == skel.names
        np.testing.assert_array_equal(back.offsets, skel.offsets)

    def test_load_rejects_broken_json(self, tmp_path):
        path = tmp_path / "sk.json"
        path.write_text("{")
        with pytest.raises(InvalidSkeleton):
            load_skeleton(path)


class TestBodyPose:
    def test_identity_fk_is_rest_pose(self, skel):
        j = forward_kinematics(BodyPose.identity(), skel)
        expected = np.zeros((22, 3))
        for i in range(1, 22):
            expected[i] = expected[skel.parents[i]] + skel.offsets[i]
        np.testing.assert_allclose(j, expected, atol=1e-15)

    def test_axis_angle_roundtrip(self, rng):
        aa = rng.uniform(-1, 1, size=(21, 3))
        pose = BodyPose.from_axis_angle(aa, [0.1, 0.2, 0.3], [1, 2, 3])
        body, glob, trans = pose.to_axis_angle()
        np.testing.assert_allclose(body, aa, atol=1e-12)
        np.testing.assert_allclose(glob, [0.1, 0.2, 0.3], atol=1e-12)
        np.testing.assert_array_equal(trans, [1, 2, 3])

    def test_rejects_degenerate_6d(self):
        with pytest.raises(DegenerateRotation):
            BodyPose(np.zeros((21, 6)), [1, 0, 0, 0, 1, 0], np.zeros(3))

    def test_rejects_bad_shapes(self):
        with pytest.raises(InvalidArgument):
            BodyPose(np.zeros((21, 3)), [1, 0, 0, 0, 1, 0], np.zeros(3))

    def test_wrong_joint_count(self, skel):
        with pytest.raises(InvalidArgument, match="expected 21"):
            forward_kinematics(BodyPose.identity(20), skel)


class TestForwardKinematics:
    @given(
        arrays(np.float64, (21, 3), elements=st.floats(-np.pi, np.pi)),
        arrays(np.float64, 3, elements=st.floats(-np.pi, np.pi)),
        arrays(np.float64, 3, elements=st.floats(-5, 5)),
    )
    def test_matches_homogeneous_oracle(self, skel, body, glob, trans):
        pose = BodyPose.from_axis_angle(body, glob, trans)
        expected = homogeneous_fk(skel, rotmath.aa_to_rotmat(body), rotmath.aa_to_rotmat(glob), trans)
        np.testing.assert_allclose(forward_kinematics(pose, skel), expected, atol=1e-12)

    def test_bone_lengths_preserved(self, skel, rng):
        pose = BodyPose.from_axis_angle(rng.normal(size=(21, 3)), rng.normal(size=3))
        j = forward_kinematics(pose, skel)
        lengths = np.linalg.norm(j[1:] - j[skel.parents[1:]], axis=-1)
        np.testing.assert_allclose(lengths, np.linalg.norm(skel.offsets[1:], axis=-1), atol=1e-12)

    def test_tensor_path_matches_numpy(self, skel, rng):
        r6 = rotmath.aa_to_rot6d(rng.normal(size=(3, 21, 3)))
        glob = rotmath.random_rotmats(rng, 3)
        trans = rng.normal(size=(3, 3))
        out = fk_from_rot6d(r6, glob, skel, trans).data
        np.testing.assert_allclose(out, fk_batch(r6, glob, trans, skel), atol=1e-12)

    def test_fk_op_gradient(self, rng):
        sk = skeleton_from_dict(chain_doc([-1, 0, 1, 1], [[0, 0, 0], [0, 1, 0], [0.5, 0, 0.2], [0, 0, 1]]))
        local0 = rotmath.random_rotmats(rng, 3)[None]
        glob0 = rotmath.random_rotmats(rng, 1)
        w = rng.normal(size=(1, 4, 3))

        def f_local(x):
            return float(np.sum(w * fk_op(T.Tensor(x), T.Tensor(glob0), sk).data))

        loc = T.Tensor(local0, requires_grad=True)
        glb = T.Tensor(glob0, requires_grad=True)
        T.tsum(fk_op(loc, glb, sk) * w).backward()
        assert rel_err(loc.grad, numeric_grad(f_local, local0)) < 1e-7
        g_glob = numeric_grad(lambda x: float(np.sum(w * fk_op(T.Tensor(local0), T.Tensor(x), sk).data)), glob0)
        assert rel_err(glb.grad, g_glob) < 1e-7


class TestRodriguesTensor:
    @given(arrays(np.float64, (4, 3), elements=st.floats(-3, 3)).filter(lambda a: np.all(np.linalg.norm(a, axis=-1) > 1e-3)))
    def test_matches_numpy(self, aa):
        np.testing.assert_allclose(aa_to_rotmat_t(aa).data, rotmath.aa_to_rotmat(aa), atol=1e-14)

    def test_gradient(self, rng):
        aa0 = rng.normal(size=(2, 3))
        w = rng.normal(size=(2, 3, 3))
        x = T.Tensor(aa0, requires_grad=True)
        T.tsum(aa_to_rotmat_t(x) * w).backward()
        num = numeric_grad(lambda a: float(np.sum(w * rotmath.aa_to_rotmat(a))), aa0)
        assert rel_err(x.grad, num) < 1e-7
