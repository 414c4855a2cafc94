import csv
import json
import xml.etree.ElementTree as ET

import numpy as np
import pytest

from posetok import biaslab
from posetok.camera import FixedFocalCamera, matched_camera, project_perspective
from posetok.errors import InvalidArgument


@pytest.fixture(scope="module")
def scenes():
    return biaslab.generate_scenes(8, seed=5)


class TestScenes:
    def test_deterministic(self):
        a = biaslab.generate_scenes(3, seed=9)
        b = biaslab.generate_scenes(3, seed=9)
        for s, t in zip(a, b):
            np.testing.assert_array_equal(s.gt_pose.rot6d, t.gt_pose.rot6d)
            np.testing.assert_array_equal(s.gt_cam.translation, t.gt_cam.translation)

    def test_geometry(self, scenes, skel):
        for s in scenes:
            j = s.joints(skel)
            # feet on the floor, person standing upright in front of the camera
            assert j[:, 1].min() == pytest.approx(0.0, abs=1e-12)
            assert 1.3 < j[:, 1].max() < 1.9
            center = -s.gt_cam.rotation.T @ s.gt_cam.translation
            assert 1.5 <= center[1] <= 1.7
            assert 2.0 <= np.linalg.norm(j[0, [0, 2]] - center[[0, 2]]) <= 5.2

    def test_keypoints_inside_image(self, scenes, skel):
        for s in scenes:
            kp = s.keypoints(skel)
            assert np.all(kp >= 25 - 1e-9) and np.all(kp <= 975 + 1e-9)

    def test_ankles_below_hips_in_image(self, skel):
        # image y grows downwards; frontal scenes only
        many = biaslab.generate_scenes(200, seed=11)
        ok = []
        for s in many:
            _, orient, _ = s.gt_pose.to_axis_angle()
            if abs(orient[1]) > np.pi / 6:
                continue
            kp = s.keypoints(skel)
            ok.append(min(kp[skel.index("LAnkle"), 1], kp[skel.index("RAnkle"), 1]) > max(kp[skel.index("LHip"), 1], kp[skel.index("RHip"), 1]))
        assert len(ok) > 50 and np.mean(ok) >= 0.99

    def test_rejects_empty(self):
        with pytest.raises(InvalidArgument):
            biaslab.generate_scenes(0, seed=0)


class TestMismatch:
    def test_matched_camera_is_perfect(self, scenes, skel):
        rep = biaslab.camera_mismatch_experiment(scenes, matched_camera, skel)
        assert rep.pck05 == 1.0 and rep.pck10 == 1.0
        assert rep.mean_error_px == 0.0

    def test_fixed_focal_camera_misaligns(self, scenes, skel):
        rep = biaslab.camera_mismatch_experiment(scenes, FixedFocalCamera(), skel)
        assert rep.mean_error_px > 0
        assert rep.pck10 >= rep.pck05
        assert rep.num_scenes == 8 and rep.excluded == 0
        assert set(rep.per_joint_error_px) == set(skel.names)
        assert rep.mean_error_norm == pytest.approx(rep.mean_error_px / 1000.0)

    def test_larger_focal_mismatch_larger_error(self, skel):
        sc = biaslab.generate_scenes(30, seed=4)
        errs = [
            biaslab.camera_mismatch_experiment(sc, FixedFocalCamera(focal_multiplier=k), skel).mean_error_px
            for k in (2.0, 4.0, 8.0)
        ]
        assert errs[0] < errs[1] < errs[2]

    def test_error_matches_direct_computation(self, scenes, skel):
        s = scenes[0]
        rep = biaslab.camera_mismatch_experiment([s], FixedFocalCamera(), skel)
        j = s.joints(skel)
        uv = project_perspective(j, FixedFocalCamera()(j, s.gt_cam)).points
        assert rep.mean_error_px == pytest.approx(np.mean(np.linalg.norm(uv - s.keypoints(skel), axis=-1)))

    def test_report_is_json(self, scenes, skel):
        doc = biaslab.camera_mismatch_experiment(scenes[:2], None, skel).to_json()
        assert json.loads(json.dumps(doc)) == doc

    def test_empty(self):
        with pytest.raises(InvalidArgument):
            biaslab.camera_mismatch_experiment([])


@pytest.fixture(scope="module")
def default_run(scenes, skel):
    return biaslab.adversarial_attack(scenes[0], biaslab.AttackConfig(iterations=120), skel)


class TestAttack:
    def test_trajectory_rows(self, default_run):
        assert [r["iter"] for r in default_run.trajectory] == list(range(1, 121))
        assert not default_run.aborted

    def test_3d_error_grows_while_2d_stays_aligned(self, default_run):
        mp = default_run.column("mpjpe")
        assert mp[-1] > 5 * mp[0]
        assert default_run.column("err2d").max() <= 3 * default_run.initial_err2d

    def test_zero_3d_weight_is_a_refit(self, scenes, skel, default_run):
        res = biaslab.adversarial_attack(scenes[0], biaslab.AttackConfig(w_3d=0.0, iterations=120), skel)
        assert res.trajectory[-1]["err2d"] < 0.2 * res.initial_err2d
        assert res.trajectory[-1]["mpjpe"] < 0.5 * default_run.trajectory[-1]["mpjpe"]

    def test_hinge_floor(self, scenes, skel):
        # with a huge 3D weight the objective reaches the floor and stops moving
        cfg = biaslab.AttackConfig(w_3d=1e5, iterations=30)
        res = biaslab.adversarial_attack(scenes[1], cfg, skel)
        assert res.column("loss").min() == 0.0

    def test_unfloored_matches_while_hinge_inactive(self, scenes, skel):
        floored = biaslab.adversarial_attack(scenes[1], biaslab.AttackConfig(iterations=30), skel)
        raw = biaslab.adversarial_attack(scenes[1], biaslab.AttackConfig(iterations=30, unfloored=True), skel)
        assert floored.column("loss").min() > 0
        assert raw.trajectory == floored.trajectory

    def test_deterministic(self, scenes, skel, default_run):
        again = biaslab.adversarial_attack(scenes[0], biaslab.AttackConfig(iterations=120), skel)
        assert again.trajectory == default_run.trajectory

    @pytest.mark.parametrize("kw", [{"w_2d": 0.0}, {"w_3d": -1.0}, {"iterations": 0}, {"step_size": 0.0}])
    def test_config_validation(self, kw):
        with pytest.raises(InvalidArgument):
            biaslab.AttackConfig(**kw)


class TestSummary:
    def make(self, mpjpes, err2d, initial=1.0, aborted=False):
        res = biaslab.AttackResult(initial_err2d=initial, aborted=aborted)
        res.trajectory = [{"iter": i + 1, "err2d": e, "mpjpe": m, "loss": 0.0} for i, (m, e) in enumerate(zip(mpjpes, err2d))]
        return res

    def test_pass_rules(self):
        good = self.make([50, 150], [1, 2])
        too_small = self.make([50, 90], [1, 1])
        drifted = self.make([50, 150], [1, 3.5])
        shrinking = self.make([160, 150], [1, 1])
        aborted = self.make([50, 150], [1, 1], aborted=True)
        out = biaslab.attack_summary([good, too_small, drifted, shrinking, aborted], checkpoints=(1, 2))
        assert [r["passed"] for r in out["scenes"]] == [True, False, False, False, False]
        assert out["pass_fraction"] == pytest.approx(0.2)
        assert out["mean_mpjpe_2"] == pytest.approx(np.mean([150, 90, 150, 150, 150]))


class TestReports:
    def test_csv(self, tmp_path):
        res = biaslab.AttackResult(trajectory=[{"iter": 1, "err2d": 0.1, "mpjpe": 2.0, "loss": 3.0}])
        biaslab.write_trajectory_csv(tmp_path / "t.csv", res)
        rows = list(csv.reader(open(tmp_path / "t.csv")))
        assert rows == [["iter", "err2d", "mpjpe"], ["1", "0.1", "2.0"]]

    def test_json_sorted(self, tmp_path):
        biaslab.write_json(tmp_path / "a.json", {"b": 1, "a": 2})
        assert (tmp_path / "a.json").read_text() == '{\n  "a": 2,\n  "b": 1\n}\n'

    def test_svg_is_well_formed(self):
        svg = biaslab.svg_polyline_plot({"one": ([0, 1, 2], [3, 1, 2]), "flat": ([0, 1], [5, 5])}, "t", "x", "y")
        root = ET.fromstring(svg)
        lines = root.findall("{http://www.w3.org/2000/svg}polyline")
        assert len(lines) == 2
        assert len(lines[0].get("points").split()) == 3
