import numpy as np
import pytest

from marionette.encoder import (
    ObsConfig,
    RewardCoeffs,
    RewardTerms,
    RewardWeights,
    ToleranceConfig,
    check_termination,
    observation_length,
    observe,
    reward,
)
from marionette.geom import IDENTITY_QUAT, RigidPose, SpatialVelocity, quat_from_axis_angle
from marionette.motion import CharacterState, JointVelocities


def make_state(j=3, root_pos=(0.0, 0.0, 1.0), root_quat=None, seed=None):
    rng = np.random.default_rng(seed if seed is not None else 0)
    if seed is None:
        jp = np.tile(np.array([0.25, 0.5, 0.75]), (j, 1)) * np.arange(1, j + 1)[:, None]
        jq = np.tile(IDENTITY_QUAT, (j, 1))
        jl = np.zeros((j, 3))
        ja = np.zeros((j, 3))
        rv = SpatialVelocity(np.zeros(3), np.zeros(3))
    else:
        jp = rng.normal(size=(j, 3))
        jq = rng.normal(size=(j, 4))
        jq /= np.linalg.norm(jq, axis=1, keepdims=True)
        jl = rng.normal(size=(j, 3))
        ja = rng.normal(size=(j, 3))
        rv = SpatialVelocity(rng.normal(size=3), rng.normal(size=3))
    return CharacterState(
        RigidPose(np.array(root_pos), root_quat if root_quat is not None else IDENTITY_QUAT),
        jp, jq, rv, JointVelocities(jl, ja),
    )


class TestObserve:
    def test_length_formula(self):
        cur = make_state(j=3, seed=1)
        targets = [make_state(j=3, seed=2), make_state(j=3, seed=3)]
        obs = observe(cur, targets)
        assert obs.shape == (observation_length(3, 2),)
        assert observation_length(3, 2) == 164

    def test_self_target_offset_block(self):
        cur = make_state(j=2)
        obs = observe(cur, [cur])
        # last 7 entries: relative offset (zero vector, identity quat)
        np.testing.assert_allclose(obs[-7:-4], np.zeros(3), atol=1e-12)
        np.testing.assert_allclose(obs[-4:], IDENTITY_QUAT, atol=1e-12)

    def test_world_xy_translation_invariance_bitwise(self):
        # dyadic-rational inputs so the shifted subtraction is exact
        cur = make_state(j=3)
        tgt = make_state(j=3, root_pos=(0.5, 0.25, 1.0))
        obs_a = observe(cur, [tgt])

        def shifted(s, dx, dy):
            out = s.copy()
            out.root_pose.position = s.root_pose.position + np.array([dx, dy, 0.0])
            out.joint_positions = s.joint_positions + np.array([dx, dy, 0.0])
            return out

        obs_b = observe(shifted(cur, 16.0, -8.0), [shifted(tgt, 16.0, -8.0)])
        np.testing.assert_array_equal(obs_a, obs_b)

    def test_root_z_is_world_absolute(self):
        cur = make_state(j=2, root_pos=(0.0, 0.0, 1.0))
        lifted = make_state(j=2, root_pos=(0.0, 0.0, 2.0))
        a = observe(cur, [cur])
        b = observe(lifted, [lifted])
        assert a[0] == 1.0
        assert b[0] == 2.0

    def test_joint_count_mismatch(self):
        with pytest.raises(ValueError, match="mismatch"):
            observe(make_state(j=2), [make_state(j=3, seed=5)])

    def test_actual_frame_variant_differs(self):
        rot = quat_from_axis_angle(np.array([0.0, 0.0, 1.0]), 0.7)
        cur = make_state(j=2, seed=7)
        tgt = make_state(j=2, seed=8, root_pos=(0.4, 0.1, 1.2), root_quat=rot)
        a = observe(cur, [tgt], ObsConfig(encode_in_target_frame=True))
        b = observe(cur, [tgt], ObsConfig(encode_in_target_frame=False))
        assert a.shape == b.shape
        assert not np.allclose(a, b)


class TestReward:
    def test_perfect_match_scores_one(self):
        s = make_state(j=4, seed=3)
        total, terms = reward(s, s.copy())
        assert total == pytest.approx(1.0, abs=1e-12)
        for v in terms.as_array():
            assert v == pytest.approx(1.0, abs=1e-12)

    def test_root_rotation_180_closed_form(self):
        # target identity root, actual rotated 180 deg about z:
        # canonical quats (1,0,0,0) vs (0,0,0,1), diff norm^2 = 2, r_qr = exp(-4)
        actual = make_state(j=2, root_quat=quat_from_axis_angle(np.array([0, 0, 1.0]), np.pi))
        target = make_state(j=2)
        total, terms = reward(actual, target)
        assert terms.r_qr == pytest.approx(np.exp(-4.0), abs=1e-9)
        expected_total = 0.2 + 0.2 * np.exp(-4.0) + 0.1 + 0.4 + 0.1
        assert total == pytest.approx(expected_total, abs=1e-9)
        assert total == pytest.approx(0.80366, abs=1e-5)

    def test_single_velocity_term_isolation(self):
        actual = make_state(j=3)
        target = make_state(j=3)
        dw = np.array([0.4, -0.2, 0.9])
        actual.joint_velocities.angular[1] = dw
        k = RewardCoeffs()
        total, terms = reward(actual, target, coeffs=k)
        assert terms.r_qdj == pytest.approx(np.exp(-k.k_qdj * float(dw @ dw)), abs=1e-12)
        for name, v in terms.named().items():
            if name != "qdj":
                assert v == pytest.approx(1.0, abs=1e-12)

    def test_terms_in_unit_interval_and_monotone(self):
        target = make_state(j=2)
        prev = 1.0
        for mag in (0.1, 0.3, 0.9, 2.0):
            actual = make_state(j=2, root_pos=(mag, 0.0, 1.0))
            total, terms = reward(actual, target)
            assert 0.0 < terms.r_pr <= 1.0
            assert terms.r_pr < prev
            prev = terms.r_pr

    def test_rigid_transform_invariance(self):
        from marionette.geom import quat_mul, quat_rotate

        rng = np.random.default_rng(21)
        actual = make_state(j=3, seed=31)
        target = make_state(j=3, seed=32)
        base_total, _ = reward(actual, target)
        rot = rng.normal(size=4)
        rot /= np.linalg.norm(rot)
        shift = rng.normal(size=3)

        def xform(s):
            out = s.copy()
            out.root_pose.position = quat_rotate(rot, s.root_pose.position) + shift
            out.root_pose.orientation = quat_mul(rot, s.root_pose.orientation)
            out.joint_positions = quat_rotate(rot, s.joint_positions) + shift
            out.root_velocity.linear = quat_rotate(rot, s.root_velocity.linear)
            out.root_velocity.angular = quat_rotate(rot, s.root_velocity.angular)
            return out

        moved_total, _ = reward(xform(actual), xform(target))
        assert moved_total == pytest.approx(base_total, abs=1e-9)

    def test_nonfinite_rejected(self):
        bad = make_state(j=2)
        bad.joint_positions[0, 0] = np.inf
        with pytest.raises(ValueError, match="non-finite"):
            reward(bad, make_state(j=2))

    def test_weights_must_sum_to_one(self):
        with pytest.raises(ValueError):
            RewardWeights(w_pr=0.5)


class TestTermination:
    def test_all_ones_continue(self):
        res = check_termination(RewardTerms(1.0, 1.0, 1.0, 1.0, 1.0))
        assert not res.terminated

    def test_below_threshold_terminates_with_name(self):
        res = check_termination(RewardTerms(1.0, 1.0, 0.09, 1.0, 1.0))
        assert res.terminated
        assert res.term == "pj"

    def test_boundary_terminates(self):
        res = check_termination(RewardTerms(1.0, 1.0, 0.1, 1.0, 1.0))
        assert res.terminated
        assert res.term == "pj"

    def test_monotone(self):
        # lowering any term never converts terminate -> continue
        base = RewardTerms(0.5, 0.6, 0.7, 0.8, 0.9)
        assert not check_termination(base).terminated
        lowered = RewardTerms(0.05, 0.6, 0.7, 0.8, 0.9)
        assert check_termination(lowered).terminated
        even_lower = RewardTerms(0.05, 0.02, 0.7, 0.8, 0.9)
        assert check_termination(even_lower).terminated

    def test_custom_tolerances(self):
        tol = ToleranceConfig(np.array([0.5, 0.1, 0.1, 0.1, 0.1]))
        res = check_termination(RewardTerms(0.4, 1.0, 1.0, 1.0, 1.0), tol)
        assert res.terminated and res.term == "pr"
