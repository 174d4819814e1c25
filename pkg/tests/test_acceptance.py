"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

Run with `pytest tests/test_acceptance.py -s` to watch the lines stream; the
desk-scale training criterion dominates the runtime (several minutes).
"""

import time

import numpy as np
import pytest

from marionette.encoder import (
    RewardCoeffs,
    RewardTerms,
    check_termination,
    reward,
)
from marionette.geom import (
    RigidPose,
    StatePiece,
    from_local,
    quat_angle,
    quat_from_axis_angle,
    quat_mul,
    quat_normalize,
    quat_slerp,
    quat_to_matrix,
    to_local,
)
from marionette.motion import load_clip, save_clip
from marionette.policy import (
    VarianceSchedule,
    forward,
    forward_cached,
    backward,
    mlp_init,
    policy_init,
    recenter_logstd,
)
from marionette.sampler import LabelTree, build_probability_table, sample_clips
from marionette.simkit import (
    SimConfig,
    build_chain,
    default_state,
    mechanical_energy,
    step,
    total_linear_momentum,
)
from marionette.synthetic import squat_clip, sway_clip
from marionette.trainer import (
    EvalProtocol,
    PpoConfig,
    RsisConfig,
    evaluate,
    ppo_objective_and_grads,
    rsis_init,
    train,
)


def _report(num: int, name: str, ok: bool, detail: str = ""):
    print(f"[criterion {num:02d}] {'PASS' if ok else 'FAIL'} {name}: {detail}", flush=True)
    assert ok, f"criterion {num} failed: {name} ({detail})"


# -- desk-scale training task shared by criteria 7 and 8 --------------------

ACCEPT_SEED = 7
ACCEPT_COEFFS = RewardCoeffs(k_qdj=0.01)  # velocity curvature sized for the light chain
ACCEPT_PPO = PpoConfig(
    workers=32, samples_per_worker=64, iterations=500, hidden=(64, 64),
    seed=ACCEPT_SEED, beta=0.1, learning_rate=1e-3, checkpoint_every=1000,
)
ACCEPT_RSIS = RsisConfig(velocity_noise=0.3, translation_noise=0.03)
ACCEPT_SCHED = VarianceSchedule(-1.5, -2.5, 400)


def _accept_task():
    chain = build_chain(3, planar=True)
    clips = [
        sway_clip(chain, amplitude=0.15, frequency=0.4, clip_id="sway",
                  label_path=["root", "sway", "gentle"]),
        squat_clip(chain, depth=0.3, frequency=0.3, clip_id="squat",
                   label_path=["root", "squat", "shallow"]),
    ]
    tree = LabelTree.from_label_paths({c.id: c.label_path for c in clips})
    return chain, clips, build_probability_table(tree)


@pytest.fixture(scope="session")
def desk_policy():
    chain, clips, table = _accept_task()
    t0 = time.time()
    result = train(
        chain, clips, table, ACCEPT_PPO, rsis=ACCEPT_RSIS,
        coeffs=ACCEPT_COEFFS, sched=ACCEPT_SCHED,
    )
    return chain, clips, result, time.time() - t0


class TestCriterion01Geometry:
    def test_geometry_suite(self):
        t0 = time.time()
        rng = np.random.default_rng(101)
        worst_mul = 0.0
        for _ in range(1000):
            a = quat_normalize(rng.normal(size=4))
            b = quat_normalize(rng.normal(size=4))
            got = quat_to_matrix(quat_mul(a, b))
            want = quat_to_matrix(a) @ quat_to_matrix(b)
            worst_mul = max(worst_mul, np.abs(got - want).max() / np.abs(want).max())
        ok_mul = worst_mul < 1e-9

        a = quat_normalize(rng.normal(size=4))
        b = quat_normalize(rng.normal(size=4))
        ok_ends = quat_angle(quat_slerp(a, b, 0.0), a) < 1e-9
        ok_ends &= quat_angle(quat_slerp(a, b, 1.0), b) < 1e-9
        total = quat_angle(a, b)
        delta = 1e-3
        ok_speed = True
        for t in (0.1, 0.5, 0.9):
            stepang = quat_angle(quat_slerp(a, b, t), quat_slerp(a, b, t + delta))
            ok_speed &= abs(stepang - delta * total) < 1e-6

        worst_rt = 0.0
        for _ in range(200):
            frame = RigidPose(rng.normal(size=3), quat_normalize(rng.normal(size=4)))
            piece = StatePiece(
                positions=rng.normal(size=(4, 3)),
                orientations=quat_normalize(rng.normal(size=(4, 4))),
                linear_velocities=rng.normal(size=(4, 3)),
                angular_velocities=rng.normal(size=(4, 3)),
            )
            back = from_local(frame, to_local(frame, piece))
            worst_rt = max(worst_rt, np.abs(back.positions - piece.positions).max())
            worst_rt = max(worst_rt, np.abs(back.linear_velocities - piece.linear_velocities).max())
        ok_rt = worst_rt < 1e-9
        dt = time.time() - t0
        _report(
            1, "geometry oracles", ok_mul and ok_ends and ok_speed and ok_rt and dt < 5.0,
            f"mul rel err {worst_mul:.1e}, round-trip {worst_rt:.1e}, {dt:.1f}s",
        )


class TestCriterion02Reward:
    def test_reward_closed_forms(self):
        t0 = time.time()
        from tests.test_encoder import make_state

        s = make_state(j=3, seed=11)
        total_perfect, _ = reward(s, s.copy())
        ok_perfect = abs(total_perfect - 1.0) < 1e-12

        actual = make_state(j=2, root_quat=quat_from_axis_angle(np.array([0, 0, 1.0]), np.pi))
        target = make_state(j=2)
        total_rot, terms = reward(actual, target)
        expected = 0.2 + 0.2 * np.exp(-4.0) + 0.1 + 0.4 + 0.1
        ok_rot = abs(total_rot - expected) < 1e-6 and abs(total_rot - 0.80366) < 1e-5

        ok_term = check_termination(RewardTerms(1, 1, 1, 1, 1)).terminated is False
        ok_term &= check_termination(RewardTerms(1, 1, 0.09, 1, 1)).term == "pj"
        ok_term &= check_termination(RewardTerms(1, 1, 0.1, 1, 1)).terminated  # boundary
        ok_term &= not check_termination(RewardTerms(0.11, 0.11, 0.11, 0.11, 0.11)).terminated
        dt = time.time() - t0
        _report(
            2, "reward closed forms",
            ok_perfect and ok_rot and ok_term and dt < 1.0,
            f"perfect={total_perfect:.12f}, rot180={total_rot:.6f} (want 0.80366), {dt:.2f}s",
        )


class TestCriterion03Balancer:
    def test_balancer_oracles(self):
        t0 = time.time()
        from tests.test_sampler import brute_force_probabilities

        rng = np.random.default_rng(303)
        ok_exact = True
        for trial in range(20):
            n = int(rng.integers(2, 30))
            bindings = {}
            for i in range(n):
                depth = int(rng.integers(1, 5))
                path = ["root"] + [f"d{d}_{int(rng.integers(0, 3))}" for d in range(depth)]
                path.append(f"leaf{i % 9}")
                bindings[f"clip{i}"] = path
            table = build_probability_table(LabelTree.from_label_paths(bindings))
            oracle = brute_force_probabilities(bindings)
            for cid, want in oracle.items():
                ok_exact &= abs(table.probability(cid) - want) < 1e-15

        bindings = {"a1": ["root", "A", "a1"], "a2": ["root", "A", "a2"], "b1": ["root", "B"]}
        table = build_probability_table(LabelTree.from_label_paths(bindings))
        draws = sample_clips(table, np.random.default_rng(9), 1_000_000)
        freq = {cid: 0 for cid in table.clip_ids}
        for d in draws:
            freq[d] += 1
        ok_mc = (
            abs(freq["a1"] / 1e6 - 0.25) < 0.005
            and abs(freq["a2"] / 1e6 - 0.25) < 0.005
            and abs(freq["b1"] / 1e6 - 0.5) < 0.005
        )
        dt = time.time() - t0
        _report(3, "balancer path products + Monte Carlo",
                ok_exact and ok_mc and dt < 30.0,
                f"freqs {freq['a1']/1e6:.4f}/{freq['a2']/1e6:.4f}/{freq['b1']/1e6:.4f}, {dt:.1f}s")


class TestCriterion04Gradients:
    def test_gradient_checks(self):
        t0 = time.time()
        rng = np.random.default_rng(404)
        net = mlp_init([5, 12, 8, 3], rng)
        xs = rng.normal(size=(4, 5))
        targets = rng.normal(size=(4, 3))
        out, cache = forward_cached(net, xs)
        grads, _ = backward(net, cache, out - targets)
        eps, worst_mlp = 1e-6, 0.0
        for pi, p in enumerate(net.params()):
            it = np.nditer(p, flags=["multi_index"])
            for _ in it:
                idx = it.multi_index
                orig = p[idx]
                p[idx] = orig + eps
                up = 0.5 * float(np.sum((forward(net, xs) - targets) ** 2))
                p[idx] = orig - eps
                dn = 0.5 * float(np.sum((forward(net, xs) - targets) ** 2))
                p[idx] = orig
                fd = (up - dn) / (2 * eps)
                worst_mlp = max(worst_mlp, abs(grads[pi][idx] - fd) / max(abs(fd), 1e-7))

        # full PPO surrogate on a 4-transition toy batch
        policy = policy_init(5, 2, (8,), rng, logstd_init=-0.6)
        obs = rng.normal(size=(4, 5))
        means_old = forward(policy.mean_net, obs) + 0.05 * rng.normal(size=(4, 2))
        logstd_old = policy.logstd + 0.1 * rng.normal(size=2)
        actions = means_old + np.exp(logstd_old) * rng.standard_normal((4, 2))
        eps_a = (actions - means_old) / np.exp(logstd_old)
        logp_old = np.sum(-logstd_old - 0.5 * np.log(2 * np.pi) - 0.5 * eps_a**2, axis=-1)
        adv = rng.normal(size=4)
        beta = 0.5

        def loss_of():
            val, _, _, _ = ppo_objective_and_grads(
                policy, obs, actions, logp_old, means_old, logstd_old, adv, beta
            )
            return val

        _, grads_net, grad_logstd, _ = ppo_objective_and_grads(
            policy, obs, actions, logp_old, means_old, logstd_old, adv, beta
        )
        worst_ppo = 0.0
        for pi, p in enumerate(policy.mean_net.params()):
            it = np.nditer(p, flags=["multi_index"])
            for _ in it:
                idx = it.multi_index
                orig = p[idx]
                p[idx] = orig + eps
                up = loss_of()
                p[idx] = orig - eps
                dn = loss_of()
                p[idx] = orig
                fd = (up - dn) / (2 * eps)
                worst_ppo = max(worst_ppo, abs(grads_net[pi][idx] - fd) / max(abs(fd), 1e-7))
        for i in range(2):
            orig = policy.logstd[i]
            policy.logstd[i] = orig + eps
            up = loss_of()
            policy.logstd[i] = orig - eps
            dn = loss_of()
            policy.logstd[i] = orig
            fd = (up - dn) / (2 * eps)
            worst_ppo = max(worst_ppo, abs(grad_logstd[i] - fd) / max(abs(fd), 1e-7))
        dt = time.time() - t0
        _report(4, "MLP + PPO-objective gradcheck",
                worst_mlp < 1e-4 and worst_ppo < 1e-4 and dt < 30.0,
                f"mlp {worst_mlp:.2e}, ppo {worst_ppo:.2e}, {dt:.1f}s")


class TestCriterion05Simulator:
    def test_simulator_physics(self):
        t0 = time.time()
        from marionette.simkit import CharacterModel, LinkSpec

        body = CharacterModel(
            "ball", [LinkSpec("b", -1, "free", np.array([0.0, 0.0, 50.0]), mass=2.0)]
        )
        cfg = SimConfig()
        st = default_state(body)
        for _ in range(60):
            st = step(body, st, np.zeros(0), cfg)
        ok_fall = abs(st.qd[2] - (-9.8)) / 9.8 < 1e-3

        pend = build_chain(2, fixed_base=True)
        st = default_state(pend)
        st.q[:] = [np.pi / 2 - 0.5, 0.3]
        e0 = sum(mechanical_energy(pend, st))
        drift = 0.0
        for _ in range(600):
            st = step(pend, st, np.zeros(2), cfg)
            drift = max(drift, abs(sum(mechanical_energy(pend, st)) - e0))
        rel_drift = drift / abs(e0)
        ok_energy = rel_drift < 0.02

        chain = build_chain(3, planar=False, base_height=10.0)
        vac = SimConfig(gravity=0.0)
        st = default_state(chain)
        st.qd[0:3] = [1.0, 0.5, 0.2]
        worst_p = 0.0
        prev = total_linear_momentum(chain, st)
        for _ in range(120):
            st = step(chain, st, np.zeros(3), vac)
            cur = total_linear_momentum(chain, st)
            worst_p = max(worst_p, np.abs(cur - prev).max())
            prev = cur
        ok_momentum = worst_p < 1e-9

        runs = []
        for _ in range(2):
            s = default_state(build_chain(3, planar=True))
            m = build_chain(3, planar=True)
            for _ in range(60):
                s = step(m, s, np.array([1.0, -0.5, 0.2]), cfg)
            runs.append((s.q.copy(), s.qd.copy()))
        ok_det = np.array_equal(runs[0][0], runs[1][0]) and np.array_equal(runs[0][1], runs[1][1])
        dt = time.time() - t0
        _report(5, "simulator physics",
                ok_fall and ok_energy and ok_momentum and ok_det and dt < 60.0,
                f"energy drift {100*rel_drift:.3f}%, momentum {worst_p:.1e}/step, "
                f"determinism {'bit-identical' if ok_det else 'MISMATCH'}, {dt:.1f}s")


class TestCriterion06VarianceController:
    def test_variance_controller(self):
        t0 = time.time()
        rng = np.random.default_rng(606)
        sched = VarianceSchedule(-1.0, -3.0, iterations=200)
        ok_mean, worst_diff = True, 0.0
        logstd = rng.normal(-1.2, 0.4, size=6)
        for it in range(150):
            stepped = logstd - 0.01 * rng.normal(size=6)  # arbitrary gradient step
            new = recenter_logstd(stepped, it, sched)
            ok_mean &= abs(float(np.mean(new)) - sched.target(it)) < 1e-12
            d_before = stepped[:, None] - stepped[None, :]
            d_after = new[:, None] - new[None, :]
            worst_diff = max(worst_diff, np.abs(d_after - d_before).max())
            logstd = new
        # shift invariance holds to one IEEE-754 ulp of the shifted values
        ok_diff = worst_diff <= 5e-16
        dt = time.time() - t0
        _report(6, "variance controller schedule + shift invariance",
                ok_mean and ok_diff and dt < 1.0,
                f"mean pinned to 1e-12, diff drift {worst_diff:.1e} (<= 1 ulp), {dt:.2f}s")


class TestCriterion07DeskTraining:
    def test_desk_training(self, desk_policy):
        chain, clips, result, train_secs = desk_policy
        # training-run outcome: tail of the learning curve (exploration on)
        tail = result.metrics[-20:]
        tail_reward = float(np.mean([m["reward_mean"] for m in tail]))
        # trained-artifact outcome: deterministic-mean episodes on both clips
        rewards, viols = [], []
        for clip in clips:
            rep = evaluate(
                result.policy, chain, clip, EvalProtocol(), episodes=10, seed=5,
                cfg=ACCEPT_PPO, coeffs=ACCEPT_COEFFS, rsis=ACCEPT_RSIS,
            )
            rewards.append(rep.mean_reward)
            viols.append(rep.violation_rate)
        reward_mean = float(np.mean(rewards))
        viol_rate = float(np.mean(viols))
        ok = (
            tail_reward >= 0.6
            and reward_mean >= 0.6
            and viol_rate < 0.2
            and train_secs < 900
        )
        _report(7, "desk-scale training",
                ok,
                f"training-tail reward {tail_reward:.3f} and episode reward "
                f"{reward_mean:.3f} (>= 0.6), violation rate {100*viol_rate:.1f}% "
                f"(< 20%), {train_secs/60:.1f} min")


class TestCriterion08ZeroShot:
    def test_zero_shot_trends(self, desk_policy):
        chain, clips, result, _ = desk_policy
        t0 = time.time()

        def rel_for(clip):
            clean = evaluate(result.policy, chain, clip, EvalProtocol(), episodes=14,
                             seed=11, cfg=ACCEPT_PPO, coeffs=ACCEPT_COEFFS)
            out = {}
            for r in (0.5, 0.9, 1.1, 1.6):
                rep = evaluate(result.policy, chain, clip, EvalProtocol(speed_ratio=r),
                               episodes=14, seed=11, cfg=ACCEPT_PPO, coeffs=ACCEPT_COEFFS)
                out[f"speed-{r}"] = 100.0 * rep.mean_reward / clean.mean_reward
            for p in (5, 60):
                rep = evaluate(
                    result.policy, chain, clip,
                    EvalProtocol(impulse_period=p, impulse_magnitude=2.5),
                    episodes=14, seed=11, cfg=ACCEPT_PPO, coeffs=ACCEPT_COEFFS,
                )
                out[f"proj-{p}"] = 100.0 * rep.mean_reward / clean.mean_reward
            return out

        rels = [rel_for(clip) for clip in clips]
        near = float(np.mean([r[k] for r in rels for k in ("speed-0.9", "speed-1.1")]))
        far = float(np.mean([r[k] for r in rels for k in ("speed-0.5", "speed-1.6")]))
        proj_slow = float(np.mean([r["proj-60"] for r in rels]))
        proj_fast = float(np.mean([r["proj-5"] for r in rels]))
        ok_speed = near >= far
        ok_proj = proj_slow > proj_fast
        dt = time.time() - t0
        _report(8, "zero-shot robustness trends",
                ok_speed and ok_proj and dt < 300.0,
                f"speed near {near:.2f}% >= far {far:.2f}%; "
                f"proj 1/60 {proj_slow:.1f}% > 1/5 {proj_fast:.1f}%, {dt:.0f}s")


class TestCriterion09RsisStitching:
    def test_rsis_and_stitching(self):
        t0 = time.time()
        chain = build_chain(3, planar=True)
        clip = sway_clip(chain, amplitude=0.15, frequency=0.4)
        cfg = RsisConfig(translation_noise=0.0, velocity_noise=0.0)
        rng = np.random.default_rng(909)
        bank = np.stack([f.joint_positions for f in clip.frames])
        ok_offsets = True
        for _ in range(10_000):
            state, first = rsis_init(clip, rng, cfg)
            d = np.linalg.norm(bank - state.joint_positions, axis=(1, 2))
            j = int(np.argmin(d))
            ok_offsets &= 5 <= first - j <= 10

        from marionette.schedulers import (
            SchedulerExhausted,
            StitchScheduler,
        )

        a = sway_clip(chain, amplitude=0.1, clip_id="a")
        b = squat_clip(chain, depth=0.2, clip_id="b")
        sched = StitchScheduler(transition_frames=6)
        sched.push(a)
        sched.push(b)
        ok_count = len(sched) == a.num_frames + 6 + b.num_frames
        frames = list(sched.buffer.frames)
        total = quat_angle(a.frames[-1].root_pose.orientation, b.frames[0].root_pose.orientation)
        bound = total / 6 + 1e-6
        seam = frames[a.num_frames - 1 : a.num_frames + 7]
        ok_slerp = all(
            quat_angle(x.root_pose.orientation, y.root_pose.orientation) <= bound
            for x, y in zip(seam, seam[1:])
        )
        popped = [sched.next(1)[0] for _ in range(len(sched))]
        ok_fifo = np.array_equal(
            popped[0].root_pose.position, a.frames[0].root_pose.position
        )
        ok_exhaust = False
        try:
            sched.next(1)
        except SchedulerExhausted:
            ok_exhaust = True
        dt = time.time() - t0
        _report(9, "RSIS offsets + stitching",
                ok_offsets and ok_count and ok_slerp and ok_fifo and ok_exhaust and dt < 5.0,
                f"offsets in [5,10] over 10k draws, seam bound ok, {dt:.1f}s")


class TestCriterion10Protocol:
    def test_protocol_and_parsers(self):
        t0 = time.time()
        from pathlib import Path

        chain = build_chain(2, planar=True)
        clip = sway_clip(chain, seconds=1.0)
        data = save_clip(clip)
        ok_native = save_clip(load_clip(data, "native")) == data

        golden_dir = Path(__file__).parent / "data"
        ok_bvh = True
        for name, checks in _BVH_GOLDEN.items():
            parsed = load_clip((golden_dir / name).read_bytes(), "bvh-subset", up_axis="z")
            ok_bvh &= checks(parsed)

        from marionette.wire import deserialize, serialize
        from tests.test_wire_fuzz import random_message

        rng = np.random.default_rng(1010)
        mismatches = 0
        for _ in range(10_000):
            msg = random_message(rng)
            if serialize(deserialize(serialize(msg))) != serialize(msg):
                mismatches += 1
        ok_fuzz = mismatches == 0
        dt = time.time() - t0
        _report(10, "protocol + parsers",
                ok_native and ok_bvh and ok_fuzz and dt < 30.0,
                f"native round-trip ok, BVH golden ok, fuzz mismatches {mismatches}/10000, "
                f"{dt:.1f}s")


def _check_one_joint(clip) -> bool:
    want = quat_from_axis_angle(np.array([0.0, 0.0, 1.0]), np.pi / 2)
    return (
        clip.num_joints == 1
        and quat_angle(clip.frames[1].joint_orientations[0], want) < 1e-9
        and np.allclose(clip.frames[0].joint_positions[0], [0.0, 1.0, 0.0], atol=1e-12)
    )


def _check_two_joint(clip) -> bool:
    want_y = quat_from_axis_angle(np.array([0.0, 1.0, 0.0]), np.pi / 4)
    return (
        clip.num_joints == 2
        and np.allclose(clip.frames[0].root_pose.position, [0.5, 0.0, 0.0], atol=1e-12)
        and quat_angle(clip.frames[1].joint_orientations[1], want_y) < 1e-9
        and np.allclose(clip.frames[0].joint_positions[1], [0.5, 1.0, 0.5], atol=1e-12)
    )


_BVH_GOLDEN = {
    "one_joint.bvh": _check_one_joint,
    "two_joint.bvh": _check_two_joint,
}
