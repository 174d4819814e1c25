import numpy as np
from marionette.simkit import build_chain, state_from_character, forward_kinematics, step_batch, lift_above_ground, SimConfig, apply_impulse
from marionette.synthetic import sway_clip, squat_clip
from marionette.trainer import load_policy_checkpoint, rsis_init, RsisConfig
from marionette.motion import resample_speed
from marionette.encoder import reward, check_termination, observe, RewardCoeffs
from marionette.policy import forward

chain = build_chain(3, planar=True)
clips = [
    sway_clip(chain, amplitude=0.15, frequency=0.4, clip_id="sway", label_path=["root","sway","gentle"]),
    squat_clip(chain, depth=0.3, frequency=0.3, clip_id="squat", label_path=["root","squat","shallow"]),
]
policy, _, _ = load_policy_checkpoint("/root/pkg/.scan/cand/checkpoint_00500.ckpt")
coeffs = RewardCoeffs(k_qdj=0.01)
sim = SimConfig()
rsis = RsisConfig(velocity_noise=0.3, translation_noise=0.03)

def run(clip, speed=None, imp_period=None, imp_mag=2.5, episodes=10, seed=11, horizon=512):
    eval_clip = clip if speed is None else resample_speed(clip, speed)
    rng = np.random.default_rng(seed)
    achieved, achievable, viols = 0.0, 0, 0
    for ep in range(episodes):
        state_cs, first = rsis_init(eval_clip, rng, rsis, 1)
        st = lift_above_ground(chain, state_from_character(chain, state_cs))
        cursor = first
        n = eval_clip.num_frames
        avail = min(n - 1 - cursor, horizon)
        achievable += avail
        steps = 0
        while cursor < n - 1 and steps < horizon:
            targets = [eval_clip.frames[cursor]]
            actual = forward_kinematics(chain, st.q, st.qd)
            obs = observe(actual, targets)
            a = np.clip(forward(policy.mean_net, obs), -1, 1) * chain.effort_limits
            if imp_period and steps > 0 and steps % imp_period == 0:
                d = rng.normal(size=3); d /= np.linalg.norm(d)
                st = apply_impulse(st, chain, ["link0","link1","link2","link3"][rng.integers(0,4)], imp_mag*d)
            q, qd = step_batch(chain, st.q[None], st.qd[None], a[None], sim)
            st.q, st.qd = q[0], qd[0]
            actual = forward_kinematics(chain, st.q, st.qd)
            total, terms = reward(actual, eval_clip.frames[cursor], coeffs=coeffs)
            achieved += total
            steps += 1; cursor += 1
            if check_termination(terms).terminated:
                viols += 1
                break
    return achieved / max(achievable,1), viols, episodes

for clip in clips:
    print(f"--- {clip.id} (RSIS starts, completion-weighted)", flush=True)
    base, v0, n0 = run(clip)
    print(f"  clean: {base:.3f} viol {v0}/{n0}", flush=True)
    for s in (0.5, 0.9, 1.1, 1.6):
        r, v, n = run(clip, speed=s)
        print(f"  speed-{s}: {r:.3f} rel={100*r/base:.1f}% viol {v}/{n}", flush=True)
    for p in (5, 60):
        r, v, n = run(clip, imp_period=p)
        print(f"  impulse-1/{p}: {r:.3f} rel={100*r/base:.1f}% viol {v}/{n}", flush=True)
