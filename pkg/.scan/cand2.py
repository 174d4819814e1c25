import json, time
import numpy as np
from marionette.simkit import build_chain
from marionette.synthetic import sway_clip, squat_clip
from marionette.sampler import LabelTree, build_probability_table
from marionette.trainer import PpoConfig, RsisConfig, train, evaluate_relative, EvalProtocol
from marionette.policy import VarianceSchedule
from marionette.encoder import RewardCoeffs
from pathlib import Path

chain = build_chain(3, planar=True)
clips = [
    sway_clip(chain, amplitude=0.18, frequency=0.5, clip_id="sway",
              label_path=["root", "sway", "gentle"]),
    squat_clip(chain, depth=0.4, frequency=0.45, clip_id="squat",
               label_path=["root", "squat", "shallow"]),
]
tree = LabelTree.from_label_paths({c.id: c.label_path for c in clips})
table = build_probability_table(tree)
cfg = PpoConfig(workers=32, samples_per_worker=64, iterations=500,
                hidden=(64, 64), seed=7, beta=0.1, learning_rate=1e-3,
                checkpoint_every=250)
coeffs = RewardCoeffs(k_qdj=0.01)
t0 = time.time()
res = train(chain, clips, table, cfg,
            rsis=RsisConfig(velocity_noise=0.3, translation_noise=0.03),
            coeffs=coeffs, sched=VarianceSchedule(-1.5, -2.5, 400),
            out_dir=Path("/root/pkg/.scan/cand2"))
for m in res.metrics[::50] + [res.metrics[-1]]:
    viol = sum(v for k, v in m["terminations"].items() if k.startswith("term_violation"))
    eps = max(m["episodes"], 1)
    print(f"it {m['iteration']:3d}: r={m['reward_mean']:.3f} eps={eps:4d} "
          f"viol%={100*viol/eps:.0f} len={2048/eps:.1f}", flush=True)
print(f"train: {(time.time()-t0)/60:.1f} min", flush=True)

for clip in clips:
    protos = [EvalProtocol(speed_ratio=r) for r in (0.5, 0.9, 1.1, 1.6)]
    protos += [EvalProtocol(impulse_period=p, impulse_magnitude=2.5) for p in (5, 60)]
    reports = evaluate_relative(res.policy, chain, clip, protos, episodes=8, seed=11,
                                cfg=cfg, coeffs=coeffs)
    print(f"--- {clip.id}", flush=True)
    for r in reports:
        print(f"  {r.protocol}: reward={r.mean_reward:.3f} rel={r.relative_pct:.2f}% len={r.mean_episode_length:.0f}", flush=True)
