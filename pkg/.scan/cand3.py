import json, time
import numpy as np
from marionette.simkit import build_chain
from marionette.synthetic import sway_clip, squat_clip
from marionette.sampler import LabelTree, build_probability_table
from marionette.trainer import PpoConfig, RsisConfig, train, evaluate, EvalProtocol
from marionette.policy import VarianceSchedule
from marionette.encoder import RewardCoeffs
from pathlib import Path

chain = build_chain(3, planar=True)
clips = [
    sway_clip(chain, amplitude=0.15, frequency=0.4, clip_id="sway",
              label_path=["root", "sway", "gentle"]),
    squat_clip(chain, depth=0.35, frequency=0.4, clip_id="squat",
               label_path=["root", "squat", "shallow"]),
]
tree = LabelTree.from_label_paths({c.id: c.label_path for c in clips})
table = build_probability_table(tree)
cfg = PpoConfig(workers=32, samples_per_worker=64, iterations=500,
                hidden=(64, 64), seed=7, beta=0.1, learning_rate=1e-3,
                checkpoint_every=250)
coeffs = RewardCoeffs(k_qdj=0.01)
rsis = RsisConfig(velocity_noise=0.3, translation_noise=0.03)
t0 = time.time()
res = train(chain, clips, table, cfg, rsis=rsis, coeffs=coeffs,
            sched=VarianceSchedule(-1.5, -2.5, 400),
            out_dir=Path("/root/pkg/.scan/cand3"))
for m in res.metrics[::50] + [res.metrics[-1]]:
    viol = sum(v for k, v in m["terminations"].items() if k.startswith("term_violation"))
    eps = max(m["episodes"], 1)
    print(f"it {m['iteration']:3d}: r={m['reward_mean']:.3f} eps={eps:4d} viol%={100*viol/eps:.0f} len={2048/eps:.1f}", flush=True)
print(f"train: {(time.time()-t0)/60:.1f} min", flush=True)

# high-episode deterministic eval, completion-weighted, both start styles
for label, kw in (("clean-start", {}), ("rsis-start", {"rsis": rsis})):
    print(f"== {label}", flush=True)
    for clip in clips:
        base = evaluate(res.policy, chain, clip, EvalProtocol(), episodes=16, seed=11, cfg=cfg, coeffs=coeffs, **kw)
        line = [f"{clip.id}: clean={base.mean_reward:.4f} viol={base.violation_rate:.2f}"]
        for s in (0.5, 0.9, 1.1, 1.6):
            r = evaluate(res.policy, chain, clip, EvalProtocol(speed_ratio=s), episodes=16, seed=11, cfg=cfg, coeffs=coeffs, **kw)
            line.append(f"s{s}={100*r.mean_reward/base.mean_reward:.2f}%")
        for p in (5, 60):
            r = evaluate(res.policy, chain, clip, EvalProtocol(impulse_period=p, impulse_magnitude=2.5), episodes=16, seed=11, cfg=cfg, coeffs=coeffs, **kw)
            line.append(f"p{p}={100*r.mean_reward/base.mean_reward:.2f}%")
        print("  " + " ".join(line), flush=True)
