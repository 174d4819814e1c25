import json, time, sys
import numpy as np
from marionette.simkit import build_chain
from marionette.synthetic import sway_clip, squat_clip
from marionette.sampler import LabelTree, build_probability_table
from marionette.trainer import PpoConfig, RsisConfig, train
from marionette.policy import VarianceSchedule
from marionette.encoder import RewardCoeffs

chain = build_chain(3, planar=True)
def corpus(amp, sqd):
    return [
        sway_clip(chain, amplitude=amp, frequency=0.4, clip_id="sway",
                  label_path=["root", "sway", "gentle"]),
        squat_clip(chain, depth=sqd, frequency=0.3, clip_id="squat",
                   label_path=["root", "squat", "shallow"]),
    ]

results = []
for (kqdj, beta, amp, sqd, lr) in [
    (0.1, 0.5, 0.2, 0.4, 3e-4),
    (0.02, 0.5, 0.2, 0.4, 3e-4),
    (0.02, 0.1, 0.2, 0.4, 3e-4),
    (0.02, 0.1, 0.15, 0.3, 1e-3),
    (0.1, 0.1, 0.15, 0.3, 1e-3),
]:
    clips = corpus(amp, sqd)
    tree = LabelTree.from_label_paths({c.id: c.label_path for c in clips})
    table = build_probability_table(tree)
    cfg = PpoConfig(workers=32, samples_per_worker=64, iterations=60,
                    hidden=(64, 64), seed=7, beta=beta, learning_rate=lr)
    coeffs = RewardCoeffs(k_qdj=kqdj)
    t0 = time.time()
    res = train(chain, clips, table, cfg, coeffs=coeffs,
                sched=VarianceSchedule(-1.5, -2.5, 400))
    last = res.metrics[-6:]
    rmean = np.mean([m["reward_mean"] for m in last])
    viol = np.mean([
        sum(v for k, v in m["terminations"].items() if k.startswith("term_violation"))
        / max(m["episodes"], 1) for m in last])
    eps = np.mean([m["episodes"] for m in last])
    row = dict(kqdj=kqdj, beta=beta, amp=amp, sqd=sqd, lr=lr,
               reward=float(rmean), viol_rate=float(viol), eps_per_iter=float(eps),
               secs_per_iter=(time.time()-t0)/60)
    results.append(row)
    print(json.dumps(row), flush=True)
print("BEST:", max(results, key=lambda r: r["reward"]))
