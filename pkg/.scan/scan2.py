import json, time
import numpy as np
from marionette.simkit import build_chain, SimConfig
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

for (kqdj, kn, kd, amp, sqd, vnoise) in [
    (0.01, 12000, 40, 0.15, 0.3, 0.3),
    (0.005, 12000, 40, 0.15, 0.3, 0.3),
    (0.01, 7000, 25, 0.15, 0.3, 0.3),
    (0.01, 7000, 25, 0.12, 0.25, 0.2),
]:
    clips = corpus(amp, sqd)
    tree = LabelTree.from_label_paths({c.id: c.label_path for c in clips})
    table = build_probability_table(tree)
    cfg = PpoConfig(workers=32, samples_per_worker=64, iterations=120,
                    hidden=(64, 64), seed=7, beta=0.1, learning_rate=1e-3)
    res = train(chain, clips, table, cfg,
                rsis=RsisConfig(velocity_noise=vnoise, translation_noise=0.03),
                sim=SimConfig(contact_stiffness=kn, contact_damping=kd, tangential_damping=kd),
                coeffs=RewardCoeffs(k_qdj=kqdj),
                sched=VarianceSchedule(-1.5, -2.5, 400))
    header = dict(kqdj=kqdj, kn=kn, amp=amp, vnoise=vnoise)
    print(json.dumps(header), flush=True)
    for m in res.metrics[::20] + [res.metrics[-1]]:
        viol = sum(v for k, v in m["terminations"].items() if k.startswith("term_violation"))
        eps = max(m["episodes"], 1)
        print(f"  it {m['iteration']:3d}: r={m['reward_mean']:.3f} eps={eps:4d} "
              f"viol%={100*viol/eps:.0f} len={2048/eps:.1f}", flush=True)
