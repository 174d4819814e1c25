import numpy as np
from marionette.simkit import build_chain
from marionette.synthetic import sway_clip, squat_clip
from marionette.trainer import EvalProtocol, PpoConfig, evaluate, load_policy_checkpoint
from marionette.encoder import RewardCoeffs

chain = build_chain(3, planar=True)
clips = [
    sway_clip(chain, amplitude=0.15, frequency=0.4, clip_id="sway",
              label_path=["root", "sway", "gentle"]),
    squat_clip(chain, depth=0.3, frequency=0.3, clip_id="squat",
               label_path=["root", "squat", "shallow"]),
]
policy, _, _ = load_policy_checkpoint("/root/pkg/.scan/cand/checkpoint_00500.ckpt")
cfg = PpoConfig(workers=32, samples_per_worker=64, iterations=500, hidden=(64, 64),
                seed=7, beta=0.1, learning_rate=1e-3)
coeffs = RewardCoeffs(k_qdj=0.01)

rels = []
for clip in clips:
    clean = evaluate(policy, chain, clip, EvalProtocol(), episodes=14, seed=11,
                     cfg=cfg, coeffs=coeffs)
    out = {}
    for r in (0.5, 0.9, 1.1, 1.6):
        rep = evaluate(policy, chain, clip, EvalProtocol(speed_ratio=r), episodes=14,
                       seed=11, cfg=cfg, coeffs=coeffs)
        out[f"speed-{r}"] = 100.0 * rep.mean_reward / clean.mean_reward
    for p in (5, 60):
        rep = evaluate(policy, chain, clip, EvalProtocol(impulse_period=p, impulse_magnitude=2.5),
                       episodes=14, seed=11, cfg=cfg, coeffs=coeffs)
        out[f"proj-{p}"] = 100.0 * rep.mean_reward / clean.mean_reward
    print(clip.id, {k: round(v, 3) for k, v in out.items()}, flush=True)
    rels.append(out)
near = np.mean([r[k] for r in rels for k in ("speed-0.9", "speed-1.1")])
far = np.mean([r[k] for r in rels for k in ("speed-0.5", "speed-1.6")])
print("near:", round(near, 4), "far:", round(far, 4), "-> speed", "PASS" if near >= far else "FAIL")
print("proj60:", np.mean([r["proj-60"] for r in rels]).round(2),
      "proj5:", np.mean([r["proj-5"] for r in rels]).round(2))
