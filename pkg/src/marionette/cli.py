"""Operator entry points: train, eval, dataset tools, simulator self-tests,
and the session server.

Every failure exits nonzero with a single `error: <code>: <detail>` line on
stderr so wrappers can parse outcomes.
"""

from __future__ import annotations

import argparse
import json
import signal
import sys
from pathlib import Path

import numpy as np


class CliError(Exception):
    def __init__(self, code: str, detail: str = ""):
        super().__init__(f"{code}: {detail}" if detail else code)
        self.code = code


def _load_config(path: str | None, seed: int | None):
    from .config import load_run_config

    cfg = load_run_config(Path(path) if path else None)
    if seed is not None:
        cfg.ppo.seed = seed
    return cfg


def cmd_train(args) -> int:
    from .config import assemble_task, dump_run_config
    from .trainer import train

    cfg = _load_config(args.config, args.seed)
    model, clips, table = assemble_task(cfg)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "run_config.yaml").write_text(dump_run_config(cfg))
    with open(out_dir / "metrics.jsonl", "a" if args.resume else "w") as sink:
        result = train(
            model, clips, table, cfg.ppo,
            rsis=cfg.rsis, sim=cfg.sim, weights=cfg.reward_weights,
            coeffs=cfg.reward_coeffs, tol=cfg.tolerances, sched=cfg.variance,
            obs_cfg=cfg.observation, out_dir=out_dir, sink=sink,
            resume_from=args.resume,
        )
    final = result.metrics[-1] if result.metrics else {}
    print(f"trained {cfg.ppo.iterations} iterations; "
          f"final reward_mean={final.get('reward_mean', 'n/a')}; "
          f"checkpoint={result.checkpoint_path}")
    return 0


def _fmt_table(rows: list[dict], columns: list[str]) -> str:
    widths = {c: max(len(c), *(len(str(r.get(c, ""))) for r in rows)) for c in columns}
    lines = ["  ".join(c.ljust(widths[c]) for c in columns)]
    lines.append("  ".join("-" * widths[c] for c in columns))
    for r in rows:
        lines.append("  ".join(str(r.get(c, "")).ljust(widths[c]) for c in columns))
    return "\n".join(lines)


def cmd_eval(args) -> int:
    from .config import assemble_task
    from .trainer import EvalProtocol, evaluate_relative, load_policy_checkpoint

    cfg = _load_config(args.config, args.seed)
    model, clips, _ = assemble_task(cfg)
    by_id = {c.id: c for c in clips}
    if args.clip not in by_id:
        raise CliError("unknown_clip", f"{args.clip!r}; have {sorted(by_id)}")
    clip = by_id[args.clip]
    try:
        policy, _, _ = load_policy_checkpoint(args.checkpoint)
    except (OSError, ValueError) as e:
        raise CliError("bad_checkpoint", str(e)) from None
    protocols: list[EvalProtocol] = []
    if args.sweep:
        for r in (0.5, 0.9, 1.1, 1.6):
            protocols.append(EvalProtocol(speed_ratio=r))
        for p in (5, 20, 60):
            protocols.append(EvalProtocol(impulse_period=p, impulse_magnitude=args.impulse_mag))
        for m in (0.75, 1.25):
            protocols.append(EvalProtocol(mass_scale=m))
    else:
        if args.speed_ratio is not None:
            protocols.append(EvalProtocol(speed_ratio=args.speed_ratio))
        if args.impulse_period is not None:
            protocols.append(
                EvalProtocol(impulse_period=args.impulse_period,
                             impulse_magnitude=args.impulse_mag)
            )
        if args.mass_scale is not None:
            protocols.append(EvalProtocol(mass_scale=args.mass_scale))
    reports = evaluate_relative(
        policy, model, clip, protocols, episodes=args.episodes, seed=args.seed or 0,
        cfg=cfg.ppo, sim=cfg.sim, weights=cfg.reward_weights, coeffs=cfg.reward_coeffs,
        tol=cfg.tolerances,
    )
    rows = [
        {
            "protocol": r.protocol,
            "mean_reward": f"{r.mean_reward:.4f}",
            "relative_pct": f"{r.relative_pct:.1f}%",
            "mean_episode_len": f"{r.mean_episode_length:.0f}",
        }
        for r in reports
    ]
    print(_fmt_table(rows, ["protocol", "mean_reward", "relative_pct", "mean_episode_len"]))
    if args.report:
        Path(args.report).write_text(json.dumps(
            [r.__dict__ for r in reports], indent=2) + "\n")
    return 0


def cmd_dataset(args) -> int:
    from .motion import load_manifest, save_manifest, split_dataset, stats
    from .sampler import LabelTree, build_probability_table

    manifest = Path(args.manifest)
    if not manifest.exists():
        raise CliError("missing_manifest", str(manifest))
    dataset = load_manifest(manifest.read_text(), base_dir=manifest.parent)
    if args.action == "stats":
        s = stats(dataset)
        rows = [dict(split=k, **{kk: round(vv, 2) for kk, vv in v.items()})
                for k, v in s.items()]
        print(_fmt_table(rows, ["split", "num_motions", "num_frames", "avg_length"]))
    elif args.action == "balance-check":
        tree = LabelTree.from_label_paths({c.id: c.label_path for c in dataset.clips})
        table = build_probability_table(tree)
        rows = [{"clip": cid, "probability": f"{p:.6f}"}
                for cid, p in sorted(table.as_dict().items())]
        print(_fmt_table(rows, ["clip", "probability"]))
        print(f"sum = {table.probabilities.sum():.12f}")
    elif args.action == "split":
        ds = split_dataset(dataset.clips, args.train_fraction, args.seed or 0)
        paths = {}
        doc = json.loads(manifest.read_text())
        for entry in doc["clips"]:
            paths[entry["id"]] = entry["path"]
        out = Path(args.out) if args.out else manifest
        out.write_text(save_manifest(ds, paths, exclude=doc.get("exclude", [])))
        print(f"split written to {out}: {len(ds.train_ids)} train / {len(ds.test_ids)} test")
    return 0


def cmd_simtest(args) -> int:
    from .simkit import SimConfig, build_chain, default_state, mechanical_energy, step

    if args.which == "energy":
        pend = build_chain(2, fixed_base=True)
        cfg = SimConfig()
        st = default_state(pend)
        st.q[:] = [np.pi / 2 - 0.5, 0.3]
        e0 = sum(mechanical_energy(pend, st))
        drift = 0.0
        for _ in range(600):
            st = step(pend, st, np.zeros(2), cfg)
            drift = max(drift, abs(sum(mechanical_energy(pend, st)) - e0))
        rel = drift / abs(e0)
        ok = rel < 0.02
        print(f"energy drift over 10 s: {100 * rel:.4f}% (limit 2%) -> "
              f"{'PASS' if ok else 'FAIL'}")
        return 0 if ok else 1
    if args.which == "gradcheck":
        from .policy import forward, forward_cached, backward, mlp_init

        rng = np.random.default_rng(0)
        net = mlp_init([6, 12, 4], rng)
        xs = rng.normal(size=(5, 6))
        targets = rng.normal(size=(5, 4))
        out, cache = forward_cached(net, xs)
        grads, _ = backward(net, cache, out - targets)
        eps, worst = 1e-6, 0.0
        params = net.params()
        for pi, p in enumerate(params):
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
                worst = max(worst, abs(grads[pi][idx] - fd) / max(abs(fd), 1e-8))
        ok = worst < 1e-4
        print(f"gradcheck max rel err: {worst:.2e} (limit 1e-4) -> {'PASS' if ok else 'FAIL'}")
        return 0 if ok else 1
    if args.which == "determinism":
        chain = build_chain(3, planar=True)
        cfg = SimConfig()
        outs = []
        for _ in range(2):
            st = default_state(chain)
            for _ in range(120):
                st = step(chain, st, np.array([0.5, -0.2, 0.1]), cfg)
            outs.append((st.q.copy(), st.qd.copy()))
        same = np.array_equal(outs[0][0], outs[1][0]) and np.array_equal(outs[0][1], outs[1][1])
        print(f"determinism rerun diff: {'bit-identical' if same else 'MISMATCH'} -> "
              f"{'PASS' if same else 'FAIL'}")
        return 0 if same else 1
    raise CliError("unknown_simtest", args.which)


def cmd_serve(args) -> int:
    from .config import assemble_task
    from .service import ServiceConfig, Session, serve
    from .simkit import Perturbation, SimConfig

    cfg = _load_config(args.config, None)
    model, clips, _ = assemble_task(cfg)
    policy = None
    if args.checkpoint:
        from .trainer import load_policy_checkpoint

        try:
            policy, _, _ = load_policy_checkpoint(args.checkpoint)
        except (OSError, ValueError) as e:
            raise CliError("bad_checkpoint", str(e)) from None
    perturbation = None
    if args.impulse_period:
        perturbation = Perturbation(
            np.array([args.impulse_mag, 0.0, 0.0]), period_steps=args.impulse_period
        )
    svc = ServiceConfig(
        host=cfg.serve.host,
        port=args.port or cfg.serve.port,
        pose_port=args.pose_port or cfg.serve.pose_port,
        tick_rate=args.tick_rate or cfg.serve.tick_rate,
        tau=cfg.serve.tau,
    )
    sim = cfg.sim
    session = Session(model, clips, policy=policy, sim=sim, config=svc,
                      weights=cfg.reward_weights, coeffs=cfg.reward_coeffs,
                      perturbation=perturbation)
    try:
        serve(session, svc)
    except OSError as e:
        raise CliError("bind_failed", f"port {svc.port}: {e}") from None
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="marionette",
                                description="tracking executor toolkit")
    sub = p.add_subparsers(dest="command", required=True)

    t = sub.add_parser("train", help="run PPO training")
    t.add_argument("--config", help="run config YAML")
    t.add_argument("--out", required=True, help="output directory")
    t.add_argument("--resume", help="training checkpoint to resume from")
    t.add_argument("--seed", type=int)
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="evaluate a checkpoint under perturbations")
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--clip", default="sway")
    e.add_argument("--config")
    e.add_argument("--speed-ratio", type=float, dest="speed_ratio")
    e.add_argument("--impulse-period", type=int, dest="impulse_period")
    e.add_argument("--impulse-mag", type=float, dest="impulse_mag", default=1.0)
    e.add_argument("--mass-scale", type=float, dest="mass_scale")
    e.add_argument("--episodes", type=int, default=8)
    e.add_argument("--seed", type=int)
    e.add_argument("--sweep", action="store_true", help="emit a full protocol table")
    e.add_argument("--report", help="write a machine-readable JSON sidecar")
    e.set_defaults(func=cmd_eval)

    d = sub.add_parser("dataset", help="dataset manifest tools")
    d.add_argument("action", choices=["stats", "split", "balance-check"])
    d.add_argument("--manifest", required=True)
    d.add_argument("--train-fraction", type=float, dest="train_fraction", default=0.8)
    d.add_argument("--seed", type=int)
    d.add_argument("--out")
    d.set_defaults(func=cmd_dataset)

    s = sub.add_parser("simtest", help="simulator self-checks")
    s.add_argument("which", choices=["energy", "gradcheck", "determinism"])
    s.set_defaults(func=cmd_simtest)

    v = sub.add_parser("serve", help="run the interactive session server")
    v.add_argument("--config")
    v.add_argument("--checkpoint")
    v.add_argument("--port", type=int)
    v.add_argument("--pose-port", type=int, dest="pose_port")
    v.add_argument("--tick-rate", type=float, dest="tick_rate")
    v.add_argument("--impulse-period", type=int, dest="impulse_period")
    v.add_argument("--impulse-mag", type=float, dest="impulse_mag", default=1.0)
    v.set_defaults(func=cmd_serve)
    return p


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    signal.signal(signal.SIGTERM, lambda *_: sys.exit(130))
    try:
        return args.func(args)
    except CliError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except FileNotFoundError as e:
        print(f"error: missing_file: {e}", file=sys.stderr)
        return 2
    except Exception as e:  # noqa: BLE001 - single-line contract for wrappers
        print(f"error: internal: {type(e).__name__}: {e}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
