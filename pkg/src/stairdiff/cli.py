"""Command-line front door.

Subcommands: count (composition search spaces), plan (trajectory dumps),
train, generate, verify (statistical suites) and sample-composition
(histogram of the anchored sampler). One JSON config file drives train and
generate; flags override config values, and STAIRDIFF_OUTPUT_DIR overrides
the configured output directory. Exit codes: 0 success, 1 verification
failure, 2 usage or config error.
"""

from __future__ import annotations

import argparse
import math
import sys
from pathlib import Path

import numpy as np

from stairdiff import __version__, denoiser as dn, lattice, sampling, training, verify
from stairdiff.config import ConfigError, load_run_config
from stairdiff.trajectory import export_plan, plan_trajectory
from stairdiff.video import dump_latent_csv, save_latent_video

USAGE_ERROR = 2


def _sci(n: int) -> str:
    if n < 1000:
        return str(n)
    e = len(str(n)) - 1
    mant = n / 10**e
    return f"{mant:.2f}e{e}"


def cmd_count(args) -> int:
    F, T = args.frames, args.timesteps
    nd = lattice.count_compositions(F, T)
    print(f"frames={F} timesteps={T}")
    print(f"  equal          {T}  (~{_sci(T)})")
    print(f"  independent    {T**F}  (~{_sci(T**F)})")
    print(f"  non-decreasing {nd}  (~{_sci(nd)})")
    return 0


def cmd_plan(args) -> int:
    plan = plan_trajectory(args.frames, args.steps, args.s)
    print(
        f"frames={args.frames} grid_steps={args.steps} offset={args.s} "
        f"-> {len(plan)} steps, {len(plan)} denoiser calls"
    )
    if args.out:
        export_plan(plan, args.out)
        print(f"wrote {args.out}")
    return 0


def _overrides_from(args) -> dict:
    over: dict = {}
    if getattr(args, "seed", None) is not None:
        over.setdefault("train", {})["seed"] = args.seed
        over.setdefault("sample", {})["seed"] = args.seed
    if getattr(args, "steps", None) is not None:
        over.setdefault("train", {})["steps"] = args.steps
    if getattr(args, "output_dir", None) is not None:
        over.setdefault("paths", {})["output_dir"] = args.output_dir
    return over


def cmd_train(args) -> int:
    cfg = load_run_config(args.config, _overrides_from(args))
    sched = cfg.schedule
    outdir = cfg.output_dir
    outdir.mkdir(parents=True, exist_ok=True)
    dataset = training.make_synthetic_dataset(cfg.dataset)
    cache = cfg.tree["paths"]["dataset_cache"]
    if cache:
        from stairdiff.video import save_tensor

        save_tensor(np.stack([v.data for v in dataset]), cache)
    result = training.train(cfg.train, dataset, cfg.denoiser, sched)
    meta = {
        "schedule": cfg.tree["schedule"],
        "scale_factor": cfg.train.scale_factor,
        "frames": cfg.denoiser.frames,
        "seed": cfg.train.seed,
    }
    dn.save_checkpoint(result.params, cfg.denoiser, {**meta, "kind": "final"}, outdir / "checkpoint.bin")
    dn.save_checkpoint(result.ema_params, cfg.denoiser, {**meta, "kind": "ema"}, outdir / "checkpoint_ema.bin")
    training.write_loss_csv(result.log, outdir / "loss.csv")
    first = np.mean([r.loss for r in result.log[:100]])
    last = np.mean([r.loss for r in result.log[-100:]])
    print(f"trained {cfg.train.steps} steps; loss {first:.5f} -> {last:.5f}")
    print(f"wrote {outdir / 'checkpoint.bin'}, {outdir / 'checkpoint_ema.bin'}, {outdir / 'loss.csv'}")
    return 0


def cmd_generate(args) -> int:
    cfg = load_run_config(args.config, _overrides_from(args))
    params, ck_config, meta = dn.load_checkpoint(args.checkpoint)
    if ck_config != cfg.denoiser:
        raise ConfigError(
            f"checkpoint was trained with denoiser {ck_config}, config says {cfg.denoiser}"
        )
    if meta.get("schedule") != cfg.tree["schedule"]:
        raise ConfigError(
            f"checkpoint schedule {meta.get('schedule')} != config {cfg.tree['schedule']}"
        )
    if meta.get("scale_factor") != cfg.train.scale_factor:
        raise ConfigError(
            f"checkpoint scale_factor {meta.get('scale_factor')} != config "
            f"{cfg.train.scale_factor}"
        )
    sample_cfg = cfg.sample(offset=args.s, mode=args.mode, seed=args.seed)
    rng = np.random.default_rng(sample_cfg.seed)
    video = sampling.generate(params, ck_config, cfg.schedule, sample_cfg, rng)
    out = Path(args.out) if args.out else cfg.output_dir / (
        f"sample_s{sample_cfg.offset}_{sample_cfg.mode}.bin"
    )
    out.parent.mkdir(parents=True, exist_ok=True)
    save_latent_video(video, out)
    print(f"generated {video.frames}x{video.tokens}x{video.dim} latents -> {out}")
    if args.csv:
        dump_latent_csv(video, args.csv)
        print(f"wrote {args.csv}")
    return 0


def cmd_verify(args) -> int:
    results = verify.run_suite(args.suite, seed=args.seed)
    for r in results:
        print(r.line())
    failed = [r for r in results if not r.passed]
    print(f"{len(results) - len(failed)}/{len(results)} checks passed")
    return 1 if failed else 0


def cmd_sample_composition(args) -> int:
    F, T, n = args.frames, args.timesteps, args.n
    if args.tables_cache and Path(args.tables_cache).exists():
        tables = lattice.load_count_tables(args.tables_cache)
        if (tables.frames, tables.max_timestep) != (F, T):
            raise ConfigError(
                f"cached tables are for (F={tables.frames}, T={tables.max_timestep}), "
                f"asked for (F={F}, T={T})"
            )
    else:
        tables = lattice.build_count_tables(F, T)
        if args.tables_cache:
            lattice.save_count_tables(tables, args.tables_cache)
            print(f"cached tables -> {args.tables_cache}")
    rng = np.random.default_rng(args.seed)
    draws = lattice.sample_compositions(tables, n, rng)
    total = lattice.count_compositions(F, T)
    if total <= 2000:
        comps = verify.enumerate_compositions(F, T, "non_decreasing").compositions
        keys = {c.timesteps: i for i, c in enumerate(comps)}
        counts = np.zeros(len(comps), dtype=np.int64)
        for row in map(tuple, draws.tolist()):
            counts[keys[row]] += 1
        ok = True
        print(f"{'composition':<24s} {'count':>8s} {'freq':>10s} {'expected':>10s} {'3-sigma':>10s}")
        for c, obs in zip(comps, counts):
            p = math.exp(lattice.composition_log_probability(c, tables))
            sigma = math.sqrt(p * (1 - p) / n)
            flag = "" if abs(obs / n - p) <= 3 * sigma else "  <-- outside 3 sigma"
            ok = ok and not flag
            label = "<" + ",".join(map(str, c.timesteps)) + ">"
            print(f"{label:<24s} {obs:>8d} {obs / n:>10.5f} {p:>10.5f} {3 * sigma:>10.5f}{flag}")
        return 0 if ok else 1
    uniq, counts = np.unique(draws, axis=0, return_counts=True)
    order = np.argsort(-counts)[:20]
    print(f"{total} compositions; showing the 20 most sampled of {len(uniq)} seen")
    for i in order:
        label = "<" + ",".join(map(str, uniq[i])) + ">"
        print(f"{label:<40s} {counts[i]:>8d} {counts[i] / n:>10.6f}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="stairdiff",
        description="Asynchronous frame-wise diffusion toolkit (desk scale).",
    )
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    c = sub.add_parser("count", help="composition counts under each constraint")
    c.add_argument("--frames", type=int, required=True)
    c.add_argument("--timesteps", type=int, required=True)
    c.set_defaults(fn=cmd_count)

    c = sub.add_parser("plan", help="plan and dump an inference trajectory")
    c.add_argument("--frames", type=int, required=True)
    c.add_argument("--steps", type=int, required=True, help="sampler grid levels N")
    c.add_argument("--s", type=int, required=True, help="inter-frame timestep difference")
    c.add_argument("--out", help="write line-delimited step records here")
    c.set_defaults(fn=cmd_plan)

    c = sub.add_parser("train", help="train the toy denoiser from a config file")
    c.add_argument("--config", help="JSON run config (defaults used when omitted)")
    c.add_argument("--seed", type=int, default=None)
    c.add_argument("--steps", type=int, default=None)
    c.add_argument("--output-dir", default=None)
    c.set_defaults(fn=cmd_train)

    c = sub.add_parser("generate", help="sample latents from a checkpoint")
    c.add_argument("--config", help="JSON run config (defaults used when omitted)")
    c.add_argument("--checkpoint", required=True)
    c.add_argument("--s", type=int, default=None, help="inter-frame timestep difference")
    c.add_argument("--mode", choices=sampling.MODES, default=None)
    c.add_argument("--seed", type=int, default=None)
    c.add_argument("--out", default=None)
    c.add_argument("--csv", default=None, help="also dump values as CSV here")
    c.set_defaults(fn=cmd_generate)

    c = sub.add_parser("verify", help="run a statistical verification suite")
    c.add_argument("suite", choices=sorted(verify.SUITES) + sorted(verify.ALIASES))
    c.add_argument("--seed", type=int, default=0)
    c.set_defaults(fn=cmd_verify)

    c = sub.add_parser("sample-composition", help="histogram the anchored sampler")
    c.add_argument("--frames", type=int, required=True)
    c.add_argument("--timesteps", type=int, required=True)
    c.add_argument("--n", type=int, default=10000)
    c.add_argument("--seed", type=int, default=0)
    c.add_argument("--tables-cache", default=None, help="binary count-tables cache file")
    c.set_defaults(fn=cmd_sample_composition)
    return p


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return USAGE_ERROR
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return USAGE_ERROR


if __name__ == "__main__":
    sys.exit(main())
