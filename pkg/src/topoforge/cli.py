"""Command-line front door: optimize, dataset, train, sample, eval, serve.

Exit codes: 0 success, 1 usage error, 2 runtime failure.
TOPOFORGE_DATA_DIR sets the default output root.
"""
from __future__ import annotations

import argparse
import os
import sys
from pathlib import Path

import numpy as np

from .dataset import DatasetManifest, GridSpec, generate_dataset, write_grid
from .errors import TopoforgeError
from .fem import LoadCase, MeshSpec
from .gan import GanConfig, sample as gan_sample, train as gan_train
from .postprocess import PostprocessConfig, postprocess
from .simp import OptimizationParams, optimize


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise _UsageError(message)


def data_dir() -> Path:
    return Path(os.environ.get("TOPOFORGE_DATA_DIR", "topoforge-data"))


def _out_path(arg: str | None, default_name: str) -> Path:
    return Path(arg) if arg else data_dir() / default_name


def build_parser() -> _Parser:
    p = _Parser(prog="topoforge", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)

    sp = sub.add_parser("optimize", help="run one SIMP optimization")
    sp.add_argument("--nelx", type=int, required=True)
    sp.add_argument("--nely", type=int, required=True)
    sp.add_argument("--volfrac", type=float, required=True)
    sp.add_argument("--penal", type=float, required=True)
    sp.add_argument("--rmin", type=float, required=True)
    sp.add_argument("--out", type=str, required=True, help="output .topo grid file")
    sp.add_argument("--max-iters", type=int, default=200)

    sp = sub.add_parser("dataset", help="generate the labeled structure dataset")
    sp.add_argument("--profile", choices=["desk", "full"], default="desk")
    sp.add_argument("--out", type=str, default=None)
    sp.add_argument("--workers", type=int, default=1)
    sp.add_argument("--resume", action="store_true")

    sp = sub.add_parser("train", help="train the conditional WGAN")
    sp.add_argument("--dataset", type=str, required=True)
    sp.add_argument("--epochs", type=int, required=True)
    sp.add_argument("--batch", type=int, default=64)
    sp.add_argument("--n-critic", type=int, default=5)
    sp.add_argument("--clip", type=float, default=0.01)
    sp.add_argument("--lr", type=float, default=5e-5)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--out", type=str, default=None)
    sp.add_argument("--base-channels", type=int, default=256)
    sp.add_argument("--critic-base-channels", type=int, default=None)
    sp.add_argument("--stages", type=int, default=None)
    sp.add_argument("--critic-mode", choices=["linear", "paper_tanh"], default="linear")
    sp.add_argument("--gen-lr-scale", type=float, default=1.0)
    sp.add_argument("--warmup-critic-steps", type=int, default=0)
    sp.add_argument("--warmup-cycles", type=int, default=0)
    sp.add_argument("--checkpoint-every", type=int, default=50)
    sp.add_argument("--resume-from", type=str, default=None)
    sp.add_argument("--log-every", type=int, default=10)

    sp = sub.add_parser("sample", help="generate structures from a trained model")
    sp.add_argument("--model", type=str, required=True)
    sp.add_argument("--volfrac", type=float, required=True)
    sp.add_argument("--count", type=int, default=1)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--post", action="store_true", help="apply threshold + smoothing")
    sp.add_argument("--out", type=str, default=None)

    sp = sub.add_parser("eval", help="evaluate a trained model against SIMP")
    sp.add_argument("--model", type=str, required=True)
    sp.add_argument("--dataset", type=str, default=None)
    sp.add_argument("--conditions", type=str, default="0.3,0.4,0.5,0.6,0.7")
    sp.add_argument("--n-per-condition", type=int, default=8)
    sp.add_argument("--timing-repeats", type=int, default=5,
                    help="repetitions for the timing comparison; 0 disables it")
    sp.add_argument("--out", type=str, default=None)

    sp = sub.add_parser("serve", help="serve the HTTP API for the design explorer")
    sp.add_argument("--model", type=str, required=True)
    sp.add_argument("--port", type=int, default=8765)
    sp.add_argument("--host", type=str, default="127.0.0.1")
    sp.add_argument("--dataset", type=str, default=None)

    return p


def _cmd_optimize(args) -> int:
    mesh = MeshSpec(nelx=args.nelx, nely=args.nely)
    load = LoadCase.cantilever(mesh)
    params = OptimizationParams(
        volfrac=args.volfrac, penal=args.penal, rmin=args.rmin, max_iters=args.max_iters
    )
    field, trace = optimize(mesh, load, params)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    write_grid(out, field)
    print(
        f"iterations={trace.iterations} converged={trace.converged} "
        f"compliance={trace.final_compliance:.4f} mean_density={field.mean():.4f} "
        f"wall={trace.wall_seconds:.1f}s -> {out}"
    )
    return 0


def _cmd_dataset(args) -> int:
    spec = GridSpec.profile(args.profile)
    out = _out_path(args.out, f"dataset-{args.profile}")
    out.mkdir(parents=True, exist_ok=True)

    def progress(done, total):
        if done % 10 == 0 or done == total:
            print(f"[dataset] {done}/{total}", flush=True)

    manifest = generate_dataset(
        spec, out, workers=args.workers, resume=args.resume, progress=progress
    )
    converged = sum(r.converged for r in manifest.records)
    print(f"{len(manifest.records)} samples ({converged} converged) -> {out}")
    return 0


def _cmd_train(args) -> int:
    ds_dir = Path(args.dataset)
    manifest = DatasetManifest.load(ds_dir / "manifest.jsonl")
    h, w = manifest.mesh["nely"], manifest.mesh["nelx"]
    cfg = GanConfig(
        resolution=(h, w),
        batch_size=args.batch,
        n_critic=args.n_critic,
        clip_c=args.clip,
        lr=args.lr,
        seed=args.seed,
        epochs=args.epochs,
        base_channels=args.base_channels,
        critic_base_channels=args.critic_base_channels,
        stages=args.stages,
        critic_mode=args.critic_mode,
        gen_lr_scale=args.gen_lr_scale,
        warmup_critic_steps=args.warmup_critic_steps,
        warmup_cycles=args.warmup_cycles,
        checkpoint_every=args.checkpoint_every,
    )
    out = _out_path(args.out, "model")
    result = gan_train(
        manifest, ds_dir, cfg, out,
        resume_from=Path(args.resume_from) if args.resume_from else None,
        metrics_path=out / "metrics.jsonl",
        log_every=args.log_every,
    )
    print(
        f"trained {result.generator_steps} generator steps "
        f"({result.optimizer_steps} optimizer steps) -> {result.checkpoint_path}"
    )
    return 0


def _cmd_sample(args) -> int:
    result = gan_sample(Path(args.model), args.volfrac, count=args.count, seed=args.seed)
    out = _out_path(args.out, "samples")
    out.mkdir(parents=True, exist_ok=True)
    from .evaluate import write_pgm
    from .postprocess import measured_volfrac

    for i, field in enumerate(result.fields):
        if args.post:
            field = postprocess(field, PostprocessConfig())
        write_grid(out / f"sample_{i:03d}.topo", field)
        write_pgm(field, out / f"sample_{i:03d}.pgm")
        print(
            f"sample_{i:03d}: measured_volfrac={measured_volfrac(field):.4f} "
            f"gen_time={result.seconds[i] * 1000:.1f}ms"
        )
    print(f"{args.count} structures -> {out}")
    return 0


def _cmd_eval(args) -> int:
    from .evaluate import (
        compliance_comparison,
        condition_fidelity,
        render_table,
        timing_comparison,
    )
    from .gan import load_generator

    model = Path(args.model)
    conditions = [float(tok) for tok in args.conditions.split(",") if tok.strip()]
    if not conditions:
        raise _UsageError("--conditions must name at least one volume fraction")
    gen_cfg = load_generator(model)
    h, w = gen_cfg[1].resolution
    mesh = MeshSpec(nelx=w, nely=h)
    load = LoadCase.cantilever(mesh)

    manifest = None
    ds_dir = None
    if args.dataset:
        ds_dir = Path(args.dataset)
        manifest = DatasetManifest.load(ds_dir / "manifest.jsonl")

    report = condition_fidelity(gen_cfg, conditions, n_per_condition=args.n_per_condition)
    report = compliance_comparison(report, gen_cfg, mesh, load, manifest=manifest,
                                   manifest_dir=ds_dir)
    timing_rows = None
    if args.timing_repeats > 0:
        params = [OptimizationParams(volfrac=c, penal=3.0, rmin=1.5) for c in conditions]
        timing_rows = timing_comparison(gen_cfg, params, mesh, load, repeats=args.timing_repeats)

    table = render_table(report, timing_rows)
    out = _out_path(args.out, "eval")
    out.mkdir(parents=True, exist_ok=True)
    report.save(out / "report.json")
    (out / "table.txt").write_text(table + "\n")
    if timing_rows:
        import json

        (out / "timing.json").write_text(json.dumps(timing_rows, indent=2))
    print(table)
    return 0


def _cmd_serve(args) -> int:
    import uvicorn

    from .service import create_app

    app = create_app(Path(args.model), Path(args.dataset) if args.dataset else None)
    uvicorn.run(app, host=args.host, port=args.port, log_level="warning")
    return 0


_COMMANDS = {
    "optimize": _cmd_optimize,
    "dataset": _cmd_dataset,
    "train": _cmd_train,
    "sample": _cmd_sample,
    "eval": _cmd_eval,
    "serve": _cmd_serve,
}


def cli_dispatch(argv: list[str]) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except _UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        parser.print_usage(sys.stderr)
        return 1
    try:
        return _COMMANDS[args.command](args)
    except _UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 1
    except TopoforgeError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"io error: {exc}", file=sys.stderr)
        return 2


def main() -> None:
    sys.exit(cli_dispatch(sys.argv[1:]))


if __name__ == "__main__":
    main()
