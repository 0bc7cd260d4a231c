"""``tgpnet`` command line: synth, train, infer, eval, diagnose, params, flops.

Exit status 0 on success, 2 on bad arguments, 1 on runtime failure (one JSON
line on stderr), and 1 when ``params``/``flops`` land outside the band.
"""
from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import io
from .config import RunConfig, load_run_config

# reference values for the full configuration (params in M, MACs in G at 256x256)
REF_PARAMS_M = 21.27
REF_GMACS = 71.42
BAND = 0.25


def _config(args) -> RunConfig:
    overrides = list(getattr(args, "set", None) or [])
    if getattr(args, "seed", None) is not None:
        overrides.append(f"seed={args.seed}")
    return load_run_config(getattr(args, "config", None), overrides)


def _read_image(path) -> np.ndarray:
    p = str(path)
    return io.load_png(p) if p.lower().endswith(".png") else io.load_tensor(p)


def _pool_from_manifest(data_dir):
    from .degradations import DegradationSpec, PairedSample

    d = Path(data_dir)
    _, rows = io.read_records(d / "manifest.jsonl")
    return [PairedSample(io.load_tensor(d / r["clean"]).astype(np.float64),
                         io.load_tensor(d / r["degraded"]).astype(np.float64),
                         DegradationSpec.from_dict(r["spec"])) for r in rows]


def _synth_pool(cfg: RunConfig):
    from .degradations import make_pair

    dc = cfg.data
    return [make_pair(s, spec, dc.size, dc.size, dc.channels) for s, spec in dc.specs(cfg.seed)]


# ---------------------------------------------------------------- commands

def cmd_synth(args) -> int:
    from .degradations import DegradationSpec, default_spec, make_pair

    cfg = _config(args)
    out = Path(args.out or cfg.paths.data_dir or Path(cfg.paths.out_dir) / "data")
    out.mkdir(parents=True, exist_ok=True)
    if args.composite:
        dc = cfg.data
        steps = args.composite.split(",")
        pairs = []
        for j in range(dc.pairs_per_task):
            s = 900_000 + cfg.seed * 1_000_003 + j
            spec = DegradationSpec("composite", seed=s,
                                   compose=[default_spec(t, seed=s, **dc.tasks.get(t, {}) or {})
                                            for t in steps])
            pairs.append(make_pair(s, spec, dc.size, dc.size, dc.channels))
    else:
        pairs = _synth_pool(cfg)
    rows = []
    for i, p in enumerate(pairs):
        stem = f"{i:05d}_{p.task_id}"
        io.save_tensor(out / f"{stem}_clean.t4f", p.clean)
        io.save_tensor(out / f"{stem}_degraded.t4f", p.degraded)
        rows.append({"id": i, "task": p.task_id, "spec": p.spec.to_dict(),
                     "clean": f"{stem}_clean.t4f", "degraded": f"{stem}_degraded.t4f"})
    io.write_records(out / "manifest.jsonl", rows, "manifest")
    cfg.dump(out / "config.yaml")
    print(f"wrote {len(rows)} pairs to {out}")
    return 0


def cmd_train(args) -> int:
    from .model import build_model
    from .training import train

    cfg = _config(args)
    out = Path(args.out or cfg.paths.out_dir)
    data_dir = args.data or cfg.paths.data_dir
    pool = _pool_from_manifest(data_dir) if data_dir else _synth_pool(cfg)
    model = build_model(cfg.model)
    out.mkdir(parents=True, exist_ok=True)
    cfg.dump(out / "config.yaml")
    rep = train(model, pool, cfg.train, out)
    print(f"trained {len(rep.records)} steps, final loss {rep.losses[-1]:.5f}; "
          f"checkpoints in {out}")
    return 0


def cmd_infer(args) -> int:
    from .inference import TaskPlan, restore_steps

    plan = TaskPlan.parse(args.plan)
    model = io.load_model(args.ckpt, use_ema=args.ema)
    x = _read_image(args.input)
    steps = restore_steps(model, x, plan)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for i, y in enumerate(steps, 1):
        io.save_tensor(out / f"step_{i}.t4f", y)
    final = np.clip(steps[-1], 0.0, 1.0)
    io.save_tensor(out / "final.t4f", final)
    if args.png:
        for k in range(final.shape[0]):
            io.save_png(out / f"final_{k}.png", final[k:k + 1])
    print(f"wrote {len(steps) + 1} tensors to {out}")
    return 0


def cmd_eval(args) -> int:
    from .metrics import evaluate

    rep = evaluate(np.clip(_read_image(args.restored), 0.0, 1.0), _read_image(args.reference))
    rows = [dict(r, image=i) for i, r in enumerate(rep.per_image)]
    agg = {"image": "mean", "psnr": rep.psnr, "ssim": rep.ssim, "mae": rep.mae, "sam": rep.sam}
    if args.out:
        io.write_records(args.out, rows + [agg], "metrics")
    if args.table:
        print(f"{'image':>6} {'PSNR':>8} {'SSIM':>7} {'MAE':>7} {'SAM':>7}")
        for r in rows + [agg]:
            print(f"{r['image']!s:>6} {r['psnr']:8.2f} {r['ssim']:7.4f} {r['mae']:7.4f} {r['sam']:7.3f}")
    else:
        print(json.dumps(agg))
    return 0


def cmd_diagnose(args) -> int:
    from .clustering import cluster_report, feature_vectors, project_2d

    model = io.load_model(args.ckpt, use_ema=args.ema)
    pool = _pool_from_manifest(args.data)
    images = np.concatenate([p.degraded for p in pool])
    labels = [p.task_id for p in pool]
    prompts = labels if args.prompt is None else args.prompt
    feats = feature_vectors(model, images, prompts, tap=args.tap)
    k = args.k or len(set(labels))
    rep = cluster_report(feats, k, labels, seed=args.seed or 0)
    coords = project_2d(feats)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    io.atomic_write(out / "cluster_report.json", json.dumps(rep.to_dict(), indent=2).encode())
    io.write_records(out / "coords.jsonl",
                     [{"id": i, "task": t, "x": float(c[0]), "y": float(c[1])}
                      for i, (t, c) in enumerate(zip(labels, coords))], "coords")
    print(json.dumps({"internal": rep.internal, "external": rep.external}))
    return 0


def _band(value, ref):
    dev = (value - ref) / ref
    return dev, abs(dev) <= BAND


def cmd_params(args) -> int:
    from .accounting import count_parameters, group_totals

    cfg = _config(args).model
    total = count_parameters(cfg)
    for g, (p, _) in group_totals(cfg, 8, 8).items():
        print(f"  {g:<12} {p:>12,d}")
    dev, ok = _band(total / 1e6, REF_PARAMS_M)
    print(f"params {total / 1e6:.3f} M vs {REF_PARAMS_M} M ({dev:+.1%}, band ±{BAND:.0%}): "
          f"{'PASS' if ok else 'FAIL'}")
    return 0 if ok else 1


def cmd_flops(args) -> int:
    from .accounting import estimate_flops, estimate_macs, group_totals

    cfg = _config(args).model
    h = w = args.size
    macs = estimate_macs(cfg, h, w)
    for g, (_, m) in group_totals(cfg, h, w).items():
        print(f"  {g:<12} {m / 1e9:>10.3f} GMAC")
    dev, ok = _band(macs / 1e9, REF_GMACS)
    print(f"multiply-accumulates {macs / 1e9:.2f} G at {h}x{w} vs {REF_GMACS} G "
          f"({dev:+.1%}, band ±{BAND:.0%}): {'PASS' if ok else 'FAIL'}")
    print(f"(2 ops per MAC: {estimate_flops(cfg, h, w) / 1e9:.2f} G floating-point operations)")
    return 0 if ok else 1


# ---------------------------------------------------------------- parser

def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="tgpnet", description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="command", required=True)

    def with_config(p):
        p.add_argument("--config", help="run config YAML")
        p.add_argument("--set", action="append", metavar="KEY=VALUE",
                       help="dotted override, e.g. train.lr_init=1e-3 (repeatable)")
        p.add_argument("--seed", type=int)
        return p

    p = with_config(sub.add_parser("synth", help="generate paired training data"))
    p.add_argument("--out")
    p.add_argument("--composite", help="comma-separated degradations applied in order")
    p.set_defaults(fn=cmd_synth)

    p = with_config(sub.add_parser("train", help="train a model"))
    p.add_argument("--data", help="directory written by synth (default: generate in memory)")
    p.add_argument("--out")
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("infer", help="restore an image with a task plan")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--input", required=True, help=".t4f tensor or .png")
    p.add_argument("--plan", required=True, help="single:T | seq:T1,T2 | avg:T1,T2")
    p.add_argument("--out", required=True)
    p.add_argument("--ema", action="store_true", help="use EMA weights")
    p.add_argument("--png", action="store_true", help="also export 8-bit PNGs")
    p.set_defaults(fn=cmd_infer)

    p = sub.add_parser("eval", help="score restored images against references")
    p.add_argument("--restored", required=True)
    p.add_argument("--reference", required=True)
    p.add_argument("--out", help="metrics records (.jsonl)")
    p.add_argument("--table", action="store_true")
    p.set_defaults(fn=cmd_eval)

    p = sub.add_parser("diagnose", help="cluster tapped decoder features by task")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--tap", default="d2.post")
    p.add_argument("--k", type=int)
    p.add_argument("--prompt", help="use this task prompt for every image")
    p.add_argument("--seed", type=int)
    p.add_argument("--out", required=True)
    p.add_argument("--ema", action="store_true")
    p.set_defaults(fn=cmd_diagnose)

    p = with_config(sub.add_parser("params", help="parameter count against the reference"))
    p.set_defaults(fn=cmd_params)

    p = with_config(sub.add_parser("flops", help="operation count against the reference"))
    p.add_argument("--size", type=int, default=256)
    p.set_defaults(fn=cmd_flops)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except (Exception, KeyboardInterrupt) as exc:  # noqa: BLE001
        err = {"error": type(exc).__name__, "message": str(exc).splitlines()[0] if str(exc) else "",
               "command": args.command}
        print(json.dumps(err), file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
