"""Command-line front end.

Subcommands: degrade, train, eval, eos-trace, oracle, report.
Exit codes: 0 success, 1 IO failure, 2 configuration error, 3 training
divergence, 4 oracle check failure.
"""

from __future__ import annotations

import argparse
import os
import sys

from . import __version__
from .config import documented_keys, load_config
from .degrade import (
    build_dataset,
    load_dataset,
    read_image,
    synthetic_clean_images,
    write_dataset,
)
from .eos import eos_overhead_report, run_eos, write_summary_csv, write_trace_csv
from .errors import ConfigError, DivergenceError
from .fmm import load_params, save_params
from .losses import MsSsimConfig, WeightPair
from .trainer import (
    evaluate,
    train,
    write_eval_csv,
    write_metrics_csv,
    write_trace_csv as write_train_trace_csv,
)
from .util import write_csv

OUT_ENV = "EVORESTORE_OUT"


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="evorestore",
        description="Frequency-gated restoration micro-model with an "
        "evolutionary loss-weight scheduler.",
        epilog="Config keys (also usable with --set): "
        + ", ".join(k for k, _ in documented_keys()),
    )
    parser.add_argument("--version", action="version", version=f"evorestore {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="key = value config file")
        p.add_argument(
            "--set",
            dest="overrides",
            action="append",
            default=[],
            metavar="KEY=VALUE",
            help="override a config key (repeatable)",
        )
        p.add_argument(
            "-o",
            "--out",
            default=os.environ.get(OUT_ENV, "."),
            help=f"output directory (default: ${OUT_ENV} or cwd)",
        )
        p.add_argument(
            "--workers",
            type=int,
            default=1,
            help="evaluation parallelism bound; never changes outputs",
        )

    p = sub.add_parser("degrade", help="build a paired degradation dataset")
    common(p)
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--images", help="directory of .pgm / .fgrid clean images")
    src.add_argument(
        "--synthetic", type=int, metavar="N", help="generate N procedural clean images"
    )
    p.add_argument("--size", type=int, default=48, help="synthetic image side length")
    p.add_argument("--image-seed", type=int, default=0, help="synthetic generator seed")

    p = sub.add_parser("train", help="train the restoration model")
    common(p)
    p.add_argument("--manifest", help="dataset manifest (overrides dataset.manifest)")

    p = sub.add_parser("eval", help="evaluate a checkpoint on a dataset split")
    common(p)
    p.add_argument("--manifest", help="dataset manifest (overrides dataset.manifest)")
    p.add_argument("--checkpoint", required=True, help=".fmmp parameter file")
    p.add_argument("--split", default="val", choices=["train", "val", "test"])

    p = sub.add_parser("eos-trace", help="run one weight-search trigger and print it")
    common(p)
    p.add_argument("--manifest", help="dataset manifest (overrides dataset.manifest)")
    p.add_argument("--checkpoint", required=True, help=".fmmp parameter file")

    p = sub.add_parser("oracle", help="run the independent verification suite")
    common(p)
    p.add_argument("--only", help="substring filter on check names")
    p.add_argument("--fast", action="store_true", help="reduced trial counts")

    p = sub.add_parser("report", help="summarize a training run directory")
    common(p)
    p.add_argument("--run", required=True, help="directory written by `train`")
    p.add_argument(
        "--svg", action="store_true", help="also render SVG line charts (CSV stays primary)"
    )
    return parser


def _load_manifest_dataset(app, manifest_arg):
    manifest = manifest_arg or app.dataset.manifest
    if not manifest:
        raise ConfigError("no dataset manifest: pass --manifest or set dataset.manifest")
    return load_dataset(manifest, app.dataset.split())


def _cmd_degrade(args) -> int:
    app = load_config(args.config, args.overrides)
    if not app.degradations:
        raise ConfigError("degrade needs degradation.specs in the config or --set")
    if args.images is not None:
        names = sorted(
            f
            for f in os.listdir(args.images)
            if f.lower().endswith((".pgm", ".fgrid"))
        )
        if not names:
            raise ConfigError(f"no .pgm/.fgrid images found in {args.images!r}")
        images = [read_image(os.path.join(args.images, f)) for f in names]
    else:
        if args.synthetic < 1:
            raise ConfigError("--synthetic needs N >= 1")
        images = synthetic_clean_images(
            args.synthetic, args.size, args.size, seed=args.image_seed
        )
    dataset = build_dataset(images, app.degradations, app.dataset.split())
    os.makedirs(args.out, exist_ok=True)
    manifest = write_dataset(args.out, dataset)
    print(
        f"wrote {len(dataset.pairs)} pairs "
        f"({len(images)} images x {len(app.degradations)} kinds) -> {manifest}"
    )
    print(
        f"splits: train {len(dataset.train_idx)}, val {len(dataset.val_idx)}, "
        f"test {len(dataset.test_idx)}"
    )
    return 0


def _cmd_train(args) -> int:
    app = load_config(args.config, args.overrides)
    dataset = _load_manifest_dataset(app, args.manifest)
    os.makedirs(args.out, exist_ok=True)
    params, trace = train(dataset, app.trainer, workers=args.workers)

    save_params(os.path.join(args.out, "final.fmmp"), params)
    write_train_trace_csv(os.path.join(args.out, "trace.csv"), trace)
    write_eval_csv(os.path.join(args.out, "eval.csv"), trace)
    write_trace_csv(os.path.join(args.out, "eos_trace.csv"), trace.eos_traces)
    write_summary_csv(os.path.join(args.out, "eos_summary.csv"), trace.eos_traces)
    with open(os.path.join(args.out, "run_summary.txt"), "w") as fh:
        fh.write(f"iterations = {app.trainer.iterations}\n")
        fh.write(f"wall_ms = {trace.wall_ms!r}\n")
        fh.write(f"triggers = {len(trace.eos_traces)}\n")
        fh.write(f"final_alpha = {trace.rows[-1].alpha!r}\n")
        fh.write(f"final_beta = {trace.rows[-1].beta!r}\n")

    last = trace.rows[-1]
    print(
        f"trained {app.trainer.iterations} iterations; final combined loss "
        f"{last.loss_combined:.6f} (alpha {last.alpha:.3f}, beta {last.beta:.3f})"
    )
    print(f"{len(trace.eos_traces)} weight-search triggers; artifacts in {args.out}")
    return 0


def _cmd_eval(args) -> int:
    app = load_config(args.config, args.overrides)
    dataset = _load_manifest_dataset(app, args.manifest)
    params = load_params(args.checkpoint)
    table = evaluate(
        params, dataset, args.split, app.trainer.charbonnier_eps, workers=args.workers
    )
    os.makedirs(args.out, exist_ok=True)
    write_metrics_csv(os.path.join(args.out, "metrics.csv"), table)
    print(f"{'kind':<10} {'count':>5} {'psnr':>8} {'ssim':>7} {'fid':>9} {'perc':>9}")
    for row in table:
        print(
            f"{row.kind:<10} {row.count:>5} {row.psnr_mean:>8.3f} {row.ssim_mean:>7.4f} "
            f"{row.fid_mean:>9.5f} {row.perc_mean:>9.5f}"
        )
    return 0


def _cmd_eos_trace(args) -> int:
    app = load_config(args.config, args.overrides)
    dataset = _load_manifest_dataset(app, args.manifest)
    params = load_params(args.checkpoint)
    val = dataset.restoration_pairs("val")
    if not val:
        raise ConfigError("dataset has no validation pairs")
    ms_cfg = MsSsimConfig.for_shape(*val[0][0].shape)
    init = [WeightPair(app.trainer.init_alpha, app.trainer.init_beta)]
    winner, trace = run_eos(
        params,
        val,
        app.trainer.eos,
        init=init,
        trigger_index=1,
        eps=app.trainer.charbonnier_eps,
        ms_cfg=ms_cfg,
        workers=args.workers,
    )
    os.makedirs(args.out, exist_ok=True)
    write_trace_csv(os.path.join(args.out, "eos_trace.csv"), [trace])
    write_summary_csv(os.path.join(args.out, "eos_summary.csv"), [trace])
    print("generation  best_fitness        winner_so_far")
    for g, best in enumerate(trace.best_per_generation):
        print(f"{g:>10}  {best:>18.12f}")
    print(
        f"winner: alpha {winner.alpha:.6f}, beta {winner.beta:.6f} "
        f"({trace.evaluations} evaluations, {trace.total_wall_ms:.1f} ms)"
    )
    return 0


def _cmd_oracle(args) -> int:
    from .oracles import run_all

    results = run_all(only=args.only, fast=args.fast)
    width = max(len(r.name) for r in results)
    failures = 0
    for r in results:
        status = "PASS" if r.passed else "FAIL"
        failures += 0 if r.passed else 1
        print(f"{r.name:<{width}}  {r.error:12.4e} <= {r.tol:8.1e}  {status}  {r.detail}")
    print(f"{len(results) - failures}/{len(results)} oracle checks passed")
    return 0 if failures == 0 else 4


def _read_kv(path) -> dict:
    out = {}
    with open(path) as fh:
        for line in fh:
            if "=" in line:
                k, _, v = line.partition("=")
                out[k.strip()] = v.strip()
    return out


def _read_csv(path):
    with open(path) as fh:
        lines = [ln.strip() for ln in fh if ln.strip()]
    header = lines[0].split(",")
    return header, [ln.split(",") for ln in lines[1:]]


def _cmd_report(args) -> int:
    run_dir = args.run
    summary = _read_kv(os.path.join(run_dir, "run_summary.txt"))
    train_wall_ms = float(summary.get("wall_ms", "0"))
    header, rows = _read_csv(os.path.join(run_dir, "eos_summary.csv"))

    class _T:  # minimal stand-in so eos_overhead_report can aggregate CSVs
        def __init__(self, row):
            d = dict(zip(header, row))
            self.eval_wall_ms = float(d["eval_ms"])
            self.total_wall_ms = float(d["total_ms"])
            self.evaluations = int(d["evaluations"])

    report = eos_overhead_report([_T(r) for r in rows], train_wall_ms)
    os.makedirs(args.out, exist_ok=True)
    write_csv(
        os.path.join(args.out, "overhead.csv"),
        (
            "triggers",
            "evaluations",
            "eval_ms",
            "residual_ms",
            "total_ms",
            "train_wall_ms",
            "pct_of_train",
        ),
        [
            (
                report.triggers,
                report.evaluations,
                report.eval_ms,
                report.residual_ms,
                report.total_ms,
                report.epoch_ms,
                report.pct_of_epoch,
            )
        ],
    )
    print(
        f"{report.triggers} triggers, {report.evaluations} evaluations; "
        f"search wall {report.total_ms:.1f} ms (eval {report.eval_ms:.1f} ms) = "
        f"{report.pct_of_epoch:.2f}% of training wall {report.epoch_ms:.1f} ms"
    )
    if args.svg:
        _render_svg(run_dir, args.out)
        print(f"SVG charts in {args.out}")
    return 0


def _render_svg(run_dir, out_dir) -> None:
    try:
        import matplotlib

        matplotlib.use("svg")
        import matplotlib.pyplot as plt
    except ImportError as exc:  # pragma: no cover - depends on extras
        raise ConfigError(
            "chart rendering needs matplotlib (pip install 'evorestore[plots]')"
        ) from exc

    header, rows = _read_csv(os.path.join(run_dir, "trace.csv"))
    it = [int(r[0]) for r in rows]
    comb = [float(r[header.index("loss_combined")]) for r in rows]
    fig, ax = plt.subplots(figsize=(6, 3.5))
    ax.plot(it, comb, lw=1.0)
    ax.set_xlabel("iteration")
    ax.set_ylabel("combined loss")
    fig.tight_layout()
    fig.savefig(os.path.join(out_dir, "loss_curve.svg"))
    plt.close(fig)

    eval_path = os.path.join(run_dir, "eval.csv")
    if os.path.exists(eval_path):
        header, rows = _read_csv(eval_path)
        if rows:
            it = [int(r[0]) for r in rows]
            ps = [float(r[header.index("psnr")]) for r in rows]
            fig, ax = plt.subplots(figsize=(6, 3.5))
            ax.plot(it, ps, lw=1.0)
            ax.set_xlabel("iteration")
            ax.set_ylabel("validation PSNR (dB)")
            fig.tight_layout()
            fig.savefig(os.path.join(out_dir, "psnr_curve.svg"))
            plt.close(fig)


_COMMANDS = {
    "degrade": _cmd_degrade,
    "train": _cmd_train,
    "eval": _cmd_eval,
    "eos-trace": _cmd_eos_trace,
    "oracle": _cmd_oracle,
    "report": _cmd_report,
}


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        return _COMMANDS[args.command](args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except DivergenceError as exc:
        print(f"divergence: {exc}", file=sys.stderr)
        return 3
    except OSError as exc:
        print(f"io error: {exc}", file=sys.stderr)
        return 1


def console_main() -> None:
    sys.exit(main())


if __name__ == "__main__":
    console_main()
