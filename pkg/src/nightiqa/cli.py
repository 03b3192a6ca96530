"""Command-line entry point for the whole pipeline.

Subcommands: prepare-eai, train, predict, evaluate, crossval, rank-acc,
gradcheck, decompose, tune-demo. Batch operation only; every subcommand
is deterministic given --seed.
"""

import argparse
import csv
import sys
import tempfile
from pathlib import Path

import numpy as np

from . import evaluation, training
from .data import load_checkpoint, load_image, load_manifest, save_image
from .eai import CameraResponseParams, eai_cache_path, make_eai
from .enhance import enhance_image, run_enhancer_command
from .training import TrainConfig, gradcheck, load_config, predict_batch


def _parse_size(raw):
    parts = [int(p) for p in raw.replace("x", ",").split(",")]
    return (parts[0], parts[0]) if len(parts) == 1 else tuple(parts[:2])


def _build_config(args):
    overrides = {}
    if args.seed is not None:
        overrides["seed"] = args.seed
    if args.input_size is not None:
        overrides["input_size"] = _parse_size(args.input_size)
    if args.config:
        return load_config(args.config, overrides)
    return TrainConfig(**overrides)


def _parse_range(raw, steps):
    lo, hi = (float(v) for v in raw.split(":"))
    if steps < 1:
        raise ValueError("steps must be >= 1")
    return np.linspace(lo, hi, steps)


def cmd_prepare_eai(args):
    manifest = load_manifest(args.manifest)
    params = CameraResponseParams()
    written = 0
    for rec in manifest.records:
        out_path = eai_cache_path(rec.image_path)
        if out_path.exists() and not args.force:
            continue
        image = load_image(rec.image_path)
        save_image(make_eai(image, params), out_path)
        written += 1
    print(f"prepare-eai: {written} file(s) written, "
          f"{len(manifest.records) - written} cached")
    return 0


def cmd_train(args):
    manifest = load_manifest(args.manifest)
    config = _build_config(args)
    records = None
    if args.folds:
        fold_ids = {int(f) for f in args.folds.split(",")}
        plan = evaluation.make_folds(manifest, k=args.k, seed=config.seed)
        records = [r for r in manifest.records if plan.fold_of(r) in fold_ids]
    _, log = training.train(
        manifest,
        config,
        records=records,
        log_path=args.log,
        checkpoint_path=args.checkpoint,
        progress=lambda e: print(
            f"epoch {e['epoch']}: total {e['total']:.6f}", file=sys.stderr
        ),
    )
    print(f"train: {len(log)} epochs, checkpoint -> {args.checkpoint}")
    return 0


def cmd_predict(args):
    ckpt = load_checkpoint(args.checkpoint)
    score = training.predict(ckpt, args.image)
    print(f"{args.image} {score:.6f}")
    return 0


def cmd_decompose(args):
    ckpt = load_checkpoint(args.checkpoint)
    model = training.load_model_from_checkpoint(ckpt)
    model.eval()
    size = tuple(ckpt.config_snapshot.get("input_size", (512, 512)))
    if args.input_size:
        size = _parse_size(args.input_size)
    image = load_image(args.image, size)
    import torch

    with torch.no_grad():
        r, l = model.decomp(training._to_nchw([image]))
    stem = Path(args.image).stem
    out_dir = Path(args.out_dir or Path(args.image).parent)
    r_path = out_dir / f"{stem}.R.png"
    l_path = out_dir / f"{stem}.L.png"
    save_image(r[0].permute(1, 2, 0).numpy(), r_path)
    save_image(l[0].permute(1, 2, 0).numpy(), l_path)
    print(f"decompose: wrote {r_path} and {l_path}")
    return 0


def _report_table(report, title):
    lines = [
        title,
        f"  SRCC  {report.srcc: .4f}",
        f"  KRCC  {report.krcc: .4f}",
        f"  PLCC  {report.plcc: .4f}",
        f"  RMSE  {report.rmse: .4f}",
        f"  n     {report.n}",
    ]
    if report.fit_fallback:
        lines.append("  (logistic fit diverged; linear fallback used)")
    return "\n".join(lines)


def _write_report_csv(path, rows):
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["label", "srcc", "krcc", "plcc", "rmse", "n"])
        for label, rep in rows:
            writer.writerow([label, rep.srcc, rep.krcc, rep.plcc, rep.rmse, rep.n])


def _write_scatter(prefix, preds, mos, params):
    with open(f"{prefix}.scatter.csv", "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["pred", "mos"])
        writer.writerows(zip(preds, mos))
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, ax = plt.subplots(figsize=(5, 5))
    ax.scatter(preds, mos, s=12, alpha=0.6)
    if params:
        xs = np.linspace(min(preds), max(preds), 200)
        ax.plot(xs, evaluation._logistic5(xs, *params), "r-", lw=1.5)
    ax.set_xlabel("predicted score")
    ax.set_ylabel("MOS")
    fig.tight_layout()
    fig.savefig(f"{prefix}.scatter.png", dpi=120)
    plt.close(fig)


def cmd_evaluate(args):
    config = _build_config(args)
    if args.train_manifest:
        train_manifest = load_manifest(args.train_manifest)
        ckpt, _ = training.train(train_manifest, config,
                                 checkpoint_path=args.checkpoint)
    else:
        if not args.checkpoint:
            raise ValueError("evaluate needs --checkpoint or --train-manifest")
        ckpt = load_checkpoint(args.checkpoint)
    manifest = load_manifest(args.manifest)
    preds = predict_batch(ckpt, [r.image_path for r in manifest.records])
    mos = [r.mos for r in manifest.records]
    report = evaluation.compute_criteria(preds, mos)
    _write_report_csv(f"{args.out_prefix}.report.csv", [("test", report)])
    _write_scatter(args.out_prefix, preds, mos, report.logistic_params)
    print(_report_table(report, f"evaluate: {args.manifest}"))
    return 0


def cmd_crossval(args):
    manifest = load_manifest(args.manifest)
    config = _build_config(args)
    avg, folds, fold_data = evaluation.crossval(
        manifest, config, k=args.k, seed=config.seed,
        progress=lambda i, rep: print(
            f"fold {i}: srcc {rep.srcc:.4f}", file=sys.stderr
        ),
    )
    rows = [(f"fold{i}", rep) for i, rep in enumerate(folds, start=1)]
    rows.append(("average", avg))
    _write_report_csv(f"{args.out_prefix}.report.csv", rows)
    preds = [p for d in fold_data for p in d[0]]
    mos = [m for d in fold_data for m in d[1]]
    _write_scatter(args.out_prefix, preds, mos, ())
    print(_report_table(avg, f"crossval ({args.k}-fold): {args.manifest}"))
    return 0


def cmd_rank_acc(args):
    ckpt = load_checkpoint(args.checkpoint)
    manifest = load_manifest(args.manifest)
    preds = predict_batch(ckpt, [r.image_path for r in manifest.records])
    groups = {}
    for rec, pred in zip(manifest.records, preds):
        groups.setdefault(rec.content_id, ([], []))
        groups[rec.content_id][0].append(pred)
        groups[rec.content_id][1].append(rec.mos)
    group_list = list(groups.values())
    max_n = min(args.max_n, min(len(g[0]) for g in group_list))
    for n in range(1, max_n + 1):
        acc = evaluation.rank_n_accuracy(group_list, n)
        print(f"rank-{n} accuracy: {acc:.4f}")
    return 0


def cmd_gradcheck(args):
    components = (
        training.GRADCHECK_COMPONENTS if args.component == "all" else [args.component]
    )
    worst = 0.0
    for component in components:
        report = gradcheck(component, seed=args.seed or 0)
        print(
            f"gradcheck {component}: max rel err {report['max_rel_err']:.3e} "
            f"({report['checked']} entries)"
        )
        worst = max(worst, report["max_rel_err"])
    return 0 if worst < 1e-3 else 1


def cmd_tune_demo(args):
    ckpt = load_checkpoint(args.checkpoint)
    image = load_image(args.image)
    g_grid = _parse_range(args.g_range, args.steps)
    l_grid = _parse_range(args.l_range, args.steps)
    size = tuple(ckpt.config_snapshot.get("input_size", (512, 512)))

    rows = []
    scores = np.empty((len(g_grid), len(l_grid)))
    with tempfile.TemporaryDirectory() as tmp:
        for i, g in enumerate(g_grid):
            for j, l in enumerate(l_grid):
                out_path = Path(tmp) / f"enh_{i}_{j}.png"
                if args.enhancer_cmd:
                    run_enhancer_command(
                        args.enhancer_cmd, g, l, args.image, out_path
                    )
                else:
                    save_image(enhance_image(image, g, l), out_path)
                score = training.predict(ckpt, out_path, input_size=size)
                scores[i, j] = score
                rows.append((g, l, score))

    with open(f"{args.out_prefix}.surface.csv", "w", encoding="utf-8",
              newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["g", "l", "score"])
        writer.writerows(rows)

    best = max(range(len(rows)), key=lambda i: rows[i][2])  # ties: first point
    print(f"argmax: g={rows[best][0]:.4f} l={rows[best][1]:.4f} "
          f"score={rows[best][2]:.6f}")

    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, ax = plt.subplots(figsize=(5, 4))
    im = ax.imshow(
        scores.T, origin="lower", aspect="auto", cmap="inferno",
        extent=[g_grid[0], g_grid[-1], l_grid[0], l_grid[-1]],
    )
    fig.colorbar(im, ax=ax, label="predicted quality")
    ax.set_xlabel("g")
    ax.set_ylabel("l")
    fig.tight_layout()
    fig.savefig(f"{args.out_prefix}.heatmap.png", dpi=120)
    plt.close(fig)
    return 0


def build_parser():
    parser = argparse.ArgumentParser(
        prog="nightiqa",
        description="Blind night-time image quality evaluation pipeline",
    )
    parser.add_argument("--config", help="key = value config file", default=None)
    parser.add_argument("--seed", type=int, default=None,
                        help="override the config seed (default: config value)")
    parser.add_argument("--input-size", default=None,
                        help="HxW resize target, e.g. 512,512 (default: config value)")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("prepare-eai", help="precompute exposure-adjusted images")
    p.add_argument("--manifest", required=True)
    p.add_argument("--force", action="store_true",
                   help="rewrite existing cache files (default: skip)")
    p.set_defaults(func=cmd_prepare_eai)

    p = sub.add_parser("train", help="train a model")
    p.add_argument("--manifest", required=True)
    p.add_argument("--folds", default=None,
                   help="comma-separated training fold ids (default: all records)")
    p.add_argument("--k", type=int, default=5, help="fold count (default: 5)")
    p.add_argument("--checkpoint", required=True, help="output checkpoint path")
    p.add_argument("--log", default=None, help="loss log CSV path")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("predict", help="score one image")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--image", required=True)
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("decompose", help="write reflectance/illumination maps")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--image", required=True)
    p.add_argument("--out-dir", default=None,
                   help="output directory (default: image's directory)")
    p.set_defaults(func=cmd_decompose)

    p = sub.add_parser("evaluate", help="criteria on a test manifest")
    p.add_argument("--manifest", required=True, help="test manifest")
    p.add_argument("--checkpoint", default=None)
    p.add_argument("--train-manifest", default=None,
                   help="train first on this manifest (cross-dataset mode)")
    p.add_argument("--out-prefix", default="evaluation")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("crossval", help="content-disjoint k-fold protocol")
    p.add_argument("--manifest", required=True)
    p.add_argument("--k", type=int, default=5)
    p.add_argument("--out-prefix", default="crossval")
    p.set_defaults(func=cmd_crossval)

    p = sub.add_parser("rank-acc", help="rank-n accuracy over content groups")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--max-n", type=int, default=5)
    p.set_defaults(func=cmd_rank_acc)

    p = sub.add_parser("gradcheck", help="finite-difference gradient check")
    p.add_argument("--component", default="all",
                   choices=list(training.GRADCHECK_COMPONENTS) + ["all"])
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("tune-demo", help="enhancer parameter tuning surface")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--image", required=True)
    # default 5-step grids land exactly on the enhancer defaults (0.6, 0.2)
    p.add_argument("--g-range", default="0.2:1.0", help="lo:hi (default 0.2:1.0)")
    p.add_argument("--l-range", default="0.1:0.5", help="lo:hi (default 0.1:0.5)")
    p.add_argument("--steps", type=int, default=5)
    p.add_argument("--out-prefix", default="tune")
    p.add_argument("--enhancer-cmd", default=None,
                   help="external enhancer template with {g} {l} {in} {out}")
    p.set_defaults(func=cmd_tune_demo)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except Exception as exc:  # uniform nonzero-exit contract
        print(f"nightiqa {args.command}: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
