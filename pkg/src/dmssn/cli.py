"""Command-line surface: synth, pretrain-teacher, train, infer, eval, diagnose.

Exit codes: 0 success, 1 validation/usage error, 2 runtime failure. All
randomness is seeded from the config; the DMSSN_SEED environment variable
overrides the config seed. Paths are resolved against --workdir, and existing
outputs are never overwritten without --force.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

import numpy as np
import torch

from . import report
from .autoencoder import parameter_count
from .config import RunConfig, describe_keys, load_config
from .cube_io import (
    DatasetManifest,
    load_cube,
    load_manifest,
    load_mask,
    save_cube,
    save_manifest,
    save_mask,
)
from .data import SaliencyMask, generate_synthetic_scene, normalize_cube
from .diagnostics import (
    EncodingDiagnostics,
    information_entropy,
    measure_throughput,
    reconstruction_error,
    render_diagnostics_table,
    spectral_correlation,
)
from .errors import DmssnError, ValidationError
from .homogenize import pca_reduce
from .metrics import evaluate, mean_report, render_table, threshold_sweep
from .training import (
    infer as run_infer,
    load_checkpoint,
    load_scenes,
    pretrain_teacher,
    train_dmssn,
)


class _Parser(argparse.ArgumentParser):
    """argparse exits 2 on bad usage; the contract here is exit 1."""

    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(1)


def _resolve(workdir: str | None, path: str | None) -> Path | None:
    if path is None:
        return None
    p = Path(path)
    if workdir and not p.is_absolute():
        return Path(workdir) / p
    return p


def _ensure_fresh(path: Path, force: bool) -> None:
    exists = path.exists() and (not path.is_dir() or any(path.iterdir()))
    if exists and not force:
        raise ValidationError(f"{path} already exists; pass --force to overwrite")


def _run_config(args) -> RunConfig:
    seed_override = None
    if os.environ.get("DMSSN_SEED"):
        try:
            seed_override = int(os.environ["DMSSN_SEED"])
        except ValueError as exc:
            raise ValidationError(f"DMSSN_SEED must be an integer: {exc}") from exc
    cfg_path = _resolve(args.workdir, getattr(args, "config", None))
    return load_config(cfg_path, overrides=getattr(args, "set", None), seed_override=seed_override)


# ---------------------------------------------------------------------------
# Subcommands


def cmd_synth(args) -> int:
    cfg = _run_config(args)
    out = _resolve(args.workdir, args.out)
    _ensure_fresh(out, args.force)
    (out / "cubes").mkdir(parents=True, exist_ok=True)
    (out / "masks").mkdir(parents=True, exist_ok=True)
    pairs = []
    for i in range(cfg.n_scenes):
        cube, mask = generate_synthetic_scene(cfg.sampler.spec_for(i))
        cube_path = out / "cubes" / f"scene_{i:04d}.raw"
        mask_path = out / "masks" / f"scene_{i:04d}.pgm"
        save_cube(cube, cube_path)
        save_mask(mask, mask_path)
        pairs.append((cube_path, mask_path))
    manifest = DatasetManifest(pairs, split=args.split)
    save_manifest(manifest, out / "manifest.tsv")
    print(f"wrote {len(pairs)} scenes and {out / 'manifest.tsv'}")
    return 0


def cmd_pretrain_teacher(args) -> int:
    cfg = _run_config(args)
    manifest = load_manifest(_resolve(args.workdir, args.data))
    out = _resolve(args.workdir, args.out)
    _ensure_fresh(out, args.force)
    scenes = load_scenes(manifest, cfg.gmm_components, seed=cfg.seed)
    log_path = _resolve(args.workdir, args.log) if args.log else out / "metrics.jsonl"
    result = pretrain_teacher(scenes, cfg.model, cfg.teacher_train, out, log_path)
    report.save_loss_curves(result.history, out / "loss_curves.png")
    print(f"best epoch loss {result.best_value:.6f}; checkpoint at {result.checkpoint_dir}")
    return 0


def cmd_train(args) -> int:
    if not args.teacher:
        raise ValidationError(
            "joint training requires --teacher: pre-train the teacher autoencoder "
            "first (pretrain-teacher) and pass its checkpoint directory"
        )
    cfg = _run_config(args)
    manifest = load_manifest(_resolve(args.workdir, args.data))
    teacher_ckpt = load_checkpoint(_resolve(args.workdir, args.teacher))
    out = _resolve(args.workdir, args.out)
    _ensure_fresh(out, args.force)
    scenes = load_scenes(manifest, cfg.gmm_components, seed=cfg.seed)
    log_path = _resolve(args.workdir, args.log) if args.log else out / "metrics.jsonl"
    result = train_dmssn(scenes, teacher_ckpt, cfg.model, cfg.dmssn_train, out, log_path)
    report.save_loss_curves(result.history, out / "loss_curves.png")
    print(f"best validation avgF1 {result.best_value:.4f}; checkpoint at {result.checkpoint_dir}")
    return 0


def cmd_infer(args) -> int:
    cfg = _run_config(args)
    ckpt = load_checkpoint(_resolve(args.workdir, args.ckpt))
    cube = load_cube(_resolve(args.workdir, args.cube))
    out = _resolve(args.workdir, args.out)
    _ensure_fresh(out, args.force)
    prediction = run_infer(
        cube,
        ckpt,
        skip_homogenization=args.skip_homogenization,
        gmm_components=cfg.gmm_components,
        gmm_seed=cfg.seed,
    )
    out.parent.mkdir(parents=True, exist_ok=True)
    save_mask(prediction, out)
    print(f"wrote {out}")
    if args.montage:
        montage_path = _resolve(args.workdir, args.montage)
        gt = None
        if args.gt:
            gt = load_mask(_resolve(args.workdir, args.gt)).values
        report.save_montage(normalize_cube(cube), prediction.values, montage_path, gt)
        print(f"wrote {montage_path}")
    return 0


def cmd_eval(args) -> int:
    cfg = _run_config(args)
    pairs: list[tuple[str, Path, Path]] = []
    if args.manifest:
        manifest = load_manifest(_resolve(args.workdir, args.manifest))
        pred_dir = _resolve(args.workdir, args.pred_dir)
        if pred_dir is None:
            raise ValidationError("--manifest evaluation needs --pred-dir")
        for cube_path, mask_path in manifest.pairs:
            pred = pred_dir / (Path(cube_path).stem + ".pgm")
            pairs.append((Path(cube_path).stem, pred, Path(mask_path)))
    elif args.pred and args.gt:
        pairs.append((Path(args.pred).stem, _resolve(args.workdir, args.pred),
                      _resolve(args.workdir, args.gt)))
    else:
        raise ValidationError("eval needs either --pred and --gt, or --manifest and --pred-dir")

    reports = {}
    pooled_y, pooled_t = [], []
    for label, pred_path, gt_path in pairs:
        y = load_mask(pred_path, binary=False).values
        t = load_mask(gt_path).values
        reports[label] = evaluate(y, t, cfg.metric_thresholds, cfg.binary_threshold)
        pooled_y.append(y.reshape(-1))
        pooled_t.append(t.reshape(-1))
    summary = mean_report(list(reports.values()))
    print(render_table(summary, label=f"mean over {len(reports)} image(s)"))

    if args.out:
        out = _resolve(args.workdir, args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "eval.json").write_text(
            json.dumps({k: json.loads(r.to_json()) for k, r in reports.items()}
                       | {"mean": json.loads(summary.to_json())}, indent=1)
        )
        report.write_eval_tsv(reports, out / "eval.tsv")
        sweep = threshold_sweep(
            np.concatenate(pooled_y), np.concatenate(pooled_t), cfg.metric_thresholds
        )
        report.write_sweep_tsv(sweep, out / "curves.tsv")
        report.save_pr_roc_figure(sweep, out / "curves.png", title="pooled threshold sweep")
        print(f"wrote eval.json, eval.tsv, curves.tsv, curves.png under {out}")
    return 0


def cmd_diagnose(args) -> int:
    cfg = _run_config(args)
    manifest = load_manifest(_resolve(args.workdir, args.data))
    scenes = load_scenes(manifest, cfg.gmm_components, seed=cfg.seed)
    bins = cfg.diagnostics_bins
    rows: list[EncodingDiagnostics] = []

    originals = [s.i for s in scenes]
    rows.append(
        EncodingDiagnostics(
            method="Original HSI",
            ie=float(np.mean([information_entropy(x, bins).bits for x in originals])),
        )
    )

    k = cfg.model.schedule.encoded
    pca_feats = [pca_reduce(normalize_cube(_cube_of(s.i)), k) for s in scenes]
    rows.append(
        EncodingDiagnostics(
            method="PCA",
            ie=float(np.mean([information_entropy(p.features, bins).bits for p in pca_feats])),
            scc=float(
                np.mean(
                    [
                        spectral_correlation(p.features, s.i).value
                        for p, s in zip(pca_feats, scenes)
                    ]
                )
            ),
        )
    )

    for name, ckpt_arg in (("Teacher Autoencoder", args.teacher), ("Distilled Student", args.dmssn)):
        if not ckpt_arg:
            continue
        ckpt = load_checkpoint(_resolve(args.workdir, ckpt_arg))
        if ckpt.stage == "teacher":
            module = ckpt.build_teacher()
        else:
            module = ckpt.build_dmssn().student
        module.eval()
        ies, sccs, mses, maes = [], [], [], []
        for scene in scenes:
            g = torch.from_numpy(scene.g).permute(2, 0, 1).unsqueeze(0)
            with torch.no_grad():
                acts = module(g)
            encoded = acts.e[0].permute(1, 2, 0).numpy()
            decoded = acts.d[0].permute(1, 2, 0).numpy()
            ies.append(information_entropy(encoded, bins).bits)
            sccs.append(spectral_correlation(encoded, scene.i).value)
            mse, mae = reconstruction_error(decoded, scene.i)
            mses.append(mse)
            maes.append(mae)
        sample = torch.from_numpy(scenes[0].g).permute(2, 0, 1).unsqueeze(0)
        speed = measure_throughput(lambda: module(sample))
        rows.append(
            EncodingDiagnostics(
                method=name,
                ie=float(np.mean(ies)),
                scc=float(np.mean(sccs)),
                throughput=speed,
                param_count=parameter_count(module),
                recon_mse=float(np.mean(mses)),
                recon_mae=float(np.mean(maes)),
            )
        )

    for row in rows:
        row.validate()
    print(render_diagnostics_table(rows))
    if args.out:
        out = _resolve(args.workdir, args.out)
        out.mkdir(parents=True, exist_ok=True)
        report.write_diagnostics_tsv(rows, out / "diagnostics.tsv")
        report.save_diagnostics_figure(rows, out / "diagnostics.png")
        print(f"wrote diagnostics.tsv, diagnostics.png under {out}")
    return 0


def _cube_of(values: np.ndarray):
    from .data import HyperCube

    return HyperCube(values)


# ---------------------------------------------------------------------------
# Parser assembly


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(
        prog="dmssn",
        description=__doc__,
        epilog="Config keys (also settable via --set key=value):\n" + describe_keys(),
        formatter_class=argparse.RawDescriptionHelpFormatter,
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="run config file [config: all keys]")
        p.add_argument("--workdir", help="base directory for relative paths")
        p.add_argument("--set", action="append", metavar="KEY=VALUE", default=[],
                       help="override one config key")
        p.add_argument("--force", action="store_true",
                       help="allow overwriting existing outputs")

    p = sub.add_parser("synth", help="generate synthetic scenes and a manifest")
    common(p)
    p.add_argument("--out", required=True, help="output dataset directory")
    p.add_argument("--split", default="train", help="manifest split tag")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("pretrain-teacher", help="stage 1: pre-train the teacher autoencoder")
    common(p)
    p.add_argument("--data", required=True, help="dataset manifest (cube<TAB>mask)")
    p.add_argument("--out", required=True, help="checkpoint directory")
    p.add_argument("--log", help="metrics JSONL path (default: <out>/metrics.jsonl)")
    p.set_defaults(func=cmd_pretrain_teacher)

    p = sub.add_parser("train", help="stage 2: joint training with the frozen teacher")
    common(p)
    p.add_argument("--data", required=True, help="dataset manifest")
    p.add_argument("--teacher", help="teacher checkpoint directory (required)")
    p.add_argument("--out", required=True, help="checkpoint directory")
    p.add_argument("--log", help="metrics JSONL path (default: <out>/metrics.jsonl)")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("infer", help="predict a saliency map for one cube")
    common(p)
    p.add_argument("--ckpt", required=True, help="joint checkpoint directory")
    p.add_argument("--cube", required=True, help="input cube payload path")
    p.add_argument("--out", required=True, help="output PGM map path")
    p.add_argument("--gt", help="optional ground-truth mask for the montage")
    p.add_argument("--montage", help="optional side-by-side PNG path")
    p.add_argument("--skip-homogenization", action="store_true",
                   help="feed the normalized cube straight to the encoder")
    p.set_defaults(func=cmd_infer)

    p = sub.add_parser("eval", help="score predictions against ground truth")
    common(p)
    p.add_argument("--pred", help="predicted map (PGM)")
    p.add_argument("--gt", help="ground-truth mask (PGM)")
    p.add_argument("--manifest", help="dataset manifest for batch evaluation")
    p.add_argument("--pred-dir", help="directory of predicted maps named <cube stem>.pgm")
    p.add_argument("--out", help="directory for eval.json/eval.tsv/curves.* outputs")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("diagnose", help="encoding-quality diagnostics table")
    common(p)
    p.add_argument("--data", required=True, help="dataset manifest")
    p.add_argument("--teacher", help="teacher checkpoint directory")
    p.add_argument("--dmssn", help="joint checkpoint directory (student row)")
    p.add_argument("--out", help="directory for diagnostics.tsv / diagnostics.png")
    p.set_defaults(func=cmd_diagnose)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except DmssnError as exc:
        print(f"runtime failure: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # noqa: BLE001 - CLI boundary
        print(f"runtime failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
