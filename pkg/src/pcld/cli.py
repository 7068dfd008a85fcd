"""Command line interface.

Subcommands mirror the pipeline stages:

    pcld dataset generate   synthesize a labeled point cloud dataset
    pcld model train/eval   train or score a layered classifier
    pcld diffusion train    fit a per-boundary conditional denoiser
    pcld diffusion purify   purify one cloud file
    pcld attack run         materialize adversarial clouds for a test split
    pcld defend run         score a defense against attacked clouds
    pcld defend gridsearch  tune truncation times on an attacked val split
    pcld bench run/table    execute a full evaluation plan / render tables

Truncation times on the command line are given in schedule steps (t* = steps/N).
"""

from __future__ import annotations

import argparse
import sys
from dataclasses import asdict
from pathlib import Path

import numpy as np

from . import bench, geometry, io
from .attacks import ATTACK_KINDS, AttackConfig, default_attack_config
from .defenses import DefenseConfig, DefenseStack, grid_search_tstar
from .diffusion.denoiser import load_denoiser, save_denoiser
from .diffusion.purify import PurifyParams, purify
from .diffusion.schedule import make_schedule
from .diffusion.training import DenoiserTrainConfig, train_denoiser
from .models.classifier import load_classifier, save_classifier
from .models.training import TrainConfig, eval_accuracy, extract_layer_features, train_classifier


def _cmd_dataset_generate(args) -> int:
    manifest = geometry.generate_dataset(
        args.out,
        n_classes=args.classes,
        n_points=args.n_points,
        train_per_class=args.train,
        test_per_class=args.test,
        seed=args.seed,
    )
    n_train = len(manifest.records("train"))
    n_test = len(manifest.records("test"))
    print(f"dataset written to {args.out}: {n_train} train / {n_test} test clouds, {args.n_points} points each")
    return 0


def _cmd_model_train(args) -> int:
    manifest = geometry.load_manifest(args.data)
    train_set = geometry.load_split(manifest, "train")
    config = TrainConfig(epochs=args.epochs, batch_size=args.batch_size, lr=args.lr, seed=args.seed)
    model = train_classifier(train_set, args.arch, config, n_classes=len(manifest.class_names))
    save_classifier(model, args.out)
    test_set = geometry.load_split(manifest, "test")
    acc = eval_accuracy(model, [s.cloud for s in test_set], [s.label for s in test_set])
    print(f"{args.arch} trained ({args.epochs} epochs); test accuracy {100 * acc:.2f}%; checkpoint at {args.out}")
    return 0


def _cmd_model_eval(args) -> int:
    model = load_classifier(args.ckpt)
    manifest = geometry.load_manifest(args.data)
    samples = geometry.load_split(manifest, args.split)
    acc = eval_accuracy(model, [s.cloud for s in samples], [s.label for s in samples])
    print(f"accuracy on {args.split}: {100 * acc:.2f}% ({len(samples)} clouds)")
    return 0


def _cmd_diffusion_train(args) -> int:
    model = load_classifier(args.ckpt)
    manifest = geometry.load_manifest(args.data)
    train_set = geometry.load_split(manifest, "train")
    feats = extract_layer_features(model, [s.cloud for s in train_set], args.layer)
    schedule = make_schedule(args.schedule_steps, args.beta_min, args.beta_max)
    config = DenoiserTrainConfig(epochs=args.epochs, batch_size=args.batch_size, lr=args.lr, seed=args.seed)
    den = train_denoiser(feats, schedule, config, layer_index=args.layer)
    save_denoiser(den, args.out)
    first, last = den.training_log[0]["loss"], den.training_log[-1]["loss"]
    print(f"denoiser for boundary {args.layer} trained; loss {first:.4f} -> {last:.4f}; checkpoint at {args.out}")
    return 0


def _cmd_diffusion_purify(args) -> int:
    den = load_denoiser(args.denoiser)
    cloud = geometry.load_cloud(args.infile) if den.feature_dim == 3 else None
    if cloud is not None:
        feats = cloud.points
    else:
        feats = io.load_cloud_array(args.infile)
    t_star = args.tstar / den.schedule.n_steps
    out = purify(feats, PurifyParams(t_star=t_star, seed=args.seed), den)
    io.save_cloud_array(out, args.out)
    print(f"purified {args.infile} at t*={args.tstar} steps -> {args.out}")
    return 0


def _cmd_attack_run(args) -> int:
    model = load_classifier(args.ckpt)
    manifest = geometry.load_manifest(args.data)
    samples = geometry.load_split(manifest, "test")
    if args.subset:
        by_class: dict[int, list] = {}
        for s in samples:
            by_class.setdefault(s.label, []).append(s)
        per_class = max(1, args.subset // len(by_class))
        samples = [s for label in sorted(by_class) for s in by_class[label][:per_class]]
    cfg = default_attack_config(args.kind, n_points=manifest.n_points, seed=args.seed)
    overrides = {}
    if args.eps is not None:
        overrides["epsilon"] = args.eps
    if args.steps is not None:
        overrides["steps"] = args.steps
    if args.step_size is not None:
        overrides["step_size"] = args.step_size
    cfg = AttackConfig(**{**asdict(cfg), **overrides})
    attacked = bench.attack_to_dir(model, cfg, samples, Path(args.out))
    manifest_obj = io.read_json(Path(args.out) / "attack_manifest.json")
    success = float(np.mean([rec["success"] for rec in manifest_obj["samples"]]))
    print(f"{args.kind}: {len(attacked)} clouds written to {args.out}; attack success {100 * success:.2f}%")
    return 0


def _parse_tlist(text: str) -> list[int]:
    return [int(part) for part in text.split(",") if part != ""]


def _build_stack(args, kind: str, model, t_steps=0, t_list_steps=None, seed=0) -> DefenseStack:
    spec = {"name": kind, "kind": kind}
    if kind == "pointdp":
        spec["t_steps"] = t_steps
    if kind == "pcld":
        spec["t_list_steps"] = t_list_steps
    return bench.defense_stack_from_spec(
        spec, model, args.model_name, "cli", seed, getattr(args, "denoisers", None)
    )


def _cmd_defend_run(args) -> int:
    from .defenses import defend_logits_batch

    model = load_classifier(args.ckpt)
    args.model_name = args.model_name or Path(args.ckpt).name
    attacked = bench.load_attacked_dir(args.infile)
    t_list = _parse_tlist(args.tlist) if args.tlist else None
    stack = _build_stack(args, args.kind, model, t_steps=args.tstar, t_list_steps=t_list, seed=args.seed)
    logits = defend_logits_batch(stack, [s.cloud for s in attacked], [s.sample_id for s in attacked])
    preds = logits.argmax(axis=1)
    labels = np.array([s.label for s in attacked])
    acc = float(np.mean(preds == labels))
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    records = [
        {"sample_id": s.sample_id, "label": s.label, "pred": int(p), "correct": bool(p == s.label)}
        for s, p in zip(attacked, preds)
    ]
    io.write_json({"kind": args.kind, "accuracy": acc, "samples": records}, out_dir / "defense_results.json")
    print(f"{args.kind}: accuracy {100 * acc:.2f}% over {len(attacked)} attacked clouds; results in {out_dir}")
    return 0


def _cmd_defend_gridsearch(args) -> int:
    model = load_classifier(args.ckpt)
    args.model_name = args.model_name or Path(args.ckpt).name
    attacked = bench.load_attacked_dir(args.val)
    kind = "pointdp" if args.mode == "pointdp" else "pcld"
    stack = _build_stack(args, kind, model, t_list_steps=[0] * model.n_boundaries, seed=args.seed)
    grid = _parse_tlist(args.grid)
    config, scores = grid_search_tstar(stack, attacked, grid, args.mode)
    n_steps = stack.schedule().n_steps
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    payload = {
        "kind": config.kind,
        "seed": config.seed,
        "schedule_steps": n_steps,
        "t_steps": round(config.t_star * n_steps),
        "t_list_steps": [round(t * n_steps) for t in config.t_list],
    }
    io.write_json(payload, out)
    Path(str(out) + ".scores.csv").write_text(bench.grid_scores_csv(scores))
    best = max(s.accuracy for s in scores)
    print(f"{args.mode} grid search: best val accuracy {100 * best:.2f}%; config at {out}")
    return 0


def _cmd_bench_run(args) -> int:
    plan = bench.load_plan(args.plan)
    if args.out:
        plan.out_dir = args.out
    result = bench.run_plan(plan)
    print(f"bench complete: {len(result.rows)} cells -> {Path(plan.out_dir) / bench.RESULTS_CSV}")
    print(bench.emit_table(result.rows, "text"))
    return 0


def _cmd_bench_table(args) -> int:
    csv_path = Path(args.infile) / bench.RESULTS_CSV
    rows = []
    for line in csv_path.read_text().splitlines()[1:]:
        model, attack, defense, seed, acc, n_correct, n_samples = line.split(",")
        rows.append(
            {
                "model": model,
                "attack": attack,
                "defense": defense,
                "seed": int(seed),
                "accuracy": float(acc),
                "n_correct": int(n_correct),
                "n_samples": int(n_samples),
            }
        )
    print(bench.emit_table(rows, args.format), end="")
    return 0


def _build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="pcld", description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = p.add_subparsers(dest="group", required=True)

    ds = sub.add_parser("dataset", help="dataset generation").add_subparsers(dest="cmd", required=True)
    gen = ds.add_parser("generate", help="generate the synthetic dataset")
    gen.add_argument("--classes", type=int, default=8)
    gen.add_argument("--n-points", type=int, default=geometry.DEFAULT_N_POINTS)
    gen.add_argument("--train", type=int, default=geometry.DEFAULT_TRAIN_PER_CLASS)
    gen.add_argument("--test", type=int, default=geometry.DEFAULT_TEST_PER_CLASS)
    gen.add_argument("--seed", type=int, default=0)
    gen.add_argument("--out", required=True)
    gen.set_defaults(func=_cmd_dataset_generate)

    md = sub.add_parser("model", help="classifier training and evaluation").add_subparsers(dest="cmd", required=True)
    mt = md.add_parser("train")
    mt.add_argument("--arch", choices=("pointnet-mini", "dgcnn-mini"), required=True)
    mt.add_argument("--data", required=True)
    mt.add_argument("--seed", type=int, default=0)
    mt.add_argument("--epochs", type=int, default=30)
    mt.add_argument("--batch-size", type=int, default=32)
    mt.add_argument("--lr", type=float, default=1e-3)
    mt.add_argument("--out", required=True)
    mt.set_defaults(func=_cmd_model_train)
    me = md.add_parser("eval")
    me.add_argument("--ckpt", required=True)
    me.add_argument("--data", required=True)
    me.add_argument("--split", default="test")
    me.set_defaults(func=_cmd_model_eval)

    df = sub.add_parser("diffusion", help="denoiser training and purification").add_subparsers(dest="cmd", required=True)
    dt = df.add_parser("train")
    dt.add_argument("--ckpt", required=True, help="classifier checkpoint providing the features")
    dt.add_argument("--layer", type=int, required=True)
    dt.add_argument("--data", required=True)
    dt.add_argument("--seed", type=int, default=0)
    dt.add_argument("--epochs", type=int, default=40)
    dt.add_argument("--batch-size", type=int, default=32)
    dt.add_argument("--lr", type=float, default=1e-3)
    dt.add_argument("--schedule-steps", type=int, default=200)
    dt.add_argument("--beta-min", type=float, default=1e-4)
    dt.add_argument("--beta-max", type=float, default=0.02)
    dt.add_argument("--out", required=True)
    dt.set_defaults(func=_cmd_diffusion_train)
    dp = df.add_parser("purify")
    dp.add_argument("--denoiser", required=True)
    dp.add_argument("--tstar", type=int, required=True, help="truncation in schedule steps")
    dp.add_argument("--seed", type=int, default=0)
    dp.add_argument("--in", dest="infile", required=True)
    dp.add_argument("--out", required=True)
    dp.set_defaults(func=_cmd_diffusion_purify)

    at = sub.add_parser("attack", help="adversarial cloud generation").add_subparsers(dest="cmd", required=True)
    ar = at.add_parser("run")
    ar.add_argument("--ckpt", required=True)
    ar.add_argument("--kind", choices=ATTACK_KINDS, required=True)
    ar.add_argument("--eps", type=float, default=None)
    ar.add_argument("--steps", type=int, default=None)
    ar.add_argument("--step-size", type=float, default=None)
    ar.add_argument("--data", required=True)
    ar.add_argument("--subset", type=int, default=None, help="stratified test subset size")
    ar.add_argument("--seed", type=int, default=0)
    ar.add_argument("--out", required=True)
    ar.set_defaults(func=_cmd_attack_run)

    de = sub.add_parser("defend", help="defense evaluation and tuning").add_subparsers(dest="cmd", required=True)
    dr = de.add_parser("run")
    dr.add_argument("--ckpt", required=True)
    dr.add_argument("--model-name", default=None, help="denoiser subdirectory name (defaults to ckpt dir name)")
    dr.add_argument("--denoisers", default=None)
    dr.add_argument("--kind", choices=("none", "srs", "sor", "pointdp", "pcld"), required=True)
    dr.add_argument("--tstar", type=int, default=0, help="pointdp truncation in schedule steps")
    dr.add_argument("--tlist", default=None, help="pcld per-boundary truncations, e.g. 10,5,45,0")
    dr.add_argument("--seed", type=int, default=0)
    dr.add_argument("--in", dest="infile", required=True, help="attack run directory")
    dr.add_argument("--out", required=True)
    dr.set_defaults(func=_cmd_defend_run)
    dg = de.add_parser("gridsearch")
    dg.add_argument("--ckpt", required=True)
    dg.add_argument("--model-name", default=None)
    dg.add_argument("--denoisers", required=True)
    dg.add_argument("--mode", choices=("pointdp", "pcld-greedy"), required=True)
    dg.add_argument("--attack", required=True, help="attack name, recorded in the config")
    dg.add_argument("--grid", default=",".join(str(t) for t in range(0, 105, 5)))
    dg.add_argument("--seed", type=int, default=0)
    dg.add_argument("--val", required=True, help="attacked validation directory")
    dg.add_argument("--out", required=True)
    dg.set_defaults(func=_cmd_defend_gridsearch)

    be = sub.add_parser("bench", help="full evaluation grids").add_subparsers(dest="cmd", required=True)
    br = be.add_parser("run")
    br.add_argument("--plan", required=True)
    br.add_argument("--out", default=None)
    br.set_defaults(func=_cmd_bench_run)
    bt = be.add_parser("table")
    bt.add_argument("--in", dest="infile", required=True)
    bt.add_argument("--format", choices=("csv", "text"), default="text")
    bt.set_defaults(func=_cmd_bench_table)

    return p


def main(argv: list[str] | None = None) -> int:
    args = _build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
