"""End-to-end evaluation harness: dataset x models x attacks x defenses.

A plan enumerates (model, attack, defense, seed) cells. Adversarial clouds
are materialized to disk per (model, attack, seed) before any defense sees
them, so every defense column scores byte-identical inputs and defenses can
never influence attack generation. Cells persist incrementally and reruns
skip cells whose spec hash already has a result.
"""

from __future__ import annotations

import hashlib
import json
import platform
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import geometry, io
from .attacks import AttackConfig, run_attack
from .defenses import DefenseConfig, DefenseStack, GridScore
from .diffusion.denoiser import ConditionalDenoiser, load_denoiser
from .errors import ConfigError, DomainError
from .geometry import LabeledCloud, PointCloud
from .models.classifier import LayeredClassifier, load_classifier

RESULTS_CSV = "results.csv"
CSV_HEADER = "model,attack,defense,seed,accuracy,n_correct,n_samples"


@dataclass
class BenchPlan:
    dataset_dir: str
    models: dict[str, str]  # name -> checkpoint dir
    attacks: list[dict]  # {"name", "kind": attack kind or "clean", **params}
    defenses: list[dict]  # {"name", "kind": defense kind, **params}
    seeds: list[int]
    out_dir: str
    test_subset: int | None = 200  # stratified cloud count; None = full split
    denoisers_dir: str | None = None  # <dir>/<model>/layer<i> checkpoints

    def validate(self) -> None:
        if not self.models:
            raise DomainError("plan has no models")
        if not self.attacks:
            raise DomainError("plan has no attacks")
        if not self.defenses:
            raise DomainError("plan has no defenses")
        if not self.seeds:
            raise DomainError("plan has no seeds")
        names = [a["name"] for a in self.attacks]
        if len(set(names)) != len(names):
            raise DomainError("duplicate attack names in plan")
        names = [d["name"] for d in self.defenses]
        if len(set(names)) != len(names):
            raise DomainError("duplicate defense names in plan")


def load_plan(path: str | Path) -> BenchPlan:
    obj = io.read_json(path)
    return BenchPlan(**obj)


def save_plan(plan: BenchPlan, path: str | Path) -> None:
    io.write_json(asdict(plan), path)


@dataclass
class BenchResult:
    rows: list[dict] = field(default_factory=list)
    meta: dict = field(default_factory=dict)

    def sorted_rows(self) -> list[dict]:
        return sorted(self.rows, key=lambda r: (r["model"], r["attack"], r["defense"], r["seed"]))

    def to_csv(self) -> str:
        lines = [CSV_HEADER]
        for r in self.sorted_rows():
            lines.append(
                f"{r['model']},{r['attack']},{r['defense']},{r['seed']},"
                f"{r['accuracy']:.10f},{r['n_correct']},{r['n_samples']}"
            )
        return "\n".join(lines) + "\n"


def environment_fingerprint(extra: dict | None = None) -> dict:
    import torch

    fp = {
        "python": platform.python_version(),
        "platform": platform.platform(),
        "numpy": np.__version__,
        "torch": torch.__version__,
    }
    if extra:
        fp.update(extra)
    return fp


# ---------------------------------------------------------------------------
# artifact resolution
# ---------------------------------------------------------------------------


def _select_test_subset(manifest: geometry.DatasetManifest, subset: int | None) -> list[LabeledCloud]:
    """Deterministic stratified subset of the test split (first k per class)."""
    samples = geometry.load_split(manifest, "test")
    if subset is None or subset >= len(samples):
        return samples
    by_class: dict[int, list[LabeledCloud]] = {}
    for s in samples:
        by_class.setdefault(s.label, []).append(s)
    per_class = max(1, subset // len(by_class))
    picked: list[LabeledCloud] = []
    for label in sorted(by_class):
        picked.extend(by_class[label][:per_class])
    return picked


def attack_config_from_spec(spec: dict, n_points: int) -> AttackConfig | None:
    """None means the clean (no attack) column."""
    spec = dict(spec)
    spec.pop("name")
    kind = spec.pop("kind")
    if kind == "clean":
        return None
    from .attacks import default_attack_config

    cfg = default_attack_config(kind, n_points=n_points)
    return AttackConfig(**{**asdict(cfg), **spec})


def _load_denoisers(root: Path, model_name: str, model: LayeredClassifier) -> dict[int, ConditionalDenoiser]:
    out: dict[int, ConditionalDenoiser] = {}
    base = root / model_name
    if not base.exists():
        return out
    for i in range(model.n_boundaries):
        ckpt = base / f"layer{i}"
        if ckpt.exists():
            out[i] = load_denoiser(ckpt)
    return out


def defense_stack_from_spec(
    spec: dict,
    model: LayeredClassifier,
    model_name: str,
    attack_name: str,
    seed: int,
    denoisers_dir: str | None,
    schedule_steps: int = 200,
) -> DefenseStack:
    spec = dict(spec)
    spec.pop("name")
    kind = spec.pop("kind")
    tuned_dir = spec.pop("tuned_dir", None)
    t_steps = spec.pop("t_steps", 0)
    t_list_steps = spec.pop("t_list_steps", None)

    if tuned_dir is not None:
        tuned = io.read_json(Path(tuned_dir) / f"{model_name}__{attack_name}__{kind}.json")
        t_steps = tuned.get("t_steps", t_steps)
        t_list_steps = tuned.get("t_list_steps", t_list_steps)
        schedule_steps = tuned.get("schedule_steps", schedule_steps)

    denoisers: dict[int, ConditionalDenoiser] = {}
    if kind in ("pointdp", "pcld"):
        if denoisers_dir is None:
            raise ConfigError(f"defense {kind!r} requires denoisers_dir in the plan")
        denoisers = _load_denoisers(Path(denoisers_dir), model_name, model)
        if denoisers:
            schedule_steps = next(iter(denoisers.values())).schedule.n_steps

    if kind == "pcld":
        if t_list_steps is None:
            t_list_steps = [0] * model.n_boundaries
        config = DefenseConfig(
            kind=kind, t_list=tuple(s / schedule_steps for s in t_list_steps), seed=seed, **spec
        )
    elif kind == "pointdp":
        config = DefenseConfig(kind=kind, t_star=t_steps / schedule_steps, seed=seed, **spec)
    else:
        config = DefenseConfig(kind=kind, seed=seed, **spec)
    return DefenseStack(config=config, model=model, denoisers=denoisers)


# ---------------------------------------------------------------------------
# cell evaluation
# ---------------------------------------------------------------------------


def _attack_cache_dir(out_dir: Path, model_name: str, attack_name: str, seed: int) -> Path:
    return out_dir / "attacks" / f"{model_name}__{attack_name}__seed{seed}"


def attack_to_dir(
    model: LayeredClassifier,
    cfg: AttackConfig,
    test_set: list[LabeledCloud],
    cache: Path,
    batch_size: int = 32,
) -> list[LabeledCloud]:
    """Run one attack over a set and persist clouds + manifest under `cache`."""
    cache.mkdir(parents=True, exist_ok=True)
    out: list[LabeledCloud] = []
    records = []
    for start in range(0, len(test_set), batch_size):
        chunk = test_set[start : start + batch_size]
        results = run_attack(
            model,
            [s.cloud for s in chunk],
            [s.label for s in chunk],
            cfg,
            sample_ids=[s.sample_id for s in chunk],
        )
        for s, r in zip(chunk, results):
            rel = f"adv_{s.sample_id:06d}.pcld"
            geometry.save_cloud(r.adv_cloud, cache / rel)
            out.append(LabeledCloud(cloud=r.adv_cloud, label=s.label, sample_id=s.sample_id))
            records.append(
                {
                    "path": rel,
                    "label": s.label,
                    "sample_id": s.sample_id,
                    "success": r.success,
                    "budget_used": r.budget_used,
                }
            )
    io.write_json({"config": asdict(cfg), "samples": records}, cache / "attack_manifest.json")
    return out


def load_attacked_dir(cache: str | Path) -> list[LabeledCloud]:
    """Reload the clouds an attack run materialized."""
    cache = Path(cache)
    manifest = io.read_json(cache / "attack_manifest.json")
    return [
        LabeledCloud(
            cloud=geometry.load_cloud(cache / rec["path"]),
            label=rec["label"],
            sample_id=rec["sample_id"],
        )
        for rec in manifest["samples"]
    ]


def materialize_attack(
    model: LayeredClassifier,
    model_name: str,
    attack_spec: dict,
    test_set: list[LabeledCloud],
    seed: int,
    out_dir: Path,
    batch_size: int = 32,
) -> list[LabeledCloud]:
    """Generate (or reload) the adversarial clouds for one (model, attack, seed)."""
    cache = _attack_cache_dir(out_dir, model_name, attack_spec["name"], seed)
    n_points = test_set[0].cloud.n_points
    cfg = attack_config_from_spec(attack_spec, n_points)
    if cfg is None:
        return test_set
    cfg = AttackConfig(**{**asdict(cfg), "seed": seed})
    if (cache / "attack_manifest.json").exists():
        return load_attacked_dir(cache)
    return attack_to_dir(model, cfg, test_set, cache, batch_size)


def evaluate_cell(
    model: LayeredClassifier,
    stack: DefenseStack,
    attacked_set: list[LabeledCloud],
) -> tuple[int, list[dict]]:
    """Score one defense column against materialized attacked clouds."""
    if not attacked_set:
        raise DomainError("test set is empty")
    from .defenses import defend_logits_batch

    logits = defend_logits_batch(stack, [s.cloud for s in attacked_set], [s.sample_id for s in attacked_set])
    preds = logits.argmax(axis=1)
    per_sample = [
        {"sample_id": s.sample_id, "label": s.label, "pred": int(p), "correct": bool(p == s.label)}
        for s, p in zip(attacked_set, preds)
    ]
    n_correct = int(sum(rec["correct"] for rec in per_sample))
    return n_correct, per_sample


def _cell_key(plan_fields: dict) -> str:
    blob = json.dumps(plan_fields, sort_keys=True).encode()
    return hashlib.sha256(blob).hexdigest()[:20]


def run_plan(plan: BenchPlan) -> BenchResult:
    """Execute every cell of the plan, resuming from persisted cells."""
    plan.validate()
    out_dir = Path(plan.out_dir)
    (out_dir / "cells").mkdir(parents=True, exist_ok=True)

    manifest = geometry.load_manifest(plan.dataset_dir)
    dataset_fp = geometry.dataset_fingerprint(manifest)
    test_set = _select_test_subset(manifest, plan.test_subset)

    models: dict[str, LayeredClassifier] = {}
    for name, ckpt in plan.models.items():
        if not Path(ckpt).exists():
            raise ConfigError(f"model checkpoint {ckpt} does not exist")
        models[name] = load_classifier(ckpt)

    result = BenchResult()
    result.meta = {
        "fingerprint": environment_fingerprint({"dataset": dataset_fp, "seeds": plan.seeds}),
        "n_test": len(test_set),
        "timings": [],
    }

    for model_name, model in models.items():
        for attack_spec in plan.attacks:
            for seed in plan.seeds:
                attacked = None  # materialized lazily, shared across defenses
                for defense_spec in plan.defenses:
                    cell_id = {
                        "dataset": dataset_fp,
                        "model": model_name,
                        "attack": attack_spec,
                        "defense": defense_spec,
                        "seed": seed,
                        "n_test": len(test_set),
                    }
                    key = _cell_key(cell_id)
                    cell_path = out_dir / "cells" / f"{key}.json"
                    if cell_path.exists():
                        cached = io.read_json(cell_path)
                        result.rows.append(cached["row"])
                        continue
                    if attacked is None:
                        attacked = materialize_attack(
                            model, model_name, attack_spec, test_set, seed, out_dir
                        )
                    t0 = time.time()
                    stack = defense_stack_from_spec(
                        defense_spec, model, model_name, attack_spec["name"], seed, plan.denoisers_dir
                    )
                    try:
                        n_correct, per_sample = evaluate_cell(model, stack, attacked)
                    except Exception as exc:  # record the failure, keep the run alive
                        io.write_json({"cell": cell_id, "error": repr(exc)}, out_dir / "cells" / f"{key}.failed.json")
                        result.meta["timings"].append({"cell": key, "error": repr(exc)})
                        continue
                    row = {
                        "model": model_name,
                        "attack": attack_spec["name"],
                        "defense": defense_spec["name"],
                        "seed": seed,
                        "accuracy": n_correct / len(attacked),
                        "n_correct": n_correct,
                        "n_samples": len(attacked),
                    }
                    io.write_json({"cell": cell_id, "row": row, "per_sample": per_sample}, cell_path)
                    result.rows.append(row)
                    result.meta["timings"].append({"cell": key, "wall_time": time.time() - t0})

    (out_dir / RESULTS_CSV).write_text(result.to_csv())
    io.write_json(result.meta, out_dir / "bench_meta.json")
    return result


# ---------------------------------------------------------------------------
# table rendering
# ---------------------------------------------------------------------------


def emit_table(rows: list[dict], fmt: str = "text") -> str:
    """Render rows into a Table-1-shaped grid: (model, attack) x defense.

    Cells show mean accuracy in percent (plus-minus sample std over seeds);
    the best defense per row is flagged with '*'. Missing cells render as an
    em-dash placeholder and are never fabricated.
    """
    if not rows:
        raise DomainError("no rows to render")
    if fmt not in ("text", "csv"):
        raise DomainError(f"unknown table format {fmt!r}")
    defenses = sorted({r["defense"] for r in rows})
    groups: dict[tuple[str, str], dict[str, list[float]]] = {}
    for r in rows:
        cell = groups.setdefault((r["model"], r["attack"]), {})
        cell.setdefault(r["defense"], []).append(r["accuracy"])

    def render_cell(vals: list[float] | None) -> str:
        if not vals:
            return "—"
        pct = [100.0 * v for v in vals]
        if len(pct) == 1:
            return f"{pct[0]:.2f}"
        return f"{np.mean(pct):.2f} ± {np.std(pct, ddof=1):.2f}"

    header = ["model", "attack"] + defenses
    table_rows = []
    for (model, attack) in sorted(groups):
        cells = groups[(model, attack)]
        means = {d: float(np.mean(cells[d])) for d in cells}
        best = max(means.values()) if means else None
        rendered = []
        for d in defenses:
            text = render_cell(cells.get(d))
            if d in means and best is not None and means[d] == best:
                text += " *"
            rendered.append(text)
        table_rows.append([model, attack] + rendered)

    if fmt == "csv":
        lines = [",".join(header)]
        for row in table_rows:
            lines.append(",".join(cell.replace(",", ";") for cell in row))
        return "\n".join(lines) + "\n"

    widths = [max(len(str(row[i])) for row in [header] + table_rows) for i in range(len(header))]
    lines = ["  ".join(str(h).ljust(w) for h, w in zip(header, widths))]
    lines.append("  ".join("-" * w for w in widths))
    for row in table_rows:
        lines.append("  ".join(str(c).ljust(w) for c, w in zip(row, widths)))
    return "\n".join(lines) + "\n"


def grid_scores_csv(scores: list[GridScore]) -> str:
    lines = ["stage,t_steps,accuracy"]
    for s in scores:
        lines.append(f"{s.stage},{s.t_steps},{s.accuracy:.10f}")
    return "\n".join(lines) + "\n"
