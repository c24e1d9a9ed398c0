"""Dice metrics, score-Dice correlation, and the budget sweep harness."""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy import stats

from .exceptions import DegenerateInputError, ValidationError
from .types import LabelMap, check_same_shape


def _classes(x) -> np.ndarray:
    return x.classes if isinstance(x, LabelMap) else np.asarray(x)


def dice_score(pred, gt, class_id: int) -> float:
    """Dice = 2|A∩B| / (|A|+|B|) over the binary masks of one class.

    Both masks empty counts as a perfect match (1.0); phantom slices may
    legitimately lack a class.
    """
    a = _classes(pred) == class_id
    b = _classes(gt) == class_id
    check_same_shape(a, b, "dice masks")
    denom = int(a.sum()) + int(b.sum())
    if denom == 0:
        return 1.0
    return 2.0 * int(np.logical_and(a, b).sum()) / denom


def foreground_dice(pred, gt, num_classes: int = 3) -> float:
    """Mean Dice over the non-background classes of one slice."""
    scores = [dice_score(pred, gt, c) for c in range(1, num_classes)]
    return float(np.mean(scores))


@dataclass(frozen=True)
class EvalResult:
    dice_per_class: dict[int, float]
    foreground_avg: float
    num_slices: int

    def to_dict(self) -> dict:
        return {
            "dice_per_class": {str(k): v for k, v in self.dice_per_class.items()},
            "foreground_avg": self.foreground_avg,
            "num_slices": self.num_slices,
        }


def evaluate_segmentation(state, dataset, test_ids) -> EvalResult:
    """Per-class Dice averaged over test slices; the headline average covers
    foreground classes only (background excluded)."""
    from .training import predict_labels

    ids = list(test_ids)
    if not ids:
        raise ValidationError("evaluation: empty test set")
    preds = predict_labels(state, [dataset.image(sid) for sid in ids])
    return evaluate_predictions(
        [label for _, label in preds],
        [dataset.label(sid) for sid in ids],
        dataset.num_classes,
    )


def evaluate_predictions(preds, gts, num_classes: int = 3) -> EvalResult:
    if not preds:
        raise ValidationError("evaluation: empty test set")
    per_class = {
        c: float(np.mean([dice_score(p, g, c) for p, g in zip(preds, gts)]))
        for c in range(num_classes)
    }
    fg = float(np.mean([per_class[c] for c in range(1, num_classes)]))
    return EvalResult(per_class, fg, len(preds))


def pearson_correlation(xs, ys) -> tuple[float, float]:
    """Pearson r with a two-sided t-test p-value (n-2 degrees of freedom)."""
    x = np.asarray(xs, dtype=np.float64)
    y = np.asarray(ys, dtype=np.float64)
    if x.shape != y.shape or x.ndim != 1:
        raise ValidationError("correlation: inputs must be 1D of equal length")
    n = x.size
    if n < 3:
        raise ValidationError(f"correlation: need at least 3 points, got {n}")
    xd = x - x.mean()
    yd = y - y.mean()
    sx = float(np.sqrt((xd * xd).sum()))
    sy = float(np.sqrt((yd * yd).sum()))
    if sx == 0.0 or sy == 0.0:
        raise DegenerateInputError("correlation: zero variance input")
    r = float((xd * yd).sum() / (sx * sy))
    r = max(-1.0, min(1.0, r))
    if abs(r) == 1.0:
        return r, 0.0
    t = r * np.sqrt((n - 2) / (1.0 - r * r))
    p = 2.0 * float(stats.t.sf(abs(t), df=n - 2))
    return r, p


@dataclass(frozen=True)
class SweepRow:
    budget_fraction: float
    dice_myocardium_analog: float  # class 1 (ring)
    dice_bloodpool_analog: float   # class 2 (disk)
    dice_avg: float
    seeds_aggregated: int


@dataclass
class SweepTable:
    rows: list[SweepRow]

    def write_csv(self, path) -> Path:
        path = Path(path)
        with path.open("w", newline="") as f:
            writer = csv.writer(f)
            writer.writerow(["fraction", "dice_c1", "dice_c2", "dice_avg", "seeds"])
            for row in self.rows:
                writer.writerow(
                    [
                        f"{row.budget_fraction:g}",
                        f"{row.dice_myocardium_analog:.6f}",
                        f"{row.dice_bloodpool_analog:.6f}",
                        f"{row.dice_avg:.6f}",
                        row.seeds_aggregated,
                    ]
                )
        return path


def write_correlation_csv(rows: list[tuple[str, float, float]], path) -> Path:
    """Per-slice (slice_id, confidence, foreground dice) for the score-quality
    analysis."""
    path = Path(path)
    with path.open("w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["slice_id", "confidence", "dice_avg"])
        for sid, conf, dice in rows:
            writer.writerow([sid, f"{conf:.6f}", f"{dice:.6f}"])
    return path


def budget_sweep(
    dataset,
    fractions: list[float],
    seeds: list[int],
    loop_cfg_template,
    base_volume_ids=None,
    holdout_volume_ids=None,
    out_dir=None,
) -> SweepTable:
    """Run one active-learning cycle per (fraction, seed) cell and aggregate
    Dice by median across seeds.

    The base model is trained once per seed and shared across fractions, which
    matches the single-cycle protocol (queries are ranked by the supervised
    base model).  Per-seed confidence/Dice pairs over the pool are written to
    ``seed_<s>/correlation.csv``; failures abort after retaining a partial CSV
    and an error summary.
    """
    from dataclasses import replace as dc_replace

    from .dataset import split_pools
    from .loop import CganModelOps, run_collaborative_learning
    from .uncertainty import score_pool

    if list(fractions) != sorted(fractions):
        raise ValidationError("sweep: fractions must be sorted ascending")
    if any(not 0.0 <= f <= 1.0 for f in fractions):
        raise ValidationError("sweep: fractions must lie in [0, 1]")
    if not seeds:
        raise ValidationError("sweep: need at least one seed")

    volumes = dataset.volume_ids
    base_vols = list(base_volume_ids) if base_volume_ids else [volumes[0]]
    holdout_vols = (
        list(holdout_volume_ids) if holdout_volume_ids else volumes[-2:]
    )
    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)

    # cells[fraction][seed] -> EvalResult
    cells: dict[float, dict[int, EvalResult]] = {f: {} for f in fractions}
    correlations: list[dict] = []
    failures: list[dict] = []
    try:
        for seed in seeds:
            pool0, test_ids = split_pools(dataset, base_vols, holdout_vols)
            cfg = dc_replace(
                loop_cfg_template,
                train_cfg=dc_replace(loop_cfg_template.train_cfg, rng_seed=seed),
            )
            ops = CganModelOps(cfg)
            base_state, _ = ops.train_base(
                dataset.pairs(sorted(pool0.labeled)), seed
            )

            scored = score_pool(base_state, dataset, sorted(pool0.unlabeled))
            rows = [
                (
                    s.slice_id,
                    s.score,
                    foreground_dice(s.label, dataset.label(s.slice_id),
                                    dataset.num_classes),
                )
                for s in scored
            ]
            r, p = pearson_correlation(
                [c for _, c, _ in rows], [d for _, _, d in rows]
            )
            correlations.append({"seed": seed, "r": r, "p": p, "n": len(rows)})
            if out is not None:
                seed_dir = out / f"seed_{seed}"
                seed_dir.mkdir(exist_ok=True)
                write_correlation_csv(rows, seed_dir / "correlation.csv")

            for frac in fractions:
                run_dir = (
                    out / f"seed_{seed}" / f"fraction_{frac:g}"
                    if out is not None else None
                )
                cell_cfg = dc_replace(cfg, k=float(frac), n=1)
                try:
                    state, reports = run_collaborative_learning(
                        dataset,
                        pool0.copy(),
                        test_ids,
                        cell_cfg,
                        out_dir=run_dir,
                        base_state=base_state,
                    )
                except Exception as e:  # noqa: BLE001 - summarized and re-raised
                    failures.append(
                        {"seed": seed, "fraction": frac, "error": repr(e)}
                    )
                    raise
                cells[frac][seed] = evaluate_segmentation(state, dataset, test_ids)
    finally:
        table = _aggregate_sweep(cells, fractions)
        if out is not None:
            table.write_csv(out / "sweep.csv")
            summary = {
                "fractions": list(fractions),
                "seeds": list(seeds),
                "correlations": correlations,
                "median_r": float(np.median([c["r"] for c in correlations]))
                if correlations else None,
                "median_p": float(np.median([c["p"] for c in correlations]))
                if correlations else None,
                "failures": failures,
            }
            (out / "sweep_summary.json").write_text(
                json.dumps(summary, indent=2, sort_keys=True)
            )
    return table


def _aggregate_sweep(cells, fractions) -> SweepTable:
    rows = []
    for frac in fractions:
        results = list(cells[frac].values())
        if not results:
            continue
        c1 = float(np.median([r.dice_per_class[1] for r in results]))
        c2 = float(np.median([r.dice_per_class[2] for r in results]))
        rows.append(SweepRow(frac, c1, c2, (c1 + c2) / 2.0, len(results)))
    return SweepTable(rows)
