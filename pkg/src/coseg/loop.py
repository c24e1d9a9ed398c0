"""Collaborative learning loop: base training, ranked querying under a
budget, expert annotation, pseudo-label assembly, and retraining.

Cycle sequence: train a base model on the labeled set, then for each of the
``n`` cycles rank the pool by discriminator confidence, query the per-cycle
budget of least-confident slices from the expert, pseudo-label the remaining
pool with the current generator, and retrain on the joint set.  The joint set
is the initially labeled slices plus all expert annotations obtained so far
plus fresh pseudo labels for everything still in the pool.
"""

from __future__ import annotations

import dataclasses
import json
import time
from dataclasses import dataclass, field, replace
from enum import Enum
from pathlib import Path
from typing import Mapping, Protocol, Sequence

import numpy as np

from .dataset import Dataset, write_label_png
from .exceptions import CycleAbortedError, ValidationError
from .metrics import EvalResult, evaluate_segmentation
from .networks import (
    DiscriminatorConfig,
    GeneratorConfig,
    ModelState,
    init_model_state,
    save_checkpoint,
)
from .training import TrainConfig, train_model
from .types import ImageSlice, LabelMap, LabelSource, SamplePool
from .uncertainty import (
    PoolScore,
    rank_scores,
    save_uncertainty_png,
    score_pool,
    select_lowest,
    uncertainty_map,
    write_ranking_csv,
)


class ExpertKind(Enum):
    ORACLE = "oracle"
    HUMAN_SERVICE = "human_service"


class QueryStrategy(Enum):
    RANKED = "ranked"
    RANDOM = "random"


@dataclass(frozen=True)
class LoopConfig:
    """Budget ``k`` (absolute int count, or float fraction of the initial
    pool), cycle count ``n``, and the training setup for each retrain."""

    k: int | float = 0.8
    n: int = 1
    train_cfg: TrainConfig = field(default_factory=TrainConfig)
    base_train_cfg: TrainConfig | None = None
    gen_cfg: GeneratorConfig = field(default_factory=GeneratorConfig)
    disc_cfg: DiscriminatorConfig = field(default_factory=DiscriminatorConfig)
    expert: ExpertKind = ExpertKind.ORACLE
    query_strategy: QueryStrategy = QueryStrategy.RANKED
    confidence_reduction: str = "mean"

    def __post_init__(self):
        if self.n < 1:
            raise ValidationError("loop config: n must be >= 1")
        if isinstance(self.k, float) and not 0.0 <= self.k <= 1.0:
            raise ValidationError(
                f"loop config: fractional budget {self.k} must lie in [0, 1]"
            )
        if isinstance(self.k, int) and self.k < 0:
            raise ValidationError("loop config: budget k must be >= 0")


@dataclass
class CycleReport:
    cycle_index: int
    query_ids: list[str]
    labeled_before: int
    unlabeled_before: int
    labeled_after: int
    unlabeled_after: int
    mean_pool_confidence: float
    test_dice: dict | None
    wall_time_sec: float

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "CycleReport":
        return cls(**d)


def resolve_budget(k: int | float, pool_size: int) -> int:
    """Fractional budgets are shares of the initial pool (round half up);
    absolute budgets are clamped to the pool size."""
    if isinstance(k, float):
        k_abs = int(np.floor(k * pool_size + 0.5))
    else:
        k_abs = int(k)
    return max(0, min(k_abs, pool_size))


def cycle_budgets(k: int, n: int) -> list[int]:
    """floor(k/n) per cycle, remainder assigned to the last cycle."""
    base = k // n
    return [base] * (n - 1) + [k - (n - 1) * base]


def simulated_expert(
    query_ids: Sequence[str], ground_truth_store: Mapping[str, LabelMap]
) -> list[LabelMap]:
    """Oracle annotator: returns stored ground truth verbatim, retagged EXPERT."""
    out = []
    for sid in query_ids:
        if sid not in ground_truth_store:
            raise ValidationError(f"oracle: no ground truth available for {sid!r}")
        out.append(ground_truth_store[sid].with_source(LabelSource.EXPERT))
    return out


class Expert(Protocol):
    def annotate(self, query_ids: Sequence[str]) -> dict[str, LabelMap]:
        """Blocking annotation of a query set; returns EXPERT label maps."""


class OracleExpert:
    """Simulated expert backed by a ground-truth store that must never
    contain test-set ids."""

    def __init__(self, ground_truth_store: Mapping[str, LabelMap]):
        self.store = dict(ground_truth_store)

    def annotate(self, query_ids: Sequence[str]) -> dict[str, LabelMap]:
        labels = simulated_expert(query_ids, self.store)
        return {lm.slice_id: lm for lm in labels}


def assemble_training_set(
    dataset: Dataset,
    pool: SamplePool,
    expert_labels: Mapping[str, LabelMap],
    pseudo_labels: Mapping[str, LabelMap],
) -> list[tuple[ImageSlice, LabelMap]]:
    """Join base ground truth, accumulated expert labels, and pseudo labels
    into one training set covering labeled ∪ unlabeled exactly once."""
    expert_ids = set(expert_labels)
    pseudo_ids = set(pseudo_labels)
    dup = expert_ids & pseudo_ids
    if dup:
        raise ValidationError(
            f"training set: ids in both expert and pseudo sets "
            f"(e.g. {sorted(dup)[0]!r})"
        )
    stray = expert_ids - pool.labeled
    if stray:
        raise ValidationError(
            f"training set: expert labels for unqueried ids "
            f"(e.g. {sorted(stray)[0]!r})"
        )
    if pseudo_ids != pool.unlabeled:
        diff = pseudo_ids.symmetric_difference(pool.unlabeled)
        raise ValidationError(
            f"training set: pseudo labels must cover the unlabeled pool exactly "
            f"({len(diff)} mismatched ids, e.g. {sorted(diff)[0]!r})"
        )
    base_ids = pool.labeled - expert_ids
    pairs = []
    for sid in dataset.order:
        if sid in base_ids:
            pairs.append((dataset.image(sid), dataset.label(sid)))
        elif sid in expert_ids:
            pairs.append((dataset.image(sid), expert_labels[sid]))
        elif sid in pseudo_ids:
            pairs.append((dataset.image(sid), pseudo_labels[sid]))
    return pairs


class CganModelOps:
    """Model operations used by the loop; swap in a stub for bookkeeping tests."""

    def __init__(self, cfg: LoopConfig):
        self.cfg = cfg

    def init_state(self) -> ModelState:
        return init_model_state(self.cfg.gen_cfg, self.cfg.disc_cfg)

    def train_base(self, pairs, seed: int):
        cfg = self.cfg.base_train_cfg or self.cfg.train_cfg
        return train_model(self.init_state(), pairs, replace(cfg, rng_seed=seed))

    def train_cycle(self, state, pairs, seed: int):
        return train_model(state, pairs, replace(self.cfg.train_cfg, rng_seed=seed))

    def score_pool(self, state, dataset, ids) -> list[PoolScore]:
        return score_pool(state, dataset, ids, self.cfg.confidence_reduction)

    def uncertainty_map(self, state, image, prob):
        return uncertainty_map(state, image, prob)

    def evaluate(self, state, dataset, test_ids) -> EvalResult:
        return evaluate_segmentation(state, dataset, test_ids)

    def save_state(self, state, path):
        save_checkpoint(state, path)


def _select_queries(
    cfg: LoopConfig, scored: list[PoolScore], budget: int, cycle: int, seed: int
) -> list[str]:
    records = rank_scores(scored)
    if cfg.query_strategy is QueryStrategy.RANKED:
        return select_lowest(records, budget)
    rng = np.random.default_rng([seed, cycle])
    ids = sorted(s.slice_id for s in scored)
    take = min(budget, len(ids))
    picked = rng.choice(len(ids), size=take, replace=False)
    return [ids[i] for i in sorted(picked)]


def run_collaborative_learning(
    dataset: Dataset,
    pool: SamplePool,
    test_ids: Sequence[str],
    cfg: LoopConfig,
    expert: Expert | None = None,
    out_dir=None,
    model_ops=None,
    base_state: ModelState | None = None,
) -> tuple[ModelState, list[CycleReport]]:
    """Run the full collaborative loop; returns the final model and one
    report per cycle.

    Expert failures raise CycleAbortedError after persisting all completed
    cycles, so an interrupted human session can resume from disk.
    """
    pool = pool.copy()
    pool.validate()
    test_set = set(test_ids)
    leaked = pool.all_ids & test_set
    if leaked:
        raise ValidationError(
            f"loop: test ids present in the pool (e.g. {sorted(leaked)[0]!r})"
        )
    ops = model_ops if model_ops is not None else CganModelOps(cfg)
    if expert is None:
        if cfg.expert is not ExpertKind.ORACLE:
            raise ValidationError("loop: non-oracle expert must be supplied")
        expert = OracleExpert(
            {sid: dataset.label(sid) for sid in sorted(pool.all_ids)}
        )

    seed = cfg.train_cfg.rng_seed
    out = Path(out_dir) if out_dir is not None else None
    initial_pool_size = len(pool.unlabeled)
    k_eff = resolve_budget(cfg.k, initial_pool_size)
    budgets = cycle_budgets(k_eff, cfg.n)

    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        _write_run_manifest(out, dataset, cfg, k_eff, budgets, pool, test_ids)

    if base_state is None:
        state, base_history = ops.train_base(
            dataset.pairs(sorted(pool.labeled)), seed
        )
        if out is not None:
            from .training import save_history_csv

            save_history_csv(base_history, out / "base_history.csv")
    else:
        state = base_state

    expert_labels_all: dict[str, LabelMap] = {}
    reports: list[CycleReport] = []
    for cycle, budget in enumerate(budgets, start=1):
        t0 = time.perf_counter()
        labeled_before = len(pool.labeled)
        unlabeled_before = len(pool.unlabeled)

        scored = ops.score_pool(state, dataset, sorted(pool.unlabeled))
        records = rank_scores(scored)
        mean_conf = float(np.mean([s.score for s in scored])) if scored else 0.0
        query_ids = _select_queries(cfg, scored, budget, cycle, seed)
        if set(query_ids) & test_set:
            raise ValidationError("loop: query attempted to reach the test set")

        cycle_dir = None
        if out is not None:
            cycle_dir = out / f"cycle_{cycle}"
            cycle_dir.mkdir(exist_ok=True)
            write_ranking_csv(records, query_ids, cycle_dir / "ranking.csv")
            (cycle_dir / "query.json").write_text(
                json.dumps({"cycle": cycle, "query_ids": query_ids}, indent=2)
            )
            _write_query_overlays(ops, state, dataset, scored, query_ids, cycle_dir)

        try:
            expert_result = expert.annotate(query_ids)
        except Exception as e:
            raise CycleAbortedError(
                cycle, f"cycle {cycle}: expert failed: {e}"
            ) from e
        _check_expert_labels(expert_result, query_ids, dataset)

        pool.mark_queried(query_ids)
        expert_labels_all.update(expert_result)
        remaining = set(pool.unlabeled)
        pool.set_pseudo(
            {s.slice_id: s.label for s in scored if s.slice_id in remaining}
        )

        training_set = assemble_training_set(
            dataset, pool, expert_labels_all, pool.pseudo
        )
        state, history = ops.train_cycle(state, training_set, seed + cycle)

        test_metrics = (
            ops.evaluate(state, dataset, list(test_ids)) if test_ids else None
        )
        report = CycleReport(
            cycle_index=cycle,
            query_ids=list(query_ids),
            labeled_before=labeled_before,
            unlabeled_before=unlabeled_before,
            labeled_after=len(pool.labeled),
            unlabeled_after=len(pool.unlabeled),
            mean_pool_confidence=mean_conf,
            test_dice=test_metrics.to_dict() if test_metrics else None,
            wall_time_sec=time.perf_counter() - t0,
        )
        reports.append(report)

        if cycle_dir is not None:
            from .training import save_history_csv

            for sid, lm in sorted(expert_result.items()):
                expert_dir = cycle_dir / "expert"
                expert_dir.mkdir(exist_ok=True)
                write_label_png(lm.classes, expert_dir / f"{_stem(sid)}.png")
            save_history_csv(history, cycle_dir / "history.csv")
            ops.save_state(state, cycle_dir / "checkpoint.ckpt")
            (cycle_dir / "report.json").write_text(
                json.dumps(report.to_dict(), indent=2, sort_keys=True)
            )

    if out is not None:
        summary = {
            "cycles": len(reports),
            "total_queried": sum(len(r.query_ids) for r in reports),
            "final_test_dice": reports[-1].test_dice if reports else None,
        }
        (out / "summary.json").write_text(
            json.dumps(summary, indent=2, sort_keys=True)
        )
    return state, reports


def _stem(sid: str) -> str:
    return sid.replace(":", "_")


def _check_expert_labels(result: dict[str, LabelMap], query_ids, dataset):
    expected = set(query_ids)
    got = set(result)
    if got != expected:
        diff = got.symmetric_difference(expected)
        raise ValidationError(
            f"expert: returned ids do not match the query set "
            f"({len(diff)} mismatched, e.g. {sorted(diff)[0]!r})"
        )
    for sid, lm in result.items():
        if lm.source is not LabelSource.EXPERT:
            raise ValidationError(f"expert: label for {sid} not tagged EXPERT")
        if lm.shape != (dataset.height, dataset.width):
            raise ValidationError(f"expert: label for {sid} has shape {lm.shape}")
        lm.check_classes(dataset.num_classes)


def _write_query_overlays(ops, state, dataset, scored, query_ids, cycle_dir: Path):
    """Pseudo-label and unreliability PNGs for the queried slices (UI overlays)."""
    chosen = set(query_ids)
    pseudo_dir = cycle_dir / "pseudo"
    unc_dir = cycle_dir / "uncertainty"
    pseudo_dir.mkdir(exist_ok=True)
    unc_dir.mkdir(exist_ok=True)
    for s in scored:
        if s.slice_id not in chosen:
            continue
        write_label_png(s.label.classes, pseudo_dir / f"{_stem(s.slice_id)}.png")
        u = ops.uncertainty_map(state, dataset.image(s.slice_id), s.prob)
        save_uncertainty_png(u, unc_dir / f"{_stem(s.slice_id)}.png")


def _write_run_manifest(out: Path, dataset, cfg: LoopConfig, k_eff, budgets,
                        pool, test_ids):
    echo = {
        "dataset": {"name": dataset.name, "size": len(dataset),
                    "num_classes": dataset.num_classes},
        "k": cfg.k,
        "k_resolved": k_eff,
        "n": cfg.n,
        "cycle_budgets": budgets,
        "expert": cfg.expert.value,
        "query_strategy": cfg.query_strategy.value,
        "confidence_reduction": cfg.confidence_reduction,
        "train_cfg": _train_cfg_echo(cfg.train_cfg),
        "base_train_cfg": _train_cfg_echo(cfg.base_train_cfg)
        if cfg.base_train_cfg else None,
        "gen_cfg": dataclasses.asdict(cfg.gen_cfg),
        "disc_cfg": dataclasses.asdict(cfg.disc_cfg),
        "pool": {"labeled": sorted(pool.labeled),
                 "unlabeled": sorted(pool.unlabeled)},
        "test_ids": sorted(test_ids),
    }
    (out / "run.json").write_text(json.dumps(echo, indent=2, sort_keys=True))


def _train_cfg_echo(cfg: TrainConfig) -> dict:
    d = dataclasses.asdict(cfg)
    d["mode"] = cfg.mode.value
    return d
