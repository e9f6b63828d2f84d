"""Curation plans and the naive / balanced / recommended classifier comparison."""
from __future__ import annotations

from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import nn
from .curves import mix_seed
from .dataset import DatasetView, balanced_merge, split_by_patient, subsample
from .diagnosis import COMPLEXITY, GROUP_BALANCE, SAMPLING
from .errors import ConfigError, DataError
from .metrics import bias_reduction, fairness_report

NAIVE = "naive"
BALANCED = "balanced"
RECOMMENDED = "recommended"


@dataclass
class CurationPlan:
    strategy: str
    budget: int
    target_group: str | None = None
    counts: dict = field(default_factory=dict)
    flags: list = field(default_factory=list)

    def __post_init__(self):
        if self.strategy not in (NAIVE, GROUP_BALANCE, "prioritize"):
            raise ConfigError(f"unknown curation strategy {self.strategy!r}")
        if self.strategy == "prioritize" and self.target_group is None:
            raise ConfigError("prioritize needs a target group")
        if self.budget < 2:
            raise ConfigError("budget must be at least 2 rows")

    @classmethod
    def from_recommendation(cls, recommendation, budget):
        if recommendation == GROUP_BALANCE:
            return cls(GROUP_BALANCE, budget)
        if recommendation.startswith("prioritize("):
            return cls("prioritize", budget, recommendation[len("prioritize("):-1])
        raise ConfigError(f"recommendation {recommendation!r} is not a curation plan")

    @property
    def name(self):
        return f"prioritize({self.target_group})" if self.strategy == "prioritize" else self.strategy


def _draw(view, n, seed, flags, what):
    if n <= 0:
        return view.indices[:0]
    replace = n > len(view)
    if replace:
        flags.append(f"{what}: {n} rows drawn with replacement from {len(view)}")
    return subsample(view, n, seed, with_replacement=replace).indices


def curate(pool, plan: CurationPlan, seed, group_col=None) -> DatasetView:
    """Training rows for ``plan`` drawn from ``pool``; realized per-group counts are
    stored on the plan."""
    view = pool if isinstance(pool, DatasetView) else pool.view()
    g = view.group(group_col)
    names = sorted(set(g))
    if len(names) < 2:
        raise DataError("curation needs at least two groups in the pool")
    by_group = {n: view.restrict(g == n, group=n) for n in names}
    flags = []
    if plan.strategy == NAIVE:
        idx = _draw(view, plan.budget, mix_seed(seed, 1), flags, "naive")
    elif plan.strategy == GROUP_BALANCE:
        merged = balanced_merge(list(by_group.values()), plan.budget, mix_seed(seed, 2))
        flags.extend(merged.flags)
        idx = merged.indices
    else:
        target = plan.target_group
        if target not in by_group:
            raise DataError(f"prioritized group {target!r} not in pool")
        n_seed = min(plan.budget // 4, min(len(v) for v in by_group.values()))
        n_seed -= n_seed % len(names)
        parts = []
        if n_seed:
            merged = balanced_merge(list(by_group.values()), n_seed, mix_seed(seed, 3))
            flags.extend(merged.flags)
            parts.append(merged.indices)
        fill = plan.budget - n_seed
        tview = by_group[target]
        used = set(parts[0].tolist()) if parts else set()
        fresh = tview.restrict(~np.isin(tview.indices, list(used)))
        source = fresh if fill <= len(fresh) else tview
        parts.append(_draw(source, fill, mix_seed(seed, 4), flags, f"fill from {target}"))
        idx = np.concatenate(parts)
    counts = {}
    all_groups = view.dataset.groups[group_col or view.dataset.group_col]
    for n in names:
        counts[n] = int(np.sum(all_groups[idx] == n))
    plan.counts = counts
    plan.flags = flags
    return DatasetView(view.dataset, np.asarray(idx, dtype=np.int64), {"plan": plan.name},
                       with_replacement=True, flags=flags)


def train_classifier(train_view, val_view, outcome, cfg: nn.TrainConfig, seed, hidden=(64, 32)):
    x = train_view.features
    y = train_view.outcome(outcome).reshape(-1, 1)
    val = (val_view.features, val_view.outcome(outcome).reshape(-1, 1))
    params = nn.init_classifier(x.shape[1], seed=mix_seed(seed, 11), hidden=hidden)
    return nn.train(params, x, y, cfg, val=val, seed=mix_seed(seed, 12)).params


@dataclass
class MitigationResult:
    reports: dict
    reductions: dict
    plans: dict
    test_ids: frozenset
    notes: list = field(default_factory=list)

    def to_dict(self):
        return {
            "arms": {k: r.to_dict() for k, r in self.reports.items()},
            "reductions": {k: r.to_dict() for k, r in self.reductions.items()},
            "plans": {k: {"strategy": p.name, "budget": p.budget, "counts": p.counts, "flags": p.flags}
                      for k, p in self.plans.items()},
            "notes": self.notes,
        }


def _run_arm(args):
    train_view, val_view, test_view, plan, outcome, cfg, seed, kw = args
    rows = curate(train_view, plan, seed)
    model = train_classifier(rows, val_view, outcome, cfg, seed)
    rep = fairness_report(model, test_view, outcome, **kw)
    return rep, plan


def run_mitigation(ds, diagnosis, budget, train_cfg: nn.TrainConfig, seed, outcome,
                   reference_group, protected_group, threshold=0.5, report_bootstraps=50,
                   threads=1) -> MitigationResult:
    train_v, val_v, test_v = split_by_patient(ds, (0.6, 0.2, 0.2), seed=mix_seed(seed, 21))
    if budget is None:
        # half the training pool leaves room for prioritized rows to be fresh
        budget = len(train_v) // 2
    arms = {NAIVE: CurationPlan(NAIVE, budget), BALANCED: CurationPlan(GROUP_BALANCE, budget)}
    notes = []
    # a bare recommendation string stands in for a full diagnosis
    if isinstance(diagnosis, str):
        rec = diagnosis
        actionable = rec == GROUP_BALANCE or rec.startswith("prioritize(")
    else:
        rec = diagnosis.recommendation if diagnosis is not None else "none"
        actionable = diagnosis is not None and diagnosis.bias_type in (SAMPLING, COMPLEXITY)
    if actionable:
        if rec != GROUP_BALANCE:
            arms[RECOMMENDED] = CurationPlan.from_recommendation(rec, budget)
    else:
        notes.append("no actionable diagnosis; running naive and balanced arms only")
    kw = dict(threshold=threshold, bootstraps=report_bootstraps, seed=mix_seed(seed, 31),
              reference_group=reference_group, protected_group=protected_group,
              groups=sorted({reference_group, protected_group}))
    # every arm shares the split and the classifier seed; only the training rows differ
    tasks = [(train_v, val_v, test_v, plan, outcome, train_cfg, seed, kw) for plan in arms.values()]
    if threads > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=min(threads, len(tasks))) as pool:
            results = list(pool.map(_run_arm, tasks))
    else:
        results = [_run_arm(t) for t in tasks]
    reports, plans = {}, {}
    for name, (rep, plan) in zip(arms, results):
        reports[name] = rep
        plans[name] = plan
    if actionable and rec == GROUP_BALANCE:
        reports[RECOMMENDED] = reports[BALANCED]
        plans[RECOMMENDED] = plans[BALANCED]
    ids = {name: r.row_ids for name, r in reports.items()}
    if len(set(ids.values())) != 1:
        raise DataError("arms were evaluated on different test partitions")
    reductions = {name: bias_reduction(reports[NAIVE], r) for name, r in reports.items() if name != NAIVE}
    return MitigationResult(reports, reductions, plans, reports[NAIVE].row_ids, notes)
