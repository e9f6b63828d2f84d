"""Bias typing from group and joint AEq estimates, and outcome selection."""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

from .errors import DataError
from .stats import AeqEstimate, DiffResult, aeq_difference

SAMPLING = "sampling"
COMPLEXITY = "complexity"
INDETERMINATE = "indeterminate"
NONE = "none"

GROUP_BALANCE = "group_balance"
RESELECT = "reselect_outcome"


def prioritize(group):
    return f"prioritize({group})"


@dataclass
class BiasDiagnosis:
    label: str | None
    group_estimates: dict
    joint: AeqEstimate
    bias_type: str
    recommendation: str
    evidence: dict
    protected_group: str | None = None
    label_flag: bool = False
    notes: list = field(default_factory=list)

    def __post_init__(self):
        expected = {SAMPLING: GROUP_BALANCE, INDETERMINATE: NONE, NONE: NONE}
        if self.bias_type == COMPLEXITY:
            ok = self.recommendation.startswith("prioritize(")
        else:
            ok = expected.get(self.bias_type) == self.recommendation
        if not ok:
            raise ValueError(f"recommendation {self.recommendation!r} inconsistent with {self.bias_type!r}")

    @property
    def advisories(self):
        return [RESELECT] if self.label_flag else []

    @property
    def target_group(self):
        if self.recommendation.startswith("prioritize("):
            return self.recommendation[len("prioritize("):-1]
        return None

    def to_dict(self):
        return {
            "label": self.label,
            "bias_type": self.bias_type,
            "recommendation": self.recommendation,
            "label_flag": self.label_flag,
            "advisories": self.advisories,
            "protected_group": self.protected_group,
            "groups": {g: e.to_dict() for g, e in self.group_estimates.items()},
            "joint": self.joint.to_dict(),
            "evidence": {k: v.to_dict() for k, v in self.evidence.items()},
            "notes": list(self.notes),
        }


def _group_name(est, fallback):
    return str(est.descriptor.get("group", fallback))


def classify_bias(est_a: AeqEstimate, est_b: AeqEstimate, est_joint: AeqEstimate,
                  protected_group=None, alpha=0.05, label=None) -> BiasDiagnosis:
    if not (est_a.grid == est_b.grid == est_joint.grid):
        raise DataError("AEq estimates were computed on different grids")
    if not (est_a.bootstraps == est_b.bootstraps == est_joint.bootstraps):
        raise DataError("AEq estimates have different bootstrap counts")
    name_a, name_b = _group_name(est_a, "A"), _group_name(est_b, "B")
    # order-independent lo/hi so that swapping A and B cannot change the verdict
    pairs = sorted([(est_a.mean, name_a, est_a), (est_b.mean, name_b, est_b)], key=lambda t: (t[0], t[1]))
    (_, lo_name, lo), (_, hi_name, hi) = pairs
    j = est_joint

    gap = aeq_difference(est_a, est_b)
    vs_lo = aeq_difference(j, lo)
    vs_hi = aeq_difference(j, hi)
    notes = []

    if j.mean <= lo.mean or (vs_lo.p >= alpha and vs_hi.p < alpha and j.mean < hi.mean):
        bias, rec = SAMPLING, GROUP_BALANCE
    elif j.mean > hi.mean or (abs(j.mean - hi.mean) < abs(j.mean - lo.mean) and vs_lo.p < alpha):
        bias = COMPLEXITY
        target = protected_group
        if target is None:
            target = hi_name
            notes.append("no protected group configured; prioritizing the higher-AEq group")
        rec = prioritize(target)
    elif gap.p >= alpha and vs_lo.p >= alpha and vs_hi.p >= alpha:
        bias, rec = NONE, NONE
    else:
        bias, rec = INDETERMINATE, NONE

    label_flag = gap.p < alpha
    if label_flag:
        notes.append(f"groups differ on this label (p={gap.p:.3g}); consider an alternative outcome")
    return BiasDiagnosis(
        label=label if label is not None else _label_name(est_a),
        group_estimates={name_a: est_a, name_b: est_b},
        joint=j,
        bias_type=bias,
        recommendation=rec,
        evidence={"gap": gap, "joint_vs_lo": vs_lo, "joint_vs_hi": vs_hi},
        protected_group=protected_group,
        label_flag=label_flag,
        notes=notes,
    )


def _label_name(est):
    lab = est.label
    if isinstance(lab, (tuple, list)):
        return f"{lab[0]}={lab[1]:g}" if isinstance(lab[1], float) else f"{lab[0]}={lab[1]}"
    return lab


@dataclass
class OutcomeSelection:
    gaps: dict
    selected: str
    selection_reason: str
    warning: str | None = None

    def to_dict(self):
        return {
            "selected": self.selected,
            "selection_reason": self.selection_reason,
            "warning": self.warning,
            "gaps": {k: v.to_dict() for k, v in self.gaps.items()},
        }


def select_outcome(gaps: dict, alpha=0.05) -> OutcomeSelection:
    """Pick the candidate outcome whose between-group AEq gap is smallest in magnitude."""
    if not gaps:
        raise DataError("select_outcome needs at least one candidate")
    # ties resolve by name so the choice never depends on dict order
    selected = min(sorted(gaps), key=lambda k: abs(gaps[k].difference))
    g = gaps[selected]
    if g.ci95[0] <= 0 <= g.ci95[1]:
        return OutcomeSelection(dict(gaps), selected, "unbiased candidate found")
    return OutcomeSelection(dict(gaps), selected, "least-biased candidate, all significant",
                            warning="every candidate outcome shows a between-group AEq gap")


def write_diagnosis_json(diagnoses, path, selection=None, extra=None):
    payload = {"diagnoses": [d.to_dict() for d in diagnoses]}
    if selection is not None:
        payload["outcome_selection"] = selection.to_dict()
    if extra:
        payload.update(extra)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(payload, indent=2, sort_keys=True, allow_nan=True) + "\n", encoding="utf-8")
    return path
