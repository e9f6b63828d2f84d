"""AUROC, confusion-matrix rates and group fairness reports for a scored test set."""
from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.stats import rankdata

from .errors import ConfigError, DataError
from .stats import percentile_ci

METRICS = ("auroc", "tpr", "tnr", "fpr", "fnr", "precision", "fdr", "predicted_prevalence")


def auroc(scores, labels):
    scores = np.asarray(scores, dtype=np.float64).ravel()
    labels = np.asarray(labels).ravel()
    pos = labels == 1
    n1 = int(pos.sum())
    n0 = labels.size - n1
    if n1 == 0 or n0 == 0:
        raise DataError("AUROC undefined: labels contain a single class")
    ranks = rankdata(scores)
    return float((ranks[pos].sum() - n1 * (n1 + 1) / 2.0) / (n1 * n0))


def _ratio(num, den):
    return num / den if den else None


def confusion_metrics(scores, labels, threshold=0.5):
    """Threshold rates as a dict; rates with an empty denominator are None and
    listed under ``"flags"``."""
    if not 0 < threshold < 1:
        raise ConfigError(f"threshold must lie in (0, 1), got {threshold}")
    scores = np.asarray(scores, dtype=np.float64).ravel()
    labels = np.asarray(labels).ravel()
    if scores.shape != labels.shape:
        raise DataError("scores and labels differ in length")
    if not np.isin(labels, (0, 1)).all():
        raise DataError("labels must be binary 0/1")
    pred = scores >= threshold
    y = labels == 1
    tp = int(np.sum(pred & y))
    fp = int(np.sum(pred & ~y))
    fn = int(np.sum(~pred & y))
    tn = int(np.sum(~pred & ~y))
    out = {
        "tpr": _ratio(tp, tp + fn),
        "fnr": _ratio(fn, tp + fn),
        "tnr": _ratio(tn, tn + fp),
        "fpr": _ratio(fp, tn + fp),
        "precision": _ratio(tp, tp + fp),
        "fdr": _ratio(fp, tp + fp),
        "predicted_prevalence": _ratio(tp + fp, labels.size),
    }
    out["flags"] = [f"{k} undefined" for k, v in out.items() if v is None]
    return out


@dataclass
class GroupMetrics:
    n: int
    auroc: float | None
    auroc_ci: tuple | None
    rates: dict
    flags: list = field(default_factory=list)

    def value(self, metric):
        return self.auroc if metric == "auroc" else self.rates.get(metric)


@dataclass
class FairnessReport:
    groups: dict
    reference_group: str
    protected_group: str
    threshold: float
    row_ids: frozenset = frozenset()

    def gap(self, metric="auroc"):
        ref = self.groups[self.reference_group].value(metric)
        prot = self.groups[self.protected_group].value(metric)
        if ref is None or prot is None:
            return None
        return ref - prot

    @property
    def gaps(self):
        return {m: self.gap(m) for m in METRICS}

    @property
    def bias(self):
        return self.gap("auroc")

    def to_dict(self):
        return {
            "reference_group": self.reference_group,
            "protected_group": self.protected_group,
            "threshold": self.threshold,
            "groups": {
                g: {"n": m.n, "auroc": m.auroc, "auroc_ci": list(m.auroc_ci) if m.auroc_ci else None,
                    **{k: m.rates.get(k) for k in METRICS if k != "auroc"}, "flags": m.flags}
                for g, m in self.groups.items()
            },
            "gaps": self.gaps,
        }


def _scores(model, x):
    if callable(model):
        return np.asarray(model(x), dtype=np.float64).ravel()
    from .nn import predict

    return predict(model, x).ravel()


def _auroc_ci(scores, labels, bootstraps, rng):
    vals = []
    n = labels.size
    for _ in range(bootstraps):
        idx = rng.integers(0, n, size=n)
        y = labels[idx]
        if y.min() == y.max():
            continue
        vals.append(auroc(scores[idx], y))
    if len(vals) < 2:
        return None
    return percentile_ci(vals)


def fairness_report(model, test_view, outcome, groups=None, threshold=0.5, bootstraps=50, seed=0,
                    reference_group=None, protected_group=None, group_col=None) -> FairnessReport:
    """Per-group AUROC (bootstrap CI) and threshold rates on ``test_view``."""
    x = test_view.features
    y = test_view.outcome(outcome).astype(np.int64)
    g = test_view.group(group_col)
    s = _scores(model, x)
    names = sorted(set(g)) if groups is None else [str(v) for v in groups]
    if len(names) < 2:
        raise DataError("a fairness report needs at least two groups")
    reference_group = names[0] if reference_group is None else str(reference_group)
    protected_group = names[1] if protected_group is None else str(protected_group)
    for name in (reference_group, protected_group):
        if name not in names:
            raise DataError(f"group {name!r} not present in the test set")
    rng = np.random.default_rng(seed)
    out = {}
    for name in names:
        m = g == name
        ys, ss = y[m], s[m]
        flags = []
        if ys.size and ys.min() != ys.max():
            auc = auroc(ss, ys)
            ci = _auroc_ci(ss, ys, bootstraps, rng)
        else:
            auc, ci = None, None
            flags.append("AUROC undefined: single class in group")
        rates = confusion_metrics(ss, ys, threshold) if ys.size else {k: None for k in METRICS}
        flags.extend(rates.pop("flags", []))
        out[name] = GroupMetrics(int(m.sum()), auc, ci, rates, flags)
    return FairnessReport(out, reference_group, protected_group, threshold,
                          frozenset(test_view.patient_ids.tolist()))


@dataclass
class BiasReduction:
    bias_pre: float | None
    bias_post: float | None
    absolute: float | None
    percent: float | None
    flags: list = field(default_factory=list)

    def to_dict(self):
        return {"bias_pre": self.bias_pre, "bias_post": self.bias_post,
                "bias_reduction_abs": self.absolute, "bias_reduction_pct": self.percent,
                "flags": self.flags}


def reduction_from_biases(bias_pre, bias_post):
    flags = []
    if bias_pre is None or bias_post is None:
        return BiasReduction(bias_pre, bias_post, None, None, ["bias undefined"])
    absolute = bias_pre - bias_post
    if bias_pre == 0:
        flags.append("bias_pre is zero; percent reduction undefined")
        percent = None
    else:
        percent = 100.0 * absolute / bias_pre
    return BiasReduction(bias_pre, bias_post, absolute, percent, flags)


def bias_reduction(report_pre: FairnessReport, report_post: FairnessReport, metric="auroc") -> BiasReduction:
    if set(report_pre.groups) != set(report_post.groups):
        raise DataError("reports cover different groups")
    if (report_pre.reference_group, report_pre.protected_group) != (report_post.reference_group,
                                                                     report_post.protected_group):
        raise DataError("reports disagree on reference/protected groups")
    return reduction_from_biases(report_pre.gap(metric), report_post.gap(metric))


def _fmt(v):
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v) if math.isfinite(v) else str(v)
    return str(v)


def write_fairness_tsv(reports: dict, path, reductions: dict | None = None):
    """One row per (arm, group, metric); reductions add rows with group ``gap``."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, delimiter="\t", lineterminator="\n")
        w.writerow(["arm", "group", "metric", "value", "ci_lo", "ci_hi"])
        for arm, rep in reports.items():
            for gname, m in rep.groups.items():
                for metric in METRICS:
                    lo = hi = None
                    if metric == "auroc" and m.auroc_ci:
                        lo, hi = m.auroc_ci
                    w.writerow([arm, gname, metric, _fmt(m.value(metric)), _fmt(lo), _fmt(hi)])
            for metric, v in rep.gaps.items():
                w.writerow([arm, "gap", metric, _fmt(v), "", ""])
        for arm, red in (reductions or {}).items():
            for k, v in red.to_dict().items():
                if k != "flags":
                    w.writerow([arm, "reduction", k, _fmt(v), "", ""])
    return path


def write_fairness_json(reports: dict, path, reductions: dict | None = None, extra=None):
    payload = {"arms": {k: r.to_dict() for k, r in reports.items()},
               "reductions": {k: r.to_dict() for k, r in (reductions or {}).items()}}
    if extra:
        payload.update(extra)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return path
