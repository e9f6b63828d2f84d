"""AEq estimation from learning curves plus the two-sample and multi-group tests."""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import stats as sps

from .errors import ConfigError, DataError


@dataclass(frozen=True)
class AeqEstimate:
    descriptor: dict
    per_bootstrap: np.ndarray
    mean: float
    ci95: tuple
    bootstraps: int
    flags: tuple = ()
    grid: tuple = ()

    def __post_init__(self):
        self.per_bootstrap.setflags(write=False)

    @property
    def label(self):
        return self.descriptor.get("label")

    def to_dict(self):
        return {
            "descriptor": _jsonable(self.descriptor),
            "aeq_mean": self.mean,
            "ci_lo": self.ci95[0],
            "ci_hi": self.ci95[1],
            "n_bootstraps": self.bootstraps,
            "per_bootstrap": [float(v) for v in self.per_bootstrap],
            "flags": list(self.flags),
            "grid": list(self.grid),
        }


@dataclass(frozen=True)
class DiffResult:
    difference: float
    ci95: tuple
    t: float
    df: float
    p: float
    flags: tuple = ()

    @property
    def significant(self):
        return self.p < 0.05

    def to_dict(self):
        return {"difference": self.difference, "ci_lo": self.ci95[0], "ci_hi": self.ci95[1],
                "t": self.t, "df": self.df, "p": self.p, "flags": list(self.flags)}


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.generic):
        return obj.item()
    return obj


def percentile_ci(samples, level=0.95):
    x = np.asarray(samples, dtype=np.float64)
    if x.size < 2:
        raise DataError("percentile_ci needs at least two samples")
    if not 0 < level < 1:
        raise ConfigError(f"level must lie in (0, 1), got {level}")
    tail = 100 * (1 - level) / 2
    lo, hi = np.percentile(x, [tail, 100 - tail], method="linear")
    return float(lo), float(hi)


def second_differences(losses):
    L = np.asarray(losses, dtype=np.float64)
    return L[..., :-2] - 2 * L[..., 1:-1] + L[..., 2:]


def smooth3(losses):
    """3-point moving average; endpoints average over the available neighbours."""
    L = np.asarray(losses, dtype=np.float64)
    out = np.empty_like(L)
    out[..., 1:-1] = (L[..., :-2] + L[..., 1:-1] + L[..., 2:]) / 3
    out[..., 0] = (L[..., 0] + L[..., 1]) / 2
    out[..., -1] = (L[..., -2] + L[..., -1]) / 2
    return out


def aeq_per_bootstrap(losses, sizes, smooth=False):
    """AEq for each row of ``losses`` (bootstraps x grid) and a mask of flat rows."""
    L = np.atleast_2d(np.asarray(losses, dtype=np.float64))
    sizes = np.asarray(sizes)
    if L.shape[1] != sizes.size or sizes.size < 4:
        raise DataError("losses must have one column per grid size and at least 4 sizes")
    if smooth:
        L = smooth3(L)
    D = second_differences(L)
    # rows that are constant up to rounding have no curvature at all
    scale = np.maximum(np.abs(L).max(axis=1), 1e-300)
    flat = np.ptp(L, axis=1) <= 1e-12 * scale
    idx = np.argmin(D, axis=1)  # first minimum: ties go to the smallest n
    idx[flat] = 0
    return np.log2(sizes[1:-1][idx]).astype(np.float64), flat


def aeq_from_curve(curve, smooth=False) -> AeqEstimate:
    values, flat = aeq_per_bootstrap(curve.losses, curve.grid.sizes, smooth=smooth)
    flags = list(curve.flags)
    if flat.any():
        flags.append(f"flat curve in {int(flat.sum())} of {flat.size} bootstraps")
    if values.size >= 2:
        ci = percentile_ci(values)
    else:
        ci = (float(values[0]), float(values[0]))
    return AeqEstimate(dict(curve.descriptor), values, float(values.mean()), ci, int(values.size),
                       tuple(flags), tuple(curve.grid.sizes))


def welch_t_test(xs, ys):
    """Two-sided Welch test; returns (t, df, p, flags)."""
    x = np.asarray(xs, dtype=np.float64)
    y = np.asarray(ys, dtype=np.float64)
    if x.size < 2 or y.size < 2:
        raise DataError("welch_t_test needs at least two values per sample")
    vx, vy = x.var(ddof=1) / x.size, y.var(ddof=1) / y.size
    diff = x.mean() - y.mean()
    se2 = vx + vy
    if se2 == 0:
        if diff == 0:
            return 0.0, float(x.size + y.size - 2), 1.0, ("zero variance",)
        return float(np.copysign(np.inf, diff)), float(x.size + y.size - 2), 0.0, ("degenerate variance",)
    t = diff / np.sqrt(se2)
    df = se2**2 / (vx**2 / (x.size - 1) + vy**2 / (y.size - 1))
    p = float(min(1.0, 2 * sps.t.sf(abs(t), df)))
    return float(t), float(df), p, ()


def one_way_anova(samples):
    """Classic one-way ANOVA; returns (F, p, flags)."""
    groups = [np.asarray(s, dtype=np.float64) for s in samples]
    if len(groups) < 2:
        raise DataError("one_way_anova needs at least two groups")
    if any(g.size < 2 for g in groups):
        raise DataError("every ANOVA group needs at least two values")
    allv = np.concatenate(groups)
    grand = allv.mean()
    k, n = len(groups), allv.size
    ss_between = sum(g.size * (g.mean() - grand) ** 2 for g in groups)
    ss_within = sum(((g - g.mean()) ** 2).sum() for g in groups)
    df_b, df_w = k - 1, n - k
    if ss_within == 0:
        if ss_between == 0:
            return 0.0, 1.0, ("zero variance",)
        return float("inf"), 0.0, ("degenerate variance",)
    F = (ss_between / df_b) / (ss_within / df_w)
    return float(F), float(sps.f.sf(F, df_b, df_w)), ()


def aeq_difference(a: AeqEstimate, b: AeqEstimate, seed=0, resamples=2000) -> DiffResult:
    xa, xb = a.per_bootstrap, b.per_bootstrap
    if xa.size < 2 or xb.size < 2:
        raise DataError("aeq_difference needs at least two bootstrap values per estimate")
    t, df, p, flags = welch_t_test(xa, xb)
    rng = np.random.default_rng(seed)
    da = xa[rng.integers(0, xa.size, size=(resamples, xa.size))].mean(axis=1)
    db = xb[rng.integers(0, xb.size, size=(resamples, xb.size))].mean(axis=1)
    ci = percentile_ci(da - db)
    return DiffResult(float(xa.mean() - xb.mean()), ci, t, df, p, flags)


def compute_aeq(ds, group_selector, label_selector, cfg, train_cfg=None, threads=1):
    """AEq for the rows of ``ds`` in ``group_selector`` with outcome ``label_selector``.

    ``group_selector`` is a group value, or a tuple of values for the joint
    estimate; ``label_selector`` is ``(outcome_name, value)`` or None."""
    from . import curves

    if isinstance(group_selector, (tuple, list)):
        views = [ds.select(group=g, label=label_selector) for g in group_selector]
        joint = True
    else:
        views = [ds.select(group=group_selector, label=label_selector)]
        joint = False
    for v in views:
        if len(v) == 0:
            raise DataError(f"no rows for group={v.descriptor.get('group')} label={label_selector}")
        if len(v) < cfg.min_sample_size:
            raise DataError(
                f"group={v.descriptor.get('group')} label={label_selector} has {len(v)} rows, fewer than"
                f" the smallest grid size {cfg.min_sample_size}; lower min_sample_size (larger grid"
                " sizes are drawn with replacement)")
    grid = curves.make_grid(cfg.min_sample_size, cfg.max_sample_size)
    curve = curves.learning_curve(
        views if joint else views[0],
        grid,
        train_cfg or curves.curve_train_config(cfg),
        cfg.bootstraps,
        cfg.start_seed,
        threads=threads,
        latent=cfg.latent_dim,
        hidden=cfg.hidden_dim,
        probe=cfg.eval_probe,
        joint_sizing=cfg.joint_sizing,
    )
    return aeq_from_curve(curve, smooth=cfg.smooth_curves)


AEQ_COLUMNS = ("label", "group", "aeq_mean", "ci_lo", "ci_hi", "n_bootstraps", "flags")


def write_aeq_table(rows, path):
    """``rows`` are (label, group, AeqEstimate) triples."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, delimiter="\t", lineterminator="\n")
        w.writerow(AEQ_COLUMNS)
        for label, group, est in rows:
            w.writerow([label, group, f"{est.mean:.6f}", f"{est.ci95[0]:.6f}", f"{est.ci95[1]:.6f}",
                        est.bootstraps, ";".join(est.flags)])
    return path
