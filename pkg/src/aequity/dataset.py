"""Run configuration, TSV ingestion and the row-sampling primitives used by the audit."""
from __future__ import annotations

import logging
import os
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

import numpy as np
import pandas as pd
import yaml

from .errors import ConfigError, DataError

log = logging.getLogger(__name__)

REQUIRED_KEYS = (
    "data_path",
    "demographics_col",
    "outcome_cols",
    "out_data",
    "start_seed",
    "input_dim",
    "max_sample_size",
    "root_dir",
)


@dataclass
class RunConfig:
    data_path: str
    demographics_col: list[str]
    outcome_cols: list[str]
    out_data: str
    start_seed: int
    input_dim: int
    max_sample_size: int
    root_dir: str
    exclude_cols: list[str] = field(default_factory=list)
    bootstraps: int = 50
    protected_group: str | None = None
    reference_group: str | None = None
    min_sample_size: int = 16
    alpha: float = 0.05
    threshold: float = 0.5
    patient_id_col: str | None = None
    impute_missing: bool = False
    audit_size: int = 1024
    threads: int = 1
    budget: int | None = None
    # autoencoder used for learning curves
    latent_dim: int = 2
    hidden_dim: int = 64
    ae_learning_rate: float = 1e-3
    ae_batch_size: int = 16
    ae_max_epochs: int = 1
    eval_probe: bool = False
    smooth_curves: bool = False
    joint_sizing: str = "per_group"
    # downstream classifier
    clf_learning_rate: float = 1e-3
    clf_batch_size: int = 32
    clf_max_epochs: int = 30
    report_bootstraps: int = 50

    def __post_init__(self):
        self.validate()

    def validate(self):
        if self.bootstraps < 2:
            raise ConfigError(f"bootstraps must be >= 2, got {self.bootstraps}")
        for name in ("input_dim", "max_sample_size", "min_sample_size", "audit_size", "threads",
                     "latent_dim", "hidden_dim", "ae_batch_size", "ae_max_epochs",
                     "clf_batch_size", "clf_max_epochs", "report_bootstraps"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be a positive integer, got {getattr(self, name)}")
        if self.max_sample_size < 2 * self.min_sample_size:
            raise ConfigError("max_sample_size must be at least 2 * min_sample_size")
        if not 0 < self.alpha < 1:
            raise ConfigError(f"alpha must lie in (0, 1), got {self.alpha}")
        if not 0 < self.threshold < 1:
            raise ConfigError(f"threshold must lie in (0, 1), got {self.threshold}")
        if not self.outcome_cols:
            raise ConfigError("outcome_cols must name at least one column")
        if self.joint_sizing not in ("per_group", "total"):
            raise ConfigError(f"joint_sizing must be per_group or total, got {self.joint_sizing!r}")
        if self.budget is not None and self.budget < 1:
            raise ConfigError("budget must be positive")

    @property
    def group_col(self):
        return self.demographics_col[0]

    def to_dict(self):
        return {f.name: getattr(self, f.name) for f in fields(self)}

    def with_overrides(self, **overrides):
        unknown = set(overrides) - {f.name for f in fields(self)}
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        return replace(self, **{k: _coerce(k, v, None) for k, v in overrides.items()})


_FIELD_TYPES = {f.name: f.type for f in fields(RunConfig)}
_LIST_KEYS = {"demographics_col", "outcome_cols", "exclude_cols"}


def _coerce(key, value, lineno):
    where = f"line {lineno}: " if lineno else ""
    typ = _FIELD_TYPES[key]
    if isinstance(value, str) and value.strip() in ("None", "none", "null", "~", ""):
        value = None
    if key in _LIST_KEYS:
        if value is None:
            return []
        if isinstance(value, str):
            return [v.strip() for v in value.split(",") if v.strip()]
        if isinstance(value, (list, tuple)):
            return [str(v) for v in value]
        return [str(value)]
    if value is None:
        if "None" in typ:
            return None
        raise ConfigError(f"{where}{key} may not be empty")
    try:
        if typ.startswith("int"):
            if isinstance(value, bool) or (isinstance(value, float) and not value.is_integer()):
                raise ValueError
            return int(value)
        if typ.startswith("float"):
            return float(value)
        if typ.startswith("bool"):
            if isinstance(value, bool):
                return value
            text = str(value).lower()
            if text in ("true", "yes", "1"):
                return True
            if text in ("false", "no", "0"):
                return False
            raise ValueError
    except (TypeError, ValueError):
        raise ConfigError(f"{where}cannot parse {key}={value!r} as {typ}") from None
    return str(value)


def parse_config_text(text, source="<config>") -> RunConfig:
    values = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, rest = line.partition(":")
        key = key.strip()
        if not sep or not key or " " in key:
            raise ConfigError(f"{source} line {lineno}: expected 'key: value', got {raw.strip()!r}")
        try:
            parsed = yaml.safe_load(rest) if rest.strip() else None
        except yaml.YAMLError:
            raise ConfigError(f"{source} line {lineno}: unparsable value for {key}") from None
        if isinstance(parsed, dict):
            raise ConfigError(f"{source} line {lineno}: nested values are not supported ({key})")
        if key not in _FIELD_TYPES:
            log.warning("%s line %d: unknown config key %r ignored", source, lineno, key)
            continue
        values[key] = _coerce(key, parsed, lineno)

    missing = [k for k in REQUIRED_KEYS if k not in values]
    if missing:
        raise ConfigError(f"{source}: missing required keys: {', '.join(missing)}")
    return RunConfig(**values)


def parse_config(path) -> RunConfig:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    cfg = parse_config_text(path.read_text(encoding="utf-8"), source=str(path))
    root = os.environ.get("AEQUITY_ROOT_DIR")
    if root:
        cfg.root_dir = root
    return cfg


def dump_config(cfg: RunConfig) -> str:
    lines = []
    for key, value in cfg.to_dict().items():
        if isinstance(value, list):
            value = ", ".join(value) if value else "None"
        elif value is None:
            value = "None"
        lines.append(f"{key}: {value}")
    return "\n".join(lines) + "\n"


def _readonly(a):
    a = np.asarray(a)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class FeatureDataset:
    patient_ids: np.ndarray
    features: np.ndarray
    feature_names: tuple
    groups: dict
    outcomes: dict
    feature_mean: np.ndarray | None = None
    feature_std: np.ndarray | None = None
    constant_features: tuple = ()

    def __post_init__(self):
        n = len(self.patient_ids)
        if self.features.ndim != 2 or self.features.shape[0] != n:
            raise DataError("features row count does not match patient_ids")
        if self.features.shape[1] != len(self.feature_names):
            raise DataError("feature_names length does not match feature columns")
        for name, col in {**self.groups, **self.outcomes}.items():
            if len(col) != n:
                raise DataError(f"column {name!r} has {len(col)} rows, expected {n}")
        if not np.isfinite(self.features).all():
            raise DataError("features contain non-finite values")
        for a in (self.patient_ids, self.features, *self.groups.values(), *self.outcomes.values()):
            a.setflags(write=False)

    @classmethod
    def build(cls, patient_ids, features, groups, outcomes, feature_names=None, **kw):
        features = np.array(features, dtype=np.float64)
        if feature_names is None:
            feature_names = [f"x{i}" for i in range(features.shape[1])]
        return cls(
            patient_ids=np.array([str(p) for p in patient_ids], dtype=object),
            features=features,
            feature_names=tuple(feature_names),
            groups={k: np.array([str(v) for v in vals], dtype=object) for k, vals in groups.items()},
            outcomes={k: np.array(vals, dtype=np.float64) for k, vals in outcomes.items()},
            **kw,
        )

    def __len__(self):
        return len(self.patient_ids)

    @property
    def n_features(self):
        return self.features.shape[1]

    @property
    def group_col(self):
        return next(iter(self.groups))

    def group_values(self, col=None):
        return sorted(set(self.groups[col or self.group_col]))

    def view(self, indices=None, **descriptor):
        if indices is None:
            indices = np.arange(len(self))
        return DatasetView(self, np.asarray(indices, dtype=np.int64), descriptor)

    def select(self, group=None, label=None, group_col=None):
        """View of rows matching ``group`` (value of ``group_col``) and
        ``label=(outcome, value)``."""
        mask = np.ones(len(self), dtype=bool)
        desc = {}
        if group is not None:
            col = group_col or self.group_col
            mask &= self.groups[col] == str(group)
            desc["group"] = str(group)
        if label is not None:
            name, value = label
            mask &= self.outcomes[name] == value
            desc["label"] = (name, value)
        return self.view(np.flatnonzero(mask), **desc)

    def with_outcomes(self, **outcomes):
        merged = dict(self.outcomes)
        merged.update({k: np.array(v, dtype=np.float64) for k, v in outcomes.items()})
        return replace(self, outcomes=merged)

    def take(self, indices):
        idx = np.asarray(indices, dtype=np.int64)
        return replace(
            self,
            patient_ids=self.patient_ids[idx].copy(),
            features=self.features[idx].copy(),
            groups={k: v[idx].copy() for k, v in self.groups.items()},
            outcomes={k: v[idx].copy() for k, v in self.outcomes.items()},
        )


@dataclass
class DatasetView:
    dataset: FeatureDataset
    indices: np.ndarray
    descriptor: dict = field(default_factory=dict)
    with_replacement: bool = False
    flags: list = field(default_factory=list)

    def __post_init__(self):
        idx = self.indices
        if idx.size and (idx.min() < 0 or idx.max() >= len(self.dataset)):
            raise DataError("view indices out of range")
        if not self.with_replacement and np.unique(idx).size != idx.size:
            raise DataError("view indices must be unique unless sampled with replacement")

    def __len__(self):
        return int(self.indices.size)

    @property
    def features(self):
        return self.dataset.features[self.indices]

    def outcome(self, name):
        return self.dataset.outcomes[name][self.indices]

    def group(self, col=None):
        return self.dataset.groups[col or self.dataset.group_col][self.indices]

    @property
    def patient_ids(self):
        return self.dataset.patient_ids[self.indices]

    def restrict(self, mask, **descriptor):
        """Sub-view of the rows where ``mask`` (aligned with this view) is true."""
        return DatasetView(self.dataset, self.indices[np.asarray(mask, dtype=bool)],
                           {**self.descriptor, **descriptor}, self.with_replacement, list(self.flags))

    def select(self, group=None, label=None, group_col=None):
        mask = np.ones(len(self), dtype=bool)
        desc = {}
        if group is not None:
            mask &= self.group(group_col) == str(group)
            desc["group"] = str(group)
        if label is not None:
            name, value = label
            mask &= self.outcome(name) == value
            desc["label"] = (name, value)
        return self.restrict(mask, **desc)

    def materialize(self):
        return self.dataset.take(self.indices)


def load_table(cfg: RunConfig, impute=None) -> FeatureDataset:
    """Read the tab-separated file named by ``cfg.data_path``.

    Feature columns are every column that is not a demographic, outcome,
    excluded or patient-id column."""
    impute = cfg.impute_missing if impute is None else impute
    path = Path(cfg.data_path)
    if not path.exists():
        raise DataError(f"data file not found: {path}")
    table = pd.read_csv(path, sep="\t", dtype=str, keep_default_na=False, encoding="utf-8")
    columns = list(table.columns)
    needed = list(cfg.demographics_col) + list(cfg.outcome_cols)
    if cfg.patient_id_col:
        needed.append(cfg.patient_id_col)
    absent = [c for c in needed if c not in columns]
    if absent:
        raise DataError(f"columns missing from {path}: {absent}")
    skip = set(needed) | set(cfg.exclude_cols)
    feature_cols = [c for c in columns if c not in skip]
    if len(feature_cols) != cfg.input_dim:
        raise DataError(f"found {len(feature_cols)} feature columns but input_dim is {cfg.input_dim}")

    def numeric(cols):
        raw = table[cols]
        missing = raw.apply(lambda s: s.str.strip() == "")
        values = raw.apply(pd.to_numeric, errors="coerce")
        bad = values.isna() & ~missing
        if bad.to_numpy().any():
            r, c = np.argwhere(bad.to_numpy())[0]
            raise DataError(f"non-numeric value {raw.iat[r, c]!r} at row {r + 1}, column {cols[c]!r}")
        # to_numeric is not correctly rounded; astype(float) is
        exact = raw.mask(missing, "nan").astype(np.float64)
        return exact.to_numpy(dtype=np.float64), missing.to_numpy()

    feats, feat_missing = numeric(feature_cols)
    outs, out_missing = numeric(list(cfg.outcome_cols))
    demo_missing = np.column_stack([table[c].str.strip() == "" for c in cfg.demographics_col])
    if out_missing.any() or demo_missing.any() or (feat_missing.any() and not impute):
        rows = np.flatnonzero(out_missing.any(1) | demo_missing.any(1) | (feat_missing.any(1) & (not impute)))
        raise DataError(f"missing values in row {rows[0] + 1} (and {rows.size - 1} more rows)")
    if feat_missing.any():
        col_means = np.nanmean(feats, axis=0)
        r, c = np.nonzero(np.isnan(feats))
        feats[r, c] = col_means[c]
        log.info("mean-imputed %d missing feature cells", r.size)

    if cfg.patient_id_col:
        pids = table[cfg.patient_id_col].tolist()
    else:
        pids = [str(i) for i in range(len(table))]
    return FeatureDataset.build(
        pids,
        feats,
        {c: table[c].tolist() for c in cfg.demographics_col},
        {c: outs[:, i] for i, c in enumerate(cfg.outcome_cols)},
        feature_names=feature_cols,
    )


def write_table(ds: FeatureDataset, path, patient_id_col="patient_id"):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    cols = {patient_id_col: ds.patient_ids}
    cols.update(ds.groups)
    cols.update({name: ds.features[:, i] for i, name in enumerate(ds.feature_names)})
    cols.update(ds.outcomes)
    pd.DataFrame(cols).to_csv(path, sep="\t", index=False, float_format="%.17g", encoding="utf-8")
    return path


def standardize(ds: FeatureDataset) -> FeatureDataset:
    """Z-score every feature with the dataset's own mean and population stddev;
    constant features become zeros and are recorded."""
    x = ds.features
    mean = x.mean(axis=0)
    std = x.std(axis=0)
    constant = std <= 1e-12 * np.maximum(1.0, np.abs(mean))
    safe = np.where(constant, 1.0, std)
    z = (x - mean) / safe
    z[:, constant] = 0.0
    return replace(
        ds,
        features=z,
        feature_mean=_readonly(mean),
        feature_std=_readonly(np.where(constant, 0.0, std)),
        constant_features=tuple(np.array(ds.feature_names)[constant]),
    )


def _as_view(data):
    return data if isinstance(data, DatasetView) else data.view()


def split_by_patient(data, fractions=(0.6, 0.2, 0.2), seed=0):
    """Partition rows into train/validation/test so that every patient lands in
    exactly one partition."""
    view = _as_view(data)
    if len(fractions) != 3 or abs(sum(fractions) - 1.0) > 1e-9 or min(fractions) < 0:
        raise ConfigError(f"fractions must be three non-negative numbers summing to 1, got {fractions}")
    pids = view.patient_ids
    unique = np.array(sorted(set(pids)), dtype=object)
    if unique.size < 3:
        raise DataError(f"need at least 3 distinct patients to split, got {unique.size}")
    rng = np.random.default_rng(seed)
    shuffled = unique[rng.permutation(unique.size)]
    n_train = int(round(fractions[0] * unique.size))
    n_val = int(round(fractions[1] * unique.size))
    n_train = min(n_train, unique.size - 2)
    n_val = max(1, min(n_val, unique.size - n_train - 1))
    parts = (shuffled[:n_train], shuffled[n_train:n_train + n_val], shuffled[n_train + n_val:])
    out = []
    for name, members in zip(("train", "val", "test"), parts):
        mask = np.isin(pids, members)
        out.append(view.restrict(mask, partition=name))
    return tuple(out)


def subsample(data, n, seed, with_replacement=False):
    view = _as_view(data)
    if n < 1:
        raise ConfigError(f"sample size must be >= 1, got {n}")
    if not with_replacement and n > len(view):
        raise DataError(f"cannot draw {n} rows without replacement from {len(view)}")
    if len(view) == 0:
        raise DataError("cannot sample from an empty view")
    rng = np.random.default_rng(seed)
    if with_replacement:
        pick = rng.integers(0, len(view), size=n)
    else:
        pick = rng.permutation(len(view))[:n]
    return DatasetView(view.dataset, view.indices[pick], dict(view.descriptor),
                       with_replacement or view.with_replacement, list(view.flags))


def balanced_merge(views, n_total, seed):
    """Equal-count merge of ``views``. Groups smaller than their quota are drawn
    with replacement and listed in ``flags``."""
    views = [_as_view(v) for v in views]
    if len(views) < 2:
        raise ConfigError("balanced_merge needs at least two views")
    if any(len(v) == 0 for v in views):
        raise DataError("balanced_merge received an empty view")
    if any(v.dataset is not views[0].dataset for v in views):
        raise DataError("views must come from the same dataset")
    quota = n_total // len(views)
    if quota < 1:
        raise ConfigError(f"n_total={n_total} too small for {len(views)} groups")
    flags = []
    if quota * len(views) != n_total:
        flags.append(f"rounded down to {quota} rows per group")
    parts, replaced = [], False
    seeds = np.random.SeedSequence(seed).spawn(len(views))
    for v, s in zip(views, seeds):
        short = quota > len(v)
        if short:
            label = v.descriptor.get("group", "?")
            flags.append(f"group {label} sampled with replacement ({len(v)} < {quota})")
            replaced = True
        parts.append(subsample(v, quota, s, with_replacement=short).indices)
    desc = {"groups": tuple(v.descriptor.get("group") for v in views), "joint": True}
    label = views[0].descriptor.get("label")
    if label is not None:
        desc["label"] = label
    return DatasetView(views[0].dataset, np.concatenate(parts), desc,
                       replaced or any(v.with_replacement for v in views), flags)


def risk_stratify(values, percentile=50.0, enroll_percentile=None):
    """Label rows at or above the ``percentile`` quantile (linear interpolation) as 1.

    With ``enroll_percentile`` also returns a boolean auto-enrollment flag."""
    values = np.asarray(values, dtype=np.float64)
    if values.size == 0:
        raise DataError("risk_stratify needs at least one value")
    if not np.isfinite(values).all():
        raise DataError("risk_stratify received non-finite values")
    if not 0 < percentile < 100:
        raise ConfigError(f"percentile must lie in (0, 100), got {percentile}")
    threshold = np.percentile(values, percentile, method="linear")
    labels = (values >= threshold).astype(np.int64)
    if enroll_percentile is None:
        return labels
    enroll = values >= np.percentile(values, enroll_percentile, method="linear")
    return labels, enroll
