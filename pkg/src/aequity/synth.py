"""Gaussian-mixture datasets with a planted sampling, complexity or label bias."""
from __future__ import annotations

from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .dataset import FeatureDataset, RunConfig, dump_config, write_table
from .errors import ConfigError

KINDS = ("sampling", "complexity", "label")
MAJORITY, MINORITY = "A", "B"


@dataclass(frozen=True)
class SynthSpec:
    bias_kind: str
    n_per_group: int = 1000
    n_features: int = 20
    skew_ratio: float = 9.0
    extra_components: int = 4
    flip_rate: float = 0.3
    flip_rates: tuple = ()
    class_sep: float = 4.0
    component_spacing: float = 256.0
    axis_angle: float = 60.0
    label_components: int | None = None
    seed: int = 0

    def __post_init__(self):
        if self.bias_kind not in KINDS:
            raise ConfigError(f"bias_kind must be one of {KINDS}, got {self.bias_kind!r}")
        if self.n_per_group < 4:
            raise ConfigError("n_per_group must be at least 4")
        if self.n_features < 2:
            raise ConfigError("n_features must be at least 2")
        if not self.skew_ratio >= 1:
            raise ConfigError("skew_ratio must be >= 1")
        if self.extra_components < 1:
            raise ConfigError("extra_components must be >= 1")
        if self.extra_components + 1 > self.n_features:
            raise ConfigError("extra_components must be below n_features")
        if self.label_components is None:
            object.__setattr__(self, "label_components", self.n_features - 1)
        if not 1 <= self.label_components < self.n_features:
            raise ConfigError("label_components must lie in [1, n_features)")
        if not 0 <= self.axis_angle < 180:
            raise ConfigError("axis_angle must lie in [0, 180) degrees")
        for r in (self.flip_rate, *self.flip_rates):
            if not 0 <= r < 1:
                raise ConfigError(f"flip rates must lie in [0, 1), got {r}")
        if self.class_sep < 4 or self.component_spacing < 4:
            raise ConfigError("class_sep and component_spacing must be at least 4 (standard deviations)")

    @property
    def neutral(self):
        return {
            "sampling": self.skew_ratio == 1,
            "complexity": self.extra_components == 1,
            "label": self.flip_rate == 0 and all(r == 0 for r in self.flip_rates),
        }[self.bias_kind]


def _basis(rng, d, k):
    """``k`` orthonormal directions in R^d."""
    return np.linalg.qr(rng.normal(size=(d, k)))[0][:, :k].T


def _simplex(dirs, spacing):
    """Points with pairwise distance ``spacing``, centred on zero, one per direction."""
    pts = dirs * (spacing / np.sqrt(2))
    return pts - pts.mean(axis=0)


def _draw(rng, means, which):
    return rng.normal(size=(which.size, means.shape[1])) + means[which]


def _labels(rng, n):
    y = np.zeros(n, dtype=np.int64)
    y[rng.permutation(n)[: n // 2]] = 1
    return y


def _assemble(parts, outcomes, spec):
    """``parts`` is a list of (group, features) blocks."""
    feats = np.vstack([p[1] for p in parts])
    groups = np.concatenate([[p[0]] * len(p[1]) for p in parts])
    ids = [f"P{i:06d}" for i in range(len(feats))]
    return FeatureDataset.build(
        ids, feats, {"group": groups}, outcomes,
        feature_names=[f"x{i}" for i in range(spec.n_features)],
    )


def gen_sampling_bias(spec: SynthSpec) -> FeatureDataset:
    """Two groups with the same two-Gaussian class structure in size ratio
    ``skew_ratio``. Each group's class axis is tilted by half of ``axis_angle``
    degrees to either side of a shared axis, so a boundary fit to the majority
    transfers imperfectly to the minority."""
    rng = np.random.default_rng([spec.seed, 1])
    u, v = _basis(rng, spec.n_features, 2)
    half = np.deg2rad(spec.axis_angle) / 2
    n_major = int(round(spec.n_per_group * spec.skew_ratio / (spec.skew_ratio + 1)))
    n_minor = spec.n_per_group - n_major
    parts, ys = [], []
    for name, n, sign in ((MAJORITY, n_major, -1), (MINORITY, n_minor, 1)):
        axis = np.cos(half) * u + sign * np.sin(half) * v
        means = np.stack([-axis, axis]) * (spec.class_sep / 2)
        y = _labels(rng, n)
        parts.append((name, _draw(rng, means, y)))
        ys.append(y)
    return _assemble(parts, {"outcome": np.concatenate(ys)}, spec)


def gen_complexity_bias(spec: SynthSpec) -> FeatureDataset:
    """Majority: one Gaussian per class. Minority: ``extra_components`` clusters
    ``component_spacing`` apart, each holding both classes, with the class
    orientation alternating from cluster to cluster."""
    rng = np.random.default_rng([spec.seed, 2])
    k = spec.extra_components
    dirs = _basis(rng, spec.n_features, k + 1)
    u = dirs[0]
    offsets = _simplex(dirs[1:], spec.component_spacing) if k > 1 else np.zeros((1, spec.n_features))
    signs = np.where(np.arange(k) % 2 == 0, 1.0, -1.0)
    half = spec.class_sep / 2
    parts, ys = [], []
    n = spec.n_per_group
    y = _labels(rng, n)
    parts.append((MAJORITY, _draw(rng, np.stack([-u, u]) * half, y)))
    ys.append(y)
    y = _labels(rng, n)
    comp = rng.integers(0, k, size=n)
    means = np.concatenate([offsets - half * signs[:, None] * u, offsets + half * signs[:, None] * u])
    parts.append((MINORITY, _draw(rng, means, comp + k * y)))
    ys.append(y)
    return _assemble(parts, {"outcome": np.concatenate(ys)}, spec)


def _flip(rng, y, rate):
    flips = rng.random(y.size) < rate
    return np.where(flips, 1 - y, y), int(flips.sum())


def gen_label_bias(spec: SynthSpec):
    """Both groups share one feature distribution: the positive class is one
    Gaussian and the negative class a mixture of ``label_components`` clusters,
    all ``component_spacing`` apart. Minority labels are flipped at
    ``flip_rate`` (or each of ``flip_rates``).

    Returns ``(dataset, truth)``; the dataset carries the clean labels as
    ``outcome_clean`` next to every noisy outcome."""
    rng = np.random.default_rng([spec.seed, 3])
    m = spec.label_components
    means = _simplex(_basis(rng, spec.n_features, m + 1), spec.component_spacing)
    parts, clean = [], []
    for name in (MAJORITY, MINORITY):
        n = spec.n_per_group
        y = _labels(rng, n)
        comp = np.where(y == 1, m, rng.integers(0, m, size=n))
        parts.append((name, _draw(rng, means, comp)))
        clean.append(y)
    is_minor = np.concatenate([np.zeros(spec.n_per_group, bool), np.ones(spec.n_per_group, bool)])
    y_clean = np.concatenate(clean)
    rates = spec.flip_rates or (spec.flip_rate,)
    outcomes, flips = {}, {}
    for r in rates:
        name = "outcome" if not spec.flip_rates else f"outcome_flip{int(round(100 * r)):02d}"
        noisy, k = _flip(rng, y_clean[is_minor], r)
        col = y_clean.copy()
        col[is_minor] = noisy
        outcomes[name] = col
        flips[name] = k
    outcomes["outcome_clean"] = y_clean
    ds = _assemble(parts, outcomes, spec)
    return ds, {"flips": flips, "rates": dict(zip(flips, rates))}


def generate(spec: SynthSpec):
    """Dataset plus a ground-truth summary for any bias kind."""
    if spec.bias_kind == "sampling":
        ds = gen_sampling_bias(spec)
        truth = {}
    elif spec.bias_kind == "complexity":
        ds = gen_complexity_bias(spec)
        truth = {"minority_components": spec.extra_components}
    else:
        ds, truth = gen_label_bias(spec)
    counts = {g: int((ds.groups["group"] == g).sum()) for g in (MAJORITY, MINORITY)}
    truth.update({"bias_kind": spec.bias_kind, "group_counts": counts, "neutral": spec.neutral,
                  "protected_group": MINORITY, "reference_group": MAJORITY})
    return ds, truth


def write_scenario(spec: SynthSpec, out_dir, **config_overrides):
    """Write ``data.tsv`` and a ready-to-run ``config.yaml``; returns (config path, truth)."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    ds, truth = generate(spec)
    data_path = write_table(ds, out / "data.tsv")
    base = dict(
        data_path=str(data_path.resolve()),
        demographics_col=["group"],
        outcome_cols=list(ds.outcomes),
        out_data=str((out / "out").resolve()),
        start_seed=spec.seed,
        input_dim=spec.n_features,
        max_sample_size=1024,
        root_dir=str((out / "results").resolve()),
        protected_group=MINORITY,
        reference_group=MAJORITY,
        patient_id_col="patient_id",
    )
    base.update(config_overrides)
    cfg = RunConfig(**base)
    cfg_path = out / "config.yaml"
    header = f"# synthetic {spec.bias_kind} scenario, seed {spec.seed}\n"
    cfg_path.write_text(header + dump_config(cfg), encoding="utf-8")
    truth["spec"] = {k: (list(v) if isinstance(v, tuple) else v) for k, v in asdict(spec).items()}
    return cfg_path, truth
