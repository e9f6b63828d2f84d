"""Bootstrapped autoencoder learning curves over a power-of-two sample-size grid."""
from __future__ import annotations

import csv
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import nn
from .errors import ConfigError, DataError, NumericError

log = logging.getLogger(__name__)

MASK64 = (1 << 64) - 1
JOINT_SIZINGS = ("per_group", "total")


def splitmix64(x):
    x = (x + 0x9E3779B97F4A7C15) & MASK64
    x = ((x ^ (x >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    x = ((x ^ (x >> 27)) * 0x94D049BB133111EB) & MASK64
    return x ^ (x >> 31)


def mix_seed(*parts):
    """Avalanche-mix integers into one 64-bit seed."""
    h = 0x243F6A8885A308D3
    for p in parts:
        h = splitmix64(h ^ (int(p) & MASK64))
    return h


@dataclass(frozen=True)
class SampleGrid:
    sizes: tuple

    def __post_init__(self):
        s = self.sizes
        if len(s) < 4:
            raise ConfigError(f"a sample grid needs at least 4 sizes, got {len(s)}")
        for a, b in zip(s, s[1:]):
            if b != 2 * a:
                raise ConfigError("grid sizes must double at each step")
        if s[0] < 2 or s[0] & (s[0] - 1):
            raise ConfigError("grid sizes must be powers of two")

    def __len__(self):
        return len(self.sizes)

    @property
    def log2(self):
        return np.log2(np.array(self.sizes, dtype=np.float64))


def make_grid(min_n, max_n) -> SampleGrid:
    min_n, max_n = int(min_n), int(max_n)
    if min_n < 2 or min_n & (min_n - 1):
        raise ConfigError(f"min sample size must be a power of two >= 2, got {min_n}")
    if max_n < 8 * min_n:
        raise ConfigError(f"max sample size {max_n} gives fewer than 4 grid sizes from {min_n}")
    sizes = []
    n = min_n
    while n <= max_n:
        sizes.append(n)
        n *= 2
    return SampleGrid(tuple(sizes))


@dataclass(frozen=True)
class LearningCurve:
    grid: SampleGrid
    losses: np.ndarray
    descriptor: dict
    seeds: tuple
    flags: tuple = ()

    def __post_init__(self):
        if self.losses.shape != (len(self.seeds), len(self.grid)):
            raise DataError("loss matrix does not match bootstraps x grid")
        if not (np.isfinite(self.losses).all() and (self.losses >= 0).all()):
            raise DataError("losses must be finite and non-negative")
        self.losses.setflags(write=False)

    @property
    def mean_curve(self):
        return self.losses.mean(axis=0)


def curve_train_config(cfg) -> nn.TrainConfig:
    """Autoencoder training settings for learning curves, read from a RunConfig."""
    return nn.TrainConfig(
        learning_rate=cfg.ae_learning_rate,
        batch_size=cfg.ae_batch_size,
        max_epochs=cfg.ae_max_epochs,
    )


def _split_probe(strata, probe_size, seed):
    """Hold out a fixed probe subset from every stratum; returns (pools, probe)."""
    pools, probes = [], []
    per = max(1, probe_size // len(strata))
    for i, x in enumerate(strata):
        k = min(per, len(x) // 4)
        if k < 1:
            raise DataError(f"stratum with {len(x)} rows is too small to hold out a probe set")
        order = np.random.default_rng(mix_seed(seed, 0x9B0BE, i)).permutation(len(x))
        probes.append(x[order[:k]])
        pools.append(x[order[k:]])
    return pools, np.vstack(probes)


def _cell(pools, probe, n, cell_seed, train_cfg, latent, hidden, per_view):
    rng = np.random.default_rng(cell_seed)
    k = n if per_view else n // len(pools)
    x = np.vstack([p[rng.integers(0, len(p), size=k)] for p in pools])
    params = nn.init_autoencoder(x.shape[1], seed=mix_seed(cell_seed, 1), hidden=(hidden,), latent=latent)
    res = nn.train(params, x, x, train_cfg, seed=mix_seed(cell_seed, 2))
    if probe is None:
        return res.final_loss
    return nn.mean_loss(res.params, probe, probe, "mse")


def _bootstrap_row(args):
    b, pools, probe, sizes, seed_b, train_cfg, latent, hidden, per_view = args
    row = np.empty(len(sizes))
    for j, n in enumerate(sizes):
        cell_seed = mix_seed(seed_b, n)
        try:
            row[j] = _cell(pools, probe, n, cell_seed, train_cfg, latent, hidden, per_view)
        except NumericError as first:
            log.warning("numeric failure at b=%d n=%d (%s); retrying with a perturbed seed", b, n, first)
            try:
                row[j] = _cell(pools, probe, n, mix_seed(cell_seed, 0xBAD), train_cfg, latent, hidden,
                                per_view)
            except NumericError as second:
                raise NumericError(f"training failed twice at bootstrap {b}, n={n}: {second}") from second
    return row


def learning_curve(view, grid: SampleGrid, train_cfg: nn.TrainConfig, bootstraps, start_seed,
                   threads=1, latent=2, hidden=64, probe=False, probe_size=256,
                   joint_sizing="per_group") -> LearningCurve:
    """Loss after training an autoencoder on n rows drawn with replacement, for every
    grid size n and bootstrap b.

    ``view`` may be a sequence of views (the joint, balanced variant). With
    ``joint_sizing="per_group"`` each cell draws n rows from every view; with
    ``"total"`` the n rows are split evenly across the views."""
    views = list(view) if isinstance(view, (list, tuple)) else [view]
    if not views or any(len(v) == 0 for v in views):
        raise DataError("learning_curve needs non-empty views")
    if bootstraps < 1:
        raise ConfigError("bootstraps must be positive")
    if joint_sizing not in JOINT_SIZINGS:
        raise ConfigError(f"joint_sizing must be one of {JOINT_SIZINGS}, got {joint_sizing!r}")
    per_view = joint_sizing == "per_group"
    if not per_view and grid.sizes[0] < len(views):
        raise ConfigError("smallest grid size is below the number of merged views")
    strata = [np.ascontiguousarray(v.features) for v in views]
    flags = []
    probe_x = None
    if probe:
        strata, probe_x = _split_probe(strata, probe_size, start_seed)
    for v, pool in zip(views, strata):
        if grid.sizes[-1] > len(pool):
            flags.append(f"n up to {grid.sizes[-1]} drawn with replacement from {len(pool)} rows"
                         f" ({v.descriptor.get('group', 'view')})")
    seeds = tuple(mix_seed(start_seed, b) for b in range(bootstraps))
    tasks = [(b, strata, probe_x, grid.sizes, s, train_cfg, latent, hidden, per_view)
             for b, s in enumerate(seeds)]
    if threads > 1 and bootstraps > 1:
        with ProcessPoolExecutor(max_workers=min(threads, bootstraps)) as pool:
            rows = list(pool.map(_bootstrap_row, tasks))
    else:
        rows = [_bootstrap_row(t) for t in tasks]
    if len(views) > 1:
        desc = {"groups": tuple(v.descriptor.get("group") for v in views), "joint": True}
        if "label" in views[0].descriptor:
            desc["label"] = views[0].descriptor["label"]
    else:
        desc = dict(views[0].descriptor)
    return LearningCurve(grid, np.array(rows), desc, seeds, tuple(flags))


def write_curves_csv(curves, path):
    """``curves`` maps a name to a LearningCurve; one row per (curve, bootstrap, n)."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["curve", "bootstrap", "n", "log2_n", "loss"])
        for name, c in curves.items():
            for b in range(c.losses.shape[0]):
                for j, n in enumerate(c.grid.sizes):
                    w.writerow([name, b, n, f"{np.log2(n):g}", repr(float(c.losses[b, j]))])
    return path
