"""``aequity`` command line: measure, mitigate, synth and replay."""
from __future__ import annotations

import argparse
import hashlib
import json
import logging
import os
import platform
import sys
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import curves, nn
from .curves import mix_seed
from .dataset import (RunConfig, balanced_merge, load_table, parse_config, parse_config_text, dump_config,
                      standardize)
from .diagnosis import INDETERMINATE, classify_bias, select_outcome, write_diagnosis_json
from .errors import AequityError, ConfigError, DataError
from .metrics import write_fairness_json, write_fairness_tsv
from .mitigation import run_mitigation
from .stats import aeq_from_curve, write_aeq_table
from .synth import SynthSpec, write_scenario

log = logging.getLogger("aequity")

EXIT_OK, EXIT_ERROR, EXIT_INDETERMINATE = 0, 1, 2
POSITIVE = 1.0

AEQ_TABLE = "aeq_table.tsv"
DIAGNOSIS = "diagnosis.json"
CURVES = "curves.csv"
FAIRNESS_TSV = "fairness.tsv"
FAIRNESS_JSON = "fairness.json"
MANIFEST = "manifest.json"


@dataclass
class MeasureResult:
    rows: list
    diagnoses: list
    curves: dict
    selection: object = None
    groups: tuple = ()
    flags: list = field(default_factory=list)

    @property
    def indeterminate_only(self):
        return bool(self.diagnoses) and all(d.bias_type == INDETERMINATE for d in self.diagnoses)


def audit_groups(ds, cfg: RunConfig):
    """(reference, protected) pair of group values audited for this run."""
    present = ds.group_values(cfg.group_col)
    ref, prot = cfg.reference_group, cfg.protected_group
    if ref is None and prot is None:
        if len(present) != 2:
            raise ConfigError(f"{len(present)} groups in {cfg.group_col!r}; set reference_group and protected_group")
        return tuple(present)
    if ref is None:
        others = [g for g in present if g != prot]
        if len(others) != 1:
            raise ConfigError("reference_group is required when there are more than two groups")
        ref = others[0]
    if prot is None:
        others = [g for g in present if g != ref]
        if len(others) != 1:
            raise ConfigError("protected_group is required when there are more than two groups")
        prot = others[0]
    for g in (ref, prot):
        if g not in present:
            raise DataError(f"group {g!r} not found in column {cfg.group_col!r}")
    if ref == prot:
        raise ConfigError("reference_group and protected_group must differ")
    return ref, prot


def prepare(cfg: RunConfig):
    ds = standardize(load_table(cfg))
    if ds.n_features != cfg.input_dim:
        raise ConfigError(f"input_dim is {cfg.input_dim} but the table has {ds.n_features} feature columns")
    for name in cfg.outcome_cols:
        if not np.isin(ds.outcomes[name], (0.0, 1.0)).all():
            raise DataError(f"outcome {name!r} must be binary 0/1")
    return ds


def audit_subset(ds, cfg: RunConfig, groups):
    views = [ds.select(group=g, group_col=cfg.group_col) for g in groups]
    merged = balanced_merge(views, cfg.audit_size, mix_seed(cfg.start_seed, 0xA0D1))
    return ds.take(merged.indices), list(merged.flags)


def measure_dataset(ds, cfg: RunConfig, threads=1) -> MeasureResult:
    """Per-group and joint AEq for the positive class of every outcome, bias
    typing, and outcome selection when several outcomes are configured."""
    groups = audit_groups(ds, cfg)
    audit, flags = audit_subset(ds, cfg, groups)
    grid = curves.make_grid(cfg.min_sample_size, cfg.max_sample_size)
    train_cfg = curves.curve_train_config(cfg)
    kw = dict(threads=threads, latent=cfg.latent_dim, hidden=cfg.hidden_dim, probe=cfg.eval_probe,
              joint_sizing=cfg.joint_sizing)
    rows, diagnoses, all_curves, gaps = [], [], {}, {}
    for outcome in cfg.outcome_cols:
        label = (outcome, POSITIVE)
        views = {}
        for g in groups:
            v = audit.select(group=g, label=label, group_col=cfg.group_col)
            if len(v) < cfg.min_sample_size:
                raise DataError(f"{len(v)} positive rows for group {g!r} on {outcome!r}, below the smallest"
                                f" grid size {cfg.min_sample_size}; lower min_sample_size")
            views[g] = v
        ests = {}
        for g, v in views.items():
            c = curves.learning_curve(v, grid, train_cfg, cfg.bootstraps, cfg.start_seed, **kw)
            all_curves[f"{outcome}|{g}"] = c
            ests[g] = aeq_from_curve(c, smooth=cfg.smooth_curves)
        c = curves.learning_curve([views[g] for g in groups], grid, train_cfg, cfg.bootstraps,
                                  cfg.start_seed, **kw)
        all_curves[f"{outcome}|joint"] = c
        joint = aeq_from_curve(c, smooth=cfg.smooth_curves)
        d = classify_bias(ests[groups[0]], ests[groups[1]], joint, protected_group=groups[1],
                          alpha=cfg.alpha, label=outcome)
        diagnoses.append(d)
        for g in groups:
            rows.append((outcome, g, ests[g]))
        rows.append((outcome, "joint", joint))
        gaps[outcome] = d.evidence["gap"]
    selection = select_outcome(gaps, alpha=cfg.alpha) if len(gaps) > 1 else None
    return MeasureResult(rows, diagnoses, all_curves, selection, groups, flags)


def write_measure(result: MeasureResult, out_dir):
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_aeq_table(result.rows, out / AEQ_TABLE)
    write_diagnosis_json(result.diagnoses, out / DIAGNOSIS, selection=result.selection,
                         extra={"groups": list(result.groups), "audit_flags": result.flags})
    curves.write_curves_csv(result.curves, out / CURVES)
    return [out / AEQ_TABLE, out / DIAGNOSIS, out / CURVES]


def classifier_config(cfg: RunConfig) -> nn.TrainConfig:
    return nn.TrainConfig.classifier(learning_rate=cfg.clf_learning_rate, batch_size=cfg.clf_batch_size,
                                     max_epochs=cfg.clf_max_epochs)


def mitigate_dataset(ds, cfg: RunConfig, measured: MeasureResult, threads=1):
    outcome = measured.selection.selected if measured.selection is not None else cfg.outcome_cols[0]
    diag = next(d for d in measured.diagnoses if d.label == outcome)
    ref, prot = measured.groups
    return outcome, run_mitigation(
        ds, diag, cfg.budget, classifier_config(cfg), cfg.start_seed, outcome,
        reference_group=ref, protected_group=prot, threshold=cfg.threshold,
        report_bootstraps=cfg.report_bootstraps, threads=threads,
    )


def write_mitigation(outcome, result, out_dir):
    out = Path(out_dir)
    write_fairness_tsv(result.reports, out / FAIRNESS_TSV, result.reductions)
    extra = {"outcome": outcome, "plans": result.to_dict()["plans"], "notes": result.notes}
    write_fairness_json(result.reports, out / FAIRNESS_JSON, result.reductions, extra=extra)
    return [out / FAIRNESS_TSV, out / FAIRNESS_JSON]


def _sha256(path):
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def _versions():
    import pandas
    import scipy
    import yaml

    try:
        from importlib.metadata import version

        own = version("artifact")
    except Exception:  # running from a source tree
        own = "unknown"
    return {"python": platform.python_version(), "numpy": np.__version__, "scipy": scipy.__version__,
            "pandas": pandas.__version__, "pyyaml": yaml.__version__, "aequity": own}


def write_manifest(command, cfg: RunConfig, files, timings, threads):
    out = Path(cfg.root_dir)
    manifest = {
        "command": command,
        "config": dump_config(cfg),
        "seed": cfg.start_seed,
        "threads": threads,
        "versions": _versions(),
        "timings_s": timings,
        "files": {Path(f).name: _sha256(f) for f in files},
    }
    path = out / MANIFEST
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return path


def run(command, cfg: RunConfig, threads=1):
    """Execute ``measure`` or ``mitigate``; returns (exit code, manifest path)."""
    t0 = time.perf_counter()
    ds = prepare(cfg)
    measured = measure_dataset(ds, cfg, threads)
    files = write_measure(measured, cfg.root_dir)
    timings = {"measure": round(time.perf_counter() - t0, 3)}
    for d in measured.diagnoses:
        print(f"{d.label}: {d.bias_type} -> {d.recommendation}"
              + (" [label flag]" if d.label_flag else ""))
    if measured.selection is not None:
        print(f"selected outcome: {measured.selection.selected} ({measured.selection.selection_reason})")
    if command == "mitigate":
        t1 = time.perf_counter()
        outcome, res = mitigate_dataset(ds, cfg, measured, threads)
        files += write_mitigation(outcome, res, cfg.root_dir)
        timings["mitigate"] = round(time.perf_counter() - t1, 3)
        for arm, red in res.reductions.items():
            pct = "n/a" if red.percent is None else f"{red.percent:.1f}%"
            print(f"{arm}: bias {red.bias_pre:.4f} -> {red.bias_post:.4f} ({pct})")
    manifest = write_manifest(command, cfg, files, timings, threads)
    code = EXIT_INDETERMINATE if measured.indeterminate_only else EXIT_OK
    return code, manifest


def replay(manifest_path, root_dir=None, threads=1):
    """Re-run a manifest; returns (exit code, names of files whose bytes differ)."""
    manifest = json.loads(Path(manifest_path).read_text(encoding="utf-8"))
    cfg = parse_config_text(manifest["config"], source=str(manifest_path))
    root_dir = root_dir or os.environ.get("AEQUITY_ROOT_DIR")
    if root_dir:
        cfg.root_dir = str(root_dir)
    code, new_manifest = run(manifest["command"], cfg, threads)
    new = json.loads(Path(new_manifest).read_text(encoding="utf-8"))["files"]
    changed = sorted(k for k, v in manifest["files"].items() if new.get(k) != v)
    return code, changed


def _parse_overrides(extra):
    """``--some-key value`` pairs to RunConfig field overrides."""
    out = {}
    i = 0
    while i < len(extra):
        tok = extra[i]
        if not tok.startswith("--"):
            raise ConfigError(f"unexpected argument {tok!r}")
        key, eq, value = tok[2:].partition("=")
        if not eq:
            if i + 1 >= len(extra) or extra[i + 1].startswith("--"):
                value = "true"
            else:
                i += 1
                value = extra[i]
        out[key.replace("-", "_")] = value
        i += 1
    return out


def build_parser():
    p = argparse.ArgumentParser(prog="aequity", description="Dataset bias audit with learning-curve estimates.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)
    for name in ("measure", "mitigate"):
        s = sub.add_parser(name, help=f"{name} dataset bias; any config key can be overridden as --key-name VALUE")
        s.add_argument("--config", required=True)
        s.add_argument("--seed", type=int)
        s.add_argument("--bootstraps", type=int)
        s.add_argument("--threads", type=int)
        if name == "mitigate":
            s.add_argument("--budget", type=int)
    s = sub.add_parser("synth", help="write a synthetic scenario and its config")
    s.add_argument("--kind", required=True, choices=("sampling", "complexity", "label"))
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", default="synth_out")
    s.add_argument("--n-per-group", type=int, default=SynthSpec.n_per_group)
    s.add_argument("--features", type=int, default=SynthSpec.n_features)
    s.add_argument("--skew", type=float, default=SynthSpec.skew_ratio)
    s.add_argument("--components", type=int, default=SynthSpec.extra_components)
    s.add_argument("--flip-rate", type=float, default=SynthSpec.flip_rate)
    s.add_argument("--flip-rates", type=lambda t: tuple(float(v) for v in t.split(",")), default=())
    s.add_argument("--class-sep", type=float, default=SynthSpec.class_sep)
    s.add_argument("--spacing", type=float, default=SynthSpec.component_spacing)
    s.add_argument("--axis-angle", type=float, default=SynthSpec.axis_angle)
    s.add_argument("--label-components", type=int)
    s = sub.add_parser("replay", help="re-run a manifest and compare output bytes")
    s.add_argument("manifest")
    s.add_argument("--root-dir")
    s.add_argument("--threads", type=int, default=1)
    return p


def _config_from_args(args, extra):
    cfg = parse_config(args.config)
    overrides = _parse_overrides(extra)
    if args.seed is not None:
        overrides["start_seed"] = args.seed
    if args.bootstraps is not None:
        overrides["bootstraps"] = args.bootstraps
    if args.threads is not None:
        overrides["threads"] = args.threads
    if getattr(args, "budget", None) is not None:
        overrides["budget"] = args.budget
    if overrides:
        cfg = cfg.with_overrides(**overrides)
    return cfg


def main(argv=None):
    parser = build_parser()
    args, extra = parser.parse_known_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "synth":
            if extra:
                raise ConfigError(f"unexpected arguments: {' '.join(extra)}")
            spec = SynthSpec(args.kind, n_per_group=args.n_per_group, n_features=args.features,
                             skew_ratio=args.skew, extra_components=args.components, flip_rate=args.flip_rate,
                             flip_rates=args.flip_rates, class_sep=args.class_sep,
                             component_spacing=args.spacing, axis_angle=args.axis_angle,
                             label_components=args.label_components, seed=args.seed)
            cfg_path, truth = write_scenario(spec, args.out)
            print(json.dumps({"config": str(cfg_path), **truth}, indent=2, sort_keys=True))
            return EXIT_OK
        if args.command == "replay":
            if extra:
                raise ConfigError(f"unexpected arguments: {' '.join(extra)}")
            code, changed = replay(args.manifest, args.root_dir, args.threads)
            if changed:
                print("differing files: " + ", ".join(changed), file=sys.stderr)
                return EXIT_ERROR
            print("replay identical")
            return code
        cfg = _config_from_args(args, extra)
        code, manifest = run(args.command, cfg, cfg.threads)
        print(f"manifest: {manifest}")
        return code
    except AequityError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_ERROR
    except (OSError, ValueError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
