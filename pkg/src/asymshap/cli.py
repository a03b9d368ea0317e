"""Command-line entry point.

Subcommands: gen-data, train, explain, fairness, featselect, oracle-check.
Every flag mirrors a config-file key one-to-one; values resolve as
defaults < --config file < explicit flags, and the resolved config is echoed
into every output JSON together with content hashes of the input files.
Outputs carry no timestamps, so identical config and seed give byte-identical
bytes. Exit codes: 0 success, 2 validation error, 3 estimator or sampling
guard failure, 4 oracle-check failure.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import math
import os
import sys
from pathlib import Path

import numpy as np

from .attribution import (
    TableValueFunction,
    exact_asv,
    exact_shapley_subset_form,
    global_asv,
    marginal_contributions,
    mc_asv,
)
from .coalitions import (
    DEFAULT_ENUMERATION_CAP,
    OrderingSpec,
    WeightedOrdering,
    enumerate_consistent,
    random_ordering_spec,
)
from .data import Dataset, load_csv, save_csv, train_test_split
from .errors import EstimatorError, SchemaError, ValidationError
from .models import (
    TrainConfig,
    TrainedModel,
    max_class_accuracy,
    sampled_label_accuracy,
    train_logistic,
    train_mlp,
)
from .scenarios import (
    MarkovSeriesProcess,
    gen_fair_admissions,
    gen_two_feature_graph,
    gen_unfair_admissions,
    run_fairness_audit,
    run_feature_selection_study,
)
from .values import BackgroundSet, cached_value_fn, make_sampler

logger = logging.getLogger(__name__)

GEN_SCENARIOS = ("fair-admissions", "unfair-admissions", "chain", "collider", "mixed", "markov")


def _sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(65536), b""):
            h.update(chunk)
    return h.hexdigest()


def _write_json(path, doc) -> None:
    with open(path, "w") as fh:
        json.dump(doc, fh, sort_keys=True, indent=2)
        fh.write("\n")


def _resolve(defaults: dict, args: argparse.Namespace) -> dict:
    """defaults, overridden by --config file keys, overridden by explicit flags."""
    resolved = dict(defaults)
    config_path = getattr(args, "config", None)
    if config_path:
        try:
            with open(config_path) as fh:
                file_cfg = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ValidationError(f"malformed config JSON {config_path}: {exc}") from exc
        unknown = set(file_cfg) - set(defaults)
        if unknown:
            raise ValidationError(f"unknown config keys in {config_path}: {sorted(unknown)}")
        resolved.update(file_cfg)
    for key in defaults:
        val = getattr(args, key, None)
        if val is not None:
            resolved[key] = val
    if "seed" in defaults and resolved.get("seed") is None:
        raise ValidationError("a seed is required (no wall-clock default); pass --seed")
    return resolved


def _require_file(path, what: str) -> str:
    if path is None:
        raise ValidationError(f"missing required {what} path")
    if not Path(path).is_file():
        raise ValidationError(f"{what} file not found: {path}")
    return str(path)


def _schema_path_for(data_path: str, override) -> str:
    if override:
        return _require_file(override, "schema")
    p = Path(data_path)
    guess = p.with_suffix(".schema.json") if p.suffix == ".csv" else Path(str(p) + ".schema.json")
    return _require_file(guess, "schema")


def _load_dataset(resolved: dict) -> tuple[Dataset, dict]:
    data = _require_file(resolved.get("data"), "dataset")
    schema = _schema_path_for(data, resolved.get("schema"))
    ds = load_csv(data, schema)
    hashes = {"data": _sha256_file(data), "schema": _sha256_file(schema)}
    return ds, hashes


def _load_ordering(path, ds: Dataset) -> WeightedOrdering:
    """Ordering-spec JSON; group/edge entries may be feature names or indices."""
    _require_file(path, "ordering spec")
    with open(path) as fh:
        try:
            obj = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ValidationError(f"malformed ordering-spec JSON {path}: {exc}") from exc

    def to_index(entry):
        if isinstance(entry, str):
            return ds.schema.index_of(entry)
        return int(entry)

    n = int(obj.get("n", ds.n))
    if n != ds.n:
        raise ValidationError(f"ordering spec covers {n} features, dataset has {ds.n}")
    groups = obj.get("groups")
    if groups is not None:
        groups = tuple(tuple(to_index(e) for e in g) for g in groups)
    edges = frozenset((to_index(i), to_index(j)) for i, j in obj.get("edges") or [])
    return WeightedOrdering(OrderingSpec(n, groups, edges), obj.get("direction", "distal"))


def _split_names(raw) -> list[str]:
    if isinstance(raw, (list, tuple)):
        return [str(x) for x in raw]
    return [part.strip() for part in str(raw).split(",") if part.strip()]


# ---------------------------------------------------------------- gen-data


def cmd_gen_data(args) -> int:
    defaults = {
        "scenario": None, "rows": 10000, "seed": None, "out": None,
        "T": 12, "ar": 0.7, "shift": 1.0, "decay": 0.7,
    }
    resolved = _resolve(defaults, args)
    scenario = resolved["scenario"]
    if scenario not in GEN_SCENARIOS:
        raise ValidationError(f"unknown scenario {scenario!r}; choose from {GEN_SCENARIOS}")
    rows, seed = int(resolved["rows"]), int(resolved["seed"])
    prefix = resolved["out"] or scenario
    audit = None
    if scenario == "fair-admissions":
        ds = gen_fair_admissions(rows, seed)
    elif scenario == "unfair-admissions":
        ds, audit = gen_unfair_admissions(rows, seed)
    elif scenario == "markov":
        process = MarkovSeriesProcess(
            T=int(resolved["T"]), ar=float(resolved["ar"]),
            shift=float(resolved["shift"]), decay=float(resolved["decay"]),
        )
        ds = process.sample(rows, seed)
    else:
        ds, _ = gen_two_feature_graph(scenario, rows, seed)
    csv_path = f"{prefix}.csv"
    schema_path = f"{prefix}.schema.json"
    save_csv(ds, csv_path, schema_path)
    files = {
        "csv": {"path": csv_path, "sha256": _sha256_file(csv_path)},
        "schema": {"path": schema_path, "sha256": _sha256_file(schema_path)},
    }
    if audit is not None:
        audit_path = f"{prefix}.audit.csv"
        with open(audit_path, "w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["x4"])
            for v in audit:
                writer.writerow([int(v)])
        files["audit"] = {"path": audit_path, "sha256": _sha256_file(audit_path)}
    _write_json(f"{prefix}.manifest.json", {"scenario": scenario, "config": resolved, "files": files})
    print(f"wrote {csv_path} ({rows} rows), {schema_path}, {prefix}.manifest.json")
    return 0


# ---------------------------------------------------------------- train


def _parse_hidden(raw) -> tuple[int, ...]:
    if isinstance(raw, (list, tuple)):
        return tuple(int(x) for x in raw)
    return tuple(int(x) for x in str(raw).split(",") if x.strip())


def cmd_train(args) -> int:
    defaults = {
        "data": None, "schema": None, "model": "mlp", "out": "model.json",
        "learning_rate": 0.1, "epochs": 300, "batch_size": 32, "momentum": 0.9,
        "hidden": "10,10", "activation": "tanh", "val_fraction": 0.25,
        "patience": 20, "test_fraction": 0.25, "seed": None,
    }
    resolved = _resolve(defaults, args)
    ds, hashes = _load_dataset(resolved)
    kind = resolved["model"]
    if kind not in ("logistic", "mlp"):
        raise ValidationError(f"model must be 'logistic' or 'mlp', got {kind!r}")
    seed = int(resolved["seed"])
    train_ds, test_ds = train_test_split(ds, float(resolved["test_fraction"]), seed)
    config = TrainConfig(
        learning_rate=float(resolved["learning_rate"]),
        epochs=int(resolved["epochs"]),
        batch_size=int(resolved["batch_size"]),
        momentum=float(resolved["momentum"]),
        seed=seed,
        val_fraction=float(resolved["val_fraction"]),
        patience=int(resolved["patience"]),
        hidden=_parse_hidden(resolved["hidden"]),
        activation=resolved["activation"],
    )
    model = train_logistic(train_ds, config) if kind == "logistic" else train_mlp(train_ds, config)
    model.save(resolved["out"])
    test_max = max_class_accuracy(model, test_ds.X, test_ds.y)
    test_sampled = sampled_label_accuracy(model, test_ds.X, test_ds.y)
    majority = float(np.bincount(test_ds.y, minlength=ds.schema.n_classes).max()) / test_ds.n_rows
    if test_max <= majority + 0.02:
        logger.warning(
            "test accuracy %.3f is within noise of the majority-class rate %.3f; "
            "the model family may be too weak for this data",
            test_max, majority,
        )
    metrics = {
        "train_accuracy": model.history.get("train_accuracy"),
        "val_accuracy": model.history.get("val_accuracy"),
        "test_max_class_accuracy": test_max,
        "test_sampled_label_accuracy": test_sampled,
        "majority_class_rate": majority,
        "best_epoch": model.history.get("best_epoch"),
        "epochs_run": model.history.get("epochs_run"),
    }
    metrics_path = str(Path(resolved["out"]).with_suffix("")) + ".metrics.json"
    _write_json(metrics_path, {"metrics": metrics, "config": resolved, "input_hashes": hashes})
    print(
        f"trained {kind}: test max-class {test_max:.3f}, "
        f"sampled-label {test_sampled:.3f} -> {resolved['out']}"
    )
    return 0


# ---------------------------------------------------------------- explain


def _build_marginalizer(resolved: dict, ds: Dataset):
    strategy = resolved["strategy"]
    if strategy == "off-manifold":
        return BackgroundSet.from_dataset(ds), None
    if strategy == "generative":
        raise ValidationError("the generative strategy is not available from the command line")
    return None, make_sampler(strategy, dataset=ds, k=int(resolved["k"]))


def cmd_explain(args) -> int:
    defaults = {
        "model": None, "data": None, "schema": None, "spec": None,
        "strategy": "off-manifold", "k": 10, "samples": 100,
        "exact": None, "mc": None, "perms": 200, "budget": None,
        "index": None, "target": "label", "workers": _default_workers(),
        "cap": DEFAULT_ENUMERATION_CAP, "seed": None,
        "out": "attribution.json", "locals_csv": None,
    }
    resolved = _resolve(defaults, args)
    model_path = _require_file(resolved.get("model"), "model")
    model = TrainedModel.load(model_path)
    ds, hashes = _load_dataset(resolved)
    hashes["model"] = _sha256_file(model_path)
    if model.schema.digest() != ds.schema.digest():
        raise SchemaError("model and dataset schemas differ")
    if resolved["spec"]:
        ordering = _load_ordering(resolved["spec"], ds)
        hashes["spec"] = _sha256_file(resolved["spec"])
    else:
        ordering = WeightedOrdering(OrderingSpec(ds.n))
    if resolved["exact"] and resolved["mc"]:
        raise ValidationError("--exact and --mc are mutually exclusive")
    if resolved["exact"]:
        estimator = "exact"
    elif resolved["mc"]:
        estimator = "mc"
    else:
        estimator = "exact" if ds.n <= int(resolved["cap"]) else "mc"
    bg, sampler = _build_marginalizer(resolved, ds)
    seed = int(resolved["seed"])
    m = int(resolved["samples"])
    if resolved["index"] is not None:
        row = int(resolved["index"])
        if not 0 <= row < ds.n_rows:
            raise ValidationError(f"--index {row} outside [0, {ds.n_rows})")
        x = ds.X[row]
        if resolved["target"] == "argmax":
            y = int(np.argmax(model.predict(x[None, :])[0]))
        elif resolved["target"] == "label":
            y = int(ds.y[row])
        else:
            raise ValidationError(f"target must be 'label' or 'argmax', got {resolved['target']!r}")
        vf = cached_value_fn(model, x, y, bg=bg, sampler=sampler, m=m, seed=seed, point_index=row)
        if estimator == "exact":
            res = exact_asv(vf, ordering, cap=int(resolved["cap"]))
        else:
            rng = np.random.default_rng(np.random.SeedSequence([seed, 0x9E12, row]))
            res = mc_asv(vf, ordering, int(resolved["perms"]), rng)
        doc = {"mode": "local", "index": row, "class_index": y}
        doc.update(res.to_json_dict(feature_names=ds.schema.names))
    else:
        glob = global_asv(
            model, ds, ordering,
            bg=bg, sampler=sampler, m=m,
            estimator=estimator, n_perms=int(resolved["perms"]),
            budget=None if resolved["budget"] is None else int(resolved["budget"]),
            seed=seed, cap=int(resolved["cap"]),
            collect_locals=resolved["locals_csv"] is not None,
            workers=int(resolved["workers"]),
        )
        doc = {"mode": "global"}
        doc.update(glob.to_json_dict(feature_names=ds.schema.names))
        if resolved["locals_csv"]:
            with open(resolved["locals_csv"], "w", newline="") as fh:
                writer = csv.writer(fh, lineterminator="\n")
                writer.writerow(list(ds.schema.names))
                for local_row in glob.locals:
                    writer.writerow([repr(float(v)) for v in local_row])
    doc["config"] = resolved
    doc["input_hashes"] = hashes
    _write_json(resolved["out"], doc)
    print(f"wrote {resolved['out']}")
    return 0


# ---------------------------------------------------------------- fairness


def cmd_fairness(args) -> int:
    defaults = {
        "model": None, "data": None, "schema": None,
        "resolving": None, "sensitive": None,
        "strategy": "exact-match", "k": 10, "samples": 64,
        "estimator": "exact", "perms": 200, "budget": 2000,
        "workers": _default_workers(), "seed": None, "out": "fairness.json",
    }
    resolved = _resolve(defaults, args)
    if not resolved["resolving"] or not resolved["sensitive"]:
        raise ValidationError("--resolving and --sensitive feature lists are required")
    model_path = _require_file(resolved.get("model"), "model")
    model = TrainedModel.load(model_path)
    ds, hashes = _load_dataset(resolved)
    hashes["model"] = _sha256_file(model_path)
    bg, sampler = _build_marginalizer(resolved, ds)
    report = run_fairness_audit(
        model, ds,
        _split_names(resolved["resolving"]),
        _split_names(resolved["sensitive"]),
        sampler=sampler, bg=bg,
        m=int(resolved["samples"]),
        estimator=resolved["estimator"],
        n_perms=int(resolved["perms"]),
        budget=None if resolved["budget"] is None else int(resolved["budget"]),
        seed=int(resolved["seed"]),
        workers=int(resolved["workers"]),
    )
    doc = report.to_json_dict()
    doc["config"] = resolved
    doc["input_hashes"] = hashes
    _write_json(resolved["out"], doc)
    print(report.verdict)
    return 0


# ---------------------------------------------------------------- featselect


def cmd_featselect(args) -> int:
    defaults = {
        "T": 12, "trials": 5, "rows": 4000, "seed": None,
        "ar": 0.7, "shift": 1.0, "decay": 0.7,
        "samples": 64, "budget": 300, "out": "featselect.json",
    }
    resolved = _resolve(defaults, args)
    process = MarkovSeriesProcess(
        T=int(resolved["T"]), ar=float(resolved["ar"]),
        shift=float(resolved["shift"]), decay=float(resolved["decay"]),
    )
    study = run_feature_selection_study(
        process,
        trials=int(resolved["trials"]),
        n_rows=int(resolved["rows"]),
        seed=int(resolved["seed"]),
        m=int(resolved["samples"]),
        point_budget=int(resolved["budget"]),
    )
    doc = study.to_json_dict()
    doc["config"] = resolved
    _write_json(resolved["out"], doc)
    trials_path = str(Path(resolved["out"]).with_suffix("")) + ".trials.csv"
    with open(trials_path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow([f"t{t}" for t in study.ts])
        for row in study.trial_matrix:
            writer.writerow([repr(float(v)) for v in row])
    gaps = np.abs(study.cumulative_asv - study.empirical_mean)
    print(
        f"wrote {resolved['out']} and {trials_path}; "
        f"max |ASV - empirical| over t: {gaps.max():.4f}"
    )
    return 0


# ---------------------------------------------------------------- oracle-check


def cmd_oracle_check(args) -> int:
    defaults = {"n": 6, "games": 50, "perms": 4000, "seed": None, "out": None}
    resolved = _resolve(defaults, args)
    n, games = int(resolved["n"]), int(resolved["games"])
    if not 2 <= n <= DEFAULT_ENUMERATION_CAP:
        raise ValidationError(f"n must be in [2, {DEFAULT_ENUMERATION_CAP}], got {n}")
    rng = np.random.default_rng(int(resolved["seed"]))
    max_dual_gap = 0.0
    max_eff_gap = 0.0
    max_telescope_gap = 0.0
    covered = 0
    total = 0
    for _ in range(games):
        table = rng.random(1 << n)
        vf = TableValueFunction(table, n)
        dual_gap = np.max(
            np.abs(exact_asv(vf, OrderingSpec(n)).means - exact_shapley_subset_form(vf).means)
        )
        max_dual_gap = max(max_dual_gap, float(dual_gap))
        spec = random_ordering_spec(n, rng)
        exact = exact_asv(vf, spec)
        max_eff_gap = max(max_eff_gap, abs(exact.efficiency_gap()))
        draw = enumerate_consistent(spec)[0]
        row = np.array([draw.order])
        telescope = float(marginal_contributions(vf, row).sum()) - (exact.total - exact.baseline)
        max_telescope_gap = max(max_telescope_gap, abs(telescope))
        est = mc_asv(vf, spec, int(resolved["perms"]), rng)
        for i in range(n):
            total += 1
            gap = abs(est.means[i] - exact.means[i])
            if est.stderrs[i] > 0:
                covered += gap <= 4.0 * est.stderrs[i]
            else:
                covered += gap <= 1e-9
    coverage = covered / total
    ok = max_dual_gap <= 1e-9 and max_eff_gap <= 1e-9 and max_telescope_gap <= 1e-9 and coverage >= 0.99
    report = {
        "n": n,
        "games": games,
        "perms": int(resolved["perms"]),
        "seed": int(resolved["seed"]),
        "max_dual_formula_gap": max_dual_gap,
        "max_efficiency_gap": max_eff_gap,
        "max_telescoping_gap": max_telescope_gap,
        "mc_within_4_stderr": coverage,
        "pass": bool(ok),
    }
    if resolved["out"]:
        _write_json(resolved["out"], {**report, "config": resolved})
    status = "PASS" if ok else "FAIL"
    print(
        f"{status}: dual-formula gap {max_dual_gap:.2e}, efficiency gap {max_eff_gap:.2e}, "
        f"telescoping gap {max_telescope_gap:.2e}, MC 4-stderr coverage {coverage:.4f}"
    )
    return 0 if ok else 4


# ---------------------------------------------------------------- wiring


def _default_workers() -> int:
    try:
        return max(1, int(os.environ.get("ASYMSHAP_WORKERS", "1")))
    except ValueError:
        return 1


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="asymshap",
        description="Order-aware Shapley feature attribution with causal precedence constraints.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, func, helptext):
        p = sub.add_parser(name, help=helptext)
        p.set_defaults(func=func)
        p.add_argument("--config", help="JSON file whose keys mirror this command's flags")
        p.add_argument("--seed", type=int, help="master seed (required here or in --config)")
        return p

    p = add("gen-data", cmd_gen_data, "generate a synthetic dataset (CSV + schema + manifest)")
    p.add_argument("scenario", choices=GEN_SCENARIOS)
    p.add_argument("--rows", type=int)
    p.add_argument("--out", help="output file prefix (default: scenario name)")
    p.add_argument("--T", type=int, help="markov: number of time steps")
    p.add_argument("--ar", type=float, help="markov: autoregressive coefficient")
    p.add_argument("--shift", type=float, help="markov: label shift at t=0")
    p.add_argument("--decay", type=float, help="markov: geometric decay of the shift")

    p = add("train", cmd_train, "fit a logistic or MLP model and report both accuracy senses")
    p.add_argument("--data")
    p.add_argument("--schema")
    p.add_argument("--model", choices=("logistic", "mlp"))
    p.add_argument("--out")
    p.add_argument("--learning-rate", dest="learning_rate", type=float)
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch-size", dest="batch_size", type=int)
    p.add_argument("--momentum", type=float)
    p.add_argument("--hidden", help="comma-separated hidden layer widths, e.g. 10,10")
    p.add_argument("--activation", choices=("tanh", "relu"))
    p.add_argument("--val-fraction", dest="val_fraction", type=float)
    p.add_argument("--patience", type=int)
    p.add_argument("--test-fraction", dest="test_fraction", type=float)

    p = add("explain", cmd_explain, "local or global attribution for a trained model")
    p.add_argument("--model")
    p.add_argument("--data")
    p.add_argument("--schema")
    p.add_argument("--spec", help="ordering-spec JSON (names or indices); omit for no constraints")
    p.add_argument("--strategy", choices=("off-manifold", "exact-match", "knn"))
    p.add_argument("--k", type=int)
    p.add_argument("--samples", type=int, help="background/conditional draws per coalition")
    p.add_argument("--exact", action="store_const", const=True, help="force exact enumeration")
    p.add_argument("--mc", action="store_const", const=True, help="force Monte Carlo")
    p.add_argument("--perms", type=int)
    p.add_argument("--budget", type=int, help="max data points for a global run")
    p.add_argument("--global", dest="global_", action="store_const", const=True,
                   help="global attribution (default unless --index is given)")
    p.add_argument("--index", type=int, help="explain a single data point")
    p.add_argument("--target", choices=("label", "argmax"))
    p.add_argument("--workers", type=int)
    p.add_argument("--cap", type=int)
    p.add_argument("--out")
    p.add_argument("--locals-csv", dest="locals_csv", help="also write per-point attributions")

    p = add("fairness", cmd_fairness, "audit for attribution kept by sensitive features")
    p.add_argument("--model")
    p.add_argument("--data")
    p.add_argument("--schema")
    p.add_argument("--resolving", help="comma-separated resolving feature names")
    p.add_argument("--sensitive", help="comma-separated sensitive feature names")
    p.add_argument("--strategy", choices=("off-manifold", "exact-match", "knn"))
    p.add_argument("--k", type=int)
    p.add_argument("--samples", type=int)
    p.add_argument("--estimator", choices=("exact", "mc"))
    p.add_argument("--perms", type=int)
    p.add_argument("--budget", type=int)
    p.add_argument("--workers", type=int)
    p.add_argument("--out")

    p = add("featselect", cmd_featselect, "cumulative-attribution vs retraining study")
    p.add_argument("--T", type=int)
    p.add_argument("--trials", type=int)
    p.add_argument("--rows", type=int)
    p.add_argument("--ar", type=float)
    p.add_argument("--shift", type=float)
    p.add_argument("--decay", type=float)
    p.add_argument("--samples", type=int)
    p.add_argument("--budget", type=int, help="max test points for the attribution curve")
    p.add_argument("--out")

    p = add("oracle-check", cmd_oracle_check, "cross-check estimators on random games")
    p.add_argument("--n", type=int)
    p.add_argument("--games", type=int)
    p.add_argument("--perms", type=int)
    p.add_argument("--out")

    return parser


def main(argv=None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except EstimatorError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except ValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
