"""Command-line surface: generate, fit, tree, diagnose.

Config files are flat ``key = value`` text (``#`` comments allowed);
keys mirror the SamplerConfig / generator-preset fields and are listed
in the README. Flags override config values; the SACEBART_CONFIG
environment variable supplies a config path when --config is absent.

Exit codes: 0 ok, 2 config error, 3 data error, 4 runtime contract
violation.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import os
import sys
from dataclasses import replace
from datetime import datetime, timezone

import numpy as np

from . import __version__
from .cart import fit_cart, render_dot, render_tree
from .data import impute_baseline_covariates, load_dataset, write_dataset_csv
from .dgp import (
    generate,
    preset_constant_effect,
    preset_heterogeneous,
    preset_null,
    preset_wsd,
    write_ground_truth_csv,
)
from .errors import (
    ConfigError,
    ContractViolation,
    DataError,
    InitializationError,
    NumericalUnderflowError,
    SaceBartError,
)
from .estimands import summarize, summary_text, write_csace_csv
from .gibbs import SamplerConfig, fit

ENV_CONFIG = "SACEBART_CONFIG"

_SAMPLER_KEYS = {
    "n_iter": int, "burn_in": int, "thin": int, "n_chains": int,
    "seed": int, "k_trees": int, "probit_k_trees": int,
    "fit_w_on_all": bool, "counterfactual_noise": bool,
    "debug_checks": bool, "min_structural_rows": int,
    "init_fit_sweeps": int, "checkpoint_every": int,
    "checkpoint_path": str, "tree_alpha": float, "tree_beta": float,
    "p_grow": float, "p_prune": float, "p_change": float,
    "n_cutpoints": int, "leaf_prior_k": float,
    "resid_prior_shape": float, "resid_prior_rate": float,
    "intercept_prior_shape": float, "intercept_prior_rate": float,
    "likely_threshold": float, "dump_trees_on_checkpoint": bool,
    # input column remapping: column_<canonical> = <actual CSV name>
    "column_cluster_id": str, "column_z": str, "column_r_s": str,
    "column_s_obs": str, "column_r_y": str, "column_y_obs": str,
}

_GENERATE_KEYS = {
    "preset": str, "seed": int, "n_clusters": int,
    "cluster_size_min": int, "cluster_size_max": int,
    "total_individuals": int, "outcome_sd": float, "tau": float,
    "step": float, "threshold": float, "miss_status_rate": float,
    "miss_outcome_rate": float,
}

_TREE_KEYS = {"max_depth": int, "min_node_size": int, "min_sse_gain": float}


def _parse_value(raw, typ, key):
    raw = raw.strip()
    if typ is bool:
        if raw.lower() in ("1", "true", "yes", "on"):
            return True
        if raw.lower() in ("0", "false", "no", "off"):
            return False
        raise ConfigError(f"config key {key!r}: expected a boolean, got {raw!r}")
    try:
        return typ(raw)
    except ValueError:
        raise ConfigError(
            f"config key {key!r}: expected {typ.__name__}, got {raw!r}"
        ) from None


def parse_config_file(path, known_keys):
    """Flat key=value parser; unknown keys are config errors."""
    values = {}
    try:
        with open(path, encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, start=1):
                line = line.split("#", 1)[0].strip()
                if not line:
                    continue
                if "=" not in line:
                    raise ConfigError(
                        f"{path}:{lineno}: expected 'key = value'")
                key, raw = line.split("=", 1)
                key = key.strip()
                if key not in known_keys:
                    raise ConfigError(f"{path}:{lineno}: unknown key {key!r}")
                values[key] = _parse_value(raw, known_keys[key], key)
    except OSError as exc:
        raise ConfigError(f"cannot read config file {path}: {exc}") from None
    return values


def _config_path(args):
    if getattr(args, "config", None):
        return args.config
    return os.environ.get(ENV_CONFIG) or None


def _sha256_file(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _sha256_text(text):
    return hashlib.sha256(text.encode("utf-8")).hexdigest()


def _write_manifest(out_dir, *, config_repr, dataset_hash, seed, events,
                    started, extra=None):
    manifest = {
        "format_version": 1,
        "config_hash": _sha256_text(config_repr),
        "dataset_hash": dataset_hash,
        "seed": seed,
        "versions": {
            "sacebart": __version__,
            "numpy": np.__version__,
            "python": ".".join(str(v) for v in sys.version_info[:3]),
        },
        "started": started,
        "finished": datetime.now(timezone.utc).isoformat(),
        "events": events,
    }
    if extra:
        manifest.update(extra)
    path = os.path.join(out_dir, "manifest.json")
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return path


# ---------------------------------------------------------------------
# generate
# ---------------------------------------------------------------------

_PRESETS = {
    "wsd": preset_wsd,
    "null": preset_null,
    "constant": preset_constant_effect,
    "heterogeneous": preset_heterogeneous,
}


def _build_dgp_config(values):
    name = values.get("preset", "wsd")
    if name not in _PRESETS:
        raise ConfigError(
            f"unknown preset {name!r}; choose from {sorted(_PRESETS)}")
    kwargs = {"seed": values.get("seed", 0)}
    if name != "wsd":
        for src, dst in (("n_clusters", "n_clusters"),
                         ("total_individuals", "total_individuals"),
                         ("outcome_sd", "outcome_sd")):
            if src in values:
                kwargs[dst] = values[src]
        if "cluster_size_min" in values or "cluster_size_max" in values:
            kwargs["cluster_size_range"] = (
                values.get("cluster_size_min", 3),
                values.get("cluster_size_max", 9))
        if name == "constant" and "tau" in values:
            kwargs["tau"] = values["tau"]
        if name == "heterogeneous":
            if "step" in values:
                kwargs["step"] = values["step"]
            if "threshold" in values:
                kwargs["threshold"] = values["threshold"]
    config = _PRESETS[name](**kwargs)
    if "miss_status_rate" in values or "miss_outcome_rate" in values:
        from .dgp import MissingnessSpec
        config = replace(config, missingness=MissingnessSpec(
            status=values.get("miss_status_rate", 0.0),
            outcome=values.get("miss_outcome_rate", 0.0)))
    return config.validate()


def cmd_generate(args):
    values = {}
    path = _config_path(args)
    if path:
        values.update(parse_config_file(path, _GENERATE_KEYS))
    if args.preset:
        values["preset"] = args.preset
    if args.seed is not None:
        values["seed"] = args.seed
    config = _build_dgp_config(values)
    dataset, truth = generate(config)
    os.makedirs(args.out, exist_ok=True)
    data_path = os.path.join(args.out, "data.csv")
    write_dataset_csv(dataset, data_path)
    write_ground_truth_csv(truth, os.path.join(args.out, "ground_truth.csv"))
    echo = "\n".join(f"{k} = {values[k]}" for k in sorted(values))
    with open(os.path.join(args.out, "config_echo.txt"), "w",
              encoding="utf-8") as fh:
        fh.write(f"preset = {values.get('preset', 'wsd')}\n")
        if echo:
            fh.write(echo + "\n")
    print(f"wrote {dataset.n_individuals} individuals in "
          f"{dataset.n_clusters} clusters to {data_path}")
    return 0


# ---------------------------------------------------------------------
# fit
# ---------------------------------------------------------------------

def _build_sampler_config(values, args):
    threshold = values.pop("likely_threshold", 0.8)
    colmap = {}
    for key in list(values):
        if key.startswith("column_"):
            colmap[key[len("column_"):]] = values.pop(key)
    config = SamplerConfig(**values)
    overrides = {}
    if args.seed is not None:
        overrides["seed"] = args.seed
    if args.chains is not None:
        overrides["n_chains"] = args.chains
    if args.iters is not None:
        overrides["n_iter"] = args.iters
    if args.burn_in is not None:
        overrides["burn_in"] = args.burn_in
    if args.thin is not None:
        overrides["thin"] = args.thin
    if overrides:
        config = replace(config, **overrides)
    config.validate()
    return config, threshold, colmap


def cmd_fit(args):
    started = datetime.now(timezone.utc).isoformat()
    values = {}
    path = _config_path(args)
    if path:
        values.update(parse_config_file(path, _SAMPLER_KEYS))
    config, threshold, colmap = _build_sampler_config(values, args)

    schema = {"columns": colmap} if colmap else None
    dataset = load_dataset(args.data, schema=schema)
    dataset = impute_baseline_covariates(dataset)
    if dataset.n_clusters < 10 or config.n_iter < 1000:
        print("warning: desk-scale settings (few clusters or iterations); "
              "results are for smoke testing only", file=sys.stderr)

    store = fit(dataset, config, threads=args.threads)
    summary = summarize(store, dataset, threshold=threshold)
    per_chain = [
        (chain, summarize(store.chain_slice(chain), dataset,
                          threshold=threshold))
        for chain in store.chain_labels
    ] if len(store.chain_labels) > 1 else None

    os.makedirs(args.out, exist_ok=True)
    with open(os.path.join(args.out, "estimands.txt"), "w",
              encoding="utf-8") as fh:
        fh.write(summary_text(summary, per_chain=per_chain))
    write_csace_csv(os.path.join(args.out, "csace.csv"), summary)

    # traces: SACE per retained draw, log likelihood per iteration
    delta = store.yhat1.astype(float) - store.yhat0.astype(float)
    member = np.isfinite(delta)
    counts = member.sum(axis=1)
    with np.errstate(invalid="ignore"):
        sace_per_draw = np.where(
            counts > 0, np.where(member, delta, 0.0).sum(axis=1)
            / np.maximum(counts, 1), np.nan)
    with open(os.path.join(args.out, "sace_trace.csv"), "w", newline="",
              encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["draw", "chain", "sace"])
        for d in range(store.n_draws):
            val = "" if np.isnan(sace_per_draw[d]) else f"{sace_per_draw[d]:.6f}"
            writer.writerow([d, int(store.chain_id[d]), val])
    with open(os.path.join(args.out, "loglik_trace.csv"), "w", newline="",
              encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["chain", "iteration", "loglik"])
        for row, chain in enumerate(store.chain_labels):
            for it, val in enumerate(store.loglik[row]):
                writer.writerow([chain, it, f"{val:.6f}"])

    # covariates and CSACE draws for the heterogeneity tree stage
    with open(os.path.join(args.out, "covariates.csv"), "w", newline="",
              encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["individual"] + list(dataset.covariate_names))
        for i in range(dataset.n_individuals):
            writer.writerow(
                [i] + [repr(float(v))
                       for v in dataset.covariate_matrix[i]])
    flagged = np.nonzero(summary.likely_always_survivor)[0]
    with open(os.path.join(args.out, "csace_draws.csv"), "w", newline="",
              encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow([f"ind_{i}" for i in flagged])
        block = delta[:, flagged]
        for d in range(block.shape[0]):
            writer.writerow(
                ["" if np.isnan(v) else f"{v:.6g}" for v in block[d]])

    _write_manifest(
        args.out, config_repr=repr(config), dataset_hash=_sha256_file(args.data),
        seed=config.seed, events=store.diagnostics, started=started,
        extra={"n_chains": config.n_chains, "retained_draws": store.n_draws,
               "threads": args.threads})
    sace = summary.sace
    print(f"SACE {sace.mean:.3f} [{sace.cri_lo:.3f}, {sace.cri_hi:.3f}] "
          f"({store.n_draws} retained draws)")
    return 0


# ---------------------------------------------------------------------
# tree
# ---------------------------------------------------------------------

def _read_csv_rows(path, what):
    if not os.path.exists(path):
        raise DataError(f"missing fit output {path}; run 'fit' first ({what})")
    with open(path, newline="", encoding="utf-8") as fh:
        return list(csv.reader(fh))


def cmd_tree(args):
    values = {}
    path = _config_path(args)
    if path:
        values.update(parse_config_file(path, _TREE_KEYS))
    max_depth = args.max_depth or values.get("max_depth", 3)
    min_node_size = args.min_node_size or values.get("min_node_size", 20)
    min_sse_gain = (args.min_sse_gain if args.min_sse_gain is not None
                    else values.get("min_sse_gain", 0.01))

    fit_dir = args.fit_dir
    csace_rows = _read_csv_rows(os.path.join(fit_dir, "csace.csv"), "csace")
    cov_rows = _read_csv_rows(os.path.join(fit_dir, "covariates.csv"),
                              "covariates")
    draw_rows = _read_csv_rows(os.path.join(fit_dir, "csace_draws.csv"),
                               "csace draws")

    cov_names = cov_rows[0][1:]
    cov_by_ind = {int(r[0]): [float(v) for v in r[1:]] for r in cov_rows[1:]}
    flagged = []
    means = []
    for row in csace_rows[1:]:
        ind, _prob, mean, _lo, _hi, flag = row
        if flag == "1" and mean != "":
            flagged.append(int(ind))
            means.append(float(mean))
    if not flagged:
        raise DataError("no likely always-survivors with a CSACE to fit")

    draw_cols = {name: j for j, name in enumerate(draw_rows[0])}
    draws = np.full((len(flagged), len(draw_rows) - 1), np.nan)
    for k, ind in enumerate(flagged):
        j = draw_cols.get(f"ind_{ind}")
        if j is None:
            continue
        for d, row in enumerate(draw_rows[1:]):
            if row[j] != "":
                draws[k, d] = float(row[j])

    covariates = np.array([cov_by_ind[i] for i in flagged])
    tree = fit_cart(np.array(means), covariates, draws,
                    covariate_names=cov_names, max_depth=max_depth,
                    min_node_size=min_node_size, min_sse_gain=min_sse_gain)
    out_dir = args.out or fit_dir
    os.makedirs(out_dir, exist_ok=True)
    text = render_tree(tree)
    with open(os.path.join(out_dir, "tree.txt"), "w", encoding="utf-8") as fh:
        fh.write(text)
    with open(os.path.join(out_dir, "tree.dot"), "w", encoding="utf-8") as fh:
        fh.write(render_dot(tree))
    print(text, end="")
    return 0


# ---------------------------------------------------------------------
# diagnose
# ---------------------------------------------------------------------

def cmd_diagnose(args):
    fit_dir = args.fit_dir
    manifest_path = os.path.join(fit_dir, "manifest.json")
    if not os.path.exists(manifest_path):
        raise DataError(f"missing fit output {manifest_path}")
    with open(manifest_path, encoding="utf-8") as fh:
        manifest = json.load(fh)
    print(f"sacebart run manifest ({manifest_path})")
    print(f"  config hash:  {manifest['config_hash']}")
    print(f"  dataset hash: {manifest['dataset_hash']}")
    print(f"  seed:         {manifest['seed']}")
    print(f"  retained:     {manifest.get('retained_draws')}")
    for key, value in sorted(manifest.get("events", {}).items()):
        print(f"  event {key}: {value}")
    rows = _read_csv_rows(os.path.join(fit_dir, "sace_trace.csv"), "trace")
    values = np.array([float(r[2]) for r in rows[1:] if r[2] != ""])
    if values.size:
        print(f"  sace trace: n={values.size} mean={values.mean():.4f} "
              f"sd={values.std(ddof=1) if values.size > 1 else 0.0:.4f}")
    return 0


# ---------------------------------------------------------------------
# entry point
# ---------------------------------------------------------------------

def build_parser():
    parser = argparse.ArgumentParser(
        prog="sacebart",
        description="Survivor average causal effects in cluster-randomized "
                    "trials with outcomes truncated by death")
    sub = parser.add_subparsers(dest="command", required=True)

    p_gen = sub.add_parser("generate", help="write a synthetic trial")
    p_gen.add_argument("--config")
    p_gen.add_argument("--out", required=True)
    p_gen.add_argument("--preset", choices=sorted(_PRESETS))
    p_gen.add_argument("--seed", type=int)
    p_gen.set_defaults(func=cmd_generate)

    p_fit = sub.add_parser("fit", help="run the sampler on a dataset")
    p_fit.add_argument("--data", required=True)
    p_fit.add_argument("--config")
    p_fit.add_argument("--out", required=True)
    p_fit.add_argument("--seed", type=int)
    p_fit.add_argument("--chains", type=int)
    p_fit.add_argument("--threads", type=int, default=1)
    p_fit.add_argument("--iters", type=int)
    p_fit.add_argument("--burn-in", dest="burn_in", type=int)
    p_fit.add_argument("--thin", type=int)
    p_fit.set_defaults(func=cmd_fit)

    p_tree = sub.add_parser("tree", help="fit-the-fit heterogeneity tree")
    p_tree.add_argument("fit_dir")
    p_tree.add_argument("--config")
    p_tree.add_argument("--out")
    p_tree.add_argument("--max-depth", dest="max_depth", type=int)
    p_tree.add_argument("--min-node-size", dest="min_node_size", type=int)
    p_tree.add_argument("--min-sse-gain", dest="min_sse_gain", type=float)
    p_tree.set_defaults(func=cmd_tree)

    p_diag = sub.add_parser("diagnose", help="print run diagnostics")
    p_diag.add_argument("fit_dir")
    p_diag.set_defaults(func=cmd_diagnose)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except (DataError, InitializationError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 3
    except (ContractViolation, NumericalUnderflowError) as exc:
        print(f"contract violation: {exc}", file=sys.stderr)
        return 4
    except SaceBartError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
