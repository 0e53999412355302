"""Command-line front end.

Subcommands: ``simulate | features | cluster | evaluate | report | sweep``.
Runs are driven by a flat ``key = value`` config file plus flag overrides;
every run writes a manifest (config hash, seed, package version) so outputs
can be reproduced byte for byte. Exit codes: 0 ok, 2 config error, 3 data
error, 4 numeric failure.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import os
import sys
from dataclasses import fields

from . import __version__
from .core import format_number, load_hierarchy, load_portfolio
from .effects import (
    fit_damage_rate_lmm,
    fit_frequency_poisson,
    write_effects,
    write_variance_components,
)
from .embeddings import load_embedding_table
from .errors import ConfigError, DataError, HierriskError, NumericError
from .evaluation import (
    build_benchmark,
    calibrate_intercept,
    category_stats,
    display_transform,
    evaluate_solution,
    fit_evaluation_model,
    loss_ratio,
    predict_damage_rates,
    write_report,
)
from .indices import DIRECTIONS
from .pipeline import (
    ALGORITHMS,
    VARIANTS,
    LevelGrid,
    load_solution,
    reduce_hierarchy,
    write_grid_log,
    write_solution,
)
from .simulate import GeneratorSpec, generate, write_synthetic

SWEEP_ALGORITHMS = ("kmedoids", "spectral", "hca")
SWEEP_INDICES = ("calinski_harabasz", "davies_bouldin", "dunn", "silhouette")

DEFAULTS = {
    "algorithm": "hca",
    "linkage": "complete",
    "index": "silhouette",
    "variant": "full_angular",
    "level1_grid": "2:8",
    "level2_grid": "2:6",
    "min_mass": "100.0",
    "kmeans_restarts": "10",
    "spectral_restarts": "100",
}


def load_config_file(path) -> dict[str, str]:
    if not os.path.exists(path):
        raise ConfigError(f"config file {path!r} does not exist")
    config: dict[str, str] = {}
    base = os.path.dirname(os.path.abspath(path))
    with open(path, encoding="utf-8") as handle:
        for line_no, line in enumerate(handle, start=1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise ConfigError(f"{path}:{line_no}: expected 'key = value'")
            key, _, value = line.partition("=")
            config[key.strip()] = value.strip()
    config["_base"] = base
    return config


def resolve_path(config, key, required=True):
    value = config.get(key)
    if value is None:
        if required:
            raise ConfigError(f"missing config key {key!r}")
        return None
    path = value if os.path.isabs(value) else os.path.join(config.get("_base", "."), value)
    if not os.path.exists(path):
        raise ConfigError(f"{key} = {value!r} does not exist")
    return path


def parse_grid(text: str) -> tuple[int, ...]:
    text = text.strip()
    try:
        if ":" in text:
            lo, hi = text.split(":")
            grid = tuple(range(int(lo), int(hi) + 1))
        else:
            grid = tuple(int(v) for v in text.split(","))
    except ValueError:
        raise ConfigError(f"cannot parse grid {text!r}; use 'lo:hi' or a comma list") from None
    if not grid:
        raise ConfigError(f"empty grid {text!r}")
    return grid


def require_seed(config) -> int:
    if "seed" not in config:
        raise ConfigError("a seed is required (config key 'seed' or --seed); "
                          "there is no wall-clock default")
    try:
        return int(config["seed"])
    except ValueError:
        raise ConfigError(f"seed {config['seed']!r} is not an integer") from None


def out_dir(config) -> str:
    out = config.get("out")
    if not out:
        raise ConfigError("missing output directory (config key 'out' or --out)")
    path = out if os.path.isabs(out) else os.path.join(config.get("_base", "."), out)
    os.makedirs(path, exist_ok=True)
    return path


def write_manifest(config, command: str, destination: str) -> None:
    visible = {k: v for k, v in sorted(config.items()) if not k.startswith("_")}
    payload = "\n".join(f"{k} = {v}" for k, v in visible.items())
    digest = hashlib.sha256(payload.encode("utf-8")).hexdigest()
    with open(os.path.join(destination, f"manifest_{command}.txt"), "w",
              encoding="utf-8") as handle:
        handle.write(f"command = {command}\n")
        handle.write(f"version = {__version__}\n")
        handle.write(f"config_sha256 = {digest}\n")
        handle.write(payload + "\n")


def load_inputs(config):
    hierarchy = load_hierarchy(resolve_path(config, "hierarchy"))
    split = config.get("split_year")
    portfolio = load_portfolio(resolve_path(config, "portfolio"), hierarchy,
                               split_year=int(split) if split else None)
    return portfolio, hierarchy


def load_embeddings(config):
    tables = {}
    for key in sorted(config):
        if key.startswith("embeddings."):
            name = key.split(".", 1)[1]
            tables[name] = load_embedding_table(resolve_path(config, key),
                                                encoder_name=name)
    if not tables:
        raise ConfigError("no embeddings.<encoder> entries in the config")
    return tables


def build_grids(config, hierarchy, encoders) -> list[LevelGrid]:
    grids = [LevelGrid(1, parse_grid(config["level1_grid"]), tuple(encoders))]
    if hierarchy.level_count >= 2:
        grids.append(LevelGrid(2, parse_grid(config["level2_grid"]), tuple(encoders)))
    return grids


# --- subcommands -----------------------------------------------------------------


def cmd_simulate(config) -> int:
    destination = out_dir(config)
    overrides = {}
    for field in fields(GeneratorSpec):
        key = f"sim.{field.name}"
        if key in config:
            raw = config[key]
            if field.name == "encoder_noise":
                overrides[field.name] = tuple(float(v) for v in raw.split(","))
            else:
                overrides[field.name] = type(getattr(GeneratorSpec, field.name))(raw)
    if "seed" in config:
        overrides["seed"] = int(config["seed"])
    spec = GeneratorSpec(**overrides)
    data = generate(spec)
    paths = write_synthetic(data, destination)

    run_cfg = os.path.join(destination, "run.cfg")
    with open(run_cfg, "w", encoding="utf-8") as handle:
        handle.write(f"portfolio = {os.path.basename(paths['portfolio'])}\n")
        handle.write(f"hierarchy = {os.path.basename(paths['hierarchy'])}\n")
        for name in sorted(data.embeddings):
            handle.write(f"embeddings.{name} = embeddings_{name}.csv\n")
        handle.write(f"split_year = {spec.split_year}\n")
        for key, value in DEFAULTS.items():
            handle.write(f"{key} = {config.get(key, value)}\n")
        handle.write(f"seed = {config.get('seed', spec.seed)}\n")
        handle.write("out = .\n")
        handle.write(f"solution = solution.csv\n")
    write_manifest(config, "simulate", destination)
    print(f"wrote synthetic data and {run_cfg}")
    return 0


def _pipeline_settings(config):
    algorithm = config.get("algorithm", DEFAULTS["algorithm"])
    index = config.get("index", DEFAULTS["index"])
    variant = config.get("variant", DEFAULTS["variant"])
    linkage = config.get("linkage", DEFAULTS["linkage"])
    if algorithm not in ALGORITHMS:
        raise ConfigError(f"algorithm must be one of {ALGORITHMS}, got {algorithm!r}")
    if index not in DIRECTIONS:
        raise ConfigError(f"index must be one of {tuple(DIRECTIONS)}, got {index!r}")
    if variant not in VARIANTS:
        raise ConfigError(f"variant must be one of {VARIANTS}, got {variant!r}")
    try:
        min_mass = float(config.get("min_mass", DEFAULTS["min_mass"]))
    except ValueError:
        raise ConfigError(f"min_mass {config.get('min_mass')!r} is not a number") from None
    return algorithm, index, variant, linkage, min_mass


def cmd_features(config) -> int:
    destination = out_dir(config)
    portfolio, hierarchy = load_inputs(config)
    train = portfolio.train()
    by1 = lambda r: r.path.codes[0]
    dr1 = fit_damage_rate_lmm(train, by1)
    cf1 = fit_frequency_poisson(train, by1)
    write_effects(dr1, cf1, os.path.join(destination, "effects_l1.csv"))
    write_variance_components(dr1, cf1,
                              os.path.join(destination, "variance_components_l1.csv"))
    if hierarchy.level_count >= 2:
        by2 = lambda r: r.path.codes[1]
        dr2 = fit_damage_rate_lmm(train, by1, by2)
        cf2 = fit_frequency_poisson(train, by1, by2)
        write_effects(dr2, cf2, os.path.join(destination, "effects_l2.csv"))
        write_variance_components(dr2, cf2,
                                  os.path.join(destination, "variance_components_l2.csv"))
    write_manifest(config, "features", destination)
    print(f"wrote engineered features to {destination}")
    return 0


def cmd_cluster(config) -> int:
    destination = out_dir(config)
    seed = require_seed(config)
    portfolio, hierarchy = load_inputs(config)
    tables = load_embeddings(config)
    algorithm, index, variant, linkage, min_mass = _pipeline_settings(config)
    grids = build_grids(config, hierarchy, sorted(tables))
    solution = reduce_hierarchy(portfolio, tables, algorithm=algorithm,
                                index_name=index, variant=variant, grids=grids,
                                min_mass=min_mass, seed=seed, linkage=linkage,
                                kmeans_restarts=int(config.get("kmeans_restarts",
                                                               DEFAULTS["kmeans_restarts"])),
                                spectral_restarts=int(config.get("spectral_restarts",
                                                                 DEFAULTS["spectral_restarts"])))
    write_solution(solution, os.path.join(destination, "solution.csv"))
    write_grid_log(solution, os.path.join(destination, "grid_log.csv"))
    with open(os.path.join(destination, "solution_meta.txt"), "w",
              encoding="utf-8") as handle:
        meta = solution.metadata
        for key in ("algorithm", "index", "variant", "linkage", "seed", "min_mass"):
            handle.write(f"{key} = {meta[key]}\n")
        for key, chosen in sorted(meta["chosen"].items()):
            handle.write(f"chosen.{key} = encoder={chosen['encoder']} k={chosen['k']}\n")
        if meta.get("level_dropped"):
            handle.write(f"level_dropped = {meta['level_dropped']}\n")
        for note in meta["notes"]:
            handle.write(f"note = {note}\n")
    write_manifest(config, "cluster", destination)
    print(f"wrote clustering solution to {destination}")
    return 0


def cmd_evaluate(config) -> int:
    destination = out_dir(config)
    portfolio, _ = load_inputs(config)
    solution = load_solution(resolve_path(config, "solution"))
    report = evaluate_solution(portfolio, solution)
    write_report(report, os.path.join(destination, "report.txt"))
    write_manifest(config, "evaluate", destination)
    print(f"wrote evaluation report to {destination}")
    return 0


def cmd_report(config) -> int:
    destination = out_dir(config)
    portfolio, hierarchy = load_inputs(config)
    solution = load_solution(resolve_path(config, "solution"))

    # sunburst rows: per original category at each level, its mass share and
    # the capped log of the weighted average damage rate
    with open(os.path.join(destination, "sunburst.csv"), "w", newline="",
              encoding="utf-8") as handle:
        writer = csv.writer(handle)
        writer.writerow(["level", "code", "parent", "grouped_id", "mass",
                         "avg_damage_rate_display"])
        for level in range(hierarchy.level_count):
            stats = category_stats(portfolio.records,
                                   key=lambda r, l=level: r.path.codes[l])
            transformed = display_transform([s.avg_damage_rate for s in stats])
            for stat, value in zip(stats, transformed):
                parent = ("" if level == 0
                          else hierarchy.parent_code(level, stat.key))
                writer.writerow([level + 1, stat.key, parent,
                                 solution.group_of(level, stat.key),
                                 format_number(stat.mass), format_number(float(value))])

    # scatter rows: original-structure random effects joined with the grouping
    effects_path = resolve_path(config, "effects", required=False)
    if effects_path is None:
        candidate = os.path.join(destination, "effects_l1.csv")
        effects_path = candidate if os.path.exists(candidate) else None
    if effects_path:
        with open(effects_path, newline="", encoding="utf-8") as handle:
            rows = list(csv.reader(handle))[1:]
        with open(os.path.join(destination, "scatter.csv"), "w", newline="",
                  encoding="utf-8") as handle:
            writer = csv.writer(handle)
            writer.writerow(["category", "effect_dr", "effect_cf", "grouped_id"])
            for code, dr, cf in rows:
                writer.writerow([code, dr, cf, solution.group_of(0, code)])

    report_path = os.path.join(destination, "report.txt")
    with open(os.path.join(destination, "summary.txt"), "w", encoding="utf-8") as handle:
        handle.write(f"levels = {hierarchy.level_count}\n")
        for level in range(len(solution.level_maps)):
            handle.write(f"groups_level{level + 1} = {solution.grouped_count(level)}\n")
            handle.write(f"original_level{level + 1} = {len(solution.level_maps[level])}\n")
        if os.path.exists(report_path):
            handle.write(open(report_path, encoding="utf-8").read())
    write_manifest(config, "report", destination)
    print(f"wrote report tables to {destination}")
    return 0


def cmd_sweep(config) -> int:
    destination = out_dir(config)
    seed = require_seed(config)
    portfolio, hierarchy = load_inputs(config)
    tables = load_embeddings(config)
    _, _, variant, linkage, min_mass = _pipeline_settings(config)
    grids = build_grids(config, hierarchy, sorted(tables))

    def score(solution):
        report = evaluate_solution(portfolio, solution)
        train = portfolio.train()
        fit = calibrate_intercept(fit_evaluation_model(train, solution), train, solution)
        predictions = predict_damage_rates(fit, solution, train.records)
        train_ratio = loss_ratio(predictions,
                                 [r.claim_amount for r in train.records],
                                 [r.salary_mass for r in train.records])
        return report, train_ratio

    rows = []
    benchmark = build_benchmark(portfolio, min_mass)
    report, train_ratio = score(benchmark)
    rows.append(("benchmark", "", report, train_ratio, benchmark.total_grouped()))
    for algorithm in SWEEP_ALGORITHMS:
        for index in SWEEP_INDICES:
            solution = reduce_hierarchy(
                portfolio, tables, algorithm=algorithm, index_name=index,
                variant=variant, grids=grids, min_mass=min_mass, seed=seed,
                linkage=linkage,
                kmeans_restarts=int(config.get("kmeans_restarts",
                                               DEFAULTS["kmeans_restarts"])),
                spectral_restarts=int(config.get("spectral_restarts",
                                                 DEFAULTS["spectral_restarts"])))
            cell_dir = os.path.join(destination, "sweep", f"{algorithm}_{index}")
            os.makedirs(cell_dir, exist_ok=True)
            write_solution(solution, os.path.join(cell_dir, "solution.csv"))
            write_grid_log(solution, os.path.join(cell_dir, "grid_log.csv"))
            report, train_ratio = score(solution)
            rows.append((algorithm, index, report, train_ratio,
                         solution.total_grouped()))

    with open(os.path.join(destination, "comparison.csv"), "w", newline="",
              encoding="utf-8") as handle:
        writer = csv.writer(handle)
        writer.writerow(["algorithm", "index", "J_prime", "sum_K_prime",
                         "total_grouped", "gini_train", "gini_test",
                         "loss_ratio_train", "loss_ratio_test"])
        for algorithm, index, report, train_ratio, total in rows:
            writer.writerow([
                algorithm, index, report.J_prime,
                "" if report.sum_K_prime is None else report.sum_K_prime,
                total, format_number(report.gini_train),
                "" if report.gini_test is None else format_number(report.gini_test),
                format_number(train_ratio),
                "" if report.loss_ratio_test is None else format_number(report.loss_ratio_test)])
    write_manifest(config, "sweep", destination)
    print(f"wrote sweep comparison to {destination}")
    return 0


COMMANDS = {"simulate": cmd_simulate, "features": cmd_features,
            "cluster": cmd_cluster, "evaluate": cmd_evaluate,
            "report": cmd_report, "sweep": cmd_sweep}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="hierrisk",
        description="Reduce a hierarchical categorical risk factor by "
                    "clustering similar categories level by level.")
    parser.add_argument("command", choices=sorted(COMMANDS))
    parser.add_argument("--config", help="flat key = value configuration file")
    parser.add_argument("--seed", type=int)
    parser.add_argument("--algorithm", help=f"one of {', '.join(ALGORITHMS)}")
    parser.add_argument("--index", help=f"one of {', '.join(DIRECTIONS)}")
    parser.add_argument("--variant", help=f"one of {', '.join(VARIANTS)}")
    parser.add_argument("--min-mass", type=float, dest="min_mass")
    parser.add_argument("--out")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        config = load_config_file(args.config) if args.config else {"_base": os.getcwd()}
        for key in ("seed", "algorithm", "index", "variant", "min_mass", "out"):
            value = getattr(args, key)
            if value is not None:
                config[key] = str(value)
        return COMMANDS[args.command](config)
    except ConfigError as exc:
        print(f"ERROR {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2
    except DataError as exc:
        print(f"ERROR {type(exc).__name__}: {exc}", file=sys.stderr)
        return 3
    except (NumericError, HierriskError) as exc:
        print(f"ERROR {type(exc).__name__}: {exc}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
