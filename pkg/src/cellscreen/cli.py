"""Command-line interface: synth, mas, drs, report.

Configuration is a single JSON file (see the generated ``config.example.json``)
whose sections mirror the subcommands. Exit codes: 0 success, 1 run produced
invalid results (e.g. too many failed holdout loops), 2 input/configuration
error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from pathlib import Path

from .data import (
    DataFormatError,
    EncodingOptions,
    FEATURE_TYPE_ORDER,
    FeatureType,
    load_feature_matrix,
    load_gene_set,
    load_tissue_labels,
)
from .dose import load_auc, load_dose_response
from .drs import (
    DrsConfig,
    DrsInputs,
    EpsilonPolicy,
    TopNPolicy,
    evaluate,
    recommend_loo,
)
from .learners import HyperparameterGrid, default_grid
from .manifest import write_manifest
from .mas import (
    MasInputs,
    MasRunConfig,
    compare_gene_set,
    aggregate_importances,
    generate_random_gene_sets,
    run_mas,
)
from . import outputs
from .report import render_report
from .splits import SplitPlan
from .synthetic import SyntheticSpec, generate, random_drug_specs, write_world

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_INVALID_RESULTS = 1
EXIT_INPUT_ERROR = 2

_INPUT_ERRORS = (
    DataFormatError,
    FileNotFoundError,
    IsADirectoryError,
    NotADirectoryError,
    json.JSONDecodeError,
    KeyError,
    TypeError,
    ValueError,
)

_DATA_KEYS = {
    "expression": FeatureType.EXPRESSION,
    "mutation": FeatureType.MUTATION,
    "copy_number": FeatureType.COPY_NUMBER,
}

DEFAULT_CONFIG = {
    "seed": 0,
    "data": {
        "expression": "data/expression.csv",
        "mutation": "data/mutation.csv",
        "copy_number": "data/copy_number.csv",
        "gene_sets_dir": "data/gene_sets",
        "tissue": "data/tissue.csv",
        "dose_response": "data/dose_response.csv",
        "auc": "data/auc.csv",
    },
    "mas": {
        "algorithms": ["elastic_net", "svr_rbf", "random_forest"],
        "grids": {},
        "n_outer": 10,
        "outer_holdout_fraction": 0.2,
        "n_inner": 5,
        "inner_validation_fraction": 0.2,
        "min_cell_lines": 30,
        "binary_mutation": False,
        "include_tissue": False,
        "univariate": False,
        "univariate_k": 263,
        "drugs": None,
        "random_gene_sets": None,
    },
    "drs": {
        "policy": {"kind": "top_n", "n": 1},
        "min_drugs_per_cell_line": 15,
        "min_training": 30,
        "binary_mutation": False,
        "include_tissue": False,
        "target_viability": 0.75,
    },
    "synth": {
        "n_cell_lines": 150,
        "n_genes": 60,
        "n_drugs": 8,
        "n_informative": 4,
        "link": "linear",
        "informative_type": "expression",
        "noise_sigma": 0.1,
        "n_tissues": 1,
        "tissue_effect": 0.0,
        "missingness": 0.0,
    },
}


def _load_config(path: str | None, seed_override: int | None) -> dict:
    if path is None:
        config = json.loads(json.dumps(DEFAULT_CONFIG))
    else:
        config = json.loads(Path(path).read_text(encoding="utf-8"))
        if not isinstance(config, dict):
            raise DataFormatError(f"{path}: config must be a JSON object")
    merged = json.loads(json.dumps(DEFAULT_CONFIG))
    for key, value in config.items():
        if isinstance(value, dict) and isinstance(merged.get(key), dict):
            merged[key].update(value)
        else:
            merged[key] = value
    if seed_override is not None:
        merged["seed"] = seed_override
    return merged


def _load_data(config: dict, need_responses: str | None):
    """Load matrices, gene sets, tissue labels and (optionally) responses."""
    data = config["data"]
    matrices = {}
    for key, ft in _DATA_KEYS.items():
        if data.get(key):
            matrices[ft] = load_feature_matrix(data[key], ft)
    if not matrices:
        raise DataFormatError("config supplies no feature matrix paths")
    gene_sets = {}
    if data.get("gene_sets_dir"):
        sets_dir = Path(data["gene_sets_dir"])
        if not sets_dir.is_dir():
            raise FileNotFoundError(f"gene set directory not found: {sets_dir}")
        for path in sorted(sets_dir.glob("*.txt")):
            gene_set = load_gene_set(path)
            gene_sets[gene_set.name] = gene_set
    tissue_labels = None
    if data.get("tissue"):
        tissue_labels = load_tissue_labels(data["tissue"])
    responses = None
    if need_responses == "auc":
        responses = load_auc(data["auc"])
    warnings = []
    for name in sorted(gene_sets):
        for ft, matrix in matrices.items():
            missing = sum(1 for g in gene_sets[name].genes if not matrix.has_gene(g))
            if missing:
                warnings.append(
                    f"gene set {name}: {missing} genes absent from the {ft.value} matrix"
                )
    return matrices, gene_sets, tissue_labels, responses, warnings


def _encoding(section: dict, tissue_labels) -> EncodingOptions:
    include_tissue = bool(section.get("include_tissue", False))
    if include_tissue and tissue_labels is None:
        raise DataFormatError("include_tissue requires a tissue labels file")
    return EncodingOptions(
        binary_mutation=bool(section.get("binary_mutation", False)),
        include_tissue=include_tissue,
        tissue_labels=tissue_labels if include_tissue else None,
    )


def _policy(section: dict):
    policy = section.get("policy", {"kind": "top_n", "n": 1})
    if policy.get("kind") == "top_n":
        return TopNPolicy(int(policy["n"]))
    if policy.get("kind") == "epsilon":
        return EpsilonPolicy(float(policy["epsilon"]))
    raise DataFormatError(f"unknown policy kind {policy.get('kind')!r}")


def cmd_synth(args: argparse.Namespace) -> int:
    started = time.monotonic()
    config = _load_config(args.config, args.seed)
    section = config["synth"]
    seed = int(config["seed"])
    drug_keys = ("n_drugs", "n_informative", "link", "informative_type")
    spec_fields = {k: v for k, v in section.items() if k not in drug_keys}
    drugs = random_drug_specs(
        n_drugs=int(section["n_drugs"]),
        n_informative=int(section["n_informative"]),
        n_genes=int(section["n_genes"]),
        seed=seed,
        link=section.get("link", "linear"),
        informative_type=FeatureType(section.get("informative_type", "expression")),
    )
    spec = SyntheticSpec(drugs=drugs, seed=seed, **spec_fields)
    world = generate(spec)
    out = Path(args.out)
    paths = write_world(world, out)
    example = dict(json.loads(json.dumps(DEFAULT_CONFIG)))
    example["seed"] = seed
    example["data"] = {
        "expression": str(paths["expression"]),
        "mutation": str(paths["mutation"]),
        "copy_number": str(paths["copy_number"]),
        "gene_sets_dir": str(paths["gene_sets"]),
        "tissue": str(paths["tissue"]),
        "dose_response": str(paths["dose_response"]),
        "auc": str(paths["auc"]),
    }
    (out / "config.example.json").write_text(
        json.dumps(example, indent=2, sort_keys=True), encoding="utf-8"
    )
    write_manifest(
        out / "manifest.json",
        command="synth",
        config=config,
        seed=seed,
        input_paths={"config": args.config} if args.config else {},
        warnings=[],
        wall_time_seconds=time.monotonic() - started,
    )
    print(f"synthetic world written to {out}")
    return EXIT_OK


def cmd_mas(args: argparse.Namespace) -> int:
    started = time.monotonic()
    config = _load_config(args.config, args.seed)
    section = config["mas"]
    seed = int(config["seed"])
    matrices, gene_sets, tissue_labels, responses, load_warnings = _load_data(
        config, need_responses="auc"
    )
    random_section = section.get("random_gene_sets")
    if random_section:
        universe = sorted(
            set.union(*(set(m.gene_ids) for m in matrices.values()))
        )
        for gene_set in generate_random_gene_sets(
            universe,
            [int(s) for s in random_section["sizes"]],
            int(random_section.get("count_per_size", 1)),
            int(random_section.get("seed", seed)),
        ):
            gene_sets[gene_set.name] = gene_set
    grids = {
        alg: HyperparameterGrid(alg, {k: list(v) for k, v in g.items()})
        for alg, g in section.get("grids", {}).items()
    }
    run_config = MasRunConfig(
        algorithms=tuple(section["algorithms"]),
        plan=SplitPlan(
            n_outer=int(section["n_outer"]),
            outer_holdout_fraction=float(section["outer_holdout_fraction"]),
            n_inner=int(section["n_inner"]),
            inner_validation_fraction=float(section["inner_validation_fraction"]),
        ),
        grids=grids,
        encoding=_encoding(section, tissue_labels),
        feature_types=tuple(ft for ft in FEATURE_TYPE_ORDER if ft in matrices),
        drugs=tuple(section["drugs"]) if section.get("drugs") else None,
        min_cell_lines=int(section["min_cell_lines"]),
        univariate=bool(section.get("univariate", False)),
        univariate_k=int(section.get("univariate_k", 263)),
        seed=seed,
    )
    inputs = MasInputs(
        matrices=matrices,
        gene_sets=gene_sets,
        responses=responses,
        tissue_labels=tissue_labels,
    )
    result = run_mas(run_config, inputs, workers=args.workers)
    warnings = load_warnings + result.warnings

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    outputs.save_mas_results(result, out / "mas_results.csv")
    best = {
        drug: res.best for drug, res in result.per_drug.items() if res.best is not None
    }
    outputs.save_mas_best(best, out / "mas_best.json")
    comparisons = {}
    for drug, res in result.per_drug.items():
        per_set = {}
        for name in sorted(gene_sets):
            try:
                per_set[name] = compare_gene_set(res, name)
            except ValueError as exc:
                warnings.append(f"drug {drug}: gene set comparison skipped ({exc})")
        comparisons[drug] = per_set
    outputs.save_gene_set_comparisons(comparisons, out / "gene_set_comparison.csv")
    importances = {}
    for drug, res in result.per_drug.items():
        agg = aggregate_importances(res)
        if agg is None:
            warnings.append(f"drug {drug}: no configuration provides importances")
        else:
            importances[drug] = agg
    outputs.save_feature_importances(importances, out / "feature_importances.csv")

    input_paths = {k: v for k, v in config["data"].items() if v and Path(v).is_file()}
    if args.config:
        input_paths["config"] = args.config
    write_manifest(
        out / "manifest.json",
        command="mas",
        config=config,
        seed=seed,
        input_paths=input_paths,
        warnings=warnings,
        wall_time_seconds=time.monotonic() - started,
    )
    print(f"mas outputs written to {out} ({len(result.per_drug)} drugs)")
    if not result.valid or any(
        res.best is None for res in result.per_drug.values()
    ):
        print("mas run invalid: see manifest warnings", file=sys.stderr)
        return EXIT_INVALID_RESULTS
    return EXIT_OK


def cmd_drs(args: argparse.Namespace) -> int:
    started = time.monotonic()
    config = _load_config(args.config, args.seed)
    section = config["drs"]
    seed = int(config["seed"])
    matrices, gene_sets, tissue_labels, _, load_warnings = _load_data(
        config, need_responses=None
    )
    dose_tables = load_dose_response(config["data"]["dose_response"])
    mas_best = outputs.load_mas_best(args.mas_best)
    run_config = DrsConfig(
        mas_best=mas_best,
        policy=_policy(section),
        min_drugs_per_cell_line=int(section["min_drugs_per_cell_line"]),
        min_training=int(section["min_training"]),
        encoding=_encoding(section, tissue_labels),
        target_viability=float(section.get("target_viability", 0.75)),
        seed=seed,
    )
    inputs = DrsInputs(
        matrices=matrices,
        gene_sets=gene_sets,
        dose_tables=dose_tables,
        tissue_labels=tissue_labels,
    )
    result = recommend_loo(run_config, inputs, workers=args.workers)
    evaluation = evaluate(result, run_config, tissue_labels)
    warnings = load_warnings + result.warnings

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    outputs.save_drs_recommendations(result, out / "drs_recommendations.csv")
    outputs.save_drs_eval(evaluation, out / "drs_eval.json")
    input_paths = {k: v for k, v in config["data"].items() if v and Path(v).is_file()}
    input_paths["mas_best"] = args.mas_best
    if args.config:
        input_paths["config"] = args.config
    write_manifest(
        out / "manifest.json",
        command="drs",
        config=config,
        seed=seed,
        input_paths=input_paths,
        warnings=warnings,
        wall_time_seconds=time.monotonic() - started,
    )
    print(
        f"drs outputs written to {out} "
        f"({evaluation.n_cell_lines} cell lines, "
        f"top-1 accuracy {evaluation.methods['drs'].top1_accuracy:.3f})"
    )
    if not result.recommendations:
        print("drs run produced no recommendations", file=sys.stderr)
        return EXIT_INVALID_RESULTS
    return EXIT_OK


def cmd_report(args: argparse.Namespace) -> int:
    started = time.monotonic()
    out = Path(args.out)
    written = render_report(args.results_dir, out)
    input_paths = {
        name: Path(args.results_dir) / name
        for name in (
            "mas_best.json",
            "gene_set_comparison.csv",
            "feature_importances.csv",
            "drs_eval.json",
        )
        if (Path(args.results_dir) / name).exists()
    }
    write_manifest(
        out / "manifest.json",
        command="report",
        config={"results_dir": str(args.results_dir)},
        seed=args.seed if args.seed is not None else 0,
        input_paths=input_paths,
        warnings=[],
        wall_time_seconds=time.monotonic() - started,
    )
    print(f"report: {len(written)} files written to {out}")
    return EXIT_OK


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="cellscreen",
        description=(
            "Drug-sensitivity model selection and leave-one-out drug "
            "recommendation over cell-line genomic features."
        ),
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p: argparse.ArgumentParser, config: bool = True) -> None:
        if config:
            p.add_argument("--config", help="JSON configuration file")
        p.add_argument("--seed", type=int, default=None, help="override the config seed")
        p.add_argument("--workers", type=int, default=1, help="worker process count")
        p.add_argument("--out", required=True, help="output directory")

    p_synth = sub.add_parser("synth", help="generate a synthetic data world")
    common(p_synth)
    p_synth.set_defaults(func=cmd_synth)

    p_mas = sub.add_parser("mas", help="run per-drug model selection")
    common(p_mas)
    p_mas.set_defaults(func=cmd_mas)

    p_drs = sub.add_parser("drs", help="run leave-one-out drug recommendation")
    common(p_drs)
    p_drs.add_argument("--mas-best", required=True, help="mas_best.json from a mas run")
    p_drs.set_defaults(func=cmd_drs)

    p_report = sub.add_parser("report", help="render plot data and figures")
    p_report.add_argument("results_dir", help="directory with mas/drs outputs")
    common(p_report, config=False)
    p_report.set_defaults(func=cmd_report)
    return parser


def main(argv: list[str] | None = None) -> int:
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except _INPUT_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT_ERROR


if __name__ == "__main__":
    sys.exit(main())
