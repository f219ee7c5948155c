"""Acceptance suite: ten end-to-end correctness gates, one test per criterion.

Heavier criteria build small planted synthetic worlds and run the full model
selection / recommendation machinery; the stated runtime budgets are asserted.
"""

import json
import time
from pathlib import Path

import numpy as np
import pytest
import scipy.stats

from cellscreen.cli import main as cli_main
from cellscreen.data import (
    Combo,
    EncodingOptions,
    FEATURE_TYPE_ORDER,
    FeatureMatrix,
    FeatureType,
    GeneSet,
    enumerate_combos,
)
from cellscreen.drs import (
    DrsConfig,
    DrsInputs,
    EpsilonPolicy,
    TopNPolicy,
    epsilon_star,
    evaluate,
    policy_epsilon,
    recommend_loo,
)
from cellscreen.learners import HyperparameterGrid
from cellscreen.learners.common import Scaler
from cellscreen.learners.elastic_net import fit_elastic_net
from cellscreen.learners.forest import fit_random_forest
from cellscreen.learners.svr import fit_svr_rbf
from cellscreen.mas import (
    BestConfig,
    MasInputs,
    MasRunConfig,
    _UnivariateBuilder,
    generate_random_gene_sets,
    run_mas,
)
from cellscreen.splits import SplitPlan, make_split_plan, r2, tune_and_evaluate
from cellscreen.stats import ranksum_test, spearman
from cellscreen.synthetic import (
    DrugSpec,
    SyntheticSpec,
    generate,
    gene_names,
    random_drug_specs,
)


def test_01_metric_oracle():
    start = time.monotonic()
    y = np.array([3.0, 1.0, 4.0, 1.0, 5.0])
    assert r2(y, y) == pytest.approx(1.0, abs=1e-12)
    assert r2(y, np.full(5, y.mean())) == pytest.approx(0.0, abs=1e-12)
    assert r2(y, 2 * y.mean() - y) == pytest.approx(-3.0, abs=1e-12)
    assert time.monotonic() - start < 1.0


def test_02_combo_count():
    six_sets = [GeneSet(f"s{i}", frozenset({"g"})) for i in range(6)]
    assert len(enumerate_combos(six_sets, FEATURE_TYPE_ORDER)) == 342
    for k in (1, 2, 6):
        for t in (1, 2, 3):
            sets = [GeneSet(f"s{i}", frozenset({"g"})) for i in range(k)]
            combos = enumerate_combos(sets, FEATURE_TYPE_ORDER[:t])
            assert len(combos) == (k + 1) ** t - 1


def test_03_learner_correctness():
    start = time.monotonic()
    # elastic net mixing = 0 against the ridge closed form
    for seed in range(20):
        rng = np.random.default_rng(seed)
        X = rng.standard_normal((20, 5))
        y = X @ rng.standard_normal(5) + 0.1 * rng.standard_normal(20)
        model = fit_elastic_net(X, [f"x{j}" for j in range(5)], y, penalty=0.4, mixing=0.0)
        Z = Scaler.fit(X).transform(X)
        closed = np.linalg.solve(Z.T @ Z / 20 + 0.4 * np.eye(5), Z.T @ (y - y.mean()) / 20)
        np.testing.assert_allclose(model.coef, closed, atol=1e-6)
    # single-feature lasso against the soft-threshold closed form
    rng = np.random.default_rng(100)
    for _ in range(10):
        X = rng.standard_normal((40, 1))
        y = 1.5 * X[:, 0] + rng.standard_normal(40)
        penalty = float(rng.uniform(0.05, 1.0))
        model = fit_elastic_net(X, ["x"], y, penalty=penalty, mixing=1.0)
        c = float(Scaler.fit(X).transform(X)[:, 0] @ (y - y.mean())) / 40
        assert model.coef[0] == pytest.approx(
            np.sign(c) * max(abs(c) - penalty, 0.0), abs=1e-8
        )
    # SVR KKT residuals
    for seed in range(10):
        rng = np.random.default_rng(200 + seed)
        X = rng.standard_normal((50, 4))
        y = np.sin(X[:, 0]) + 0.3 * X[:, 1] + 0.05 * rng.standard_normal(50)
        model = fit_svr_rbf(X, [f"x{j}" for j in range(4)], y, C=10.0, gamma=0.5, tube=0.01)
        assert model.kkt_gap() <= 1e-3
    # random forest recovers a planted step threshold
    rng = np.random.default_rng(300)
    X = rng.uniform(-1, 1, size=(200, 3))
    y = np.where(X[:, 0] > 0.3, 1.0, 0.0)
    model = fit_random_forest(X, ["a", "b", "c"], y, n_trees=50, max_features=1.0)
    grid = np.column_stack([np.linspace(-1, 1, 801), np.zeros(801), np.zeros(801)])
    pred = model.predict(grid, ["a", "b", "c"])
    crossing = grid[np.argmin(np.abs(pred - 0.5)), 0]
    assert abs(crossing - 0.3) <= 0.05
    assert time.monotonic() - start < 30.0


def test_04_statistics_oracles():
    assert ranksum_test(np.array([1.0, 2.0]), np.array([3.0, 4.0])) == pytest.approx(
        1 / 3, abs=1e-12
    )
    assert ranksum_test(
        np.array([5.0, 6.0, 7.0]), np.array([1.0, 2.0, 3.0])
    ) == pytest.approx(0.1, abs=1e-12)
    rng = np.random.default_rng(0)
    checked = 0
    while checked < 100:
        n = int(rng.integers(3, 50))
        x = np.round(rng.standard_normal(n), 1)
        y = np.round(rng.standard_normal(n), 1)
        if np.all(x == x[0]) or np.all(y == y[0]):
            continue
        rx = scipy.stats.rankdata(x, method="average")
        ry = scipy.stats.rankdata(y, method="average")
        oracle = np.corrcoef(rx, ry)[0, 1]
        assert abs(spearman(x, y) - oracle) < 1e-10
        checked += 1


def _leakage_world():
    spec = SyntheticSpec(
        n_cell_lines=70, n_genes=25,
        drugs=random_drug_specs(5, 4, 25, seed=2),
        seed=17, noise_sigma=0.15,
    )
    return spec, generate(spec)


def test_05_leakage_invariants():
    start = time.monotonic()
    spec, world = _leakage_world()

    # (a) univariate selection ignores holdout rows entirely
    expr = world.matrices[FeatureType.EXPRESSION]
    cells = list(expr.cell_line_ids)
    train = cells[:50]
    y = {c: world.auc[spec.drugs[0].name].get(c, 0.5) for c in cells}
    perturbed_values = expr.values.copy()
    perturbed_values[50:] += 50.0
    for values in (expr.values, perturbed_values):
        matrices = {
            FeatureType.EXPRESSION: FeatureMatrix(
                FeatureType.EXPRESSION, expr.cell_line_ids, expr.gene_ids, values
            )
        }
        builder = _UnivariateBuilder(
            Combo({FeatureType.EXPRESSION: "univariate"}),
            matrices, y, k=5, cell_lines=cells, options=EncodingOptions(),
        )
        design = builder(train)
        if values is expr.values:
            baseline_cols, baseline_rows = design.column_names, design.rows(train)
    assert design.column_names == baseline_cols
    np.testing.assert_array_equal(design.rows(train), baseline_rows)

    # (b) tuning and fitting ignore holdout responses
    drug = spec.drugs[0].name
    ids = sorted(set(world.auc[drug]) & set(cells))
    plan = SplitPlan(n_outer=3, n_inner=2, seed=1)
    grid = HyperparameterGrid("elastic_net", {"penalty": [0.1, 0.01], "mixing": [0.5]})
    planted = world.gene_sets[f"planted_{drug}"]
    genes = sorted(g for g in planted.genes if expr.has_gene(g))
    cols = [expr.gene_index(g) for g in genes]

    def builder(train_ids):
        from cellscreen.data import DesignMatrix
        return DesignMatrix(
            tuple(ids), tuple(f"expr:{g}" for g in genes), expr.values[:, cols][
                [expr.row_index(c) for c in ids]
            ],
        )

    responses = {c: world.auc[drug][c] for c in ids}
    base = tune_and_evaluate(builder, responses, "elastic_net", grid, plan, ids)
    splits = make_split_plan(plan, ids)
    corrupted = dict(responses)
    for k, c in enumerate(splits[0].holdout_ids):
        corrupted[c] = (k % 7) / 10.0  # junk, but non-constant
    rerun = tune_and_evaluate(builder, corrupted, "elastic_net", grid, plan, ids)
    # only loop 0's holdout was corrupted; its cells are legitimate training
    # rows in the other loops, so invariance is asserted for loop 0 alone
    assert base.chosen_params[0] == rerun.chosen_params[0]
    for (i1, _, p1), (i2, _, p2) in zip(base.predictions[0], rerun.predictions[0]):
        assert i1 == i2 and p1 == pytest.approx(p2, abs=1e-12)

    # (c) a cell line's Dr.S predictions ignore its own response row
    best = {
        d.name: BestConfig(
            "elastic_net", f"expr:planted_{d.name}|mut:none|cnum:none",
            {"penalty": 0.01, "mixing": 0.5}, 0.9,
        )
        for d in spec.drugs
    }
    config = DrsConfig(mas_best=best, policy=TopNPolicy(1),
                       min_drugs_per_cell_line=5, min_training=30, seed=3)
    inputs = DrsInputs(
        matrices=world.matrices, gene_sets=world.gene_sets,
        dose_tables=world.dose_tables, tissue_labels=world.tissue_labels,
    )
    base_run = recommend_loo(config, inputs)
    cell = sorted(base_run.recommendations)[0]
    corrupted_tables = {}
    for drug_name, table in world.dose_tables.items():
        v = table.viabilities.copy()
        for i, c in enumerate(table.cell_line_ids):
            if c == cell:
                v[i] = np.clip(1.0 - v[i], 0.0, 1.0)
        corrupted_tables[drug_name] = type(table)(
            drug_id=table.drug_id, cell_line_ids=table.cell_line_ids, viabilities=v
        )
    rerun_run = recommend_loo(
        config,
        DrsInputs(
            matrices=world.matrices, gene_sets=world.gene_sets,
            dose_tables=corrupted_tables, tissue_labels=world.tissue_labels,
        ),
    )
    for (d1, v1), (d2, v2) in zip(
        base_run.recommendations[cell].ranking, rerun_run.recommendations[cell].ranking
    ):
        assert d1 == d2 and v1 == pytest.approx(v2, abs=1e-12)

    assert time.monotonic() - start < 120.0


def test_06_planted_signal_recovery():
    start = time.monotonic()
    recovered = []
    best_r2 = []
    for seed in range(10):
        drugs = random_drug_specs(5, 20, 500, seed=1000 + seed)
        spec = SyntheticSpec(
            n_cell_lines=300, n_genes=500, drugs=drugs, seed=seed, noise_sigma=0.1
        )
        world = generate(spec)
        gene_sets = dict(world.gene_sets)
        decoy = generate_random_gene_sets(gene_names(500), [30], 1, seed=seed)[0]
        gene_sets[decoy.name] = decoy
        config = MasRunConfig(
            algorithms=("elastic_net",),
            plan=SplitPlan(n_outer=5, n_inner=2),
            grids={
                "elastic_net": HyperparameterGrid(
                    "elastic_net", {"penalty": [0.1, 0.01], "mixing": [0.5]}
                )
            },
            feature_types=(FeatureType.EXPRESSION,),
            min_cell_lines=30,
            seed=seed,
        )
        inputs = MasInputs(
            matrices={FeatureType.EXPRESSION: world.matrices[FeatureType.EXPRESSION]},
            gene_sets=gene_sets,
            responses=world.auc,
        )
        result = run_mas(config, inputs, workers=4)
        for drug, res in result.per_drug.items():
            assert res.best is not None
            recovered.append(f"planted_{drug}" in res.best.combo_id)
            best_r2.append(res.best.mean_r2)
    assert np.mean(recovered) >= 0.8
    assert np.mean(best_r2) >= 0.5

    # null world: no informative genes -> nothing learnable
    null_drugs = tuple(DrugSpec(f"null{d}", (), ()) for d in range(3))
    null_spec = SyntheticSpec(
        n_cell_lines=300, n_genes=500, drugs=null_drugs, seed=99, noise_sigma=0.1
    )
    null_world = generate(null_spec)
    null_sets = {
        s.name: s for s in generate_random_gene_sets(gene_names(500), [30], 2, seed=5)
    }
    null_config = MasRunConfig(
        algorithms=("elastic_net",),
        plan=SplitPlan(n_outer=5, n_inner=2),
        grids={
            "elastic_net": HyperparameterGrid(
                "elastic_net", {"penalty": [0.1, 0.01], "mixing": [0.5]}
            )
        },
        feature_types=(FeatureType.EXPRESSION,),
        seed=7,
    )
    null_inputs = MasInputs(
        matrices={FeatureType.EXPRESSION: null_world.matrices[FeatureType.EXPRESSION]},
        gene_sets=null_sets,
        responses=null_world.auc,
    )
    null_result = run_mas(null_config, null_inputs, workers=4)
    for res in null_result.per_drug.values():
        assert res.best.mean_r2 <= 0.05
    assert time.monotonic() - start < 600.0


def test_07_drs_vs_baselines():
    start = time.monotonic()
    drs_top1, tissue_top1, random_top1, random_ranks = [], [], [], []
    wins = 0
    for seed in range(20):
        drugs = random_drug_specs(10, 4, 40, seed=2000 + seed)
        spec = SyntheticSpec(
            n_cell_lines=200, n_genes=40, drugs=drugs, seed=seed,
            noise_sigma=0.15, n_tissues=4, tissue_effect=0.8,
        )
        world = generate(spec)
        best = {
            d.name: BestConfig(
                "elastic_net", f"expr:planted_{d.name}|mut:none|cnum:none",
                {"penalty": 0.01, "mixing": 0.5}, 0.9,
            )
            for d in drugs
        }
        config = DrsConfig(
            mas_best=best, policy=TopNPolicy(1),
            min_drugs_per_cell_line=10, min_training=30,
            encoding=EncodingOptions(include_tissue=True, tissue_labels=world.tissue_labels),
            seed=seed,
        )
        inputs = DrsInputs(
            matrices=world.matrices, gene_sets=world.gene_sets,
            dose_tables=world.dose_tables, tissue_labels=world.tissue_labels,
        )
        result = recommend_loo(config, inputs, workers=4)
        assert len(result.recommendations) == 200  # all cell lines eligible
        ev = evaluate(result, config, world.tissue_labels)
        drs_top1.append(ev.methods["drs"].top1_accuracy)
        tissue_top1.append(ev.methods["tissue"].top1_accuracy)
        random_top1.append(ev.methods["random"].top1_accuracy)
        random_ranks.append(ev.methods["random"].mean_true_rank)
        if ev.methods["drs"].top1_accuracy > ev.methods["tissue"].top1_accuracy:
            wins += 1
    assert wins >= 16
    assert np.mean(drs_top1) > np.mean(random_top1)
    assert np.mean(tissue_top1) > np.mean(random_top1)
    assert np.mean(random_ranks) == pytest.approx((10 + 1) / 2, abs=0.5)
    assert time.monotonic() - start < 900.0


def test_08_evaluation_curve_properties():
    rng = np.random.default_rng(0)
    # random rankings + truths: inclusion curve non-decreasing and ends at 1
    from cellscreen.drs import DrsRunResult, Recommendation

    drugs = [f"d{i}" for i in range(8)]
    recs, truth = {}, {}
    for i in range(40):
        cell = f"c{i:02d}"
        predicted = rng.random(8)
        truth[cell] = {d: float(v) for d, v in zip(drugs, rng.random(8))}
        ranking = tuple(sorted(zip(drugs, predicted), key=lambda kv: (kv[1], kv[0])))
        recs[cell] = Recommendation(cell, ranking, (ranking[0][0],), ())
    config = DrsConfig(
        mas_best={d: BestConfig("elastic_net", "expr:s", {}, 0.5) for d in drugs},
        policy=EpsilonPolicy(0.1), min_drugs_per_cell_line=8, seed=0,
    )
    ev = evaluate(DrsRunResult(recs, truth, []), config)
    for metrics in ev.methods.values():
        curve = metrics.inclusion_curve
        assert all(a <= b + 1e-12 for a, b in zip(curve, curve[1:]))
        assert curve[-1] == pytest.approx(1.0)

    # epsilon policy monotone in epsilon
    ranking = tuple(sorted(zip(drugs, rng.random(8)), key=lambda kv: kv[1]))
    previous = set()
    for eps in np.linspace(0, 1, 21):
        selected = set(policy_epsilon(ranking, float(eps)))
        assert previous <= selected
        previous = selected

    # epsilon-star: >= 0 always, zero exactly on true-best-tying recommendations
    for cell, metrics in ev.methods["drs"].epsilon_star.items():
        assert metrics >= 0
    nv = {"a": 0.0, "b": 0.0, "c": 0.3}
    assert epsilon_star(("a",), nv) == 0.0
    assert epsilon_star(("a", "b"), nv) == 0.0
    assert epsilon_star(("b", "c"), nv) > 0.0


def test_09_pipeline_determinism(tmp_path):
    config = {
        "seed": 11,
        "synth": {
            "n_cell_lines": 80, "n_genes": 25, "n_drugs": 6, "n_informative": 4,
            "noise_sigma": 0.15, "n_tissues": 2, "tissue_effect": 0.4,
        },
        "mas": {
            "algorithms": ["elastic_net"],
            "grids": {"elastic_net": {"penalty": [0.1, 0.01], "mixing": [0.5]}},
            "n_outer": 3, "n_inner": 2, "min_cell_lines": 30,
        },
        "drs": {
            "policy": {"kind": "epsilon", "epsilon": 0.025},
            "min_drugs_per_cell_line": 6, "min_training": 30,
        },
    }
    outputs = {}
    for run, workers in (("run_a", "1"), ("run_b", "4")):
        root = tmp_path / run
        root.mkdir()
        config_path = root / "config.json"
        config_path.write_text(json.dumps(config))
        assert cli_main(["synth", "--config", str(config_path), "--out", str(root / "world")]) == 0
        full = dict(config)
        full["data"] = json.loads((root / "world" / "config.example.json").read_text())["data"]
        full["data"]["mutation"] = None
        full["data"]["copy_number"] = None
        config_path.write_text(json.dumps(full))
        assert cli_main([
            "mas", "--config", str(config_path), "--workers", workers,
            "--out", str(root / "mas"),
        ]) == 0
        assert cli_main([
            "drs", "--config", str(config_path), "--workers", workers,
            "--mas-best", str(root / "mas" / "mas_best.json"),
            "--out", str(root / "drs"),
        ]) == 0
        results = root / "results"
        results.mkdir()
        for src, name in (
            (root / "mas", "mas_best.json"),
            (root / "mas", "gene_set_comparison.csv"),
            (root / "mas", "feature_importances.csv"),
            (root / "drs", "drs_eval.json"),
        ):
            (results / name).write_bytes((src / name).read_bytes())
        assert cli_main(["report", str(results), "--out", str(root / "report")]) == 0
        outputs[run] = {
            str(p.relative_to(root)): p.read_bytes()
            for p in root.rglob("*")
            # the manifest's wall-time field is the one legitimately
            # non-deterministic output, and config.example.json embeds the
            # absolute output directory; every data file must match
            if p.is_file()
            and p.name not in ("manifest.json", "config.json", "config.example.json")
        }
    assert outputs["run_a"].keys() == outputs["run_b"].keys()
    mismatched = [
        name for name in outputs["run_a"]
        if outputs["run_a"][name] != outputs["run_b"][name]
    ]
    assert mismatched == []


def test_10_encoding_robustness():
    genes = gene_names(60)
    drugs = tuple(
        DrugSpec(
            f"mut{d}",
            tuple(genes[d * 4 : d * 4 + 4]),
            (1.2, -1.0, 0.9, 1.1),
            informative_type=FeatureType.MUTATION,
        )
        for d in range(3)
    )
    spec = SyntheticSpec(
        n_cell_lines=200, n_genes=60, drugs=drugs, seed=8,
        noise_sigma=0.1, mutation_rate=0.35,
    )
    world = generate(spec)
    results = {}
    for binary in (True, False):
        config = MasRunConfig(
            algorithms=("elastic_net",),
            plan=SplitPlan(n_outer=4, n_inner=2),
            grids={
                "elastic_net": HyperparameterGrid(
                    "elastic_net", {"penalty": [0.1, 0.01], "mixing": [0.5]}
                )
            },
            encoding=EncodingOptions(binary_mutation=binary),
            feature_types=(FeatureType.MUTATION,),
            seed=21,
        )
        inputs = MasInputs(
            matrices={FeatureType.MUTATION: world.matrices[FeatureType.MUTATION]},
            gene_sets=world.gene_sets,
            responses=world.auc,
        )
        results[binary] = run_mas(config, inputs, workers=2)
    for drug in results[True].per_drug:
        binary_r2 = results[True].per_drug[drug].best.mean_r2
        categorical_r2 = results[False].per_drug[drug].best.mean_r2
        assert abs(binary_r2 - categorical_r2) < 0.05
