import numpy as np
import pytest

from cellscreen.data import (
    EncodingOptions,
    FeatureMatrix,
    FeatureType,
    GeneSet,
)
from cellscreen.learners import HyperparameterGrid
from cellscreen.mas import (
    MasDrugResult,
    MasInputs,
    MasRunConfig,
    _UnivariateBuilder,
    aggregate_importances,
    compare_gene_set,
    generate_random_gene_sets,
    run_mas,
    univariate_select,
)
from cellscreen.data import Combo
from cellscreen.splits import EvaluationResult, SplitPlan
from cellscreen.synthetic import SyntheticSpec, generate, random_drug_specs


class TestUnivariateSelect:
    def test_expression_by_abs_spearman(self):
        rng = np.random.default_rng(0)
        y = np.linspace(0, 1, 30)
        X = np.column_stack([y, -y, rng.standard_normal(30)])
        chosen = univariate_select(
            FeatureType.EXPRESSION, X, ["pos", "neg", "noise"], y, k=2
        )
        assert set(chosen) == {"pos", "neg"}  # sign does not matter

    def test_mutation_by_ranksum(self):
        rng = np.random.default_rng(1)
        n = 40
        informative = np.zeros(n)
        informative[:20] = 1.0
        y = informative * 2.0 + 0.01 * rng.standard_normal(n)
        X = np.column_stack([informative, rng.integers(0, 2, n).astype(float)])
        chosen = univariate_select(FeatureType.MUTATION, X, ["hit", "rand"], y, k=1)
        assert chosen == ["hit"]

    def test_constant_gene_ranks_last(self):
        y = np.linspace(0, 1, 20)
        X = np.column_stack([np.ones(20), y])
        chosen = univariate_select(FeatureType.EXPRESSION, X, ["flat", "good"], y, k=1)
        assert chosen == ["good"]

    def test_tie_breaks_by_gene_id(self):
        y = np.linspace(0, 1, 20)
        X = np.column_stack([y, y])
        chosen = univariate_select(FeatureType.EXPRESSION, X, ["zz", "aa"], y, k=1)
        assert chosen == ["aa"]

    def test_k_exceeds_genes(self):
        with pytest.raises(ValueError, match="exceeds gene count"):
            univariate_select(
                FeatureType.EXPRESSION, np.ones((5, 1)), ["g"], np.arange(5.0), k=2
            )


class TestRandomGeneSets:
    def test_sizes_names_determinism(self):
        universe = [f"g{i}" for i in range(50)]
        sets = generate_random_gene_sets(universe, [5, 10], 2, seed=3)
        assert [s.name for s in sets] == [
            "random5_0", "random5_1", "random10_0", "random10_1"
        ]
        assert all(len(s.genes) == int(s.name.split("_")[0][6:]) for s in sets)
        again = generate_random_gene_sets(universe, [5, 10], 2, seed=3)
        assert [s.genes for s in sets] == [s.genes for s in again]

    def test_size_exceeds_universe(self):
        with pytest.raises(ValueError, match="exceeds universe"):
            generate_random_gene_sets(["a", "b"], [3], 1, seed=0)


def _ev(mean_values, params=None, importances=None):
    return EvaluationResult(
        loop_r2=list(mean_values),
        chosen_params=[params or {"penalty": 0.1, "mixing": 0.5}] * len(mean_values),
        predictions=[[] for _ in mean_values],
        failed_loops=[],
        importances=importances,
    )


def _hand_result():
    """Two algorithms x three combos over sets a/b on expression only."""
    combos = ["expr:a", "expr:b", "expr:none|mut:a"]
    evaluations = {
        ("elastic_net", "expr:a"): _ev([0.8, 0.9]),
        ("elastic_net", "expr:b"): _ev([0.1, 0.2]),
        ("elastic_net", "expr:none|mut:a"): _ev([0.5, 0.6]),
        ("random_forest", "expr:a"): _ev([0.7, 0.7]),
        ("random_forest", "expr:b"): _ev([0.0, 0.1]),
        ("random_forest", "expr:none|mut:a"): _ev([0.3, 0.2]),
    }
    return MasDrugResult(
        drug="d",
        cell_lines=("c0",),
        combo_order=combos,
        evaluations=evaluations,
        best=None,
    )


class TestCompareGeneSet:
    def test_partition_and_usage(self):
        result = _hand_result()
        cmp_a = compare_gene_set(result, "a")
        # 'a' is used by expr:a and expr:none|mut:a for both algorithms
        assert sorted(cmp_a.with_values) == pytest.approx([0.25, 0.55, 0.7, 0.85])
        assert sorted(cmp_a.without_values) == pytest.approx([0.05, 0.15])
        # top-5 per algorithm covers all 3 combos; 'a' fills one slot in 2 of them
        assert cmp_a.usage_count == 4
        cmp_b = compare_gene_set(result, "b")
        assert cmp_b.usage_count == 2

    def test_absent_set_raises(self):
        with pytest.raises(ValueError, match="absent"):
            compare_gene_set(_hand_result(), "zzz")

    def test_p_value_symmetric_range(self):
        p = compare_gene_set(_hand_result(), "a").p_value
        assert 0 < p <= 1


class TestAggregateImportances:
    def test_loop_average_then_combo_average(self):
        imps_hi = [{"f1": 0.8, "f2": 0.2}, {"f1": 0.6, "f2": 0.4}]
        imps_lo = [{"f2": 1.0}, {"f2": 1.0}]
        result = MasDrugResult(
            drug="d",
            cell_lines=("c0",),
            combo_order=["expr:a", "expr:b"],
            evaluations={
                ("elastic_net", "expr:a"): _ev([0.9, 0.9], importances=imps_hi),
                ("elastic_net", "expr:b"): _ev([0.5, 0.5], importances=imps_lo),
            },
            best=None,
        )
        agg = aggregate_importances(result, top_k_combos=2)
        # combo a loop-average: f1 0.7, f2 0.3; combo b: f2 1.0; equal weights
        assert agg["f1"] == pytest.approx(0.35)
        assert agg["f2"] == pytest.approx(0.65)
        assert sum(agg.values()) == pytest.approx(1.0)

    def test_top_k_restricts(self):
        imps_hi = [{"f1": 1.0}]
        imps_lo = [{"f2": 1.0}]
        result = MasDrugResult(
            drug="d", cell_lines=("c0",),
            combo_order=["expr:a", "expr:b"],
            evaluations={
                ("elastic_net", "expr:a"): _ev([0.9], importances=imps_hi),
                ("elastic_net", "expr:b"): _ev([0.1], importances=imps_lo),
            },
            best=None,
        )
        agg = aggregate_importances(result, top_k_combos=1)
        assert agg == {"f1": 1.0}

    def test_none_when_no_importances(self):
        result = MasDrugResult(
            drug="d", cell_lines=("c0",), combo_order=["expr:a"],
            evaluations={("svr_rbf", "expr:a"): _ev([0.9], importances=None)},
            best=None,
        )
        assert aggregate_importances(result) is None


def _small_world(seed=7, n_drugs=2):
    spec = SyntheticSpec(
        n_cell_lines=80, n_genes=30,
        drugs=random_drug_specs(n_drugs, 4, 30, seed=3),
        seed=seed, noise_sigma=0.2,
    )
    return spec, generate(spec)


def _small_config(**overrides):
    fields = dict(
        algorithms=("elastic_net",),
        plan=SplitPlan(n_outer=3, n_inner=2),
        grids={
            "elastic_net": HyperparameterGrid(
                "elastic_net", {"penalty": [0.1, 0.01], "mixing": [0.5]}
            )
        },
        min_cell_lines=30,
        seed=11,
    )
    fields.update(overrides)
    return MasRunConfig(**fields)


class TestRunMas:
    def test_planted_combo_wins(self):
        _, world = _small_world()
        config = _small_config()
        inputs = MasInputs(
            matrices=world.matrices, gene_sets=world.gene_sets, responses=world.auc
        )
        result = run_mas(config, inputs)
        assert result.valid
        for drug, res in result.per_drug.items():
            assert res.best is not None
            assert f"planted_{drug}" in res.best.combo_id
            assert res.best.mean_r2 > 0.5

    def test_worker_count_invariance(self):
        _, world = _small_world()
        config = _small_config()
        inputs = MasInputs(
            matrices=world.matrices, gene_sets=world.gene_sets, responses=world.auc
        )
        serial = run_mas(config, inputs, workers=1)
        parallel = run_mas(config, inputs, workers=3)
        for drug in serial.per_drug:
            for key, ev in serial.per_drug[drug].evaluations.items():
                assert ev.loop_r2 == parallel.per_drug[drug].evaluations[key].loop_r2

    def test_min_cell_lines_skips_with_warning(self):
        _, world = _small_world()
        config = _small_config(min_cell_lines=500)
        inputs = MasInputs(
            matrices=world.matrices, gene_sets=world.gene_sets, responses=world.auc
        )
        result = run_mas(config, inputs)
        assert not result.per_drug
        assert all("skipped" in w for w in result.warnings)
        assert len(result.warnings) == len(world.auc)

    def test_response_out_of_range_rejected(self):
        _, world = _small_world()
        config = _small_config()
        responses = {d: dict(v) for d, v in world.auc.items()}
        first_drug = sorted(responses)[0]
        first_cell = sorted(responses[first_drug])[0]
        responses[first_drug][first_cell] = 1.5
        inputs = MasInputs(
            matrices=world.matrices, gene_sets=world.gene_sets, responses=responses
        )
        with pytest.raises(ValueError, match=r"\[0, 1\]"):
            run_mas(config, inputs)

    def test_zero_algorithms_rejected(self):
        with pytest.raises(ValueError, match="algorithm"):
            _small_config(algorithms=())

    def test_univariate_pseudo_combos_evaluated_but_never_best(self):
        _, world = _small_world()
        config = _small_config(univariate=True, univariate_k=10)
        inputs = MasInputs(
            matrices=world.matrices, gene_sets=world.gene_sets, responses=world.auc
        )
        result = run_mas(config, inputs)
        for res in result.per_drug.values():
            univ_keys = [k for k in res.evaluations if "univariate" in k[1]]
            assert univ_keys
            assert "univariate" not in res.best.combo_id


class TestUnivariateLeakage:
    def test_selection_ignores_non_training_rows(self):
        rng = np.random.default_rng(0)
        cells = tuple(f"c{i}" for i in range(20))
        genes = tuple(f"g{i}" for i in range(8))
        base = rng.standard_normal((20, 8))
        perturbed = base.copy()
        perturbed[15:] += 100.0  # rows outside the training ids
        y = {c: float(v) for c, v in zip(cells, rng.random(20))}
        train = list(cells[:15])
        designs = []
        for values in (base, perturbed):
            matrices = {
                FeatureType.EXPRESSION: FeatureMatrix(
                    FeatureType.EXPRESSION, cells, genes, values
                )
            }
            builder = _UnivariateBuilder(
                Combo({FeatureType.EXPRESSION: "univariate"}),
                matrices, y, k=3, cell_lines=list(cells), options=EncodingOptions(),
            )
            designs.append(builder(train))
        assert designs[0].column_names == designs[1].column_names
        np.testing.assert_array_equal(
            designs[0].rows(train), designs[1].rows(train)
        )
