"""Tests for two-part description lengths, the inequality checks and exhaustive selection."""

from __future__ import annotations

import csv
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from feature_graph_lab.core.fgraph import complete_graph, ground_truth_graph, null_graph
from feature_graph_lab.core.mdlselect import (
    ASSERTED_CHECKS,
    InequalityReport,
    LogMagnitudeCode,
    PairwiseModel,
    check_code_assumptions,
    check_inequalities,
    description_length,
    design_matrix,
    exhaustive_select,
    fit_pairwise,
    isolated_nodes,
    linear_baseline,
    model_bits,
    selection_candidates,
    total_bits,
    truth_recovered,
    verify_inequalities,
)
from feature_graph_lab.core.synth import generate, noise_mae_floor
from feature_graph_lab.errors import DatasetError, SelectionTooLargeError
from feature_graph_lab.models import FeatureGraph, SyntheticSpec

reals = st.floats(min_value=-1e6, max_value=1e6, allow_nan=False)


def test_log_magnitude_code_values():
    code = LogMagnitudeCode()
    np.testing.assert_allclose(code.bits(np.array([0.0, 1.0, -3.0, 7.0])), [0.0, 1.0, 2.0, 3.0])


def test_code_assumptions_on_random_pairs():
    """Test zero violations over 10^5 randomized pairs."""
    rng = np.random.default_rng(0)
    x = rng.normal(scale=rng.choice([0.01, 1.0, 100.0], size=100_000))
    y = x + rng.uniform(-2.0, 2.0, size=100_000)
    result = check_code_assumptions(LogMagnitudeCode(), x, y)

    assert result["pairs"] == 100_000
    assert result["bounded_pairs"] > 0
    assert result["subadditivity"] == 0
    assert result["monotonicity"] == 0
    assert result["bounded_difference"] == 0


@given(reals, reals)
def test_code_is_subadditive(x, y):
    code = LogMagnitudeCode()
    assert code.bits(x + y) <= code.bits(x) + code.bits(y) + 1e-9


@given(reals, st.floats(min_value=-1.0, max_value=1.0))
def test_code_bounded_difference(x, step):
    code = LogMagnitudeCode()
    assert abs(code.bits(x + step) - code.bits(x)) <= 1.0 + 1e-9


def test_isolated_nodes():
    assert isolated_nodes(FeatureGraph(num_features=5, edges=((0, 3),))) == [1, 2, 4]


def test_design_matrix_columns():
    """Test unary columns for isolated nodes come before one product column per edge."""
    features = np.arange(12.0).reshape(3, 4)
    matrix, keys = design_matrix(FeatureGraph(num_features=4, edges=((0, 2),)), features)

    assert keys == [1, 3, (0, 2)]
    np.testing.assert_array_equal(matrix[:, 0], features[:, 1])
    np.testing.assert_array_equal(matrix[:, 2], features[:, 0] * features[:, 2])


def test_fit_pairwise_recovers_noiseless_truth(noiseless_dataset):
    model = fit_pairwise(ground_truth_graph(noiseless_dataset.truth), noiseless_dataset.features, noiseless_dataset.targets)

    assert model.pairs == pytest.approx({(0, 1): 1.0})
    assert model.unary == pytest.approx({2: 1.0, 3: 1.0})
    np.testing.assert_allclose(model.predict(noiseless_dataset.features), noiseless_dataset.targets, atol=1e-10)


def test_fit_pairwise_standard_errors(small_dataset):
    model = fit_pairwise(ground_truth_graph(small_dataset.truth), small_dataset.features, small_dataset.targets)
    assert all(0 < se < 0.5 for se in model.pair_se.values())
    assert set(model.unary_se) == {4, 5}


def test_fit_pairwise_errors():
    with pytest.raises(DatasetError):
        fit_pairwise(FeatureGraph(num_features=0), np.zeros((5, 0)), np.zeros(5))
    with pytest.raises(DatasetError):
        fit_pairwise(complete_graph(6), np.ones((3, 6)), np.ones(3))
    with pytest.raises(DatasetError):
        fit_pairwise(null_graph(3), np.ones((5, 4)), np.ones(5))


def test_description_length_parts(small_dataset):
    report = description_length(null_graph(6), small_dataset.features, small_dataset.targets)

    assert report.num_edges == 0
    assert report.data_bits == pytest.approx(report.feature_bits + report.residual_bits)
    assert report.total_bits == pytest.approx(report.model_bits + report.data_bits)


def test_feature_bits_do_not_depend_on_graph(small_dataset):
    a = total_bits(null_graph(6), small_dataset)
    b = total_bits(complete_graph(6), small_dataset)
    assert a.feature_bits == b.feature_bits


def test_truth_is_shortest_among_references(noiseless_dataset):
    truth = total_bits(ground_truth_graph(noiseless_dataset.truth), noiseless_dataset)
    assert truth.total_bits < total_bits(null_graph(4), noiseless_dataset).total_bits
    assert truth.total_bits < total_bits(complete_graph(4), noiseless_dataset).total_bits


def test_check_inequalities_noiseless(noiseless_dataset):
    """Test every asserted inequality holds without noise."""
    results = dict(check_inequalities(noiseless_dataset, rng=np.random.default_rng(0)))

    for check in ASSERTED_CHECKS:
        assert results[check] is True, check


def test_verify_inequalities_noiseless_control():
    report = verify_inequalities(trials=6, d_max=7, n=300, noise_scale=0.0, seed=1)

    assert report.trials == 6
    assert report.max_abs_noise == 0.0
    assert set(report.asserted_pass_rates()) == set(ASSERTED_CHECKS)
    assert all(rate == 1.0 for rate in report.asserted_pass_rates().values())


def test_verify_inequalities_from_base_spec():
    """Test trials regenerate the given spec with increasing replicas."""
    spec = SyntheticSpec(p=1, q=2, n=300, noise_scale=0.05)
    report = verify_inequalities(trials=3, base_spec=spec)

    assert {trial for trial, _, _ in report.rows} == {0, 1, 2}
    assert report.max_abs_noise > 0.0
    assert report.summary()["epsilon_star"] == report.max_abs_noise


def test_inequality_report_csv(tmp_path):
    report = InequalityReport(rows=[(0, "truth_vs_null", True), (1, "truth_vs_null", False)], trials=2)
    path = report.write_csv(tmp_path / "out" / "checks.csv")

    with open(path, newline="", encoding="utf-8") as f:
        rows = list(csv.reader(f))
    assert rows == [["trial", "inequality", "pass"], ["0", "truth_vs_null", "1"], ["1", "truth_vs_null", "0"]]
    assert report.pass_rates() == {"truth_vs_null": 0.5}


def test_selection_candidates_d4():
    """Test 15 partition stars cover every degree-<=1 graph on 4 nodes."""
    candidates = selection_candidates(4)
    assert len(candidates) == 15
    assert len({g.edge_set for g in candidates}) == 15


@pytest.mark.parametrize("truth", ["x0*x1 + x2 + x3", "x0*x2 + x1 + x3", "x1*x3 + x0 + x2", "x0 + x1 + x2 + x3"])
def test_exhaustive_select_recovers_noiseless_truth(truth):
    spec = SyntheticSpec(p=truth.count("*"), q=4 - 2 * truth.count("*"), n=300, noise_scale=0.0, truth=truth)
    dataset = generate(spec)
    result = exhaustive_select(dataset)

    assert truth_recovered(result.graph, dataset.truth)
    assert result.candidates == 15


def test_exhaustive_select_too_large(small_dataset):
    with pytest.raises(SelectionTooLargeError):
        exhaustive_select(small_dataset, max_d=5)


def test_linear_baseline_above_noise_floor(small_dataset):
    mae, mse = linear_baseline(small_dataset)
    assert mae > noise_mae_floor(small_dataset)
    assert mse > 0


def test_truth_recovered(canonical_truth):
    assert truth_recovered(FeatureGraph(num_features=6, edges=((0, 1), (2, 3))), canonical_truth)
    assert not truth_recovered(FeatureGraph(num_features=6, edges=((0, 1),)), canonical_truth)


def test_code_subadditivity_instance():
    code = LogMagnitudeCode()
    assert code.bits(1.0) + code.bits(1.0) >= code.bits(2.0)
    assert code.bits(2.0) == pytest.approx(math.log2(3.0))


def test_fit_exact_recovery():
    features = np.random.default_rng(3).standard_normal((50, 2))
    model = fit_pairwise(FeatureGraph(num_features=2, edges=((0, 1),)), features, 2 * features[:, 0] * features[:, 1])
    assert model.pairs[(0, 1)] == pytest.approx(2.0, abs=1e-6)

    linear = fit_pairwise(null_graph(2), features, 3 * features[:, 0] + features[:, 1])
    assert linear.unary == pytest.approx({0: 3.0, 1: 1.0})


def test_complete_graph_spurious_pairs_small():
    """Test pairs absent from the truth fit to within three standard errors of zero."""
    dataset = generate(SyntheticSpec(p=2, q=0, n=2000, noise_scale=0.1))
    model = fit_pairwise(complete_graph(4), dataset.features, dataset.targets)

    assert model.pairs[(0, 1)] == pytest.approx(1.0, abs=0.05)
    assert model.pairs[(2, 3)] == pytest.approx(1.0, abs=0.05)
    spurious = [pair for pair in model.pairs if pair not in {(0, 1), (2, 3)}]
    assert sum(abs(model.pairs[p]) < 3 * model.pair_se[p] for p in spurious) >= len(spurious) - 1


@pytest.mark.slow
def test_inequality_suite_noisy():
    report = verify_inequalities(trials=50, d_max=8, n=2000, noise_scale=0.1, seed=0)

    for check, rate in report.asserted_pass_rates().items():
        assert rate >= 0.9, check


@pytest.mark.slow
def test_coefficients_within_three_standard_errors():
    hits = total = 0
    for replica in range(40):
        dataset = generate(SyntheticSpec(p=2, q=2, n=2000, replica=replica))
        model = fit_pairwise(ground_truth_graph(dataset.truth), dataset.features, dataset.targets)
        for key, coef in [*model.unary.items(), *model.pairs.items()]:
            se = model.unary_se[key] if isinstance(key, int) else model.pair_se[key]
            hits += abs(coef - 1.0) < 3 * se
            total += 1
    assert hits / total >= 0.95


@pytest.mark.slow
def test_exhaustive_selection_recovery_rate():
    rng = np.random.default_rng(11)
    recovered = 0
    for trial in range(40):
        order = [int(i) for i in rng.permutation(4)]
        truth = f"x{order[0]}*x{order[1]} + x{order[2]} + x{order[3]}"
        dataset = generate(SyntheticSpec(p=1, q=2, n=500, noise_scale=0.0, replica=trial, truth=truth))
        recovered += truth_recovered(exhaustive_select(dataset).graph, dataset.truth)
    assert recovered / 40 >= 0.95


def test_model_bits_null_graph():
    model = PairwiseModel(graph=null_graph(6), unary={i: 1.0 for i in range(6)}, pairs={})
    assert model_bits(model) == pytest.approx(6.0)
    assert LogMagnitudeCode().bits(3.0) == pytest.approx(2.0)
