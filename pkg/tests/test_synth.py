"""Tests for synthetic dataset generation and persistence."""

from __future__ import annotations

import math

import numpy as np
import pytest

from feature_graph_lab.core.synth import (
    evaluate_truth,
    evaluate_truth_matrix,
    generate,
    load_dataset,
    noise_mae_floor,
    save_dataset,
    truth_expression,
)
from feature_graph_lab.core.dmie import parse_expression
from feature_graph_lab.errors import DatasetError, LabValidationError
from feature_graph_lab.models import SyntheticSpec


def test_canonical_truth_expression():
    """Test pairs come first, then unary terms."""
    expression = truth_expression(SyntheticSpec(p=2, q=2))
    assert expression.render() == "x0*x1 + x2*x3 + x4 + x5"


def test_explicit_truth_expression():
    spec = SyntheticSpec(p=1, q=2, truth="x1 + x0*x3 + x2")
    assert truth_expression(spec).terms == ((0, 3), (1,), (2,))


@pytest.mark.parametrize("truth", ["x0*x1*x2 + x3", "x0*x1 + x2", "x0 + x1 + x2 + x3", "x0*x1 + x1 + x2"])
def test_explicit_truth_must_match_counts(truth):
    with pytest.raises(DatasetError):
        truth_expression(SyntheticSpec(p=1, q=2, truth=truth))


def test_evaluate_truth():
    expression = parse_expression("x0*x1 + x2")
    assert evaluate_truth(expression, [2.0, 3.0, -1.0]) == 5.0


def test_evaluate_truth_index_out_of_range():
    with pytest.raises(LabValidationError):
        evaluate_truth(parse_expression("x0*x4"), [1.0, 2.0])


def test_evaluate_truth_matrix_matches_rows(small_dataset):
    values = evaluate_truth_matrix(small_dataset.truth, small_dataset.features[:20])
    expected = [evaluate_truth(small_dataset.truth, row) for row in small_dataset.features[:20]]
    np.testing.assert_allclose(values, expected, rtol=0, atol=1e-12)


def test_generate_shapes_and_split(small_dataset):
    assert small_dataset.features.shape == (400, 6)
    assert small_dataset.targets.shape == (400,)
    assert small_dataset.train_n == 280
    assert small_dataset.test_n == 120


def test_generate_is_deterministic(small_spec):
    a, b = generate(small_spec), generate(small_spec)
    np.testing.assert_array_equal(a.features, b.features)
    np.testing.assert_array_equal(a.targets, b.targets)


def test_feature_columns_do_not_depend_on_n():
    """Test a larger sample extends the same per-feature streams."""
    small = generate(SyntheticSpec(p=1, q=1, n=50))
    large = generate(SyntheticSpec(p=1, q=1, n=200))
    np.testing.assert_array_equal(small.features, large.features[:50])


def test_replicas_are_independent(small_spec):
    other = generate(small_spec.model_copy(update={"replica": 1}))
    base = generate(small_spec)
    assert not np.allclose(base.features, other.features)


def test_noise_scale(small_dataset):
    """Test the residual std matches noise_scale * std(f)."""
    noise = small_dataset.targets - evaluate_truth_matrix(small_dataset.truth, small_dataset.features)
    assert np.std(noise) == pytest.approx(0.1 * small_dataset.sigma_f, rel=0.2)


def test_noiseless_targets(noiseless_dataset):
    np.testing.assert_array_equal(
        noiseless_dataset.targets,
        evaluate_truth_matrix(noiseless_dataset.truth, noiseless_dataset.features),
    )


def test_noise_mae_floor(small_dataset):
    expected = 0.1 * small_dataset.sigma_f * math.sqrt(2 / math.pi)
    assert noise_mae_floor(small_dataset) == pytest.approx(expected)


def test_generate_too_few_rows():
    with pytest.raises(DatasetError):
        generate(SyntheticSpec(p=1, q=1, n=5))


def test_generate_without_features():
    with pytest.raises(DatasetError):
        generate(SyntheticSpec(p=0, q=0, n=100))


def test_spec_name():
    assert SyntheticSpec(p=2, q=2, n=10000).name == "p2_q2_n10000"
    assert SyntheticSpec(p=2, q=2, n=10000, replica=3).name.startswith("p2_q2_n10000_")


def test_save_and_load_dataset(tmp_path, small_dataset):
    """Test the CSV and sidecar reload bit-exactly."""
    csv_path, sidecar_path = save_dataset(small_dataset, tmp_path)

    assert csv_path.read_text(encoding="utf-8").splitlines()[0] == "x0,x1,x2,x3,x4,x5,y"
    assert sidecar_path.exists()

    loaded = load_dataset(csv_path)
    np.testing.assert_array_equal(loaded.features, small_dataset.features)
    np.testing.assert_array_equal(loaded.targets, small_dataset.targets)
    assert loaded.spec == small_dataset.spec
    assert loaded.truth == small_dataset.truth
    assert loaded.train_n == small_dataset.train_n


def test_load_missing_dataset(tmp_path):
    with pytest.raises(DatasetError):
        load_dataset(tmp_path / "nothing.csv")


def test_load_truncated_dataset(tmp_path, small_dataset):
    csv_path, _ = save_dataset(small_dataset, tmp_path)
    lines = csv_path.read_text(encoding="utf-8").splitlines()
    csv_path.write_text("\n".join(lines[:50]) + "\n", encoding="utf-8")

    with pytest.raises(DatasetError):
        load_dataset(csv_path)
