"""Synthetic dataset generation with fixed seeding, noise and split conventions.

Random streams use numpy's PCG64 bit generator. Feature column j draws from
``SeedSequence(j, spawn_key=(FEATURE_STREAM, replica))`` and the noise column
from ``SeedSequence(0, spawn_key=(NOISE_STREAM, replica))``, so seed 0 of the
noise and seed 0 of feature x0 are distinct streams. Normal variates come from
``Generator.standard_normal`` (ziggurat method). Results are deterministic
within one numpy version; cross-language bit compatibility is not a goal.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ..errors import DatasetError, LabValidationError
from ..models import DmieExpression, SyntheticSpec
from .dmie import parse_expression

logger = logging.getLogger(__name__)

FEATURE_STREAM = 1
NOISE_STREAM = 2
MIN_ROWS = 10
GENERATOR_NAME = "numpy.PCG64/SeedSequence/standard_normal"


@dataclass(frozen=True)
class SyntheticDataset:
    """A generated sample with its provenance."""

    spec: SyntheticSpec
    truth: DmieExpression
    features: np.ndarray
    targets: np.ndarray
    sigma_f: float
    train_n: int

    @property
    def n(self) -> int:
        return self.features.shape[0]

    @property
    def d(self) -> int:
        return self.features.shape[1]

    @property
    def test_n(self) -> int:
        return self.n - self.train_n

    @property
    def train_features(self) -> np.ndarray:
        return self.features[: self.train_n]

    @property
    def train_targets(self) -> np.ndarray:
        return self.targets[: self.train_n]

    @property
    def test_features(self) -> np.ndarray:
        return self.features[self.train_n :]

    @property
    def test_targets(self) -> np.ndarray:
        return self.targets[self.train_n :]


def _stream(seed: int, stream: int, replica: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed, spawn_key=(stream, replica))))


def truth_expression(spec: SyntheticSpec) -> DmieExpression:
    """
    Ground-truth expression of a spec.

    Canonical layout: pairs (x0,x1), (x2,x3), ... then unary terms x{2p}, ...
    An explicit ``spec.truth`` must be pairwise, cover every feature, and have
    p pairs and q unary terms.
    """
    if spec.truth is None:
        terms = [(2 * i, 2 * i + 1) for i in range(spec.p)]
        terms += [(2 * spec.p + i,) for i in range(spec.q)]
        return DmieExpression(num_features=spec.d, terms=tuple(terms))

    try:
        expression = parse_expression(spec.truth, num_features=spec.d)
    except LabValidationError as e:
        raise DatasetError(f"Invalid truth expression: {e}") from e
    pairs = sum(1 for t in expression.terms if len(t) == 2)
    unary = sum(1 for t in expression.terms if len(t) == 1)
    if not expression.is_pairwise or pairs != spec.p or unary != spec.q:
        raise DatasetError(f"Truth {spec.truth!r} does not have {spec.p} pairs and {spec.q} unary terms")
    return expression


def evaluate_truth(expression: DmieExpression, row) -> float:
    """Sum over terms of the product of the row's entries at the term's indices."""
    values = np.asarray(row, dtype=np.float64)
    for term in expression.terms:
        if term[-1] >= values.shape[0]:
            raise LabValidationError(f"Term index {term[-1]} out of range for a row of {values.shape[0]}")
    return float(sum(math.prod(values[i] for i in term) for term in expression.terms))


def evaluate_truth_matrix(expression: DmieExpression, features: np.ndarray) -> np.ndarray:
    """Vectorized evaluate_truth over the rows of a matrix."""
    if expression.num_features > features.shape[1]:
        raise LabValidationError(
            f"Expression needs {expression.num_features} features, matrix has {features.shape[1]}"
        )
    total = np.zeros(features.shape[0])
    for term in expression.terms:
        total += np.prod(features[:, list(term)], axis=1)
    return total


def generate(spec: SyntheticSpec) -> SyntheticDataset:
    """
    Generate a dataset: draw X, evaluate f, then draw noise scaled by the empirical std of f.

    Raises:
        DatasetError: fewer than 10 rows, or an invalid truth expression.
    """
    if spec.n < MIN_ROWS:
        raise DatasetError(f"n={spec.n} is too small for a train/test split (need >= {MIN_ROWS})")
    if spec.d < 1:
        raise DatasetError("A dataset needs at least one feature")

    truth = truth_expression(spec)
    features = np.column_stack(
        [_stream(j, FEATURE_STREAM, spec.replica).standard_normal(spec.n) for j in range(spec.d)]
    )
    f = evaluate_truth_matrix(truth, features)
    sigma_f = float(np.std(f))
    noise = _stream(0, NOISE_STREAM, spec.replica).standard_normal(spec.n) * sigma_f
    targets = f + spec.noise_scale * noise

    train_n = int(spec.n * spec.train_fraction)
    logger.debug(f"Generated {spec.name}: d={spec.d}, sigma_f={sigma_f:.4f}, train={train_n}")
    return SyntheticDataset(
        spec=spec,
        truth=truth,
        features=features,
        targets=targets,
        sigma_f=sigma_f,
        train_n=train_n,
    )


def noise_mae_floor(dataset: SyntheticDataset) -> float:
    """MAE of the best possible predictor under the additive Gaussian noise: s * sigma_f * sqrt(2/pi)."""
    return dataset.spec.noise_scale * dataset.sigma_f * math.sqrt(2.0 / math.pi)


def save_dataset(dataset: SyntheticDataset, directory: Path) -> tuple[Path, Path]:
    """
    Write ``<name>.csv`` (x0..x{d-1}, y) and ``<name>.json`` sidecar.

    Returns:
        (csv path, sidecar path)
    """
    directory.mkdir(parents=True, exist_ok=True)
    name = dataset.spec.name
    csv_path = directory / f"{name}.csv"
    sidecar_path = directory / f"{name}.json"

    header = ",".join([f"x{j}" for j in range(dataset.d)] + ["y"])
    table = np.column_stack([dataset.features, dataset.targets])
    np.savetxt(csv_path, table, delimiter=",", header=header, comments="", fmt="%.17g", encoding="utf-8")

    sidecar = {
        "spec": dataset.spec.model_dump(mode="json"),
        "truth": dataset.truth.render(),
        "sigma_f": dataset.sigma_f,
        "train_n": dataset.train_n,
        "test_n": dataset.test_n,
        "generator": GENERATOR_NAME,
    }
    sidecar_path.write_text(json.dumps(sidecar, indent=2), encoding="utf-8")
    return csv_path, sidecar_path


def load_dataset(path: Path) -> SyntheticDataset:
    """Load a dataset from its CSV path (or the sidecar path next to it)."""
    csv_path = path.with_suffix(".csv")
    sidecar_path = path.with_suffix(".json")
    if not csv_path.exists() or not sidecar_path.exists():
        raise DatasetError(f"Dataset not found: {csv_path}")

    sidecar = json.loads(sidecar_path.read_text(encoding="utf-8"))
    spec = SyntheticSpec(**sidecar["spec"])
    table = np.loadtxt(csv_path, delimiter=",", skiprows=1, ndmin=2, encoding="utf-8")
    if table.shape != (spec.n, spec.d + 1):
        raise DatasetError(f"{csv_path} has shape {table.shape}, expected {(spec.n, spec.d + 1)}")
    return SyntheticDataset(
        spec=spec,
        truth=parse_expression(sidecar["truth"], num_features=spec.d),
        features=table[:, :-1],
        targets=table[:, -1],
        sigma_f=float(sidecar["sigma_f"]),
        train_n=int(sidecar["train_n"]),
    )
