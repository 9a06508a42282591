"""Acceptance criteria for the exporter, one test per clause.

Run with ``pytest tests/test_acceptance.py -v -s``. Requires the consumer
package (conf-deferral) for the loader and aggregation cross-checks.
"""

import warnings
from pathlib import Path

import numpy as np
import pytest
import torch
from PIL import Image

conf_deferral = pytest.importorskip("conf_deferral")

from prob_export.exporter import ExportSpec, aggregate_coarse, export

N_CLASSES = 10


def _model_factory(model_name: str) -> torch.nn.Module:
    torch.manual_seed(7)
    return torch.nn.Sequential(
        torch.nn.AdaptiveAvgPool2d(4),
        torch.nn.Flatten(),
        torch.nn.Linear(3 * 16, N_CLASSES),
    )


@pytest.fixture(scope="module")
def exported(tmp_path_factory):
    root = tmp_path_factory.mktemp("acceptance")
    rng = np.random.default_rng(5)
    for c in range(5):
        class_dir = root / "images" / str(c)
        class_dir.mkdir(parents=True)
        for i in range(4):
            pixels = rng.integers(0, 256, size=(28, 28, 3), dtype=np.uint8)
            Image.fromarray(pixels).save(class_dir / f"img_{i}.png")
    out = root / "probs.csv"
    export(
        ExportSpec("resnet18", root / "images", out, batch_size=7),
        model_factory=_model_factory,
    )
    return out


def test_output_loads_with_zero_warnings(exported):
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        table = conf_deferral.load_probabilities(exported)
    assert table.n_samples == 20 and table.n_classes == N_CLASSES
    print("[PASS] exporter output: loads through the consumer with zero warnings")


def test_rows_sum_to_one_within_tolerance(exported):
    table = conf_deferral.load_probabilities(exported)
    worst = float(np.max(np.abs(table.probs.sum(axis=1) - 1.0)))
    assert worst <= 1e-6
    print(f"[PASS] exporter rows: sums within 1e-6 of 1 (worst drift {worst:.2e})")


def test_coarse_aggregation_bit_for_bit():
    rng = np.random.default_rng(11)
    fine = rng.dirichlet(np.full(N_CLASSES, 0.4), size=50)
    assignment = np.array([0, 0, 1, 1, 2, 2, 2, 3, 3, 3])
    mine = aggregate_coarse(fine, assignment)
    table = conf_deferral.ProbabilityTable(
        sample_ids=tuple(f"s{i}" for i in range(50)),
        truths=rng.integers(0, N_CLASSES, size=50),
        probs=fine,
    )
    theirs = conf_deferral.aggregate_superclasses(
        table, conf_deferral.ClassMapping(fine_to_coarse=assignment)
    )
    assert np.array_equal(mine, theirs.probs)
    assert mine.tobytes() == theirs.probs.tobytes()
    print("[PASS] coarse aggregation: bit-for-bit equal to the consumer's fold")
