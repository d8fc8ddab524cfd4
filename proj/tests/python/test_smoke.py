"""Smoke tests for the python bindings against the CMake-built module."""

import json
import math

import numpy as np
import pytest

import silobench as sb


def test_auc_hand_values():
    assert sb.auc(np.array([0.9, 0.8, 0.4]), [1, 1, 0]) == pytest.approx(1.0)
    assert sb.auc(np.array([0.9, 0.6, 0.3, 0.2]), [1, 0, 0, 1]) == pytest.approx(0.5)
    with pytest.raises(sb.UndefinedMetricError):
        sb.auc(np.array([0.1, 0.2]), [1, 1])


def test_confusion_metrics():
    assert sb.mcc(1, 0, 1, 0) == pytest.approx(1.0)
    assert sb.mcc(2, 1, 1, 0) == pytest.approx(2.0 / math.sqrt(12.0))
    assert sb.specificity(0, 1, 3, 0) == pytest.approx(0.75)


def test_equalized_odds_and_gap():
    scores = np.array([0.9, 0.1, 0.8, 0.2, 0.7, 0.3, 0.6, 0.4] * 4)
    labels = [1, 0, 1, 0, 1, 0, 1, 0] * 4
    genders = (["female"] * 8 + ["male"] * 8) * 2
    urm = ([0] * 16 + [1] * 16)
    eo = sb.equalized_odds(scores, labels, genders, urm, 0.5, "gender")
    assert eo == pytest.approx(0.0)
    gap, lo, hi = sb.auc_gap(scores, labels, genders, urm, 4)
    assert gap == pytest.approx(0.0)


def test_wasserstein_and_wtndd():
    assert sb.wasserstein_1d([0.0, 0.0], [1.0, 1.0]) == pytest.approx(1.0)
    assert sb.wtndd_pass(0.03, 1.0)
    assert not sb.wtndd_pass(0.05, 1.0)
    p = np.random.default_rng(0).normal(size=50).tolist()
    q = np.random.default_rng(1).normal(size=70).tolist()
    assert sb.wasserstein_1d(p, q) == pytest.approx(sb.wasserstein_1d(q, p))


def test_base_rate_threshold():
    assert sb.base_rate_threshold([0.1, 0.4, 0.6, 0.9], 0.25) == pytest.approx(0.9)


def test_ols_against_numpy():
    rng = np.random.default_rng(42)
    x = np.column_stack([np.ones(30), rng.normal(size=(30, 2))])
    y = x @ np.array([1.0, 2.0, -0.5]) + rng.normal(size=30) * 0.1
    fit = sb.ols_fit(y, x)
    beta_np, *_ = np.linalg.lstsq(x, y, rcond=None)
    assert np.allclose(np.asarray(fit["beta"]).ravel(), beta_np, atol=1e-10)
    assert 0.9 < fit["r_squared"] <= 1.0


def test_incomplete_beta_identity():
    for xv in (0.1, 0.5, 0.9):
        assert sb.regularized_incomplete_beta(1.0, 1.0, xv) == pytest.approx(xv)


def test_generate_and_run_tiny_experiment(tmp_path):
    config = {
        "experiment_id": "pysmoke",
        "universe": {
            "generated": {
                "universities": 1,
                "community_colleges": 3,
                "records_per_institution": 220,
            },
            "seed": 3,
        },
        "train": {"epochs": 3, "batch_size": 64},
        "group_floor": 5,
        "partner_floor": 0.0,
    }
    n = sb.generate_universe(
        json.dumps(config["universe"]["generated"]), 3, str(tmp_path / "uni")
    )
    assert n == 4
    assert (tmp_path / "uni" / "universe.json").exists()
    assert (tmp_path / "uni" / "context.csv").exists()

    paths = sb.run_experiment(
        json.dumps(config), "msti", str(tmp_path / "out"), "csv"
    )
    assert (tmp_path / "out" / "results.jsonl").exists()
    assert len(paths) == 4
    rows = (tmp_path / "out" / "pysmoke_rows.csv").read_text().splitlines()
    assert rows[0].startswith("scheme,")
    assert any(line.startswith("msti,") for line in rows[1:])
