from dataclasses import asdict

import numpy as np
import pytest

from insinet.benchmarks import (BenchmarkSuite, generate_misregistered, generate_neighborhood_benchmark,
                                generate_scale_benchmark, generate_target_size_benchmark,
                                misregister_suite)
from insinet.evaluation import (REFERENCE_ABLATION_F1, AblationRow, ablation_table, evaluate_set,
                                misregistration_evaluate, reference_gains, ring_evaluate,
                                scale_evaluate, target_size_evaluate)
from insinet.exceptions import ContractError
from insinet.geometry import BAND_NAMES
from insinet.metrics import confusion, metrics
from insinet.nn.model import ABLATION_ROWS


def oracle(samples):
    return np.stack([s.label for s in samples])


def unchanged(samples):
    return np.zeros((len(samples), samples[0].size, samples[0].size), np.uint8)


@pytest.fixture(scope="module")
def ring_suite(desk_scene):
    return generate_neighborhood_benchmark(*desk_scene, tile_size=32, seed=2)


@pytest.fixture(scope="module")
def test_set(desk_samples):
    return desk_samples[:40]


def test_oracle_scores_one(ring_suite, test_set):
    assert set(ring_evaluate(oracle, ring_suite).scores.values()) == {1.0}
    changed = [s for s in test_set if s.label.any()]
    scale = generate_scale_benchmark(changed[:8], factors=(2, 4, 8, 16))
    assert set(scale_evaluate(oracle, scale).scores.values()) == {1.0}
    ts = target_size_evaluate(oracle, generate_target_size_benchmark(changed))
    assert {v for per in ts["scores"].values() for v in per.values()} == {1.0}


def test_unchanged_predictor(ring_suite):
    rep = ring_evaluate(unchanged, ring_suite)
    assert set(rep.scores.values()) == {0.0}
    assert rep.degenerate == []  # every set has change, so F1 is 0 without being 0/0
    counts, m = evaluate_set(unchanged, [s for s in ring_suite.groups["core"]["core_0"]], use_region_mask=True)
    assert counts.tp == 0 and counts.fn > 0 and m.f1 == 0


def test_ring_average_by_hand(ring_suite):
    rng = np.random.default_rng(5)

    def noisy(samples):
        return np.stack([np.where(rng.random(s.label.shape) < 0.2, 1 - s.label, s.label) for s in samples])

    rng = np.random.default_rng(5)
    rep = ring_evaluate(noisy, ring_suite)
    rng = np.random.default_rng(5)
    for band in BAND_NAMES:
        per = []
        for data in ring_suite.groups[band].values():
            preds = noisy(data)
            total = sum((confusion(p, s.label, s.region_mask) for p, s in zip(preds, data)),
                        start=confusion(np.zeros(1), np.zeros(1), np.zeros(1, bool)))
            per.append(metrics(total).f1)
        assert rep.scores[band] == pytest.approx(np.mean(per), abs=1e-12)
    assert len(rep.per_set) == 16


def test_scale_factor_one_is_plain(test_set):
    rng = np.random.default_rng(0)
    flips = {s.meta["sample_id"]: rng.random(s.label.shape) < 0.1 for s in test_set}

    def pred(samples):
        return np.stack([s.label ^ flips[s.meta["sample_id"]] for s in samples])

    rep = scale_evaluate(pred, generate_scale_benchmark(test_set, factors=(2, 4, 8, 16)))
    assert list(rep.scores) == ["1", "2", "4", "8", "16"]
    assert rep.scores["1"] == evaluate_set(pred, test_set)[1].f1


def test_missing_sets(ring_suite, test_set):
    broken = BenchmarkSuite(ring_suite.kind, {**ring_suite.groups, "core": {}}, ring_suite.params)
    with pytest.raises(ContractError):
        ring_evaluate(oracle, broken)
    scale = generate_scale_benchmark(test_set[:4], factors=(2, 4))
    with pytest.raises(ContractError):
        scale_evaluate(oracle, scale)
    with pytest.raises(ContractError):
        scale_evaluate(oracle, ring_suite)


def test_misregistration_deltas(ring_suite):
    shifted = misregister_suite(ring_suite, (0, 4))
    rep = misregistration_evaluate(oracle, ring_suite, shifted)
    assert rep["delta"] == {b: 0.0 for b in BAND_NAMES}
    assert rep["kind"] == "misregistration"


def test_ablation_table_and_gains():
    rows = [AblationRow(label=c.label(), components=asdict(c), f1=REFERENCE_ABLATION_F1[i] / 100,
                        params=10**6, macs=10**9) for i, c in enumerate(ABLATION_ROWS)]
    table = ablation_table(rows).splitlines()
    assert len(table) == 2 + 5 and "83.22" in table[-1]
    assert reference_gains() == {"scale": 3.32, "neighborhood": 3.08, "total": 6.40}
