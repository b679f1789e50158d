import math

import numpy as np
import pytest
import scipy.stats
from hypothesis import given, settings
from hypothesis import strategies as st

from gridcrop.metrics import (
    DegenerateInputError,
    acc_k_n,
    acc_weighted_k_n,
    format_table,
    pcc,
    rank,
    report,
    single_return_report,
    srcc,
    top_n_set,
)

from .oracles import (
    oracle_acc,
    oracle_acc_weighted,
    oracle_pcc,
    oracle_rank,
    oracle_srcc,
    ranks_to_instance,
)


def test_rank_examples():
    assert list(rank([5, 3, 4])) == [1, 3, 2]
    assert list(rank([4, 4, 1])) == [1.5, 1.5, 3]


def test_rank_matches_oracle():
    rng = np.random.default_rng(0)
    for _ in range(50):
        v = rng.integers(0, 6, size=20).astype(float)
        assert list(rank(v)) == oracle_rank(list(v))
        assert rank(v).mean() == pytest.approx(10.5)


def test_pcc_examples():
    g = np.array([1.0, 2.0, 3.0, 4.0])
    assert pcc(g, g) == pytest.approx(1.0)
    assert pcc(g, -g) == pytest.approx(-1.0)
    assert pcc(g, [1, 2, 4, 3]) == pytest.approx(oracle_pcc([1, 2, 3, 4], [1, 2, 4, 3]), abs=1e-12)
    assert pcc(g, [1, 2, 4, 3]) == pytest.approx(0.8, abs=1e-12)


def test_srcc_examples():
    g = np.array([1.0, 2.0, 3.5, 4.0, 10.0])
    assert srcc(g, np.exp(g)) == pytest.approx(1.0)
    assert srcc(g, -g) == pytest.approx(-1.0)
    value = srcc([1, 2, 2, 3], [1, 3, 2, 4])
    assert value == pytest.approx(oracle_srcc([1, 2, 2, 3], [1, 3, 2, 4]), abs=1e-12)
    assert value == pytest.approx(scipy.stats.spearmanr([1, 2, 2, 3], [1, 3, 2, 4])[0], abs=1e-12)


def test_zero_variance_is_error():
    with pytest.raises(DegenerateInputError):
        pcc([1, 2, 3], [2, 2, 2])
    with pytest.raises(DegenerateInputError):
        srcc([4, 4, 4], [1, 2, 3])


def test_top_n_set_examples():
    assert top_n_set([5, 4, 3, 2, 1], 2) == {0, 1}
    assert top_n_set([5, 4, 4, 2], 2) == {0, 1, 2}


def test_top_n_set_oracle():
    rng = np.random.default_rng(1)
    for _ in range(100):
        g = rng.integers(0, 8, size=rng.integers(5, 30))
        N = int(rng.integers(1, len(g) + 1))
        expected = {i for i in range(len(g)) if sum(1 for v in g if v > g[i]) < N}
        got = top_n_set(g, N)
        assert got == expected
        assert len(got) >= N


def test_worked_example():
    preds, gts = ranks_to_instance([2, 5, 3, 10], n=12)
    assert acc_k_n([preds], [gts], 4, 5) == pytest.approx(0.75)
    expected = (math.exp(-1 / 5) + math.exp(-1 / 5) + math.exp(-2 / 5)) / 4
    value = acc_weighted_k_n([preds], [gts], 4, 5)
    assert value == pytest.approx(expected, abs=1e-12)
    assert value == pytest.approx(0.5769, abs=1e-4)


def test_perfect_predictions():
    rng = np.random.default_rng(2)
    g = rng.permutation(90).astype(float)
    for K in (1, 2, 3, 4):
        for N in (5, 10):
            assert acc_k_n([g], [g], K, N) == 1.0
            assert acc_weighted_k_n([g], [g], K, N) == 1.0


def test_too_few_candidates():
    with pytest.raises(ValueError):
        acc_k_n([[1.0, 2.0]], [[1.0, 2.0]], 3, 1)


@settings(max_examples=200, deadline=None)
@given(st.integers(6, 90), st.integers(0, 2 ** 32 - 1), st.booleans())
def test_all_metrics_match_oracles(n, seed, with_ties):
    rng = np.random.default_rng(seed)
    if with_ties:
        g = rng.integers(1, 8, size=n).astype(float)
        p = rng.integers(0, 5, size=n).astype(float)
    else:
        g = rng.normal(size=n)
        p = rng.normal(size=n)
    if np.ptp(g) == 0 or np.ptp(p) == 0:
        return
    assert pcc(g, p) == pytest.approx(oracle_pcc(list(g), list(p)), abs=1e-12)
    assert srcc(g, p) == pytest.approx(oracle_srcc(list(g), list(p)), abs=1e-12)
    for K in (1, 2, 3, 4):
        for N in (5, 10):
            if N > n:
                continue
            a = acc_k_n([p], [g], K, N)
            w = acc_weighted_k_n([p], [g], K, N)
            assert a == pytest.approx(oracle_acc([list(p)], [list(g)], K, N), abs=1e-12)
            assert w == pytest.approx(oracle_acc_weighted([list(p)], [list(g)], K, N, 1.0), abs=1e-12)
            assert 0.0 <= w <= a + 1e-15 <= 1.0 + 1e-15


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2 ** 32 - 1))
def test_invariances(seed):
    rng = np.random.default_rng(seed)
    g = rng.normal(size=40)
    p = rng.normal(size=40)
    assert srcc(g, np.exp(3 * p)) == pytest.approx(srcc(g, p), abs=1e-12)
    assert srcc(g ** 3, p) == pytest.approx(srcc(g, p), abs=1e-12)
    assert pcc(2.5 * g + 7, p) == pytest.approx(pcc(g, p), abs=1e-12)
    for K in (1, 4):
        assert acc_k_n([np.exp(p)], [g], K, 5) == acc_k_n([p], [g], K, 5)


def test_report_single_perfect_image():
    g = np.arange(30, dtype=float)
    rep = report([g], [g])
    assert rep.mean_srcc == pytest.approx(1.0)
    assert rep.mean_pcc == pytest.approx(1.0)
    assert all(v == 1.0 for v in rep.acc.values())
    assert all(v == 1.0 for v in rep.acc_weighted.values())
    assert set(rep.acc) == {(K, N) for K in (1, 2, 3, 4) for N in (5, 10)}


def test_report_two_images_is_mean_of_per_image():
    rng = np.random.default_rng(5)
    gs = [rng.normal(size=20), rng.normal(size=25)]
    ps = [rng.normal(size=20), rng.normal(size=25)]
    rep = report(ps, gs)
    assert rep.T == 2
    assert rep.mean_pcc == pytest.approx(np.mean([oracle_pcc(list(g), list(p)) for g, p in zip(gs, ps)]), abs=1e-12)
    assert rep.mean_srcc == pytest.approx(np.mean([oracle_srcc(list(g), list(p)) for g, p in zip(gs, ps)]), abs=1e-12)
    for (K, N), v in rep.acc.items():
        per = [oracle_acc([list(p)], [list(g)], K, N) for g, p in zip(gs, ps)]
        assert v == pytest.approx(np.mean(per), abs=1e-12)
    flipped = report(ps[::-1], gs[::-1])
    assert flipped.mean_srcc == pytest.approx(rep.mean_srcc, abs=1e-12)
    for key in rep.acc:
        assert flipped.acc[key] == pytest.approx(rep.acc[key], abs=1e-12)
        assert flipped.acc_weighted[key] == pytest.approx(rep.acc_weighted[key], abs=1e-12)


def test_report_names_offending_image():
    with pytest.raises(DegenerateInputError, match="img_b"):
        report([[1, 2, 3], [1, 1, 1]], [[1, 2, 3], [3, 2, 1]], names=["img_a", "img_b"])


def test_single_return_report_marks_other_k_absent():
    gts = [[12.0 - i for i in range(12)]]
    rep = single_return_report([1], gts)
    assert rep.acc[(1, 5)] == 1.0
    assert rep.acc_weighted[(1, 5)] == pytest.approx(math.exp(-1 / 5))
    assert (2, 5) not in rep.acc
    kv = rep.to_kv()
    assert "acc_2_5 --" in kv
    assert "mean_srcc --" in kv
    table = format_table([("Baseline_L", rep)])
    assert "--" in table and "Baseline_L" in table


def test_kv_format_lines():
    g = np.arange(12, dtype=float)
    text = report([g], [g]).to_kv()
    lines = text.strip().splitlines()
    assert lines[0] == "images 1"
    assert all(len(line.split()) == 2 for line in lines)
    assert len(lines) == 1 + 2 + 16
