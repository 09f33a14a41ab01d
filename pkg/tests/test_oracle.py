import numpy as np
import pytest

from conftest import random_block
from mllm_redux import oracle
from mllm_redux.attention import AttentionParams, causal_mask


def test_naive_attention_uniform_case(nprng):
    x = nprng.normal(size=(4, 4))
    z, i = np.zeros((4, 4)), np.eye(4)
    out = oracle.naive_attention(x, AttentionParams(z, z, i, i, 1), np.zeros((4, 4)))
    np.testing.assert_allclose(out, np.tile(x.mean(axis=0), (4, 1)), atol=1e-15)


def test_naive_attention_causal_row0(nprng):
    params = random_block(nprng).attention
    _, avg = oracle.naive_attention(nprng.normal(size=(5, 8)), params, causal_mask(5), return_weights=True)
    assert avg[0].tolist() == [1.0, 0, 0, 0, 0]


def test_naive_n2i():
    out = oracle.naive_n2i([[0, 0], [0.4, 0]], [[0.1, 0.2], [0.3, 0.4]])
    np.testing.assert_allclose(out, [[0, 0], [0.04, 0.08]], atol=1e-15)
    assert np.all(oracle.naive_n2i([[0.0]], [[0.5, 0.7]]) == 0.0)


def test_naive_quantile():
    assert oracle.naive_quantile_select([0.1, 0.4, 0.2, 0.3], 0.5) == {0, 2}
    assert oracle.naive_quantile_select([1.0] * 4, 0.5) == {0, 1}


def test_exhaustive_singletons():
    x = np.array([[1.0, 0.0], [0.0, 1.0], [1.0, 1.0]])
    labels, value = oracle.exhaustive_kmeans(x, 3)
    assert labels == [0, 1, 2] and value == pytest.approx(0.0, abs=1e-12)


def test_exhaustive_matches_objective(nprng):
    x = nprng.normal(size=(7, 3))
    labels, value = oracle.exhaustive_kmeans(x, 3)
    assert oracle.partition_objective(x, labels) == pytest.approx(value, abs=1e-12)


def test_exhaustive_limit():
    with pytest.raises(ValueError):
        oracle.exhaustive_kmeans(np.ones((11, 2)), 2)


def test_naive_merge():
    assert oracle.naive_merge(np.eye(2), [[0, 1]], [0.2, 0.3]).tolist() == [[0.2, 0.3]]
    assert oracle.naive_merge(np.array([[2.0, 4.0]]), [[0]], [0.5]).tolist() == [[1.0, 2.0]]


@pytest.mark.parametrize("name", sorted(oracle.SUITES))
def test_suites_pass(name):
    (res,) = oracle.run_suites(name)
    assert res.passed, oracle.format_table([res])
    assert res.cases >= 50
