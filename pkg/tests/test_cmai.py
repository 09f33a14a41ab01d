import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import random_block
from mllm_redux.attention import causal_mask, transformer_block
from mllm_redux.cmai import (
    SequenceLayout,
    apply_inhibition,
    cmai_layer,
    focus_score,
    focus_score_variant,
    inhibition_positions,
    linear_gamma_schedule,
    neighborhood_focus,
    neighborhood_mask,
    split_attention,
)
from mllm_redux.errors import ModeError, ShapeError
from mllm_redux.linalg import NEG_INF
from mllm_redux.oracle import naive_n2i, naive_quantile_select


class TestSplit:
    def test_two_by_two(self):
        t2i, t2t = split_attention(np.array([[1.0, 2.0], [3.0, 4.0]]), SequenceLayout(1, 1))
        assert t2i.tolist() == [[3.0]] and t2t.tolist() == [[4.0]]

    def test_no_images(self):
        t2i, _ = split_attention(np.eye(3), SequenceLayout(0, 3))
        assert t2i.shape == (3, 0)
        assert all(len(p) == 0 for p in inhibition_positions(t2i, 0.6))

    def test_against_loops(self, nprng):
        a = nprng.random((12, 12))
        t2i, t2t = split_attention(a, SequenceLayout(7, 5))
        for j in range(5):
            for k in range(7):
                assert t2i[j, k] == a[7 + j, k]
            for k in range(5):
                assert t2t[j, k] == a[7 + j, 7 + k]

    def test_layout_mismatch(self):
        with pytest.raises(ShapeError):
            split_attention(np.eye(4), SequenceLayout(2, 1))


class TestFocus:
    def test_neighborhood_mask(self):
        assert neighborhood_mask(np.array([[0.7, 0.3], [0.4, 0.6]])).tolist() == [[0, 0], [0.4, 0]]
        assert neighborhood_mask(np.array([[0.9]])).tolist() == [[0.0]]

    @given(st.integers(1, 9), st.integers(0, 999))
    def test_neighborhood_strictly_lower(self, m, seed):
        a = np.random.default_rng(seed).random((m, m))
        out = neighborhood_mask(a)
        assert np.all(np.triu(out) == 0.0)
        assert np.array_equal(np.tril(out, -1), np.tril(a, -1))

    def test_neighborhood_focus_hand(self):
        out = neighborhood_focus(np.array([[0, 0], [0.4, 0]]), np.array([[0.1, 0.2], [0.3, 0.4]]))
        np.testing.assert_allclose(out, [[0, 0], [0.04, 0.08]], atol=1e-15)
        assert np.all(out[0] == 0.0)

    def test_neighborhood_focus_vs_loop(self, nprng):
        t2n, t2i = np.tril(nprng.random((7, 7)), -1), nprng.random((7, 11))
        assert np.max(np.abs(neighborhood_focus(t2n, t2i) - naive_n2i(t2n, t2i))) <= 1e-12

    def test_focus_hand(self):
        t2i = np.array([[0.1, 0.2], [0.3, 0.4]])
        f = focus_score(np.array([[0, 0], [0.04, 0.08]]), t2i)
        np.testing.assert_allclose(f, [[0.1, 0.2], [0.34, 0.48]], atol=1e-15)

    def test_focus_reduces_to_t2i(self, nprng):
        t2i = nprng.random((5, 6))
        t2t = np.diag(nprng.random(5))  # no off-diagonal text attention
        assert np.array_equal(focus_score_variant(t2i, t2t, "focus"), t2i)

    def test_focus_elementwise(self, nprng):
        a, b = nprng.random((4, 3)), nprng.random((4, 3))
        f = focus_score(a, b)
        for j in range(4):
            for k in range(3):
                assert f[j, k] == a[j, k] + b[j, k]


class TestVariants:
    t2i = np.array([[0.1, 0.2], [0.3, 0.4]])
    t2t = np.array([[1.0, 0.0], [0.5, 0.5]])

    def test_tia(self):
        assert np.array_equal(focus_score_variant(self.t2i, self.t2t, "tia"), self.t2i)

    def test_sum(self):
        np.testing.assert_allclose(focus_score_variant(self.t2i, self.t2t, "sum"), [[0.1, 0.2], [0.4, 0.6]], atol=1e-15)

    def test_discounted(self):
        out = focus_score_variant(self.t2i, self.t2t, "discounted", 0.5)
        # row 1: 0.5 * [0.1, 0.2] + [0.3, 0.4]
        np.testing.assert_allclose(out, [[0.1, 0.2], [0.35, 0.5]], atol=1e-15)

    def test_unknown(self):
        with pytest.raises(ModeError):
            focus_score_variant(self.t2i, self.t2t, "nope")


class TestPositions:
    def test_half(self):
        assert inhibition_positions(np.array([[0.1, 0.4, 0.2, 0.3]]), 0.5)[0].tolist() == [0, 2]

    def test_gamma_zero(self, nprng):
        assert all(p.size == 0 for p in inhibition_positions(nprng.random((4, 6)), 0.0))

    def test_clamp(self):
        pos = inhibition_positions(np.array([[0.3, 0.1], [0.2, 0.9]]), 0.9)
        assert [p.tolist() for p in pos] == [[1], [0]]

    def test_tie_rule(self):
        assert naive_quantile_select([0.5] * 4, 0.5) == {0, 1}
        assert inhibition_positions(np.full((1, 4), 0.5), 0.5)[0].tolist() == [0, 1]

    def test_gamma_one_rejected(self):
        with pytest.raises(ValueError):
            inhibition_positions(np.ones((1, 3)), 1.0)

    def test_against_sort(self, nprng):
        for _ in range(100):
            n = int(nprng.integers(1, 15))
            row = np.round(nprng.random(n), 1)
            g = float(nprng.random() * 0.99)
            assert set(inhibition_positions(row[None], g)[0].tolist()) == naive_quantile_select(row, g)

    @given(st.lists(st.sampled_from([0.0, 0.1, 0.2, 0.3]), min_size=1, max_size=16),
           st.floats(0, 0.999), st.floats(0, 0.999))
    def test_nested_and_exact_count(self, row, g1, g2):
        g1, g2 = sorted((g1, g2))
        f = np.array([row])
        a, b = inhibition_positions(f, g1)[0], inhibition_positions(f, g2)[0]
        n = len(row)
        assert len(b) == min(int(np.floor(g2 * n)), n - 1)
        assert set(a.tolist()) <= set(b.tolist())


class TestMaskAugment:
    def test_empty_unchanged(self):
        base = causal_mask(4)
        assert np.array_equal(apply_inhibition(base, [[], []], SequenceLayout(2, 2)), base)

    def test_single(self):
        out = apply_inhibition(causal_mask(3), [[1]], SequenceLayout(2, 1))
        diff = np.argwhere(out != causal_mask(3))
        assert diff.tolist() == [[2, 1]] and out[2, 1] == NEG_INF

    def test_blocks_untouched(self, nprng):
        for _ in range(20):
            n, m = int(nprng.integers(1, 8)), int(nprng.integers(1, 6))
            layout = SequenceLayout(n, m)
            base = causal_mask(n + m)
            pos = inhibition_positions(nprng.random((m, n)), float(nprng.random() * 0.99))
            out = apply_inhibition(base, pos, layout)
            assert np.array_equal(out[:n, :n], base[:n, :n])
            assert np.array_equal(out[n:, n:], base[n:, n:])
            assert np.array_equal(out[:n, n:], base[:n, n:])
            assert set(np.unique(out).tolist()) <= {0.0, NEG_INF}


class TestSchedule:
    def test_linear(self):
        assert linear_gamma_schedule(4, 0.6) == pytest.approx([0.0, 0.2, 0.4, 0.6], abs=1e-15)

    def test_zero(self):
        assert linear_gamma_schedule(5, 0.0) == [0.0] * 5

    def test_depth_one(self):
        assert linear_gamma_schedule(1, 0.6) == [0.6]

    def test_reject_one(self):
        with pytest.raises(ValueError):
            linear_gamma_schedule(3, 1.0)


class TestLayer:
    def setup(self, rng, n=5, m=4, d=8):
        return rng.normal(size=(n + m, d)), random_block(rng, d=d, scale=1.0), SequenceLayout(n, m)

    def test_gamma_zero_matches_plain_block(self, nprng):
        x, params, layout = self.setup(nprng)
        base = causal_mask(layout.size)
        out, res, _ = cmai_layer(x, params, base, layout, 0.0)
        plain, _ = transformer_block(x, params, base)
        assert np.array_equal(out, plain) and res.counts() == [0] * 4

    def test_no_text_matches_plain_block(self, nprng):
        x, params, _ = self.setup(nprng, m=0)
        layout = SequenceLayout(5, 0)
        out, _, _ = cmai_layer(x, params, causal_mask(5), layout, 0.6)
        assert np.array_equal(out, transformer_block(x, params, causal_mask(5))[0])

    @pytest.mark.parametrize("mode", ["focus", "tia", "sum", "discounted"])
    @pytest.mark.parametrize("basis", ["weights", "scores"])
    def test_inhibited_positions_get_zero_weight(self, nprng, mode, basis):
        x, params, layout = self.setup(nprng)
        out, res, rec = cmai_layer(x, params, causal_mask(layout.size), layout, 0.6, mode, basis)
        assert res.counts() == [3] * 4
        for row, cols in enumerate(res.positions):
            for w in rec.per_head_weights:
                assert np.all(w[layout.n_image + row, cols] == 0.0)
        assert np.all(np.triu(rec.averaged_weights, 1) == 0.0)
        np.testing.assert_allclose(rec.averaged_weights.sum(axis=1), 1.0, atol=1e-9)

    def test_pass2_is_renormalized_pass1(self, nprng):
        x, params, layout = self.setup(nprng)
        _, res, rec = cmai_layer(x, params, causal_mask(layout.size), layout, 0.5)
        for h, w1 in enumerate(res.pass1_record.per_head_weights):
            w = w1.copy()
            for row, cols in enumerate(res.positions):
                w[layout.n_image + row, cols] = 0.0
            w /= w.sum(axis=1, keepdims=True)
            np.testing.assert_allclose(rec.per_head_weights[h], w, atol=1e-12)

    def test_bad_basis(self, nprng):
        x, params, layout = self.setup(nprng)
        with pytest.raises(ModeError):
            cmai_layer(x, params, causal_mask(layout.size), layout, 0.2, focus_basis="raw")
