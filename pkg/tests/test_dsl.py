import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from proxyforge.arch import ArchSpec, build
from proxyforge.dsl import (BINARY_IDS, EMPTY, UNARY_IDS, Branch, InvalidExpression, ParseError,
                            SymbolicExpression, enumerate_space, eval_binary, eval_unary, evaluate,
                            parse, random_expr, serialize, space_size)
from proxyforge.stats import KINDS, capture
from proxyforge.task import MarkovTask


@pytest.fixture(scope="module")
def stats():
    return capture(build(ArchSpec(2, 16, 2, 32), 4), MarkovTask(seed=3).sample(6, 1))


class TestUnary:
    def test_square(self):
        assert eval_unary("f04", np.array(3.0)) == 9.0

    def test_min_max(self):
        np.testing.assert_array_equal(eval_unary("f16", np.array([2.0, 4.0, 6.0])), [0, 0.5, 1])

    def test_norm_sum(self):
        assert eval_unary("f11", np.array([[1.0, 2.0], [3.0, 4.0]])) == 2.5

    def test_reductions_reject_scalars(self):
        for op in ("f10", "f11", "f12", "f16", "f17", "f18"):
            with pytest.raises(InvalidExpression):
                eval_unary(op, np.array(2.0))

    def test_scalar_softmax_is_one_and_its_log_zero(self):
        one = eval_unary("f13", np.array(-7.5))
        assert one == 1.0
        assert eval_unary("f01", one) == 0.0
        assert eval_unary("f15", np.array(3.0)) == 0.0

    def test_softmax_rows(self):
        out = eval_unary("f13", np.random.default_rng(0).normal(size=(3, 5)))
        np.testing.assert_allclose(out.sum(axis=-1), 1.0)

    def test_prune_and_empty(self):
        assert eval_unary("f20", np.ones(3)) is EMPTY
        assert eval_unary("f04", EMPTY) is EMPTY

    def test_identity(self):
        x = np.arange(4.0)
        np.testing.assert_array_equal(eval_unary("f19", x), x)


class TestBinary:
    def test_pruned_side_passes_through(self):
        x = np.array([1.0, 2.0])
        np.testing.assert_array_equal(eval_binary("g01", EMPTY, x), x)
        np.testing.assert_array_equal(eval_binary("g03", x, EMPTY), x)

    def test_both_pruned(self):
        with pytest.raises(InvalidExpression):
            eval_binary("g01", EMPTY, EMPTY)

    def test_division_by_zero_gives_inf(self):
        assert math.isinf(eval_binary("g04", np.array(1.0), np.array(0.0)))

    def test_scalar_broadcast(self):
        np.testing.assert_array_equal(eval_binary("g03", np.array(2.0), np.array([1.0, 2.0, 3.0])),
                                      [2, 4, 6])

    def test_shape_mismatch(self):
        with pytest.raises(InvalidExpression):
            eval_binary("g01", np.ones(3), np.ones(4))


class TestEvaluate:
    def test_negative_log_is_invalid(self, stats):
        assert evaluate(parse("W:f03,f09,f01|g01|G:f19"), stats) is None

    def test_both_pruned_is_invalid(self, stats):
        assert evaluate(parse("W:f20|g01|G:f20"), stats) is None

    def test_pruned_branch_is_ignored(self, stats):
        a = evaluate(parse("W:f20|g03|G:f10"), stats)
        b = sum(float(np.linalg.norm(g)) for g in stats._flat_g)
        assert a == pytest.approx(b, rel=1e-12)

    def test_kind_mismatch_is_invalid(self, stats):
        # attention maps and FFN activations have different shapes
        assert evaluate(parse("H:f19|g01|A:f19"), stats) is None

    def test_global_operand_repeats_per_block(self, stats):
        s = evaluate(parse("S:f10|g01|W:f20"), stats)
        assert s == pytest.approx(stats.n_blocks * float(np.linalg.norm(stats.softmax)), rel=1e-12)

    def test_flexibert_softmax_branch_is_constant(self, stats):
        expr = parse("H:f08,f04|g01|A:f10,f13,f01")
        h_only = sum(float(np.sum((1.0 / h) ** 2)) for h in stats.heads)
        assert evaluate(expr, stats) == pytest.approx(h_only, rel=1e-12)


class TestSerialization:
    def test_round_trip_random(self):
        rng = np.random.default_rng(0)
        for depth in (1, 1, 2, 3):
            for _ in range(250):
                e = random_expr(rng, depth)
                assert parse(serialize(e)) == e

    @given(st.sampled_from(KINDS), st.sampled_from(KINDS), st.sampled_from(BINARY_IDS),
           st.lists(st.sampled_from(UNARY_IDS), min_size=1, max_size=5),
           st.lists(st.sampled_from(UNARY_IDS), min_size=1, max_size=5))
    @settings(max_examples=200, deadline=None)
    def test_round_trip_property(self, ka, kb, g, la, lb):
        e = SymbolicExpression(Branch(ka, tuple(la)), Branch(kb, tuple(lb)), g)
        assert parse(serialize(e)) == e

    def test_flexibert_string(self):
        e = parse("H:f08,f04|g01|A:f10,f13,f01")
        assert (e.left.kind, e.left.ops, e.binary) == ("H", ("f08", "f04"), "g01")
        assert (e.right.kind, e.right.ops) == ("A", ("f10", "f13", "f01"))

    @pytest.mark.parametrize("text,pos", [
        ("W:f99|g01|G:f19", 2),
        ("W:f01|g09|G:f19", 6),
        ("X:f01|g01|G:f19", 0),
        ("W:f01|g01", 9),
        ("W:f01|g01|G:", 12),
    ])
    def test_parse_errors(self, text, pos):
        with pytest.raises(ParseError) as info:
            parse(text)
        assert info.value.position == pos


class TestSpace:
    def test_size(self):
        assert space_size(1) == 15 * 400 * 4 == 24_000
        assert space_size(2) == 15 * 20 ** 4 * 4

    def test_enumeration_is_distinct(self):
        exprs = [serialize(e) for e in enumerate_space(1)]
        assert len(exprs) == len(set(exprs)) == 24_000

    def test_random_kinds_differ_and_seeded(self):
        rng1, rng2 = np.random.default_rng(8), np.random.default_rng(8)
        s1 = [random_expr(rng1, 2) for _ in range(300)]
        s2 = [random_expr(rng2, 2) for _ in range(300)]
        assert s1 == s2
        assert all(e.distinct_operands for e in s1)
        assert all(len(e.left.ops) == 2 for e in s1)
