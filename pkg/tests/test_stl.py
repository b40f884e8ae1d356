import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sgda import stl
from sgda.errors import ConfigError, EvaluationError

from strategies import formulas, traces


def sig(**kw):
    return {k: np.asarray(v, dtype=float) for k, v in kw.items()}


class TestSemantics:
    def test_globally_speed_false_when_stopped(self):
        f = stl.parse("G(ego_speed >= 0.05)")
        s = sig(ego_speed=[3.0, 1.0, 0.0, 2.0])
        assert stl.eval_bool(f, s) is False
        assert stl.eval_quant(f, s) == pytest.approx(-0.05)

    def test_distance_margin_is_minimum(self):
        f = stl.parse("G(ego_ado_distance >= 0)")
        s = sig(ego_ado_distance=[10.0, 3.2, 7.5])
        assert stl.eval_bool(f, s)
        assert stl.eval_quant(f, s) == 3.2

    def test_brake_upper_bound(self):
        f = stl.parse("G(brake_intensity <= 0.4)")
        assert stl.eval_quant(f, sig(brake_intensity=[0.0, 0.7, 0.1])) == pytest.approx(-0.3)

    def test_negated_halt(self):
        f = stl.Not(stl.parse("G(ego_speed >= 0.05)"))
        assert stl.eval_quant(f, sig(ego_speed=[1.0, 0.0])) == pytest.approx(0.05)

    def test_eventually_takes_max(self):
        f = stl.parse("F(u >= 1)")
        assert stl.eval_quant(f, sig(u=[0.0, 2.5, -1.0])) == 1.5

    def test_boundary_counts_as_satisfied(self):
        f = stl.parse("G(u >= 1)")
        s = sig(u=[1.0, 2.0])
        assert stl.eval_quant(f, s) == 0.0
        assert stl.eval_bool(f, s)

    def test_suffix_semantics_of_nested_operators(self):
        # F(G(u >= 0)): some suffix stays non-negative; true iff last sample is.
        f = stl.parse("F(G(u >= 0))")
        assert stl.eval_bool(f, sig(u=[-1.0, 2.0, 1.0]))
        assert not stl.eval_bool(f, sig(u=[1.0, 2.0, -1.0]))
        # G(F(u >= 0)) on a finite trace also reduces to the last sample
        g = stl.parse("G(F(u >= 0))")
        assert stl.eval_quant(g, sig(u=[5.0, -1.0, 0.5])) == 0.5

    def test_robustness_trace_is_pointwise(self):
        f = stl.parse("G(u >= 0)")
        np.testing.assert_array_equal(stl.robustness_trace(f, sig(u=[3.0, -1.0, 2.0])),
                                      [-1.0, -1.0, 2.0])


class TestErrors:
    def test_unknown_signal(self):
        with pytest.raises(EvaluationError, match="unknown signal 'nope'"):
            stl.eval_bool(stl.parse("G(nope >= 0)"), sig(u=[1.0]))

    def test_empty_signal(self):
        with pytest.raises(EvaluationError):
            stl.eval_quant(stl.parse("u >= 0"), sig(u=[]))

    @pytest.mark.parametrize("text", ["", "G(u >= 0", "u > 0", "u >= ", "G u >= 0",
                                      "u >= 0 )", "u >= 0 & ", "u ≥ 0"])
    def test_bad_syntax(self, text):
        with pytest.raises(ConfigError):
            stl.parse(text)

    def test_bad_comparator_in_ast(self):
        with pytest.raises(ConfigError):
            stl.Atom("u", ">", 0.0)


class TestParser:
    def test_precedence(self):
        f = stl.parse("a >= 0 | b >= 0 & !c <= 1")
        assert isinstance(f, stl.Or)
        assert isinstance(f.children[1], stl.And)
        assert isinstance(f.children[1].children[1], stl.Not)

    def test_signal_named_like_operator(self):
        f = stl.parse("G(G >= 1)")
        assert f == stl.Globally(stl.Atom("G", ">=", 1.0))

    def test_numbers(self):
        assert stl.parse("u <= -1.5e-2").threshold == -0.015
        assert stl.parse("u >= .5").threshold == 0.5

    def test_signal_names(self):
        f = stl.parse("G(a >= 0) & F(b <= 1 | a >= 2)")
        assert stl.signal_names(f) == {"a", "b"}

    @given(formulas())
    def test_text_round_trip(self, f):
        assert stl.parse(stl.to_text(f)) == f


class TestProperties:
    @settings(max_examples=300)
    @given(formulas(), traces())
    def test_sign_consistency(self, f, s):
        r = stl.eval_quant(f, s)
        if r > 0:
            assert stl.eval_bool(f, s)
        elif r < 0:
            assert not stl.eval_bool(f, s)

    @given(formulas(), traces())
    def test_negation_antisymmetry(self, f, s):
        assert stl.eval_quant(stl.Not(f), s) == -stl.eval_quant(f, s)

    @given(formulas(), traces())
    def test_globally_eventually_duality(self, f, s):
        assert stl.eval_quant(stl.Globally(f), s) == -stl.eval_quant(stl.Eventually(stl.Not(f)), s)

    @given(traces(), st.floats(0, 2))
    def test_threshold_shift(self, s, delta):
        base = stl.eval_quant(stl.Atom("u", ">=", 0.25), s)
        shifted = stl.eval_quant(stl.Atom("u", ">=", 0.25 + delta), s)
        assert shifted == pytest.approx(base - delta, abs=1e-12)
