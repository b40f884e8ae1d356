import csv
import io

import numpy as np
import pytest
from hypothesis import given, settings

from sgda import stl
from sgda.errors import ConfigError
from sgda.stp import Property, build_partition, index_of, signs_of

from strategies import formulas, random_formula, random_trace, traces

DRIVING = [
    Property.from_text("no_collision", "G(ego_ado_distance >= 0)"),
    Property.from_text("no_halt", "G(ego_speed >= 0.05)"),
    Property.from_text("no_hard_brake", "G(brake_intensity <= 0.4)"),
]


def sig(**kw):
    return {k: np.asarray(v, dtype=float) for k, v in kw.items()}


def two(wa=0.5, wb=0.5):
    return [Property.from_text("A", "G(u >= 0)", wa), Property.from_text("B", "G(v >= 0)", wb)]


class TestConstruction:
    def test_two_properties_give_four_specs(self):
        part = build_partition(two())
        assert part.num_specs == 4
        assert [s.label(part.names) for s in part.specs] == [
            "!A & !B", "A & !B", "!A & B", "A & B"]

    def test_three_properties_give_eight_specs(self):
        assert build_partition(DRIVING).num_specs == 8

    def test_canonical_bits(self):
        for j in range(16):
            assert index_of(signs_of(j, 4)) == j
        assert signs_of(5, 3) == (True, False, True)

    def test_spec_weights_products(self):
        part = build_partition(two(0.1, 0.6), weighted=True)
        # canonical order: !A!B, A!B, !AB, AB
        np.testing.assert_allclose(part.spec_weights, [0.36, 0.04, 0.54, 0.06])
        assert part.spec_weights.sum() == pytest.approx(1.0)

    def test_weights_sum_to_one_for_any_property_weights(self):
        rng = np.random.default_rng(3)
        for _ in range(20):
            l = int(rng.integers(1, 6))
            props = [Property.from_text(f"p{i}", "G(u >= 0)", float(w))
                     for i, w in enumerate(rng.uniform(0.05, 0.95, l))]
            assert build_partition(props, weighted=True).spec_weights.sum() == pytest.approx(1.0)

    @pytest.mark.parametrize("props", [[], [Property.from_text(f"p{i}", "u >= 0") for i in range(9)]])
    def test_property_count_bounds(self, props):
        with pytest.raises(ConfigError):
            build_partition(props)

    def test_duplicate_names(self):
        with pytest.raises(ConfigError):
            build_partition([Property.from_text("a", "u >= 0"), Property.from_text("a", "v >= 0")])

    @pytest.mark.parametrize("w", [0.0, 1.0, 1.5])
    def test_weight_range_checked_when_weighted(self, w):
        with pytest.raises(ConfigError):
            build_partition(two(w, 0.5), weighted=True)
        build_partition(two(w, 0.5), weighted=False)


class TestClassification:
    def test_collision_and_halt(self):
        part = build_partition(two())
        assert part.classify(sig(u=[1.0, -1.0], v=[0.0, -2.0])) == 0

    def test_all_properties_hold(self):
        part = build_partition(DRIVING)
        s = sig(ego_ado_distance=[5.0, 2.0], ego_speed=[3.0, 4.0], brake_intensity=[0.0, 0.1])
        assert part.classify(s) == 7

    def test_hard_brake_only(self):
        part = build_partition(DRIVING)
        s = sig(ego_ado_distance=[5.0, 2.0], ego_speed=[3.0, 4.0], brake_intensity=[0.0, 0.9])
        assert part.specs[part.classify(s)].label(part.names) == (
            "no_collision & no_halt & !no_hard_brake")

    @settings(max_examples=200)
    @given(formulas(2), formulas(2), traces())
    def test_exactly_one_spec_holds(self, f, g, s):
        part = build_partition([Property("f", f), Property("g", g)])
        assert part.classify_exhaustive(s) == [part.classify(s)]

    def test_exactly_one_spec_holds_bulk(self):
        rng = np.random.default_rng(11)
        for _ in range(300):
            props = [Property(f"p{i}", random_formula(rng, 2)) for i in range(3)]
            part = build_partition(props)
            s = random_trace(rng)
            assert part.classify_exhaustive(s) == [part.classify(s)]

    def test_record_appends_to_landed(self):
        part = build_partition(two())
        part.record("e0", "t0", sig(u=[1.0], v=[1.0]))
        part.record("e1", "t1", sig(u=[1.0], v=[-1.0]))
        part.record("e2", "t2", sig(u=[2.0], v=[3.0]))
        np.testing.assert_array_equal(part.counts(), [0, 1, 0, 2])
        assert part.landed[3] == [("e0", "t0"), ("e2", "t2")]


class TestRobustness:
    def test_sign_adjusted_minimum(self):
        part = build_partition(two() + [Property.from_text("C", "G(w >= 0)")])
        j = index_of((True, False, True))
        assert part.spec_robustness([3.2, -0.05, 0.1], j) == pytest.approx(0.05)

    def test_all_true_is_min(self):
        part = build_partition(DRIVING)
        assert part.spec_robustness([0.3, 1.0, 2.0], 7) == 0.3

    def test_vector_matches_formulas(self):
        part = build_partition(DRIVING)
        s = sig(ego_ado_distance=[5.0, 2.0], ego_speed=[3.0, 0.0], brake_intensity=[0.0, 0.9])
        np.testing.assert_allclose(part.robustness_vector(s), [2.0, -0.05, -0.5])

    def test_positive_robustness_iff_classified(self):
        rng = np.random.default_rng(5)
        for _ in range(300):
            props = [Property(f"p{i}", random_formula(rng, 2)) for i in range(3)]
            part = build_partition(props)
            s = random_trace(rng)
            rho = part.robustness_vector(s)
            j = part.classify(s)
            for k in range(part.num_specs):
                r = part.spec_robustness(rho, k)
                if r > 0:
                    assert k == j
                if k != j:
                    assert r <= 0
            # the spec robustness equals the robustness of its formula
            assert part.spec_robustness(rho, j) == stl.eval_quant(part.specs[j].formula(props), s)


def test_csv_layout():
    part = build_partition(two(0.1, 0.6), weighted=True)
    part.record("e", "t", sig(u=[1.0], v=[1.0]))
    part.attempts[3] = 4
    rows = list(csv.DictReader(io.StringIO(part.to_csv())))
    assert [r["pattern"] for r in rows] == ["--", "+-", "-+", "++"]
    assert rows[3]["landed"] == "1" and rows[3]["attempts"] == "4"
    assert float(rows[2]["weight"]) == pytest.approx(0.54)
