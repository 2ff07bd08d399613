import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from volspec.errors import MembershipError, ParameterError, RangeError, SpectrumError
from volspec.spectra import FamilySpec, Spectrum, generate, power_density


def gen(family, count=5, **params):
    return generate(FamilySpec(family, params, count))


class TestGenerate:
    def test_two_sided_integers_skip_zero(self):
        assert gen("two_sided_power", 3, gamma=1).points.tolist() == [-3, -2, -1, 1, 2, 3]

    def test_squares(self):
        assert gen("squares", 4, n0=1).points.tolist() == [1, 4, 9, 16]

    def test_squares_offset_start(self):
        assert gen("squares", 3, n0=2).points.tolist() == [4, 9, 16]

    def test_livsic_half_integers(self):
        assert gen("livsic", 2, c=1).points.tolist() == [-1.5, -0.5, 0.5, 1.5]

    def test_livsic_scaled(self):
        assert np.allclose(gen("livsic", 1, c=2).points, [-0.25, 0.25])

    def test_shifted_progression(self):
        assert gen("shifted_progression", 2, a=0.5).points.tolist() == [-1.5, -0.5, 0.5, 1.5]

    def test_integers_punctured_default_extra_point(self):
        s = gen("integers_punctured", 2)
        assert s.points.tolist() == [-2, -1, 0.5, 1, 2]

    def test_integers_without_extra_point(self):
        assert gen("integers_punctured", 2, t0=None).points.tolist() == [-2, -1, 1, 2]

    def test_extra_point_in_two_sided_family_is_sorted_in(self):
        s = gen("two_sided_power", 2, gamma=2, t0=2.5)
        assert s.points.tolist() == [-4, -1, 1, 2.5, 4]

    def test_near_pairs_gaps_shrink(self):
        s = gen("near_pairs", 6, q=0.5)
        pos = s.positive
        # the first gap (1/2) is not below half the unit spacing, so +-1 stay single
        gaps = np.diff(pos[1:])[::2]
        assert np.allclose(gaps, 0.5 ** np.arange(2, 7))
        assert s.params["unresolved_pairs"] == 2

    def test_custom(self):
        s = gen("custom", points=[3.0, -1.0])
        assert s.points.tolist() == [-1.0, 3.0]
        assert not s.tail.known

    def test_deterministic(self):
        spec = FamilySpec("one_sided_power", {"gamma": 1.5}, 50)
        assert generate(spec) == generate(spec)

    @pytest.mark.parametrize("family,params,field", [
        ("one_sided_power", {"gamma": 0}, "gamma"),
        ("two_sided_power", {"gamma": -1}, "gamma"),
        ("shifted_progression", {"a": 0}, "a"),
        ("livsic", {"c": 0}, "c"),
        ("squares", {"n0": 0}, "n0"),
        ("near_pairs", {"q": 1.5}, "q"),
        ("custom", {}, "points"),
        ("integers_punctured", {"t0": 1.0}, "t0"),
    ])
    def test_parameter_errors_name_field(self, family, params, field):
        with pytest.raises(ParameterError) as exc:
            gen(family, **params)
        assert exc.value.field == field

    def test_unknown_family(self):
        with pytest.raises(ParameterError):
            FamilySpec("zeta", {}, 3)

    def test_bad_count(self):
        with pytest.raises(ParameterError):
            FamilySpec("squares", {}, 0)


class TestSpectrumInvariants:
    def test_zero_rejected(self):
        with pytest.raises(SpectrumError):
            Spectrum([0.0, 1.0])

    def test_duplicates_rejected(self):
        with pytest.raises(SpectrumError):
            Spectrum([1.0, 1.0])

    def test_nonfinite_rejected(self):
        with pytest.raises(SpectrumError):
            Spectrum([1.0, np.inf])

    def test_points_read_only(self):
        s = gen("squares", 3)
        with pytest.raises(ValueError):
            s.points[0] = 5.0


class TestCounting:
    @pytest.mark.parametrize("r,expected", [(10, 3), (0.5, 0)])
    def test_squares(self, r, expected):
        assert gen("squares", 5).counting_function(r) == expected

    def test_two_sided(self):
        assert gen("two_sided_power", 5, gamma=2).counting_function(4.5) == 2

    def test_beyond_range(self):
        with pytest.raises(RangeError):
            gen("squares", 3).counting_function(100)

    @pytest.mark.parametrize("family,params", [
        ("one_sided_power", {"gamma": 1.5}), ("one_sided_power", {"gamma": 3.0}),
        ("two_sided_power", {"gamma": 2.0}), ("squares", {}),
    ])
    def test_density_sanity(self, family, params):
        s = generate(FamilySpec(family, params, 2000))
        rho, D = power_density(s)["+"]
        r = float(s.positive.max())
        assert abs(s.counting_function(r) / r ** rho / D - 1) < 0.25


class TestReciprocal:
    def test_examples(self):
        assert np.allclose(gen("squares", 3).reciprocal_view(), [1, 0.25, 1 / 9])
        assert np.allclose(gen("livsic", 2, c=1).reciprocal_view(), [-2 / 3, -2, 2, 2 / 3])
        assert gen("custom", points=[2.0]).reciprocal_view().tolist() == [0.5]

    @given(st.lists(st.floats(min_value=1e-3, max_value=1e6), min_size=1, max_size=30,
                    unique=True), st.lists(st.booleans(), min_size=30, max_size=30))
    @settings(max_examples=60, deadline=None)
    def test_involution(self, mags, signs):
        pts = [m if s else -m for m, s in zip(mags, signs)]
        if len(set(pts)) != len(pts):
            return
        s = Spectrum(pts)
        back = Spectrum.from_reciprocals(s.reciprocal_view())
        assert np.allclose(back.points, s.points, rtol=1e-15, atol=0)


class TestEdits:
    def test_add_and_remove(self):
        s = gen("squares", 4).edited(add=[2.0], remove=[1.0])
        assert s.points.tolist() == [2, 4, 9, 16]

    def test_remove_nonmember(self):
        with pytest.raises(MembershipError):
            gen("squares", 4).edited(remove=[2.0])

    def test_mirror(self):
        s = gen("squares", 3)
        assert s.mirrored().points.tolist() == [-9, -4, -1]
        assert s.mirrored().tail.branches[0].sign == -1


class TestJson:
    def test_round_trip(self):
        s = gen("near_pairs", 8, q=0.5)
        assert Spectrum.from_json(s.to_json()) == s

    def test_document_shape(self):
        d = json.loads(gen("livsic", 3, c=1).to_json())
        assert set(d) == {"family", "params", "count", "points", "tail", "label"}

    def test_custom_without_family(self):
        s = Spectrum.from_json('{"points": [1, 2, 5]}')
        assert s.points.tolist() == [1, 2, 5]

    def test_missing_points(self):
        with pytest.raises(SpectrumError):
            Spectrum.from_json("{}")

    @given(st.sets(st.integers(min_value=-10**6, max_value=10**6).filter(bool),
                   min_size=1, max_size=40))
    @settings(max_examples=40, deadline=None)
    def test_round_trip_custom(self, ints):
        s = Spectrum(np.array(sorted(ints), dtype=float) / 7.0)
        assert Spectrum.from_json(s.to_json()) == s
