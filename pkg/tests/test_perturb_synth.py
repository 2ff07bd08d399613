import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from volspec.canonical_product import GeneratingFunction
from volspec.errors import ParameterError, RefusalError, ValidityError
from volspec.model_funcs import ModelEvaluator
from volspec.perturb_synth import (PerturbationData, SmoothSynthSpec, arbitrary_data,
                                   divergence_proxy, flipped, last_quarter_increment,
                                   livsic_data, smooth_sums, synthesize, synthesize_smooth)
from volspec.spectra import FamilySpec, Spectrum, generate


def spec(family, count=2000, **params):
    return generate(FamilySpec(family, params, count))


@pytest.fixture(scope="module")
def squares():
    s = spec("squares", 3000)
    return s, GeneratingFunction(s)


class TestSynthesize:
    def test_first_two_coefficients(self, squares):
        d = synthesize(*squares)
        assert d.c[0].real == pytest.approx(2.0, rel=1e-10)
        assert d.a[0].real == pytest.approx(math.sqrt(2), rel=1e-10)
        assert d.b[0].real == pytest.approx(math.sqrt(2), rel=1e-10)
        assert d.c[1].real == pytest.approx(-8.0, rel=1e-10)
        assert d.a[1].real == pytest.approx(math.sqrt(8), rel=1e-10)
        assert d.b[1].real == pytest.approx(-math.sqrt(8), rel=1e-10)
        assert d.delta == 1.0 and d.flags["synthesized"]

    def test_coefficients_are_minus_reciprocal_derivative(self, squares):
        s, g = squares
        d = synthesize(s, g)
        for i in (0, 5, 40):
            assert d.c[i].real == pytest.approx(-1 / g.deriv_at_node(i), rel=1e-12)

    def test_abs_c_masses(self, squares):
        d = synthesize(*squares, masses="abs_c")
        assert np.allclose(np.abs(d.a[:500]), 1.0) and np.allclose(np.abs(d.b[:500]), 1.0)

    def test_mass_policy_does_not_change_payload(self, squares):
        d1 = synthesize(*squares, masses="unit")
        d2 = synthesize(*squares, masses="abs_c")
        assert np.allclose(d1.c, d2.c, rtol=1e-14) and d1.delta == d2.delta

    def test_exact_algebra(self, squares):
        d = synthesize(*squares, masses="abs_c")
        assert np.allclose(d.a * np.conj(d.b) * d.mu, d.c, rtol=1e-15, atol=0)

    def test_refuses_nonremovable(self):
        s = spec("squares", 500, n0=2)
        with pytest.raises(RefusalError):
            synthesize(s)
        d = synthesize(s, force=True)
        assert d.flags["forced"]

    def test_unknown_policy(self, squares):
        with pytest.raises(ParameterError):
            synthesize(*squares, masses="heavy")

    def test_beta_decays_on_imaginary_axis(self, squares):
        m = ModelEvaluator(synthesize(*squares), squares[1])
        prof = m.beta_decay_profile((1e1, 1e2, 1e3, 1e4))
        assert prof["decreasing"]
        # the floor is truncation of the alternating tail, far below the first samples
        assert max(prof["floor"]) < 1e-8 and prof["abs_beta"][0] > 1e-2

    def test_json_round_trip(self, squares):
        d = synthesize(*squares)
        back = PerturbationData.from_json(d.to_json())
        assert np.array_equal(back.a, d.a) and np.array_equal(back.mu, d.mu)
        assert back.delta == d.delta and back.spectrum == d.spectrum
        doc = json.loads(d.to_json())
        assert set(doc) >= {"spectrum", "mu", "a", "b", "delta", "flags"}
        assert doc["a"][0] == [d.a[0].real, d.a[0].imag]


class TestSmooth:
    def test_constraint(self):
        with pytest.raises(ParameterError):
            SmoothSynthSpec(0.5, 0.5, 1.5)
        SmoothSynthSpec(0.7, 0.7, 0.5)

    @pytest.mark.parametrize("kw", [{"alpha1": 1.0}, {"alpha2": -0.1}, {"gamma": 2.0}])
    def test_windows(self, kw):
        base = {"alpha1": 0.1, "alpha2": 0.1, "gamma": 1.0}
        base.update(kw)
        with pytest.raises(ParameterError):
            SmoothSynthSpec(**base)

    def test_weighted_bounded_plain_divergent(self, squares):
        d = synthesize_smooth(*squares, spec=SmoothSynthSpec(0.2, 0.2, 1.6))
        sums = smooth_sums(d)
        assert last_quarter_increment(sums["a_weighted"]) < 0.01
        assert last_quarter_increment(sums["b_weighted"]) < 0.01
        assert divergence_proxy(sums["a_plain"]) and divergence_proxy(sums["b_plain"])
        assert d.flags["rescaling"]["applied"]
        assert np.allclose(d.a * np.conj(d.b) * d.mu, synthesize(*squares).c, rtol=1e-12)

    def test_reduces_to_plain_synthesis(self, squares):
        d = synthesize_smooth(*squares, spec=SmoothSynthSpec(0.0, 0.0, 1.999999, rescale=False))
        plain = synthesize(*squares)
        assert np.allclose(np.abs(d.a[:200]), np.abs(plain.a[:200]), rtol=1e-5)

    def test_fast_growth_accepted(self):
        d = synthesize_smooth(spec("two_sided_power", 300, gamma=2),
                              spec=SmoothSynthSpec(0.7, 0.7, 0.5))
        assert d.flags["smooth"]["alpha1"] == 0.7

    def test_refuses_divergent_weighted_series(self):
        with pytest.raises(RefusalError):
            synthesize_smooth(spec("squares", 2000), spec=SmoothSynthSpec(0.0, 0.0, 0.5))

    def test_smooth_sums_need_smooth_data(self, squares):
        with pytest.raises(ParameterError):
            smooth_sums(synthesize(*squares))


class TestArbitrary:
    def test_zero_coefficients(self):
        s = spec("squares", 100)
        d = arbitrary_data(s, c=np.zeros(100), delta=1.0)
        m = ModelEvaluator(d)
        assert m.beta(3.3 + 2j) == pytest.approx(1.0)
        assert not d.flags["synthesized"]

    def test_flipped(self, squares):
        d = synthesize(*squares)
        f = flipped(d)
        assert f.c[0] == pytest.approx(-d.c[0]) and np.array_equal(f.c[1:], d.c[1:])

    def test_livsic(self):
        d = livsic_data(100)
        assert d.dissipative_pattern()
        assert np.allclose(d.herglotz_weights, 1 / math.pi)
        assert d.delta == -1.0

    def test_unbounded_proxy(self):
        s = spec("squares", 200)
        with pytest.raises(ValidityError):
            arbitrary_data(s, c=s.points ** 2)

    def test_delta_coinciding_with_sum(self):
        s = Spectrum(np.arange(1, 201, dtype=float) ** 2)
        c = np.ones(200) / np.arange(1, 201) ** 2
        with pytest.raises(ValidityError):
            arbitrary_data(s, c=c, delta=float(np.sum(c / s.points)))

    def test_both_forms_rejected(self):
        with pytest.raises(ParameterError):
            arbitrary_data(spec("squares", 10), c=np.ones(10), a=np.ones(10))

    def test_length_mismatch(self):
        with pytest.raises(ParameterError):
            PerturbationData(spec("squares", 10), np.ones(9), np.ones(10), np.ones(10), 1.0)

    def test_nonpositive_mass(self):
        with pytest.raises(ParameterError):
            PerturbationData(spec("squares", 3), [1, 0, 1], np.ones(3), np.ones(3), 1.0)


_S8 = Spectrum(np.arange(1, 9, dtype=float) ** 2)
_cplx = st.complex_numbers(max_magnitude=1e3, allow_nan=False, allow_infinity=False)


@given(arrays(complex, 8, elements=_cplx), arrays(complex, 8, elements=_cplx),
       arrays(float, 8, elements=st.floats(1e-3, 1e3)))
@settings(max_examples=60, deadline=None)
def test_coefficient_identity(a, b, mu):
    d = arbitrary_data(_S8, a=a, b=b, mu=mu, delta=2.5)
    assert np.array_equal(d.c, a * np.conj(b) * mu)
