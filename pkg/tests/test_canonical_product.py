import math

import mpmath as mp
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from volspec.canonical_product import GeneratingFunction
from volspec.errors import (DegeneracyError, ParameterError, ProductOverflowError,
                            ProximityError)
from volspec.spectra import FamilySpec, Spectrum, generate


def spec(family, count=2000, **params):
    return generate(FamilySpec(family, params, count))


@pytest.fixture(scope="module")
def squares():
    return GeneratingFunction(spec("squares", 10_000))


@pytest.fixture(scope="module")
def livsic():
    return GeneratingFunction(spec("livsic", 10_000, c=1.0))


def sinc_sqrt(z):
    r = np.sqrt(np.asarray(z, dtype=complex))
    return np.sin(np.pi * r) / (np.pi * r)


def grid(nodes, radius=10.0, n=60, seed=0):
    rng = np.random.default_rng(seed)
    z = radius * np.sqrt(rng.uniform(size=4 * n)) * np.exp(2j * np.pi * rng.uniform(size=4 * n))
    far = np.min(np.abs(z[:, None] - nodes[None, :]), axis=1) >= 0.1
    return z[far][:n]


class TestValues:
    @pytest.mark.parametrize("family,params", [
        ("squares", {}), ("livsic", {"c": 1.0}), ("one_sided_power", {"gamma": 1.5}),
        ("near_pairs", {"q": 0.5}), ("shifted_progression", {"a": 0.3}),
    ])
    def test_normalized_at_origin(self, family, params):
        g = GeneratingFunction(spec(family, 200, **params))
        assert g.eval(0.0) == 1.0
        assert g.log_abs_eval(0.0) == 0.0

    def test_squares_quarter(self, squares):
        assert abs(squares.eval(0.25) / (2 / math.pi) - 1) <= 1e-4

    def test_livsic_third(self, livsic):
        assert abs(livsic.eval(1 / 3) - 0.5) <= 1e-4

    def test_squares_oracle_grid(self, squares):
        z = grid(squares.nodes)
        exact = sinc_sqrt(z)
        assert np.max(np.abs(squares.eval(z) / exact - 1)) <= 1e-4

    def test_livsic_oracle_grid(self, livsic):
        z = grid(livsic.nodes)
        exact = np.cos(np.pi * z)
        assert np.max(np.abs(livsic.eval(z) / exact - 1)) <= 1e-4

    def test_real_on_axis_and_vanishes_at_nodes(self, squares):
        x = np.array([0.3, 2.0, 7.5, -4.0])
        assert np.all(np.isreal(squares.eval(x)))
        near = np.array([1.0, 4.0, 9.0]) * (1 + 1e-9)
        assert np.all(np.abs(squares.eval(near)) < 1e-8)

    def test_even_for_symmetric_spectra(self, livsic):
        z = grid(livsic.nodes, n=20)
        assert np.allclose(livsic.eval(z), livsic.eval(-z), rtol=1e-12)

    def test_log_abs_at_minus_hundred(self, squares):
        # closed form at sqrt(z) = 10i
        expected = math.log(math.sinh(10 * math.pi) / (10 * math.pi))
        assert squares.log_abs_eval(-100.0) == pytest.approx(expected, rel=1e-6)
        assert expected == pytest.approx(27.2755, abs=1e-4)

    def test_log_abs_matches_eval(self, squares):
        z = grid(squares.nodes, n=40)
        assert np.allclose(np.exp(squares.log_abs_eval(z)), np.abs(squares.eval(z)),
                           rtol=1e-10, atol=0)

    def test_order_zero_growth_ratio(self):
        # rho = 0.3 counting growth: log|A(-t)| ~ pi D t^rho / sin(pi rho)
        s = spec("one_sided_power", 5000, gamma=1 / 0.3)
        g = GeneratingFunction(s)
        t = float(s.points[-1])
        ratio = g.log_abs_eval(-t) / t ** 0.3 / (math.pi / math.sin(0.3 * math.pi))
        assert abs(ratio - 1) < 0.1

    def test_tail_orders_agree(self):
        s = spec("squares", 5000)
        z = np.array([0.25, 3.3 + 1j, -7.0])
        ref = sinc_sqrt(z)
        for order in (1, 2, "auto"):
            g = GeneratingFunction(s, tail_order=order)
            assert np.allclose(g.eval(z), ref, rtol=1e-4)

    def test_closed_form_strategy_agrees(self):
        s = spec("integers_punctured", 3000)
        num = GeneratingFunction(s)
        cf = GeneratingFunction(s, strategy="closed_form")
        z = np.array([0.2 + 0.3j, 2.7, -3.1 - 2j])
        assert np.allclose(num.eval(z), cf.eval(z), rtol=1e-8)

    def test_overflow_signalled(self):
        g = GeneratingFunction(spec("livsic", 200, c=1.0))
        with pytest.raises(ProductOverflowError):
            g.eval(300j)
        assert g.log_abs_eval(300j) == pytest.approx(300 * math.pi - math.log(2), rel=1e-6)

    def test_proximity(self, squares):
        with pytest.raises(ProximityError):
            squares.log_abs_eval(4.0 + 1e-14)


class TestGammaFamilyOracle:
    """``prod (1 - z^2/(k+a)^2) = Gamma(a)^2 / (Gamma(a-z) Gamma(a+z))`` in mpmath."""

    @pytest.mark.parametrize("a", [0.3, 0.5, 1.5])
    def test_against_mpmath(self, a):
        g = GeneratingFunction(spec("shifted_progression", 5000, a=a))
        for z in (0.7 + 0.2j, -2.2 + 1.5j, 3.9):
            exact = complex(mp.gamma(a) ** 2 / (mp.gamma(a - z) * mp.gamma(a + z)))
            assert abs(g.eval(z) / exact - 1) <= 1e-6


class TestNodeDerivatives:
    def test_squares_second_node(self, squares):
        # A'(n^2) = (-1)^n / (2 n^2); the sign follows from the sinc closed form
        assert squares.deriv_at_node(1) == pytest.approx(1 / 8, rel=1e-10)
        assert squares.deriv_at_node(0) == pytest.approx(-1 / 2, rel=1e-10)

    def test_integers(self):
        s = spec("integers_punctured", 4000, t0=None)
        g = GeneratingFunction(s)
        for n in (1, 2, 5):
            assert g.deriv_at_point(n) == pytest.approx((-1) ** n / n, rel=1e-3)
            assert g.deriv_at_point(-n) == pytest.approx(-((-1) ** n) / n, rel=1e-3)

    def test_livsic_half(self, livsic):
        assert livsic.deriv_at_point(0.5) == pytest.approx(-math.pi, rel=1e-4)

    @pytest.mark.parametrize("family,params", [
        ("squares", {}), ("livsic", {"c": 1.0}), ("shifted_progression", {"a": 0.5}),
        ("one_sided_power", {"gamma": 2.5}),
    ])
    def test_central_difference(self, family, params):
        g = GeneratingFunction(spec(family, 3000, **params))
        for i in (0, 3, 10):
            t = float(g.nodes[i])
            h = 1e-6 * max(1.0, abs(t))
            fd = (g.eval(t + h) - g.eval(t - h)) / (2 * h)
            assert g.deriv_at_node(i) == pytest.approx(fd.real, rel=1e-4)

    def test_closed_form_node_derivative(self):
        g = GeneratingFunction(spec("squares", 200), strategy="closed_form")
        assert g.deriv_at_point(9.0) == pytest.approx(-1 / 18, rel=1e-9)

    def test_degenerate_nodes(self):
        g = GeneratingFunction(Spectrum([1.0, 1.0 + 1e-15, 3.0]))
        with pytest.raises(DegeneracyError):
            g.deriv_at_node(0)

    def test_not_a_node(self, squares):
        with pytest.raises(ParameterError):
            squares.deriv_at_point(2.0)

    def test_index_range(self, squares):
        with pytest.raises(IndexError):
            squares.deriv_at_node(10_000)


class TestOptions:
    def test_bad_strategy(self):
        with pytest.raises(ParameterError):
            GeneratingFunction(spec("squares", 10), strategy="hadamard")

    def test_bad_tail_order(self):
        with pytest.raises(ParameterError):
            GeneratingFunction(spec("squares", 10), tail_order=1.5)

    def test_no_closed_form(self):
        with pytest.raises(ParameterError):
            GeneratingFunction(spec("one_sided_power", 10, gamma=1.5), strategy="closed_form")


@given(st.floats(-20, 20), st.floats(0.05, 20))
@settings(max_examples=50, deadline=None)
def test_conjugate_symmetry(x, y):
    g = _SMALL_SQUARES
    z = complex(x, y)
    assert np.isclose(g.eval(np.conj(z)), np.conj(g.eval(z)), rtol=1e-12)


_SMALL_SQUARES = GeneratingFunction(spec("squares", 500))


def test_backends_agree():
    from volspec import _kernels
    if not _kernels.NUMBA_AVAILABLE:
        pytest.skip("numba not installed")
    s = spec("two_sided_power", 1000, gamma=1.5)
    z = grid(s.points, n=30)
    a = GeneratingFunction(s, backend="numpy").eval(z)
    b = GeneratingFunction(s, backend="numba").eval(z)
    assert np.allclose(a, b, rtol=1e-11)
