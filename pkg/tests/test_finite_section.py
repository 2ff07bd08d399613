import csv
import io

import numpy as np
import pytest
from hypothesis import HealthCheck, given, settings
from hypothesis import strategies as st

from volspec import finite_section as fsec
from volspec.errors import ParameterError, ValidityError
from volspec.model_funcs import ModelEvaluator
from volspec.perturb_synth import arbitrary_data, flipped, livsic_data, synthesize
from volspec.spectra import FamilySpec, Spectrum, generate


@pytest.fixture(scope="module")
def squares_data():
    return synthesize(generate(FamilySpec("squares", {}, 1000)))


def both(data, N):
    fs = fsec.build(data, N)
    return fs, fsec.eigenvalues_dense(fs), fsec.eigenvalues_secular(fs)


class TestBuild:
    def test_single_node(self, squares_data):
        # 1/t - c/(delta t^2) = 1 - 2
        fs, dense, sec = both(squares_data, 1)
        assert dense == pytest.approx([-1.0]) and sec == pytest.approx([-1.0])

    def test_rank_one_structure(self, squares_data):
        fs = fsec.build(squares_data, 20)
        assert fsec.rank_one_gap(fs) < 1e-12
        tr, expected = fs.trace_identity()
        assert tr == pytest.approx(expected, rel=1e-12)

    def test_uses_smallest_moduli(self):
        d = livsic_data(50)
        fs = fsec.build(d, 4)
        assert sorted(np.abs(fs.t)) == [0.5, 0.5, 1.5, 1.5]

    def test_zero_delta(self):
        s = Spectrum([1.0, 4.0])
        d = arbitrary_data(s, c=[1.0, 1.0], delta=0.0)
        with pytest.raises(ValidityError):
            fsec.build(d, 2)

    @pytest.mark.parametrize("N", [0, 1001])
    def test_N_range(self, squares_data, N):
        with pytest.raises(ParameterError):
            fsec.build(squares_data, N)

    def test_dense_size_cap(self):
        d = synthesize(generate(FamilySpec("squares", {}, 600)))
        with pytest.raises(ParameterError):
            fsec.eigenvalues_dense(fsec.build(d, 513))


class TestEigenvalues:
    def test_unperturbed(self):
        s = generate(FamilySpec("squares", {}, 30))
        d = arbitrary_data(s, c=np.zeros(30), delta=1.0)
        fs, dense, sec = both(d, 12)
        expected = 1.0 / np.arange(1, 13) ** 2
        assert np.allclose(np.sort(dense.real)[::-1], expected)
        assert np.allclose(sec, dense)
        assert any("deflated" in n for n in fs.notes)

    def test_hermitian_real_spectrum(self):
        s = generate(FamilySpec("livsic", {"c": 1.0}, 20))
        w = np.random.default_rng(0).uniform(0.1, 2.0, len(s))
        d = arbitrary_data(s, a=np.sqrt(w), b=np.sqrt(w), delta=-1.5)
        fs, dense, sec = both(d, 15)
        assert fs.is_hermitian
        assert np.max(np.abs(dense.imag)) < 1e-12
        assert np.max(fsec.match_multisets(dense, sec)) < 1e-10

    @pytest.mark.parametrize("N", [10, 25, 50])
    def test_dual_oracle_squares(self, squares_data, N):
        _, dense, sec = both(squares_data, N)
        assert np.max(fsec.match_multisets(dense, sec)) <= 1e-8

    @pytest.mark.parametrize("N", [10, 25])
    def test_dual_oracle_livsic(self, N):
        _, dense, sec = both(livsic_data(100), N)
        assert np.max(fsec.match_multisets(dense, sec)) <= 1e-8

    def test_dual_oracle_flipped(self, squares_data):
        _, dense, sec = both(flipped(squares_data), 30)
        assert np.max(fsec.match_multisets(dense, sec)) <= 1e-8

    def test_eigenvalues_are_reciprocal_zeros(self, squares_data):
        # f(1/z) = beta_N(z) / delta
        fs, dense, _ = both(flipped(squares_data), 20)
        m = ModelEvaluator(flipped(squares_data), N=20)
        z = 1 / dense[:3]
        assert np.allclose(m.beta(z), 0, atol=1e-8)
        assert np.allclose(fs.secular(dense[:3]), 0, atol=1e-8)

    def test_sorted_by_modulus(self, squares_data):
        _, dense, _ = both(squares_data, 30)
        mod = np.abs(dense)
        assert np.all(np.diff(mod) <= 1e-15 * mod[0])


class TestCollapse:
    def test_radius_decreases(self, squares_data):
        rows = fsec.collapse_profile(squares_data, [25, 50, 100])
        assert fsec.is_strictly_decreasing(rows)

    def test_flipped_keeps_an_eigenvalue(self, squares_data):
        rows = fsec.collapse_profile(flipped(squares_data), [25, 50, 100])
        assert min(r.spectral_radius for r in rows) >= 0.2
        assert all(r.n_zeros_in_window >= 1 for r in rows)

    def test_requires_increasing_N(self, squares_data):
        with pytest.raises(ParameterError):
            fsec.collapse_profile(squares_data, [50, 25])

    def test_csv(self, squares_data):
        text = fsec.collapse_csv(fsec.collapse_profile(squares_data, [5, 10]))
        rows = list(csv.reader(io.StringIO(text)))
        assert tuple(rows[0]) == fsec.COLLAPSE_HEADER and len(rows) == 3


def test_match_sizes():
    with pytest.raises(ParameterError):
        fsec.match_multisets([1, 2], [1])


def test_match_is_permutation_invariant():
    a = np.array([1 + 1j, 2, -3j])
    assert np.max(fsec.match_multisets(a, a[::-1])) == 0


@st.composite
def small_sections(draw):
    n = draw(st.integers(1, 7))
    mags = draw(st.lists(st.integers(1, 60), min_size=n, max_size=n, unique=True))
    signs = draw(st.lists(st.sampled_from([-1, 1]), min_size=n, max_size=n))
    t = np.array([m * s for m, s in zip(mags, signs)], dtype=float) / 4
    c = np.array(draw(st.lists(st.floats(-3, 3).filter(lambda x: abs(x) > 1e-3),
                               min_size=n, max_size=n)))
    delta = draw(st.sampled_from([-2.0, -0.5, 0.75, 1.0, 3.0]))
    return Spectrum(t), c, delta


@given(small_sections())
@settings(max_examples=40, deadline=None, suppress_health_check=[HealthCheck.too_slow])
def test_dual_oracle_random(case):
    s, c, delta = case
    d = arbitrary_data(s, c=c, delta=delta)
    fs, dense, sec = both(d, len(s))
    scale = max(np.max(np.abs(dense)), 1e-300)
    err = np.abs(dense[:, None] - sec[None, :]).min(axis=1) / scale
    assert np.max(err) < 1e-8
