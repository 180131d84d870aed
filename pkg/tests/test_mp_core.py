import itertools

import numpy as np
import pytest
from hypothesis import assume, given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from mpkm.arith import FixedArithmetic, FloatArithmetic
from mpkm.fxp import FxFormat, audit_counters, quantize
from mpkm.mp_core import GammaParams, MPConfig, mp_exact, mp_newton, mp_partial, mp_solve


def brute_force_mp(x, gamma):
    """Try every candidate active set; keep the self-consistent one."""
    x = list(map(float, x))
    for r in range(1, len(x) + 1):
        for subset in itertools.combinations(range(len(x)), r):
            z = (sum(x[i] for i in subset) - gamma) / r
            inside = all(x[i] > z for i in subset)
            outside = all(x[i] <= z for i in range(len(x)) if i not in subset)
            if inside and outside:
                return z
    raise AssertionError("no consistent active set")


def residual(x, z, gamma):
    return np.sum(np.maximum(np.asarray(x) - z, 0.0)) - gamma


vectors = arrays(np.float64, st.integers(1, 12), elements=st.floats(-4, 4))
gammas = st.floats(0.05, 4.0)


class TestExact:
    def test_single_input(self):
        assert mp_exact([2.5], 1.0).z == 1.5

    def test_equal_pair(self):
        assert mp_exact([0.7, 0.7], 0.5).z == pytest.approx(0.45)

    def test_both_active(self):
        r = mp_exact([3.0, 2.0], 2.0)
        assert r.z == pytest.approx(brute_force_mp([3, 2], 2))
        assert r.z == pytest.approx(1.5)
        assert r.active_count == 2

    def test_one_active(self):
        r = mp_exact([3.0, 0.0], 2.0)
        assert r.z == pytest.approx(brute_force_mp([3, 0], 2))
        assert r.z == pytest.approx(1.0)
        assert r.active_count == 1
        np.testing.assert_array_equal(r.val_signs, [1, -1])

    def test_batched(self, rng):
        x = rng.uniform(-4, 4, (5, 7))
        z = mp_exact(x, 1.0).z
        for row, zr in zip(x, z):
            assert zr == pytest.approx(brute_force_mp(row, 1.0))

    def test_per_row_gamma(self):
        z = mp_exact(np.array([[1.0], [1.0]]), np.array([0.5, 0.25])).z
        np.testing.assert_allclose(z, [0.5, 0.75])

    def test_errors(self):
        with pytest.raises(ValueError):
            mp_exact([1.0], 0.0)
        with pytest.raises(ValueError):
            mp_exact(np.zeros(0), 1.0)

    @given(vectors, gammas)
    def test_matches_brute_force(self, x, g):
        assert mp_exact(x, g).z == pytest.approx(brute_force_mp(x, g), abs=1e-9)

    @given(vectors, gammas)
    def test_satisfies_constraint(self, x, g):
        r = mp_exact(x, g)
        assert residual(x, r.z, g) == pytest.approx(0.0, abs=1e-9)
        assert r.active_count == np.count_nonzero(r.active_mask)

    @given(vectors, gammas, st.floats(-3, 3))
    def test_translation_equivariant(self, x, g, c):
        assert mp_exact(x + c, g).z == pytest.approx(mp_exact(x, g).z + c, abs=1e-9)

    @given(vectors, gammas, st.floats(0.1, 5))
    def test_positive_homogeneous(self, x, g, a):
        assert mp_exact(a * x, a * g).z == pytest.approx(a * mp_exact(x, g).z, abs=1e-8)

    @given(vectors, gammas, st.integers(0, 2**32 - 1))
    def test_permutation_invariant(self, x, g, seed):
        perm = np.random.default_rng(seed).permutation(x.size)
        assert mp_exact(x[perm], g).z == pytest.approx(mp_exact(x, g).z, abs=1e-12)

    @given(vectors, gammas, st.floats(0, 2), st.data())
    def test_monotone_in_each_input(self, x, g, bump, data):
        i = data.draw(st.integers(0, x.size - 1))
        y = x.copy()
        y[i] += bump
        assert mp_exact(y, g).z >= mp_exact(x, g).z - 1e-12

    @given(vectors, gammas)
    def test_bounds(self, x, g):
        z = mp_exact(x, g).z
        assert x.max() - g <= z + 1e-12
        assert z < x.max()


class TestNewton:
    def test_pair_float(self):
        r = mp_newton(np.array([3.0, 2.0]), MPConfig(gamma=2.0))
        assert abs(r.z - 1.5) <= 0.004

    def test_single_input_exact(self):
        r = mp_newton(np.array([1.25]), MPConfig(gamma=0.5))
        assert r.z == 0.75
        r = mp_newton(np.array([1.25]), MPConfig(gamma=0.5, init="max", rounds=1))
        assert r.z == 0.75

    def test_max_init_converges(self, rng):
        x = rng.uniform(-4, 4, (200, 20))
        z = mp_newton(x, MPConfig(gamma=1.0, init="max", rounds=30)).z
        np.testing.assert_allclose(z, mp_exact(x, 1.0).z, atol=1e-6)

    def test_fixed_within_one_lsb(self, rng):
        q = quantize(rng.uniform(-4, 4, (1000, 100)))
        r = mp_newton(q, MPConfig(gamma=1.0))
        err = np.abs(r.z.value - mp_exact(q.value, 1.0).z)
        assert err.max() <= q.fmt.lsb
        assert audit_counters().multiplies == 0

    def test_iterates_never_empty(self, rng):
        for g in (2.0 ** -8, 0.01, 0.5):
            x = rng.uniform(-4, 4, (500, 3))
            x[:, 1] = x[:, 0]
            r = mp_newton(quantize(x), MPConfig(gamma=g))
            assert np.all(r.active_count >= 1)

    def test_shifted_convention(self):
        x = np.array([3.0, 2.0])
        plain = mp_newton(x, MPConfig(gamma=2.0)).z
        shifted = mp_newton(x, MPConfig(gamma=2.0, convention="shifted")).z
        assert shifted == pytest.approx(plain + 2.0)

    def test_operation_census(self):
        n, rounds = 16, 10
        mp_newton(quantize(np.linspace(-2, 2, n)), MPConfig(gamma=1.0, rounds=rounds))
        c = audit_counters()
        # one comparator per input per round, plus the top-2 tree and init max
        assert c.compares == n * rounds + (2 * n - 3) + 1
        assert c.multiplies == 0
        assert c.mp_inputs == n

    @pytest.mark.parametrize("bad", [dict(gamma=0.0), dict(rounds=0), dict(convention="odd"),
                                     dict(init="zero")])
    def test_config_validation(self, bad):
        with pytest.raises(ValueError):
            MPConfig(**bad)

    @settings(max_examples=60)
    @given(arrays(np.float64, st.integers(2, 40), elements=st.floats(-4, 4)), st.floats(0.1, 3))
    def test_fixed_close_to_exact(self, x, g):
        q = quantize(x)
        r = mp_newton(q, MPConfig(gamma=g))
        exact = mp_exact(q.value, quantize(g).value).z
        assert abs(r.z.value - exact) <= 2 * q.fmt.lsb


class TestSolveDispatch:
    def test_float_exact_vs_newton(self, rng):
        x = rng.uniform(-1, 1, (10, 9))
        a = mp_solve(x, 0.5, FloatArithmetic()).z
        b = mp_solve(x, 0.5, FloatArithmetic(solver="newton")).z
        np.testing.assert_allclose(a, b, atol=1e-3 * 0.5)

    def test_fixed_path_audited(self):
        ar = FixedArithmetic(FxFormat(12, 8))
        mp_solve(ar.const(np.array([[1.0, 0.5, -0.5]])), ar.const(0.5), ar)
        assert audit_counters().adds > 0


class TestPartial:
    def test_pair(self):
        assert mp_partial([3.0, 2.0], 2.0, 0) == (0.5, False)

    def test_inactive(self):
        assert mp_partial([3.0, 0.0], 2.0, 1) == (0.0, False)

    def test_single(self):
        assert mp_partial([0.3], 1.0, 0) == (1.0, False)

    def test_tie_flagged(self):
        # x = [2, 1], gamma = 1: z = 1 exactly, so the second input sits on the kink
        assert mp_partial([2.0, 1.0], 1.0, 1) == (0.0, True)

    @given(vectors, gammas, st.data())
    def test_matches_finite_difference(self, x, g, data):
        i = data.draw(st.integers(0, x.size - 1))
        z = mp_exact(x, g).z
        assume(np.min(np.abs(x - z)) > 1e-4)
        h = 1e-6
        xp, xm = x.copy(), x.copy()
        xp[i] += h
        xm[i] -= h
        fd = (mp_exact(xp, g).z - mp_exact(xm, g).z) / (2 * h)
        val, tie = mp_partial(x, g, i)
        assert not tie
        assert val == pytest.approx(fd, abs=1e-7)


def test_gamma_params():
    assert GammaParams().gamma_n == 1.0
    with pytest.raises(ValueError):
        GammaParams(gamma_n=2.0)
    with pytest.raises(ValueError):
        GammaParams(gamma1=0.0)
