import math

import numpy as np
import pytest

from lgropt.hypercomplex import (
    Bicomplex,
    DomainError,
    HyperDual,
    arctan2,
    cos,
    exp,
    log,
    real_part,
    sin,
    sqrt,
)


def bc(re, im1=0.0, im2=0.0, im12=0.0):
    return Bicomplex(re, im1, im2, im12)


def hd(re, ep1=0.0, ep2=0.0, ep12=0.0):
    return HyperDual(re, ep1, ep2, ep12)


def assert_components(z, expected, rtol=0.0, atol=0.0):
    np.testing.assert_allclose(z.components(), expected, rtol=rtol, atol=atol)


class TestBicomplexArithmetic:
    def test_unit_product(self):
        # (1 + i1)(1 + i2) = 1 + i1 + i2 + i1*i2, expanded by hand
        z = bc(1.0, 1.0) * bc(1.0, 0.0, 1.0)
        assert_components(z, (1.0, 1.0, 1.0, 1.0))

    def test_seeded_square(self):
        # (x + h*i1 + h*i2)**2 = x^2 - 2h^2 + 2xh*i1 + 2xh*i2 + 2h^2*i1i2
        z = bc(3.0, 0.01, 0.01)
        assert_components(z * z, (8.9998, 0.06, 0.06, 0.0002))
        assert_components(z ** 2, (8.9998, 0.06, 0.06, 0.0002))

    def test_additive_identity(self):
        z = bc(1.25, -0.5, 0.75, 2.0)
        assert z + 0.0 == z
        assert 0.0 + z == z

    def test_division_round_trip(self):
        a = bc(2.0, 0.3, -0.1, 0.05)
        b = bc(-1.5, 0.2, 0.4, -0.3)
        assert_components((a / b) * b, a.components(), rtol=1e-14, atol=1e-16)

    def test_zero_divisor_rejected(self):
        # c1 = 1+0j, c2 = i1 gives c1^2 + c2^2 = 0: a genuine zero divisor
        z = bc(1.0, 0.0, 0.0, 1.0)
        with pytest.raises(ZeroDivisionError, match="zero divisor"):
            bc(1.0) / z

    def test_real_isomorphism(self):
        x, y = 1.7, -0.4
        z = bc(x) * bc(y) + bc(x) / bc(y) - bc(2.5)
        assert z.components() == (x * y + x / y - 2.5, 0.0, 0.0, 0.0)


class TestBicomplexFunctions:
    def test_exp_zero(self):
        assert_components(exp(bc(0.0)), (1.0, 0.0, 0.0, 0.0))

    def test_sqrt_real(self):
        assert_components(sqrt(bc(4.0)), (2.0, 0.0, 0.0, 0.0))

    def test_sin_derivative_channel(self):
        h = 1e-8
        z = sin(bc(0.5, h, h))
        assert abs(z.im1 / h - math.cos(0.5)) / abs(math.cos(0.5)) <= 1e-10
        assert abs(z.im2 / h - math.cos(0.5)) / abs(math.cos(0.5)) <= 1e-10

    def test_square_second_channel_exact(self):
        for h in (1.0, 1e-3, 1e-8, 1e-13):
            z = bc(3.0, h, h)
            assert (z * z).im12 / h**2 == 2.0

    def test_sin_second_channel_truncation_order(self):
        # error of im12/h^2 vs -sin(x) should fall off like h^2
        x = 0.7
        hs = np.logspace(-1, -4, 7)
        errs = []
        for h in hs:
            z = sin(bc(x, h, h))
            errs.append(abs(z.im12 / h**2 + math.sin(x)))
        slope = np.polyfit(np.log(hs), np.log(errs), 1)[0]
        assert 1.8 <= slope <= 2.2

    def test_log_domain(self):
        with pytest.raises(DomainError):
            log(bc(-1.0, 1e-8))


class TestHyperDualArithmetic:
    def test_full_product(self):
        z = hd(1.0, 2.0, 3.0, 4.0) * hd(5.0, 6.0, 7.0, 8.0)
        assert_components(z, (5.0, 16.0, 22.0, 60.0))

    def test_multiplicative_identity(self):
        a = hd(2.0, -1.0, 0.5, 3.0)
        assert a * 1.0 == a
        assert a * hd(1.0) == a

    def test_seeded_square_no_real_contamination(self):
        # unlike bicomplex, the real part stays exactly x^2
        z = hd(3.0, 0.01, 0.01)
        assert_components(z * z, (9.0, 0.06, 0.06, 0.0002))

    def test_division_by_zero_real(self):
        with pytest.raises(ZeroDivisionError):
            hd(1.0) / hd(0.0, 1.0, 1.0)

    def test_reciprocal_round_trip(self):
        a = hd(0.8, 1.5, -2.0, 0.3)
        assert_components(a / a, (1.0, 0.0, 0.0, 0.0), atol=1e-16)


class TestHyperDualFunctions:
    def test_exp_at_zero(self):
        assert_components(exp(hd(0.0, 1.0, 1.0)), (1.0, 1.0, 1.0, 1.0))

    def test_log_at_one(self):
        assert_components(log(hd(1.0, 1.0, 1.0)), (0.0, 1.0, 1.0, -1.0))

    def test_sin_at_half_pi(self):
        z = sin(hd(math.pi / 2, 1.0, 1.0))
        assert_components(z, (1.0, 0.0, 0.0, -1.0), atol=1e-16)

    def test_sqrt_at_zero_rejected(self):
        with pytest.raises(DomainError):
            sqrt(hd(0.0, 1.0))

    def test_abs_convention_at_zero(self):
        z = abs(hd(0.0, 1.0, 1.0))
        assert z.ep1 == 1.0 and z.ep2 == 1.0


# -- algebra laws on random triples ------------------------------------------

def _random_values(kind, rng, n):
    comps = rng.uniform(-2.0, 2.0, size=(n, 4))
    if kind is Bicomplex:
        return [Bicomplex(*c) for c in comps]
    return [HyperDual(*c) for c in comps]


def _close(a, b, rtol=1e-14):
    for x, y in zip(a.components(), b.components()):
        assert x == pytest.approx(y, rel=rtol, abs=1e-14)


@pytest.mark.parametrize("kind", [Bicomplex, HyperDual])
def test_algebra_laws(kind):
    rng = np.random.default_rng(42)
    for _ in range(50):
        a, b, c = _random_values(kind, rng, 3)
        _close(a * b, b * a)
        _close(a + b, b + a)
        _close((a * b) * c, a * (b * c))
        _close(a * (b + c), a * b + a * c)


def test_hyperdual_chain_rule_exact_across_h():
    # composite g(f(x)) with analytic derivative; every h gives the same value
    composites = [
        (lambda x: sin(exp(x) * x), lambda x: math.cos(math.exp(x) * x) * math.exp(x) * (x + 1.0)),
        (lambda x: exp(sin(x) + x * x), lambda x: math.exp(math.sin(x) + x * x) * (math.cos(x) + 2 * x)),
        (lambda x: log(2.0 + cos(x)), lambda x: -math.sin(x) / (2.0 + math.cos(x))),
    ]
    rng = np.random.default_rng(7)
    for f, dfdx in composites:
        for x0 in rng.uniform(-1.5, 1.5, size=4):
            for h in (1e-30, 1e-10, 1.0, 1e10):
                w = f(HyperDual(float(x0), h, h))
                d = w.ep1 / h
                assert d == pytest.approx(dfdx(x0), rel=1e-13)


@pytest.mark.parametrize("kind", [Bicomplex, HyperDual])
def test_real_restriction_bit_for_bit(kind):
    def composite(x):
        return sin(x) * exp(x) + sqrt(x * x + 1.0) / (cos(x) + 2.0) - log(x * x + 0.5)

    rng = np.random.default_rng(3)
    for x0 in rng.uniform(-2.0, 2.0, size=20):
        x0 = float(x0)
        plain = composite(x0)
        lifted = composite(kind(x0))
        assert lifted.components() == (plain, 0.0, 0.0, 0.0)


def test_comparisons_use_real_part():
    assert hd(1.0, 99.0) < 2.0
    assert bc(3.0, -99.0) > 2.0
    assert max(hd(1.0, 5.0), hd(2.0, -5.0)).re == 2.0
    assert min(1.5, hd(1.0, 5.0)).re == 1.0


def test_numpy_object_array_dispatch():
    arr = np.array([hd(0.5, 1.0), hd(1.5, 1.0)], dtype=object)
    out = np.sin(arr)
    assert out[0].re == math.sin(0.5)
    assert out[0].ep1 == math.cos(0.5)


def test_real_part_helper():
    assert real_part(2.5) == 2.5
    assert real_part(hd(1.5, 3.0)) == 1.5
    assert real_part(bc(0.5, 1.0)) == 0.5


def test_arctan2_matches_math():
    pts = [(1.0, 2.0), (1.0, -2.0), (-1.0, 2.0), (-1.0, -2.0), (2.0, 0.0), (-2.0, 0.0)]
    for y, x in pts:
        z = arctan2(hd(y, 1.0), hd(x, 0.0, 1.0))
        assert real_part(z) == pytest.approx(math.atan2(y, x), rel=1e-15)
        # gradient of atan2: (x, -y)/(x^2+y^2)
        r2 = x * x + y * y
        assert z.ep1 == pytest.approx(x / r2, rel=1e-13)
        assert z.ep2 == pytest.approx(-y / r2, rel=1e-13)
