import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate

from emdini.errors import ConfigurationError
from emdini.modulus import (
    CONVERGENT,
    DIVERGENT,
    INCONCLUSIVE,
    ModulusSpec,
    check_concavity_sq,
    check_dini_integral,
    eval_modulus,
    holder_dini,
    is_monotone,
    modulus_from_dict,
    modulus_to_dict,
)


def test_eval_closed_forms():
    s = np.array([1e-6, 0.01, 0.3, 1.0])
    np.testing.assert_allclose(eval_modulus(ModulusSpec.linear(3.0), s), 3.0 * s)
    np.testing.assert_allclose(eval_modulus(ModulusSpec.power(0.25), s), s ** 0.25)
    np.testing.assert_allclose(eval_modulus(ModulusSpec.logpower(2.0), s), (1 - np.log(s)) ** -2.0)
    prod = holder_dini(0.5, ModulusSpec.logpower(1.0))
    np.testing.assert_allclose(eval_modulus(prod, s), s ** 0.5 / (1 - np.log(s)))


def test_scalar_input_gives_float():
    v = ModulusSpec.power(0.5)(0.25)
    assert isinstance(v, float) and v == 0.5


def test_zero_maps_to_zero():
    for spec in (ModulusSpec.linear(), ModulusSpec.power(0.3), ModulusSpec.logpower(1.0)):
        assert eval_modulus(spec, 0.0) == 0.0


def test_clamps_beyond_cap():
    spec = ModulusSpec.power(0.5, domain_cap=0.25)
    assert spec(10.0) == spec(0.25) == 0.5


def test_custom_table_interpolates_and_is_monotone():
    spec = ModulusSpec.custom([(0, 0), (0.25, 0.5), (1, 1)])
    assert spec(0.25) == pytest.approx(0.5)
    assert is_monotone(spec)


@pytest.mark.parametrize(
    "bad",
    [
        lambda: ModulusSpec.power(0.0),
        lambda: ModulusSpec.power(1.5),
        lambda: ModulusSpec.logpower(-1.0),
        lambda: ModulusSpec.logpower(1.0, domain_cap=3.0),
        lambda: holder_dini(1.0, ModulusSpec.power(0.5)),
        lambda: ModulusSpec.custom([(0, 0.1), (1, 1)]),
        lambda: ModulusSpec.custom([(0, 0), (0.5, 0.8), (1, 0.4)]),
    ],
)
def test_invalid_specs_rejected(bad):
    with pytest.raises(ConfigurationError):
        bad()


@pytest.mark.parametrize("alpha", [1.0, 0.5, 0.25, 0.1])
def test_power_integral_matches_one_over_alpha(alpha):
    v = check_dini_integral(ModulusSpec.power(alpha))
    assert v.status == CONVERGENT
    assert v.integral_estimate == pytest.approx(1.0 / alpha, abs=1e-6)


def test_logpower_integral_oracle():
    # int_0^1 (1 - log s)^-gamma / s ds = 1 / (gamma - 1), computed independently by quad in u = -log s
    gamma = 3.0
    ref, _ = integrate.quad(lambda u: (1 + u) ** -gamma, 0, np.inf)
    v = check_dini_integral(ModulusSpec.logpower(gamma))
    assert ref == pytest.approx(0.5)
    # the tail below the smallest cutoff 1e-256 is at most 1 / (2 (1 + u_max)^2)
    u_max = 256 * math.log(10)
    missing = ref - v.integral_estimate
    assert 0 <= missing <= 0.5 / (1 + u_max) ** 2 + 1e-9
    assert v.status != DIVERGENT


def test_logpower_one_is_divergent():
    assert check_dini_integral(ModulusSpec.logpower(1.0)).status == DIVERGENT


def test_slow_tails_are_inconclusive():
    assert check_dini_integral(ModulusSpec.logpower(1.5)).status == INCONCLUSIVE


def test_partials_nondecreasing():
    v = check_dini_integral(ModulusSpec.logpower(1.0))
    assert all(b >= a for a, b in zip(v.partials, v.partials[1:]))


def test_concavity_of_square():
    grid = np.linspace(0.025, 1, 40)
    assert check_concavity_sq(ModulusSpec.power(0.5), grid) == []
    assert check_concavity_sq(ModulusSpec.power(0.25), grid) == []
    # s^0.9 squared is s^1.8, which is convex
    assert check_concavity_sq(ModulusSpec.power(0.9), grid)


def test_dict_round_trip():
    spec = holder_dini(0.3, ModulusSpec.logpower(2.0))
    again = modulus_from_dict(modulus_to_dict(spec))
    s = np.geomspace(1e-9, 1, 50)
    np.testing.assert_array_equal(eval_modulus(spec, s), eval_modulus(again, s))


@settings(max_examples=60, deadline=None)
@given(
    kind=st.sampled_from(["linear", "power", "logpower"]),
    param=st.floats(0.05, 1.0),
    a=st.floats(0, 2),
    b=st.floats(0, 2),
)
def test_monotone_property(kind, param, a, b):
    spec = ModulusSpec(kind, param)
    lo, hi = sorted((a, b))
    assert eval_modulus(spec, lo) <= eval_modulus(spec, hi)


@settings(max_examples=40, deadline=None)
@given(alpha=st.floats(0.05, 0.5), x=st.floats(0, 1), y=st.floats(0, 1))
def test_power_square_is_midpoint_concave(alpha, x, y):
    phi = ModulusSpec.power(alpha)
    mid = phi((x + y) / 2) ** 2
    assert mid >= (phi(x) ** 2 + phi(y) ** 2) / 2 - 1e-12


def test_checker_is_fast():
    import time

    start = time.perf_counter()
    check_dini_integral(ModulusSpec.power(0.5))
    check_dini_integral(ModulusSpec.logpower(1.0))
    assert time.perf_counter() - start < 1.0
    assert math.isfinite(check_dini_integral(ModulusSpec.power(0.5)).integral_estimate)
