import math
from fractions import Fraction

import pytest
from hypothesis import given, settings, strategies as st

from redox_sim.errors import ConfigError
from redox_sim.randomness import compute_bound, enumerate_reachable, position_uniformity


def test_bound_small_exact():
    b = compute_bound(8, 2, 2)       # F/M = 4, G = 2
    assert (b.G, b.full_exact, b.divisor_exact, b.lower_bound_exact) == (2, 24, 4, 6)


def test_bound_large_divisor():
    b = compute_bound(1_280_000, 5000, 64)
    assert b.G == 4
    assert b.log10_divisor == pytest.approx(64 * math.log10(24), abs=1e-9)
    assert b.divisor == pytest.approx(2.16e88, rel=0.01)
    assert b.full_exact is None
    # log10(256!) from an independent product
    assert b.log10_full == pytest.approx(sum(math.log10(i) for i in range(1, 257)), rel=1e-12)
    assert b.log10_lower_bound == pytest.approx(b.log10_full - b.log10_divisor)


def test_bound_g1_is_full():
    b = compute_bound(12, 3, 4)
    assert b.G == 1 and b.log10_divisor == 0 and b.lower_bound_exact == math.factorial(4)


def test_bound_rejects():
    with pytest.raises(ConfigError):
        compute_bound(10, 3, 2)
    with pytest.raises(ConfigError):
        compute_bound(0, 1, 1)


@given(st.integers(1, 6), st.integers(1, 5), st.integers(1, 4))
def test_log_matches_exact(K, G, M):
    b = compute_bound(K * G * M, M, K)
    if b.full_exact is not None:
        exact = Fraction(b.full_exact, b.divisor_exact)
        assert exact.denominator == 1       # multinomial coefficient
        assert 10 ** b.log10_lower_bound == pytest.approx(float(exact), rel=1e-9)


@pytest.mark.parametrize("K,G,expected", [(2, 2, 6), (2, 3, 20), (3, 2, 90)])
def test_enumeration_counts(K, G, expected):
    n = enumerate_reachable(K, G)
    bound = compute_bound(K * G, 1, K)
    assert n == expected
    assert bound.lower_bound_exact <= n < math.factorial(K * G)


@pytest.mark.parametrize("K", [1, 2, 3, 4])
def test_enumeration_no_redirection_when_g1(K):
    assert enumerate_reachable(K, 1) == math.factorial(K)


@settings(max_examples=10)
@given(st.integers(1, 3), st.integers(1, 3))
def test_oracle_sandwich(K, G):
    if math.factorial(K * G) > 720:
        return
    n = enumerate_reachable(K, G)
    b = compute_bound(K * G, 1, K)
    assert b.lower_bound_exact <= n <= b.full_exact
    if K >= 2 and G >= 2:
        assert n < b.full_exact


def test_enumeration_guard():
    with pytest.raises(ConfigError):
        enumerate_reachable(5, 2)      # 10! orders


def test_uniformity_negative_control():
    rep = position_uniformity(2, 3, trials=1000, policy="first")
    assert rep.first_load_order_flagged and rep.first_load_order_p < 1e-6


@pytest.mark.slow
def test_uniformity_seeded_greedy():
    rep = position_uniformity(2, 3, trials=10_000, alpha=0.001, seed=1)
    assert not rep.first_load_order_flagged


def test_uniformity_g1_vacuous():
    rep = position_uniformity(4, 1, trials=1000)
    assert rep.first_load_order_p == 1.0 and not rep.first_load_order_flagged


def test_uniformity_trial_floor():
    with pytest.raises(ConfigError):
        position_uniformity(2, 2, trials=10)
