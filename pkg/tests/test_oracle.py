"""High-precision moment oracle and golden tables."""

import math
import warnings

import numpy as np
import pytest

from dbarlab.oracle import (
    OracleError,
    decay_exponent_fit,
    load_golden,
    oracle_singular_values,
    radial_moments,

)
from dbarlab.weights import preset_weight


def test_fock_moments_are_pi_factorial():
    table = radial_moments(preset_weight("fock", n=1), k_max=12)
    for k, m in enumerate(table.moments):
        exact = math.pi * math.factorial(k)
        assert abs(float(m) - exact) <= 1e-13 * exact


def test_fock_sigmas_are_one():
    table = radial_moments(preset_weight("fock", n=1), k_max=30)
    sv = oracle_singular_values(table)
    for s in sv.sigma:
        assert abs(float(s) - 1.0) <= 1e-13


def test_quartic_moments_gamma_closed_form():
    # integral of r^(2k) e^(-r^4) over the plane: (pi/2) Gamma((k+1)/2)
    import mpmath as mp

    table = radial_moments(preset_weight("quartic", n=1), k_max=10)
    for k, m in enumerate(table.moments):
        exact = mp.pi / 2 * mp.gamma(mp.mpf(k + 1) / 2)
        assert abs(float(m) - float(exact)) <= 1e-12 * float(exact)


def test_quartic_sigma_head_and_decay():
    table = radial_moments(preset_weight("quartic", n=1), k_max=60)
    sv = oracle_singular_values(table)
    sig = [float(s) for s in sv.sigma]
    assert sig[0] == pytest.approx(0.7511255445, abs=1e-9)
    assert sig[1] == pytest.approx(0.5674833406, abs=1e-9)
    assert all(a > b for a, b in zip(sig, sig[1:]))
    fit = decay_exponent_fit(sv, k_lo=20, k_hi=59)
    assert fit.slope == pytest.approx(-0.25, abs=0.01)


def test_sigma_recursion_against_moments():
    """sigma_k^2 = (m_{k+1} - m_k^2 / m_{k-1}) / m_k, sigma_0^2 = m_1/m_0."""
    table = radial_moments(preset_weight("quartic", n=1), k_max=8)
    sv = oracle_singular_values(table)
    m = [float(x) for x in table.moments]
    assert float(sv.sigma[0]) ** 2 == pytest.approx(m[1] / m[0], rel=1e-12)
    for k in range(1, 7):
        expect = (m[k + 1] - m[k] ** 2 / m[k - 1]) / m[k]
        assert float(sv.sigma[k]) ** 2 == pytest.approx(expect, rel=1e-10)


def test_golden_tables_spot_check():
    """Stored golden rows agree with a fresh short recomputation.

    Full re-verification of all 200 rows costs tens of seconds and lives
    in the acceptance suite; here the head of each table is enough to
    catch a stale or corrupted file.
    """
    from dbarlab.oracle import golden_path

    for name in ("fock", "quartic"):
        meta, rows = load_golden(golden_path(name))
        assert meta["k_max"] >= 40
        table = radial_moments(preset_weight(name, n=1), k_max=11,
                               dps=meta["dps"])
        sv = oracle_singular_values(table)
        for k, mk, sk in rows[:10]:
            assert abs(float(table.moments[k]) - float(mk)) <= 1e-12 * float(mk)
            assert abs(float(sv.sigma[k]) - float(sk)) <= 1e-12


def test_tail_bounds_are_small():
    table = radial_moments(preset_weight("quartic", n=1), k_max=20)
    assert max(float(t) for t in table.tail_bounds) < 1e-15


def test_window_validation():
    table = radial_moments(preset_weight("fock", n=1), k_max=10)
    sv = oracle_singular_values(table)
    with pytest.raises(OracleError):
        decay_exponent_fit(sv, k_lo=5, k_hi=50)
    with pytest.raises(OracleError):
        decay_exponent_fit(sv, k_lo=8, k_hi=6)
