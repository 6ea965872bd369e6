"""Weight DSL parsing and pointwise calculus."""

import math

import numpy as np
import pytest

from dbarlab.weights import (
    WeightParseError,
    eval_weight,
    gradient,
    laplacian,
    levi_matrix,
    lowest_levi_eigenvalue,
    parse_weight,
    preset_weight,
    wirtinger_z,
)


def test_parse_poly_basic():
    w = parse_weight("poly: x1^2 + y1^2", n=1)
    assert w.n == 1
    assert w.monomials == {(2, 0): 1.0, (0, 2): 1.0}


def test_parse_coefficients_and_constants():
    w = parse_weight("poly: 2 x1^2 + 1", n=1)
    assert w.monomials == {(2, 0): 2.0, (0, 0): 1.0}
    assert eval_weight(w, (3.0, 0.0)) == pytest.approx(19.0)


def test_parse_rejects_garbage():
    for text in ("poly: x1^", "poly: q7", "nosuchpreset: 1", ""):
        with pytest.raises(WeightParseError):
            parse_weight(text, n=1)


def test_parse_infers_dimension():
    w = parse_weight("poly: x1^2 + x2^2", n=2)
    assert w.n == 2
    with pytest.raises(WeightParseError):
        parse_weight("poly: x2^2", n=1)


def test_presets_match_polynomials():
    fock = preset_weight("fock", n=1)
    assert fock.monomials == {(2, 0): 1.0, (0, 2): 1.0}
    quartic = preset_weight("quartic", n=1)
    # |z|^4 expanded in real coordinates
    assert quartic.monomials == {(4, 0): 1.0, (2, 2): 2.0, (0, 4): 1.0}


def test_eval_gradient_laplacian_fock():
    w = preset_weight("fock", n=1)
    p = (1.0, 2.0)
    assert eval_weight(w, p) == pytest.approx(5.0)
    assert gradient(w, p) == pytest.approx([2.0, 4.0])
    assert laplacian(w, p) == pytest.approx(4.0)


def test_wirtinger_of_fock_is_zbar():
    w = preset_weight("fock", n=1)
    val = wirtinger_z(w, (1.0, 2.0), j=0)
    assert val == pytest.approx(1.0 - 2.0j)


def test_levi_fock_identity():
    w = preset_weight("fock", n=2)
    M = levi_matrix(w, (0.3, -0.1, 0.7, 0.2))
    assert np.allclose(M, np.eye(2))
    assert lowest_levi_eigenvalue(w, (0.3, -0.1, 0.7, 0.2)) == pytest.approx(1.0)


def test_levi_quartic_grows():
    w = preset_weight("quartic", n=1)
    for r in (0.5, 1.0, 2.0):
        lam = lowest_levi_eigenvalue(w, (r, 0.0))
        assert lam == pytest.approx(4.0 * r * r, rel=1e-12)


def test_gradient_matches_finite_differences():
    rng = np.random.default_rng(11)
    w = parse_weight("poly: x1^4 + 2 x1^2 y1^2 + y1^4 + x1^2", n=1)
    h = 1e-6
    for _ in range(20):
        p = rng.uniform(-2.0, 2.0, size=2)
        g = gradient(w, tuple(p))
        for j in range(2):
            e = np.zeros(2)
            e[j] = h
            fd = (eval_weight(w, tuple(p + e)) - eval_weight(w, tuple(p - e))) / (2 * h)
            assert g[j] == pytest.approx(fd, abs=1e-5)


def test_levi_hermitian_and_psd_for_presets():
    """Both presets are plurisubharmonic, so the Levi form is PSD."""
    rng = np.random.default_rng(5)
    for name in ("fock", "quartic"):
        for n in (1, 2):
            w = preset_weight(name, n=n)
            for _ in range(10):
                p = tuple(rng.uniform(-3.0, 3.0, size=2 * n))
                M = np.atleast_2d(levi_matrix(w, p))
                assert np.allclose(M, M.conj().T)
                assert np.linalg.eigvalsh(M).min() > -1e-10
