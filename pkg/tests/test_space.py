"""Grid construction and weighted form containers."""

import warnings

import numpy as np
import pytest

from dbarlab.space import FormVector, build_space, form_from_callables, weighted_inner
from dbarlab.weights import parse_weight, preset_weight


def _quiet_space(weight, R, h):
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        return build_space(weight, R, h)


def test_grid_is_odd_and_centered():
    s = build_space(preset_weight("fock", n=1), R=6.0, h=0.5)
    assert s.m == 23  # 2*(R/h) - 1
    assert s.m % 2 == 1
    assert s.axis[0] == pytest.approx(-s.R + s.h)
    assert s.axis[-1] == pytest.approx(s.R - s.h)
    assert s.axis[(s.m - 1) // 2] == pytest.approx(0.0)
    assert s.npts == s.m**2


def test_grid_rejects_bad_parameters():
    w = preset_weight("fock", n=1)
    with pytest.raises(ValueError):
        build_space(w, R=2.0, h=0.5)  # box too small
    with pytest.raises(ValueError):
        build_space(w, R=4.0, h=0.3)  # R/h not integral


def test_weight_samples_on_grid():
    s = build_space(preset_weight("fock", n=1), R=6.0, h=0.5)
    i = (s.m - 1) // 2  # origin
    flat = i * s.m + i
    assert s.phi[flat] == pytest.approx(0.0)
    # q carries the cell volume so sums of q-weighted products are integrals
    assert s.q[flat] == pytest.approx(s.h**2)
    assert np.all(s.q <= s.h**2 + 1e-15)
    assert np.allclose(s.sqrt_q**2, s.q)


def test_truncation_warning_fires_for_small_box():
    with pytest.warns(UserWarning):
        build_space(preset_weight("fock", n=2), R=4.0, h=0.5)


def test_n2_grid_shape():
    s = _quiet_space(preset_weight("fock", n=2), 4.0, 0.5)
    assert s.n == 2
    assert s.npts == s.m**4
    assert s.ncomp(0) == 1 and s.ncomp(1) == 2 and s.ncomp(2) == 1


def test_form_vector_roundtrip():
    s = _quiet_space(preset_weight("fock", n=1), 4.0, 0.5)
    rng = np.random.default_rng(3)
    data = rng.standard_normal((1, s.npts)) + 1j * rng.standard_normal((1, s.npts))
    f = FormVector.from_flat(s, 1, data.reshape(-1))
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        g = FormVector.from_json(f.to_json())
    assert g.degree == 1
    assert np.allclose(g.comps, f.comps)
    assert f.norm() == pytest.approx(np.sqrt(weighted_inner(s, f, f).real))


def test_form_from_callables_matches_manual():
    s = _quiet_space(preset_weight("fock", n=1), 4.0, 0.5)
    f = form_from_callables(s, 0, [lambda c: (c[0] + 1j * c[1]) ** 2])
    manual = (s.coords[0] + 1j * s.coords[1]) ** 2
    assert np.allclose(f.comps[0], manual)


def test_weighted_inner_is_hermitian():
    s = build_space(preset_weight("quartic", n=1), R=4.0, h=0.5)
    rng = np.random.default_rng(9)
    for _ in range(5):
        a = FormVector.from_flat(
            s, 1, rng.standard_normal(s.npts) + 1j * rng.standard_normal(s.npts))
        b = FormVector.from_flat(
            s, 1, rng.standard_normal(s.npts) + 1j * rng.standard_normal(s.npts))
        assert weighted_inner(s, a, b) == pytest.approx(np.conj(weighted_inner(s, b, a)))
