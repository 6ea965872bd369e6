"""Weighted d-bar operators: adjointness, formula consistency, dual norm."""

import warnings

import numpy as np
import pytest
import scipy.sparse as sp

from dbarlab.operators import (
    apply_matrix,
    assemble_box,
    assemble_dbar,
    assemble_dbar_star,
    assemble_dbar_star_formula,
    box_apply_plain,
    dirichlet_form,
    dual_norm,
    weighted_inner,
)
from dbarlab.space import FormVector, build_space, form_from_callables
from dbarlab.weights import preset_weight


def _space(name="fock", n=1, R=4.0, h=0.5):
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        return build_space(preset_weight(name, n=n), R, h)


def _random_form(space, degree, rng):
    nc = space.ncomp(degree)
    data = rng.standard_normal(nc * space.npts) + 1j * rng.standard_normal(nc * space.npts)
    return FormVector.from_flat(space, degree, data)


def test_adjoint_identity_exact():
    """<dbar g, f> = <g, dbar* f> holds to roundoff by construction."""
    rng = np.random.default_rng(0)
    for name in ("fock", "quartic"):
        s = _space(name)
        D = assemble_dbar(s, 0)
        Ds = assemble_dbar_star(s)
        for _ in range(20):
            g = _random_form(s, 0, rng)
            f = _random_form(s, 1, rng)
            lhs = weighted_inner(s, apply_matrix(D, g, 1), f)
            rhs = weighted_inner(s, g, apply_matrix(Ds, f, 0))
            scale = g.norm() * f.norm()
            assert abs(lhs - rhs) <= 1e-12 * scale


def test_adjoint_identity_n2_both_degrees():
    rng = np.random.default_rng(1)
    s = _space("fock", n=2)
    for deg in (0, 1):
        D = assemble_dbar(s, deg)
        for _ in range(5):
            g = _random_form(s, deg, rng)
            f = _random_form(s, deg + 1, rng)
            lhs = weighted_inner(s, apply_matrix(D, g, deg + 1), f)
            rhs = weighted_inner(s, g, _weighted_adjoint(s, D, f, deg))
            assert abs(lhs - rhs) <= 1e-11 * (g.norm() * f.norm() + 1.0)


def _weighted_adjoint(space, D, form, out_degree):
    # raw-matrix adjoint under the weighted pairing: D* = Q^-1 D^H Q
    scaled = (form.comps * space.q[None, :]).reshape(-1)
    out = (D.conj().T @ scaled).reshape(space.ncomp(out_degree), space.npts)
    return FormVector(space, out_degree, out / space.q[None, :])


def test_dbar_squared_is_zero_n2():
    s = _space("fock", n=2)
    D0 = assemble_dbar(s, 0)
    D1 = assemble_dbar(s, 1)
    prod = (D1 @ D0).tocsr()
    prod.eliminate_zeros()
    assert prod.nnz == 0


def test_formula_adjoint_agree_on_interior_forms():
    s = _space("fock", R=6.0, h=0.25)
    Ds = assemble_dbar_star(s)
    Df = assemble_dbar_star_formula(s)
    f = form_from_callables(
        s, 1, [lambda c: np.exp(-(c[0] ** 2 + c[1] ** 2)) * (c[0] + 1j * c[1])])
    err = apply_matrix(Df - Ds, f, 0).norm() / f.norm()
    assert err < 0.2


def test_formula_error_shrinks_under_refinement():
    errs = []
    for h in (0.5, 0.25):
        s = _space("fock", R=6.0, h=h)
        Ds = assemble_dbar_star(s)
        Df = assemble_dbar_star_formula(s)
        f = form_from_callables(
            s, 1, [lambda c: np.exp(-(c[0] ** 2 + c[1] ** 2)) * (c[0] - 1j * c[1])])
        errs.append(apply_matrix(Df - Ds, f, 0).norm() / f.norm())
    assert errs[1] < errs[0] / 1.8


def test_box_matches_dirichlet_form():
    """The symmetrized box reproduces Q(u,u) through the sqrt-q pairing."""
    rng = np.random.default_rng(4)
    s = _space("quartic")
    B = assemble_box(s, 1).matrix
    for _ in range(10):
        u = _random_form(s, 1, rng)
        ut = (u.comps * s.sqrt_q[None, :]).reshape(-1)
        quad = float(np.real(np.vdot(ut, B @ ut)))
        form = dirichlet_form(s, u, u).real
        assert quad == pytest.approx(form, rel=1e-10, abs=1e-12)


def test_box_is_hermitian_psd():
    rng = np.random.default_rng(6)
    s = _space("fock")
    B = assemble_box(s, 1).matrix
    gap = (B - B.conj().T).tocsr()
    assert abs(gap).max() <= 1e-12 * abs(B).max()
    for _ in range(10):
        u = rng.standard_normal(s.npts) + 1j * rng.standard_normal(s.npts)
        assert np.real(np.vdot(u, B @ u)) >= -1e-10


def test_box_apply_plain_matches_symmetrized():
    """Physical box and sqrt-q conjugated box agree after rescaling."""
    rng = np.random.default_rng(8)
    s = _space("fock")
    B = assemble_box(s, 1).matrix
    op = box_apply_plain(s)
    u = rng.standard_normal(s.npts) + 1j * rng.standard_normal(s.npts)
    via_tilde = (B @ (u * s.sqrt_q)) / s.sqrt_q
    assert np.allclose(op(u), via_tilde, atol=1e-9 * np.abs(via_tilde).max())


def test_dual_norm_matches_dense_brute_force():
    """-1 norm against an explicit dense Gram inverse on a small grid."""
    from dbarlab.operators import w1_gram

    s = _space("fock")
    A = w1_gram(s, degree=1)
    dense = np.asarray(A.todense())
    rng = np.random.default_rng(12)
    for _ in range(5):
        u = _random_form(s, 1, rng)
        b = (u.comps * s.q[None, :]).reshape(-1)
        x = np.linalg.solve(dense, b)
        ref = float(np.sqrt(np.real(np.vdot(b, x))))
        got = dual_norm(s, u)
        assert got == pytest.approx(ref, rel=1e-8, abs=1e-10)


def test_dual_norm_below_weighted_norm():
    rng = np.random.default_rng(13)
    s = _space("quartic")
    for _ in range(20):
        u = _random_form(s, 1, rng)
        assert dual_norm(s, u) <= u.norm() * (1.0 + 1e-9)
