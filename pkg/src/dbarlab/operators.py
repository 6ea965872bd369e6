"""Sparse assembly of the weighted d-bar complex on a DiscreteSpace.

Centered differences throughout; forms vanish outside the box, so boundary
rows simply truncate.  The weighted adjoint of a matrix T mapping degree q-1
to degree q is exact at the matrix level:

    T*_phi = M_{q-1}^{-1} T^H M_q,

with M_q the diagonal quadrature mass of degree q.  The complex Laplacian is
returned conjugated by M^(1/2) ("symmetrized coordinates") so standard
Hermitian eigensolvers apply; eigenvalues are those of the weighted problem
and eigenvectors map back through M^(-1/2).
"""

from __future__ import annotations

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from . import weights as W
from .space import FormVector

__all__ = [
    "ComplexOps",
    "SparseHermitianOperator",
    "SolverError",
    "assemble_dbar",
    "assemble_dbar_star",
    "assemble_dbar_star_formula",
    "assemble_box",
    "dirichlet_form",
    "w1_gram",
    "dual_norm",
    "weighted_inner",
    "component_inner",
    "box_apply_plain",
    "apply_matrix",
    "operator_to_matrix_market",
]


class SolverError(RuntimeError):
    """Iterative solve failed; carries the achieved residual."""

    def __init__(self, message, residual=None):
        self.residual = residual
        super().__init__(message)


def centered_diff_1d(m, h):
    """(f_{i+1} - f_{i-1}) / 2h with zero extension outside 1..m."""
    e = np.ones(m - 1) / (2.0 * h)
    return sp.diags([e, -e], [1, -1], shape=(m, m), format="csr")


def _lift(mat1d, axis, naxes, m):
    """Kronecker lift of a 1d operator onto the given axis of the grid."""
    left = sp.identity(m**axis, format="csr")
    right = sp.identity(m ** (naxes - axis - 1), format="csr")
    return sp.kron(sp.kron(left, mat1d, format="csr"), right, format="csr")


class ComplexOps:
    """Cached operator family for one space.  Thread-safe once built."""

    def __init__(self, space):
        self.space = space
        s = space
        naxes = 2 * s.n
        d1 = centered_diff_1d(s.m, s.h)
        self.Dx = [_lift(d1, 2 * j, naxes, s.m) for j in range(s.n)]
        self.Dy = [_lift(d1, 2 * j + 1, naxes, s.m) for j in range(s.n)]
        self.dzbar = [0.5 * (self.Dx[j] + 1j * self.Dy[j]) for j in range(s.n)]
        self.dz = [0.5 * (self.Dx[j] - 1j * self.Dy[j]) for j in range(s.n)]
        self._cache = {}

    # ---------------------------------------------------------------- masses
    def mass(self, degree):
        key = ("mass", degree)
        if key not in self._cache:
            nc = self.space.ncomp(degree)
            self._cache[key] = sp.diags(np.tile(self.space.q, nc), format="csr")
        return self._cache[key]

    def _scale(self, mat, row_pow, col_pow):
        """Rows scaled by sqrt_q^row_pow, columns by sqrt_q^col_pow (per block)."""
        s = self.space
        rows = np.tile(s.sqrt_q**row_pow, mat.shape[0] // s.npts)
        cols = np.tile(s.sqrt_q**col_pow, mat.shape[1] // s.npts)
        return sp.diags(rows) @ mat @ sp.diags(cols)

    # ------------------------------------------------------------- the complex
    def dbar(self, degree):
        """Matrix of dbar from (0,degree) to (0,degree+1)."""
        key = ("dbar", degree)
        if key in self._cache:
            return self._cache[key]
        s = self.space
        if degree == 0:
            mat = self.dzbar[0] if s.n == 1 else sp.vstack(
                [self.dzbar[0], self.dzbar[1]], format="csr")
        elif degree == 1 and s.n == 2:
            # component of dbar u on dzbar_1 ^ dzbar_2: D1bar u_2 - D2bar u_1
            mat = sp.hstack([-self.dzbar[1], self.dzbar[0]], format="csr")
        else:
            raise ValueError(f"dbar undefined from degree {degree} on C^{s.n}")
        self._cache[key] = mat.tocsr()
        return self._cache[key]

    def dbar_star(self, degree):
        """Exact weighted adjoint of dbar, mapping (0,degree) to (0,degree-1)."""
        key = ("dbar_star", degree)
        if key in self._cache:
            return self._cache[key]
        s = self.space
        T = self.dbar(degree - 1)
        qinv = 1.0 / s.q
        rows = sp.diags(np.tile(qinv, s.ncomp(degree - 1)))
        mat = rows @ (T.conj().T.tocsr() @ self.mass(degree))
        self._cache[key] = mat.tocsr()
        return self._cache[key]

    def dbar_tilde(self, degree):
        """M^(1/2)-conjugated dbar: M_{q+1}^(1/2) dbar M_q^(-1/2)."""
        key = ("dbar_tilde", degree)
        if key not in self._cache:
            self._cache[key] = self._scale(self.dbar(degree), 1, -1).tocsr()
        return self._cache[key]

    def box_symmetrized(self, degree=1):
        """M^(1/2) box M^(-1/2) as a sparse Hermitian PSD matrix."""
        key = ("box", degree)
        if key in self._cache:
            return self._cache[key]
        s = self.space
        if degree != 1 and not (s.n == 2 and degree == 2):
            raise ValueError("box assembled on (0,1)-forms (and (0,2) for n=2)")
        parts = []
        if degree >= 1:
            Ct = self.dbar_tilde(degree - 1)
            parts.append(Ct @ Ct.conj().T)
        if degree == 1 and s.n == 2:
            Dt = self.dbar_tilde(1)
            parts.append(Dt.conj().T @ Dt)
        mat = parts[0]
        for p in parts[1:]:
            mat = mat + p
        mat = mat.tocsr()
        self._cache[key] = mat
        return mat

    # --------------------------------------------------------- Sobolev pieces
    def grad_field(self, axis):
        """X = D_axis - diag(d phi / d v_axis); real sparse."""
        key = ("field", axis)
        if key in self._cache:
            return self._cache[key]
        s = self.space
        dphi = np.asarray(W.poly_eval(s.weight.first_partial(axis), s.coords), float)
        if dphi.shape == ():
            dphi = np.full(s.npts, float(dphi))
        d1 = self.Dx[axis // 2] if axis % 2 == 0 else self.Dy[axis // 2]
        mat = (d1 - sp.diags(dphi)).tocsr()
        self._cache[key] = mat
        return mat

    def grad_field_adjoint(self, axis):
        """Exact weighted adjoint of grad_field; approximately -D_axis."""
        key = ("field_adj", axis)
        if key not in self._cache:
            s = self.space
            X = self.grad_field(axis)
            self._cache[key] = (sp.diags(1.0 / s.q) @ (X.T.tocsr() @ self.mass(0))).tocsr()
        return self._cache[key]

    def w1_gram_component(self):
        """A = M + sum_axes X^H M X for a single scalar component."""
        key = ("w1",)
        if key in self._cache:
            return self._cache[key]
        s = self.space
        M = self.mass(0)
        A = M.copy()
        for axis in range(2 * s.n):
            X = self.grad_field(axis)
            A = A + (X.T @ (M @ X))
        A = A.tocsr()
        self._cache[key] = A
        return A


# ------------------------------------------------------------------ operators

class SparseHermitianOperator:
    """Sparse matrix plus claimed structure flags and their verification."""

    def __init__(self, matrix, hermitian=True, psd=True, meta=None):
        self.matrix = matrix.tocsr()
        self.hermitian = hermitian
        self.psd = psd
        self.meta = dict(meta or {})

    @property
    def shape(self):
        return self.matrix.shape

    def matvec(self, x):
        return self.matrix @ x

    def hermitian_defect(self):
        d = self.matrix - self.matrix.conj().T
        scale = max(np.abs(self.matrix.data).max(), 1e-300)
        return float(np.abs(d.data).max() / scale) if d.nnz else 0.0

    def check_hermitian(self, tol=1e-12):
        return self.hermitian_defect() <= tol

    def to_matrix_market(self, path):
        operator_to_matrix_market(self.matrix, path)


def apply_matrix(mat, form, out_degree):
    """Apply a complex matrix to a FormVector, reshaping to out_degree."""
    return FormVector.from_flat(form.space, out_degree, mat @ form.flat())


def assemble_dbar(space, degree=0):
    return space.ops().dbar(degree)


def assemble_dbar_star(space, degree=1):
    return space.ops().dbar_star(degree)


def assemble_dbar_star_formula(space):
    """dbar* by the weighted Wirtinger formula -sum_j (D_zj - dphi/dz_j) u_j.

    Same continuum operator as assemble_dbar_star but a different O(h^2)
    discretization; it is NOT the exact matrix adjoint, which is the point of
    comparing the two.
    """
    s = space
    ops = s.ops()
    blocks = []
    for j in range(s.n):
        xv, yv = 2 * j, 2 * j + 1
        px = np.asarray(W.poly_eval(s.weight.first_partial(xv), s.coords), float)
        py = np.asarray(W.poly_eval(s.weight.first_partial(yv), s.coords), float)
        if px.shape == ():
            px = np.full(s.npts, float(px))
        if py.shape == ():
            py = np.full(s.npts, float(py))
        phi_z = 0.5 * (px - 1j * py)
        blocks.append(-(ops.dz[j] - sp.diags(phi_z)))
    return sp.hstack(blocks, format="csr") if len(blocks) > 1 else blocks[0].tocsr()


def assemble_box(space, degree=1):
    mat = space.ops().box_symmetrized(degree)
    return SparseHermitianOperator(mat, hermitian=True, psd=True,
                                   meta={"degree": degree, "symmetrized": True,
                                         "R": space.R, "h": space.h,
                                         "n": space.n})


def weighted_inner(space, f, g):
    from .space import weighted_inner as wi

    return wi(space, f, g)


def component_inner(space, a, b):
    return complex(np.sum(a * np.conj(b) * space.q))


def dirichlet_form(space, u, v):
    """Q(u, v) = <dbar u, dbar v> + <dbar* u, dbar* v> for (0,1)-forms."""
    if u.degree != 1 or v.degree != 1:
        raise ValueError("dirichlet_form is defined on (0,1)-forms")
    ops = space.ops()
    B = ops.dbar_star(1)
    bu, bv = B @ u.flat(), B @ v.flat()
    acc = complex(np.sum(bu * np.conj(bv) * space.q))
    if space.n == 2:
        D = ops.dbar(1)
        du, dv = D @ u.flat(), D @ v.flat()
        acc += complex(np.sum(du * np.conj(dv) * space.q))
    return acc


def w1_gram(space, degree=0):
    """Gram matrix of the gradient Sobolev norm, block-diagonal over components."""
    A = space.ops().w1_gram_component()
    nc = space.ncomp(degree)
    if nc == 1:
        return A
    return sp.block_diag([A] * nc, format="csr")


def box_apply_plain(space):
    """Unsymmetrized box on a single (0,1) component for n=1: f -> dbar(dbar* f)."""
    if space.n != 1:
        raise ValueError("plain box apply is the n=1 convenience path")
    ops = space.ops()
    C = ops.dbar(0)
    B = ops.dbar_star(1)

    def apply(f):
        return C @ (B @ f)

    return apply


def _cg_hpd(A, b, tol, maxiter, precond=None):
    info = {}
    x, flag = spla.cg(A, b, rtol=tol, atol=0.0, maxiter=maxiter, M=precond)
    resid = np.linalg.norm(A @ x - b) / max(np.linalg.norm(b), 1e-300)
    info["residual"] = float(resid)
    info["converged"] = flag == 0 and resid <= 10 * tol
    return x, info


def dual_norm(space, form, tol=1e-10, maxiter=20000):
    """Negative-order norm sup |<f, u>| over the W^1 unit ball, componentwise.

    Solves A x = M u with the Sobolev Gram A (Hermitian positive definite) by
    conjugate gradients; raises SolverError if the solve stalls.
    """
    A = space.ops().w1_gram_component()
    dinv = sp.diags(1.0 / A.diagonal())
    total = 0.0
    for comp in form.comps:
        b = space.q * comp
        x, info = _cg_hpd(A, b, tol, maxiter, precond=dinv)
        if not info["converged"]:
            raise SolverError(
                f"dual-norm solve stalled at relative residual {info['residual']:.2e}",
                residual=info["residual"])
        val = np.vdot(b, x).real
        total += max(val, 0.0)
    return float(np.sqrt(total))


def operator_to_matrix_market(matrix, path):
    from scipy.io import mmwrite

    mmwrite(str(path), sp.coo_matrix(matrix))
