"""Weighted grid spaces on [-R, R]^(2n) and form vectors over them.

Nodes are the interior lattice points -R + i*h, i = 1..2N-1 per real axis
(N = R/h), so a function vector has (2N-1)^(2n) entries and forms vanish
outside the box by zero extension.  The weighted inner product is the
midpoint rule  <f, g> = sum_p f(p) conj(g(p)) h^(2n) exp(-phi(p)).
"""

from __future__ import annotations

import base64
import json
import math
import warnings

import numpy as np

from . import weights as W

__all__ = ["DiscreteSpace", "FormVector", "build_space", "weighted_inner",
           "form_from_callables", "TINY_FLOOR", "TRUNC_TOL"]

TINY_FLOOR = 1e-300
TRUNC_TOL = 1e-12


class DiscreteSpace:
    """Uniform interior grid with quadrature weights for one WeightSpec."""

    def __init__(self, weight, R, h):
        R = float(R)
        h = float(h)
        if R < 4:
            raise ValueError(f"R must be >= 4, got {R}")
        if h > R / 8:
            raise ValueError(f"h must be <= R/8, got h={h}, R={R}")
        steps = R / h
        if abs(steps - round(steps)) > 1e-9:
            raise ValueError(f"R/h must be integral, got {steps}")
        self.weight = weight
        self.n = weight.n
        self.R = R
        self.h = h
        N = int(round(steps))
        self.m = 2 * N - 1  # interior nodes per axis
        self.shape = (self.m,) * (2 * self.n)
        self.npts = self.m ** (2 * self.n)
        axis = -R + h * np.arange(1, 2 * N)
        self.axis = axis
        grids = np.meshgrid(*([axis] * (2 * self.n)), indexing="ij")
        self.coords = [g.reshape(-1) for g in grids]
        self.phi = np.asarray(W.poly_eval(weight.monomials, self.coords), dtype=float)
        if self.phi.shape == ():
            self.phi = np.full(self.npts, float(self.phi))
        with np.errstate(under="ignore"):
            dens = np.exp(-self.phi)
        self.q = np.maximum(h ** (2 * self.n) * dens, TINY_FLOOR)
        self.sqrt_q = np.sqrt(self.q)
        # nodes where the true quadrature weight underflowed; operators are
        # defined there via the floor but the region carries no weighted mass
        self.dead = h ** (2 * self.n) * dens < TINY_FLOOR
        edge = np.zeros(self.shape, dtype=bool)
        for ax in range(2 * self.n):
            sl = [slice(None)] * (2 * self.n)
            sl[ax] = 0
            edge[tuple(sl)] = True
            sl[ax] = self.m - 1
            edge[tuple(sl)] = True
        ratio = dens[edge.reshape(-1)].max() / max(dens.max(), TINY_FLOOR)
        self.boundary_ratio = float(ratio)
        if ratio > TRUNC_TOL:
            warnings.warn(
                f"boundary weight ratio {ratio:.2e} exceeds {TRUNC_TOL:.0e}; "
                f"the box R={R} truncates the weight visibly",
                stacklevel=2,
            )
        self._ops = None

    def ncomp(self, degree):
        table = {1: {0: 1, 1: 1}, 2: {0: 1, 1: 2, 2: 1}}[self.n]
        if degree not in table:
            raise ValueError(f"no (0,{degree})-forms on C^{self.n}")
        return table[degree]

    def ops(self):
        from . import operators

        if self._ops is None:
            self._ops = operators.ComplexOps(self)
        return self._ops

    def zk(self, k, j=0):
        """Samples of z_j^k on the grid, flat."""
        z = self.coords[2 * j] + 1j * self.coords[2 * j + 1]
        return z**k

    def __repr__(self):
        return (f"DiscreteSpace(n={self.n}, R={self.R}, h={self.h}, "
                f"{self.m}^{2 * self.n} nodes)")


def build_space(weight, R, h):
    return DiscreteSpace(weight, R, h)


class FormVector:
    """A (0, degree)-form: `comps` has shape (ncomp, npts), complex128."""

    def __init__(self, space, degree, comps):
        comps = np.asarray(comps, dtype=complex)
        if comps.ndim == 1:
            comps = comps[None, :]
        nc = space.ncomp(degree)
        if comps.shape != (nc, space.npts):
            raise ValueError(
                f"(0,{degree})-form on this space needs shape {(nc, space.npts)}, "
                f"got {comps.shape}")
        self.space = space
        self.degree = degree
        self.comps = comps

    @classmethod
    def zeros(cls, space, degree):
        return cls(space, degree, np.zeros((space.ncomp(degree), space.npts), complex))

    def copy(self):
        return FormVector(self.space, self.degree, self.comps.copy())

    def flat(self):
        return self.comps.reshape(-1)

    @classmethod
    def from_flat(cls, space, degree, data):
        return cls(space, degree, np.asarray(data).reshape(space.ncomp(degree), space.npts))

    def norm(self):
        return math.sqrt(max(weighted_inner(self.space, self, self).real, 0.0))

    def __add__(self, other):
        self._check(other)
        return FormVector(self.space, self.degree, self.comps + other.comps)

    def __sub__(self, other):
        self._check(other)
        return FormVector(self.space, self.degree, self.comps - other.comps)

    def __mul__(self, scalar):
        return FormVector(self.space, self.degree, self.comps * scalar)

    __rmul__ = __mul__

    def _check(self, other):
        if other.space is not self.space or other.degree != self.degree:
            raise ValueError("form mismatch")

    def to_json(self):
        w = self.space.weight
        wrec = {"n": w.n,
                "monomials": [[list(e), c] for e, c in sorted(w.monomials.items())]}
        if w.radial is not None:
            wrec["radial"] = [[m, a] for m, a in w.radial]
        if w.label:
            wrec["label"] = w.label
        data = [base64.b64encode(np.ascontiguousarray(c, dtype="<c16").tobytes()).decode()
                for c in self.comps]
        return json.dumps({
            "schema": "dbarlab-form-v1",
            "weight": wrec,
            "n": self.space.n,
            "R": self.space.R,
            "h": self.space.h,
            "degree": self.degree,
            "data": data,
        }, sort_keys=True)

    @classmethod
    def from_json(cls, text, space=None):
        rec = json.loads(text)
        if rec.get("schema") != "dbarlab-form-v1":
            raise ValueError("not a dbarlab form record")
        if space is None:
            wrec = rec["weight"]
            radial = wrec.get("radial")
            if radial is not None:
                weight = W.WeightSpec.from_radial(wrec["n"], radial,
                                                  label=wrec.get("label"))
            else:
                mono = {tuple(e): c for e, c in wrec["monomials"]}
                weight = W.WeightSpec.from_monomials(wrec["n"], mono,
                                                     label=wrec.get("label"))
            space = DiscreteSpace(weight, rec["R"], rec["h"])
        comps = np.stack([
            np.frombuffer(base64.b64decode(b), dtype="<c16").astype(complex)
            for b in rec["data"]])
        return cls(space, rec["degree"], comps)


def weighted_inner(space, f, g):
    """<f, g>_phi = sum over components of f conj(g) against the quadrature."""
    if f.degree != g.degree:
        raise ValueError("degree mismatch in weighted inner product")
    acc = 0.0 + 0.0j
    for a, b in zip(f.comps, g.comps):
        acc += np.sum(a * np.conj(b) * space.q)
    return complex(acc)


def form_from_callables(space, degree, funcs):
    """Build a form by sampling callables f(coords list) -> complex array."""
    if callable(funcs):
        funcs = [funcs]
    nc = space.ncomp(degree)
    if len(funcs) != nc:
        raise ValueError(f"need {nc} component callables for degree {degree}")
    comps = np.stack([np.asarray(f(space.coords), dtype=complex).reshape(space.npts)
                      for f in funcs])
    return FormVector(space, degree, comps)
