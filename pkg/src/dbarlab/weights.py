"""Exact calculus for polynomial weight functions on C^n, n in {1, 2}.

A weight phi is a real polynomial in the underlying real coordinates
(x1, y1[, x2, y2]) with z_j = x_j + i*y_j.  Everything downstream
(gradients, Laplacians, Wirtinger derivatives, Levi matrices) is computed
symbolically on the monomial representation, so derivative values carry no
finite-difference error.
"""

from __future__ import annotations

import math
import re

import numpy as np

__all__ = [
    "WeightSpec",
    "WeightParseError",
    "parse_weight",
    "preset_weight",
    "eval_weight",
    "gradient",
    "laplacian",
    "wirtinger_z",
    "levi_matrix",
    "lowest_levi_eigenvalue",
    "check_plurisubharmonic",
    "as_point",
    "point_from_complex",
]

TOL_PSH = 1e-10

# A polynomial is a dict mapping an exponent tuple (one entry per real
# coordinate) to a float coefficient.  Zero coefficients are dropped.
Poly = dict


def poly_add(p, q, scale=1.0):
    out = dict(p)
    for e, c in q.items():
        v = out.get(e, 0.0) + scale * c
        if v == 0.0:
            out.pop(e, None)
        else:
            out[e] = v
    return out


def poly_mul(p, q):
    out = {}
    for e1, c1 in p.items():
        for e2, c2 in q.items():
            e = tuple(a + b for a, b in zip(e1, e2))
            v = out.get(e, 0.0) + c1 * c2
            if v == 0.0:
                out.pop(e, None)
            else:
                out[e] = v
    return out


def poly_diff(p, var):
    out = {}
    for e, c in p.items():
        k = e[var]
        if k == 0:
            continue
        e2 = list(e)
        e2[var] = k - 1
        out[tuple(e2)] = out.get(tuple(e2), 0.0) + c * k
    return {e: c for e, c in out.items() if c != 0.0}


def poly_eval(p, coords):
    """Evaluate at one point or at arrays of coordinates.

    coords is a sequence of scalars or same-shape ndarrays, one per real
    variable.
    """
    total = None
    for e, c in p.items():
        term = c
        for v, k in zip(coords, e):
            if k:
                term = term * v**k
        total = term if total is None else total + term
    if total is None:
        z = np.zeros_like(np.asarray(coords[0], dtype=float))
        return z if z.shape else 0.0
    return total


def poly_restrict_ray(p, direction):
    """Restrict p to the ray t -> t*direction; returns {degree: coefficient}."""
    out = {}
    for e, c in p.items():
        deg = sum(e)
        term = c
        for d, k in zip(direction, e):
            if k:
                term *= d**k
        out[deg] = out.get(deg, 0.0) + term
    return out


def ray_leading_term(ray_poly, rel_tol=1e-12):
    """Leading (degree, coefficient) of a ray-restricted polynomial.

    Coefficients smaller than rel_tol times the largest magnitude are treated
    as cancellation residue, not as a leading term.  Returns (None, 0.0) for
    the zero polynomial.
    """
    if not ray_poly:
        return None, 0.0
    scale = max(abs(c) for c in ray_poly.values())
    if scale == 0.0:
        return None, 0.0
    for deg in sorted(ray_poly, reverse=True):
        if abs(ray_poly[deg]) > rel_tol * scale:
            return deg, ray_poly[deg]
    return None, 0.0


class WeightParseError(ValueError):
    """Weight DSL rejection with source position."""

    def __init__(self, message, line=1, col=1):
        self.line = line
        self.col = col
        super().__init__(f"{message} (line {line}, column {col})")


def _expand_radial(n, radial):
    """Expand sum_m a_m |z|^(2m) into real monomials; |z|^2 = sum x_i^2+y_i^2."""
    nv = 2 * n
    base = {}
    for i in range(nv):
        e = [0] * nv
        e[i] = 2
        base[tuple(e)] = 1.0
    mono = {}
    power = {tuple([0] * nv): 1.0}  # |z|^0
    mmax = max(m for m, _ in radial)
    coeff = dict(radial)
    for m in range(mmax + 1):
        if m in coeff and coeff[m] != 0.0:
            mono = poly_add(mono, power, scale=coeff[m])
        if m < mmax:
            power = poly_mul(power, base)
    return mono


class WeightSpec:
    """Polynomial weight on C^n.

    Immutable after construction (do not mutate .monomials).  `radial` keeps
    the radial coefficients (m, a_m) when the weight was given in radial form;
    the moment oracle needs them, the real-variable calculus never does.
    """

    def __init__(self, n, monomials, radial=None, label=None):
        if n not in (1, 2):
            raise ValueError(f"only n in {{1, 2}} supported, got n={n}")
        self.n = int(n)
        nv = 2 * self.n
        clean = {}
        for e, c in monomials.items():
            e = tuple(int(k) for k in e)
            if len(e) != nv or any(k < 0 for k in e):
                raise ValueError(f"bad exponent tuple {e} for n={n}")
            c = float(c)
            if not math.isfinite(c):
                raise ValueError("non-finite coefficient in weight")
            if c != 0.0:
                clean[e] = clean.get(e, 0.0) + c
        clean = {e: c for e, c in clean.items() if c != 0.0}
        if radial is not None:
            radial = tuple(sorted((int(m), float(a)) for m, a in radial))
            if any(m < 0 or not math.isfinite(a) for m, a in radial):
                raise ValueError("bad radial term")
            if not any(a > 0.0 for m, a in radial if m >= 1):
                raise ValueError("radial weight needs a positive coefficient at some m >= 1")
        else:
            degree = max((sum(e) for e in clean), default=0)
            if degree < 2:
                raise ValueError(f"polynomial weight must have degree >= 2, got {degree}")
        self.monomials = clean
        self.radial = radial
        self.label = label
        self.psh_verified = False
        self._first = [poly_diff(clean, v) for v in range(nv)]
        self._second = [[poly_diff(self._first[a], b) for b in range(nv)] for a in range(nv)]

    @property
    def degree(self):
        return max((sum(e) for e in self.monomials), default=0)

    @classmethod
    def from_monomials(cls, n, monomials, label=None):
        return cls(n, monomials, radial=None, label=label)

    @classmethod
    def from_radial(cls, n, radial, label=None):
        radial = tuple((int(m), float(a)) for m, a in radial)
        return cls(n, _expand_radial(n, radial), radial=radial, label=label)

    def shifted(self, c):
        """phi + c.  Keeps the radial tag (constant goes in as the m=0 term)."""
        nv = 2 * self.n
        mono = poly_add(self.monomials, {tuple([0] * nv): float(c)})
        radial = None
        if self.radial is not None:
            terms = dict(self.radial)
            terms[0] = terms.get(0, 0.0) + float(c)
            radial = tuple(sorted(terms.items()))
        return WeightSpec(self.n, mono, radial=radial, label=self.label)

    def first_partial(self, var):
        return self._first[var]

    def second_partial(self, a, b):
        return self._second[a][b]

    def __repr__(self):
        tag = self.label or f"{len(self.monomials)} monomials"
        return f"WeightSpec(n={self.n}, {tag}, degree={self.degree})"


_PRESETS = {
    "fock": ((1, 1.0),),
    "quartic": ((2, 1.0),),
}


def preset_weight(name, n=1):
    if name not in _PRESETS:
        raise WeightParseError(f"unknown preset weight '{name}'", 1, 1)
    return WeightSpec.from_radial(n, _PRESETS[name], label=name)


_NUM_RE = re.compile(r"[+-]?(\d+\.?\d*|\.\d+)([eE][+-]?\d+)?")
_VAR_RE = re.compile(r"(x|y|r)(\d)")


def _fail(msg, text, pos):
    line = text.count("\n", 0, pos) + 1
    col = pos - (text.rfind("\n", 0, pos) + 1) + 1
    raise WeightParseError(msg, line, col)


def parse_weight(text, n=None):
    """Parse the weight DSL.

    Forms:
        fock | quartic                   (presets; pass n for the dimension)
        poly: 2*x1^2 y1^2 + -1.5*x2 y2^3
        radial: 1*r2^2 + 0.5*r2^1        (r2 means |z|^2)

    Factors in a term are separated by '*' or whitespace; '^' takes a
    non-negative integer exponent.  Errors carry line and column.
    """
    stripped = text.strip()
    if stripped in _PRESETS:
        return preset_weight(stripped, n=n if n is not None else 1)
    head, sep, body = text.partition(":")
    if not sep:
        _fail("expected 'poly:', 'radial:', or a preset name", text, 0)
    mode = head.strip()
    if mode not in ("poly", "radial"):
        _fail(f"unknown weight form '{mode}'", text, text.find(head.strip()))
    body_off = text.index(":") + 1

    terms = []  # (sign, [(kind, payload, pos)...])
    cur = []
    sign = 1.0
    pos = body_off
    end = len(text)
    expect_factor_after_op = False
    while pos < end:
        ch = text[pos]
        if ch.isspace():
            pos += 1
            continue
        if ch == "+" or ch == "-":
            if cur and not expect_factor_after_op:
                # term separator; the sign belongs to the next term
                terms.append((sign, cur))
                cur = []
                sign = 1.0 if ch == "+" else -1.0
                pos += 1
                continue
            nxt = _NUM_RE.match(text, pos)
            if nxt and nxt.start() == pos:
                cur.append(("num", float(nxt.group()), pos))
                pos = nxt.end()
                expect_factor_after_op = False
                continue
            if not cur:
                sign *= 1.0 if ch == "+" else -1.0
                pos += 1
                continue
            _fail("dangling sign", text, pos)
        if ch == "*":
            if not cur:
                _fail("'*' with no preceding factor", text, pos)
            expect_factor_after_op = True
            pos += 1
            continue
        m = _NUM_RE.match(text, pos)
        if m and m.start() == pos:
            cur.append(("num", float(m.group()), pos))
            expect_factor_after_op = False
            pos = m.end()
            continue
        m = _VAR_RE.match(text, pos)
        if m and m.start() == pos:
            name, idx = m.group(1), int(m.group(2))
            vpos = pos
            pos = m.end()
            exp = 1
            if pos < end and text[pos] == "^":
                pos += 1
                em = re.match(r"\d+", text[pos:])
                if not em:
                    _fail("'^' needs a non-negative integer exponent", text, pos)
                exp = int(em.group())
                pos += em.end()
            cur.append(("var", (name, idx, exp), vpos))
            expect_factor_after_op = False
            continue
        _fail(f"unexpected character {ch!r}", text, pos)
    if expect_factor_after_op:
        _fail("trailing '*'", text, end - 1)
    if cur:
        terms.append((sign, cur))
    if not terms:
        _fail("empty weight body", text, body_off)

    if mode == "radial":
        radial = {}
        for sign, factors in terms:
            coeff = sign
            power = None
            for kind, payload, fpos in factors:
                if kind == "num":
                    coeff *= payload
                else:
                    name, idx, exp = payload
                    if name != "r" or idx != 2:
                        _fail("radial form allows only r2", text, fpos)
                    power = (power or 0) + exp
            if power is None:
                _fail("radial term missing r2 factor", text, factors[0][2])
            radial[power] = radial.get(power, 0.0) + coeff
        ndim = n if n is not None else 1
        try:
            return WeightSpec.from_radial(ndim, sorted(radial.items()))
        except ValueError as exc:
            _fail(str(exc), text, body_off)

    # poly mode: infer n from the variables used unless given
    max_idx = 1
    for _, factors in terms:
        for kind, payload, fpos in factors:
            if kind == "var":
                name, idx, exp = payload
                if name not in ("x", "y"):
                    _fail("poly form allows only x1, y1, x2, y2", text, fpos)
                if idx not in (1, 2):
                    _fail(f"coordinate index must be 1 or 2, got {name}{idx}", text, fpos)
                max_idx = max(max_idx, idx)
    ndim = n if n is not None else max_idx
    if max_idx > ndim:
        _fail(f"weight uses {max_idx} complex variables but n={ndim}", text, body_off)
    nv = 2 * ndim
    mono = {}
    for sign, factors in terms:
        coeff = sign
        e = [0] * nv
        for kind, payload, fpos in factors:
            if kind == "num":
                coeff *= payload
            else:
                name, idx, exp = payload
                v = 2 * (idx - 1) + (0 if name == "x" else 1)
                e[v] += exp
        key = tuple(e)
        mono[key] = mono.get(key, 0.0) + coeff
    try:
        return WeightSpec.from_monomials(ndim, mono)
    except ValueError as exc:
        _fail(str(exc), text, body_off)


def as_point(p, n):
    """Validate a point with 2n real coordinates; returns a float64 array."""
    arr = np.asarray(p, dtype=float)
    if arr.shape != (2 * n,):
        raise ValueError(f"point must have {2 * n} real coordinates, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError("point has non-finite coordinates")
    return arr


def point_from_complex(*zs):
    """(z1[, z2]) -> (x1, y1[, x2, y2])."""
    out = []
    for z in zs:
        z = complex(z)
        out.extend((z.real, z.imag))
    return np.array(out)


def eval_weight(w, p):
    p = as_point(p, w.n)
    return float(poly_eval(w.monomials, p))


def gradient(w, p):
    """Real gradient (d phi/dx1, d phi/dy1, ...)."""
    p = as_point(p, w.n)
    return np.array([poly_eval(w.first_partial(v), p) for v in range(2 * w.n)], dtype=float)


def laplacian(w, p):
    p = as_point(p, w.n)
    return float(sum(poly_eval(w.second_partial(v, v), p) for v in range(2 * w.n)))


def wirtinger_z(w, p, j=0):
    """d phi / d z_j = (d/dx_j - i d/dy_j)/2 at p."""
    p = as_point(p, w.n)
    xv, yv = 2 * j, 2 * j + 1
    return 0.5 * (poly_eval(w.first_partial(xv), p) - 1j * poly_eval(w.first_partial(yv), p))


def levi_entry_polys(w, j, k):
    """Real and imaginary parts of d^2 phi / dz_j dzbar_k as polynomials.

    L_jk = ((d2/dx_j dx_k + d2/dy_j dy_k) + i (d2/dx_j dy_k - d2/dy_j dx_k))/4
    """
    xj, yj, xk, yk = 2 * j, 2 * j + 1, 2 * k, 2 * k + 1
    re = poly_add(w.second_partial(xj, xk), w.second_partial(yj, yk))
    re = {e: 0.25 * c for e, c in re.items()}
    im = poly_add(w.second_partial(xj, yk), w.second_partial(yj, xk), scale=-1.0)
    im = {e: 0.25 * c for e, c in im.items()}
    return re, im


def levi_matrix(w, p):
    """Complex Hessian (d^2 phi / dz_j dzbar_k) as an n x n Hermitian array."""
    p = as_point(p, w.n)
    n = w.n
    L = np.zeros((n, n), dtype=complex)
    for j in range(n):
        for k in range(j, n):
            re, im = levi_entry_polys(w, j, k)
            val = poly_eval(re, p) + 1j * poly_eval(im, p)
            L[j, k] = val
            L[k, j] = np.conj(val)
    # diagonal entries are real by construction of the polynomials
    for j in range(n):
        L[j, j] = L[j, j].real
    return L


def lowest_levi_eigenvalue(w, p):
    """Smallest eigenvalue of the Levi matrix, closed form for n <= 2."""
    L = levi_matrix(w, p)
    if w.n == 1:
        return float(L[0, 0].real)
    a = L[0, 0].real
    d = L[1, 1].real
    b = L[0, 1]
    half = 0.5 * (a - d)
    return float(0.5 * (a + d) - math.hypot(half, abs(b)))


def check_plurisubharmonic(w, radius=8.0, per_axis=17, tol=TOL_PSH):
    """Sampled plurisubharmonicity check; sets w.psh_verified on success.

    Scans a uniform lattice in the polydisc of the given radius.  This is a
    sampled check, not a certificate; the report says so.
    """
    axis = np.linspace(-radius, radius, per_axis)
    grids = np.meshgrid(*([axis] * (2 * w.n)), indexing="ij")
    pts = np.stack([g.ravel() for g in grids], axis=1)
    worst = math.inf
    argmin = None
    for p in pts:
        lam = lowest_levi_eigenvalue(w, p)
        if lam < worst:
            worst = lam
            argmin = p.copy()
    verified = worst >= -tol
    if verified:
        w.psh_verified = True
    return {
        "verified": bool(verified),
        "min_levi_eigenvalue": float(worst),
        "argmin": [float(v) for v in argmin],
        "note": "sampled lattice check, not a certificate",
        "tol": tol,
    }
