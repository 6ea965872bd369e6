"""Radial-moment ground truth for radial weights phi(|z|) on C^1.

For phi depending only on r = |z|, the monomials z^k are orthogonal in the
weighted space and every quantity we care about reduces to the moments

    m_k = 2*pi * int_0^inf r^(2k+1) exp(-phi(r)) dr
        = pi * int_0^inf t^k exp(-phitilde(t)) dt,   t = r^2,

with phitilde(t) = sum_m a_m t^m.  The minimal-norm solution of
dbar u = z^k dzbar is u_k = zbar z^k - (m_k/m_{k-1}) z^{k-1}; its norm ratio
against z^k gives the solution-operator singular values

    sigma_0^2 = m_1/m_0,
    sigma_k^2 = (m_{k+1} - m_k^2/m_{k-1}) / m_k    (k >= 1).

Moments are evaluated by adaptive quadrature in mpmath with an explicit tail
bound driven by the leading radial term, so the values here are independent
of everything in the discretized complex.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import mpmath as mp
import numpy as np

__all__ = [
    "OracleError",
    "MomentTable",
    "SingularValueTable",
    "radial_moments",
    "oracle_singular_values",
    "decay_exponent_fit",
    "fock_eigenform_residual",
    "write_golden",
    "load_golden",
    "verify_golden",
    "golden_path",
]

DEFAULT_DPS = 30


class OracleError(RuntimeError):
    pass


def _radial_coeffs(weight):
    if getattr(weight, "radial", None) is None:
        raise OracleError("moment oracle needs a weight in radial form")
    if weight.n != 1:
        raise OracleError("moment oracle is defined on C^1 only")
    return dict(weight.radial)


@dataclass
class MomentTable:
    """Moments m_0..m_{k_max} as mpmath floats plus quadrature error bounds."""

    weight_label: str
    radial: tuple
    k_max: int
    dps: int
    moments: list = field(repr=False)
    quad_errors: list = field(repr=False)
    tail_bounds: list = field(repr=False)

    def moment(self, k):
        return self.moments[k]

    def as_float_array(self):
        """Moments as float64; overflowing entries come back as inf."""
        out = np.empty(self.k_max + 1)
        for k, m in enumerate(self.moments):
            try:
                out[k] = float(m)
            except OverflowError:
                out[k] = math.inf
        return out

    def log_convexity_defect(self):
        """max over k of (m_k^2 - m_{k-1} m_{k+1}) / (m_{k-1} m_{k+1}); <= 0 for
        genuine moment sequences up to quadrature error."""
        worst = mp.mpf("-inf")
        for k in range(1, self.k_max):
            lhs = self.moments[k] ** 2
            rhs = self.moments[k - 1] * self.moments[k + 1]
            worst = max(worst, (lhs - rhs) / rhs)
        return worst


def _phitilde(coeffs):
    items = sorted(coeffs.items())

    def f(t):
        acc = mp.mpf(0)
        for m, a in items:
            if a != 0.0:
                acc += a * t**m
        return acc

    return f


def _tail_bound(coeffs, k, T):
    """pi * int_T^inf t^k e^(-phitilde) dt  <=  bound, valid for T >= T0 where
    the leading term dominates twice the rest."""
    M = max((m for m, a in coeffs.items() if m >= 1 and a != 0.0), default=0)
    if M == 0 or coeffs.get(M, 0.0) <= 0.0:
        raise OracleError("tail bound needs a positive leading radial coefficient")
    aM = mp.mpf(coeffs[M])
    rest = sum(abs(mp.mpf(a)) for m, a in coeffs.items() if m != M)
    T0 = max(mp.mpf(1), 2 * rest / aM)
    if T < T0:
        return None, T0
    # phitilde >= aM t^M / 2 for t >= T0
    s = mp.mpf(k + 1) / M
    bound = mp.pi / M * (2 / aM) ** s * mp.gammainc(s, aM * T**M / 2)
    return bound, T0


def radial_moments(weight, k_max, dps=DEFAULT_DPS):
    """Quadrature moments m_0..m_{k_max} for a radial weight."""
    coeffs = _radial_coeffs(weight)
    M = max((m for m, a in coeffs.items() if m >= 1 and a != 0.0), default=0)
    if M == 0 or coeffs.get(M, 0.0) <= 0.0:
        raise OracleError("tail bound needs a positive leading radial coefficient")
    if k_max < 1:
        raise OracleError("k_max must be >= 1")
    moments, errs, tails = [], [], []
    with mp.workdps(dps + 10):
        phit = _phitilde(coeffs)
        aM = mp.mpf(coeffs[M])
        for k in range(k_max + 1):
            # peak of t^k e^(-phitilde) is near (k / (M aM))^(1/M)
            tstar = (mp.mpf(max(k, 1)) / (M * aM)) ** (mp.mpf(1) / M)
            T = 2 * tstar
            peak = tstar**k * mp.e ** (-phit(tstar))
            target = peak * mp.mpf(10) ** (-(dps + 8))
            while True:
                bound, T0 = _tail_bound(coeffs, k, T)
                if bound is not None and bound <= target * max(T, 1):
                    break
                T = max(2 * T, 2 * T0)
                if T > mp.mpf(10) ** 40:
                    raise OracleError("tail refuses to decay; weight grows too slowly")

            def f(t, k=k):
                return t**k * mp.e ** (-phit(t))

            val, err = mp.quad(f, [0, tstar, T], error=True)
            m_k = mp.pi * val
            if m_k <= 0:
                raise OracleError(f"non-positive moment m_{k}")
            moments.append(m_k)
            errs.append(mp.pi * err + bound)
            tails.append(bound)
    label = getattr(weight, "label", None) or "radial"
    return MomentTable(label, tuple(sorted(coeffs.items())), k_max, dps,
                       moments, errs, tails)


@dataclass
class SingularValueTable:
    """Canonical-solution singular values sigma_k from a moment table."""

    weight_label: str
    k_max: int
    dps: int
    sigma: list = field(repr=False)
    table: MomentTable = field(repr=False, default=None)

    def as_float_array(self):
        return np.array([float(s) for s in self.sigma])

    def is_strictly_decreasing(self):
        return all(self.sigma[k + 1] < self.sigma[k] for k in range(len(self.sigma) - 1))

    def recompute_residual(self):
        """Max relative deviation against a fresh recomputation from the
        stored moments; exercises determinism of the formulas."""
        fresh = oracle_singular_values(self.table)
        worst = mp.mpf(0)
        for a, b in zip(self.sigma, fresh.sigma):
            worst = max(worst, abs(a - b) / b)
        return worst


def oracle_singular_values(table):
    m = table.moments
    if len(m) < 2:
        raise OracleError("need moments up to k_max >= 1")
    with mp.workdps(table.dps + 10):
        sig = []
        s0sq = m[1] / m[0]
        if s0sq <= 0:
            raise OracleError("non-positive sigma_0^2")
        sig.append(mp.sqrt(s0sq))
        for k in range(1, len(m) - 1):
            s2 = (m[k + 1] - m[k] ** 2 / m[k - 1]) / m[k]
            if s2 <= 0:
                raise OracleError(
                    f"non-positive sigma_{k}^2 = {mp.nstr(s2, 8)}; moment table "
                    "violates strict log-convexity"
                )
            sig.append(mp.sqrt(s2))
    return SingularValueTable(table.weight_label, len(sig) - 1, table.dps, sig, table)


@dataclass
class DecayFit:
    slope: float
    stderr: float
    intercept: float
    k_lo: int
    k_hi: int


def decay_exponent_fit(sigma_table, k_lo, k_hi):
    """Least-squares slope of log sigma_k against log k on [k_lo, k_hi]."""
    if k_hi - k_lo < 10:
        raise OracleError("fit window must span at least 10 indices")
    if k_lo < 1:
        raise OracleError("fit window starts at k >= 1")
    if k_hi > sigma_table.k_max:
        raise OracleError(f"window end {k_hi} exceeds table k_max={sigma_table.k_max}")
    ks = np.arange(k_lo, k_hi + 1)
    ys = np.array([float(mp.log(sigma_table.sigma[k])) for k in ks])
    xs = np.log(ks.astype(float))
    n = len(xs)
    xbar, ybar = xs.mean(), ys.mean()
    sxx = np.sum((xs - xbar) ** 2)
    slope = float(np.sum((xs - xbar) * (ys - ybar)) / sxx)
    intercept = float(ybar - slope * xbar)
    resid = ys - (intercept + slope * xs)
    stderr = float(np.sqrt(np.sum(resid**2) / max(n - 2, 1) / sxx))
    return DecayFit(slope, stderr, intercept, int(k_lo), int(k_hi))


def fock_eigenform_residual(space, k, warn_shell=0.1, warn_tol=1e-6):
    """|| box f - f ||_phi / ||f||_phi for f = z^k dzbar on the Fock space.

    Uses the assembled discrete complex; warns when f carries more than
    warn_tol of its weighted mass in the outer warn_shell fraction of the box.
    """
    import warnings

    from . import operators as ops

    if k > 8:
        raise OracleError("eigenform residual is meaningful for k <= 8 only")
    if space.n != 1:
        raise OracleError("eigenform residual is a C^1 diagnostic")
    zk = (space.coords[0] + 1j * space.coords[1]) ** k
    f = zk  # single (0,1) component
    nrm2 = ops.component_inner(space, f, f).real
    outer = np.maximum(np.abs(space.coords[0]), np.abs(space.coords[1])) >= (1 - warn_shell) * space.R
    mass = ops.component_inner(space, f * outer, f * outer).real
    if mass > warn_tol * nrm2:
        warnings.warn(
            f"eigenform z^{k} dzbar keeps {mass / nrm2:.2e} of its mass in the "
            f"outer {warn_shell:.0%} shell; residual is boundary-limited",
            stacklevel=2,
        )
    box = ops.box_apply_plain(space)
    resid = box(f) - f
    return float(np.sqrt(ops.component_inner(space, resid, resid).real / nrm2))


# ---------------------------------------------------------------- golden files

def golden_path(name):
    from pathlib import Path

    return Path(__file__).parent / "golden" / f"{name}.csv"


def write_golden(weight, path, k_max=200, dps=DEFAULT_DPS):
    table = radial_moments(weight, k_max + 1, dps=dps)
    svals = oracle_singular_values(table)
    meta = {
        "weight": table.weight_label,
        "radial": [[int(m), float(a)] for m, a in table.radial],
        "k_max": int(k_max),
        "dps": int(dps),
        "columns": ["k", "m_k", "sigma_k"],
    }
    digits = dps - 5
    lines = ["# " + json.dumps(meta, sort_keys=True), "k,m_k,sigma_k"]
    with mp.workdps(dps + 10):
        for k in range(k_max + 1):
            mk = mp.nstr(table.moments[k], digits, strip_zeros=False)
            sk = mp.nstr(svals.sigma[k], digits, strip_zeros=False)
            lines.append(f"{k},{mk},{sk}")
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")
    return table, svals


def load_golden(path):
    with open(path) as fh:
        header = fh.readline()
        if not header.startswith("# "):
            raise OracleError(f"golden file {path} missing JSON header")
        meta = json.loads(header[2:])
        cols = fh.readline().strip().split(",")
        if cols != meta["columns"]:
            raise OracleError(f"golden file {path} column mismatch")
        rows = []
        with mp.workdps(meta["dps"] + 10):
            for line in fh:
                k, mk, sk = line.strip().split(",")
                rows.append((int(k), mp.mpf(mk), mp.mpf(sk)))
    return meta, rows


def verify_golden(weight, path, rtol=mp.mpf("1e-10")):
    """Recompute moments/sigmas and compare to the stored golden table."""
    meta, rows = load_golden(path)
    k_max = meta["k_max"]
    table = radial_moments(weight, k_max + 1, dps=meta["dps"])
    svals = oracle_singular_values(table)
    with mp.workdps(meta["dps"] + 10):
        worst_m = mp.mpf(0)
        worst_s = mp.mpf(0)
        for k, mk, sk in rows:
            worst_m = max(worst_m, abs(table.moments[k] - mk) / mk)
            worst_s = max(worst_s, abs(svals.sigma[k] - sk) / sk)
    ok = worst_m <= rtol and worst_s <= rtol
    return {
        "ok": bool(ok),
        "max_rel_moment_dev": float(worst_m),
        "max_rel_sigma_dev": float(worst_s),
        "k_max": k_max,
    }
