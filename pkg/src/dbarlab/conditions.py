"""Asymptotic condition checkers for polynomial weights.

Each check samples the relevant scalar quantity (lowest Levi eigenvalue, or
the divergence functional theta*|grad phi|^2 + lap phi) on spherical shells
of increasing radius, and independently inspects the leading term of the
quantity restricted to a fan of rays.  A verdict of "holds-empirically"
needs both pictures to agree: shell minima that settle into a nondecreasing
tail clearing the threshold, and strictly positive leading behaviour along
every sampled ray.  "fails-empirically" always carries a concrete witness
point whose value can be re-evaluated.  Anything mixed or undersampled is
reported as "inconclusive" rather than guessed.
"""

import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

from .weights import (
    WeightSpec,
    as_point,
    gradient,
    laplacian,
    levi_entry_polys,
    lowest_levi_eigenvalue,
    poly_add,
    poly_eval,
    poly_mul,
    poly_restrict_ray,
    ray_leading_term,
)

__all__ = [
    "AsymptoticSamplingPlan",
    "ShellRecord",
    "RayTerm",
    "ConditionReport",
    "psi",
    "check_condition_star",
    "check_condition_star_star",
    "check_rellich",
]

VERDICT_HOLDS = "holds-empirically"
VERDICT_FAILS = "fails-empirically"
VERDICT_INCONCLUSIVE = "inconclusive"

# A tail counts as "escalating" only if the minima keep multiplying up by
# this factor shell over shell; radii grow geometrically, so any genuinely
# divergent polynomial quantity clears it easily while a bounded one never
# does.
_ESCALATION_FACTOR = 2.0
# Relative slack when comparing shell minima for monotonicity.
_MONOTONE_SLACK = 1e-9


def _default_radii():
    return tuple(float(2 ** k) for k in range(1, 9))


@dataclass(frozen=True)
class AsymptoticSamplingPlan:
    """Where to look: shell radii, direction count, thresholds.

    directions counts ray samples per shell; for n=2 it is split into an
    8-angle sweep in the first coordinate times directions//8 tilt angles,
    so coordinate rays are always included.
    """

    radii: tuple = field(default_factory=_default_radii)
    directions: int = 32
    tau: float = 1e-3
    theta: float = 0.5
    eps: float = 1.0

    def __post_init__(self):
        radii = tuple(float(r) for r in self.radii)
        if len(radii) < 3:
            raise ValueError("need at least 3 shell radii")
        if any(r <= 0.0 for r in radii):
            raise ValueError("shell radii must be positive")
        if any(b <= a for a, b in zip(radii, radii[1:])):
            raise ValueError("shell radii must be strictly increasing")
        object.__setattr__(self, "radii", radii)
        if self.directions < 8:
            raise ValueError("need at least 8 directions")
        if self.tau <= 0.0:
            raise ValueError("tau must be positive")
        if not 0.0 < self.theta < 1.0:
            raise ValueError("theta must lie in (0, 1)")
        if self.eps <= 0.0:
            raise ValueError("eps must be positive")


@dataclass(frozen=True)
class ShellRecord:
    radius: float
    minimum: float
    argmin: tuple


@dataclass(frozen=True)
class RayTerm:
    direction: tuple
    degree: object  # int, or None when the restriction vanishes identically
    coefficient: float


@dataclass(frozen=True)
class ConditionReport:
    condition: str
    verdict: str
    shells: tuple
    leading_terms: tuple
    witness: object  # (point, value) or None
    notes: str

    def to_json_dict(self):
        out = {
            "condition": self.condition,
            "verdict": self.verdict,
            "shells": [
                {"R": s.radius, "min": s.minimum, "argmin": list(s.argmin)}
                for s in self.shells
            ],
            "leading_terms": [
                {
                    "direction": list(t.direction),
                    "degree": t.degree,
                    "coefficient": t.coefficient,
                }
                for t in self.leading_terms
            ],
        }
        if self.witness is not None:
            point, value = self.witness
            out["witness"] = {"point": list(point), "value": value}
        if self.notes:
            out["notes"] = self.notes
        return out


def psi(w, p, eps):
    """theta-free divergence functional |grad phi|^2 + (1+eps)*lap phi."""
    if eps <= 0.0:
        raise ValueError("eps must be positive")
    p = as_point(p, w.n)
    g = gradient(w, p)
    return sum(gv * gv for gv in g) + (1.0 + eps) * laplacian(w, p)


def _directions(n, count):
    """Deterministic unit directions in R^(2n).

    n=1: equispaced angles.  n=2: product of 8 planar angles with
    count//8 tilt angles from the z1-axis (tilt 0) to the z2-axis (tilt
    pi/2), so both coordinate rays are sampled.
    """
    dirs = []
    if n == 1:
        for j in range(count):
            a = 2.0 * math.pi * j / count
            dirs.append((math.cos(a), math.sin(a)))
        return dirs
    tilts = max(2, count // 8)
    for k in range(tilts):
        alpha = 0.5 * math.pi * k / (tilts - 1)
        ca, sa = math.cos(alpha), math.sin(alpha)
        for j in range(8):
            a = 2.0 * math.pi * j / 8
            dirs.append(
                (
                    ca * math.cos(a),
                    ca * math.sin(a),
                    sa * math.cos(a),
                    sa * math.sin(a),
                )
            )
    return dirs


def _thread_count():
    raw = os.environ.get("DBARLAB_THREADS", "")
    try:
        k = int(raw)
    except ValueError:
        return 1
    return max(1, k)


def _scan_shells(plan, dirs, evaluate):
    """Per-shell minimum of evaluate(point) over the direction fan.

    Shells are independent, so they may be evaluated concurrently; results
    are reassembled in radius order either way.
    """

    def one_shell(r):
        best_val = math.inf
        best_pt = None
        for u in dirs:
            pt = tuple(r * c for c in u)
            v = evaluate(pt)
            if v < best_val:
                best_val = v
                best_pt = pt
        return ShellRecord(radius=r, minimum=best_val, argmin=best_pt)

    workers = _thread_count()
    if workers > 1 and len(plan.radii) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            return tuple(pool.map(one_shell, plan.radii))
    return tuple(one_shell(r) for r in plan.radii)


def _ray_terms(n, dirs, polys):
    """Leading term along each ray of the product-free surrogate.

    polys is a list of polynomials whose ray restrictions are combined by
    the caller-supplied rule implicit in their order: for a single
    quantity pass [p]; for the n=2 Levi surrogate pass [det, trace] and
    the degree reported is deg(det) - deg(trace) with coefficient
    lead(det)/lead(trace), i.e. the leading behaviour of the smaller
    eigenvalue up to a bounded factor.
    """
    out = []
    for u in dirs:
        if len(polys) == 1:
            ray = poly_restrict_ray(polys[0], u)
            deg, coeff = ray_leading_term(ray)
        else:
            det, tr = polys
            dray = poly_restrict_ray(det, u)
            tray = poly_restrict_ray(tr, u)
            ddeg, dcoeff = ray_leading_term(dray)
            tdeg, tcoeff = ray_leading_term(tray)
            if ddeg is None or tdeg is None or tcoeff <= 0.0:
                deg, coeff = None, 0.0
            else:
                deg, coeff = ddeg - tdeg, dcoeff / tcoeff
        out.append(RayTerm(direction=tuple(u), degree=deg, coefficient=coeff))
    return out


def _lambda_surrogate_polys(w):
    """Polynomials standing in for the lowest Levi eigenvalue on rays.

    n=1: the single Levi entry.  n=2: (det, trace); along any fixed ray
    lambda_min = det/trace * (bounded factor in [1/2, 1]), so the sign and
    growth order of det/trace match those of lambda_min.
    """
    if w.n == 1:
        re00, _ = levi_entry_polys(w, 0, 0)
        return [re00]
    a, _ = levi_entry_polys(w, 0, 0)
    d, _ = levi_entry_polys(w, 1, 1)
    bre, bim = levi_entry_polys(w, 0, 1)
    det = poly_add(
        poly_mul(a, d),
        poly_add(poly_mul(bre, bre), poly_mul(bim, bim), scale=1.0),
        scale=-1.0,
    )
    tr = poly_add(a, d)
    return [det, tr]


def _rellich_poly(w, theta):
    """theta*|grad phi|^2 + lap phi as one polynomial."""
    nv = 2 * w.n
    acc = {}
    for v in range(nv):
        fp = w.first_partial(v)
        acc = poly_add(acc, poly_mul(fp, fp), scale=1.0)
    acc = {e: theta * c for e, c in acc.items()}
    for v in range(nv):
        acc = poly_add(acc, w.second_partial(v, v))
    return acc


def _nondecreasing_tail(values, start_floor=None):
    """Longest suffix over which values never drop (with relative slack).

    Returns the suffix start index, or None when even the last two shells
    disagree.  start_floor additionally requires every suffix value to
    clear that floor.
    """
    m = len(values)
    j = m - 1
    while j > 0:
        prev, cur = values[j - 1], values[j]
        if cur < prev - _MONOTONE_SLACK * max(abs(prev), 1.0):
            break
        j -= 1
    if j > m - 2:
        return None
    if start_floor is not None:
        while j < m - 1 and values[j] < start_floor:
            j += 1
        if j > m - 2 or any(v < start_floor for v in values[j:]):
            return None
    return j


def _escalating_tail(shells, tau):
    """True when the minima multiply up shell over shell on some suffix.

    Requires at least three consecutive shells with min[i+1] >=
    _ESCALATION_FACTOR * max(min[i], tau); bounded quantities cannot do
    this along a geometric radius ladder.
    """
    vals = [s.minimum for s in shells]
    run = 0
    for a, b in zip(vals, vals[1:]):
        if b >= _ESCALATION_FACTOR * max(a, tau):
            run += 1
            if run >= 2:
                return True
        else:
            run = 0
    return False


def _positive_rays(terms, need_growth):
    """All rays positive; with need_growth also strictly increasing."""
    for t in terms:
        if t.degree is None or t.coefficient <= 0.0:
            return False
        if need_growth and t.degree <= 0:
            return False
    return True


def _bad_ray(terms, need_growth):
    for t in terms:
        if t.degree is None or t.coefficient <= 0.0:
            return t
        if need_growth and t.degree <= 0:
            return t
    return None


def _witness_from_shells(shells, cutoff):
    """Outermost sampled point falling below cutoff, if any."""
    for s in reversed(shells):
        if s.minimum < cutoff:
            return (s.argmin, s.minimum)
    return None


def _witness_on_ray(shells, dirs, term, evaluate):
    """Sample point on the offending ray at the outermost radius."""
    r = shells[-1].radius
    pt = tuple(r * c for c in term.direction)
    return (pt, evaluate(pt))


def _check_lower_bound(w, plan, condition):
    """Shared engine for the two Levi-eigenvalue conditions.

    condition "star" asks for a uniform positive lower bound far out;
    "star-star" asks for divergence.
    """
    if not isinstance(w, WeightSpec):
        raise TypeError("expected a WeightSpec")
    plan = plan or AsymptoticSamplingPlan()
    dirs = _directions(w.n, plan.directions)
    evaluate = lambda pt: lowest_levi_eigenvalue(w, pt)
    shells = _scan_shells(plan, dirs, evaluate)
    terms = tuple(_ray_terms(w.n, dirs, _lambda_surrogate_polys(w)))
    need_growth = condition == "star-star"
    rays_ok = _positive_rays(terms, need_growth)
    offender = _bad_ray(terms, need_growth)

    vals = [s.minimum for s in shells]
    if condition == "star":
        tail = _nondecreasing_tail(vals, start_floor=plan.tau)
        sampled_ok = tail is not None
        witness = _witness_from_shells(shells, plan.tau)
    else:
        sampled_ok = _escalating_tail(shells, plan.tau)
        witness = None

    if rays_ok and sampled_ok:
        return ConditionReport(
            condition=condition,
            verdict=VERDICT_HOLDS,
            shells=shells,
            leading_terms=terms,
            witness=None,
            notes="",
        )
    if offender is not None:
        wit = _witness_on_ray(shells, dirs, offender, evaluate)
        if condition == "star" and witness is not None and witness[1] <= wit[1]:
            wit = witness
        label = (
            "ray restriction vanishes identically"
            if offender.degree is None
            else f"ray leading term degree {offender.degree}, "
            f"coefficient {offender.coefficient:.6g}"
        )
        return ConditionReport(
            condition=condition,
            verdict=VERDICT_FAILS,
            shells=shells,
            leading_terms=terms,
            witness=wit,
            notes=label,
        )
    if condition == "star" and witness is not None:
        return ConditionReport(
            condition=condition,
            verdict=VERDICT_FAILS,
            shells=shells,
            leading_terms=terms,
            witness=witness,
            notes="sampled shell minimum below tau",
        )
    return ConditionReport(
        condition=condition,
        verdict=VERDICT_INCONCLUSIVE,
        shells=shells,
        leading_terms=terms,
        witness=None,
        notes="ray analysis and shell sampling disagree",
    )


def check_condition_star(w, plan=None):
    """Uniform positive lower bound on the lowest Levi eigenvalue far out."""
    return _check_lower_bound(w, plan, "star")


def check_condition_star_star(w, plan=None):
    """Divergence of the lowest Levi eigenvalue along every direction."""
    return _check_lower_bound(w, plan, "star-star")


def check_rellich(w, plan=None):
    """Divergence of theta*|grad phi|^2 + lap phi.

    Uses plan.theta; the quantity is a single polynomial, so ray leading
    terms are exact rather than surrogate.
    """
    if not isinstance(w, WeightSpec):
        raise TypeError("expected a WeightSpec")
    plan = plan or AsymptoticSamplingPlan()
    dirs = _directions(w.n, plan.directions)
    poly = _rellich_poly(w, plan.theta)
    evaluate = lambda pt: poly_eval(poly, list(pt))
    shells = _scan_shells(plan, dirs, evaluate)
    terms = tuple(_ray_terms(w.n, dirs, [poly]))
    rays_ok = _positive_rays(terms, need_growth=True)
    offender = _bad_ray(terms, need_growth=True)
    sampled_ok = _escalating_tail(shells, plan.tau)

    if rays_ok and sampled_ok:
        verdict, witness, notes = VERDICT_HOLDS, None, ""
    elif offender is not None:
        witness = _witness_on_ray(shells, dirs, offender, evaluate)
        verdict = VERDICT_FAILS
        notes = (
            "ray restriction vanishes identically"
            if offender.degree is None
            else f"ray leading term degree {offender.degree}, "
            f"coefficient {offender.coefficient:.6g}"
        )
    else:
        verdict, witness = VERDICT_INCONCLUSIVE, None
        notes = "ray analysis and shell sampling disagree"
    return ConditionReport(
        condition="rellich",
        verdict=verdict,
        shells=shells,
        leading_terms=terms,
        witness=witness,
        notes=notes,
    )
