"""Asymptotic condition checkers: Levi lower bounds and Rellich growth."""

import pytest

from dbarlab.conditions import (
    AsymptoticSamplingPlan,
    check_condition_star,
    check_condition_star_star,
    check_rellich,
)
from dbarlab.weights import parse_weight, preset_weight

HOLDS = "holds-empirically"
FAILS = "fails-empirically"


def test_fock_star_holds_starstar_fails():
    # lambda = 1 everywhere: bounded below, does not diverge
    w = preset_weight("fock", n=1)
    assert check_condition_star(w).verdict == HOLDS
    assert check_condition_star_star(w).verdict == FAILS


def test_quartic_both_hold():
    w = preset_weight("quartic", n=1)
    assert check_condition_star(w).verdict == HOLDS
    assert check_condition_star_star(w).verdict == HOLDS


def test_pure_x_square_star_only():
    w = parse_weight("poly: x1^2", n=1)
    assert check_condition_star(w).verdict == HOLDS
    assert check_condition_star_star(w).verdict == FAILS
    assert check_rellich(w).verdict == FAILS


def test_degenerate_plane_weight_fails_star():
    # weight ignores the second plane entirely
    w = parse_weight("poly: x1^2 + y1^2", n=2)
    rep = check_condition_star(w)
    assert rep.verdict == FAILS
    assert rep.witness is not None


def test_rellich_holds_for_presets():
    for name in ("fock", "quartic"):
        for n in (1, 2):
            rep = check_rellich(preset_weight(name, n=n))
            assert rep.verdict == HOLDS, (name, n)


def test_shells_record_scan_radii():
    plan = AsymptoticSamplingPlan()
    rep = check_condition_star(preset_weight("fock", n=1), plan)
    radii = [s.radius for s in rep.shells]
    assert radii == sorted(radii)
    assert len(radii) >= 3
    for shell in rep.shells:
        assert shell.minimum == pytest.approx(1.0, rel=1e-9)


def test_star_verdict_shift_invariant():
    base = parse_weight("poly: x1^4 + 2 x1^2 y1^2 + y1^4", n=1)
    shifted = parse_weight("poly: x1^4 + 2 x1^2 y1^2 + y1^4 + 1", n=1)
    assert check_condition_star(base).verdict == check_condition_star(shifted).verdict
    assert (check_condition_star_star(base).verdict
            == check_condition_star_star(shifted).verdict)


def test_plan_theta_feeds_rellich():
    # x^2 fails for every admissible theta: along the y axis the gradient
    # vanishes and the Laplacian stays constant
    w = parse_weight("poly: x1^2", n=1)
    rep = check_rellich(w, AsymptoticSamplingPlan(theta=0.9))
    assert rep.verdict == FAILS
    with pytest.raises(ValueError):
        AsymptoticSamplingPlan(theta=100.0)
