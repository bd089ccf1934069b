"""Verifier: flatness census, bad-set classification, return identities,
itineraries, crossing uniqueness, confinement, and jet order.

The periodic-base-point x-coordinate is frozen from
/root/notes/oracle_times.py (mpmath dps=30 quad+findroot vs scipy
solve_ivp rtol=1e-12 agree to 2.2e-12).
"""

import json
import math

import numpy as np
import pytest

from glueflow.builder import extend
from glueflow.engine import FlowBudget, TrajectoryEvent, advance_to_plane, flow
from glueflow.planar import Fiber, PsiMap, escape_count, psi_at, psi_iterate
from glueflow.regions import SpacePoint, build_level0
from glueflow.verify import (
    VerifyError,
    bad_set_catalog,
    check_claim_13,
    check_claim_14,
    check_confinement,
    check_crossing_uniqueness,
    check_itineraries,
    classify_stall,
    count_plane_crossings,
    flat_fraction,
    flat_fraction_report,
    is_flat,
    jet_order,
    periodic_base_point,
    psi_jet_slope,
    sample_window,
)

# frozen oracle: time-0.5 point past the marked left edge on level 1
X1_LEVEL1 = -6.6746421219334208

D0 = build_level0()
V1 = Fiber(0.55, -0.2)
SIG1 = SpacePoint(0.3, V1)
V2 = Fiber(4.0, 4.0)
SIG2 = SpacePoint(0.3, V2)


@pytest.fixture(scope="module")
def d1():
    return extend(D0, SIG1, k=1)


@pytest.fixture(scope="module")
def d2(d1):
    return extend(d1, SIG2, k=2)


def cstar_band_fiber(p):
    """A fiber exactly on the image circle (stalls at the left wall)."""
    return psi_at(p.psi, Fiber(V1.y + math.cos(0.7), V1.z + math.sin(0.7)))


# ------------------------------------------------------------- bad-set catalog


def test_catalog_tag_vocabulary(d2):
    cat = bad_set_catalog(d2)
    tags = {e.tag for e in cat.entries}
    assert tags <= {"c0", "cstar", "c0-zv", "cstar-zh", "inherited-nonflat"}
    # the inherited remainder appears only above the first level
    assert not any(e.kind == "inherited" for e in cat.entries if e.level == 1)
    assert any(e.kind == "inherited" for e in cat.entries if e.level == 2)


def test_catalog_exclusion_planes_level1(d1):
    cat = bad_set_catalog(d1)
    excl = {(e.plane, e.tag) for e in cat.entries if e.kind == "exclusion"}
    assert excl == {
        (8.5, "cstar"),
        (4.5, "c0"),
        (-6.5, "cstar-zh"),
        (6.5, "c0-zv"),
        (2.5, "c0-zv"),
        (6.5, "cstar"),
        (-11.0, "cstar"),
    }


def test_catalog_vanishing_planes_level1(d1):
    cat = bad_set_catalog(d1)
    van = sorted(e.plane for e in cat.entries if e.kind == "vanishing")
    assert van == [-8.0, -7.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0]


def test_classify_wall_stall(d1):
    cat = bad_set_catalog(d1)
    ev = TrajectoryEvent("stall", 1.0, 1.0, SpacePoint(-8.0, cstar_band_fiber(d1.levels[0])), {})
    got = classify_stall(ev, cat)
    assert got.tag == "cstar"
    assert got.kind == "vanishing"
    assert got.plane == -8.0
    assert got.set_distance <= 1e-9


def test_classify_axis_fiber_matches_union_set(d1):
    # a fiber on the vertical invariant axis is on the C0 u Z_V set
    cat = bad_set_catalog(d1)
    ev = TrajectoryEvent(
        "budget-exhausted", 1.0, 1.0, SpacePoint(2.5, Fiber(V1.y, V1.z + 0.4)), {}
    )
    got = classify_stall(ev, cat)
    assert got.tag == "c0-zv"
    assert got.plane == 2.5


def test_classify_far_event_unclassified(d1):
    cat = bad_set_catalog(d1)
    ev = TrajectoryEvent("stall", 1.0, 1.0, SpacePoint(3.0, Fiber(40.0, 40.0)), {})
    assert classify_stall(ev, cat).tag == "unclassified"


def test_classify_rejects_non_stall_kinds(d1):
    cat = bad_set_catalog(d1)
    ev = TrajectoryEvent("segment", 1.0, 1.0, SpacePoint(0.0, V1), {})
    with pytest.raises(ValueError, match="kind"):
        classify_stall(ev, cat)


# ------------------------------------------------------------------- flatness


def test_is_flat_level0_every_point():
    r = is_flat(D0, SpacePoint(3.2, Fiber(1.0, -2.0)))
    assert r.flat and r.failure is None
    assert r.fiber == Fiber(1.0, -2.0)


def test_is_flat_level1_far_fiber(d1):
    r = is_flat(d1, SpacePoint(0.0, Fiber(2.5, 2.5)))
    assert r.flat and r.fiber == Fiber(2.5, 2.5)


def test_is_flat_level1_loop_fiber_reports_unwound_coordinate(d1):
    # a core-strip point whose fiber lies inside the image disk sits on a
    # later ladder rung; the leaf's flat coordinate is the fully unwound
    # fiber, reproduced here by direct planar iteration
    p = d1.levels[0]
    v = Fiber(V1.y + 0.3, V1.z + 0.2)
    assert p.disks.in_bstar(v)
    r = is_flat(d1, SpacePoint(0.3, v))
    assert r.flat
    m = escape_count(p.psi, v, "image", "backward")
    assert m == 8
    assert r.fiber.dist(psi_iterate(p.psi, v, -m)) <= 1e-9


def test_is_flat_stall_classified_on_cstar(d1):
    # on the image circle the left wall never lets the orbit through
    sigma = SpacePoint(-10.9, cstar_band_fiber(d1.levels[0]))
    r = is_flat(d1, sigma, budget=FlowBudget(max_time=1e5, max_jumps=200))
    assert not r.flat
    assert r.failure == "stall:cstar"


def test_is_flat_budget_exhaustion_is_reported(d1):
    # same bad fiber, default budget: the crawl outlives the clock
    sigma = SpacePoint(-10.9, cstar_band_fiber(d1.levels[0]))
    r = is_flat(d1, sigma)
    assert not r.flat
    assert r.failure == "budget"


def test_flat_fraction_level0_is_exactly_one():
    assert flat_fraction(D0, 40, seed=1) == 1.0


def test_flat_fraction_level1_high(d1):
    rep = flat_fraction_report(d1, 250, seed=2)
    assert rep.fraction >= 0.95
    assert rep.classified_fraction >= 0.99
    assert rep.n == 250


def test_flat_fraction_monotone_in_budget(d1):
    budgets = [
        FlowBudget(max_time=200.0, max_jumps=1000),
        FlowBudget(max_time=2000.0, max_jumps=1000),
        None,
    ]
    fractions = [flat_fraction(d1, 80, budget=b, seed=3) for b in budgets]
    assert fractions == sorted(fractions)


def test_flat_fraction_report_deterministic(d1):
    a = flat_fraction_report(d1, 60, seed=4).to_dict()
    b = flat_fraction_report(d1, 60, seed=4).to_dict()
    assert a == b


def test_ladder_exhaustion_classified_by_trap_set(d1):
    # near the marked fiber the return ladder crawls; with few jumps the
    # run exhausts mid-ladder and must match the forward trap set
    out = advance_to_plane(
        d1,
        SpacePoint(0.0, Fiber(V1.y + 0.05, V1.z + 0.03)),
        11.0,
        "forward",
        FlowBudget(max_time=1e4, max_jumps=60),
    )
    assert out.status == "budget-exhausted"
    loops = [e for e in out.events if e.kind == "jump" and e.detail["rule"] == "loop-return"]
    assert len(loops) >= 2
    rep = classify_stall(out.events[-1], bad_set_catalog(d1))
    # the point classifier alone cannot see mid-ladder orbits...
    assert rep.tag in ("unclassified", "c0-zv")
    # ...but the census labels them through the ladder rule
    res = is_flat(d1, SpacePoint(0.0, Fiber(V1.y + 0.05, V1.z + 0.03)),
                  budget=FlowBudget(max_time=1e4, max_jumps=60))
    assert not res.flat and res.failure == "budget"


# ------------------------------------------------------- window return checks


def test_sample_window_stays_in_window(d1):
    p = d1.levels[0]
    rng = np.random.default_rng(0)
    for w in sample_window(p, 50, rng):
        assert p.w_contains(w)
        assert w.dist(p.w0) <= p.W_radius


def test_claim13_marked_fiber_exact(d1):
    p = d1.levels[0]
    out = advance_to_plane(D0, SpacePoint(-1.0, p.w0), 1.0, "forward")
    assert out.status == "hit"
    assert out.point.dist(SpacePoint(1.0, p.w0)) <= 1e-12


def test_claim13_level1(d1):
    rep = check_claim_13(D0, d1.levels[0], 30, seed=5)
    assert rep.ok
    assert rep.stats["max-endpoint-error"] <= 1e-6


def test_claim13_level2(d1, d2):
    rep = check_claim_13(d1, d2.levels[1], 20, seed=5)
    assert rep.ok
    assert rep.stats["max-endpoint-error"] <= 1e-6


def test_claim14_level1(d1):
    rep = check_claim_14(d1, 30, seed=6)
    assert rep.ok
    assert rep.stats["max-cycle-error"] <= 1e-9


def test_claim14_level2(d2):
    rep = check_claim_14(d2, 20, seed=6)
    assert rep.ok
    assert rep.stats["max-cycle-error"] <= 1e-9


# ----------------------------------------------------------------- itineraries


def test_itineraries_level1(d1):
    rep = check_itineraries(d1, 6, seed=7)
    assert rep.ok
    assert rep.checked == 18
    assert rep.stats["max-terminal-fiber-error"] <= 1e-6


def test_itineraries_level2(d2):
    rep = check_itineraries(d2, 3, seed=8)
    assert rep.ok
    assert rep.stats["max-terminal-fiber-error"] <= 1e-6


def test_ladder_escape_count_agrees_with_direct_iteration(d1):
    # dual route for the ladder length: the crossing-time count against
    # stepwise disk membership
    p = d1.levels[0]
    v = Fiber(0.47, 0.44)
    assert p.disks.interior_b0(v) and p.disks.exterior_bstar(v)
    m = escape_count(p.psi, v, "base", "forward")
    assert m == 15
    for j in range(m):
        assert p.disks.in_b0(psi_iterate(p.psi, v, j))
    assert not p.disks.in_b0(psi_iterate(p.psi, v, m))


def test_itinerary_image_regime_sees_inverse_twist(d1):
    # one image-regime orbit must pass (N+3.5, psi^{-1}(v1))
    from glueflow.verify import _expected_waypoints, _sample_regime

    p = d1.levels[0]
    rng = np.random.default_rng(9)
    v1 = _sample_regime(p, "image", rng)
    expected = _expected_waypoints(p, "image", v1)
    xs = [x for x, _ in expected]
    assert xs == [-10.0, -8.0, 4.5, 8.0, 10.0, 11.0]
    inv = expected[2][1]
    assert psi_at(p.psi, inv).dist(v1) <= 1e-9


def test_itinerary_outside_regime_waypoints(d1):
    from glueflow.verify import _expected_waypoints

    p = d1.levels[0]
    v = Fiber(V1.y + 2.0, V1.z)
    expected = _expected_waypoints(p, "outside", v)
    assert expected == [
        (-10.0, v),
        (-6.0, v),
        (-0.5, v),
        (0.5, v),
        (2.0, v),
        (10.0, v),
        (11.0, v),
    ]


# --------------------------------------------------------- crossing uniqueness


def test_crossing_level0_single_hit_each_plane():
    sigma = SpacePoint(-5.0, Fiber(1.5, -0.5))
    run = flow(D0, sigma, 100.0)
    hits = count_plane_crossings(sigma, run.events, 1.0)
    assert len(hits) == 1
    assert hits[0] == sigma.fiber
    assert check_crossing_uniqueness(D0, 10, seed=10).ok


def test_crossing_level1_no_violations(d1):
    rep = check_crossing_uniqueness(d1, 40, seed=11)
    assert rep.ok
    assert rep.checked == 40


def test_crossing_synthetic_violation_detected():
    # two passes over x=11 with far-apart fibers must count as distinct
    sigma = SpacePoint(0.0, Fiber(0.0, 0.0))
    events = [
        TrajectoryEvent("segment", 12.0, 12.0, SpacePoint(12.0, Fiber(0.0, 0.0)), {}),
        TrajectoryEvent(
            "jump", 12.0, 12.0, SpacePoint(-9.0, Fiber(5.0, 5.0)),
            {"source": SpacePoint(12.0, Fiber(0.0, 0.0))},
        ),
        TrajectoryEvent("segment", 30.0, 30.0, SpacePoint(12.5, Fiber(5.0, 5.0)), {}),
    ]
    hits = count_plane_crossings(sigma, events, 11.0)
    assert len(hits) == 2
    assert hits[0].dist(hits[1]) > 1e-4


def test_crossing_jump_does_not_cross_planes():
    # the teleport from 12 to -9 must not register hits in between
    sigma = SpacePoint(11.5, Fiber(0.0, 0.0))
    events = [
        TrajectoryEvent("segment", 0.5, 0.5, SpacePoint(12.0, Fiber(0.0, 0.0)), {}),
        TrajectoryEvent(
            "jump", 0.5, 0.5, SpacePoint(-9.0, Fiber(0.0, 0.0)),
            {"source": SpacePoint(12.0, Fiber(0.0, 0.0))},
        ),
        TrajectoryEvent("segment", 1.0, 1.0, SpacePoint(-8.5, Fiber(0.0, 0.0)), {}),
    ]
    assert count_plane_crossings(sigma, events, 0.0) == []
    assert count_plane_crossings(sigma, events, -9.5) == []


# ------------------------------------------------------------------ confinement


def test_periodic_base_point_matches_frozen_oracle(d1):
    xi1 = periodic_base_point(d1)
    assert xi1.fiber == V1
    assert xi1.x == pytest.approx(X1_LEVEL1, abs=1e-9)


def test_confinement_level1(d1):
    xi1 = periodic_base_point(d1)
    rep = check_confinement(d1, xi1, d1.levels[0].T)
    assert rep.ok
    assert rep.period_residual <= 1e-9
    # the cycle's leftmost point is the marked wall edge
    assert rep.max_abs_x == pytest.approx(7.0, abs=1e-9)
    assert rep.bound == 11.0


def test_confinement_level2(d2):
    xi2 = periodic_base_point(d2)
    rep = check_confinement(d2, xi2, d2.levels[1].T)
    assert rep.ok
    assert rep.max_abs_x == pytest.approx(17.0, abs=1e-9)
    assert rep.bound == 21.0


def test_confinement_rejects_nonperiodic_point(d1):
    with pytest.raises(VerifyError, match="periodic"):
        check_confinement(d1, SpacePoint(0.0, Fiber(2.0, 2.0)), 7)


# -------------------------------------------------------------------- jet order


def test_jet_order_level0_has_no_periodic_point():
    with pytest.raises(VerifyError, match="periodic"):
        jet_order(D0, SpacePoint(0.0, Fiber(1.0, 1.0)), 5, 1)


def test_jet_order_identity_self_test(d1):
    # flowing for time zero is the identity: residuals at rounding level
    res = jet_order(d1, SpacePoint(0.0, Fiber(2.0, 2.0)), 0, 1)
    assert res.slope == math.inf
    assert max(max(row) for row in res.errors) <= 1e-12


def test_jet_order_level1(d1):
    xi1 = periodic_base_point(d1)
    res = jet_order(d1, xi1, d1.levels[0].T, 1, seed=12)
    assert res.period_residual <= 1e-6
    assert res.slope >= 1.7
    assert res.slope == pytest.approx(2.0, abs=0.25)


def test_jet_order_level2(d2):
    xi2 = periodic_base_point(d2)
    res = jet_order(
        d2, xi2, d2.levels[1].T, 2, deltas=np.geomspace(1e-2, 1e-1, 6), seed=12
    )
    assert res.slope >= 2.7


def test_jet_order_uses_given_directions(d1):
    xi1 = periodic_base_point(d1)
    dirs = [Fiber(1.0, 0.0), Fiber(0.0, 1.0)]
    res = jet_order(d1, xi1, d1.levels[0].T, 1, deltas=[1e-2, 3e-2], directions=dirs)
    assert len(res.errors) == 2
    assert all(len(row) == 2 for row in res.errors)


def test_psi_jet_slope_all_orders():
    for k in (1, 2, 3):
        slope = psi_jet_slope(PsiMap(k, Fiber(0.0, 0.0)), seed=13)
        assert slope >= 2 * k + 1 - 0.2
        assert slope == pytest.approx(2 * k + 1, abs=0.2)


# ------------------------------------------------------------------- reporting


def test_reports_serialize_to_json(d1):
    rep = check_claim_14(d1, 5, seed=14)
    blob = json.dumps(rep.to_dict())
    back = json.loads(blob)
    assert back["ok"] is True
    assert back["name"] == "return-cycle-window"
    frep = flat_fraction_report(d1, 20, seed=14)
    assert json.loads(json.dumps(frep.to_dict()))["n"] == 20
