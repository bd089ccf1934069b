"""Acceptance gate: one test per shipped criterion, one pass/fail line each.

Run `pytest -s tests/test_acceptance.py` to watch the lines print as the
criteria finish; each test asserts its stated tolerance and time limit, so
a plain `pytest` run gates on exactly the same conditions.
"""

import math
import time

import numpy as np
import pytest

from glueflow.builder import build_report, extend
from glueflow.construct import ConstructConfig, run_construction
from glueflow.engine import flow
from glueflow.planar import Fiber, PsiMap, psi_at
from glueflow.regions import SpacePoint, build_level0, check_extension
from glueflow.verify import (
    check_claim_13,
    check_claim_14,
    check_confinement,
    check_crossing_uniqueness,
    check_itineraries,
    flat_fraction_report,
    jet_order,
    periodic_base_point,
    psi_jet_slope,
)

SEED = 0
D0 = build_level0()
W0 = Fiber(0.55, -0.2)


def _report(num: int, ok: bool, elapsed: float, limit: float, detail: str):
    line = (
        f"criterion {num}: {'PASS' if ok and elapsed < limit else 'FAIL'} "
        f"[{elapsed:.1f}s/{limit:.0f}s] {detail}"
    )
    print(line)
    assert ok, line
    assert elapsed < limit, line


@pytest.fixture(scope="session")
def k2(tmp_path_factory):
    """The depth-2 construction run shared by criteria 3, 4, 5, 6, 7, 9."""
    t0 = time.perf_counter()
    out = tmp_path_factory.mktemp("acceptance-k2")
    state = run_construction(
        2, SEED, ConstructConfig(verify_samples=10, census_samples=100, out_dir=out)
    )
    return state, time.perf_counter() - t0


@pytest.fixture(scope="session")
def d1_census():
    """A level-1 system whose bad sets sit inside the census box."""
    return extend(D0, SpacePoint(0.3, W0), k=1)


def test_criterion_1_base_flow_exactness():
    t0 = time.perf_counter()
    rng = np.random.default_rng(SEED)
    worst = 0.0
    for x, y, z, t in zip(
        rng.uniform(-50, 50, 100_000),
        rng.uniform(-50, 50, 100_000),
        rng.uniform(-50, 50, 100_000),
        rng.uniform(-20, 20, 100_000),
    ):
        res = flow(D0, SpacePoint(x, Fiber(y, z)), t)
        worst = max(
            worst,
            abs(res.point.x - (x + t)),
            abs(res.point.y - y),
            abs(res.point.z - z),
        )
    elapsed = time.perf_counter() - t0
    _report(
        1, worst <= 1e-12, elapsed, 1.0,
        f"1e5 base flows, worst residual {worst:.2e} (tol 1e-12)",
    )


def test_criterion_2_twist_jet_order_and_conservation():
    t0 = time.perf_counter()
    slopes = {}
    ok = True
    for k in (1, 2, 3):
        slope = psi_jet_slope(PsiMap(k=k, w0=W0), seed=SEED)
        slopes[k] = slope
        ok &= slope >= 2 * k + 1 - 0.2
    m = PsiMap(k=2, w0=W0)
    rng = np.random.default_rng(SEED)
    rel_err = 0.0
    checked = 0
    while checked < 200:
        v = Fiber(*(np.array(W0) + rng.uniform(-2, 2, size=2)))
        u = m.rel(v)
        if abs(u.y * u.z) < 1e-6:
            continue
        iu = m.rel(psi_at(m, v))
        rel_err = max(rel_err, abs(iu.y * iu.z - u.y * u.z) / abs(u.y * u.z))
        checked += 1
    ok &= rel_err <= 1e-9
    elapsed = time.perf_counter() - t0
    _report(
        2, ok, elapsed, 10.0,
        "slopes " + ", ".join(f"k={k}: {s:.3f}" for k, s in slopes.items())
        + f" (need 2k+0.8); conservation rel err {rel_err:.2e} (tol 1e-9)",
    )


def test_criterion_3_dwell_function_range_and_jet(k2):
    state, _ = k2
    t0 = time.perf_counter()
    rng = np.random.default_rng(SEED)
    ok = True
    lo, hi = math.inf, -math.inf
    for params in (state.systems[1].levels[0], state.systems[2].levels[1]):
        ys = params.w0.y + rng.uniform(-30, 30, 50_000)
        zs = params.w0.z + rng.uniform(-30, 30, 50_000)
        vals = params.lambda0.eval_many(ys, zs)
        lo, hi = min(lo, float(vals.min())), max(hi, float(vals.max()))
        ok &= bool(np.all(vals > 1.0) and np.all(vals < 4.0))
    slopes = [
        build_report(state.systems[j], -1).jet_slope for j in (1, 2)
    ]
    ok &= slopes[0] >= 2 - 0.3 and slopes[1] >= 3 - 0.3
    elapsed = time.perf_counter() - t0
    _report(
        3, ok, elapsed, 30.0,
        f"dwell range on 1e5 probes [{lo:.3f}, {hi:.3f}] in (1,4); "
        f"dwell-gap slopes {slopes[0]:.3f} (need 1.7), {slopes[1]:.3f} (need 2.7)",
    )


def test_criterion_4_core_transit_window(k2):
    state, _ = k2
    t0 = time.perf_counter()
    rep = check_claim_13(state.systems[0], state.systems[1].levels[0], 100, seed=SEED)
    elapsed = time.perf_counter() - t0
    err = rep.stats["max-endpoint-error"]
    _report(
        4, rep.ok and err <= 1e-6, elapsed, 60.0,
        f"100 window fibers, max endpoint error {err:.2e} (tol 1e-6)",
    )


def test_criterion_5_return_cycle_window(k2):
    state, _ = k2
    t0 = time.perf_counter()
    rep = check_claim_14(state.systems[1], 100, seed=SEED)
    elapsed = time.perf_counter() - t0
    err = rep.stats["max-cycle-error"]
    _report(
        5, rep.ok and err <= 1e-6, elapsed, 120.0,
        f"100 window fibers, max cycle error {err:.2e} (tol 1e-6)",
    )


def test_criterion_6_itineraries(k2):
    state, _ = k2
    t0 = time.perf_counter()
    rep = check_itineraries(state.systems[1], 50, seed=SEED)
    elapsed = time.perf_counter() - t0
    err = rep.stats["max-terminal-fiber-error"]
    _report(
        6, rep.ok and err <= 1e-6, elapsed, 300.0,
        f"{rep.checked} orbits over three regimes, "
        f"longest waypoint list {rep.stats['longest-waypoint-list']}, "
        f"max terminal fiber error {err:.2e} (tol 1e-6)",
    )


def test_criterion_7_depth_two_construction(k2):
    state, build_time = k2
    t0 = time.perf_counter()
    ok = state.depth == 2
    details = []
    for j in (1, 2):
        ext = check_extension(state.systems[j - 1], state.systems[j], 10_000, seed=SEED)
        ok &= ext.ok
        details.append(f"extension {j - 1}->{j}: {len(ext.violations)}/{ext.checked}")
    slopes = []
    for j, need in ((1, 1.7), (2, 2.7)):
        system = state.systems[j]
        p = system.levels[-1]
        ok &= 2.0 - 1e-9 <= p.T - p.T0 <= 3.0 + 1e-9 and isinstance(p.T, int)
        xi = periodic_base_point(system)
        deltas = None if p.k == 1 else np.geomspace(1e-2, 1e-1, 6)
        res = jet_order(system, xi, p.T, p.k, deltas=deltas, seed=SEED)
        slopes.append(res.slope)
        ok &= res.slope >= need
        conf = check_confinement(system, xi, p.T)
        ok &= conf.ok
    elapsed = time.perf_counter() - t0 + build_time
    _report(
        7, ok, elapsed, 1200.0,
        f"{'; '.join(details)} violations; jet slopes "
        f"{slopes[0]:.3f} (need 1.7), {slopes[1]:.3f} (need 2.7); "
        f"T windows and confinement hold",
    )


def test_criterion_8_generic_flatness_census(d1_census):
    t0 = time.perf_counter()
    rep = flat_fraction_report(d1_census, 2000, seed=SEED)
    elapsed = time.perf_counter() - t0
    ok = rep.fraction >= 0.95 and rep.classified_fraction >= 0.99
    _report(
        8, ok, elapsed, 600.0,
        f"flat fraction {rep.fraction:.4f} (need 0.95), "
        f"classified {rep.classified_fraction:.4f} (need 0.99), "
        f"failures {rep.failures}",
    )


def test_criterion_9_crossing_uniqueness_and_confinement(k2, d1_census):
    state, _ = k2
    t0 = time.perf_counter()
    rep_a = check_crossing_uniqueness(d1_census, 150, seed=SEED)
    rep_b = check_crossing_uniqueness(state.systems[2], 50, seed=SEED)
    violations = len(rep_a.violations) + len(rep_b.violations)
    ok = violations == 0
    for j in (1, 2):
        system = state.systems[j]
        conf = check_confinement(
            system, periodic_base_point(system), system.levels[-1].T
        )
        ok &= conf.ok and conf.max_abs_x < conf.bound
    elapsed = time.perf_counter() - t0
    _report(
        9, ok, elapsed, 300.0,
        f"{rep_a.checked + rep_b.checked} sampled orbits, "
        f"{violations} crossing violations; marked orbits confined",
    )
