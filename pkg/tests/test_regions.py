import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from glueflow.jets import JetMatchedFunction
from glueflow.planar import DiskPair, Fiber, PsiMap, psi_at
from glueflow.regions import (
    AmbiguousMembershipError,
    DisplayedSystem,
    LevelParams,
    NotInManifoldError,
    SpacePoint,
    build_level0,
    check_extension,
    locate,
    point,
    save_system,
    load_system,
    speed,
    system_from_dict,
    system_to_dict,
    validate_displayed_axioms,
)

W0 = Fiber(0.25, -0.4)


def synthetic_level(N: int = 1, k: int = 1, w0: Fiber = W0) -> LevelParams:
    """A hand-assembled level with plausible scalars (no builder needed)."""
    psi = PsiMap(k=k, w0=w0)
    lam0 = JetMatchedFunction(w0=w0, k=k, coeffs=((0, 0, 0.7),), a0=1.0)
    return LevelParams(
        N=N,
        w0=w0,
        k=k,
        T=7,
        T0=4.46,
        lambda0=lam0,
        psi=psi,
        disks=DiskPair(psi),
        W_radius=0.25,
    )


@pytest.fixture(scope="module")
def d1() -> DisplayedSystem:
    return DisplayedSystem((synthetic_level(),))


def test_level0_basics():
    base = build_level0()
    assert base.N == 1
    assert base.depth == 0
    cell = locate(base, point(0, 0, 0))
    assert cell is not None and cell.name == "core"
    rng = np.random.default_rng(1)
    for _ in range(50):
        sig = point(*rng.uniform(-100, 100, size=3))
        assert speed(base, sig) == 1.0


def test_locate_excised_box_interior(d1):
    # x in the middle of the left kept-wall strip, fiber strictly inside B*
    v_in_bstar = psi_at(d1.level(1).psi, Fiber(W0.y + 0.3, W0.z + 0.1))
    assert locate(d1, SpacePoint(-7.5, v_in_bstar)) is None


def test_locate_kept_wall(d1):
    v_in_bstar = psi_at(d1.level(1).psi, Fiber(W0.y + 0.3, W0.z + 0.1))
    cell = locate(d1, SpacePoint(-7.0, v_in_bstar))
    assert cell is not None and cell.name == "f-mid"
    cell = locate(d1, SpacePoint(-8.0, v_in_bstar))
    assert cell is not None and cell.name == "f-mid"
    # outside the image disk the whole slab belongs
    cell = locate(d1, SpacePoint(-7.5, Fiber(W0.y + 3.0, W0.z)))
    assert cell is not None and cell.name == "f-mid"


def test_locate_gaps_and_closures(d1):
    far = Fiber(W0.y + 3.0, W0.z)  # clear of both disks
    assert locate(d1, SpacePoint(1.5, far)) is None  # gap [N, N+1)
    assert locate(d1, SpacePoint(1.0, far)) is None  # x=N not in M
    got = locate(d1, SpacePoint(2.0, far))
    assert got is not None and got.name == "gh-a"
    assert locate(d1, SpacePoint(9.5, far)) is None  # gap [N+8, N+9)
    got = locate(d1, SpacePoint(10.0, far))
    assert got is not None and got.name == "far-right"
    assert locate(d1, SpacePoint(-10.5, far)).name == "far-left"
    # dwell strip: left edge depends on lambda0(v)
    lam = d1.level(1).lambda0(far)
    assert locate(d1, SpacePoint(-1.0, far)).name == "reentry"
    assert locate(d1, SpacePoint(-1.0 - lam + 1e-6, far)).name == "reentry"
    assert locate(d1, SpacePoint(-1.0 - lam - 1e-6, far)) is None
    # excised middle boxes keep no walls
    inside = Fiber(W0.y + 0.2, W0.z + 0.1)
    assert locate(d1, SpacePoint(3.0, inside)) is None
    assert locate(d1, SpacePoint(6.0, inside)) is None


def test_locate_ambiguous_on_circle(d1):
    on_c0 = Fiber(W0.y + 1.0, W0.z)
    with pytest.raises(AmbiguousMembershipError):
        locate(d1, SpacePoint(3.0, on_c0))


def test_speed_examples(d1):
    far = Fiber(W0.y + 3.0, W0.z)
    assert speed(d1, SpacePoint(20.0, far)) == 1.0  # beyond N'
    assert speed(d1, SpacePoint(-0.5, far)) == 1.0  # core
    # on the f vanishing locus: wall plane x=-N-6, fiber on C*
    on_cstar = psi_at(d1.level(1).psi, Fiber(W0.y + 1.0, W0.z))
    assert speed(d1, SpacePoint(-7.0, on_cstar)) < 1e-8
    # generic points of the right strip match the closed form
    v = Fiber(W0.y + 1.3, W0.z)
    p = d1.level(1)
    want = p.right_speed(2.5, p.disks.zeta0(v), p.disks.zeta_star(v))
    assert speed(d1, SpacePoint(2.5, v)) == want
    # near a gate root the slow-down is representable: strictly inside (0,1)
    want = p.right_speed(2.9, p.disks.zeta0(v), p.disks.zeta_star(v))
    assert speed(d1, SpacePoint(2.9, v)) == want
    assert 0.0 < want < 1.0
    with pytest.raises(NotInManifoldError):
        speed(d1, SpacePoint(1.5, far))


def test_partition_property(d1):
    """Every sampled point lands in at most one cell (locate would raise on
    a double hit), and membership bands are the only ambiguities."""
    rng = np.random.default_rng(5)
    n_amb = 0
    for _ in range(20_000):
        sig = SpacePoint(
            rng.uniform(-13.0, 13.0), Fiber(*rng.uniform(-3.0, 3.0, size=2))
        )
        try:
            locate(d1, sig)  # raises AssertionError on a partition breach
        except AmbiguousMembershipError:
            n_amb += 1
    assert n_amb < 20  # bands are thin


def test_vanishing_loci_property(d1):
    """speed < 1e-6 only within 1e-3 of the catalogued plane x circle sets."""
    rng = np.random.default_rng(6)
    p = d1.level(1)
    sigmas = []
    for _ in range(5_000):
        sigmas.append(
            SpacePoint(rng.uniform(-13.0, 13.0), Fiber(*rng.uniform(-3.0, 3.0, size=2)))
        )
    # the loci have measure zero, so also sample deliberately near them
    planes = [pl for pl, _ in p.vanishing_sets()]
    for _ in range(5_000):
        dx = 10.0 ** rng.uniform(-5, -0.5) * rng.choice([-1.0, 1.0])
        dr = 10.0 ** rng.uniform(-5, -0.5) * rng.choice([-1.0, 1.0])
        x = planes[rng.integers(len(planes))] + dx
        t = rng.uniform(0, 2 * math.pi)
        fib = Fiber(
            W0.y + (1.0 + dr) * math.cos(t), W0.z + (1.0 + dr) * math.sin(t)
        )
        if rng.random() < 0.5:
            fib = psi_at(p.psi, fib)  # land near C* instead of C0
        sigmas.append(SpacePoint(x, fib))
    hits = 0
    for sig in sigmas:
        try:
            s = speed(d1, sig)
        except (NotInManifoldError, AmbiguousMembershipError):
            continue
        if s >= 1e-6:
            continue
        hits += 1
        dists = []
        for plane, tag in p.vanishing_sets():
            circ = (
                p.disks.dist_c0(sig.fiber)
                if tag == "c0"
                else p.disks.dist_cstar(sig.fiber)
            )
            dists.append(math.hypot(sig.x - plane, circ))
        assert min(dists) < 1e-3, (sig, s, min(dists))
    assert hits >= 1  # the targeted sampler must produce slow points


def test_jump_rule_catalog(d1):
    rules = {r.rule_id: r for r in d1.rules()}
    assert len(rules) == 8
    n = 1.0
    assert rules["left-seam"].source_x == -n - 9 and rules["left-seam"].target_x == -n - 8
    assert rules["reentry-seam"].target_x is None
    assert rules["inner-exit-seam"].source_x == n and rules["inner-exit-seam"].approach == "limit"
    assert rules["loop-return"].fiber_map == "twist"
    assert rules["loop-return"].target_x == -n - 6
    assert rules["left-wall-exit"].fiber_map == "twist-inverse"
    assert rules["left-wall-exit"].source_fiber == "open-bstar"
    assert rules["right-wall-entry"].target_x == n + 7
    assert rules["unwind-step"].target_x == n + 5


def test_jump_fiber_maps_compose(d1):
    """twist followed by twist-inverse returns the fiber (rule-tag level)."""
    p = d1.level(1)
    rules = {r.rule_id: r for r in d1.rules()}
    v = Fiber(W0.y + 0.3, W0.z - 0.2)
    out = rules["unwind-step"].apply_fiber(p.psi, rules["loop-return"].apply_fiber(p.psi, v))
    assert out.dist(v) <= 10 * p.psi.ode_tolerance


def test_recursion_same_code_path(d1):
    base = build_level0()
    rng = np.random.default_rng(9)
    for _ in range(200):
        sig = SpacePoint(rng.uniform(-0.99, 0.99), Fiber(*rng.uniform(-3, 3, size=2)))
        assert speed(base, sig) == speed(d1, sig)  # exactly, same path


def test_validate_axioms_level0_and_synthetic(d1):
    assert validate_displayed_axioms(build_level0(), 500).ok
    rep = validate_displayed_axioms(d1, 2000, seed=3)
    assert rep.ok, rep.violations[:5]


def test_validate_axioms_adversarial():
    import dataclasses

    bad_level = dataclasses.replace(synthetic_level(), T0=1.0)  # T-T0 = 6
    rep = validate_displayed_axioms(DisplayedSystem((bad_level,)), 100)
    assert any(v["check"] == "T-window" for v in rep.violations)


def test_check_extension_agrees(d1):
    rep = check_extension(build_level0(), d1, 10_000, seed=12)
    assert rep.ok, rep.violations[:5]
    assert rep.checked > 9000


def test_check_extension_two_levels(d1):
    outer = DisplayedSystem((d1.level(1), synthetic_level(N=11)))
    rep = check_extension(d1, outer, 4000, seed=12)
    assert rep.ok, rep.violations[:5]


def test_check_extension_negative(d1):
    import dataclasses

    # alter the *shared* level's w0 in the outer copy: the level-1 strips lie
    # inside the shared region, so membership and speed must now disagree
    lvl = d1.level(1)
    psi2 = PsiMap(k=lvl.k, w0=Fiber(0.9, 0.1))
    tampered = dataclasses.replace(
        lvl, w0=Fiber(0.9, 0.1), psi=psi2, disks=DiskPair(psi2),
        lambda0=dataclasses.replace(lvl.lambda0, w0=Fiber(0.9, 0.1)),
    )
    outer = DisplayedSystem((tampered, synthetic_level(N=11)))
    rep = check_extension(d1, outer, 4000, seed=12)
    assert not rep.ok


def test_check_extension_level_mismatch(d1):
    with pytest.raises(ValueError):
        check_extension(d1, d1, 10)


def test_serialization_round_trip(tmp_path, d1):
    doc = system_to_dict(d1)
    clone = system_from_dict(doc)
    assert clone.levels == d1.levels
    assert system_to_dict(clone) == doc
    path = tmp_path / "sys.json"
    save_system(d1, path)
    assert load_system(path).levels == d1.levels


@settings(max_examples=60, deadline=None)
@given(
    x=st.floats(min_value=-13, max_value=13),
    y=st.floats(min_value=-3, max_value=3),
    z=st.floats(min_value=-3, max_value=3),
)
def test_speed_in_unit_interval_property(x, y, z):
    system = DisplayedSystem((synthetic_level(),))
    try:
        s = speed(system, point(x, y, z))
    except (NotInManifoldError, AmbiguousMembershipError):
        return
    assert 0.0 <= s <= 1.0
