"""Numerical verification of the headline dynamical properties.

Checks, for any built system: flatness of individual points and the
Monte-Carlo flat fraction with failure classification against the
catalogued bad sets; the marked-window return identities (core transit
and full return cycle); the three-regime orbit itineraries; uniqueness
of display-boundary crossings; confinement of the periodic orbit; and
the order of tangency between the time-T map and the identity at the
periodic base point.

Every check is read-only over an immutable system, deterministic for a
given seed, and reports violations as data rather than raising.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .builder import total_dwell
from .engine import (
    DEFAULT_BUDGET,
    FlowBudget,
    TrajectoryEvent,
    advance_to_plane,
    flow,
)
from .planar import (
    AxisEscapeError,
    EscapeCapError,
    Fiber,
    PsiMap,
    escape_count,
    psi_at,
    psi_displacement,
    psi_inverse_at,
    psi_iterate,
)
from .regions import (
    AmbiguousMembershipError,
    DisplayedSystem,
    LevelParams,
    SpacePoint,
    locate,
)

__all__ = [
    "VerifyError",
    "FlatnessResult",
    "BadSetEntry",
    "BadSetCatalog",
    "StallClassification",
    "bad_set_catalog",
    "classify_stall",
    "is_flat",
    "FlatFractionReport",
    "flat_fraction",
    "flat_fraction_report",
    "JetOrderResult",
    "jet_order",
    "periodic_base_point",
    "psi_jet_slope",
    "CheckReport",
    "sample_window",
    "check_claim_13",
    "check_claim_14",
    "check_itineraries",
    "count_plane_crossings",
    "check_crossing_uniqueness",
    "ConfinementReport",
    "check_confinement",
]

# matching fibers across a full transit, and endpoint checks of the
# return identities, share one tolerance
POINT_MATCH_TOL = 1e-6
# two boundary hits whose fibers differ by more than this are distinct
DISTINCT_FIBER_TOL = 1e-4
# a stall/budget event matches a catalogued set only within this
# fiber-set distance
CLASSIFY_POINT_GATE = 1e-2
# budget exhaustion inside the return ladder matches a trap set within
# this (the creeping iterates may still be ~0.05 from the circle)
CLASSIFY_LADDER_GATE = 0.25
# jet residuals below this are integration noise, not signal
JET_NOISE_FLOOR = 1e-11
# waypoint x-values are exact cell-boundary floats; allow rounding only
_WAYPOINT_X_TOL = 1e-9


class VerifyError(RuntimeError):
    """A check's precondition failed (e.g. base point not periodic)."""


# --- bad-set catalogue -------------------------------------------------------


@dataclass(frozen=True)
class BadSetEntry:
    """One catalogued bad set: a plane crossed with a planar set.

    `tag` names the planar set: "c0" / "cstar" are the two critical
    circles, "c0-zv" / "cstar-zh" their unions with the vertical /
    horizontal invariant axis through the marked fiber, and
    "inherited-nonflat" the inner system's non-flat remainder (no plane,
    never matched numerically: its concrete part is covered by the inner
    level's own entries).

    `kind` records the role: "vanishing" entries are the loci where the
    level's speed vanishes (where stalls pin); "exclusion" entries are
    the orbit-obstruction sets threaded through the diagnostic planes;
    "inherited" is the inner remainder.
    """

    level: int
    plane: float | None
    tag: str
    kind: str


@dataclass(frozen=True)
class BadSetCatalog:
    """All catalogued bad sets of a system, with distance evaluators."""

    levels: tuple[LevelParams, ...]
    entries: tuple[BadSetEntry, ...]

    def params_for(self, entry: BadSetEntry) -> LevelParams:
        return self.levels[entry.level - 1]

    def set_distance(self, entry: BadSetEntry, v: Fiber) -> float:
        """Planar distance from v to the entry's fiber set."""
        if entry.kind == "inherited":
            return math.inf
        p = self.params_for(entry)
        if entry.tag == "c0":
            return p.disks.dist_c0(v)
        if entry.tag == "cstar":
            return p.disks.dist_cstar(v)
        if entry.tag == "c0-zv":
            return min(p.disks.dist_c0(v), p.psi.axis_v_dist(v))
        if entry.tag == "cstar-zh":
            return min(p.disks.dist_cstar(v), p.psi.axis_h_dist(v))
        raise ValueError(f"unknown tag {entry.tag!r}")


def bad_set_catalog(system: DisplayedSystem) -> BadSetCatalog:
    """Catalogue every level's vanishing loci and exclusion sets."""
    entries: list[BadSetEntry] = []
    for j, p in enumerate(system.levels, start=1):
        n = float(p.N)
        for plane, circle in p.vanishing_sets():
            entries.append(BadSetEntry(j, plane, circle, "vanishing"))
        entries += [
            BadSetEntry(j, n + 7.5, "cstar", "exclusion"),
            BadSetEntry(j, n + 3.5, "c0", "exclusion"),
            BadSetEntry(j, -n - 5.5, "cstar-zh", "exclusion"),
            BadSetEntry(j, n + 5.5, "c0-zv", "exclusion"),
            BadSetEntry(j, n + 1.5, "c0-zv", "exclusion"),
            BadSetEntry(j, n + 5.5, "cstar", "exclusion"),
            BadSetEntry(j, -float(p.N_prime), "cstar", "exclusion"),
        ]
        if j > 1:
            entries.append(BadSetEntry(j, None, "inherited-nonflat", "inherited"))
    return BadSetCatalog(tuple(system.levels), tuple(entries))


@dataclass(frozen=True)
class StallClassification:
    """Nearest catalogued bad set for a stalled/exhausted event."""

    tag: str
    kind: str
    level: int
    plane: float | None
    set_distance: float
    plane_distance: float


_UNCLASSIFIED = StallClassification("unclassified", "none", 0, None, math.inf, math.inf)


def classify_stall(
    event: TrajectoryEvent, catalog: BadSetCatalog
) -> StallClassification:
    """Match a stall (or budget-exhaustion) event to a catalogued bad set.

    Entries are ranked by the fiber's distance to the planar set, with
    distance to the entry's plane as tie-break; no set within
    CLASSIFY_POINT_GATE yields the "unclassified" tag.
    """
    if event.kind not in ("stall", "budget-exhausted"):
        raise ValueError(f"cannot classify event of kind {event.kind!r}")
    x, v = event.position.x, event.position.fiber
    best = _UNCLASSIFIED
    for entry in catalog.entries:
        if entry.plane is None:
            continue
        d_set = catalog.set_distance(entry, v)
        if d_set > CLASSIFY_POINT_GATE:
            continue
        d_plane = abs(x - entry.plane)
        if (d_set, d_plane) < (best.set_distance, best.plane_distance):
            best = StallClassification(
                entry.tag, entry.kind, entry.level, entry.plane, d_set, d_plane
            )
    return best


# --- flatness ----------------------------------------------------------------


@dataclass(frozen=True)
class FlatnessResult:
    """Outcome of the two-sided transit test at one point.

    `failure` is None when flat, else "stall:<tag>" (classified stall),
    "budget" (ran out of time or jumps), or "fiber-mismatch" (both
    boundary planes were reached but with different fibers).
    """

    flat: bool
    fiber: Fiber | None
    failure: str | None


def _reach_display_plane(system, sigma, plane, budget):
    direction = "forward" if sigma.x < plane else "backward"
    return advance_to_plane(system, sigma, plane, direction, budget)


def _ladder_label(events: list[TrajectoryEvent], system: DisplayedSystem) -> str | None:
    """Trap-set tag for a budget exhaustion inside the return ladder.

    An orbit that burned its budget on repeated return loops accumulates
    on a catalogued cylinder set: forward loops creep onto C0 u Z_V,
    backward loops onto C* u Z_H.  Uses the last loop jump's level.
    """
    loops = [
        e
        for e in events
        if e.kind == "jump" and e.detail.get("rule") == "loop-return"
    ]
    if len(loops) < 2:
        return None
    last = loops[-1]
    p = system.level(last.detail["level"])
    v = events[-1].position.fiber
    if last.detail.get("reversed"):
        d = min(p.disks.dist_cstar(v), p.psi.axis_h_dist(v))
        tag = "cstar-zh"
    else:
        d = min(p.disks.dist_c0(v), p.psi.axis_v_dist(v))
        tag = "c0-zv"
    return tag if d <= CLASSIFY_LADDER_GATE else None


def _failure_label(outcome, system, catalog) -> str:
    """Fine-grained label for a failed plane hunt (report vocabulary)."""
    if not outcome.events:
        return "budget:unclassified"
    last = outcome.events[-1]
    if last.kind == "stall":
        return f"stall:{classify_stall(last, catalog).tag}"
    tag = _ladder_label(outcome.events, system)
    if tag is None:
        tag = classify_stall(last, catalog).tag
    return f"budget:{tag}"


def _flat_probe(system, sigma, budget, catalog):
    """Shared core of is_flat and flat_fraction_report."""
    n = float(system.N)
    back = _reach_display_plane(system, sigma, -n, budget)
    if back.status != "hit":
        label = _failure_label(back, system, catalog)
        coarse = label if label.startswith("stall:") else "budget"
        return FlatnessResult(False, None, coarse), label
    fwd = _reach_display_plane(system, sigma, n, budget)
    if fwd.status != "hit":
        label = _failure_label(fwd, system, catalog)
        coarse = label if label.startswith("stall:") else "budget"
        return FlatnessResult(False, None, coarse), label
    if back.point.fiber.dist(fwd.point.fiber) > POINT_MATCH_TOL:
        return FlatnessResult(False, None, "fiber-mismatch"), "fiber-mismatch"
    return FlatnessResult(True, back.point.fiber, None), None


def is_flat(
    system: DisplayedSystem, sigma: SpacePoint, budget: FlowBudget | None = None
) -> FlatnessResult:
    """Does sigma's orbit cross both display planes with one fiber?

    Advances to x = -N and x = +N (N the system radius), in whichever
    time direction each plane lies, and compares the two hit fibers.
    """
    budget = budget or DEFAULT_BUDGET
    return _flat_probe(system, sigma, budget, bad_set_catalog(system))[0]


@dataclass(frozen=True)
class FlatFractionReport:
    """Monte-Carlo flatness census over the sampling box."""

    n: int
    flat: int
    failures: dict[str, int] = field(default_factory=dict)

    @property
    def fraction(self) -> float:
        return self.flat / self.n if self.n else 1.0

    @property
    def classified_fraction(self) -> float:
        """Share of non-flat outcomes matched to a catalogued bad set."""
        bad = self.n - self.flat
        if bad == 0:
            return 1.0
        stray = sum(
            c
            for label, c in self.failures.items()
            if label.endswith("unclassified") or label == "fiber-mismatch"
        )
        return (bad - stray) / bad

    def to_dict(self) -> dict:
        return {
            "n": self.n,
            "flat": self.flat,
            "fraction": self.fraction,
            "classified-fraction": self.classified_fraction,
            "failures": dict(sorted(self.failures.items())),
        }


def _sample_box(system, count, rng, budget=None):
    """Uniform rejection samples from the box (-N,N) x [-3,3]^2 in M."""
    n = float(system.N)
    out: list[SpacePoint] = []
    while len(out) < count:
        sigma = SpacePoint(
            rng.uniform(-n, n), Fiber(rng.uniform(-3, 3), rng.uniform(-3, 3))
        )
        try:
            if locate(system, sigma) is not None:
                out.append(sigma)
        except AmbiguousMembershipError:
            continue
    return out


def flat_fraction_report(
    system: DisplayedSystem,
    n: int,
    budget: FlowBudget | None = None,
    seed: int = 0,
) -> FlatFractionReport:
    """Flatness census over n uniform samples in the action box."""
    if n < 1:
        raise ValueError("n must be >= 1")
    budget = budget or DEFAULT_BUDGET
    rng = np.random.default_rng(seed)
    catalog = bad_set_catalog(system)
    flat = 0
    failures: dict[str, int] = {}
    for sigma in _sample_box(system, n, rng):
        result, label = _flat_probe(system, sigma, budget, catalog)
        if result.flat:
            flat += 1
        else:
            failures[label] = failures.get(label, 0) + 1
    return FlatFractionReport(n, flat, failures)


def flat_fraction(
    system: DisplayedSystem,
    n: int,
    budget: FlowBudget | None = None,
    seed: int = 0,
) -> float:
    """Fraction of n uniform box samples that are flat under the budget."""
    return flat_fraction_report(system, n, budget, seed).fraction


# --- jet order at the periodic point ----------------------------------------


def periodic_base_point(
    system: DisplayedSystem, level: int = -1, budget: FlowBudget | None = None
) -> SpacePoint:
    """The marked periodic point: half a unit past (-N-6, w0) on level."""
    p = system.levels[level]
    r = flow(system, SpacePoint(-float(p.N) - 6.0, p.w0), 0.5, budget)
    if r.status != "ok":
        raise VerifyError(f"flow from the marked edge failed: {r.status}")
    return r.point


def _fiber_directions(count: int, seed: int) -> list[Fiber]:
    rng = np.random.default_rng(seed)
    start = rng.uniform(0.0, 2.0 * math.pi)
    return [
        Fiber(math.cos(start + 2.0 * math.pi * j / count),
              math.sin(start + 2.0 * math.pi * j / count))
        for j in range(count)
    ]


@dataclass(frozen=True)
class JetOrderResult:
    """Log-log tangency order of the time-T map at a periodic point."""

    slope: float
    k: int
    T: int
    period_residual: float
    deltas: tuple[float, ...]
    errors: tuple[tuple[float, ...], ...]  # [delta][direction]
    used_points: int

    def to_dict(self) -> dict:
        return {
            "slope": self.slope,
            "k": self.k,
            "T": self.T,
            "period-residual": self.period_residual,
            "deltas": list(self.deltas),
            "max-error": max((max(row) for row in self.errors), default=0.0),
            "used-points": self.used_points,
        }


def jet_order(
    system: DisplayedSystem,
    base: SpacePoint,
    T: int,
    k: int,
    deltas: Sequence[float] | None = None,
    directions: Sequence[Fiber] | None = None,
    budget: FlowBudget | None = None,
    seed: int = 0,
) -> JetOrderResult:
    """Measure how fast ||Phi_T(base + du) - (base + du)|| shrinks with d.

    The base must be numerically T-periodic.  Perturbations are drawn in
    the fiber plane of the cell containing base (its chart directions);
    a perturbed point that falls outside the glued space is rotated to a
    fresh direction.  Returns the pooled least-squares slope of
    log-error against log-delta, ignoring residuals below the noise
    floor; a slope of +inf means every residual sat below the floor.
    """
    budget = budget or DEFAULT_BUDGET
    r0 = flow(system, base, float(T), budget)
    residual = r0.point.dist(base)
    if r0.status != "ok" or residual > POINT_MATCH_TOL:
        raise VerifyError(
            f"base point is not T-periodic: status={r0.status}, "
            f"|Phi_T(base) - base| = {residual:.3e}"
        )
    if deltas is None:
        deltas = np.geomspace(1e-3, 1e-1, 8)
    deltas = tuple(float(d) for d in deltas)
    dirs = list(directions) if directions is not None else _fiber_directions(6, seed)

    errors: list[tuple[float, ...]] = []
    for d in deltas:
        row = []
        for u in dirs:
            probe = _perturbed_point(system, base, d, u)
            r = flow(system, probe, float(T), budget)
            if r.status != "ok":
                raise VerifyError(
                    f"perturbed flow failed at delta={d:g}: {r.status}"
                )
            row.append(r.point.dist(probe))
        errors.append(tuple(row))

    xs, ys = [], []
    for d, row in zip(deltas, errors):
        for err in row:
            if err > JET_NOISE_FLOOR:
                xs.append(math.log(d))
                ys.append(math.log(err))
    if len(xs) < 2:
        slope = math.inf
    else:
        slope = float(np.polyfit(xs, ys, 1)[0])
    return JetOrderResult(
        slope, k, T, residual, deltas, tuple(errors), len(xs)
    )


def _perturbed_point(system, base, delta, u, tries: int = 32) -> SpacePoint:
    """base + delta*u in the fiber chart, rotated until inside M."""
    angle = math.atan2(u.z, u.y)
    for j in range(tries):
        a = angle + 0.61803398875 * j
        probe = SpacePoint(
            base.x,
            Fiber(base.y + delta * math.cos(a), base.z + delta * math.sin(a)),
        )
        try:
            if locate(system, probe) is not None:
                return probe
        except AmbiguousMembershipError:
            continue
    raise VerifyError(f"no admissible perturbation of {base} at delta={delta:g}")


def psi_jet_slope(
    psi: PsiMap,
    deltas: Sequence[float] | None = None,
    n_directions: int = 6,
    seed: int = 0,
) -> float:
    """Planar tangency order of the twist: slope of |psi(v) - v| vs |v - w0|.

    Uses the cancellation-free displacement, so the fit stays clean even
    where the displacement underflows toward 1e-300.
    """
    if deltas is None:
        deltas = np.geomspace(1e-3, 1e-1, 9)
    xs, ys = [], []
    for d in deltas:
        for u in _fiber_directions(n_directions, seed):
            v = Fiber(psi.w0.y + d * u.y, psi.w0.z + d * u.z)
            disp = psi_displacement(psi, v)
            err = math.hypot(disp.y, disp.z)
            if err > 0.0:
                xs.append(math.log(d))
                ys.append(math.log(err))
    return float(np.polyfit(xs, ys, 1)[0])


# --- sampled return identities ------------------------------------------------


@dataclass(frozen=True)
class CheckReport:
    """Uniform result shape for the sampled checks."""

    name: str
    checked: int
    violations: list[dict]
    stats: dict = field(default_factory=dict)

    @property
    def ok(self) -> bool:
        return not self.violations

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "ok": self.ok,
            "checked": self.checked,
            "violations": self.violations,
            "stats": self.stats,
        }


def sample_window(params: LevelParams, count: int, rng) -> list[Fiber]:
    """Uniform samples from the pattern window W around the marked fiber."""
    out: list[Fiber] = []
    r = params.W_radius
    while len(out) < count:
        v = Fiber(
            params.w0.y + rng.uniform(-r, r), params.w0.z + rng.uniform(-r, r)
        )
        if v.dist(params.w0) <= 0.999 * r and params.w_contains(v):
            out.append(v)
    return out


def check_claim_13(
    system_inner: DisplayedSystem,
    params: LevelParams,
    n_samples: int,
    budget: FlowBudget | None = None,
    seed: int = 0,
) -> CheckReport:
    """Core transit fixes window fibers: (-N, w) reaches (N, w) exactly."""
    rng = np.random.default_rng(seed)
    n = float(params.N)
    worst = 0.0
    violations: list[dict] = []
    for w in sample_window(params, n_samples, rng):
        out = advance_to_plane(
            system_inner, SpacePoint(-n, w), n, "forward", budget
        )
        if out.status != "hit":
            violations.append({"w": [w.y, w.z], "status": out.status})
            continue
        err = out.point.dist(SpacePoint(n, w))
        worst = max(worst, err)
        if err > POINT_MATCH_TOL:
            violations.append({"w": [w.y, w.z], "endpoint-error": err})
    return CheckReport(
        "core-transit-window", n_samples, violations, {"max-endpoint-error": worst}
    )


def check_claim_14(
    system: DisplayedSystem,
    n_samples: int,
    budget: FlowBudget | None = None,
    seed: int = 0,
    level: int = -1,
) -> CheckReport:
    """Full return cycle: time Lambda(w) from (-N-6, w) lands on (-N-6, psi w).

    The cycle's endpoint is exactly the return seam, where a one-ulp
    clock mismatch leaves the point on the far side of the gluing, so
    both sides are advanced half a unit into the next cell (the flow
    property makes the shifted identity equivalent) before comparing.
    """
    idx = range(len(system.levels))[level]
    params = system.levels[idx]
    inner = system.subsystem(idx)
    rng = np.random.default_rng(seed)
    edge = -float(params.N) - 6.0
    shift = 0.5
    worst = 0.0
    violations: list[dict] = []
    for w in sample_window(params, n_samples, rng):
        lam = total_dwell(inner, params, w, budget or DEFAULT_BUDGET)
        r = flow(system, SpacePoint(edge, w), lam + shift, budget)
        ref = flow(system, SpacePoint(edge, psi_at(params.psi, w)), shift, budget)
        if r.status != "ok" or ref.status != "ok":
            violations.append(
                {"w": [w.y, w.z], "status": f"{r.status}/{ref.status}"}
            )
            continue
        err = r.point.dist(ref.point)
        worst = max(worst, err)
        if err > POINT_MATCH_TOL:
            violations.append({"w": [w.y, w.z], "cycle-error": err})
    return CheckReport(
        "return-cycle-window", n_samples, violations, {"max-cycle-error": worst}
    )


# --- itineraries ---------------------------------------------------------------


def _passage_records(sigma0: SpacePoint, events) -> list[tuple[float, Fiber]]:
    """Ordered (x, fiber) points witnessed along a recorded run."""
    records = [(sigma0.x, sigma0.fiber)]
    for e in events:
        if e.kind == "jump":
            src = e.detail["source"]
            records.append((src.x, src.fiber))
            records.append((e.position.x, e.position.fiber))
        elif e.kind in ("plane-hit", "segment"):
            records.append((e.position.x, e.position.fiber))
    return records


def _first_missing(records, expected, fiber_tol=POINT_MATCH_TOL):
    """First expected waypoint not found in order, or None."""
    i = 0
    for wx, wv in expected:
        while i < len(records):
            x, v = records[i]
            i += 1
            if abs(x - wx) <= _WAYPOINT_X_TOL and v.dist(wv) <= fiber_tol:
                break
        else:
            return (wx, wv)
    return None


def _ladder_fibers(psi: PsiMap, v1: Fiber, m: int) -> list[Fiber]:
    return [psi_iterate(psi, v1, j) for j in range(m + 1)]  # [v1, psi v1, ...]


def _expected_waypoints(p: LevelParams, regime: str, v1: Fiber):
    """The claim-specific waypoint list for a top-level entry fiber."""
    n = float(p.N)
    npr = float(p.N_prime)
    if regime == "outside":
        return [
            (-n - 9.0, v1),
            (-n - 5.0, v1),
            (-n + 0.5, v1),
            (n - 0.5, v1),
            (n + 1.0, v1),
            (n + 9.0, v1),
            (npr, v1),
        ]
    if regime == "image":
        u = psi_inverse_at(p.psi, v1)
        return [
            (-n - 9.0, v1),
            (-n - 7.0, v1),
            (n + 3.5, u),
            (n + 7.0, v1),
            (n + 9.0, v1),
            (npr, v1),
        ]
    if regime == "base":
        m = escape_count(p.psi, v1, "base", "forward")
        ladder = _ladder_fibers(p.psi, v1, m)
        expected = [
            (-n - 9.0, v1),
            (-n - 5.0, v1),
            (-n + 0.5, v1),
            (n - 0.5, v1),
            (n + 1.5, v1),
        ]
        for j in range(1, m + 1):
            expected += [(-n - 6.0, ladder[j]), (n + 1.5, ladder[j])]
        expected += [(n + 3.5, ladder[m]), (n + 5.5, ladder[m]), (n + 6.0, ladder[m])]
        for j in range(m - 1, -1, -1):
            expected += [(n + 5.5, ladder[j]), (n + 6.0, ladder[j])]
        expected += [(n + 7.5, v1), (n + 9.0, v1), (npr, v1)]
        return expected
    raise ValueError(f"unknown regime {regime!r}")


_ITINERARY_BUDGET = FlowBudget(max_time=1e7, max_jumps=100_000)


def _sample_regime(p: LevelParams, regime: str, rng, max_ladder: int = 40) -> Fiber:
    """A regime fiber clear of the critical bands and short-laddered.

    `max_ladder` is the starting cap on base-regime ladder length.  A
    twist of high tangency order escapes the base disk slowly (the
    shortest ladders grow with the order), so when a pass finds nothing
    under the cap, the cap quadruples and sampling retries, up to 20480.
    """
    disks, psi = p.disks, p.psi
    cap = max_ladder
    while cap <= 20_480:
        for _ in range(10_000):
            ang = rng.uniform(0.0, 2.0 * math.pi)
            if regime == "outside":
                r = rng.uniform(1.5, 2.6)
                v = Fiber(p.w0.y + r * math.cos(ang), p.w0.z + r * math.sin(ang))
                if disks.exterior_b0(v) and disks.exterior_bstar(v):
                    return v
                continue
            if regime == "image":
                r = rng.uniform(0.1, 0.9)
                u = Fiber(p.w0.y + r * math.cos(ang), p.w0.z + r * math.sin(ang))
                v = psi_at(psi, u)
                if disks.interior_bstar(v):
                    return v
                continue
            # Base disk minus its image.  The regime hugs the critical
            # circle from inside ever more tightly as the twist order
            # grows (empty below r=0.85 by order 4), and near-circle
            # fibers ride the fast hyperbolas, so the whole radial range
            # stays in play and the ladder cap prunes the slow tail.
            r = rng.uniform(0.1, 0.995)
            v = Fiber(p.w0.y + r * math.cos(ang), p.w0.z + r * math.sin(ang))
            if not (disks.interior_b0(v) and disks.exterior_bstar(v)):
                continue
            try:
                m = escape_count(psi, v, "base", "forward")
            except (AxisEscapeError, EscapeCapError):
                continue
            if m > cap:
                continue
            # every ladder iterate must clear both critical bands
            if all(
                min(abs(disks.zeta0(u)), abs(disks.zeta_star(u))) > 1e-6
                for u in _ladder_fibers(psi, v, m)[1:]
            ):
                return v
        cap *= 4
    raise VerifyError(f"could not sample a {regime!r}-regime fiber")


def check_itineraries(
    system: DisplayedSystem,
    n_samples: int,
    budget: FlowBudget | None = None,
    seed: int = 0,
) -> CheckReport:
    """Replay the three-regime waypoint lists at the top level.

    Draws n_samples fibers per regime, enters at (-N', v1), and asserts
    the claim-specific waypoints occur in order with the terminal fiber
    back at v1.

    The default budget is far larger than the generic flow default:
    ladder orbits are finite but long (a high-order twist escapes the
    base disk slowly), and a fiber whose iterates pass near a critical
    circle crawls through the wall strips at time ~ 1/zeta per crossing.
    The budget exists to catch runaways, not to clip slow correct orbits;
    pass one explicitly to exercise exhaustion behaviour.
    """
    budget = budget or _ITINERARY_BUDGET
    p = system.levels[-1]
    npr = float(p.N_prime)
    rng = np.random.default_rng(seed)
    violations: list[dict] = []
    worst_terminal = 0.0
    longest = 0
    for regime in ("outside", "image", "base"):
        for _ in range(n_samples):
            v1 = _sample_regime(p, regime, rng)
            expected = _expected_waypoints(p, regime, v1)
            longest = max(longest, len(expected))
            start = SpacePoint(-npr, v1)
            out = advance_to_plane(
                system, start, npr, "forward", budget, record_planes=True
            )
            entry = {"regime": regime, "v1": [v1.y, v1.z]}
            if out.status != "hit":
                violations.append({**entry, "status": out.status})
                continue
            missing = _first_missing(_passage_records(start, out.events), expected)
            if missing is not None:
                violations.append(
                    {**entry, "missing-x": missing[0],
                     "missing-fiber": [missing[1].y, missing[1].z]}
                )
                continue
            err = out.point.fiber.dist(v1)
            worst_terminal = max(worst_terminal, err)
            if err > POINT_MATCH_TOL:
                violations.append({**entry, "terminal-fiber-error": err})
    return CheckReport(
        "itineraries",
        3 * n_samples,
        violations,
        {"max-terminal-fiber-error": worst_terminal, "longest-waypoint-list": longest},
    )


# --- crossing uniqueness -------------------------------------------------------


def count_plane_crossings(
    start: SpacePoint, events, plane: float
) -> list[Fiber]:
    """Fibers at which the recorded run crosses the given x-plane.

    Continuous motion (segments, plane hits, stalls) is scanned for
    intervals covering the plane; jumps teleport, so they only reset the
    position without crossing anything in between.
    """
    fibers: list[Fiber] = []
    prev = start.x
    for e in events:
        x1 = e.position.x
        if e.kind == "jump":
            prev = x1
            continue
        if e.kind in ("segment", "plane-hit", "stall", "budget-exhausted"):
            lo, hi = min(prev, x1), max(prev, x1)
            if lo < plane < hi or (plane == x1 and x1 != prev):
                fibers.append(e.position.fiber)
            prev = x1
    return fibers


def _distinct_fibers(fibers: list[Fiber]) -> list[Fiber]:
    reps: list[Fiber] = []
    for f in fibers:
        if all(f.dist(r) > DISTINCT_FIBER_TOL for r in reps):
            reps.append(f)
    return reps


def check_crossing_uniqueness(
    system: DisplayedSystem,
    n_samples: int,
    budget: FlowBudget | None = None,
    seed: int = 0,
) -> CheckReport:
    """Each sampled orbit meets each display plane at most once."""
    budget = budget or DEFAULT_BUDGET
    rng = np.random.default_rng(seed)
    planes = (-float(system.N), float(system.N))
    violations: list[dict] = []
    for sigma in _sample_box(system, n_samples, rng):
        fwd = flow(system, sigma, budget.max_time, budget)
        bwd = flow(system, sigma, -budget.max_time, budget)
        for plane in planes:
            hits = count_plane_crossings(sigma, fwd.events, plane)
            hits += count_plane_crossings(sigma, bwd.events, plane)
            if sigma.x == plane:
                hits.append(sigma.fiber)
            distinct = _distinct_fibers(hits)
            if len(distinct) > 1:
                violations.append(
                    {
                        "sigma": [sigma.x, sigma.y, sigma.z],
                        "plane": plane,
                        "hits": [[f.y, f.z] for f in distinct],
                    }
                )
    return CheckReport("crossing-uniqueness", n_samples, violations)


# --- confinement ----------------------------------------------------------------


@dataclass(frozen=True)
class ConfinementReport:
    """Extent of a periodic orbit against the display bound."""

    ok: bool
    max_abs_x: float
    bound: float
    period_residual: float

    def to_dict(self) -> dict:
        return {
            "ok": self.ok,
            "max-abs-x": self.max_abs_x,
            "bound": self.bound,
            "period-residual": self.period_residual,
        }


def check_confinement(
    system: DisplayedSystem,
    sigma: SpacePoint,
    T: int,
    budget: FlowBudget | None = None,
) -> ConfinementReport:
    """A T-periodic orbit must stay strictly inside |x| < N.

    Raises VerifyError when sigma is not numerically T-periodic (the
    check is meaningless off a closed orbit).
    """
    r = flow(system, sigma, float(T), budget, record_planes=True)
    residual = r.point.dist(sigma)
    if r.status != "ok" or residual > POINT_MATCH_TOL:
        raise VerifyError(
            f"point is not {T}-periodic: status={r.status}, residual={residual:.3e}"
        )
    xs = [abs(sigma.x)]
    for e in r.events:
        xs.append(abs(e.position.x))
        if e.kind == "jump":
            xs.append(abs(e.detail["source"].x))
    peak = max(xs)
    bound = float(system.N)
    return ConfinementReport(peak < bound, peak, bound, residual)
