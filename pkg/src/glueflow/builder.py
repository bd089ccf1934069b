"""Extension step: grow a displayed system by one glued outer level.

Given a system D and a flat seed point sigma0, the builder

* recovers the seed's fiber w0 by flowing to both boundary planes,
* times the three legs of the return trip (inner transit, the two slow
  strips) at w0, picks the integer period T just above T0 + 2,
* sizes the pattern window W around w0 (halving search),
* extracts the Taylor jet of the dwell mismatch T - lambda1 - lambda2
  - lambda3 - 2 over W and damps it into a globally (1,4)-valued dwell
  function, and
* assembles the new LevelParams and returns the extended system.

`build_report` re-derives every scalar from a finished level so the
construction driver can emit a JSON audit trail without the builder
having to thread state around.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .engine import (
    DEFAULT_BUDGET,
    FlowBudget,
    NonIntegrableError,
    advance_to_plane,
    strip_travel_time,
)
from .jets import JetMatchedFunction, build_lambda0, taylor_poly
from .planar import AxisEscapeError, DiskPair, EscapeCapError, Fiber, PsiMap
from .regions import DisplayedSystem, LevelParams, SpacePoint

__all__ = [
    "BuildError",
    "FIBER_MATCH_TOL",
    "compute_w0",
    "lambda1",
    "lambda2",
    "lambda3",
    "find_pattern_radius",
    "extend",
    "BuildReport",
    "total_dwell",
    "build_report",
]

FIBER_MATCH_TOL = 1e-6
W_RADIUS_START = 0.25
W_RADIUS_FLOOR = 2.0**-20
# a ring point this close to a critical circle sits inside the slow band
# where strip crossings take > 1e6 time units, so the window is useless
_CIRCLE_CLEARANCE = 1e-3


class BuildError(RuntimeError):
    """Extension step failed: non-flat seed, stall, or exhausted budget."""


def compute_w0(
    system: DisplayedSystem,
    sigma0: SpacePoint,
    budget: FlowBudget | None = None,
) -> Fiber:
    """Fiber of the seed's orbit on the two boundary planes x = -+N.

    Advances backward to x = -N and forward to x = +N; a flat seed reaches
    both with the same fiber (within FIBER_MATCH_TOL).  The backward-plane
    fiber is returned.

    Raises
    ------
    BuildError
        If either advance stalls or exhausts the budget, or the two plane
        fibers disagree (the seed is not flat).
    """
    budget = budget or DEFAULT_BUDGET
    n = float(system.N)
    back = advance_to_plane(system, sigma0, -n, "backward", budget)
    if not back.hit:
        raise BuildError(
            f"backward advance to x={-n} ended with {back.status!r}"
        )
    fwd = advance_to_plane(system, sigma0, n, "forward", budget)
    if not fwd.hit:
        raise BuildError(f"forward advance to x={n} ended with {fwd.status!r}")
    if back.point.fiber.dist(fwd.point.fiber) > FIBER_MATCH_TOL:
        raise BuildError(
            f"seed not flat: boundary fibers {back.point.v} and "
            f"{fwd.point.v} differ by {back.point.fiber.dist(fwd.point.fiber):.3e}"
        )
    return back.point.fiber


def _transit(
    system: DisplayedSystem, w: Fiber, budget: FlowBudget
) -> tuple[float, Fiber]:
    """Elapsed time and end fiber of the crossing (-N, w) -> {x = N}."""
    n = float(system.N)
    out = advance_to_plane(system, SpacePoint(-n, w), n, "forward", budget)
    if not out.hit:
        raise BuildError(
            f"inner transit from (-{n}, {w}) ended with {out.status!r}"
        )
    return out.elapsed, out.point.fiber


def lambda1(
    system: DisplayedSystem,
    w: Fiber,
    budget: FlowBudget | None = None,
) -> float:
    """Time from (-N, w) to the plane x = N through the inner system.

    Raises BuildError when the crossing stalls, runs out of budget, or
    lands on a different fiber (w outside the flat window).
    """
    elapsed, v_end = _transit(system, w, budget or DEFAULT_BUDGET)
    if v_end.dist(w) > FIBER_MATCH_TOL:
        raise BuildError(
            f"inner transit of {w} returned fiber {v_end} "
            f"({v_end.dist(w):.3e} off); fiber outside the flat window"
        )
    return elapsed


def lambda2(params: LevelParams, w: Fiber) -> float:
    """Crossing time of the left strip segment [-N-6, -N-5] on fiber w."""
    n = params.N
    return strip_travel_time(params, "left-strip", -n - 6.0, -n - 5.0, w)


def lambda3(params: LevelParams, w: Fiber) -> float:
    """Crossing time of the right strip segment [N+1, N+2] on fiber w."""
    n = params.N
    return strip_travel_time(params, "right-strip", n + 1.0, n + 2.0, w)


def _proto_params(
    n: int, w0: Fiber, k: int, psi: PsiMap, disks: DiskPair
) -> LevelParams:
    """Throwaway params carrying only what the strip speeds need.

    The dwell function and period are not known yet while the new level's
    travel times are being measured, so stand-ins go in their slots.
    """
    return LevelParams(
        N=n,
        w0=w0,
        k=k,
        T=1,
        T0=0.0,
        lambda0=JetMatchedFunction(w0=w0, k=k, coeffs=(), a0=1.0, offset=2.0),
        psi=psi,
        disks=disks,
        W_radius=W_RADIUS_START,
    )


def find_pattern_radius(
    system: DisplayedSystem,
    proto: LevelParams,
    budget: FlowBudget | None = None,
) -> float:
    """Radius of the disk around w0 accepted as the pattern window W.

    Starts at 0.25 and halves until
      * the disk clears both critical circles (center distance beats the
        radius by _CIRCLE_CLEARANCE, and every ring point individually
        clears by the same margin), and
      * 16 ring fibers survive the inner transit back onto themselves and
        both strip crossings stay integrable.

    Raises BuildError below the floor 2^-20 (w0 essentially on a circle).
    """
    budget = budget or DEFAULT_BUDGET
    w0, disks = proto.w0, proto.disks
    r = W_RADIUS_START
    while r >= W_RADIUS_FLOOR:
        if _radius_ok(system, proto, r, budget):
            return r
        r *= 0.5
    raise BuildError(
        f"no pattern radius above {W_RADIUS_FLOOR} around {w0}: "
        f"circle distances {disks.dist_c0(w0):.3e} / {disks.dist_cstar(w0):.3e}"
    )


def _radius_ok(
    system: DisplayedSystem, proto: LevelParams, r: float, budget: FlowBudget
) -> bool:
    disks = proto.disks
    w0 = proto.w0
    if disks.dist_c0(w0) <= r + _CIRCLE_CLEARANCE:
        return False
    if disks.dist_cstar(w0) <= r + _CIRCLE_CLEARANCE:
        return False
    for i in range(16):
        t = 2.0 * math.pi * i / 16.0
        w = Fiber(w0.y + r * math.cos(t), w0.z + r * math.sin(t))
        if disks.dist_c0(w) <= _CIRCLE_CLEARANCE:
            return False
        if disks.dist_cstar(w) <= _CIRCLE_CLEARANCE:
            return False
        try:
            lambda1(system, w, budget)
            lambda2(proto, w)
            lambda3(proto, w)
        except (BuildError, NonIntegrableError, AxisEscapeError, EscapeCapError):
            return False
    return True


def extend(
    system: DisplayedSystem,
    sigma0: SpacePoint,
    k: int,
    budget: FlowBudget | None = None,
) -> DisplayedSystem:
    """Append one level around `system`, marked at sigma0's fiber.

    Steps: recover w0 from the seed; build the order-k planar twist and its
    disk pair; time the three legs at w0 and fix the integer period T
    (smallest integer in [T0+2, T0+3]); size the pattern window; jet-match
    the dwell mismatch and damp it into the dwell function; assemble the
    new level.  The extended system's radius is N + 10.
    """
    if k < 1:
        raise ValueError(f"order k must be >= 1, got {k}")
    budget = budget or DEFAULT_BUDGET
    w0 = compute_w0(system, sigma0, budget)
    psi = PsiMap(k=k, w0=w0)
    disks = DiskPair(psi=psi)
    n = system.N
    proto = _proto_params(n, w0, k, psi, disks)

    t0 = lambda1(system, w0, budget) + lambda2(proto, w0) + lambda3(proto, w0)
    t_period = math.ceil(t0 + 2.0)  # smallest integer in [T0+2, T0+3]

    w_radius = find_pattern_radius(system, proto, budget)
    scale = min(1.0, w_radius / W_RADIUS_START)

    def dwell_gap(w: Fiber) -> float:
        lam = (
            t_period
            - lambda1(system, w, budget)
            - lambda2(proto, w)
            - lambda3(proto, w)
        )
        return lam - 2.0

    coeffs = taylor_poly(
        dwell_gap,
        w0,
        k,
        base_step=1e-2 * scale,
        probe_radii=[0.8 * w_radius * g for g in (0.1, 0.2, 0.4, 0.7, 1.0)],
    )
    lam0 = build_lambda0(coeffs, k, w0)
    params = LevelParams(
        N=n,
        w0=w0,
        k=k,
        T=t_period,
        T0=t0,
        lambda0=lam0,
        psi=psi,
        disks=disks,
        W_radius=w_radius,
    )
    return DisplayedSystem(system.levels + (params,))


@dataclass(frozen=True)
class BuildReport:
    """Audit scalars and residuals for one finished level."""

    level: int
    N: int
    N_prime: int
    k: int
    w0: Fiber
    T: int
    T0: float
    W_radius: float
    a0: float
    coeffs: tuple[tuple[int, int, float], ...]
    lambda1_w0: float
    lambda2_w0: float
    lambda3_w0: float
    period_gap: float
    jet_slope: float
    lambda0_grid_min: float
    lambda0_grid_max: float
    ring_fiber_residual: float

    def to_dict(self) -> dict:
        return {
            "level": self.level,
            "N": self.N,
            "N-prime": self.N_prime,
            "k": self.k,
            "w0": [self.w0.y, self.w0.z],
            "T": self.T,
            "T0": self.T0,
            "W-radius": self.W_radius,
            "a0": self.a0,
            "coeffs": [[ay, az, c] for ay, az, c in self.coeffs],
            "lambda1-w0": self.lambda1_w0,
            "lambda2-w0": self.lambda2_w0,
            "lambda3-w0": self.lambda3_w0,
            "period-gap": self.period_gap,
            "jet-slope": self.jet_slope,
            "lambda0-grid-min": self.lambda0_grid_min,
            "lambda0-grid-max": self.lambda0_grid_max,
            "ring-fiber-residual": self.ring_fiber_residual,
        }


def total_dwell(
    inner: DisplayedSystem,
    params: LevelParams,
    w: Fiber,
    budget: FlowBudget,
) -> float:
    """Lambda(w): dwell function plus the three measured legs."""
    return (
        params.lambda0(w)
        + lambda1(inner, w, budget)
        + lambda2(params, w)
        + lambda3(params, w)
    )


def _jet_slope(
    inner: DisplayedSystem,
    params: LevelParams,
    budget: FlowBudget,
) -> float:
    """Fitted decay order of |Lambda(w0 + delta u) - T| as delta -> 0."""
    scale = min(1.0, params.W_radius / W_RADIUS_START)
    deltas = np.geomspace(4e-3, 5e-2, 6) * scale
    angles = np.linspace(0.0, 2.0 * math.pi, 6, endpoint=False) + 0.31
    logs_d, logs_g = [], []
    for t in angles:
        u = (math.cos(t), math.sin(t))
        for d in deltas:
            w = Fiber(params.w0.y + d * u[0], params.w0.z + d * u[1])
            gap = abs(total_dwell(inner, params, w, budget) - params.T)
            if gap > 1e-12:  # below that the gap is integration noise
                logs_d.append(math.log(d))
                logs_g.append(math.log(gap))
    if len(logs_d) < 4:
        return math.inf  # flat to rounding on every probe
    return float(np.polyfit(logs_d, logs_g, 1)[0])


def build_report(
    system: DisplayedSystem,
    level: int = -1,
    budget: FlowBudget | None = None,
) -> BuildReport:
    """Recompute one level's scalars and validation residuals.

    `level` indexes `system.levels` (negative OK).  Residuals: the period
    gap |Lambda(w0) - T|, the fitted jet slope of the gap around w0, the
    dwell-function range over a radius-10 grid, and the worst fiber drift
    over an 8-point ring transit at the pattern radius.
    """
    budget = budget or DEFAULT_BUDGET
    idx = range(len(system.levels))[level]
    params = system.levels[idx]
    inner = system.subsystem(idx)

    l1 = lambda1(inner, params.w0, budget)
    l2 = lambda2(params, params.w0)
    l3 = lambda3(params, params.w0)
    gap = abs(params.lambda0(params.w0) + l1 + l2 + l3 - params.T)

    side = np.linspace(-10.0, 10.0, 201)
    gy, gz = np.meshgrid(side + params.w0.y, side + params.w0.z)
    vals = params.lambda0.eval_many(gy, gz)

    ring_resid = 0.0
    for i in range(8):
        t = 2.0 * math.pi * i / 8.0
        w = Fiber(
            params.w0.y + params.W_radius * math.cos(t),
            params.w0.z + params.W_radius * math.sin(t),
        )
        _, v_end = _transit(inner, w, budget)
        ring_resid = max(ring_resid, v_end.dist(w))

    return BuildReport(
        level=idx + 1,
        N=params.N,
        N_prime=params.N_prime,
        k=params.k,
        w0=params.w0,
        T=params.T,
        T0=params.T0,
        W_radius=params.W_radius,
        a0=params.lambda0.a0,
        coeffs=params.lambda0.coeffs,
        lambda1_w0=l1,
        lambda2_w0=l2,
        lambda3_w0=l3,
        period_gap=gap,
        jet_slope=_jet_slope(inner, params, budget),
        lambda0_grid_min=float(vals.min()),
        lambda0_grid_max=float(vals.max()),
        ring_fiber_residual=ring_resid,
    )
