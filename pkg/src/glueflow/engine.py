"""Event-driven integration of the glued flow.

Within a cell the fiber is frozen and x obeys the scalar ODE x' = theta(x),
so a segment is fully described by its reciprocal-speed integral: travel
times come from adaptive quadrature of 1/theta, boundary landings are exact
by construction, and only a final partial segment ever needs an ODE solve.
At cell boundaries the seam rules fire (forward as written, backward as
their inverses).  Speeds vanish only on the catalogued plane-times-circle
sets; trajectories heading into one are reported as stalls.
"""

from __future__ import annotations

import csv
import json
import math
import warnings
from dataclasses import dataclass, field

from scipy.integrate import IntegrationWarning, quad

from ._integrate import rk45
from .planar import Fiber, psi_at, psi_inverse_at
from .regions import (
    Cell,
    DisplayedSystem,
    JumpRule,
    LevelParams,
    NotInManifoldError,
    SpacePoint,
    jump_rules,
    locate,
)

__all__ = [
    "FlowBudget",
    "TrajectoryEvent",
    "FlowResult",
    "PlaneOutcome",
    "flow",
    "advance_to_plane",
    "travel_time",
    "orbit_itinerary",
    "diagnostic_planes",
    "itinerary_to_csv",
    "itinerary_to_json",
    "NonIntegrableError",
    "PlaneUnreachableError",
]

_VANISH_EPS = 1e-12  # below this the exit plane is treated as unreachable
_QUAD_EPSREL = 1e-11


class NonIntegrableError(ValueError):
    """Travel time diverges: the fiber sits on a vanishing circle."""


class PlaneUnreachableError(ValueError):
    """The target plane cannot be reached from the start point."""


@dataclass(frozen=True)
class FlowBudget:
    max_time: float = 1e4
    max_jumps: int = 1000
    stall_speed: float = 1e-9

    def __post_init__(self):
        if self.max_time <= 0 or self.max_jumps <= 0 or self.stall_speed <= 0:
            raise ValueError("budget fields must be positive")


DEFAULT_BUDGET = FlowBudget()


@dataclass
class TrajectoryEvent:
    kind: str  # segment | jump | plane-hit | stall | budget-exhausted
    time: float  # signed orbit time of the event
    elapsed: float  # |time|: monotone increasing along the itinerary
    position: SpacePoint
    detail: dict = field(default_factory=dict)


@dataclass
class FlowResult:
    point: SpacePoint
    elapsed: float
    status: str  # ok | stall | budget-exhausted
    direction: int
    events: list[TrajectoryEvent]

    @property
    def ok(self) -> bool:
        return self.status == "ok"


@dataclass
class PlaneOutcome:
    point: SpacePoint | None
    elapsed: float
    status: str  # hit | stall | budget-exhausted
    direction: int
    events: list[TrajectoryEvent]

    @property
    def hit(self) -> bool:
        return self.status == "hit"


# --- per-segment speed profiles --------------------------------------------


class _Profile:
    """theta(x) along one x-slab for a frozen fiber, plus its travel times."""

    __slots__ = ("unit", "theta", "exit_zeta")

    def __init__(self, speed_tag: str, p: LevelParams | None, v: Fiber):
        if speed_tag == "unit":
            self.unit = True
            self.theta = lambda x: 1.0
            self.exit_zeta = lambda x: math.inf
            return
        self.unit = False
        assert p is not None
        if speed_tag == "left-strip":
            zs = p.disks.zeta_star(v)
            c2 = zs * zs

            def theta(x: float) -> float:
                a = p.left_wall_poly(x)
                return -math.expm1(-(a * a + c2))

            self.theta = theta
            self.exit_zeta = lambda x: abs(zs)
        else:
            z0 = p.disks.zeta0(v)
            zs = p.disks.zeta_star(v)
            c0, cs = z0 * z0, zs * zs

            def theta(x: float) -> float:
                b = p.gate_poly(x)
                c = p.right_wall_poly(x)
                return (-math.expm1(-(b * b + c0))) * (-math.expm1(-(c * c + cs)))

            self.theta = theta
            # which circle controls a vanishing at plane x: the four gate
            # planes go with the base circle, the two wall planes with the
            # image circle
            n = p.N

            def exit_zeta(x: float) -> float:
                return abs(z0) if x <= n + 5.0 else abs(zs)

            self.exit_zeta = exit_zeta

    def time(self, a: float, b: float) -> float:
        """Travel time from a to b (a <= b), by quadrature of 1/theta."""
        if a == b:
            return 0.0
        if self.unit:
            return b - a
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", IntegrationWarning)
            val, _ = quad(
                lambda x: 1.0 / self.theta(x),
                a,
                b,
                epsabs=0.0,
                epsrel=_QUAD_EPSREL,
                limit=300,
            )
        return val


def _ode_advance(prof: _Profile, x0: float, duration: float, sign: float) -> float:
    """Endpoint of x' = sign*theta(x) after `duration` (partial segments)."""
    if prof.unit:
        return x0 + sign * duration
    return rk45(
        lambda x: sign * prof.theta(x), x0, duration, rtol=1e-11, atol=1e-13
    )


# --- dispatch ----------------------------------------------------------------


def _rule(system: DisplayedSystem, level: int, rule_id: str) -> JumpRule:
    for r in jump_rules(system.levels[level - 1], level):
        if r.rule_id == rule_id:
            return r
    raise KeyError(rule_id)


def _cell(system: DisplayedSystem, level: int, name: str) -> Cell:
    for c in system.cells():
        if c.level == level and c.name == name:
            return c
    raise KeyError((level, name))


def _inner_right_cell(system: DisplayedSystem, level: int) -> Cell:
    """The cell just left of the inner-exit plane of `level`."""
    return _cell(system, 0, "core") if level == 1 else _cell(
        system, level - 1, "far-right"
    )


class _Stall(Exception):
    pass


def _dispatch(
    system: DisplayedSystem, cell: Cell, v: Fiber, forward: bool
) -> tuple[str, ...]:
    """Action at the cell's exit boundary in the given direction.

    Returns one of
      ("end",)                            free flight, no boundary
      ("continue", next_cell)
      ("jump", rule, reversed, target_x, new_fiber, next_cell)
      ("stall",)
    """
    j = cell.level
    p = cell.params
    depth = system.depth
    band = p.disks.band if p is not None else 0.0

    def zeta0() -> float:
        return p.disks.zeta0(v)

    def zstar() -> float:
        return p.disks.zeta_star(v)

    def jump(rule_id: str, new_v: Fiber, next_name: str, level: int | None = None):
        lvl = j if level is None else level
        rule = _rule(system, lvl, rule_id)
        tx = rule.target_x
        if tx is None:  # dwell edge
            tx = -p.N - p.lambda0(new_v)
        return ("jump", rule, False, tx, new_v, _cell(system, lvl, next_name))

    def jump_rev(rule_id: str, target_x: float, new_v: Fiber, next_cell: Cell):
        rule = _rule(system, j, rule_id)
        return ("jump", rule, True, target_x, new_v, next_cell)

    name = cell.name
    if forward:
        if name == "core":
            return jump("inner-exit-seam", v, "gh-a", level=1) if depth else ("end",)
        if name == "far-left":
            return jump("left-seam", v, "f-left")
        if name == "f-left":
            zs = zstar()
            if zs < -band:
                return jump("left-wall-exit", psi_inverse_at(p.psi, v), "gh-c")
            if zs > band:
                return ("continue", _cell(system, j, "f-mid"))
            return ("stall",)
        if name == "f-mid":
            return ("continue", _cell(system, j, "f-right"))
        if name == "f-right":
            return jump("reentry-seam", v, "reentry")
        if name == "reentry":
            nxt = _cell(system, j - 1, "far-left") if j > 1 else _cell(system, 0, "core")
            return ("continue", nxt)
        if name == "gh-a":
            z = zeta0()
            if z < -band:
                return jump("loop-return", psi_at(p.psi, v), "f-mid")
            if z > band:
                return ("continue", _cell(system, j, "gh-b"))
            return ("stall",)
        if name == "gh-b":
            return ("continue", _cell(system, j, "gh-c"))
        if name == "gh-c":
            z = zeta0()
            if z < -band:
                return jump("right-wall-entry", psi_at(p.psi, v), "gh-f")
            if z > band:
                return ("continue", _cell(system, j, "gh-d"))
            return ("stall",)
        if name == "gh-d":
            return ("continue", _cell(system, j, "gh-e"))
        if name == "gh-e":
            zs = zstar()
            if zs < -band:
                return jump("unwind-step", psi_inverse_at(p.psi, v), "gh-e")
            if zs > band:
                return ("continue", _cell(system, j, "gh-f"))
            return ("stall",)
        if name == "gh-f":
            return ("continue", _cell(system, j, "gh-g"))
        if name == "gh-g":
            return jump("right-seam", v, "far-right")
        if name == "far-right":
            if j == depth:
                return ("end",)
            return jump("inner-exit-seam", v, "gh-a", level=j + 1)
    else:
        if name == "core":
            if not depth:
                return ("end",)
            return ("continue", _cell(system, 1, "reentry"))
        if name == "far-left":
            if j == depth:
                return ("end",)
            return ("continue", _cell(system, j + 1, "reentry"))
        if name == "f-left":
            return jump_rev("left-seam", -p.N - 9.0, v, _cell(system, j, "far-left"))
        if name == "f-mid":
            return ("continue", _cell(system, j, "f-left"))
        if name == "f-right":
            zs = zstar()
            if zs < -band:
                return jump_rev(
                    "loop-return",
                    p.N + 2.0,
                    psi_inverse_at(p.psi, v),
                    _cell(system, j, "gh-a"),
                )
            if zs > band:
                return ("continue", _cell(system, j, "f-mid"))
            return ("stall",)
        if name == "reentry":
            return jump_rev("reentry-seam", -p.N - 5.0, v, _cell(system, j, "f-right"))
        if name == "gh-a":
            return jump_rev(
                "inner-exit-seam", float(p.N), v, _inner_right_cell(system, j)
            )
        if name == "gh-b":
            return ("continue", _cell(system, j, "gh-a"))
        if name == "gh-c":
            z = zeta0()
            if z < -band:
                return jump_rev(
                    "left-wall-exit", -p.N - 7.0, psi_at(p.psi, v), _cell(system, j, "f-mid")
                )
            if z > band:
                return ("continue", _cell(system, j, "gh-b"))
            return ("stall",)
        if name == "gh-d":
            return ("continue", _cell(system, j, "gh-c"))
        if name == "gh-e":
            z = zeta0()
            if z < -band:
                return jump_rev(
                    "unwind-step", p.N + 6.0, psi_at(p.psi, v), _cell(system, j, "gh-f")
                )
            if z > band:
                return ("continue", _cell(system, j, "gh-d"))
            return ("stall",)
        if name == "gh-f":
            return ("continue", _cell(system, j, "gh-e"))
        if name == "gh-g":
            zs = zstar()
            if zs < -band:
                return jump_rev(
                    "right-wall-entry",
                    p.N + 4.0,
                    psi_inverse_at(p.psi, v),
                    _cell(system, j, "gh-c"),
                )
            if zs > band:
                return ("continue", _cell(system, j, "gh-f"))
            return ("stall",)
        if name == "far-right":
            return jump_rev("right-seam", p.N + 8.0, v, _cell(system, j, "gh-g"))
    raise AssertionError(f"unhandled dispatch: {name} forward={forward}")


def _wall_start_action(
    system: DisplayedSystem, cell: Cell, x: float, v: Fiber, forward: bool
):
    """Seam behaviour at kept-wall points whose fiber is inside the open
    image disk: the strip interior excludes such fibers, so the flow either
    jumps or hands off with zero segment length."""
    p = cell.params
    assert p is not None
    j = cell.level
    if cell.name == "f-mid":
        if forward:
            if x == cell.x_lo:  # left wall: crossover to the right strip
                rule = _rule(system, j, "left-wall-exit")
                return ("jump", rule, False, rule.target_x, psi_inverse_at(p.psi, v),
                        _cell(system, j, "gh-c"))
            return ("continue", _cell(system, j, "f-right"))
        if x == cell.x_hi:  # right wall, backward: undo the loop return
            rule = _rule(system, j, "loop-return")
            return ("jump", rule, True, p.N + 2.0, psi_inverse_at(p.psi, v),
                    _cell(system, j, "gh-a"))
        return ("continue", _cell(system, j, "f-left"))
    if cell.name == "gh-f":
        if forward:
            if x == cell.x_lo:  # inner wall: one unwind step
                rule = _rule(system, j, "unwind-step")
                return ("jump", rule, False, rule.target_x, psi_inverse_at(p.psi, v),
                        _cell(system, j, "gh-e"))
            return ("continue", _cell(system, j, "gh-g"))
        if x == cell.x_hi:  # outer wall, backward: undo the wall entry
            rule = _rule(system, j, "right-wall-entry")
            return ("jump", rule, True, p.N + 4.0, psi_inverse_at(p.psi, v),
                    _cell(system, j, "gh-c"))
        return ("continue", _cell(system, j, "gh-e"))
    raise AssertionError(f"wall start in unexpected cell {cell.name}")


# --- diagnostics -------------------------------------------------------------


def diagnostic_planes(system: DisplayedSystem) -> tuple[float, ...]:
    """Half-integer planes recorded by itineraries, per level."""
    out: set[float] = set()
    for p in system.levels:
        n = float(p.N)
        out.update(
            {
                -(n + 0.5),
                -(n - 0.5),
                n - 0.5,
                n + 0.5,
                n + 1.5,
                n + 3.5,
                n + 5.5,
                n + 7.5,
                -n - 5.5,
            }
        )
    return tuple(sorted(out))


def _locus_distance(p: LevelParams, sigma: SpacePoint) -> float:
    """Distance from sigma to the nearest catalogued vanishing set."""
    best = math.inf
    for plane, tag in p.vanishing_sets():
        circ = (
            p.disks.dist_c0(sigma.fiber)
            if tag == "c0"
            else p.disks.dist_cstar(sigma.fiber)
        )
        best = min(best, math.hypot(sigma.x - plane, circ))
    return best


# --- the integrator loop -----------------------------------------------------


class _Run:
    def __init__(
        self,
        system: DisplayedSystem,
        sigma: SpacePoint,
        duration: float,
        budget: FlowBudget,
        forward: bool,
        record_planes: bool,
        target: float | None,
    ):
        self.system = system
        self.budget = budget
        self.forward = forward
        self.sign = 1.0 if forward else -1.0
        self.record_planes = record_planes
        self.target = target
        self.duration = min(duration, budget.max_time)
        self.time_capped = duration > budget.max_time
        self.events: list[TrajectoryEvent] = []
        self.elapsed = 0.0
        self.jumps = 0
        self.x = sigma.x
        self.v = sigma.fiber
        self.planes = diagnostic_planes(system) if record_planes else ()
        cell = locate(system, sigma)
        if cell is None:
            raise NotInManifoldError(f"flow started outside the space: {sigma}")
        self.cell: Cell = cell
        self.outcome: str | None = None  # set on return

    # -- event emission -----------------------------------------------------

    def _emit(self, kind: str, position: SpacePoint, **detail) -> None:
        self.events.append(
            TrajectoryEvent(
                kind=kind,
                time=self.sign * self.elapsed,
                elapsed=self.elapsed,
                position=position,
                detail=detail,
            )
        )

    def _planes_between(self, a: float, b: float) -> list[float]:
        lo, hi = min(a, b), max(a, b)
        found = [q for q in self.planes if lo < q < hi]
        if self.target is not None and lo < self.target < hi:
            found.append(self.target)
        found.sort(reverse=not self.forward)
        return found

    # -- the main loop --------------------------------------------------------

    def run(self) -> None:
        guard = 40 * (self.budget.max_jumps + 13 * self.system.depth + 10)
        for _ in range(guard):
            if self.outcome is not None:
                return
            self._step()
        raise RuntimeError("flow loop failed to terminate within its guard")

    def _finish(self, status: str) -> None:
        self.outcome = status

    def _step(self) -> None:
        rem = self.duration - self.elapsed
        if rem <= 0.0:
            self._spent(SpacePoint(self.x, self.v))
            return
        cell, v, x = self.cell, self.v, self.x
        p = cell.params

        # wall points whose fiber lies in the open image disk never have a
        # strip interior to cross; they dispatch with zero segment length
        if (
            cell.fiber_rule == "strip-bstar"
            and p is not None
            and p.disks.zeta_star(v) < -p.disks.band
        ):
            if x not in (cell.x_lo, cell.x_hi):
                raise AssertionError(f"open-disk fiber inside strip {cell.name}")
            self._apply(_wall_start_action(self.system, cell, x, v, self.forward))
            return

        exit_x = cell.x_hi if self.forward else cell.lo_edge(v)
        prof = _Profile(cell.speed_tag, cell.params, v)

        if x == exit_x and not math.isinf(exit_x):
            # already at the boundary (post-handoff / wall)
            self._apply(_dispatch(self.system, cell, v, self.forward))
            return

        if (
            not math.isinf(exit_x)
            and not prof.unit
            and prof.theta(exit_x) < _VANISH_EPS
        ):
            self._blocked(prof, exit_x, rem)
            return

        # a target plane strictly before the exit?
        if self.target is not None and self._target_inside(x, exit_x):
            ta, tb = (x, self.target) if self.forward else (self.target, x)
            t_target = prof.time(ta, tb)
            if t_target <= rem:
                self._cross_planes(prof, x, self.target, t_target)
                self.elapsed += t_target
                self.x = self.target
                self._emit("plane-hit", SpacePoint(self.target, v), target=True)
                self._finish("hit")
                return

        if math.isinf(exit_x):
            self._partial(prof, rem, exit_x)
            return

        a, b = (x, exit_x) if self.forward else (exit_x, x)
        t_exit = prof.time(a, b)
        if t_exit > rem:
            self._partial(prof, rem, exit_x)
            return

        # full segment to the boundary
        self._cross_planes(prof, x, exit_x, t_exit)
        self.elapsed += t_exit
        self.x = exit_x
        self._emit(
            "segment",
            SpacePoint(exit_x, v),
            cell=cell.name,
            level=cell.level,
            x_from=x,
        )
        if self.target is not None and exit_x == self.target:
            self._emit("plane-hit", SpacePoint(exit_x, v), target=True)
            self._finish("hit")
            return
        action = _dispatch(self.system, cell, v, self.forward)
        if action[0] == "jump" and self.elapsed >= self.duration:
            # the requested time ends exactly at the seam: when the source
            # plane is owned the orbit value there is the plane point itself
            # and the jump belongs to the next instant
            reversed_ = action[2]
            owned = (
                cell.lo_closed and not cell.dynamic_lo
                if reversed_
                else action[1].approach == "at"
            )
            if owned:
                return  # loop top reports the boundary point
        self._apply(action)

    def _target_inside(self, x: float, exit_x: float) -> bool:
        t = self.target
        assert t is not None
        return (x < t < exit_x) if self.forward else (exit_x < t < x)

    def _cross_planes(self, prof: _Profile, x0: float, x1: float, t_seg: float) -> None:
        if not self.record_planes:
            return
        for q in self._planes_between(x0, x1):
            if q == self.target:
                continue  # handled by the caller
            a, b = (x0, q) if self.forward else (q, x0)
            tq = prof.time(a, b)
            if tq <= t_seg:
                self.events.append(
                    TrajectoryEvent(
                        kind="plane-hit",
                        time=self.sign * (self.elapsed + tq),
                        elapsed=self.elapsed + tq,
                        position=SpacePoint(q, self.v),
                        detail={},
                    )
                )

    def _partial(self, prof: _Profile, rem: float, exit_x: float) -> None:
        x_end = _ode_advance(prof, self.x, rem, self.sign)
        if not math.isinf(exit_x):
            x_end = (
                min(x_end, exit_x) if self.forward else max(x_end, exit_x)
            )
        self._cross_planes(prof, self.x, x_end, rem)
        self.elapsed += rem
        pos = SpacePoint(x_end, self.v)
        self._emit(
            "segment", pos, cell=self.cell.name, level=self.cell.level, x_from=self.x
        )
        self.x = x_end
        p = self.cell.params
        if p is not None and not prof.unit:
            # budget ran out creeping toward a vanishing set?
            if (
                prof.theta(x_end) < self.budget.stall_speed
                and _locus_distance(p, pos) < 1e-3
            ):
                self._emit(
                    "stall", pos, cell=self.cell.name,
                    locus_distance=_locus_distance(p, pos),
                )
                self._finish("stall")
                return
        self._spent(pos)

    def _spent(self, pos: SpacePoint) -> None:
        """The requested duration elapsed: ok for flows, exhausted for hunts."""
        if self.time_capped or self.target is not None:
            self._emit("budget-exhausted", pos, reason="max-time")
            self._finish("budget-exhausted")
        else:
            self._finish("ok")

    def _blocked(self, prof: _Profile, exit_x: float, rem: float) -> None:
        """The exit plane carries a vanishing speed for this fiber.

        Locates the boundary of the stall zone (theta == stall_speed) by
        bisection and reports a stall there, unless the time budget or a
        target plane intervenes first.
        """
        x0 = self.x
        stall_speed = self.budget.stall_speed
        if prof.theta(x0) < stall_speed:
            x_stall, t_stall = x0, 0.0
        else:
            a, b = x0, exit_x  # theta(a) >= stall_speed > theta(b)
            for _ in range(200):
                mid = 0.5 * (a + b)
                if mid == a or mid == b:
                    break
                if prof.theta(mid) >= stall_speed:
                    a = mid
                else:
                    b = mid
            x_stall = a
            t_stall = prof.time(min(x0, x_stall), max(x0, x_stall))

        if self.target is not None and (
            (x0 < self.target <= x_stall)
            if self.forward
            else (x_stall <= self.target < x0)
        ):
            t_target = prof.time(min(x0, self.target), max(x0, self.target))
            if t_target <= rem:
                self._cross_planes(prof, x0, self.target, t_target)
                self.elapsed += t_target
                self.x = self.target
                self._emit("plane-hit", SpacePoint(self.target, self.v), target=True)
                self._finish("hit")
                return

        if t_stall > rem:
            self._partial(prof, rem, exit_x)
            return
        self._cross_planes(prof, x0, x_stall, t_stall)
        self.elapsed += t_stall
        pos = SpacePoint(x_stall, self.v)
        p = self.cell.params
        self._emit(
            "stall",
            pos,
            cell=self.cell.name,
            plane=exit_x,
            zeta=prof.exit_zeta(exit_x),
            locus_distance=_locus_distance(p, pos) if p else math.inf,
        )
        self.x = x_stall
        self._finish("stall")

    def _apply(self, action: tuple) -> None:
        kind = action[0]
        if kind == "end":
            # free flight to infinity: spend the remaining time exactly
            rem = self.duration - self.elapsed
            self._partial(_Profile(self.cell.speed_tag, self.cell.params, self.v), rem, math.inf)
            return
        if kind == "continue":
            self.cell = action[1]
            return
        if kind == "stall":
            pos = SpacePoint(self.x, self.v)
            p = self.cell.params
            self._emit(
                "stall",
                pos,
                cell=self.cell.name,
                locus_distance=_locus_distance(p, pos) if p else math.inf,
            )
            self._finish("stall")
            return
        # jump
        _, rule, reversed_, target_x, new_v, next_cell = action
        self.jumps += 1
        if self.jumps > self.budget.max_jumps:
            self._emit(
                "budget-exhausted", SpacePoint(self.x, self.v), reason="max-jumps"
            )
            self._finish("budget-exhausted")
            return
        source = SpacePoint(self.x, self.v)
        self.x = target_x
        self.v = new_v
        self.cell = next_cell
        self._emit(
            "jump",
            SpacePoint(self.x, self.v),
            rule=rule.rule_id,
            level=rule.level,
            reversed=reversed_,
            fiber_map=rule.fiber_map,
            source=source,
        )
        if self.target is not None and self.x == self.target:
            self._emit("plane-hit", SpacePoint(self.x, self.v), target=True)
            self._finish("hit")


# --- public operations -------------------------------------------------------


def flow(
    system: DisplayedSystem,
    sigma: SpacePoint,
    t: float,
    budget: FlowBudget | None = None,
    record_planes: bool = False,
) -> FlowResult:
    """Flow sigma for signed time t through the glued field.

    Returns a FlowResult whose status is "ok" when the full time elapsed,
    or "stall"/"budget-exhausted" with the partial itinerary otherwise.
    """
    budget = budget or DEFAULT_BUDGET
    if t == 0.0:
        return FlowResult(sigma, 0.0, "ok", 1, [])
    run = _Run(
        system,
        sigma,
        abs(t),
        budget,
        forward=t > 0,
        record_planes=record_planes,
        target=None,
    )
    run.run()
    status = run.outcome or "ok"
    return FlowResult(
        SpacePoint(run.x, run.v), run.elapsed, status, 1 if t > 0 else -1, run.events
    )


def advance_to_plane(
    system: DisplayedSystem,
    sigma: SpacePoint,
    x_target: float,
    direction: str = "forward",
    budget: FlowBudget | None = None,
    record_planes: bool = False,
) -> PlaneOutcome:
    """Flow until the orbit first meets the plane x = x_target.

    Raises PlaneUnreachableError when the start cell admits no further
    events and the target lies behind the motion (monotonicity).
    """
    budget = budget or DEFAULT_BUDGET
    forward = direction == "forward"
    if direction not in ("forward", "backward"):
        raise ValueError(f"direction must be forward/backward, got {direction!r}")
    cell = locate(system, sigma)
    if cell is None:
        raise NotInManifoldError(f"{sigma} not in the glued space")
    dirsign = 1 if forward else -1
    if sigma.x == x_target:
        return PlaneOutcome(sigma, 0.0, "hit", dirsign, [])
    free = (
        cell.name == "core"
        and system.depth == 0
        or cell.name == ("far-right" if forward else "far-left")
        and cell.level == system.depth
    )
    if free and (x_target < sigma.x) == forward:
        raise PlaneUnreachableError(
            f"plane x={x_target} lies behind a free-flight orbit at {sigma}"
        )
    if system.depth:
        # monotonicity bound: x only decreases (forward) via jump targets,
        # none of which lies below -N_top - 8; mirrored for backward motion
        n_top = system.levels[-1].N
        if forward and x_target < min(sigma.x, -n_top - 8.0):
            raise PlaneUnreachableError(
                f"plane x={x_target} below every forward-reachable point"
            )
        if not forward and x_target > max(sigma.x, n_top + 9.0):
            raise PlaneUnreachableError(
                f"plane x={x_target} above every backward-reachable point"
            )
    run = _Run(
        system,
        sigma,
        budget.max_time,
        budget,
        forward=forward,
        record_planes=record_planes,
        target=x_target,
    )
    run.run()
    status = run.outcome or "budget-exhausted"
    pt = SpacePoint(run.x, run.v)
    return PlaneOutcome(
        pt if status == "hit" else None,
        run.elapsed,
        status,
        dirsign,
        run.events,
    )


def strip_travel_time(
    params: LevelParams,
    speed_tag: str,
    x_a: float,
    x_b: float,
    fiber: Fiber,
) -> float:
    """Integral of reciprocal speed over [x_a, x_b] inside one level's strip.

    Raises NonIntegrableError when the speed vanishes on the closed
    interval for this fiber (the integral diverges).
    """
    a, b = min(x_a, x_b), max(x_a, x_b)
    if speed_tag == "unit":
        return b - a
    # divergence: a vanishing plane inside [a,b] whose circle holds the fiber
    for plane, tag in params.vanishing_sets():
        if a <= plane <= b:
            zeta = (
                params.disks.zeta0(fiber)
                if tag == "c0"
                else params.disks.zeta_star(fiber)
            )
            if abs(zeta) <= params.disks.band:
                raise NonIntegrableError(
                    f"speed vanishes at x={plane} for fiber {fiber}"
                )
    return _Profile(speed_tag, params, fiber).time(a, b)


def travel_time(
    system: DisplayedSystem,
    speed_tag: str,
    x_a: float,
    x_b: float,
    fiber: Fiber,
) -> float:
    """Integral of reciprocal speed over [x_a, x_b] for a frozen fiber.

    The strip containing [x_a, x_b] is resolved from the stack of levels,
    then the integral is delegated to ``strip_travel_time``.
    """
    a, b = min(x_a, x_b), max(x_a, x_b)
    if speed_tag == "unit":
        return b - a
    for p in system.levels:
        n = p.N
        if speed_tag == "left-strip" and -n - 8.0 <= a and b <= -n - 5.0:
            break
        if speed_tag == "right-strip" and n + 1.0 <= a and b <= n + 8.0:
            break
    else:
        raise ValueError(
            f"no level hosts {speed_tag!r} over [{x_a}, {x_b}]"
        )
    return strip_travel_time(p, speed_tag, a, b, fiber)


def orbit_itinerary(
    system: DisplayedSystem,
    sigma: SpacePoint,
    budget: FlowBudget | None = None,
    direction: str = "forward",
) -> list[TrajectoryEvent]:
    """Events (segments, jumps, diagnostic plane hits) until the budget ends."""
    budget = budget or DEFAULT_BUDGET
    res = flow(
        system,
        sigma,
        budget.max_time if direction == "forward" else -budget.max_time,
        budget,
        record_planes=True,
    )
    return res.events


def itinerary_to_csv(events: list[TrajectoryEvent], path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["time", "x", "y", "z", "event-kind", "rule-id"])
        for e in events:
            w.writerow(
                [
                    repr(e.time),
                    repr(e.position.x),
                    repr(e.position.y),
                    repr(e.position.z),
                    e.kind,
                    e.detail.get("rule", ""),
                ]
            )


def itinerary_to_json(events: list[TrajectoryEvent], path) -> None:
    def enc(e: TrajectoryEvent) -> dict:
        d = {
            "kind": e.kind,
            "time": e.time,
            "elapsed": e.elapsed,
            "x": e.position.x,
            "y": e.position.y,
            "z": e.position.z,
        }
        if e.detail:
            d["detail"] = {
                k: (list(v) if isinstance(v, tuple) else v)
                for k, v in e.detail.items()
            }
        return d

    with open(path, "w") as fh:
        json.dump([enc(e) for e in events], fh, indent=0)
        fh.write("\n")
