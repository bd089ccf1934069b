"""Space model for iteratively glued slow-fast systems.

A system is a stack of extension levels over the base (all of R^3 at unit
speed).  Each level carves four boxes out of two new slab regions flanking
the inner system, keeps the slow-down walls of two of them, and glues the
resulting boundary planes together through eight seam rules -- four plain
shifts and four that twist the fiber by psi^{+-1}.  Everything the flow
engine and the verifier need is the *operational* content: cells with speed
formulas and fiber predicates, plus the seam rules with their ownership
flags.  Point-set topology never appears explicitly.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Literal, NamedTuple

import numpy as np

from ._jsonio import fhex, unfhex
from .jets import JetMatchedFunction
from .planar import DiskPair, Fiber, PsiMap, psi_at, psi_inverse_at

__all__ = [
    "SpacePoint",
    "LevelParams",
    "DisplayedSystem",
    "Cell",
    "JumpRule",
    "build_level0",
    "locate",
    "interior_contains",
    "speed",
    "validate_displayed_axioms",
    "check_extension",
    "system_to_dict",
    "system_from_dict",
    "save_system",
    "load_system",
    "NotInManifoldError",
    "AmbiguousMembershipError",
]


class NotInManifoldError(ValueError):
    """The queried point does not belong to the glued space."""


class AmbiguousMembershipError(ValueError):
    """The point sits within the membership band of a cell boundary."""


class SpacePoint(NamedTuple):
    x: float
    fiber: Fiber

    @property
    def y(self) -> float:
        return self.fiber.y

    @property
    def z(self) -> float:
        return self.fiber.z

    def dist(self, other: "SpacePoint") -> float:
        return math.sqrt(
            (self.x - other.x) ** 2
            + (self.y - other.y) ** 2
            + (self.z - other.z) ** 2
        )


def point(x: float, y: float, z: float) -> SpacePoint:
    return SpacePoint(float(x), Fiber(float(y), float(z)))


@dataclass(frozen=True)
class LevelParams:
    """Everything one extension level contributes.

    `N` is the inner system's radius; the level adds the regions between
    x = +-N and x = +-(N+10) = +-N'.  The two slow strips carry speeds built
    from wall polynomials crossed with the signed disk radii, so each speed
    vanishes exactly on its catalogued plane-times-circle set.
    """

    N: int
    w0: Fiber
    k: int
    T: int
    T0: float
    lambda0: JetMatchedFunction
    psi: PsiMap
    disks: DiskPair
    W_radius: float

    @property
    def N_prime(self) -> int:
        return self.N + 10

    # wall polynomials (roots are the slow planes of each strip)
    def left_wall_poly(self, x: float) -> float:
        n = self.N
        return (x + n + 7.0) * (x + n + 6.0)

    def gate_poly(self, x: float) -> float:
        n = self.N
        return (x - n - 2.0) * (x - n - 3.0) * (x - n - 4.0) * (x - n - 5.0)

    def right_wall_poly(self, x: float) -> float:
        n = self.N
        return (x - n - 6.0) * (x - n - 7.0)

    # speed factors; zeta values are passed in so flows can cache them
    def left_speed(self, x: float, zeta_st: float) -> float:
        a = self.left_wall_poly(x)
        return -math.expm1(-(a * a + zeta_st * zeta_st))

    def right_speed(self, x: float, zeta_0: float, zeta_st: float) -> float:
        b = self.gate_poly(x)
        g = -math.expm1(-(b * b + zeta_0 * zeta_0))
        c = self.right_wall_poly(x)
        h = -math.expm1(-(c * c + zeta_st * zeta_st))
        return g * h

    def speed_at(self, x: float, v: Fiber, tag: str) -> float:
        if tag == "unit":
            return 1.0
        if tag == "left-strip":
            return self.left_speed(x, self.disks.zeta_star(v))
        if tag == "right-strip":
            return self.right_speed(x, self.disks.zeta0(v), self.disks.zeta_star(v))
        raise ValueError(f"unknown speed tag {tag!r}")

    def w_contains(self, v: Fiber) -> bool:
        """Membership in the pattern window W around w0."""
        return (
            v.dist(self.w0) <= self.W_radius
            and self.disks.interior_b0(v)
            and not self.disks.on_cstar(v)
        )

    def vanishing_sets(self) -> list[tuple[float, str]]:
        """(plane, circle-tag) pairs where the level's speed vanishes."""
        n = self.N
        return [
            (-n - 7.0, "cstar"),
            (-n - 6.0, "cstar"),
            (n + 2.0, "c0"),
            (n + 3.0, "c0"),
            (n + 4.0, "c0"),
            (n + 5.0, "c0"),
            (n + 6.0, "cstar"),
            (n + 7.0, "cstar"),
        ]


@dataclass(frozen=True)
class Cell:
    """One x-slab of a level, with fiber predicate and speed tag.

    `fiber_rule` is one of:
      all          every fiber belongs
      outside-b0   the excised box keeps no wall: fiber must be outside B0
      strip-bstar  excised box with kept walls: interior x needs the fiber
                   outside B*, the two wall planes also admit open-B* fibers
    A `dynamic_lo` cell's left edge is the fiber-dependent dwell plane
    x = -N - lambda0(v); `x_lo` then stores the extreme possible value.
    """

    level: int
    name: str
    x_lo: float
    x_hi: float
    lo_closed: bool
    hi_closed: bool
    fiber_rule: Literal["all", "outside-b0", "strip-bstar"]
    speed_tag: Literal["unit", "left-strip", "right-strip"]
    params: LevelParams | None = None
    dynamic_lo: bool = False

    def lo_edge(self, v: Fiber) -> float:
        if self.dynamic_lo:
            assert self.params is not None
            return -self.params.N - self.params.lambda0(v)
        return self.x_lo

    def _x_inside(self, x: float, v: Fiber) -> bool:
        lo = self.lo_edge(v)
        if x < lo or (x == lo and not self.lo_closed):
            return False
        if x > self.x_hi or (x == self.x_hi and not self.hi_closed):
            return False
        return True

    def contains(self, sigma: SpacePoint) -> bool | None:
        """True/False membership, or None within the ambiguity band."""
        x, v = sigma.x, sigma.fiber
        if not self._x_inside(x, v):
            return False
        if self.fiber_rule == "all":
            return True
        assert self.params is not None
        disks = self.params.disks
        if self.fiber_rule == "outside-b0":
            zeta = disks.zeta0(v)
            if abs(zeta) <= disks.band:
                return None
            return zeta > 0.0
        # strip-bstar
        zeta = disks.zeta_star(v)
        if abs(zeta) <= disks.band:
            return None
        if zeta > 0.0:
            return True
        # open-B* fiber: only the two wall planes keep it
        return x == self.x_lo or x == self.x_hi

    def covers_right_of(self, x: float, v: Fiber) -> bool:
        """Does the cell contain an interval (x, x+eps) on fiber v?"""
        if not (self.lo_edge(v) <= x < self.x_hi):
            return False
        return self._fiber_interior_ok(v)

    def covers_left_of(self, x: float, v: Fiber) -> bool:
        if not (self.lo_edge(v) < x <= self.x_hi):
            return False
        return self._fiber_interior_ok(v)

    def _fiber_interior_ok(self, v: Fiber) -> bool:
        if self.fiber_rule == "all":
            return True
        assert self.params is not None
        disks = self.params.disks
        if self.fiber_rule == "outside-b0":
            return disks.zeta0(v) > disks.band
        return disks.zeta_star(v) > disks.band


@dataclass(frozen=True)
class JumpRule:
    """A seam gluing two boundary planes.

    `approach` records ownership of the source plane: "at" means the flow
    genuinely reaches the plane (the source cell owns it); "limit" means the
    plane is only attained as a one-sided limit and the rule fires there.
    `target_x` of None marks the fiber-dependent dwell edge -N - lambda0(v).
    """

    rule_id: str
    level: int
    source_x: float
    approach: Literal["at", "limit"]
    source_fiber: Literal["all", "open-b0", "open-bstar"]
    target_x: float | None
    fiber_map: Literal["identity", "twist", "twist-inverse"]

    def apply_fiber(self, psi: PsiMap, v: Fiber) -> Fiber:
        if self.fiber_map == "identity":
            return v
        if self.fiber_map == "twist":
            return psi_at(psi, v)
        return psi_inverse_at(psi, v)


def jump_rules(p: LevelParams, level: int) -> tuple[JumpRule, ...]:
    """The eight seam rules a level contributes, in catalog order."""
    n = p.N
    mk = JumpRule
    return (
        mk("left-seam", level, -n - 9.0, "at", "all", -n - 8.0, "identity"),
        mk("reentry-seam", level, -n - 5.0, "at", "all", None, "identity"),
        mk("inner-exit-seam", level, float(n), "limit", "all", n + 1.0, "identity"),
        mk("right-seam", level, n + 8.0, "limit", "all", n + 9.0, "identity"),
        mk("left-wall-exit", level, -n - 7.0, "at", "open-bstar", n + 3.0, "twist-inverse"),
        mk("loop-return", level, n + 2.0, "limit", "open-b0", -n - 6.0, "twist"),
        mk("right-wall-entry", level, n + 4.0, "limit", "open-b0", n + 7.0, "twist"),
        mk("unwind-step", level, n + 6.0, "at", "open-bstar", n + 5.0, "twist-inverse"),
    )


@dataclass
class DisplayedSystem:
    """A stack of extension levels over the unit-speed base.

    Immutable by convention: nothing mutates `levels` after construction,
    so instances may be shared freely across concurrent flows.
    """

    levels: tuple[LevelParams, ...] = ()
    _cells: tuple[Cell, ...] | None = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        self.levels = tuple(self.levels)

    @property
    def N(self) -> int:
        return 1 if not self.levels else self.levels[-1].N_prime

    @property
    def depth(self) -> int:
        return len(self.levels)

    def subsystem(self, depth: int) -> "DisplayedSystem":
        if not 0 <= depth <= self.depth:
            raise ValueError(f"depth {depth} out of range 0..{self.depth}")
        return DisplayedSystem(self.levels[:depth])

    def level(self, j: int) -> LevelParams:
        return self.levels[j - 1]

    def cells(self) -> tuple[Cell, ...]:
        if self._cells is None:
            self._cells = _build_cells(self.levels)
        return self._cells

    def rules(self) -> tuple[JumpRule, ...]:
        out: list[JumpRule] = []
        for j, p in enumerate(self.levels, start=1):
            out.extend(jump_rules(p, j))
        return tuple(out)


def _build_cells(levels: tuple[LevelParams, ...]) -> tuple[Cell, ...]:
    depth = len(levels)
    inf = math.inf
    if depth == 0:
        return (Cell(0, "core", -inf, inf, False, False, "all", "unit"),)
    out = [Cell(0, "core", -1.0, 1.0, False, False, "all", "unit")]
    for j, p in enumerate(levels, start=1):
        n = float(p.N)
        top = j == depth
        left_end = -inf if top else -(n + 10.0)
        right_end = inf if top else n + 10.0
        c = lambda *a, **kw: Cell(j, *a, params=p, **kw)  # noqa: E731
        out += [
            c("far-left", left_end, -n - 9.0, False, True, "all", "unit"),
            c("f-left", -n - 8.0, -n - 7.0, False, False, "all", "left-strip"),
            c("f-mid", -n - 7.0, -n - 6.0, True, True, "strip-bstar", "left-strip"),
            c("f-right", -n - 6.0, -n - 5.0, False, True, "all", "left-strip"),
            c("reentry", -n - 4.0, -n, False, True, "all", "unit", dynamic_lo=True),
            c("gh-a", n + 1.0, n + 2.0, True, False, "all", "right-strip"),
            c("gh-b", n + 2.0, n + 3.0, True, True, "outside-b0", "right-strip"),
            c("gh-c", n + 3.0, n + 4.0, False, False, "all", "right-strip"),
            c("gh-d", n + 4.0, n + 5.0, True, True, "outside-b0", "right-strip"),
            c("gh-e", n + 5.0, n + 6.0, False, False, "all", "right-strip"),
            c("gh-f", n + 6.0, n + 7.0, True, True, "strip-bstar", "right-strip"),
            c("gh-g", n + 7.0, n + 8.0, False, False, "all", "right-strip"),
            c("far-right", n + 9.0, right_end, True, False, "all", "unit"),
        ]
    return tuple(out)


def build_level0() -> DisplayedSystem:
    """The base system: all of R^3 carried rightward at unit speed."""
    return DisplayedSystem(())


def locate(system: DisplayedSystem, sigma: SpacePoint) -> Cell | None:
    """The unique cell containing sigma, or None when sigma is excised.

    Raises
    ------
    AmbiguousMembershipError
        If sigma sits within the membership band of a fiber predicate, so
        cell membership cannot be decided at working precision.
    """
    hit: Cell | None = None
    uncertain = False
    for cell in system.cells():
        got = cell.contains(sigma)
        if got is True:
            if hit is not None:
                raise AssertionError(
                    f"partition violated: {sigma} in {hit.name} and {cell.name}"
                )
            hit = cell
        elif got is None:
            uncertain = True
    if hit is not None:
        return hit
    if uncertain:
        raise AmbiguousMembershipError(f"{sigma} within membership band")
    return None


def interior_contains(system: DisplayedSystem, sigma: SpacePoint) -> bool:
    """Is sigma in the R^3-interior of the glued point set?

    True when a whole ball around sigma lies inside the space: sigma is an
    unambiguous member and cells cover both sides of its plane with the
    fiber strictly inside any conditional predicate.  Kept-wall points
    whose fiber is inside the excised band are members but one-sided, so
    they are not interior; neither is any point facing an excised slab.
    """
    try:
        if locate(system, sigma) is None:
            return False
    except AmbiguousMembershipError:
        return False
    x, v = sigma.x, sigma.fiber
    cells = system.cells()
    return any(c.covers_left_of(x, v) for c in cells) and any(
        c.covers_right_of(x, v) for c in cells
    )


def speed(system: DisplayedSystem, sigma: SpacePoint) -> float:
    """theta at sigma: 1 on free cells, the strip formula on slow cells.

    For points inside a fiber-membership band (e.g. exactly on a vanishing
    circle at a wall plane) the strip formula is still evaluated -- that is
    the limiting value of theta, which is what callers probing the vanishing
    loci expect -- even though `locate` reports those points as ambiguous.
    """
    try:
        cell = locate(system, sigma)
    except AmbiguousMembershipError:
        cell = _cell_for_x(system, sigma)
    if cell is None:
        raise NotInManifoldError(f"{sigma} not in the glued space")
    if cell.speed_tag == "unit":
        return 1.0
    assert cell.params is not None
    return cell.params.speed_at(sigma.x, sigma.fiber, cell.speed_tag)


def _cell_for_x(system: DisplayedSystem, sigma: SpacePoint) -> Cell | None:
    for cell in system.cells():
        if cell._x_inside(sigma.x, sigma.fiber):
            return cell
    return None


# --- axiom / extension validation -----------------------------------------


@dataclass
class ValidationReport:
    checked: int
    violations: list[dict]

    @property
    def ok(self) -> bool:
        return not self.violations


def validate_displayed_axioms(
    system: DisplayedSystem, sample_count: int, seed: int = 0
) -> ValidationReport:
    """Sampled checks of the displayed-system axioms.

    Covers: unit speed on the two free half-spaces beyond x = -+(N-1);
    speed in [0,1] everywhere sampled; membership and speed agreeing with
    every truncated subsystem on the shared region; per-level parameter
    invariants.  Violations are returned as data, never raised.
    """
    if sample_count < 1:
        raise ValueError("sample_count must be >= 1")
    rng = np.random.default_rng(seed)
    bad: list[dict] = []
    n_top = system.N

    for j, p in enumerate(system.levels, start=1):
        if p.N != (1 if j == 1 else system.levels[j - 2].N_prime):
            bad.append({"check": "level-N-chain", "level": j, "N": p.N})
        if not (2.0 - 1e-9 <= p.T - p.T0 <= 3.0 + 1e-9):
            bad.append({"check": "T-window", "level": j, "T": p.T, "T0": p.T0})
        if not (p.W_radius > 0.0):
            bad.append({"check": "W-radius", "level": j})
        if not (p.psi.w0 == p.disks.psi.w0 == p.lambda0.w0):
            bad.append({"check": "w0-agreement", "level": j})
        ys = p.w0.y + rng.uniform(-10, 10, size=200)
        zs = p.w0.z + rng.uniform(-10, 10, size=200)
        vals = p.lambda0.eval_many(ys, zs)
        if not (np.all(vals > 1.0) and np.all(vals < 4.0)):
            bad.append({"check": "lambda0-range", "level": j})

    for _ in range(sample_count):
        # free half-spaces: x < -(N-1) or x > N-1 must be unit speed, in M
        side = 1.0 if rng.random() < 0.5 else -1.0
        x = side * (n_top - 1.0 + rng.uniform(0.0, 5.0))
        sig = SpacePoint(x, Fiber(*rng.uniform(-3, 3, size=2)))
        try:
            s = speed(system, sig)
        except (NotInManifoldError, AmbiguousMembershipError) as e:
            bad.append({"check": "free-space-member", "sigma": sig, "err": str(e)})
            continue
        if s != 1.0:
            bad.append({"check": "free-space-unit", "sigma": sig, "speed": s})

    for _ in range(sample_count):
        sig = SpacePoint(
            rng.uniform(-n_top - 2, n_top + 2), Fiber(*rng.uniform(-3, 3, size=2))
        )
        try:
            cell = locate(system, sig)
        except AmbiguousMembershipError:
            continue
        if cell is None:
            continue
        s = speed(system, sig)
        if not (0.0 <= s <= 1.0):
            bad.append({"check": "speed-range", "sigma": sig, "speed": s})
        # consistency with the subsystem that already contained the point
        for d in range(cell.level, system.depth):
            sub = system.subsystem(d)
            if abs(sig.x) >= sub.N:
                continue
            try:
                s_sub = speed(sub, sig)
            except (NotInManifoldError, AmbiguousMembershipError):
                bad.append({"check": "nesting-member", "sigma": sig, "depth": d})
                continue
            if s_sub != s:
                bad.append(
                    {"check": "nesting-speed", "sigma": sig, "depth": d, "d": s - s_sub}
                )
    return ValidationReport(checked=2 * sample_count, violations=bad)


def check_extension(
    inner: DisplayedSystem,
    outer: DisplayedSystem,
    sample_count: int,
    seed: int = 0,
) -> ValidationReport:
    """Sampled agreement of membership and speed on the shared core region.

    The outer system must have exactly one more level.  Where both systems
    contain a sample the speeds must agree to 0 ulps (shared code path).
    """
    if outer.depth != inner.depth + 1:
        raise ValueError(
            f"outer must extend inner by one level ({inner.depth} -> {outer.depth})"
        )
    bad: list[dict] = []
    if outer.N < inner.N + 1:
        bad.append({"check": "N-growth", "inner": inner.N, "outer": outer.N})
    n = inner.N
    rng = np.random.default_rng(seed)
    checked = 0
    for _ in range(sample_count):
        sig = SpacePoint(rng.uniform(-n, n), Fiber(*rng.uniform(-3.5, 3.5, size=2)))
        try:
            cell_in = locate(inner, sig)
            cell_out = locate(outer, sig)
        except AmbiguousMembershipError:
            continue
        checked += 1
        if (cell_in is None) != (cell_out is None):
            bad.append({"check": "membership", "sigma": sig})
            continue
        if cell_in is None:
            continue
        s_in, s_out = speed(inner, sig), speed(outer, sig)
        if s_in != s_out:
            bad.append({"check": "speed", "sigma": sig, "inner": s_in, "outer": s_out})
    return ValidationReport(checked=checked, violations=bad)


# --- serialization ---------------------------------------------------------

FORMAT_NAME = "glueflow-system"
FORMAT_VERSION = 1


def system_to_dict(system: DisplayedSystem) -> dict:
    return {
        "format": FORMAT_NAME,
        "version": FORMAT_VERSION,
        "levels": [
            {
                "N": p.N,
                "k": p.k,
                "T": p.T,
                "T0": fhex(p.T0),
                "w0": [fhex(p.w0.y), fhex(p.w0.z)],
                "W_radius": fhex(p.W_radius),
                "ode_tolerance": fhex(p.psi.ode_tolerance),
                "band": fhex(p.disks.band),
                "lambda0": p.lambda0.to_dict(),
            }
            for p in system.levels
        ],
    }


def system_from_dict(doc: dict) -> DisplayedSystem:
    if doc.get("format") != FORMAT_NAME:
        raise ValueError(f"not a {FORMAT_NAME} document")
    if doc.get("version") != FORMAT_VERSION:
        raise ValueError(f"unsupported version {doc.get('version')}")
    levels = []
    for d in doc["levels"]:
        w0 = Fiber(unfhex(d["w0"][0]), unfhex(d["w0"][1]))
        psi = PsiMap(k=int(d["k"]), w0=w0, ode_tolerance=unfhex(d["ode_tolerance"]))
        levels.append(
            LevelParams(
                N=int(d["N"]),
                w0=w0,
                k=int(d["k"]),
                T=int(d["T"]),
                T0=unfhex(d["T0"]),
                lambda0=JetMatchedFunction.from_dict(d["lambda0"]),
                psi=psi,
                disks=DiskPair(psi, band=unfhex(d["band"])),
                W_radius=unfhex(d["W_radius"]),
            )
        )
    return DisplayedSystem(tuple(levels))


def save_system(system: DisplayedSystem, path) -> None:
    with open(path, "w") as fh:
        json.dump(system_to_dict(system), fh, indent=1, sort_keys=True)
        fh.write("\n")


def load_system(path) -> DisplayedSystem:
    with open(path) as fh:
        return system_from_dict(json.load(fh))
