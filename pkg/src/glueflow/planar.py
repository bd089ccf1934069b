"""Dynamics in the fiber plane: the compactly-damped hyperbolic twist.

Every glued field in this package moves points along lines parallel to the
x-axis; all the interesting recirculation happens through a planar map psi
applied to the (y, z) fiber at jump seams.  psi is the time-1 map of the
damped hyperbolic field

    u' = q0(u)^k * (u_y, -u_z),       q0(u) = 1 - exp(-|u|^2),

conjugated by the translation taking the origin to a chosen center `w0`.
Because q0 is a scalar factor, orbits stay on the hyperbolas
{u_y * u_z = const} of the linear flow and the whole 2D problem reduces to a
scalar ODE for the log-stretch s along the hyperbola:

    u(t) = (u_y(0) * e^{s(t)}, u_z(0) * e^{-s(t)}),   ds/dt = q0(u(s))^k.

That reduction is what lets us evaluate psi - id to full *relative*
precision even where the displacement is ~|u - w0|^(2k+1) and far below the
rounding floor of a naive subtraction.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache
from typing import Literal, NamedTuple

from scipy.integrate import quad

from ._integrate import rk45

__all__ = [
    "Fiber",
    "PsiMap",
    "DiskPair",
    "h0_flow",
    "q0",
    "psi_at",
    "psi_inverse_at",
    "psi_displacement",
    "psi_iterate",
    "escape_count",
    "zeta_star",
    "AxisEscapeError",
    "EscapeCapError",
]

ITERATE_CAP = 1_000_000


class AxisEscapeError(ValueError):
    """The point lies on an invariant axis and never leaves the disk."""


class EscapeCapError(RuntimeError):
    """The escape count exceeds the iterate cap."""


class Fiber(NamedTuple):
    """A point (y, z) of the fiber plane."""

    y: float
    z: float

    def dist(self, other: "Fiber") -> float:
        return math.hypot(self.y - other.y, self.z - other.z)


def h0_flow(t: float, v: Fiber) -> Fiber:
    """Time-t map of the undamped linear hyperbolic field (y, -z)."""
    return Fiber(v.y * math.exp(t), v.z * math.exp(-t))


def q0(v: Fiber) -> float:
    """Radial damping factor: 0 at the origin, ->1 at infinity, in [0,1)."""
    return -math.expm1(-(v.y * v.y + v.z * v.z))


@dataclass(frozen=True)
class PsiMap:
    """The planar twist: time-1 map of the damped hyperbolic field.

    Parameters
    ----------
    k:
        Damping power; psi agrees with the identity to order 2k at `w0`.
    w0:
        Center of the twist (the damping vanishes only there).
    ode_tolerance:
        Relative tolerance for the scalar log-stretch integration.
    """

    k: int
    w0: Fiber
    ode_tolerance: float = 1e-10

    def rel(self, v: Fiber) -> Fiber:
        return Fiber(v.y - self.w0.y, v.z - self.w0.z)

    def unrel(self, u: Fiber) -> Fiber:
        return Fiber(u.y + self.w0.y, u.z + self.w0.z)

    def axis_h_dist(self, v: Fiber) -> float:
        """Distance to the horizontal invariant line through w0."""
        return abs(v.z - self.w0.z)

    def axis_v_dist(self, v: Fiber) -> float:
        """Distance to the vertical invariant line through w0."""
        return abs(v.y - self.w0.y)


def _stretch_rate(k: int, y0: float, z0: float):
    """Rate function ds/dt = q0(path(s))^k along the invariant hyperbola."""
    # log-scale fallbacks for very large |s| (long iterate runs)
    log_y2 = 2.0 * math.log(abs(y0)) if y0 != 0.0 else -math.inf
    log_z2 = 2.0 * math.log(abs(z0)) if z0 != 0.0 else -math.inf

    def rate(s: float) -> float:
        if -350.0 < s < 350.0:
            es = math.exp(s)
            ys = y0 * es
            zs = z0 / es
            r2 = ys * ys + zs * zs
        else:
            a = 2.0 * s + log_y2
            b = -2.0 * s + log_z2
            if a > 40.0 or b > 40.0:
                return 1.0
            r2 = (math.exp(a) if a > -745.0 else 0.0) + (
                math.exp(b) if b > -745.0 else 0.0
            )
        if r2 > 40.0:
            return 1.0
        return (-math.expm1(-r2)) ** k

    return rate


def _log_stretch(psi: PsiMap, v: Fiber, t_end: float) -> float:
    """s(t_end) for the scalar log-stretch ODE started at the fiber v."""
    y0, z0 = psi.rel(v)
    if y0 == 0.0 and z0 == 0.0:
        return 0.0
    rate = _stretch_rate(psi.k, y0, z0)
    # tie the absolute tolerance to the initial rate so that near-fixed-point
    # stretches (s ~ q0^k << 1) keep full relative accuracy
    atol = max(rate(0.0), 1e-300) * psi.ode_tolerance * 1e-2
    if t_end >= 0.0:
        return rk45(rate, 0.0, t_end, rtol=psi.ode_tolerance, atol=atol)
    return rk45(lambda s: -rate(s), 0.0, -t_end, rtol=psi.ode_tolerance, atol=atol)


def psi_at(psi: PsiMap, v: Fiber) -> Fiber:
    """Apply the twist map once."""
    y0, z0 = psi.rel(v)
    s = _log_stretch(psi, v, 1.0)
    return psi.unrel(Fiber(y0 * math.exp(s), z0 * math.exp(-s)))


def psi_inverse_at(psi: PsiMap, v: Fiber) -> Fiber:
    """Apply the inverse twist map once."""
    y0, z0 = psi.rel(v)
    s = _log_stretch(psi, v, -1.0)
    return psi.unrel(Fiber(y0 * math.exp(s), z0 * math.exp(-s)))


def psi_displacement(psi: PsiMap, v: Fiber, t: float = 1.0) -> Fiber:
    """psi^t(v) - v evaluated without cancellation.

    The components are y0*(e^s - 1) and z0*(e^{-s} - 1) with s the
    log-stretch, so expm1 gives the displacement to full relative precision
    even when it is ~1e-300.
    """
    y0, z0 = psi.rel(v)
    s = _log_stretch(psi, v, t)
    return Fiber(y0 * math.expm1(s), z0 * math.expm1(-s))


def psi_iterate(psi: PsiMap, v: Fiber, m: int) -> Fiber:
    """Apply the m-th iterate (m may be negative) in one scalar solve."""
    if abs(m) > ITERATE_CAP:
        raise ValueError(f"iterate count {m} exceeds cap {ITERATE_CAP}")
    if m == 0:
        return v
    y0, z0 = psi.rel(v)
    s = _log_stretch(psi, v, float(m))
    if abs(s) > 700.0:
        raise OverflowError(f"iterate escapes floating-point range (s={s:.3g})")
    return psi.unrel(Fiber(y0 * math.exp(s), z0 * math.exp(-s)))


def _exit_stretches(y0: float, z0: float) -> tuple[float, float]:
    """Log-stretch values where the hyperbola orbit meets the unit circle.

    Solves y0^2 e^{2s} + z0^2 e^{-2s} = 1 for s.  Returns (s_down, s_up);
    either may be -inf/+inf when the corresponding axis component vanishes.
    """
    disc = 1.0 - 4.0 * y0 * y0 * z0 * z0
    if disc < 0.0:
        raise ValueError("orbit never meets the unit circle (|y0*z0| > 1/2)")
    root = math.sqrt(disc)
    # X = e^{2s}: y0^2 X^2 - X + z0^2 = 0
    if y0 != 0.0:
        x_up = (1.0 + root) / (2.0 * y0 * y0)
        s_up = 0.5 * math.log(x_up)
    else:
        s_up = math.inf
    if z0 != 0.0:
        x_dn = 2.0 * z0 * z0 / (1.0 + root)  # rationalized stable form
        s_dn = 0.5 * math.log(x_dn)
    else:
        s_dn = -math.inf
    return s_dn, s_up


def _stretch_time(psi: PsiMap, y0: float, z0: float, s_target: float) -> float:
    """Signed flow time needed to reach log-stretch s_target (from s=0)."""
    if s_target == 0.0:
        return 0.0
    rate = _stretch_rate(psi.k, y0, z0)
    pts = []
    if y0 != 0.0 and z0 != 0.0:
        s_min = 0.25 * math.log((z0 * z0) / (y0 * y0))  # closest approach
        lo, hi = min(0.0, s_target), max(0.0, s_target)
        if lo < s_min < hi:
            pts.append(s_min)
    val, _ = quad(
        lambda s: 1.0 / rate(s),
        0.0,
        s_target,
        points=pts or None,
        limit=200,
        epsabs=0.0,
        epsrel=1e-10,
    )
    return val


def escape_count(
    psi: PsiMap,
    v: Fiber,
    disk: Literal["base", "image"],
    direction: Literal["forward", "backward"],
) -> int:
    """Least m >= 1 such that the m-th (or -m-th) iterate leaves the disk.

    `disk` selects the closed unit disk centered at w0 ("base") or its image
    under psi ("image").  Monotonicity of |path|^2 past its single minimum
    guarantees every earlier iterate is still inside, so the count is found
    from one circle-crossing time rather than by stepping.

    Raises
    ------
    AxisEscapeError
        If v sits on the invariant axis that contracts in the requested
        direction (the orbit never leaves the disk).
    EscapeCapError
        If the count would exceed the iterate cap.
    ValueError
        If v is not in the requested disk to begin with.
    """
    y0, z0 = psi.rel(v)
    # membership of iterate j is a condition on the stretch at time j + off
    off = 0.0 if disk == "base" else -1.0
    if disk not in ("base", "image"):
        raise ValueError(f"unknown disk tag {disk!r}")
    s_dn, s_up = _exit_stretches(y0, z0)
    s_at_off = _log_stretch(psi, v, off) if off else 0.0
    if not (s_dn - 1e-12 <= s_at_off <= s_up + 1e-12):
        raise ValueError(f"{v} is not in the {disk} disk")

    if direction == "forward":
        if y0 == 0.0:
            raise AxisEscapeError(
                "fiber lies on the contracting axis; forward iterates never escape"
            )
        t_up = _stretch_time(psi, y0, z0, s_up)
        m = math.floor(t_up - off) + 1
    elif direction == "backward":
        if z0 == 0.0:
            raise AxisEscapeError(
                "fiber lies on the expanding axis; backward iterates never escape"
            )
        t_dn = _stretch_time(psi, y0, z0, s_dn)
        m = math.floor(off - t_dn) + 1
    else:
        raise ValueError(f"unknown direction {direction!r}")

    m = max(1, m)
    if m > ITERATE_CAP:
        raise EscapeCapError(f"escape count {m} exceeds cap {ITERATE_CAP}")
    return m


@dataclass(frozen=True)
class DiskPair:
    """The closed unit disk at w0 and its image under the twist.

    Membership tests use the signed square-radius functions: zeta0 for the
    base disk, and zeta0 pulled back through the inverse twist for the image
    disk.  `band` is the ambiguity margin: values of |zeta| at or below it
    are treated as "on the circle" by the strict tests.
    """

    psi: PsiMap
    band: float = 1e-8

    @property
    def w0(self) -> Fiber:
        return self.psi.w0

    def zeta0(self, v: Fiber) -> float:
        u = self.psi.rel(v)
        return u.y * u.y + u.z * u.z - 1.0

    def zeta_star(self, v: Fiber) -> float:
        return _zeta_star_cached(self.psi, v)

    # closed-disk membership (boundary included)
    def in_b0(self, v: Fiber) -> bool:
        return self.zeta0(v) <= 0.0

    def in_bstar(self, v: Fiber) -> bool:
        return self.zeta_star(v) <= 0.0

    # strict interior / exterior, with the ambiguity band excluded
    def interior_b0(self, v: Fiber) -> bool:
        return self.zeta0(v) < -self.band

    def exterior_b0(self, v: Fiber) -> bool:
        return self.zeta0(v) > self.band

    def on_c0(self, v: Fiber) -> bool:
        return abs(self.zeta0(v)) <= self.band

    def interior_bstar(self, v: Fiber) -> bool:
        return self.zeta_star(v) < -self.band

    def exterior_bstar(self, v: Fiber) -> bool:
        return self.zeta_star(v) > self.band

    def on_cstar(self, v: Fiber) -> bool:
        return abs(self.zeta_star(v)) <= self.band

    # distances to the two critical circles (the image-circle distance is
    # measured through the inverse twist, which is Lipschitz-equivalent to
    # the geometric distance on the scales the classifier cares about)
    def dist_c0(self, v: Fiber) -> float:
        u = self.psi.rel(v)
        return abs(math.hypot(u.y, u.z) - 1.0)

    def dist_cstar(self, v: Fiber) -> float:
        u = self.psi.rel(psi_inverse_at(self.psi, v))
        return abs(math.hypot(u.y, u.z) - 1.0)


@lru_cache(maxsize=65536)
def _zeta_star_cached(psi: PsiMap, v: Fiber) -> float:
    # the pullback costs an ODE solve and the same fiber is queried by every
    # cell predicate / speed evaluation along a segment, so memoize
    u = Fiber(*v)
    w = psi_inverse_at(psi, u)
    ry, rz = w.y - psi.w0.y, w.z - psi.w0.z
    return ry * ry + rz * rz - 1.0


def zeta_star(pair: DiskPair, v: Fiber) -> float:
    """Signed square-radius of v pulled back through the inverse twist."""
    return pair.zeta_star(v)
