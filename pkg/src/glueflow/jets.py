"""Taylor jet extraction and jet-matched dwell-time functions.

The extension step needs a smooth positive function that agrees with a
measured dwell time to order k at a marked fiber and stays inside (1, 4)
globally.  We get there in two moves:

* `taylor_poly` -- extract the degree-<=k Taylor polynomial of a black-box
  fiber function by central finite differences with two-level Richardson
  extrapolation (the function involves nested ODE solves, so AD is out).
* `build_lambda0` -- damp that polynomial by exp(-a0 * Q), Q the degree
  2k+2 axis-power sum, choosing a0 by doubling until both a deterministic
  grid probe and an analytic coefficient tail bound certify the range.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from ._jsonio import fhex, unfhex
from .planar import Fiber

__all__ = [
    "JetMatchedFunction",
    "taylor_poly",
    "build_lambda0",
    "JetResidualError",
    "SearchLimitError",
]

A0_CAP = 2.0**60


class JetResidualError(RuntimeError):
    """Extracted polynomial does not match the function to the stated order."""


class SearchLimitError(RuntimeError):
    """A doubling/halving parameter search ran out of range."""


def _central_weights(order: int) -> tuple[np.ndarray, np.ndarray]:
    """Symmetric finite-difference weights for d^order/dx^order, O(h^2)."""
    if order == 0:
        return np.array([0]), np.array([1.0])
    half = (order + 1) // 2
    offsets = np.arange(-half, half + 1)
    n = len(offsets)
    vand = np.vander(offsets, n, increasing=True).T.astype(float)
    rhs = np.zeros(n)
    rhs[order] = math.factorial(order)
    return offsets, np.linalg.solve(vand, rhs)


def eval_poly(coeffs: dict[tuple[int, int], float], u: Fiber) -> float:
    """Evaluate a bivariate polynomial given as {(deg_y, deg_z): coeff}."""
    return sum(c * u.y**ay * u.z**az for (ay, az), c in coeffs.items())


def taylor_poly(
    fn,
    w0: Fiber,
    k: int,
    *,
    base_step: float = 1e-2,
    probe_radii=None,
    n_probe_dirs: int = 8,
) -> dict[tuple[int, int], float]:
    """Degree-<=k Taylor coefficients of fn at w0.

    Uses tensor-product central differences at steps h and h/2 combined by
    one Richardson level (the pair of steps *is* the two-level scheme), with
    all stencil values cached on the common h/2 grid.  The constant term is
    fn(w0) exactly.  A probe-ring residual check asserts
    |fn - P| = O(r^(k+1)); it is skipped when the residuals sit at rounding
    level (fn itself polynomial of degree <= k).

    Raises
    ------
    JetResidualError
        If the fitted residual slope falls below k + 1 - 0.5.
    """
    h = base_step
    cache: dict[tuple[int, int], float] = {}

    def at(i: int, j: int) -> float:
        # grid indices in units of h/2
        key = (i, j)
        if key not in cache:
            cache[key] = fn(Fiber(w0.y + i * h / 2.0, w0.z + j * h / 2.0))
        return cache[key]

    coeffs: dict[tuple[int, int], float] = {(0, 0): at(0, 0)}
    for ay in range(k + 1):
        for az in range(k + 1 - ay):
            if ay == 0 and az == 0:
                continue
            oy, wy = _central_weights(ay)
            oz, wz = _central_weights(az)
            norm = math.factorial(ay) * math.factorial(az)

            def diff(step_units: int) -> float:
                # step_units: 2 -> step h, 1 -> step h/2
                acc = 0.0
                for a, ca in zip(oy, wy):
                    for b, cb in zip(oz, wz):
                        acc += ca * cb * at(int(a) * step_units, int(b) * step_units)
                return acc / (h * step_units / 2.0) ** (ay + az)

            coarse, fine = diff(2), diff(1)
            coeffs[(ay, az)] = (4.0 * fine - coarse) / 3.0 / norm

    # residual check on a probe ring
    if probe_radii is None:
        probe_radii = np.logspace(-1.5, -0.5, 5)
    angles = np.linspace(0.0, 2.0 * math.pi, n_probe_dirs, endpoint=False) + 0.39
    radii, resid = [], []
    for r in probe_radii:
        worst = 0.0
        for t in angles:
            u = Fiber(r * math.cos(t), r * math.sin(t))
            worst = max(
                worst, abs(fn(Fiber(w0.y + u.y, w0.z + u.z)) - eval_poly(coeffs, u))
            )
        radii.append(r)
        resid.append(worst)
    if max(resid) > 1e-10:  # below that the slope is just rounding noise
        slope = np.polyfit(np.log(radii), np.log(np.maximum(resid, 1e-300)), 1)[0]
        if slope < k + 1 - 0.5:
            raise JetResidualError(
                f"taylor_poly residual slope {slope:.3f} < {k + 1 - 0.5} "
                f"(k={k}, residuals {resid})"
            )
    return coeffs


@dataclass(frozen=True)
class JetMatchedFunction:
    """offset + P(v - w0) * exp(-a0 * Q(v - w0)), Q = y^(2k+2) + z^(2k+2).

    With a0 chosen by `build_lambda0` the value stays in
    (offset - 1, offset + 2) globally; the function agrees with
    offset + P to order 2k+1 at w0 because Q kills itself to that order.
    """

    w0: Fiber
    k: int
    coeffs: tuple[tuple[int, int, float], ...]
    a0: float
    offset: float = 2.0

    def coeff_dict(self) -> dict[tuple[int, int], float]:
        return {(ay, az): c for ay, az, c in self.coeffs}

    def __call__(self, v: Fiber) -> float:
        uy, uz = v.y - self.w0.y, v.z - self.w0.z
        p = 2 * self.k + 2
        t = self.a0 * (uy**p + uz**p)
        if t > 700.0:
            return self.offset
        poly = sum(c * uy**ay * uz**az for ay, az, c in self.coeffs)
        return self.offset + poly * math.exp(-t)

    def eval_many(self, ys: np.ndarray, zs: np.ndarray) -> np.ndarray:
        """Vectorized evaluation on arrays of absolute fiber coordinates."""
        uy, uz = ys - self.w0.y, zs - self.w0.z
        p = 2 * self.k + 2
        t = np.minimum(self.a0 * (uy**p + uz**p), 750.0)
        poly = np.zeros_like(uy)
        for ay, az, c in self.coeffs:
            poly += c * uy**ay * uz**az
        return self.offset + poly * np.exp(-t)

    def to_dict(self) -> dict:
        return {
            "w0": [fhex(self.w0.y), fhex(self.w0.z)],
            "k": self.k,
            "coeffs": [[ay, az, fhex(c)] for ay, az, c in self.coeffs],
            "a0": fhex(self.a0),
            "offset": fhex(self.offset),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "JetMatchedFunction":
        return cls(
            w0=Fiber(unfhex(d["w0"][0]), unfhex(d["w0"][1])),
            k=int(d["k"]),
            coeffs=tuple((int(a), int(b), unfhex(c)) for a, b, c in d["coeffs"]),
            a0=unfhex(d["a0"]),
            offset=unfhex(d["offset"]),
        )


def _monomial_peak(order: int, a: float, p: int) -> float:
    """max over t of |t|^order * exp(-a t^p)  (p even, a > 0)."""
    if order == 0:
        return 1.0
    # maximum at t^p = order / (a p)
    return (order / (a * p * math.e)) ** (order / p)


def build_lambda0(
    P: dict[tuple[int, int], float],
    k: int,
    w0: Fiber,
    *,
    offset: float = 2.0,
    grid_n: int = 201,
    grid_radius: float = 10.0,
) -> JetMatchedFunction:
    """Choose the damping strength a0 and assemble the dwell function.

    a0 doubles from 1 until BOTH hold:
      * analytic tail bound: sum over nonconstant monomials of
        |c| * peak(deg_y) * peak(deg_z) < 1 - 1e-3 (and the constant term
        plus that tail stays below 2 - 1e-3), which certifies the global
        range offset + (-1, 2);
      * a deterministic grid probe of (2*grid_n-1)^2/... values over the
        radius-`grid_radius` square around w0 lands in (offset-1, offset+2).

    Raises
    ------
    ValueError
        If |P(0,0)| exceeds 1 + 1e-6 (the dwell mismatch must sit in [0,1]).
    SearchLimitError
        If a0 would exceed 2^60.
    """
    c0 = P.get((0, 0), 0.0)
    if abs(c0) > 1.0 + 1e-6:
        raise ValueError(f"constant term {c0} outside [-1-1e-6, 1+1e-6]")
    p = 2 * k + 2
    side = np.linspace(-grid_radius, grid_radius, grid_n)
    gy, gz = np.meshgrid(side + w0.y, side + w0.z)

    a0 = 1.0
    while a0 <= A0_CAP:
        tail = sum(
            abs(c) * _monomial_peak(ay, a0, p) * _monomial_peak(az, a0, p)
            for (ay, az), c in P.items()
            if (ay, az) != (0, 0)
        )
        fn = JetMatchedFunction(
            w0=w0,
            k=k,
            coeffs=tuple((ay, az, c) for (ay, az), c in sorted(P.items())),
            a0=a0,
            offset=offset,
        )
        if tail < 1.0 - 1e-3 and abs(c0) + tail < 2.0 - 1e-3:
            vals = fn.eval_many(gy, gz)
            if np.all(vals > offset - 1.0 + 1e-12) and np.all(
                vals < offset + 2.0 - 1e-12
            ):
                return fn
        a0 *= 2.0
    raise SearchLimitError(f"a0 search exceeded {A0_CAP}")
