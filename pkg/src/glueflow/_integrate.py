"""Scalar adaptive Runge-Kutta integration.

All production flows in this package reduce to autonomous scalar ODEs
(position along an axis line, or log-stretch along an invariant hyperbola),
so instead of pulling in a full vector integrator we use a small
Dormand-Prince 4(5) stepper specialised to scalars.  scipy's solve_ivp is
deliberately *not* used here -- it serves as the independent cross-check in
the test suite.
"""

from __future__ import annotations

import math
from typing import Callable

__all__ = ["rk45"]

# Dormand-Prince coefficients (the classic DOPRI5 tableau, FSAL).
_A21 = 1 / 5
_A31, _A32 = 3 / 40, 9 / 40
_A41, _A42, _A43 = 44 / 45, -56 / 15, 32 / 9
_A51, _A52, _A53, _A54 = 19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729
_A61, _A62, _A63, _A64, _A65 = (
    9017 / 3168,
    -355 / 33,
    46732 / 5247,
    49 / 176,
    -5103 / 18656,
)
# 5th order weights (also the last stage's a-row: FSAL)
_B1, _B3, _B4, _B5, _B6 = 35 / 384, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84
# difference between 5th and 4th order weights, for the error estimate
_E1 = 35 / 384 - 5179 / 57600
_E3 = 500 / 1113 - 7571 / 16695
_E4 = 125 / 192 - 393 / 640
_E5 = -2187 / 6784 + 92097 / 339200
_E6 = 11 / 84 - 187 / 2100
_E7 = -1 / 40


def rk45(
    f: Callable[[float], float],
    y0: float,
    t_end: float,
    *,
    rtol: float = 1e-10,
    atol: float = 1e-12,
    max_step: float = math.inf,
    max_steps: int = 200_000,
) -> float:
    """Integrate the autonomous scalar ODE y' = f(y) from t=0 to t=t_end.

    Returns y(t_end).  `t_end` must be >= 0; integrate backwards by negating
    `f` at the call site.  Error per step is controlled against
    atol + rtol * |y|.

    Raises
    ------
    RuntimeError
        If the step size underflows or `max_steps` is exceeded.
    """
    if t_end < 0:
        raise ValueError(f"t_end must be nonnegative, got {t_end}")
    if t_end == 0.0:
        return y0

    t = 0.0
    y = y0
    k1 = f(y)

    # initial step heuristic (Hairer-style, simplified for scalars)
    scale = atol + rtol * abs(y)
    d0 = abs(y) / scale
    d1 = abs(k1) / scale
    h = 1e-6 if (d0 < 1e-5 or d1 < 1e-5) else 0.01 * d0 / d1
    h = min(h, t_end, max_step)

    for _ in range(max_steps):
        if t >= t_end:
            return y
        h = min(h, t_end - t)

        k2 = f(y + h * _A21 * k1)
        k3 = f(y + h * (_A31 * k1 + _A32 * k2))
        k4 = f(y + h * (_A41 * k1 + _A42 * k2 + _A43 * k3))
        k5 = f(y + h * (_A51 * k1 + _A52 * k2 + _A53 * k3 + _A54 * k4))
        k6 = f(y + h * (_A61 * k1 + _A62 * k2 + _A63 * k3 + _A64 * k4 + _A65 * k5))
        y_new = y + h * (_B1 * k1 + _B3 * k3 + _B4 * k4 + _B5 * k5 + _B6 * k6)
        k7 = f(y_new)

        err = h * (
            _E1 * k1 + _E3 * k3 + _E4 * k4 + _E5 * k5 + _E6 * k6 + _E7 * k7
        )
        tol = atol + rtol * max(abs(y), abs(y_new))
        ratio = abs(err) / tol

        if ratio <= 1.0:
            t += h
            y = y_new
            k1 = k7  # FSAL
            grow = 5.0 if ratio == 0.0 else min(5.0, 0.9 * ratio ** -0.2)
            h = min(h * grow, max_step)
        else:
            h *= max(0.2, 0.9 * ratio ** -0.2)
            if h < 1e-15 * max(1.0, abs(t)):
                raise RuntimeError(f"rk45: step underflow at t={t} (y={y})")

    raise RuntimeError(f"rk45: exceeded {max_steps} steps (t={t} of {t_end})")
