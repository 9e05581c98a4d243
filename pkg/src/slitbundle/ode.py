"""Embedded adaptive Runge-Kutta 5(4) integration (Dormand-Prince pair).

One lean integrator serves chart flows, variational transport, and the
second-order bundle dynamics. It supports backward time, a boolean guard
predicate (domain / slit membership) with bisection onto the boundary via
the 4th-order dense interpolant, and optional per-step sample recording.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import StepSizeUnderflow

# Dormand-Prince 5(4) tableau
_C = np.array([0.0, 1 / 5, 3 / 10, 4 / 5, 8 / 9, 1.0, 1.0])
_A = [
    np.array([]),
    np.array([1 / 5]),
    np.array([3 / 40, 9 / 40]),
    np.array([44 / 45, -56 / 15, 32 / 9]),
    np.array([19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729]),
    np.array([9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656]),
    np.array([35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84]),
]
_B5 = np.array([35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84, 0.0])
# b5 - b4: coefficients of the embedded error estimate
_E = np.array([71 / 57600, 0.0, -71 / 16695, 71 / 1920, -17253 / 339200, 22 / 525, -1 / 40])
# dense-output polynomial block (quartic interpolant in the step fraction)
_P = np.array(
    [
        [1, -8048581381 / 2820520608, 8663915743 / 2820520608, -12715105075 / 11282082432],
        [0, 0, 0, 0],
        [0, 131558114200 / 32700410799, -68118460800 / 10900136933, 87487479700 / 32700410799],
        [0, -1754552775 / 470086768, 14199869525 / 1410260304, -10690763975 / 1880347072],
        [0, 127303824393 / 49829197408, -318862633887 / 49829197408, 701980252875 / 199316789632],
        [0, -282668133 / 205662961, 2019193451 / 616988883, -1453857185 / 822651844],
        [0, 40617522 / 29380423, -110615467 / 29380423, 69997945 / 29380423],
    ]
)

_SAFETY = 0.9
_MIN_FACTOR = 0.2
_MAX_FACTOR = 10.0


@dataclass
class Trajectory:
    """Dense record of one integration: accepted-step times and states."""

    ts: np.ndarray
    ys: np.ndarray
    status: str = "done"  # done | guard | max_steps
    exit_time: float | None = None
    nfev: int = 0

    @property
    def t_end(self):
        return float(self.ts[-1])

    @property
    def y_end(self):
        return self.ys[-1]


def _error_norm(err, y0, y1, rtol, atol):
    scale = atol + rtol * np.maximum(np.abs(y0), np.abs(y1))
    return float(np.sqrt(np.mean((err / scale) ** 2)))


def _initial_step(f, t0, y0, f0, direction, rtol, atol):
    # Hairer-Norsett-Wanner starting step heuristic
    scale = atol + rtol * np.abs(y0)
    d0 = np.sqrt(np.mean((y0 / scale) ** 2))
    d1 = np.sqrt(np.mean((f0 / scale) ** 2))
    h0 = 1e-6 if d0 < 1e-5 or d1 < 1e-5 else 0.01 * d0 / d1
    y1 = y0 + h0 * direction * f0
    f1 = f(t0 + h0 * direction, y1)
    d2 = np.sqrt(np.mean(((f1 - f0) / scale) ** 2)) / h0
    if d1 <= 1e-15 and d2 <= 1e-15:
        h1 = max(1e-6, h0 * 1e-3)
    else:
        h1 = (0.01 / max(d1, d2)) ** 0.2
    return min(100 * h0, h1)


def _dense_eval(y_old, h, K, theta):
    # interpolant: y(t_old + theta*h) for theta in [0, 1]
    powers = np.array([theta, theta**2, theta**3, theta**4])
    return y_old + h * (K.T @ (_P @ powers))


def integrate(
    f,
    y0,
    t0,
    t1,
    rtol=1e-9,
    atol=1e-12,
    max_steps=1_000_000,
    guard=None,
    record=True,
):
    """Integrate ``y' = f(t, y)`` from ``t0`` to ``t1`` (either direction).

    guard(y) -> bool must stay true; on violation the step is bisected onto
    the boundary through the dense interpolant and the trajectory is returned
    with status "guard" and the exit time set. With ``record=False`` only the
    endpoints are kept.
    """
    y = np.asarray(y0, dtype=float).copy()
    t = float(t0)
    t1 = float(t1)
    if guard is not None and not guard(y):
        traj = Trajectory(np.array([t]), y[None, :].copy(), status="guard", exit_time=t)
        return traj
    if t1 == t:
        return Trajectory(np.array([t]), y[None, :].copy())
    direction = 1.0 if t1 > t else -1.0
    nfev = 0
    k = f(t, y)
    nfev += 1
    h = _initial_step(f, t, y, k, direction, rtol, atol)
    nfev += 1
    h = min(h, abs(t1 - t))
    ts = [t]
    ys = [y.copy()]
    K = np.empty((7, y.size))
    steps = 0
    while (t1 - t) * direction > 0:
        if steps >= max_steps:
            traj = _finish(ts, ys, y, t, record, "max_steps")
            traj.nfev = nfev
            return traj
        h = min(h, abs(t1 - t))
        if h <= 16 * np.finfo(float).eps * max(abs(t), 1.0):
            raise StepSizeUnderflow(f"step size underflow at t = {t:.12g}")
        hs = h * direction
        K[0] = k
        for i in range(1, 7):
            yi = y + hs * (K[:i].T @ _A[i])
            K[i] = f(t + _C[i] * hs, yi)
        nfev += 6
        y_new = y + hs * (K.T @ _B5)
        err = hs * (K.T @ _E)
        norm = _error_norm(err, y, y_new, rtol, atol)
        steps += 1
        if norm > 1.0:
            h *= max(_MIN_FACTOR, _SAFETY * norm ** (-0.2))
            k = K[0]  # stage 0 unchanged on retry
            continue
        t_new = t + hs
        if guard is not None and not guard(y_new):
            t_exit, y_exit = _bisect_guard(guard, y, hs, K, t)
            ts.append(t_exit)
            ys.append(y_exit)
            traj = _finish(ts, ys, y_exit, t_exit, record, "guard")
            traj.exit_time = t_exit
            traj.nfev = nfev
            return traj
        t = t_new
        y = y_new
        k = K[6]  # FSAL
        if record:
            ts.append(t)
            ys.append(y.copy())
        factor = _MAX_FACTOR if norm == 0.0 else min(_MAX_FACTOR, _SAFETY * norm ** (-0.2))
        h *= max(_MIN_FACTOR, factor)
    traj = _finish(ts, ys, y, t, record, "done")
    traj.nfev = nfev
    return traj


def _finish(ts, ys, y, t, record, status):
    if record:
        if ts[-1] != t:
            ts.append(t)
            ys.append(y.copy())
        return Trajectory(np.array(ts), np.array(ys), status=status)
    return Trajectory(np.array([ts[0], t]), np.array([ys[0], y]), status=status)


def _bisect_guard(guard, y_old, hs, K, t_old):
    lo, hi = 0.0, 1.0  # guard(lo) true, guard(hi) false
    for _ in range(60):
        mid = 0.5 * (lo + hi)
        if guard(_dense_eval(y_old, hs, K, mid)):
            lo = mid
        else:
            hi = mid
    y_exit = _dense_eval(y_old, hs, K, lo)
    return t_old + lo * hs, y_exit


def rk4_fixed(f, y0, t0, t1, steps):
    """Classical fixed-step RK4; used for short parallel-transport hops."""
    y = np.asarray(y0, dtype=float).copy()
    h = (t1 - t0) / steps
    t = t0
    for _ in range(steps):
        k1 = f(t, y)
        k2 = f(t + h / 2, y + h / 2 * k1)
        k3 = f(t + h / 2, y + h / 2 * k2)
        k4 = f(t + h, y + h * k3)
        y = y + (h / 6) * (k1 + 2 * k2 + 2 * k3 + k4)
        t += h
    return y
