"""Ambient single-chart calculus: vector fields, Lie brackets, flows,
and flow pushforwards.

Points are plain numpy arrays of chart coordinates. A :class:`Tangent`
tags a coordinate vector with its base point. Vector fields evaluate
generically (floats or dual numbers), so Jacobians and deeper derivatives
come from forward mode; opaque fields fall back to central differences.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import dual
from .errors import DomainExit, SlitBundleError
from .ode import integrate

_EPS3 = np.finfo(float).eps ** (1 / 3)  # central-difference step scale


def as_point(p, n=None):
    p = np.asarray(p, dtype=float)
    if p.ndim != 1:
        raise ValueError("a point must be a flat coordinate vector")
    if n is not None and p.size != n:
        raise ValueError(f"point has {p.size} coordinates, expected {n}")
    if not np.all(np.isfinite(p)):
        raise ValueError("point coordinates must be finite")
    return p


@dataclass(frozen=True)
class Tangent:
    """A tangent vector: chart components attached to a base point."""

    base: np.ndarray
    comps: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "base", as_point(self.base))
        object.__setattr__(self, "comps", as_point(self.comps))
        if self.base.size != self.comps.size:
            raise ValueError("base point and components disagree in dimension")


class VectorField:
    """A smooth vector field on an open chart region.

    ``comps`` is the generic evaluator: a callable taking a list of n
    scalars (floats or duals) and returning n scalars. ``value``/``jac``/
    ``hess`` are optional fast numpy closures; anything missing is derived
    from ``comps`` by forward mode, or by central differences when only an
    opaque ``value`` exists.
    """

    def __init__(self, n, comps=None, value=None, jac=None, hess=None, domain=None, name=""):
        if comps is None and value is None:
            raise ValueError("a vector field needs comps or value")
        self.n = n
        self.comps = comps
        self._value = value
        self._jac = jac
        self._hess = hess
        self.domain = domain
        self.name = name

    @classmethod
    def from_expressions(cls, exprs, domain=None, name=""):
        n = exprs[0].n
        if len(exprs) != n:
            raise ValueError("need one component expression per coordinate")

        def comps(xs):
            return [e(xs) for e in exprs]

        return cls(n, comps=comps, domain=domain, name=name)

    @classmethod
    def constant(cls, vec, name=""):
        vec = np.asarray(vec, dtype=float)
        n = vec.size

        def comps(xs):
            return [float(v) for v in vec]

        return cls(
            n,
            comps=comps,
            value=lambda q: vec.copy(),
            jac=lambda q: np.zeros((n, n)),
            hess=lambda q: np.zeros((n, n, n)),
            name=name,
        )

    def in_domain(self, q):
        return True if self.domain is None else bool(self.domain(q))

    def __call__(self, q):
        if self._value is not None:
            return np.asarray(self._value(np.asarray(q, dtype=float)), dtype=float)
        return np.array([dual.primal(c) for c in self.comps([float(x) for x in q])])

    def eval_generic(self, xs):
        if self.comps is None:
            raise SlitBundleError(
                f"field {self.name or '<anonymous>'} is opaque: no generic evaluator"
            )
        return self.comps(xs)

    def jacobian(self, q):
        """J[m, j] = d comp_m / d x_j."""
        q = np.asarray(q, dtype=float)
        if self._jac is not None:
            return np.asarray(self._jac(q), dtype=float)
        if self.comps is not None:
            _, jac = dual.value_and_jacobian(self.comps, list(q))
            return jac
        return _fd_jacobian(self, q)

    def value_and_jacobian(self, q):
        q = np.asarray(q, dtype=float)
        if self._value is not None and self._jac is not None:
            return self(q), np.asarray(self._jac(q), dtype=float)
        if self.comps is not None:
            vals, jac = dual.value_and_jacobian(self.comps, list(q))
            return vals, jac
        return self(q), _fd_jacobian(self, q)

    def hessian(self, q):
        """H[m, j, p] = d^2 comp_m / dx_j dx_p."""
        q = np.asarray(q, dtype=float)
        if self._hess is not None:
            return np.asarray(self._hess(q), dtype=float)
        if self.comps is not None:
            _, _, hess = dual.value_jacobian_hessian(self.comps, list(q))
            return hess
        return _fd_hessian(self, q)

    def jvp(self, xs, vs):
        """Directional derivative, tower safe; used by bracket recursions."""
        if self.comps is not None:
            _, tang = dual.jvp(self.comps, xs, vs)
            return tang
        q = np.array([dual.primal(x) for x in xs])
        v = np.array([dual.primal(x) for x in vs])
        return list(_fd_jacobian(self, q) @ v)


def _fd_jacobian(X, q):
    n = q.size
    h = _EPS3 * (1.0 + float(np.linalg.norm(q)))
    jac = np.empty((n, n))
    for j in range(n):
        dq = np.zeros(n)
        dq[j] = h
        jac[:, j] = (X(q + dq) - X(q - dq)) / (2 * h)
    return jac


def _fd_hessian(X, q):
    n = q.size
    h = (np.finfo(float).eps ** 0.25) * (1.0 + float(np.linalg.norm(q)))
    hess = np.empty((n, n, n))
    for p in range(n):
        dq = np.zeros(n)
        dq[p] = h
        hess[:, :, p] = (_fd_jacobian(X, q + dq) - _fd_jacobian(X, q - dq)) / (2 * h)
    return hess


def lie_bracket(X, Y, p):
    """[X, Y](p) = DY(p) X(p) - DX(p) Y(p), as a Tangent at p."""
    p = as_point(p)
    if not (X.in_domain(p) and Y.in_domain(p)):
        raise DomainExit(0.0)
    vx, jx = X.value_and_jacobian(p)
    vy, jy = Y.value_and_jacobian(p)
    return Tangent(p, jy @ vx - jx @ vy)


def bracket_field(X, Y, name=""):
    """The field [X, Y]; generic evaluation nests duals one level deeper."""

    def comps(xs):
        fx = X.eval_generic(xs)
        gy = Y.eval_generic(xs)
        dyx = Y.jvp(xs, fx)
        dxy = X.jvp(xs, gy)
        return [a - b for a, b in zip(dyx, dxy)]

    def value(q):
        vx, jx = X.value_and_jacobian(q)
        vy, jy = Y.value_and_jacobian(q)
        return jy @ vx - jx @ vy

    generic = comps if (X.comps is not None and Y.comps is not None) else None
    return VectorField(X.n, comps=generic, value=value, name=name or f"[{X.name},{Y.name}]")


def flow(X, p, t, rtol=1e-9, atol=1e-12, max_steps=1_000_000):
    """Flow of X from p for time t. Returns (endpoint, Trajectory).

    Integration halts at the domain boundary (raises DomainExit carrying
    the partial trajectory and exit time).
    """
    p = as_point(p, X.n)
    guard = None if X.domain is None else (lambda y: X.domain(y))
    traj = integrate(
        lambda _t, y: X(y), p, 0.0, float(t), rtol=rtol, atol=atol, max_steps=max_steps, guard=guard
    )
    if traj.status == "guard":
        raise DomainExit(traj.exit_time, traj)
    if traj.status != "done":
        raise SlitBundleError(f"flow did not finish: {traj.status}")
    return traj.y_end.copy(), traj


def pushforward(flowspec, v, rtol=1e-9, atol=1e-12):
    """Transport ``v`` by the composition of flows in ``flowspec``.

    ``flowspec`` is a list of (VectorField, duration); the composition is
    applied left to right. The linearized (variational) equation rides in
    the same extended ODE system as the state.
    """
    base = v.base.copy()
    comps = v.comps.copy()
    n = base.size
    for X, t in flowspec:
        if t == 0.0:
            continue

        def rhs(_t, z, X=X):
            q, w = z[:n], z[n:]
            val, jac = X.value_and_jacobian(q)
            return np.concatenate([val, jac @ w])

        guard = None if X.domain is None else (lambda z, X=X: X.domain(z[:n]))
        traj = integrate(
            rhs,
            np.concatenate([base, comps]),
            0.0,
            float(t),
            rtol=rtol,
            atol=atol,
            guard=guard,
            record=False,
        )
        if traj.status == "guard":
            raise DomainExit(traj.exit_time, traj)
        base, comps = traj.y_end[:n].copy(), traj.y_end[n:].copy()
    return Tangent(base, comps)
