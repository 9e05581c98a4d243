"""Second-order vector fields on the slit bundle: the nonholonomic field,
vertical controls, horizontal lifts of base fields, arc integration, and the
reachability rank of the generating family in raw coordinates."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import dual
from .connection import (
    BundleState,
    BundleTangent,
    default_eps_slit,
    horizontal_lift,
    projected_coeffs,
)
from .distribution import RANK_TOL, _numerical_rank, projector
from .errors import DomainExit, SlitBundleError, SlitViolation
from .ode import integrate as ode_integrate


@dataclass(frozen=True)
class SecondOrderControl:
    """A constant vertical input in frame coordinates."""

    u: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "u", np.asarray(self.u, dtype=float))


def nonholonomic_field(sys, s, eps_slit=None):
    """The horizontal lift of the fiber at itself: base part equals the
    fiber vector, connector part vanishes."""
    eps = default_eps_slit(sys, s) if eps_slit is None else eps_slit
    s.require_slit(sys, eps)
    return horizontal_lift(sys, s, s.fiber_ambient(sys))


def controlled_field(sys, s, u, eps_slit=None):
    """Second-order field with constant vertical input u: base part is the
    fiber vector, connector part is u."""
    if isinstance(u, SecondOrderControl):
        u = u.u
    eps = default_eps_slit(sys, s) if eps_slit is None else eps_slit
    s.require_slit(sys, eps)
    return BundleTangent(s, s.fiber_ambient(sys), np.asarray(u, dtype=float))


def make_raw_rhs(sys, u):
    """Raw (q, a) dynamics of the controlled second-order field, as a lean
    closure for the integration hot path:

        qdot = E(q) a
        adot_m = u_m - GD[m, j, i] qdot_j a_i
    """
    n = sys.n
    u = np.asarray(u, dtype=float)
    euclid = sys.metric.is_euclidean
    metric = sys.metric

    def rhs(_t, x):
        q = x[:n]
        a = x[n:]
        E, DE = sys.frame_value_jac(q)
        v = E @ a
        w = np.einsum("lij,j,i->l", DE, v, a)
        if euclid:
            G = E.T @ E
            b = E.T @ w
        else:
            g, dg = metric.value_deriv(q)
            # Gamma(v, v) without assembling the symbols:
            # g Gamma(v,v) = (D_v g) v - (1/2) grad g(v, v)
            rvec = np.einsum("rji,i,j->r", dg, v, v) - 0.5 * np.einsum("ijr,i,j->r", dg, v, v)
            w = w + np.linalg.solve(g, rvec)
            A = E.T @ g
            G = A @ E
            b = A @ w
        adot = u - np.linalg.solve(G, b)
        return np.concatenate([v, adot])

    return rhs


def horizontal_lift_field(sys, X, tol=1e-8):
    """Lift a D-valued base field to the slit bundle: base part X(q),
    connector part zero. Raises unless X is D-valued within tol."""

    def lifted(s):
        v = X(s.q)
        P = projector(sys, s.q)
        resid = np.linalg.norm(v - P @ v)
        if resid > tol * (1.0 + np.linalg.norm(v)):
            raise SlitBundleError(
                f"field {X.name or '<anonymous>'} is not D-valued at {s.q} (residual {resid:.3g})"
            )
        return horizontal_lift(sys, s, v)

    return lifted


@dataclass
class Arc:
    """One smooth piece: constant vertical control, duration, and the dense
    (t, q, a) samples of its integral curve."""

    u: np.ndarray
    tau: float
    ts: np.ndarray
    qs: np.ndarray
    a_s: np.ndarray

    @property
    def start_state(self):
        return BundleState(self.qs[0], self.a_s[0])

    @property
    def end_state(self):
        return BundleState(self.qs[-1], self.a_s[-1])


def integrate(sys, s0, schedule, rtol=1e-9, atol=1e-12, eps_slit=None, record=True):
    """Integrate the controlled dynamics through a schedule of
    (control, duration) pairs. The curve must stay in the slit bundle and
    the chart domain; violations raise with the partial result attached.

    Returns the list of Arcs; consecutive arcs share their junction state.
    """
    n = sys.n
    eps = default_eps_slit(sys, s0) if eps_slit is None else eps_slit
    s0.require_slit(sys, eps)
    state = np.concatenate([s0.q, s0.a])
    arcs = []
    t_base = 0.0
    for item in schedule:
        u, tau = item
        if isinstance(u, SecondOrderControl):
            u = u.u
        u = np.asarray(u, dtype=float)
        tau = float(tau)
        if tau < 0:
            raise SlitBundleError("arc durations must be nonnegative")
        rhs = make_raw_rhs(sys, u)

        def guard(x):
            return sys.in_domain(x[:n]) and sys.fiber_speed(x[:n], x[n:]) >= eps

        traj = ode_integrate(rhs, state, 0.0, tau, rtol=rtol, atol=atol, guard=guard, record=record)
        arc = Arc(
            u=u,
            tau=traj.t_end,
            ts=t_base + traj.ts,
            qs=traj.ys[:, :n].copy(),
            a_s=traj.ys[:, n:].copy(),
        )
        arcs.append(arc)
        if traj.status == "guard":
            q_end, a_end = traj.y_end[:n], traj.y_end[n:]
            if not sys.in_domain(q_end):
                raise DomainExit(t_base + traj.exit_time, arcs)
            raise SlitViolation(
                "fiber hit the slit floor during integration",
                time=t_base + traj.exit_time,
                trajectory=arcs,
            )
        if traj.status != "done":
            raise SlitBundleError(f"integration failed: {traj.status}")
        state = traj.y_end.copy()
        t_base += traj.t_end
    return arcs


# reachability of the generating family ---------------------------------------


def _generic_raw_xd(sys):
    """Generic-scalar raw dynamics of the nonholonomic field (u = 0); works
    on dual towers so iterated brackets differentiate it exactly."""
    n, k = sys.n, sys.k
    euclid = sys.metric.is_euclidean

    def f(xs):
        q = list(xs[:n])
        a = list(xs[n:])
        cols = [X.eval_generic(q) for X in sys.frame]
        v = [sum(cols[i][m] * a[i] for i in range(k)) for m in range(n)]
        # w_l = sum_i a_i (D_v E_i)_l  (+ Gamma(v, v) for non-flat metrics)
        w = [0.0] * n
        for i in range(k):
            dEi = sys.frame[i].jvp(q, v)
            for m in range(n):
                w[m] = w[m] + a[i] * dEi[m]
        if not euclid:
            gmat = sys.metric.eval_generic(q)
            dg_v = _metric_jvp(sys.metric, q, v)  # (D_v g)[r][j]
            grads = [_metric_jvp(sys.metric, q, _unit(n, r)) for r in range(n)]
            rvec = []
            for r in range(n):
                t1 = sum(dg_v[r][j] * v[j] for j in range(n))
                t2 = 0.5 * sum(grads[r][i][j] * v[i] * v[j] for i in range(n) for j in range(n))
                rvec.append(t1 - t2)
            gam_vv = dual.solve_linear(gmat, rvec)
            w = [w[m] + gam_vv[m] for m in range(n)]
            A = [[sum(cols[i][l] * gmat[l][m] for l in range(n)) for m in range(n)] for i in range(k)]
        else:
            A = [[cols[i][m] for m in range(n)] for i in range(k)]
        G = [[sum(A[i][m] * cols[j][m] for m in range(n)) for j in range(k)] for i in range(k)]
        b = [sum(A[i][m] * w[m] for m in range(n)) for i in range(k)]
        adot = dual.solve_linear(G, b)
        return v + [-x for x in adot]

    return f


def _metric_jvp(metric, q, v):
    n = metric.n

    def flat(xs):
        rows = metric.eval_generic(xs)
        return [rows[i][j] for i in range(n) for j in range(n)]

    _, tang = dual.jvp(flat, q, v)
    return [tang[i * n : (i + 1) * n] for i in range(n)]


def _unit(n, r):
    return [1.0 if i == r else 0.0 for i in range(n)]


def _gen_bracket(f, g):
    def h(xs):
        fx = f(xs)
        gx = g(xs)
        _, dgf = dual.jvp(g, xs, fx)
        _, dfg = dual.jvp(f, xs, gx)
        return [p - q for p, q in zip(dgf, dfg)]

    return h


def reachability_profile(sys, s, depth=4, tol=RANK_TOL):
    """Numerical ranks, per bracket depth, of the span at s of the family
    {nonholonomic field, unit vertical controls} and its left-nested
    iterated brackets, in raw (q, a) coordinates.

    The vertical generators are taken directly: the controlled fields differ
    from the nonholonomic one by constant vertical fields, so the two
    families span the same flag depth by depth. Enumeration stops early once
    the rank hits n + k.
    """
    n, k = sys.n, sys.k
    full = n + k
    x0 = list(np.concatenate([s.q, s.a]).astype(float))

    generators = [_generic_raw_xd(sys)]
    for i in range(k):
        e = [0.0] * (n + k)
        e[n + i] = 1.0
        generators.append(lambda xs, e=e: list(e))

    rows = []
    ranks = []
    level = {(j,): G for j, G in enumerate(generators)}
    for word in level:
        rows.append([dual.primal(y) for y in level[word](x0)])
    ranks.append(_numerical_rank(rows, tol))
    d = 1
    while d < depth and ranks[-1] < full:
        new_level = {}
        for word, F in level.items():
            for j, G in enumerate(generators):
                W = _gen_bracket(F, G)
                new_level[word + (j,)] = W
                rows.append([dual.primal(y) for y in W(x0)])
        level = new_level
        ranks.append(_numerical_rank(rows, tol))
        d += 1
    return ranks


def reachability_rank(sys, s, depth=4, tol=RANK_TOL):
    """Largest rank attained by :func:`reachability_profile`."""
    return reachability_profile(sys, s, depth=depth, tol=tol)[-1]
