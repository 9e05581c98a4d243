"""Connections on the chart's tangent bundle and on the frame subbundle:
Levi-Civita and projected Christoffel data, connectors, horizontal and
vertical lifts, curvature, fiber and parallel derivatives of bundle
morphisms, and the bracket of bundle vector fields assembled from them.

Index conventions used throughout:

    E[m, i]          component m of frame field i
    DE[m, i, j]      d E[m, i] / d x_j
    D2E[m, i, j, p]  second derivatives
    g[i, j], Dg[i, j, p], D2g[i, j, p, r]
    Gam[m, i, j]     Levi-Civita Christoffel symbols, symmetric in (i, j)
    GD[m, j, i]      projected coefficients: nabla^D_{d_j} E_i = GD[m, j, i] E_m
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .chart import as_point
from .errors import MetricNotPositiveDefinite, SlitViolation
from .ode import rk4_fixed

_EPS3 = np.finfo(float).eps ** (1 / 3)


# Christoffel data ----------------------------------------------------------


def christoffel(sys, p):
    """Levi-Civita symbols Gam[m, i, j] of the system metric at p."""
    p = as_point(p, sys.n)
    g, dg = sys.metric.value_deriv(p)
    return _christoffel_from(g, dg)


def _christoffel_from(g, dg):
    try:
        ginv = np.linalg.inv(g)
    except np.linalg.LinAlgError:
        raise MetricNotPositiveDefinite("metric is singular") from None
    # term[l, i, j] = d_i g_lj + d_j g_li - d_l g_ij
    term = np.einsum("lji->lij", dg) + dg - np.einsum("ijl->lij", dg)
    return 0.5 * np.einsum("ml,lij->mij", ginv, term)


def _christoffel_with_derivative(g, dg, d2g):
    ginv = np.linalg.inv(g)
    term = np.einsum("lji->lij", dg) + dg - np.einsum("ijl->lij", dg)
    gam = 0.5 * np.einsum("ml,lij->mij", ginv, term)
    # d_p ginv = -ginv dg ginv
    dginv = -np.einsum("ma,abp,bl->mlp", ginv, dg, ginv)
    dterm = (
        np.einsum("ljip->lijp", d2g)
        + np.einsum("lijp->lijp", d2g)
        - np.einsum("ijlp->lijp", d2g)
    )
    dgam = 0.5 * (
        np.einsum("mlp,lij->mijp", dginv, term) + np.einsum("ml,lijp->mijp", ginv, dterm)
    )
    return gam, dgam


# projected connection ------------------------------------------------------


@dataclass
class ConnectionCoeffs:
    """Levi-Civita symbols and the projected frame coefficients at a point."""

    gamma: np.ndarray  # (n, n, n)
    gamma_d: np.ndarray  # (k, n, k): GD[m, j, i]


def projected_coeffs(sys, p):
    """Coefficients of nabla^D = P nabla in the frame at p."""
    p = as_point(p, sys.n)
    E, DE = sys.frame_value_jac(p)
    if sys.metric.is_euclidean:
        gam = np.zeros((sys.n,) * 3)
        nabla = np.einsum("mij->mji", DE)  # N[m, j, i] = DE[m, i, j]
        A = E.T
    else:
        g, dg = sys.metric.value_deriv(p)
        gam = _christoffel_from(g, dg)
        nabla = np.einsum("mij->mji", DE) + np.einsum("mjr,ri->mji", gam, E)
        A = E.T @ g
    G = A @ E
    gd = np.linalg.solve(G, np.einsum("rl,lji->rji", A, nabla).reshape(sys.k, -1)).reshape(
        sys.k, sys.n, sys.k
    )
    return ConnectionCoeffs(gamma=gam, gamma_d=gd)


def projected_coeffs_with_derivative(sys, p):
    """(GD, dGD) with dGD[m, j, i, p]; exact assembly from frame and metric
    first and second derivatives."""
    p = as_point(p, sys.n)
    n, k = sys.n, sys.k
    E, DE = sys.frame_value_jac(p)
    D2E = sys.frame_hess(p)
    if sys.metric.is_euclidean:
        g = np.eye(n)
        gam = np.zeros((n, n, n))
        dgam = np.zeros((n, n, n, n))
        A = E.T
        dA = np.einsum("lip->ilp", DE)
    else:
        g, dg, d2g = sys.metric.value_deriv_hess(p)
        gam, dgam = _christoffel_with_derivative(g, dg, d2g)
        A = E.T @ g
        dA = np.einsum("lip,lm->imp", DE, g) + np.einsum("li,lmp->imp", E, dg)
    nabla = np.einsum("mij->mji", DE) + np.einsum("mjr,ri->mji", gam, E)
    dnabla = (
        np.einsum("mijp->mjip", D2E)
        + np.einsum("mjrp,ri->mjip", dgam, E)
        + np.einsum("mjr,rip->mjip", gam, DE)
    )
    G = A @ E
    dG = np.einsum("imp,mj->ijp", dA, E) + np.einsum("im,mjp->ijp", A, DE)
    C = np.linalg.inv(G)
    dC = -np.einsum("ir,rsp,sj->ijp", C, dG, C)
    AN = np.einsum("rl,lji->rji", A, nabla)
    gd = np.einsum("mr,rji->mji", C, AN)
    dAN = np.einsum("rlp,lji->rjip", dA, nabla) + np.einsum("rl,ljip->rjip", A, dnabla)
    dgd = np.einsum("mrp,rji->mjip", dC, AN) + np.einsum("mr,rjip->mjip", C, dAN)
    return gd, dgd


# bundle states and tangents -------------------------------------------------


@dataclass(frozen=True)
class BundleState:
    """A point of the total space D: base point q and frame coordinates a
    of the fiber vector v = sum_i a_i E_i(q)."""

    q: np.ndarray
    a: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "q", np.asarray(self.q, dtype=float))
        object.__setattr__(self, "a", np.asarray(self.a, dtype=float))

    def fiber_ambient(self, sys):
        return sys.frame_matrix(self.q) @ self.a

    def speed(self, sys):
        return sys.fiber_speed(self.q, self.a)

    def require_slit(self, sys, eps_slit):
        if self.speed(sys) < eps_slit:
            raise SlitViolation(f"state is within {eps_slit} of the zero section")
        return self


@dataclass(frozen=True)
class BundleTangent:
    """A tangent vector to D at ``at``, stored by its projection (base,
    ambient components) and connector part (conn, frame components)."""

    at: BundleState
    base: np.ndarray
    conn: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "base", np.asarray(self.base, dtype=float))
        object.__setattr__(self, "conn", np.asarray(self.conn, dtype=float))


def default_eps_slit(sys, s):
    """Open numerical floor for slit-bundle membership, scaled to the state."""
    return 1e-6 * max(1.0, s.speed(sys))


def connector(sys, q, a, qdot, adot, coeffs=None):
    """Connector of the raw bundle curve data (q, a, qdot, adot), in frame
    components: kappa_m = adot_m + GD[m, j, i] qdot_j a_i."""
    gd = (coeffs or projected_coeffs(sys, q)).gamma_d
    return np.asarray(adot, dtype=float) + np.einsum("mji,j,i->m", gd, qdot, a)


def horizontal_lift(sys, s, w):
    """Horizontal lift of the base tangent w at s: connector part zero."""
    w = np.asarray(w, dtype=float)
    return BundleTangent(s, w, np.zeros(sys.k))


def vertical_lift(sys, s, c):
    """Vertical lift of the fiber vector with frame coordinates c."""
    c = np.asarray(c, dtype=float)
    return BundleTangent(s, np.zeros(sys.n), c)


def tangent_to_raw(sys, X, coeffs=None):
    """Raw (qdot, adot) coordinates of a BundleTangent."""
    s = X.at
    gd = (coeffs or projected_coeffs(sys, s.q)).gamma_d
    adot = X.conn - np.einsum("mji,j,i->m", gd, X.base, s.a)
    return np.concatenate([X.base, adot])


def tangent_from_raw(sys, s, raw, coeffs=None):
    """BundleTangent from raw (qdot, adot) coordinates at s."""
    raw = np.asarray(raw, dtype=float)
    qdot, adot = raw[: sys.n], raw[sys.n :]
    gd = (coeffs or projected_coeffs(sys, s.q)).gamma_d
    conn = adot + np.einsum("mji,j,i->m", gd, qdot, s.a)
    return BundleTangent(s, qdot, conn)


# curvature ------------------------------------------------------------------


def curvature(sys, p, u, w):
    """R^D(u, w) acting on frame coordinates, as a k x k matrix.

    Convention R(X, Y) = nabla_X nabla_Y - nabla_Y nabla_X - nabla_[X, Y],
    evaluated on coordinate fields with exact coefficient derivatives.
    """
    u = np.asarray(u.comps if hasattr(u, "comps") else u, dtype=float)
    w = np.asarray(w.comps if hasattr(w, "comps") else w, dtype=float)
    gd, dgd = projected_coeffs_with_derivative(sys, p)
    # F[m, b, i, j]: frame-coordinate matrix of R(d_i, d_j) E_b
    F = (
        np.einsum("mjbi->mbij", dgd)
        - np.einsum("mibj->mbij", dgd)
        + np.einsum("mil,ljb->mbij", gd, gd)
        - np.einsum("mjl,lib->mbij", gd, gd)
    )
    return np.einsum("mbij,i,j->mb", F, u, w)


# parallel transport ---------------------------------------------------------


def parallel_transport_line(sys, q, a, z, t, steps=8):
    """Transport the fiber (frame coords a) along the straight chart segment
    q + s z, s in [0, t], with nabla^D. Returns (q_end, a_end)."""
    q = np.asarray(q, dtype=float)
    z = np.asarray(z, dtype=float)

    def rhs(s, avec):
        gd = projected_coeffs(sys, q + s * z).gamma_d
        return -np.einsum("mji,j,i->m", gd, z, avec)

    a_end = rk4_fixed(rhs, np.asarray(a, dtype=float), 0.0, float(t), steps)
    return q + t * z, a_end


# bundle morphisms and their derivatives --------------------------------------


@dataclass
class Morphism:
    """A fiber-preserving smooth map out of D over the identity of the base.

    ``fn(q, a)`` returns the target fiber coordinates. ``target`` selects the
    connection used for the target connector: the frame subbundle ('D'), the
    tangent bundle with Levi-Civita ('TM'), or a trivial bundle ('line',
    connector is the plain derivative).
    """

    fn: object
    target: str = "D"

    def __call__(self, q, a):
        return np.atleast_1d(np.asarray(self.fn(q, a), dtype=float))


def _target_correction(sys, target, q, z, c):
    if target == "D":
        gd = projected_coeffs(sys, q).gamma_d
        return np.einsum("mji,j,i->m", gd, z, c)
    if target == "TM":
        gam = christoffel(sys, q)
        return np.einsum("mjl,j,l->m", gam, z, c)
    return np.zeros_like(c)


def fiber_derivative(sys, b, s, w):
    """Fb(s) . w: derivative of the morphism within the fiber. No connection
    enters; central differences in the fiber coordinates."""
    w = np.asarray(w, dtype=float)
    h = _EPS3 * (1.0 + float(np.linalg.norm(s.a))) / (1.0 + float(np.linalg.norm(w)))
    return (b(s.q, s.a + h * w) - b(s.q, s.a - h * w)) / (2 * h)


def parallel_derivative(sys, b, s, z, h=None, steps=8):
    """Pb(s) . z: connector of the morphism along the horizontal lift of z.

    Computed by parallel-transporting s a short way along z, differencing b,
    Richardson-extrapolating (h and h/2), and applying the target connector
    correction.
    """
    z = np.asarray(z.comps if hasattr(z, "comps") else z, dtype=float)
    nz = float(np.linalg.norm(z))
    if nz == 0.0:
        return np.zeros_like(b(s.q, s.a))
    if h is None:
        h = 1e-3 * (1.0 + float(np.linalg.norm(s.q))) / (1.0 + nz)

    def diff(step):
        qp, ap = parallel_transport_line(sys, s.q, s.a, z, step, steps)
        qm, am = parallel_transport_line(sys, s.q, s.a, z, -step, steps)
        return (b(qp, ap) - b(qm, am)) / (2 * step)

    d1 = diff(h)
    d2 = diff(h / 2)
    deriv = (4.0 * d2 - d1) / 3.0
    return deriv + _target_correction(sys, b.target, s.q, z, b(s.q, s.a))


def morphism_connector_of_tangent(sys, b, s, raw, h=None):
    """kappa_F . Tb . X for a raw tangent X = (qdot, adot) at s, computed by
    direct differentiation along the straight raw curve. This is the
    raw-coordinate left side of the composite tangent-map identity."""
    raw = np.asarray(raw, dtype=float)
    qdot, adot = raw[: sys.n], raw[sys.n :]
    scale = 1.0 + float(np.linalg.norm(raw))
    if h is None:
        h = 1e-4 * (1.0 + float(np.linalg.norm(s.q))) / scale

    def diff(step):
        cp = b(s.q + step * qdot, s.a + step * adot)
        cm = b(s.q - step * qdot, s.a - step * adot)
        return (cp - cm) / (2 * step)

    d1 = diff(h)
    d2 = diff(h / 2)
    deriv = (4.0 * d2 - d1) / 3.0
    return deriv + _target_correction(sys, b.target, s.q, qdot, b(s.q, s.a))


# bracket of bundle fields -----------------------------------------------------


def bundle_bracket(sys, X, Y, s):
    """[X, Y] at s for vector fields on D, assembled from fiber and parallel
    derivatives of the component maps plus the curvature term."""
    Xs = X(s)
    Ys = Y(s)
    kx, tx = Xs.conn, Xs.base
    ky, ty = Ys.conn, Ys.base

    def conn_map(F):
        return Morphism(lambda q, a: F(BundleState(q, a)).conn, target="D")

    def base_map(F):
        return Morphism(lambda q, a: F(BundleState(q, a)).base, target="TM")

    kX, kY = conn_map(X), conn_map(Y)
    tX, tY = base_map(X), base_map(Y)

    conn = (
        fiber_derivative(sys, kY, s, kx)
        + parallel_derivative(sys, kY, s, tx)
        - fiber_derivative(sys, kX, s, ky)
        - parallel_derivative(sys, kX, s, ty)
        + curvature(sys, s.q, ty, tx) @ s.a
    )
    base = (
        fiber_derivative(sys, tY, s, kx)
        + parallel_derivative(sys, tY, s, tx)
        - fiber_derivative(sys, tX, s, ky)
        - parallel_derivative(sys, tX, s, ty)
    )
    return BundleTangent(s, base, conn)


def raw_chart_bracket(sys, X, Y, s):
    """Independent oracle: view X, Y as fields on the raw (q, a) chart of D,
    take the coordinate Lie bracket with central differences, and convert
    back to (base, conn) form."""
    n, k = sys.n, sys.k

    def raw_field(F):
        def Z(x):
            st = BundleState(x[:n], x[n:])
            return tangent_to_raw(sys, F(st))

        return Z

    ZX, ZY = raw_field(X), raw_field(Y)
    x0 = np.concatenate([s.q, s.a])
    h = _EPS3 * (1.0 + float(np.linalg.norm(x0)))
    dim = n + k
    zx0 = ZX(x0)
    zy0 = ZY(x0)
    JX = np.empty((dim, dim))
    JY = np.empty((dim, dim))
    for j in range(dim):
        dx = np.zeros(dim)
        dx[j] = h
        JX[:, j] = (ZX(x0 + dx) - ZX(x0 - dx)) / (2 * h)
        JY[:, j] = (ZY(x0 + dx) - ZY(x0 - dx)) / (2 * h)
    W = JY @ zx0 - JX @ zy0
    return tangent_from_raw(sys, s, W)
