"""Constant-rank distributions given by a frame: metric projectors, growth
vectors, the (sampled, depth-capped) bracket-generating test, and a
flow-pushforward estimate of the orbit dimension."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from . import dual
from .chart import Tangent, VectorField, as_point, bracket_field, flow, pushforward
from .errors import (
    DomainExit,
    MetricNotPositiveDefinite,
    RankDeficientFrame,
    SlitBundleError,
)

log = logging.getLogger(__name__)

RANK_TOL = 1e-7  # relative singular-value cutoff for all rank decisions
DEPTH_CAP = 6


class MetricField:
    """A Riemannian metric on the chart: entries as generic scalar maps."""

    def __init__(self, n, entries=None, is_euclidean=False):
        # entries: callable(list of n scalars) -> flat list of n*n scalars
        self.n = n
        self.entries = entries
        self.is_euclidean = is_euclidean

    @classmethod
    def euclidean(cls, n):
        return cls(n, is_euclidean=True)

    @classmethod
    def from_expressions(cls, rows):
        n = len(rows)
        exprs = [e for row in rows for e in row]

        def entries(xs):
            return [e(xs) for e in exprs]

        return cls(n, entries=entries)

    def value(self, q):
        if self.is_euclidean:
            return np.eye(self.n)
        vals = self.entries([float(x) for x in q])
        return np.array([dual.primal(v) for v in vals]).reshape(self.n, self.n)

    def value_deriv(self, q):
        """(g, Dg) with Dg[i, j, p] = d g_ij / d x_p."""
        n = self.n
        if self.is_euclidean:
            return np.eye(n), np.zeros((n, n, n))
        vals, jac = dual.value_and_jacobian(self.entries, [float(x) for x in q])
        return vals.reshape(n, n), jac.reshape(n, n, n)

    def value_deriv_hess(self, q):
        n = self.n
        if self.is_euclidean:
            return np.eye(n), np.zeros((n, n, n)), np.zeros((n, n, n, n))
        vals, jac, hess = dual.value_jacobian_hessian(self.entries, [float(x) for x in q])
        return vals.reshape(n, n), jac.reshape(n, n, n), hess.reshape(n, n, n, n)

    def eval_generic(self, xs):
        if self.is_euclidean:
            eye = np.eye(self.n)
            return [[float(eye[i, j]) for j in range(self.n)] for i in range(self.n)]
        flat = self.entries(xs)
        return [list(flat[i * self.n : (i + 1) * self.n]) for i in range(self.n)]


@dataclass
class System:
    """Chart dimension, a frame of k fields spanning the subbundle, a metric,
    and the chart-region predicate."""

    n: int
    frame: list
    metric: MetricField
    domain: object = None
    name: str = ""
    sample_lo: np.ndarray = None
    sample_hi: np.ndarray = None

    def __post_init__(self):
        self.k = len(self.frame)
        if not (2 <= self.k <= self.n):
            raise SlitBundleError(f"frame rank must satisfy 2 <= k <= n, got k={self.k}, n={self.n}")
        if self.sample_lo is None:
            self.sample_lo = -1.5 * np.ones(self.n)
        if self.sample_hi is None:
            self.sample_hi = 1.5 * np.ones(self.n)
        self.sample_lo = np.asarray(self.sample_lo, dtype=float)
        self.sample_hi = np.asarray(self.sample_hi, dtype=float)

    def in_domain(self, q):
        return True if self.domain is None else bool(self.domain(np.asarray(q, dtype=float)))

    def frame_matrix(self, q):
        """E[m, i] = component m of frame field i at q."""
        return np.column_stack([X(q) for X in self.frame])

    def frame_value_jac(self, q):
        """(E, DE) with DE[m, i, j] = d E[m, i] / d x_j."""
        cols = []
        jacs = []
        for X in self.frame:
            v, j = X.value_and_jacobian(q)
            cols.append(v)
            jacs.append(j)
        E = np.column_stack(cols)
        DE = np.stack(jacs, axis=1)  # (n, k, n)
        return E, DE

    def frame_hess(self, q):
        """D2E[m, i, j, p] = d^2 E[m, i] / dx_j dx_p."""
        return np.stack([X.hessian(q) for X in self.frame], axis=1)

    def gram(self, q):
        E = self.frame_matrix(q)
        if self.metric.is_euclidean:
            return E.T @ E
        return E.T @ self.metric.value(q) @ E

    def fiber_speed(self, q, a):
        """g-norm of the fiber vector with frame coordinates a."""
        G = self.gram(q)
        return float(np.sqrt(max(0.0, a @ G @ a)))

    def frame_coords(self, q, v):
        """g-orthogonal coordinates of v in the frame and the residual."""
        E = self.frame_matrix(q)
        g = self.metric.value(q)
        G = E.T @ g @ E
        a = np.linalg.solve(G, E.T @ (g @ v))
        return a, v - E @ a

    def sample_points(self, rng, count, max_tries=200):
        pts = []
        for _ in range(count * max_tries):
            q = rng.uniform(self.sample_lo, self.sample_hi)
            if self.in_domain(q):
                pts.append(q)
                if len(pts) == count:
                    return pts
        raise SlitBundleError("could not sample enough in-domain points")

    def check_invariants(self, points, rank_tol=RANK_TOL):
        """Frame independence and metric positivity at every given point."""
        for q in points:
            E = self.frame_matrix(q)
            sv = np.linalg.svd(E, compute_uv=False)
            if sv[-1] < rank_tol * sv[0]:
                raise RankDeficientFrame(f"frame nearly dependent at {q}")
            try:
                np.linalg.cholesky(self.metric.value(q))
            except np.linalg.LinAlgError:
                raise MetricNotPositiveDefinite(f"metric not positive definite at {q}") from None
        return True


@dataclass
class GrowthVector:
    dims: list
    point: np.ndarray
    depth: int

    @property
    def reaches(self):
        return bool(self.dims) and self.dims[-1] is not None

    def __iter__(self):
        return iter(self.dims)


def projector(sys, p):
    """g-orthogonal projection of T_pM onto the frame span. P @ P = P and
    g P is symmetric."""
    p = as_point(p, sys.n)
    E = sys.frame_matrix(p)
    sv = np.linalg.svd(E, compute_uv=False)
    if sv[-1] < RANK_TOL * sv[0]:
        raise RankDeficientFrame(f"frame rank-deficient at {p}")
    g = sys.metric.value(p)
    G = E.T @ g @ E
    return E @ np.linalg.solve(G, E.T @ g)


def _word_fields(sys, depth):
    """Left-nested bracket words [[...[E_i1, E_i2], ...], E_id] as fields."""
    k = sys.k
    by_depth = {1: {(i,): sys.frame[i] for i in range(k)}}
    for d in range(2, depth + 1):
        level = {}
        for word, F in by_depth[d - 1].items():
            for i in range(k):
                level[word + (i,)] = bracket_field(F, sys.frame[i])
        by_depth[d] = level
    return by_depth


def _numerical_rank(rows, tol):
    if not rows:
        return 0
    M = np.array(rows)
    sv = np.linalg.svd(M, compute_uv=False)
    if sv.size == 0 or sv[0] == 0.0:
        return 0
    return int(np.sum(sv >= tol * sv[0]))


def growth_vector(sys, p, depth=DEPTH_CAP, tol=RANK_TOL):
    """Ranks of the iterated-bracket spans at p, one entry per depth.

    Stops early once the rank reaches the chart dimension.
    """
    p = as_point(p, sys.n)
    by_depth = _word_fields(sys, depth)
    dims = []
    rows = []
    for d in range(1, depth + 1):
        for F in by_depth[d].values():
            rows.append(F(p))
        r = _numerical_rank(rows, tol)
        dims.append(r)
        if r >= sys.n:
            break
    return GrowthVector(dims, p, depth)


@dataclass
class BracketVerdict:
    value: bool
    inconclusive: bool
    label: str
    per_point: list = field(default_factory=list)

    def __bool__(self):
        return self.value


def is_bracket_generating(sys, points, depth=DEPTH_CAP, tol=RANK_TOL):
    """Sampled, depth-capped test. True only when every sampled growth vector
    reaches n within the cap. A point still growing at the cap makes the
    verdict inconclusive rather than false: the cap binds there."""
    if len(points) == 0:
        raise SlitBundleError("need a nonempty sample set")
    per_point = []
    all_reach = True
    any_growing_at_cap = False
    for q in points:
        gv = growth_vector(sys, q, depth=depth, tol=tol)
        reached = gv.dims[-1] >= sys.n
        growing = (
            not reached
            and len(gv.dims) >= 2
            and gv.dims[-1] > gv.dims[-2]
        )
        per_point.append((gv, reached))
        all_reach = all_reach and reached
        any_growing_at_cap = any_growing_at_cap or growing
    if all_reach:
        label = "bracket-generating (sampled, depth-capped)"
        return BracketVerdict(True, False, label, per_point)
    if any_growing_at_cap:
        label = "inconclusive (depth cap reached while spans still growing)"
        return BracketVerdict(False, True, label, per_point)
    label = "not bracket-generating (sampled, depth-capped)"
    return BracketVerdict(False, False, label, per_point)


def orbit_dimension_estimate(sys, p, trials=32, seed=0, max_legs=6, t_max=0.5):
    """Lower bound for the orbit tangent dimension at p.

    Sampled pushforwards of frame vectors under random finite compositions
    of frame-field flows that end at p; flows that exit the domain are
    skipped and logged. Monotone nondecreasing in ``trials`` by construction.
    """
    p = as_point(p, sys.n)
    rng = np.random.default_rng([int(seed), 0x0F1B])
    rows = [sys.frame[i](p) for i in range(sys.k)]
    for _ in range(trials):
        legs = int(rng.integers(1, max_legs + 1))
        idx = rng.integers(0, sys.k, size=legs)
        ts = rng.uniform(-t_max, t_max, size=legs)
        which = int(rng.integers(0, sys.k))
        try:
            # walk backward from p to the composition's start point
            x = p.copy()
            for i, t in zip(idx[::-1], ts[::-1]):
                x, _ = flow(sys.frame[i], x, -float(t))
            v0 = sys.frame[which](x)
            spec = [(sys.frame[i], float(t)) for i, t in zip(idx, ts)]
            moved = pushforward(spec, Tangent(x, v0))
            if np.linalg.norm(moved.base - p) > 1e-6 * (1 + np.linalg.norm(p)):
                log.info("composition did not return to base point; skipped")
                continue
            rows.append(moved.comps)
        except DomainExit:
            log.info("flow left the domain during orbit sampling; skipped")
            continue
    return _numerical_rank(rows, RANK_TOL)


def frame_recombination(sys, coeffs, name=""):
    """A new System whose frame is an invertible constant recombination
    C[i][j] * E_j of the old one. Used by invariance tests."""
    coeffs = np.asarray(coeffs, dtype=float)
    if abs(np.linalg.det(coeffs)) < 1e-12:
        raise SlitBundleError("recombination matrix must be invertible")
    new_frame = []
    for i in range(sys.k):
        row = coeffs[i]

        def comps(xs, row=row):
            cols = [X.eval_generic(xs) for X in sys.frame]
            return [sum(row[j] * cols[j][m] for j in range(sys.k)) for m in range(sys.n)]

        def value(q, row=row):
            return sys.frame_matrix(q) @ row

        new_frame.append(VectorField(sys.n, comps=comps, value=value, name=f"R{i}"))
    return System(
        n=sys.n,
        frame=new_frame,
        metric=sys.metric,
        domain=sys.domain,
        name=name or f"{sys.name}-recombined",
        sample_lo=sys.sample_lo,
        sample_hi=sys.sample_hi,
    )
