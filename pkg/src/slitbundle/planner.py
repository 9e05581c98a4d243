"""Steering on the slit bundle: connect two base points with prescribed
nonzero horizontal endpoint velocities by direct multiple shooting over
piecewise-constant vertical controls, then project to the base chart.

The decision vector holds N controls and N durations. The residual is the
endpoint (q, a) mismatch plus smooth penalty terms (slit floor, region
containment, duration box), solved per restart by Levenberg-Marquardt with
finite-difference Jacobians. Restarts are deterministic given the seed and
are scanned in index order, so the accepted path does not depend on the
thread count used to run them.
"""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import least_squares

from .chart import as_point, lie_bracket
from .connection import BundleState, default_eps_slit
from .distribution import is_bracket_generating, orbit_dimension_estimate
from .errors import NoConvergence, NotReachable, SlitViolation
from .ode import integrate as ode_integrate
from .secondorder import Arc

_D_MEMBERSHIP_TOL = 1e-8
_SLIT_FLOOR_FACTOR = 0.12  # penalty floor, slightly above the 0.1 acceptance bar
_W_SLIT = 30.0
_W_REGION = 30.0
_W_TAU = 1.0


class Region:
    """An open region given by inequality functions (positive inside)."""

    def __init__(self, funcs, label=""):
        self.funcs = list(funcs)
        self.label = label

    def contains(self, q):
        xs = [float(x) for x in q]
        return all(f(xs) > 0.0 for f in self.funcs)

    def violations(self, q):
        xs = [float(x) for x in q]
        return [max(0.0, -float(f(xs))) for f in self.funcs]


@dataclass
class PlanRequest:
    """Endpoints with prescribed nonzero velocities in the frame span, an
    optional open-region constraint, and solver options."""

    p: np.ndarray
    q: np.ndarray
    v_p: np.ndarray  # ambient components, must lie in D_p
    v_q: np.ndarray
    region: Region = None
    segments: int = 8
    restarts: int = 20
    seed: int = 0
    tol_pos: float = 1e-6
    tol_vel: float = 1e-6
    tau_max: float = 2.0
    max_iter: int = 200
    rtol: float = 1e-9
    atol: float = 1e-12
    threads: int = None  # None: use SLITBUNDLE_THREADS, default 1


@dataclass
class PiecewisePath:
    """Arcs of constant vertical control; consecutive arcs share their
    junction state exactly, which is what makes the projection C1."""

    start: BundleState
    arcs: list
    trivial: bool = False
    residuals: dict = field(default_factory=dict)
    trace: dict = field(default_factory=dict)

    @property
    def end_state(self):
        if not self.arcs:
            return self.start
        return self.arcs[-1].end_state


def resolve_threads(threads):
    if threads is not None:
        return max(1, int(threads))
    env = os.environ.get("SLITBUNDLE_THREADS", "")
    try:
        return max(1, int(env)) if env else 1
    except ValueError:
        return 1


def _frame_coords_checked(sys, p, v, what):
    v = np.asarray(v, dtype=float)
    a, resid = sys.frame_coords(p, v)
    nv = sys.fiber_speed(p, a)
    if nv <= 0.0 or np.linalg.norm(v) == 0.0:
        raise SlitViolation(f"{what} must be a nonzero vector")
    if np.linalg.norm(resid) > _D_MEMBERSHIP_TOL * (1.0 + np.linalg.norm(v)):
        raise SlitViolation(f"{what} is not in the frame span (residual {np.linalg.norm(resid):.3g})")
    return a


def _make_arc_rhs(sys, u, region, floor_sq):
    """Controlled dynamics plus smooth penalty accumulators:
    state = (q, a, slit_penalty, region_penalty)."""
    n, k = sys.n, sys.k
    euclid = sys.metric.is_euclidean
    metric = sys.metric
    u = np.asarray(u, dtype=float)

    def rhs(_t, x):
        q = x[:n]
        a = x[n : n + k]
        E, DE = sys.frame_value_jac(q)
        v = E @ a
        w = np.einsum("lij,j,i->l", DE, v, a)
        if euclid:
            G = E.T @ E
            b = E.T @ w
        else:
            g, dg = metric.value_deriv(q)
            rvec = np.einsum("rji,i,j->r", dg, v, v) - 0.5 * np.einsum("ijr,i,j->r", dg, v, v)
            w = w + np.linalg.solve(g, rvec)
            A = E.T @ g
            G = A @ E
            b = A @ w
        adot = u - np.linalg.solve(G, b)
        speed_sq = float(a @ G @ a)
        pen_slit = max(0.0, floor_sq - speed_sq) ** 2
        pen_region = 0.0
        if region is not None:
            xs = [float(c) for c in q]
            for f in region.funcs:
                pen_region += max(0.0, -float(f(xs))) ** 2
        out = np.empty(n + k + 2)
        out[:n] = v
        out[n : n + k] = adot
        out[n + k] = pen_slit
        out[n + k + 1] = pen_region
        return out

    return rhs


def _shoot(sys, req, s0, a_goal, z, floor_sq, record=False):
    """Integrate the whole schedule; returns endpoint errors, penalties,
    and (when recording) the arcs."""
    n, k, N = sys.n, sys.k, req.segments
    U = z[: N * k].reshape(N, k)
    taus_raw = z[N * k :]
    taus = np.clip(taus_raw, 0.0, req.tau_max)
    tau_pen = float(np.sum((taus_raw - taus) ** 2))
    state = np.concatenate([s0.q, s0.a, [0.0, 0.0]])
    arcs = [] if record else None
    t_base = 0.0
    domain_deficit = 0.0
    for j in range(N):
        rhs = _make_arc_rhs(sys, U[j], req.region, floor_sq)
        guard = None
        if sys.domain is not None:
            guard = lambda x: sys.in_domain(x[:n])
        traj = ode_integrate(
            rhs, state, 0.0, float(taus[j]), rtol=req.rtol, atol=req.atol,
            guard=guard, record=record,
        )
        if record:
            arcs.append(
                Arc(
                    u=U[j].copy(),
                    tau=traj.t_end,
                    ts=t_base + traj.ts,
                    qs=traj.ys[:, :n].copy(),
                    a_s=traj.ys[:, n : n + k].copy(),
                )
            )
        state = traj.y_end.copy()
        t_base += traj.t_end
        if traj.status == "guard":
            domain_deficit = float(np.sum(taus[j:]) - traj.t_end)
            break
    q_end = state[:n]
    a_end = state[n : n + k]
    pen_slit, pen_region = state[n + k], state[n + k + 1]
    res = np.concatenate(
        [
            q_end - req.q,
            a_end - a_goal,
            [_W_SLIT * pen_slit, _W_REGION * pen_region, _W_TAU * tau_pen + 10.0 * domain_deficit],
        ]
    )
    return res, arcs


def _residual_vector(sys, req, s0, a_goal, z, floor_sq, pad_to):
    res, _ = _shoot(sys, req, s0, a_goal, z, floor_sq, record=False)
    if res.size < pad_to:
        res = np.concatenate([res, np.zeros(pad_to - res.size)])
    return res


def plan_flow_composition(sys, req):
    """Coarse warm start: decompose the base displacement into a direct
    frame move plus one bracket-direction commutator rectangle, then lift to
    heuristic fiber knots and piecewise-constant vertical controls. Never
    claimed feasible; it only seeds the shooting solver."""
    n, k, N = sys.n, sys.k, req.segments
    p = req.p
    a_p = sys.frame_coords(p, req.v_p)[0]
    a_q = sys.frame_coords(req.q, req.v_q)[0]
    delta = req.q - p
    E_p = sys.frame_matrix(p)
    c, *_ = np.linalg.lstsq(E_p, delta, rcond=None)
    r = delta - E_p @ c

    legs = []  # (fiber value in frame coords, duration)
    if np.linalg.norm(c) > 1e-9:
        # follow the in-span direction: fiber w for duration d moves ~ d E w
        dur = float(np.clip(np.linalg.norm(c), 0.3, req.tau_max))
        legs.append((c / dur, dur))
    if np.linalg.norm(r) > 1e-8:
        best = None
        for i in range(k):
            for j in range(i + 1, k):
                B = lie_bracket(sys.frame[i], sys.frame[j], p).comps
                nb = np.linalg.norm(B)
                if nb < 1e-12:
                    continue
                coeff = float(r @ B) / nb**2
                score = abs(coeff) * nb
                if best is None or score > best[0]:
                    best = (score, i, j, coeff)
        if best is not None:
            _, i, j, coeff = best
            s_mag = min(req.tau_max * 0.95, float(np.sqrt(abs(coeff))))
            ei = np.zeros(k)
            ei[i] = 1.0
            ej = np.zeros(k)
            ej[j] = 1.0
            if coeff >= 0:
                seq = [ei, ej, -ei, -ej]
            else:
                seq = [ej, ei, -ej, -ei]
            legs.extend((f, s_mag) for f in seq)
    if not legs:
        legs = [(a_p.copy(), 1.0)]

    total = sum(d for _, d in legs)
    taus = np.full(N, total / N)
    # fiber profile sampled at segment starts; endpoints pinned to the
    # requested velocities
    knots = [a_p]
    for jseg in range(1, N):
        t = jseg * total / N
        acc = 0.0
        fiber = legs[-1][0]
        for f, d in legs:
            if t < acc + d:
                fiber = f
                break
            acc += d
        knots.append(np.asarray(fiber, dtype=float))
    knots.append(a_q)
    U = np.empty((N, k))
    for jseg in range(N):
        U[jseg] = (knots[jseg + 1] - knots[jseg]) / taus[jseg]
    return U, taus


def _random_guess(sys, req, rng):
    N, k = req.segments, sys.k
    a_p = sys.frame_coords(req.p, req.v_p)[0]
    a_q = sys.frame_coords(req.q, req.v_q)[0]
    scale = max(1.0, np.linalg.norm(a_p), np.linalg.norm(a_q))
    U = rng.normal(0.0, scale, size=(N, k))
    taus = rng.uniform(0.1, 0.75 * req.tau_max, size=N)
    return U, taus


def _geometry_checks(sys, req):
    rng = np.random.default_rng([int(req.seed), 0xC8EC])
    pts = [req.p, req.q] + sys.sample_points(rng, 8)
    verdict = is_bracket_generating(sys, pts)
    checks = {"bracket_generating": bool(verdict.value), "verdict": verdict.label}
    if verdict.value:
        checks["route"] = "bracket-generating"
        return True, checks
    dims = [orbit_dimension_estimate(sys, x, trials=32, seed=req.seed) for x in (req.p, req.q)]
    checks["orbit_dimensions"] = dims
    if all(d == sys.n for d in dims):
        checks["route"] = "orbit (Sussmann condition, sampled)"
        return True, checks
    checks["route"] = "none"
    return False, checks


def plan(sys, req):
    """Steer from (p, v_p) to (q, v_q) on the slit bundle and return the
    projected piecewise path. Deterministic for fixed (request, seed) and
    independent of the thread count."""
    p = as_point(req.p, sys.n)
    qg = as_point(req.q, sys.n)
    req.p, req.q = p, qg
    req.v_p = np.asarray(req.v_p, dtype=float)
    req.v_q = np.asarray(req.v_q, dtype=float)
    a_p = _frame_coords_checked(sys, p, req.v_p, "v_p")
    a_q = _frame_coords_checked(sys, qg, req.v_q, "v_q")
    if req.region is not None:
        for name, x in (("p", p), ("q", qg)):
            if not req.region.contains(x):
                raise SlitViolation(f"endpoint {name} lies outside the region")
    s0 = BundleState(p, a_p)

    if np.allclose(p, qg, atol=1e-12) and np.allclose(req.v_p, req.v_q, atol=1e-12):
        # degenerate request: a constant curve is not an immersion, so the
        # path is flagged rather than silently accepted
        return PiecewisePath(
            start=s0,
            arcs=[],
            trivial=True,
            residuals={
                "position_error": 0.0,
                "velocity_error": 0.0,
                "min_speed": s0.speed(sys),
            },
            trace={"note": "trivial request: coincident endpoints and velocities"},
        )

    checks_pass, checks = _geometry_checks(sys, req)
    restarts = req.restarts if checks_pass else min(4, req.restarts)
    max_iter = req.max_iter if checks_pass else 60

    N, k = req.segments, sys.k
    nz = N * (k + 1)
    pad_to = max(sys.n + sys.k + 3, nz)
    v_min = min(sys.fiber_speed(p, a_p), sys.fiber_speed(qg, a_q))
    floor_sq = (_SLIT_FLOOR_FACTOR * v_min) ** 2
    eps_slit = default_eps_slit(sys, s0)

    def guess(ridx):
        if ridx == 0:
            return plan_flow_composition(sys, req)
        rng = np.random.default_rng([int(req.seed), int(ridx)])
        return _random_guess(sys, req, rng)

    def solve_one(ridx):
        U0, T0 = guess(ridx)
        z0 = np.concatenate([U0.ravel(), T0])
        try:
            sol = least_squares(
                lambda z: _residual_vector(sys, req, s0, a_q, z, floor_sq, pad_to),
                z0,
                method="lm",
                diff_step=1e-6,
                xtol=1e-14,
                ftol=1e-14,
                gtol=1e-14,
                max_nfev=max_iter * (nz + 1),
            )
        except Exception as err:  # keep other restarts alive
            return {"ok": False, "error": str(err), "residual": np.inf, "index": ridx}
        res, arcs = _shoot(sys, req, s0, a_q, sol.x, floor_sq, record=True)
        pos_err = float(np.linalg.norm(res[: sys.n]))
        vel_err = float(np.linalg.norm(res[sys.n : sys.n + sys.k]))
        min_speed = min(
            (min(sys.fiber_speed(qi, ai) for qi, ai in zip(arc.qs, arc.a_s)) for arc in arcs),
            default=0.0,
        )
        region_ok = True
        if req.region is not None:
            region_ok = all(
                req.region.contains(qi) for arc in arcs for qi in arc.qs
            )
        success = (
            pos_err <= req.tol_pos
            and vel_err <= req.tol_vel
            and min_speed >= max(eps_slit, 0.1 * v_min)
            and region_ok
        )
        return {
            "ok": success,
            "residual": float(np.linalg.norm(res)),
            "position_error": pos_err,
            "velocity_error": vel_err,
            "min_speed": float(min_speed),
            "region_ok": region_ok,
            "arcs": arcs,
            "z": sol.x,
            "nfev": int(sol.nfev),
            "index": ridx,
        }

    threads = resolve_threads(req.threads)
    results = {}
    winner = None
    idx = 0
    while idx < restarts and winner is None:
        batch = list(range(idx, min(idx + threads, restarts)))
        if threads <= 1 or len(batch) == 1:
            batch_results = [solve_one(i) for i in batch]
        else:
            with ThreadPoolExecutor(max_workers=threads) as ex:
                batch_results = list(ex.map(solve_one, batch))
        for i, r in zip(batch, batch_results):
            results[i] = r
            if r["ok"]:
                winner = i
                break
        idx += len(batch)

    if winner is None:
        best = min(results.values(), key=lambda r: (r["residual"], r["index"]))
        if checks_pass:
            raise NoConvergence(
                f"all {restarts} restarts exhausted; best residual {best['residual']:.3g}",
                best_residual=best["residual"],
            )
        raise NotReachable(
            "growth and orbit checks fail at the endpoints and shooting did not "
            f"converge (best residual {best['residual']:.3g})",
            best_residual=best["residual"],
            checks=checks,
        )

    win = results[winner]
    path = PiecewisePath(
        start=s0,
        arcs=win["arcs"],
        trivial=False,
        residuals={
            "position_error": win["position_error"],
            "velocity_error": win["velocity_error"],
            "min_speed": win["min_speed"],
        },
        trace={
            "winner_index": winner,
            "restarts_run": sorted(results),
            "solver_nfev": win["nfev"],
            "checks": checks,
            "seed": req.seed,
        },
    )
    return path


@dataclass
class ValidationReport:
    horizontality_max: float
    min_speed: float
    junction_position_jump: float
    junction_velocity_jump: float
    endpoint_position_error: float
    endpoint_velocity_error: float
    region_violations: int
    samples: int
    trivial: bool

    def to_dict(self):
        return {
            "horizontality_max": self.horizontality_max,
            "min_speed": self.min_speed,
            "junction_position_jump": self.junction_position_jump,
            "junction_velocity_jump": self.junction_velocity_jump,
            "endpoint_position_error": self.endpoint_position_error,
            "endpoint_velocity_error": self.endpoint_velocity_error,
            "region_violations": self.region_violations,
            "samples": self.samples,
            "trivial": self.trivial,
        }


def validate(sys, path, region=None, expected=None):
    """Re-check a stored path: horizontality residual, minimum g-speed,
    junction jumps, endpoint errors, region containment."""
    from .distribution import projector as _projector

    if path.trivial or not path.arcs:
        return ValidationReport(0.0, path.residuals.get("min_speed", 0.0), 0.0, 0.0, 0.0, 0.0, 0, 0, True)
    horiz = 0.0
    min_speed = np.inf
    violations = 0
    samples = 0
    for arc in path.arcs:
        for qi, ai in zip(arc.qs, arc.a_s):
            v = sys.frame_matrix(qi) @ ai
            P = _projector(sys, qi)
            horiz = max(horiz, float(np.linalg.norm(v - P @ v)))
            min_speed = min(min_speed, sys.fiber_speed(qi, ai))
            if region is not None and not region.contains(qi):
                violations += 1
            samples += 1
    jq = jv = 0.0
    for left, right in zip(path.arcs[:-1], path.arcs[1:]):
        jq = max(jq, float(np.linalg.norm(left.qs[-1] - right.qs[0])))
        va = sys.frame_matrix(left.qs[-1]) @ left.a_s[-1]
        vb = sys.frame_matrix(right.qs[0]) @ right.a_s[0]
        jv = max(jv, float(np.linalg.norm(va - vb)))
    pos_err = vel_err = 0.0
    if expected is not None:
        qg = as_point(expected[0], sys.n)
        a_goal = np.asarray(expected[1], dtype=float)
        end = path.end_state
        pos_err = float(np.linalg.norm(end.q - qg))
        vel_err = float(np.linalg.norm(end.a - a_goal))
    return ValidationReport(
        horizontality_max=horiz,
        min_speed=float(min_speed),
        junction_position_jump=jq,
        junction_velocity_jump=jv,
        endpoint_position_error=pos_err,
        endpoint_velocity_error=vel_err,
        region_violations=violations,
        samples=samples,
        trivial=False,
    )
