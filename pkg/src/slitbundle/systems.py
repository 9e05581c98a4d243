"""Builtin example systems with documented ground truth.

All builtins carry both a generic scalar evaluator (works on dual towers,
so deep bracket words stay exact) and closed-form numpy value/jacobian/
hessian closures for the integration hot paths.
"""

from __future__ import annotations

import re

import numpy as np

from . import dual
from .chart import VectorField
from .distribution import MetricField, System
from .errors import ConfigError
from .expr import parse

# the flat bump exp(-1/x^2) underflows to exactly 0.0 in double precision
# for x below this cutoff, so branching here introduces no float-level jump
_BUMP_CUT = 0.02


def _bump(x):
    if dual.primal(x) <= _BUMP_CUT:
        return 0.0
    return dual.exp(-1.0 / (x * x))


def _bump_np(x):
    if x <= _BUMP_CUT:
        return 0.0
    return float(np.exp(-1.0 / (x * x)))


def _bump_d1(x):
    if x <= _BUMP_CUT:
        return 0.0
    return 2.0 / x**3 * np.exp(-1.0 / (x * x))


def _bump_d2(x):
    if x <= _BUMP_CUT:
        return 0.0
    return (4.0 / x**6 - 6.0 / x**4) * np.exp(-1.0 / (x * x))


def _heisenberg():
    E1 = VectorField(
        3,
        comps=lambda xs: [1.0, 0.0, -xs[1] / 2.0],
        value=lambda q: np.array([1.0, 0.0, -q[1] / 2.0]),
        jac=lambda q: np.array([[0.0, 0.0, 0.0], [0.0, 0.0, 0.0], [0.0, -0.5, 0.0]]),
        hess=lambda q: np.zeros((3, 3, 3)),
        name="E1",
    )
    E2 = VectorField(
        3,
        comps=lambda xs: [0.0, 1.0, xs[0] / 2.0],
        value=lambda q: np.array([0.0, 1.0, q[0] / 2.0]),
        jac=lambda q: np.array([[0.0, 0.0, 0.0], [0.0, 0.0, 0.0], [0.5, 0.0, 0.0]]),
        hess=lambda q: np.zeros((3, 3, 3)),
        name="E2",
    )
    return System(3, [E1, E2], MetricField.euclidean(3), name="heisenberg")


def _unicycle():
    def jac1(q):
        J = np.zeros((3, 3))
        J[0, 2] = -np.sin(q[2])
        J[1, 2] = np.cos(q[2])
        return J

    def hess1(q):
        H = np.zeros((3, 3, 3))
        H[0, 2, 2] = -np.cos(q[2])
        H[1, 2, 2] = -np.sin(q[2])
        return H

    E1 = VectorField(
        3,
        comps=lambda xs: [dual.cos(xs[2]), dual.sin(xs[2]), 0.0],
        value=lambda q: np.array([np.cos(q[2]), np.sin(q[2]), 0.0]),
        jac=jac1,
        hess=hess1,
        name="drive",
    )
    E2 = VectorField.constant([0.0, 0.0, 1.0], name="steer")
    return System(3, [E1, E2], MetricField.euclidean(3), name="unicycle")


def _martinet():
    E1 = VectorField.constant([0.0, 1.0, 0.0], name="E1")

    def jac2(q):
        J = np.zeros((3, 3))
        J[2, 1] = q[1]
        return J

    def hess2(q):
        H = np.zeros((3, 3, 3))
        H[2, 1, 1] = 1.0
        return H

    E2 = VectorField(
        3,
        comps=lambda xs: [1.0, 0.0, xs[1] * xs[1] / 2.0],
        value=lambda q: np.array([1.0, 0.0, q[1] * q[1] / 2.0]),
        jac=jac2,
        hess=hess2,
        name="E2",
    )
    return System(3, [E1, E2], MetricField.euclidean(3), name="martinet")


def _involutive3():
    E1 = VectorField.constant([1.0, 0.0, 0.0], name="E1")
    E2 = VectorField.constant([0.0, 1.0, 0.0], name="E2")
    return System(3, [E1, E2], MetricField.euclidean(3), name="involutive3")


def _flatbracket():
    E1 = VectorField.constant([1.0, 0.0, 0.0], name="E1")

    def jac2(q):
        J = np.zeros((3, 3))
        J[2, 0] = _bump_d1(q[0])
        return J

    def hess2(q):
        H = np.zeros((3, 3, 3))
        H[2, 0, 0] = _bump_d2(q[0])
        return H

    E2 = VectorField(
        3,
        comps=lambda xs: [0.0, 1.0, _bump(xs[0])],
        value=lambda q: np.array([0.0, 1.0, _bump_np(q[0])]),
        jac=jac2,
        hess=hess2,
        name="E2",
    )
    return System(3, [E1, E2], MetricField.euclidean(3), name="flatbracket")


def _flat(n):
    if n < 2:
        raise ConfigError("flat(n) needs n >= 2")
    frame = []
    for i in range(n):
        e = np.zeros(n)
        e[i] = 1.0
        frame.append(VectorField.constant(e, name=f"e{i + 1}"))
    return System(n, frame, MetricField.euclidean(n), name=f"flat{n}")


_FLAT_RE = re.compile(r"^flat\(?(\d+)\)?$")

_BUILDERS = {
    "heisenberg": _heisenberg,
    "unicycle": _unicycle,
    "martinet": _martinet,
    "involutive3": _involutive3,
    "flatbracket": _flatbracket,
}

BUILTIN_NAMES = sorted(_BUILDERS) + ["flat(n)"]


def builtin(name):
    """Construct a builtin system by name: heisenberg, unicycle, martinet,
    involutive3, flatbracket, or flat(n) / flatN."""
    key = name.strip().lower()
    if key in _BUILDERS:
        return _BUILDERS[key]()
    m = _FLAT_RE.match(key)
    if m:
        return _flat(int(m.group(1)))
    raise ConfigError(f"unknown system {name!r}; known: {', '.join(BUILTIN_NAMES)}")


def system_from_config(cfg):
    """Build a System from a configuration mapping.

    Expected keys: name, dim, frame (k lists of n expression strings),
    metric (n x n expression strings, identity when omitted), domain
    (list of inequality expressions, interpreted as "value > 0"), and an
    optional sample_box [[lo..], [hi..]].
    """
    if not isinstance(cfg, dict):
        raise ConfigError("config must be a JSON object")
    try:
        n = int(cfg["dim"])
        frame_src = cfg["frame"]
    except (KeyError, TypeError, ValueError) as err:
        raise ConfigError(f"config missing or malformed field: {err}") from None
    if n < 2:
        raise ConfigError("dim must be at least 2")
    if not isinstance(frame_src, list) or not frame_src:
        raise ConfigError("frame must be a nonempty list of component lists")

    def parse_all(rows, what):
        out = []
        for row in rows:
            if not isinstance(row, list) or len(row) != n:
                raise ConfigError(f"each {what} row needs exactly {n} expressions")
            try:
                out.append([parse(str(s), n) for s in row])
            except Exception as err:
                raise ConfigError(f"bad {what} expression: {err}") from None
        return out

    frame_exprs = parse_all(frame_src, "frame")
    frame = [
        VectorField.from_expressions(row, name=f"E{i + 1}") for i, row in enumerate(frame_exprs)
    ]

    if "metric" in cfg and cfg["metric"] is not None:
        rows = parse_all(cfg["metric"], "metric")
        if len(rows) != n:
            raise ConfigError(f"metric needs {n} rows")
        metric = MetricField.from_expressions(rows)
    else:
        metric = MetricField.euclidean(n)

    domain = None
    if cfg.get("domain"):
        try:
            ineqs = [parse(str(s), n) for s in cfg["domain"]]
        except Exception as err:
            raise ConfigError(f"bad domain expression: {err}") from None

        def domain(q, ineqs=ineqs):
            xs = [float(x) for x in q]
            return all(e(xs) > 0.0 for e in ineqs)

    lo = hi = None
    if cfg.get("sample_box"):
        box = cfg["sample_box"]
        if len(box) != 2 or len(box[0]) != n or len(box[1]) != n:
            raise ConfigError("sample_box must be [[lo_1..lo_n], [hi_1..hi_n]]")
        lo, hi = np.asarray(box[0], float), np.asarray(box[1], float)

    try:
        return System(
            n=n,
            frame=frame,
            metric=metric,
            domain=domain,
            name=str(cfg.get("name", "custom")),
            sample_lo=lo,
            sample_hi=hi,
        )
    except Exception as err:
        raise ConfigError(str(err)) from None
