"""Forward-mode dual numbers.

A ``Dual`` stores a primal and a tangent part. Tangents may be scalars,
numpy arrays (one pass gives a full gradient), or other ``Dual`` values;
nesting duals yields exact higher derivatives, and towers of arbitrary
order arise when bracket evaluations differentiate each other recursively.
"""

from __future__ import annotations

import math

import numpy as np

from .errors import EvalDomainError

_NUMS = (int, float, np.integer, np.floating)


class Dual:
    __slots__ = ("re", "du")

    def __init__(self, re, du):
        self.re = re
        self.du = du

    def __repr__(self):
        return f"Dual({self.re!r}, {self.du!r})"

    # arithmetic -----------------------------------------------------------

    def __add__(self, o):
        if isinstance(o, Dual):
            return Dual(self.re + o.re, self.du + o.du)
        return Dual(self.re + o, self.du)

    __radd__ = __add__

    def __sub__(self, o):
        if isinstance(o, Dual):
            return Dual(self.re - o.re, self.du - o.du)
        return Dual(self.re - o, self.du)

    def __rsub__(self, o):
        return Dual(o - self.re, -self.du)

    def __mul__(self, o):
        if isinstance(o, Dual):
            return Dual(self.re * o.re, self.du * o.re + self.re * o.du)
        return Dual(self.re * o, self.du * o)

    __rmul__ = __mul__

    def __truediv__(self, o):
        if isinstance(o, Dual):
            if primal(o) == 0.0:
                raise EvalDomainError("division by zero")
            q = self.re / o.re
            return Dual(q, (self.du - q * o.du) / o.re)
        if o == 0.0:
            raise EvalDomainError("division by zero")
        return Dual(self.re / o, self.du / o)

    def __rtruediv__(self, o):
        return Dual(o, 0.0).__truediv__(self)

    def __neg__(self):
        return Dual(-self.re, -self.du)

    def __pow__(self, m):
        if not isinstance(m, (int, np.integer)):
            raise TypeError("dual pow supports integer exponents only")
        m = int(m)
        if m == 0:
            return self * 0.0 + 1.0
        if m < 0:
            return 1.0 / (self ** (-m))
        val = _ipow(self.re, m)
        return Dual(val, _ipow(self.re, m - 1) * m * self.du)

    # comparisons work on the outermost primal so branch logic (domain
    # predicates, the flat-bump cutoff) is decided by the base value
    def __lt__(self, o):
        return primal(self) < primal(o)

    def __le__(self, o):
        return primal(self) <= primal(o)

    def __gt__(self, o):
        return primal(self) > primal(o)

    def __ge__(self, o):
        return primal(self) >= primal(o)

    def __float__(self):
        return float(primal(self))


def _ipow(x, m):
    if m == 0:
        return x * 0.0 + 1.0
    r = x
    for _ in range(m - 1):
        r = r * x
    return r


def primal(x):
    """Outermost real value of a (possibly nested) dual."""
    while isinstance(x, Dual):
        x = x.re
    return x




# generic math: these accept floats or duals of any nesting depth ----------


def sin(x):
    if isinstance(x, Dual):
        return Dual(sin(x.re), cos(x.re) * x.du)
    return math.sin(x)


def cos(x):
    if isinstance(x, Dual):
        return Dual(cos(x.re), -sin(x.re) * x.du)
    return math.cos(x)


def exp(x):
    if isinstance(x, Dual):
        e = exp(x.re)
        return Dual(e, e * x.du)
    return math.exp(x)


def sqrt(x):
    if isinstance(x, Dual):
        p = primal(x)
        if p < 0.0:
            raise EvalDomainError("sqrt of a negative value")
        if p == 0.0:
            raise EvalDomainError("sqrt derivative is singular at zero")
        s = sqrt(x.re)
        return Dual(s, x.du / (s * 2.0))
    if x < 0.0:
        raise EvalDomainError("sqrt of a negative value")
    return math.sqrt(x)


# seeding helpers ----------------------------------------------------------


def jvp(f, xs, vs):
    """Value and directional derivative of ``f`` (list -> list) along ``vs``.

    Tower safe: ``xs`` entries may themselves be duals.
    """
    seeded = [Dual(x, v) for x, v in zip(xs, vs)]
    out = f(seeded)
    vals = []
    tangs = []
    for y in out:
        if isinstance(y, Dual):
            vals.append(y.re)
            tangs.append(y.du)
        else:
            vals.append(y)
            tangs.append(0.0)
    return vals, tangs


def value_and_jacobian(f, xs):
    """One vector-tangent pass: value of ``f`` and its full Jacobian.

    ``xs`` must be plain floats. Returns (values array, J[m, j] = d f_m / d x_j).
    """
    n = len(xs)
    eye = np.eye(n)
    seeded = [Dual(float(xs[j]), eye[j]) for j in range(n)]
    out = f(seeded)
    m = len(out)
    vals = np.empty(m)
    jac = np.zeros((m, n))
    for i, y in enumerate(out):
        if isinstance(y, Dual):
            vals[i] = y.re
            jac[i] = y.du
        else:
            vals[i] = y
    return vals, jac


def value_jacobian_hessian(f, xs):
    """Value, Jacobian, and Hessian stack H[m, j, p] = d^2 f_m / dx_j dx_p."""
    n = len(xs)
    eye = np.eye(n)
    vals = None
    jac = None
    hess = None
    for p in range(n):
        seeded = [
            Dual(Dual(float(xs[j]), 1.0 if j == p else 0.0), Dual(eye[j], np.zeros(n)))
            for j in range(n)
        ]
        out = f(seeded)
        m = len(out)
        if vals is None:
            vals = np.empty(m)
            jac = np.zeros((m, n))
            hess = np.zeros((m, n, n))
        for i, y in enumerate(out):
            if isinstance(y, Dual):
                vals[i] = primal(y)
                row = y.du
                if isinstance(row, Dual):
                    jac[i] = row.re
                    hess[i, :, p] = row.du
                else:
                    jac[i] = row
            else:
                vals[i] = y
    return vals, jac, hess


def solve_linear(a_rows, b):
    """Gaussian elimination with partial pivoting, generic over dual scalars.

    ``a_rows`` is a list of row lists, ``b`` a list; both may hold duals.
    Used for small (k x k) Gram solves on dual towers.
    """
    m = len(b)
    rows = [list(r) + [b[i]] for i, r in enumerate(a_rows)]
    for col in range(m):
        piv = max(range(col, m), key=lambda r: abs(primal(rows[r][col])))
        if abs(primal(rows[piv][col])) == 0.0:
            raise EvalDomainError("singular linear system in generic solve")
        rows[col], rows[piv] = rows[piv], rows[col]
        pivot = rows[col][col]
        for r in range(col + 1, m):
            factor = rows[r][col] / pivot
            for c in range(col, m + 1):
                rows[r][c] = rows[r][c] - factor * rows[col][c]
    out = [0.0] * m
    for r in range(m - 1, -1, -1):
        acc = rows[r][m]
        for c in range(r + 1, m):
            acc = acc - rows[r][c] * out[c]
        out[r] = acc / rows[r][r]
    return out
