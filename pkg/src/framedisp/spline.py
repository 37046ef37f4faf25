"""Natural cubic spline with fixed knots, exposed as a linear operator.

With the knot abscissae fixed, the interpolant is linear in the nodal values,
so evaluation at a set of points is a matrix ``W`` with ``s(x) = W @ values``.
Mesh deformation and the flow basis both rely on that form.
"""

from __future__ import annotations

import numpy as np

from .errors import DomainError, ShapeError


def solve_tridiagonal(lower, diag, upper, rhs):
    """Thomas algorithm.

    ``lower[i]`` multiplies ``x[i-1]`` in row ``i`` (``lower[0]`` unused),
    ``upper[i]`` multiplies ``x[i+1]`` (``upper[-1]`` unused). ``rhs`` may be
    a vector or a matrix with one right-hand side per column.
    """
    diag = np.asarray(diag, dtype=float)
    n = diag.size
    rhs = np.array(rhs, dtype=float)
    c = np.zeros(n)
    d = np.zeros_like(rhs)
    beta = diag[0]
    d[0] = rhs[0] / beta
    for i in range(1, n):
        c[i] = upper[i - 1] / beta
        beta = diag[i] - lower[i] * c[i]
        d[i] = (rhs[i] - lower[i] * d[i - 1]) / beta
    for i in range(n - 2, -1, -1):
        d[i] -= c[i + 1] * d[i + 1]
    return d


class NaturalCubicSpline:
    """Natural cubic spline over strictly increasing knots.

    Points outside the knot span are evaluated with the cubic of the nearest
    end interval (no clamping).
    """

    def __init__(self, knots):
        knots = np.asarray(knots, dtype=float)
        if knots.ndim != 1 or knots.size < 2:
            raise ShapeError("need at least two knots")
        if np.any(np.diff(knots) <= 0):
            raise DomainError("knots must be strictly increasing")
        self.knots = knots
        self._moment_operator = self._build_moment_operator()

    @property
    def n(self) -> int:
        return self.knots.size

    def _build_moment_operator(self) -> np.ndarray:
        """Matrix mapping nodal values to second derivatives (moments)."""
        n = self.n
        if n == 2:
            return np.zeros((2, 2))
        h = np.diff(self.knots)
        m = n - 2
        # right-hand side of the interior equations as a linear map of values
        rhs = np.zeros((m, n))
        for j in range(m):
            i = j + 1
            rhs[j, i - 1] = 6.0 / h[i - 1]
            rhs[j, i] = -6.0 / h[i - 1] - 6.0 / h[i]
            rhs[j, i + 1] = 6.0 / h[i]
        lower = np.concatenate([[0.0], h[1:m]])
        diag = 2.0 * (h[:-1] + h[1:])
        upper = np.concatenate([h[1:m], [0.0]])
        interior = solve_tridiagonal(lower, diag, upper, rhs)
        op = np.zeros((n, n))
        op[1:-1] = interior
        return op

    def weights(self, x) -> np.ndarray:
        """Evaluation matrix of shape ``x.shape + (n,)``."""
        x = np.asarray(x, dtype=float)
        flat = x.ravel()
        k = self.knots
        lo = np.clip(np.searchsorted(k, flat, side="right") - 1, 0, self.n - 2)
        hi = lo + 1
        h = k[hi] - k[lo]
        a = (k[hi] - flat) / h
        b = (flat - k[lo]) / h
        ca = (a**3 - a) * h**2 / 6.0
        cb = (b**3 - b) * h**2 / 6.0
        rows = np.arange(flat.size)
        w = np.zeros((flat.size, self.n))
        w[rows, lo] += a
        w[rows, hi] += b
        w += ca[:, None] * self._moment_operator[lo] + cb[:, None] * self._moment_operator[hi]
        return w.reshape(x.shape + (self.n,))

    def __call__(self, x, values):
        values = np.asarray(values, dtype=float)
        if values.shape[-1] != self.n:
            raise ShapeError(f"expected {self.n} nodal values, got {values.shape[-1]}")
        return self.weights(x) @ values
