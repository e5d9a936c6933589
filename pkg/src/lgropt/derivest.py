"""Derivative estimation engines.

Three interchangeable engines produce first- and second-order partial
derivatives of user functions:

* ``CENTRAL_FD``   -- central differences; two (first order) or three/four
  (second order) real evaluations per derivative, O(h**2) truncation plus
  roundoff, so the step size matters.
* ``BICOMPLEX``    -- one bicomplex evaluation yields two first-order
  partials and one mixed second; O(h**2) truncation, roundoff only through
  the bicomplex arithmetic itself.
* ``HYPER_DUAL``   -- one hyper-dual evaluation yields the same channels
  exactly; the step size provably never matters.

``jacobian`` and ``hessian_weighted`` drive the per-entry estimators over a
sparsity pattern, pairing two columns per evaluation where the number
system supports it.
"""

import csv
import enum
import math
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .hypercomplex import Bicomplex, HyperDual

_EPS = float(np.finfo(float).eps)


class Method(enum.Enum):
    CENTRAL_FD = "central-fd"
    BICOMPLEX = "bicomplex"
    HYPER_DUAL = "hyper-dual"


# optimal base steps for an O(h^2) scheme on O(1) data; all overridable
_DEFAULT_STEPS = {
    Method.CENTRAL_FD: (_EPS ** (1.0 / 3.0), _EPS ** 0.25),
    Method.BICOMPLEX: (1e-8, 1e-4),
    Method.HYPER_DUAL: (1.0, 1.0),
}


@dataclass(frozen=True)
class StepRule:
    """Engine selection plus base perturbation sizes (first, second order)."""

    method: Method
    h_first: float
    h_second: float

    def __post_init__(self):
        if self.h_first <= 0.0 or self.h_second <= 0.0:
            raise ValueError("base perturbation sizes must be positive")

    @classmethod
    def central_fd(cls, h_first=None, h_second=None):
        d1, d2 = _DEFAULT_STEPS[Method.CENTRAL_FD]
        return cls(Method.CENTRAL_FD, h_first or d1, h_second or d2)

    @classmethod
    def bicomplex(cls, h_first=None, h_second=None):
        d1, d2 = _DEFAULT_STEPS[Method.BICOMPLEX]
        return cls(Method.BICOMPLEX, h_first or d1, h_second or d2)

    @classmethod
    def hyper_dual(cls, h=1.0):
        return cls(Method.HYPER_DUAL, h, h)


@dataclass(frozen=True)
class SeedPlan:
    """Pairs of input indices perturbed together in one evaluation.

    Each pair (i, j) yields d/dx_i, d/dx_j and d2/dx_i dx_j per output; the
    plan covers every requested column exactly once via greedy pairing.
    """

    pairs: tuple

    @classmethod
    def for_columns(cls, columns):
        cols = sorted(set(columns))
        pairs = []
        for k in range(0, len(cols) - 1, 2):
            pairs.append((cols[k], cols[k + 1]))
        if len(cols) % 2:
            pairs.append((cols[-1], cols[-1]))
        return cls(tuple(pairs))


def fd_step(x0, h_base):
    """Perturbation size h_base*(1 + |x0|), growing with the variable scale."""
    if h_base <= 0.0:
        raise ValueError("h_base must be positive")
    return h_base * (1.0 + abs(x0))


def fd_first(f, x0, h):
    """Central difference (f(x0+h) - f(x0-h)) / 2h."""
    return (f(x0 + h) - f(x0 - h)) / (2.0 * h)


def fd_second(f, x0, h):
    """Three-point second difference (f(x0+h) - 2 f(x0) + f(x0-h)) / h^2."""
    return (f(x0 + h) - 2.0 * f(x0) + f(x0 - h)) / (h * h)


def fd_mixed(g, x0, y0, hx, hy):
    """Four-corner mixed second difference with independent steps."""
    return (g(x0 + hx, y0 + hy) - g(x0 + hx, y0 - hy)
            - g(x0 - hx, y0 + hy) + g(x0 - hx, y0 - hy)) / (4.0 * hx * hy)


def _seed_vector(x, i, j, h, kind):
    """Copy of x (object dtype) with directions i, j seeded."""
    xs = np.array([float(v) for v in x], dtype=object)
    if i == j:
        xs[i] = kind(float(x[i]), h, h, 0.0)
    else:
        xs[i] = kind(float(x[i]), h, 0.0, 0.0)
        xs[j] = kind(float(x[j]), 0.0, h, 0.0)
    return xs


def _channels(value, h, kind):
    if isinstance(value, kind):
        if kind is Bicomplex:
            return value.im1 / h, value.im2 / h, value.im12 / (h * h)
        return value.ep1 / h, value.ep2 / h, value.ep12 / (h * h)
    # value degenerated to a plain number: no dependence on the seeds
    return 0.0, 0.0, 0.0


def bc_derivs(f, seed, x, h):
    """First and mixed-second partials of scalar f via one bicomplex call.

    Returns (d_i, d_j, d_ij) = (Im1/h, Im2/h, Im12/h^2) with seeds h*i1 on
    x[i] and h*i2 on x[j] (same component when i == j).
    """
    i, j = seed
    value = f(_seed_vector(x, i, j, h, Bicomplex))
    return _channels(value, h, Bicomplex)


def hd_derivs(f, seed, x, h=1.0):
    """Exact first and mixed-second partials via one hyper-dual call.

    Ep1[f(x + h e1 + h e2)]/h equals Ep1[f(x + e1 + e2)] exactly in the
    hyper-dual algebra, so the evaluation always seeds with 1: that makes
    the h-independence hold bit-for-bit instead of merely to rounding.
    """
    if h <= 0.0:
        raise ValueError("h must be positive")
    i, j = seed
    value = f(_seed_vector(x, i, j, 1.0, HyperDual))
    return _channels(value, 1.0, HyperDual)


def rel_error(d, d_hat):
    """|d - d_hat| / (1 + |d|): relative error of the approximation d_hat."""
    return abs(d - d_hat) / (1.0 + abs(d))


class EvaluationError(RuntimeError):
    """Wraps a user-callback failure with the seeding context."""

    def __init__(self, context, cause):
        super().__init__(f"function evaluation failed at {context}: {cause}")
        self.context = context
        self.__cause__ = cause


def jacobian(F, x, pattern, rule):
    """Sparse Jacobian of vector function F over the given pattern.

    Only pattern entries are estimated and stored.  The central-difference
    engine perturbs one column per evaluation pair; the bicomplex and
    hyper-dual engines cover two columns per evaluation.
    """
    x = np.asarray(x, dtype=float)
    rows_by_col = {}
    for (r, c) in pattern.entries:
        rows_by_col.setdefault(c, []).append(r)
    data, rows, cols = [], [], []

    if rule.method is Method.CENTRAL_FD:
        for c, touched in sorted(rows_by_col.items()):
            h = fd_step(x[c], rule.h_first)
            xp = x.copy()
            xm = x.copy()
            xp[c] += h
            xm[c] -= h
            try:
                col = (np.asarray(F(xp), dtype=float)
                       - np.asarray(F(xm), dtype=float)) / (2.0 * h)
            except Exception as err:
                raise EvaluationError((None, c, (c, c)), err) from err
            for r in touched:
                rows.append(r)
                cols.append(c)
                data.append(col[r])
    else:
        kind = Bicomplex if rule.method is Method.BICOMPLEX else HyperDual
        h = rule.h_first
        for (i, j) in SeedPlan.for_columns(rows_by_col).pairs:
            try:
                values = F(_seed_vector(x, i, j, h, kind))
            except Exception as err:
                raise EvaluationError((None, None, (i, j)), err) from err
            for r in rows_by_col.get(i, ()):
                d_i, _, _ = _channels(values[r], h, kind)
                rows.append(r)
                cols.append(i)
                data.append(d_i)
            if j != i:
                for r in rows_by_col.get(j, ()):
                    _, d_j, _ = _channels(values[r], h, kind)
                    rows.append(r)
                    cols.append(j)
                    data.append(d_j)

    return sp.csr_matrix((data, (rows, cols)),
                         shape=(pattern.n_rows, pattern.n_cols))


def hessian_weighted(fns, weights, x, pattern, rule):
    """Lower-triangular sparse weighted Hessian sum over the given pattern.

    Returns sum_k weights[k] * hess(fns[k]) restricted to pattern entries
    (row >= col).  One evaluation per (entry, function) for the bicomplex
    and hyper-dual engines; three or four for central differences.
    """
    if len(fns) != len(weights):
        raise ValueError("need one weight per function")
    x = np.asarray(x, dtype=float)
    entries = sorted(pattern.entries)
    data, rows, cols = [], [], []

    for (i, j) in entries:
        total = 0.0
        for f, w in zip(fns, weights):
            if w == 0.0:
                continue
            try:
                if rule.method is Method.CENTRAL_FD:
                    if i == j:
                        h = fd_step(x[i], rule.h_second)

                        def fi(xi, f=f, i=i):
                            z = x.copy()
                            z[i] = xi
                            return f(z)

                        d = fd_second(fi, x[i], h)
                    else:
                        hx = fd_step(x[i], rule.h_second)
                        hy = fd_step(x[j], rule.h_second)

                        def gij(xi, xj, f=f, i=i, j=j):
                            z = x.copy()
                            z[i] = xi
                            z[j] = xj
                            return f(z)

                        d = fd_mixed(gij, x[i], x[j], hx, hy)
                elif rule.method is Method.BICOMPLEX:
                    d = bc_derivs(f, (i, j), x, rule.h_second)[2]
                else:
                    d = hd_derivs(f, (i, j), x, rule.h_second)[2]
            except Exception as err:
                if isinstance(err, EvaluationError):
                    raise
                raise EvaluationError((i, j, (i, j)), err) from err
            total += w * d
        rows.append(i)
        cols.append(j)
        data.append(total)

    return sp.csr_matrix((data, (rows, cols)), shape=(pattern.n, pattern.n))


_SWEEP_HEADER = ("h", "method", "order", "rel_error")


def error_sweep(f, analytic_first, analytic_second, x0, h_grid):
    """Relative-error table of all three engines across a step-size grid.

    For each h and method, first- and second-derivative estimates at x0 are
    compared against the analytic oracles.  Failed evaluations are recorded
    with rel_error = nan rather than raised.
    """
    d1 = analytic_first(x0)
    d2 = analytic_second(x0)
    table = []

    def scalar(fun):
        def wrapped(vec):
            return fun(vec[0])
        return wrapped

    for h in h_grid:
        h = float(h)
        estimates = {}
        try:
            estimates[Method.CENTRAL_FD] = (fd_first(f, x0, h),
                                            fd_second(f, x0, h))
        except Exception:
            estimates[Method.CENTRAL_FD] = (math.nan, math.nan)
        try:
            bi, _, bij = bc_derivs(scalar(f), (0, 0), [x0], h)
            estimates[Method.BICOMPLEX] = (bi, bij)
        except Exception:
            estimates[Method.BICOMPLEX] = (math.nan, math.nan)
        try:
            hi, _, hij = hd_derivs(scalar(f), (0, 0), [x0], h)
            estimates[Method.HYPER_DUAL] = (hi, hij)
        except Exception:
            estimates[Method.HYPER_DUAL] = (math.nan, math.nan)
        for method, (e1, e2) in estimates.items():
            table.append((h, method.value, 1, rel_error(d1, e1)))
            table.append((h, method.value, 2, rel_error(d2, e2)))
    return table


def write_sweep_csv(table, path):
    """Write an error_sweep table as CSV with header h,method,order,rel_error."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(_SWEEP_HEADER)
        for h, method, order, err in table:
            writer.writerow([f"{h:.6e}", method, order, f"{err:.16e}"])
