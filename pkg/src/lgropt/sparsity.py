"""Structural sparsity detection for Jacobians and Hessians.

First-order dependencies are found by NaN propagation: inject NaN into one
input and see which outputs turn NaN.  That cannot see second-order
structure, so the corresponding Hessian pattern is over-estimated with a
dense block per function row.  Probing with hyper-dual seeds instead gives
the exact first- AND second-order patterns, which is what makes the exact
variants of the derivative engines cheaper downstream.
"""

import warnings
from dataclasses import dataclass, field

import numpy as np

from .hypercomplex import HyperDual


class DetectionError(RuntimeError):
    pass


@dataclass(frozen=True)
class JacobianPattern:
    """Structurally nonzero (row, col) set of a rectangular Jacobian."""

    n_rows: int
    n_cols: int
    entries: frozenset = field(default_factory=frozenset)

    def __post_init__(self):
        object.__setattr__(self, "entries", frozenset(self.entries))
        for (r, c) in self.entries:
            if not (0 <= r < self.n_rows and 0 <= c < self.n_cols):
                raise ValueError(f"entry {(r, c)} out of bounds")

    @property
    def nnz(self):
        return len(self.entries)

    def sorted_entries(self):
        """Entries in deterministic row-major order."""
        return sorted(self.entries)

    def rows_of_col(self, c):
        return sorted(r for (r, cc) in self.entries if cc == c)

    def cols_of_row(self, r):
        return sorted(c for (rr, c) in self.entries if rr == r)

    def serialize(self):
        lines = [f"{self.n_rows} {self.n_cols} {self.nnz}"]
        lines += [f"{r} {c}" for (r, c) in self.sorted_entries()]
        return "\n".join(lines) + "\n"

    def issubset(self, other):
        return self.entries <= other.entries


@dataclass(frozen=True)
class HessianPattern:
    """Lower-triangular (row >= col) structural nonzeros of a symmetric Hessian."""

    n: int
    entries: frozenset = field(default_factory=frozenset)

    def __post_init__(self):
        object.__setattr__(self, "entries", frozenset(self.entries))
        for (r, c) in self.entries:
            if not (0 <= c <= r < self.n):
                raise ValueError(f"entry {(r, c)} not lower-triangular in range")

    @property
    def nnz(self):
        return len(self.entries)

    def sorted_entries(self):
        return sorted(self.entries)

    def serialize(self):
        lines = [f"{self.n} {self.n} {self.nnz}"]
        lines += [f"{r} {c}" for (r, c) in self.sorted_entries()]
        return "\n".join(lines) + "\n"

    def issubset(self, other):
        return self.entries <= other.entries


def default_probe_points(n_in, lower=None, upper=None, count=3, seed=20221108):
    """Probe points away from symmetry-prone values.

    Bounded inputs are sampled uniformly from the interior of their range;
    unbounded ones fall back to offsets around sqrt(2)/2 so that 0, 1, and
    other special points are avoided.
    """
    rng = np.random.default_rng(seed)
    base = np.sqrt(2.0) / 2.0
    points = []
    for _ in range(count):
        x = np.empty(n_in)
        for i in range(n_in):
            lo = -np.inf if lower is None else lower[i]
            hi = np.inf if upper is None else upper[i]
            if np.isfinite(lo) and np.isfinite(hi) and hi > lo:
                x[i] = lo + (hi - lo) * rng.uniform(0.12, 0.88)
            elif np.isfinite(lo):
                x[i] = lo + base + rng.uniform(0.1, 1.3)
            elif np.isfinite(hi):
                x[i] = hi - base - rng.uniform(0.1, 1.3)
            else:
                x[i] = rng.choice([-1.0, 1.0]) * (base + rng.uniform(0.1, 1.3))
        points.append(x)
    return points


def _as_float_row(values):
    return np.array([float(v) for v in values], dtype=float)


def detect_first_nan(F, n_in, probe_points):
    """First-order dependency pattern from NaN propagation.

    For each input index, the input is replaced by NaN at every probe point
    and any output row that comes back NaN (or Inf) marks a dependency.
    """
    if not probe_points:
        raise ValueError("need at least one probe point")
    entries = set()
    n_rows = None
    for point in probe_points:
        point = np.asarray(point, dtype=float)
        if not np.all(np.isfinite(point)):
            raise ValueError("probe points must be finite")
        for i in range(n_in):
            x = point.copy()
            x[i] = np.nan
            try:
                out = _as_float_row(F(x))
            except Exception as err:
                raise DetectionError(
                    f"function trapped on NaN at input index {i} "
                    f"(NaN propagation needs the callback to pass NaN through)"
                ) from err
            n_rows = len(out)
            for r in np.flatnonzero(~np.isfinite(out)):
                entries.add((int(r), i))
    return JacobianPattern(n_rows, n_in, entries)


def overestimate_hessian(jp, rows=None):
    """Conservative Hessian pattern from first-order dependencies only.

    Every function row contributes a dense lower-triangular block over the
    variables it depends on; second-order cancellations are invisible to a
    first-order detector, so this can only over-estimate.
    """
    if rows is None:
        rows = range(jp.n_rows)
    deps_by_row = {}
    for (r, c) in jp.entries:
        deps_by_row.setdefault(r, []).append(c)
    entries = set()
    for r in rows:
        deps = deps_by_row.get(r, ())
        for a in deps:
            for b in deps:
                if a >= b:
                    entries.add((a, b))
    return HessianPattern(jp.n_cols, entries)


def detect_exact(F, n_in, probe_points, warn=True):
    """Exact first- and second-order patterns from hyper-dual probing.

    Every seed pair (i, j), i >= j, is evaluated at each probe point; a
    nonzero first-derivative channel marks a Jacobian entry and a nonzero
    mixed channel marks a Hessian entry.  Since hyper-dual channels carry
    exact derivatives, any nonzero value is structural, so no threshold is
    applied.  Pairs of variables that share no output row after the pure
    probes are skipped.
    """
    if not probe_points:
        raise ValueError("need at least one probe point")
    points = []
    for p in probe_points:
        p = np.asarray(p, dtype=float)
        if not np.all(np.isfinite(p)):
            raise ValueError("probe points must be finite")
        points.append(p)

    jac = set()
    hess = set()
    n_rows = None

    def probe(point, i, j):
        x = np.array([float(v) for v in point], dtype=object)
        if i == j:
            x[i] = HyperDual(float(point[i]), 1.0, 1.0, 0.0)
        else:
            x[i] = HyperDual(float(point[i]), 1.0, 0.0, 0.0)
            x[j] = HyperDual(float(point[j]), 0.0, 1.0, 0.0)
        return F(x)

    def channels(value):
        if isinstance(value, HyperDual):
            return value.ep1, value.ep2, value.ep12
        return 0.0, 0.0, 0.0

    usable_points = []
    for point in points:
        try:
            for i in range(n_in):
                out = probe(point, i, i)
                n_rows = len(out)
                for r, value in enumerate(out):
                    d1, _, d2 = channels(value)
                    if d1 != 0.0:
                        jac.add((r, i))
                    if d2 != 0.0:
                        hess.add((i, i))
            usable_points.append(point)
        except (ValueError, ZeroDivisionError, ArithmeticError) as err:
            if warn:
                warnings.warn(f"probe point skipped ({err})", stacklevel=2)
    if not usable_points:
        raise DetectionError("hyper-dual probing failed at every probe point")

    rows_of = {}
    for (r, c) in jac:
        rows_of.setdefault(c, set()).add(r)
    for i in range(n_in):
        for j in range(i):
            if not (rows_of.get(i, set()) & rows_of.get(j, set())):
                continue  # no shared output row: mixed partial structurally zero
            for point in usable_points:
                out = probe(point, i, j)
                for value in out:
                    if channels(value)[2] != 0.0:
                        hess.add((i, j))
                        break
                if (i, j) in hess:
                    break

    return (JacobianPattern(n_rows, n_in, jac), HessianPattern(n_in, hess))
