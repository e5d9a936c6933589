"""Legendre-Gauss-Radau collocation rules and multi-interval meshes.

The n-point LGR rule collocates at the roots of P_{n-1} + P_n on [-1, +1)
(including the left endpoint) and supports the state at those points plus
the non-collocated right endpoint +1.  The differentiation matrix D maps
state values at the n+1 support points to the derivative of the
interpolating polynomial at the n collocation points.

Properties pinning the implementation:

* points are strictly increasing with points[0] = -1;
* weights are positive and sum to 2, and the rule integrates polynomials
  of degree <= 2n - 2 exactly;
* every row of D sums to zero, and D differentiates polynomials of degree
  <= n exactly.
"""

import functools
from dataclasses import dataclass

import numpy as np
from scipy.special import eval_legendre, roots_jacobi


@dataclass(frozen=True)
class LgrRule:
    """Collocation points, quadrature weights, and differentiation matrix."""

    n: int
    points: np.ndarray      # n collocation points in [-1, +1)
    support: np.ndarray     # n+1 support points: points plus +1
    weights: np.ndarray     # n quadrature weights
    D: np.ndarray           # n x (n+1) differentiation matrix


def _barycentric_weights(x):
    # normalized to unit max magnitude; only ratios enter D
    n = len(x)
    w = np.ones(n)
    for j in range(n):
        w[j] = 1.0 / np.prod(x[j] - np.delete(x, j))
    return w / np.max(np.abs(w))


def differentiation_matrix(support, rows=None):
    """Barycentric differentiation matrix on arbitrary support points.

    Row i gives the derivative of the Lagrange interpolant at support[i];
    the diagonal uses the negative-sum trick for stability.
    """
    x = np.asarray(support, dtype=float)
    w = _barycentric_weights(x)
    n = len(x)
    D = np.zeros((n, n))
    for i in range(n):
        for j in range(n):
            if i != j:
                D[i, j] = (w[j] / w[i]) / (x[i] - x[j])
        D[i, i] = -np.sum(D[i, :])
    if rows is not None:
        D = D[rows, :]
    return D


@functools.lru_cache(maxsize=None)
def lgr_rule(n):
    """The n-point Legendre-Gauss-Radau rule on [-1, +1].

    Collocation points are -1 plus the roots of the Jacobi polynomial
    P_{n-1}^(0,1); weights follow the closed forms w_1 = 2/n^2 and
    w_i = (1 - tau_i) / (n * P_{n-1}(tau_i))^2 for the interior points.
    """
    if n < 1:
        raise ValueError("rule needs at least one collocation point")
    if n == 1:
        points = np.array([-1.0])
        weights = np.array([2.0])
    else:
        interior, _ = roots_jacobi(n - 1, 0.0, 1.0)
        points = np.concatenate([[-1.0], np.sort(interior)])
        weights = np.empty(n)
        weights[0] = 2.0 / n**2
        weights[1:] = (1.0 - points[1:]) / (n * eval_legendre(n - 1, points[1:]))**2
    support = np.concatenate([points, [1.0]])
    D = differentiation_matrix(support, rows=range(n))
    rule = LgrRule(n=n, points=points, support=support, weights=weights, D=D)
    for arr in (rule.points, rule.support, rule.weights, rule.D):
        arr.setflags(write=False)
    return rule


def map_time(tau, t0, tf):
    """Affine map from [-1, +1] to [t0, tf]; works for any scalar type."""
    if not (tf > t0):
        raise ValueError(f"need tf > t0, got t0={t0}, tf={tf}")
    return 0.5 * (tf - t0) * tau + 0.5 * (tf + t0)


def map_time_generic(tau, t0, tf):
    """map_time without the ordering check, for hypercomplex t0/tf inputs."""
    return (tf - t0) * (0.5 * tau) + (tf + t0) * 0.5


@dataclass(frozen=True)
class Mesh:
    """Partition of [-1, +1] into K intervals with per-interval counts."""

    boundaries: np.ndarray  # K+1 strictly increasing values, -1 .. +1
    counts: tuple           # N_k per interval

    def __post_init__(self):
        b = np.asarray(self.boundaries, dtype=float)
        object.__setattr__(self, "boundaries", b)
        object.__setattr__(self, "counts", tuple(int(c) for c in self.counts))
        if len(b) != len(self.counts) + 1:
            raise ValueError("need one more boundary than interval")
        if b[0] != -1.0 or b[-1] != 1.0 or np.any(np.diff(b) <= 0):
            raise ValueError("boundaries must increase from -1 to +1")
        if any(c < 1 for c in self.counts):
            raise ValueError("every interval needs at least one point")

    @classmethod
    def uniform(cls, K, n_per_interval=5):
        return cls(np.linspace(-1.0, 1.0, K + 1), (n_per_interval,) * K)

    @property
    def K(self):
        return len(self.counts)

    @property
    def total_points(self):
        return sum(self.counts)


@dataclass(frozen=True)
class AssembledMesh:
    """Global collocation data for one phase.

    The N collocation points are the first N of the N+1 support points;
    interval endpoints are shared between neighbouring intervals.  D is the
    N x (N+1) block-structured global differentiation matrix and weights
    are the interval-scaled quadrature weights.
    """

    mesh: Mesh
    points: np.ndarray
    support: np.ndarray
    weights: np.ndarray
    D: np.ndarray
    interval_of_point: np.ndarray
    support_slices: tuple  # per interval: slice into support columns

    @property
    def N(self):
        return len(self.points)


def mesh_assemble(mesh):
    """Scale the per-interval LGR rules onto the mesh and stitch them."""
    N = mesh.total_points
    points = np.empty(N)
    support = np.empty(N + 1)
    weights = np.empty(N)
    D = np.zeros((N, N + 1))
    interval_of_point = np.empty(N, dtype=int)
    slices = []
    offset = 0
    for k, n_k in enumerate(mesh.counts):
        a, b = mesh.boundaries[k], mesh.boundaries[k + 1]
        half = 0.5 * (b - a)
        rule = lgr_rule(n_k)
        rows = slice(offset, offset + n_k)
        cols = slice(offset, offset + n_k + 1)
        points[rows] = a + half * (rule.points + 1.0)
        support[cols] = a + half * (rule.support + 1.0)
        weights[rows] = half * rule.weights
        D[rows, cols] += rule.D / half
        interval_of_point[rows] = k
        slices.append(cols)
        offset += n_k
    support[-1] = 1.0
    return AssembledMesh(mesh=mesh, points=points, support=support,
                         weights=weights, D=D,
                         interval_of_point=interval_of_point,
                         support_slices=tuple(slices))
