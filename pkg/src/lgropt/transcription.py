"""Multi-phase optimal control problems and their LGR transcription.

The continuous problem is a set of phases, each carrying dynamics, path
constraints, and integrands as callbacks generic over the scalar type,
plus an endpoint objective and event constraints over per-phase endpoint
vectors.  Transcription collocates each phase on a Legendre-Gauss-Radau
mesh and produces a sparse NLP:

decision vector (phase-major)
    [state columns Y (N+1 support values per component),
     control columns U (N collocation values per component),
     t0, tf, integral values Q] per phase, then static parameters s

constraint vector (phase-major)
    [defect rows D*Y - (tf-t0)/2 * A per state component,
     path rows per constraint component,
     integral residuals rho = Q - (tf-t0)/2 * w'G] per phase,
    then the event rows

The Jacobian and Hessian structure is tiled from dependency patterns of
the low-dimensional continuous functions, detected once per problem, so
the derivative engines only ever evaluate the continuous callbacks at
single collocation points.
"""

import enum
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from . import derivest, sparsity
from .lgr import Mesh, map_time_generic, mesh_assemble

_INF = float("inf")


def _bound_array(value, n, default):
    if value is None:
        return np.full(n, default, dtype=float)
    arr = np.asarray(value, dtype=float)
    if arr.shape != (n,):
        raise ValueError(f"bound array has shape {arr.shape}, expected ({n},)")
    return arr


@dataclass
class OcpPhase:
    """One phase of the continuous problem.

    All callbacks take (y, u, t, s) with indexable y/u/s and return a
    sequence; they must be written against generic scalar operations so
    they can be evaluated with float, Bicomplex, and HyperDual inputs.
    """

    n_y: int
    n_u: int
    dynamics: callable
    n_q: int = 0
    n_c: int = 0
    path: callable = None
    integrand: callable = None
    y_lower: np.ndarray = None
    y_upper: np.ndarray = None
    u_lower: np.ndarray = None
    u_upper: np.ndarray = None
    q_lower: np.ndarray = None
    q_upper: np.ndarray = None
    c_lower: np.ndarray = None
    c_upper: np.ndarray = None
    t0_lower: float = 0.0
    t0_upper: float = 0.0
    tf_lower: float = -_INF
    tf_upper: float = _INF
    # endpoint state bounds default to the path bounds; fixed boundary
    # conditions are imposed by pinning these
    y_start_lower: np.ndarray = None
    y_start_upper: np.ndarray = None
    y_end_lower: np.ndarray = None
    y_end_upper: np.ndarray = None
    t0_guess: float = None
    tf_guess: float = None
    # optional state trajectory guess t -> y for the initializer; problems
    # whose boundary conditions live in the event constraints (so linear
    # interpolation has nothing to aim at) supply a propagated trajectory
    state_guess: callable = None

    def __post_init__(self):
        self.y_lower = _bound_array(self.y_lower, self.n_y, -_INF)
        self.y_upper = _bound_array(self.y_upper, self.n_y, _INF)
        self.u_lower = _bound_array(self.u_lower, self.n_u, -_INF)
        self.u_upper = _bound_array(self.u_upper, self.n_u, _INF)
        self.q_lower = _bound_array(self.q_lower, self.n_q, -_INF)
        self.q_upper = _bound_array(self.q_upper, self.n_q, _INF)
        self.c_lower = _bound_array(self.c_lower, self.n_c, -_INF)
        self.c_upper = _bound_array(self.c_upper, self.n_c, _INF)
        if np.any(self.c_lower > self.c_upper):
            raise ValueError("path bounds must satisfy c_lower <= c_upper")
        for name in ("y_start_lower", "y_end_lower"):
            if getattr(self, name) is None:
                setattr(self, name, self.y_lower.copy())
            else:
                setattr(self, name, _bound_array(getattr(self, name), self.n_y, -_INF))
        for name in ("y_start_upper", "y_end_upper"):
            if getattr(self, name) is None:
                setattr(self, name, self.y_upper.copy())
            else:
                setattr(self, name, _bound_array(getattr(self, name), self.n_y, _INF))
        if self.n_c > 0 and self.path is None:
            raise ValueError("n_c > 0 requires a path callback")
        if self.n_q > 0 and self.integrand is None:
            raise ValueError("n_q > 0 requires an integrand callback")


@dataclass
class Ocp:
    """Multi-phase problem: phases plus endpoint objective and events."""

    phases: list
    objective: callable  # (endpoints, s) -> scalar
    n_s: int = 0
    n_b: int = 0
    events: callable = None  # (endpoints, s) -> sequence of length n_b
    b_lower: np.ndarray = None
    b_upper: np.ndarray = None
    s_lower: np.ndarray = None
    s_upper: np.ndarray = None
    name: str = ""

    def __post_init__(self):
        if not self.phases:
            raise ValueError("need at least one phase")
        self.b_lower = _bound_array(self.b_lower, self.n_b, -_INF)
        self.b_upper = _bound_array(self.b_upper, self.n_b, _INF)
        self.s_lower = _bound_array(self.s_lower, self.n_s, -_INF)
        self.s_upper = _bound_array(self.s_upper, self.n_s, _INF)
        if self.n_b > 0 and self.events is None:
            raise ValueError("n_b > 0 requires an events callback")


@dataclass
class EndpointVector:
    """Per-phase endpoint data [y(-1), t0, y(+1), tf, q] fed to the
    objective and event callbacks."""

    y_start: np.ndarray
    t0: object
    y_end: np.ndarray
    tf: object
    q: np.ndarray


class CallbackError(RuntimeError):
    def __init__(self, phase, point, kind, cause):
        where = f"phase {phase}, {kind}"
        if point is not None:
            where += f", collocation point {point}"
        super().__init__(f"callback failed at {where}: {cause}")
        self.__cause__ = cause


# ---------------------------------------------------------------------------
# Layout
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class PhaseLayout:
    """Index bookkeeping for one phase within the global NLP vectors."""

    index: int
    n_y: int
    n_u: int
    n_q: int
    n_c: int
    N: int
    am: object  # AssembledMesh
    y_offset: int
    u_offset: int
    t0_index: int
    tf_index: int
    q_offset: int
    defect_offset: int
    path_offset: int
    rho_offset: int

    def ycol(self, m, i):
        """Decision index of state component m at support point i."""
        return self.y_offset + m * (self.N + 1) + i

    def ucol(self, j, i):
        return self.u_offset + j * self.N + i

    def qcol(self, j):
        return self.q_offset + j

    def defect_row(self, m, i):
        return self.defect_offset + m * self.N + i

    def path_row(self, c, i):
        return self.path_offset + c * self.N + i

    def rho_row(self, j):
        return self.rho_offset + j

    @property
    def n_vars(self):
        return (self.N + 1) * self.n_y + self.N * self.n_u + 2 + self.n_q


@dataclass(frozen=True)
class NlpLayout:
    phases: tuple
    s_offset: int
    n_s: int
    event_offset: int
    n_b: int
    n_z: int
    n_con: int

    def scol(self, k):
        return self.s_offset + k

    def event_row(self, r):
        return self.event_offset + r

    def endpoint_columns(self):
        """Decision indices backing the flat endpoint input vector."""
        cols = []
        for pl in self.phases:
            cols += [pl.ycol(m, 0) for m in range(pl.n_y)]
            cols.append(pl.t0_index)
            cols += [pl.ycol(m, pl.N) for m in range(pl.n_y)]
            cols.append(pl.tf_index)
            cols += [pl.qcol(j) for j in range(pl.n_q)]
        cols += [self.scol(k) for k in range(self.n_s)]
        return cols


def build_layout(ocp, meshes):
    """Deterministic phase-major variable and constraint indexing."""
    if isinstance(meshes, Mesh):
        meshes = [meshes]
    if len(meshes) != len(ocp.phases):
        raise ValueError("need one mesh per phase")
    phase_layouts = []
    z_off = 0
    c_off = 0
    for p, (phase, mesh) in enumerate(zip(ocp.phases, meshes)):
        if phase.n_y < 1:
            raise ValueError(f"phase {p} has no state components")
        am = mesh_assemble(mesh)
        N = am.N
        pl = PhaseLayout(
            index=p, n_y=phase.n_y, n_u=phase.n_u, n_q=phase.n_q,
            n_c=phase.n_c, N=N, am=am,
            y_offset=z_off,
            u_offset=z_off + (N + 1) * phase.n_y,
            t0_index=z_off + (N + 1) * phase.n_y + N * phase.n_u,
            tf_index=z_off + (N + 1) * phase.n_y + N * phase.n_u + 1,
            q_offset=z_off + (N + 1) * phase.n_y + N * phase.n_u + 2,
            defect_offset=c_off,
            path_offset=c_off + N * phase.n_y,
            rho_offset=c_off + N * (phase.n_y + phase.n_c),
        )
        phase_layouts.append(pl)
        z_off += pl.n_vars
        c_off += N * (phase.n_y + phase.n_c) + phase.n_q
    return NlpLayout(
        phases=tuple(phase_layouts),
        s_offset=z_off,
        n_s=ocp.n_s,
        event_offset=c_off,
        n_b=ocp.n_b,
        n_z=z_off + ocp.n_s,
        n_con=c_off + ocp.n_b,
    )


def variable_bounds(ocp, layout):
    zl = np.full(layout.n_z, -_INF)
    zu = np.full(layout.n_z, _INF)
    for phase, pl in zip(ocp.phases, layout.phases):
        for m in range(pl.n_y):
            lo, hi = phase.y_lower[m], phase.y_upper[m]
            for i in range(pl.N + 1):
                zl[pl.ycol(m, i)] = lo
                zu[pl.ycol(m, i)] = hi
            zl[pl.ycol(m, 0)] = phase.y_start_lower[m]
            zu[pl.ycol(m, 0)] = phase.y_start_upper[m]
            zl[pl.ycol(m, pl.N)] = phase.y_end_lower[m]
            zu[pl.ycol(m, pl.N)] = phase.y_end_upper[m]
        for j in range(pl.n_u):
            for i in range(pl.N):
                zl[pl.ucol(j, i)] = phase.u_lower[j]
                zu[pl.ucol(j, i)] = phase.u_upper[j]
        zl[pl.t0_index] = phase.t0_lower
        zu[pl.t0_index] = phase.t0_upper
        zl[pl.tf_index] = phase.tf_lower
        zu[pl.tf_index] = phase.tf_upper
        for j in range(pl.n_q):
            zl[pl.qcol(j)] = phase.q_lower[j]
            zu[pl.qcol(j)] = phase.q_upper[j]
    zl[layout.s_offset:] = ocp.s_lower
    zu[layout.s_offset:] = ocp.s_upper
    return zl, zu


def constraint_bounds(ocp, layout):
    cl = np.zeros(layout.n_con)
    cu = np.zeros(layout.n_con)
    for phase, pl in zip(ocp.phases, layout.phases):
        for c in range(pl.n_c):
            rows = slice(pl.path_row(c, 0), pl.path_row(c, 0) + pl.N)
            cl[rows] = phase.c_lower[c]
            cu[rows] = phase.c_upper[c]
    if layout.n_b:
        cl[layout.event_offset:] = ocp.b_lower
        cu[layout.event_offset:] = ocp.b_upper
    return cl, cu


# ---------------------------------------------------------------------------
# Evaluation
# ---------------------------------------------------------------------------

def _unpack_phase(z, pl):
    N, n_y, n_u = pl.N, pl.n_y, pl.n_u
    Y = z[pl.y_offset:pl.y_offset + (N + 1) * n_y].reshape(n_y, N + 1).T
    U = z[pl.u_offset:pl.u_offset + N * n_u].reshape(n_u, N).T
    t0 = z[pl.t0_index]
    tf = z[pl.tf_index]
    Q = z[pl.q_offset:pl.q_offset + pl.n_q]
    return Y, U, t0, tf, Q


def _endpoints(ocp, layout, z):
    eps = []
    for phase, pl in zip(ocp.phases, layout.phases):
        Y, U, t0, tf, Q = _unpack_phase(z, pl)
        eps.append(EndpointVector(y_start=Y[0, :].copy(), t0=t0,
                                  y_end=Y[pl.N, :].copy(), tf=tf, q=Q.copy()))
    return eps, z[layout.s_offset:]


def eval_objective(ocp, layout, z):
    endpoints, s = _endpoints(ocp, layout, z)
    try:
        return float(ocp.objective(endpoints, s))
    except Exception as err:
        raise CallbackError("-", None, "objective", err) from err


def eval_constraints(ocp, layout, z):
    z = np.asarray(z, dtype=float)
    out = np.empty(layout.n_con)
    for phase, pl in zip(ocp.phases, layout.phases):
        Y, U, t0, tf, Q = _unpack_phase(z, pl)
        if not tf > t0:
            raise ValueError(f"phase {pl.index}: need tf > t0 in z")
        am = pl.am
        half = 0.5 * (tf - t0)
        times = map_time_generic(am.points, t0, tf)
        s = z[layout.s_offset:]
        A = np.empty((pl.N, pl.n_y))
        C = np.empty((pl.N, pl.n_c)) if pl.n_c else None
        G = np.empty((pl.N, pl.n_q)) if pl.n_q else None
        for i in range(pl.N):
            try:
                A[i, :] = [float(v) for v in phase.dynamics(Y[i, :], U[i, :], times[i], s)]
            except Exception as err:
                raise CallbackError(pl.index, i, "dynamics", err) from err
            if pl.n_c:
                try:
                    C[i, :] = [float(v) for v in phase.path(Y[i, :], U[i, :], times[i], s)]
                except Exception as err:
                    raise CallbackError(pl.index, i, "path", err) from err
            if pl.n_q:
                try:
                    G[i, :] = [float(v) for v in phase.integrand(Y[i, :], U[i, :], times[i], s)]
                except Exception as err:
                    raise CallbackError(pl.index, i, "integrand", err) from err
        defects = am.D @ Y - half * A  # (N, n_y)
        for m in range(pl.n_y):
            out[pl.defect_row(m, 0):pl.defect_row(m, 0) + pl.N] = defects[:, m]
        for c in range(pl.n_c):
            out[pl.path_row(c, 0):pl.path_row(c, 0) + pl.N] = C[:, c]
        if pl.n_q:
            rho = Q - half * (am.weights @ G)
            out[pl.rho_offset:pl.rho_offset + pl.n_q] = rho
    if layout.n_b:
        endpoints, s = _endpoints(ocp, layout, z)
        try:
            b = [float(v) for v in ocp.events(endpoints, s)]
        except Exception as err:
            raise CallbackError("-", None, "events", err) from err
        out[layout.event_offset:] = b
    return out


# ---------------------------------------------------------------------------
# Dependency detection and pattern tiling
# ---------------------------------------------------------------------------

class Detector(enum.Enum):
    NAN_OVERESTIMATE = "nan-overestimate"
    EXACT = "exact"


@dataclass(frozen=True)
class _FamilyPatterns:
    """Continuous-function dependency patterns over point inputs
    (y..., u..., t, s...)."""

    jac: sparsity.JacobianPattern
    hess: sparsity.HessianPattern


@dataclass(frozen=True)
class ContinuousPatterns:
    dynamics: tuple      # per phase
    path: tuple
    integrand: tuple
    objective: _FamilyPatterns  # over endpoint inputs
    events: _FamilyPatterns


def _point_fun(phase, pl, kind):
    """Continuous callback as a vector function of (y, u, t, s)."""
    n_y, n_u = pl.n_y, pl.n_u
    cb = {"dynamics": phase.dynamics, "path": phase.path,
          "integrand": phase.integrand}[kind]

    def fun(x):
        y = x[:n_y]
        u = x[n_y:n_y + n_u]
        t = x[n_y + n_u]
        s = x[n_y + n_u + 1:]
        return cb(y, u, t, s)

    return fun


def _endpoint_fun(ocp, layout, kind):
    def fun(xi):
        endpoints = []
        k = 0
        for pl in layout.phases:
            y0 = xi[k:k + pl.n_y]; k += pl.n_y
            t0 = xi[k]; k += 1
            yf = xi[k:k + pl.n_y]; k += pl.n_y
            tf = xi[k]; k += 1
            q = xi[k:k + pl.n_q]; k += pl.n_q
            endpoints.append(EndpointVector(y0, t0, yf, tf, q))
        s = xi[k:]
        if kind == "objective":
            return [ocp.objective(endpoints, s)]
        return ocp.events(endpoints, s)

    return fun


def _point_probe_bounds(phase, ocp):
    lower = np.concatenate([phase.y_lower, phase.u_lower,
                            [phase.t0_lower], ocp.s_lower])
    upper = np.concatenate([phase.y_upper, phase.u_upper,
                            [phase.tf_upper], ocp.s_upper])
    return lower, upper


def _endpoint_probe_bounds(ocp, layout):
    lo, hi = [], []
    for phase, pl in zip(ocp.phases, layout.phases):
        lo += list(phase.y_start_lower) + [phase.t0_lower] \
            + list(phase.y_end_lower) + [phase.tf_lower] + list(phase.q_lower)
        hi += list(phase.y_start_upper) + [phase.t0_upper] \
            + list(phase.y_end_upper) + [phase.tf_upper] + list(phase.q_upper)
    lo += list(ocp.s_lower)
    hi += list(ocp.s_upper)
    return np.array(lo), np.array(hi)


def _detect(F, n_in, lower, upper, detector):
    probes = sparsity.default_probe_points(n_in, lower, upper)
    if detector is Detector.EXACT:
        return _FamilyPatterns(*sparsity.detect_exact(F, n_in, probes))
    jp = sparsity.detect_first_nan(F, n_in, probes)
    return _FamilyPatterns(jp, sparsity.overestimate_hessian(jp))


def detect_continuous_patterns(ocp, layout, detector):
    dyn, path, integ = [], [], []
    for phase, pl in zip(ocp.phases, layout.phases):
        n_in = pl.n_y + pl.n_u + 1 + layout.n_s
        lower, upper = _point_probe_bounds(phase, ocp)
        dyn.append(_detect(_point_fun(phase, pl, "dynamics"), n_in,
                           lower, upper, detector))
        if pl.n_c:
            path.append(_detect(_point_fun(phase, pl, "path"), n_in,
                                lower, upper, detector))
        else:
            path.append(None)
        if pl.n_q:
            integ.append(_detect(_point_fun(phase, pl, "integrand"), n_in,
                                 lower, upper, detector))
        else:
            integ.append(None)
    lo, hi = _endpoint_probe_bounds(ocp, layout)
    n_xi = len(lo)
    obj = _detect(_endpoint_fun(ocp, layout, "objective"), n_xi, lo, hi,
                  detector)
    if layout.n_b:
        ev = _detect(_endpoint_fun(ocp, layout, "events"), n_xi, lo, hi,
                     detector)
    else:
        ev = _FamilyPatterns(sparsity.JacobianPattern(0, n_xi, set()),
                             sparsity.HessianPattern(n_xi, set()))
    return ContinuousPatterns(tuple(dyn), tuple(path), tuple(integ), obj, ev)


def _asm_inputs(pl, n_s):
    """Number of inputs of the per-point assembly functions
    (y..., u..., t0, tf, s...)."""
    return pl.n_y + pl.n_u + 2 + n_s


def _asm_col(pl, layout, d, i):
    """Global decision index of per-point assembly input d at point i."""
    n_y, n_u = pl.n_y, pl.n_u
    if d < n_y:
        return pl.ycol(d, i)
    if d < n_y + n_u:
        return pl.ucol(d - n_y, i)
    if d == n_y + n_u:
        return pl.t0_index
    if d == n_y + n_u + 1:
        return pl.tf_index
    return layout.scol(d - (n_y + n_u + 2))


def _expand_point_deps(pl, n_s, fam):
    """First-order deps per row, mapped from (y,u,t,s) to (y,u,t0,tf,s)."""
    n_y, n_u = pl.n_y, pl.n_u
    t_slot = n_y + n_u
    rows = {}
    for (r, c) in fam.jac.entries:
        slots = rows.setdefault(r, set())
        if c < t_slot:
            slots.add(c)
        elif c == t_slot:
            slots.add(t_slot)      # t0
            slots.add(t_slot + 1)  # tf
        else:
            slots.add(c + 1)       # s shifted past the extra tf slot
    return rows


def _tile_point_hessian(pl, n_s, fam, scaled):
    """Assembly-input Hessian pairs for one continuous family at one point.

    ``scaled`` marks families multiplied by (tf-t0)/2 (dynamics and
    integrands), whose product rule couples t0/tf with every dependency.
    """
    n_y, n_u = pl.n_y, pl.n_u
    t_slot = n_y + n_u
    t0_slot, tf_slot = t_slot, t_slot + 1

    def map_slot(c):
        if c < t_slot:
            return (c,)
        if c == t_slot:
            return (t0_slot, tf_slot)
        return (c + 1,)

    pairs = set()

    def add(a, b):
        pairs.add((max(a, b), min(a, b)))

    for (r, c) in fam.hess.entries:
        for a in map_slot(r):
            for b in map_slot(c):
                add(a, b)
    if scaled:
        deps = set()
        depends_on_t = False
        for (_, c) in fam.jac.entries:
            if c == t_slot:
                depends_on_t = True
            else:
                deps.add(c if c < t_slot else c + 1)
        for d in deps:
            add(d, t0_slot)
            add(d, tf_slot)
        if depends_on_t:
            add(t0_slot, t0_slot)
            add(t0_slot, tf_slot)
            add(tf_slot, tf_slot)
    return pairs


def build_patterns(ocp, layout, detector, cont=None):
    """Tile the NLP Jacobian and Hessian patterns from the continuous ones."""
    if cont is None:
        cont = detect_continuous_patterns(ocp, layout, detector)
    jac_entries = set()
    hess_entries = set()

    def add_hess(a, b):
        hess_entries.add((max(a, b), min(a, b)))

    for phase, pl in zip(ocp.phases, layout.phases):
        am = pl.am
        dyn_deps = _expand_point_deps(pl, layout.n_s, cont.dynamics[pl.index])
        # defect rows: D band plus dynamics block plus t0/tf scale columns
        for m in range(pl.n_y):
            for i in range(pl.N):
                row = pl.defect_row(m, i)
                cols = am.support_slices[am.interval_of_point[i]]
                for j in range(cols.start, cols.stop):
                    jac_entries.add((row, pl.ycol(m, j)))
                jac_entries.add((row, pl.t0_index))
                jac_entries.add((row, pl.tf_index))
                for d in dyn_deps.get(m, ()):
                    jac_entries.add((row, _asm_col(pl, layout, d, i)))
        if pl.n_c:
            path_deps = _expand_point_deps(pl, layout.n_s, cont.path[pl.index])
            for c in range(pl.n_c):
                for i in range(pl.N):
                    row = pl.path_row(c, i)
                    for d in path_deps.get(c, ()):
                        jac_entries.add((row, _asm_col(pl, layout, d, i)))
        if pl.n_q:
            integ_deps = _expand_point_deps(pl, layout.n_s, cont.integrand[pl.index])
            for j in range(pl.n_q):
                row = pl.rho_row(j)
                jac_entries.add((row, pl.qcol(j)))
                jac_entries.add((row, pl.t0_index))
                jac_entries.add((row, pl.tf_index))
                for i in range(pl.N):
                    for d in integ_deps.get(j, ()):
                        jac_entries.add((row, _asm_col(pl, layout, d, i)))
        # Hessian tiles per collocation point
        point_pairs = set()
        point_pairs |= _tile_point_hessian(pl, layout.n_s,
                                           cont.dynamics[pl.index], scaled=True)
        if pl.n_c:
            point_pairs |= _tile_point_hessian(pl, layout.n_s,
                                               cont.path[pl.index], scaled=False)
        if pl.n_q:
            point_pairs |= _tile_point_hessian(pl, layout.n_s,
                                               cont.integrand[pl.index], scaled=True)
        for i in range(pl.N):
            for (a, b) in point_pairs:
                add_hess(_asm_col(pl, layout, a, i), _asm_col(pl, layout, b, i))

    # event rows and endpoint Hessian blocks
    xi_cols = layout.endpoint_columns()
    for (r, c) in cont.events.jac.entries:
        jac_entries.add((layout.event_row(r), xi_cols[c]))
    for (a, b) in cont.events.hess.entries | cont.objective.hess.entries:
        add_hess(xi_cols[a], xi_cols[b])

    jp = sparsity.JacobianPattern(layout.n_con, layout.n_z, jac_entries)
    hp = sparsity.HessianPattern(layout.n_z, hess_entries)
    return jp, hp, cont


# ---------------------------------------------------------------------------
# Derivative assembly
# ---------------------------------------------------------------------------

def _point_pattern_union(pl, layout, cont):
    """Stacked per-point Jacobian pattern over assembly inputs.

    Rows: dynamics (n_y), then path (n_c), then integrand (n_q); columns
    are (y..., u..., t0, tf, s...).  Scaled families always pick up the
    t0/tf columns.
    """
    n_in = _asm_inputs(pl, layout.n_s)
    t0_slot = pl.n_y + pl.n_u
    entries = set()

    def add_family(fam, row_base, scaled):
        if fam is None:
            return
        deps = _expand_point_deps(pl, layout.n_s, fam)
        n_rows = fam.jac.n_rows
        for r in range(n_rows):
            for d in deps.get(r, ()):
                entries.add((row_base + r, d))
            if scaled:
                # the (tf-t0)/2 factor makes even constant rows vary with t0/tf
                entries.add((row_base + r, t0_slot))
                entries.add((row_base + r, t0_slot + 1))

    add_family(cont.dynamics[pl.index], 0, True)
    add_family(cont.path[pl.index], pl.n_y, False)
    add_family(cont.integrand[pl.index], pl.n_y + pl.n_c, True)
    n_rows = pl.n_y + pl.n_c + pl.n_q
    return sparsity.JacobianPattern(n_rows, n_in, entries)


def _point_hessian_union(pl, layout, cont):
    n_in = _asm_inputs(pl, layout.n_s)
    pairs = _tile_point_hessian(pl, layout.n_s, cont.dynamics[pl.index], True)
    if pl.n_c:
        pairs |= _tile_point_hessian(pl, layout.n_s, cont.path[pl.index], False)
    if pl.n_q:
        pairs |= _tile_point_hessian(pl, layout.n_s, cont.integrand[pl.index], True)
    return sparsity.HessianPattern(n_in, pairs)


def _stacked_point_fun(phase, pl, tau_i, n_s):
    """All continuous outputs at one collocation point as a function of the
    assembly inputs (y, u, t0, tf, s); dynamics and integrand rows carry
    the (tf-t0)/2 factor."""
    n_y, n_u = pl.n_y, pl.n_u

    def fun(x):
        y = x[:n_y]
        u = x[n_y:n_y + n_u]
        t0 = x[n_y + n_u]
        tf = x[n_y + n_u + 1]
        s = x[n_y + n_u + 2:]
        t = map_time_generic(tau_i, t0, tf)
        half = (tf - t0) * 0.5
        out = [half * v for v in phase.dynamics(y, u, t, s)]
        if pl.n_c:
            out += list(phase.path(y, u, t, s))
        if pl.n_q:
            out += [half * v for v in phase.integrand(y, u, t, s)]
        return out

    return fun


def _asm_point_vector(z, pl, layout, i):
    n_y, n_u = pl.n_y, pl.n_u
    x = np.empty(_asm_inputs(pl, layout.n_s))
    for m in range(n_y):
        x[m] = z[pl.ycol(m, i)]
    for j in range(n_u):
        x[n_y + j] = z[pl.ucol(j, i)]
    x[n_y + n_u] = z[pl.t0_index]
    x[n_y + n_u + 1] = z[pl.tf_index]
    x[n_y + n_u + 2:] = z[layout.s_offset:]
    return x


def nlp_jacobian(ocp, layout, cont, jac_pattern, z, rule):
    """Sparse constraints Jacobian: analytic D-band and Q entries plus
    engine-estimated continuous-function blocks scattered per point."""
    z = np.asarray(z, dtype=float)
    acc = {}

    def add(r, c, v):
        acc[(r, c)] = acc.get((r, c), 0.0) + v

    xi_cols = layout.endpoint_columns()
    for phase, pl in zip(ocp.phases, layout.phases):
        am = pl.am
        for m in range(pl.n_y):
            for i in range(pl.N):
                row = pl.defect_row(m, i)
                cols = am.support_slices[am.interval_of_point[i]]
                for j in range(cols.start, cols.stop):
                    add(row, pl.ycol(m, j), am.D[i, j])
        point_pattern = _point_pattern_union(pl, layout, cont)
        for j in range(pl.n_q):
            add(pl.rho_row(j), pl.qcol(j), 1.0)
        for i in range(pl.N):
            x = _asm_point_vector(z, pl, layout, i)
            fun = _stacked_point_fun(phase, pl, am.points[i], layout.n_s)
            Gi = derivest.jacobian(fun, x, point_pattern, rule).tocoo()
            for r, d, v in zip(Gi.row, Gi.col, Gi.data):
                col = _asm_col(pl, layout, d, i)
                if r < pl.n_y:
                    add(pl.defect_row(r, i), col, -v)
                elif r < pl.n_y + pl.n_c:
                    add(pl.path_row(r - pl.n_y, i), col, v)
                else:
                    jq = r - pl.n_y - pl.n_c
                    add(pl.rho_row(jq), col, -am.weights[i] * v)
    if layout.n_b:
        fun = _endpoint_fun(ocp, layout, "events")
        xi = z[xi_cols]
        Ge = derivest.jacobian(fun, xi, cont.events.jac, rule).tocoo()
        for r, d, v in zip(Ge.row, Ge.col, Ge.data):
            add(layout.event_row(r), xi_cols[d], v)

    if acc:
        rows, cols = zip(*acc.keys())
        data = list(acc.values())
    else:
        rows = cols = data = []
    return sp.csr_matrix((data, (rows, cols)), shape=(layout.n_con, layout.n_z))


def nlp_gradient(ocp, layout, cont, z, rule):
    """Dense objective gradient via the selected engine."""
    z = np.asarray(z, dtype=float)
    xi_cols = layout.endpoint_columns()
    fun = _endpoint_fun(ocp, layout, "objective")
    G = derivest.jacobian(fun, z[xi_cols], cont.objective.jac, rule).tocoo()
    g = np.zeros(layout.n_z)
    for _, d, v in zip(G.row, G.col, G.data):
        g[xi_cols[d]] += v
    return g


def nlp_hessian(ocp, layout, cont, hess_pattern, z, obj_weight, multipliers, rule):
    """Lower-triangular Lagrangian Hessian over the built pattern.

    The Lagrangian is obj_weight * objective + multipliers . constraints
    with constraints exactly as eval_constraints stacks them.
    """
    z = np.asarray(z, dtype=float)
    lam = np.asarray(multipliers, dtype=float)
    acc = {}

    def add(a, b, v):
        key = (a, b) if a >= b else (b, a)
        acc[key] = acc.get(key, 0.0) + v

    for phase, pl in zip(ocp.phases, layout.phases):
        am = pl.am
        point_hess = _point_hessian_union(pl, layout, cont)
        if point_hess.nnz == 0:
            continue
        for i in range(pl.N):
            w = np.empty(pl.n_y + pl.n_c + pl.n_q)
            for m in range(pl.n_y):
                w[m] = -lam[pl.defect_row(m, i)]
            for c in range(pl.n_c):
                w[pl.n_y + c] = lam[pl.path_row(c, i)]
            for j in range(pl.n_q):
                w[pl.n_y + pl.n_c + j] = -am.weights[i] * lam[pl.rho_row(j)]
            if not np.any(w):
                continue
            x = _asm_point_vector(z, pl, layout, i)
            stacked = _stacked_point_fun(phase, pl, am.points[i], layout.n_s)

            def weighted(xv, stacked=stacked, w=w):
                out = stacked(xv)
                total = 0.0
                for wk, vk in zip(w, out):
                    if wk != 0.0:
                        total = total + wk * vk
                return total

            Hi = derivest.hessian_weighted([weighted], [1.0], x, point_hess,
                                           rule).tocoo()
            for a, b, v in zip(Hi.row, Hi.col, Hi.data):
                if v != 0.0:
                    add(_asm_col(pl, layout, a, i), _asm_col(pl, layout, b, i), v)

    endpoint_pairs = cont.objective.hess.entries | cont.events.hess.entries
    if endpoint_pairs:
        xi_cols = layout.endpoint_columns()
        xi = z[xi_cols]
        obj_fun = _endpoint_fun(ocp, layout, "objective")
        ev_fun = _endpoint_fun(ocp, layout, "events") if layout.n_b else None
        ev_lam = lam[layout.event_offset:] if layout.n_b else np.zeros(0)

        def weighted_endpoint(v):
            total = 0.0
            if obj_weight != 0.0:
                total = total + obj_weight * obj_fun(v)[0]
            if ev_fun is not None and np.any(ev_lam):
                for lr, br in zip(ev_lam, ev_fun(v)):
                    if lr != 0.0:
                        total = total + lr * br
            return total

        if obj_weight != 0.0 or np.any(ev_lam):
            pattern = sparsity.HessianPattern(len(xi_cols), endpoint_pairs)
            He = derivest.hessian_weighted([weighted_endpoint], [1.0], xi,
                                           pattern, rule).tocoo()
            for a, b, v in zip(He.row, He.col, He.data):
                if v != 0.0:
                    add(xi_cols[a], xi_cols[b], v)

    if acc:
        rows = [k[0] for k in acc]
        cols = [k[1] for k in acc]
        data = list(acc.values())
    else:
        rows = cols = data = []
    return sp.csr_matrix((data, (rows, cols)), shape=(layout.n_z, layout.n_z))


# ---------------------------------------------------------------------------
# The assembled NLP
# ---------------------------------------------------------------------------

@dataclass
class NlpProblem:
    """Sparse NLP produced by LGR transcription of an Ocp."""

    ocp: Ocp
    layout: NlpLayout
    detector: Detector
    jac_pattern: sparsity.JacobianPattern
    hess_pattern: sparsity.HessianPattern
    cl: np.ndarray
    cu: np.ndarray
    zl: np.ndarray
    zu: np.ndarray
    continuous: ContinuousPatterns = field(repr=False, default=None)

    @property
    def n(self):
        return self.layout.n_z

    @property
    def m(self):
        return self.layout.n_con

    def objective(self, z):
        return eval_objective(self.ocp, self.layout, z)

    def constraints(self, z):
        return eval_constraints(self.ocp, self.layout, z)

    def gradient(self, z, rule):
        return nlp_gradient(self.ocp, self.layout, self.continuous, z, rule)

    def jacobian(self, z, rule):
        return nlp_jacobian(self.ocp, self.layout, self.continuous,
                            self.jac_pattern, z, rule)

    def hessian(self, z, obj_weight, multipliers, rule):
        return nlp_hessian(self.ocp, self.layout, self.continuous,
                           self.hess_pattern, z, obj_weight, multipliers, rule)

    def initial_guess(self):
        return initial_guess(self.ocp, self.layout)


def transcribe(ocp, meshes, detector=Detector.EXACT):
    """Build layout, bounds, and derivative patterns for an Ocp."""
    layout = build_layout(ocp, meshes)
    jac_pattern, hess_pattern, cont = build_patterns(ocp, layout, detector)
    zl, zu = variable_bounds(ocp, layout)
    cl, cu = constraint_bounds(ocp, layout)
    return NlpProblem(ocp=ocp, layout=layout, detector=detector,
                      jac_pattern=jac_pattern, hess_pattern=hess_pattern,
                      cl=cl, cu=cu, zl=zl, zu=zu, continuous=cont)


def _midpoint(lo, hi, fallback=0.0):
    if np.isfinite(lo) and np.isfinite(hi):
        return 0.5 * (lo + hi)
    if np.isfinite(lo):
        return lo
    if np.isfinite(hi):
        return hi
    return fallback


def initial_guess(ocp, layout):
    """States interpolate linearly between endpoint bounds; controls sit at
    zero (clipped into bounds); times honor per-phase guesses."""
    z = np.zeros(layout.n_z)
    for phase, pl in zip(ocp.phases, layout.phases):
        t0 = phase.t0_guess if phase.t0_guess is not None else \
            _midpoint(phase.t0_lower, phase.t0_upper)
        tf = phase.tf_guess if phase.tf_guess is not None else \
            _midpoint(phase.tf_lower, phase.tf_upper, fallback=t0 + 1.0)
        if not tf > t0:
            tf = t0 + 1.0
        z[pl.t0_index] = t0
        z[pl.tf_index] = tf
        if phase.state_guess is not None:
            times = map_time_generic(pl.am.support, t0, tf)
            for i in range(pl.N + 1):
                y_i = phase.state_guess(times[i])
                for m in range(pl.n_y):
                    z[pl.ycol(m, i)] = float(y_i[m])
        else:
            frac = (pl.am.support + 1.0) / 2.0
            for m in range(pl.n_y):
                a = _midpoint(phase.y_start_lower[m], phase.y_start_upper[m])
                b = _midpoint(phase.y_end_lower[m], phase.y_end_upper[m],
                              fallback=a)
                for i in range(pl.N + 1):
                    z[pl.ycol(m, i)] = a + (b - a) * frac[i]
        for j in range(pl.n_u):
            val = min(max(0.0, phase.u_lower[j]), phase.u_upper[j])
            for i in range(pl.N):
                z[pl.ucol(j, i)] = val
        for j in range(pl.n_q):
            z[pl.qcol(j)] = min(max(0.0, phase.q_lower[j]), phase.q_upper[j])
    for k in range(layout.n_s):
        z[layout.scol(k)] = _midpoint(ocp.s_lower[k], ocp.s_upper[k])
    return z
