"""Benchmark problems.

* ``example_scalar``     -- the scalar function used for the derivative
  accuracy study, with its analytic first and second derivatives.
* ``free_flying_robot``  -- minimum-fuel planar robot with four bounded
  thrusters and two thrust path constraints.
* ``min_time_climb``     -- supersonic aircraft minimum time-to-climb with
  tabulated aerodynamic and propulsion data (synthetic smooth placeholder
  tables by default; users can supply their own CSV tables).
* ``space_station``      -- space station attitude control with a momentum
  path constraint and terminal equilibrium event constraints.

All problem callbacks are written against the generic scalar helpers so
the derivative engines can evaluate them with bicomplex and hyper-dual
inputs; every branch tests real parts only.
"""

import bisect
import csv
import math
import warnings
from dataclasses import dataclass

import numpy as np
from scipy.interpolate import CubicSpline

from .hypercomplex import HyperDual, cos, exp, real_part, sin
from .transcription import Ocp, OcpPhase

_INF = float("inf")


# ---------------------------------------------------------------------------
# Scalar derivative study
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ScalarStudy:
    """f(x) = x^2 / (sin x + x e^x) and its analytic derivatives."""

    f: callable
    f1: callable
    f2: callable


def example_scalar():
    def f(x):
        return x * x / (sin(x) + x * exp(x))

    def f1(x):
        s, c, e = math.sin(x), math.cos(x), math.exp(x)
        return x * (2.0 * s - x * c + (x - x * x) * e) / (s + x * e) ** 2

    def f2(x):
        s, c, e = math.sin(x), math.cos(x), math.exp(x)
        num = ((x * x + 2.0) * s * s
               + (-4.0 * x * c - 6.0 * x * x * e) * s
               + 2.0 * x * x * c * c
               + 4.0 * x ** 3 * e * c
               + (x ** 4 - 2.0 * x ** 3) * math.exp(2.0 * x))
        return num / (s + x * e) ** 3

    return ScalarStudy(f=f, f1=f1, f2=f2)


# ---------------------------------------------------------------------------
# Free-flying robot
# ---------------------------------------------------------------------------

FREE_FLYING_ALPHA = 0.2
FREE_FLYING_BETA = 0.2
FREE_FLYING_U_MAX = 1000.0
FREE_FLYING_THRUST_MAX = 1.0
FREE_FLYING_Y0 = (-10.0, -10.0, 0.0, 0.0, math.pi / 2.0, 0.0)
FREE_FLYING_YF = (0.0, 0.0, 0.0, 0.0, 0.0, 0.0)


def free_flying_robot():
    """Minimum-fuel planar robot; states (x, y, vx, vy, theta, omega),
    controls u1..u4 >= 0 with net thrusts F1 = u1-u2, F2 = u3-u4 <= 1."""

    def dynamics(y, u, t, s):
        theta = y[4]
        f1 = u[0] - u[1]
        f2 = u[2] - u[3]
        thrust = f1 + f2
        return [y[2], y[3],
                thrust * cos(theta), thrust * sin(theta),
                y[5],
                FREE_FLYING_ALPHA * f1 - FREE_FLYING_BETA * f2]

    def path(y, u, t, s):
        return [u[0] - u[1], u[2] - u[3]]

    def integrand(y, u, t, s):
        return [u[0] + u[1] + u[2] + u[3]]

    phase = OcpPhase(
        n_y=6, n_u=4, n_q=1, n_c=2,
        dynamics=dynamics, path=path, integrand=integrand,
        u_lower=np.zeros(4), u_upper=np.full(4, FREE_FLYING_U_MAX),
        c_upper=np.full(2, FREE_FLYING_THRUST_MAX),
        y_start_lower=np.array(FREE_FLYING_Y0),
        y_start_upper=np.array(FREE_FLYING_Y0),
        y_end_lower=np.array(FREE_FLYING_YF),
        y_end_upper=np.array(FREE_FLYING_YF),
        t0_lower=0.0, t0_upper=0.0,
        tf_lower=0.1, tf_upper=100.0, tf_guess=12.0,
    )

    def objective(endpoints, s):
        return endpoints[0].q[0]

    return Ocp(phases=[phase], objective=objective, name="free-flying-robot")


# ---------------------------------------------------------------------------
# Table interpolants (generic over the scalar type)
# ---------------------------------------------------------------------------

class Table1D:
    """Natural cubic spline through (x, value) samples.

    Evaluation stays inside the sample range: queries are clamped to the
    nearest edge (with a warning), which keeps derivative channels zero
    beyond the table.  Per-interval evaluation is plain polynomial
    arithmetic, so bicomplex and hyper-dual inputs pass through exactly.
    """

    def __init__(self, x, values, name="table"):
        self.x = np.asarray(x, dtype=float)
        self.values = np.asarray(values, dtype=float)
        if len(self.x) < 2 or np.any(np.diff(self.x) <= 0):
            raise ValueError(f"{name}: need strictly increasing sample grid")
        spline = CubicSpline(self.x, self.values, bc_type="natural")
        self.coeffs = spline.c  # (4, len(x)-1): cubic first
        self.name = name
        self._knots = list(self.x)

    def _clamped(self, t):
        tr = real_part(t)
        if tr < self.x[0] or tr > self.x[-1]:
            warnings.warn(f"{self.name}: query {tr} outside "
                          f"[{self.x[0]}, {self.x[-1]}], clamped",
                          stacklevel=3)
            return float(np.clip(tr, self.x[0], self.x[-1])), True
        return t, False

    def __call__(self, t):
        t, _ = self._clamped(t)
        i = bisect.bisect_right(self._knots, real_part(t)) - 1
        i = min(max(i, 0), len(self._knots) - 2)
        dt = t - self.x[i]
        c = self.coeffs[:, i]
        return ((c[0] * dt + c[1]) * dt + c[2]) * dt + c[3]


class Table2D:
    """Tensor-product natural bicubic spline on a rectangular grid.

    Built by splining along the first axis and then splining each
    polynomial coefficient along the second axis, so every cell is a
    bivariate polynomial (exact for hypercomplex inputs).
    """

    def __init__(self, x, y, values, name="table2d"):
        self.x = np.asarray(x, dtype=float)
        self.y = np.asarray(y, dtype=float)
        values = np.asarray(values, dtype=float)
        if values.shape != (len(self.x), len(self.y)):
            raise ValueError(f"{name}: values must be (len(x), len(y))")
        cx = CubicSpline(self.x, values, bc_type="natural", axis=0).c
        # cx: (4, nx-1, ny); spline each coefficient sheet along y
        self.coeffs = CubicSpline(self.y, cx, bc_type="natural", axis=2).c
        # coeffs: (4, ny-1, 4, nx-1) -> [l, j, k, i]
        self.name = name
        self._kx = list(self.x)
        self._ky = list(self.y)

    def __call__(self, xq, yq):
        xr, yr = real_part(xq), real_part(yq)
        if xr < self.x[0] or xr > self.x[-1]:
            warnings.warn(f"{self.name}: query outside grid, clamped", stacklevel=3)
            xq = xr = float(np.clip(xr, self.x[0], self.x[-1]))
        if yr < self.y[0] or yr > self.y[-1]:
            warnings.warn(f"{self.name}: query outside grid, clamped", stacklevel=3)
            yq = yr = float(np.clip(yr, self.y[0], self.y[-1]))
        i = min(max(bisect.bisect_right(self._kx, xr) - 1, 0), len(self._kx) - 2)
        j = min(max(bisect.bisect_right(self._ky, yr) - 1, 0), len(self._ky) - 2)
        dx = xq - self.x[i]
        dy = yq - self.y[j]
        total = 0.0
        for k in range(4):  # power of dx is 3-k, accumulated Horner-style
            ck = self.coeffs[:, j, k, i]
            poly_y = ((ck[0] * dy + ck[1]) * dy + ck[2]) * dy + ck[3]
            total = total * dx + poly_y
        return total


def load_table_1d(path, name="table"):
    """CSV rows `x,value`; a non-numeric first row is treated as a header."""
    xs, vs = [], []
    with open(path, newline="") as fh:
        for row in csv.reader(fh):
            if not row:
                continue
            try:
                xs.append(float(row[0]))
                vs.append(float(row[1]))
            except ValueError:
                if xs:
                    raise
    return Table1D(xs, vs, name=name)


def load_table_2d(path, name="table2d"):
    """CSV rows `x,y,value` on a rectangular grid, any row order."""
    points = {}
    with open(path, newline="") as fh:
        for row in csv.reader(fh):
            if not row:
                continue
            try:
                points[(float(row[0]), float(row[1]))] = float(row[2])
            except ValueError:
                if points:
                    raise
    xs = sorted({k[0] for k in points})
    ys = sorted({k[1] for k in points})
    values = np.empty((len(xs), len(ys)))
    for i, x in enumerate(xs):
        for j, y in enumerate(ys):
            try:
                values[i, j] = points[(x, y)]
            except KeyError:
                raise ValueError(f"{name}: grid point ({x}, {y}) missing "
                                 "(rectangular grid required)") from None
    return Table2D(xs, ys, values, name=name)


# ---------------------------------------------------------------------------
# Minimum time-to-climb
# ---------------------------------------------------------------------------

CLIMB_RE = 6378145.0          # m
CLIMB_MU = 3.986e14           # m^3/s^2
CLIMB_G0 = 9.80665            # m/s^2
CLIMB_S = 49.2386             # m^2
CLIMB_ISP = 1600.0            # s
CLIMB_V0 = 129.314            # m/s
CLIMB_HF = 19994.88           # m
CLIMB_VF = 295.092            # m/s
# the source prints m(0) = 0 kg, which makes the dynamics singular; a
# positive default mass is used instead and remains configurable
CLIMB_M0_DEFAULT = 19050.0    # kg


@dataclass(frozen=True)
class ClimbTables:
    """The six model functions of the climb problem."""

    c_l_alpha: object   # CLalpha(M)
    c_d0: object        # CD0(M)
    eta: object         # eta(M)
    thrust: object      # T(h, M)
    rho: object         # rho(h)
    sound_speed: object  # A(h)


def default_climb_tables():
    """Smooth synthetic placeholder tables.

    The real aerodynamic and propulsion data live in an external reference;
    these surrogates (exponential atmosphere, piecewise-linear speed of
    sound, quadratic aero coefficients, bilinear thrust) keep the problem
    runnable with the same spline machinery that user tables go through.
    """
    h_grid = np.linspace(0.0, 21000.0, 15)
    m_grid = np.linspace(0.0, 2.2, 12)

    rho = 1.225 * np.exp(-h_grid / 7254.24)
    sound = np.where(h_grid < 11000.0,
                     340.294 - (340.294 - 295.07) * h_grid / 11000.0,
                     295.07)
    cla = 3.44 + 1.2 * m_grid - 0.6 * m_grid ** 2
    cd0 = 0.012 + 0.008 * m_grid ** 2
    eta = 0.54 + 0.15 * m_grid ** 2
    thrust = np.empty((len(h_grid), len(m_grid)))
    for i, h in enumerate(h_grid):
        for j, m in enumerate(m_grid):
            thrust[i, j] = 90000.0 * (1.0 + 0.3 * m) * (1.0 - h / 40000.0)
    return ClimbTables(
        c_l_alpha=Table1D(m_grid, cla, name="CLalpha"),
        c_d0=Table1D(m_grid, cd0, name="CD0"),
        eta=Table1D(m_grid, eta, name="eta"),
        thrust=Table2D(h_grid, m_grid, thrust, name="thrust"),
        rho=Table1D(h_grid, rho, name="rho"),
        sound_speed=Table1D(h_grid, sound, name="sound-speed"),
    )


def min_time_climb(tables=None, m0=CLIMB_M0_DEFAULT):
    """Minimum time-to-climb; states (h, v, gamma, m), control alpha."""
    if m0 <= 0.0:
        raise ValueError("initial mass must be positive (the dynamics divide by m)")
    tables = tables or default_climb_tables()

    def dynamics(y, u, t, s):
        h, v, gamma, m = y[0], y[1], y[2], y[3]
        alpha = u[0]
        r = h + CLIMB_RE
        a_snd = tables.sound_speed(h)
        mach = v / a_snd
        cla = tables.c_l_alpha(mach)
        cd0 = tables.c_d0(mach)
        eta = tables.eta(mach)
        cl = cla * alpha
        cd = cd0 + eta * cla * alpha * alpha
        rho = tables.rho(h)
        q = 0.5 * rho * v * v
        lift = CLIMB_S * q * cl
        drag = CLIMB_S * q * cd
        thrust = tables.thrust(h, mach)
        sg, cg = sin(gamma), cos(gamma)
        h_dot = v * sg
        v_dot = (thrust * cos(alpha) - drag) / m - CLIMB_MU * sg / (r * r)
        gamma_dot = (thrust * sin(alpha) + lift) / (m * v) \
            + cg * (v / r - CLIMB_MU / (v * r * r))
        m_dot = -thrust / (CLIMB_G0 * CLIMB_ISP)
        return [h_dot, v_dot, gamma_dot, m_dot]

    phase = OcpPhase(
        n_y=4, n_u=1,
        dynamics=dynamics,
        y_lower=np.array([0.0, 50.0, -1.2, 100.0]),
        y_upper=np.array([21000.0, 600.0, 1.2, 25000.0]),
        u_lower=np.array([-math.pi / 4.0]),
        u_upper=np.array([math.pi / 4.0]),
        y_start_lower=np.array([0.0, CLIMB_V0, 0.0, m0]),
        y_start_upper=np.array([0.0, CLIMB_V0, 0.0, m0]),
        y_end_lower=np.array([CLIMB_HF, CLIMB_VF, 0.0, 100.0]),
        y_end_upper=np.array([CLIMB_HF, CLIMB_VF, 0.0, 25000.0]),
        t0_lower=0.0, t0_upper=0.0,
        tf_lower=50.0, tf_upper=800.0, tf_guess=350.0,
    )

    def objective(endpoints, s):
        return endpoints[0].tf

    return Ocp(phases=[phase], objective=objective, name="min-time-climb")


# ---------------------------------------------------------------------------
# Space station attitude control
# ---------------------------------------------------------------------------

STATION_J = np.array([
    [2.80701911616e7, 4.822509936e5, -1.71675094448e7],
    [4.822509936e5, 9.5144639344e7, 6.02604448e4],
    [-1.71675094448e7, 6.02604448e4, 7.6594401336e7],
])  # kg m^2
STATION_OMEGA_ORB = 0.06511 * math.pi / 180.0  # rad/s
STATION_H_MAX = 10000.0
STATION_OMEGA0 = (-9.53807e-6, -1.13633e-3, 5.34728e-6)
STATION_R0 = (2.99637e-3, 1.53345e-1, 3.83598e-3)
STATION_H0 = (5000.0, 5000.0, 5000.0)
STATION_T0 = 0.0
STATION_TF = 1800.0

_STATION_J_INV = np.linalg.inv(STATION_J)


def _cross(a, b):
    return [a[1] * b[2] - a[2] * b[1],
            a[2] * b[0] - a[0] * b[2],
            a[0] * b[1] - a[1] * b[0]]


def _dot(a, b):
    return a[0] * b[0] + a[1] * b[1] + a[2] * b[2]


def _matvec(M, v):
    return [M[i][0] * v[0] + M[i][1] * v[1] + M[i][2] * v[2] for i in range(3)]


def _station_c_column(r, col):
    """Column of C(r) = I + 2/(1 + r'r) * (rx rx - rx), rx the skew form."""
    e = [0.0, 0.0, 0.0]
    e[col] = 1.0
    scale = 2.0 / (1.0 + _dot(r, r))
    rxe = _cross(r, e)
    rxrxe = _cross(r, rxe)
    return [e[i] + scale * (rxrxe[i] - rxe[i]) for i in range(3)]


def station_omega_orbital(r):
    """omega_0(r) = -omega_orb * C_2(r)."""
    c2 = _station_c_column(r, 1)
    return [-STATION_OMEGA_ORB * v for v in c2]


def station_gravity_torque(r):
    """tau_gg(r) = 3 omega_orb^2 * C_3 x (J C_3)."""
    c3 = _station_c_column(r, 2)
    jc3 = _matvec(STATION_J, c3)
    t = _cross(c3, jc3)
    return [3.0 * STATION_OMEGA_ORB ** 2 * v for v in t]


def _station_omega_dot(omega, r, h, u):
    tau = station_gravity_torque(r)
    jw = _matvec(STATION_J, omega)
    gyro = _cross(omega, [jw[i] + h[i] for i in range(3)])
    rhs = [tau[i] - gyro[i] - u[i] for i in range(3)]
    return _matvec(_STATION_J_INV, rhs)


def _station_r_dot(omega, r):
    w0 = station_omega_orbital(r)
    dv = [omega[i] - w0[i] for i in range(3)]
    rdotv = _dot(r, dv)
    rx_dv = _cross(r, dv)
    return [0.5 * (r[i] * rdotv + dv[i] + rx_dv[i]) for i in range(3)]


def space_station():
    """Station attitude control; states (omega, r, h), controls u = input
    moment, quadratic control cost, |h| <= h_max path constraint (squared
    for smoothness), and terminal attitude/rate equilibrium events."""

    def dynamics(y, u, t, s):
        omega, r, h = y[0:3], y[3:6], y[6:9]
        return (_station_omega_dot(omega, r, h, u)
                + _station_r_dot(omega, r)
                + [u[0], u[1], u[2]])

    def path(y, u, t, s):
        h = y[6:9]
        return [_dot(h, h)]

    def integrand(y, u, t, s):
        return [0.5 * _dot(u, u)]

    y0 = np.array(STATION_OMEGA0 + STATION_R0 + STATION_H0)

    # initializer trajectory: free (zero-control) propagation of the
    # dynamics; a straight-line state guess fights the gravity-gradient
    # motion and demands control bridges orders of magnitude beyond the
    # optimal ones
    from scipy.integrate import solve_ivp

    def rhs(t, y):
        return [float(v) for v in dynamics(y, np.zeros(3), t, np.zeros(0))]

    drift = solve_ivp(rhs, (STATION_T0, STATION_TF), y0,
                      rtol=1e-9, atol=1e-11, dense_output=True)

    phase = OcpPhase(
        n_y=9, n_u=3, n_q=1, n_c=1,
        dynamics=dynamics, path=path, integrand=integrand,
        c_upper=np.array([STATION_H_MAX ** 2]),
        y_start_lower=y0.copy(), y_start_upper=y0.copy(),
        t0_lower=STATION_T0, t0_upper=STATION_T0,
        tf_lower=STATION_TF, tf_upper=STATION_TF,
        state_guess=drift.sol,
    )

    def objective(endpoints, s):
        return endpoints[0].q[0]

    def events(endpoints, s):
        # terminal equilibrium: omega_dot(tf) = 0 and r_dot(tf) = 0, stated
        # without their constant invertible prefactors (J^-1 and the
        # Rodrigues map): the feasible set is unchanged and the rows keep
        # O(1)-conditioned entries instead of inverse-inertia magnitudes
        yf = endpoints[0].y_end
        omega, r, h = yf[0:3], yf[3:6], yf[6:9]
        tau = station_gravity_torque(r)
        jw = _matvec(STATION_J, omega)
        gyro = _cross(omega, [jw[i] + h[i] for i in range(3)])
        torque_balance = [tau[i] - gyro[i] for i in range(3)]
        w0 = station_omega_orbital(r)
        rate_match = [omega[i] - w0[i] for i in range(3)]
        return torque_balance + rate_match

    return Ocp(phases=[phase], objective=objective,
               n_b=6, events=events,
               b_lower=np.zeros(6), b_upper=np.zeros(6),
               name="space-station")
