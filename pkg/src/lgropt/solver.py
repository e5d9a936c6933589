"""Primal-dual interior-point Newton solver and method-comparison harness.

A deliberately compact monotone (Fiacco-McCormick) barrier method:
inequality constraint rows get slack variables, bounds get log-barrier
terms with explicit dual estimates, and each iteration solves one
regularized symmetric indefinite KKT system (dense LDL' with inertia
correction), followed by a fraction-to-boundary cut and a backtracking
line search on an l1 merit function.  The solver treats the NLP derivative
interface as a black box, so any derivative engine can back it; the time
spent assembling derivatives is tracked separately because that is what
the method comparison reports.

Fixed variables (equal bounds) are substituted out before the solve.
Badly scaled problems are handled with gradient-based objective and
constraint row scaling computed once at the initial point.
"""

import csv
import time
from dataclasses import dataclass

import numpy as np
import scipy.linalg
import scipy.sparse as sp

from . import derivest
from .derivest import StepRule
from .lgr import Mesh
from .sparsity import HessianPattern, JacobianPattern
from .transcription import Detector, initial_guess, transcribe

_INF = float("inf")


@dataclass
class SolverOptions:
    tol: float = 1e-7
    max_iter: int = 500
    mu_init: float = 1e-1
    kappa_mu: float = 0.2       # linear mu reduction factor
    theta_mu: float = 1.5       # superlinear mu reduction exponent
    kappa_eps: float = 10.0     # barrier subproblem tolerance = kappa_eps*mu
    tau_min: float = 0.99       # fraction-to-boundary floor
    bound_push: float = 1e-2
    delta_w0: float = 1e-8      # first Hessian regularization attempt
    delta_w_max: float = 1e20
    scale: bool = True          # gradient-based function scaling
    scale_max: float = 100.0
    scale_variables: bool = True  # diagonal variable scaling from the guess
    max_backtracks: int = 30

    def __post_init__(self):
        if self.tol <= 0.0:
            raise ValueError("tol must be positive")
        if self.max_iter < 1:
            raise ValueError("max_iter must be at least 1")


@dataclass
class IterationStats:
    iterations: int = 0
    total_time: float = 0.0           # seconds
    deriv_time_per_iter: float = 0.0  # milliseconds
    converged: bool = False
    kkt_error: float = _INF
    feasibility: float = _INF
    objective: float = float("nan")


def percent_reduction(xi_oc, xi_a):
    """(xi_OC - xi_A)/xi_OC * 100: positive when a method beats the
    over-estimated-sparsity central-difference baseline."""
    if xi_oc == 0.0:
        raise ZeroDivisionError("baseline metric is zero")
    return (xi_oc - xi_a) / xi_oc * 100.0


@dataclass(frozen=True)
class Gamma:
    """Percent reduction of one metric for one method against the baseline."""

    xi_oc: float
    xi_a: float

    @property
    def value(self):
        return percent_reduction(self.xi_oc, self.xi_a)


class FactorizationError(RuntimeError):
    pass


def _restoration_step(A, ctilde, x, xl, xu, has_lo, has_hi, tau, theta_l1):
    """Damped Gauss-Newton step on the constraint residuals.

    Solves (A'A + rho I) d = -A' ctilde, cuts the step at the bounds, and
    backtracks on the l1 infeasibility.  Returns (accepted, new_x).
    """
    n = len(x)
    M = A.T @ A
    rho = 1e-10 * max(1.0, np.trace(M) / max(1, n))
    M[np.arange(n), np.arange(n)] += rho
    try:
        d = scipy.linalg.solve(M, -A.T @ ctilde, assume_a="pos")
    except scipy.linalg.LinAlgError:
        return False, x
    if not np.all(np.isfinite(d)):
        return False, x
    beta = 1.0
    mask = has_lo & (d < 0.0)
    if np.any(mask):
        beta = min(beta, np.min(-tau * (x - xl)[mask] / d[mask]))
    mask = has_hi & (d > 0.0)
    if np.any(mask):
        beta = min(beta, np.min(tau * (xu - x)[mask] / d[mask]))
    theta0 = theta_l1(x)
    for _ in range(25):
        x_try = x + beta * d
        if theta_l1(x_try) <= (1.0 - 1e-4 * beta) * theta0:
            return True, x_try
        beta *= 0.5
    return False, x


class _VariableScaledNlp:
    """Diagonal change of variables z = sigma * w around an NLP.

    Keeps the constraint rows (and hence multipliers and feasibility
    measures) in their natural units while the solver iterates on w.
    """

    def __init__(self, nlp, sigma):
        self.inner = nlp
        self.sigma = np.asarray(sigma, float)
        self.zl = nlp.zl / self.sigma
        self.zu = nlp.zu / self.sigma
        self.cl = nlp.cl
        self.cu = nlp.cu

    def to_inner(self, w):
        return self.sigma * w

    def initial_guess(self):
        return self.inner.initial_guess() / self.sigma

    def objective(self, w):
        return self.inner.objective(self.sigma * w)

    def constraints(self, w):
        return self.inner.constraints(self.sigma * w)

    def gradient(self, w, rule):
        return self.sigma * self.inner.gradient(self.sigma * w, rule)

    def jacobian(self, w, rule):
        return self.inner.jacobian(self.sigma * w, rule) @ sp.diags(self.sigma)

    def hessian(self, w, obj_weight, multipliers, rule):
        H = self.inner.hessian(self.sigma * w, obj_weight, multipliers, rule)
        D = sp.diags(self.sigma)
        return (D @ H @ D).tocsr()


# ---------------------------------------------------------------------------
# Symmetric indefinite factorization with inertia readout
# ---------------------------------------------------------------------------

def _ldl_inertia(d, tol=0.0):
    """Signs of the eigenvalues of the LDL' block diagonal (1x1/2x2 blocks)."""
    n = d.shape[0]
    pos = neg = zero = 0
    i = 0
    while i < n:
        if i + 1 < n and d[i + 1, i] != 0.0:
            a, b, c = d[i, i], d[i + 1, i], d[i + 1, i + 1]
            tr, det = a + c, a * c - b * b
            disc = np.sqrt(max(tr * tr / 4.0 - det, 0.0))
            eigs = (tr / 2.0 + disc, tr / 2.0 - disc)
            i += 2
        else:
            eigs = (d[i, i],)
            i += 1
        for lam in eigs:
            if lam > tol:
                pos += 1
            elif lam < -tol:
                neg += 1
            else:
                zero += 1
    return pos, neg, zero


def _ldl_solve(lu, d, perm, b):
    bp = b[perm]
    L = lu[perm, :]
    y = scipy.linalg.solve_triangular(L, bp, lower=True, unit_diagonal=True)
    n = len(b)
    w = np.empty(n)
    i = 0
    while i < n:
        if i + 1 < n and d[i + 1, i] != 0.0:
            w[i:i + 2] = scipy.linalg.solve(d[i:i + 2, i:i + 2], y[i:i + 2],
                                            assume_a="sym")
            i += 2
        else:
            if d[i, i] == 0.0:
                raise FactorizationError("singular pivot in LDL solve")
            w[i] = y[i] / d[i, i]
            i += 1
    xp = scipy.linalg.solve_triangular(L.T, w, lower=False, unit_diagonal=True)
    out = np.empty(n)
    out[perm] = xp
    return out


# ---------------------------------------------------------------------------
# The solver
# ---------------------------------------------------------------------------

def solve(nlp, rule, opts=None, z0=None, verbose=False, trace=None):
    """Minimize an NLP with the selected derivative engine.

    Returns (z, multipliers, stats).  The multipliers correspond to the
    constraint rows of the unscaled problem; stats carries iteration count,
    wall time, mean derivative-assembly time per iteration, and the final
    KKT error and feasibility.  Passing a list as ``trace`` collects one
    diagnostics dict per iteration.
    """
    opts = opts or SolverOptions()
    t_start = time.perf_counter()
    deriv_time = 0.0

    if z0 is None:
        z0 = nlp.initial_guess()
    z0 = np.clip(np.asarray(z0, float), nlp.zl, nlp.zu)

    # bring decision variables to O(1): momentum states three orders above
    # attitude states wreck the KKT conditioning otherwise
    var_scale = None
    if opts.scale_variables:
        var_scale = np.maximum(1.0, np.abs(z0))
        nlp = _VariableScaledNlp(nlp, var_scale)
        z0 = z0 / var_scale

    zl = np.asarray(nlp.zl, float)
    zu = np.asarray(nlp.zu, float)
    cl = np.asarray(nlp.cl, float)
    cu = np.asarray(nlp.cu, float)
    n_z = len(zl)
    m = len(cl)

    free = np.flatnonzero(zl < zu)
    fixed = np.flatnonzero(zl == zu)
    fixed_values = zl[fixed]
    eq = np.flatnonzero(cl == cu)
    ineq = np.flatnonzero(cl < cu)
    nf, ns = len(free), len(ineq)
    n_x = nf + ns

    def assemble_z(xz):
        z = np.empty(n_z)
        z[free] = xz
        z[fixed] = fixed_values
        return z

    # gradient-based objective and constraint-row scaling at the initial
    # point (in the variable-scaled space)
    obj_scale = 1.0
    row_scale = np.ones(m)
    if opts.scale:
        t0 = time.perf_counter()
        g0 = nlp.gradient(z0, rule)
        deriv_time += time.perf_counter() - t0
        gmax = np.max(np.abs(g0)) if n_z else 0.0
        if gmax > opts.scale_max:
            obj_scale = opts.scale_max / gmax
        if m:
            t0 = time.perf_counter()
            J0 = nlp.jacobian(z0, rule).tocoo()
            deriv_time += time.perf_counter() - t0
            row_max = np.zeros(m)
            np.maximum.at(row_max, J0.row, np.abs(J0.data))
            big = row_max > opts.scale_max
            row_scale[big] = opts.scale_max / row_max[big]

    sc = row_scale
    cl_eq_s = (sc * cl)[eq]
    xl = np.concatenate([zl[free], (sc * cl)[ineq]])
    xu = np.concatenate([zu[free], (sc * cu)[ineq]])
    has_lo = np.isfinite(xl)
    has_hi = np.isfinite(xu)
    n_bounds = int(has_lo.sum() + has_hi.sum())

    def push_inside(v, lo, hi):
        v = v.copy()
        fin_lo, fin_hi = np.isfinite(lo), np.isfinite(hi)
        both = fin_lo & fin_hi
        gap = np.where(both, hi - lo, _INF)
        p_lo = np.minimum(opts.bound_push * np.maximum(1.0, np.abs(np.where(fin_lo, lo, 0.0))),
                          0.25 * gap)
        p_hi = np.minimum(opts.bound_push * np.maximum(1.0, np.abs(np.where(fin_hi, hi, 0.0))),
                          0.25 * gap)
        v = np.where(fin_lo, np.maximum(v, lo + p_lo), v)
        v = np.where(fin_hi, np.minimum(v, hi - p_hi), v)
        return v

    x = np.empty(n_x)
    x[:nf] = push_inside(z0[free], xl[:nf], xu[:nf])
    z = assemble_z(x[:nf])
    if ns:
        x[nf:] = push_inside((sc * nlp.constraints(z))[ineq], xl[nf:], xu[nf:])

    mu = opts.mu_init
    vl = np.where(has_lo, mu / np.maximum(x - xl, 1e-12), 0.0)
    vu = np.where(has_hi, mu / np.maximum(xu - x, 1e-12), 0.0)

    # least-squares multiplier initialization: brings constraint curvature
    # into the very first Newton system (a zero start stalls on problems
    # whose objective is linear along the constraint surface)
    nu_rows = np.ones(m)  # per-row l1 penalty weights
    lam = np.zeros(m)  # multipliers of the scaled rows, natural row order
    if m:
        t0 = time.perf_counter()
        J_init = nlp.jacobian(z, rule)
        g_init = obj_scale * nlp.gradient(z, rule)
        deriv_time += time.perf_counter() - t0
        Jf0 = (sp.diags(sc) @ J_init).tocsr()[:, free].toarray()
        A0 = np.zeros((m, n_x))
        A0[:len(eq), :nf] = Jf0[eq, :]
        A0[len(eq):, :nf] = Jf0[ineq, :]
        if ns:
            A0[len(eq):, nf:] = -np.eye(ns)
        r0 = np.empty(n_x)
        r0[:nf] = g_init[free]
        if ns:
            r0[nf:] = 0.0
        r0 -= np.where(has_lo, vl, 0.0)
        r0 += np.where(has_hi, vu, 0.0)
        lam_ls, *_ = np.linalg.lstsq(A0.T, -r0, rcond=None)
        if np.all(np.isfinite(lam_ls)):
            lam[eq] = lam_ls[:len(eq)]
            lam[ineq] = lam_ls[len(eq):]
            # dual equilibration: scale constraint rows up by the estimated
            # multiplier magnitude so the scaled multipliers start O(1);
            # rows whose true multipliers are huge otherwise break every
            # penalty and dual safeguard downstream
            dual_mag = np.maximum(1.0, np.abs(lam))
            sc = sc * dual_mag
            cl_eq_s = (sc * cl)[eq]
            xl[nf:] = (sc * cl)[ineq]
            xu[nf:] = (sc * cu)[ineq]
            x[nf:] = x[nf:] * dual_mag[ineq]
            lam = lam / dual_mag
            vl[nf:] = np.where(has_lo[nf:],
                               mu / np.maximum(x[nf:] - xl[nf:], 1e-12), 0.0)
            vu[nf:] = np.where(has_hi[nf:],
                               mu / np.maximum(xu[nf:] - x[nf:], 1e-12), 0.0)

    stats = IterationStats()
    kkt_error = _INF
    # Levenberg-style persistent damping: raised when the line search keeps
    # rejecting the direction, decayed again after clean full steps, so the
    # solver slides between damped-gradient and pure Newton behavior
    delta_hint = 0.0

    def scaled_constraints(z):
        return sc * nlp.constraints(z)

    def slack_residual(c, x):
        return np.concatenate([c[eq] - cl_eq_s, c[ineq] - x[nf:]])

    def dual_residual(g, Jf, lam, vl_term, vu_term):
        r = np.empty(n_x)
        r[:nf] = g[free] + Jf.T @ lam
        if ns:
            r[nf:] = -lam[ineq]
        r -= vl_term
        r += vu_term
        return r

    def error_norm(r_d, ctilde, comp_lo, comp_hi, lam, vl, vu):
        s_max = 100.0
        mult_sum = np.sum(np.abs(lam)) + np.sum(np.abs(vl)) + np.sum(np.abs(vu))
        s_d = max(s_max, mult_sum / max(1, m + n_bounds)) / s_max
        s_c = max(s_max, (np.sum(np.abs(vl)) + np.sum(np.abs(vu)))
                  / max(1, n_bounds)) / s_max
        e_d = np.max(np.abs(r_d)) / s_d if n_x else 0.0
        e_p = np.max(np.abs(ctilde)) if m else 0.0
        e_c = 0.0
        if n_bounds:
            e_c = max(np.max(np.abs(comp_lo)), np.max(np.abs(comp_hi))) / s_c
        return max(e_d, e_p, e_c)

    def unscaled_feasibility(z):
        if m == 0:
            return 0.0
        c = nlp.constraints(z)
        viol = np.maximum(cl - c, 0.0) + np.maximum(c - cu, 0.0)
        return float(np.max(viol))

    def barrier_value(z, x):
        dl = (x - xl)[has_lo]
        du = (xu - x)[has_hi]
        if np.any(dl <= 0.0) or np.any(du <= 0.0):
            return _INF
        val = obj_scale * nlp.objective(z)
        return val - mu * (np.sum(np.log(dl)) + np.sum(np.log(du)))

    for _ in range(opts.max_iter):
        z = assemble_z(x[:nf])
        t0 = time.perf_counter()
        g = obj_scale * nlp.gradient(z, rule)
        J = nlp.jacobian(z, rule)
        deriv_time += time.perf_counter() - t0
        Jf = sp.diags(sc) @ J
        Jf = Jf.tocsr()[:, free]
        c = scaled_constraints(z)
        ctilde = slack_residual(c, x)

        dist_lo = np.where(has_lo, x - xl, 1.0)
        dist_hi = np.where(has_hi, xu - x, 1.0)
        r_d = dual_residual(g, Jf, lam,
                            np.where(has_lo, vl, 0.0),
                            np.where(has_hi, vu, 0.0))

        kkt_error = error_norm(r_d, ctilde,
                               np.where(has_lo, vl * dist_lo, 0.0),
                               np.where(has_hi, vu * dist_hi, 0.0),
                               lam, vl, vu)
        feas = unscaled_feasibility(z)
        if kkt_error <= opts.tol and feas <= 10.0 * opts.tol:
            stats.converged = True
            break

        # monotone barrier reduction once the subproblem is solved enough
        def e_mu_of(mu_val):
            return error_norm(r_d, ctilde,
                              np.where(has_lo, vl * dist_lo - mu_val, 0.0),
                              np.where(has_hi, vu * dist_hi - mu_val, 0.0),
                              lam, vl, vu)

        while n_bounds and mu > opts.tol / 100.0 and e_mu_of(mu) <= opts.kappa_eps * mu:
            mu = max(opts.tol / 100.0,
                     min(opts.kappa_mu * mu, mu ** opts.theta_mu))

        t0 = time.perf_counter()
        H = nlp.hessian(z, obj_scale, sc * lam, rule)
        deriv_time += time.perf_counter() - t0
        Hd = H.toarray()
        Hd = Hd + Hd.T - np.diag(np.diag(Hd))
        Hff = Hd[np.ix_(free, free)]

        sigma = np.where(has_lo, vl / dist_lo, 0.0) \
            + np.where(has_hi, vu / dist_hi, 0.0)
        r_mu = np.empty(n_x)
        r_mu[:nf] = g[free] + Jf.T @ lam
        if ns:
            r_mu[nf:] = -lam[ineq]
        r_mu -= np.where(has_lo, mu / dist_lo, 0.0)
        r_mu += np.where(has_hi, mu / dist_hi, 0.0)

        A = np.zeros((m, n_x))
        Jfd = Jf.toarray()
        A[:len(eq), :nf] = Jfd[eq, :]
        A[len(eq):, :nf] = Jfd[ineq, :]
        if ns:
            A[len(eq):, nf:] = -np.eye(ns)
        rhs = np.concatenate([-r_mu, -ctilde])

        delta_w = 0.0 if delta_hint < opts.delta_w0 else delta_hint
        delta_c = 0.0
        while True:
            K = np.zeros((n_x + m, n_x + m))
            K[:nf, :nf] = Hff
            K[np.arange(n_x), np.arange(n_x)] += sigma + delta_w
            K[:n_x, n_x:] = A.T
            K[n_x:, :n_x] = A
            if delta_c:
                K[np.arange(n_x, n_x + m), np.arange(n_x, n_x + m)] = -delta_c
            step = None
            try:
                lu, d, perm = scipy.linalg.ldl(K, lower=True)
                pos, neg, zero = _ldl_inertia(d)
                if pos == n_x and neg == m and zero == 0:
                    step = _ldl_solve(lu, d, perm, rhs)
            except Exception:
                pos = neg = zero = -1
            if step is not None and np.all(np.isfinite(step)):
                break
            if zero != 0 or (0 <= neg < m):
                # zero pivots or a sign flip in the constraint block both
                # signal (near-)dependent rows; perturb the dual block
                delta_c = max(delta_c * 10.0, 1e-8 * max(mu, 1e-10) ** 0.25)
            delta_w = opts.delta_w0 if delta_w == 0.0 else 10.0 * delta_w
            if delta_w > opts.delta_w_max:
                raise FactorizationError(
                    "KKT inertia correction failed "
                    f"(delta_w={delta_w:.1e}, inertia=({pos},{neg},{zero}))")

        dx = step[:n_x]
        dlam_stacked = step[n_x:]
        dlam = np.zeros(m)
        dlam[eq] = dlam_stacked[:len(eq)]
        dlam[ineq] = dlam_stacked[len(eq):]

        dvl = np.where(has_lo, (mu - vl * dx) / dist_lo - vl, 0.0)
        dvu = np.where(has_hi, (mu + vu * dx) / dist_hi - vu, 0.0)

        tau = max(opts.tau_min, 1.0 - mu)
        alpha_pr = 1.0
        ftb_idx = -1
        mask = has_lo & (dx < 0.0)
        if np.any(mask):
            ratios = -tau * dist_lo[mask] / dx[mask]
            k = int(np.argmin(ratios))
            if ratios[k] < alpha_pr:
                alpha_pr = float(ratios[k])
                ftb_idx = int(np.flatnonzero(mask)[k])
        mask = has_hi & (dx > 0.0)
        if np.any(mask):
            ratios = tau * dist_hi[mask] / dx[mask]
            k = int(np.argmin(ratios))
            if ratios[k] < alpha_pr:
                alpha_pr = float(ratios[k])
                ftb_idx = int(np.flatnonzero(mask)[k])
        alpha_du = 1.0
        for v_arr, dv_arr, mask_arr in ((vl, dvl, has_lo), (vu, dvu, has_hi)):
            mask = mask_arr & (dv_arr < 0.0)
            if np.any(mask):
                alpha_du = min(alpha_du,
                               np.min(-tau * v_arr[mask] / dv_arr[mask]))

        # l1 merit line search with row-wise penalty weights: each row is
        # priced by its own multiplier estimate, so a benign bookkeeping
        # row (an integral residual, say) cannot veto progress that rows
        # with large multipliers are paying for
        theta0 = float(np.sum(np.abs(ctilde)))
        gb = np.empty(n_x)
        gb[:nf] = g[free]
        if ns:
            gb[nf:] = 0.0
        gb -= np.where(has_lo, mu / dist_lo, 0.0)
        gb += np.where(has_hi, mu / dist_hi, 0.0)
        d_dir = float(gb @ dx)
        lam_stack = np.concatenate([lam[eq], lam[ineq]])
        nu_rows = np.maximum(np.minimum(1.5 * np.abs(lam_stack), 1e6) + 0.1,
                             0.5 * nu_rows)
        theta_w0 = float(nu_rows @ np.abs(ctilde))
        merit0 = barrier_value(z, x) + theta_w0
        d_merit = d_dir - theta_w0

        alpha = alpha_pr
        accepted = False
        if verbose and verbose > 1:
            print(f"   LS: th={theta0:.3e} numax={nu_rows.max() if m else 0:.3e} "
                  f"d_dir={d_dir:.3e} d_merit={d_merit:.3e} merit0={merit0:.8e}")

        def merit_at(alpha):
            x_try = x + alpha * dx
            z_try = assemble_z(x_try[:nf])
            try:
                c_try = scaled_constraints(z_try)
                value = barrier_value(z_try, x_try) \
                    + nu_rows @ np.abs(slack_residual(c_try, x_try))
            except (ValueError, ZeroDivisionError, ArithmeticError, OverflowError):
                value = _INF
            return value, x_try

        for _bt in range(opts.max_backtracks):
            merit_try, x_try = merit_at(alpha)
            if verbose and verbose > 1 and _bt < 5:
                print(f"      a={alpha:.3e} merit={merit_try:.8e} "
                      f"diff={merit_try - merit0:.3e}")
            if np.isfinite(merit_try) \
                    and merit_try <= merit0 + 1e-4 * alpha * min(d_merit, 0.0):
                accepted = True
                break
            if _bt == 0 and np.isfinite(merit_try) and d_merit < 0.0:
                # jump near the minimizer of the quadratic through
                # (0, merit0), slope d_merit, and (alpha, merit_try)
                curv = (merit_try - merit0 - d_merit * alpha) / alpha**2
                if curv > 0.0:
                    alpha_q = -0.5 * d_merit / curv
                    alpha = min(max(alpha_q, 1e-14), 0.5 * alpha)
                    continue
            alpha *= 0.5
        restored = False
        if not accepted:
            # feasibility restoration: when no useful fraction of the Newton
            # direction passes the merit test, fall back to a damped
            # Gauss-Newton step on the constraint residuals alone
            restored, x_rest = _restoration_step(
                A, ctilde, x, xl, xu, has_lo, has_hi, tau,
                lambda xv: np.sum(np.abs(slack_residual(
                    scaled_constraints(assemble_z(xv[:nf])), xv))))
            if restored:
                x_try = x_rest
                alpha = 0.0
            else:
                alpha = min(alpha_pr, 1e-10)  # crawl rather than stall
                x_try = x + alpha * dx

        # damping feedback: rejected or microscopic steps ask for a more
        # conservative direction next time, clean steps relax the damping;
        # the ceiling keeps the damping from drowning genuine curvature
        if alpha < 1e-2:
            delta_hint = min(max(opts.delta_w0, 10.0 * max(delta_w, delta_hint)),
                             1e3)
        elif alpha >= 0.9:
            delta_hint = 0.0 if delta_w < opts.delta_w0 else delta_w / 10.0
        else:
            delta_hint = delta_w / 3.0

        if verbose:
            print(f"it={stats.iterations:3d} mu={mu:9.2e} kkt={kkt_error:9.2e} "
                  f"feas={feas:9.2e} alpha={alpha:8.2e} du={alpha_du:8.2e} "
                  f"dw={delta_w:7.1e} |dx|={np.max(np.abs(dx)):9.2e} "
                  f"accepted={accepted}")
        if trace is not None:
            trace.append({
                "mu": mu, "kkt": float(kkt_error), "feas": float(feas),
                "alpha": float(alpha), "alpha_du": float(alpha_du),
                "delta_w": delta_w, "dx_max": float(np.max(np.abs(dx))),
                "dx_argmax": int(np.argmax(np.abs(dx))),
                "lam_max": float(np.max(np.abs(lam))) if m else 0.0,
                "theta": theta0,
                "nu": float(nu_rows.max()) if m else 0.0,
                "accepted": accepted,
                "alpha_pr": float(alpha_pr), "ftb_idx": ftb_idx,
                "restored": restored,
            })
        x = x_try
        if not restored:
            # multipliers move with the dual steplength: with badly blocked
            # primal steps they would otherwise never reach the magnitudes
            # that make the merit price the hard rows correctly
            lam = lam + max(alpha, min(alpha_du, 0.1)) * dlam
            vl = vl + alpha_du * dvl
            vu = vu + alpha_du * dvu
        if m and stats.iterations % 25 == 24 and \
                np.max(np.abs(ctilde)) < 1e-3 and alpha < 1e-2:
            # stalled but nearly feasible: regularization-polluted dual
            # iterates are the usual culprit, so re-estimate them from the
            # stationarity least-squares problem at the current point
            lam_stack_now = np.concatenate([lam[eq], lam[ineq]])
            lam_ls, *_ = np.linalg.lstsq(A.T, A.T @ lam_stack_now - r_mu,
                                         rcond=None)
            if np.all(np.isfinite(lam_ls)):
                lam[eq] = lam_ls[:len(eq)]
                lam[ineq] = lam_ls[len(eq):]
        # keep bound duals within a kappa-neighborhood of mu/distance
        dist_lo = np.where(has_lo, x - xl, 1.0)
        dist_hi = np.where(has_hi, xu - x, 1.0)
        kap = 1e10
        vl = np.where(has_lo,
                      np.clip(vl, mu / (kap * dist_lo), kap * mu / dist_lo), 0.0)
        vu = np.where(has_hi,
                      np.clip(vu, mu / (kap * dist_hi), kap * mu / dist_hi), 0.0)
        stats.iterations += 1

    z = assemble_z(x[:nf])
    stats.total_time = time.perf_counter() - t_start
    stats.deriv_time_per_iter = deriv_time / max(1, stats.iterations) * 1e3
    stats.kkt_error = float(kkt_error)
    stats.feasibility = unscaled_feasibility(z)
    stats.objective = float(nlp.objective(z))
    multipliers = sc * lam / obj_scale
    if var_scale is not None:
        z = var_scale * z
    return z, multipliers, stats


# ---------------------------------------------------------------------------
# Direct NLPs over plain callbacks (used by the analytic test programs)
# ---------------------------------------------------------------------------

class DenseNlp:
    """NLP over black-box callbacks with engine-driven dense derivatives."""

    def __init__(self, objective, constraints, n, m,
                 zl=None, zu=None, cl=None, cu=None, z0=None):
        self._objective = objective
        self._constraints = constraints if m else (lambda z: np.zeros(0))
        self.n = n
        self.m = m
        self.zl = np.full(n, -_INF) if zl is None else np.asarray(zl, float)
        self.zu = np.full(n, _INF) if zu is None else np.asarray(zu, float)
        self.cl = np.zeros(m) if cl is None else np.asarray(cl, float)
        self.cu = np.zeros(m) if cu is None else np.asarray(cu, float)
        self._z0 = np.zeros(n) if z0 is None else np.asarray(z0, float)
        self._jac_pattern = JacobianPattern(
            m, n, {(r, c) for r in range(m) for c in range(n)})
        self._hess_pattern = HessianPattern(
            n, {(r, c) for r in range(n) for c in range(r + 1)})

    def initial_guess(self):
        return self._z0.copy()

    def objective(self, z):
        return float(self._objective(z))

    def constraints(self, z):
        return np.asarray([float(v) for v in self._constraints(z)])

    def gradient(self, z, rule):
        pattern = JacobianPattern(1, self.n, {(0, c) for c in range(self.n)})
        G = derivest.jacobian(lambda v: [self._objective(v)], z, pattern, rule)
        return G.toarray()[0]

    def jacobian(self, z, rule):
        return derivest.jacobian(self._constraints, z, self._jac_pattern, rule)

    def hessian(self, z, obj_weight, multipliers, rule):
        fns = [self._objective]
        weights = [obj_weight]
        for r in range(self.m):
            fns.append(lambda v, r=r: self._constraints(v)[r])
            weights.append(multipliers[r])
        return derivest.hessian_weighted(fns, weights, z, self._hess_pattern,
                                         rule)


# ---------------------------------------------------------------------------
# Method comparison
# ---------------------------------------------------------------------------

# engine + sparsity detector behind each named method
METHOD_TABLE = {
    "OC": (Detector.NAN_OVERESTIMATE, StepRule.central_fd),
    "EC": (Detector.EXACT, StepRule.central_fd),
    "BC": (Detector.EXACT, StepRule.bicomplex),
    "HD": (Detector.EXACT, StepRule.hyper_dual),
}

COMPARISON_HEADER = ("K", "metric", "value_OC", "gamma_EC", "gamma_BC",
                     "gamma_HD")
_METRICS = ("I", "T_s", "Phi_ms")


@dataclass
class SolveRecord:
    K: int
    method: str
    z: np.ndarray
    stats: IterationStats
    nlp: object


def compare_methods(ocp, meshes, methods=("OC", "EC", "BC", "HD"), opts=None,
                    n_per_interval=5, runner=None):
    """Solve the problem for every (mesh, method) cell.

    Every method in a mesh cell starts from the same initial guess and
    options.  Returns (rows, records): rows follow the comparison CSV
    schema with percent reductions against the OC baseline, records hold
    the raw solutions.  Non-convergence is recorded, not raised.  The
    optional ``runner`` maps the per-cell closures to results (hook for
    parallel execution); it must preserve order.
    """
    opts = opts or SolverOptions()
    for name in methods:
        if name not in METHOD_TABLE:
            raise ValueError(f"unknown method {name!r}")
    rows = []
    records = []
    for mesh_spec in meshes:
        mesh = mesh_spec if isinstance(mesh_spec, Mesh) \
            else Mesh.uniform(int(mesh_spec), n_per_interval)
        K = mesh.K
        transcribed = {}
        for detector in {METHOD_TABLE[name][0] for name in methods}:
            transcribed[detector] = transcribe(ocp, mesh, detector)
        z0 = initial_guess(ocp, transcribed[next(iter(transcribed))].layout)

        def run_cell(name, mesh=mesh, transcribed=transcribed, z0=z0):
            detector, rule_factory = METHOD_TABLE[name]
            nlp = transcribed[detector]
            try:
                z, _, st = solve(nlp, rule_factory(), opts, z0.copy())
            except FactorizationError:
                z, st = z0.copy(), IterationStats(iterations=opts.max_iter)
            return SolveRecord(K=mesh.K, method=name, z=z, stats=st, nlp=nlp)

        cell_records = list((runner or map)(run_cell, methods))
        records.extend(cell_records)
        by_name = {rec.method: rec for rec in cell_records}
        base = by_name.get("OC")
        for metric in _METRICS:
            def value_of(rec):
                if rec is None:
                    return float("nan")
                st = rec.stats
                return {"I": float(st.iterations), "T_s": st.total_time,
                        "Phi_ms": st.deriv_time_per_iter}[metric]

            row = {"K": K, "metric": metric, "value_OC": value_of(base)}
            for name in ("EC", "BC", "HD"):
                key = f"gamma_{name}"
                rec = by_name.get(name)
                if rec is None or base is None or value_of(base) == 0.0:
                    row[key] = float("nan")
                else:
                    row[key] = percent_reduction(value_of(base), value_of(rec))
            rows.append(row)
    return rows, records


def write_comparison_csv(rows, path):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(COMPARISON_HEADER)
        for row in rows:
            writer.writerow([row["K"], row["metric"],
                             f"{row['value_OC']:.6e}",
                             f"{row['gamma_EC']:.4f}",
                             f"{row['gamma_BC']:.4f}",
                             f"{row['gamma_HD']:.4f}"])
