"""In-house nonlinear programming.

Three solvers share one problem carrier:

* :func:`solve_auglag` -- augmented Lagrangian outer loop for large sparse
  problems (equalities, ``g(z) <= 0`` inequalities in squared-hinge form,
  simple bounds). Inner bound-constrained minimization uses a projected
  Newton method when a Lagrangian Hessian is supplied and L-BFGS-B
  otherwise.
* :func:`solve_sqp` -- dense equality-constrained SQP with an exact-penalty
  line search, reducing to Newton's method on the constraints when the
  system is square.
* :func:`solve_ipm` -- primal-dual interior-point method for moderately
  sized problems with many inequalities (the condensed transcription).

Multiplier convention: ``L(z) = f(z) + lam . c(z) + mu . g(z)`` with
``mu >= 0``.
"""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
from scipy.sparse.csgraph import reverse_cuthill_mckee
from scipy.optimize import least_squares, minimize

from .errors import CallbackFailure, SolverError

log = logging.getLogger(__name__)

OK = "OK"
MAX_ITER = "MAX_ITER"
# largest problem for which a missing Hessian is differenced densely
FD_HESSIAN_MAX_N = 200


@dataclass
class NlpProblem:
    """Callbacks and bounds of ``min f(z) s.t. c(z) = 0, g(z) <= 0, lb <= z <= ub``.

    Jacobians may be dense arrays or scipy sparse matrices. ``hess``, if
    given, returns the Hessian of ``f + lam . c + mu . g`` as
    ``hess(z, lam, mu)``. ``order``/``n_border`` describe a permutation
    under which the Hessian is banded with a dense border; the Newton inner
    solver then factors it with banded Cholesky.
    """

    n: int
    f: Callable
    grad: Callable
    c: Optional[Callable] = None
    jac_c: Optional[Callable] = None
    m_eq: int = 0
    g: Optional[Callable] = None
    jac_g: Optional[Callable] = None
    m_ineq: int = 0
    lb: Optional[np.ndarray] = None
    ub: Optional[np.ndarray] = None
    hess: Optional[Callable] = None
    names: dict = field(default_factory=dict)
    # sparsity descriptor: a variable order in which the Lagrangian Hessian
    # is banded except for the last ``n_border`` (dense) variables
    order: Optional[np.ndarray] = None
    n_border: int = 0

    def __post_init__(self):
        self.lb = np.full(self.n, -np.inf) if self.lb is None else np.asarray(self.lb, float)
        self.ub = np.full(self.n, np.inf) if self.ub is None else np.asarray(self.ub, float)
        if self.lb.shape != (self.n,) or self.ub.shape != (self.n,):
            raise ValueError("bounds must have length n")

    def eq(self, z):
        return _checked(self.c(z), "equality constraints") if self.m_eq else np.zeros(0)

    def ineq(self, z):
        return _checked(self.g(z), "inequality constraints") if self.m_ineq else np.zeros(0)

    def jeq(self, z):
        return self.jac_c(z) if self.m_eq else sp.csr_matrix((0, self.n))

    def jineq(self, z):
        return self.jac_g(z) if self.m_ineq else sp.csr_matrix((0, self.n))

    def project(self, z):
        return np.minimum(np.maximum(z, self.lb), self.ub)


@dataclass
class NlpSolution:
    z: np.ndarray
    lam: np.ndarray
    mu: np.ndarray
    objective: float
    stationarity: float
    feasibility: float
    complementarity: float
    iterations: int
    inner_iterations: int
    status: str

    @property
    def ok(self) -> bool:
        return self.status == OK


def _checked(v, what):
    v = np.asarray(v, dtype=float)
    if not np.all(np.isfinite(v)):
        raise CallbackFailure(f"non-finite values in {what}")
    return v


def _tmul(J, v):
    """``J.T @ v`` for dense or sparse ``J``."""
    if J.shape[0] == 0:
        return np.zeros(J.shape[1])
    return np.asarray(J.T @ v).ravel()


def kkt_residuals(p: NlpProblem, z, lam, mu):
    """``(stationarity, feasibility, complementarity)`` recomputed from callbacks.

    Stationarity is the projected-gradient norm of the Lagrangian, so
    variables sitting on a bound are handled without explicit multipliers.
    """
    z = np.asarray(z, float)
    c, g = p.eq(z), p.ineq(z)
    grad_l = _checked(p.grad(z), "objective gradient") + _tmul(p.jeq(z), lam) + _tmul(p.jineq(z), mu)
    stat = np.max(np.abs(p.project(z - grad_l) - z), initial=0.0)
    feas = max(np.max(np.abs(c), initial=0.0), np.max(g, initial=0.0), 0.0)
    comp = np.max(np.abs(mu * g), initial=0.0)
    return float(stat), float(feas), float(comp)


# ---------------------------------------------------------------------------
# Augmented Lagrangian

class _AugLag:
    def __init__(self, p: NlpProblem):
        self.p = p

    def value_grad(self, z, lam, mu, rho):
        p = self.p
        f = float(p.f(z))
        if not math.isfinite(f):
            raise CallbackFailure("non-finite objective")
        c, g = p.eq(z), p.ineq(z)
        pi = np.maximum(0.0, mu + rho * g)
        val = f + lam @ c + 0.5 * rho * (c @ c) + (pi @ pi - mu @ mu) / (2 * rho)
        grad = _checked(p.grad(z), "objective gradient")
        grad = grad + _tmul(p.jeq(z), lam + rho * c) + _tmul(p.jineq(z), pi)
        return val, grad, c, g, pi

    def value(self, z, lam, mu, rho):
        p = self.p
        f = float(p.f(z))
        c, g = p.eq(z), p.ineq(z)
        pi = np.maximum(0.0, mu + rho * g)
        return f + lam @ c + 0.5 * rho * (c @ c) + (pi @ pi - mu @ mu) / (2 * rho)

    def hessian(self, z, lam, mu, rho, c, pi):
        p = self.p
        if p.hess is None:
            H = sp.csr_matrix(_fd_lagrangian_hessian(p, z, lam + rho * c, pi))
        else:
            H = sp.csr_matrix(p.hess(z, lam + rho * c, pi))
        J = sp.csr_matrix(p.jeq(z))
        H = H + rho * (J.T @ J)
        act = pi > 0
        if p.m_ineq and np.any(act):
            G = sp.csr_matrix(p.jineq(z))[np.flatnonzero(act)]
            H = H + rho * (G.T @ G)
        return H.tocsc()


def _fd_lagrangian_hessian(p: NlpProblem, z, lam, mu, rel_step: float = 1e-6):
    """Symmetrized central differences of the analytic Lagrangian gradient."""
    n = len(z)
    H = np.empty((n, n))
    for j in range(n):
        h = rel_step * max(1.0, abs(z[j]))
        zp, zm = z.copy(), z.copy()
        zp[j] += h
        zm[j] -= h
        H[:, j] = (lagrangian_gradient(p, zp, lam, mu) - lagrangian_gradient(p, zm, lam, mu)) / (2 * h)
    return 0.5 * (H + H.T)


def _free_mask(p, z, grad):
    at_lb = (z <= p.lb) & (grad > 0)
    at_ub = (z >= p.ub) & (grad < 0)
    return ~(at_lb | at_ub | (p.lb == p.ub))


class _PdSolver:
    """Cholesky solve of a symmetric matrix assumed positive definite.

    With an ordering hint the matrix is permuted to banded form plus a dense
    border and factored with LAPACK banded Cholesky and a Schur complement;
    otherwise small matrices are factored densely and large ones after a
    reverse Cuthill-McKee reordering. Raises ``LinAlgError`` when the matrix
    is not positive definite, which the caller uses to pick a shift.
    """

    def __init__(self, H, order=None, n_border=0):
        n = H.shape[0]
        if order is None and n <= 1500:
            self.dense = sla.cho_factor(H.toarray() if sp.issparse(H) else H, lower=True)
            return
        self.dense = None
        H = sp.csr_matrix(H)
        if order is None:
            order = reverse_cuthill_mckee(H, symmetric_mode=True)
            n_border = 0
        self.order = np.asarray(order)
        P = sp.csr_matrix((np.ones(n), (np.arange(n), self.order)), shape=(n, n))
        Hp = (P @ H @ P.T).tocsr()
        m = n - n_border
        self.m = m
        low = sp.tril(Hp[:m, :m]).tocoo()
        bw = int(np.max(low.row - low.col, initial=0))
        ab = np.zeros((bw + 1, m))
        ab[low.row - low.col, low.col] = low.data
        self.L = sla.cholesky_banded(ab, lower=True)
        if n_border:
            self.C = Hp[:m, m:].toarray()
            X = sla.cho_solve_banded((self.L, True), self.C)
            S = Hp[m:, m:].toarray() - self.C.T @ X
            self.X = X
            self.S = sla.cho_factor(S, lower=True)
        else:
            self.C = None

    def solve(self, r):
        if self.dense is not None:
            return sla.cho_solve(self.dense, r)
        rp = r[self.order]
        m = self.m
        y1 = sla.cho_solve_banded((self.L, True), rp[:m])
        if self.C is not None:
            x2 = sla.cho_solve(self.S, rp[m:] - self.C.T @ y1)
            y1 = y1 - self.X @ x2
            rp = np.concatenate([y1, x2])
        else:
            rp = y1
        out = np.empty_like(rp)
        out[self.order] = rp
        return out


def _newton_inner(al: _AugLag, z, lam, mu, rho, tol, max_iter):
    """Projected modified-Newton minimization of the augmented Lagrangian.

    Variables held at a bound by the gradient are frozen (identity rows in
    the Hessian); an indefinite Hessian is shifted by the smallest multiple
    of the identity (searched by factors of 10) that admits a Cholesky factor.
    """
    p = al.p
    iters = 0
    shift = 0.0
    for iters in range(1, max_iter + 1):
        val, grad, c, g, pi = al.value_grad(z, lam, mu, rho)
        pg = np.max(np.abs(p.project(z - grad) - z), initial=0.0)
        if pg <= tol:
            return z, iters - 1
        free = _free_mask(p, z, grad).astype(float)
        H = al.hessian(z, lam, mu, rho, c, pi)
        Df = sp.diags(free)
        H = (Df @ H @ Df + sp.diags(1.0 - free)).tocsr()
        gf = grad * free
        diag_scale = max(1.0, float(np.max(np.abs(H.diagonal()), initial=1.0)))
        shift = 0.0 if shift <= 1e-12 * diag_scale else 0.1 * shift
        solver = None
        for _ in range(40):
            try:
                K = H + shift * sp.diags(free) if shift else H
                solver = _PdSolver(K, p.order, p.n_border)
                break
            except (np.linalg.LinAlgError, sla.LinAlgError):
                shift = max(10 * shift, 1e-10 * diag_scale)
        step = -solver.solve(gf) if solver is not None else -gf
        alpha = 1.0
        for _ in range(60):
            z_new = p.project(z + alpha * step)
            dz = z_new - z
            v_new = al.value(z_new, lam, mu, rho)
            if v_new <= val + 1e-4 * (grad @ dz):
                break
            alpha *= 0.5
        else:
            # no decrease possible at working precision
            return z, iters
        z = z_new
        if np.max(np.abs(dz), initial=0.0) <= 1e-16 * max(1.0, np.max(np.abs(z))):
            return z, iters
    return z, iters


def _lbfgs_inner(al: _AugLag, z, lam, mu, rho, tol, max_iter):
    p = al.p
    bounds = list(zip(np.where(np.isfinite(p.lb), p.lb, None), np.where(np.isfinite(p.ub), p.ub, None)))

    def fun(x):
        v, gr, *_ = al.value_grad(x, lam, mu, rho)
        return v, gr

    res = minimize(fun, z, jac=True, method="L-BFGS-B", bounds=bounds,
                   options=dict(maxcor=10, gtol=tol, ftol=1e-300, maxiter=max_iter, maxls=50))
    return p.project(res.x), int(res.nit)


def solve_auglag(p: NlpProblem, start, tol_feas: float = 1e-10, tol_opt: float = 1e-10,
                 max_outer: int = 60, max_inner: int = 500, rho0: float = 10.0,
                 inner: Optional[str] = None, log_file=None) -> NlpSolution:
    """Augmented-Lagrangian solve of ``p`` from ``start``.

    The penalty starts at ``rho0`` and is multiplied by 10 whenever the
    constraint violation fails to drop by a factor of 4. ``inner`` selects
    ``"newton"`` or ``"lbfgs"``. Newton differences the Lagrangian gradient
    when ``p.hess`` is missing, so the default picks it when a Hessian is
    supplied or ``p.n <= FD_HESSIAN_MAX_N``. ``log_file`` receives one CSV row per
    outer iteration.
    """
    z = p.project(np.asarray(start, dtype=float).copy())
    lam = np.zeros(p.m_eq)
    mu = np.zeros(p.m_ineq)
    rho = rho0
    al = _AugLag(p)
    if inner is None:
        inner = "newton" if p.hess is not None or p.n <= FD_HESSIAN_MAX_N else "lbfgs"
    if inner not in ("newton", "lbfgs"):
        raise ValueError(f"unknown inner solver {inner!r}")
    inner_fn = _newton_inner if inner == "newton" else _lbfgs_inner
    writer = None
    if log_file is not None:
        writer = csv.writer(log_file)
        writer.writerow(["iteration", "objective", "feasibility", "optimality", "penalty"])

    best = None
    feas_prev = np.inf
    omega = max(tol_opt, 1e-3)
    total_inner = 0
    status = MAX_ITER
    outer = 0
    for outer in range(1, max_outer + 1):
        z, nit = inner_fn(al, z, lam, mu, rho, omega, max_inner)
        total_inner += nit
        c, g = p.eq(z), p.ineq(z)
        lam = lam + rho * c
        mu = np.maximum(0.0, mu + rho * g)
        stat, feas, comp = kkt_residuals(p, z, lam, mu)
        obj = float(p.f(z))
        if writer is not None:
            writer.writerow([outer, repr(obj), repr(feas), repr(stat), repr(rho)])
        log.debug("auglag %d: f=%.12g feas=%.3e opt=%.3e rho=%.1e", outer, obj, feas, stat, rho)
        score = (max(feas / tol_feas, stat / tol_opt), obj)
        if best is None or score <= best[0]:
            best = (score, z.copy(), lam.copy(), mu.copy(), stat, feas, comp)
        if feas <= tol_feas and stat <= tol_opt and comp <= max(tol_feas, tol_opt):
            status = OK
            break
        if feas > 0.25 * feas_prev:
            rho *= 10.0
        feas_prev = feas
        omega = max(0.1 * tol_opt, 0.1 * omega)
    _, z, lam, mu, stat, feas, comp = best
    return NlpSolution(z, lam, mu, float(p.f(z)), stat, feas, comp, outer, total_inner, status)


# ---------------------------------------------------------------------------
# Dense SQP for small equality-constrained problems

def _dense(J):
    return J.toarray() if sp.issparse(J) else np.atleast_2d(np.asarray(J, float))


def lagrangian_hessian_fd(p: NlpProblem, z, lam, rel_step: float = 1e-6):
    """Differenced Hessian of ``f + lam . c``."""
    return _fd_lagrangian_hessian(p, z, lam, np.zeros(p.m_ineq), rel_step)


def _null_space(A, rcond=1e-12):
    if A.shape[0] == 0:
        return np.eye(A.shape[1])
    _, sv, Vt = np.linalg.svd(A)
    rank = int(np.sum(sv > rcond * max(1.0, sv[0])))
    return Vt[rank:].T


def _restore(p: NlpProblem, z):
    """Bounded Gauss-Newton least squares on the equality residuals."""
    lb = np.where(p.lb == p.ub, p.lb - 1e-300, p.lb)
    x0 = np.clip(z, p.lb, p.ub)
    inside = np.clip(x0, np.nextafter(lb, np.inf), np.nextafter(p.ub, -np.inf))
    res = least_squares(p.eq, inside, jac=lambda x: _dense(p.jeq(x)), bounds=(lb, p.ub),
                        method="trf", xtol=1e-15, ftol=1e-15, gtol=1e-15, max_nfev=200)
    return p.project(res.x)


def _restore_with_ineq(p: NlpProblem, z, margin: float = 0.0):
    """Least squares on equality residuals and violated inequality rows.

    ``margin`` asks inequalities to hold with ``g <= -margin`` so that an
    interior-point start is strictly inside.
    """
    lb = np.where(p.lb == p.ub, p.lb - 1e-300, p.lb)
    x0 = np.clip(z, p.lb, p.ub)
    inside = np.clip(x0, np.nextafter(lb, np.inf), np.nextafter(p.ub, -np.inf))

    def res(x):
        return np.concatenate([p.eq(x), np.maximum(p.ineq(x) + margin, 0.0)])

    def jac(x):
        active = (p.ineq(x) + margin > 0).astype(float)
        Jg = sp.diags(active) @ sp.csr_matrix(p.jineq(x))
        return sp.vstack([sp.csr_matrix(p.jeq(x)), Jg]).tocsr()

    out = least_squares(res, inside, jac=jac, bounds=(lb, p.ub), method="trf",
                        tr_solver="lsmr", xtol=1e-15, ftol=1e-15, gtol=1e-15,
                        max_nfev=200)
    return p.project(out.x)


def _eqp(W, g, A, c, fixed, dfix):
    """Equality QP with the ``fixed`` components of the step prescribed."""
    n, m = len(g), len(c)
    free = np.flatnonzero(~fixed)
    nf = len(free)
    d = np.where(fixed, dfix, 0.0)
    Af = A[:, free]
    rhs = np.concatenate([-(g[free] + W[np.ix_(free, fixed)] @ d[fixed]), -c - A[:, fixed] @ d[fixed]])
    K = np.block([[W[np.ix_(free, free)], Af.T], [Af, np.zeros((m, m))]])
    shift = 0.0
    for _ in range(8):
        Kt = K.copy()
        if shift:
            Kt[:nf, :nf] += shift * np.eye(nf)
            Kt[nf:, nf:] -= shift * np.eye(m)
        try:
            sol = np.linalg.solve(Kt, rhs)
            if np.all(np.isfinite(sol)):
                d[free] = sol[:nf]
                return d, sol[nf:]
        except np.linalg.LinAlgError:
            pass
        shift = 1e-10 if not shift else shift * 100
    raise SolverError("singular KKT matrix after regularization")


def _bounded_qp(W, g, A, c, lo, hi, max_iter: int = 100):
    """Primal active-set solve of ``min g.d + d.W.d/2, A d = -c, lo <= d <= hi``.

    Bounds are added one at a time (most violated first) and released when
    their multiplier has the wrong sign. ``W`` must be positive definite on
    the null space of ``A``.
    """
    fixed = lo == hi
    pinned = fixed.copy()
    target = np.where(fixed, lo, 0.0)
    d, lam = _eqp(W, g, A, c, fixed, target)
    for _ in range(max_iter):
        scale = 1e-14 * (1.0 + np.max(np.abs(d)))
        with np.errstate(invalid="ignore"):
            viol = np.maximum(lo - d, d - hi)
        viol[fixed] = -np.inf
        if np.max(viol) > scale:
            j = int(np.argmax(viol))
            fixed[j] = True
            target[j] = lo[j] if d[j] < lo[j] else hi[j]
        else:
            r = g + W @ d + A.T @ lam
            at_lo = fixed & ~pinned & (target == lo)
            at_hi = fixed & ~pinned & (target == hi)
            wrong = np.where(at_lo, -r, 0.0) + np.where(at_hi, r, 0.0)
            if np.max(wrong, initial=0.0) <= 1e-12 * (1.0 + np.max(np.abs(r))):
                break
            fixed[int(np.argmax(wrong))] = False
        d, lam = _eqp(W, g, A, c, fixed, target)
    return np.clip(d, lo, hi), lam


def _correct(p: NlpProblem, z, feas0, evaluate, max_iter: int = 8):
    """Newton min-norm corrections that pull ``z`` back onto the constraints."""
    movable = p.lb < p.ub
    target = max(feas0, 1e-15)
    for _ in range(max_iter):
        c = p.eq(z)
        viol = np.max(np.abs(c))
        if viol <= target:
            return z
        A = _dense(p.jeq(z))
        step = np.zeros(len(z))
        step[movable] = np.linalg.lstsq(A[:, movable], -c, rcond=None)[0]
        z_new = p.project(z + step)
        if np.max(np.abs(p.eq(z_new))) >= viol:
            return None
        z = z_new
    return z if np.max(np.abs(p.eq(z))) <= max(10 * target, 1e-12) else None


def solve_sqp(p: NlpProblem, start, tol: float = 1e-12, max_iter: int = 200,
              hessian: str = "fd", trace: Optional[list] = None,
              restore_above: float = 1e-3) -> NlpSolution:
    """Equality-constrained SQP with an l1 merit function.

    The Lagrangian Hessian is either differenced from the analytic
    gradients (``hessian="fd"``) or a damped BFGS approximation
    (``"bfgs"``); on an indefinite reduced Hessian the step is convexified
    by a diagonal shift. Bounds are honoured by step truncation and by
    freezing variables that the step pushes against a bound. If the
    constraint count equals the number of free variables the iteration is
    plain Newton on ``c(z) = 0``. A start whose constraint violation exceeds
    ``restore_above`` is first moved onto the constraints by bounded least
    squares. ``trace`` (if given) collects the iterates.
    """
    if p.m_ineq:
        raise ValueError("solve_sqp handles equality constraints only")
    n, m = p.n, p.m_eq
    if m > n:
        raise SolverError(f"{m} equality constraints exceed {n} variables")
    z = p.project(np.asarray(start, dtype=float).copy())
    W = np.eye(n)
    nu = 1.0
    lam = np.zeros(m)
    status = MAX_ITER
    it = 0

    def evaluate(x):
        return (float(p.f(x)), _checked(p.grad(x), "objective gradient"),
                p.eq(x), _checked(_dense(p.jeq(x)), "constraint Jacobian"))

    if m and np.max(np.abs(p.eq(z))) > restore_above:
        z = _restore(p, z)
    f, gr, c, A = evaluate(z)
    small_steps = 0
    restorations = 0
    for it in range(1, max_iter + 1):
        if trace is not None:
            trace.append(z.copy())
        # multiplier estimate and convergence test
        lam_ls = np.linalg.lstsq(A.T, -gr, rcond=None)[0] if m else lam
        stat, feas, _ = kkt_residuals(p, z, lam_ls, np.zeros(0))
        if m == n:
            stat = 0.0 if feas <= tol else stat
        lam_scale = 1.0 + float(np.max(np.abs(lam_ls), initial=0.0))
        if feas <= tol and (stat <= tol * lam_scale or small_steps >= 2):
            lam = lam_ls
            status = OK
            break
        fixed_bounds = p.lb == p.ub
        if m == n - int(np.sum(fixed_bounds)):
            free = np.flatnonzero(~fixed_bounds)
            Af = A[:, free]
            d = np.zeros(n)
            try:
                d[free] = np.linalg.solve(Af, -c)
            except np.linalg.LinAlgError:
                shift = 1e-10 * max(1.0, np.max(np.abs(Af)))
                d[free] = np.linalg.solve(Af.T @ Af + shift * np.eye(len(free)), -Af.T @ c)
            lam_new = lam_ls
        else:
            if hessian == "fd":
                W = lagrangian_hessian_fd(p, z, lam_ls)
            Wc = W.copy()
            # convexify on the null space of the constraint Jacobian
            Z = _null_space(A)
            if Z.shape[1]:
                red = Z.T @ Wc @ Z
                emin = float(np.min(np.linalg.eigvalsh(0.5 * (red + red.T))))
                floor = 1e-8 * max(1.0, float(np.max(np.abs(red))))
                if emin < floor:
                    Wc = Wc + (floor - emin) * np.eye(n)
            d, lam_new = _bounded_qp(Wc, gr, A, c, p.lb - z, p.ub - z)
        # keep inside the bounds
        with np.errstate(divide="ignore", invalid="ignore"):
            lim = np.where(d < 0, (p.lb - z) / d, np.where(d > 0, (p.ub - z) / d, np.inf))
        alpha_max = min(1.0, float(np.min(lim[np.isfinite(lim)], initial=1.0)))
        alpha_max = max(alpha_max, 0.0)

        nu = max(nu, 1.1 * np.max(np.abs(lam_new), initial=0.0) + 1e-8)
        merit = lambda ff, cc: ff + nu * np.sum(np.abs(cc))
        phi0 = merit(f, c)
        dphi = gr @ d - nu * np.sum(np.abs(c))
        alpha = alpha_max
        accepted = None
        for ls in range(40):
            zt = p.project(z + alpha * d)
            ft, ct = float(p.f(zt)), p.eq(zt)
            if merit(ft, ct) <= phi0 + 1e-4 * alpha * min(dphi, 0.0) or \
                    (feas <= 1e-10 and np.max(np.abs(ct), initial=0) <= 1e-10 and ft <= f):
                accepted = zt
                break
            if m:
                # second-order corrections against the Maratos effect
                zs = _correct(p, zt, np.max(np.abs(c)), evaluate)
                if zs is not None and merit(float(p.f(zs)), p.eq(zs)) <= \
                        phi0 + 1e-4 * alpha * min(dphi, 0.0):
                    accepted = zs
                    break
            alpha *= 0.5
        if accepted is None or (feas > tol and alpha_max < 1e-8):
            # stalled against the bounds while infeasible: restore feasibility
            accepted = _restore(p, z)
            restorations += 1
            if restorations > 20:
                break
        s = accepted - z
        f_new, gr_new, c_new, A_new = evaluate(accepted)
        if m < n and hessian == "bfgs":
            yv = (gr_new + A_new.T @ lam_new) - (gr + A.T @ lam_new)
            sWs = s @ W @ s
            if sWs > 0:
                sy = s @ yv
                theta = 1.0 if sy >= 0.2 * sWs else 0.8 * sWs / (sWs - sy)
                r = theta * yv + (1 - theta) * (W @ s)
                Ws = W @ s
                W = W - np.outer(Ws, Ws) / sWs + np.outer(r, r) / (s @ r)
        small = np.max(np.abs(s), initial=0.0) <= 1e-14 * (1.0 + np.max(np.abs(z)))
        small_steps = small_steps + 1 if small else 0
        z, f, gr, c, A = accepted, f_new, gr_new, c_new, A_new
        lam = lam_new
    lam_final = np.linalg.lstsq(A.T, -gr, rcond=None)[0] if m else lam
    stat, feas, comp = kkt_residuals(p, z, lam_final, np.zeros(0))
    return NlpSolution(z, lam_final, np.zeros(0), float(p.f(z)), stat, feas, comp, it, 0, status)


# ---------------------------------------------------------------------------
# Dense primal-dual interior point

def _as_dense(J, rows, n):
    if rows == 0:
        return np.zeros((0, n))
    return _dense(J)


def lagrangian_gradient(p: NlpProblem, z, lam, mu):
    return _checked(p.grad(z), "objective gradient") + _tmul(p.jeq(z), lam) + _tmul(p.jineq(z), mu)


def solve_ipm(p: NlpProblem, start, tol: float = 1e-9, max_iter: int = 300,
              mu0: float = 0.1, trace: Optional[list] = None,
              restore_above: float = 1e-6) -> NlpSolution:
    """Primal-dual interior-point method for small dense problems.

    Inequalities ``g(z) <= 0`` and finite bounds get slacks ``s > 0`` with a
    log barrier; the barrier parameter follows the monotone update
    ``mu <- min(0.2 mu, mu**1.5)`` once the barrier subproblem is solved to
    ``10 mu``. Each Newton step condenses the slacks into
    ``W + G^T (Z/S) G``, shifts it until Cholesky succeeds, and eliminates
    the equalities through their Schur complement. Steps keep 99% of the
    distance to the slack boundary and are backtracked on an l1 barrier
    merit function. ``p.hess`` supplies ``W`` (otherwise it is differenced
    from the Lagrangian gradient).
    """
    n = p.n
    x = np.asarray(start, dtype=float).copy()
    fixed = np.flatnonzero(p.lb == p.ub)
    lo = np.flatnonzero(np.isfinite(p.lb) & (p.lb < p.ub))
    hi = np.flatnonzero(np.isfinite(p.ub) & (p.lb < p.ub))
    x[fixed] = p.lb[fixed]
    if p.m_eq and np.max(np.abs(p.eq(x))) > restore_above:
        # Newton multipliers are meaningless far from the constraint manifold,
        # and slacks of badly violated rows throttle every step
        x = _restore_with_ineq(p, x) if p.m_ineq else _restore(p, x)
    m_e = p.m_eq + len(fixed)
    m_g = p.m_ineq + len(lo) + len(hi)

    def efun(v):
        return np.concatenate([p.eq(v), v[fixed] - p.lb[fixed]])

    def ejac(v):
        J = _as_dense(p.jeq(v), p.m_eq, n)
        return np.vstack([J, np.eye(n)[fixed]])

    def gfun(v):
        return np.concatenate([p.ineq(v), p.lb[lo] - v[lo], v[hi] - p.ub[hi]])

    def gjac(v):
        J = p.jineq(v) if p.m_ineq else sp.csr_matrix((0, n))
        I = sp.identity(n, format="csr")
        return sp.vstack([sp.csr_matrix(J), -I[lo], I[hi]]).tocsr()

    def whess(v, lam, mu):
        if p.hess is not None:
            return _dense(p.hess(v, lam[: p.m_eq], mu[: p.m_ineq]))
        return _fd_lagrangian_hessian(p, v, lam[: p.m_eq], mu[: p.m_ineq])

    g = gfun(x)
    s = np.maximum(-g, 1e-2 * np.maximum(1.0, np.abs(g)))
    mu = mu0
    zd = mu / s
    if m_e:
        # least-squares multipliers for the starting point
        G0 = gjac(x)
        r0 = _checked(p.grad(x), "objective gradient") + np.asarray(G0.T @ zd).ravel()
        lam = -np.linalg.lstsq(ejac(x).T, r0, rcond=None)[0]
        if np.max(np.abs(lam), initial=0.0) > 1e3:
            lam = np.zeros(m_e)
    else:
        lam = np.zeros(0)
    pen = 1.0
    delta = 0.0
    status = MAX_ITER
    it = 0
    f = float(p.f(x))
    for it in range(1, max_iter + 1):
        if trace is not None:
            trace.append(x.copy())
        gr = _checked(p.grad(x), "objective gradient")
        e, E = efun(x), ejac(x)
        g, G = gfun(x), gjac(x)
        rd = gr + E.T @ lam + np.asarray(G.T @ zd).ravel()
        rp = g + s
        scale = max(1.0, (np.sum(np.abs(lam)) + np.sum(np.abs(zd))) / max(1, m_e + m_g) / 100.0)
        err0 = max(np.max(np.abs(rd), initial=0.0) / scale, np.max(np.abs(e), initial=0.0),
                   np.max(np.abs(rp), initial=0.0), np.max(s * zd, initial=0.0) / scale)
        if err0 <= tol:
            status = OK
            break
        err_mu = max(np.max(np.abs(rd), initial=0.0) / scale, np.max(np.abs(e), initial=0.0),
                     np.max(np.abs(rp), initial=0.0), np.max(np.abs(s * zd - mu), initial=0.0) / scale)
        while err_mu <= 10 * mu and mu > tol / 10:
            mu = max(tol / 10, min(0.2 * mu, mu ** 1.5))
            err_mu = max(np.max(np.abs(rd), initial=0.0) / scale, np.max(np.abs(e), initial=0.0),
                         np.max(np.abs(rp), initial=0.0),
                         np.max(np.abs(s * zd - mu), initial=0.0) / scale)

        sigma = zd / s
        W = whess(x, lam, zd)
        if G.nnz > 0.05 * G.shape[0] * n:
            Gd = G.toarray()
            M = W + Gd.T @ (sigma[:, None] * Gd)
        else:
            M = W + _dense(G.T @ sp.diags(sigma) @ G)
        rc = mu - s * zd
        q = -rd - np.asarray(G.T @ (rc / s + sigma * rp)).ravel()
        diag_scale = max(1.0, float(np.max(np.abs(np.diag(M)), initial=1.0)))
        # positive definiteness is only needed on null(E): adding rho E^T E
        # (with the matching right-hand side) leaves the step unchanged
        rho = 0.0
        if m_e:
            e_scale = max(1e-300, float(np.max(np.sum(E * E, axis=1))))
        delta = 0.0 if delta <= 1e-20 else delta / 3
        factor = None
        for _ in range(80):
            try:
                factor = sla.cho_factor(M + (rho * (E.T @ E) if m_e else 0.0) + delta * np.eye(n),
                                        lower=True)
                break
            except (np.linalg.LinAlgError, sla.LinAlgError):
                if m_e and rho < 1e8 * diag_scale / e_scale:
                    rho = max(10 * rho, diag_scale / e_scale)
                else:
                    delta = max(10 * delta, 1e-12 * diag_scale)
        if factor is None:
            raise SolverError("could not convexify the interior-point Newton matrix")
        if m_e:
            qr = q - rho * (E.T @ e)
            MiE = sla.cho_solve(factor, E.T)
            Mq = sla.cho_solve(factor, qr)
            S_e = E @ MiE
            # regularized: parallel constraint gradients (straight-line starts)
            S_e += 1e-8 * max(1e-300, np.max(np.abs(np.diag(S_e)))) * np.eye(m_e)
            dlam = np.linalg.solve(S_e, E @ Mq + e)
            dx = Mq - MiE @ dlam
        else:
            dlam = np.zeros(0)
            dx = sla.cho_solve(factor, q)
        ds = -rp - np.asarray(G @ dx).ravel()
        dz = (rc - zd * ds) / s

        tau = max(0.99, 1.0 - mu)
        with np.errstate(divide="ignore", invalid="ignore"):
            a_p = np.min(np.where(ds < 0, -tau * s / ds, np.inf), initial=np.inf)
            a_d = np.min(np.where(dz < 0, -tau * zd / dz, np.inf), initial=np.inf)
        a_p, a_d = min(1.0, a_p), min(1.0, a_d)

        infeas = np.sum(np.abs(e)) + np.sum(np.abs(rp))
        bar_slope = gr @ dx - mu * np.sum(ds / s)
        if infeas > 0:
            curv = max(0.0, 0.5 * dx @ (M @ dx))
            pen = max(pen, (bar_slope + curv) / (0.9 * infeas) + 1e-8)

        def merit(xv, sv):
            return (float(p.f(xv)) - mu * np.sum(np.log(sv))
                    + pen * (np.sum(np.abs(efun(xv))) + np.sum(np.abs(gfun(xv) + sv))))

        phi0 = merit(x, s)
        slope = bar_slope - pen * infeas
        alpha = a_p
        for _ in range(40):
            xt, st = x + alpha * dx, s + alpha * ds
            if merit(xt, st) <= phi0 + 1e-4 * alpha * min(slope, 0.0):
                break
            alpha *= 0.5
        x, s = xt, st
        lam = lam + alpha * dlam
        zd = zd + a_d * dz
        # keep the duals within a band of the primal-dual central path
        zd = np.clip(zd, mu / (1e10 * s), 1e10 * mu / s)
        f = float(p.f(x))
        log.debug("ipm %d: f=%.12g err=%.2e mu=%.1e alpha=%.2e a_p=%.2e delta=%.1e rho=%.1e |lam|=%.1e |z|=%.1e pen=%.1e", it, f, err0, mu, alpha, a_p, delta, rho, np.max(np.abs(lam), initial=0), np.max(zd, initial=0), pen)
    lam_out = lam[: p.m_eq]
    mu_out = zd[: p.m_ineq]
    stat, feas, comp = kkt_residuals(p, x, lam_out, mu_out)
    return NlpSolution(x, lam_out, mu_out, float(p.f(x)), stat, feas, comp, it, 0, status)
