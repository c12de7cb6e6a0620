"""Euler direct transcription of the minimax-spirality control problem.

Decision vector layout for ``N`` steps (``h = t_f / N``)::

    z = (x_0, y_0, theta_0, kappa_0, ..., x_N, y_N, theta_N, kappa_N,
         u_0, ..., u_{N-1}, b)

Defect rows are divided by ``h``, i.e. ``(s_{i+1} - s_i) / h - f(s_i, u_i)``,
which keeps the rows O(1) and makes their multipliers scale like adjoint
densities. The known initial states are frozen through equal bounds, the
terminal conditions are equality rows, and ``|u_i| <= b`` (plus
``|kappa_i| <= a`` when bounded) are inequality rows.

By default the problem is solved in condensed form: the Euler recursion is
eliminated so only the controls, ``b`` and a free initial curvature remain,
the interior-point solver runs on that, and the result is lifted back with
full-transcription multipliers.
"""

from __future__ import annotations

import logging
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import List, Optional, Sequence

import numpy as np
import scipy.sparse as sp

from .errors import CallbackFailure, InsufficientDualsError, SolverError
from .nlp import NlpProblem, NlpSolution, kkt_residuals, solve_auglag, solve_ipm
from .problem import ProblemSpec, Trajectory, validate

log = logging.getLogger(__name__)

DEFAULT_N = 2000
DEDUP_RTOL = 1e-4


@dataclass(frozen=True)
class TranscriptionGrid:
    """Index bookkeeping for the flat transcription vector."""

    n_steps: int
    total_length: float

    @property
    def h(self) -> float:
        return self.total_length / self.n_steps

    @property
    def n_vars(self) -> int:
        return 5 * self.n_steps + 5

    @property
    def n_states(self) -> int:
        return 4 * (self.n_steps + 1)

    def state(self, i: int, k: int) -> int:
        return 4 * i + k

    def control(self, i: int) -> int:
        return self.n_states + i

    @property
    def b(self) -> int:
        return self.n_vars - 1

    @property
    def times(self) -> np.ndarray:
        return np.linspace(0.0, self.total_length, self.n_steps + 1)

    def split(self, z):
        """``(states (N+1, 4), controls (N,), b)`` views of ``z``."""
        s = z[: self.n_states].reshape(-1, 4)
        return s, z[self.n_states: self.b], z[self.b]


@dataclass
class DiscreteAdjoints:
    """Adjoint estimates recovered from the transcription multipliers.

    ``lam`` has one row per defect block (``N`` rows, columns ``lambda1..4``)
    in the continuous sign convention with the cost multiplier fixed at 1.
    ``mu1``/``mu2`` are the curvature-bound multipliers per node (zeros when
    the problem is unbounded).
    """

    t: np.ndarray
    lam: np.ndarray
    mu1: np.ndarray
    mu2: np.ndarray
    lambda0: float = 1.0

    @property
    def lambda1(self):
        return self.lam[:, 0]

    @property
    def lambda2(self):
        return self.lam[:, 1]

    @property
    def lambda3(self):
        return self.lam[:, 2]

    @property
    def lambda4(self):
        return self.lam[:, 3]


@dataclass
class PhResult:
    trajectory: Trajectory
    adjoints: DiscreteAdjoints
    b: float
    nlp: NlpSolution
    start_index: int = 0


@dataclass
class PhProblem:
    spec: ProblemSpec
    grid: TranscriptionGrid
    nlp: NlpProblem
    terminal_rows: List[str] = field(default_factory=list)


def build_ph(spec: ProblemSpec, n_steps: int = DEFAULT_N) -> PhProblem:
    """Assemble the transcription NLP with analytic sparse derivatives."""
    validate(spec)
    if n_steps < 10:
        raise ValueError("the transcription needs at least 10 steps")
    grid = TranscriptionGrid(n_steps, spec.total_length)
    N, h, n = n_steps, grid.h, grid.n_vars
    ns = grid.n_states
    idx = np.arange(N)
    sx, sy, st, sk = (4 * idx + k for k in range(4))
    ui = ns + idx
    bi = grid.b

    target = spec.end()
    term = [("x_f", 0), ("y_f", 1), ("theta_f", 2)]
    if not spec.kappaf_free:
        term.append(("kappa_f", 3))
    term_cols = np.array([grid.state(N, k) for _, k in term])
    term_vals = np.array([target[k] for _, k in term])
    m_def = 4 * N
    m_eq = m_def + len(term)

    # constant part of the equality Jacobian
    rows, cols, vals = [], [], []
    for k in range(4):
        r = 4 * idx + k
        rows += [r, r]
        cols += [4 * (idx + 1) + k, 4 * idx + k]
        vals += [np.full(N, 1.0 / h), np.full(N, -1.0 / h)]
    rows += [4 * idx + 2, 4 * idx + 3]
    cols += [sk, ui]
    vals += [np.full(N, -1.0), np.full(N, -1.0)]
    rows.append(m_def + np.arange(len(term)))
    cols.append(term_cols)
    vals.append(np.ones(len(term)))
    # heading entries of the x/y rows, filled per call
    rows += [4 * idx, 4 * idx + 1]
    cols += [st, st]
    c_rows = np.concatenate(rows)
    c_cols = np.concatenate(cols)
    c_const = np.concatenate(vals)

    def c(z):
        s = z[:ns].reshape(-1, 4)
        u = z[ns:bi]
        d = (s[1:] - s[:-1]) / h
        th = s[:-1, 2]
        d[:, 0] -= np.cos(th)
        d[:, 1] -= np.sin(th)
        d[:, 2] -= s[:-1, 3]
        d[:, 3] -= u
        return np.concatenate([d.ravel(), z[term_cols] - term_vals])

    def jac_c(z):
        th = z[st]
        data = np.concatenate([c_const, np.sin(th), -np.cos(th)])
        return sp.csr_matrix((data, (c_rows, c_cols)), shape=(m_eq, n))

    bounded = spec.bounded
    a = spec.curvature_bound if bounded else None
    g_rows = [np.arange(N), N + np.arange(N), np.arange(N), N + np.arange(N)]
    g_cols = [ui, ui, np.full(N, bi), np.full(N, bi)]
    g_vals = [np.ones(N), -np.ones(N), -np.ones(N), -np.ones(N)]
    m_ineq = 2 * N
    if bounded:
        kn = 4 * np.arange(N + 1) + 3
        g_rows += [2 * N + np.arange(N + 1), 3 * N + 1 + np.arange(N + 1)]
        g_cols += [kn, kn]
        g_vals += [np.ones(N + 1), -np.ones(N + 1)]
        m_ineq += 2 * (N + 1)
    G = sp.csr_matrix((np.concatenate(g_vals), (np.concatenate(g_rows), np.concatenate(g_cols))),
                      shape=(m_ineq, n))

    def g(z):
        u, b = z[ns:bi], z[bi]
        parts = [u - b, -u - b]
        if bounded:
            kap = z[3:ns:4]
            parts += [kap - a, -kap - a]
        return np.concatenate(parts)

    e_b = np.zeros(n)
    e_b[bi] = 1.0

    def hess(z, lam, mu):
        # only the cos/sin terms of the x/y defects are nonlinear
        th = z[st]
        diag = np.zeros(n)
        diag[st] = lam[sx] * np.cos(th) + lam[sy] * np.sin(th)
        return sp.diags(diag, format="csc")

    lb = np.full(n, -np.inf)
    ub = np.full(n, np.inf)
    start = [spec.x0, spec.y0, spec.theta0]
    for k, v in enumerate(start):
        lb[k] = ub[k] = v
    if not spec.kappa0_free:
        lb[3] = ub[3] = spec.kappa0
    lb[bi] = 0.0
    names = {"terminal_rows": [name for name, _ in term]}
    # node-major order (x_i, y_i, theta_i, kappa_i, u_i) makes the Hessian
    # banded; b couples to every control and forms a one-variable border
    order = np.concatenate([np.column_stack([4 * idx, 4 * idx + 1, 4 * idx + 2, 4 * idx + 3, ui]).ravel(),
                            4 * N + np.arange(4), [bi]])
    nlp = NlpProblem(n=n, f=lambda z: float(z[bi]), grad=lambda z: e_b.copy(),
                     c=c, jac_c=jac_c, m_eq=m_eq, g=g, jac_g=lambda z: G, m_ineq=m_ineq,
                     lb=lb, ub=ub, hess=hess, names=names, order=order, n_border=1)
    return PhProblem(spec, grid, nlp, [name for name, _ in term])


@dataclass
class CondensedPh:
    """The transcription with the states eliminated by forward recursion.

    Unknowns are ``(u_0, ..., u_{N-1}, b, [kappa_0])``. The Euler recursion
    makes curvature and heading linear in the controls, so the control and
    curvature bounds become linear rows and only ``x_N`` and ``y_N`` stay
    nonlinear. Minimizers and multipliers map one-to-one onto the full
    transcription (see :meth:`full_multipliers`).
    """

    ph: PhProblem
    nlp: NlpProblem
    kappa_rows: np.ndarray  # node index of each kept curvature row

    def expand(self, xc) -> np.ndarray:
        """Full transcription vector for condensed unknowns ``xc``."""
        xc = np.asarray(xc, float)
        N = self.ph.grid.n_steps
        traj = self._states(xc)
        return np.concatenate([traj.ravel(), xc[:N], [xc[N]]])

    def compress(self, z) -> np.ndarray:
        grid, spec = self.ph.grid, self.ph.spec
        z = np.asarray(z, float)
        u = z[grid.n_states: grid.b]
        b = max(float(z[grid.b]), float(np.max(np.abs(u), initial=0.0)))
        k0 = float(z[3]) if spec.kappa0_free else spec.kappa0
        if spec.bounded:
            # interior-point steps crawl from starts outside the curvature
            # band, so shrink the curvature profile to 90% of the bound
            a = spec.curvature_bound
            if spec.kappa0_free:
                k0 = float(np.clip(k0, -0.9 * a, 0.9 * a))
            dk = grid.h * np.concatenate([[0.0], np.cumsum(u)])
            for _ in range(60):
                if np.max(np.abs(k0 + dk)) <= 0.9 * a or not np.any(u):
                    break
                u = 0.8 * u
                dk = 0.8 * dk
            b = float(np.max(np.abs(u), initial=0.0))
        out = [*u, b]
        if spec.kappa0_free:
            out.append(k0)
        return np.array(out)

    def _states(self, xc):
        return self._forward(xc)[0]

    def full_multipliers(self, xc, lam_c, mu_c):
        """Multipliers of the full transcription from the condensed ones.

        Terminal and bound multipliers carry over unchanged; the defect
        multipliers follow from stationarity in the states, run backwards
        from the terminal node.
        """
        ph = self.ph
        grid, spec = ph.grid, ph.spec
        N, h = grid.n_steps, grid.h
        s = self._states(np.asarray(xc, float))
        th = s[:, 2]
        mu = np.zeros(ph.nlp.m_ineq)
        mu[: 2 * N] = mu_c[: 2 * N]
        dk = np.zeros(N + 1)
        if spec.bounded:
            nk = len(self.kappa_rows)
            w1 = mu_c[2 * N: 2 * N + nk]
            w2 = mu_c[2 * N + nk: 2 * N + 2 * nk]
            mu[2 * N + self.kappa_rows] = w1
            mu[3 * N + 1 + self.kappa_rows] = w2
            dk[self.kappa_rows] = w1 - w2
        nu = np.zeros(4)
        nu[: len(lam_c)] = lam_c
        lam = np.zeros((N, 4))
        lam[N - 1] = -h * nu
        lam[N - 1, 3] -= h * dk[N]
        for i in range(N - 1, 0, -1):
            lx, ly, lt, lk = lam[i]
            lam[i - 1] = (lx, ly, lt + h * (-lx * np.sin(th[i]) + ly * np.cos(th[i])),
                          lk + h * lt - h * dk[i])
        return np.concatenate([lam.ravel(), lam_c]), mu

    def _forward(self, xc):
        spec, grid = self.ph.spec, self.ph.grid
        N, h = grid.n_steps, grid.h
        u = xc[:N]
        k0 = xc[N + 1] if spec.kappa0_free else spec.kappa0
        kap = k0 + h * np.concatenate([[0.0], np.cumsum(u)])
        th = spec.theta0 + h * np.concatenate([[0.0], np.cumsum(kap[:-1])])
        c, sn = np.cos(th), np.sin(th)
        x = spec.x0 + h * np.concatenate([[0.0], np.cumsum(c[:-1])])
        y = spec.y0 + h * np.concatenate([[0.0], np.cumsum(sn[:-1])])
        return np.column_stack([x, y, th, kap]), c, sn


def condense(ph: PhProblem) -> CondensedPh:
    """Eliminate the states of ``ph`` (see :class:`CondensedPh`)."""
    spec, grid = ph.spec, ph.grid
    N, h = grid.n_steps, grid.h
    free0 = spec.kappa0_free
    n = N + 1 + int(free0)
    bi = N
    # d kappa_i / d xc and d theta_i / d xc, both (N+1, n)
    K = np.zeros((N + 1, n))
    K[:, :N] = h * np.tril(np.ones((N + 1, N)), -1)
    if free0:
        K[:, N + 1] = 1.0
    T = np.zeros((N + 1, n))
    T[1:] = h * np.cumsum(K[:-1], axis=0)

    target = spec.end()
    term = [k for k in range(4) if k < 3 or not spec.kappaf_free]

    holder = {}

    def fwd(xc):
        key = xc.tobytes()
        if holder.get("key") != key:
            holder["key"] = key
            holder["val"] = cp._forward(xc)
        return holder["val"]

    def c(xc):
        s = fwd(xc)[0]
        return s[N, term] - target[term]

    def jac_c(xc):
        _, cs, sn = fwd(xc)
        rows = [-h * (sn[:N] @ T[:N]), h * (cs[:N] @ T[:N]), T[N], K[N]]
        return np.array([rows[k] for k in term])

    def hess(xc, lam, mu):
        _, cs, sn = fwd(xc)
        w = -h * (lam[0] * cs[:N] + lam[1] * sn[:N])
        Tn = T[:N]
        return Tn.T @ (w[:, None] * Tn)

    bounded = spec.bounded
    a = spec.curvature_bound if bounded else None
    keep = np.arange(N + 1)
    if bounded:
        # rows fixed by the endpoint data carry no information
        drop = set()
        if not free0:
            drop.add(0)
        if not spec.kappaf_free:
            drop.add(N)
        keep = np.array([i for i in range(N + 1) if i not in drop], dtype=int)
    Gu = sp.hstack([sp.vstack([sp.identity(N), -sp.identity(N)]),
                    sp.csr_matrix(-np.ones((2 * N, 1))),
                    sp.csr_matrix((2 * N, n - N - 1))])
    blocks = [Gu]
    if bounded:
        Kk = sp.csr_matrix(K[keep])
        blocks += [Kk, -Kk]
    G = sp.vstack(blocks).tocsr()

    def g(xc):
        u, b = xc[:N], xc[bi]
        parts = [u - b, -u - b]
        if bounded:
            kap = fwd(xc)[0][keep, 3]
            parts += [kap - a, -kap - a]
        return np.concatenate(parts)

    e_b = np.zeros(n)
    e_b[bi] = 1.0
    lb = np.full(n, -np.inf)
    ub = np.full(n, np.inf)
    lb[bi] = 0.0
    nlp = NlpProblem(n=n, f=lambda xc: float(xc[bi]), grad=lambda xc: e_b.copy(),
                     c=c, jac_c=jac_c, m_eq=len(term), g=g, jac_g=lambda xc: G,
                     m_ineq=G.shape[0], lb=lb, ub=ub, hess=hess)
    cp = CondensedPh(ph, nlp, keep if bounded else np.zeros(0, dtype=int))
    return cp


def lift(cp: CondensedPh, sol: NlpSolution) -> NlpSolution:
    """Map a condensed solution onto the full transcription."""
    z = cp.expand(sol.z)
    lam, mu = cp.full_multipliers(sol.z, sol.lam, sol.mu)
    stat, feas, comp = kkt_residuals(cp.ph.nlp, z, lam, mu)
    return NlpSolution(z, lam, mu, sol.objective, stat, feas, comp, sol.iterations,
                       sol.inner_iterations, sol.status)


def interpolation_guess(ph: PhProblem) -> np.ndarray:
    """Straight interpolation of the endpoint states, ``u = 0`` and ``b = 1``."""
    spec, grid = ph.spec, ph.grid
    w = np.linspace(0.0, 1.0, grid.n_steps + 1)[:, None]
    k0 = 0.0 if spec.kappa0_free else spec.kappa0
    k1 = 0.0 if spec.kappaf_free else spec.kappaf
    s0 = np.array([spec.x0, spec.y0, spec.theta0, k0])
    s1 = np.array([spec.xf, spec.yf, spec.thetaf, k1])
    s = (1 - w) * s0 + w * s1
    z = np.concatenate([s.ravel(), np.zeros(grid.n_steps), [1.0]])
    return ph.nlp.project(z)


def make_starts(ph: PhProblem, count: int, seed: int = 0) -> List[np.ndarray]:
    """Deterministic start list: the interpolation guess, then noisy variants.

    Start ``j >= 1`` draws controls uniformly from ``[-A_j, A_j]`` with
    ``A_j = j * 2 / t_f**2`` (so heading excursions grow with ``j``), keeps
    a few of them piecewise constant to seed switching structures, and sets
    ``b`` to the largest drawn magnitude.
    """
    if count < 1:
        raise ValueError("count must be at least 1")
    base = interpolation_guess(ph)
    grid = ph.grid
    rng = np.random.default_rng(seed)
    starts = [base]
    tf = grid.total_length
    for j in range(1, count):
        amp = j * 2.0 / tf ** 2
        n_pieces = int(rng.integers(2, 7))
        edges = np.sort(rng.choice(np.arange(1, grid.n_steps), n_pieces - 1, replace=False))
        levels = rng.uniform(-amp, amp, n_pieces)
        u = np.repeat(levels, np.diff(np.concatenate([[0], edges, [grid.n_steps]])))
        z = base.copy()
        z[grid.n_states: grid.b] = u
        z[grid.b] = float(np.max(np.abs(u)))
        starts.append(ph.nlp.project(z))
    return starts


def extract_adjoints(ph: PhProblem, sol: NlpSolution) -> DiscreteAdjoints:
    """Convert NLP multipliers into adjoints with the cost multiplier at 1.

    With rows scaled by ``1/h`` the defect multipliers satisfy the discrete
    adjoint recursion with the opposite sign, and the control-bound
    multipliers sum to one; the continuous normalization integrates
    ``|lambda4|`` to ``t_f``, hence the factor ``-N``.
    """
    grid = ph.grid
    N = grid.n_steps
    if len(sol.lam) < 4 * N:
        raise InsufficientDualsError("defect multipliers are missing")
    lam = -N * sol.lam[: 4 * N].reshape(N, 4)
    if ph.spec.bounded:
        if len(sol.mu) < 4 * N + 2:
            raise InsufficientDualsError("curvature-bound multipliers are missing")
        mu1 = N * sol.mu[2 * N: 3 * N + 1]
        mu2 = N * sol.mu[3 * N + 1: 4 * N + 2]
    else:
        mu1 = np.zeros(N + 1)
        mu2 = np.zeros(N + 1)
    return DiscreteAdjoints(grid.times[:-1], lam, mu1, mu2)


def trajectory_from(ph: PhProblem, z) -> Trajectory:
    s, u, b = ph.grid.split(np.asarray(z, float))
    return Trajectory(ph.grid.times, s.copy(), np.append(u, u[-1]), float(b))


def _thread_count(default: int) -> int:
    env = os.environ.get("SPIRALIS_THREADS")
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            log.warning("ignoring non-integer SPIRALIS_THREADS=%r", env)
    return default


def solve_ph(ph: PhProblem, starts: Sequence[np.ndarray], tol_feas: float = 1e-9,
             tol_opt: float = 1e-8, threads: Optional[int] = None, method: str = "ipm",
             **solver_options) -> List[PhResult]:
    """Solve from every start; deduplicate by ``b`` and sort ascending.

    ``method="ipm"`` (default) runs the interior-point method on the
    state-eliminated problem and lifts the result back, recomputing the KKT
    residuals on the full transcription. ``method="auglag"`` runs the
    augmented Lagrangian on the full transcription directly.

    Starts run in a thread pool capped by ``SPIRALIS_THREADS``; the returned
    order depends only on the results. Only starts reaching the feasibility
    tolerance are kept.
    """
    if not starts:
        raise ValueError("at least one start is required")
    if method not in ("ipm", "auglag"):
        raise ValueError(f"unknown method {method!r}")
    workers = _thread_count(threads or 1)
    cp = condense(ph) if method == "ipm" else None

    def run(item):
        j, z0 = item
        try:
            if cp is None:
                sol = solve_auglag(ph.nlp, z0, tol_feas=tol_feas, tol_opt=tol_opt, **solver_options)
            else:
                sol = lift(cp, solve_ipm(cp.nlp, cp.compress(z0), tol=min(tol_feas, tol_opt),
                                         **solver_options))
        except (SolverError, CallbackFailure) as exc:
            log.info("start %d failed: %s", j, exc)
            return None
        return j, sol

    items = list(enumerate(starts))
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            outcomes = list(pool.map(run, items))
    else:
        outcomes = [run(it) for it in items]

    results = []
    for out in outcomes:
        if out is None:
            continue
        j, sol = out
        if sol.feasibility > max(100 * tol_feas, 1e-6):
            log.info("start %d ended infeasible (%.2e)", j, sol.feasibility)
            continue
        results.append(PhResult(trajectory_from(ph, sol.z), extract_adjoints(ph, sol),
                                float(sol.z[ph.grid.b]), sol, j))
    if not results:
        raise SolverError(f"all {len(starts)} starts failed")
    results.sort(key=lambda r: (r.b, r.start_index))
    unique: List[PhResult] = []
    for r in results:
        if not any(abs(r.b - q.b) <= DEDUP_RTOL * max(abs(q.b), 1e-12) for q in unique):
            unique.append(r)
    return unique
