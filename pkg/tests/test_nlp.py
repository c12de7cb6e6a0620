import io

import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import EX1, EX2, EX3A
from spiralis.arcparam import assemble_pa, default_guess
from spiralis.errors import CallbackFailure, SolverError
from spiralis.nlp import NlpProblem, kkt_residuals, solve_auglag, solve_ipm, solve_sqp
from spiralis.structure import ArcStructure
from spiralis.transcribe import build_ph, condense


def dense(J):
    return J.toarray() if sp.issparse(J) else np.atleast_2d(np.asarray(J, float))


# hand-checked problems: (problem, start, z*, lam*, mu*)
def square_pin():
    # min z^2 s.t. z - 1 = 0  ->  z = 1, 2z + lam = 0
    p = NlpProblem(n=1, f=lambda z: float(z[0] ** 2), grad=lambda z: 2 * z,
                   c=lambda z: z - 1.0, jac_c=lambda z: np.eye(1), m_eq=1)
    return p, [3.0], [1.0], [-2.0], []


def circle_linear():
    # min z1 + z2 s.t. z1^2 + z2^2 = 2, |z| <= 2  ->  z = (-1, -1), 1 + 2 lam z = 0
    p = NlpProblem(n=2, f=lambda z: float(z.sum()), grad=lambda z: np.ones(2),
                   c=lambda z: np.array([z @ z - 2.0]), jac_c=lambda z: 2 * z[None, :], m_eq=1,
                   lb=np.full(2, -2.0), ub=np.full(2, 2.0))
    return p, [-0.5, -1.5], [-1.0, -1.0], [0.5], []


def halfplane_qp():
    # min |z - (2, 1)|^2 s.t. z1 + z2 <= 1  ->  projection (1, 0), mu = 2
    c0 = np.array([2.0, 1.0])
    p = NlpProblem(n=2, f=lambda z: float((z - c0) @ (z - c0)), grad=lambda z: 2 * (z - c0),
                   g=lambda z: np.array([z.sum() - 1.0]), jac_g=lambda z: np.ones((1, 2)),
                   m_ineq=1, hess=lambda z, lam, mu: 2 * np.eye(2))
    return p, [0.0, 0.0], [1.0, 0.0], [], [2.0]


ORACLES = {"square_pin": square_pin, "circle_linear": circle_linear, "halfplane_qp": halfplane_qp}


def assert_oracle(sol, z, lam, mu, tol=1e-10):
    np.testing.assert_allclose(sol.z, z, atol=tol)
    np.testing.assert_allclose(sol.lam, lam, atol=tol)
    np.testing.assert_allclose(sol.mu, mu, atol=tol)


@pytest.mark.parametrize("name", sorted(ORACLES))
def test_auglag_oracles(name):
    p, start, z, lam, mu = ORACLES[name]()
    sol = solve_auglag(p, start, tol_feas=1e-12, tol_opt=1e-12)
    assert sol.ok, sol.status
    assert_oracle(sol, z, lam, mu)


@pytest.mark.parametrize("name", ["square_pin", "circle_linear"])
def test_sqp_oracles(name):
    p, start, z, lam, mu = ORACLES[name]()
    sol = solve_sqp(p, start)
    assert sol.ok, sol.status
    assert_oracle(sol, z, lam, mu)


@pytest.mark.parametrize("name", sorted(ORACLES))
def test_ipm_oracles(name):
    p, start, z, lam, mu = ORACLES[name]()
    sol = solve_ipm(p, start, tol=1e-12)
    assert sol.ok, sol.status
    assert_oracle(sol, z, lam, mu)


def test_sqp_square_system_is_newton():
    # z^2 - 4 = 0 from z = 3: errors square each step
    p = NlpProblem(n=1, f=lambda z: 0.0, grad=lambda z: np.zeros(1),
                   c=lambda z: z ** 2 - 4.0, jac_c=lambda z: np.diag(2 * z), m_eq=1)
    trace = []
    sol = solve_sqp(p, [3.0], trace=trace, restore_above=np.inf)
    assert sol.z[0] == pytest.approx(2.0, abs=1e-14)
    err = [abs(z[0] - 2.0) for z in trace if abs(z[0] - 2.0) > 1e-12]
    assert len(err) >= 3
    for e0, e1 in zip(err, err[1:]):
        assert e1 <= e0 ** 2  # Newton: e_{k+1} = e_k^2 / (2 z_k)


def test_sqp_rejects_inequalities():
    p, *_ = halfplane_qp()
    with pytest.raises(ValueError):
        solve_sqp(p, [0.0, 0.0])


def test_sqp_overdetermined():
    p = NlpProblem(n=1, f=lambda z: 0.0, grad=lambda z: np.zeros(1),
                   c=lambda z: np.array([z[0], z[0] - 1]), jac_c=lambda z: np.ones((2, 1)), m_eq=2)
    with pytest.raises(SolverError):
        solve_sqp(p, [0.0])


def test_non_finite_callback_is_reported():
    p = NlpProblem(n=1, f=lambda z: 0.0, grad=lambda z: np.array([np.nan]))
    with pytest.raises(CallbackFailure):
        kkt_residuals(p, [0.0], [], [])


@pytest.mark.parametrize("name", sorted(ORACLES))
def test_kkt_residuals_recomputed(name):
    p, start, z, lam, mu = ORACLES[name]()
    sol = solve_auglag(p, start, tol_feas=1e-12, tol_opt=1e-12)
    stat, feas, comp = kkt_residuals(p, sol.z, sol.lam, sol.mu)
    assert (stat, feas, comp) == (sol.stationarity, sol.feasibility, sol.complementarity)
    # a wrong multiplier shows up as a stationarity error
    if len(lam):
        assert kkt_residuals(p, sol.z, sol.lam + 1.0, sol.mu)[0] > 0.1


def test_auglag_log_and_determinism():
    p, start, *_ = circle_linear()
    buf = io.StringIO()
    a = solve_auglag(p, start, log_file=buf, inner="lbfgs")
    b = solve_auglag(p, start, inner="lbfgs")
    rows = buf.getvalue().strip().splitlines()
    assert rows[0].startswith("iteration,objective")
    assert len(rows) == a.iterations + 1
    np.testing.assert_array_equal(a.z, b.z)


# ---------------------------------------------------------------------------
# derivative callbacks against central differences

def fd_jacobian(fun, z, rel=1e-6):
    z = np.asarray(z, float)
    cols = []
    for j in range(len(z)):
        h = rel * max(1.0, abs(z[j]))
        e = np.zeros_like(z)
        e[j] = h
        cols.append((np.atleast_1d(fun(z + e)) - np.atleast_1d(fun(z - e))) / (2 * h))
    return np.column_stack(cols)


def assert_matches_fd(J, fd, rtol=1e-6):
    scale = max(1.0, np.max(np.abs(fd)))
    np.testing.assert_allclose(dense(J), fd, rtol=rtol, atol=rtol * scale)


def ph_point(spec, n, rng):
    ph = build_ph(spec, n)
    z = rng.uniform(-1, 1, ph.nlp.n)
    z[ph.grid.b] = abs(z[ph.grid.b]) + 0.5
    return ph, z


@pytest.mark.parametrize("spec", [EX1, EX2], ids=["ex1", "ex2"])
def test_transcription_derivatives(spec, rng):
    ph, z = ph_point(spec, 12, rng)
    p = ph.nlp
    assert_matches_fd(p.grad(z)[None, :], fd_jacobian(p.f, z).reshape(1, -1))
    assert_matches_fd(p.jac_c(z), fd_jacobian(p.c, z))
    assert_matches_fd(p.jac_g(z), fd_jacobian(p.g, z))
    lam = rng.normal(size=p.m_eq)
    mu = rng.uniform(0, 1, p.m_ineq)

    def lag_grad(v):
        return p.grad(v) + dense(p.jac_c(v)).T @ lam + dense(p.jac_g(v)).T @ mu

    assert_matches_fd(p.hess(z, lam, mu), fd_jacobian(lag_grad, z))


@pytest.mark.parametrize("spec", [EX1, EX2], ids=["ex1", "ex2"])
def test_condensed_derivatives(spec, rng):
    ph = build_ph(spec, 12)
    cp = condense(ph)
    p = cp.nlp
    x = rng.uniform(-2, 2, p.n)
    x[ph.grid.n_steps] = abs(x[ph.grid.n_steps]) + 0.5
    assert_matches_fd(p.jac_c(x), fd_jacobian(p.c, x))
    assert_matches_fd(p.jac_g(x), fd_jacobian(p.g, x))
    lam = rng.normal(size=p.m_eq)
    mu = rng.uniform(0, 1, p.m_ineq)

    def lag_grad(v):
        return p.grad(v) + dense(p.jac_c(v)).T @ lam + dense(p.jac_g(v)).T @ mu

    assert_matches_fd(p.hess(x, lam, mu), fd_jacobian(lag_grad, x), rtol=1e-5)


def test_condensed_expand_round_trip(rng):
    # compress only repairs starts, so round trip a point with b >= max|u|
    ph = build_ph(EX1, 12)
    cp = condense(ph)
    x = rng.uniform(-1, 1, cp.nlp.n)
    x[12] = np.max(np.abs(x[:12])) + 0.1
    z = cp.expand(x)
    np.testing.assert_allclose(cp.compress(z), x, atol=1e-15)
    # expanded states satisfy the Euler defects exactly
    assert np.max(np.abs(ph.nlp.c(z)[: 4 * ph.grid.n_steps])) < 1e-12


@pytest.mark.parametrize("spec, structure", [
    (EX1, "- + - +"), (EX2, "+ P - M"), (EX3A, "- + - + -"),
])
def test_arc_length_problem_derivatives(spec, structure, rng):
    pa = assemble_pa(spec, ArcStructure.parse(structure), total_steps=40)
    z0 = default_guess(spec, pa.structure)
    for _ in range(3):
        z = z0 * rng.uniform(0.8, 1.2, len(z0))
        z[0] = rng.uniform(5, 30)
        assert_matches_fd(pa.nlp.jac_c(z), fd_jacobian(pa.nlp.c, z))


@settings(max_examples=25, deadline=None)
@given(st.lists(st.floats(-3, 3), min_size=3, max_size=3),
       st.lists(st.floats(0.5, 2), min_size=3, max_size=3), st.floats(-2, 2))
def test_sqp_projection_onto_plane(c0, a, d):
    # min |z - c|^2 s.t. a.z = d has z = c - lam a / 2 with lam = 2 (a.c - d) / |a|^2
    c0, a = np.array(c0), np.array(a)
    p = NlpProblem(n=3, f=lambda z: float((z - c0) @ (z - c0)), grad=lambda z: 2 * (z - c0),
                   c=lambda z: np.array([a @ z - d]), jac_c=lambda z: a[None, :], m_eq=1)
    lam = 2 * (a @ c0 - d) / (a @ a)
    sol = solve_sqp(p, np.zeros(3))
    np.testing.assert_allclose(sol.z, c0 - lam * a / 2, atol=1e-10)
    assert sol.lam[0] == pytest.approx(lam, abs=1e-10)
