import time

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from conftest import EX1, EX2, REFERENCE, refined
from spiralis.arcparam import (assemble_pa, default_guess, solve_pa, steps_per_arc,
                               switching_times)
from spiralis.errors import StructureError, StructureMismatchError
from spiralis.problem import ProblemSpec
from spiralis.structure import ArcStructure

GOLDEN_TOL = {"ex1": 1e-8, "ex2": 1e-8, "ex3a": 1e-8, "ex3c": 1e-7}


def test_golden_values(reference_case):
    name, ref = reference_case
    sol = refined(name)
    tol = GOLDEN_TOL[name]
    assert sol.converged
    assert sol.b == pytest.approx(ref["b"], abs=tol)
    np.testing.assert_allclose(sol.xi, ref["xi"], atol=tol)
    np.testing.assert_allclose(sol.switching_times, ref["t"], atol=tol)


def test_example1_runtime():
    t0 = time.perf_counter()
    pa = assemble_pa(EX1, ArcStructure.parse("- + - +"))
    sol = solve_pa(pa)
    assert sol.converged
    assert time.perf_counter() - t0 < 10.0


def test_curvature_bookkeeping(reference_case):
    # kappa_f - kappa_0 = b * sum(sign_k * xi_k); boundary and line arcs add nothing
    name, _ = reference_case
    sol = refined(name)
    signs = np.array(sol.structure.signs)
    assert sol.kappaf - sol.kappa0 == pytest.approx(sol.b * signs @ sol.xi, abs=1e-9)


def test_example1_alternation_identity():
    xi = refined("ex1").xi
    assert xi[0] - xi[1] + xi[2] - xi[3] == pytest.approx(0.0, abs=1e-11)


def test_example2_middle_bang_spans_the_band():
    # the "-" arc takes kappa from +a to -a, so b * xi_3 = 2a = 10
    sol = refined("ex2")
    assert sol.b * sol.xi[2] == pytest.approx(10.0, abs=1e-8)
    assert sol.kappa0 <= 5.0 + 1e-12


def test_lengths_sum_to_total(reference_case):
    name, ref = reference_case
    assert np.sum(refined(name).xi) == pytest.approx(ref["spec"].total_length, abs=1e-12)


def test_endpoint_reached(reference_case):
    name, ref = reference_case
    tr = refined(name).trajectory
    spec = ref["spec"]
    k = 3 if spec.kappaf_free else 4
    np.testing.assert_allclose(tr.s[-1][:k], spec.end()[:k], atol=1e-9)


@pytest.mark.parametrize("spec, text, shape", [
    (EX1, "- + - +", (5, 5)),
    (EX2, "+ P - M", (6, 6)),
    (REFERENCE["ex3c"]["spec"], "- + - 0 - + -", (8, 5)),
])
def test_problem_shape(spec, text, shape):
    pa = assemble_pa(spec, ArcStructure.parse(text))
    assert (pa.nlp.n, pa.nlp.m_eq) == shape
    assert pa.rows[-1] == "sum_xi"


def test_pinned_lines_add_rows():
    spec = REFERENCE["ex3c"]["spec"]
    pa = assemble_pa(spec, ArcStructure.parse("- + - 0 - + -"), pin_lines=True)
    assert pa.nlp.m_eq == 6


def test_too_few_unknowns():
    with pytest.raises(StructureMismatchError):
        assemble_pa(EX1, ArcStructure.parse("- +"))


def test_pin_contradicting_fixed_curvature():
    spec = ProblemSpec(0, 0, 0, 1, 1, 1.0, 2.0, 0.0, 0.0, 4.0)
    with pytest.raises(StructureMismatchError):
        assemble_pa(spec, ArcStructure.parse("P - +"))


def test_boundary_arcs_rejected_without_bound():
    with pytest.raises(StructureError):
        assemble_pa(EX1, ArcStructure.parse("+ P -"))


def test_steps_per_arc():
    assert steps_per_arc(4) == 100
    assert steps_per_arc(7) == 57
    assert steps_per_arc(500) == 1


@given(st.lists(st.floats(0.001, 5.0), min_size=1, max_size=10))
def test_switching_times_are_prefix_sums(xi):
    t = switching_times(xi)
    assert len(t) == len(xi) - 1
    assert np.all(np.diff(t) > 0)
    if len(t):
        assert t[-1] == pytest.approx(sum(xi[:-1]))


def test_default_guess_layout():
    z = default_guess(EX2, ArcStructure.parse("+ P - M"))
    assert len(z) == 6 and z[0] == 1.0 and z[-1] == 0.0
    assert np.sum(z[1:5]) == pytest.approx(2.0)


def test_wrong_structure_gives_larger_b():
    # the mirrored sequence is feasible but converges to a worse stationary curve
    best = refined("ex1").b
    other = solve_pa(assemble_pa(EX1, ArcStructure.parse("+ - + -")))
    assert other.converged
    assert other.b > best + 0.1
