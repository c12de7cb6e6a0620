"""End-to-end orchestration: direct solve, structure extraction, refinement, checks."""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

import numpy as np

from .arcparam import RefinedSolution, assemble_pa, default_guess, solve_pa
from .errors import SolverError
from .integrate import IntegratorConfig, simulate
from .problem import ProblemSpec, Trajectory, TrivialKind, detect_trivial, validate
from .structure import (ArcKind, ArcStructure, apply_chatter_workaround, check_structure_rules,
                        classify_controls, detect_chatter)
from .transcribe import PhResult, build_ph, make_starts, solve_ph
from .verify import (AdjointSamples, PmpConstants, PmpReport, adjoints_from_multipliers,
                     adjoints_from_structure, verify)

log = logging.getLogger(__name__)

DEFAULT_N = 1000
DEFAULT_STARTS = 8
TRIVIAL_STEPS = 200


@dataclass
class Solution:
    """A solved instance plus everything needed to write and re-check it.

    ``phase`` is ``"refined"``, ``"direct"`` or ``"trivial"``.
    """

    spec: ProblemSpec
    phase: str
    b: float
    trajectory: Trajectory
    adjoints: AdjointSamples
    structure: Optional[ArcStructure] = None
    xi: Optional[np.ndarray] = None
    kappa0: Optional[float] = None
    kappaf: Optional[float] = None
    converged: bool = True
    trivial: Optional[str] = None
    chatter_windows: List[Tuple[float, float]] = field(default_factory=list)
    direct_b: List[float] = field(default_factory=list)
    warnings: List[str] = field(default_factory=list)
    report: Optional[PmpReport] = None
    timings: dict = field(default_factory=dict)

    @property
    def switching_times(self) -> np.ndarray:
        if self.xi is None:
            return np.zeros(0)
        return np.cumsum(self.xi)[:-1]


def solve_trivial(spec: ProblemSpec, steps: int = TRIVIAL_STEPS) -> Optional[Solution]:
    """Single zero-spirality arc for line and circle instances, else ``None``."""
    case = detect_trivial(spec)
    if case.kind is TrivialKind.NONE:
        return None
    k = case.curvature
    traj = simulate(spec.start(k), [0], [spec.total_length], 0.0, IntegratorConfig(steps=steps))
    zeros = np.zeros(len(traj))
    const = PmpConstants.from_adjoints(0.0, 0.0, 0.0)
    adj = AdjointSamples("refined", traj.t, zeros, zeros, zeros, zeros, -traj.t.copy(), const,
                         mu1=zeros, mu2=zeros)
    structure = None
    if case.kind is TrivialKind.LINE:
        structure = ArcStructure((ArcKind.SINGULAR_LINE,))
    elif spec.bounded and abs(abs(k) - spec.curvature_bound) <= 1e-12 * spec.curvature_bound:
        structure = ArcStructure((ArcKind.BOUNDARY_PLUS if k > 0 else ArcKind.BOUNDARY_MINUS,))
    sol = Solution(spec, "trivial", 0.0, traj, adj, structure, np.array([spec.total_length]),
                   k, k, trivial=case.kind.value)
    sol.report = verify(spec, traj, adj, structure)
    return sol


def run_direct(spec: ProblemSpec, n: int = DEFAULT_N, starts: int = DEFAULT_STARTS,
               seed: int = 0, threads: Optional[int] = None) -> List[PhResult]:
    """Multi-start direct transcription; results sorted by ``b``."""
    ph = build_ph(spec, n)
    results = solve_ph(ph, make_starts(ph, starts, seed), threads=threads)
    if not results:
        raise SolverError(f"no start out of {starts} produced a feasible direct solution")
    log.info("direct phase: b values %s", ", ".join(f"{r.b:.6f}" for r in results))
    return results


def extract_structure(spec: ProblemSpec, result: PhResult) -> Tuple[ArcStructure, List[Tuple[float, float]]]:
    """Arc structure of a direct solution, with the chatter work-around applied."""
    traj = result.trajectory
    a = spec.curvature_bound if spec.bounded else None
    lam4 = np.append(result.adjoints.lambda4, 0.0)
    windows = detect_chatter(traj, result.b, lam4)
    step = spec.total_length / traj.n_steps
    protected = [(int(lo / step), int(hi / step) + 1) for lo, hi in windows]
    st = classify_controls(traj, result.b, a, protected=protected)
    if windows:
        log.info("chatter windows %s; replacing them with line arcs", windows)
        st = apply_chatter_workaround(st, windows, spec.total_length)
    return st, [tuple(map(float, w)) for w in windows]


def refine(spec: ProblemSpec, structure: ArcStructure, guess=None,
           total_steps: int = 400) -> Solution:
    """Arc-length refinement followed by the refined-route checks."""
    structure.check_regime(spec.bounded)
    t0 = time.perf_counter()
    pa = assemble_pa(spec, structure, total_steps=total_steps)
    ref: RefinedSolution = solve_pa(pa, default_guess(spec, structure) if guess is None else guess)
    t1 = time.perf_counter()
    adj = adjoints_from_structure(ref.trajectory, ref.structure, spec)
    report = verify(spec, ref.trajectory, adj, ref.structure)
    warnings = list(ref.warnings) + check_structure_rules(ref.structure, spec.bounded)
    return Solution(spec, "refined", ref.b, ref.trajectory, adj, ref.structure, ref.xi,
                    ref.kappa0, ref.kappaf, converged=ref.converged, warnings=warnings,
                    report=report, timings={"refine": t1 - t0,
                                            "verify": time.perf_counter() - t1})


def direct_solution(spec: ProblemSpec, result: PhResult) -> Solution:
    """Wrap the best direct result with its multiplier-route checks."""
    adj = adjoints_from_multipliers(result.trajectory, result.adjoints)
    report = verify(spec, result.trajectory, adj)
    return Solution(spec, "direct", result.b, result.trajectory, adj, converged=result.nlp.ok,
                    report=report, direct_b=[result.b])


def solve(spec: ProblemSpec, n: int = DEFAULT_N, starts: int = DEFAULT_STARTS, seed: int = 0,
          threads: Optional[int] = None, structure: Optional[ArcStructure] = None,
          total_steps: int = 400) -> Solution:
    """Full pipeline: trivial check, direct phase, structure extraction, refinement.

    Zero-spirality instances are answered before validation: a straight
    segment has length equal to its chord, which the strict feasibility rule
    of :func:`~spiralis.problem.validate` would otherwise reject.
    """
    trivial = solve_trivial(spec)
    if trivial is not None:
        return trivial
    validate(spec)
    t0 = time.perf_counter()
    results = run_direct(spec, n, starts, seed, threads)
    t1 = time.perf_counter()
    best = results[0]
    windows: List[Tuple[float, float]] = []
    if structure is None:
        structure, windows = extract_structure(spec, best)
    log.info("extracted structure %s", structure)
    sol = refine(spec, structure, total_steps=total_steps)
    sol.chatter_windows = windows
    sol.direct_b = [r.b for r in results]
    sol.timings["direct"] = t1 - t0
    return sol


def critical_values(results: Sequence[PhResult]) -> List[float]:
    return sorted({round(r.b, 6) for r in results})
