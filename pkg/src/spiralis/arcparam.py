"""High-precision refinement over arc lengths for a known arc structure.

Given the arc sequence, the unknowns are the spirality bound ``b``, the arc
lengths ``xi_k`` and any free initial curvature. Each arc is integrated with
``N / n_a`` GL6 steps (``N`` close to 400) and the terminal conditions,
the total-length condition and the curvature pins of boundary arcs
are imposed as equalities; ``b`` is minimized by :func:`spiralis.nlp.solve_sqp`.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import List, Optional, Sequence

import numpy as np

from .errors import SolverError, StructureError, StructureMismatchError
from .integrate import IntegratorConfig, arc_sweep, simulate
from .nlp import NlpProblem, NlpSolution, solve_sqp
from .problem import ProblemSpec, Trajectory
from .structure import ArcKind, ArcStructure

log = logging.getLogger(__name__)

DEFAULT_TOTAL_STEPS = 400
XI_MIN_FRACTION = 1e-6


def steps_per_arc(n_arcs: int, total: int = DEFAULT_TOTAL_STEPS) -> int:
    """Steps per arc so that the total is the multiple of ``n_arcs`` nearest ``total``."""
    return max(1, int(round(total / n_arcs)))


@dataclass
class PaLayout:
    """Index bookkeeping for the refinement unknowns ``(b, xi..., [kappa0])``."""

    n_arcs: int
    kappa0_free: bool

    @property
    def n(self) -> int:
        return 1 + self.n_arcs + int(self.kappa0_free)

    @property
    def xi(self) -> slice:
        return slice(1, 1 + self.n_arcs)


@dataclass
class PaProblem:
    spec: ProblemSpec
    structure: ArcStructure
    nlp: NlpProblem
    layout: PaLayout
    steps: int
    rows: List[str]

    def sweep(self, z):
        return self._sweep(z)


@dataclass
class RefinedSolution:
    b: float
    xi: np.ndarray
    switching_times: np.ndarray
    kappa0: float
    kappaf: float
    trajectory: Trajectory
    structure: ArcStructure
    nlp: NlpSolution
    warnings: List[str] = field(default_factory=list)

    @property
    def converged(self) -> bool:
        return self.nlp.ok

    @property
    def residuals(self) -> dict:
        return {"stationarity": self.nlp.stationarity, "feasibility": self.nlp.feasibility}


def switching_times(xi: Sequence[float]) -> np.ndarray:
    """Interior switching times: prefix sums of the arc lengths, last one dropped."""
    return np.cumsum(np.asarray(xi, dtype=float))[:-1]


def assemble_pa(spec: ProblemSpec, structure: ArcStructure,
                total_steps: int = DEFAULT_TOTAL_STEPS, pin_lines: bool = False) -> PaProblem:
    """Build the arc-length problem for ``structure``.

    Boundary arcs hold ``kappa = +-a``, so their entry curvature is pinned.
    A line arc only fixes ``u = 0``; its (constant) curvature is left to the
    optimizer unless ``pin_lines`` requests ``kappa = 0`` there as well.

    Raises :class:`StructureMismatchError` when the structure imposes more
    independent conditions than there are unknowns, or pins contradict fixed
    endpoint data.
    """
    structure.check_regime(spec.bounded)
    kinds = structure.kinds
    n_arcs = len(kinds)
    layout = PaLayout(n_arcs, spec.kappa0_free)
    steps = steps_per_arc(n_arcs, total_steps)
    signs = structure.signs
    a = spec.curvature_bound if spec.bounded else None
    target = spec.end()

    def pin_value(kind):
        if kind is ArcKind.SINGULAR_LINE and not pin_lines:
            return None
        pk = kind.pinned_kappa
        return None if pk is None else (0.0 if pk == 0 else pk * a)

    # rows: (label, kind, arc index) -- kind "final" uses a state component
    rows = [("x_f", "final", 0), ("y_f", "final", 1), ("theta_f", "final", 2)]
    last_pin = pin_value(kinds[-1])
    if not spec.kappaf_free:
        if last_pin is not None and n_arcs > 1:
            if abs(last_pin - spec.kappaf) > 1e-12 * max(1.0, abs(last_pin)):
                raise StructureMismatchError(0, 0, f"final arc pins curvature {last_pin} "
                                             f"but kappa_f = {spec.kappaf}")
            # implied by the pin on the final arc
        else:
            rows.append(("kappa_f", "final", 3))
    pins = []
    for k, kind in enumerate(kinds):
        pv = pin_value(kind)
        if pv is None:
            continue
        if k == 0 and not spec.kappa0_free:
            if abs(pv - spec.kappa0) > 1e-12 * max(1.0, abs(pv)):
                raise StructureMismatchError(0, 0, f"first arc pins curvature {pv} "
                                             f"but kappa_0 = {spec.kappa0}")
            continue
        pins.append((k, pv))
        rows.append((f"kappa(t_{k})", "pin", k))
    rows.append(("sum_xi", "length", None))
    if len(rows) > layout.n:
        raise StructureMismatchError(len(rows), layout.n)

    kappa0_fixed = None if spec.kappa0_free else float(spec.kappa0)
    cache = {}

    def sweep(z):
        key = z.tobytes()
        if key not in cache:
            cache.clear()
            k0 = z[-1] if layout.kappa0_free else kappa0_fixed
            start = spec.start(k0)
            cache[key] = arc_sweep(start, signs, z[layout.xi], z[0], steps)
        return cache[key]

    def cols(S):
        # sweep parameters are (b, xi, kappa0); drop kappa0 when it is fixed
        return S if layout.kappa0_free else S[..., :-1]

    def c(z):
        sw = sweep(z)
        out = []
        for label, kind, idx in rows:
            if kind == "final":
                out.append(sw.final[idx] - target[idx])
            elif kind == "pin":
                out.append(sw.entry[idx, 3] - dict(pins)[idx])
            else:
                out.append(np.sum(z[layout.xi]) - spec.total_length)
        return np.array(out)

    def jac(z):
        sw = sweep(z)
        J = np.zeros((len(rows), layout.n))
        for r, (label, kind, idx) in enumerate(rows):
            if kind == "final":
                J[r] = cols(sw.final_sens)[idx]
            elif kind == "pin":
                J[r] = cols(sw.entry_sens[idx])[3]
            else:
                J[r, layout.xi] = 1.0
        return J

    lb = np.full(layout.n, -np.inf)
    ub = np.full(layout.n, np.inf)
    lb[0] = 0.0
    lb[layout.xi] = XI_MIN_FRACTION * spec.total_length
    if layout.kappa0_free and spec.bounded:
        lb[-1], ub[-1] = -a, a
    e0 = np.zeros(layout.n)
    e0[0] = 1.0
    nlp = NlpProblem(n=layout.n, f=lambda z: float(z[0]), grad=lambda z: e0.copy(),
                     c=c, jac_c=jac, m_eq=len(rows), lb=lb, ub=ub,
                     names={"rows": [r[0] for r in rows]})
    pa = PaProblem(spec, structure, nlp, layout, steps, [r[0] for r in rows])
    pa._sweep = sweep
    return pa


def default_guess(spec: ProblemSpec, structure: ArcStructure) -> np.ndarray:
    """Starting point from the structure's guesses, else equal arcs."""
    n = structure.n_arcs
    if structure.xi_guess is not None:
        xi = np.maximum(np.asarray(structure.xi_guess, float), 1e-3 * spec.total_length)
        xi *= spec.total_length / xi.sum()
    else:
        xi = np.full(n, spec.total_length / n)
    b = structure.b_guess if structure.b_guess else 1.0
    z = [b, *xi]
    if spec.kappa0_free:
        z.append(0.0)
    return np.array(z, dtype=float)


def solve_pa(pa: PaProblem, guess: Optional[np.ndarray] = None, tol: float = 1e-12,
             max_iter: int = 200) -> RefinedSolution:
    """Solve the arc-length problem and rebuild the refined trajectory."""
    spec, layout = pa.spec, pa.layout
    z0 = default_guess(spec, pa.structure) if guess is None else np.asarray(guess, float)
    sol = solve_sqp(pa.nlp, z0, tol=tol, max_iter=max_iter)
    z = sol.z
    xi = z[layout.xi].copy()
    b = float(z[0])
    k0 = float(z[-1]) if layout.kappa0_free else float(spec.kappa0)
    warnings = []
    xi_min = XI_MIN_FRACTION * spec.total_length
    for k, v in enumerate(xi):
        if v <= xi_min * (1 + 1e-9):
            warnings.append(f"arc {k + 1} ({pa.structure.kinds[k].value}) collapsed to the "
                            "minimum length; re-extract the structure without it")
    traj = simulate(spec.start(k0), pa.structure, xi, b, IntegratorConfig(steps=pa.steps))
    if spec.bounded:
        over = np.max(np.abs(traj.kappa)) - spec.curvature_bound
        if over > 1e-8:
            warnings.append(f"curvature bound exceeded by {over:.3e}")
    for w in warnings:
        log.warning(w)
    return RefinedSolution(b=b, xi=xi, switching_times=switching_times(xi), kappa0=k0,
                           kappaf=float(traj.kappa[-1]), trajectory=traj,
                           structure=pa.structure, nlp=sol, warnings=warnings)
