"""Maximum-principle checks on candidate curves.

Adjoints come from one of two routes:

* ``direct``: the transcription multipliers (:class:`~spiralis.transcribe.DiscreteAdjoints`),
  one row per grid interval;
* ``refined``: for an arc-parametrized solution, the constant adjoints
  ``(lambda1, lambda2)`` and the initial values ``lambda3(0)``, ``lambda4(0)``
  are fitted so that the switching function vanishes at every switching time
  (and at free curvature ends), with ``lambda5`` returning to zero. The
  adjoint equations are integrated with GL6 along the refined arcs; on
  boundary and line arcs ``lambda4`` is held at zero.

All reports use the normalization ``lambda0 = 1``.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import asdict, dataclass, field
from typing import Dict, List, Optional, Sequence

import numpy as np

from .errors import InsufficientDualsError
from .integrate import gl6_step
from .problem import ProblemSpec, Trajectory
from .structure import ArcKind, ArcStructure

log = logging.getLogger(__name__)

NOISE_FLOOR = 1e-6
CONTROL_LAW_MIN = 0.99
HAMILTONIAN_TOL = {"direct": 1e-4, "refined": 1e-8}
TRANSVERSALITY_TOL = 1e-6
COMPLEMENTARITY_TOL = 1e-6
AFFINE_TOL = 1e-8
CONSTANCY_TOL = 1e-6
TRIM_FRACTION = 0.05


@dataclass
class PmpConstants:
    lambda1_bar: float
    lambda2_bar: float
    rho: float
    phi: float
    h: float
    lambda0: float = 1.0
    degenerate: bool = False

    @classmethod
    def from_adjoints(cls, l1: float, l2: float, h: float, scale: float = 1.0) -> "PmpConstants":
        l1, l2, h = float(l1), float(l2), float(h)
        rho = math.hypot(l1, l2)
        return cls(l1, l2, rho, math.atan2(l2, l1), h, degenerate=rho <= 1e-12 * max(1.0, scale))


@dataclass
class AdjointSamples:
    """Adjoints on the trajectory nodes (``len(traj)`` samples each)."""

    route: str
    t: np.ndarray
    lambda1: np.ndarray
    lambda2: np.ndarray
    lambda3: np.ndarray
    lambda4: np.ndarray
    lambda5: np.ndarray
    constants: PmpConstants
    mu1: Optional[np.ndarray] = None
    mu2: Optional[np.ndarray] = None
    fit_residual: float = 0.0
    # switching function paired with the control on each interval, if it differs from the nodes
    interval_lambda4: Optional[np.ndarray] = None

    def lambda4_on_intervals(self) -> np.ndarray:
        if self.interval_lambda4 is not None:
            return self.interval_lambda4
        return self.lambda4[:-1]

    @property
    def totally_singular(self) -> bool:
        return not np.any(np.abs(self.lambda4) > 0)


@dataclass
class StateMultipliers:
    mu1: np.ndarray
    mu2: np.ndarray
    inactive_residual: float


@dataclass
class CheckResult:
    name: str
    residual: float
    tolerance: Optional[float]
    passed: bool
    informational: bool = False
    note: str = ""


@dataclass
class PmpReport:
    route: str
    checks: List[CheckResult]
    constants: PmpConstants
    intercepts: List[float] = field(default_factory=list)
    slopes: List[float] = field(default_factory=list)
    flags: List[str] = field(default_factory=list)
    normality: Dict[str, float] = field(default_factory=dict)

    @property
    def verdict(self) -> bool:
        return all(c.passed for c in self.checks if not c.informational)

    def check(self, name: str) -> CheckResult:
        for c in self.checks:
            if c.name == name:
                return c
        raise KeyError(name)

    def to_dict(self) -> dict:
        return {
            "route": self.route,
            "verdict": "pass" if self.verdict else "fail",
            "constants": asdict(self.constants),
            "checks": [asdict(c) for c in self.checks],
            "intercepts": list(self.intercepts),
            "slopes": list(self.slopes),
            "flags": list(self.flags),
            "normality": dict(self.normality),
        }

    def to_json(self, **kw) -> str:
        return json.dumps(self.to_dict(), indent=2, **kw)

    def summary_table(self) -> str:
        rows = [("check", "residual", "tolerance", "verdict")]
        for c in self.checks:
            tol = "-" if c.tolerance is None else f"{c.tolerance:.1e}"
            verdict = "info" if c.informational else ("pass" if c.passed else "FAIL")
            rows.append((c.name, f"{c.residual:.3e}", tol, verdict))
        widths = [max(len(r[i]) for r in rows) for i in range(4)]
        lines = ["  ".join(v.ljust(w) for v, w in zip(r, widths)) for r in rows]
        lines.insert(1, "  ".join("-" * w for w in widths))
        lines.append(f"overall: {'pass' if self.verdict else 'FAIL'}")
        return "\n".join(lines)


# ---------------------------------------------------------------------------
# adjoint reconstruction

def _trimmed_mean(v, fraction: float = TRIM_FRACTION) -> float:
    v = np.sort(np.asarray(v, float))
    k = int(len(v) * fraction)
    core = v[k: len(v) - k] if len(v) > 2 * k else v
    return float(np.mean(core))


def hamiltonian_samples(traj: Trajectory, l1, l2, l3, l4, b: float) -> np.ndarray:
    """``lambda3 kappa + b lambda4 v + lambda1 cos(theta) + lambda2 sin(theta) + b``."""
    v = np.sign(traj.u) if b > 0 else np.zeros(len(traj))
    return l3 * traj.kappa + b * l4 * v + l1 * np.cos(traj.theta) + l2 * np.sin(traj.theta) + b


def integrate_lambda5(t, lambda4, v) -> np.ndarray:
    """Forward Euler on ``lambda5' = -1 - lambda4 v`` from ``lambda5(0) = 0``."""
    dt = np.diff(t)
    inc = -(1.0 + lambda4[:-1] * v[:-1]) * dt
    return np.concatenate([[0.0], np.cumsum(inc)])


def adjoints_from_multipliers(traj: Trajectory, duals) -> AdjointSamples:
    """Direct route: sample the transcription adjoints on the trajectory nodes.

    The Euler multipliers are staggered: row ``i`` approximates the adjoints
    at ``t_{i+1}``. Node ``i >= 1`` therefore takes row ``i - 1`` and node 0
    one further backward step of the adjoint recursion.
    """
    lam = getattr(duals, "lam", None)
    n = len(traj) - 1
    if lam is None or np.asarray(lam).shape != (n, 4):
        raise InsufficientDualsError(f"expected {n} multiplier rows of 4 adjoints")
    lam = np.asarray(lam, float)
    mu1 = getattr(duals, "mu1", None)
    mu2 = getattr(duals, "mu2", None)
    dmu = 0.0 if mu1 is None else float(mu1[0] - mu2[0])
    h0 = traj.t[1] - traj.t[0]
    th0 = traj.theta[0]
    first = lam[0].copy()
    first[2] -= h0 * (lam[0, 0] * math.sin(th0) - lam[0, 1] * math.cos(th0))
    first[3] += h0 * (lam[0, 2] + dmu)
    rows4 = lam[:, 3].copy()
    lam = np.vstack([first, lam])
    l1, l2 = float(np.mean(lam[:, 0])), float(np.mean(lam[:, 1]))
    v = np.sign(traj.u) if traj.b > 0 else np.zeros(len(traj))
    # the Euler sum pairs each row with the control of its own interval
    l5 = integrate_lambda5(traj.t, np.append(rows4, 0.0), v)
    H = hamiltonian_samples(traj, lam[:, 0], lam[:, 1], lam[:, 2], lam[:, 3], traj.b)
    const = PmpConstants.from_adjoints(l1, l2, _trimmed_mean(H), scale=traj.b)
    return AdjointSamples("direct", traj.t, lam[:, 0], lam[:, 1], lam[:, 2], lam[:, 3], l5, const,
                          mu1=mu1, mu2=mu2, interval_lambda4=rows4)


def _arc_index(traj: Trajectory, n_arcs: int) -> np.ndarray:
    """Arc number of every interval ``[t_i, t_{i+1})``."""
    idx = np.zeros(len(traj) - 1, dtype=int)
    for j in traj.junctions:
        idx[j:] += 1
    return np.minimum(idx, n_arcs - 1)


def _adjoint_basis(traj: Trajectory, held: np.ndarray, v: np.ndarray):
    """GL6 basis of ``(lambda3, lambda4, int lambda4 v)`` for the four unknowns.

    Unknown order: ``(lambda1_bar, lambda2_bar, lambda3(0), lambda4(0))``.
    Returns three ``(len(traj), 4)`` arrays.
    """
    n = len(traj)
    out3, out4, outI = np.zeros((n, 4)), np.zeros((n, 4)), np.zeros((n, 4))
    L3 = np.array([0.0, 0.0, 1.0, 0.0])
    L4 = np.zeros(4) if held[0] else np.array([0.0, 0.0, 0.0, 1.0])
    I = np.zeros(4)
    s = traj.s[0].copy()
    out3[0], out4[0] = L3, L4
    for i in range(n - 1):
        if held[i]:
            # out4[i] keeps the pre-reset value: it is the entry condition
            L4 = np.zeros(4)
        ui, hold, vi = traj.u[i], held[i], v[i]

        def f(z, ui=ui, hold=hold, vi=vi):
            th = z[2]
            l3 = z[4:8]
            l4 = z[8:12]
            d3 = np.array([math.sin(th), -math.cos(th), 0.0, 0.0])
            d4 = np.zeros(4) if hold else -l3
            return np.concatenate([[math.cos(th), math.sin(th), z[3], ui], d3, d4, vi * l4])

        def jac(z, hold=hold, vi=vi):
            th = z[2]
            J = np.zeros((16, 16))
            J[0, 2] = -math.sin(th)
            J[1, 2] = math.cos(th)
            J[2, 3] = 1.0
            J[4, 2] = math.cos(th)
            J[5, 2] = math.sin(th)
            if not hold:
                J[8:12, 4:8] = -np.eye(4)
            J[12:16, 8:12] = vi * np.eye(4)
            return J

        z = gl6_step(f, jac, np.concatenate([s, L3, L4, I]), traj.t[i + 1] - traj.t[i], step=i)
        s, L3, L4, I = z[:4], z[4:8], z[8:12], z[12:16]
        out3[i + 1], out4[i + 1], outI[i + 1] = L3, L4, I
    return out3, out4, outI


def adjoints_from_structure(traj: Trajectory, structure: ArcStructure,
                            spec: ProblemSpec) -> AdjointSamples:
    """Refined route: fit the adjoint constants to the switching pattern.

    Conditions (linear in the four unknowns): ``lambda4 = 0`` at every switch
    between bang arcs and at the entry of every held arc, ``lambda4 = 0`` at
    free curvature ends, and ``lambda5(t_f) = 0``. Overdetermined systems
    are solved in the least-squares sense and the residual is recorded.
    """
    kinds = structure.kinds
    n_arcs = len(kinds)
    arc = _arc_index(traj, n_arcs)
    held = np.array([not kinds[k].is_bang for k in arc] + [not kinds[-1].is_bang])
    b = traj.b
    v = np.array([kinds[k].sign for k in arc] + [kinds[-1].sign], dtype=float)
    B3, B4, BI = _adjoint_basis(traj, held, v)
    rows, rhs = [], []
    for k, j in enumerate(traj.junctions):
        nxt = kinds[k + 1]
        if kinds[k].is_bang:
            # switch between bangs or entry into a held arc
            rows.append(B4[j])
            rhs.append(0.0)
    if spec.kappa0_free and kinds[0].is_bang:
        rows.append(B4[0])
        rhs.append(0.0)
    if spec.kappaf_free and kinds[-1].is_bang:
        rows.append(B4[-1])
        rhs.append(0.0)
    t_f = float(traj.t[-1] - traj.t[0])
    scale = max(1.0, float(np.max(np.abs(B4))))
    # lambda5(t_f) = -t_f - int lambda4 v = 0
    rows.append(BI[-1])
    rhs.append(-t_f)
    A = np.array(rows)
    r = np.array(rhs)
    p, *_ = np.linalg.lstsq(A, r, rcond=None)
    resid = float(np.max(np.abs(A @ p - r))) / max(1.0, t_f)
    l3 = B3 @ p
    l4 = B4 @ p
    l4[held] = 0.0
    l5 = -(traj.t - traj.t[0]) - BI @ p
    l1 = np.full(len(traj), p[0])
    l2 = np.full(len(traj), p[1])
    H = hamiltonian_samples(traj, l1, l2, l3, l4, b)
    const = PmpConstants.from_adjoints(p[0], p[1], _trimmed_mean(H), scale=scale)
    a = spec.curvature_bound if spec.bounded else None
    sm = recover_state_multipliers(l3, l4, traj.t, traj.kappa, a)
    return AdjointSamples("refined", traj.t, l1, l2, l3, l4, l5, const, mu1=sm.mu1, mu2=sm.mu2,
                          fit_residual=resid)


def reconstruct_adjoints(traj: Trajectory, multipliers=None, structure: Optional[ArcStructure] = None,
                         spec: Optional[ProblemSpec] = None) -> AdjointSamples:
    """Dispatch to the direct route (``multipliers``) or the refined route."""
    if multipliers is not None:
        return adjoints_from_multipliers(traj, multipliers)
    if structure is None or spec is None:
        raise InsufficientDualsError("need transcription multipliers or a structure and spec")
    return adjoints_from_structure(traj, structure, spec)


# ---------------------------------------------------------------------------
# individual checks

def check_control_law(traj: Trajectory, lambda4, b: float) -> float:
    """Share of nodes with ``|lambda4|`` above the noise floor where ``u = -b sgn(lambda4)``.

    Returns 1.0 when no node clears the floor (nothing to contradict).
    """
    l4 = np.asarray(lambda4, float)
    scale = float(np.max(np.abs(l4), initial=0.0))
    if scale == 0 or not b > 0:
        return 1.0
    mask = np.abs(l4) > NOISE_FLOOR * scale
    u = np.asarray(traj.u, float)[: len(l4)]
    mask &= np.abs(u) > 0
    if not np.any(mask):
        return 1.0
    return float(np.mean(np.sign(u[mask]) == -np.sign(l4[mask])))


def check_hamiltonian(traj: Trajectory, adj: AdjointSamples, constants: Optional[PmpConstants] = None,
                      interior_only: bool = False) -> float:
    """Largest ``|H - h| / max(1, |h|)`` over the nodes."""
    const = constants or adj.constants
    H = hamiltonian_samples(traj, adj.lambda1, adj.lambda2, adj.lambda3, adj.lambda4, traj.b)
    return float(np.max(np.abs(H - const.h))) / max(1.0, abs(const.h))


def recover_state_multipliers(lambda3, lambda4, t, kappa=None, a=None,
                              active_tol: float = 1e-6) -> StateMultipliers:
    """Curvature-bound multipliers from the switching-function equation.

    With a forward difference for ``lambda4'``, ``r = -(lambda4' + lambda3)``
    equals ``mu1 - mu2``; its positive part is ``mu1`` and its negative part
    ``mu2``. Nodes where neither bound is active get zero multipliers and
    their ``|r|`` is reported as ``inactive_residual``.
    """
    l3 = np.asarray(lambda3, float)
    l4 = np.asarray(lambda4, float)
    t = np.asarray(t, float)
    d4 = np.empty_like(l4)
    d4[:-1] = np.diff(l4) / np.diff(t)
    d4[-1] = d4[-2] if len(l4) > 1 else 0.0
    r = -(d4 + l3)
    mu1 = np.maximum(r, 0.0)
    mu2 = np.maximum(-r, 0.0)
    if kappa is None or a is None:
        active1 = np.zeros(len(r), bool)
        active2 = np.zeros(len(r), bool)
    else:
        kap = np.asarray(kappa, float)
        active1 = np.abs(kap - a) <= active_tol * max(1.0, a)
        active2 = np.abs(kap + a) <= active_tol * max(1.0, a)
    mu1[~active1] = 0.0
    mu2[~active2] = 0.0
    inactive = ~(active1 | active2)
    res = float(np.max(np.abs(r[inactive]), initial=0.0))
    return StateMultipliers(mu1, mu2, res)


def check_transversality(lambda4, spec: ProblemSpec) -> Dict[str, float]:
    """``|lambda4|`` at each free curvature end, relative to ``max|lambda4|``."""
    l4 = np.asarray(lambda4, float)
    scale = max(float(np.max(np.abs(l4), initial=0.0)), 1e-300)
    out = {}
    if spec.kappa0_free:
        out["lambda4(0)"] = abs(float(l4[0])) / scale
    if spec.kappaf_free:
        out["lambda4(t_f)"] = abs(float(l4[-1])) / scale
    return out


@dataclass
class AffineFit:
    slopes: List[float]
    intercepts: List[float]
    slope_errors: List[float]
    max_deviation: float


def arc_slices(traj: Trajectory, n_arcs: int) -> List[slice]:
    """Node ranges of the arcs (shared junction nodes belong to both)."""
    bounds = [0, *traj.junctions, len(traj) - 1]
    if len(bounds) - 1 != n_arcs:
        raise ValueError(f"trajectory has {len(bounds) - 1} arcs, structure {n_arcs}")
    return [slice(bounds[k], bounds[k + 1] + 1) for k in range(n_arcs)]


def check_affine_curvature(traj: Trajectory, structure: ArcStructure) -> AffineFit:
    """Per-arc least-squares line ``kappa = slope t + c``; compare slopes with ``sign_k b``."""
    slopes, cs, errs = [], [], []
    dev = 0.0
    kscale = max(1.0, float(np.max(np.abs(traj.kappa))))
    for kind, sl in zip(structure.kinds, arc_slices(traj, structure.n_arcs)):
        t, k = traj.t[sl], traj.kappa[sl]
        if len(t) < 2:
            slopes.append(float("nan"))
            cs.append(float(k[0]))
            errs.append(0.0)
            continue
        tc = t - t.mean()
        slope = float(tc @ (k - k.mean()) / (tc @ tc))
        c = float(k.mean() - slope * t.mean())
        slopes.append(slope)
        cs.append(c)
        errs.append(abs(slope - kind.sign * traj.b))
        dev = max(dev, float(np.max(np.abs(k - (slope * t + c)))) / kscale)
    return AffineFit(slopes, cs, errs, dev)


def check_switching_ode(lambda4, traj: Trajectory, b: float, h: float,
                        structure: Optional[ArcStructure] = None, margin: int = 3) -> Optional[float]:
    """Relative residual of ``lambda4''' = -kappa (kappa lambda4' + b |lambda4| - b + h)``.

    Third forward differences on a locally uniform grid; nodes within
    ``margin`` of a junction or control jump are skipped. Diagnostic only;
    ``None`` when no node qualifies.
    """
    l4 = np.asarray(lambda4, float)
    t = traj.t
    n = len(l4)
    bad = np.zeros(n, bool)
    u = np.asarray(traj.u, float)
    jumps = list(traj.junctions) + list(np.flatnonzero(np.abs(np.diff(u)) > 1e-6 * max(b, 1e-300)) + 1)
    for j in jumps:
        bad[max(0, j - margin): j + margin + 1] = True
    num, den, used = 0.0, 0.0, 0
    for i in range(n - 3):
        if bad[i: i + 4].any():
            continue
        dt = np.diff(t[i: i + 4])
        if np.ptp(dt) > 1e-9 * dt[0]:
            continue
        step = dt[0]
        d1 = (l4[i + 1] - l4[i]) / step
        d3 = (l4[i + 3] - 3 * l4[i + 2] + 3 * l4[i + 1] - l4[i]) / step ** 3
        k = traj.kappa[i]
        rhs = -k * (k * d1 + b * abs(l4[i]) - b + h)
        num = max(num, abs(d3 - rhs))
        den = max(den, abs(rhs), abs(d3))
        used += 1
    if not used:
        return None
    return num / den if den > 0 else 0.0


# ---------------------------------------------------------------------------
# report

def verify(spec: ProblemSpec, traj: Trajectory, adj: AdjointSamples,
           structure: Optional[ArcStructure] = None) -> PmpReport:
    """Run every applicable check and collect a :class:`PmpReport`."""
    checks: List[CheckResult] = []
    flags: List[str] = []
    route = adj.route
    b = traj.b
    const = adj.constants
    if const.degenerate:
        flags.append("rho is numerically zero")
    singular = adj.totally_singular
    if singular:
        flags.append("totally singular: lambda4 vanishes identically")

    rate = check_control_law(traj, adj.lambda4_on_intervals(), b)
    checks.append(CheckResult("control_law", 1.0 - rate, 1.0 - CONTROL_LAW_MIN,
                              rate >= CONTROL_LAW_MIN, note=f"agreement {rate:.4f}"))

    ham = check_hamiltonian(traj, adj)
    tol_h = HAMILTONIAN_TOL[route]
    checks.append(CheckResult("hamiltonian", ham, tol_h, ham <= tol_h))

    for name, series in (("lambda1_constancy", adj.lambda1), ("lambda2_constancy", adj.lambda2)):
        m = float(np.mean(series))
        sd = float(np.std(series))
        tol = CONSTANCY_TOL * (1 + abs(m))
        checks.append(CheckResult(name, sd, tol, sd <= tol))

    for name, val in check_transversality(adj.lambda4, spec).items():
        checks.append(CheckResult(f"transversality {name}", val, TRANSVERSALITY_TOL,
                                  val <= TRANSVERSALITY_TOL or singular))

    if not singular:
        l5_end = abs(float(adj.lambda5[-1])) / max(1.0, spec.total_length)
        tol5 = 1e-8 if route == "refined" else 1e-4
        checks.append(CheckResult("lambda5(t_f)", l5_end, tol5, l5_end <= tol5))

    if route == "refined":
        checks.append(CheckResult("adjoint_fit", adj.fit_residual, None, True, informational=True))

    a = spec.curvature_bound if spec.bounded else None
    if route == "direct" and adj.mu1 is not None and spec.bounded:
        mu1 = np.asarray(adj.mu1, float)
        mu2 = np.asarray(adj.mu2, float)
    else:
        sm = recover_state_multipliers(adj.lambda3, adj.lambda4, traj.t, traj.kappa, a)
        mu1, mu2 = sm.mu1, sm.mu2
        checks.append(CheckResult("adjoint_ode_inactive", sm.inactive_residual
                                  / max(1.0, float(np.max(np.abs(adj.lambda3)))), None, True,
                                  informational=True,
                                  note="|lambda4' + lambda3| where no curvature bound is active"))
    if spec.bounded:
        kap = traj.kappa[: len(mu1)]
        mmax = max(float(np.max(mu1, initial=0.0)), float(np.max(mu2, initial=0.0)), 1e-300)
        comp = max(float(np.max(np.abs(mu1 * (kap - a)), initial=0.0)),
                   float(np.max(np.abs(mu2 * (kap + a)), initial=0.0)))
        neg = min(float(np.min(mu1, initial=0.0)), float(np.min(mu2, initial=0.0)))
        tol_c = COMPLEMENTARITY_TOL * a * mmax
        checks.append(CheckResult("complementarity", comp, tol_c, comp <= tol_c and neg >= 0))

    intercepts, slopes = [], []
    if structure is not None and route == "refined":
        fit = check_affine_curvature(traj, structure)
        intercepts, slopes = fit.intercepts, fit.slopes
        slope_err = max(fit.slope_errors, default=0.0)
        checks.append(CheckResult("affine_slope", slope_err, AFFINE_TOL, slope_err <= AFFINE_TOL))
        checks.append(CheckResult("affine_deviation", fit.max_deviation, AFFINE_TOL,
                                  fit.max_deviation <= AFFINE_TOL))

    if not spec.bounded and not singular:
        res = check_switching_ode(adj.lambda4, traj, b, const.h, structure)
        if res is not None:
            checks.append(CheckResult("switching_ode", res, None, True, informational=True))

    normality = {"rho": const.rho, "max|lambda3|": float(np.max(np.abs(adj.lambda3))),
                 "max|lambda4|": float(np.max(np.abs(adj.lambda4)))}
    return PmpReport(route, checks, const, intercepts, slopes, flags, normality)


def zero_crossings(t, lambda4) -> np.ndarray:
    """Interpolated interior sign changes of ``lambda4`` (exact zeros included once)."""
    l4 = np.asarray(lambda4, float)
    t = np.asarray(t, float)
    out = []
    for i in range(1, len(l4) - 1):
        if l4[i] == 0 and l4[i - 1] * l4[i + 1] < 0:
            out.append(t[i])
    for i in range(len(l4) - 1):
        if l4[i] * l4[i + 1] < 0:
            w = l4[i] / (l4[i] - l4[i + 1])
            out.append(t[i] + w * (t[i + 1] - t[i]))
    return np.array(sorted(out))
