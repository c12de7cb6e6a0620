"""Problem data model, unit-speed curvature dynamics and trivial-case detection.

A curve is described by the state ``(x, y, theta, kappa)`` evolving in arc
length ``t`` under the control ``u`` (the rate of change of curvature)::

    x' = cos(theta),  y' = sin(theta),  theta' = kappa,  kappa' = u

Headings are kept unwrapped throughout: ``theta(t_f)`` has to equal the
requested terminal heading exactly, not modulo 2*pi.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Optional, Union

import numpy as np

from .errors import InvalidStateError, ValidationError

TRIVIAL_RTOL = 1e-12


class Free(enum.Enum):
    """Marker for an endpoint curvature that is left unspecified."""

    FREE = "free"

    def __repr__(self):
        return "FREE"


class Unbounded(enum.Enum):
    """Marker for a problem without a curvature constraint."""

    UNBOUNDED = "unbounded"

    def __repr__(self):
        return "UNBOUNDED"


FREE = Free.FREE
UNBOUNDED = Unbounded.UNBOUNDED

Curvature = Union[float, Free]
Bound = Union[float, Unbounded]


@dataclass(frozen=True)
class ProblemSpec:
    """Oriented endpoints, curve length and curvature data of one instance."""

    x0: float
    y0: float
    theta0: float
    xf: float
    yf: float
    thetaf: float
    total_length: float
    kappa0: Curvature = FREE
    kappaf: Curvature = FREE
    curvature_bound: Bound = UNBOUNDED

    @property
    def bounded(self) -> bool:
        return self.curvature_bound is not UNBOUNDED

    @property
    def kappa0_free(self) -> bool:
        return self.kappa0 is FREE

    @property
    def kappaf_free(self) -> bool:
        return self.kappaf is FREE

    @property
    def chord(self) -> float:
        return math.hypot(self.xf - self.x0, self.yf - self.y0)

    def start(self, kappa0: Optional[float] = None) -> np.ndarray:
        """Initial state; a free initial curvature must be supplied."""
        if kappa0 is None:
            if self.kappa0_free:
                raise ValueError("initial curvature is free; pass kappa0 explicitly")
            kappa0 = self.kappa0
        return np.array([self.x0, self.y0, self.theta0, float(kappa0)])

    def end(self, kappaf: Optional[float] = None) -> np.ndarray:
        if kappaf is None:
            kappaf = 0.0 if self.kappaf_free else self.kappaf
        return np.array([self.xf, self.yf, self.thetaf, float(kappaf)])

    def to_dict(self) -> dict:
        def enc(v):
            return v.value if isinstance(v, enum.Enum) else v

        return {
            "x0": self.x0, "y0": self.y0, "theta0": self.theta0,
            "xf": self.xf, "yf": self.yf, "thetaf": self.thetaf,
            "total_length": self.total_length,
            "kappa0": enc(self.kappa0), "kappaf": enc(self.kappaf),
            "curvature_bound": enc(self.curvature_bound),
        }

    @classmethod
    def from_dict(cls, data: dict) -> "ProblemSpec":
        def curv(v):
            if v is None or (isinstance(v, str) and v.lower() == "free"):
                return FREE
            return float(v)

        bound = data.get("curvature_bound", None)
        if bound is None or (isinstance(bound, str) and bound.lower() in ("unbounded", "inf")):
            bound = UNBOUNDED
        else:
            bound = float(bound)
        return cls(
            x0=float(data["x0"]), y0=float(data["y0"]), theta0=float(data["theta0"]),
            xf=float(data["xf"]), yf=float(data["yf"]), thetaf=float(data["thetaf"]),
            total_length=float(data["total_length"]),
            kappa0=curv(data.get("kappa0")), kappaf=curv(data.get("kappaf")),
            curvature_bound=bound,
        )


@dataclass(frozen=True)
class State:
    x: float
    y: float
    theta: float
    kappa: float

    def __post_init__(self):
        if not all(math.isfinite(v) for v in (self.x, self.y, self.theta, self.kappa)):
            raise InvalidStateError(f"non-finite state {self!r}")

    def as_array(self) -> np.ndarray:
        return np.array([self.x, self.y, self.theta, self.kappa])

    @classmethod
    def from_array(cls, s) -> "State":
        return cls(*(float(v) for v in s))


@dataclass
class Trajectory:
    """Sampled state/control path.

    ``u[i]`` is the control applied on ``[t[i], t[i+1])``; the last entry
    repeats the final control so all arrays share one length.
    """

    t: np.ndarray
    s: np.ndarray
    u: np.ndarray
    b: float
    junctions: list = field(default_factory=list)

    def __post_init__(self):
        self.t = np.asarray(self.t, dtype=float)
        self.s = np.asarray(self.s, dtype=float).reshape(-1, 4)
        self.u = np.asarray(self.u, dtype=float)
        if not (len(self.t) == len(self.s) == len(self.u)):
            raise ValueError("t, s and u must have the same number of samples")
        if len(self.t) > 1 and np.any(np.diff(self.t) <= 0):
            raise ValueError("sample times must be strictly increasing")

    def __len__(self):
        return len(self.t)

    @property
    def x(self):
        return self.s[:, 0]

    @property
    def y(self):
        return self.s[:, 1]

    @property
    def theta(self):
        return self.s[:, 2]

    @property
    def kappa(self):
        return self.s[:, 3]

    @property
    def n_steps(self) -> int:
        return len(self.t) - 1

    def state(self, i: int) -> State:
        return State.from_array(self.s[i])


def dynamics_rhs(s, u: float) -> np.ndarray:
    """Right-hand side ``(cos theta, sin theta, kappa, u)``."""
    arr = s.as_array() if isinstance(s, State) else np.asarray(s, dtype=float)
    if not (np.all(np.isfinite(arr)) and math.isfinite(u)):
        raise InvalidStateError(f"non-finite state or control: {arr}, {u}")
    theta, kappa = arr[2], arr[3]
    return np.array([math.cos(theta), math.sin(theta), kappa, u])


def validate(spec: ProblemSpec) -> ProblemSpec:
    """Return ``spec`` unchanged or raise :class:`ValidationError` naming every issue."""
    issues = []
    numbers = [spec.x0, spec.y0, spec.theta0, spec.xf, spec.yf, spec.thetaf, spec.total_length]
    numbers += [k for k in (spec.kappa0, spec.kappaf) if k is not FREE]
    if spec.bounded:
        numbers.append(spec.curvature_bound)
    if not all(math.isfinite(v) for v in numbers):
        raise ValidationError([("non-finite", "all numeric fields must be finite")])

    if spec.total_length <= 0:
        issues.append(("non-positive-length", f"total length {spec.total_length} must be positive"))
    if not spec.total_length > spec.chord:
        issues.append((
            "infeasible-length",
            f"total length {spec.total_length} must exceed the endpoint distance {spec.chord}",
        ))
    if spec.bounded:
        a = spec.curvature_bound
        if a <= 0:
            issues.append(("non-positive-bound", f"curvature bound {a} must be positive"))
        for name, k in (("kappa0", spec.kappa0), ("kappaf", spec.kappaf)):
            if k is not FREE and abs(k) > a:
                issues.append(("bound-violation", f"|{name}| = {abs(k)} exceeds the bound {a}"))
    if issues:
        raise ValidationError(issues)
    return spec


class TrivialKind(enum.Enum):
    NONE = "none"
    LINE = "line"
    CIRCLE = "circle"


@dataclass(frozen=True)
class TrivialCase:
    kind: TrivialKind
    radius: Optional[float] = None
    # +1 counter-clockwise, -1 clockwise
    orientation: Optional[int] = None

    @property
    def curvature(self) -> float:
        if self.kind is TrivialKind.CIRCLE:
            return self.orientation / self.radius
        return 0.0


def _close(a: float, b: float, scale: float) -> bool:
    return abs(a - b) <= TRIVIAL_RTOL * max(1.0, scale)


def detect_trivial(spec: ProblemSpec) -> TrivialCase:
    """Classify instances whose minimal spirality is zero.

    A straight segment needs equal headings along the chord with chord length
    equal to the curve length; a circular arc needs the endpoint reached by the
    constant-curvature arc ``k = (thetaf - theta0) / t_f`` with ``|k| <= a``.
    Fixed endpoint curvatures must agree with the candidate's curvature.
    """
    tf = spec.total_length
    scale = max(tf, abs(spec.x0), abs(spec.y0), abs(spec.xf), abs(spec.yf),
                abs(spec.theta0), abs(spec.thetaf))
    dx, dy = spec.xf - spec.x0, spec.yf - spec.y0

    def ends_match(k):
        return all(_close(v, k, max(1.0, abs(k))) for v in (spec.kappa0, spec.kappaf) if v is not FREE)

    if _close(spec.theta0, spec.thetaf, scale) and _close(spec.chord, tf, scale):
        along = dx * math.cos(spec.theta0) + dy * math.sin(spec.theta0)
        if _close(along, tf, scale) and ends_match(0.0):
            return TrivialCase(TrivialKind.LINE)
        return TrivialCase(TrivialKind.NONE)

    k = (spec.thetaf - spec.theta0) / tf
    if k == 0.0:
        return TrivialCase(TrivialKind.NONE)
    ex = spec.x0 + (math.sin(spec.thetaf) - math.sin(spec.theta0)) / k
    ey = spec.y0 - (math.cos(spec.thetaf) - math.cos(spec.theta0)) / k
    if not (_close(ex, spec.xf, scale) and _close(ey, spec.yf, scale)):
        return TrivialCase(TrivialKind.NONE)
    if spec.bounded and abs(k) > spec.curvature_bound * (1 + TRIVIAL_RTOL):
        return TrivialCase(TrivialKind.NONE)
    if not ends_match(k):
        return TrivialCase(TrivialKind.NONE)
    return TrivialCase(TrivialKind.CIRCLE, radius=1.0 / abs(k), orientation=1 if k > 0 else -1)
