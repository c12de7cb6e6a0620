"""Arc structures: extraction from discrete solutions, chatter handling, parsing.

An arc structure is the ordered list of arc kinds of a curve -- Euler-spiral
bang arcs at ``u = +b`` or ``u = -b``, straight singular segments and circular
arcs riding a curvature bound. Its compact text form uses one symbol per arc,
whitespace separated: ``+`` ``-`` ``0`` ``P`` ``M``.
"""

from __future__ import annotations

import enum
import logging
from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import numpy as np

from .errors import AmbiguousStructureError, StructureError
from .problem import UNBOUNDED

log = logging.getLogger(__name__)


class ArcKind(enum.Enum):
    PLUS_BANG = "+"
    MINUS_BANG = "-"
    SINGULAR_LINE = "0"
    BOUNDARY_PLUS = "P"
    BOUNDARY_MINUS = "M"

    @property
    def sign(self) -> int:
        """Control value divided by ``b``."""
        return {"+": 1, "-": -1}.get(self.value, 0)

    @property
    def is_bang(self) -> bool:
        return self.sign != 0

    @property
    def pinned_kappa(self) -> Optional[int]:
        """Curvature held along the arc, in units of the bound (``0`` for lines)."""
        return {"0": 0, "P": 1, "M": -1}.get(self.value)


@dataclass(frozen=True)
class ArcStructure:
    """Ordered arc kinds with optional arc-length guesses and chatter windows."""

    kinds: Tuple[ArcKind, ...]
    xi_guess: Optional[Tuple[float, ...]] = None
    b_guess: Optional[float] = None
    chatter_windows: Tuple[Tuple[float, float], ...] = ()

    def __post_init__(self):
        kinds = tuple(self.kinds)
        object.__setattr__(self, "kinds", kinds)
        if not kinds:
            raise StructureError("a structure needs at least one arc")
        for a, b in zip(kinds, kinds[1:]):
            if a is b:
                raise StructureError(f"adjacent arcs of identical kind {a.value!r}")
        if self.xi_guess is not None:
            object.__setattr__(self, "xi_guess", tuple(float(v) for v in self.xi_guess))
            if len(self.xi_guess) != len(kinds):
                raise StructureError("one arc-length guess per arc is required")

    def __len__(self):
        return len(self.kinds)

    def __str__(self):
        return " ".join(k.value for k in self.kinds)

    @property
    def signs(self) -> List[int]:
        return [k.sign for k in self.kinds]

    @property
    def n_arcs(self) -> int:
        return len(self.kinds)

    def check_regime(self, bounded: bool) -> None:
        for k in self.kinds:
            if k in (ArcKind.BOUNDARY_PLUS, ArcKind.BOUNDARY_MINUS) and not bounded:
                raise StructureError("boundary arcs need a curvature bound")

    @classmethod
    def parse(cls, text: str) -> "ArcStructure":
        tokens = text.split()
        if len(tokens) == 1 and len(tokens[0]) > 1:
            tokens = list(tokens[0])
        try:
            kinds = tuple(ArcKind(tok.upper() if tok in "pm" else tok) for tok in tokens)
        except ValueError as exc:
            raise StructureError(f"unknown arc symbol in {text!r}") from exc
        return cls(kinds)


def parse_structure(text: str) -> ArcStructure:
    return ArcStructure.parse(text)


@dataclass(frozen=True)
class ClassifyConfig:
    bang_fraction: float = 0.5
    ambiguous_fraction: float = 0.1
    boundary_tol: float = 0.02
    line_tol: float = 0.02
    min_nodes: int = 3
    # persistent run of in-between controls that triggers an error
    ambiguous_run: int = 10


@dataclass(frozen=True)
class ChatterConfig:
    min_window: int = 20
    window_fraction: float = 1 / 50
    min_flips: int = 5
    lambda_fraction: float = 0.05


def _runs(labels: Sequence) -> List[Tuple[object, int, int]]:
    """Maximal runs ``(label, start, stop)`` with ``stop`` exclusive."""
    runs = []
    start = 0
    for i in range(1, len(labels) + 1):
        if i == len(labels) or labels[i] != labels[start]:
            runs.append((labels[start], start, i))
            start = i
    return runs


def classify_controls(traj, b: float, a=None, config: ClassifyConfig = ClassifyConfig(),
                      protected: Sequence[Tuple[int, int]] = ()) -> ArcStructure:
    """Label each control interval and merge labels into arcs.

    ``a`` is the curvature bound (``None`` or UNBOUNDED for none). Arcs shorter
    than ``config.min_nodes`` are absorbed into a neighbour unless they fall in
    a ``protected`` node range (chatter windows).
    """
    if not b > 0:
        raise StructureError("classification needs b > 0")
    bounded = a is not None and a is not UNBOUNDED
    u = np.asarray(traj.u[:-1], dtype=float)
    kap = np.asarray(traj.kappa[:-1], dtype=float)
    n = len(u)
    labels: List[Optional[ArcKind]] = [None] * n
    kscale = config.line_tol * max(float(np.max(np.abs(traj.kappa))), 1.0)
    ambiguous = []
    for i in range(n):
        if u[i] >= config.bang_fraction * b:
            labels[i] = ArcKind.PLUS_BANG
        elif u[i] <= -config.bang_fraction * b:
            labels[i] = ArcKind.MINUS_BANG
        else:
            if abs(u[i]) > config.ambiguous_fraction * b:
                ambiguous.append(i)
            if bounded and abs(kap[i] - a) <= config.boundary_tol * a:
                labels[i] = ArcKind.BOUNDARY_PLUS
            elif bounded and abs(kap[i] + a) <= config.boundary_tol * a:
                labels[i] = ArcKind.BOUNDARY_MINUS
            elif abs(kap[i]) <= kscale:
                labels[i] = ArcKind.SINGULAR_LINE
            else:
                # small control with curvature off any pinned value: follow the sign
                labels[i] = ArcKind.PLUS_BANG if u[i] > 0 else (
                    ArcKind.MINUS_BANG if u[i] < 0 else ArcKind.SINGULAR_LINE)
    bad = [(s, e - 1) for lab, s, e in _runs([i in set(ambiguous) for i in range(n)])
           if lab and e - s >= config.ambiguous_run]
    if bad:
        raise AmbiguousStructureError(bad)

    def is_protected(s, e):
        return any(s < pe and ps < e for ps, pe in protected)

    runs = [[lab, s, e] for lab, s, e in _runs(labels)]
    changed = True
    while changed and len(runs) > 1:
        changed = False
        for j, (lab, s, e) in enumerate(runs):
            if e - s < config.min_nodes and not is_protected(s, e):
                if j == 0:
                    target = 1
                elif j == len(runs) - 1:
                    target = j - 1
                else:
                    # absorb into the longer neighbour
                    left, right = runs[j - 1], runs[j + 1]
                    target = j - 1 if left[2] - left[1] >= right[2] - right[1] else j + 1
                if target < j:
                    runs[target][2] = e
                else:
                    runs[target][1] = s
                del runs[j]
                # re-merge equal neighbours
                merged = []
                for r in runs:
                    if merged and merged[-1][0] == r[0]:
                        merged[-1][2] = r[2]
                    else:
                        merged.append(r)
                runs = merged
                changed = True
                break
    t = traj.t
    kinds = tuple(r[0] for r in runs)
    xi = tuple(float(t[r[2]] - t[r[1]]) for r in runs)
    return ArcStructure(kinds, xi_guess=xi, b_guess=float(b))


def detect_chatter(traj, b: float, lambda4=None,
                   config: ChatterConfig = ChatterConfig()) -> List[Tuple[float, float]]:
    """Time windows in which the control flips sign densely while ``|lambda4|`` is small.

    A window of ``max(min_window, N * window_fraction)`` nodes is flagged when
    ``sign(u)`` flips at least ``min_flips`` times and the mean ``|lambda4|``
    over it is at most ``lambda_fraction`` of the global maximum. Overlapping
    flagged windows are merged; without ``lambda4`` only the flip test is used.
    """
    u = np.asarray(traj.u[:-1], dtype=float)
    n = len(u)
    width = max(config.min_window, int(round(n * config.window_fraction)))
    if n < width or not b > 0:
        return []
    sg = np.sign(np.where(np.abs(u) > 1e-9 * b, u, 0.0))
    nz = np.flatnonzero(sg)
    flips = np.zeros(n, dtype=int)
    if len(nz) > 1:
        change = nz[1:][sg[nz[1:]] != sg[nz[:-1]]]
        flips[change] = 1
    csum = np.concatenate([[0], np.cumsum(flips)])
    lam = None if lambda4 is None else np.abs(np.asarray(lambda4, dtype=float)[:n])
    lam_max = None if lam is None else float(np.max(lam, initial=0.0))
    lsum = None if lam is None else np.concatenate([[0.0], np.cumsum(lam)])
    flagged = np.zeros(n, dtype=bool)
    for s in range(0, n - width + 1):
        e = s + width
        if csum[e] - csum[s + 1] < config.min_flips:
            continue
        if lam is not None and lam_max > 0:
            if (lsum[e] - lsum[s]) / width > config.lambda_fraction * lam_max:
                continue
        flagged[s:e] = True
    t = traj.t
    windows = []
    for lab, s, e in _runs(list(flagged)):
        if lab:
            # trim to the first and last sign change inside the flagged span
            ch = np.flatnonzero(flips[s:e]) + s
            lo, hi = (ch[0] - 1, ch[-1]) if len(ch) else (s, e - 1)
            windows.append((float(t[max(lo, 0)]), float(t[min(hi + 1, n)])))
    return windows


def merge_windows(windows: Sequence[Tuple[float, float]]) -> List[Tuple[float, float]]:
    out: List[List[float]] = []
    for lo, hi in sorted(windows):
        if out and lo <= out[-1][1]:
            out[-1][1] = max(out[-1][1], hi)
        else:
            out.append([lo, hi])
    return [tuple(w) for w in out]


def apply_chatter_workaround(structure: ArcStructure, windows, t_f: Optional[float] = None,
                             absorb_below: Optional[float] = None) -> ArcStructure:
    """Replace every chatter window by a single straight singular arc.

    Arcs lying entirely inside a window are dropped, arcs overlapping it are
    clipped, and equal neighbours created by the replacement are merged.
    The flip-count test trims the sparse edges of a chatter region, so arcs
    touching an inserted line that are shorter than ``absorb_below``
    (default ``t_f / 50`` when ``t_f`` is given) are swallowed by it.
    Without arc-length information (``xi_guess``) the structure is treated as
    having unit-length arcs on a uniform grid.
    """
    if absorb_below is None:
        absorb_below = t_f / 50 if t_f is not None else 0.0
    windows = merge_windows(windows)
    if not windows:
        return structure
    n = structure.n_arcs
    xi = np.asarray(structure.xi_guess if structure.xi_guess is not None else np.ones(n), float)
    edges = np.concatenate([[0.0], np.cumsum(xi)])
    pieces = []  # (kind, lo, hi)
    for k, kind in enumerate(structure.kinds):
        pieces.append([kind, edges[k], edges[k + 1]])
    for lo, hi in windows:
        out = []
        for kind, a, bnd in pieces:
            if bnd <= lo or a >= hi:
                out.append([kind, a, bnd])
                continue
            if a < lo:
                out.append([kind, a, lo])
            if bnd > hi:
                out.append([kind, hi, bnd])
        out.append([ArcKind.SINGULAR_LINE, lo, hi])
        out.sort(key=lambda r: r[1])
        pieces = out
    def merge(items):
        out = []
        for kind, a, bnd in items:
            if bnd - a <= 0:
                continue
            if out and out[-1][0] is kind:
                out[-1][2] = bnd
            else:
                out.append([kind, a, bnd])
        return out

    merged = merge(pieces)
    lines = [(lo, hi) for lo, hi in windows]
    changed = True
    while changed:
        changed = False
        for j, (kind, a, bnd) in enumerate(merged):
            if kind is not ArcKind.SINGULAR_LINE or not any(a <= lo and hi <= bnd for lo, hi in lines):
                continue
            for nb in (j - 1, j + 1):
                if 0 <= nb < len(merged) and merged[nb][0] is not ArcKind.SINGULAR_LINE \
                        and merged[nb][2] - merged[nb][1] < absorb_below:
                    merged[j][1] = min(a, merged[nb][1])
                    merged[j][2] = max(bnd, merged[nb][2])
                    del merged[nb]
                    merged = merge(merged)
                    changed = True
                    break
            if changed:
                break
    kinds = tuple(p[0] for p in merged)
    xi_new = tuple(p[2] - p[1] for p in merged)
    return ArcStructure(kinds, xi_guess=xi_new if structure.xi_guess is not None else None,
                        b_guess=structure.b_guess, chatter_windows=tuple(windows))


def check_structure_rules(structure: ArcStructure, bounded: bool) -> List[str]:
    """Warnings for structures the classification results rule out."""
    warnings = []
    kinds = structure.kinds
    if not bounded and ArcKind.SINGULAR_LINE in kinds and any(k.is_bang for k in kinds) \
            and not structure.chatter_windows:
        warnings.append("singular line coexists with bang arcs in an unconstrained, "
                        "chatter-free structure")
    for a, b in zip(kinds, kinds[1:]):
        if a.is_bang and b.is_bang and a.sign == b.sign:
            warnings.append("consecutive bang arcs of equal sign")
    return warnings
