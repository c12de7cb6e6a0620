"""Command-line entry point: ``spiralis solve|refine|verify|plot``.

Exit codes: 0 success (refinement converged and every check passed),
2 converged but the maximum-principle report failed, 1 any error.
"""

from __future__ import annotations

import argparse
import logging
import sys
from dataclasses import dataclass
from pathlib import Path
from typing import List, Optional

from . import pipeline
from .errors import SpiralisError
from .plots import plot_solution
from .problem import ProblemSpec
from .serialize import load_solution, read_json, write_json, write_solution
from .structure import ArcStructure
from .verify import AdjointSamples, adjoints_from_multipliers, adjoints_from_structure, verify

log = logging.getLogger("spiralis")

EXIT_OK, EXIT_FAIL, EXIT_UNVERIFIED = 0, 1, 2


@dataclass
class RunConfig:
    spec: ProblemSpec
    phase: str = "full"
    n: int = pipeline.DEFAULT_N
    starts: int = pipeline.DEFAULT_STARTS
    seed: int = 0
    structure: Optional[str] = None
    out: Path = Path("out")
    total_steps: int = 400
    threads: Optional[int] = None
    plots: bool = True

    @classmethod
    def from_file(cls, path, **overrides) -> "RunConfig":
        data = read_json(path)
        problem = data.get("problem", data if "x0" in data else None)
        if problem is None:
            raise ValueError(f"{path}: no 'problem' section")
        cfg = cls(spec=ProblemSpec.from_dict(problem))
        for key in ("phase", "n", "starts", "seed", "structure", "total_steps", "threads", "plots"):
            if key in data:
                setattr(cfg, key, data[key])
        if "out" in data:
            cfg.out = Path(data["out"])
        for key, val in overrides.items():
            if val is not None:
                setattr(cfg, key, Path(val) if key == "out" else val)
        return cfg


def _exit_code(solution) -> int:
    if not solution.converged:
        return EXIT_FAIL
    return EXIT_OK if solution.report is None or solution.report.verdict else EXIT_UNVERIFIED


def _emit(solution, cfg: RunConfig) -> int:
    paths = write_solution(cfg.out, solution)
    if cfg.plots:
        plot_solution(cfg.out, load_solution(cfg.out / "solution.json"))
    print(f"b = {solution.b:.12f}")
    if solution.structure is not None:
        print(f"structure: {solution.structure}")
    if solution.xi is not None:
        print("xi = " + ", ".join(f"{v:.12f}" for v in solution.xi))
    for w in solution.warnings:
        print(f"warning: {w}")
    if solution.chatter_windows:
        print("chatter windows: " + ", ".join(f"[{lo:.4f}, {hi:.4f}]" for lo, hi in solution.chatter_windows))
    if solution.report is not None:
        print(solution.report.summary_table())
    log.info("wrote %s", ", ".join(str(p) for p in paths))
    return _exit_code(solution)


def cmd_solve(cfg: RunConfig) -> int:
    if cfg.phase == "direct":
        trivial = pipeline.solve_trivial(cfg.spec)
        if trivial is not None:
            return _emit(trivial, cfg)
        results = pipeline.run_direct(cfg.spec, cfg.n, cfg.starts, cfg.seed, cfg.threads)
        sol = pipeline.direct_solution(cfg.spec, results[0])
        sol.direct_b = [r.b for r in results]
        return _emit(sol, cfg)
    structure = ArcStructure.parse(cfg.structure) if cfg.structure else None
    sol = pipeline.solve(cfg.spec, cfg.n, cfg.starts, cfg.seed, cfg.threads, structure,
                         cfg.total_steps)
    return _emit(sol, cfg)


def cmd_refine(cfg: RunConfig, source: Optional[Path] = None) -> int:
    text = cfg.structure
    if text is None and source is not None:
        text = load_solution(source).data.get("structure")
    if not text:
        raise ValueError("refine needs --structure or --from with a solution that has one")
    sol = pipeline.refine(cfg.spec, ArcStructure.parse(text), total_steps=cfg.total_steps)
    return _emit(sol, cfg)


@dataclass
class _Duals:
    lam: object
    mu1: object = None
    mu2: object = None


def cmd_verify(solution_path: Path, out: Optional[Path]) -> int:
    loaded = load_solution(solution_path)
    spec, traj = loaded.spec, loaded.trajectory
    phase = loaded.data["phase"]
    structure = loaded.structure
    if phase == "direct":
        # node 0 is rebuilt from row 1 by the same backward step
        duals = _Duals(loaded.table[1:, 6:10], loaded.column("mu1"), loaded.column("mu2"))
        adj = adjoints_from_multipliers(traj, duals)
    elif phase == "trivial" or structure is None:
        adj = AdjointSamples("refined", traj.t, *(loaded.column(c) for c in
                                                  ("lambda1", "lambda2", "lambda3", "lambda4", "lambda5")),
                             constants=pipeline.PmpConstants.from_adjoints(0.0, 0.0, 0.0),
                             mu1=loaded.column("mu1"), mu2=loaded.column("mu2"))
    else:
        adj = adjoints_from_structure(traj, structure, spec)
    report = verify(spec, traj, adj, structure if phase != "direct" else None)
    target = Path(out) if out else solution_path.parent
    write_json(target / "report.json", report.to_dict())
    print(report.summary_table())
    return EXIT_OK if report.verdict else EXIT_UNVERIFIED


def cmd_plot(solution_path: Path, out: Optional[Path]) -> int:
    loaded = load_solution(solution_path)
    paths = plot_solution(Path(out) if out else solution_path.parent, loaded)
    for p in paths.values():
        print(p)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="spiralis", description="Curves of minimax spirality.")
    p.add_argument("-v", "--verbose", action="count", default=0)
    sub = p.add_subparsers(dest="command", required=True)

    def run_opts(sp):
        sp.add_argument("--config", required=True, type=Path, help="JSON run configuration")
        sp.add_argument("--structure", help='arc string such as "- + - +" or "+ P - M"')
        sp.add_argument("--n", type=int, help="transcription steps")
        sp.add_argument("--starts", type=int, help="number of multi-start points")
        sp.add_argument("--seed", type=int)
        sp.add_argument("--out", type=Path, help="output directory")
        sp.add_argument("--total-steps", type=int, dest="total_steps",
                        help="GL6 steps for the refined trajectory")
        sp.add_argument("--no-plots", action="store_true")

    s = sub.add_parser("solve", help="direct solve, structure extraction, refinement, checks")
    run_opts(s)
    s.add_argument("--phase", choices=("full", "direct"))
    r = sub.add_parser("refine", help="refine a given arc structure")
    run_opts(r)
    r.add_argument("--from", dest="source", type=Path, help="take the structure from a solution file")
    for name, helptext in (("verify", "re-run the optimality checks on a solution"),
                           ("plot", "render SVG figures of a solution")):
        sp = sub.add_parser(name, help=helptext)
        sp.add_argument("--solution", required=True, type=Path)
        sp.add_argument("--out", type=Path)
    return p


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command in ("solve", "refine"):
            cfg = RunConfig.from_file(args.config, n=args.n, starts=args.starts, seed=args.seed,
                                      structure=args.structure, out=args.out,
                                      total_steps=args.total_steps,
                                      phase=getattr(args, "phase", None))
            if args.no_plots:
                cfg.plots = False
            if args.command == "solve":
                return cmd_solve(cfg)
            return cmd_refine(cfg, args.source)
        if args.command == "verify":
            return cmd_verify(args.solution, args.out)
        return cmd_plot(args.solution, args.out)
    except (SpiralisError, ValueError, OSError, KeyError) as exc:
        log.error("%s", exc)
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FAIL


if __name__ == "__main__":
    sys.exit(main())
