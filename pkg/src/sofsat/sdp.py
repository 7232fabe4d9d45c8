"""Conic backend: solve assembled LMI programs, then re-verify independently.

The solver is an external conic engine driven through cvxpy (CLARABEL by
default, CVXOPT or SCS as fallbacks); everything downstream of `solve` treats
it as untrusted and re-checks constraint margins with numpy eigendecompositions.

Two environment variables override defaults when options are not given
explicitly: SOFSAT_SDP_TOL (relative feasibility tolerance, default 1e-8) and
SOFSAT_SOLVER (solver name).

`dump_program` writes the assembled program in a plain-text triplet format for
cross-checking against external tools::

    SOFSAT-LMI 1
    name <program name>
    blocks <count>
    block <name> <rows> <cols> <structure> params <k>
    objective <count>
    obj <block> <i> <j> <coeff>
    constraints <count>
    constraint <name> size <s> sense <psd|strict_neg> eps <eps> scale <scale>
    const <i> <j> <value>
    term <block> <param index> <i> <j> <value>
    end

`params` counts the canonical free-parameter basis of a block (upper-triangle
row-major for symmetric blocks, diagonal entries for diagonal blocks,
row-major entries otherwise); `term` lines give the entries of the constraint
contribution of one basis direction. All floats are shortest round-trip
decimals.
"""

from __future__ import annotations

import os
import time
import warnings
from dataclasses import dataclass, field

import cvxpy as cp
import numpy as np

__all__ = [
    "SolveOptions",
    "SolveReport",
    "ConstraintMargin",
    "MarginReport",
    "solve",
    "verify_solution",
    "constraint_violation",
    "dump_program",
]

_SOLVER_PREFERENCE = ("CLARABEL", "CVXOPT", "SCS")


class _CvxpyOps:
    bmat = staticmethod(cp.bmat)


CVXPY_OPS = _CvxpyOps()


@dataclass
class SolveOptions:
    """Backend options. feas_tol is relative to each constraint's scale."""
    solver: str = "auto"
    feas_tol: float = 1e-7
    psd_shift: float = 1e-8
    max_iters: int | None = None
    verbose: bool = False

    @classmethod
    def from_env(cls, **overrides):
        opts = cls(**overrides)
        if "feas_tol" not in overrides and os.environ.get("SOFSAT_SDP_TOL"):
            opts.feas_tol = float(os.environ["SOFSAT_SDP_TOL"])
        if "solver" not in overrides and os.environ.get("SOFSAT_SOLVER"):
            opts.solver = os.environ["SOFSAT_SOLVER"]
        return opts


@dataclass
class SolveReport:
    """Outcome of one conic solve; blocks are symmetrized numeric values."""
    status: str  # optimal | feasible | infeasible | numerical-failure | iteration-limit
    blocks: dict = field(default_factory=dict)
    objective_value: float | None = None
    worst_violation: float = np.inf
    solver: str = ""
    solver_status: str = ""
    iterations: int | None = None
    wall_time: float = 0.0


def _pick_solver(name):
    installed = cp.installed_solvers()
    if name != "auto":
        if name.upper() not in installed:
            raise ValueError(f"solver {name} is not installed (have {installed})")
        return name.upper()
    for cand in _SOLVER_PREFERENCE:
        if cand in installed:
            return cand
    raise RuntimeError("no supported conic solver is installed")


def _solver_kwargs(solver, options):
    tol = max(min(options.feas_tol * 1e-2, 1e-9), 1e-12)
    if solver == "CLARABEL":
        kw = {"tol_feas": tol, "tol_gap_abs": tol, "tol_gap_rel": tol}
        if options.max_iters:
            kw["max_iter"] = options.max_iters
    elif solver == "CVXOPT":
        kw = {"abstol": tol, "reltol": tol, "feastol": tol}
        if options.max_iters:
            kw["max_iters"] = options.max_iters
    elif solver == "SCS":
        kw = {"eps": max(tol, 1e-9), "max_iters": options.max_iters or 200000}
    else:
        kw = {}
    return kw


def _make_variables(registry):
    raw = {}
    mats = {}
    for s in registry.specs():
        if s.structure == "symmetric":
            v = cp.Variable((s.rows, s.cols), symmetric=True, name=s.name)
            mat = v
        elif s.structure == "diagonal":
            v = cp.Variable(s.rows, name=s.name)
            mat = cp.diag(v)
        else:  # full, scalar
            v = cp.Variable((s.rows, s.cols), name=s.name)
            mat = v
        raw[s.name] = v
        mats[s.name] = mat
    return raw, mats


def _extract_blocks(registry, raw):
    blocks = {}
    for s in registry.specs():
        val = raw[s.name].value
        if val is None:
            return {}
        B = np.asarray(val, dtype=float)
        if s.structure == "symmetric":
            B = 0.5 * (B + B.T)
        elif s.structure == "diagonal":
            B = np.diag(B.ravel())
        else:
            B = B.reshape(s.rows, s.cols)
        blocks[s.name] = B
    return blocks


def constraint_violation(constraint, blocks):
    """Relative violation of the unshifted inequality (0 when satisfied).

    The eps shift of strict constraints and the psd shift applied at solve
    time are solver-side conservatism; feasibility of a returned point is
    judged on the underlying inequalities expr >= 0 / expr <= 0 themselves.
    """
    E = constraint.normalized_value(blocks)
    if E.size == 0:
        return 0.0
    wmin = float(np.min(np.linalg.eigvalsh(E)))
    return max(0.0, -wmin / constraint.scale)


def _worst_violation(program, blocks):
    if not blocks:
        return np.inf
    return max((constraint_violation(c, blocks) for c in program.constraints),
               default=0.0)


def solve(program, options=None):
    """Solve an LmiProgram and post-verify the returned blocks.

    Strict constraints are solved as expr <= -eps I with the assembled eps;
    nonnegative constraints get a small conservative shift (psd_shift * scale)
    so that returned certificates satisfy the declared inequality with genuine
    margin. A status of optimal/feasible is downgraded to numerical-failure if
    the independently measured violation of any unshifted inequality exceeds
    feas_tol (relative to the constraint scale).
    """
    options = options or SolveOptions.from_env()
    registry = program.registry
    raw, mats = _make_variables(registry)

    cons = []
    for c in program.constraints:
        E = c.expr.build(mats, CVXPY_OPS)
        Es = 0.5 * (E + E.T)
        eye = np.eye(c.expr.size)
        if c.sense == "psd":
            cons.append(Es - (options.psd_shift * c.scale) * eye >> 0)
        elif c.sense == "strict_neg":
            cons.append(-Es - c.eps * eye >> 0)
        else:
            raise ValueError(f"unknown constraint sense {c.sense!r}")

    if program.objective:
        obj = sum(cp.sum(cp.multiply(np.asarray(coef, dtype=float), mats[name]))
                  for name, coef in program.objective)
        problem = cp.Problem(cp.Minimize(obj), cons)
    else:
        problem = cp.Problem(cp.Minimize(0), cons)

    solver = _pick_solver(options.solver)
    t0 = time.perf_counter()
    solver_status = ""
    try:
        with warnings.catch_warnings():
            # inaccurate-solution warnings are redundant with the post-check
            warnings.simplefilter("ignore", UserWarning)
            problem.solve(solver=solver, verbose=options.verbose,
                          **_solver_kwargs(solver, options))
        solver_status = problem.status or ""
    except (cp.error.SolverError, cp.error.DCPError, ValueError) as exc:
        return SolveReport(status="numerical-failure", solver=solver,
                           solver_status=f"{type(exc).__name__}: {exc}",
                           wall_time=time.perf_counter() - t0)
    wall = time.perf_counter() - t0

    if solver_status in (cp.OPTIMAL, cp.OPTIMAL_INACCURATE):
        status = "optimal" if program.objective else "feasible"
    elif solver_status in (cp.INFEASIBLE,):
        status = "infeasible"
    elif solver_status in (cp.USER_LIMIT,):
        status = "iteration-limit"
    else:
        status = "numerical-failure"

    blocks = {}
    worst = np.inf
    if status in ("optimal", "feasible"):
        blocks = _extract_blocks(registry, raw)
        worst = _worst_violation(program, blocks)
        if worst > options.feas_tol:
            status = "numerical-failure"

    iters = getattr(problem.solver_stats, "num_iters", None) if problem.solver_stats else None
    objective_value = program.objective_value(blocks) if (blocks and program.objective) else None
    return SolveReport(status=status, blocks=blocks, objective_value=objective_value,
                       worst_violation=worst, solver=solver, solver_status=solver_status,
                       iterations=iters, wall_time=wall)


@dataclass(frozen=True)
class ConstraintMargin:
    name: str
    min_eig: float
    scale: float
    margin: float
    ok: bool


@dataclass(frozen=True)
class MarginReport:
    margins: tuple
    passed: bool
    worst_name: str
    worst_margin: float

    def by_name(self, name):
        for m in self.margins:
            if m.name == name:
                return m
        raise KeyError(name)


def verify_solution(program, blocks, margin_tol=1e-7):
    """Re-check every constraint of a solved program by eigendecomposition.

    Margins are minimum eigenvalues of the normalized constraint value divided
    by the constraint scale; strict constraints are measured against the
    underlying strict inequality (expr < 0), not the eps-shifted surrogate.
    Never consults solver residuals.
    """
    out = []
    for c in program.constraints:
        E = c.normalized_value(blocks)
        min_eig = float(np.min(np.linalg.eigvalsh(E))) if E.size else 0.0
        margin = min_eig / c.scale
        out.append(ConstraintMargin(name=c.name, min_eig=min_eig, scale=c.scale,
                                    margin=margin, ok=margin >= -margin_tol))
    worst = min(out, key=lambda cm: cm.margin) if out else None
    return MarginReport(margins=tuple(out), passed=all(cm.ok for cm in out),
                        worst_name=worst.name if worst else "",
                        worst_margin=worst.margin if worst else 0.0)


def _triplets(M, tol=0.0):
    M = np.asarray(M)
    for i in range(M.shape[0]):
        for j in range(M.shape[1]):
            if abs(M[i, j]) > tol:
                yield i, j, M[i, j]


def dump_program(program, path):
    """Write the program in the documented plain-text triplet format."""
    registry = program.registry
    lines = ["SOFSAT-LMI 1", f"name {program.name}", f"blocks {len(registry.specs())}"]
    for s in registry.specs():
        lines.append(f"block {s.name} {s.rows} {s.cols} {s.structure} "
                     f"params {len(registry.basis(s.name))}")
    lines.append(f"objective {len(program.objective)}")
    for name, coef in program.objective:
        for i, j, v in _triplets(coef):
            lines.append(f"obj {name} {i} {j} {v!r}")
    lines.append(f"constraints {len(program.constraints)}")
    for c in program.constraints:
        lines.append(f"constraint {c.name} size {c.expr.size} sense {c.sense} "
                     f"eps {c.eps!r} scale {c.scale!r}")
        const = c.expr.const_term()
        for i, j, v in _triplets(const):
            lines.append(f"const {i} {j} {v!r}")
        for name in c.expr.blocks:
            for k, B in enumerate(registry.basis(name)):
                contrib = c.expr.value({name: B}) - const
                for i, j, v in _triplets(contrib, tol=0.0):
                    lines.append(f"term {name} {k} {i} {j} {v!r}")
        lines.append("end")
    text = "\n".join(lines) + "\n"
    with open(path, "w") as fh:
        fh.write(text)
    return text
