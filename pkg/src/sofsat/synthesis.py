"""Output-feedback gain synthesis by alternating conic solves.

Two stages share one program assembly. The design stage minimizes a scalar
relaxation level of the supply-rate sign condition, updating the fixed supply
multiplier from each iterate's (S, R); it stops once the level is nonpositive
or the Schur test on Q - S R^-1 S' passes, at which point K = -R^-1 S' is a
stabilizing gain. The maximization stage reuses that gain structure and
minimizes trace(P) to grow the certified invariant ellipsoid, stopping when
the trace improvement falls below a threshold.

Every accepted certificate is re-verified against a canonical program built
with the multiplier recomputed from its own (S, R); a result is only reported
as success if those margins check out independently of the solver.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass

import numpy as np

from . import sdp
from .affine import AffineMatrix
from .lmis import (DecisionRegistry, build_synthesis_program, ls_multiplier,
                   schur_stability_check)
from .model import WellPosednessError, validate_well_posedness

__all__ = [
    "Certificate",
    "EllipsoidMetrics",
    "IterationRecord",
    "SynthesisResult",
    "compute_gain",
    "ellipsoid_metrics",
    "ellipsoid_boundary_points",
    "ellipsoid_polyline",
    "find_stabilizing_gain",
    "maximize_invariant_set",
    "synthesize",
]


def compute_gain(S, R):
    """Static output-feedback gain K = -R^-1 S' from supply parameters."""
    S = np.atleast_2d(np.asarray(S, dtype=float))
    R = np.atleast_2d(np.asarray(R, dtype=float))
    return -np.linalg.solve(R, S.T)


def _sym(M):
    return 0.5 * (M + M.T)


@dataclass(frozen=True)
class Certificate:
    """Numeric certificate blocks of one accepted iterate.

    Gbar and Gpi hold the affine coefficient maps of the saturation sector
    bound; the actual bound gains are W^-1 Gbar(x, d) and W^-1 Gpi(x, d).
    lam is the relaxation level of the solve that produced the blocks (None
    for unrelaxed programs).
    """
    P: np.ndarray
    N: np.ndarray
    Q: np.ndarray
    S: np.ndarray
    R: np.ndarray
    W: np.ndarray
    Gbar: AffineMatrix
    mult: np.ndarray | None = None
    Z: np.ndarray | None = None
    Gpi: AffineMatrix | None = None
    lam: float | None = None

    @property
    def K(self):
        return compute_gain(self.S, self.R)

    def gain_bound(self, x, delta=()):
        """Sector reference gain G(x, d) = W^-1 Gbar(x, d), shape (m, n)."""
        return np.linalg.solve(self.W, self.Gbar.evaluate(x, delta))

    def gain_bound_pi(self, x, delta=()):
        """Algebraic-channel sector gain W^-1 Gpi(x, d), shape (m, n_pi_x)."""
        if self.Gpi is None:
            raise ValueError("certificate has no pi-channel sector bound")
        return np.linalg.solve(self.W, self.Gpi.evaluate(x, delta))

    @classmethod
    def from_blocks(cls, registry, blocks):
        n, l, m = registry.n, registry.l, registry.m
        n_pi_x = registry.n_pi_x

        def affine_from(prefix, cols):
            zero = np.zeros((m, cols))
            xc = [np.asarray(blocks.get(f"{prefix}_x{i}", zero), float) for i in range(n)]
            dc = [np.asarray(blocks.get(f"{prefix}_d{j}", zero), float) for j in range(l)]
            return AffineMatrix(np.asarray(blocks[prefix], float), xc, dc)

        lam = None
        if "lam" in blocks:
            lam = float(np.asarray(blocks["lam"]).reshape(1, 1)[0, 0])
        W = np.asarray(blocks["W"], dtype=float)
        return cls(
            P=_sym(np.asarray(blocks["P"], float)),
            N=_sym(np.asarray(blocks["N"], float)),
            Q=_sym(np.asarray(blocks["Q"], float)),
            S=np.asarray(blocks["S"], float),
            R=_sym(np.asarray(blocks["R"], float)),
            W=np.diag(np.diag(W)),
            Gbar=affine_from("Gbar", n),
            mult=np.asarray(blocks["mult"], float) if "mult" in blocks else None,
            Z=np.asarray(blocks["Z"], float) if "Z" in blocks else None,
            Gpi=affine_from("Gpi", n_pi_x) if n_pi_x else None,
            lam=lam,
        )

    def to_blocks(self, registry):
        """Blocks keyed by the registry's names (zero coefficients filled in)."""
        out = {}
        for name in registry.names():
            if name in ("P", "N", "Q", "S", "R", "W"):
                out[name] = getattr(self, name)
            elif name == "mult":
                out[name] = self.mult if self.mult is not None else np.zeros(registry.shape(name))
            elif name == "Z":
                out[name] = self.Z if self.Z is not None else np.zeros(registry.shape(name))
            elif name == "lam":
                out[name] = np.array([[self.lam if self.lam is not None else 0.0]])
            elif name.startswith("Gbar"):
                out[name] = _affine_piece(self.Gbar, name, "Gbar")
            elif name.startswith("Gpi"):
                if self.Gpi is None:
                    out[name] = np.zeros(registry.shape(name))
                else:
                    out[name] = _affine_piece(self.Gpi, name, "Gpi")
            else:
                raise KeyError(f"unknown registry block {name}")
        return out


def _affine_piece(A, name, prefix):
    if name == prefix:
        return A.const
    kind, idx = name[len(prefix) + 1], int(name[len(prefix) + 2:])
    coeffs = A.x_coeffs if kind == "x" else A.delta_coeffs
    if idx < len(coeffs):
        return coeffs[idx]
    return np.zeros(A.shape)


@dataclass(frozen=True)
class EllipsoidMetrics:
    """Geometry of the level set {x : x'Px <= 1}."""
    semi_axes: tuple  # descending
    max_radius: float
    min_radius: float
    trace: float
    log_det_p_inv: float
    volume: float


def ellipsoid_metrics(P):
    import math

    P = _sym(np.asarray(P, dtype=float))
    eigs = np.linalg.eigvalsh(P)
    if np.any(eigs <= 0):
        raise ValueError("P must be positive definite")
    semi = 1.0 / np.sqrt(eigs)  # eigs ascending, so semi-axes descending
    n = P.shape[0]
    unit_ball = math.pi ** (n / 2.0) / math.gamma(n / 2.0 + 1.0)
    return EllipsoidMetrics(
        semi_axes=tuple(float(s) for s in semi),
        max_radius=float(semi[0]),
        min_radius=float(semi[-1]),
        trace=float(np.trace(P)),
        log_det_p_inv=float(-np.linalg.slogdet(P)[1]),
        volume=float(unit_ball * np.prod(semi)),
    )


def ellipsoid_boundary_points(P, count, rng=None):
    """Points on {x : x'Px = 1}: seeded uniform directions mapped through P."""
    P = _sym(np.asarray(P, dtype=float))
    n = P.shape[0]
    L = np.linalg.cholesky(P)
    rng = rng if rng is not None else np.random.default_rng(0)
    U = rng.normal(size=(count, n))
    U /= np.linalg.norm(U, axis=1, keepdims=True)
    # x = L^-T u satisfies x'Px = u'u = 1
    return np.linalg.solve(L.T, U.T).T


def ellipsoid_polyline(P, count=361):
    """Closed boundary polyline of a 2-d level set, for plotting."""
    P = _sym(np.asarray(P, dtype=float))
    if P.shape != (2, 2):
        raise ValueError("polyline requires a 2x2 matrix")
    th = np.linspace(0.0, 2.0 * np.pi, count)
    U = np.stack([np.cos(th), np.sin(th)], axis=1)
    L = np.linalg.cholesky(P)
    return np.linalg.solve(L.T, U.T).T


@dataclass(frozen=True)
class IterationRecord:
    phase: str  # design | maximize
    index: int
    status: str
    objective: float | None
    worst_violation: float
    solver: str
    solver_status: str
    solver_iterations: int | None
    wall_time: float
    note: str = ""


@dataclass(frozen=True)
class SynthesisResult:
    """Outcome of one synthesis run (design stage, maximization, or both)."""
    status: str  # success | iteration-limit | solver-failure
    model: object
    certificate: Certificate | None
    exit_reason: str = ""
    lambda_history: tuple = ()
    trace_history: tuple = ()
    design_iterations: int = 0
    maximize_iterations: int = 0
    schur: object = None
    verification: sdp.MarginReport | None = None
    iteration_log: tuple = ()
    well_posedness: object = None

    @property
    def success(self):
        return self.status == "success"

    @property
    def K(self):
        return self.certificate.K if self.certificate is not None else None

    def metrics(self):
        if self.certificate is None:
            raise ValueError("no certificate to measure")
        return ellipsoid_metrics(self.certificate.P)


def _record(phase, index, rep, objective, note=""):
    return IterationRecord(
        phase=phase, index=index, status=rep.status, objective=objective,
        worst_violation=float(rep.worst_violation), solver=rep.solver,
        solver_status=rep.solver_status, solver_iterations=rep.iterations,
        wall_time=rep.wall_time, note=note)


def _canonical_margins(model, cert, affine_gain_bound, eps_pd, eps_n, margin_tol=1e-7):
    """Margins of the certificate in the unrelaxed program under its own multiplier.

    Scale caps are omitted: they condition the solves but are not part of
    what the certificate claims.
    """
    registry = DecisionRegistry(model, relaxed=False, affine_gain_bound=affine_gain_bound,
                                eps_pd=eps_pd, eps_n=eps_n, norm_cap=None)
    program = build_synthesis_program(model, registry, ls_multiplier(cert.S, cert.R),
                                      name="canonical")
    return sdp.verify_solution(program, cert.to_blocks(registry), margin_tol=margin_tol)


def _precheck(model, check_well_posedness):
    if not check_well_posedness:
        return None
    wp = validate_well_posedness(model)
    if not wp.passed:
        x, d = wp.worst_point
        raise WellPosednessError(
            f"model {model.name or '<unnamed>'} is not well posed: condition number "
            f"{wp.max_cond:.3e} exceeds {wp.cond_cap:.1e} at x={x}, delta={d}",
            x=x, delta=d, cond=wp.max_cond)
    return wp


def find_stabilizing_gain(model, i_max=50, options=None, affine_gain_bound=True,
                          eps_pd=1e-7, eps_n=1e-6, norm_cap=1e3,
                          check_well_posedness=True):
    """Design stage: drive the supply-rate relaxation level to zero.

    Starts from the multiplier of (S, R) = (0, I), so the first program is
    always feasible, and the level is nonincreasing across iterations. Returns
    a SynthesisResult whose certificate (when successful) has been re-verified
    in the unrelaxed program.
    """
    wp = _precheck(model, check_well_posedness)
    registry = DecisionRegistry(model, relaxed=True, affine_gain_bound=affine_gain_bound,
                                eps_pd=eps_pd, eps_n=eps_n, norm_cap=norm_cap)
    Ls = ls_multiplier(np.zeros((model.p, model.m)), np.eye(model.m))
    objective = (("lam", np.ones((1, 1))),)

    history = []
    log = []
    for k in range(i_max):
        program = build_synthesis_program(model, registry, Ls, objective=objective,
                                          name=f"design[{k}]")
        rep = sdp.solve(program, options)
        if rep.status != "optimal":
            log.append(_record("design", k, rep, None))
            return SynthesisResult(
                status="solver-failure", model=model, certificate=None,
                exit_reason=f"solver returned {rep.status} at design iteration {k}",
                lambda_history=tuple(history), design_iterations=k + 1,
                iteration_log=tuple(log), well_posedness=wp)
        lam = float(rep.blocks["lam"][0, 0])
        history.append(lam)
        log.append(_record("design", k, rep, lam))
        Q, S, R = rep.blocks["Q"], rep.blocks["S"], rep.blocks["R"]

        exit_reason = ""
        schur = None
        if lam <= 0.0:
            exit_reason = "relaxation level nonpositive"
        else:
            try:
                schur = schur_stability_check(Q, S, R)
            except ValueError:
                schur = None
            if schur is not None and schur.passed:
                exit_reason = "schur test passed"
        if exit_reason:
            cert = Certificate.from_blocks(registry, rep.blocks)
            margins = _canonical_margins(model, cert, affine_gain_bound, eps_pd, eps_n)
            status = "success" if margins.passed else "solver-failure"
            if not margins.passed:
                exit_reason += (f"; rejected: canonical margin {margins.worst_margin:.3e}"
                                f" on {margins.worst_name}")
            if schur is None:
                schur = schur_stability_check(Q, S, R)
            return SynthesisResult(
                status=status, model=model, certificate=cert, exit_reason=exit_reason,
                lambda_history=tuple(history), design_iterations=k + 1, schur=schur,
                verification=margins, iteration_log=tuple(log), well_posedness=wp)
        Ls = ls_multiplier(S, R)

    return SynthesisResult(
        status="iteration-limit", model=model, certificate=None,
        exit_reason=f"relaxation level still {history[-1]:.6g} after {i_max} iterations",
        lambda_history=tuple(history), design_iterations=i_max,
        iteration_log=tuple(log), well_posedness=wp)


def maximize_invariant_set(model, seed, gamma=1e-2, i_max=50, options=None,
                           affine_gain_bound=True, eps_pd=1e-7, eps_n=1e-6,
                           norm_cap=1e3):
    """Maximization stage: shrink trace(P) until improvements fall below gamma.

    seed is a successful design-stage result (or a bare Certificate); its
    (S, R) provide the initial supply multiplier. The best iterate by trace is
    kept even when a later solve fails or the iteration budget runs out.
    """
    cert0 = seed.certificate if isinstance(seed, SynthesisResult) else seed
    if cert0 is None:
        raise ValueError("seed result has no certificate")
    registry = DecisionRegistry(model, relaxed=False, affine_gain_bound=affine_gain_bound,
                                eps_pd=eps_pd, eps_n=eps_n, norm_cap=norm_cap)
    objective = (("P", np.eye(model.n)),)

    traces = [float(np.trace(cert0.P))]
    best = cert0
    cert = cert0
    log = []
    status = "iteration-limit"
    exit_reason = f"trace still improving after {i_max} iterations"
    iters = 0
    for k in range(i_max):
        program = build_synthesis_program(model, registry, ls_multiplier(cert.S, cert.R),
                                          objective=objective, name=f"maximize[{k}]")
        rep = sdp.solve(program, options)
        iters = k + 1
        if rep.status != "optimal":
            log.append(_record("maximize", k, rep, None))
            status = "solver-failure"
            exit_reason = f"solver returned {rep.status} at maximize iteration {k}"
            break
        cert = Certificate.from_blocks(registry, rep.blocks)
        tr = float(np.trace(cert.P))
        traces.append(tr)
        log.append(_record("maximize", k, rep, tr))
        if tr <= float(np.trace(best.P)):
            best = cert
        if abs(traces[-1] - traces[-2]) <= gamma:
            status = "success"
            exit_reason = f"trace change {abs(traces[-1] - traces[-2]):.3e} within {gamma:g}"
            break

    margins = _canonical_margins(model, best, affine_gain_bound, eps_pd, eps_n)
    if status == "success" and not margins.passed:
        status = "solver-failure"
        exit_reason += (f"; rejected: canonical margin {margins.worst_margin:.3e}"
                        f" on {margins.worst_name}")
    schur = schur_stability_check(best.Q, best.S, best.R)
    return SynthesisResult(
        status=status, model=model, certificate=best, exit_reason=exit_reason,
        trace_history=tuple(traces), maximize_iterations=iters, schur=schur,
        verification=margins, iteration_log=tuple(log))


def synthesize(model, i_max=50, gamma=1e-2, options=None, skip_maximize=False,
               affine_gain_bound=True, eps_pd=1e-7, eps_n=1e-6, norm_cap=1e3,
               check_well_posedness=True):
    """Run the design stage and, on success, the invariant-set maximization."""
    design = find_stabilizing_gain(
        model, i_max=i_max, options=options, affine_gain_bound=affine_gain_bound,
        eps_pd=eps_pd, eps_n=eps_n, norm_cap=norm_cap,
        check_well_posedness=check_well_posedness)
    if skip_maximize or not design.success:
        return design
    grown = maximize_invariant_set(
        model, design, gamma=gamma, i_max=i_max, options=options,
        affine_gain_bound=affine_gain_bound, eps_pd=eps_pd, eps_n=eps_n,
        norm_cap=norm_cap)
    return dataclasses.replace(
        grown,
        lambda_history=design.lambda_history,
        design_iterations=design.design_iterations,
        iteration_log=design.iteration_log + grown.iteration_log,
        well_posedness=design.well_posedness)
