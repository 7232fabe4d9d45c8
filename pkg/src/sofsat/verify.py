"""Independent certificate checks: algebra, sampling, and simulation.

Nothing here trusts the conic solver. The LMI margins are recomputed by
eigendecomposition on a freshly assembled program, the sector bound and the
dissipation inequality are sampled over the certified ellipsoid and the
uncertainty set, the supply-rate sign is checked both by Schur complement and
on sampled loop signals, and a Monte Carlo run integrates the closed loop from
inside the certified set under several uncertainty generators, tracking both
convergence and invariance of the level set.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import sdp
from .lmis import (DecisionRegistry, build_synthesis_program, ls_multiplier,
                   qsr_scale, schur_stability_check)
from .model import (ConstantDelta, PiecewiseConstantDelta, SinusoidDelta,
                    closed_loop_batch, deadzone, simulate_batch)
from .synthesis import Certificate, SynthesisResult, ellipsoid_boundary_points, ellipsoid_metrics

__all__ = [
    "CheckResult",
    "RoaGeneratorResult",
    "RoaReport",
    "VerificationReport",
    "check_gain_consistency",
    "check_lmi_margins",
    "check_sector_inclusion",
    "check_dissipation",
    "check_supply_sign",
    "monte_carlo_roa",
    "verify_certificate",
]


@dataclass(frozen=True)
class CheckResult:
    """One verification check: `worst` is compared against `tol` (worst <= tol)."""
    name: str
    passed: bool
    worst: float
    tol: float
    count: int
    note: str = ""


def _cert_of(obj):
    if isinstance(obj, SynthesisResult):
        if obj.certificate is None:
            raise ValueError("result has no certificate to verify")
        return obj.certificate
    if isinstance(obj, Certificate):
        return obj
    raise TypeError("expected a SynthesisResult or Certificate")


def check_gain_consistency(cert, K=None, tol=1e-9):
    """The reported gain must solve R K = -S' to rounding."""
    K = cert.K if K is None else np.atleast_2d(np.asarray(K, dtype=float))
    scale = qsr_scale(cert.Q, cert.S, cert.R)
    resid = float(np.max(np.abs(cert.R @ K + cert.S.T))) / scale
    return CheckResult(name="gain-consistency", passed=resid <= tol,
                       worst=resid, tol=tol, count=K.size)


def check_lmi_margins(model, cert, eps_pd=1e-7, eps_n=1e-6, margin_tol=1e-7):
    """Reassemble the certificate program and remeasure every margin.

    The program is rebuilt from the model with the supply multiplier derived
    from the certificate's own (S, R); margins come from numpy
    eigendecompositions, never from solver residuals.
    """
    registry = DecisionRegistry(model, relaxed=False, affine_gain_bound=True,
                                eps_pd=eps_pd, eps_n=eps_n, norm_cap=None)
    program = build_synthesis_program(model, registry, ls_multiplier(cert.S, cert.R),
                                      name="verification")
    margins = sdp.verify_solution(program, cert.to_blocks(registry), margin_tol=margin_tol)
    check = CheckResult(name="lmi-margins", passed=margins.passed,
                        worst=-margins.worst_margin, tol=margin_tol,
                        count=len(margins.margins),
                        note=f"worst constraint {margins.worst_name}")
    return check, margins


def _pi_x_batch(model, X, Dm):
    """State-only algebraic block from Sigma1 x + Sigma2 pi_x = 0, batched."""
    S1 = model.Sigma1.evaluate_batch(X, Dm)
    S2 = model.Sigma2.evaluate_batch(X, Dm)
    rhs = -np.einsum("bij,bj->bi", S1, X)
    return np.linalg.solve(S2, rhs[:, :, None])[:, :, 0]


def _delta_grid(model, rng, extra=8):
    """Vertices of D plus a few interior samples (one zero row when l = 0)."""
    if model.l == 0:
        return np.zeros((1, 0))
    verts = np.asarray(model.D.vertices(), dtype=float).reshape(-1, model.l)
    inner = model.D.sample(rng, extra)
    return np.vstack([verts, inner])


def _ellipsoid_samples(model, P, count, rng, floor=0.0):
    """Boundary and interior samples of {x : x'Px <= 1} (interior radii
    uniform in volume, floored away from the origin)."""
    n_b = count // 2
    Xb = ellipsoid_boundary_points(P, n_b, rng=rng)
    Xi = ellipsoid_boundary_points(P, count - n_b, rng=rng)
    radii = rng.uniform(floor, 1.0, size=(count - n_b, 1)) ** (1.0 / model.n)
    return np.vstack([Xb, radii * Xi])


def check_sector_inclusion(model, cert, samples=10000, seed=0, tol=1e-7):
    """|G(x,d) x + Gpi(x,d) pi_x| <= u_bar over the certified set.

    Sampled on the boundary and interior of {x'Px <= 1} against the vertices
    of D plus interior uncertainty samples. The margin is the worst relative
    excess over the saturation level.
    """
    rng = np.random.default_rng(seed)
    X = _ellipsoid_samples(model, cert.P, samples, rng)
    Dg = _delta_grid(model, rng)
    worst = -np.inf
    total = 0
    for dv in Dg:
        Dm = np.broadcast_to(dv, (X.shape[0], model.l))
        Gb = cert.Gbar.evaluate_batch(X, Dm)
        V = np.einsum("bij,bj->bi", Gb, X)
        if model.n_pi_x:
            Gp = cert.Gpi.evaluate_batch(X, Dm)
            V = V + np.einsum("bij,bj->bi", Gp, _pi_x_batch(model, X, Dm))
        # bound gains are W^-1 (Gbar x + Gpi pi_x)
        V = np.linalg.solve(cert.W, V.T).T
        excess = (np.abs(V) - model.u_bar) / model.u_bar
        worst = max(worst, float(excess.max()))
        total += excess.size
    return CheckResult(name="sector-inclusion", passed=worst <= tol,
                       worst=worst, tol=tol, count=total)


def check_dissipation(model, cert, K=None, samples=10000, seed=0, tol=1e-7,
                      origin_floor=1e-3):
    """Sampled dissipation inequality along the closed loop.

    At sampled (x, d) in the certified set, with y, v, pi from the loop maps:
    Vdot + x'Nx - r(y, v) + B <= tol and Vdot < 0, where B is the deadzone
    sector term -2 phi' W (phi + v - G x - Gpi pi_x), phi = sat(v) - v.
    The origin is excluded by a relative radius floor.
    """
    cert = _cert_of(cert)
    K = cert.K if K is None else np.atleast_2d(np.asarray(K, dtype=float))
    rng = np.random.default_rng(seed)
    X = _ellipsoid_samples(model, cert.P, samples, rng, floor=origin_floor ** model.n)
    Dg = _delta_grid(model, rng)
    scale = max(qsr_scale(cert.Q, cert.S, cert.R), float(np.max(np.abs(cert.P))))
    worst_ineq = -np.inf
    worst_vdot = -np.inf
    total = 0
    for dv in Dg:
        Dm = np.broadcast_to(dv, (X.shape[0], model.l))
        Xdot, Y, V, U, Pi = closed_loop_batch(model, K, X, Dm)
        vdot = 2.0 * np.einsum("bi,ij,bj->b", X, cert.P, Xdot)
        T = np.einsum("bi,ij,bj->b", X, cert.N, X)
        r = (np.einsum("bi,ij,bj->b", Y, cert.Q, Y)
             + 2.0 * np.einsum("bi,ij,bj->b", Y, cert.S, V)
             + np.einsum("bi,ij,bj->b", V, cert.R, V))
        phi = deadzone(V, model.u_bar)
        Gb = cert.Gbar.evaluate_batch(X, Dm)
        ref = np.einsum("bij,bj->bi", Gb, X)
        if model.n_pi_x:
            Gp = cert.Gpi.evaluate_batch(X, Dm)
            ref = ref + np.einsum("bij,bj->bi", Gp, Pi[:, :model.n_pi_x])
        ref = np.linalg.solve(cert.W, ref.T).T
        B = -2.0 * np.einsum("bi,ij,bj->b", phi, cert.W, phi + V - ref)
        worst_ineq = max(worst_ineq, float(((vdot + T - r + B) / scale).max()))
        worst_vdot = max(worst_vdot, float(vdot.max()))
        total += X.shape[0]
    passed = worst_ineq <= tol and worst_vdot < 0.0
    return CheckResult(name="dissipation", passed=passed, worst=worst_ineq,
                       tol=tol, count=total,
                       note=f"max Vdot {worst_vdot:.3e}")


def check_supply_sign(model, cert, K=None, samples=10000, seed=0, tol=1e-10):
    """r(y, K y) <= tol * scale * |y|^2 for sampled outputs, plus Schur test."""
    cert = _cert_of(cert)
    K = cert.K if K is None else np.atleast_2d(np.asarray(K, dtype=float))
    rng = np.random.default_rng(seed)
    Y = rng.normal(size=(samples, model.p))
    Y /= np.linalg.norm(Y, axis=1, keepdims=True)
    V = Y @ K.T
    scale = qsr_scale(cert.Q, cert.S, cert.R)
    r = (np.einsum("bi,ij,bj->b", Y, cert.Q, Y)
         + 2.0 * np.einsum("bi,ij,bj->b", Y, cert.S, V)
         + np.einsum("bi,ij,bj->b", V, cert.R, V))
    worst = float(r.max()) / scale
    schur = schur_stability_check(cert.Q, cert.S, cert.R)
    passed = worst <= tol and schur.passed
    note = f"schur max eig {schur.max_eig:.3e}"
    return CheckResult(name="supply-sign", passed=passed, worst=worst,
                       tol=tol, count=samples, note=note), schur


@dataclass(frozen=True)
class RoaGeneratorResult:
    generator: str
    n_traj: int
    converged: int
    diverged: int
    max_final_norm: float
    max_level: float  # max of x'Px along trajectories (certified level is 1)


@dataclass(frozen=True)
class RoaReport:
    passed: bool
    results: tuple
    t_final: float
    step: float
    conv_tol: float
    level_tol: float


def _delta_generators(model, seed):
    if model.l == 0:
        return [("none", None)]
    gens = []
    for k, dv in enumerate(model.D.vertices()):
        gens.append((f"vertex[{k}]", ConstantDelta(dv)))
    gens.append(("piecewise", PiecewiseConstantDelta(model.D, dwell=1.0, seed=seed)))
    gens.append(("sinusoid", SinusoidDelta(model.D)))
    return gens


def monte_carlo_roa(model, cert, K=None, n_traj=100, t_final=50.0, step=5e-3,
                    conv_tol=1e-3, level_tol=1e-6, seed=0, boundary_fraction=0.5):
    """Simulate from inside the certified set under several uncertainty signals.

    Initial states mix points just inside the boundary of {x'Px <= 1} with
    interior points. Every trajectory must avoid divergence, end within
    conv_tol of the origin, and keep x'Px <= 1 + level_tol throughout
    (invariance of the certified level set).
    """
    cert = _cert_of(cert)
    K = cert.K if K is None else np.atleast_2d(np.asarray(K, dtype=float))
    rng = np.random.default_rng(seed)
    n_b = int(round(boundary_fraction * n_traj))
    Xb = (1.0 - 1e-9) * ellipsoid_boundary_points(cert.P, n_b, rng=rng)
    Xi = ellipsoid_boundary_points(cert.P, n_traj - n_b, rng=rng)
    Xi *= rng.uniform(0.0, 1.0, size=(n_traj - n_b, 1)) ** (1.0 / model.n)
    X0 = np.vstack([Xb, Xi])

    results = []
    ok = True
    for gname, sig in _delta_generators(model, seed):
        Xf, diverged, _, qmax = simulate_batch(model, K, X0, t_final, step=step,
                                               delta_signal=sig, quad_form=cert.P)
        fin = ~diverged
        final_norm = np.linalg.norm(Xf[fin], axis=1) if fin.any() else np.zeros(0)
        converged = int(np.sum(final_norm <= conv_tol))
        max_level = float(qmax[fin].max()) if fin.any() else np.inf
        res = RoaGeneratorResult(
            generator=gname, n_traj=n_traj, converged=converged,
            diverged=int(diverged.sum()),
            max_final_norm=float(final_norm.max()) if final_norm.size else np.inf,
            max_level=max_level)
        results.append(res)
        ok = ok and (res.diverged == 0 and res.converged == n_traj
                     and res.max_level <= 1.0 + level_tol)
    return RoaReport(passed=ok, results=tuple(results), t_final=float(t_final),
                     step=float(step), conv_tol=float(conv_tol),
                     level_tol=float(level_tol))


@dataclass(frozen=True)
class VerificationReport:
    """All verification outcomes for one certificate and gain."""
    passed: bool
    checks: tuple  # CheckResult, in a fixed order
    lmi_margins: sdp.MarginReport
    schur: object
    roa: RoaReport | None
    metrics: object

    def check(self, name):
        for c in self.checks:
            if c.name == name:
                return c
        raise KeyError(name)


def verify_certificate(model, result, K=None, samples=10000, n_traj=100,
                       t_final=50.0, step=5e-3, conv_tol=1e-3, seed=0,
                       eps_pd=1e-7, eps_n=1e-6, skip_roa=False):
    """Run the full verification suite against a synthesis result.

    Checks, in order: gain consistency, reassembled LMI margins, the sampled
    sector bound, the sampled dissipation inequality, the supply-rate sign,
    and (unless skipped) the Monte Carlo region-of-attraction run.
    """
    cert = _cert_of(result)
    K = cert.K if K is None else np.atleast_2d(np.asarray(K, dtype=float))

    checks = [check_gain_consistency(cert, K)]
    lmi_check, margins = check_lmi_margins(model, cert, eps_pd=eps_pd, eps_n=eps_n)
    checks.append(lmi_check)
    checks.append(check_sector_inclusion(model, cert, samples=samples, seed=seed))
    checks.append(check_dissipation(model, cert, K, samples=samples, seed=seed))
    supply_check, schur = check_supply_sign(model, cert, K, samples=samples, seed=seed)
    checks.append(supply_check)

    roa = None
    if not skip_roa:
        roa = monte_carlo_roa(model, cert, K, n_traj=n_traj, t_final=t_final,
                              step=step, conv_tol=conv_tol, seed=seed)
        checks.append(CheckResult(
            name="monte-carlo-roa", passed=roa.passed,
            worst=max(r.max_level for r in roa.results) - 1.0,
            tol=roa.level_tol,
            count=sum(r.n_traj for r in roa.results),
            note=f"{len(roa.results)} uncertainty generators"))

    return VerificationReport(passed=all(c.passed for c in checks),
                              checks=tuple(checks), lmi_margins=margins,
                              schur=schur, roa=roa,
                              metrics=ellipsoid_metrics(cert.P))
