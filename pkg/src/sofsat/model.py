"""Saturated rational plants in differential-algebraic form.

A model consists of affine-in-(x, delta) blocks

    xdot = A1(x,d) x + A2(x,d) pi + A3(x,d) sat(v)
       0 = Ups1(x,d) x + Ups2(x,d) pi + Ups3(x,d) sat(v)
       y = C1 x + C2 pi

over a state box X and an uncertainty box D, with per-channel symmetric input
saturation at u_bar. The auxiliary vector pi collects the rational/polynomial
nonlinearities; well-posedness means Ups2 is invertible on X x D. Optionally
the leading n_pi_x entries of pi (the input-free part) satisfy
0 = Sigma1(x,d) x + Sigma2(x,d) pi_x.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass

import numpy as np

from .affine import AffineMatrix, BoxPolytope, product_vertices

__all__ = [
    "DarModel",
    "WellPosednessError",
    "WellPosednessReport",
    "Trajectory",
    "ResidualReport",
    "ConstantDelta",
    "VertexCycleDelta",
    "PiecewiseConstantDelta",
    "SinusoidDelta",
    "saturate",
    "deadzone",
    "recover_pi",
    "closed_loop_signals",
    "closed_loop_derivative",
    "simulate",
    "simulate_batch",
    "residual_check",
    "validate_well_posedness",
    "monomial_oracle",
]


class WellPosednessError(RuntimeError):
    """The algebraic constraint is singular or nearly singular at a point of X x D."""

    def __init__(self, message, x=None, delta=None, cond=None):
        super().__init__(message)
        self.x = x
        self.delta = delta
        self.cond = cond


def saturate(v, u_bar):
    """Componentwise symmetric saturation at u_bar > 0."""
    v = np.asarray(v, dtype=float)
    u = np.asarray(u_bar, dtype=float)
    return np.clip(v, -u, u)


def deadzone(v, u_bar):
    """Deadzone phi(v) = sat(v) - v; zero inside the linear range."""
    return saturate(v, u_bar) - np.asarray(v, dtype=float)


def _coerce_affine(M, rows, cols, n, l, what):
    """Accept an AffineMatrix or a plain array; pad coefficient lists to (n, l)."""
    if not isinstance(M, AffineMatrix):
        M = AffineMatrix(np.asarray(M, dtype=float).reshape(rows, cols))
    if M.shape != (rows, cols):
        raise ValueError(f"{what}: expected shape ({rows}, {cols}), got {M.shape}")
    zero = np.zeros((rows, cols))
    if M.n_x == 0 and n > 0:
        M = AffineMatrix(M.const, [zero] * n, M.delta_coeffs)
    if M.n_delta == 0 and l > 0:
        M = AffineMatrix(M.const, M.x_coeffs, [zero] * l)
    if M.n_x != n or M.n_delta != l:
        raise ValueError(
            f"{what}: coefficient lists must have {n} state and {l} uncertainty "
            f"entries (or be omitted), got ({M.n_x}, {M.n_delta})"
        )
    return M


class DarModel:
    """Validated differential-algebraic model over X x D.

    Parameters
    ----------
    A1, A2, A3, Ups1, Ups2, Ups3 : AffineMatrix or array
        State, nonlinearity and input blocks of the differential and algebraic rows.
    C1, C2 : array
        Constant output map y = C1 x + C2 pi.
    u_bar : array
        Positive per-channel saturation levels, shape (m,).
    X, D : BoxPolytope or ExplicitPolytope
        State box (dim n) and uncertainty box (dim l, possibly empty).
    Sigma1, Sigma2 : AffineMatrix or array, optional
        Annihilator pair for the input-free block pi_x (rows = n_pi_x). Both or neither.
    pi_oracle : sequence of str or callable, optional
        Reference map (x, u) -> pi. A list of monomial strings such as
        "x1^2" or "-0.5*x1*x2" is compiled; a callable is taken as-is.

    Models where both Ups3 and C2 are nonzero are rejected: the output would
    enter its own definition through sat(v) and the loop has no closed form.
    """

    def __init__(self, A1, A2, A3, Ups1, Ups2, Ups3, C1, C2, u_bar, X, D=None,
                 Sigma1=None, Sigma2=None, pi_oracle=None, name=""):
        C1 = np.array(C1, dtype=float)
        if C1.ndim != 2:
            raise ValueError("C1 must be a 2-d array")
        self.p, self.n = C1.shape
        if self.n < 1 or self.p < 1:
            raise ValueError("need at least one state and one output")
        C2 = np.array(C2, dtype=float)
        if C2.ndim != 2 or C2.shape[0] != self.p:
            raise ValueError(f"C2 must have {self.p} rows")
        self.n_pi = C2.shape[1]
        u = np.array(u_bar, dtype=float).ravel()
        if u.size < 1 or np.any(u <= 0) or not np.all(np.isfinite(u)):
            raise ValueError("u_bar must be a nonempty vector of positive levels")
        self.m = u.size
        self.u_bar = u

        if D is None:
            D = BoxPolytope([])
        self.X, self.D = X, D
        if X.dim != self.n:
            raise ValueError(f"X has dimension {X.dim}, expected {self.n}")
        self.l = D.dim

        n, n_pi, m, l = self.n, self.n_pi, self.m, self.l
        self.A1 = _coerce_affine(A1, n, n, n, l, "A1")
        self.A2 = _coerce_affine(A2, n, n_pi, n, l, "A2")
        self.A3 = _coerce_affine(A3, n, m, n, l, "A3")
        self.Ups1 = _coerce_affine(Ups1, n_pi, n, n, l, "Ups1")
        self.Ups2 = _coerce_affine(Ups2, n_pi, n_pi, n, l, "Ups2")
        self.Ups3 = _coerce_affine(Ups3, n_pi, m, n, l, "Ups3")
        self.C1, self.C2 = C1, C2
        C1.setflags(write=False)
        C2.setflags(write=False)

        if (Sigma1 is None) != (Sigma2 is None):
            raise ValueError("Sigma1 and Sigma2 must be given together")
        if Sigma1 is not None:
            S1 = Sigma1 if isinstance(Sigma1, AffineMatrix) else AffineMatrix(np.atleast_2d(Sigma1))
            self.n_pi_x = S1.rows
            if self.n_pi_x > n_pi:
                raise ValueError("n_pi_x cannot exceed n_pi")
            self.Sigma1 = _coerce_affine(Sigma1, self.n_pi_x, n, n, l, "Sigma1")
            self.Sigma2 = _coerce_affine(Sigma2, self.n_pi_x, self.n_pi_x, n, l, "Sigma2")
        else:
            self.n_pi_x = 0
            self.Sigma1 = None
            self.Sigma2 = None

        self._c2_zero = not np.any(C2)
        if not self.Ups3.is_zero() and not self._c2_zero:
            raise ValueError(
                "unsupported model: Ups3 and C2 are both nonzero, so y depends on "
                "sat(K y) implicitly; set one of them to zero"
            )

        self.pi_oracle_exprs = None
        if pi_oracle is None:
            self.pi_oracle = None
        elif callable(pi_oracle):
            self.pi_oracle = pi_oracle
        else:
            self.pi_oracle_exprs = tuple(str(s) for s in pi_oracle)
            if len(self.pi_oracle_exprs) != n_pi:
                raise ValueError(f"pi_oracle needs {n_pi} entries, got {len(self.pi_oracle_exprs)}")
            self.pi_oracle = monomial_oracle(self.pi_oracle_exprs, n)
        self.name = name

    @property
    def dims(self):
        return {"n": self.n, "n_pi": self.n_pi, "n_pi_x": self.n_pi_x,
                "m": self.m, "p": self.p, "l": self.l}


_MONOMIAL_FACTOR = re.compile(r"([+-]?)x(\d+)(?:\^(\d+))?$")


def monomial_oracle(exprs, n):
    """Compile monomial strings over x1..xn into a callable (x, u) -> vector.

    Each entry is a product of an optional numeric coefficient and factors
    xK or xK^P, joined by '*'. Only state variables are allowed.
    """
    terms = []
    for s in exprs:
        coeff = 1.0
        powers = np.zeros(n)
        for tok in str(s).replace(" ", "").split("*"):
            if not tok:
                raise ValueError(f"malformed monomial {s!r}")
            mt = _MONOMIAL_FACTOR.match(tok)
            if mt:
                if mt.group(1) == "-":
                    coeff = -coeff
                idx = int(mt.group(2)) - 1
                if not 0 <= idx < n:
                    raise ValueError(f"monomial {s!r} references x{idx + 1}, model has {n} states")
                powers[idx] += int(mt.group(3) or 1)
            else:
                try:
                    coeff *= float(tok)
                except ValueError:
                    raise ValueError(f"malformed monomial factor {tok!r} in {s!r}") from None
        terms.append((coeff, powers))

    def oracle(x, u=None):
        x = np.asarray(x, dtype=float).ravel()
        return np.array([c * np.prod(x ** p) for c, p in terms])

    return oracle


def recover_pi(model, x, delta, u_sat, cond_cap=1e8):
    """Solve the algebraic row for pi = -Ups2^{-1} (Ups1 x + Ups3 u_sat).

    Raises WellPosednessError if Ups2 is singular or its condition number
    exceeds cond_cap at the given point.
    """
    if model.n_pi == 0:
        return np.zeros(0)
    U2 = model.Ups2.evaluate(x, delta)
    rhs = model.Ups1.evaluate(x, delta) @ np.asarray(x, float).ravel()
    rhs = rhs + model.Ups3.evaluate(x, delta) @ np.asarray(u_sat, float).ravel()
    cond = np.linalg.cond(U2)
    if not np.isfinite(cond) or cond > cond_cap:
        raise WellPosednessError(
            f"algebraic constraint ill-conditioned (cond={cond:.3e}) at x={x}, delta={delta}",
            x=np.asarray(x, float), delta=np.asarray(delta, float), cond=cond)
    try:
        return np.linalg.solve(U2, -rhs)
    except np.linalg.LinAlgError as exc:
        raise WellPosednessError(
            f"algebraic constraint singular at x={x}, delta={delta}",
            x=np.asarray(x, float), delta=np.asarray(delta, float), cond=cond) from exc


@dataclass(frozen=True)
class LoopSignals:
    """One closed-loop evaluation: derivative plus every intermediate signal."""
    xdot: np.ndarray
    y: np.ndarray
    v: np.ndarray
    u: np.ndarray          # sat(v)
    pi: np.ndarray
    sat_active: np.ndarray  # boolean per channel


def closed_loop_signals(model, K, x, delta=(), cond_cap=1e8):
    """Evaluate the loop v = K y at one point and return all signals.

    The algebraic loop is broken by structure: with C2 = 0 the output is known
    before pi; otherwise Ups3 = 0 (enforced at construction) and pi is known
    before the input.
    """
    x = np.asarray(x, dtype=float).ravel()
    K = np.atleast_2d(np.asarray(K, dtype=float))
    if model._c2_zero:
        y = model.C1 @ x
        v = K @ y
        u = saturate(v, model.u_bar)
        pi = recover_pi(model, x, delta, u, cond_cap)
    else:
        pi = recover_pi(model, x, delta, np.zeros(model.m), cond_cap)
        y = model.C1 @ x + model.C2 @ pi
        v = K @ y
        u = saturate(v, model.u_bar)
    xdot = model.A1.evaluate(x, delta) @ x + model.A3.evaluate(x, delta) @ u
    if model.n_pi:
        xdot = xdot + model.A2.evaluate(x, delta) @ pi
    return LoopSignals(xdot=xdot, y=y, v=v, u=u, pi=pi,
                       sat_active=np.abs(v) > model.u_bar)


def closed_loop_derivative(model, K, x, delta=(), cond_cap=1e8):
    """xdot of the saturated loop at one point."""
    return closed_loop_signals(model, K, x, delta, cond_cap).xdot


def closed_loop_batch(model, K, X, D=None):
    """Vectorized loop evaluation. X is (N, n), D is (N, l); returns arrays

    (Xdot, Y, V, U, Pi) with leading dimension N. No conditioning check is
    performed here; non-finite results are left to the caller to detect.
    """
    X = np.asarray(X, dtype=float)
    N = X.shape[0]
    D = np.zeros((N, 0)) if D is None else np.asarray(D, dtype=float)
    K = np.atleast_2d(np.asarray(K, dtype=float))

    def solve_pi(U):
        if model.n_pi == 0:
            return np.zeros((N, 0))
        U2 = model.Ups2.evaluate_batch(X, D)
        rhs = np.einsum("nij,nj->ni", model.Ups1.evaluate_batch(X, D), X)
        rhs = rhs + np.einsum("nij,nj->ni", model.Ups3.evaluate_batch(X, D), U)
        return np.linalg.solve(U2, -rhs[..., None])[..., 0]

    if model._c2_zero:
        Y = X @ model.C1.T
        V = Y @ K.T
        U = saturate(V, model.u_bar)
        Pi = solve_pi(U)
    else:
        Pi = solve_pi(np.zeros((N, model.m)))
        Y = X @ model.C1.T + Pi @ model.C2.T
        V = Y @ K.T
        U = saturate(V, model.u_bar)
    Xdot = np.einsum("nij,nj->ni", model.A1.evaluate_batch(X, D), X)
    Xdot += np.einsum("nij,nj->ni", model.A3.evaluate_batch(X, D), U)
    if model.n_pi:
        Xdot += np.einsum("nij,nj->ni", model.A2.evaluate_batch(X, D), Pi)
    return Xdot, Y, V, U, Pi


# --- uncertainty signals ----------------------------------------------------

class DeltaSignal:
    """Time function for delta; batch(t, count) broadcasts unless overridden."""

    def __call__(self, t):
        raise NotImplementedError

    def batch(self, t, count):
        return np.broadcast_to(self(t), (count, np.asarray(self(t)).size)).copy()


class ConstantDelta(DeltaSignal):
    def __init__(self, value):
        self.value = np.asarray(value, dtype=float).ravel()

    def __call__(self, t):
        return self.value


class VertexCycleDelta(DeltaSignal):
    """Piecewise constant, cycling through the vertex list with a fixed dwell."""

    def __init__(self, polytope, dwell=1.0):
        self.vertices = polytope.vertices()
        self.dwell = float(dwell)

    def __call__(self, t):
        idx = int(t / self.dwell) % len(self.vertices)
        return self.vertices[idx]


class PiecewiseConstantDelta(DeltaSignal):
    """Random value in the box, redrawn every dwell interval.

    Values are a pure function of (seed, interval index, trajectory index),
    so evaluation order does not matter and runs are reproducible.
    """

    def __init__(self, polytope, dwell=1.0, seed=0):
        self.bounds = np.asarray(polytope.bounds, dtype=float)
        self.dwell = float(dwell)
        self.seed = int(seed)

    def _draw(self, bucket, count):
        rng = np.random.default_rng((self.seed, bucket))
        if self.bounds.size == 0:
            return np.zeros((count, 0))
        return rng.uniform(-self.bounds, self.bounds, size=(count, self.bounds.size))

    def __call__(self, t):
        return self._draw(int(t / self.dwell), 1)[0]

    def batch(self, t, count):
        return self._draw(int(t / self.dwell), count)


class SinusoidDelta(DeltaSignal):
    """delta_j(t) = b_j sin(w_j t + phase_j), staying inside the box."""

    def __init__(self, polytope, freqs=None, phases=None):
        self.bounds = np.asarray(polytope.bounds, dtype=float)
        k = self.bounds.size
        self.freqs = np.asarray(freqs, float) if freqs is not None else 1.0 + 0.618 * np.arange(k)
        self.phases = np.asarray(phases, float) if phases is not None else np.zeros(k)

    def __call__(self, t):
        return self.bounds * np.sin(self.freqs * t + self.phases)


# --- simulation ---------------------------------------------------------------

@dataclass
class Trajectory:
    """Fixed-step closed-loop run. Arrays share the leading time dimension."""
    t: np.ndarray
    x: np.ndarray
    y: np.ndarray
    v: np.ndarray
    u: np.ndarray
    sat_active: np.ndarray
    diverged: bool = False
    divergence_time: float | None = None


def simulate_batch(model, K, X0, t_final, step=1e-3, delta_signal=None,
                   divergence_cap=1e6, quad_form=None):
    """Integrate a batch of initial states with classical fixed-step RK4.

    Returns (Xf, diverged, div_time): final states (frozen at the step where a
    trajectory left the norm cap or went non-finite), a boolean mask and the
    per-trajectory divergence times (nan if none). With quad_form given (a
    symmetric n x n matrix), a fourth array holds the running maximum of
    x' quad_form x over each trajectory, for invariance checks.
    """
    X = np.array(X0, dtype=float)
    N = X.shape[0]
    h = float(step)
    n_steps = max(1, int(math.ceil(float(t_final) / h)))
    sig = delta_signal if delta_signal is not None else ConstantDelta(np.zeros(model.l))
    alive = np.ones(N, dtype=bool)
    div_time = np.full(N, np.nan)
    Qf = None if quad_form is None else np.asarray(quad_form, dtype=float)
    qmax = None if Qf is None else np.einsum("bi,ij,bj->b", X, Qf, X)

    def f(Z, D):
        return closed_loop_batch(model, K, Z, D)[0]

    with np.errstate(all="ignore"):
        for k in range(n_steps):
            if not alive.any():
                break
            t = k * h
            Zs = np.where(alive[:, None], X, 0.0)
            D0 = sig.batch(t, N)
            Dh = sig.batch(t + 0.5 * h, N)
            D1 = sig.batch(t + h, N)
            k1 = f(Zs, D0)
            k2 = f(Zs + 0.5 * h * k1, Dh)
            k3 = f(Zs + 0.5 * h * k2, Dh)
            k4 = f(Zs + h * k3, D1)
            Xn = Zs + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
            bad = alive & (~np.all(np.isfinite(Xn), axis=1)
                           | (np.linalg.norm(np.nan_to_num(Xn), axis=1) > divergence_cap))
            div_time[bad] = t + h
            ok = alive & ~bad
            X[ok] = Xn[ok]
            alive &= ~bad
            if qmax is not None and ok.any():
                qv = np.einsum("bi,ij,bj->b", Xn, Qf, Xn)
                qmax[ok] = np.maximum(qmax[ok], qv[ok])
    diverged = ~alive & np.isfinite(div_time)
    if qmax is None:
        return X, diverged, div_time
    return X, diverged, div_time, qmax


def simulate(model, K, x0, t_final, step=1e-3, delta_signal=None,
             divergence_cap=1e6):
    """Single-trajectory RK4 run with full per-sample records.

    On divergence (norm above divergence_cap or non-finite state) the recorded
    arrays are truncated at the offending step and the trajectory is flagged.
    """
    x = np.asarray(x0, dtype=float).ravel()
    if x.size != model.n:
        raise ValueError(f"x0 has dimension {x.size}, model has {model.n} states")
    h = float(step)
    if h <= 0 or t_final <= 0:
        raise ValueError("step and t_final must be positive")
    n_steps = max(1, int(math.ceil(float(t_final) / h)))
    sig = delta_signal if delta_signal is not None else ConstantDelta(np.zeros(model.l))

    ts = np.empty(n_steps + 1)
    xs = np.empty((n_steps + 1, model.n))
    ds = np.empty((n_steps + 1, model.l))
    ts[0], xs[0], ds[0] = 0.0, x, sig(0.0)
    diverged = False
    div_time = None
    count = 1

    def f(z, d):
        return closed_loop_batch(model, K, z[None, :], d[None, :])[0][0]

    with np.errstate(all="ignore"):
        for k in range(n_steps):
            t = k * h
            d0, dh, d1 = sig(t), sig(t + 0.5 * h), sig(t + h)
            k1 = f(x, d0)
            k2 = f(x + 0.5 * h * k1, dh)
            k3 = f(x + 0.5 * h * k2, dh)
            k4 = f(x + h * k3, d1)
            xn = x + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
            if not np.all(np.isfinite(xn)) or np.linalg.norm(np.nan_to_num(xn)) > divergence_cap:
                diverged = True
                div_time = t + h
                break
            x = xn
            ts[count], xs[count], ds[count] = t + h, x, d1
            count += 1

    ts, xs, ds = ts[:count], xs[:count], ds[:count]
    _, Y, V, U, _ = closed_loop_batch(model, K, xs, ds)
    return Trajectory(t=ts, x=xs, y=Y, v=V, u=U,
                      sat_active=np.abs(V) > model.u_bar,
                      diverged=diverged, divergence_time=div_time)


# --- model-level checks -------------------------------------------------------

@dataclass(frozen=True)
class ResidualReport:
    max_dar_residual: float
    max_pi_mismatch: float
    count: int


def residual_check(model, samples):
    """Compare the algebraic rows against the model's pi oracle.

    samples is an iterable of (x, delta, u_sat) triples. Reports the worst
    residual of Ups1 x + Ups2 pi_oracle + Ups3 u and the worst gap between the
    oracle and recover_pi. Zero samples give zero residuals.
    """
    if model.pi_oracle is None:
        raise ValueError("model has no pi oracle to check against")
    worst_res = 0.0
    worst_gap = 0.0
    count = 0
    for x, delta, u in samples:
        x = np.asarray(x, dtype=float).ravel()
        pio = np.asarray(model.pi_oracle(x, u), dtype=float).ravel()
        res = (model.Ups1.evaluate(x, delta) @ x
               + model.Ups2.evaluate(x, delta) @ pio
               + model.Ups3.evaluate(x, delta) @ np.asarray(u, float).ravel())
        worst_res = max(worst_res, float(np.max(np.abs(res), initial=0.0)))
        gap = pio - recover_pi(model, x, delta, u)
        worst_gap = max(worst_gap, float(np.max(np.abs(gap), initial=0.0)))
        count += 1
    return ResidualReport(worst_res, worst_gap, count)


def draw_residual_samples(model, count, seed=0):
    """Random (x, delta, u_sat) triples over X x D with admissible inputs."""
    rng = np.random.default_rng(seed)
    xs = model.X.sample(rng, count)
    ds = model.D.sample(rng, count)
    us = rng.uniform(-model.u_bar, model.u_bar, size=(count, model.m))
    return [(xs[i], ds[i], us[i]) for i in range(count)]


@dataclass(frozen=True)
class WellPosednessReport:
    passed: bool
    max_cond: float
    worst_point: tuple
    sigma2_max_cond: float
    points_checked: int
    cond_cap: float


def validate_well_posedness(model, grid_per_axis=5, cond_cap=1e8,
                            max_points=20000, seed=0):
    """Check invertibility of Ups2 (and Sigma2) over X x D.

    Evaluates all product vertices plus a grid with grid_per_axis points per
    axis; if the full grid would exceed max_points, a seeded uniform sample of
    max_points interior points is used instead.
    """
    pts = [(np.asarray(xv, float), np.asarray(dv, float))
           for xv, dv in product_vertices(model.X, model.D)]
    dim = model.n + model.l
    boxes = hasattr(model.X, "bounds") and (model.l == 0 or hasattr(model.D, "bounds"))
    if grid_per_axis ** dim <= max_points and boxes:
        axes = [np.linspace(-b, b, grid_per_axis) for b in model.X.bounds]
        if model.l:
            axes += [np.linspace(-b, b, grid_per_axis) for b in model.D.bounds]
        mesh = np.meshgrid(*axes, indexing="ij")
        grid = np.stack([g.ravel() for g in mesh], axis=1)
        pts += [(row[:model.n], row[model.n:]) for row in grid]
    else:
        rng = np.random.default_rng(seed)
        xs = model.X.sample(rng, max_points)
        ds = model.D.sample(rng, max_points)
        pts += [(xs[i], ds[i]) for i in range(max_points)]

    max_cond = 0.0
    worst = (None, None)
    s2_max = 0.0
    for x, d in pts:
        if model.n_pi:
            c = float(np.linalg.cond(model.Ups2.evaluate(x, d)))
            if not np.isfinite(c):
                c = np.inf
            if c > max_cond:
                max_cond, worst = c, (x, d)
        if model.n_pi_x:
            c2 = float(np.linalg.cond(model.Sigma2.evaluate(x, d)))
            s2_max = max(s2_max, c2 if np.isfinite(c2) else np.inf)
    passed = max_cond <= cond_cap and s2_max <= cond_cap
    return WellPosednessReport(passed=passed, max_cond=max_cond, worst_point=worst,
                               sigma2_max_cond=s2_max, points_checked=len(pts),
                               cond_cap=cond_cap)
