"""Vertex LMI assembly for saturated output-feedback synthesis.

The decision blocks of the synthesis program are

    P, N   : n x n symmetric (Lyapunov matrix, dissipation weight)
    Q, S, R: supply-rate parameters (p x p symmetric, p x m, m x m symmetric)
    W      : m x m diagonal deadzone multiplier
    mult   : (n + n_pi + 2m) x n_pi Finsler multiplier for the algebraic rows
    Z      : n_pi_x x n_pi_x coupling multiplier for the sector condition
    Gbar_* : coefficients of the affine gain bound W G(x, d)
    Gpi_*  : coefficients of the affine bound on the pi_x channel
    lam    : scalar relaxation level (relaxed programs only)

Four constraint families are assembled over the vertices of X x D: the
dissipation inequality in (x, pi, v, phi) coordinates, the deadzone sector
inclusion per input channel, the inclusion of the level set {x'Px <= 1} in X,
and the sign condition on the supply rate under the current multiplier.
All expressions are affine in the decision blocks and structurally symmetric.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .affine import product_vertices

__all__ = [
    "BlockSpec",
    "DecisionRegistry",
    "LinearMatrixExpression",
    "LmiConstraint",
    "LmiProgram",
    "SchurCheck",
    "NUMPY_OPS",
    "build_phi",
    "build_gamma",
    "assemble_dissipativity",
    "assemble_sector",
    "assemble_polytope",
    "assemble_supply_rate",
    "build_synthesis_program",
    "ls_multiplier",
    "schur_stability_check",
    "qsr_scale",
]

STRICT_EPS_FACTOR = 1e-7  # strict inequalities become <= -eps I with eps = factor * scale


class _NumpyOps:
    """Stacking backend for numeric evaluation; the SDP adapter supplies its own."""

    @staticmethod
    def bmat(rows):
        return np.block(rows)


NUMPY_OPS = _NumpyOps()


def _sym(M):
    return 0.5 * (M + M.T)


def _sym_bmat(ops, lower):
    """Assemble a symmetric block matrix from its lower block triangle.

    lower[i] holds the i+1 blocks of block row i; the strictly upper blocks
    are the transposes of their mirrors, so the result is symmetric by
    construction (exactly, not to rounding).
    """
    k = len(lower)
    rows = []
    for i in range(k):
        row = list(lower[i])
        for j in range(i + 1, k):
            row.append(lower[j][i].T)
        rows.append(row)
    return ops.bmat(rows)


class LinearMatrixExpression:
    """Square symmetric matrix expression, affine in named decision blocks.

    Stored as a constant term plus a linear map per block, realized by a
    builder closure over numeric coefficient data. value() evaluates with
    numpy (missing blocks are zero-filled); the SDP backend evaluates the same
    builder on solver variables.
    """

    def __init__(self, size, block_shapes, builder):
        self.size = int(size)
        self.block_shapes = dict(block_shapes)
        self._builder = builder

    @property
    def blocks(self):
        return tuple(self.block_shapes)

    def build(self, blockmap, ops=NUMPY_OPS):
        return self._builder(blockmap, ops)

    def value(self, blockmap=None):
        bm = {name: np.zeros(shape) for name, shape in self.block_shapes.items()}
        if blockmap:
            for k, v in blockmap.items():
                if k in bm:
                    bm[k] = np.asarray(v, dtype=float)
        return np.asarray(self._builder(bm, NUMPY_OPS), dtype=float)

    def const_term(self):
        return self.value({})

    def contribution(self, name, value):
        """Linear-map image of one block value (the rest held at zero)."""
        return self.value({name: value}) - self.const_term()


@dataclass(frozen=True)
class LmiConstraint:
    """One matrix inequality: expr >= 0 ('psd') or expr <= -eps*I ('strict_neg')."""
    name: str
    expr: LinearMatrixExpression
    sense: str
    eps: float
    scale: float

    def normalized_value(self, blocks):
        """Numeric matrix whose PSD-ness is the declared inequality.

        Margins of strict constraints are measured against the underlying
        strict inequality expr < 0, not the eps-shifted solver surrogate.
        """
        E = self.expr.value(blocks)
        E = 0.5 * (E + E.T)
        return E if self.sense == "psd" else -E


def _make_constraint(name, expr, sense):
    const = expr.const_term()
    scale = max(1.0, float(np.max(np.abs(const), initial=0.0)))
    eps = STRICT_EPS_FACTOR * scale if sense == "strict_neg" else 0.0
    return LmiConstraint(name=name, expr=expr, sense=sense, eps=eps, scale=scale)


@dataclass(frozen=True)
class BlockSpec:
    name: str
    rows: int
    cols: int
    structure: str  # symmetric | full | diagonal | scalar


class DecisionRegistry:
    """Decision blocks of the synthesis program for one model.

    relaxed adds the scalar relaxation level; affine_gain_bound switches the
    gain-bound coefficients between a constant matrix and a fully affine map.
    eps_pd and eps_n are the positive-definiteness floors for P/R/W and N.
    """

    def __init__(self, model, relaxed=False, affine_gain_bound=True,
                 eps_pd=1e-7, eps_n=1e-6, norm_cap=1e3):
        d = model.dims
        self.n, self.n_pi, self.n_pi_x = d["n"], d["n_pi"], d["n_pi_x"]
        self.m, self.p, self.l = d["m"], d["p"], d["l"]
        self.relaxed = bool(relaxed)
        self.affine_gain_bound = bool(affine_gain_bound)
        self.eps_pd = float(eps_pd)
        self.eps_n = float(eps_n)
        self.norm_cap = None if norm_cap is None else float(norm_cap)

        n, n_pi, n_pi_x, m, p, l = self.n, self.n_pi, self.n_pi_x, self.m, self.p, self.l
        specs = [
            BlockSpec("P", n, n, "symmetric"),
            BlockSpec("N", n, n, "symmetric"),
            BlockSpec("Q", p, p, "symmetric"),
            BlockSpec("S", p, m, "full"),
            BlockSpec("R", m, m, "symmetric"),
            BlockSpec("W", m, m, "diagonal"),
        ]
        if n_pi:
            specs.append(BlockSpec("mult", n + n_pi + 2 * m, n_pi, "full"))
        if n_pi_x:
            specs.append(BlockSpec("Z", n_pi_x, n_pi_x, "full"))
        specs.append(BlockSpec("Gbar", m, n, "full"))
        gbar_names = ["Gbar"]
        gpi_names = []
        if n_pi_x:
            specs.append(BlockSpec("Gpi", m, n_pi_x, "full"))
            gpi_names.append("Gpi")
        if affine_gain_bound:
            for i in range(n):
                specs.append(BlockSpec(f"Gbar_x{i}", m, n, "full"))
                gbar_names.append(f"Gbar_x{i}")
            for j in range(l):
                specs.append(BlockSpec(f"Gbar_d{j}", m, n, "full"))
                gbar_names.append(f"Gbar_d{j}")
            if n_pi_x:
                for i in range(n):
                    specs.append(BlockSpec(f"Gpi_x{i}", m, n_pi_x, "full"))
                    gpi_names.append(f"Gpi_x{i}")
                for j in range(l):
                    specs.append(BlockSpec(f"Gpi_d{j}", m, n_pi_x, "full"))
                    gpi_names.append(f"Gpi_d{j}")
        if relaxed:
            specs.append(BlockSpec("lam", 1, 1, "scalar"))
        self._specs = {s.name: s for s in specs}
        self.gbar_names = tuple(gbar_names)
        self.gpi_names = tuple(gpi_names)

    def specs(self):
        return tuple(self._specs.values())

    def names(self):
        return tuple(self._specs)

    def shape(self, name):
        s = self._specs[name]
        return (s.rows, s.cols)

    def shapes_of(self, names):
        return {name: self.shape(name) for name in names}

    def zero_blocks(self):
        return {s.name: np.zeros((s.rows, s.cols)) for s in self._specs.values()}

    def random_blocks(self, rng, scale=1.0):
        """Structure-respecting random block values (for tests and probes)."""
        out = {}
        for s in self._specs.values():
            M = scale * rng.normal(size=(s.rows, s.cols))
            if s.structure == "symmetric":
                M = 0.5 * (M + M.T)
            elif s.structure == "diagonal":
                M = np.diag(np.diag(M))
            out[s.name] = M
        return out

    def basis(self, name):
        """Canonical free-parameter directions of a block, in matrix form."""
        s = self._specs[name]
        out = []
        if s.structure == "symmetric":
            for i in range(s.rows):
                for j in range(i, s.cols):
                    E = np.zeros((s.rows, s.cols))
                    E[i, j] = 1.0
                    E[j, i] = 1.0
                    out.append(E)
        elif s.structure == "diagonal":
            for i in range(s.rows):
                E = np.zeros((s.rows, s.cols))
                E[i, i] = 1.0
                out.append(E)
        else:  # full or scalar
            for i in range(s.rows):
                for j in range(s.cols):
                    E = np.zeros((s.rows, s.cols))
                    E[i, j] = 1.0
                    out.append(E)
        return out

    def gain_bound_expr(self, bm, x, delta):
        """W G(x, d) as an expression in the coefficient blocks."""
        G = bm["Gbar"]
        if self.affine_gain_bound:
            for i, xi in enumerate(np.asarray(x, dtype=float).ravel()):
                G = G + float(xi) * bm[f"Gbar_x{i}"]
            for j, dj in enumerate(np.asarray(delta, dtype=float).ravel()):
                G = G + float(dj) * bm[f"Gbar_d{j}"]
        return G

    def gpi_bound_expr(self, bm, x, delta):
        Gp = bm["Gpi"]
        if self.affine_gain_bound:
            for i, xi in enumerate(np.asarray(x, dtype=float).ravel()):
                Gp = Gp + float(xi) * bm[f"Gpi_x{i}"]
            for j, dj in enumerate(np.asarray(delta, dtype=float).ravel()):
                Gp = Gp + float(dj) * bm[f"Gpi_d{j}"]
        return Gp

    def definiteness_constraints(self):
        """P, R, W >= eps_pd I and N >= eps_n I as ordinary constraints."""
        out = []
        for name, eps in (("P", self.eps_pd), ("N", self.eps_n),
                          ("R", self.eps_pd), ("W", self.eps_pd)):
            k = self.shape(name)[0]

            def builder(bm, ops, name=name, eps=eps, k=k):
                return bm[name] - eps * np.eye(k)

            expr = LinearMatrixExpression(k, {name: (k, k)}, builder)
            out.append(_make_constraint(f"pd:{name}", expr, "psd"))
        return out

    def normalization_constraints(self):
        """Magnitude caps on P, Q, R, W, and the norm of S.

        The synthesis constraints leave the overall scale of the certificate
        blocks free along an unbounded ray (any feasible point scaled up stays
        feasible), which degrades solver conditioning and can stall the
        multiplier iteration. Constant caps remove the ray without affecting
        the certified gain, which is invariant under joint scaling of (S, R),
        and keep each iterate feasible for the next program.
        """
        if self.norm_cap is None:
            return []
        rho = self.norm_cap
        out = []
        for name, sign in (("P", -1.0), ("Q", -1.0), ("Q", 1.0),
                           ("R", -1.0), ("W", -1.0)):
            k = self.shape(name)[0]

            def builder(bm, ops, name=name, sign=sign, k=k, rho=rho):
                return rho * np.eye(k) + sign * bm[name]

            tag = f"cap:{name}" if sign < 0 else f"cap:{name}-"
            expr = LinearMatrixExpression(k, {name: (k, k)}, builder)
            out.append(_make_constraint(tag, expr, "psd"))

        p, m = self.p, self.m

        def s_builder(bm, ops, p=p, m=m, rho=rho):
            return ops.bmat([[rho * np.eye(p), bm["S"]],
                             [bm["S"].T, rho * np.eye(m)]])

        expr = LinearMatrixExpression(p + m, {"S": (p, m)}, s_builder)
        out.append(_make_constraint("cap:S", expr, "psd"))
        return out


def build_phi(model, registry, x, delta):
    """Dissipation block matrix at one vertex, before the Finsler term.

    Coordinates are z = (x, pi, v, phi) with phi the deadzone output; the pi
    row is dropped when the model has no algebraic variables.
    """
    n, n_pi, n_pi_x, m = model.n, model.n_pi, model.n_pi_x, model.m
    A1 = model.A1.evaluate(x, delta)
    A2 = model.A2.evaluate(x, delta)
    A3 = model.A3.evaluate(x, delta)
    C1, C2 = model.C1, model.C2

    def builder(bm, ops):
        P, Nw, Q, S, R, W = bm["P"], bm["N"], bm["Q"], bm["S"], bm["R"], bm["W"]
        Gb = registry.gain_bound_expr(bm, x, delta)
        PA = P @ A1
        p11 = PA + PA.T + Nw - _sym(C1.T @ Q @ C1)
        p31 = A3.T @ P - S.T @ C1
        p41 = A3.T @ P + Gb
        p33 = -R
        p43 = -W
        p44 = -2.0 * W
        if n_pi:
            p21 = A2.T @ P - C2.T @ Q @ C1
            p22 = -_sym(C2.T @ Q @ C2)
            p32 = -(S.T @ C2)
            if n_pi_x == 0:
                p42 = np.zeros((m, n_pi))
            else:
                Gp = registry.gpi_bound_expr(bm, x, delta)
                if n_pi_x < n_pi:
                    p42 = ops.bmat([[Gp, np.zeros((m, n_pi - n_pi_x))]])
                else:
                    p42 = Gp
            lower = [[p11], [p21, p22], [p31, p32, p33], [p41, p42, p43, p44]]
        else:
            lower = [[p11], [p31, p33], [p41, p43, p44]]
        return _sym_bmat(ops, lower)

    names = ["P", "N", "Q", "S", "R", "W", *registry.gbar_names, *registry.gpi_names]
    return LinearMatrixExpression(n + n_pi + 2 * m, registry.shapes_of(names), builder)


def build_gamma(model, x, delta):
    """Algebraic-row annihilator [Ups1 Ups2 Ups3 Ups3] at one vertex (numeric)."""
    U1 = model.Ups1.evaluate(x, delta)
    U2 = model.Ups2.evaluate(x, delta)
    U3 = model.Ups3.evaluate(x, delta)
    return np.hstack([U1, U2, U3, U3])


def assemble_dissipativity(model, registry):
    """Strict dissipation inequality at every vertex of X x D."""
    out = []
    for k, (xv, dv) in enumerate(product_vertices(model.X, model.D)):
        phi = build_phi(model, registry, xv, dv)
        if model.n_pi:
            Gam = build_gamma(model, xv, dv)

            def builder(bm, ops, phi=phi, Gam=Gam):
                E = phi.build(bm, ops)
                FG = bm["mult"] @ Gam
                return E + FG + FG.T

            shapes = dict(phi.block_shapes)
            shapes["mult"] = registry.shape("mult")
            expr = LinearMatrixExpression(phi.size, shapes, builder)
        else:
            expr = phi
        out.append(_make_constraint(f"dissipativity[v{k}]", expr, "strict_neg"))
    return out


def assemble_sector(model, registry):
    """Deadzone sector inclusion, one constraint per vertex and input channel.

    With state-only algebraic variables present the condition couples x and
    pi_x through Z; otherwise it reduces to a 2x2 block form in (x, channel).
    """
    n, n_pi_x, m = model.n, model.n_pi_x, model.m
    out = []
    for k, (xv, dv) in enumerate(product_vertices(model.X, model.D)):
        if n_pi_x:
            S1 = model.Sigma1.evaluate(xv, dv)
            S2 = model.Sigma2.evaluate(xv, dv)
        for i in range(m):
            ub2 = np.array([[1.0 / model.u_bar[i] ** 2]])
            if n_pi_x:

                def builder(bm, ops, S1=S1, S2=S2, i=i, ub2=ub2, xv=xv, dv=dv):
                    P, Z, W = bm["P"], bm["Z"], bm["W"]
                    gi = registry.gain_bound_expr(bm, xv, dv)[i:i + 1, :]
                    gpi = registry.gpi_bound_expr(bm, xv, dv)[i:i + 1, :]
                    ZS2 = Z @ S2
                    corner = 2.0 * W[i:i + 1, i:i + 1] - ub2
                    return _sym_bmat(ops, [[P], [Z @ S1, ZS2 + ZS2.T], [gi, gpi, corner]])

                names = ["P", "W", "Z", *registry.gbar_names, *registry.gpi_names]
                expr = LinearMatrixExpression(n + n_pi_x + 1, registry.shapes_of(names), builder)
            else:

                def builder(bm, ops, i=i, ub2=ub2, xv=xv, dv=dv):
                    P, W = bm["P"], bm["W"]
                    gi = registry.gain_bound_expr(bm, xv, dv)[i:i + 1, :]
                    corner = 2.0 * W[i:i + 1, i:i + 1] - ub2
                    return _sym_bmat(ops, [[P], [gi, corner]])

                names = ["P", "W", *registry.gbar_names]
                expr = LinearMatrixExpression(n + 1, registry.shapes_of(names), builder)
            out.append(_make_constraint(f"sector[v{k},ch{i}]", expr, "psd"))
    return out


def assemble_polytope(model, registry):
    """Inclusion of {x : x'Px <= 1} in X, one constraint per facet row."""
    n = model.n
    out = []
    for k, a in enumerate(model.X.facets()):
        ac = np.asarray(a, dtype=float).reshape(-1, 1)

        def builder(bm, ops, ac=ac):
            return ops.bmat([[bm["P"], ac], [ac.T, np.ones((1, 1))]])

        expr = LinearMatrixExpression(n + 1, {"P": (n, n)}, builder)
        out.append(_make_constraint(f"polytope[f{k}]", expr, "psd"))
    return out


def assemble_supply_rate(registry, Ls):
    """Supply-rate sign condition under the fixed multiplier Ls.

    In relaxed registries the scalar level lam shifts the output block, which
    keeps the program feasible while lam > 0 and certifies the sign once
    lam <= 0.
    """
    p, m = registry.p, registry.m
    Ls = np.asarray(Ls, dtype=float)
    if Ls.shape != (p + m, m):
        raise ValueError(f"Ls must be ({p + m}, {m}), got {Ls.shape}")
    D = np.zeros((p + m, p + m))
    D[:p, :p] = -np.eye(p)
    relaxed = registry.relaxed

    def builder(bm, ops):
        Q, S, R = bm["Q"], bm["S"], bm["R"]
        base = _sym_bmat(ops, [[Q], [S.T, R]])
        M = Ls @ ops.bmat([[S.T, R]])
        E = base + M + M.T
        if relaxed:
            E = E + bm["lam"][0, 0] * D
        return E

    names = ["Q", "S", "R"] + (["lam"] if relaxed else [])
    expr = LinearMatrixExpression(p + m, registry.shapes_of(names), builder)
    return _make_constraint("supply", expr, "strict_neg")


@dataclass(frozen=True)
class LmiProgram:
    """Assembled program: registry, constraints, and a linear objective.

    The objective is a sum of Frobenius inner products ((block, coeff) pairs)
    to minimize; empty means a pure feasibility problem.
    """
    registry: DecisionRegistry
    constraints: tuple
    objective: tuple = ()
    name: str = ""

    def __post_init__(self):
        names = set(self.registry.names())
        for c in self.constraints:
            extra = set(c.expr.blocks) - names
            if extra:
                raise ValueError(f"constraint {c.name} references unknown blocks {sorted(extra)}")
        for bname, _ in self.objective:
            if bname not in names:
                raise ValueError(f"objective references unknown block {bname}")

    def objective_value(self, blocks):
        return float(sum(np.sum(np.asarray(coef) * np.asarray(blocks[name]))
                         for name, coef in self.objective))


def build_synthesis_program(model, registry, Ls, objective=(), name=""):
    """All four constraint families plus definiteness floors and scale caps."""
    cons = []
    cons += assemble_dissipativity(model, registry)
    cons += assemble_sector(model, registry)
    cons += assemble_polytope(model, registry)
    cons.append(assemble_supply_rate(registry, Ls))
    cons += registry.definiteness_constraints()
    cons += registry.normalization_constraints()
    return LmiProgram(registry=registry, constraints=tuple(cons),
                      objective=tuple(objective), name=name)


def ls_multiplier(S0, R0):
    """Supply multiplier [-(R0^-1 S0')' ; -I] built from the previous iterate."""
    S0 = np.atleast_2d(np.asarray(S0, dtype=float))
    R0 = np.atleast_2d(np.asarray(R0, dtype=float))
    m = R0.shape[0]
    return np.vstack([-np.linalg.solve(R0, S0.T).T, -np.eye(m)])


def qsr_scale(Q, S, R):
    """Magnitude scale of a supply-rate triple, floored at one."""
    return max(1.0, float(np.max(np.abs(Q))), float(np.max(np.abs(S))),
               float(np.max(np.abs(R))))


@dataclass(frozen=True)
class SchurCheck:
    max_eig: float
    tol: float
    passed: bool


def schur_stability_check(Q, S, R, tol=None):
    """Largest eigenvalue of Q - S R^-1 S' against a tolerance.

    R must be positive definite (checked by Cholesky). The default tolerance
    is 1e-7 times the magnitude of the complement itself, floored at one, so
    an unpinned overall scale of (S, R) cannot loosen the test.
    """
    Q = np.atleast_2d(np.asarray(Q, dtype=float))
    S = np.atleast_2d(np.asarray(S, dtype=float))
    R = np.atleast_2d(np.asarray(R, dtype=float))
    try:
        np.linalg.cholesky(0.5 * (R + R.T))
    except np.linalg.LinAlgError:
        raise ValueError("R must be positive definite") from None
    M = Q - S @ np.linalg.solve(R, S.T)
    max_eig = float(np.max(np.linalg.eigvalsh(0.5 * (M + M.T))))
    if tol is None:
        tol = 1e-7 * max(1.0, float(np.max(np.abs(M))))
    return SchurCheck(max_eig=max_eig, tol=float(tol), passed=max_eig <= tol)
