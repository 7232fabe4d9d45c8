"""Matrix pencils affine in (x, delta) and vertex/facet geometry of box domains."""

from __future__ import annotations

import itertools

import numpy as np

__all__ = [
    "AffineMatrix",
    "BoxPolytope",
    "ExplicitPolytope",
    "product_vertices",
]


def _as_matrix(data, rows, cols, what):
    M = np.asarray(data, dtype=float)
    if M.size == 0:
        M = M.reshape(rows, cols) if rows * cols == 0 else M
    if M.shape != (rows, cols):
        raise ValueError(f"{what}: expected shape ({rows}, {cols}), got {M.shape}")
    return M


class AffineMatrix:
    """Matrix-valued map M(x, d) = const + sum_i x_i * x_coeffs[i] + sum_j d_j * delta_coeffs[j].

    Coefficient arrays are copied and marked read-only at construction, so
    instances can be shared freely across threads.
    """

    def __init__(self, const, x_coeffs=(), delta_coeffs=()):
        M0 = np.array(const, dtype=float)
        if M0.ndim != 2:
            raise ValueError("const must be a 2-d array")
        self.rows, self.cols = M0.shape
        self.const = M0
        self.x_coeffs = tuple(
            np.array(_as_matrix(M, self.rows, self.cols, f"x_coeffs[{i}]"))
            for i, M in enumerate(x_coeffs)
        )
        self.delta_coeffs = tuple(
            np.array(_as_matrix(M, self.rows, self.cols, f"delta_coeffs[{j}]"))
            for j, M in enumerate(delta_coeffs)
        )
        for M in (self.const, *self.x_coeffs, *self.delta_coeffs):
            M.setflags(write=False)
        # stacked copies speed up the batched path
        self._xstack = np.stack(self.x_coeffs) if self.x_coeffs else None
        self._dstack = np.stack(self.delta_coeffs) if self.delta_coeffs else None

    @property
    def shape(self):
        return (self.rows, self.cols)

    @property
    def n_x(self):
        return len(self.x_coeffs)

    @property
    def n_delta(self):
        return len(self.delta_coeffs)

    def is_zero(self, tol=0.0):
        """True if the map is identically zero (all coefficients within tol)."""
        mats = (self.const, *self.x_coeffs, *self.delta_coeffs)
        return all(np.max(np.abs(M), initial=0.0) <= tol for M in mats)

    def is_constant(self, tol=0.0):
        mats = (*self.x_coeffs, *self.delta_coeffs)
        return all(np.max(np.abs(M), initial=0.0) <= tol for M in mats)

    def evaluate(self, x, delta=()):
        """Evaluate at a single point. len(x) and len(delta) must match the coefficient lists."""
        x = np.asarray(x, dtype=float).ravel()
        d = np.asarray(delta, dtype=float).ravel()
        if x.size != self.n_x:
            raise ValueError(f"expected {self.n_x} state entries, got {x.size}")
        if d.size != self.n_delta:
            raise ValueError(f"expected {self.n_delta} uncertainty entries, got {d.size}")
        out = self.const.copy()
        for xi, M in zip(x, self.x_coeffs):
            out += xi * M
        for dj, M in zip(d, self.delta_coeffs):
            out += dj * M
        return out

    __call__ = evaluate

    def evaluate_batch(self, X, D=None):
        """Evaluate at a batch of points. X is (N, n_x), D is (N, n_delta); returns (N, rows, cols)."""
        X = np.asarray(X, dtype=float)
        N = X.shape[0]
        if X.shape != (N, self.n_x):
            raise ValueError(f"X must be (N, {self.n_x}), got {X.shape}")
        out = np.broadcast_to(self.const, (N, self.rows, self.cols)).copy()
        if self._xstack is not None:
            out += np.einsum("ni,irc->nrc", X, self._xstack)
        if self.n_delta:
            if D is None:
                raise ValueError(f"D must be (N, {self.n_delta}), got None")
            D = np.asarray(D, dtype=float)
            if D.shape != (N, self.n_delta):
                raise ValueError(f"D must be (N, {self.n_delta}), got {D.shape}")
            out += np.einsum("nj,jrc->nrc", D, self._dstack)
        return out


class BoxPolytope:
    """Box {z : |z_i| <= b_i} with b_i > 0, exposed as vertices and normalized facets a_k^T z <= 1."""

    def __init__(self, bounds):
        b = np.asarray(bounds, dtype=float).ravel()
        if np.any(b <= 0.0) or not np.all(np.isfinite(b)):
            raise ValueError("box bounds must be positive and finite")
        self.bounds = b
        b.setflags(write=False)
        self.dim = b.size

    def vertices(self):
        """All 2^dim sign combinations, lexicographic with -1 before +1.

        A zero-dimensional box has exactly one (empty) vertex so that product
        constructions stay non-degenerate.
        """
        if self.dim == 0:
            return [np.zeros(0)]
        return [
            self.bounds * np.asarray(signs)
            for signs in itertools.product((-1.0, 1.0), repeat=self.dim)
        ]

    def facets(self):
        """Facet rows a_k = +-e_i / b_i in the fixed order (+e_0, -e_0, +e_1, -e_1, ...)."""
        out = []
        for i in range(self.dim):
            e = np.zeros(self.dim)
            e[i] = 1.0 / self.bounds[i]
            out.append(e)
            out.append(-e)
        return out

    def contains(self, z, tol=0.0):
        z = np.asarray(z, dtype=float).ravel()
        if z.size != self.dim:
            raise ValueError(f"point has dimension {z.size}, box has {self.dim}")
        return bool(np.all(np.abs(z) <= self.bounds + tol))

    def sample(self, rng, count):
        """Uniform interior samples, shape (count, dim)."""
        if self.dim == 0:
            return np.zeros((count, 0))
        return rng.uniform(-self.bounds, self.bounds, size=(count, self.dim))


class ExplicitPolytope:
    """Polytope given directly by a vertex list and facet rows a_k (a_k^T z <= 1).

    Used for model files that carry a general vertex representation instead of
    box bounds. Every supplied vertex must satisfy every facet row.
    """

    def __init__(self, vertices, facets, tol=1e-9):
        V = [np.asarray(v, dtype=float).ravel() for v in vertices]
        A = [np.asarray(a, dtype=float).ravel() for a in facets]
        if not V:
            raise ValueError("at least one vertex is required")
        self.dim = V[0].size
        for v in V:
            if v.size != self.dim:
                raise ValueError("vertices have inconsistent dimensions")
        for a in A:
            if a.size != self.dim:
                raise ValueError("facet rows have inconsistent dimensions")
        for a in A:
            for v in V:
                if float(a @ v) > 1.0 + tol:
                    raise ValueError("vertex violates facet row a^T v <= 1")
        self._vertices = V
        self._facets = A
        for arr in (*V, *A):
            arr.setflags(write=False)

    def vertices(self):
        return list(self._vertices)

    def facets(self):
        return list(self._facets)

    def contains(self, z, tol=0.0):
        z = np.asarray(z, dtype=float).ravel()
        return all(float(a @ z) <= 1.0 + tol for a in self._facets)

    def sample(self, rng, count):
        """Random interior points as Dirichlet-weighted vertex combinations."""
        V = np.stack(self._vertices)
        w = rng.dirichlet(np.ones(len(self._vertices)), size=count)
        return w @ V


def product_vertices(X, D):
    """Vertex pairs (x_v, d_v) of the product X x D, X-major deterministic order."""
    return [(xv, dv) for xv in X.vertices() for dv in D.vertices()]
