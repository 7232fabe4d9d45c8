"""Built-in benchmark models and a random well-posed model generator."""

from __future__ import annotations

import numpy as np

from .affine import AffineMatrix, BoxPolytope
from .model import DarModel

__all__ = [
    "poly2_model",
    "mimo_quadratic_model",
    "unstabilizable_model",
    "linear_saturated_model",
    "random_stable_model",
]


def poly2_model():
    """Two-state polynomial plant with a saturated integrator input channel.

        x1' = -x1 + x2/4 + (1 - 1.5 x1 - x2) x1^2 - (0.75 x1 + 0.5 x2) x2^2
        x2' = sat(v),   y = x1 - x2

    pi = (x1^2, x2^2), certified over |x_i| <= 0.9 with u_bar = 1.5. The open
    loop is not asymptotically stable (x2 is a pure integrator), so a
    stabilizing output feedback genuinely has work to do.
    """
    Z = np.zeros((2, 2))
    A1 = AffineMatrix([[-1.0, 0.25], [0.0, 0.0]])
    A2 = AffineMatrix(
        [[1.0, 0.0], [0.0, 0.0]],
        x_coeffs=[np.array([[-1.5, -0.75], [0.0, 0.0]]),
                  np.array([[-1.0, -0.5], [0.0, 0.0]])],
    )
    A3 = AffineMatrix([[0.0], [1.0]])
    Ups1 = AffineMatrix(Z, x_coeffs=[np.array([[1.0, 0.0], [0.0, 0.0]]),
                                     np.array([[0.0, 0.0], [0.0, 1.0]])])
    Ups2 = AffineMatrix(-np.eye(2))
    Ups3 = AffineMatrix(np.zeros((2, 1)))
    Sigma1 = AffineMatrix(Z, x_coeffs=[-M for M in Ups1.x_coeffs])
    Sigma2 = AffineMatrix(np.eye(2))
    return DarModel(
        A1, A2, A3, Ups1, Ups2, Ups3,
        C1=[[1.0, -1.0]], C2=[[0.0, 0.0]],
        u_bar=[1.5], X=BoxPolytope([0.9, 0.9]), D=BoxPolytope([]),
        Sigma1=Sigma1, Sigma2=Sigma2,
        pi_oracle=["x1^2", "x2^2"], name="poly2",
    )


def mimo_quadratic_model():
    """Two-input, two-output plant with quadratic couplings, an uncertain
    parameter entering the drift, and a nonlinear output map (C2 != 0).

        pi = (x1^2, x1 x2),  y = x + 0.1 pi,  |delta| <= 0.5
    """
    Z = np.zeros((2, 2))
    A1 = AffineMatrix([[-1.0, 0.2], [0.1, -1.2]],
                      delta_coeffs=[np.array([[0.1, 0.0], [0.0, 0.1]])])
    A2 = AffineMatrix([[0.1, 0.05], [0.05, -0.1]])
    A3 = AffineMatrix(np.eye(2))
    Ups1 = AffineMatrix(Z, x_coeffs=[np.array([[1.0, 0.0], [0.0, 0.0]]),
                                     np.array([[0.0, 0.0], [1.0, 0.0]])])
    Ups2 = AffineMatrix(-np.eye(2))
    Ups3 = AffineMatrix(np.zeros((2, 2)))
    Sigma1 = Ups1
    Sigma2 = Ups2
    return DarModel(
        A1, A2, A3, Ups1, Ups2, Ups3,
        C1=np.eye(2), C2=0.1 * np.eye(2),
        u_bar=[1.0, 1.0], X=BoxPolytope([0.5, 0.5]), D=BoxPolytope([0.5]),
        Sigma1=Sigma1, Sigma2=Sigma2,
        pi_oracle=["x1^2", "x1*x2"], name="mimo_quadratic",
    )


def unstabilizable_model():
    """Unstable scalar plant whose input column is identically zero.

    No feedback can render it dissipative, so gain searches must stall with a
    strictly positive relaxation level instead of succeeding.
    """
    A1 = AffineMatrix([[0.5]])
    A2 = AffineMatrix([[0.1]])
    A3 = AffineMatrix([[0.0]])
    Ups1 = AffineMatrix([[0.0]], x_coeffs=[np.array([[1.0]])])
    Ups2 = AffineMatrix([[-1.0]])
    Ups3 = AffineMatrix([[0.0]])
    return DarModel(
        A1, A2, A3, Ups1, Ups2, Ups3,
        C1=[[1.0]], C2=[[0.0]],
        u_bar=[1.0], X=BoxPolytope([0.8]), D=BoxPolytope([]),
        Sigma1=Ups1, Sigma2=Ups2,
        pi_oracle=["x1^2"], name="unstabilizable",
    )


def linear_saturated_model():
    """Scalar unstable linear plant (n_pi = 0) under saturated output feedback."""
    return DarModel(
        A1=AffineMatrix([[0.2]]),
        A2=AffineMatrix(np.zeros((1, 0))),
        A3=AffineMatrix([[1.0]]),
        Ups1=AffineMatrix(np.zeros((0, 1))),
        Ups2=AffineMatrix(np.zeros((0, 0))),
        Ups3=AffineMatrix(np.zeros((0, 1))),
        C1=[[1.0]], C2=np.zeros((1, 0)),
        u_bar=[1.0], X=BoxPolytope([0.5]), D=BoxPolytope([]),
        name="linear_saturated",
    )


def random_stable_model(seed, n=None, n_pi=None, m=None, p=None, l=None,
                        state_only_pi=None):
    """Random well-posed model with a gently nonlinear, robustly stable drift.

    The constant part of A1 is shifted to be Hurwitz with margin 1, the
    quadratic couplings are scaled to stay small on the state box, and
    Ups2 = -I + (small state-dependent perturbation), so the model is well
    posed by construction and a stabilizing certificate exists. Dimensions not
    given are drawn within the ranges n in 2..3, n_pi in 1..3, m in 1..2.
    """
    rng = np.random.default_rng(seed)
    n = int(n) if n is not None else int(rng.integers(2, 4))
    n_pi = int(n_pi) if n_pi is not None else int(rng.integers(1, 4))
    m = int(m) if m is not None else int(rng.integers(1, 3))
    p = int(p) if p is not None else int(rng.integers(1, min(n, 2) + 1))
    l = int(l) if l is not None else int(rng.integers(0, 2))
    if state_only_pi is None:
        state_only_pi = bool(rng.integers(0, 2))

    G = rng.normal(0.0, 1.0, (n, n))
    shift = np.max(np.linalg.eigvals(G).real) + 1.0
    A1c = G - shift * np.eye(n)
    A1d = [0.05 * rng.normal(0.0, 1.0, (n, n))] if l else []
    A1 = AffineMatrix(A1c, delta_coeffs=A1d)
    A2 = AffineMatrix(0.15 * rng.normal(0.0, 1.0, (n, n_pi)))
    A3 = AffineMatrix(rng.normal(0.0, 1.0, (n, m)))

    U1x = [0.3 * rng.normal(0.0, 1.0, (n_pi, n)) for _ in range(n)]
    Ups1 = AffineMatrix(np.zeros((n_pi, n)), x_coeffs=U1x)
    U2x = [0.05 * rng.normal(0.0, 1.0, (n_pi, n_pi)) for _ in range(n)]
    Ups2 = AffineMatrix(-np.eye(n_pi), x_coeffs=U2x)
    Ups3 = AffineMatrix(np.zeros((n_pi, m)))

    C1 = rng.normal(0.0, 1.0, (p, n))
    C2 = 0.05 * rng.normal(0.0, 1.0, (p, n_pi)) if rng.integers(0, 2) else np.zeros((p, n_pi))

    kwargs = {}
    if state_only_pi:
        # 0 = Ups1 x + Ups2 pi annihilates the full (input-free) pi vector
        kwargs = {"Sigma1": Ups1, "Sigma2": Ups2}

    return DarModel(
        A1, A2, A3, Ups1, Ups2, Ups3, C1=C1, C2=C2,
        u_bar=rng.uniform(0.8, 2.0, m),
        X=BoxPolytope(rng.uniform(0.3, 0.5, n)),
        D=BoxPolytope(rng.uniform(0.2, 0.4, l)) if l else BoxPolytope([]),
        name=f"random_{seed}", **kwargs,
    )
