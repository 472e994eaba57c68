"""Coefficient matrices for the flux-reconstruction scheme on [-1, 1].

Everything is precomputed once per polynomial order: Gauss-Legendre
solution points, the Lagrange-basis interpolation rows for the two element
faces, the differentiation matrix at the solution points (barycentric
form, with the negative-sum trick so constants are annihilated exactly),
and the correction matrix built from derivatives of the left/right Radau
polynomials — the correction family that recovers nodal DG. Mapped to a
reference element, the matrices are identical for every element, which is
what lets the solver reduce interpolation and differentiation to single
matrix-matrix products.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InvalidArgumentError

MAX_ORDER = 10


@dataclass(frozen=True)
class FROperators:
    """Reference-element operators for polynomial order ``p``."""

    order: int
    xi: np.ndarray  # (p+1,) solution-point coordinates
    weights: np.ndarray  # (p+1,) Gauss-Legendre quadrature weights
    interp_to_faces: np.ndarray  # (2, p+1); row 0 -> xi=-1, row 1 -> xi=+1
    diff: np.ndarray  # (p+1, p+1) nodal differentiation matrix
    correction: np.ndarray  # (p+1, 2); columns: left-face, right-face


def _barycentric_weights(xi: np.ndarray) -> np.ndarray:
    w = np.ones_like(xi)
    for j in range(xi.size):
        w[j] = 1.0 / np.prod(xi[j] - np.delete(xi, j))
    return w


def lagrange_eval(xi: np.ndarray, x: float) -> np.ndarray:
    """Values of the Lagrange cardinal polynomials on nodes ``xi`` at ``x``."""
    diffs = x - xi
    on_node = np.isclose(diffs, 0.0, atol=1e-14)
    if on_node.any():
        out = np.zeros_like(xi)
        out[np.argmax(on_node)] = 1.0
        return out
    w = _barycentric_weights(xi)
    terms = w / diffs
    return terms / terms.sum()


def _differentiation_matrix(xi: np.ndarray) -> np.ndarray:
    n = xi.size
    w = _barycentric_weights(xi)
    d = np.zeros((n, n))
    for i in range(n):
        for j in range(n):
            if i != j:
                d[i, j] = (w[j] / w[i]) / (xi[i] - xi[j])
        d[i, i] = -np.sum(d[i, np.arange(n) != i])
    return d


def _radau_correction_derivatives(p: int, xi: np.ndarray) -> np.ndarray:
    """Derivatives of the two correction functions at the solution points.

    Left-face correction: g_L = (-1)^p / 2 * (L_p - L_{p+1}); right-face:
    g_R = (L_p + L_{p+1}) / 2. These satisfy g_L(-1)=1, g_L(1)=0 and the
    mirror for g_R, and lift a unit face jump the same way a nodal DG
    scheme does.
    """
    coeff_p = np.zeros(p + 2)
    coeff_p[p] = 1.0
    coeff_p1 = np.zeros(p + 2)
    coeff_p1[p + 1] = 1.0
    leg_p = np.polynomial.legendre.Legendre(coeff_p)
    leg_p1 = np.polynomial.legendre.Legendre(coeff_p1)
    g_left = ((-1.0) ** p / 2.0) * (leg_p - leg_p1)
    g_right = 0.5 * (leg_p + leg_p1)
    out = np.empty((xi.size, 2))
    out[:, 0] = g_left.deriv()(xi)
    out[:, 1] = g_right.deriv()(xi)
    return out


def build_operators(p: int) -> FROperators:
    """Build the order-``p`` reference operators (1 <= p <= 10)."""
    if not isinstance(p, int) or not 1 <= p <= MAX_ORDER:
        raise InvalidArgumentError(f"polynomial order must be in 1..{MAX_ORDER}, got {p!r}")
    xi, weights = np.polynomial.legendre.leggauss(p + 1)
    interp = np.vstack([lagrange_eval(xi, -1.0), lagrange_eval(xi, 1.0)])
    diff = _differentiation_matrix(xi)
    correction = _radau_correction_derivatives(p, xi)
    return FROperators(
        order=p,
        xi=xi,
        weights=weights,
        interp_to_faces=interp,
        diff=diff,
        correction=correction,
    )
