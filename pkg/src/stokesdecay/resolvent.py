"""Fourier-space resolvent solution (v^, pi^, h^) from data (f, d) at fixed lambda.

The trace w^_N of the no-surface problem enters through its two closed forms
(exponential and kernel form), h^ splits into f- and d-parts, and the fields
assemble from the multiplier tables against the separable kernel families
e^{-B(x+y)}, e^{-Bx}M(y), M(x)e^{-By}, M(x)M(y) (velocity) and the e^{-Ax}
pressure kernels.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.polynomial.legendre import leggauss

from .symbols import (PhysicalParams, SpectralPoint, SingularSymbolError,
                      mcal, dpoly, ldet, eval_multipliers)

__all__ = [
    "SpectralProfile",
    "ResolventSolution",
    "NearRootError",
    "make_profile",
    "wN_trace",
    "hhat",
    "resolve",
    "bc_residual",
]


class NearRootError(ArithmeticError):
    """|L(A,B)| fell below its floor: lambda is too close to a Lopatinskii zero."""


@dataclass(frozen=True)
class SpectralProfile:
    """f^(xi', y_N) on a composite quadrature grid over [0, Y_max]."""

    xi_prime: np.ndarray
    values: np.ndarray      # (ncomp, ny) complex
    y_nodes: np.ndarray
    y_weights: np.ndarray

    def __post_init__(self):
        if np.any(self.y_weights <= 0):
            raise ValueError("quadrature weights must be positive")
        if self.values.shape[1] != self.y_nodes.size:
            raise ValueError("profile values and nodes disagree")

    def integrate(self, kernel_vals: np.ndarray) -> np.ndarray:
        """int kernel(y) f^_K(y) dy for every component K; kernel (ny,)."""
        return (self.values * kernel_vals[None, :] * self.y_weights[None, :]).sum(axis=1)


def make_profile(xi_prime, component_funcs, y_max: float, npanels: int = 12,
                 nodes_per_panel: int = 16, tail_tol: float = 1e-12) -> SpectralProfile:
    """Sample callables f^_K(y) on composite Gauss-Legendre panels on [0, y_max].

    y_max must cover the data: the integrand mass beyond the last panel is
    checked against tail_tol via the sampled profile norm.
    """
    x, w = leggauss(nodes_per_panel)
    edges = np.linspace(0.0, y_max, npanels + 1)
    mid = 0.5 * (edges[1:] + edges[:-1])
    half = 0.5 * np.diff(edges)
    y = (mid[:, None] + half[:, None] * x[None, :]).ravel()
    wy = (half[:, None] * w[None, :]).ravel()
    vals = np.array([np.asarray(f(y), dtype=complex) for f in component_funcs])
    norm = float(np.sum(np.abs(vals) * wy))
    tail = float(np.sum(np.abs(vals[:, y > y_max - (y_max / npanels)]) *
                        wy[y > y_max - (y_max / npanels)]))
    if norm > 0 and tail > tail_tol * norm * 1e3:
        # tail mass in the final panel should be negligible; if not, Y_max is short
        raise ValueError(f"profile tail mass {tail:.2e} not negligible; increase y_max")
    return SpectralProfile(np.atleast_1d(np.asarray(xi_prime, dtype=float)), vals, y, wy)


@dataclass(frozen=True)
class ResolventSolution:
    vhat: np.ndarray        # (N, nx) complex velocity components
    pihat: np.ndarray       # (nx,) complex pressure
    hhat_f: complex
    hhat_d: complex
    lam: complex
    xi_prime: np.ndarray
    xN_nodes: np.ndarray

    @property
    def hhat(self) -> complex:
        return self.hhat_f + self.hhat_d


def _check_D(sp: SpectralPoint, floor=1e-14):
    D = dpoly(sp.A, sp.B)
    scale = max(1.0, (abs(sp.lam) ** 0.5 + sp.A) ** 3)
    if abs(D) < floor * scale:
        raise SingularSymbolError(f"D underflow at A={sp.A}, lambda={sp.lam}")
    return D


def _check_L(sp: SpectralPoint, params: PhysicalParams, floor=1e-14):
    L = ldet(sp.A, sp.B, params.gravity, params.surface_tension)
    scale = max(1.0, abs(sp.lam) * (abs(sp.lam) ** 0.5 + sp.A) ** 2
                + sp.A * params.restoring(sp.A))
    if abs(L) < floor * scale:
        raise NearRootError(f"L underflow at A={sp.A}, lambda={sp.lam}")
    return L


def wN_trace(sp: SpectralPoint, fprofile: SpectralProfile, form: str = "B-form") -> complex:
    """Boundary trace w^_N(xi', 0, lambda) of the no-surface problem."""
    A, B = sp.A, sp.B
    D = _check_D(sp)
    xi = sp.xi_prime
    ncomp = fprofile.values.shape[0]

    if form == "B-form":
        I_exp = fprofile.integrate(np.exp(-B * fprofile.y_nodes))
        I_m = fprofile.integrate(mcal(A, B, fprofile.y_nodes))
        tang = sum(1j * xi[k] * (B - A) / D * I_exp[k] for k in range(ncomp - 1))
        out = (tang
               + A * (B + A) / D * I_exp[-1]
               - sum(1j * xi[k] * (B * B + A * A) / D * I_m[k] for k in range(ncomp - 1))
               - A * (B * B + A * A) / D * I_m[-1])
    elif form == "A-form":
        I_expA = fprofile.integrate(np.exp(-A * fprofile.y_nodes))
        I_m = fprofile.integrate(mcal(A, B, fprofile.y_nodes))
        tang = sum(1j * xi[k] * (B - A) / D * I_expA[k] for k in range(ncomp - 1))
        out = (tang
               + A * (B + A) / D * I_expA[-1]
               - sum(2j * xi[k] * A * B / D * I_m[k] for k in range(ncomp - 1))
               - 2.0 * A**3 / D * I_m[-1])
    else:
        raise ValueError("form must be 'B-form' or 'A-form'")
    return complex(out)


def hhat(sp: SpectralPoint, fprofile: SpectralProfile | None, dhat: complex,
         params: PhysicalParams):
    """(h^f, h^d): the surface-height transform split by data source."""
    A, B = sp.A, sp.B
    L = _check_L(sp, params)
    hd = dpoly(A, B) / ((B + A) * L) * dhat

    hf = 0.0 + 0.0j
    if fprofile is not None:
        xi = sp.xi_prime
        ncomp = fprofile.values.shape[0]
        I_expA = fprofile.integrate(np.exp(-A * fprofile.y_nodes))
        I_m = fprofile.integrate(mcal(A, B, fprofile.y_nodes))
        hf = (-sum(1j * xi[k] * (B - A) / ((B + A) * L) * I_expA[k]
                   for k in range(ncomp - 1))
              - A / L * I_expA[-1]
              + sum(2j * xi[k] * A * B / ((B + A) * L) * I_m[k]
                    for k in range(ncomp - 1))
              + 2.0 * A**3 / ((B + A) * L) * I_m[-1])
    return complex(hf), complex(hd)


def resolve(sp: SpectralPoint, fprofile: SpectralProfile | None, dhat: complex,
            params: PhysicalParams, xN_nodes) -> ResolventSolution:
    """Assemble (v^, pi^, h^) at one spectral point on the given x_N nodes."""
    A, B = sp.A, sp.B
    N = params.dim
    x = np.asarray(xN_nodes, dtype=float)
    L = _check_L(sp, params)
    rest = params.restoring(A)

    expB_x = np.exp(-B * x)
    expA_x = np.exp(-A * x)
    m_x = np.where(x > 0, mcal(A, B, np.maximum(x, 1e-300)), 0.0)

    vhat = np.zeros((N, x.size), dtype=complex)
    pihat = np.zeros(x.size, dtype=complex)

    hf, hd = hhat(sp, fprofile, dhat, params)

    if fprofile is not None:
        tab = eval_multipliers(sp, params)
        I_expA = fprofile.integrate(np.exp(-A * fprofile.y_nodes))
        I_expB = fprofile.integrate(np.exp(-B * fprofile.y_nodes))
        I_m = fprofile.integrate(mcal(A, B, fprofile.y_nodes))
        for J in range(N):
            coef_B = (tab.V_BB[J] * I_expB + tab.V_BM[J] * I_m).sum()
            coef_M = (tab.V_MB[J] * I_expB + tab.V_MM[J] * I_m).sum()
            vhat[J] += rest / L * (coef_B * expB_x + coef_M * m_x)
        pihat += rest / L * ((tab.P_AA * I_expA).sum() * expA_x
                             + (tab.P_AM * I_m).sum() * expA_x)

    if dhat != 0:
        xi = sp.xi_prime
        S = B * B + A * A
        for j in range(N - 1):
            vhat[j] += (1j * xi[j] * rest / ((B + A) * L)
                        * (-(B - A) * expB_x + S * m_x) * dhat)
        vhat[N - 1] += (A * rest / ((B + A) * L)
                        * ((B + A) * expB_x - S * m_x) * dhat)
        pihat += S * rest / L * expA_x * dhat

    return ResolventSolution(vhat=vhat, pihat=pihat, hhat_f=hf, hhat_d=hd,
                             lam=sp.lam, xi_prime=sp.xi_prime, xN_nodes=x)


def bc_residual(sol: ResolventSolution, sp: SpectralPoint,
                fprofile: SpectralProfile | None, dhat: complex,
                params: PhysicalParams) -> float:
    """Relative defect of the kinematic boundary condition at x_N = 0.

    Checks lambda h^ + v^_N(0) = -w^_N(0) + d^, the surface equation of the
    reduced system.  Requires 0 to be the first x_N node.
    """
    if sol.xN_nodes[0] != 0.0:
        raise ValueError("bc_residual requires xN_nodes[0] == 0")
    wn = wN_trace(sp, fprofile, "B-form") if fprofile is not None else 0.0
    lhs = sol.lam * sol.hhat + sol.vhat[-1, 0]
    rhs = -wn + dhat
    scale = max(abs(lhs), abs(rhs), 1e-30)
    return float(abs(lhs - rhs) / scale)
