"""Closed-form scalar symbols of the half-space problem.

Everything downstream (root solving, contour integrands, resolvent assembly)
reduces to the five scalars A, B, M(a), D(A,B), L(A,B) and the boundary
multiplier tables.  All evaluators here broadcast over numpy arrays so the
semigroup sweeps can run vectorized over frequency grids and contour nodes.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from numpy.polynomial.legendre import leggauss

__all__ = [
    "PhysicalParams",
    "SpectralPoint",
    "MultiplierTable",
    "CutoffPair",
    "SingularSymbolError",
    "make_spectral_point",
    "principal_sqrt",
    "mcal",
    "dpoly",
    "ldet",
    "eval_M",
    "eval_D",
    "eval_L",
    "eval_multipliers",
    "sector_samples",
    "branch_constant",
]

# Gauss-Legendre rule on [0, 1] for the integral form of M(a); 16 nodes keep
# the entire-integrand error below machine precision for |B - A| a < 1e-3.
_GL_NODES, _GL_WEIGHTS = leggauss(16)
_GL01_NODES = 0.5 * (_GL_NODES + 1.0)
_GL01_WEIGHTS = 0.5 * _GL_WEIGHTS

# below this, the difference quotient for M(a) loses too many digits
M_CANCEL_THRESHOLD = 1e-3


class SingularSymbolError(ArithmeticError):
    """Raised when a multiplier denominator is below its admissible floor."""


@dataclass(frozen=True)
class PhysicalParams:
    """Gravity, capillarity and space dimension of the half-space problem."""

    gravity: float = 1.0
    surface_tension: float = 1.0
    dim: int = 2

    def __post_init__(self):
        if not (np.isfinite(self.gravity) and self.gravity > 0):
            raise ValueError("gravity must be positive")
        if not (np.isfinite(self.surface_tension) and self.surface_tension > 0):
            raise ValueError("surface_tension must be positive")
        if self.dim < 2:
            raise ValueError("dimension must be >= 2")

    def restoring(self, A):
        """g + sigma*A^2, the restoring coefficient at tangential frequency A."""
        return self.gravity + self.surface_tension * np.asarray(A) ** 2


@dataclass(frozen=True)
class SpectralPoint:
    """A (xi', lambda) node with A = |xi'| and B = sqrt(lambda + A^2), Re B >= 0."""

    xi_prime: np.ndarray
    lam: complex
    A: float
    B: complex

    def __post_init__(self):
        object.__setattr__(self, "xi_prime", np.atleast_1d(np.asarray(self.xi_prime, dtype=float)))


def principal_sqrt(z):
    """Principal square root with Re >= 0; on the negative real axis pick +i.

    The tie-break matches continuity from the upper half plane, which is the
    branch the low-frequency root asymptotics live on.
    """
    z = np.asarray(z, dtype=complex)
    # normalize -0.0 imaginary parts so the branch cut resolves upward
    z = np.where(z.imag == 0.0, z.real + 0.0j, z)
    return np.sqrt(z)


def make_spectral_point(xi_prime, lam, params: PhysicalParams) -> SpectralPoint:
    xi = np.atleast_1d(np.asarray(xi_prime, dtype=float))
    lam = complex(lam)
    if xi.size != params.dim - 1:
        raise ValueError(f"xi_prime must have length {params.dim - 1}")
    if not (np.all(np.isfinite(xi)) and np.isfinite(lam)):
        raise ValueError("non-finite spectral inputs")
    A = float(np.linalg.norm(xi))
    B = complex(principal_sqrt(lam + A * A))
    return SpectralPoint(xi_prime=xi, lam=lam, A=A, B=B)


def mcal(A, B, a, order: int = 0):
    """The kernel M(a) = (e^{-Ba} - e^{-Aa})/(B - A) and its a-derivatives.

    Broadcasts over A, B, a.  When |B - A|*a is small the difference quotient
    is replaced by the Gauss-Legendre value of -a * int_0^1 e^{-(B t + A(1-t))a} dt,
    which has no cancellation.
    """
    A = np.asarray(A, dtype=complex)
    B = np.asarray(B, dtype=complex)
    a = np.asarray(a, dtype=float)
    if np.any(a <= 0):
        raise ValueError("a must be positive")
    A, B, a = np.broadcast_arrays(A, B, a)

    diff = B - A
    small = np.abs(diff) * a < M_CANCEL_THRESHOLD
    safe = np.where(small, 1.0, diff)
    m = (np.exp(-B * a) - np.exp(-A * a)) / safe

    if np.any(small):
        # cancellation-free integral form, evaluated only where needed
        As, Bs, asub = A[small], B[small], a[small]
        acc = np.zeros(As.shape, dtype=complex)
        for node, w in zip(_GL01_NODES, _GL01_WEIGHTS):
            acc += w * np.exp(-(Bs * node + As * (1.0 - node)) * asub)
        m = np.array(m)
        m[small] = -asub * acc

    if order == 0:
        out = m
    elif order == 1:
        out = -(np.exp(-B * a) + A * m)
    elif order == 2:
        out = (B + A) * np.exp(-B * a) + A**2 * m
    else:
        raise ValueError("order must be 0, 1 or 2")
    return out if out.shape else complex(out)


def dpoly(A, B):
    """D(A,B) = B^3 + A B^2 + 3 A^2 B - A^3."""
    A = np.asarray(A, dtype=complex)
    B = np.asarray(B, dtype=complex)
    out = B**3 + A * B**2 + 3.0 * A**2 * B - A**3
    return out if out.shape else complex(out)


def ldet(A, B, gravity, surface_tension):
    """Lopatinskii determinant L(A,B) = (B - A) D(A,B) + A (g + sigma A^2)."""
    A = np.asarray(A, dtype=complex)
    B = np.asarray(B, dtype=complex)
    out = (B - A) * dpoly(A, B) + A * (gravity + surface_tension * A**2)
    return out if out.shape else complex(out)


def eval_M(sp: SpectralPoint, a: float, order: int = 0) -> complex:
    return complex(mcal(sp.A, sp.B, a, order=order))


def eval_D(sp: SpectralPoint) -> complex:
    return complex(dpoly(sp.A, sp.B))


def eval_L(sp: SpectralPoint, params: PhysicalParams) -> complex:
    return complex(ldet(sp.A, sp.B, params.gravity, params.surface_tension))


@dataclass(frozen=True)
class MultiplierTable:
    """Boundary multiplier tables; V_* are (N,N), P_* are (N,)."""

    V_BB: np.ndarray
    V_BM: np.ndarray
    V_MB: np.ndarray
    V_MM: np.ndarray
    P_AA: np.ndarray
    P_AM: np.ndarray


def eval_multipliers(sp: SpectralPoint, params: PhysicalParams,
                     floor: float = 1e-14) -> MultiplierTable:
    """Populate the full V/P table at one spectral point.

    All entries carry 1/D(A,B); |D| below floor*max(1,(|lambda|^{1/2}+A)^3)
    raises.  At A = 0 every entry is defined as 0 (the xi'=0 mode is excluded
    from physical grids).
    """
    N = params.dim
    xi = sp.xi_prime
    A, B = sp.A, sp.B
    if A == 0.0:
        zN = np.zeros((N, N), dtype=complex)
        z1 = np.zeros(N, dtype=complex)
        return MultiplierTable(zN.copy(), zN.copy(), zN.copy(), zN.copy(), z1.copy(), z1)

    D = eval_D(sp)
    scale = max(1.0, (abs(sp.lam) ** 0.5 + A) ** 3)
    if abs(D) < floor * scale:
        raise SingularSymbolError(
            f"D(A,B) ~ {D:.3e} below floor at A={A:.6g}, lambda={sp.lam:.6g}")

    BA = B + A
    BmA = B - A
    S = B * B + A * A

    V_BB = np.empty((N, N), dtype=complex)
    V_BM = np.empty((N, N), dtype=complex)
    V_MB = np.empty((N, N), dtype=complex)
    V_MM = np.empty((N, N), dtype=complex)
    for j in range(N - 1):
        for k in range(N - 1):
            xx = xi[j] * xi[k]
            V_BB[j, k] = -xx * BmA**2 / (BA * D)
            V_BM[j, k] = xx * BmA * S / (BA * D)
            V_MB[j, k] = xx * BmA * S / (BA * D)
            V_MM[j, k] = -xx * S**2 / (BA * D)
    for j in range(N - 1):
        V_BB[j, N - 1] = 1j * xi[j] * A * BmA / D
        V_BB[N - 1, j] = -1j * xi[j] * A * BmA / D
        V_BM[j, N - 1] = -1j * xi[j] * A * BmA * S / (BA * D)
        V_BM[N - 1, j] = 1j * xi[j] * A * S / D
        V_MB[j, N - 1] = -1j * xi[j] * A * S / D
        V_MB[N - 1, j] = 1j * xi[j] * A * BmA * S / (BA * D)
        V_MM[j, N - 1] = 1j * xi[j] * A * S**2 / (BA * D)
        V_MM[N - 1, j] = -1j * xi[j] * A * S**2 / (BA * D)
    V_BB[N - 1, N - 1] = -(A**2) * BA / D
    V_BM[N - 1, N - 1] = A**2 * S / D
    V_MB[N - 1, N - 1] = A**2 * S / D
    V_MM[N - 1, N - 1] = -(A**2) * S**2 / (BA * D)

    P_AA = np.empty(N, dtype=complex)
    P_AM = np.empty(N, dtype=complex)
    for k in range(N - 1):
        P_AA[k] = -1j * xi[k] * BmA * S / D
        P_AM[k] = 2j * xi[k] * A * B * S / D
    P_AA[N - 1] = -A * BA * S / D
    P_AM[N - 1] = 2.0 * A**3 * S / D

    return MultiplierTable(V_BB, V_BM, V_MB, V_MM, P_AA, P_AM)


def _bridge(x):
    """C^infinity step: 1 for x <= 0, 0 for x >= 1, strictly monotone between."""
    x = np.asarray(x, dtype=float)
    with np.errstate(over="ignore", divide="ignore", invalid="ignore"):
        f = np.where(x > 0.0, np.exp(-1.0 / np.maximum(x, 1e-300)), 0.0)
        g = np.where(x < 1.0, np.exp(-1.0 / np.maximum(1.0 - x, 1e-300)), 0.0)
    return g / (f + g)


@dataclass(frozen=True)
class CutoffPair:
    """Low/high frequency split at scale A0: phi0 + phi_infty = 1 exactly.

    The radial profile is 1 on |zeta| <= 1/3 and 0 on |zeta| >= 2/3 with a
    smooth exponential bridge between; phi0(xi') = profile(|xi'|/A0).
    """

    A0: float = field(default=0.5)

    def __post_init__(self):
        if not 0.0 < self.A0 < 1.0:
            raise ValueError("A0 must lie in (0, 1)")

    def profile(self, zeta_norm):
        s = np.asarray(zeta_norm, dtype=float)
        return _bridge((s - 1.0 / 3.0) * 3.0)

    def phi0(self, A):
        return self.profile(np.asarray(A, dtype=float) / self.A0)

    def phi_infty(self, A):
        return 1.0 - self.phi0(A)

    @property
    def low_support(self) -> float:
        """phi0 vanishes for A >= this (= (2/3) A0)."""
        return 2.0 * self.A0 / 3.0

    @property
    def high_support(self) -> float:
        """phi_infty vanishes for A <= this (= (1/3) A0)."""
        return self.A0 / 3.0


def branch_constant(eps: float) -> float:
    """b_eps = (1/sqrt(2)) sin(eps/2)^{3/2}, the sector lower-bound constant."""
    return (1.0 / np.sqrt(2.0)) * np.sin(eps / 2.0) ** 1.5


def sector_samples(rng, n, eps, mod_range=(1e-3, 1e3)):
    """Sample lambda log-uniform in modulus, uniform in argument over Sigma_eps."""
    lo, hi = mod_range
    mod = np.exp(rng.uniform(np.log(lo), np.log(hi), size=n))
    arg = rng.uniform(-(np.pi - eps), np.pi - eps, size=n)
    return mod * np.exp(1j * arg)
