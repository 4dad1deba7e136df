"""The seven contour families, adaptive quadrature, and the residue weight.

Contours are immutable bundles of parametrized segments.  Orientation follows
the continuous lower-to-upper Bromwich traversal: '-' branches carry sign -1
relative to their printed parametrizations, and both residue circles run
counterclockwise so the piece sum reproduces the Gamma(eps) integral of a real
semigroup.  Infinite rays are truncated where e^{lambda t} falls below the
target tolerance (times a safety factor 2) and all rules are rebuilt per t.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
from numpy.polynomial.legendre import leggauss

from .lopatinskii import EPS0, RootSet, CalibrationReport

__all__ = [
    "Contour",
    "Segment",
    "QuadratureRule",
    "QuadratureError",
    "build_contour",
    "quadrature",
    "contour_integrate",
    "gamma0_residue_weight",
    "CONTOUR_KINDS",
]

CONTOUR_KINDS = (
    "gamma_eps",
    "gamma0+", "gamma0-",
    "gamma1+", "gamma1-",
    "gamma2+", "gamma2-",
    "gamma3+", "gamma3-",
    "gamma4+", "gamma4-",
    "gamma5+", "gamma5-",
)

MAX_DOUBLINGS = 14


class QuadratureError(RuntimeError):
    """Adaptive refinement failed to reach the requested tolerance."""


@dataclass(frozen=True)
class Segment:
    """One parametrized piece lambda(u), u in [u0, u1] (u1=None: infinite ray).

    `sign` flips the traversal relative to increasing u; `ray_decay` is
    cos(angle to the negative real axis) for truncation of infinite rays;
    `closed` marks full circles (integrated by the periodic trapezoid rule).
    """

    lam: Callable
    dlam: Callable
    u0: float
    u1: Optional[float]
    sign: float = 1.0
    closed: bool = False
    ray_decay: float = 0.0


@dataclass(frozen=True)
class Contour:
    kind: str
    segments: tuple
    meta: dict = field(default_factory=dict)


@dataclass(frozen=True)
class QuadratureRule:
    """Flattened nodes/weights of a contour at one refinement level."""

    nodes: np.ndarray      # complex lambda values
    weights: np.ndarray    # complex, includes lambda'(u) du and orientation
    truncations: tuple     # U_max per infinite segment
    target_tol: float
    level: int


def _ray(anchor: complex, angle: float, sign: float) -> Segment:
    direction = np.exp(1j * angle)
    return Segment(
        lam=lambda u, a=anchor, d=direction: a + u * d,
        dlam=lambda u, d=direction: np.full_like(np.asarray(u, dtype=float), d, dtype=complex),
        u0=0.0, u1=None, sign=sign, ray_decay=float(-np.cos(angle)),
    )


def build_contour(kind: str, A: float | None = None, t_hint: float = 1.0,
                  calib: CalibrationReport | None = None, eps: float | None = None,
                  lambda0: float = 1.0, roots: RootSet | None = None,
                  params=None) -> Contour:
    """Construct one of the contour families.

    Gamma0..Gamma3 require the frequency A (and Gamma0 the labeled low-regime
    roots); Gamma(eps) takes (eps, lambda0); Gamma4/Gamma5 take the calibrated
    high-frequency margins.  eps0 = arctan(1/8) is fixed for Gamma2/Gamma3.
    """
    if kind not in CONTOUR_KINDS:
        raise ValueError(f"unknown contour kind {kind!r}")
    meta = {"kind": kind, "A": A, "t_hint": t_hint}

    if kind == "gamma_eps":
        if eps is None or not (0.0 < eps < np.pi / 2.0):
            raise ValueError("gamma_eps requires eps in (0, pi/2)")
        anchor = 2.0 * lambda0 / np.sin(eps)
        meta.update(eps=eps, lambda0=lambda0, anchor=anchor)
        segs = (
            _ray(anchor, -(np.pi - eps), sign=-1.0),   # lower branch, traversed inward
            _ray(anchor, +(np.pi - eps), sign=+1.0),
        )
        return Contour(kind, segs, meta)

    sgn = +1.0 if kind.endswith("+") else -1.0
    fam = kind[:-1]

    if fam in ("gamma0", "gamma1", "gamma2", "gamma3"):
        if fam != "gamma3" and (A is None or A <= 0):
            raise ValueError(f"{kind} requires A > 0")
        if calib is not None and A is not None and A > calib.A0 * 2.0 / 3.0 + 1e-12:
            raise ValueError(f"{kind} requires A <= (2/3) A0")

    if fam == "gamma0":
        if roots is None:
            raise ValueError("gamma0 requires the labeled low-regime roots")
        if params is None:
            raise ValueError("gamma0 requires params for the circle radius")
        lam_c = roots.lam_by_label("B1+") if sgn > 0 else roots.lam_by_label("B1-")
        radius = 0.25 * np.sqrt(params.gravity) * A**0.5
        meta.update(center=lam_c, radius=radius)
        # counterclockwise for both signs; see C14 on the paper's u-range
        seg = Segment(
            lam=lambda u, c=lam_c, r=radius: c + r * np.exp(1j * u),
            dlam=lambda u, r=radius: 1j * r * np.exp(1j * u),
            u0=0.0, u1=2.0 * np.pi, sign=1.0, closed=True,
        )
        return Contour(kind, (seg,), meta)

    if fam == "gamma1":
        seg = Segment(
            lam=lambda u, A=A, s=sgn: -A**2 + (A**2 / 4.0) * np.exp(1j * s * u),
            dlam=lambda u, A=A, s=sgn: 1j * s * (A**2 / 4.0) * np.exp(1j * s * u),
            u0=0.0, u1=np.pi / 2.0, sign=sgn,
        )
        return Contour(kind, (seg,), meta)

    if fam == "gamma2":
        if calib is None:
            raise ValueError("gamma2 requires a calibration report")
        g0, g0t = calib.gamma0, calib.gamma0_tilde
        meta.update(gamma0=g0, gamma0_tilde=g0t)
        seg = Segment(
            lam=lambda u, A=A, s=sgn: (-(A**2 * (1 - u) + g0 * u)
                                       + 1j * s * ((A**2 / 4.0) * (1 - u) + g0t * u)),
            dlam=lambda u, A=A, s=sgn: np.full_like(
                np.asarray(u, dtype=float),
                (A**2 - g0) + 1j * s * (g0t - A**2 / 4.0), dtype=complex),
            u0=0.0, u1=1.0, sign=sgn,
        )
        return Contour(kind, (seg,), meta)

    if fam == "gamma3":
        if calib is None:
            raise ValueError("gamma3 requires a calibration report")
        g0, g0t = calib.gamma0, calib.gamma0_tilde
        meta.update(gamma0=g0, gamma0_tilde=g0t, eps0=EPS0)
        anchor = complex(-g0, sgn * g0t)
        return Contour(kind, (_ray(anchor, sgn * (np.pi - EPS0), sign=sgn),), meta)

    if fam == "gamma4":
        if calib is None:
            raise ValueError("gamma4 requires a calibration report")
        gi, git = calib.gamma_infty, calib.gamma_infty_tilde
        meta.update(gamma_infty=gi, gamma_infty_tilde=git)
        seg = Segment(
            lam=lambda u, s=sgn: -gi + 1j * s * u,
            dlam=lambda u, s=sgn: np.full_like(np.asarray(u, dtype=float), 1j * s, dtype=complex),
            u0=0.0, u1=git, sign=sgn,
        )
        return Contour(kind, (seg,), meta)

    if fam == "gamma5":
        if calib is None:
            raise ValueError("gamma5 requires a calibration report")
        gi, git, ei = calib.gamma_infty, calib.gamma_infty_tilde, calib.eps_infty
        meta.update(gamma_infty=gi, gamma_infty_tilde=git, eps_infty=ei)
        anchor = complex(-gi, sgn * git)
        return Contour(kind, (_ray(anchor, sgn * (np.pi - ei), sign=sgn),), meta)

    raise AssertionError(kind)


def _segment_nodes(seg: Segment, t: float, tol: float, level: int):
    """Nodes/weights for one segment at a refinement level."""
    if seg.closed:
        n = 16 * 2**level
        u = np.linspace(seg.u0, seg.u1, n, endpoint=False)
        du = (seg.u1 - seg.u0) / n
        lam = seg.lam(u)
        w = seg.dlam(u) * du * seg.sign
        return lam, w, None

    if seg.u1 is not None:
        u_hi, trunc = seg.u1, None
    else:
        # e^{-u ray_decay t} <= tol at the cut, times safety factor 2
        u_hi = 2.0 * np.log(1.0 / tol) / (seg.ray_decay * t)
        trunc = u_hi

    npanels = 2 ** (level + 2)
    x, wgl = leggauss(16)
    edges = np.linspace(seg.u0, u_hi, npanels + 1)
    mid = 0.5 * (edges[1:] + edges[:-1])
    half = 0.5 * np.diff(edges)
    u = (mid[:, None] + half[:, None] * x[None, :]).ravel()
    w = (half[:, None] * wgl[None, :]).ravel()
    lam = seg.lam(u)
    wc = seg.dlam(u) * w * seg.sign
    return lam, wc, trunc


def quadrature(contour: Contour, t: float, tol: float) -> QuadratureRule:
    """Rule calibrated by doubling until e^{lambda t} integrates consistently."""
    if t <= 0 or tol <= 0:
        raise ValueError("t and tol must be positive")

    prev = None
    for level in range(MAX_DOUBLINGS + 1):
        nodes, weights, truncs = _assemble(contour, t, tol, level)
        val = np.sum(weights * np.exp(nodes * t))
        scale = max(1.0, float(np.exp(np.max(nodes.real) * t)))
        if prev is not None and abs(val - prev) <= tol * scale:
            return QuadratureRule(nodes, weights, truncs, tol, level)
        prev = val
    raise QuadratureError(
        f"{contour.kind}: e^(lambda t) not converged after {MAX_DOUBLINGS} doublings "
        f"(t={t}, tol={tol}, last delta={abs(val - prev):.3e})")


def _assemble(contour: Contour, t: float, tol: float, level: int):
    nodes, weights, truncs = [], [], []
    for seg in contour.segments:
        lam, w, trunc = _segment_nodes(seg, t, tol, level)
        nodes.append(lam)
        weights.append(w)
        if trunc is not None:
            truncs.append(trunc)
    return np.concatenate(nodes), np.concatenate(weights), tuple(truncs)


def contour_integrate(contour: Contour, integrand: Callable, t: float,
                      tol: float) -> complex:
    """(1/2 pi i) * int e^{lambda t} integrand(lambda) dlambda, adaptively.

    Levels double until two successive evaluations agree to tol (relative to
    the value, with an absolute floor tied to the roundoff of the largest
    node amplitude).
    """
    if t <= 0 or tol <= 0:
        raise ValueError("t and tol must be positive")
    prev = None
    for level in range(MAX_DOUBLINGS + 1):
        nodes, weights, _ = _assemble(contour, t, tol, level)
        f = np.asarray(integrand(nodes), dtype=complex)
        if not np.all(np.isfinite(f)):
            raise QuadratureError(f"{contour.kind}: integrand not finite on contour")
        amp = np.exp(nodes.real * t)
        val = np.sum(weights * amp * np.exp(1j * nodes.imag * t) * f) / (2j * np.pi)
        floor = 50.0 * np.finfo(float).eps * float(np.max(amp * np.abs(f), initial=0.0))
        if prev is not None and abs(val - prev) <= max(tol * abs(val), tol * 1e-8, floor):
            return complex(val)
        prev = val
    raise QuadratureError(
        f"{contour.kind}: integral not converged after {MAX_DOUBLINGS} doublings "
        f"(t={t}, tol={tol}, last={val:.6e}, delta={abs(val - prev):.3e})")


def gamma0_residue_weight(A: float, sign: int, kappa_at_lambda: complex, t: float,
                          roots: RootSet, min_sep: float = 1e-14) -> complex:
    """Closed-form value of the Gamma0 circle integral of e^{lambda t} kappa / L.

    Equals 4 pi i e^{lambda_s t} kappa B1^s / prod(B1^s - other roots) for the
    counterclockwise circle around lambda_s, s = sign.
    """
    if sign not in (+1, -1):
        raise ValueError("sign must be +1 or -1")
    lab = "B1+" if sign > 0 else "B1-"
    b1 = roots.by_label(lab)
    others = [r for r, l in zip(roots.roots, roots.labels) if l != lab]
    seps = [abs(b1 - o) for o in others]
    if min(seps) < min_sep:
        raise ArithmeticError(f"degenerate root separation {min(seps):.3e} at A={A}")
    denom = np.prod([b1 - o for o in others])
    lam_s = roots.lam_by_label(lab)
    return complex(4j * np.pi * np.exp(lam_s * t) * kappa_at_lambda * b1 / denom)
