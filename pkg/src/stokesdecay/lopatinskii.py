"""Root loci of the dispersion quartic, stability scan and calibration.

L(A, B) expands to the monic quartic B^4 + 2A^2 B^2 - 4A^3 B + A^4 + A(g + sigma A^2).
Its four B-roots are solved by companion-matrix eigenvalues polished with two
Newton steps, branch-labeled against the low- and high-frequency asymptotic
templates, and scanned for spectral stability.  The calibration pass fixes the
frequency-split scale A0, the sector anchor gamma0 = lambda0(eps0), and the
high-frequency margins (lambda_infty, eps_infty, gamma_infty).
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass, field, asdict

import numpy as np

from .symbols import PhysicalParams, principal_sqrt, ldet, mcal

__all__ = [
    "RootSet",
    "CalibrationReport",
    "LabelingError",
    "StabilityViolation",
    "CalibrationError",
    "EPS0",
    "quartic_coefficients",
    "solve_roots",
    "solve_roots_batch",
    "lambda_low_asymptotic",
    "lambda_high_asymptotic",
    "stability_scan",
    "root_locus",
    "estimate_lambda0",
    "calibrate_A0",
    "high_regime_slopes",
    "cubic_alpha",
]

# contour opening angle fixed by the paper's Gamma3 construction
EPS0 = float(np.arctan(1.0 / 8.0))

LOW_LABELS = ("B1+", "B1-", "B2+", "B2-")
HIGH_LABELS = ("B1", "B2", "B3", "B4")


class LabelingError(RuntimeError):
    """Two roots are equidistant from a branch template; labels ambiguous."""


class StabilityViolation(RuntimeError):
    """A physical root (Re B >= 0) with Re lambda >= 0 was found."""


class CalibrationError(RuntimeError):
    """No admissible calibration parameter was found in the search range."""


@dataclass(frozen=True)
class RootSet:
    """Four labeled B-roots at one frequency A, with lambda = B^2 - A^2."""

    A: float
    roots: np.ndarray          # (4,) complex
    labels: tuple              # branch tags, aligned with roots
    lambdas: np.ndarray        # (4,) complex, roots**2 - A**2

    def by_label(self, label: str) -> complex:
        return complex(self.roots[self.labels.index(label)])

    def lam_by_label(self, label: str) -> complex:
        return complex(self.lambdas[self.labels.index(label)])

    def physical_mask(self) -> np.ndarray:
        """Roots on the principal sheet (Re B >= 0)."""
        return self.roots.real >= 0.0


def quartic_coefficients(A: float, params: PhysicalParams):
    """Monic coefficients (B^4, B^3, B^2, B, 1) of L(A, .)."""
    if A < 0:
        raise ValueError("A must be nonnegative")
    g, sig = params.gravity, params.surface_tension
    return (1.0, 0.0, 2.0 * A**2, -4.0 * A**3, A**4 + A * (g + sig * A**2))


def high_regime_slopes():
    """Roots a_j of x^4 + 2x^2 - 4x + 1 ordered (1, a2, complex pair).

    a1 = 1 exactly; a2 is the real root of the cubic factor x^3 + x^2 + 3x - 1
    in (0, 1/2); the complex pair has negative real part.
    """
    cub = np.roots([1.0, 1.0, 3.0, -1.0])
    real_mask = np.abs(cub.imag) < 1e-10
    a2 = float(cub[real_mask].real[0])
    pair = cub[~real_mask]
    pair = pair[np.argsort(-pair.imag)]
    return np.array([1.0, a2, pair[0], pair[1]], dtype=complex)


_A_HIGH = high_regime_slopes()


def cubic_alpha():
    """Real root in (0,1) of z^3 + 2z^2 + 12z - 8 and the complex pair."""
    r = np.roots([1.0, 2.0, 12.0, -8.0])
    real_mask = np.abs(r.imag) < 1e-10
    alpha = float(r[real_mask].real[0])
    pair = r[~real_mask]
    return alpha, pair


def _newton_polish(A, roots, params, steps=2):
    g, sig = params.gravity, params.surface_tension
    A = np.asarray(A, dtype=float)
    B = np.asarray(roots, dtype=complex)
    c0 = A[..., None] ** 4 + A[..., None] * (g + sig * A[..., None] ** 2)
    a2 = 2.0 * A[..., None] ** 2
    a3 = -4.0 * A[..., None] ** 3
    for _ in range(steps):
        p = B**4 + a2 * B**2 + a3 * B + c0
        dp = 4.0 * B**3 + 2.0 * a2 * B + a3
        B = B - p / dp
    return B


def _low_templates(A, params):
    """Three-term branch expansions e^{+-i(2j-1)pi/4} g^{1/4} A^{1/4} + ..."""
    g, sig = params.gravity, params.surface_tension
    out = np.empty(4, dtype=complex)
    for i, (j, s) in enumerate(((1, +1), (1, -1), (2, +1), (2, -1))):
        e = np.exp(s * 1j * (2 * j - 1) * np.pi / 4.0)
        e3 = np.exp(s * 1j * (2 * j - 1) * 3.0 * np.pi / 4.0)
        out[i] = (e * g**0.25 * A**0.25
                  - A**1.75 / (2.0 * e * g**0.25)
                  - sig * A**2.25 / (e3 * g**0.75))
    return out


def _high_templates(A, params):
    sig = params.surface_tension
    a = _A_HIGH
    denom = 1.0 - a - a**3
    return a * A + sig / (4.0 * denom) + (1.0 + 3.0 * a**2) * sig**2 / (32.0 * denom**3) / A


def _assign_labels(roots, templates, labels, rel_tol=1e-9):
    """Nearest-template assignment; raises when a template sees a near tie."""
    cost = np.abs(roots[None, :] - templates[:, None])
    order = []
    used = set()
    scale = float(np.max(np.abs(templates))) + 1.0
    for ti in range(len(templates)):
        dist = cost[ti].copy()
        dist[list(used)] = np.inf
        idx = np.argsort(dist)
        if len(idx) > 1 and np.isfinite(dist[idx[1]]):
            if abs(dist[idx[0]] - dist[idx[1]]) < rel_tol * scale:
                raise LabelingError(
                    f"template {labels[ti]} equidistant from roots "
                    f"{roots[idx[0]]:.6g} and {roots[idx[1]]:.6g}")
        order.append(int(idx[0]))
        used.add(int(idx[0]))
    out_roots = roots[order]
    return out_roots, tuple(labels)


def solve_roots(A: float, params: PhysicalParams, residual_tol: float = 1e-9) -> RootSet:
    """Solve L(A, .) = 0, label branches, and polish to residual tolerance."""
    if A <= 0:
        raise ValueError("A must be positive")
    coeffs = quartic_coefficients(A, params)
    roots = np.roots(coeffs)
    roots = _newton_polish(np.array(A), roots, params)

    if A < 1.0:
        templates, labels = _low_templates(A, params), LOW_LABELS
    else:
        templates, labels = _high_templates(A, params), HIGH_LABELS
    roots, labels = _assign_labels(roots, templates, labels)

    scale = max(1.0, coeffs[-1])
    res = np.abs(ldet(A, roots, params.gravity, params.surface_tension))
    if np.max(res) > residual_tol * scale:
        raise ArithmeticError(f"root residual {np.max(res):.3e} exceeds tolerance at A={A}")
    return RootSet(A=float(A), roots=roots, labels=labels, lambdas=roots**2 - A**2)


def solve_roots_batch(A_grid, params: PhysicalParams):
    """Unlabeled roots for many A at once (companion eigenvalues + polish).

    Returns (n, 4) complex roots; ordering per row is arbitrary.
    """
    A = np.asarray(A_grid, dtype=float)
    n = A.size
    g, sig = params.gravity, params.surface_tension
    comp = np.zeros((n, 4, 4), dtype=complex)
    comp[:, 1, 0] = 1.0
    comp[:, 2, 1] = 1.0
    comp[:, 3, 2] = 1.0
    comp[:, 0, 3] = -(A**4 + A * (g + sig * A**2))
    comp[:, 1, 3] = 4.0 * A**3
    comp[:, 2, 3] = -2.0 * A**2
    roots = np.linalg.eigvals(comp)
    return _newton_polish(A, roots, params)


def lambda_low_asymptotic(A: float, params: PhysicalParams):
    """(lambda_+, lambda_-) three-term low-frequency expansion."""
    if A <= 0:
        raise ValueError("A must be positive")
    g, sig = params.gravity, params.surface_tension
    lead = 1j * np.sqrt(g) * np.sqrt(A)
    third = 2j * sig * A**2.5 / np.sqrt(g)
    lam_p = lead - 2.0 * A**2 + third
    return complex(lam_p), complex(np.conj(lam_p))


def lambda_high_asymptotic(A: float, params: PhysicalParams):
    """(lambda_1, lambda_2) high-frequency expansions."""
    if A <= 0:
        raise ValueError("A must be positive")
    sig = params.surface_tension
    a2 = float(_A_HIGH[1].real)
    lam1 = -sig * A / 2.0 - 3.0 * sig**2 / 16.0
    lam2 = -(1.0 - a2**2) * A**2 + a2 * sig / (2.0 * (1.0 - a2 - a2**3)) * A
    return complex(lam1), complex(lam2)


def stability_scan(A_grid, params: PhysicalParams):
    """Check Re lambda < 0 for every principal-sheet root over the grid.

    Returns (min margin, A where attained); margin = -max Re lambda over the
    physical roots at each A.  A nonpositive margin raises (it would
    contradict the nonexistence of unstable Lopatinskii zeros).
    """
    A = np.asarray(A_grid, dtype=float)
    if A.size == 0 or np.any(A <= 0):
        raise ValueError("A_grid must be nonempty and positive")
    roots = solve_roots_batch(A, params)
    lams = roots**2 - A[:, None] ** 2
    phys = roots.real >= 0.0
    if not np.all(phys.sum(axis=1) == 2):
        bad = A[phys.sum(axis=1) != 2]
        raise StabilityViolation(f"expected 2 physical roots, got otherwise at A={bad[:5]}")
    re = np.where(phys, lams.real, -np.inf)
    margins = -re.max(axis=1)
    i = int(np.argmin(margins))
    if margins[i] <= 0.0:
        raise StabilityViolation(
            f"nonpositive stability margin {margins[i]:.3e} at A={A[i]:.6g}")
    return float(margins[i]), float(A[i])


def root_locus(A_grid, params: PhysicalParams):
    """Labeled root curves over an increasing A grid via nearest continuation.

    Labels are seeded from the first grid point's regime templates and carried
    along the path, which disambiguates the mid-range where neither template
    family is tight.  Returns (A, roots (n,4), lambdas (n,4), labels).
    """
    A = np.asarray(A_grid, dtype=float)
    first = solve_roots(float(A[0]), params)
    labels = first.labels
    out = np.empty((A.size, 4), dtype=complex)
    out[0] = first.roots
    raw = solve_roots_batch(A, params)
    for i in range(1, A.size):
        prev = out[i - 1]
        cand = raw[i].copy()
        row = np.empty(4, dtype=complex)
        used = set()
        for k in range(4):
            d = np.abs(cand - prev[k])
            d[list(used)] = np.inf
            j = int(np.argmin(d))
            row[k] = cand[j]
            used.add(j)
        out[i] = row
    lams = out**2 - A[:, None] ** 2
    return A, out, lams, labels


def _physical_lambdas(params, A_lo=1e-4, A_hi=1e4, n=1500):
    A = np.logspace(np.log10(A_lo), np.log10(A_hi), n)
    roots = solve_roots_batch(A, params)
    lams = roots**2 - A[:, None] ** 2
    phys = roots.real >= 0.0
    return A, np.where(phys, lams, np.nan + 0j)


def _next_pow2(x: float) -> float:
    return float(2.0 ** np.ceil(np.log2(max(x, 1e-12))))


def estimate_lambda0(eps: float, params: PhysicalParams, rng=None, samples=20000):
    """Empirical lambda0(eps) >= 1 plus the sampled Lemma-2.1(3) constant.

    lambda0 is the next power of two above 1.25x the largest |lambda| of any
    principal-sheet root inside the closed sector Sigma_eps; the inverse-bound
    ratio |L| / (|lambda|(|lambda|^{1/2}+A)^2 + A(g+sigma A^2)) is then sampled
    on Sigma_{eps,lambda0} and must stay positive.  Returns (lambda0, C_emp).
    """
    _, lams = _physical_lambdas(params)
    flat = lams.ravel()
    flat = flat[np.isfinite(flat)]
    in_sector = np.abs(np.angle(flat)) <= (np.pi - eps) + 1e-12
    sup = float(np.max(np.abs(flat[in_sector]))) if np.any(in_sector) else 0.0
    lam0 = max(1.0, _next_pow2(1.25 * sup))

    rng = np.random.default_rng(0) if rng is None else rng
    mod = np.exp(rng.uniform(np.log(lam0), np.log(lam0 * 1e3), samples))
    arg = rng.uniform(-(np.pi - eps), np.pi - eps, samples)
    lam = mod * np.exp(1j * arg)
    A = np.exp(rng.uniform(np.log(1e-3), np.log(1e3), samples))
    B = principal_sqrt(lam + A**2)
    g, sig = params.gravity, params.surface_tension
    denom = np.abs(lam) * (np.abs(lam) ** 0.5 + A) ** 2 + A * (g + sig * A**2)
    ratio = np.abs(ldet(A, B, g, sig)) / denom
    rmin = float(np.min(ratio))
    if rmin <= 0.0:
        raise CalibrationError(f"Lopatinskii lower bound fails on Sigma(eps={eps}, {lam0})")
    return lam0, 2.0 / rmin


@dataclass
class CalibrationReport:
    """Calibrated contour parameters plus the inequality margins behind them."""

    A0: float
    gamma0: float
    gamma0_tilde: float
    gamma_infty: float
    gamma_infty_tilde: float
    eps_infty: float
    lambda_infty: float
    lambda0_eps_infty: float
    lemma21_c: float
    check_log: list = field(default_factory=list)

    def to_json(self, **extra) -> str:
        d = asdict(self)
        d.update(extra)
        return json.dumps(d, indent=2, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "CalibrationReport":
        d = json.loads(text)
        keys = {f for f in cls.__dataclass_fields__}
        return cls(**{k: v for k, v in d.items() if k in keys})


def _gamma2_line_distance(lam, A, gamma0, gamma0_tilde):
    """Distance from a point to the Gamma2^+ chord (upper sign)."""
    p0 = complex(-A**2, A**2 / 4.0)
    p1 = complex(-gamma0, gamma0_tilde)
    d = p1 - p0
    v = lam - p0
    return abs((d.real * v.imag - d.imag * v.real) / abs(d))


def _a0_conditions(A_vals, params, gamma0, gamma0_tilde, a_samples):
    """Evaluate the calibration inequalities on a grid; returns margin records."""
    g = params.gravity
    recs = []
    m_re, m_re_at = np.inf, None
    m_sep, m_sep_at = np.inf, None
    m_m, m_m_at = np.inf, None
    m_geo, m_geo_at = np.inf, None
    thresh = 0.5 * np.sqrt(2.0) * g**0.25
    for A in A_vals:
        rs = solve_roots(float(A), params)
        b1p, b1m = rs.by_label("B1+"), rs.by_label("B1-")
        b2p, b2m = rs.by_label("B2+"), rs.by_label("B2-")
        lam_p = rs.lam_by_label("B1+")

        v = -lam_p.real - A**2
        if v < m_re:
            m_re, m_re_at = v, A

        sep = min(abs(b1p - b1m), abs(b1p - b2p), abs(b1p - b2m)) - thresh * A**0.25
        if sep < m_sep:
            m_sep, m_sep_at = sep, A

        mv = np.abs(mcal(A, b1p, a_samples))
        bound = 2.0 * A ** (-0.25) * np.exp(-A * a_samples)
        v = float(np.min(bound - mv))
        if v < m_m:
            m_m, m_m_at = v, A

        # Gamma0 circle must clear the real axis, the Gamma1 disc and Gamma2 chord
        radius = 0.25 * np.sqrt(g) * A**0.5
        v = min(lam_p.imag - radius,
                abs(lam_p - (-A**2)) - A**2 / 4.0 - radius,
                _gamma2_line_distance(lam_p, A, gamma0, gamma0_tilde) - radius)
        if v < m_geo:
            m_geo, m_geo_at = v, A

    recs.append(("re_lambda_le_minus_A2", float(m_re), float(m_re_at)))
    recs.append(("root_separation_A14", float(m_sep), float(m_sep_at)))
    recs.append(("M_bound_est", float(m_m), float(m_m_at)))
    recs.append(("gamma0_circle_clearance", float(m_geo), float(m_geo_at)))
    return recs


def calibrate_A0(params: PhysicalParams, n_grid: int = 200, a_samples=None,
                 rng=None) -> CalibrationReport:
    """Calibrate A0, gamma0/gamma0~, and the high-frequency sector margins.

    Bisection over dyadic A0: the largest 2^-k whose log grid on (0, A0]
    satisfies every inequality with positive margin wins; 2^-20 reached with
    no pass is a calibration failure.
    """
    if a_samples is None:
        a_samples = np.logspace(-2, 2, 16)
    rng = np.random.default_rng(0) if rng is None else rng

    gamma0, lemma21_c = estimate_lambda0(EPS0, params, rng=rng)
    gamma0_tilde = (1.0 + 2.0 * np.sqrt(65.0)) * gamma0 / 8.0

    chosen, log = None, None
    for k in range(1, 21):
        A0 = 2.0 ** (-k)
        grid = np.logspace(np.log10(A0) - 3.0, np.log10(A0), n_grid)
        try:
            recs = _a0_conditions(grid, params, gamma0, gamma0_tilde, a_samples)
        except LabelingError:
            continue
        if all(m > 0.0 for _, m, _ in recs):
            chosen, log = A0, recs
            break
    if chosen is None:
        raise CalibrationError("no admissible A0 found down to 2^-20")

    # high-frequency locus restricted to supp phi_infty = [A0/3, infinity);
    # beyond 1e3 the surviving branches are real negative and only improve margins
    A_hi = np.logspace(np.log10(chosen / 3.0), 3.0, 800)
    roots = solve_roots_batch(A_hi, params)
    lams = roots**2 - A_hi[:, None] ** 2
    phys = roots.real >= 0.0
    re = np.where(phys, lams.real, -np.inf)
    lambda_infty = 0.9 * float(-re.max())
    dev = np.where(phys, np.abs(np.angle(-lams)), 0.0)
    eps_infty = 0.9 * float(np.pi / 2.0 - dev.max())
    if not (0.0 < eps_infty < np.pi / 2.0 and lambda_infty > 0.0):
        raise CalibrationError("high-frequency sector margins degenerate")

    gamma_infty = min(lambda_infty, 0.25 * (chosen / 6.0) ** 2)
    lam0_inf, _ = estimate_lambda0(eps_infty, params, rng=rng)
    lam0_tilde_inf = 2.0 * lam0_inf / np.sin(eps_infty)
    gamma_infty_tilde = np.tan(eps_infty) * (lam0_tilde_inf + gamma_infty)

    log = list(log)
    log.append(("lambda_infty_margin", float(lambda_infty), float(chosen / 3.0)))
    log.append(("eps_infty_margin", float(eps_infty), float(chosen / 3.0)))
    return CalibrationReport(
        A0=float(chosen),
        gamma0=float(gamma0),
        gamma0_tilde=float(gamma0_tilde),
        gamma_infty=float(gamma_infty),
        gamma_infty_tilde=float(gamma_infty_tilde),
        eps_infty=float(eps_infty),
        lambda_infty=float(lambda_infty),
        lambda0_eps_infty=float(lam0_inf),
        lemma21_c=float(lemma21_c),
        check_log=log,
    )
