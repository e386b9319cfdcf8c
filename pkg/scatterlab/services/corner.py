"""Corner-singularity calculus at a vertex x_c of a polygonal scatterer.

Angles are measured in a CornerFrame; psi = theta - theta_mid is the angle
from the bisector of D's sector, which spans |psi| <= a/2. The leading
singular function is K r^eta phi(theta) with

    interior  phi = cos(eta psi + s)
    exterior  phi = A cos(eta (psi - pi) + s),   a/2 <= psi <= 2 pi - a/2

where s = 0 on the even branch and s = -pi/2 on the odd branch. Continuity
fixes A and the flux condition gamma phi'_int = phi'_ext gives

    even:  (gamma + 1) sin(eta pi) = (gamma - 1) sin(eta (pi - a))
    odd:   (gamma + 1) sin(eta pi) = (1 - gamma) sin(eta (pi - a))

Both are the two sign branches of
(sin eta (pi - a) / sin eta pi)^2 = ((gamma + 1) / (gamma - 1))^2.

The interior amplitude is normalized to 1.
"""
import dataclasses
import logging
import math
from dataclasses import dataclass
from typing import Callable, Optional, Union

import numpy as np
from scipy import integrate, optimize

from scatterlab.config import settings
from scatterlab.exceptions import (
    ContractViolationError,
    DegenerateProfileError,
    NoRootError,
    SpecialFunctionError,
)
from scatterlab.models import ComplexValue, IdentityReport
from scatterlab.services import specfun
from scatterlab.services.forward import FieldSolution, boundary_integral, evaluate_field
from scatterlab.services.geometry import ContourSet, CornerFrame, Polygon, build_contours

logger = logging.getLogger(__name__)

BRANCH_SHIFT = {"even": 0.0, "odd": -0.5 * math.pi}
SCAN_POINTS = 4000
RAY_TAIL_TOL = 1e-10
RAY_TRUNCATION = 200.0  # in units of 1/tau


# ---------------------------------------------------------------------------
# Exponent
# ---------------------------------------------------------------------------
def _check_contrast_and_opening(gamma: float, a: float) -> None:
    if not (math.isfinite(gamma) and gamma > 0) or abs(gamma - 1.0) <= 1e-12:
        raise ContractViolationError(f"Contrast must satisfy gamma > 0 and gamma != 1, got {gamma}")
    if not 0.0 < a < math.pi:
        raise ContractViolationError(f"Opening must lie in (0, pi), got {a}")


def _branch_function(gamma: float, a: float, branch: str) -> Callable:
    sign = 1.0 if branch == "even" else -1.0

    def f(eta):
        return sign * (gamma - 1.0) * np.sin(eta * (math.pi - a)) - (gamma + 1.0) * np.sin(eta * math.pi)
    return f


def exponent_residual(gamma: float, a: float, eta: float) -> float:
    """Relative residual |(sin eta(pi-a) / sin eta pi)^2 / c^2 - 1|, c = (gamma+1)/(gamma-1)."""
    c = (gamma + 1.0) / (gamma - 1.0)
    ratio = math.sin(eta * (math.pi - a)) / math.sin(eta * math.pi)
    return abs(ratio * ratio / (c * c) - 1.0)


def singularity_exponents(gamma: float, a: float, upper: float = 1.0) -> list[tuple[float, str]]:
    """
    Every root in (0, upper) of the exponent equation, per sign branch.

    Args:
        gamma: Contrast, gamma > 0 and gamma != 1
        a: Opening angle in (0, pi)
        upper: Upper end of the search interval

    Returns:
        Sorted list of (eta, branch) with branch "even" or "odd"
    """
    _check_contrast_and_opening(gamma, a)
    grid = np.linspace(0.0, upper, SCAN_POINTS + 1)[1:]
    roots = []
    for branch in ("even", "odd"):
        f = _branch_function(gamma, a, branch)
        vals = f(grid)
        for i in np.nonzero(vals[:-1] * vals[1:] <= 0.0)[0]:
            lo, hi = float(grid[i]), float(grid[i + 1])
            eta = lo if vals[i] == 0.0 else optimize.brentq(f, lo, hi, xtol=1e-16, rtol=4.0 * np.finfo(float).eps,
                                                             maxiter=200)
            if abs(math.sin(eta * math.pi)) < 1e-8 or eta >= upper:
                continue
            if not roots or all(abs(eta - r) > 1e-12 or b != branch for r, b in roots):
                roots.append((float(eta), branch))
    return sorted(roots)


def singularity_exponent(gamma: float, a: float) -> float:
    """
    Leading corner exponent eta in (0, 1): the smallest root of the exponent equation.

    Raises:
        ContractViolationError: gamma or a outside their ranges
        NoRootError: No root in (0, 1)
    """
    roots = singularity_exponents(gamma, a)
    if not roots:
        raise NoRootError(f"No singularity exponent in (0, 1) for gamma={gamma}, a={a}")
    eta, branch = roots[0]
    residual = exponent_residual(gamma, a, eta)
    if residual > settings.eta_residual_tol:
        raise NoRootError(f"Exponent root did not converge (residual {residual:.2e})")
    if len(roots) > 1:
        logger.info("Exponent equation has %d roots in (0,1) %s; taking the smallest",
                    len(roots), [round(r, 6) for r, _ in roots])
    logger.info("eta(gamma=%.6g, a=%.6g) = %.12f [%s branch, residual %.1e]", gamma, a, eta, branch, residual)
    return eta


def exponent_bounds(gamma: float, a_min: Optional[float] = None, a_max: Optional[float] = None,
                    samples: int = 64) -> tuple[float, float]:
    """Range (eta_m, eta_M) of the exponent over openings in [a_min, a_max]."""
    a_min = a_min if a_min is not None else settings.angle_min
    a_max = a_max if a_max is not None else settings.angle_max
    etas = [singularity_exponent(gamma, a) for a in np.linspace(a_min, a_max, samples)]
    return float(min(etas)), float(max(etas))


# ---------------------------------------------------------------------------
# Angular profile
# ---------------------------------------------------------------------------
@dataclass(frozen=True, eq=False)
class SingularityData:
    """Exponent, angular profile and (optionally) coefficient of the corner singularity."""
    gamma: float
    a: float
    eta: float
    branch: str
    amplitude_ratio: float
    theta_mid: float = 0.0
    frame: Optional[CornerFrame] = None
    K: Optional[complex] = None
    fit_residual: Optional[float] = None
    low_confidence: bool = False
    eta_bounds: Optional[tuple[float, float]] = None
    eta_residual: float = 0.0
    profile_residual: float = 0.0

    @property
    def shift(self) -> float:
        return BRANCH_SHIFT[self.branch]

    @property
    def phase_int(self) -> float:
        """Phi_int in phi = cos(eta theta + Phi_int) on D's sector."""
        return -self.eta * self.theta_mid + self.shift

    @property
    def phase_ext(self) -> float:
        """Phi_ext in phi = A cos(eta theta + Phi_ext), theta continued past theta_plus."""
        return -self.eta * (self.theta_mid + math.pi) + self.shift

    @property
    def theta_plus(self) -> float:
        return self.theta_mid + 0.5 * self.a

    @property
    def theta_minus(self) -> float:
        return self.theta_mid - 0.5 * self.a

    def _split(self, theta):
        psi = (np.asarray(theta, dtype=float) - self.theta_mid + math.pi) % (2.0 * math.pi) - math.pi
        inside = np.abs(psi) <= 0.5 * self.a
        psi_ext = psi % (2.0 * math.pi)
        return psi, psi_ext, inside

    def phi(self, theta) -> np.ndarray:
        psi, psi_ext, inside = self._split(theta)
        s = self.shift
        return np.where(inside, np.cos(self.eta * psi + s),
                        self.amplitude_ratio * np.cos(self.eta * (psi_ext - math.pi) + s))

    def dphi(self, theta) -> np.ndarray:
        psi, psi_ext, inside = self._split(theta)
        s, eta = self.shift, self.eta
        return np.where(inside, -eta * np.sin(eta * psi + s),
                        -self.amplitude_ratio * eta * np.sin(eta * (psi_ext - math.pi) + s))

    def edge_derivatives(self) -> tuple[float, float]:
        """Interior phi' at theta_plus and theta_minus."""
        s, eta, half = self.shift, self.eta, 0.5 * self.a
        return -eta * math.sin(eta * half + s), -eta * math.sin(-eta * half + s)

    def matching_residuals(self) -> dict[str, float]:
        """Continuity and flux defects at both edges, scaled by eta * max(1, |A|)."""
        s, eta, half, amp, g = self.shift, self.eta, 0.5 * self.a, self.amplitude_ratio, self.gamma
        scale = eta * max(1.0, abs(amp))
        return {
            "continuity_plus": abs(math.cos(eta * half + s) - amp * math.cos(eta * (half - math.pi) + s)) / scale,
            "continuity_minus": abs(math.cos(-eta * half + s) - amp * math.cos(eta * (math.pi - half) + s)) / scale,
            "flux_plus": abs(-g * eta * math.sin(eta * half + s)
                             + amp * eta * math.sin(eta * (half - math.pi) + s)) / scale,
            "flux_minus": abs(-g * eta * math.sin(-eta * half + s)
                              + amp * eta * math.sin(eta * (math.pi - half) + s)) / scale,
        }

    def sin_ratio(self) -> float:
        """|phi'(theta+) e^{i a eta} - phi'(theta-)| / sin(a eta)."""
        dp, dm = self.edge_derivatives()
        return abs(dp * np.exp(1j * self.a * self.eta) - dm) / math.sin(self.a * self.eta)

    def with_coefficient(self, K: complex, residual: Optional[float] = None,
                         low_confidence: bool = False) -> "SingularityData":
        return dataclasses.replace(self, K=complex(K), fit_residual=residual, low_confidence=low_confidence)


def angular_profile(gamma: float, a: float, eta: float, frame: Optional[CornerFrame] = None,
                    branch: Optional[str] = None) -> SingularityData:
    """
    Angular profile of r^eta phi(theta) for a given exponent.

    Continuity at both edges is imposed exactly; the flux conditions are
    the exponent equation and are checked against settings.profile_residual_tol.

    Raises:
        DegenerateProfileError: The matching system is singular or the flux defect is too large
    """
    _check_contrast_and_opening(gamma, a)
    if branch is None:
        branch = min(("even", "odd"), key=lambda b: abs(_branch_function(gamma, a, b)(eta)))
    s = BRANCH_SHIFT[branch]
    denom = math.cos(eta * (0.5 * a - math.pi) + s)
    if abs(denom) < 1e-12:
        raise DegenerateProfileError(f"Exterior amplitude undefined for eta={eta}, a={a} ({branch} branch)")
    amp = math.cos(0.5 * eta * a + s) / denom
    theta_mid = 0.5 * (frame.theta_plus + frame.theta_minus) if frame is not None else 0.0

    sd = SingularityData(gamma=gamma, a=a, eta=eta, branch=branch, amplitude_ratio=amp,
                         theta_mid=theta_mid, frame=frame,
                         eta_residual=exponent_residual(gamma, a, eta) if eta < 1.0 else 0.0)
    residual = max(sd.matching_residuals().values())
    if residual > settings.profile_residual_tol:
        raise DegenerateProfileError(f"Angular matching defect {residual:.2e} exceeds tolerance")
    return dataclasses.replace(sd, profile_residual=residual)


def singularity_data(gamma: float, frame: CornerFrame, with_bounds: bool = False) -> SingularityData:
    """Leading exponent and profile at the corner described by frame."""
    eta = singularity_exponent(gamma, frame.a)
    sd = angular_profile(gamma, frame.a, eta, frame)
    if with_bounds:
        sd = dataclasses.replace(sd, eta_bounds=exponent_bounds(gamma))
    return sd


def singular_field(sd: SingularityData, K: complex, points) -> tuple[np.ndarray, np.ndarray]:
    """
    Values and gradients of K r^eta phi(theta).

    Raises:
        ContractViolationError: No frame attached, or a point coincides with x_c
    """
    if sd.frame is None:
        raise ContractViolationError("singular_field needs SingularityData with a corner frame")
    r, theta = sd.frame.to_local(points)
    if np.any(r <= 0.0):
        raise ContractViolationError("Singular field gradient is undefined at x_c")
    radial = r ** sd.eta
    values = K * radial * sd.phi(theta)
    e_r = sd.frame.direction(theta)
    e_t = sd.frame.direction(theta + 0.5 * math.pi)
    grads = K * (r ** (sd.eta - 1.0))[:, None] * (
        (sd.eta * sd.phi(theta))[:, None] * e_r + sd.dphi(theta)[:, None] * e_t
    )
    return values, grads


# ---------------------------------------------------------------------------
# CGO solutions
# ---------------------------------------------------------------------------
@dataclass(frozen=True, eq=False)
class CGOParams:
    """Harmonic exponential u0 = exp(rho . (x - x_c)) with rho = tau(-x_hat + i y_hat)."""
    frame: CornerFrame
    tau: float

    def __post_init__(self):
        if not self.tau > 0:
            raise ContractViolationError(f"CGO scale tau must be positive, got {self.tau}")

    @property
    def rho(self) -> np.ndarray:
        return self.tau * (-self.frame.x_hat + 1j * self.frame.y_hat)

    def exponent(self, points) -> np.ndarray:
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        return (pts - self.frame.vertex) @ self.rho

    def value(self, points) -> np.ndarray:
        e = self.exponent(points)
        if np.any(e.real > settings.cgo_overflow_exponent):
            raise SpecialFunctionError(
                f"CGO exponent {float(e.real.max()):.1f} exceeds overflow guard {settings.cgo_overflow_exponent}"
            )
        return np.exp(e)

    def gradient(self, points) -> np.ndarray:
        return self.value(points)[:, None] * self.rho[None, :]

    def normal_derivative(self, points, normals) -> np.ndarray:
        return self.value(points) * (np.asarray(normals) @ self.rho)


def cgo_field(p: CGOParams, x) -> tuple[Union[complex, np.ndarray], np.ndarray]:
    """Value and gradient of the CGO solution at one point or an array of points."""
    pts = np.asarray(x, dtype=float)
    values = p.value(pts)
    grads = values[:, None] * p.rho[None, :]
    if pts.ndim == 1:
        return complex(values[0]), grads[0]
    return values, grads


# ---------------------------------------------------------------------------
# Corner integral
# ---------------------------------------------------------------------------
def corner_integral_closed_form_value(K: complex, sd: SingularityData, tau: float) -> complex:
    """Complex value of the integral of u0 d_nu u_sing over both infinite rays."""
    if not tau > 0:
        raise ContractViolationError(f"tau must be positive, got {tau}")
    dp, dm = sd.edge_derivatives()
    return complex(K * specfun.gamma_fn(sd.eta) * tau ** (-sd.eta) * np.exp(1j * sd.eta * sd.theta_minus)
                   * (dp * np.exp(1j * sd.a * sd.eta) - dm))


def corner_integral_closed_form(K: complex, sd: SingularityData, tau: float) -> float:
    """|K| Gamma(eta) |phi'(theta+) e^{i a eta} - phi'(theta-)| tau^{-eta}."""
    if not tau > 0:
        raise ContractViolationError(f"tau must be positive, got {tau}")
    dp, dm = sd.edge_derivatives()
    return float(abs(K) * specfun.gamma_fn(sd.eta) * abs(dp * np.exp(1j * sd.a * sd.eta) - dm)
                 * tau ** (-sd.eta))


def _ray_truncation(theta: float, eta: float, tau: float) -> float:
    """Radius beyond which the ray tail is below RAY_TAIL_TOL."""
    c = math.cos(theta)
    s = RAY_TRUNCATION
    while s ** (eta - 1.0) * math.exp(-s * c) / c > RAY_TAIL_TOL:
        s *= 1.5
    if s > RAY_TRUNCATION:
        logger.debug("Ray truncation extended to %.1f/tau at theta=%.4f", s, theta)
    return s / tau


def _ray_integral(theta: float, eta: float, tau: float, r_lo: float, r_hi: float) -> complex:
    """int_{r_lo}^{r_hi} exp(-tau r e^{-i theta}) r^{eta-1} dr by adaptive quadrature."""
    z = np.exp(-1j * theta)
    s_lo, s_hi = tau * r_lo, tau * r_hi
    opts = dict(epsabs=1e-15, epsrel=1e-13, limit=1000)
    if s_lo == 0.0:
        re, _ = integrate.quad(lambda s: np.exp(-s * z).real, 0.0, s_hi, weight="alg", wvar=(eta - 1.0, 0.0), **opts)
        im, _ = integrate.quad(lambda s: np.exp(-s * z).imag, 0.0, s_hi, weight="alg", wvar=(eta - 1.0, 0.0), **opts)
    else:
        re, _ = integrate.quad(lambda s: (np.exp(-s * z) * s ** (eta - 1.0)).real, s_lo, s_hi, **opts)
        im, _ = integrate.quad(lambda s: (np.exp(-s * z) * s ** (eta - 1.0)).imag, s_lo, s_hi, **opts)
    return tau ** (-eta) * complex(re, im)


def corner_integral_quadrature(K: complex, sd: SingularityData, tau: float, r_min: float = 0.0) -> complex:
    """
    Direct quadrature of the ray integral over r > r_min, truncated where
    the exponential tail drops below RAY_TAIL_TOL.

    With r_min = 0 this is the oracle for the closed form; with r_min = h it
    is the part of the rays outside the contour ball.
    """
    dp, dm = sd.edge_derivatives()
    total = 0.0 + 0.0j
    for theta, dphi_edge in ((sd.theta_plus, dp), (sd.theta_minus, -dm)):
        r_max = _ray_truncation(theta, sd.eta, tau)
        total += dphi_edge * _ray_integral(theta, sd.eta, tau, r_min, max(r_max, 2.0 * r_min))
    return complex(K * total)


# ---------------------------------------------------------------------------
# Coefficient extraction
# ---------------------------------------------------------------------------
@dataclass(frozen=True)
class CoefficientFit:
    """Least-squares estimate of K with its fit diagnostics."""
    K: complex
    residual: float
    low_confidence: bool
    samples: int
    degraded: bool
    r_window: tuple[float, float]


def _monomials(x: np.ndarray, y: np.ndarray, degree: int) -> list[np.ndarray]:
    return [x ** (d - j) * y ** j for d in range(degree + 1) for j in range(d + 1)]


def extract_singularity_coefficient(field: Union[FieldSolution, Callable], sd: SingularityData,
                                    r_window: tuple[float, float], samples: tuple[int, int] = (8, 24),
                                    poly_degree: int = 3, secondary: bool = True,
                                    h: Optional[float] = None) -> CoefficientFit:
    """
    Fit u ~ poly(x, y) + K r^eta phi(theta) on arcs inside D's sector.

    Args:
        field: FieldSolution, or any callable mapping (n, 2) points to values
        sd: Singularity data with a corner frame
        r_window: (r_lo, r_hi) radii of the sampled arcs
        samples: (radii, angles) sample counts
        poly_degree: Degree of the smooth polynomial part (1 gives c0 + c1 x + c2 y)
        secondary: Also fit r^eta' phi' for the next exponents eta < eta' < 2
        h: Contour radius; r_hi must not exceed it

    Returns:
        CoefficientFit; a relative residual above settings.fit_low_confidence
        sets low_confidence
    """
    if sd.frame is None:
        raise ContractViolationError("Coefficient extraction needs a corner frame")
    r_lo, r_hi = map(float, r_window)
    if not 0.0 < r_lo < r_hi:
        raise ContractViolationError(f"Invalid fit window ({r_lo}, {r_hi})")
    if h is not None and r_hi > h * (1.0 + 1e-12):
        raise ContractViolationError(f"Fit window r_hi = {r_hi} exceeds h = {h}")

    radii = np.linspace(r_lo, r_hi, samples[0])
    psi = np.linspace(-0.45 * sd.a, 0.45 * sd.a, samples[1])
    rr, pp = np.meshgrid(radii, psi, indexing="ij")
    rr, theta = rr.ravel(), sd.theta_mid + pp.ravel()
    pts = sd.frame.to_global(rr, theta)

    degraded = False
    if isinstance(field, FieldSolution):
        ev = evaluate_field(field, pts)
        values, degraded = ev.values, ev.degraded
    else:
        values = np.asarray(field(pts), dtype=complex)

    x, y = rr * np.cos(theta) / r_hi, rr * np.sin(theta) / r_hi
    columns = _monomials(x, y, poly_degree)
    k_col = len(columns)
    columns.append((rr / r_hi) ** sd.eta * sd.phi(theta))
    if secondary:
        for eta2, branch2 in singularity_exponents(sd.gamma, sd.a, upper=2.0):
            if eta2 <= sd.eta + 1e-9:
                continue
            try:
                sd2 = angular_profile(sd.gamma, sd.a, eta2, sd.frame, branch2)
            except DegenerateProfileError:
                continue
            columns.append((rr / r_hi) ** eta2 * sd2.phi(theta))
    basis = np.column_stack(columns).astype(complex)

    coef, *_ = np.linalg.lstsq(basis, values, rcond=None)
    norm = np.linalg.norm(values)
    residual = float(np.linalg.norm(basis @ coef - values) / norm) if norm > 0 else 0.0
    K = complex(coef[k_col] / r_hi ** sd.eta)
    low = residual > settings.fit_low_confidence
    if low:
        logger.warning("Low-confidence K fit: residual %.3f over r in [%.3g, %.3g]", residual, r_lo, r_hi)
    logger.info("K = %.6g%+.6gj (|K| = %.4g, residual %.2e, %d samples)", K.real, K.imag, abs(K), residual, len(rr))
    return CoefficientFit(K=K, residual=residual, low_confidence=low, samples=len(rr),
                          degraded=degraded, r_window=(r_lo, r_hi))


# ---------------------------------------------------------------------------
# Integral identity
# ---------------------------------------------------------------------------
@dataclass
class _IdentityTerms:
    lhs: complex
    lhs_u: complex
    rhs: complex
    terms: dict
    flagged_mass: float
    degraded: bool


def _two_fields(sol: FieldSolution, sol_p: FieldSolution, points):
    ev = evaluate_field(sol, points, gradient=True)
    evp = evaluate_field(sol_p, points, gradient=True)
    return ev, evp


def _ray_segment_integral(sol: FieldSolution, frame: CornerFrame, h: float, weight) -> complex:
    """int over Gamma+ and Gamma- (length h) of weight * interior d_nu u."""
    total = 0.0 + 0.0j
    for theta in (frame.theta_plus, frame.theta_minus):
        end = frame.to_global(h, theta)
        total += boundary_integral(sol, frame.vertex, end, weight, trace="interior_normal")
    return total


def _identity_terms(sol: FieldSolution, sol_p: FieldSolution, cs: ContourSet, p: CGOParams,
                    sd: SingularityData, degenerate: bool, decompose: bool) -> _IdentityTerms:
    gamma, q, k = sol.scatterer.gamma, sol.scatterer.q, sol.k
    terms = {}
    flagged = 0.0
    degraded = False

    def boundary_pair(rule):
        nonlocal flagged, degraded
        ev, evp = _two_fields(sol, sol_p, rule.points)
        w = ev.values - evp.values
        dw = np.sum((ev.gradients - evp.gradients) * rule.normals, axis=1)
        u0 = p.value(rule.points)
        du0 = p.normal_derivative(rule.points, rule.normals)
        a = w * du0 * rule.weights
        b = u0 * dw * rule.weights
        mask = ev.near_boundary | evp.near_boundary
        flagged += float(np.sum(np.abs(a[mask]) + np.abs(b[mask])))
        degraded = degraded or bool(mask.any())
        return complex(np.sum(a)), complex(np.sum(b))

    terms["I4"], terms["I5"] = boundary_pair(cs.arc_q)
    terms["I6"], terms["I7"] = boundary_pair(cs.arc_e)

    ev_e, evp_e = _two_fields(sol, sol_p, cs.area_de.points)
    u0_e = p.value(cs.area_de.points)
    i8 = (ev_e.values - evp_e.values) * u0_e * cs.area_de.weights
    mask = ev_e.near_boundary | evp_e.near_boundary
    flagged += float(np.sum(np.abs(i8[mask])))
    terms["I8"] = complex(np.sum(i8))

    ev_d, evp_d = _two_fields(sol, sol_p, cs.area_d.points)
    u0_d = p.value(cs.area_d.points)
    i9 = u0_d * ev_d.values * cs.area_d.weights
    i10 = u0_d * evp_d.values * cs.area_d.weights
    mask = ev_d.near_boundary | evp_d.near_boundary
    flagged += float(np.sum(np.abs(i9[mask]) + np.abs(i10[mask])))
    terms["I9"] = complex(np.sum(i9))
    terms["I10"] = complex(np.sum(i10))
    degraded = degraded or bool(ev_e.near_boundary.any() or ev_d.near_boundary.any())

    lhs_u = (1.0 - gamma) * _ray_segment_integral(sol, cs.frame, cs.h, p.value)
    contour = terms["I4"] - terms["I5"] + terms["I6"] - terms["I7"] - k * k * terms["I8"]
    if degenerate:
        lhs = lhs_u - (1.0 - gamma) * _ray_segment_integral(sol_p, cs.frame, cs.h, p.value)
        rhs = contour - (k * k * q / gamma) * (terms["I9"] - terms["I10"])
    else:
        lhs = lhs_u
        rhs = contour - (k * k * q / gamma) * terms["I9"] + k * k * terms["I10"]

    if decompose and sd.K is not None:
        us_grad_arc = singular_field(sd, sd.K, cs.arc_d.points)[1]
        ev_arc = evaluate_field(sol, cs.arc_d.points, gradient=True)
        dn_reg = np.sum((ev_arc.gradients - us_grad_arc) * cs.arc_d.normals, axis=1)
        terms["I2"] = complex(np.sum(p.value(cs.arc_d.points) * dn_reg * cs.arc_d.weights))
        us_grad_area = singular_field(sd, sd.K, cs.area_d.points)[1]
        grad_u0 = p.gradient(cs.area_d.points)
        terms["I3"] = complex(np.sum(np.sum(grad_u0 * (ev_d.gradients - us_grad_area), axis=1)
                                     * cs.area_d.weights))
        terms["I1"] = corner_integral_quadrature(sd.K, sd, p.tau, r_min=cs.h)
    return _IdentityTerms(lhs, lhs_u, rhs, terms, flagged, degraded)


def verify_integral_identity(sol: FieldSolution, sol_prime: FieldSolution, cs: ContourSet, p: CGOParams,
                             sd: SingularityData, half_order: Optional[int] = None) -> IdentityReport:
    """
    Evaluate both sides of the corner integral identity

        (1 - gamma) int_{Gamma+-} u0 d_nu u- ds
            = int_{dS_Q u dS_e} (w d_nu u0 - u0 d_nu w) ds - k^2 int_{D~e} w u0 dx
              - (k^2 q / gamma) int_{D~} u0 u dx + k^2 int_{D~} u0 u' dx,      w = u - u'

    where the last term appears because u' solves the free Helmholtz
    equation in the ball. For D' = D the identity is taken for w itself.
    The error budget combines the change under a half-order contour rule,
    the solver residuals and an allowance for near-boundary evaluations.

    Raises:
        ContractViolationError: Solutions or contours are incompatible
    """
    if not math.isclose(sol.k, sol_prime.k, rel_tol=1e-12):
        raise ContractViolationError("Both solutions must share the wavenumber")
    d, d_prime = sol.scatterer.shape, sol_prime.scatterer.shape
    if not isinstance(d, Polygon) or not isinstance(d_prime, Polygon):
        raise ContractViolationError("The integral identity needs polygonal scatterers")
    if not math.isclose(cs.tau, p.tau, rel_tol=1e-12) or not np.allclose(cs.frame.vertex, p.frame.vertex):
        raise ContractViolationError("CGO parameters do not match the contour set")
    if sd.frame is not None and not np.allclose(sd.frame.vertex, cs.frame.vertex):
        raise ContractViolationError("Singularity data belong to another corner")

    degenerate = (d.n_vertices == d_prime.n_vertices and np.allclose(d.vertices, d_prime.vertices)
                  and sol.scatterer.gamma == sol_prime.scatterer.gamma and sol.scatterer.q == sol_prime.scatterer.q)

    full = _identity_terms(sol, sol_prime, cs, p, sd, degenerate, decompose=True)
    cs_half = build_contours(cs.frame, d, cs.boundary_q, cs.h, cs.tau,
                             order=half_order or max(4, cs.order // 2),
                             d_prime=None if degenerate else d_prime)
    half = _identity_terms(sol, sol_prime, cs_half, p, sd, degenerate, decompose=False)

    gamma, q, k = sol.scatterer.gamma, sol.scatterer.q, sol.k
    res_full = full.lhs - full.rhs
    residual = abs(res_full)
    scale = abs(full.lhs) + sum(abs(v) for v in full.terms.values())
    quad_err = abs(res_full - (half.lhs - half.rhs))
    solver_err = max(sol.residual, sol_prime.residual, settings.solver_residual_tol) \
        * max(sol.condition, sol_prime.condition, 1.0) * scale
    near_err = settings.near_boundary_rel_error * full.flagged_mass
    budget = quad_err + solver_err + near_err

    closed = decomposition = None
    if sd.K is not None:
        closed = corner_integral_closed_form_value(sd.K, sd, p.tau)
        t = full.terms
        assembled = t["I1"] + full.lhs_u / (1.0 - gamma) + t["I2"] - t["I3"] + (k * k * q / gamma) * t["I9"]
        decomposition = abs(closed - assembled)

    if residual > budget:
        logger.warning("Identity residual %.3e exceeds budget %.3e at tau=%.4g", residual, budget, p.tau)
    logger.info("Identity at tau=%.4g h=%.4g: |lhs|=%.4e residual=%.3e budget=%.3e%s", p.tau, cs.h,
                abs(full.lhs), residual, budget, " (degenerate pair)" if degenerate else "")

    return IdentityReport(
        lhs=ComplexValue.of(full.lhs),
        rhs=ComplexValue.of(full.rhs),
        residual=residual,
        budget=budget,
        quadrature_error=quad_err,
        solver_error=solver_err,
        near_boundary_error=near_err,
        terms={name: abs(v) for name, v in sorted(full.terms.items(), key=lambda kv: int(kv[0][1:]))},
        tau=p.tau,
        tau0=cs.tau0,
        h=cs.h,
        eta=sd.eta,
        K=ComplexValue.of(sd.K) if sd.K is not None else None,
        closed_form=ComplexValue.of(closed) if closed is not None else None,
        decomposition_residual=decomposition,
        sin_ratio=sd.sin_ratio(),
        degenerate_pair=degenerate,
        degraded=full.degraded,
    )
