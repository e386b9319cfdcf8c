import math

import numpy as np
import pytest

from scatterlab.config import settings
from scatterlab.exceptions import ContractViolationError, SpecialFunctionError
from scatterlab.services import corner
from scatterlab.services.forward import IncidentField, Scatterer, default_mesh, solve_scattering
from scatterlab.services.geometry import build_contours, convex_hull, corner_frame
from tests.conftest import SMALL_MESH


def test_right_angle_exponent(right_angle):
    """gamma = 3 at a right angle gives eta = (2/pi) arccos(1/4)."""
    eta = corner.singularity_exponent(3.0, right_angle)
    assert eta == pytest.approx(2.0 / math.pi * math.acos(0.25), abs=1e-6)
    assert corner.exponent_residual(3.0, right_angle, eta) < 1e-12


def test_exponent_residual_random_draws():
    """Residual stays below 1e-12 over random admissible (gamma, a)."""
    rng = np.random.default_rng(7)
    for _ in range(50):
        gamma = rng.uniform(1.5, 10.0) if rng.random() < 0.5 else rng.uniform(0.1, 0.67)
        a = rng.uniform(0.2 * math.pi, 0.8 * math.pi)
        eta = corner.singularity_exponent(gamma, a)
        assert 0.0 < eta < 1.0
        assert corner.exponent_residual(gamma, a, eta) < 1e-12


def test_exponent_is_symmetric_in_contrast():
    """gamma and 1/gamma share the exponent equation up to the branch."""
    a = 0.4 * math.pi
    assert corner.singularity_exponent(4.0, a) == pytest.approx(corner.singularity_exponent(0.25, a), abs=1e-12)


def test_exponent_rejects_unit_contrast(right_angle):
    """gamma = 1 has no corner singularity."""
    with pytest.raises(ContractViolationError, match="gamma != 1"):
        corner.singularity_exponent(1.0, right_angle)


def test_exponents_listed_per_branch(right_angle):
    """The smallest listed root is the leading exponent."""
    roots = corner.singularity_exponents(3.0, right_angle, upper=2.0)
    assert roots == sorted(roots)
    assert {b for _, b in roots} <= {"even", "odd"}
    assert roots[0][0] == pytest.approx(corner.singularity_exponent(3.0, right_angle))


def test_exponent_bounds_cover_range():
    """(eta_m, eta_M) bracket the exponent over the admissible openings."""
    lo, hi = corner.exponent_bounds(2.0, 0.3, 2.5, samples=16)
    assert 0.0 < lo <= corner.singularity_exponent(2.0, 1.2) <= hi < 1.0


def test_profile_matching(right_angle):
    """Continuity and flux defects vanish at both edges."""
    sd = corner.angular_profile(3.0, right_angle, corner.singularity_exponent(3.0, right_angle))
    assert max(sd.matching_residuals().values()) < settings.profile_residual_tol
    assert sd.phi(0.0) == pytest.approx(1.0) or sd.branch == "odd"
    edges = np.array([sd.theta_plus, sd.theta_minus])
    inside = sd.phi(edges - np.sign(edges) * 1e-9)
    outside = sd.phi(edges + np.sign(edges) * 1e-9)
    assert inside == pytest.approx(outside, abs=1e-7)


def test_sin_ratio_is_finite(right_angle):
    """The edge-derivative ratio is reported, not asserted."""
    sd = corner.angular_profile(3.0, right_angle, corner.singularity_exponent(3.0, right_angle))
    assert math.isfinite(sd.sin_ratio()) and sd.sin_ratio() > 0


def test_closed_form_against_ray_quadrature(right_angle):
    """Closed form matches the truncated-ray oracle to 1e-6."""
    sd = corner.angular_profile(3.0, right_angle, corner.singularity_exponent(3.0, right_angle))
    K = 0.7 - 0.2j
    for tau in (4.0, 8.0, 16.0):
        closed = corner.corner_integral_closed_form_value(K, sd, tau)
        oracle = corner.corner_integral_quadrature(K, sd, tau)
        assert abs(closed - oracle) <= 1e-6 * abs(closed)
        assert corner.corner_integral_closed_form(K, sd, tau) == pytest.approx(abs(closed), rel=1e-14)


def test_closed_form_tau_scaling(right_angle):
    """Doubling tau scales the magnitude by exactly 2^-eta."""
    sd = corner.angular_profile(2.0, 1.1, corner.singularity_exponent(2.0, 1.1))
    ratio = corner.corner_integral_closed_form(1.0, sd, 10.0) / corner.corner_integral_closed_form(1.0, sd, 5.0)
    assert ratio == pytest.approx(2.0 ** -sd.eta, rel=1e-14)


def test_singular_field_gradient(square):
    """Analytic gradient of K r^eta phi matches central differences."""
    frame = corner_frame(square, square, square.vertices[0])
    sd = corner.singularity_data(3.0, frame)
    x = frame.to_global(0.1, 0.3)[None, :]
    _, grad = corner.singular_field(sd, 1.5, x)
    step = 1e-6
    fd = [(corner.singular_field(sd, 1.5, x + step * e)[0] - corner.singular_field(sd, 1.5, x - step * e)[0])[0]
          / (2 * step) for e in np.eye(2)]
    assert grad[0] == pytest.approx(np.array(fd), rel=1e-6)
    with pytest.raises(ContractViolationError, match="undefined at x_c"):
        corner.singular_field(sd, 1.0, frame.vertex[None, :])


def test_cgo_overflow_guard(square):
    """Exponents past the guard raise instead of overflowing."""
    frame = corner_frame(square, square, square.vertices[0])
    p = corner.CGOParams(frame, 1e4)
    far_back = frame.vertex - 1.0 * frame.x_hat
    with pytest.raises(SpecialFunctionError, match="overflow guard"):
        p.value(far_back[None, :])
    value, grad = corner.cgo_field(p, frame.vertex)
    assert value == pytest.approx(1.0)
    assert grad == pytest.approx(p.rho)


def test_cgo_is_harmonic(square):
    """rho . rho = 0, so u0 solves Laplace's equation."""
    frame = corner_frame(square, square, square.vertices[0])
    rho = corner.CGOParams(frame, 3.0).rho
    assert abs(rho @ rho) < 1e-12


def _synthetic(sd, K, c):
    frame = sd.frame

    def field(points):
        r, theta = frame.to_local(points)
        return c[0] + c[1] * points[:, 0] + c[2] * points[:, 1] + K * r ** sd.eta * sd.phi(theta)
    return field


def test_coefficient_extraction_synthetic(triangle):
    """K is recovered to 1e-3 from smooth-plus-singular fields."""
    rng = np.random.default_rng(11)
    frame = corner_frame(triangle, triangle, triangle.vertices[0])
    sd = corner.singularity_data(2.0, frame)
    h = min(triangle.edge_lengths[0], triangle.edge_lengths[-1]) / 5.0
    for _ in range(10):
        K = complex(rng.normal(), rng.normal())
        c = rng.normal(size=3) + 1j * rng.normal(size=3)
        fit = corner.extract_singularity_coefficient(_synthetic(sd, K, c), sd, (0.125 * h, 0.5 * h), h=h)
        assert abs(fit.K - K) <= 1e-3 * abs(K)
        assert not fit.low_confidence


def test_coefficient_extraction_window_halving(triangle):
    """Halving the fit window changes K by less than 5%."""
    frame = corner_frame(triangle, triangle, triangle.vertices[1])
    sd = corner.singularity_data(3.0, frame)
    field = _synthetic(sd, 0.8 + 0.3j, (1.0, -0.5, 0.25))
    h = 0.1
    full = corner.extract_singularity_coefficient(field, sd, (0.125 * h, 0.5 * h), h=h)
    half = corner.extract_singularity_coefficient(field, sd, (0.0625 * h, 0.25 * h), h=h)
    assert abs(full.K - half.K) < 0.05 * abs(full.K)


def test_coefficient_window_checks(triangle):
    """Windows beyond h or with r_lo >= r_hi are rejected."""
    frame = corner_frame(triangle, triangle, triangle.vertices[0])
    sd = corner.singularity_data(2.0, frame)
    with pytest.raises(ContractViolationError, match="exceeds h"):
        corner.extract_singularity_coefficient(lambda x: np.zeros(len(x)), sd, (0.01, 0.2), h=0.1)
    with pytest.raises(ContractViolationError, match="Invalid fit window"):
        corner.extract_singularity_coefficient(lambda x: np.zeros(len(x)), sd, (0.05, 0.01))


def test_coefficient_from_solution_is_nonzero(triangle_scatterer):
    """A penetrable triangle under a plane wave has a nondegenerate corner coefficient."""
    sol = solve_scattering(triangle_scatterer, IncidentField.plane_wave(1.0),
                           default_mesh(triangle_scatterer, 1.0, **SMALL_MESH))
    poly = triangle_scatterer.shape
    frame = corner_frame(poly, poly, poly.vertices[0])
    sd = corner.singularity_data(2.0, frame)
    h = min(poly.edge_lengths[0], poly.edge_lengths[-1]) / 5.0
    fit = corner.extract_singularity_coefficient(sol, sd, (0.125 * h, 0.5 * h), h=h)
    assert abs(fit.K) > settings.degenerate_k_threshold


def _identity_setup(d, d_prime, order=16, mesh=SMALL_MESH):
    inc = IncidentField.plane_wave(1.0, 0.3)
    solutions = []
    for poly in (d, d_prime):
        s = Scatterer(poly, gamma=2.0, q=1.0)
        solutions.append(solve_scattering(s, inc, default_mesh(s, 1.0, **mesh)))
    x_c = d.vertices[d.vertex_index([-1.0, -0.3])]
    degenerate = d is d_prime
    q = d if degenerate else convex_hull(np.vstack([d.vertices, d_prime.vertices]))
    frame = corner_frame(q, d, x_c)
    idx = d.vertex_index(x_c)
    h = min(d.edge_lengths[idx], d.edge_lengths[idx - 1]) / 5.0
    sd = corner.singularity_data(2.0, frame)
    fit = corner.extract_singularity_coefficient(solutions[0], sd, (0.125 * h, 0.5 * h), h=h)
    sd = sd.with_coefficient(fit.K, fit.residual, fit.low_confidence)
    tau = 2.0 * frame.tau0(h)
    cs = build_contours(frame, d, q, h, tau, order=order, d_prime=None if degenerate else d_prime)
    return solutions, cs, corner.CGOParams(frame, tau), sd


def test_integral_identity_disjoint_pair(disjoint_triangles):
    """Both sides agree within the reported error budget."""
    d, d_prime = disjoint_triangles
    (sol, sol_p), cs, p, sd = _identity_setup(d, d_prime)
    report = corner.verify_integral_identity(sol, sol_p, cs, p, sd)
    assert report.within_budget
    assert report.tau >= report.tau0
    assert not report.degenerate_pair
    assert set(report.terms) >= {f"I{i}" for i in range(4, 11)}


def test_integral_identity_degenerate_pair(disjoint_triangles):
    """D' = D gives a residual at the solver floor."""
    d, _ = disjoint_triangles
    (sol, sol_p), cs, p, sd = _identity_setup(d, d)
    report = corner.verify_integral_identity(sol, sol_p, cs, p, sd)
    assert report.degenerate_pair
    assert report.residual <= max(report.budget, 1e-10)


def test_identity_residual_shrinks_under_refinement(disjoint_triangles):
    """Finer boundary and contour rules at least halve the residual, down to round-off."""
    d, d_prime = disjoint_triangles
    reports = []
    for order, mesh in ((16, SMALL_MESH), (32, {"order": 16, "panels_per_half_edge": 8})):
        (sol, sol_p), cs, p, sd = _identity_setup(d, d_prime, order=order, mesh=mesh)
        reports.append(corner.verify_integral_identity(sol, sol_p, cs, p, sd))
    coarse, fine = reports
    scale = math.hypot(fine.lhs.re, fine.lhs.im)
    assert fine.residual <= max(0.5 * coarse.residual, 1e-10 * scale)


def test_identity_rejects_mismatched_cgo(disjoint_triangles):
    """CGO parameters must belong to the contour set."""
    d, d_prime = disjoint_triangles
    (sol, sol_p), cs, p, sd = _identity_setup(d, d_prime, order=8)
    with pytest.raises(ContractViolationError, match="do not match"):
        corner.verify_integral_identity(sol, sol_p, cs, corner.CGOParams(p.frame, 2.0 * p.tau), sd)
