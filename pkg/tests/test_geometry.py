import math

import numpy as np
import pytest

from scatterlab.exceptions import ContractViolationError, DegenerateGeometryError
from scatterlab.services.geometry import (
    Polygon,
    build_contours,
    convex_hull,
    corner_frame,
    gauss_rule,
    graded_rule,
    hausdorff_distance,
    hausdorff_realizer,
    read_polygon,
    write_polygon,
)
from scatterlab.utils.validators import AdmissibilityBounds, check_admissible, is_admissible


def test_polygon_orientation_is_normalized():
    """Clockwise input is stored counterclockwise."""
    cw = Polygon(np.array([[0.0, 0.0], [0.3, 0.8], [1.0, 0.0]]))
    assert cw.area == pytest.approx(0.4)
    assert cw.vertices.tolist() == [[1.0, 0.0], [0.3, 0.8], [0.0, 0.0]]


def test_polygon_rejects_collinear_points():
    """Zero-area vertex lists are degenerate."""
    with pytest.raises(DegenerateGeometryError, match="zero area"):
        Polygon(np.array([[0.0, 0.0], [1.0, 0.0], [2.0, 0.0]]))


def test_interior_angles_sum(triangle, square):
    """Interior angles sum to (n - 2) pi."""
    assert triangle.interior_angles.sum() == pytest.approx(math.pi)
    assert square.interior_angles == pytest.approx([0.5 * math.pi] * 4)
    assert triangle.is_convex() and triangle.is_simple()


def test_distances(square):
    """Region distance is zero inside; boundary distance is not."""
    pts = np.array([[0.0, 0.0], [1.5, 0.0]])
    assert square.distance(pts) == pytest.approx([0.0, 1.0])
    assert square.boundary_distance(pts) == pytest.approx([0.5, 1.0])
    assert square.contains(pts).tolist() == [True, False]


def test_perturbations(square):
    """Translation, dilation and vertex pull act as documented."""
    moved = square.translated([0.1, 0.0])
    assert moved.centroid == pytest.approx([0.1, 0.0])
    assert square.dilated(2.0).area == pytest.approx(4.0 * square.area)
    pulled = square.pull_vertex(0, math.sqrt(2) * 0.1)
    assert pulled.vertices[0] == pytest.approx([-0.6, -0.6])


def test_polygon_file_roundtrip(tmp_path, triangle):
    """The "x y" text format preserves vertices exactly."""
    path = tmp_path / "tri.txt"
    write_polygon(path, triangle)
    assert np.array_equal(read_polygon(path).vertices, triangle.vertices)


def test_read_polygon_rejects_bad_line(tmp_path):
    """Lines that are not 'x y' pairs name the offending line."""
    path = tmp_path / "bad.txt"
    path.write_text("0 0\n1 0 3\n0 1\n")
    with pytest.raises(DegenerateGeometryError, match=":2:"):
        read_polygon(path)


def test_convex_hull_of_square_with_interior_point(square):
    """Interior points are dropped from the hull."""
    hull = convex_hull(np.vstack([square.vertices, [[0.0, 0.0]]]))
    assert hull.n_vertices == 4
    assert hull.area == pytest.approx(1.0)


def test_convex_hull_collinear():
    """Collinear inputs are degenerate."""
    with pytest.raises(DegenerateGeometryError, match="collinear"):
        convex_hull(np.array([[0.0, 0.0], [1.0, 1.0], [2.0, 2.0]]))


def test_hausdorff_of_translation(triangle):
    """Translating a convex polygon by t gives d_H = |t|."""
    moved = triangle.translated([0.05, 0.0])
    assert hausdorff_distance(triangle, moved) == pytest.approx(0.05)
    assert hausdorff_distance(triangle, triangle) == 0.0


def _jittered_polygon(rng, n=6):
    """Convex polygon: a regular n-gon with small radial jitter, random centre."""
    t = 2.0 * math.pi * np.arange(n) / n + rng.uniform(0.0, 0.3)
    r = 1.0 + rng.uniform(-0.1, 0.1, n)
    centre = rng.uniform(-0.5, 0.5, 2)
    return Polygon(centre + np.column_stack([r * np.cos(t), r * np.sin(t)]))


def test_hausdorff_is_a_metric():
    """Symmetric, zero on the diagonal and subadditive over random triples."""
    rng = np.random.default_rng(7)
    for _ in range(20):
        a, b, c = (_jittered_polygon(rng) for _ in range(3))
        assert hausdorff_distance(a, b) == pytest.approx(hausdorff_distance(b, a), abs=1e-14)
        assert hausdorff_distance(a, a) == 0.0
        assert hausdorff_distance(a, c) <= hausdorff_distance(a, b) + hausdorff_distance(b, c) + 1e-12


def test_hausdorff_realizer(disjoint_triangles):
    """The realizer is the vertex of D farthest from D'."""
    d, d_prime = disjoint_triangles
    point, owner, dist = hausdorff_realizer(d, d_prime)
    assert owner == 0
    assert point == pytest.approx([-1.0, -0.3])
    assert dist == pytest.approx(1.4)


def test_admissibility_names_constraints():
    """Every violated constraint is reported by name."""
    sliver = Polygon(np.array([[0.0, 0.0], [1.0, 0.0], [0.5, 0.02]]))
    errors = check_admissible(sliver)
    assert any("angle below a_m" in e for e in errors)
    short = Polygon(np.array([[0.0, 0.0], [0.03, 0.0], [0.015, 0.03]]))
    assert any("length of each edge" in e for e in check_admissible(short))
    far = Polygon(np.array([[20.0, 0.0], [21.0, 0.0], [20.5, 0.8]]))
    assert any("B_R" in e for e in check_admissible(far, AdmissibilityBounds(radius=10.0)))


def test_nonconvex_polygon_is_inadmissible():
    """Reflex corners are reported."""
    arrow = Polygon(np.array([[0.0, 0.0], [1.0, 0.5], [0.0, 1.0], [0.3, 0.5]]))
    assert not is_admissible(arrow)
    assert "polygon must be convex" in check_admissible(arrow)


def test_corner_frame_right_angle(square):
    """At a square corner the frame bisects the right angle."""
    frame = corner_frame(square, square, square.vertices[0])
    assert frame.a == pytest.approx(0.5 * math.pi)
    assert frame.b == pytest.approx(0.5 * math.pi)
    assert frame.x_hat == pytest.approx([math.sqrt(0.5), math.sqrt(0.5)])
    assert frame.theta_plus - frame.theta_minus == pytest.approx(0.5 * math.pi)


def test_corner_frame_rejects_non_vertex(square):
    """x_c must be a vertex of Q."""
    with pytest.raises(ContractViolationError, match="not a vertex of Q"):
        corner_frame(square, square, [0.0, 0.0])


def test_graded_rule_integrates_weak_singularity():
    """Geometric refinement integrates r^(eta - 1) accurately."""
    x, w = graded_rule(0.0, 1.0, 16, 60)
    assert np.sum(w * x ** -0.5) == pytest.approx(2.0, rel=1e-6)


def test_contours_satisfy_properties(square):
    """Contour margins are non-negative at tau0 and 2 tau0."""
    frame = corner_frame(square, square, square.vertices[0])
    h = 0.2
    for factor in (1.0, 2.0):
        cs = build_contours(frame, square, square, h, factor * frame.tau0(h), order=12)
        assert all(m >= -1e-9 for m in cs.property_margins().values())
        assert cs.area_d.weights.sum() == pytest.approx(0.25 * math.pi * h * h, rel=1e-10)


def test_contours_reject_small_tau(square):
    """tau below tau0 is a contract violation."""
    frame = corner_frame(square, square, square.vertices[0])
    with pytest.raises(ContractViolationError, match="below tau0"):
        build_contours(frame, square, square, 0.2, 0.5 * frame.tau0(0.2))


@pytest.mark.parametrize("order", [4, 8, 12])
def test_gauss_rule_is_exact_to_degree(order):
    x, w = gauss_rule(-0.3, 1.7, order)
    for k in range(2 * order):
        exact = (1.7 ** (k + 1) - (-0.3) ** (k + 1)) / (k + 1)
        assert np.sum(w * x ** k) == pytest.approx(exact, rel=1e-12, abs=1e-12)


def test_graded_rule_is_exact_for_polynomials():
    x, w = graded_rule(0.5, 2.0, 6, 8)
    for k in range(12):
        exact = (2.0 ** (k + 1) - 0.5 ** (k + 1)) / (k + 1)
        assert np.sum(w * x ** k) == pytest.approx(exact, rel=1e-12)


def test_contour_rules_integrate_polynomials(square):
    """Edge, arc and sector rules reproduce closed-form moments in r and theta."""
    frame = corner_frame(square, square, square.vertices[0])
    h = 0.2
    cs = build_contours(frame, square, square, h, 2.0 * frame.tau0(h), order=12)
    th_m, th_p = frame.theta_minus, frame.theta_plus
    for edge in (cs.gamma_plus, cs.gamma_minus):
        r = np.linalg.norm(edge.points - frame.vertex, axis=1)
        assert edge.integrate(r).real == pytest.approx(h ** 2 / 2.0, rel=1e-12)
        assert edge.integrate(r ** 2).real == pytest.approx(h ** 3 / 3.0, rel=1e-12)
    rel = cs.area_d.points - frame.vertex
    assert cs.area_d.integrate(rel @ frame.x_hat).real == pytest.approx(
        h ** 3 / 3.0 * (math.sin(th_p) - math.sin(th_m)), rel=1e-12)
    assert cs.area_d.integrate(np.sum(rel ** 2, axis=1)).real == pytest.approx(h ** 4 / 4.0 * (th_p - th_m),
                                                                                rel=1e-12)
    assert cs.arc_d.weights.sum() == pytest.approx(h * (th_p - th_m), rel=1e-12)
