"""Polygons, convex hulls, Hausdorff distance, corner frames and the
integration contours placed around a hull vertex.

Conventions
-----------
    Polygons are stored counterclockwise. The outward normal of the edge
    v_i -> v_{i+1} with unit tangent t is (t_y, -t_x).

    A corner frame is centred at a vertex x_c of the hull Q. x_hat points
    along the bisector of Q's corner into Q and y_hat = rot90(x_hat). Local
    polar angles are measured from x_hat, counterclockwise.
"""
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Union

import numpy as np
import shapely
from scipy.spatial import ConvexHull, QhullError
from shapely.geometry import Polygon as ShapelyPolygon

from scatterlab.config import settings
from scatterlab.exceptions import ContractViolationError, DegenerateGeometryError

logger = logging.getLogger(__name__)


def _cross(u: np.ndarray, v: np.ndarray) -> np.ndarray:
    return u[..., 0] * v[..., 1] - u[..., 1] * v[..., 0]


def _unit(v: np.ndarray) -> np.ndarray:
    return v / np.linalg.norm(v, axis=-1, keepdims=True)


@dataclass(frozen=True, eq=False)
class Polygon:
    """Simple polygon with counterclockwise vertices (shape (N, 2))."""

    vertices: np.ndarray

    def __post_init__(self):
        verts = np.array(self.vertices, dtype=float)
        if verts.ndim != 2 or verts.shape[1] != 2 or len(verts) < 3:
            raise DegenerateGeometryError(f"Polygon needs at least 3 planar vertices, got shape {verts.shape}")
        if not np.all(np.isfinite(verts)):
            raise DegenerateGeometryError("Polygon vertices must be finite")
        signed = 0.5 * np.sum(_cross(verts, np.roll(verts, -1, axis=0)))
        if abs(signed) <= settings.geometry_tol:
            raise DegenerateGeometryError("Polygon has zero area")
        if signed < 0:
            verts = verts[::-1].copy()
        verts.setflags(write=False)
        object.__setattr__(self, "vertices", verts)

    # Basic measures
    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    @property
    def edges(self) -> np.ndarray:
        """Edge vectors v_{i+1} - v_i, shape (N, 2)."""
        return np.roll(self.vertices, -1, axis=0) - self.vertices

    @property
    def edge_lengths(self) -> np.ndarray:
        return np.linalg.norm(self.edges, axis=1)

    @property
    def outward_normals(self) -> np.ndarray:
        t = _unit(self.edges)
        return np.column_stack([t[:, 1], -t[:, 0]])

    @property
    def interior_angles(self) -> np.ndarray:
        """Interior opening at every vertex, in (0, 2*pi)."""
        e_next = self.edges
        e_prev = -np.roll(self.edges, 1, axis=0)
        ang = np.arctan2(_cross(e_next, e_prev), np.sum(e_next * e_prev, axis=1))
        return np.mod(ang, 2.0 * np.pi)

    @property
    def area(self) -> float:
        v = self.vertices
        return float(0.5 * np.sum(_cross(v, np.roll(v, -1, axis=0))))

    @property
    def centroid(self) -> np.ndarray:
        return np.array(self.shape.centroid.coords[0])

    @property
    def shape(self) -> ShapelyPolygon:
        return ShapelyPolygon(self.vertices)

    def is_convex(self) -> bool:
        return bool(np.all(self.interior_angles < np.pi + settings.geometry_tol))

    def is_simple(self) -> bool:
        return bool(self.shape.is_valid)

    def vertex_index(self, point, tol: Optional[float] = None) -> Optional[int]:
        """Index of the vertex equal to point (within tol), or None."""
        tol = settings.geometry_tol if tol is None else tol
        d = np.linalg.norm(self.vertices - np.asarray(point, dtype=float), axis=1)
        i = int(np.argmin(d))
        return i if d[i] <= tol else None

    # Point queries
    def contains(self, points) -> np.ndarray:
        """True for points strictly inside the polygon."""
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        return np.asarray(shapely.contains_xy(self.shape, pts[:, 0], pts[:, 1]))

    def distance(self, points) -> np.ndarray:
        """Distance from points to the closed region (zero inside)."""
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        return np.asarray(shapely.distance(self.shape, shapely.points(pts)), dtype=float)

    def boundary_distance(self, points) -> np.ndarray:
        """Distance from points to the polygon boundary."""
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        return np.asarray(shapely.distance(self.shape.exterior, shapely.points(pts)), dtype=float)

    # Perturbations
    def translated(self, t) -> "Polygon":
        return Polygon(self.vertices + np.asarray(t, dtype=float))

    def dilated(self, factor: float) -> "Polygon":
        c = self.centroid
        return Polygon(c + factor * (self.vertices - c))

    def pull_vertex(self, index: int, distance: float) -> "Polygon":
        """Move one vertex outward along the exterior bisector of its corner."""
        v = self.vertices.copy()
        n = self.n_vertices
        e_next = _unit(v[(index + 1) % n] - v[index])
        e_prev = _unit(v[index - 1] - v[index])
        outward = -_unit(e_next + e_prev)
        v[index] = v[index] + distance * outward
        return Polygon(v)

    def to_list(self) -> list[list[float]]:
        return self.vertices.tolist()


def read_polygon(path: Union[str, Path]) -> Polygon:
    """Read a polygon from a text file with one "x y" pair per line."""
    rows = []
    for lineno, line in enumerate(Path(path).read_text().splitlines(), start=1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split()
        if len(parts) != 2:
            raise DegenerateGeometryError(f"{path}:{lineno}: expected 'x y', got {line!r}")
        rows.append([float(parts[0]), float(parts[1])])
    return Polygon(np.array(rows))


def write_polygon(path: Union[str, Path], polygon: Polygon) -> None:
    """Write a polygon in the "x y" text format."""
    lines = [f"{x!r} {y!r}" for x, y in polygon.vertices.tolist()]
    Path(path).write_text("\n".join(lines) + "\n")


def convex_hull(points) -> Polygon:
    """
    Smallest convex polygon containing all points.

    Args:
        points: Array-like of shape (M, 2), M >= 3

    Returns:
        Hull polygon with counterclockwise vertices taken from the inputs

    Raises:
        DegenerateGeometryError: Fewer than three points or all collinear
    """
    pts = np.asarray(points, dtype=float)
    if pts.ndim != 2 or pts.shape[1] != 2 or len(pts) < 3:
        raise DegenerateGeometryError("convex_hull needs at least three 2D points")
    centered = pts - pts.mean(axis=0)
    scale = max(np.abs(centered).max(), 1.0)
    if np.linalg.matrix_rank(centered / scale, tol=settings.geometry_tol) < 2:
        raise DegenerateGeometryError("convex_hull input points are collinear")
    try:
        hull = ConvexHull(pts)
    except QhullError as e:
        raise DegenerateGeometryError(f"convex_hull failed: {e}")
    # 2D qhull vertices are already counterclockwise
    return Polygon(pts[hull.vertices])


def _directed_hausdorff(a: Polygon, b: Polygon) -> tuple[float, np.ndarray]:
    """sup over the region a of the distance to the region b, with its realizer."""
    if b.is_convex():
        # distance to a convex set is convex, so the sup sits at a vertex of a
        d = b.distance(a.vertices)
        i = int(np.argmax(d))
        return float(d[i]), a.vertices[i]
    logger.warning("Hausdorff distance for non-convex target uses sampling")
    boundary = np.asarray(a.shape.exterior.segmentize(a.edge_lengths.min() / 200.0).coords)
    lo, hi = a.vertices.min(axis=0), a.vertices.max(axis=0)
    gx, gy = np.meshgrid(np.linspace(lo[0], hi[0], 200), np.linspace(lo[1], hi[1], 200))
    grid = np.column_stack([gx.ravel(), gy.ravel()])
    samples = np.vstack([boundary, grid[a.contains(grid)]])
    d = b.distance(samples)
    i = int(np.argmax(d))
    return float(d[i]), samples[i]


def hausdorff_distance(d1: Polygon, d2: Polygon) -> float:
    """Hausdorff distance between two closed polygonal regions."""
    return max(_directed_hausdorff(d1, d2)[0], _directed_hausdorff(d2, d1)[0])


def hausdorff_realizer(d1: Polygon, d2: Polygon) -> tuple[np.ndarray, int, float]:
    """
    Point attaining the Hausdorff distance.

    Returns:
        Tuple of (point, owner, distance) where owner is 0 if the point is a
        vertex of d1 and 1 if it is a vertex of d2
    """
    h12, p12 = _directed_hausdorff(d1, d2)
    h21, p21 = _directed_hausdorff(d2, d1)
    if h12 >= h21:
        return p12, 0, h12
    return p21, 1, h21


@dataclass(frozen=True, eq=False)
class CornerFrame:
    """Local frame at a hull vertex x_c shared by D and Q."""

    vertex: np.ndarray
    x_hat: np.ndarray
    y_hat: np.ndarray
    a: float  # opening of D at x_c
    b: float  # opening of Q at x_c
    theta_minus: float  # polar angle of D's first edge
    theta_plus: float  # polar angle of D's second edge

    @property
    def alpha_prime(self) -> float:
        return math.cos((math.pi + self.b) / 4.0)

    def tau0(self, h: float) -> float:
        """Smallest admissible CGO scale for contour radius h."""
        return 1.0 / (2.0 * h * math.sin((math.pi - self.b) / 4.0))

    def to_local(self, points) -> tuple[np.ndarray, np.ndarray]:
        """Polar coordinates (r, theta) of points in this frame."""
        p = np.atleast_2d(np.asarray(points, dtype=float)) - self.vertex
        xs = p @ self.x_hat
        ys = p @ self.y_hat
        return np.hypot(xs, ys), np.arctan2(ys, xs)

    def to_global(self, r, theta) -> np.ndarray:
        r = np.asarray(r, dtype=float)
        theta = np.asarray(theta, dtype=float)
        xs = r * np.cos(theta)
        ys = r * np.sin(theta)
        return self.vertex + xs[..., None] * self.x_hat + ys[..., None] * self.y_hat

    def direction(self, theta) -> np.ndarray:
        """Global unit vector(s) at local angle theta."""
        theta = np.asarray(theta, dtype=float)
        return np.cos(theta)[..., None] * self.x_hat + np.sin(theta)[..., None] * self.y_hat


def corner_frame(q: Polygon, d: Polygon, x_c) -> CornerFrame:
    """
    Build the corner frame of D at x_c, aligned with the bisector of Q.

    Args:
        q: Convex hull Q of D and D' (Q = D when D' is absent)
        d: Polygon D owning the vertex
        x_c: Vertex of both D and Q

    Returns:
        CornerFrame with openings a (of D) and b (of Q)

    Raises:
        ContractViolationError: x_c is not a vertex of Q or D, or the opening
            bound b <= (a + pi) / 2 fails
    """
    x_c = np.asarray(x_c, dtype=float)
    iq = q.vertex_index(x_c)
    if iq is None:
        raise ContractViolationError(f"x_c = {x_c.tolist()} is not a vertex of Q")
    idd = d.vertex_index(x_c)
    if idd is None:
        raise ContractViolationError(f"x_c = {x_c.tolist()} is not a vertex of D")

    vq = q.vertices
    nq = q.n_vertices
    q_next = _unit(vq[(iq + 1) % nq] - vq[iq])
    q_prev = _unit(vq[iq - 1] - vq[iq])
    x_hat = _unit(q_next + q_prev)
    y_hat = np.array([-x_hat[1], x_hat[0]])

    a = float(d.interior_angles[idd])
    b = float(q.interior_angles[iq])
    tol = settings.geometry_tol
    if a > b + tol:
        raise ContractViolationError(f"Opening of D ({a:.6f}) exceeds opening of Q ({b:.6f})")
    if b > (a + math.pi) / 2.0 + tol:
        raise ContractViolationError(
            f"Hull opening b = {b:.6f} exceeds (a + pi)/2 = {(a + math.pi) / 2:.6f}"
        )

    vd = d.vertices
    nd = d.n_vertices
    d_next = vd[(idd + 1) % nd] - vd[idd]
    d_prev = vd[idd - 1] - vd[idd]
    theta_minus = math.atan2(d_next @ y_hat, d_next @ x_hat)
    theta_plus = math.atan2(d_prev @ y_hat, d_prev @ x_hat)

    return CornerFrame(
        vertex=vd[idd].copy(),
        x_hat=x_hat,
        y_hat=y_hat,
        a=a,
        b=b,
        theta_minus=theta_minus,
        theta_plus=theta_plus,
    )


@dataclass(frozen=True, eq=False)
class QuadratureRule:
    """Nodes, weights and (for curves) unit normals of one contour or region."""

    points: np.ndarray
    weights: np.ndarray
    normals: Optional[np.ndarray] = None

    def integrate(self, values) -> complex:
        return complex(np.sum(np.asarray(values) * self.weights))

    @property
    def size(self) -> int:
        return len(self.weights)


def gauss_rule(lo: float, hi: float, order: int) -> tuple[np.ndarray, np.ndarray]:
    """Gauss-Legendre nodes and weights on [lo, hi]."""
    t, w = np.polynomial.legendre.leggauss(order)
    half = 0.5 * (hi - lo)
    return lo + half * (t + 1.0), half * w


def graded_rule(lo: float, hi: float, order: int, levels: int) -> tuple[np.ndarray, np.ndarray]:
    """Composite Gauss rule on [lo, hi] refined geometrically toward lo."""
    breaks = lo + (hi - lo) * np.concatenate([[0.0], 2.0 ** -np.arange(levels, -1, -1)])
    nodes, weights = [], []
    for s0, s1 in zip(breaks[:-1], breaks[1:]):
        x, w = gauss_rule(s0, s1, order)
        nodes.append(x)
        weights.append(w)
    return np.concatenate(nodes), np.concatenate(weights)


def composite_rule(breaks, order: int) -> tuple[np.ndarray, np.ndarray]:
    nodes, weights = [], []
    for s0, s1 in zip(breaks[:-1], breaks[1:]):
        if s1 - s0 <= 0:
            continue
        x, w = gauss_rule(s0, s1, order)
        nodes.append(x)
        weights.append(w)
    return np.concatenate(nodes), np.concatenate(weights)


@dataclass(frozen=True, eq=False)
class ContourSet:
    """Quadrature-equipped contours and regions around a hull vertex."""

    frame: CornerFrame
    h: float
    tau: float
    order: int
    gamma_plus: QuadratureRule
    gamma_minus: QuadratureRule
    arc_d: QuadratureRule  # r = h inside D
    arc_q: QuadratureRule  # r = h, |theta| <= (pi + b)/4
    arc_e: QuadratureRule  # exterior circular arc
    area_d: QuadratureRule  # B(x_c, h) cap D
    area_de: QuadratureRule  # complementary region outside D
    area_q: QuadratureRule  # hull sector B(x_c, h) cap Q
    boundary_q: Polygon = field(repr=False)
    arc_q_inside: np.ndarray = field(default=None, repr=False)

    @property
    def tau0(self) -> float:
        return self.frame.tau0(self.h)

    def property_margins(self) -> dict[str, float]:
        """Worst-case margins of the three contour properties (>= -tol when they hold)."""
        fr = self.frame
        beta = (math.pi + fr.b) / 4.0

        sector_pts = np.vstack([self.area_d.points, self.area_q.points, self.arc_q.points])
        rel = sector_pts - fr.vertex
        m1 = float(np.min(rel @ fr.x_hat - math.cos(beta) * np.linalg.norm(rel, axis=1)))

        outer = np.vstack([self.area_de.points, self.arc_e.points])
        m2 = float(np.min((outer - fr.vertex) @ fr.x_hat + 1.0 / self.tau))

        margins = {"sector_decay": m1, "backward_reach": m2}
        if self.tau >= self.tau0 * (1.0 - 1e-12):
            dist = self.boundary_q.boundary_distance(self.arc_e.points)
            margins["hull_clearance"] = float(np.min(dist - 1.0 / (2.0 * self.tau)))
        return margins


def _exterior_circle(h: float, beta: float, tau: float) -> tuple[float, float]:
    """Center offset c (along x_hat) and radius of the circle through
    (h, +-beta) and (-1/tau, pi) in polar frame coordinates."""
    s = 1.0 / tau
    c = (h * h - s * s) / (2.0 * h * math.cos(beta) + 2.0 * s)
    return c, c + s


def build_contours(frame: CornerFrame, d: Polygon, q: Polygon, h: float, tau: float,
                   order: Optional[int] = None, d_prime: Optional[Polygon] = None,
                   radial_levels: int = 6) -> ContourSet:
    """
    Realize the contours and regions used by the corner integral identity.

    Args:
        frame: Corner frame at x_c
        d: Polygon D
        q: Hull Q of D and D'
        h: Contour radius
        tau: CGO scale, must satisfy tau >= tau0
        order: Gauss order per piece (defaults to settings.contour_order)
        d_prime: Comparison polygon; when given and different from D the ball
            B(x_c, h) must not meet it
        radial_levels: Geometric refinement levels toward x_c

    Returns:
        ContourSet with all rules populated

    Raises:
        ContractViolationError: tau < tau0, h too large for the adjacent edges,
            the ball meets D', or a contour property fails
    """
    order = order or settings.contour_order
    tau0 = frame.tau0(h)
    if tau < tau0 * (1.0 - 1e-12):
        raise ContractViolationError(f"tau = {tau:.6g} is below tau0 = {tau0:.6g}")

    idx = d.vertex_index(frame.vertex)
    adjacent = min(d.edge_lengths[idx], d.edge_lengths[idx - 1])
    if h > adjacent / 5.0 * (1.0 + 1e-12):
        raise ContractViolationError(f"h = {h:.6g} exceeds l/5 = {adjacent / 5.0:.6g} for the adjacent edges")
    if d_prime is not None and not np.array_equal(d_prime.vertices, d.vertices):
        gap = float(d_prime.distance(frame.vertex)[0])
        if gap <= h:
            raise ContractViolationError(f"B(x_c, h) meets D' (dist = {gap:.6g} <= h = {h:.6g})")

    beta = (math.pi + frame.b) / 4.0
    th_m, th_p = frame.theta_minus, frame.theta_plus

    # Edges of D inside the ball, normals outward from the sector
    r_nodes, r_w = graded_rule(0.0, h, order, radial_levels)
    gp = QuadratureRule(
        points=frame.to_global(r_nodes, np.full_like(r_nodes, th_p)),
        weights=r_w,
        normals=np.repeat(frame.direction(th_p + math.pi / 2.0)[None, :], len(r_w), axis=0),
    )
    gm = QuadratureRule(
        points=frame.to_global(r_nodes, np.full_like(r_nodes, th_m)),
        weights=r_w,
        normals=np.repeat(frame.direction(th_m - math.pi / 2.0)[None, :], len(r_w), axis=0),
    )

    # Arcs at r = h, split where the edges cross
    t_d, w_d = gauss_rule(th_m, th_p, order)
    arc_d = QuadratureRule(points=frame.to_global(np.full_like(t_d, h), t_d),
                           weights=h * w_d, normals=frame.direction(t_d))
    t_q, w_q = composite_rule(np.array([-beta, th_m, th_p, beta]), order)
    arc_q = QuadratureRule(points=frame.to_global(np.full_like(t_q, h), t_q),
                           weights=h * w_q, normals=frame.direction(t_q))
    arc_q_inside = (t_q > th_m) & (t_q < th_p)

    # Exterior arc through (h, beta), (-1/tau, pi), (h, -beta)
    c, rho = _exterior_circle(h, beta, tau)
    phi1 = math.atan2(h * math.sin(beta), h * math.cos(beta) - c)
    phis, w_phi = composite_rule(np.linspace(phi1, 2.0 * math.pi - phi1, 5), order)
    centre = frame.vertex + c * frame.x_hat
    arc_dirs = frame.direction(phis)
    arc_e = QuadratureRule(points=centre + rho * arc_dirs, weights=rho * w_phi, normals=arc_dirs)

    # Sector regions in polar coordinates
    def polar_area(theta_breaks, radius_of):
        th, w_th = composite_rule(np.asarray(theta_breaks), order)
        pts, wts = [], []
        for t, wt in zip(th, w_th):
            rr, wr = graded_rule(0.0, radius_of(t), order, radial_levels)
            pts.append(frame.to_global(rr, np.full_like(rr, t)))
            wts.append(wt * wr * rr)
        return QuadratureRule(points=np.vstack(pts), weights=np.concatenate(wts))

    def exterior_radius(t: float) -> float:
        ct = math.cos(t)
        return c * ct + math.sqrt(c * c * ct * ct - c * c + rho * rho)

    def back_radius(t: float) -> float:
        tt = t % (2.0 * math.pi)
        if beta <= tt <= 2.0 * math.pi - beta:
            return exterior_radius(t)
        return h

    area_d = polar_area([th_m, th_p], lambda t: h)
    area_de = polar_area([th_p, beta, 2.0 * math.pi - beta, 2.0 * math.pi + th_m], back_radius)
    area_q = polar_area([-frame.b / 2.0, frame.b / 2.0], lambda t: h)

    cs = ContourSet(
        frame=frame, h=h, tau=tau, order=order,
        gamma_plus=gp, gamma_minus=gm, arc_d=arc_d, arc_q=arc_q, arc_e=arc_e,
        area_d=area_d, area_de=area_de, area_q=area_q, boundary_q=q,
        arc_q_inside=arc_q_inside,
    )

    tol = settings.geometry_tol
    for name, margin in cs.property_margins().items():
        if margin < -tol:
            raise ContractViolationError(f"Contour property '{name}' violated (margin {margin:.3e})")
    if d_prime is not None and not np.array_equal(d_prime.vertices, d.vertices):
        outer = np.vstack([area_de.points, arc_e.points])
        if np.any(d_prime.contains(outer)):
            raise ContractViolationError("Exterior contour region meets D'")

    logger.debug("Built contours at x_c=%s: h=%.4g tau=%.4g (tau0=%.4g), %d area nodes",
                 frame.vertex.tolist(), h, tau, tau0, area_d.size + area_de.size)
    return cs
