"""Empirical sweeps: far-field stability under shape perturbations, the
corner-scattering lower bound, near-field smallness propagation and the
Herglotz kernel blow-up at corners.

Every sweep point is solved independently; a ScatterlabError marks that
point failed and the sweep continues. Results are gathered in input order,
so tables do not depend on the number of worker threads.
"""
import logging
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Iterable, Optional

import numpy as np
from scipy import stats

from scatterlab.config import settings
from scatterlab.exceptions import ContractViolationError, ScatterlabError
from scatterlab.models import FitResult, SweepRecord
from scatterlab.services import corner, herglotz
from scatterlab.services.forward import (
    Disk,
    IncidentField,
    Scatterer,
    default_mesh,
    disk_series_solution,
    evaluate_field,
    far_field,
    farfield_l2_distance,
    solve_scattering,
)
from scatterlab.services.geometry import Polygon, convex_hull, corner_frame, hausdorff_distance
from scatterlab.utils.validators import AdmissibilityBounds, check_admissible

logger = logging.getLogger(__name__)

STABILITY_HEADER = ["index", "step", "d_H", "epsilon", "S", "K_m", "delta", "log_inv_loglog",
                    "uniqueness_violation", "failed"]
CORNER_BOUND_HEADER = ["index", "opening", "direction", "farfield_norm", "S", "ratio", "K_abs", "eta",
                       "near_degenerate", "failed"]
SMALLNESS_HEADER = ["index", "step", "epsilon", "annulus_sup", "hull_sup", "grad_sup", "failed"]
BLOWUP_HEADER = ["lambda", "epsilon", "g_norm"]


@dataclass
class SweepResult:
    """Ordered records of one sweep plus its empirical fits."""
    experiment: str
    records: list[SweepRecord]
    fits: dict[str, FitResult] = field(default_factory=dict)
    header: list[str] = field(default_factory=list)

    @property
    def failures(self) -> list[SweepRecord]:
        return [r for r in self.records if r.failed]


# ---------------------------------------------------------------------------
# Helpers
# ---------------------------------------------------------------------------
def delta_axis(amplitude: float, epsilon: float, eta_m: float) -> float:
    """(ln ln(S/eps))^(-eta_m), or settings.axis_sentinel when S/eps <= e."""
    if epsilon <= 0 or amplitude / epsilon <= math.e:
        return settings.axis_sentinel
    return math.log(math.log(amplitude / epsilon)) ** (-eta_m)


def log_inv_loglog(amplitude: float, epsilon: float) -> float:
    """ln(1 / ln ln(S/eps)), the abscissa of the stability fit, or the sentinel."""
    if epsilon <= 0 or amplitude / epsilon <= math.e:
        return settings.axis_sentinel
    return -math.log(math.log(math.log(amplitude / epsilon)))


def parallel_map(func: Callable, items: Iterable, threads: int = 1) -> list:
    """Ordered map over items on a thread pool (sequential for threads <= 1)."""
    items = list(items)
    if threads <= 1:
        return [func(item) for item in items]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(func, items))


def _failed(experiment: str, index: int, params: dict, error: Exception, provenance: dict) -> SweepRecord:
    logger.warning("%s point %d failed: %s", experiment, index, error)
    return SweepRecord(experiment=experiment, index=index, params=params, failed=True,
                       error=f"{type(error).__name__}: {error}", provenance=provenance)


def solve_pattern(scatterer: Scatterer, incident: IncidentField, mesh_options: Optional[dict] = None,
                  n_angles: Optional[int] = None):
    """Solve and return (solution, far-field pattern)."""
    mesh = default_mesh(scatterer, incident.k, **(mesh_options or {}))
    sol = solve_scattering(scatterer, incident, mesh)
    return sol, far_field(sol, n_angles)


def perturbation_family(polygon: Polygon, family: str, steps, direction: float = 0.0, vertex: int = 0,
                        bounds: Optional[AdmissibilityBounds] = None, seed: int = 0,
                        jitter: float = 0.0) -> list[tuple[float, Polygon]]:
    """
    Admissible members of a perturbation family, in the order of steps.

    translation moves D by step along direction; vertex_pull moves one vertex
    outward by step; dilation scales about the centroid by 1 + step.
    Inadmissible members are skipped with a logged reason.
    """
    rng = np.random.default_rng(seed)
    u = np.array([math.cos(direction), math.sin(direction)])
    members = []
    for step in steps:
        step = float(step) + (float(rng.uniform(-jitter, jitter)) if jitter > 0 else 0.0)
        try:
            if family == "translation":
                member = polygon.translated(step * u)
            elif family == "vertex_pull":
                member = polygon.pull_vertex(vertex, step)
            elif family == "dilation":
                member = polygon.dilated(1.0 + step)
            else:
                raise ContractViolationError(f"Unknown perturbation family '{family}'")
        except ContractViolationError as e:
            logger.warning("Skipping %s step %.4g: %s", family, step, e)
            continue
        errors = check_admissible(member, bounds)
        if errors:
            logger.warning("Skipping inadmissible %s step %.4g: %s", family, step, "; ".join(errors))
            continue
        members.append((step, member))
    return members


def corner_coefficients(sol, polygon: Polygon, gamma: float,
                        fit_window: tuple[float, float] = (0.125, 0.5)) -> list[tuple[float, complex, float]]:
    """(eta, K, fit residual) at every vertex of polygon, with h = l/5 of the adjacent edges."""
    out = []
    lengths = polygon.edge_lengths
    for i, vertex in enumerate(polygon.vertices):
        frame = corner_frame(polygon, polygon, vertex)
        sd = corner.singularity_data(gamma, frame)
        h = min(lengths[i], lengths[i - 1]) / 5.0
        fit = corner.extract_singularity_coefficient(sol, sd, (fit_window[0] * h, fit_window[1] * h), h=h)
        out.append((sd.eta, fit.K, fit.residual))
    return out


def calibrate_solver_floor(gamma: float, q: float, k: float, polygon: Optional[Polygon] = None,
                           mesh_options: Optional[dict] = None, n_angles: Optional[int] = None) -> dict[str, float]:
    """
    Far-field error floor of the solver at this configuration.

    Combines the L2 error against the disk series oracle (unit disk, same
    gamma, q, k, plane wave along x) with the Cauchy difference of the
    base polygon between the configured mesh and one with twice the
    panels per half edge.
    """
    mesh_options = dict(mesh_options or {})
    incident = IncidentField.plane_wave(k)
    disk = Disk((0.0, 0.0), 1.0)
    _, pattern = solve_pattern(Scatterer(disk, gamma, q), incident,
                               {key: v for key, v in mesh_options.items() if key in ("order", "panels")}, n_angles)
    oracle = disk_series_solution(disk, gamma, q, k).pattern(pattern.n)
    floors = {"disk_oracle": farfield_l2_distance(pattern, oracle)}
    if polygon is not None:
        base = Scatterer(polygon, gamma, q)
        _, coarse = solve_pattern(base, incident, mesh_options, n_angles)
        finer = dict(mesh_options)
        finer["panels_per_half_edge"] = 2 * (mesh_options.get("panels_per_half_edge") or settings.panels_per_half_edge)
        _, fine = solve_pattern(base, incident, finer, n_angles)
        floors["cauchy"] = farfield_l2_distance(coarse, fine)
    floors["floor"] = max(floors.values())
    logger.info("Solver floor: %s", {key: f"{v:.3e}" for key, v in floors.items()})
    return floors


# ---------------------------------------------------------------------------
# Stability
# ---------------------------------------------------------------------------
def run_stability_sweep(base: Scatterer, incident: IncidentField, family: str = "translation", steps=None,
                        direction: float = 0.0, vertex: int = 0, mesh_options: Optional[dict] = None,
                        threads: int = 1, n_angles: Optional[int] = None, seed: int = 0, jitter: float = 0.0,
                        fit_window: tuple[float, float] = (0.125, 0.5), floor: Optional[float] = None,
                        provenance: Optional[dict] = None) -> SweepResult:
    """
    Far-field distance eps versus Hausdorff distance d_H over a perturbation family.

    Reports the Spearman rank correlation of (d_H, eps) and the empirical
    exponent beta from a least-squares fit of ln d_H against ln(1/ln ln(S/eps)).
    With a calibrated solver floor, members with eps < 2 * floor although
    d_H is at least the smallest panel length of the base mesh are flagged
    and counted in the "uniqueness" fit.
    """
    if not isinstance(base.shape, Polygon):
        raise ContractViolationError("Stability sweeps need a polygonal base scatterer")
    steps = steps if steps is not None else [0.02 * i for i in range(1, 11)]
    provenance = dict(provenance or {}, mesh=mesh_options or {})
    members = perturbation_family(base.shape, family, steps, direction, vertex, base.bounds, seed, jitter)
    eta_m, _ = corner.exponent_bounds(base.gamma, base.bounds.angle_min, base.bounds.angle_max)

    start = time.perf_counter()
    base_sol, base_pattern = solve_pattern(base, incident, mesh_options, n_angles)
    resolution = float(base_sol.mesh.panel_lengths.min())
    base_rows = []
    try:
        base_k = min(abs(K) for _, K, _ in corner_coefficients(base_sol, base.shape, base.gamma, fit_window))
    except ScatterlabError as e:
        base_k = math.inf
        base_rows.append(_failed("stability", -1, {"step": 0.0, "base": True}, e, provenance))

    def run_point(item):
        index, (step, polygon) = item
        params = {"step": step}
        try:
            other = Scatterer(polygon, base.gamma, base.q, base.bounds)
            sol, pattern = solve_pattern(other, incident, mesh_options, n_angles)
            eps = farfield_l2_distance(base_pattern, pattern)
            d_h = hausdorff_distance(base.shape, polygon)
            amplitude = incident.amplitude_bound(max(base.radius, other.radius))
            k_m = min(base_k, min(abs(K) for _, K, _ in corner_coefficients(sol, polygon, base.gamma, fit_window)))
            axes = {"delta": delta_axis(amplitude, eps, eta_m), "log_inv_loglog": log_inv_loglog(amplitude, eps)}
            flags = []
            if axes["delta"] == settings.axis_sentinel:
                logger.warning("Stability point %d: S/eps = %.3g <= e, axes set to the sentinel", index,
                               amplitude / eps if eps > 0 else math.inf)
                flags.append("axis_sentinel")
            violation = floor is not None and eps < 2.0 * floor and d_h >= resolution
            if violation:
                logger.warning("Stability point %d: eps = %.3e below 2x solver floor %.3e at d_H = %.4g "
                               ">= mesh resolution %.4g", index, eps, floor, d_h, resolution)
                flags.append("uniqueness_violation")
            return SweepRecord(
                experiment="stability", index=index, params=params,
                measured={"d_H": d_h, "epsilon": eps, "S": amplitude, "K_m": k_m,
                          "uniqueness_violation": float(violation)},
                diagnostics={"condition": sol.condition, "residual": sol.residual, "mesh_resolution": resolution},
                axes=axes, flags=flags, provenance=provenance,
            )
        except ScatterlabError as e:
            return _failed("stability", index, params, e, provenance)

    records = base_rows + parallel_map(run_point, list(enumerate(members)), threads)
    logger.info("Stability sweep: %d points in %.1fs (%d failed)", len(records),
                time.perf_counter() - start, sum(r.failed for r in records))
    fits = _stability_fits(records)
    if floor is not None:
        ok = [r for r in records if not r.failed]
        count = sum("uniqueness_violation" in r.flags for r in ok)
        fits["uniqueness"] = FitResult(name="points with eps < 2 floor and d_H >= mesh resolution",
                                       value=float(count), points=len(ok),
                                       note=f"floor={floor:.3e}, resolution={resolution:.4g}")
    return SweepResult("stability", records, fits, STABILITY_HEADER)


def _stability_fits(records: list[SweepRecord]) -> dict[str, FitResult]:
    ok = [r for r in records if not r.failed]
    fits = {}
    if len(ok) >= 3:
        rho = stats.spearmanr([r.measured["d_H"] for r in ok], [r.measured["epsilon"] for r in ok]).correlation
        fits["spearman"] = FitResult(name="spearman(d_H, epsilon)", value=float(rho), points=len(ok))
    else:
        fits["spearman"] = FitResult(name="spearman(d_H, epsilon)", points=len(ok), note="fewer than 3 points")

    usable = [r for r in ok if r.measured["d_H"] > 0 and r.axes["log_inv_loglog"] != settings.axis_sentinel]
    if len(usable) >= 2:
        x = np.array([r.axes["log_inv_loglog"] for r in usable])
        y = np.log([r.measured["d_H"] for r in usable])
        beta = float(np.polyfit(x, y, 1)[0])
        fits["beta"] = FitResult(name="beta", value=beta, points=len(usable),
                                 note="slope of ln d_H against ln(1/ln ln(S/eps))")
    else:
        fits["beta"] = FitResult(name="beta", points=len(usable), note="fewer than 2 points above the axis guard")
    return fits


# ---------------------------------------------------------------------------
# Corner-scattering lower bound
# ---------------------------------------------------------------------------
def isosceles_triangle(opening: float, leg: float = 1.0) -> Polygon:
    """Triangle with apex angle opening at vertex 0, centred at its centroid."""
    half = 0.5 * opening
    verts = np.array([[0.0, 0.0],
                      [leg * math.cos(half), -leg * math.sin(half)],
                      [leg * math.cos(half), leg * math.sin(half)]])
    return Polygon(verts - verts.mean(axis=0))


def run_corner_bound_sweep(openings, directions, gamma: float, q: float, k: float,
                           mesh_options: Optional[dict] = None, threads: int = 1, n_angles: Optional[int] = None,
                           amplitude: float = 1.0, fit_window: tuple[float, float] = (0.125, 0.5),
                           floor: Optional[float] = None, provenance: Optional[dict] = None) -> SweepResult:
    """
    ||u_inf|| and S over isosceles triangles (apex opening a) and plane-wave directions.

    |K| and eta are taken at the apex. Records with |K| below
    settings.degenerate_k_threshold * S are flagged near-degenerate and
    excluded from the minimum ratio.
    """
    provenance = dict(provenance or {}, mesh=mesh_options or {})
    items = [(a, d) for a in openings for d in directions]

    def run_point(item):
        index, (opening, direction) = item
        params = {"opening": opening, "direction": direction}
        try:
            polygon = isosceles_triangle(opening)
            scatterer = Scatterer(polygon, gamma, q)
            incident = IncidentField.plane_wave(k, direction, amplitude)
            sol, pattern = solve_pattern(scatterer, incident, mesh_options, n_angles)
            s_val = incident.amplitude_bound(scatterer.radius)
            frame = corner_frame(polygon, polygon, polygon.vertices[0])
            sd = corner.singularity_data(gamma, frame)
            lengths = polygon.edge_lengths
            h = min(lengths[0], lengths[-1]) / 5.0
            fit = corner.extract_singularity_coefficient(sol, sd, (fit_window[0] * h, fit_window[1] * h), h=h)
            norm = pattern.l2_norm()
            flags = []
            if abs(fit.K) < settings.degenerate_k_threshold * s_val:
                flags.append("near_degenerate")
            if fit.low_confidence:
                flags.append("low_confidence_K")
            return SweepRecord(
                experiment="corner-bound", index=index, params=params,
                measured={"farfield_norm": norm, "S": s_val, "ratio": norm / s_val, "K_abs": abs(fit.K),
                          "eta": sd.eta, "near_degenerate": float("near_degenerate" in flags)},
                diagnostics={"condition": sol.condition, "residual": sol.residual, "fit_residual": fit.residual},
                flags=flags, provenance=provenance,
            )
        except ScatterlabError as e:
            return _failed("corner-bound", index, params, e, provenance)

    records = parallel_map(run_point, list(enumerate(items)), threads)
    valid = [r for r in records if not r.failed and "near_degenerate" not in r.flags]
    fits = {}
    if valid:
        worst = min(valid, key=lambda r: r.measured["ratio"])
        fits["min_ratio"] = FitResult(name="min ||u_inf||/S", value=worst.measured["ratio"], points=len(valid))
        fits["min_farfield_norm"] = FitResult(name="min ||u_inf||",
                                              value=min(r.measured["farfield_norm"] for r in valid),
                                              points=len(valid))
        if floor is not None:
            fits["floor_margin"] = FitResult(name="min ||u_inf|| / floor",
                                             value=fits["min_farfield_norm"].value / floor, points=len(valid))
    return SweepResult("corner-bound", records, fits, CORNER_BOUND_HEADER)


# ---------------------------------------------------------------------------
# Smallness propagation
# ---------------------------------------------------------------------------
def _annulus_nodes(radius: float, annulus: tuple[float, float], n_r: int = 4, n_theta: int = 48) -> np.ndarray:
    rr, tt = np.meshgrid(np.linspace(annulus[0] * radius, annulus[1] * radius, n_r),
                         2.0 * np.pi * np.arange(n_theta) / n_theta, indexing="ij")
    return np.column_stack([(rr * np.cos(tt)).ravel(), (rr * np.sin(tt)).ravel()])


def _hull_offset_nodes(hull: Polygon, distance: float, count: int = 96) -> np.ndarray:
    ring = hull.shape.buffer(distance, quad_segs=16).exterior
    s = np.linspace(0.0, ring.length, count, endpoint=False)
    return np.array([ring.interpolate(t).coords[0] for t in s])


def run_smallness_sweep(base: Scatterer, incident: IncidentField, family: str = "translation", steps=None,
                        direction: float = 0.0, vertex: int = 0, annulus: tuple[float, float] = (1.5, 2.0),
                        hull_distance: float = 0.1, mesh_options: Optional[dict] = None, threads: int = 1,
                        n_angles: Optional[int] = None, provenance: Optional[dict] = None) -> SweepResult:
    """
    Far-field distance eps against near-field differences for a shrinking family.

    Per member: sup |u - u'| over an annulus node set and over nodes at a
    fixed distance from the hull of D and D', and sup |grad(u - u')| dist(x, dQ)
    over the same hull nodes.
    """
    if not isinstance(base.shape, Polygon):
        raise ContractViolationError("Smallness sweeps need a polygonal base scatterer")
    steps = steps if steps is not None else [0.2 * 0.5 ** i for i in range(8)]
    provenance = dict(provenance or {}, mesh=mesh_options or {})
    members = [(step, Scatterer(polygon, base.gamma, base.q, base.bounds))
               for step, polygon in perturbation_family(base.shape, family, steps, direction, vertex, base.bounds)]
    base_sol, base_pattern = solve_pattern(base, incident, mesh_options, n_angles)
    # one node set for the whole family, outside every member
    ring_radius = max([base.radius] + [other.radius for _, other in members])
    ring = _annulus_nodes(ring_radius, annulus)

    def run_point(item):
        index, (step, other) = item
        params = {"step": step}
        try:
            polygon = other.shape
            sol, pattern = solve_pattern(other, incident, mesh_options, n_angles)
            hull = convex_hull(np.vstack([base.shape.vertices, polygon.vertices]))
            near = _hull_offset_nodes(hull, hull_distance)
            diff_ring = evaluate_field(base_sol, ring).values - evaluate_field(sol, ring).values
            ev_a = evaluate_field(base_sol, near, gradient=True)
            ev_b = evaluate_field(sol, near, gradient=True)
            grad_diff = np.linalg.norm(ev_a.gradients - ev_b.gradients, axis=1)
            dist_q = hull.boundary_distance(near)
            flags = ["near_boundary"] if (ev_a.degraded or ev_b.degraded) else []
            return SweepRecord(
                experiment="smallness", index=index, params=params,
                measured={"epsilon": farfield_l2_distance(base_pattern, pattern),
                          "annulus_sup": float(np.max(np.abs(diff_ring))),
                          "hull_sup": float(np.max(np.abs(ev_a.values - ev_b.values))),
                          "grad_sup": float(np.max(grad_diff * dist_q))},
                diagnostics={"condition": sol.condition, "residual": sol.residual, "annulus_radius": ring_radius},
                flags=flags, provenance=provenance,
            )
        except ScatterlabError as e:
            return _failed("smallness", index, params, e, provenance)

    records = parallel_map(run_point, list(enumerate(members)), threads)
    ok = [r for r in records if not r.failed]
    fits = {}
    if len(ok) >= 3:
        eps = [r.measured["epsilon"] for r in ok]
        for key in ("annulus_sup", "hull_sup"):
            rho = stats.spearmanr(eps, [r.measured[key] for r in ok]).correlation
            fits[f"spearman_{key}"] = FitResult(name=f"spearman(epsilon, {key})", value=float(rho), points=len(ok))
    return SweepResult("smallness", records, fits, SMALLNESS_HEADER)


# ---------------------------------------------------------------------------
# Herglotz kernel blow-up
# ---------------------------------------------------------------------------
def three_mode_density(m: int = 64) -> herglotz.HerglotzDensity:
    """Smooth reference density 1 + 0.5 e^{i t} - 0.25i e^{-2 i t}."""
    return herglotz.HerglotzDensity.from_function(
        lambda t: 1.0 + 0.5 * np.exp(1j * t) - 0.25j * np.exp(-2j * t), m)


@dataclass
class BlowupResult:
    """Density-norm curves for the regular (K = 0) and singular (K = 1) targets."""
    regular: list
    singular: list
    matched: list[tuple[float, float, float]]  # (eps, regular norm, singular norm)
    singular_dominates: bool
    eta: float
    reference_norm: float
    epsilon_target: Optional[float] = None

    def fits(self) -> dict[str, FitResult]:
        fits = {
            "singular_dominates": FitResult(name="singular ||g|| >= regular ||g|| at matched eps",
                                            value=float(self.singular_dominates), points=len(self.matched)),
            "max_regular_norm": FitResult(name="max regular ||g|| / ||g_ref||",
                                          value=max(f.g_norm for f in self.regular) / self.reference_norm,
                                          points=len(self.regular)),
        }
        if self.epsilon_target is not None:
            fits["misfit_reached"] = FitResult(
                name="fits with eps <= misfit target",
                value=float(sum(f.achieved for f in self.regular + self.singular)),
                points=len(self.regular) + len(self.singular), note=f"target={self.epsilon_target:.3e}")
        return fits

    def finest(self) -> tuple:
        """(regular, singular) fits at the smallest regularization weight."""
        return min(self.regular, key=lambda f: f.lam), min(self.singular, key=lambda f: f.lam)


def _matched_comparison(regular: list, singular: list) -> list[tuple[float, float, float]]:
    """Singular-curve norm interpolated (log-log) at each regular eps inside its range."""
    eps_s = np.log([f.epsilon for f in singular])
    norm_s = np.log([max(f.g_norm, 1e-300) for f in singular])
    order = np.argsort(eps_s)
    eps_s, norm_s = eps_s[order], norm_s[order]
    out = []
    for f in regular:
        e = math.log(f.epsilon)
        if eps_s[0] <= e <= eps_s[-1]:
            out.append((f.epsilon, f.g_norm, float(np.exp(np.interp(e, eps_s, norm_s)))))
    return out


def run_herglotz_blowup(polygon: Polygon, gamma: float, k: float, lambdas, m: int = 64, spacing: float = 0.05,
                        vertex: int = 0, eta: Optional[float] = None, threads: int = 1,
                        epsilon_target: Optional[float] = None) -> BlowupResult:
    """
    Regularized density fits for a regular and a corner-singular target on D.

    The regular target is the Herglotz wave of a three-mode density; the
    singular target adds r^eta phi(theta) at the chosen vertex. Both are
    normalized to discrete H^1 norm 1 before fitting. With epsilon_target set,
    fits whose misfit stays above it report achieved=False.
    """
    grid = herglotz.make_grid(polygon, spacing)
    reference = three_mode_density(m)
    regular = herglotz.herglotz_wave(reference, k, grid.points)

    frame = corner_frame(polygon, polygon, polygon.vertices[vertex])
    sd = corner.singularity_data(gamma, frame)
    if eta is not None:
        sd = corner.angular_profile(gamma, frame.a, eta, frame)
    r, _ = frame.to_local(grid.points)
    singular_part = np.zeros(grid.size, dtype=complex)
    away = r > 0
    singular_part[away] = corner.singular_field(sd, 1.0, grid.points[away])[0]
    singular = regular + singular_part

    regular_scale = herglotz.discrete_h1_norm(regular, grid)
    targets = [regular / regular_scale, singular / herglotz.discrete_h1_norm(singular, grid)]
    operator = herglotz.HerglotzFitOperator(grid, k, m)
    curves = parallel_map(lambda target: [operator.solve(target, lam, epsilon_target) for lam in lambdas],
                          targets, threads)

    matched = _matched_comparison(curves[0], curves[1])
    dominates = all(s >= r_ for _, r_, s in matched)
    if not dominates:
        logger.warning("Singular-target density norm falls below the regular one at some matched eps")
    logger.info("Blow-up fits: %d lambdas, %d matched points, singular dominates: %s",
                len(lambdas), len(matched), dominates)
    return BlowupResult(regular=curves[0], singular=curves[1], matched=matched, singular_dominates=dominates,
                        eta=sd.eta, reference_norm=reference.l2_norm() / regular_scale,
                        epsilon_target=epsilon_target)
