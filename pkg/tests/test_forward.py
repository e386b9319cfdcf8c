import math

import numpy as np
import pytest

from scatterlab.exceptions import ContractViolationError
from scatterlab.services.forward import (
    Disk,
    FarFieldPattern,
    IncidentField,
    Scatterer,
    boundary_integral,
    default_mesh,
    disk_series_solution,
    evaluate_field,
    far_field,
    farfield_l2_distance,
    graded_polygon_mesh,
    optical_theorem_defect,
    read_farfield_csv,
    smooth_curve_mesh,
    solve_scattering,
    write_farfield_csv,
)
from tests.conftest import SMALL_MESH


def _relative(p, oracle):
    return farfield_l2_distance(p, oracle) / oracle.l2_norm()


def test_scatterer_rejects_gamma_one_with_potential(triangle):
    """gamma = 1 is only accepted together with q = 1."""
    with pytest.raises(ContractViolationError, match="gamma != 1"):
        Scatterer(triangle, gamma=1.0, q=2.0)
    assert Scatterer(triangle, gamma=1.0, q=1.0).is_vacuum


def test_incident_plane_wave_gradient():
    """grad e^{ik x.d} = ik d e^{ik x.d}."""
    inc = IncidentField.plane_wave(2.0, 0.25 * math.pi, amplitude=3.0)
    x = np.array([[0.3, -0.7]])
    d = np.array(inc.direction)
    assert inc.gradient(x)[0] == pytest.approx(2j * d * inc.value(x)[0])
    assert abs(inc.value(x)[0]) == pytest.approx(3.0)


def test_amplitude_bound_is_linear():
    """S scales with the incident amplitude."""
    inc = IncidentField.plane_wave(1.0)
    assert inc.scaled(10.0).amplitude_bound(1.0) == pytest.approx(10.0 * inc.amplitude_bound(1.0), rel=1e-12)


def test_graded_mesh_is_graded_toward_corners(triangle):
    """Panel lengths grow away from each corner."""
    mesh = graded_polygon_mesh(triangle, panels_per_half_edge=5, order=8)
    lengths = mesh.panel_lengths[:5]
    assert np.all(np.diff(lengths) > 0)
    assert mesh.weights.sum() == pytest.approx(triangle.edge_lengths.sum(), rel=1e-12)
    assert mesh.graded


def test_smooth_mesh_perimeter(unit_disk):
    """Arc panels integrate the circumference exactly."""
    mesh = smooth_curve_mesh(unit_disk, panels=8, order=8)
    assert mesh.weights.sum() == pytest.approx(2.0 * math.pi, rel=1e-12)
    assert np.allclose(np.linalg.norm(mesh.nodes, axis=1), 1.0)


def test_disk_oracle_agreement(unit_disk):
    """Disk far field matches the cylindrical-harmonic series (gamma=2, q=1, k=1)."""
    scatterer = Scatterer(unit_disk, gamma=2.0, q=1.0)
    inc = IncidentField.plane_wave(1.0)
    oracle = disk_series_solution(unit_disk, 2.0, 1.0, 1.0).pattern(256)

    coarse = far_field(solve_scattering(scatterer, inc), 256)
    assert _relative(coarse, oracle) < 1e-3

    fine = far_field(solve_scattering(scatterer, inc, default_mesh(scatterer, 1.0, panels=32)), 256)
    assert _relative(fine, oracle) < 1e-6


def test_disk_oracle_with_potential():
    """Off-centre disk with q != 1 against the series."""
    disk = Disk((0.3, -0.2), 0.8)
    scatterer = Scatterer(disk, gamma=0.5, q=2.0)
    inc = IncidentField.plane_wave(1.5, 0.7)
    sol = solve_scattering(scatterer, inc, default_mesh(scatterer, 1.5, panels=24))
    oracle = disk_series_solution(disk, 0.5, 2.0, 1.5, angle=0.7).pattern(128)
    assert _relative(far_field(sol, 128), oracle) < 1e-6


def test_disk_near_field_against_series(unit_disk):
    """Field values inside and outside the disk match the series."""
    scatterer = Scatterer(unit_disk, gamma=2.0, q=1.0)
    sol = solve_scattering(scatterer, IncidentField.plane_wave(1.0), default_mesh(scatterer, 1.0, panels=24))
    pts = np.array([[0.2, 0.1], [-0.5, 0.3], [1.6, 0.0], [0.0, -2.5]])
    oracle = disk_series_solution(unit_disk, 2.0, 1.0, 1.0).field(pts)
    ev = evaluate_field(sol, pts)
    assert np.allclose(ev.values, oracle, atol=1e-7)
    assert ev.inside.tolist() == [True, True, False, False]


def test_vacuum_null(triangle):
    """The gamma = q = 1 shortcut gives a zero far field."""
    inc = IncidentField.plane_wave(1.0)
    scatterer = Scatterer(triangle, gamma=1.0, q=1.0)
    pattern = far_field(solve_scattering(scatterer, inc))
    assert pattern.l2_norm() < 1e-10 * inc.amplitude_bound(scatterer.radius)


def test_transmission_conditions(triangle_scatterer):
    """Solved traces satisfy the flux jump: gamma d_nu u- = d_nu u+."""
    sol = solve_scattering(triangle_scatterer, IncidentField.plane_wave(1.0),
                           default_mesh(triangle_scatterer, 1.0, **SMALL_MESH))
    assert sol.residual < 1e-10
    assert np.max(np.abs(sol.transmission_jump())) < 1e-12 * max(1.0, np.max(np.abs(sol.normal_trace)))


def test_linearity(triangle_scatterer):
    """Scaling the incident amplitude scales u_inf."""
    mesh = default_mesh(triangle_scatterer, 1.0, **SMALL_MESH)
    inc = IncidentField.plane_wave(1.0, 0.4)
    base = far_field(solve_scattering(triangle_scatterer, inc, mesh), 128)
    scaled = far_field(solve_scattering(triangle_scatterer, inc.scaled(10.0), mesh), 128)
    assert np.max(np.abs(scaled.values - 10.0 * base.values)) <= 1e-10 * np.max(np.abs(scaled.values))


@pytest.mark.parametrize("vertices", [
    [[0.0, 0.0], [1.0, 0.0], [0.3, 0.8]],
    [[-0.5, -0.5], [0.5, -0.5], [0.5, 0.5], [-0.5, 0.5]],
    [[0.0, -0.6], [0.7, -0.1], [0.4, 0.6], [-0.4, 0.5], [-0.6, -0.2]],
])
def test_reciprocity(vertices):
    """u_inf(x; d) = u_inf(-d; -x) on polygonal scatterers."""
    from scatterlab.services.geometry import Polygon

    scatterer = Scatterer(Polygon(np.array(vertices)), gamma=2.0, q=1.5)
    mesh = default_mesh(scatterer, 1.0)
    a1, a2 = 0.3, 1.9
    p1 = far_field(solve_scattering(scatterer, IncidentField.plane_wave(1.0, a1), mesh), 128)
    p2 = far_field(solve_scattering(scatterer, IncidentField.plane_wave(1.0, a2 + math.pi), mesh), 128)
    forward, backward = p1.at(a2), p2.at(a1 + math.pi)
    assert abs(forward - backward) <= 1e-4 * np.max(np.abs(p1.values))


def test_optical_theorem_on_disk(unit_disk):
    """Energy identity holds for a lossless scatterer."""
    scatterer = Scatterer(unit_disk, gamma=3.0, q=2.0)
    pattern = far_field(solve_scattering(scatterer, IncidentField.plane_wave(1.0)), 256)
    assert optical_theorem_defect(pattern, 0.0) < 1e-6


def test_far_field_grid_contract():
    """Far-field grids need an even N >= 64."""
    with pytest.raises(ContractViolationError, match="even N >= 64"):
        FarFieldPattern(1.0, np.zeros(63, dtype=complex))


def test_farfield_distance_requires_same_k():
    """Patterns at different wavenumbers are not comparable."""
    with pytest.raises(ContractViolationError):
        farfield_l2_distance(FarFieldPattern(1.0, np.zeros(64)), FarFieldPattern(2.0, np.zeros(64)))


def test_farfield_resampling(unit_disk):
    """Trigonometric resampling of a band-limited pattern is exact."""
    pattern = disk_series_solution(unit_disk, 2.0, 1.0, 1.0).pattern(128)
    fine = pattern.resampled(256)
    assert fine.values[::2] == pytest.approx(pattern.values, abs=1e-12)
    assert pattern.at(0.0) == pytest.approx(pattern.values[0], abs=1e-12)


def test_farfield_csv_roundtrip(tmp_path, unit_disk):
    """CSV holds theta, re, im at full precision."""
    pattern = disk_series_solution(unit_disk, 2.0, 1.0, 1.0).pattern(64)
    path = tmp_path / "ff.csv"
    write_farfield_csv(path, pattern)
    assert path.read_text().splitlines()[0] == "theta,re,im"
    assert np.array_equal(read_farfield_csv(path, 1.0).values, pattern.values)


def test_farfield_csv_replaces_atomically(tmp_path, unit_disk):
    """Rewrites replace the file whole and leave no temporary files behind."""
    path = tmp_path / "nested" / "ff.csv"
    first = disk_series_solution(unit_disk, 2.0, 1.0, 1.0).pattern(64)
    second = disk_series_solution(unit_disk, 3.0, 1.0, 1.0).pattern(64)
    assert write_farfield_csv(path, first) == path
    write_farfield_csv(path, second)
    assert [p.name for p in path.parent.iterdir()] == ["ff.csv"]
    assert np.array_equal(read_farfield_csv(path, 1.0).values, second.values)


def test_boundary_integral_of_unit_weight(triangle_scatterer):
    """Integrating the trace over a full edge matches the mesh rule on that edge."""
    sol = solve_scattering(triangle_scatterer, IncidentField.plane_wave(1.0),
                           default_mesh(triangle_scatterer, 1.0, **SMALL_MESH))
    v = triangle_scatterer.shape.vertices
    mesh = sol.mesh
    on_edge = np.array([mesh.panels[p].edge == 0 for p in mesh.panel_of])
    expected = np.sum(sol.trace[on_edge] * mesh.weights[on_edge])
    got = boundary_integral(sol, v[0], v[1], lambda x: np.ones(len(x)), trace="value")
    assert got == pytest.approx(expected, rel=1e-12)
    half = boundary_integral(sol, v[0], 0.5 * (v[0] + v[1]), lambda x: np.ones(len(x)), trace="value")
    rest = boundary_integral(sol, 0.5 * (v[0] + v[1]), v[1], lambda x: np.ones(len(x)), trace="value")
    assert half + rest == pytest.approx(expected, rel=1e-8)


def test_under_resolved_mesh_is_rejected(triangle_scatterer):
    """A mesh with too few nodes per wavelength is a contract violation."""
    mesh = graded_polygon_mesh(triangle_scatterer.shape, panels_per_half_edge=2, order=4)
    with pytest.raises(ContractViolationError, match="under-resolves"):
        solve_scattering(triangle_scatterer, IncidentField.plane_wave(40.0), mesh)
