import math

import pytest

from scatterlab.config import settings
from scatterlab.exceptions import ContractViolationError, SolverError
from scatterlab.services import experiments
from scatterlab.services.forward import IncidentField, Scatterer
from tests.conftest import SMALL_MESH


def test_delta_axis_guard():
    """The double-log axis carries the sentinel when S/eps <= e."""
    assert experiments.delta_axis(1.0, 0.5, 0.6) == settings.axis_sentinel
    assert experiments.delta_axis(1.0, 0.0, 0.6) == settings.axis_sentinel
    value = experiments.delta_axis(100.0, 1e-6, 0.5)
    assert value == pytest.approx(math.log(math.log(1e8)) ** -0.5)
    assert experiments.log_inv_loglog(1.0, 1.0) == settings.axis_sentinel


def test_parallel_map_keeps_input_order():
    """Results come back in input order for any thread count."""
    items = list(range(20))
    assert experiments.parallel_map(lambda x: x * x, items, threads=4) == [x * x for x in items]
    assert experiments.parallel_map(lambda x: x * x, items, threads=1) == [x * x for x in items]


def test_perturbation_family_members(triangle):
    """Each family produces the documented shapes."""
    moved = experiments.perturbation_family(triangle, "translation", [0.1], direction=0.5 * math.pi)
    assert moved[0][1].vertices == pytest.approx(triangle.vertices + [0.0, 0.1])
    grown = experiments.perturbation_family(triangle, "dilation", [0.1])
    assert grown[0][1].area == pytest.approx(1.21 * triangle.area)
    pulled = experiments.perturbation_family(triangle, "vertex_pull", [0.05], vertex=2)
    assert pulled[0][1].area > triangle.area


def test_perturbation_family_skips_inadmissible(triangle):
    """Members leaving B_R are skipped, not raised."""
    members = experiments.perturbation_family(triangle, "translation", [0.1, 50.0])
    assert [step for step, _ in members] == [0.1]
    with pytest.raises(ContractViolationError, match="Unknown perturbation family"):
        experiments.perturbation_family(triangle, "shear", [0.1])


def test_jitter_is_seeded(triangle):
    """The same seed gives the same jittered steps."""
    a = experiments.perturbation_family(triangle, "translation", [0.05, 0.1], seed=3, jitter=0.01)
    b = experiments.perturbation_family(triangle, "translation", [0.05, 0.1], seed=3, jitter=0.01)
    assert [s for s, _ in a] == [s for s, _ in b]


def test_isosceles_triangle_apex():
    """The apex opening is the requested angle."""
    tri = experiments.isosceles_triangle(0.3 * math.pi)
    assert tri.interior_angles[0] == pytest.approx(0.3 * math.pi)
    assert tri.centroid == pytest.approx([0.0, 0.0], abs=1e-12)


def test_failed_points_are_recorded(triangle_scatterer, monkeypatch):
    """A solver failure marks its record and the sweep continues."""
    original = experiments.solve_pattern
    calls = {"n": 0}

    def flaky(scatterer, incident, mesh_options=None, n_angles=None):
        calls["n"] += 1
        if calls["n"] == 3:
            raise SolverError("synthetic failure", condition=1e13)
        return original(scatterer, incident, mesh_options, n_angles)

    monkeypatch.setattr(experiments, "solve_pattern", flaky)
    result = experiments.run_smallness_sweep(triangle_scatterer, IncidentField.plane_wave(1.0),
                                             steps=[0.1, 0.05, 0.025], mesh_options=SMALL_MESH, n_angles=64)
    assert len(result.records) == 3
    assert [r.failed for r in result.records] == [False, True, False]
    assert "synthetic failure" in result.failures[0].error


def test_stability_sweep_translation(triangle_scatterer):
    """eps grows with d_H over translations; the fitted beta is positive."""
    steps = [0.02 * i for i in range(1, 9)]
    result = experiments.run_stability_sweep(triangle_scatterer, IncidentField.plane_wave(1.0), "translation",
                                             steps, mesh_options=SMALL_MESH, n_angles=128)
    assert not result.failures
    assert [r.measured["d_H"] for r in result.records] == pytest.approx(steps)
    assert result.fits["spearman"].value > 0.9
    assert result.fits["beta"].value > 0
    assert all(r.measured["K_m"] > 0 for r in result.records)


def test_stability_sweep_is_deterministic(triangle_scatterer):
    """Thread count does not change the table."""
    kwargs = dict(steps=[0.04, 0.08], mesh_options=SMALL_MESH, n_angles=64)
    inc = IncidentField.plane_wave(1.0)
    serial = experiments.run_stability_sweep(triangle_scatterer, inc, threads=1, **kwargs)
    threaded = experiments.run_stability_sweep(triangle_scatterer, inc, threads=2, **kwargs)
    assert [r.measured for r in serial.records] == [r.measured for r in threaded.records]


def test_solver_floor_calibration(triangle):
    """The floor is the larger of the disk-oracle and Cauchy errors."""
    floors = experiments.calibrate_solver_floor(2.0, 1.0, 1.0, triangle, SMALL_MESH, 64)
    assert floors["floor"] == max(floors["disk_oracle"], floors["cauchy"])
    assert floors["disk_oracle"] < 1e-3


def test_corner_bound_sweep():
    """Far fields stay well above the solver floor; ||u_inf||/S is amplitude free."""
    openings = [math.pi / 5, 0.3 * math.pi, 0.4 * math.pi]
    directions = [0.0, 0.5 * math.pi]
    floor = experiments.calibrate_solver_floor(2.0, 1.0, 1.0, None, SMALL_MESH, 64)["floor"]
    result = experiments.run_corner_bound_sweep(openings, directions, 2.0, 1.0, 1.0, SMALL_MESH,
                                                n_angles=64, floor=floor)
    assert len(result.records) == 6 and not result.failures
    assert result.fits["min_farfield_norm"].value >= 10.0 * floor

    loud = experiments.run_corner_bound_sweep(openings[:1], directions[:1], 2.0, 1.0, 1.0, SMALL_MESH,
                                              n_angles=64, amplitude=10.0)
    assert loud.records[0].measured["ratio"] == pytest.approx(result.records[0].measured["ratio"], rel=1e-8)


def test_smallness_sweep_monotone(triangle_scatterer):
    """Near-field differences shrink with eps over shrinking translations."""
    steps = [0.16, 0.08, 0.04, 0.02]
    result = experiments.run_smallness_sweep(triangle_scatterer, IncidentField.plane_wave(1.0), steps=steps,
                                             mesh_options=SMALL_MESH, n_angles=64)
    ok = [r for r in result.records if not r.failed]
    eps = [r.measured["epsilon"] for r in ok]
    assert eps == sorted(eps, reverse=True)
    assert result.fits["spearman_annulus_sup"].value > 0.9
    assert all(r.measured["grad_sup"] >= 0 for r in ok)


def test_herglotz_blowup(triangle):
    """The singular target needs at least the regular density norm at matched eps."""
    lambdas = [10.0 ** -e for e in range(2, 9)]
    result = experiments.run_herglotz_blowup(triangle, 2.0, 1.0, lambdas, m=32, spacing=0.05)
    assert result.singular_dominates
    norms = [f.g_norm for f in result.singular]
    assert all(b >= a * (1 - 1e-10) for a, b in zip(norms, norms[1:]))
    assert max(f.g_norm for f in result.regular) <= 2.0 * result.reference_norm


def test_stability_needs_polygon(unit_disk):
    """Disk scatterers have no corners to sweep."""
    with pytest.raises(ContractViolationError, match="polygonal"):
        experiments.run_stability_sweep(Scatterer(unit_disk, 2.0), IncidentField.plane_wave(1.0))


def test_coincident_member_is_not_a_uniqueness_violation(triangle_scatterer):
    """A zero step has d_H = 0, below mesh resolution, so a tiny eps is expected."""
    result = experiments.run_stability_sweep(triangle_scatterer, IncidentField.plane_wave(1.0), "translation",
                                             [0.0, 0.08], mesh_options=SMALL_MESH, n_angles=64, floor=1e-3)
    same, moved = result.records
    assert same.measured["d_H"] < 1e-12
    assert same.measured["epsilon"] < 2e-3
    assert same.measured["uniqueness_violation"] == 0.0
    assert "uniqueness_violation" not in same.flags + moved.flags
    assert result.fits["uniqueness"].value == 0
    assert result.fits["uniqueness"].points == 2


def test_uniqueness_violation_is_flagged(triangle_scatterer, caplog):
    """eps under twice the floor at a resolved d_H is flagged, counted and logged."""
    result = experiments.run_stability_sweep(triangle_scatterer, IncidentField.plane_wave(1.0), "translation",
                                             [0.08], mesh_options=SMALL_MESH, n_angles=64, floor=1e3)
    record = result.records[0]
    assert record.measured["d_H"] >= record.diagnostics["mesh_resolution"]
    assert "uniqueness_violation" in record.flags
    assert record.measured["uniqueness_violation"] == 1.0
    assert result.fits["uniqueness"].value == 1
    assert "below 2x solver floor" in caplog.text


def test_stability_without_floor_skips_uniqueness(triangle_scatterer):
    result = experiments.run_stability_sweep(triangle_scatterer, IncidentField.plane_wave(1.0), "translation",
                                             [0.08], mesh_options=SMALL_MESH, n_angles=64)
    assert "uniqueness" not in result.fits
    assert result.records[0].measured["uniqueness_violation"] == 0.0


def test_failed_base_fit_is_recorded(triangle_scatterer, monkeypatch):
    """A base K fit failure becomes a failed row and the members still run."""
    original = experiments.corner_coefficients
    calls = {"n": 0}

    def flaky(*args, **kwargs):
        calls["n"] += 1
        if calls["n"] == 1:
            raise SolverError("synthetic base failure", condition=1e13)
        return original(*args, **kwargs)

    monkeypatch.setattr(experiments, "corner_coefficients", flaky)
    result = experiments.run_stability_sweep(triangle_scatterer, IncidentField.plane_wave(1.0), "translation",
                                             [0.04, 0.08], mesh_options=SMALL_MESH, n_angles=64)
    base, *members = result.records
    assert base.failed and base.index == -1
    assert "synthetic base failure" in base.error
    assert len(members) == 2 and not any(r.failed for r in members)
    assert all(math.isfinite(r.measured["K_m"]) for r in members)
    assert len(result.failures) == 1


def test_smallness_annulus_is_shared(triangle_scatterer):
    """Every member is compared on one annulus that encloses the whole family."""
    steps = [0.16, 0.08, 0.04]
    result = experiments.run_smallness_sweep(triangle_scatterer, IncidentField.plane_wave(1.0), steps=steps,
                                             mesh_options=SMALL_MESH, n_angles=64)
    radii = {r.diagnostics["annulus_radius"] for r in result.records}
    assert len(radii) == 1
    radius = radii.pop()
    members = experiments.perturbation_family(triangle_scatterer.shape, "translation", steps)
    assert radius >= triangle_scatterer.radius
    assert all(radius >= Scatterer(p, 2.0).radius for _, p in members)
    assert radius == pytest.approx(Scatterer(members[0][1], 2.0).radius)


def test_herglotz_blowup_misfit_target(triangle):
    """A misfit target marks fits above it and is counted in the fits."""
    lambdas = [1e-2, 1e-8]
    result = experiments.run_herglotz_blowup(triangle, 2.0, 1.0, lambdas, m=32, spacing=0.05, epsilon_target=1e-3)
    assert all(f.achieved == (f.epsilon <= 1e-3) for f in result.regular + result.singular)
    reached = result.fits()["misfit_reached"]
    assert reached.points == 4
    assert reached.value == sum(f.achieved for f in result.regular + result.singular)
    regular, singular = result.finest()
    assert regular.lam == singular.lam == 1e-8
