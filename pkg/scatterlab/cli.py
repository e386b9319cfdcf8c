"""
Command-line entry point.

    python -m scatterlab <kind> --config <path> [--threads N] [--out DIR]
    python -m scatterlab schema

./run.py takes the same arguments from a source checkout; no console script is installed.

Exit codes: 0 success, 1 other error, 2 config error, 3 solver error, 4 contract violation.
"""
import argparse
import json
import logging
import math
import sys
import time
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Callable, Optional, Union

import numpy as np
from pydantic import ValidationError
from rich.console import Console
from rich.logging import RichHandler

from scatterlab import __version__
from scatterlab.config import override, settings
from scatterlab.exceptions import ConfigError, ContractViolationError, ScatterlabError
from scatterlab.models import EXPERIMENT_KINDS, ExperimentConfig, FitResult, RunManifest, ScattererSpec
from scatterlab.services import corner, experiments, herglotz
from scatterlab.services.forward import (
    Disk,
    FarFieldPattern,
    IncidentField,
    Scatterer,
    default_mesh,
    far_field,
    optical_theorem_defect,
    solve_scattering,
    write_farfield_csv,
)
from scatterlab.services.geometry import (
    Polygon,
    build_contours,
    convex_hull,
    corner_frame,
    hausdorff_realizer,
    read_polygon,
)
from scatterlab.utils import persistence
from scatterlab.utils.validators import check_admissible, validate_contrast, validate_potential

logger = logging.getLogger("scatterlab")


def setup_logging(level: Optional[str] = None) -> None:
    handler = RichHandler(console=Console(stderr=True), rich_tracebacks=True, show_path=False)
    logging.basicConfig(level=(level or settings.log_level).upper(), format="%(message)s",
                        datefmt="[%X]", handlers=[handler], force=True)


# ---------------------------------------------------------------------------
# Config parsing
# ---------------------------------------------------------------------------
def _format_pydantic_errors(exc: ValidationError) -> list[str]:
    out = []
    for err in exc.errors():
        loc = ".".join(str(p) for p in err["loc"]) or "<root>"
        out.append(f"{loc}: {err['msg']}")
    return out


def _load_shape(spec: ScattererSpec, base_dir: Path) -> Union[Polygon, Disk]:
    if spec.disk is not None:
        return Disk(spec.disk.center, spec.disk.radius)
    if spec.polygon_file is not None:
        path = Path(spec.polygon_file)
        return read_polygon(path if path.is_absolute() else base_dir / path)
    return Polygon(np.array(spec.polygon, dtype=float))


def _admissibility_violations(config: ExperimentConfig, base_dir: Path) -> list[str]:
    violations = []
    for name in ("scatterer", "comparison"):
        spec = getattr(config, name)
        if spec is None:
            continue
        try:
            shape = _load_shape(spec, base_dir)
        except (ScatterlabError, OSError) as e:
            violations.append(f"{name}: {e}")
            continue
        if spec.gamma == 1.0 and spec.q == 1.0:
            continue  # vacuum shortcut
        errors = validate_contrast(spec.gamma) + validate_potential(spec.q)
        if isinstance(shape, Polygon):
            errors += check_admissible(shape)
        violations += [f"{name}: {e}" for e in errors]
    if config.kind in ("eta", "profile"):
        violations += [f"corner: {e}" for e in validate_contrast(config.corner.gamma)]
        if not settings.angle_min <= config.corner.opening <= settings.angle_max:
            violations.append(f"corner: opening in [a_m, a_M] = [{settings.angle_min:.6f}, "
                              f"{settings.angle_max:.6f}]: got {config.corner.opening}")
    return violations


def parse_config(path: Union[str, Path], kind: Optional[str] = None) -> ExperimentConfig:
    """
    Read and validate a JSON experiment config.

    Args:
        path: Config file
        kind: Experiment kind from the command line; fills a missing "kind"
            key and must match a present one

    Returns:
        Validated ExperimentConfig

    Raises:
        ConfigError: Unreadable file, malformed JSON (with line and column),
            schema violations or admissibility violations (all of them)
    """
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as e:
        raise ConfigError(f"Cannot read config {path}: {e}")
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as e:
        raise ConfigError(f"Malformed JSON in {path} at line {e.lineno}, column {e.colno}: {e.msg}",
                          line=e.lineno, column=e.colno)
    if not isinstance(raw, dict):
        raise ConfigError(f"Config {path} must hold a JSON object")
    if kind is not None:
        if raw.setdefault("kind", kind) != kind:
            raise ConfigError(f"Config kind '{raw['kind']}' does not match command '{kind}'")

    try:
        config = ExperimentConfig.model_validate(raw)
    except ValidationError as e:
        violations = _format_pydantic_errors(e)
        raise ConfigError(f"{len(violations)} config violation(s): " + "; ".join(violations),
                          violations=violations)

    violations = _admissibility_violations(config, path.parent)
    if violations:
        raise ConfigError("Inadmissible configuration: " + "; ".join(violations), violations=violations)
    return config


# ---------------------------------------------------------------------------
# Run context
# ---------------------------------------------------------------------------
@dataclass
class RunContext:
    config: ExperimentConfig
    out_dir: Path
    threads: int
    base_dir: Path = Path(".")
    outputs: list[str] = field(default_factory=list)
    floors: dict[str, float] = field(default_factory=dict)
    fits: dict = field(default_factory=dict)
    failures: list[dict] = field(default_factory=list)

    @property
    def mesh_options(self) -> dict:
        m = self.config.mesh
        return {"order": m.panel_order, "panels_per_half_edge": m.panels_per_half_edge,
                "grading": m.grading, "panels": m.smooth_panels}

    @property
    def n_angles(self) -> int:
        return self.config.mesh.farfield_angles

    @property
    def misfit_target(self) -> Optional[float]:
        return self.config.tolerances.misfit_target

    @property
    def provenance(self) -> dict:
        return {"config_hash": persistence.config_hash(self.config.model_dump(mode="json"))}

    def scatterer(self, name: str = "scatterer") -> Scatterer:
        spec = getattr(self.config, name)
        return Scatterer(_load_shape(spec, self.base_dir), spec.gamma, spec.q)

    def incident(self) -> IncidentField:
        spec = self.config.incident
        if spec.kind == "herglotz":
            density = herglotz.HerglotzDensity(np.array([complex(re, im) for re, im in spec.density]))
            return IncidentField.herglotz(spec.k, density.values)
        return IncidentField.plane_wave(spec.k, spec.angle, spec.amplitude)

    def output(self, name: str) -> Path:
        path = self.out_dir / name
        self.outputs.append(name)
        return path

    def add_fits(self, fits: dict[str, FitResult]) -> None:
        self.fits.update({name: fit.model_dump() for name, fit in fits.items()})

    def add_records(self, result: "experiments.SweepResult") -> None:
        persistence.write_records_csv(self.output(f"{result.experiment}.csv"), result.header, result.records)
        persistence.write_json(self.output(f"{result.experiment}_records.json"),
                               [r.model_dump(mode="json") for r in result.records])
        self.add_fits(result.fits)
        self.failures += [{"index": r.index, "params": r.params, "error": r.error} for r in result.failures]


# ---------------------------------------------------------------------------
# Experiment kinds
# ---------------------------------------------------------------------------
def _write_pattern(ctx: RunContext, pattern: FarFieldPattern) -> None:
    write_farfield_csv(ctx.output("farfield.csv"), pattern)


def run_solve(ctx: RunContext) -> None:
    scatterer, incident = ctx.scatterer(), ctx.incident()
    mesh = default_mesh(scatterer, incident.k, **ctx.mesh_options)
    sol = solve_scattering(scatterer, incident, mesh, threads=ctx.threads)
    rows = ([x, y, t.real, t.imag, d.real, d.imag]
            for (x, y), t, d in zip(mesh.nodes, sol.trace, sol.normal_trace))
    persistence.write_csv(ctx.output("boundary.csv"), ["x", "y", "trace_re", "trace_im", "dn_re", "dn_im"], rows)
    pattern = far_field(sol, ctx.n_angles)
    _write_pattern(ctx, pattern)
    ctx.fits["diagnostics"] = sol.diagnostics()
    ctx.fits["farfield_norm"] = pattern.l2_norm()


def run_farfield(ctx: RunContext) -> None:
    scatterer, incident = ctx.scatterer(), ctx.incident()
    mesh = default_mesh(scatterer, incident.k, **ctx.mesh_options)
    sol = solve_scattering(scatterer, incident, mesh, threads=ctx.threads)
    pattern = far_field(sol, ctx.n_angles)
    _write_pattern(ctx, pattern)
    ctx.fits["farfield_norm"] = pattern.l2_norm()
    ctx.fits["S"] = incident.amplitude_bound(scatterer.radius)
    if incident.kind == "plane" and not scatterer.is_vacuum:
        angle = math.atan2(incident.direction[1], incident.direction[0])
        unit = FarFieldPattern(pattern.k, pattern.values / incident.amplitude)
        ctx.fits["optical_theorem_defect"] = optical_theorem_defect(unit, angle)


def run_eta(ctx: RunContext) -> None:
    gamma, a = ctx.config.corner.gamma, ctx.config.corner.opening
    eta = corner.singularity_exponent(gamma, a)
    residual = corner.exponent_residual(gamma, a, eta)
    roots = corner.singularity_exponents(gamma, a)
    print(f"eta = {eta:.12f}")
    print(f"residual = {residual:.3e}")
    ctx.fits.update({"eta": eta, "residual": residual,
                     "roots": [{"eta": r, "branch": b} for r, b in roots]})
    persistence.write_json(ctx.output("eta.json"), {"gamma": gamma, "a": a, "eta": eta, "residual": residual,
                                                    "roots": ctx.fits["roots"]})


def run_profile(ctx: RunContext) -> None:
    gamma, a = ctx.config.corner.gamma, ctx.config.corner.opening
    sd = corner.angular_profile(gamma, a, corner.singularity_exponent(gamma, a))
    theta = np.linspace(-math.pi, math.pi, 721, endpoint=False)
    phi, dphi = sd.phi(theta), sd.dphi(theta)
    persistence.write_csv(ctx.output("profile.csv"), ["theta", "phi", "dphi"],
                          ([float(t), float(p), float(dp)] for t, p, dp in zip(theta, phi, dphi)))
    ctx.fits.update({"eta": sd.eta, "branch": sd.branch, "amplitude_ratio": sd.amplitude_ratio,
                     "matching_residuals": sd.matching_residuals(), "sin_ratio": sd.sin_ratio()})


def _identity_corner(ctx: RunContext, d: Polygon, d_prime: Polygon):
    """(x_c, swap) with swap True when x_c belongs to the comparison polygon."""
    if ctx.config.corner.vertex is not None:
        x_c = np.array(ctx.config.corner.vertex, dtype=float)
        if d.vertex_index(x_c) is not None:
            return x_c, False
        if d_prime.vertex_index(x_c) is not None:
            return x_c, True
        raise ContractViolationError(f"corner.vertex {x_c.tolist()} is not a vertex of either polygon")
    point, owner, dist = hausdorff_realizer(d, d_prime)
    if dist == 0.0:
        return d.vertices[0].copy(), False
    return point, owner == 1


def run_identity(ctx: RunContext) -> None:
    sol_a, sol_b = (solve_scattering(s, ctx.incident(), default_mesh(s, ctx.config.incident.k, **ctx.mesh_options),
                                     threads=ctx.threads)
                    for s in (ctx.scatterer(), ctx.scatterer("comparison")))
    x_c, swap = _identity_corner(ctx, sol_a.scatterer.shape, sol_b.scatterer.shape)
    sol, sol_prime = (sol_b, sol_a) if swap else (sol_a, sol_b)
    d, d_prime = sol.scatterer.shape, sol_prime.scatterer.shape
    degenerate = np.array_equal(d.vertices, d_prime.vertices)
    q = d if degenerate else convex_hull(np.vstack([d.vertices, d_prime.vertices]))

    frame = corner_frame(q, d, x_c)
    idx = d.vertex_index(x_c)
    h = ctx.config.corner.h or min(d.edge_lengths[idx], d.edge_lengths[idx - 1]) / 5.0
    sd = corner.singularity_data(sol.scatterer.gamma, frame, with_bounds=True)
    lo, hi = ctx.config.corner.fit_window
    fit = corner.extract_singularity_coefficient(sol, sd, (lo * h, hi * h), h=h)
    sd = sd.with_coefficient(fit.K, fit.residual, fit.low_confidence)

    reports = []
    for factor in ctx.config.corner.tau_factors:
        tau = factor * frame.tau0(h)
        cs = build_contours(frame, d, q, h, tau, order=ctx.config.corner.contour_order,
                            d_prime=None if degenerate else d_prime)
        reports.append(corner.verify_integral_identity(sol, sol_prime, cs, corner.CGOParams(frame, tau), sd))

    header = ["tau_factor", "tau", "tau0", "h", "lhs_re", "lhs_im", "rhs_re", "rhs_im", "residual", "budget",
              "decomposition_residual", "within_budget"]
    rows = ([f, r.tau, r.tau0, r.h, r.lhs.re, r.lhs.im, r.rhs.re, r.rhs.im, r.residual, r.budget,
             r.decomposition_residual, r.within_budget] for f, r in zip(ctx.config.corner.tau_factors, reports))
    persistence.write_csv(ctx.output("identity.csv"), header, rows)
    persistence.write_json(ctx.output("identity.json"), [r.model_dump(mode="json") for r in reports])
    ctx.fits.update({"x_c": x_c.tolist(), "eta": sd.eta, "K": [fit.K.real, fit.K.imag],
                     "K_fit_residual": fit.residual, "all_within_budget": all(r.within_budget for r in reports)})


def run_stability(ctx: RunContext) -> None:
    base, incident, sweep = ctx.scatterer(), ctx.incident(), ctx.config.sweep
    ctx.floors.update(experiments.calibrate_solver_floor(base.gamma, base.q, incident.k, base.shape,
                                                         ctx.mesh_options, ctx.n_angles))
    result = experiments.run_stability_sweep(
        base, incident, sweep.family, sweep.steps, sweep.direction, sweep.vertex, ctx.mesh_options,
        ctx.threads, ctx.n_angles, sweep.seed, sweep.jitter, ctx.config.corner.fit_window,
        floor=ctx.floors["floor"], provenance=ctx.provenance)
    ctx.add_records(result)


def run_corner_bound(ctx: RunContext) -> None:
    spec, sweep, inc = ctx.config.scatterer, ctx.config.sweep, ctx.config.incident
    shape = _load_shape(spec, ctx.base_dir)
    ctx.floors.update(experiments.calibrate_solver_floor(
        spec.gamma, spec.q, inc.k, shape if isinstance(shape, Polygon) else None, ctx.mesh_options, ctx.n_angles))
    result = experiments.run_corner_bound_sweep(
        sweep.openings, sweep.directions, spec.gamma, spec.q, inc.k, ctx.mesh_options, ctx.threads,
        ctx.n_angles, inc.amplitude, ctx.config.corner.fit_window, ctx.floors["floor"], ctx.provenance)
    ctx.add_records(result)


def run_smallness(ctx: RunContext) -> None:
    base, incident, sweep = ctx.scatterer(), ctx.incident(), ctx.config.sweep
    result = experiments.run_smallness_sweep(
        base, incident, sweep.family, sweep.steps, sweep.direction, sweep.vertex, tuple(sweep.annulus),
        sweep.hull_distance, ctx.mesh_options, ctx.threads, ctx.n_angles, ctx.provenance)
    ctx.add_records(result)


def run_herglotz_blowup(ctx: RunContext) -> None:
    spec, hg = ctx.config.scatterer, ctx.config.herglotz
    shape = _load_shape(spec, ctx.base_dir)
    if not isinstance(shape, Polygon):
        raise ContractViolationError("The blow-up run needs a polygonal scatterer")
    result = experiments.run_herglotz_blowup(shape, spec.gamma, ctx.config.incident.k, hg.lambdas,
                                             hg.directions, hg.grid_spacing, ctx.config.sweep.vertex, hg.eta,
                                             ctx.threads, epsilon_target=ctx.misfit_target)
    rows = [["regular", f.lam, f.epsilon, f.g_norm] for f in result.regular]
    rows += [["singular", f.lam, f.epsilon, f.g_norm] for f in result.singular]
    persistence.write_csv(ctx.output("blowup.csv"), ["case"] + experiments.BLOWUP_HEADER, rows)
    regular, singular = result.finest()
    herglotz.write_density_csv(ctx.output("density_regular.csv"), regular.density)
    herglotz.write_density_csv(ctx.output("density_singular.csv"), singular.density)
    ctx.add_fits(result.fits())
    ctx.fits["eta"] = result.eta


def run_disk_eig(ctx: RunContext) -> None:
    e = ctx.config.eigen
    pairs = herglotz.disk_transmission_eigenvalues(e.radius, e.gamma, e.q, (e.k_min, e.k_max),
                                                   tuple(e.modes), e.samples)
    persistence.write_csv(ctx.output("eigenvalues.csv"), ["n", "k", "det"], ([p.n, p.k, p.det] for p in pairs))
    ctx.fits["count"] = len(pairs)


RUNNERS: dict[str, Callable[[RunContext], None]] = {
    "solve": run_solve,
    "farfield": run_farfield,
    "eta": run_eta,
    "profile": run_profile,
    "identity": run_identity,
    "stability": run_stability,
    "corner-bound": run_corner_bound,
    "smallness": run_smallness,
    "herglotz-blowup": run_herglotz_blowup,
    "disk-eig": run_disk_eig,
}


def run(config: ExperimentConfig, out_dir: Optional[Union[str, Path]] = None, threads: int = 1,
        base_dir: Union[str, Path] = ".") -> int:
    """
    Execute one experiment and write its outputs plus manifest.json.

    The config's tolerances section replaces the matching settings for the
    duration of the run and is echoed in the manifest's settings.

    Returns:
        Process exit code (0 on success, the error's exit_code for scatterlab
        errors, 1 for anything else)
    """
    out_dir = Path(out_dir or config.output_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    ctx = RunContext(config=config, out_dir=out_dir, threads=max(1, threads), base_dir=Path(base_dir))
    config_echo = config.model_dump(mode="json")
    manifest = RunManifest(kind=config.kind, config=config_echo, config_hash=persistence.config_hash(config_echo),
                           version=__version__, settings=settings.model_dump(mode="json"),
                           started_at=datetime.now(timezone.utc).isoformat())

    start = time.perf_counter()
    exit_code = 0
    try:
        with override(**config.tolerances.settings_overrides()) as effective:
            manifest.settings = effective.model_dump(mode="json")
            logger.info("Running '%s' (threads=%d) into %s", config.kind, ctx.threads, out_dir)
            RUNNERS[config.kind](ctx)
        manifest.complete = True
    except ScatterlabError as e:
        logger.error("%s failed: %s", config.kind, e)
        manifest.error = f"{type(e).__name__}: {e}"
        exit_code = e.exit_code
    except Exception as e:
        logger.exception("%s failed with an unexpected error", config.kind)
        manifest.error = f"{type(e).__name__}: {e}"
        exit_code = 1
    finally:
        manifest.wall_time = time.perf_counter() - start
        manifest.floors, manifest.fits, manifest.failures = ctx.floors, ctx.fits, ctx.failures
        manifest.outputs, manifest.exit_code = ctx.outputs, exit_code
        persistence.write_manifest(out_dir, manifest)
    return exit_code


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="python -m scatterlab", description="2D transmission scattering lab")
    parser.add_argument("--log-level", default=None, help="Override SCATTERLAB_LOG_LEVEL")
    sub = parser.add_subparsers(dest="kind", required=True)
    sub.add_parser("schema", help="Print the JSON schema of experiment configs")
    for kind in EXPERIMENT_KINDS:
        p = sub.add_parser(kind, help=f"Run a '{kind}' experiment")
        p.add_argument("--config", required=True, help="JSON experiment config")
        p.add_argument("--threads", type=int, default=settings.default_threads, help="Worker threads")
        p.add_argument("--out", default=None, help="Output directory (overrides output_dir)")
    return parser


def main(argv: Optional[list[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    setup_logging(args.log_level)

    if args.kind == "schema":
        print(json.dumps(ExperimentConfig.model_json_schema(), indent=2))
        return 0

    try:
        config = parse_config(args.config, args.kind)
    except ConfigError as e:
        for violation in e.violations:
            logger.error("config: %s", violation)
        if args.out:
            persistence.write_manifest(args.out, RunManifest(
                kind=args.kind, config={}, config_hash="", version=__version__,
                settings=settings.model_dump(mode="json"), error=f"ConfigError: {e}", exit_code=e.exit_code,
                started_at=datetime.now(timezone.utc).isoformat()))
        return e.exit_code
    return run(config, args.out, args.threads, Path(args.config).parent)


if __name__ == "__main__":
    sys.exit(main())
