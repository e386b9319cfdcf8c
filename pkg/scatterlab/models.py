import math
from typing import Any, Literal, Optional

from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from scatterlab.config import settings

Point = tuple[float, float]

EXPERIMENT_KINDS = (
    "solve", "farfield", "eta", "profile", "identity", "stability",
    "corner-bound", "smallness", "herglotz-blowup", "disk-eig",
)
ExperimentKind = Literal[
    "solve", "farfield", "eta", "profile", "identity", "stability",
    "corner-bound", "smallness", "herglotz-blowup", "disk-eig",
]


class StrictModel(BaseModel):
    """Config section that rejects unknown keys."""
    model_config = ConfigDict(extra="forbid")


# ---------------------------------------------------------------------------
# Experiment configuration
# ---------------------------------------------------------------------------
class DiskSpec(StrictModel):
    """Circular scatterer."""
    center: Point = Field((0.0, 0.0), description="Disk centre")
    radius: float = Field(1.0, gt=0, description="Disk radius")


class ScattererSpec(StrictModel):
    """Penetrable scatterer: a polygon (inline or from file) or a disk."""
    polygon: Optional[list[Point]] = Field(None, min_length=3, description="Vertices, any orientation")
    polygon_file: Optional[str] = Field(None, description="Path to an 'x y' vertex file")
    disk: Optional[DiskSpec] = Field(None, description="Disk scatterer for oracle runs")
    gamma: float = Field(..., description="Contrast gamma inside D")
    q: float = Field(1.0, description="Constant potential q inside D")

    @model_validator(mode="after")
    def one_shape(self):
        given = [s for s in (self.polygon, self.polygon_file, self.disk) if s is not None]
        if len(given) != 1:
            raise ValueError("exactly one of polygon, polygon_file, disk is required")
        return self


class IncidentSpec(StrictModel):
    """Plane wave or Herglotz incident field."""
    kind: Literal["plane", "herglotz"] = "plane"
    k: float = Field(..., gt=0, description="Wavenumber")
    angle: float = Field(0.0, description="Plane-wave direction angle in radians")
    amplitude: float = Field(1.0, gt=0, description="Plane-wave amplitude")
    density: Optional[list[Point]] = Field(None, description="Herglotz density samples as (re, im) pairs")

    @model_validator(mode="after")
    def density_for_herglotz(self):
        if self.kind == "herglotz":
            if not self.density:
                raise ValueError("herglotz incident field needs density samples")
            if len(self.density) < 32 or len(self.density) % 2:
                raise ValueError("herglotz density needs an even number M >= 32 of samples")
        return self


class MeshSpec(StrictModel):
    """Boundary discretization parameters."""
    panel_order: int = Field(default_factory=lambda: settings.panel_order, ge=4, le=32)
    panels_per_half_edge: int = Field(default_factory=lambda: settings.panels_per_half_edge, ge=2, le=64)
    grading: float = Field(default_factory=lambda: settings.grading_exponent, ge=1.0, le=8.0)
    smooth_panels: int = Field(default_factory=lambda: settings.smooth_panels, ge=4)
    farfield_angles: int = Field(default_factory=lambda: settings.farfield_angles, ge=64)

    @field_validator("farfield_angles")
    @classmethod
    def even_angles(cls, v: int) -> int:
        if v % 2:
            raise ValueError("farfield_angles must be even")
        return v


class CornerSpec(StrictModel):
    """Corner calculus parameters."""
    vertex: Optional[Point] = Field(None, description="Corner x_c; defaults to the Hausdorff realizer")
    gamma: Optional[float] = Field(None, description="Contrast for the eta/profile kinds")
    opening: Optional[float] = Field(None, gt=0, lt=math.pi, description="Opening angle a for eta/profile")
    h: Optional[float] = Field(None, gt=0, description="Contour radius; defaults to l/5 of the corner edges")
    tau_factors: list[float] = Field([2.0], min_length=1, description="CGO scales as multiples of tau0")
    fit_window: Point = Field((0.125, 0.5), description="K fit radii as fractions of h")
    contour_order: int = Field(default_factory=lambda: settings.contour_order, ge=4, le=64)

    @field_validator("tau_factors")
    @classmethod
    def factors_above_one(cls, v: list[float]) -> list[float]:
        if any(f < 1.0 for f in v):
            raise ValueError("tau_factors must be >= 1 (tau >= tau0)")
        return v


class SweepSpec(StrictModel):
    """Perturbation families and incidence suites."""
    family: Literal["translation", "vertex_pull", "dilation"] = "translation"
    steps: list[float] = Field(default_factory=lambda: [0.02 * i for i in range(1, 11)], min_length=1)
    direction: float = Field(0.0, description="Translation direction angle")
    vertex: int = Field(0, ge=0, description="Vertex index for vertex pulls")
    openings: list[float] = Field(default_factory=lambda: [math.pi / 5, 0.25 * math.pi, 0.3 * math.pi,
                                                           0.35 * math.pi, 0.4 * math.pi])
    directions: list[float] = Field(default_factory=lambda: [0.0, 0.5 * math.pi, math.pi, 1.5 * math.pi])
    annulus: Point = Field((1.5, 2.0), description="Near-field annulus radii as multiples of R")
    hull_distance: float = Field(0.1, gt=0, description="Distance of near-field nodes from the hull")
    seed: int = Field(0, description="Seed for optional jitter")
    jitter: float = Field(0.0, ge=0, description="Random jitter added to perturbation steps")


class HerglotzSpec(StrictModel):
    """Herglotz density fits and the kernel blow-up run."""
    directions: int = Field(64, ge=32, description="Number M of density samples")
    lambdas: list[float] = Field(default_factory=lambda: [10.0 ** -e for e in range(2, 13)], min_length=1)
    grid_spacing: float = Field(0.05, gt=0)
    eta: Optional[float] = Field(None, gt=0, lt=1, description="Target exponent; defaults from the corner")

    @field_validator("directions")
    @classmethod
    def even_directions(cls, v: int) -> int:
        if v % 2:
            raise ValueError("directions must be even")
        return v

    @field_validator("lambdas")
    @classmethod
    def positive_lambdas(cls, v: list[float]) -> list[float]:
        if any(lam <= 0 for lam in v):
            raise ValueError("regularization weights must be > 0")
        return v


class EigenSpec(StrictModel):
    """Disk transmission-eigenvalue search."""
    radius: float = Field(1.0, gt=0)
    gamma: float = Field(1.0, gt=0)
    q: float = Field(4.0, gt=0)
    k_min: float = Field(0.1, gt=0)
    k_max: float = Field(10.0, gt=0)
    modes: tuple[int, int] = (0, 5)
    samples: int = Field(2000, ge=10)

    @model_validator(mode="after")
    def check_interval(self):
        if self.k_max <= self.k_min:
            raise ValueError("k_max must exceed k_min")
        if self.gamma == 1.0 and self.q == 1.0:
            raise ValueError("gamma != 1 or q != 1 is required for transmission eigenvalues")
        if self.modes[0] < 0 or self.modes[1] < self.modes[0]:
            raise ValueError("modes must be a non-negative increasing pair")
        return self


class ToleranceSpec(StrictModel):
    """Per-run solver and fit thresholds; unset fields keep the settings defaults."""
    max_condition: float = Field(default_factory=lambda: settings.max_condition, gt=1.0)
    warn_condition: float = Field(default_factory=lambda: settings.warn_condition, gt=1.0)
    solver_residual_tol: float = Field(default_factory=lambda: settings.solver_residual_tol, gt=0)
    eta_residual_tol: float = Field(default_factory=lambda: settings.eta_residual_tol, gt=0)
    profile_residual_tol: float = Field(default_factory=lambda: settings.profile_residual_tol, gt=0)
    fit_low_confidence: float = Field(default_factory=lambda: settings.fit_low_confidence, gt=0)
    cgo_overflow_exponent: float = Field(default_factory=lambda: settings.cgo_overflow_exponent, gt=0, le=709.0)
    degenerate_k_threshold: float = Field(default_factory=lambda: settings.degenerate_k_threshold, ge=0)
    near_boundary_rel_error: float = Field(default_factory=lambda: settings.near_boundary_rel_error, ge=0)
    misfit_target: Optional[float] = Field(None, gt=0, description="Requested density-fit misfit for blow-up runs")

    @model_validator(mode="after")
    def check_condition_order(self):
        if self.warn_condition > self.max_condition:
            raise ValueError("warn_condition must not exceed max_condition")
        return self

    def settings_overrides(self) -> dict[str, float]:
        """Fields that mirror a settings attribute."""
        return self.model_dump(exclude={"misfit_target"})


class ExperimentConfig(StrictModel):
    """One experiment run."""
    kind: ExperimentKind
    scatterer: Optional[ScattererSpec] = None
    comparison: Optional[ScattererSpec] = None
    incident: Optional[IncidentSpec] = None
    mesh: MeshSpec = Field(default_factory=MeshSpec)
    corner: CornerSpec = Field(default_factory=CornerSpec)
    sweep: SweepSpec = Field(default_factory=SweepSpec)
    herglotz: HerglotzSpec = Field(default_factory=HerglotzSpec)
    eigen: EigenSpec = Field(default_factory=EigenSpec)
    tolerances: ToleranceSpec = Field(default_factory=ToleranceSpec)
    output_dir: str = Field("out", description="Output directory (overridden by --out)")

    @model_validator(mode="after")
    def sections_for_kind(self):
        needs_solve = {"solve", "farfield", "identity", "stability", "corner-bound", "smallness"}
        if self.kind in needs_solve:
            if self.incident is None:
                raise ValueError(f"kind '{self.kind}' requires an incident section")
            if self.scatterer is None and self.kind != "corner-bound":
                raise ValueError(f"kind '{self.kind}' requires a scatterer section")
        if self.kind == "corner-bound" and self.scatterer is None:
            raise ValueError("kind 'corner-bound' requires a scatterer section (gamma, q)")
        if self.kind == "identity" and self.comparison is None:
            raise ValueError("kind 'identity' requires a comparison scatterer")
        if self.kind in {"eta", "profile"}:
            if self.corner.gamma is None or self.corner.opening is None:
                raise ValueError(f"kind '{self.kind}' requires corner.gamma and corner.opening")
        if self.kind == "herglotz-blowup" and self.incident is None:
            raise ValueError("kind 'herglotz-blowup' requires an incident section for k")
        return self


# ---------------------------------------------------------------------------
# Reports and records
# ---------------------------------------------------------------------------
class ComplexValue(BaseModel):
    """Complex number serialized as real and imaginary parts."""
    re: float
    im: float

    @classmethod
    def of(cls, z: complex) -> "ComplexValue":
        z = complex(z)
        return cls(re=z.real, im=z.imag)

    @property
    def value(self) -> complex:
        return complex(self.re, self.im)

    @property
    def magnitude(self) -> float:
        return abs(self.value)


class IdentityReport(BaseModel):
    """Both sides of the corner integral identity with per-term magnitudes."""
    lhs: ComplexValue
    rhs: ComplexValue
    residual: float
    budget: float = Field(..., description="Quadrature + solver + near-boundary error estimate")
    quadrature_error: float
    solver_error: float
    near_boundary_error: float
    terms: dict[str, float] = Field(default_factory=dict, description="|I1| .. |I10|")
    tau: float
    tau0: float
    h: float
    eta: float
    K: Optional[ComplexValue] = None
    closed_form: Optional[ComplexValue] = None
    decomposition_residual: Optional[float] = None
    sin_ratio: Optional[float] = Field(None, description="|phi'(t+)e^{ia eta} - phi'(t-)| / sin(a eta)")
    degenerate_pair: bool = False
    degraded: bool = False

    @property
    def within_budget(self) -> bool:
        return self.residual <= self.budget


class SweepRecord(BaseModel):
    """One point of an experiment sweep."""
    experiment: str
    index: int
    params: dict[str, float] = Field(default_factory=dict)
    measured: dict[str, Optional[float]] = Field(default_factory=dict)
    diagnostics: dict[str, float] = Field(default_factory=dict)
    axes: dict[str, float] = Field(default_factory=dict)
    flags: list[str] = Field(default_factory=list)
    provenance: dict[str, Any] = Field(default_factory=dict)
    failed: bool = False
    error: Optional[str] = None


class FitResult(BaseModel):
    """Empirical fit reported by a sweep."""
    name: str
    value: Optional[float] = None
    points: int = 0
    note: Optional[str] = None


class RunManifest(BaseModel):
    """Reproducibility manifest written next to every run's outputs."""
    kind: str
    config: dict[str, Any]
    config_hash: str
    version: str
    settings: dict[str, Any]
    floors: dict[str, float] = Field(default_factory=dict)
    fits: dict[str, Any] = Field(default_factory=dict)
    failures: list[dict[str, Any]] = Field(default_factory=list)
    outputs: list[str] = Field(default_factory=list)
    wall_time: float = 0.0
    started_at: str = ""
    complete: bool = False
    error: Optional[str] = None
    exit_code: int = 0
    s_convention: str = (
        "S is the computed grid surrogate of ||u^i||_{H^2(B_{2R})} "
        "(values, first and second differences), not an a-priori upper bound"
    )
