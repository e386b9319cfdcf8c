import math
from contextlib import contextmanager
from typing import Iterator

from pydantic_settings import BaseSettings, SettingsConfigDict


class Settings(BaseSettings):
    """Library defaults, overridable through a .env file or SCATTERLAB_* variables."""

    # Logging
    log_level: str = "INFO"

    # Geometry
    geometry_tol: float = 1e-9
    angle_min: float = math.pi / 10  # a_m
    angle_max: float = 0.9 * math.pi  # a_M
    edge_min: float = 0.05  # l
    bounding_radius: float = 10.0  # R

    # Material bounds
    gamma_min: float = 0.05
    gamma_max: float = 20.0
    q_max: float = 20.0

    # Boundary mesh
    panel_order: int = 12
    panels_per_half_edge: int = 6
    grading_exponent: float = 3.0  # p_g
    smooth_panels: int = 16
    nodes_per_wavelength: float = 10.0

    # Solver
    max_condition: float = 1e12
    warn_condition: float = 1e10
    solver_residual_tol: float = 1e-10
    farfield_angles: int = 256

    # Corner calculus
    eta_residual_tol: float = 1e-12
    profile_residual_tol: float = 1e-10
    fit_low_confidence: float = 0.1
    cgo_overflow_exponent: float = 700.0
    contour_order: int = 24
    degenerate_k_threshold: float = 1e-6
    near_boundary_rel_error: float = 1e-4  # assumed relative error of flagged near-boundary evaluations

    # Experiments
    axis_sentinel: float = -1.0
    default_threads: int = 1

    model_config = SettingsConfigDict(
        env_prefix="SCATTERLAB_",
        env_file=".env",
        env_file_encoding="utf-8",
        case_sensitive=False
    )


# Global settings instance
settings = Settings()


@contextmanager
def override(**values) -> Iterator[Settings]:
    """Temporarily replace settings attributes; the previous values come back on exit."""
    unknown = sorted(set(values) - set(Settings.model_fields))
    if unknown:
        raise AttributeError(f"Unknown settings: {', '.join(unknown)}")
    previous = {name: getattr(settings, name) for name in values}
    for name, value in values.items():
        setattr(settings, name, value)
    try:
        yield settings
    finally:
        for name, value in previous.items():
            setattr(settings, name, value)
