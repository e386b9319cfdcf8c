import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from scatterlab.config import settings


@dataclass(frozen=True)
class AdmissibilityBounds:
    """A-priori bounds of the admissible scatterer class."""
    angle_min: float = settings.angle_min
    angle_max: float = settings.angle_max
    edge_min: float = settings.edge_min
    radius: float = settings.bounding_radius
    gamma_min: float = settings.gamma_min
    gamma_max: float = settings.gamma_max
    q_max: float = settings.q_max


def validate_contrast(gamma: float, bounds: Optional[AdmissibilityBounds] = None) -> list[str]:
    """
    Check the conductivity contrast gamma.

    Args:
        gamma: Contrast inside D
        bounds: Admissibility bounds

    Returns:
        List of violated constraint descriptions (empty if admissible)
    """
    bounds = bounds or AdmissibilityBounds()
    errors = []
    if not math.isfinite(gamma) or gamma <= 0:
        errors.append(f"gamma > 0: got {gamma}")
        return errors
    if abs(gamma - 1.0) <= 1e-12:
        errors.append("gamma != 1: no contrast in sigma")
    if not bounds.gamma_min < gamma < bounds.gamma_max:
        errors.append(f"gamma in (gamma_m, gamma_M) = ({bounds.gamma_min}, {bounds.gamma_max}): got {gamma}")
    return errors


def validate_potential(q: float, bounds: Optional[AdmissibilityBounds] = None) -> list[str]:
    """Check the constant potential q inside D."""
    bounds = bounds or AdmissibilityBounds()
    if not math.isfinite(q) or q <= 0:
        return [f"q > 0: got {q}"]
    if q > bounds.q_max:
        return [f"|q| <= Q = {bounds.q_max}: got {q}"]
    return []


def check_admissible(polygon, bounds: Optional[AdmissibilityBounds] = None) -> list[str]:
    """
    Collect every violated admissibility constraint of a polygon.

    Args:
        polygon: Polygon to check
        bounds: Admissibility bounds

    Returns:
        List of named violations; empty when the polygon is admissible
    """
    bounds = bounds or AdmissibilityBounds()
    errors = []
    if not polygon.is_simple():
        errors.append("polygon must be simple (self-intersection found)")
    if not polygon.is_convex():
        errors.append("polygon must be convex")

    angles = polygon.interior_angles
    for i, a in enumerate(angles):
        if a < bounds.angle_min:
            errors.append(f"angle below a_m at vertex {i}: {a:.6f} < {bounds.angle_min:.6f}")
        elif a > bounds.angle_max:
            errors.append(f"angle above a_M at vertex {i}: {a:.6f} > {bounds.angle_max:.6f}")

    for i, length in enumerate(polygon.edge_lengths):
        if length < bounds.edge_min:
            errors.append(f"length of each edge >= l: edge {i} has length {length:.6g} < {bounds.edge_min}")

    reach = float(np.max(np.linalg.norm(polygon.vertices, axis=1)))
    if reach >= bounds.radius:
        errors.append(f"polygon strictly inside B_R: max |x| = {reach:.6g} >= R = {bounds.radius}")
    return errors


def is_admissible(polygon, bounds: Optional[AdmissibilityBounds] = None) -> bool:
    """True if the polygon satisfies every admissibility constraint."""
    return not check_admissible(polygon, bounds)
