"""Boundary-integral solver for 2D transmission scattering by a penetrable
obstacle D with constant contrasts (gamma, q).

Mathematical formulation
------------------------
    div(sigma grad u) + k^2 q u = 0,  sigma = 1 + (gamma - 1) chi_D
    interior wavenumber  k1 = k sqrt(q / gamma),  exterior k0 = k

Unknowns are the exterior traces phi = u|_dD and psi = d_nu u|_dD (outward
normal). The interior traces are phi and psi / gamma. With

    S_k psi  = int G_k psi,          K_k phi  = int d_nu_y G_k phi,
    K'_k psi = int d_nu_x G_k psi,   T_k phi  = d_nu_x int d_nu_y G_k phi,
    G_k(x, y) = (i/4) H_0^(1)(k |x - y|),

the Mueller-type system is

    phi - (K0 - K1) phi - (S1/gamma - S0) psi                  = u^i
    ((1 + 1/gamma)/2) psi - (T0 - T1) phi - (K1'/gamma - K0') psi = d_nu u^i

Both kernel differences are at most logarithmically singular. They are
discretized by Nystrom on Gauss-Legendre panels graded toward corners; the
self panel uses product integration against ln|t - t_i| and nearby panels
use geometrically refined quadrature with Lagrange interpolation of the
density.

Representation
--------------
    outside D:  u = u^i + D0 phi - S0 psi
    inside D:   u = S1 (psi/gamma) - D1 phi
    far field:  u_inf(xh) = e^{i pi/4}/sqrt(8 pi k) int (-i k nu.xh phi - psi) e^{-i k xh.y} ds
"""
import csv
import logging
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path
from typing import Optional, Union

import numpy as np
import scipy.linalg
from scipy import integrate, signal

from scatterlab.config import settings
from scatterlab.exceptions import ContractViolationError, SolverError
from scatterlab.services import specfun
from scatterlab.services.geometry import Polygon
from scatterlab.utils import persistence
from scatterlab.utils.validators import (
    AdmissibilityBounds,
    check_admissible,
    validate_contrast,
    validate_potential,
)

logger = logging.getLogger(__name__)

EULER_GAMMA = 0.5772156649015329
NEAR_FACTOR = 1.0  # source panels closer than this many panel lengths get refined quadrature
MAX_REFINE_LEVELS = 40
EVAL_CHUNK_SIZE = 512


# ---------------------------------------------------------------------------
# Scatterer and incident field
# ---------------------------------------------------------------------------
@dataclass(frozen=True, eq=False)
class Disk:
    """Smooth circular scatterer, used for series-oracle checks."""
    center: tuple[float, float] = (0.0, 0.0)
    radius: float = 1.0

    def contains(self, points) -> np.ndarray:
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        return np.linalg.norm(pts - np.asarray(self.center), axis=1) < self.radius

    def boundary_distance(self, points) -> np.ndarray:
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        return np.abs(np.linalg.norm(pts - np.asarray(self.center), axis=1) - self.radius)

    @property
    def reach(self) -> float:
        return float(np.linalg.norm(self.center) + self.radius)


@dataclass(frozen=True, eq=False)
class Scatterer:
    """
    Penetrable obstacle with constant contrasts.

    gamma = 1 together with q = 1 is accepted as the vacuum shortcut; any
    other gamma = 1 configuration is outside the model and rejected.
    """
    shape: Union[Polygon, Disk]
    gamma: float
    q: float = 1.0
    bounds: AdmissibilityBounds = field(default_factory=AdmissibilityBounds)
    check_geometry: bool = True

    def __post_init__(self):
        if self.is_vacuum:
            return
        errors = validate_contrast(self.gamma, self.bounds) + validate_potential(self.q, self.bounds)
        if self.check_geometry and isinstance(self.shape, Polygon):
            errors += check_admissible(self.shape, self.bounds)
        if errors:
            raise ContractViolationError("Inadmissible scatterer: " + "; ".join(errors))

    @property
    def is_vacuum(self) -> bool:
        return self.gamma == 1.0 and self.q == 1.0

    def k_int(self, k: float) -> float:
        """Interior wavenumber k sqrt(q / gamma)."""
        return k * math.sqrt(self.q / self.gamma)

    @property
    def radius(self) -> float:
        """Radius R of a centred ball with D compactly inside."""
        if isinstance(self.shape, Disk):
            return 1.1 * self.shape.reach
        return 1.1 * float(np.max(np.linalg.norm(self.shape.vertices, axis=1)))

    def contains(self, points) -> np.ndarray:
        return self.shape.contains(points)

    def boundary_distance(self, points) -> np.ndarray:
        return self.shape.boundary_distance(points)


@dataclass(frozen=True, eq=False)
class IncidentField:
    """
    Entire solution of the Helmholtz equation.

    kind is "plane" (direction d, amplitude) or "herglotz" (density samples g
    on M uniform directions, integrated with the trapezoid rule).
    """
    k: float
    kind: str = "plane"
    direction: tuple[float, float] = (1.0, 0.0)
    amplitude: complex = 1.0
    density: Optional[np.ndarray] = None

    def __post_init__(self):
        if not self.k > 0:
            raise ContractViolationError(f"Wavenumber must be positive, got {self.k}")
        if self.kind == "plane":
            d = np.asarray(self.direction, dtype=float)
            object.__setattr__(self, "direction", tuple(d / np.linalg.norm(d)))
        elif self.kind == "herglotz":
            if self.density is None or len(self.density) < 2:
                raise ContractViolationError("Herglotz incident field needs density samples")
            object.__setattr__(self, "density", np.asarray(self.density, dtype=complex))
        else:
            raise ContractViolationError(f"Unknown incident field kind: {self.kind}")

    @classmethod
    def plane_wave(cls, k: float, angle: float = 0.0, amplitude: complex = 1.0) -> "IncidentField":
        return cls(k=k, kind="plane", direction=(math.cos(angle), math.sin(angle)), amplitude=amplitude)

    @classmethod
    def herglotz(cls, k: float, density) -> "IncidentField":
        return cls(k=k, kind="herglotz", density=np.asarray(density, dtype=complex))

    def scaled(self, factor: complex) -> "IncidentField":
        if self.kind == "plane":
            return IncidentField(self.k, "plane", self.direction, self.amplitude * factor)
        return IncidentField(self.k, "herglotz", density=self.density * factor)

    def _directions_and_weights(self) -> tuple[np.ndarray, np.ndarray]:
        if self.kind == "plane":
            return np.array([self.direction]), np.array([self.amplitude], dtype=complex)
        m = len(self.density)
        ang = 2.0 * np.pi * np.arange(m) / m
        return np.column_stack([np.cos(ang), np.sin(ang)]), self.density * (2.0 * np.pi / m)

    def value(self, points) -> np.ndarray:
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        dirs, w = self._directions_and_weights()
        return np.exp(1j * self.k * pts @ dirs.T) @ w

    def gradient(self, points) -> np.ndarray:
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        dirs, w = self._directions_and_weights()
        waves = np.exp(1j * self.k * pts @ dirs.T) * w
        return 1j * self.k * waves @ dirs

    def normal_derivative(self, points, normals) -> np.ndarray:
        return np.sum(self.gradient(points) * np.asarray(normals), axis=1)

    def amplitude_bound(self, radius: float, n_grid: int = 161) -> float:
        """
        Grid surrogate of the H^2(B_{2R}) norm, the amplitude S.

        Values, first and second central differences are sampled on a
        uniform grid and summed over the nodes inside B_{2R}.
        """
        rr = 2.0 * radius
        xs = np.linspace(-rr, rr, n_grid)
        dx = xs[1] - xs[0]
        gx, gy = np.meshgrid(xs, xs, indexing="ij")
        u = self.value(np.column_stack([gx.ravel(), gy.ravel()])).reshape(gx.shape)
        ux, uy = np.gradient(u, dx, dx)
        uxx, uxy = np.gradient(ux, dx, dx)
        _, uyy = np.gradient(uy, dx, dx)
        inside = gx ** 2 + gy ** 2 <= rr ** 2
        dens = np.abs(u) ** 2 + np.abs(ux) ** 2 + np.abs(uy) ** 2 \
            + np.abs(uxx) ** 2 + 2.0 * np.abs(uxy) ** 2 + np.abs(uyy) ** 2
        return float(math.sqrt(np.sum(dens[inside]) * dx * dx))


# ---------------------------------------------------------------------------
# Boundary mesh
# ---------------------------------------------------------------------------
@dataclass(frozen=True, eq=False)
class Panel:
    """Straight segment or circular arc mapped from the reference interval [-1, 1]."""
    kind: str
    start: np.ndarray
    end: np.ndarray
    center: Optional[np.ndarray] = None
    radius: float = 0.0
    phi0: float = 0.0
    phi1: float = 0.0
    edge: int = -1

    def map(self, t) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Points, outward unit normals and speeds |dy/dt| at reference parameters t."""
        t = np.asarray(t, dtype=float)
        if self.kind == "segment":
            chord = self.end - self.start
            half = 0.5 * np.linalg.norm(chord)
            tan = chord / (2.0 * half)
            pts = 0.5 * (self.start + self.end) + np.outer(t, chord) * 0.5
            normal = np.array([tan[1], -tan[0]])
            return pts, np.tile(normal, (len(t), 1)), np.full(len(t), half)
        mid = 0.5 * (self.phi0 + self.phi1)
        half = 0.5 * (self.phi1 - self.phi0)
        ang = mid + half * t
        nrm = np.column_stack([np.cos(ang), np.sin(ang)])
        return self.center + self.radius * nrm, nrm, np.full(len(t), self.radius * half)

    @property
    def length(self) -> float:
        if self.kind == "segment":
            return float(np.linalg.norm(self.end - self.start))
        return float(self.radius * (self.phi1 - self.phi0))

    @property
    def curvature(self) -> float:
        return 0.0 if self.kind == "segment" else 1.0 / self.radius

    def closest_parameter(self, x: np.ndarray) -> tuple[float, float]:
        """Reference parameter of the panel point closest to x, and the distance."""
        if self.kind == "segment":
            chord = self.end - self.start
            s = float(np.clip((x - self.start) @ chord / (chord @ chord), 0.0, 1.0))
            return 2.0 * s - 1.0, float(np.linalg.norm(self.start + s * chord - x))
        ang = math.atan2(x[1] - self.center[1], x[0] - self.center[0])
        mid = 0.5 * (self.phi0 + self.phi1)
        half = 0.5 * (self.phi1 - self.phi0)
        rel = (ang - mid + math.pi) % (2.0 * math.pi) - math.pi
        t = float(np.clip(rel / half, -1.0, 1.0))
        p, _, _ = self.map([t])
        return t, float(np.linalg.norm(p[0] - x))


@dataclass(frozen=True, eq=False)
class BoundaryMesh:
    """Gauss-Legendre panels on dD with per-node data (N = panels * order)."""
    panels: list
    order: int
    graded: bool
    nodes: np.ndarray
    normals: np.ndarray
    weights: np.ndarray
    speeds: np.ndarray
    curvature: np.ndarray
    panel_of: np.ndarray
    t_ref: np.ndarray
    grading: float = 1.0
    centres: Optional[np.ndarray] = None
    lengths: Optional[np.ndarray] = None

    @property
    def n_nodes(self) -> int:
        return len(self.weights)

    @property
    def panel_lengths(self) -> np.ndarray:
        if self.lengths is not None:
            return self.lengths
        return np.array([p.length for p in self.panels])

    def panel_slice(self, p: int) -> slice:
        return slice(p * self.order, (p + 1) * self.order)

    def validate(self) -> None:
        """Check mesh integrity. Raises ContractViolationError on failure."""
        n = self.n_nodes
        if self.nodes.shape != (n, 2) or self.normals.shape != (n, 2):
            raise ContractViolationError("Mesh node and normal arrays are inconsistent")
        if not np.allclose(np.linalg.norm(self.normals, axis=1), 1.0, atol=1e-12):
            raise ContractViolationError("Mesh normals are not unit length")
        if np.any(self.weights <= 0) or not np.all(np.isfinite(self.nodes)):
            raise ContractViolationError("Mesh has non-positive weights or non-finite nodes")

    def check_resolution(self, wavenumber: float, per_wavelength: Optional[float] = None) -> None:
        """Raise if some panel has fewer than the requested nodes per wavelength."""
        per_wavelength = per_wavelength or settings.nodes_per_wavelength
        wavelength = 2.0 * math.pi / wavenumber
        worst = float(np.min(self.order * wavelength / self.panel_lengths))
        if worst < per_wavelength:
            raise ContractViolationError(
                f"Mesh under-resolves the wavelength: {worst:.2f} nodes per wavelength < {per_wavelength}"
            )


def _build_mesh(panels: list, order: int, graded: bool, grading: float) -> BoundaryMesh:
    t, w = np.polynomial.legendre.leggauss(order)
    nodes, normals, speeds, curv, owner = [], [], [], [], []
    for i, panel in enumerate(panels):
        p, n, s = panel.map(t)
        nodes.append(p)
        normals.append(n)
        speeds.append(s)
        curv.append(np.full(order, panel.curvature))
        owner.append(np.full(order, i))
    speeds = np.concatenate(speeds)
    mesh = BoundaryMesh(
        panels=panels,
        order=order,
        graded=graded,
        nodes=np.vstack(nodes),
        normals=np.vstack(normals),
        weights=np.tile(w, len(panels)) * speeds,
        speeds=speeds,
        curvature=np.concatenate(curv),
        panel_of=np.concatenate(owner),
        t_ref=t,
        grading=grading,
        centres=np.array([0.5 * (p.start + p.end) for p in panels]),
        lengths=np.array([p.length for p in panels]),
    )
    mesh.validate()
    return mesh


def graded_polygon_mesh(polygon: Polygon, panels_per_half_edge: Optional[int] = None,
                        order: Optional[int] = None, grading: Optional[float] = None,
                        max_panel_length: Optional[float] = None) -> BoundaryMesh:
    """
    Panels on a polygon boundary, graded toward every corner.

    Breakpoints on each half edge follow s_j = (L/2) (j/m)^p_g, so panel
    lengths grow monotonically away from the corners.

    Args:
        polygon: Counterclockwise polygon
        panels_per_half_edge: m, panels between a corner and the edge midpoint
        order: Gauss nodes per panel
        grading: Grading exponent p_g
        max_panel_length: Optional cap; longer panels are split uniformly
    """
    m = panels_per_half_edge or settings.panels_per_half_edge
    order = order or settings.panel_order
    grading = grading or settings.grading_exponent
    panels = []
    verts = polygon.vertices
    for e in range(polygon.n_vertices):
        p0, p1 = verts[e], verts[(e + 1) % polygon.n_vertices]
        frac = 0.5 * (np.arange(m + 1) / m) ** grading
        breaks = np.concatenate([frac, 1.0 - frac[-2::-1]])
        if max_panel_length is not None:
            length = float(np.linalg.norm(p1 - p0))
            refined = [breaks[0]]
            for s0, s1 in zip(breaks[:-1], breaks[1:]):
                pieces = max(1, math.ceil((s1 - s0) * length / max_panel_length))
                refined.extend(np.linspace(s0, s1, pieces + 1)[1:])
            breaks = np.array(refined)
        for s0, s1 in zip(breaks[:-1], breaks[1:]):
            panels.append(Panel("segment", p0 + s0 * (p1 - p0), p0 + s1 * (p1 - p0), edge=e))
    mesh = _build_mesh(panels, order, graded=True, grading=grading)
    logger.info("Graded polygon mesh: %d panels, %d nodes (p_g=%.1f)", len(panels), mesh.n_nodes, grading)
    return mesh


def smooth_curve_mesh(disk: Disk, panels: Optional[int] = None, order: Optional[int] = None) -> BoundaryMesh:
    """Uniform arc panels on a circle."""
    panels = panels or settings.smooth_panels
    order = order or settings.panel_order
    c = np.asarray(disk.center, dtype=float)
    angles = np.linspace(0.0, 2.0 * np.pi, panels + 1)
    arc_panels = []
    for a0, a1 in zip(angles[:-1], angles[1:]):
        arc_panels.append(Panel(
            "arc",
            c + disk.radius * np.array([math.cos(a0), math.sin(a0)]),
            c + disk.radius * np.array([math.cos(a1), math.sin(a1)]),
            center=c, radius=disk.radius, phi0=float(a0), phi1=float(a1),
        ))
    return _build_mesh(arc_panels, order, graded=False, grading=1.0)


def default_mesh(scatterer: Scatterer, k: float, **kwargs) -> BoundaryMesh:
    """Mesh sized for the scatterer shape and both wavenumbers."""
    k_max = max(k, scatterer.k_int(k))
    order = kwargs.get("order") or settings.panel_order
    cap = order * (2.0 * math.pi / k_max) / settings.nodes_per_wavelength
    if isinstance(scatterer.shape, Disk):
        n_panels = kwargs.get("panels") or max(
            settings.smooth_panels, math.ceil(2.0 * math.pi * scatterer.shape.radius / cap))
        return smooth_curve_mesh(scatterer.shape, n_panels, order)
    return graded_polygon_mesh(scatterer.shape, kwargs.get("panels_per_half_edge"), order,
                               kwargs.get("grading"), max_panel_length=cap)


# ---------------------------------------------------------------------------
# Kernels
# ---------------------------------------------------------------------------
def _pair_geometry(x, nx, y, ny):
    R = x[:, None, :] - y[None, :, :]
    r = np.sqrt(np.sum(R * R, axis=-1))
    a = np.einsum("mnk,mk->mn", R, nx) if nx is not None else None
    b = np.einsum("mnk,nk->mn", R, ny)
    c = nx @ ny.T if nx is not None else None
    return R, r, a, b, c


def _layer_kernels(kappa: float, r, a, b, c) -> dict:
    """Full kernels of S, K, K', T and their ln(r) coefficients (r > 0)."""
    z = kappa * r
    h0 = specfun.hankel1(0, z)
    h1 = specfun.hankel1(1, z)
    j0, j1 = h0.real, h1.real
    out = {
        "S": 0.25j * h0,
        "AS": -j0 / (2.0 * np.pi),
        "K": 0.25j * kappa * h1 * b / r,
        "AK": -(kappa / (2.0 * np.pi)) * j1 * b / r,
    }
    if a is not None:
        ab = a * b
        out["Kp"] = -0.25j * kappa * h1 * a / r
        out["AKp"] = (kappa / (2.0 * np.pi)) * j1 * a / r
        out["T"] = 0.25j * kappa ** 2 * h0 * ab / r ** 2 + 0.25j * kappa * h1 * (c / r - 2.0 * ab / r ** 3)
        out["AT"] = -(kappa ** 2 / (2.0 * np.pi)) * j0 * ab / r ** 2 \
            - (kappa / (2.0 * np.pi)) * j1 * (c / r - 2.0 * ab / r ** 3)
    return out


def _system_kernels(x, nx, y, ny, k0, k1, gamma):
    """Kernels of the four operator blocks (full value, log coefficient)."""
    _, r, a, b, c = _pair_geometry(x, nx, y, ny)
    r_safe = np.where(r > 0, r, 1.0)
    e = _layer_kernels(k0, r_safe, a, b, c)
    i = _layer_kernels(k1, r_safe, a, b, c)
    blocks = {
        "D1": (e["K"] - i["K"], e["AK"] - i["AK"]),
        "D2": (i["S"] / gamma - e["S"], i["AS"] / gamma - e["AS"]),
        "N1": (e["T"] - i["T"], e["AT"] - i["AT"]),
        "N2": (i["Kp"] / gamma - e["Kp"], i["AKp"] / gamma - e["AKp"]),
    }
    return blocks, r


def _diagonal_limits(k0, k1, gamma, curvature) -> dict:
    """Smooth-part limits B(x, x) and log coefficients A(x, x) per block."""
    def b_s(kap):
        return 0.25j - (math.log(kap / 2.0) + EULER_GAMMA) / (2.0 * math.pi)

    def b_t(kap):
        return 0.125j * kap ** 2 - kap ** 2 * math.log(kap / 2.0) / (4.0 * math.pi) \
            + kap ** 2 * (1.0 - 2.0 * EULER_GAMMA) / (8.0 * math.pi)

    return {
        "D1": (0.0, 0.0),
        "D2": (b_s(k1) / gamma - b_s(k0), -(1.0 / gamma - 1.0) / (2.0 * math.pi)),
        "N1": (b_t(k0) - b_t(k1), -(k0 ** 2 - k1 ** 2) / (4.0 * math.pi)),
        "N2": ((1.0 / gamma - 1.0) * (-curvature / (4.0 * math.pi)), 0.0),
    }


# ---------------------------------------------------------------------------
# Reference-interval quadrature helpers
# ---------------------------------------------------------------------------
@lru_cache(maxsize=16)
def _lagrange_inverse(order: int) -> np.ndarray:
    t, _ = np.polynomial.legendre.leggauss(order)
    return np.linalg.inv(np.polynomial.legendre.legvander(t, order - 1))


def _interpolation_matrix(tau: np.ndarray, order: int) -> np.ndarray:
    """Values of the Lagrange basis on the Gauss nodes at parameters tau."""
    return np.polynomial.legendre.legvander(tau, order - 1) @ _lagrange_inverse(order)


@lru_cache(maxsize=16)
def _log_weights(order: int) -> np.ndarray:
    """W[i, j] = int_{-1}^{1} l_j(t) ln|t - t_i| dt for the Gauss nodes t_i."""
    t, _ = np.polynomial.legendre.leggauss(order)
    weights = np.empty((order, order))
    for j in range(order):
        def basis(s, j=j):
            return float(_interpolation_matrix(np.atleast_1d(s), order)[0, j])
        for i, ti in enumerate(t):
            left, _ = integrate.quad(basis, -1.0, ti, weight="alg-logb", wvar=(0.0, 0.0))
            right, _ = integrate.quad(basis, ti, 1.0, weight="alg-loga", wvar=(0.0, 0.0))
            weights[i, j] = left + right
    return weights


def _refined_rule(t_star: float, dist_ref: float, order: int) -> tuple[np.ndarray, np.ndarray]:
    """Composite Gauss rule on [-1, 1] refined geometrically toward t_star."""
    levels = int(min(MAX_REFINE_LEVELS, max(2, math.ceil(math.log2(2.0 / max(dist_ref, 1e-14))) + 2)))
    offsets = 2.0 * 2.0 ** -np.arange(levels + 1)
    breaks = np.unique(np.clip(np.concatenate([[-1.0, 1.0, t_star], t_star - offsets, t_star + offsets]),
                               -1.0, 1.0))
    g, w = np.polynomial.legendre.leggauss(order)
    nodes, weights = [], []
    for s0, s1 in zip(breaks[:-1], breaks[1:]):
        if s1 - s0 <= 1e-15:
            continue
        half = 0.5 * (s1 - s0)
        nodes.append(s0 + half * (g + 1.0))
        weights.append(half * w)
    return np.concatenate(nodes), np.concatenate(weights)


def _near_panels(mesh: BoundaryMesh, x: np.ndarray, skip: int = -1) -> list[tuple[int, float, float]]:
    """Panels within NEAR_FACTOR panel lengths of x, with closest parameter and distance."""
    out = []
    gaps = np.linalg.norm(mesh.centres - x, axis=1)
    candidates = np.nonzero(gaps <= (0.5 + NEAR_FACTOR) * mesh.panel_lengths + 1e-14)[0]
    for p in candidates:
        if p == skip:
            continue
        panel = mesh.panels[p]
        t_star, dist = panel.closest_parameter(x)
        if dist < NEAR_FACTOR * panel.length:
            out.append((p, t_star, dist))
    return out


# ---------------------------------------------------------------------------
# Assembly and solve
# ---------------------------------------------------------------------------
BLOCKS = ("D1", "D2", "N1", "N2")


def _assemble_rows(rows: np.ndarray, mesh: BoundaryMesh, k0: float, k1: float, gamma: float,
                   out: dict) -> None:
    x = mesh.nodes[rows]
    nx = mesh.normals[rows]
    blocks, _ = _system_kernels(x, nx, mesh.nodes, mesh.normals, k0, k1, gamma)
    for name in BLOCKS:
        out[name][rows] = blocks[name][0] * mesh.weights[None, :]

    order = mesh.order
    g_w = np.polynomial.legendre.leggauss(order)[1]
    log_w = _log_weights(order)
    for local, i in enumerate(rows):
        xi = mesh.nodes[i]
        p_self = int(mesh.panel_of[i])
        ii = i - p_self * order
        sl = mesh.panel_slice(p_self)

        # Self panel: product integration against ln|t - t_i|
        ys, nys, sps = mesh.nodes[sl], mesh.normals[sl], mesh.speeds[sl]
        kern, r = _system_kernels(xi[None, :], nx[local][None, :], ys, nys, k0, k1, gamma)
        r = r[0]
        diag = _diagonal_limits(k0, k1, gamma, mesh.curvature[i])
        dt = np.abs(mesh.t_ref - mesh.t_ref[ii])
        ratio = np.where(dt > 0, r / np.where(dt > 0, dt, 1.0), sps[ii])
        log_r = np.log(np.where(r > 0, r, 1.0))
        for name in BLOCKS:
            full, coef = kern[name][0][0].copy(), kern[name][1][0].copy()
            smooth = full - coef * log_r
            smooth[ii], coef[ii] = diag[name]
            out[name][i, sl] = (smooth + coef * np.log(ratio)) * g_w * sps + coef * sps * log_w[ii]

        # Nearby panels: refined quadrature with interpolated density
        for p, t_star, dist in _near_panels(mesh, xi, skip=p_self):
            panel = mesh.panels[p]
            tau, w_tau = _refined_rule(t_star, dist / (0.5 * panel.length), order)
            yp, nyp, spp = panel.map(tau)
            interp = _interpolation_matrix(tau, order)
            kern, _ = _system_kernels(xi[None, :], nx[local][None, :], yp, nyp, k0, k1, gamma)
            for name in BLOCKS:
                out[name][i, mesh.panel_slice(p)] = (kern[name][0][0] * w_tau * spp) @ interp


def assemble_system(mesh: BoundaryMesh, k0: float, k1: float, gamma: float, threads: int = 1) -> np.ndarray:
    """Dense 2N x 2N Mueller system matrix acting on (phi, psi)."""
    n = mesh.n_nodes
    out = {name: np.zeros((n, n), dtype=complex) for name in BLOCKS}
    blocks = np.array_split(np.arange(n), max(1, threads * 4))
    start = time.perf_counter()
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            list(pool.map(lambda rows: _assemble_rows(rows, mesh, k0, k1, gamma, out), blocks))
    else:
        for rows in blocks:
            _assemble_rows(rows, mesh, k0, k1, gamma, out)
    logger.debug("Assembled %d x %d system in %.2fs", 2 * n, 2 * n, time.perf_counter() - start)

    eye = np.eye(n)
    top = np.hstack([eye - out["D1"], -out["D2"]])
    bottom = np.hstack([-out["N1"], 0.5 * (1.0 + 1.0 / gamma) * eye - out["N2"]])
    return np.vstack([top, bottom])


@dataclass(frozen=True, eq=False)
class FieldSolution:
    """Exterior boundary traces of the total field plus solver diagnostics."""
    scatterer: Scatterer
    incident: IncidentField
    mesh: BoundaryMesh
    trace: np.ndarray  # u on dD
    normal_trace: np.ndarray  # exterior d_nu u on dD
    condition: float = 1.0
    residual: float = 0.0

    @property
    def k(self) -> float:
        return self.incident.k

    @property
    def k_int(self) -> float:
        return self.scatterer.k_int(self.k)

    @property
    def interior_normal_trace(self) -> np.ndarray:
        return self.normal_trace / self.scatterer.gamma

    def transmission_jump(self) -> np.ndarray:
        """gamma * interior normal derivative minus exterior normal derivative at nodes."""
        return self.scatterer.gamma * self.interior_normal_trace - self.normal_trace

    def diagnostics(self) -> dict:
        return {
            "condition": self.condition,
            "residual": self.residual,
            "nodes": self.mesh.n_nodes,
            "panels": len(self.mesh.panels),
            "order": self.mesh.order,
            "k": self.k,
            "k_int": self.k_int,
        }


def solve_scattering(scatterer: Scatterer, incident: IncidentField, mesh: Optional[BoundaryMesh] = None,
                     threads: int = 1) -> FieldSolution:
    """
    Solve the transmission problem for the boundary traces.

    Args:
        scatterer: Admissible scatterer (or the vacuum shortcut)
        incident: Incident field
        mesh: Boundary mesh; built with default_mesh when omitted
        threads: Worker threads for assembly

    Returns:
        FieldSolution with traces and diagnostics

    Raises:
        SolverError: Near-singular system or inaccurate solve
        ContractViolationError: Mesh does not resolve the wavelength
    """
    k = incident.k
    mesh = mesh or default_mesh(scatterer, k)
    if scatterer.is_vacuum:
        logger.info("Vacuum shortcut: scattered field is zero")
        return FieldSolution(scatterer, incident, mesh,
                             incident.value(mesh.nodes),
                             incident.normal_derivative(mesh.nodes, mesh.normals))

    k1 = scatterer.k_int(k)
    mesh.check_resolution(max(k, k1))
    if isinstance(scatterer.shape, Polygon) and not mesh.graded:
        raise ContractViolationError("Polygonal scatterers need a corner-graded mesh")

    matrix = assemble_system(mesh, k, k1, scatterer.gamma, threads)
    rhs = np.concatenate([incident.value(mesh.nodes), incident.normal_derivative(mesh.nodes, mesh.normals)])

    condition = float(np.linalg.cond(matrix))
    if not math.isfinite(condition) or condition > settings.max_condition:
        raise SolverError(f"System is near-singular (condition {condition:.3e}); "
                          f"possible resonance at k = {k}", condition=condition)
    if condition > settings.warn_condition:
        logger.warning("Ill-conditioned system: cond = %.2e (N=%d)", condition, mesh.n_nodes)

    solution = scipy.linalg.solve(matrix, rhs)
    residual = float(np.linalg.norm(matrix @ solution - rhs) / max(np.linalg.norm(rhs), 1e-300))
    if not np.all(np.isfinite(solution)) or residual > settings.solver_residual_tol:
        raise SolverError(f"Linear solve inaccurate (relative residual {residual:.3e})", condition=condition)
    logger.info("Solved transmission system: N=%d cond=%.2e residual=%.2e", mesh.n_nodes, condition, residual)

    n = mesh.n_nodes
    return FieldSolution(scatterer, incident, mesh, solution[:n], solution[n:], condition, residual)


# ---------------------------------------------------------------------------
# Field evaluation
# ---------------------------------------------------------------------------
@dataclass
class FieldEvaluation:
    """Total field values (and optionally gradients) at target points."""
    points: np.ndarray
    values: np.ndarray
    gradients: Optional[np.ndarray]
    inside: np.ndarray
    near_boundary: np.ndarray

    @property
    def degraded(self) -> bool:
        return bool(np.any(self.near_boundary))


def _potential_kernels(x, y, ny, kappa, gradient: bool):
    """Single- and double-layer kernels (and x-gradients) for off-surface targets."""
    R, r, _, b, _ = _pair_geometry(x, None, y, ny)
    z = kappa * r
    h0 = specfun.hankel1(0, z)
    h1 = specfun.hankel1(1, z)
    s = 0.25j * h0
    d = 0.25j * kappa * h1 * b / r
    if not gradient:
        return s, d, None, None
    rhat = R / r[..., None]
    grad_s = -0.25j * kappa * h1[..., None] * rhat
    h1p = h0 - h1 / z
    dbdx = ny[None, :, :]
    grad_d = 0.25j * kappa * (
        (kappa * h1p * b / r)[..., None] * rhat
        + h1[..., None] * (dbdx / r[..., None] - (b / r ** 3)[..., None] * R)
    )
    return s, d, grad_s, grad_d


def _layer_sum(sol: FieldSolution, x: np.ndarray, ys, nys, ws, phi, psi, interior: bool, gradient: bool):
    kappa = sol.k_int if interior else sol.k
    s, d, gs, gd = _potential_kernels(x, ys, nys, kappa, gradient)
    if interior:
        dens_s, dens_d = psi / sol.scatterer.gamma, -phi
    else:
        dens_s, dens_d = -psi, phi
    val = s @ (dens_s * ws) + d @ (dens_d * ws)
    grad = None
    if gradient:
        grad = np.einsum("mnk,n->mk", gs, dens_s * ws) + np.einsum("mnk,n->mk", gd, dens_d * ws)
    return val, grad


def evaluate_field(sol: FieldSolution, points, gradient: bool = False) -> FieldEvaluation:
    """
    Total field u (and grad u) at points off the boundary.

    Targets within one panel length of dD are integrated with refined
    quadrature and flagged as near-boundary.
    """
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    inside = sol.scatterer.contains(pts)
    values = np.zeros(len(pts), dtype=complex)
    grads = np.zeros((len(pts), 2), dtype=complex) if gradient else None
    mesh = sol.mesh

    outside = ~inside
    values[outside] = sol.incident.value(pts[outside]) if outside.any() else values[outside]
    if gradient and outside.any():
        grads[outside] = sol.incident.gradient(pts[outside])

    dist = sol.scatterer.boundary_distance(pts)
    near = np.zeros(len(pts), dtype=bool)
    if sol.scatterer.is_vacuum:
        if inside.any():
            values[inside] = sol.incident.value(pts[inside])
            if gradient:
                grads[inside] = sol.incident.gradient(pts[inside])
        return FieldEvaluation(pts, values, grads, inside, dist < mesh.panel_lengths.min())

    order = mesh.order
    for start in range(0, len(pts), EVAL_CHUNK_SIZE):
        idx = np.arange(start, min(start + EVAL_CHUNK_SIZE, len(pts)))
        for side in (True, False):
            sel = idx[inside[idx] == side]
            if len(sel) == 0:
                continue
            v, g = _layer_sum(sol, pts[sel], mesh.nodes, mesh.normals, mesh.weights,
                              sol.trace, sol.normal_trace, side, gradient)
            values[sel] += v
            if gradient:
                grads[sel] += g

    for i in range(len(pts)):
        near_list = _near_panels(mesh, pts[i])
        if not near_list:
            continue
        near[i] = any(d < mesh.panels[p].length for p, _, d in near_list)
        for p, t_star, d in near_list:
            panel = mesh.panels[p]
            sl = mesh.panel_slice(p)
            tau, w_tau = _refined_rule(t_star, d / (0.5 * panel.length), order)
            yp, nyp, spp = panel.map(tau)
            interp = _interpolation_matrix(tau, order)
            phi_f, psi_f = interp @ sol.trace[sl], interp @ sol.normal_trace[sl]
            coarse_v, coarse_g = _layer_sum(sol, pts[i:i + 1], mesh.nodes[sl], mesh.normals[sl],
                                            mesh.weights[sl], sol.trace[sl], sol.normal_trace[sl],
                                            bool(inside[i]), gradient)
            fine_v, fine_g = _layer_sum(sol, pts[i:i + 1], yp, nyp, w_tau * spp, phi_f, psi_f,
                                        bool(inside[i]), gradient)
            values[i] += fine_v[0] - coarse_v[0]
            if gradient:
                grads[i] += fine_g[0] - coarse_g[0]

    if near.any():
        logger.debug("%d of %d evaluation points lie within a panel length of the boundary",
                     int(near.sum()), len(pts))
    return FieldEvaluation(pts, values, grads, inside, near)


def boundary_integral(sol: FieldSolution, start, end, weight, trace: str = "interior_normal") -> complex:
    """
    Integrate a boundary trace against weight(points) over the straight
    sub-segment [start, end] of dD.

    Panels fully inside the segment use their own Nystrom rule; the panels
    cut by the segment ends use the interpolated density on the overlap.
    """
    start = np.asarray(start, dtype=float)
    end = np.asarray(end, dtype=float)
    chord = end - start
    length = float(np.linalg.norm(chord))
    direction = chord / length
    density = {
        "value": sol.trace,
        "exterior_normal": sol.normal_trace,
        "interior_normal": sol.interior_normal_trace,
    }[trace]

    mesh = sol.mesh
    total = 0.0 + 0.0j
    tol = settings.geometry_tol * max(1.0, length)
    for p, panel in enumerate(mesh.panels):
        if panel.kind != "segment":
            continue
        s0 = float((panel.start - start) @ direction)
        s1 = float((panel.end - start) @ direction)
        off0 = abs(float(np.cross(direction, panel.start - start)))
        off1 = abs(float(np.cross(direction, panel.end - start)))
        if off0 > tol or off1 > tol:
            continue
        lo, hi = max(min(s0, s1), 0.0), min(max(s0, s1), length)
        if hi - lo <= tol:
            continue
        sl = mesh.panel_slice(p)
        if lo <= min(s0, s1) + tol and hi >= max(s0, s1) - tol:
            total += np.sum(weight(mesh.nodes[sl]) * density[sl] * mesh.weights[sl])
            continue
        # map the overlap back to reference parameters of this panel
        t_lo = -1.0 + 2.0 * (lo - s0) / (s1 - s0)
        t_hi = -1.0 + 2.0 * (hi - s0) / (s1 - s0)
        t_a, t_b = min(t_lo, t_hi), max(t_lo, t_hi)
        g, w = np.polynomial.legendre.leggauss(2 * mesh.order)
        tau = t_a + 0.5 * (t_b - t_a) * (g + 1.0)
        pts, _, sp = panel.map(tau)
        vals = _interpolation_matrix(tau, mesh.order) @ density[sl]
        total += np.sum(weight(pts) * vals * sp * w * 0.5 * (t_b - t_a))
    return complex(total)


# ---------------------------------------------------------------------------
# Far field
# ---------------------------------------------------------------------------
@dataclass(frozen=True, eq=False)
class FarFieldPattern:
    """Samples of u_inf on theta_j = 2 pi j / N."""
    k: float
    values: np.ndarray

    def __post_init__(self):
        n = len(self.values)
        if n < 64 or n % 2:
            raise ContractViolationError(f"Far-field grid needs an even N >= 64, got {n}")

    @property
    def n(self) -> int:
        return len(self.values)

    @property
    def theta(self) -> np.ndarray:
        return 2.0 * np.pi * np.arange(self.n) / self.n

    def l2_norm(self) -> float:
        return float(math.sqrt(2.0 * np.pi / self.n * np.sum(np.abs(self.values) ** 2)))

    def resampled(self, n: int) -> "FarFieldPattern":
        """Trigonometric interpolation onto n uniform angles."""
        if n == self.n:
            return self
        return FarFieldPattern(self.k, signal.resample(self.values, n))

    def at(self, angle: float) -> complex:
        """Trigonometric interpolant evaluated at one angle."""
        coeffs = np.fft.fft(self.values) / self.n
        modes = np.fft.fftfreq(self.n, d=1.0 / self.n)
        # split the Nyquist mode symmetrically
        nyq = np.abs(modes) == self.n // 2
        terms = coeffs * np.exp(1j * modes * angle)
        terms[nyq] = coeffs[nyq] * math.cos(self.n // 2 * angle)
        return complex(np.sum(terms))


def far_field(sol: FieldSolution, n: Optional[int] = None) -> FarFieldPattern:
    """Far-field pattern on n uniform angles from the boundary representation."""
    n = n or settings.farfield_angles
    theta = 2.0 * np.pi * np.arange(n) / n
    if sol.scatterer.is_vacuum:
        return FarFieldPattern(sol.k, np.zeros(n, dtype=complex))
    k = sol.k
    xhat = np.column_stack([np.cos(theta), np.sin(theta)])
    mesh = sol.mesh
    phase = np.exp(-1j * k * xhat @ mesh.nodes.T)
    dn = xhat @ mesh.normals.T
    integrand = (-1j * k * dn * sol.trace[None, :] - sol.normal_trace[None, :]) * phase
    prefactor = np.exp(0.25j * np.pi) / math.sqrt(8.0 * np.pi * k)
    return FarFieldPattern(k, prefactor * (integrand @ mesh.weights))


def farfield_l2_distance(p: FarFieldPattern, p2: FarFieldPattern) -> float:
    """
    Trapezoid-rule L2(S^1) distance between two patterns.

    Raises:
        ContractViolationError: The patterns belong to different wavenumbers
    """
    if not math.isclose(p.k, p2.k, rel_tol=1e-12):
        raise ContractViolationError(f"Far-field patterns have different k ({p.k} vs {p2.k})")
    n = max(p.n, p2.n)
    a, b = p.resampled(n), p2.resampled(n)
    return float(math.sqrt(2.0 * np.pi / n * np.sum(np.abs(a.values - b.values) ** 2)))


def optical_theorem_defect(pattern: FarFieldPattern, direction_angle: float) -> float:
    """Relative defect of ||u_inf||^2 = -sqrt(8 pi / k) Re(e^{i pi/4} u_inf(d))."""
    energy = pattern.l2_norm() ** 2
    forward = -math.sqrt(8.0 * np.pi / pattern.k) * (np.exp(0.25j * np.pi) * pattern.at(direction_angle)).real
    return abs(energy - forward) / max(energy, 1e-300)


def write_farfield_csv(path: Union[str, Path], pattern: FarFieldPattern) -> Path:
    rows = ([float(t), float(v.real), float(v.imag)] for t, v in zip(pattern.theta, pattern.values))
    return persistence.write_csv(path, ["theta", "re", "im"], rows)


def read_farfield_csv(path: Union[str, Path], k: float) -> FarFieldPattern:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    return FarFieldPattern(k, np.array([float(r["re"]) + 1j * float(r["im"]) for r in rows]))


# ---------------------------------------------------------------------------
# Disk series oracle
# ---------------------------------------------------------------------------
@dataclass(frozen=True, eq=False)
class DiskSeriesSolution:
    """Cylindrical-harmonic series solution for a plane wave on a disk."""
    disk: Disk
    gamma: float
    q: float
    k: float
    angle: float
    orders: np.ndarray
    a: np.ndarray  # scattered coefficients
    b: np.ndarray  # interior coefficients

    @property
    def k_int(self) -> float:
        return self.k * math.sqrt(self.q / self.gamma)

    def _local(self, points):
        pts = np.atleast_2d(np.asarray(points, dtype=float)) - np.asarray(self.disk.center)
        return np.hypot(pts[:, 0], pts[:, 1]), np.arctan2(pts[:, 1], pts[:, 0])

    def _phase(self) -> complex:
        d = np.array([math.cos(self.angle), math.sin(self.angle)])
        return complex(np.exp(1j * self.k * d @ np.asarray(self.disk.center, dtype=float)))

    def field(self, points) -> np.ndarray:
        """Total field at points (exterior or interior)."""
        r, th = self._local(points)
        out = np.zeros(len(r), dtype=complex)
        inside = r < self.disk.radius
        harm = np.exp(1j * np.outer(th - self.angle, self.orders)) * (1j ** self.orders)
        for col, n in enumerate(self.orders):
            if inside.any():
                out[inside] += self.b[col] * specfun.bessel_j(abs(n), self.k_int * r[inside]) \
                    * (-1.0) ** (n if n < 0 else 0) * harm[inside, col]
            if (~inside).any():
                ro = r[~inside]
                out[~inside] += (specfun.bessel_j(abs(n), self.k * ro) * (-1.0) ** (n if n < 0 else 0)
                                 + self.a[col] * specfun.hankel1(n, self.k * ro, allow_negative_order=True)) \
                    * harm[~inside, col]
        return out * self._phase()

    def farfield(self, theta) -> np.ndarray:
        theta = np.asarray(theta, dtype=float)
        c = np.asarray(self.disk.center, dtype=float)
        xhat = np.column_stack([np.cos(theta), np.sin(theta)])
        shift = np.exp(-1j * self.k * xhat @ c) * self._phase()
        series = np.exp(1j * np.outer(theta - self.angle, self.orders)) @ self.a
        return math.sqrt(2.0 / (np.pi * self.k)) * np.exp(-0.25j * np.pi) * series * shift

    def pattern(self, n: Optional[int] = None) -> FarFieldPattern:
        n = n or settings.farfield_angles
        return FarFieldPattern(self.k, self.farfield(2.0 * np.pi * np.arange(n) / n))


def disk_series_solution(disk: Disk, gamma: float, q: float, k: float, angle: float = 0.0,
                         n_terms: Optional[int] = None) -> DiskSeriesSolution:
    """Match Bessel/Hankel expansions across the circle for every angular mode."""
    rho = disk.radius
    k1 = k * math.sqrt(q / gamma)
    n_terms = n_terms or int(30 + 2.0 * max(k, k1) * rho)
    orders = np.arange(-n_terms, n_terms + 1)
    a = np.zeros(len(orders), dtype=complex)
    b = np.zeros(len(orders), dtype=complex)
    for col, n in enumerate(orders):
        jn = specfun.bessel_j(abs(n), k * rho) * (-1.0) ** (n if n < 0 else 0)
        jnp = specfun.bessel_j_prime(n, k * rho)
        hn = specfun.hankel1(n, k * rho, allow_negative_order=True)
        hnp = specfun.hankel1_prime(n, k * rho)
        jn1 = specfun.bessel_j(abs(n), k1 * rho) * (-1.0) ** (n if n < 0 else 0)
        jn1p = specfun.bessel_j_prime(n, k1 * rho)
        mat = np.array([[-hn, jn1], [-k * hnp, gamma * k1 * jn1p]], dtype=complex)
        a[col], b[col] = np.linalg.solve(mat, np.array([jn, k * jnp], dtype=complex))
    return DiskSeriesSolution(disk, gamma, q, k, angle, orders, a, b)
