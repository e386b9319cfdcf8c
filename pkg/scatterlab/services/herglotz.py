"""Herglotz wave synthesis, regularized density recovery, the disk
interior-transmission-eigenvalue oracle and the Hoelder-quotient scan."""
import csv
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional, Union

import numpy as np
from scipy import optimize, sparse

from scatterlab.exceptions import ContractViolationError
from scatterlab.services import specfun
from scatterlab.services.forward import FieldSolution, IncidentField, evaluate_field
from scatterlab.services.geometry import CornerFrame
from scatterlab.utils import persistence

logger = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class HerglotzDensity:
    """Density samples g(d_j) on M uniform directions d_j = (cos t_j, sin t_j)."""
    values: np.ndarray

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=complex)
        if vals.ndim != 1 or len(vals) < 32 or len(vals) % 2:
            raise ContractViolationError(f"Herglotz density needs an even M >= 32 samples, got {vals.shape}")
        object.__setattr__(self, "values", vals)

    @property
    def m(self) -> int:
        return len(self.values)

    @property
    def theta(self) -> np.ndarray:
        return 2.0 * np.pi * np.arange(self.m) / self.m

    def l2_norm(self) -> float:
        return float(math.sqrt(2.0 * np.pi / self.m * np.sum(np.abs(self.values) ** 2)))

    @classmethod
    def from_function(cls, func: Callable, m: int = 64) -> "HerglotzDensity":
        theta = 2.0 * np.pi * np.arange(m) / m
        return cls(np.asarray(func(theta), dtype=complex))

    @classmethod
    def zeros(cls, m: int = 64) -> "HerglotzDensity":
        return cls(np.zeros(m, dtype=complex))


def herglotz_wave(g: HerglotzDensity, k: float, points) -> np.ndarray:
    """Trapezoid-rule Herglotz wave v_g(x) = int e^{ik x.d} g(d) ds(d)."""
    return IncidentField.herglotz(k, g.values).value(points)


def write_density_csv(path: Union[str, Path], g: HerglotzDensity) -> Path:
    rows = ([float(t), float(v.real), float(v.imag)] for t, v in zip(g.theta, g.values))
    return persistence.write_csv(path, ["theta", "re", "im"], rows)


def read_density_csv(path: Union[str, Path]) -> HerglotzDensity:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    return HerglotzDensity(np.array([float(r["re"]) + 1j * float(r["im"]) for r in rows]))


# ---------------------------------------------------------------------------
# Discrete H^1(D) surrogate
# ---------------------------------------------------------------------------
@dataclass(frozen=True, eq=False)
class SampleGrid:
    """Regular grid clipped to a region, with forward-difference neighbour pairs."""
    points: np.ndarray
    spacing: float
    pairs: np.ndarray  # (n_pairs, 2) indices (i, j) of neighbours inside the region
    h1_operator: sparse.csr_matrix = field(repr=False)

    @property
    def size(self) -> int:
        return len(self.points)


def make_grid(region, spacing: float) -> SampleGrid:
    """
    Sample grid of a region (anything with contains(points)).

    Raises:
        ContractViolationError: Fewer than 4 grid points fall inside the region
    """
    if not spacing > 0:
        raise ContractViolationError(f"Grid spacing must be positive, got {spacing}")
    shape = region.shape if hasattr(region, "shape") and hasattr(region.shape, "bounds") else None
    if shape is not None:
        x0, y0, x1, y1 = shape.bounds
    else:
        c, r = np.asarray(region.center, dtype=float), region.radius
        x0, y0, x1, y1 = c[0] - r, c[1] - r, c[0] + r, c[1] + r
    xs = np.arange(x0, x1 + 0.5 * spacing, spacing)
    ys = np.arange(y0, y1 + 0.5 * spacing, spacing)
    gx, gy = np.meshgrid(xs, ys, indexing="ij")
    flat = np.column_stack([gx.ravel(), gy.ravel()])
    inside = region.contains(flat).reshape(gx.shape)
    if inside.sum() < 4:
        raise ContractViolationError(f"Grid spacing {spacing} leaves fewer than 4 points inside the region")

    index = -np.ones(gx.shape, dtype=int)
    index[inside] = np.arange(int(inside.sum()))
    pairs = []
    for shift in ((1, 0), (0, 1)):
        a = index[: gx.shape[0] - shift[0], : gx.shape[1] - shift[1]]
        b = index[shift[0]:, shift[1]:]
        ok = (a >= 0) & (b >= 0)
        pairs.append(np.column_stack([a[ok], b[ok]]))
    pairs = np.vstack(pairs)

    n = int(inside.sum())
    rows = np.concatenate([np.arange(n), n + np.arange(len(pairs)), n + np.arange(len(pairs))])
    cols = np.concatenate([np.arange(n), pairs[:, 1], pairs[:, 0]])
    data = np.concatenate([np.full(n, spacing), np.ones(len(pairs)), -np.ones(len(pairs))])
    op = sparse.csr_matrix((data, (rows, cols)), shape=(n + len(pairs), n))
    return SampleGrid(points=flat[inside.ravel()], spacing=spacing, pairs=pairs, h1_operator=op)


def discrete_h1_norm(values, grid: SampleGrid) -> float:
    """sqrt(h^2 sum |v|^2 + sum over neighbour pairs |v_i - v_j|^2)."""
    return float(np.linalg.norm(grid.h1_operator @ np.asarray(values, dtype=complex)))


# ---------------------------------------------------------------------------
# Density fit
# ---------------------------------------------------------------------------
@dataclass(frozen=True)
class DensityFit:
    """Result of one Tikhonov density fit."""
    density: HerglotzDensity
    g_norm: float
    epsilon: float
    lam: float
    achieved: bool


class HerglotzFitOperator:
    """
    SVD of the scaled synthesis map for one (grid, k, M), reused across
    regularization weights.

    With w = 2 pi / M and g~ = sqrt(w) g, ||g||_{L2(S^1)} = ||g~|| and the
    discrete-H^1 misfit is ||B g~ - L v|| with B = L A / sqrt(w).
    """

    def __init__(self, grid: SampleGrid, k: float, m: int = 64):
        if m < 32 or m % 2:
            raise ContractViolationError(f"Herglotz density needs an even M >= 32 samples, got {m}")
        self.grid = grid
        self.k = k
        self.m = m
        theta = 2.0 * np.pi * np.arange(m) / m
        dirs = np.column_stack([np.cos(theta), np.sin(theta)])
        self.weight = 2.0 * np.pi / m
        synth = self.weight * np.exp(1j * k * grid.points @ dirs.T)
        scaled = np.asarray(grid.h1_operator @ synth) / math.sqrt(self.weight)
        self.u, self.s, self.vh = np.linalg.svd(scaled, full_matrices=False)
        self.synth = synth
        logger.debug("Herglotz fit operator: %d grid points, M=%d, s_max=%.3e s_min=%.3e",
                     grid.size, m, self.s[0], self.s[-1])

    def solve(self, target, lam: float, epsilon_target: Optional[float] = None) -> DensityFit:
        if not lam > 0:
            raise ContractViolationError(f"Regularization weight must be positive, got {lam}")
        target = np.asarray(target, dtype=complex)
        rhs = self.grid.h1_operator @ target
        proj = self.u.conj().T @ rhs
        g_scaled = self.vh.conj().T @ (self.s / (self.s ** 2 + lam) * proj)
        g = g_scaled / math.sqrt(self.weight)
        eps = discrete_h1_norm(self.synth @ g - target, self.grid)
        achieved = epsilon_target is None or eps <= epsilon_target
        if not achieved:
            logger.info("Density fit stagnated: eps=%.3e above requested %.3e at lambda=%.1e",
                        eps, epsilon_target, lam)
        density = HerglotzDensity(g)
        return DensityFit(density=density, g_norm=density.l2_norm(), epsilon=eps, lam=lam, achieved=achieved)


def herglotz_density_fit(target, grid: SampleGrid, k: float, lam: float, m: int = 64,
                         epsilon_target: Optional[float] = None,
                         operator: Optional[HerglotzFitOperator] = None) -> DensityFit:
    """
    Tikhonov fit of a Herglotz density to target samples on grid.

    Minimizes ||v_g - v||_{H1,grid}^2 + lam ||g||_{L2(S^1)}^2.

    Args:
        target: Field samples at grid.points
        grid: Sample grid clipped to D
        k: Wavenumber
        lam: Regularization weight, > 0
        m: Number of density samples
        epsilon_target: Requested misfit; the fit reports achieved=False above it
        operator: Precomputed HerglotzFitOperator for this (grid, k, m)

    Returns:
        DensityFit with g, ||g||, achieved misfit epsilon

    Raises:
        ContractViolationError: lam <= 0
    """
    operator = operator or HerglotzFitOperator(grid, k, m)
    return operator.solve(target, lam, epsilon_target)


def density_fit_path(target, grid: SampleGrid, k: float, lambdas, m: int = 64) -> list[DensityFit]:
    """Fits over a grid of regularization weights sharing one SVD."""
    operator = HerglotzFitOperator(grid, k, m)
    return [operator.solve(target, lam) for lam in lambdas]


# ---------------------------------------------------------------------------
# Disk transmission eigenvalues
# ---------------------------------------------------------------------------
@dataclass(frozen=True)
class EigenPair:
    """Transmission eigenvalue of a disk for one angular mode."""
    k: float
    n: int
    radius: float
    gamma: float
    q: float
    det: float


def transmission_determinant(n: int, k, radius: float, gamma: float, q: float):
    """d_n(k) = J_n(k1 rho) k J_n'(k rho) - gamma k1 J_n'(k1 rho) J_n(k rho), k1 = k sqrt(q/gamma)."""
    k = np.asarray(k, dtype=float)
    k1 = k * math.sqrt(q / gamma)
    return (specfun.bessel_j(n, k1 * radius) * k * specfun.bessel_j_prime(n, k * radius)
            - gamma * k1 * specfun.bessel_j_prime(n, k1 * radius) * specfun.bessel_j(n, k * radius))


def disk_transmission_eigenvalues(radius: float, gamma: float, q: float, k_interval: tuple[float, float],
                                  modes: tuple[int, int] = (0, 5), samples: int = 2000,
                                  xtol: float = 1e-14) -> list[EigenPair]:
    """
    Roots of the mode-wise matching determinant in k_interval.

    Raises:
        ContractViolationError: gamma = 1 and q = 1, or an invalid interval
    """
    if gamma == 1.0 and q == 1.0:
        raise ContractViolationError("Transmission eigenvalues need gamma != 1 or q != 1")
    k_lo, k_hi = map(float, k_interval)
    if not 0.0 < k_lo < k_hi:
        raise ContractViolationError(f"Invalid wavenumber interval ({k_lo}, {k_hi})")

    grid = np.linspace(k_lo, k_hi, samples)
    pairs = []
    for n in range(modes[0], modes[1] + 1):
        vals = transmission_determinant(n, grid, radius, gamma, q)
        for i in np.nonzero(np.sign(vals[:-1]) * np.sign(vals[1:]) < 0)[0]:
            def f(kk, n=n):
                return float(transmission_determinant(n, kk, radius, gamma, q))
            k_star = optimize.bisect(f, grid[i], grid[i + 1], xtol=xtol, maxiter=200)
            det = f(k_star)
            local = max(abs(vals[i]), abs(vals[i + 1]))
            if abs(det) > 1e-8 * local:
                logger.warning("Discarding bracket [%.6f, %.6f] for n=%d: |det|=%.2e", grid[i], grid[i + 1], n, det)
                continue
            pairs.append(EigenPair(k=float(k_star), n=n, radius=radius, gamma=gamma, q=q, det=det))
    pairs.sort(key=lambda e: (e.k, e.n))
    logger.info("Found %d disk transmission eigenvalues in [%.3g, %.3g]", len(pairs), k_lo, k_hi)
    return pairs


# ---------------------------------------------------------------------------
# Hoelder quotient scan
# ---------------------------------------------------------------------------
@dataclass(frozen=True)
class HolderScan:
    """Maximum Hoelder quotient per scale and its log-log trend."""
    scales: np.ndarray
    quotients: np.ndarray
    slope: float
    degraded: bool


def holder_quotient_scan(field: Union[FieldSolution, Callable], frame: CornerFrame, eta: float,
                         scales, angles: int = 9) -> HolderScan:
    """
    sup |u(x) - u(x')| / |x - x'|^eta over point pairs at each scale s.

    Pairs are radial (s, theta) - (s/2, theta) and angular (s, theta_j) -
    (s, theta_j+1) with angles spanning 80% of D's sector, so the pair
    geometry is self-similar across scales.
    """
    scales = np.asarray(scales, dtype=float)
    if np.any(scales <= 0):
        raise ContractViolationError("Scales must be positive")
    theta_mid = 0.5 * (frame.theta_plus + frame.theta_minus)
    thetas = theta_mid + np.linspace(-0.4 * frame.a, 0.4 * frame.a, angles)

    def sample(points):
        if isinstance(field, FieldSolution):
            ev = evaluate_field(field, points)
            return ev.values, ev.degraded
        return np.asarray(field(points), dtype=complex), False

    quotients = []
    degraded = False
    for s in scales:
        outer = frame.to_global(np.full(angles, s), thetas)
        inner = frame.to_global(np.full(angles, 0.5 * s), thetas)
        vals, flag_o = sample(np.vstack([outer, inner]))
        degraded = degraded or flag_o
        u_out, u_in = vals[:angles], vals[angles:]
        radial = np.abs(u_out - u_in) / np.linalg.norm(outer - inner, axis=1) ** eta
        angular = np.abs(u_out[1:] - u_out[:-1]) / np.linalg.norm(outer[1:] - outer[:-1], axis=1) ** eta
        quotients.append(max(float(radial.max()), float(angular.max())))
    quotients = np.array(quotients)

    positive = quotients > 0
    slope = float(np.polyfit(np.log(scales[positive]), np.log(quotients[positive]), 1)[0]) \
        if positive.sum() >= 2 else 0.0
    logger.info("Hoelder scan (eta=%.4f): slope %.3f over %d scales", eta, slope, len(scales))
    return HolderScan(scales=scales, quotients=quotients, slope=slope, degraded=degraded)
