"""Map trapped-ion crystal microscopics to effective lattice field couplings.

The transverse zigzag distortion of a quasi-1d Coulomb crystal behaves as a
scalar field whose bare mass and quartic coupling follow from lattice sums
over the equilibrium positions.  This module solves the axial equilibrium,
evaluates those sums, produces the per-site coupling table (with the
dimensionless lattice pair used by the simulation modules), and provides an
independent soft-mode diagnostic from the full transverse Hessian.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .errors import ConvergenceError, InvalidParameterError
from .lattice import Couplings


class IonGeometry(str, Enum):
    LINEAR_CHAIN = "linear_chain"
    RING = "ring"
    SUBWAVELENGTH = "subwavelength"


@dataclass(frozen=True)
class IonCrystalConfig:
    """Microscopic crystal parameters (any consistent unit system, hbar = 1).

    For the linear chain the length scale a = (e0sq / (mass omega_z^2))^(1/3)
    is derived; ring and subwavelength traps must supply the uniform spacing.
    """

    n_ions: int
    geometry: IonGeometry = IonGeometry.LINEAR_CHAIN
    omega_x: float = 1.0
    omega_y: float = 50.0
    omega_z: float = 1.0
    mass: float = 1.0
    e0sq: float = 1.0
    spacing: float | None = None
    gradient_kernel: str = "printed"  # "printed" (1/d) or "cubic" (1/d^3)

    def __post_init__(self):
        if self.n_ions < 2:
            raise InvalidParameterError("need at least 2 ions")
        for name in ("omega_x", "omega_y", "omega_z", "mass", "e0sq"):
            if not getattr(self, name) > 0:
                raise InvalidParameterError(f"{name} must be positive")
        if self.geometry is not IonGeometry.LINEAR_CHAIN and not (
            self.spacing and self.spacing > 0
        ):
            raise InvalidParameterError(f"{self.geometry.value} needs a spacing")
        if self.geometry is IonGeometry.RING and self.n_ions % 2 != 0:
            raise InvalidParameterError("ring staggering needs an even ion count")
        if self.gradient_kernel not in ("printed", "cubic"):
            raise InvalidParameterError("gradient_kernel must be 'printed' or 'cubic'")
        if self.omega_y < 3.0 * max(self.omega_x, self.omega_z):
            warnings.warn(
                "omega_y is not well above omega_x, omega_z: the quasi-1d "
                "(transverse-frozen) treatment may be inaccurate",
                stacklevel=2,
            )

    @property
    def length_scale(self) -> float:
        if self.geometry is IonGeometry.LINEAR_CHAIN:
            return (self.e0sq / (self.mass * self.omega_z**2)) ** (1.0 / 3.0)
        return float(self.spacing)

    @property
    def kappa(self) -> float:
        """Dimensionless Coulomb-to-trap ratio e0sq / (m omega_x^2 a^3)."""
        return self.e0sq / (self.mass * self.omega_x**2 * self.length_scale**3)


@dataclass(frozen=True)
class EquilibriumPositions:
    """Dimensionless equilibrium coordinates with their pair distances."""

    positions: np.ndarray
    residual: float
    distances: np.ndarray = field(repr=False)

    @property
    def n(self) -> int:
        return len(self.positions)


def _chain_gradient(u: np.ndarray) -> np.ndarray:
    diff = u[:, None] - u[None, :]
    np.fill_diagonal(diff, np.inf)
    return u - np.sum(np.sign(diff) / diff**2, axis=1)


def _chain_hessian(u: np.ndarray) -> np.ndarray:
    diff = np.abs(u[:, None] - u[None, :])
    np.fill_diagonal(diff, np.inf)
    off = -2.0 / diff**3
    h = off.copy()
    np.fill_diagonal(h, 1.0 - np.sum(off, axis=1))
    return h


def _chain_potential(u: np.ndarray) -> float:
    diff = np.abs(u[:, None] - u[None, :])
    iu = np.triu_indices(len(u), k=1)
    return 0.5 * float(np.sum(u**2)) + float(np.sum(1.0 / diff[iu]))


def solve_equilibrium(
    config: IonCrystalConfig, tol: float = 1e-12, max_iter: int = 200
) -> EquilibriumPositions:
    """Stationary point of the dimensionless axial potential.

    Linear chains are solved by damped Newton iterations from a uniform
    initial guess (the potential is strictly convex on the ordered cone, so
    Newton with backtracking converges); ring and subwavelength geometries are
    uniform by symmetry and returned analytically.
    """
    n = config.n_ions
    if config.geometry is not IonGeometry.LINEAR_CHAIN:
        pos = np.arange(n, dtype=float) - (n - 1) / 2.0
        if config.geometry is IonGeometry.RING:
            sep = np.abs(np.arange(n)[:, None] - np.arange(n)[None, :])
            dist = (n / math.pi) * np.sin(math.pi * sep / n)
        else:
            sep = np.abs(np.arange(n)[:, None] - np.arange(n)[None, :])
            sep = np.minimum(sep, n - sep)  # minimal image keeps sites equivalent
            dist = sep.astype(float)
        np.fill_diagonal(dist, np.inf)
        return EquilibriumPositions(positions=pos, residual=0.0, distances=dist)

    u = (np.arange(n, dtype=float) - (n - 1) / 2.0) * max(1.0, n ** (-1.0 / 3.0) * 2.0)
    history = []
    for _ in range(max_iter):
        g = _chain_gradient(u)
        res = float(np.linalg.norm(g, ord=np.inf))
        history.append(res)
        if res < tol:
            break
        step = np.linalg.solve(_chain_hessian(u), -g)
        alpha, v0 = 1.0, _chain_potential(u)
        accepted = None
        while alpha > 1e-12:
            trial = u + alpha * step
            if np.all(np.diff(trial) > 0):
                new_res = float(np.linalg.norm(_chain_gradient(trial), ord=np.inf))
                if new_res < res or _chain_potential(trial) < v0:
                    accepted = trial
                    break
            alpha *= 0.5
        if accepted is None:
            raise ConvergenceError(
                "equilibrium line search stalled", residual=res, history=history
            )
        u = accepted
    else:
        raise ConvergenceError(
            f"equilibrium solve did not reach {tol:.1e}",
            residual=history[-1],
            history=history,
        )
    # The exact solution is reflection-antisymmetric; project onto that
    # subspace and re-polish once to clean up accumulated roundoff.
    u = 0.5 * (u - u[::-1])
    g = _chain_gradient(u)
    u = u + np.linalg.solve(_chain_hessian(u), -g)
    u = 0.5 * (u - u[::-1])
    res = float(np.linalg.norm(_chain_gradient(u), ord=np.inf))
    if res > 1e-10:
        raise ConvergenceError("post-symmetrization residual too large", residual=res)
    dist = np.abs(u[:, None] - u[None, :])
    np.fill_diagonal(dist, np.inf)
    return EquilibriumPositions(positions=u, residual=res, distances=dist)


def _distances(positions) -> np.ndarray:
    if isinstance(positions, EquilibriumPositions):
        return positions.distances
    pos = np.asarray(positions, dtype=float)
    dist = np.abs(pos[:, None] - pos[None, :])
    np.fill_diagonal(dist, np.inf)
    return dist


def zeta_sum(positions, i: int, n: int) -> float:
    """zeta_i(n) = sum_{l != i} [(-1)^i - (-1)^l]^(n-1) |r_i - r_l|^(-n).

    Same-parity terms vanish; opposite-parity terms contribute 2^(n-1)/d^n.
    Indices are 0-based.
    """
    if n not in (3, 5):
        raise InvalidParameterError("zeta sums are used with n in {3, 5}")
    dist = _distances(positions)
    m = dist.shape[0]
    if not 0 <= i < m:
        raise InvalidParameterError(f"site index {i} out of range")
    finite = dist[i, :][np.arange(m) != i]
    if np.any(finite < 1e-12):
        raise InvalidParameterError("coincident ion positions")
    total = 0.0
    for l in range(m):
        if l == i:
            continue
        parity = (-1) ** i - (-1) ** l
        total += parity ** (n - 1) / dist[i, l] ** n
    return float(total)


@dataclass(frozen=True)
class EffectiveCouplings:
    """Per-site coupling table plus the derived lattice-unit pair."""

    k: np.ndarray            # local spring constant
    u: np.ndarray            # local quartic coefficient
    k_tilde: np.ndarray      # neighbour spring constant
    c_x: np.ndarray          # sound velocity
    k_luttinger: np.ndarray  # stiffness a^2 sqrt(k_tilde m)
    m0sq_x: np.ndarray       # bare mass^2 (physical units)
    lambda_x: np.ndarray     # quartic coupling (physical units)
    m0sq_lattice: np.ndarray
    lambda_lattice: np.ndarray
    source_norm: np.ndarray  # 1/sqrt(K_L): drive-to-source conversion per site
    stable: np.ndarray       # k_tilde > 0 per site
    kappa: float
    length_scale: float
    bulk_m0sq: float
    bulk_lambda: float

    def to_couplings(self) -> Couplings:
        return Couplings(m0sq=self.bulk_m0sq, lam=max(self.bulk_lambda, 0.0))

    def rows(self) -> list[dict]:
        out = []
        for i in range(len(self.k)):
            out.append(
                {
                    "site": i,
                    "k": float(self.k[i]),
                    "u": float(self.u[i]),
                    "k_tilde": float(self.k_tilde[i]),
                    "c_x": float(self.c_x[i]),
                    "k_luttinger": float(self.k_luttinger[i]),
                    "m0sq_x": float(self.m0sq_x[i]),
                    "lambda_x": float(self.lambda_x[i]),
                    "m0sq_lattice": float(self.m0sq_lattice[i]),
                    "lambda_lattice": float(self.lambda_lattice[i]),
                    "source_norm": float(self.source_norm[i]),
                    "stable": bool(self.stable[i]),
                }
            )
        return out


def effective_couplings(
    config: IonCrystalConfig, positions: EquilibriumPositions
) -> EffectiveCouplings:
    """Evaluate the printed coupling formulas site by site.

    The neighbour spring constant uses the printed 1/d kernel by default; the
    'cubic' option (1/d^3) is available for sensitivity studies.  Lattice
    units divide out the sound velocity, i.e. energies are measured in
    c_x / a.
    """
    n = config.n_ions
    a = config.length_scale
    kappa = config.kappa
    m_w2 = config.mass * config.omega_x**2
    dist = positions.distances

    zeta3 = np.array([zeta_sum(positions, i, 3) for i in range(n)])
    zeta5 = np.array([zeta_sum(positions, i, 5) for i in range(n)])
    k = m_w2 * (1.0 - 0.5 * kappa * zeta3)
    u = 0.75 / a**2 * m_w2 * kappa * zeta5

    power = 1 if config.gradient_kernel == "printed" else 3
    idx = np.arange(n)
    sign = (-1.0) ** (idx[:, None] + idx[None, :] + 1)
    kernel = sign * kappa / (2.0 * dist**power)
    k_tilde = m_w2 * np.sum(np.where(np.isfinite(dist), kernel, 0.0), axis=1)

    stable = k_tilde > 0
    if not np.all(stable):
        warnings.warn(
            "k_tilde <= 0 on some sites: gradient term not positive there",
            stacklevel=2,
        )
    k_tilde_safe = np.where(stable, k_tilde, np.nan)
    c_x = a * np.sqrt(k_tilde_safe / config.mass)
    k_lutt = a**2 * np.sqrt(k_tilde_safe * config.mass)
    m0sq_x = k * a / k_lutt
    lambda_x = 6.0 * u * a**3 / k_lutt**2
    m0sq_lattice = m0sq_x * a**2 / c_x
    lambda_lattice = lambda_x * a**2 / c_x
    source_norm = 1.0 / np.sqrt(k_lutt)

    lo, hi = n // 3, max(n // 3 + 1, n - n // 3)
    bulk_m0 = float(np.nanmean(m0sq_lattice[lo:hi]))
    bulk_lam = float(np.nanmean(lambda_lattice[lo:hi]))

    return EffectiveCouplings(
        k=k,
        u=u,
        k_tilde=k_tilde,
        c_x=c_x,
        k_luttinger=k_lutt,
        m0sq_x=m0sq_x,
        lambda_x=lambda_x,
        m0sq_lattice=m0sq_lattice,
        lambda_lattice=lambda_lattice,
        source_norm=source_norm,
        stable=stable,
        kappa=kappa,
        length_scale=a,
        bulk_m0sq=bulk_m0,
        bulk_lambda=bulk_lam,
    )


@dataclass(frozen=True)
class SoftModeReport:
    """Lowest transverse mode of the full harmonic Hessian."""

    omega_sq: float            # in physical units (omega_x^2 scale included)
    omega_sq_dimensionless: float
    staggered_overlap: float   # |<v, (-1)^i>| of the lowest mode
    staggered_expectation: float  # <stag|Hessian|stag> in omega_x^2 units

    @property
    def is_staggered_dominant(self) -> bool:
        return self.staggered_overlap > 0.8


def soft_mode_check(
    config: IonCrystalConfig, positions: EquilibriumPositions
) -> SoftModeReport:
    """Transverse Hessian diagnostic for the zigzag instability.

    Validates the sign of the effective mass: the staggered transverse mode
    softens to zero at the same trap anisotropy where the local spring
    constants change sign (exactly so for homogeneous crystals, within the
    gradient-expansion window for chains).
    """
    n = config.n_ions
    kappa = config.kappa
    dist = positions.distances
    coupling = 1.0 / dist**3
    np.fill_diagonal(coupling, 0.0)
    hess = kappa * coupling
    np.fill_diagonal(hess, 1.0 - kappa * np.sum(coupling, axis=1))
    w, v = np.linalg.eigh(hess)
    stag = np.array([(-1.0) ** i for i in range(n)]) / math.sqrt(n)
    overlap = float(abs(stag @ v[:, 0]))
    expectation = float(stag @ hess @ stag)
    scale = config.omega_x**2
    return SoftModeReport(
        omega_sq=float(w[0]) * scale,
        omega_sq_dimensionless=float(w[0]),
        staggered_overlap=overlap,
        staggered_expectation=expectation,
    )


def critical_omega_x_from_couplings(config: IonCrystalConfig) -> float:
    """omega_x at which min_i k_i crosses zero (couplings route).

    k_i depends on omega_x only through the prefactor and kappa, so the
    crossing is solvable in closed form: omega_x^2 = (e0sq / m a^3) *
    max_i zeta_i(3) / 2.  Equilibrium positions are omega_x independent.
    """
    positions = solve_equilibrium(config)
    zeta3 = max(zeta_sum(positions, i, 3) for i in range(config.n_ions))
    scale = config.e0sq / (config.mass * config.length_scale**3)
    return math.sqrt(scale * zeta3 / 2.0)


def critical_omega_x_from_soft_mode(config: IonCrystalConfig) -> float:
    """omega_x at which the staggered transverse mode frequency crosses zero.

    The dimensionless Hessian is 1 - kappa M with M the Coulomb coupling
    matrix, so the crossing sits at kappa = 1/mu_max(M).
    """
    positions = solve_equilibrium(config)
    dist = positions.distances
    coupling = 1.0 / dist**3
    np.fill_diagonal(coupling, 0.0)
    # Dimensionless Hessian is I - kappa * (diag(row sums) - coupling).
    lap = -coupling
    np.fill_diagonal(lap, np.sum(coupling, axis=1))
    mu_max = float(np.linalg.eigvalsh(lap)[-1])
    scale = config.e0sq / (config.mass * config.length_scale**3)
    return math.sqrt(scale * mu_max)
