"""Truncated-Fock simulation of a 1d lattice scalar field with quartic self-interaction.

Everything here works in lattice units (spacing absorbed into the dimensionless
couplings), so the Hamiltonian is

    H = sum_x [ pi_x^2 / 2 + (phi_{x+1} - phi_x)^2 / 2
                + m0sq / 2 * phi_x^2 + lam / 24 * phi_x^4 ]

with forward differences and either periodic or open boundaries.  Each site is
a harmonic ladder truncated at ``n_max`` quanta; the reference frequency of
that ladder is a free gauge choice that only controls truncation error.

The module provides two independent routes to correlation functions: an
analytic mode sum for the free theory and an exact-diagonalization evaluator
of time-ordered products for any coupling.  Protocol code is validated against
both.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from scipy.linalg import eigh

from .errors import (
    ConvergenceError,
    InvalidParameterError,
    PoleError,
    ResourceLimitError,
)

# Hard ceilings; overridable through the environment for bigger machines.
DEFAULT_MAX_DIM = int(os.environ.get("FIELDSENSE_MAX_DIM", 300_000))
DEFAULT_MAX_DENSE_DIM = int(os.environ.get("FIELDSENSE_MAX_DENSE_DIM", 4096))

HERMITICITY_TOL = 1e-12


@dataclass(frozen=True)
class LatticeSpec:
    """Geometry of the spatial lattice."""

    n_sites: int
    boundary: str = "periodic"
    spacing: float = 1.0

    def __post_init__(self):
        if self.n_sites < 2:
            raise InvalidParameterError("n_sites must be at least 2")
        if self.boundary not in ("periodic", "open"):
            raise InvalidParameterError(f"unknown boundary {self.boundary!r}")
        if not self.spacing > 0:
            raise InvalidParameterError("spacing must be positive")

    @property
    def bonds(self) -> list[tuple[int, int]]:
        """Forward-difference bonds; periodic wraps the last site around."""
        pairs = [(x, x + 1) for x in range(self.n_sites - 1)]
        if self.boundary == "periodic":
            pairs.append((self.n_sites - 1, 0))
        return pairs


@dataclass(frozen=True)
class Couplings:
    """Dimensionless bare couplings (lattice units): m0sq = m0^2 a^2, lam = lambda a^2."""

    m0sq: float
    lam: float = 0.0

    def __post_init__(self):
        if self.lam < 0:
            raise InvalidParameterError("quartic coupling must be non-negative")
        if self.lam == 0 and self.m0sq <= 0:
            raise InvalidParameterError(
                "free theory needs m0sq > 0 for a spectrum bounded below"
            )


@dataclass(frozen=True)
class FockBasis:
    """Per-site truncated harmonic ladder used to represent the field."""

    n_max: int
    local_freq: float

    def __post_init__(self):
        if self.n_max < 0:
            raise InvalidParameterError("n_max must be >= 0")
        if not self.local_freq > 0:
            raise InvalidParameterError("local_freq must be positive")

    @property
    def site_dim(self) -> int:
        return self.n_max + 1

    @classmethod
    def for_couplings(cls, couplings: Couplings, n_max: int = 8) -> "FockBasis":
        """Default reference frequency sqrt(m0sq + 2), the diagonal of the
        quadratic form; minimizes truncation error for the translationally
        invariant vacuum."""
        nu_sq = couplings.m0sq + 2.0
        if nu_sq <= 0:
            raise InvalidParameterError(
                "m0sq + 2 <= 0: supply an explicit local_freq for this regime"
            )
        return cls(n_max=n_max, local_freq=float(np.sqrt(nu_sq)))


@dataclass(frozen=True)
class FieldOperator:
    """Sparse operator on the field Hilbert space."""

    matrix: sp.csr_matrix
    hermitian: bool = True

    @property
    def dim(self) -> int:
        return self.matrix.shape[0]

    def toarray(self) -> np.ndarray:
        return self.matrix.toarray()

    def check_hermitian(self, tol: float = HERMITICITY_TOL) -> float:
        """Relative deviation from self-adjointness."""
        diff = (self.matrix - self.matrix.conj().T).tocsr()
        scale = spla.norm(self.matrix) or 1.0
        rel = spla.norm(diff) / scale
        if self.hermitian and rel > tol:
            raise InvalidParameterError(
                f"operator flagged hermitian deviates by {rel:.2e}"
            )
        return rel


@dataclass
class QuantumState:
    """Pure vector or density operator on (field) x (sensor qubits).

    ``data`` is a 1d vector for pure states and a square matrix for density
    operators; ``field_dim`` and ``n_sensors`` record the tensor factorization
    (sensor factor is the trailing index, dimension 2**n_sensors).
    """

    data: np.ndarray
    field_dim: int
    n_sensors: int = 0

    NORM_TOL = 1e-10

    @property
    def is_density(self) -> bool:
        return self.data.ndim == 2

    @property
    def dim(self) -> int:
        return self.data.shape[0]

    @property
    def sensor_dim(self) -> int:
        return 2**self.n_sensors

    def validate(self, check_psd: bool = False) -> None:
        expected = self.field_dim * self.sensor_dim
        if self.dim != expected:
            raise InvalidParameterError(
                f"state dimension {self.dim} != field_dim*2^n = {expected}"
            )
        if self.is_density:
            tr = np.trace(self.data)
            if abs(tr - 1.0) > self.NORM_TOL:
                raise InvalidParameterError(f"density trace {tr} != 1")
            if not np.allclose(self.data, self.data.conj().T, atol=1e-10):
                raise InvalidParameterError("density operator is not hermitian")
            if check_psd and self.dim <= 512:
                w = np.linalg.eigvalsh(self.data)
                if w.min() < -1e-10:
                    raise InvalidParameterError(
                        f"density operator has negative eigenvalue {w.min():.2e}"
                    )
        else:
            nrm = np.linalg.norm(self.data)
            if abs(nrm - 1.0) > self.NORM_TOL:
                raise InvalidParameterError(f"pure-state norm {nrm} != 1")

    def copy(self) -> "QuantumState":
        return QuantumState(self.data.copy(), self.field_dim, self.n_sensors)


def _ladder(n_max: int) -> np.ndarray:
    b = np.zeros((n_max + 1, n_max + 1))
    for n in range(1, n_max + 1):
        b[n - 1, n] = np.sqrt(n)
    return b


def build_site_operators(basis: FockBasis) -> tuple[FieldOperator, FieldOperator]:
    """Single-site field and conjugate momentum in the truncated ladder basis.

    phi = (b + b^dag)/sqrt(2 nu), pi = i sqrt(nu/2) (b^dag - b); the canonical
    commutator [phi, pi] = i holds exactly below the top Fock level, with the
    truncation defect confined to |n_max>.
    """
    b = _ladder(basis.n_max)
    nu = basis.local_freq
    phi = (b + b.T) / np.sqrt(2.0 * nu)
    pi = 1j * np.sqrt(nu / 2.0) * (b.T - b)
    return (
        FieldOperator(sp.csr_matrix(phi), hermitian=True),
        FieldOperator(sp.csr_matrix(pi), hermitian=True),
    )


def site_embed(op: np.ndarray | sp.spmatrix, site: int, n_sites: int) -> sp.csr_matrix:
    """Embed a single-site operator at the given site (site 0 leftmost)."""
    m = op.shape[0]
    left = sp.identity(m**site, format="csr")
    right = sp.identity(m ** (n_sites - site - 1), format="csr")
    return sp.kron(sp.kron(left, op, format="csr"), right, format="csr")


def field_dimension(spec: LatticeSpec, basis: FockBasis) -> int:
    return basis.site_dim**spec.n_sites


def check_dimension(dim: int, cap: int | None = None) -> None:
    cap = DEFAULT_MAX_DIM if cap is None else cap
    if dim > cap:
        raise ResourceLimitError(
            f"Hilbert dimension {dim} exceeds cap {cap}", dimension=dim, cap=cap
        )


def phi_at(spec: LatticeSpec, basis: FockBasis, site: int) -> sp.csr_matrix:
    """phi(x) embedded in the full field space."""
    phi, _ = build_site_operators(basis)
    return site_embed(phi.matrix, site, spec.n_sites)


def build_hamiltonian(
    spec: LatticeSpec,
    couplings: Couplings,
    basis: FockBasis,
    max_dim: int | None = None,
) -> FieldOperator:
    """Assemble the sparse lattice Hamiltonian.

    The gradient term is expanded over bonds, so every site carries an extra
    phi^2 with weight (number of touching bonds)/2 and every bond contributes
    -phi_i phi_j.
    """
    dim = field_dimension(spec, basis)
    check_dimension(dim, max_dim)

    # Single-site powers are computed on a padded ladder and then projected,
    # so each block is exactly P A P of the untruncated operator A.  With
    # nested projectors the ground energy is variational in n_max.
    pad = 4
    ext = FockBasis(n_max=basis.n_max + pad, local_freq=basis.local_freq)
    phi_e, pi_e = build_site_operators(ext)
    d = basis.site_dim
    phi_full = phi_e.matrix.toarray()
    pi_full = pi_e.matrix.toarray()
    phi = phi_full[:d, :d]
    phi2 = (phi_full @ phi_full)[:d, :d]
    phi4 = (phi_full @ phi_full @ phi_full @ phi_full)[:d, :d]
    # pi is imaginary antisymmetric, so pi^2 is real; keep H real symmetric.
    pi2 = np.real(pi_full @ pi_full)[:d, :d]

    bond_count = np.zeros(spec.n_sites)
    for i, j in spec.bonds:
        bond_count[i] += 1
        bond_count[j] += 1

    h = sp.csr_matrix((dim, dim))
    for x in range(spec.n_sites):
        local = (
            0.5 * pi2
            + (0.5 * couplings.m0sq + 0.5 * bond_count[x]) * phi2
            + (couplings.lam / 24.0) * phi4
        )
        h = h + site_embed(sp.csr_matrix(local), x, spec.n_sites)
    phi_sites = [phi_at(spec, basis, x) for x in range(spec.n_sites)]
    for i, j in spec.bonds:
        h = h - phi_sites[i] @ phi_sites[j]
    return FieldOperator(h.tocsr(), hermitian=True)


def ground_state(
    h: FieldOperator, tol: float = 1e-10, max_dim_dense: int = 600, maxiter: int = 20_000
) -> tuple[float, QuantumState]:
    """Lowest eigenpair of the truncated Hamiltonian.

    Small problems go through a dense solve; otherwise Lanczos with a fixed
    deterministic start vector.  The returned residual always satisfies
    ||H psi - E0 psi|| <= tol or a ConvergenceError is raised.
    """
    dim = h.dim
    if dim <= max_dim_dense:
        w, v = eigh(h.toarray())
        e0, psi = float(w[0]), v[:, 0]
    else:
        v0 = np.full(dim, 1.0 / np.sqrt(dim))
        try:
            w, v = spla.eigsh(h.matrix, k=1, which="SA", v0=v0, maxiter=maxiter, tol=0)
        except spla.ArpackNoConvergence as exc:  # pragma: no cover - rare
            raise ConvergenceError(
                "Lanczos ground-state solve did not converge", residual=None
            ) from exc
        e0, psi = float(w[0]), v[:, 0]
    psi = psi / np.linalg.norm(psi)
    # Fix the overall sign deterministically.
    k = int(np.argmax(np.abs(psi)))
    if psi[k].real < 0:
        psi = -psi
    residual = np.linalg.norm(h.matrix @ psi - e0 * psi)
    if residual > tol:
        raise ConvergenceError(
            f"ground-state residual {residual:.2e} above tol {tol:.2e}",
            residual=residual,
        )
    return e0, QuantumState(psi.astype(complex), field_dim=dim)


def gibbs_state(
    h: FieldOperator, beta: float, max_dim: int | None = None
) -> QuantumState:
    """Normalized thermal density operator exp(-beta H)/Z via full diagonalization."""
    if not beta > 0:
        raise InvalidParameterError("beta must be positive")
    cap = DEFAULT_MAX_DENSE_DIM if max_dim is None else max_dim
    if h.dim > cap:
        raise ResourceLimitError(
            f"dimension {h.dim} above full-diagonalization cap {cap}",
            dimension=h.dim,
            cap=cap,
        )
    w, v = eigh(h.toarray())
    weights = np.exp(-beta * (w - w[0]))
    weights /= weights.sum()
    rho = (v * weights) @ v.conj().T
    return QuantumState(rho.astype(complex), field_dim=h.dim)


def mode_frequencies(spec: LatticeSpec, m0sq: float) -> np.ndarray:
    """Free dispersion on the periodic lattice: omega_k = sqrt(m0sq + 4 sin^2(p_k/2))."""
    if spec.boundary != "periodic":
        raise InvalidParameterError("mode sum defined for periodic boundary")
    k = np.arange(spec.n_sites)
    p = 2.0 * np.pi * k / spec.n_sites
    omega_sq = m0sq + 4.0 * np.sin(p / 2.0) ** 2
    if np.any(omega_sq <= 0):
        raise InvalidParameterError(
            "massless or tachyonic mode on the finite lattice (omega_k^2 <= 0)"
        )
    return np.sqrt(omega_sq)


def free_propagator_exact(
    spec: LatticeSpec, m0sq: float, t: float, x: int
) -> complex:
    """Time-ordered two-point function of the free lattice field as a mode sum.

    Delta_0(t, x) = (1/N) sum_k exp(i p_k x - i omega_k |t|) / (2 omega_k).
    """
    n = spec.n_sites
    omega = mode_frequencies(spec, m0sq)
    p = 2.0 * np.pi * np.arange(n) / n
    phases = np.exp(1j * p * x - 1j * omega * abs(t))
    return complex(np.sum(phases / (2.0 * omega)) / n)


def free_propagator_momentum(
    p0: float, p: float, m0sq: float, a: float = 1.0, eps: float = 1e-8
) -> complex:
    """Momentum-space free propagator i / [(p0)^2 - m0^2 - (2/a)^2 sin^2(a p/2) + i eps]."""
    denom = p0**2 - m0sq - (2.0 / a) ** 2 * np.sin(a * p / 2.0) ** 2
    if eps == 0 and abs(denom) < 1e-14:
        raise PoleError("on-shell momentum with eps = 0")
    return 1j / (denom + 1j * eps)


@dataclass
class EigenOracle:
    """Exact Heisenberg-picture evaluator of time-ordered field products.

    Diagonalizes H once (dense) and reuses the spectral data for every
    correlator request.  Independent of the sensing protocol: this is the
    verification route.
    """

    h: FieldOperator
    spec: LatticeSpec
    basis: FockBasis
    max_dim: int | None = None
    _w: np.ndarray = field(init=False, repr=False)
    _v: np.ndarray = field(init=False, repr=False)
    _phi_eig: dict = field(init=False, repr=False, default_factory=dict)

    def __post_init__(self):
        cap = DEFAULT_MAX_DENSE_DIM if self.max_dim is None else self.max_dim
        if self.h.dim > cap:
            raise ResourceLimitError(
                f"dimension {self.h.dim} above full-diagonalization cap {cap}",
                dimension=self.h.dim,
                cap=cap,
            )
        w, v = eigh(self.h.toarray())
        self._w, self._v = w, v

    @property
    def energies(self) -> np.ndarray:
        return self._w

    @property
    def eigenvectors(self) -> np.ndarray:
        return self._v

    def ground(self) -> tuple[float, QuantumState]:
        psi = self._v[:, 0].astype(complex)
        return float(self._w[0]), QuantumState(psi, field_dim=self.h.dim)

    def _phi_in_eigenbasis(self, site: int) -> np.ndarray:
        if site not in self._phi_eig:
            phi = phi_at(self.spec, self.basis, site).toarray()
            self._phi_eig[site] = self._v.T @ phi @ self._v
        return self._phi_eig[site]

    def npoint(self, state: QuantumState, points: list[tuple[float, int]]) -> complex:
        """Tr(rho T{phi(t1,x1)...phi(tn,xn)}) by spectral sandwiching.

        Times are sorted descending with a stable sort, so equal-time entries
        keep their given order (fields commute at equal times).
        """
        if not points:
            raise InvalidParameterError("points list must be nonempty")
        order = sorted(range(len(points)), key=lambda i: -points[i][0])
        ts = [points[i][0] for i in order]
        xs = [points[i][1] for i in order]
        w = self._w
        if state.is_density:
            rho_e = self._v.conj().T @ state.data @ self._v
            # Assemble e^{+iHt1} phi1 e^{-iH(t1-t2)} phi2 ... phin e^{-iHtn}
            # right-to-left in the eigenbasis (diagonal phases as scalings).
            prod = self._phi_in_eigenbasis(xs[-1]) * np.exp(-1j * w * ts[-1])[None, :]
            for idx in range(len(ts) - 2, -1, -1):
                prod = np.exp(-1j * w * (ts[idx] - ts[idx + 1]))[:, None] * prod
                prod = self._phi_in_eigenbasis(xs[idx]) @ prod
            prod = np.exp(1j * w * ts[0])[:, None] * prod
            return complex(np.trace(rho_e @ prod))
        psi_e = self._v.conj().T @ state.data
        vec = np.exp(-1j * w * ts[-1]) * psi_e
        for idx in range(len(ts) - 1, -1, -1):
            vec = self._phi_in_eigenbasis(xs[idx]) @ vec
            if idx > 0:
                vec = np.exp(-1j * w * (ts[idx - 1] - ts[idx])) * vec
        vec = np.exp(1j * w * ts[0]) * vec
        return complex(np.vdot(psi_e, vec))


def oracle_npoint(
    h: FieldOperator,
    spec: LatticeSpec,
    basis: FockBasis,
    state: QuantumState,
    points: list[tuple[float, int]],
    max_dim: int | None = None,
) -> complex:
    """One-shot convenience wrapper around EigenOracle for a single correlator."""
    return EigenOracle(h, spec, basis, max_dim=max_dim).npoint(state, points)
