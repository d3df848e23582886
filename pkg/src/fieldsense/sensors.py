"""Two-level probes attached to lattice sites: entangled preparation, sourced
evolution, dephasing, and the spin-parity readout.

Conventions
-----------
* Sensor j of the layout is qubit bit j (little-endian) of the trailing tensor
  factor; the joint index is ``field * 2**n + sensor``.
* |0> is the sensor ground state; sigma^3 |0> = -|0>, so the projector onto the
  ground state is P = (1 - sigma^3)/2 and the free sensor Hamiltonian
  sum_x omega0 (1 - P)_x counts excited sensors.
* A kick pulse applies exp(+i J s phi(x) C_x) instantaneously, with C_x either
  P_x (Ramsey projector coupling) or sigma^3_x / 2, and s the stagger sign.
  Every sensor-side operator in the protocol is diagonal in the computational
  basis, which is what makes dephasing commute with the full evolution.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass, field, replace
from enum import Enum

import numpy as np
import scipy.sparse as sp
from scipy.linalg import eigh

from .errors import InvalidParameterError, ResourceLimitError
from .krylov import expm_multiply
from .lattice import (
    Couplings,
    FieldOperator,
    FockBasis,
    LatticeSpec,
    QuantumState,
    build_hamiltonian,
    build_site_operators,
    check_dimension,
    field_dimension,
    gibbs_state,
    ground_state,
)

DENSITY_EVOLUTION_CAP = 4096


@dataclass(frozen=True)
class SensorLayout:
    """Which lattice sites carry a probe qubit, and the probe splitting."""

    sites: tuple[int, ...]
    omega0: float = 1.0

    def __post_init__(self):
        if len(self.sites) < 1:
            raise InvalidParameterError("at least one sensor required")
        if len(set(self.sites)) != len(self.sites):
            raise InvalidParameterError("sensor sites must be distinct")
        if not self.omega0 > 0:
            raise InvalidParameterError("omega0 must be positive")

    @property
    def n(self) -> int:
        return len(self.sites)

    def qubit_of(self, site: int) -> int:
        try:
            return self.sites.index(site)
        except ValueError:
            raise InvalidParameterError(f"no sensor at site {site}") from None


class PreparationKind(str, Enum):
    GHZ_SUBSET = "ghz_subset"
    NEEL_DFS_PLUS = "neel_dfs_plus"
    NEEL_DFS_MINUS = "neel_dfs_minus"
    PRODUCT_DOWN = "product_down"


@dataclass(frozen=True)
class SensorPreparation:
    """Initial entangled state of the probes.

    The two populated computational branches are always bit-complements of one
    another; ``relative_phase`` is an extra phase imprinted on the second
    branch at preparation (used for quadrature readout of the
    decoherence-free pairs).  NEEL kinds split the layout into an odd/even
    partition; by default sensors alternate in layout order.
    """

    kind: PreparationKind
    odd_sites: tuple[int, ...] | None = None
    even_sites: tuple[int, ...] | None = None
    relative_phase: float = 0.0

    def partition(self, layout: SensorLayout) -> tuple[tuple[int, ...], tuple[int, ...]]:
        odd = self.odd_sites if self.odd_sites is not None else layout.sites[0::2]
        even = self.even_sites if self.even_sites is not None else layout.sites[1::2]
        if sorted(odd + even) != sorted(layout.sites):
            raise InvalidParameterError("partition must cover all sensor sites exactly")
        return tuple(odd), tuple(even)

    def branches(self, layout: SensorLayout) -> tuple[int, int, complex]:
        """(branch_a, branch_b, amplitude of branch_b relative to branch_a)."""
        n = layout.n
        phase = np.exp(1j * self.relative_phase)
        if self.kind is PreparationKind.PRODUCT_DOWN:
            return 0, 0, 0.0
        if self.kind is PreparationKind.GHZ_SUBSET:
            return 0, 2**n - 1, phase
        if n % 2 != 0:
            raise InvalidParameterError("NEEL preparations need an even sensor count")
        odd, even = self.partition(layout)
        mask_e = sum(1 << layout.qubit_of(s) for s in even)
        mask_o = sum(1 << layout.qubit_of(s) for s in odd)
        sign = -1.0 if self.kind is PreparationKind.NEEL_DFS_MINUS else 1.0
        return mask_e, mask_o, sign * phase


class CouplingForm(str, Enum):
    RAMSEY_P = "ramsey_p"
    DFS_SZ = "dfs_sz"


@dataclass(frozen=True)
class KickPulse:
    site: int
    time: float
    strength: float
    stagger_sign: int = 1
    coupling_form: CouplingForm = CouplingForm.RAMSEY_P

    def __post_init__(self):
        if self.time < 0:
            raise InvalidParameterError("pulse time must be >= t0 = 0")
        if self.stagger_sign not in (1, -1):
            raise InvalidParameterError("stagger_sign must be +1 or -1")


@dataclass(frozen=True)
class SourceSchedule:
    """Time-sorted kick list plus the parity readout time."""

    pulses: tuple[KickPulse, ...]
    readout_time: float
    label: str = ""

    def __post_init__(self):
        object.__setattr__(
            self, "pulses", tuple(sorted(self.pulses, key=lambda p: p.time))
        )
        if self.pulses and self.readout_time <= max(p.time for p in self.pulses):
            raise InvalidParameterError("readout_time must exceed every pulse time")
        if self.readout_time < 0:
            raise InvalidParameterError("readout_time must be >= 0")

    @property
    def schedule_id(self) -> str:
        payload = repr(
            [(p.site, p.time, p.strength, p.stagger_sign, p.coupling_form.value)
             for p in self.pulses]
        ) + f"@{self.readout_time}#{self.label}"
        return hashlib.sha256(payload.encode()).hexdigest()[:16]


class NoiseKind(str, Enum):
    NONE = "none"
    GLOBAL_DEPHASING = "global_dephasing"
    LOCAL_DEPHASING = "local_dephasing"


@dataclass(frozen=True)
class NoiseModel:
    kind: NoiseKind = NoiseKind.NONE
    t2: float = math.inf

    def __post_init__(self):
        if self.kind is not NoiseKind.NONE and not self.t2 > 0:
            raise InvalidParameterError("T2 must be positive for dephasing noise")


@dataclass(frozen=True)
class ParityRecord:
    value: float
    schedule_id: str
    readout_time: float
    noise: NoiseModel
    phase_reference: float
    n_sensors: int
    prep_kind: PreparationKind
    label: str = ""

    def __post_init__(self):
        if abs(self.value) > 1.0 + 1e-10:
            raise InvalidParameterError(f"parity {self.value} outside [-1, 1]")


def _popcounts(n: int) -> np.ndarray:
    return np.array([bin(s).count("1") for s in range(2**n)])


class JointSystem:
    """Field plus sensor-qubit Hilbert space with cached operators."""

    def __init__(
        self,
        spec: LatticeSpec,
        couplings: Couplings,
        basis: FockBasis,
        layout: SensorLayout,
        max_dim: int | None = None,
        h_field: FieldOperator | None = None,
    ):
        for s in layout.sites:
            if not 0 <= s < spec.n_sites:
                raise InvalidParameterError(f"sensor site {s} outside the lattice")
        self.spec = spec
        self.couplings = couplings
        self.basis = basis
        self.layout = layout
        self.field_dim = field_dimension(spec, basis)
        self.sensor_dim = 2**layout.n
        self.dim = self.field_dim * self.sensor_dim
        check_dimension(self.dim, max_dim)
        if h_field is not None and h_field.dim != self.field_dim:
            raise InvalidParameterError("prebuilt field Hamiltonian has wrong dimension")
        self.h_field = h_field if h_field is not None else build_hamiltonian(
            spec, couplings, basis, max_dim=max_dim
        )
        pops = _popcounts(layout.n)
        self.sensor_energies = layout.omega0 * pops
        self.h_total = (
            sp.kron(self.h_field.matrix, sp.identity(self.sensor_dim), format="csr")
            + sp.kron(
                sp.identity(self.field_dim),
                sp.diags(self.sensor_energies),
                format="csr",
            )
        ).tocsr()
        phi1, _ = build_site_operators(basis)
        # phi is the same on every site; keep its eigendecomposition for kicks.
        self._phi_w, self._phi_v = eigh(phi1.toarray())
        self._field_eig: tuple[np.ndarray, np.ndarray] | None = None
        # Sensor-diagonal structure: evolution never mixes sensor branches, so
        # pure states are propagated column by column under the shifted field
        # Hamiltonian (the shift centers the spectrum for the Krylov solver).
        self._field_shift = float(np.mean(self.h_field.matrix.diagonal()))
        self._h_field_shifted = (
            self.h_field.matrix
            - self._field_shift * sp.identity(self.field_dim, format="csr")
        ).tocsr()

    # -- preparation ------------------------------------------------------

    def sensor_state(self, prep: SensorPreparation) -> np.ndarray:
        b1, b2, amp = prep.branches(self.layout)
        chi = np.zeros(self.sensor_dim, dtype=complex)
        if b1 == b2:
            chi[b1] = 1.0
        else:
            chi[b1] = 1.0 / np.sqrt(2.0)
            chi[b2] = amp / np.sqrt(2.0)
        return chi

    def prepare_joint_state(
        self, field_state: QuantumState, prep: SensorPreparation
    ) -> QuantumState:
        if field_state.n_sensors != 0:
            raise InvalidParameterError("field_state already carries sensors")
        if field_state.field_dim != self.field_dim:
            raise InvalidParameterError("field state dimension mismatch")
        chi = self.sensor_state(prep)
        if field_state.is_density:
            data = np.kron(field_state.data, np.outer(chi, chi.conj()))
        else:
            data = np.kron(field_state.data, chi)
        out = QuantumState(data, field_dim=self.field_dim, n_sensors=self.layout.n)
        out.validate()
        return out

    # -- kicks ------------------------------------------------------------

    def _site_kick_unitary(self, coeff: float) -> np.ndarray:
        """exp(i coeff phi) on one site's ladder."""
        return (self._phi_v * np.exp(1j * coeff * self._phi_w)) @ self._phi_v.T

    def _coupling_values(self, pulse: KickPulse) -> np.ndarray:
        """Diagonal of C_x over the sensor computational basis."""
        j = self.layout.qubit_of(pulse.site)
        bits = (np.arange(self.sensor_dim) >> j) & 1
        if pulse.coupling_form is CouplingForm.RAMSEY_P:
            return 1.0 - bits.astype(float)
        return bits - 0.5  # sigma^3/2 with sigma^3|0> = -|0>

    def apply_kick(self, state: QuantumState, pulse: KickPulse) -> QuantumState:
        site_dim = self.basis.site_dim
        left = site_dim**pulse.site
        right = site_dim ** (self.spec.n_sites - pulse.site - 1)
        cvals = self._coupling_values(pulse)
        if state.is_density:
            kick = self._kick_matrix(pulse, cvals)
            data = kick @ state.data @ kick.conj().T
            return QuantumState(data, self.field_dim, self.layout.n)
        psi = state.data.reshape(left, site_dim, right, self.sensor_dim)
        out = psi.copy()
        for c in np.unique(cvals):
            cols = np.nonzero(cvals == c)[0]
            if c == 0.0:
                continue
            u = self._site_kick_unitary(pulse.strength * pulse.stagger_sign * c)
            out[..., cols] = np.einsum("ij,ajbs->aibs", u, psi[..., cols])
        return QuantumState(out.reshape(-1), self.field_dim, self.layout.n)

    def _kick_matrix(self, pulse: KickPulse, cvals: np.ndarray) -> sp.csr_matrix:
        from .lattice import site_embed

        mats = []
        for c in np.unique(cvals):
            mask = (cvals == c).astype(float)
            u = self._site_kick_unitary(pulse.strength * pulse.stagger_sign * c)
            mats.append(
                sp.kron(
                    site_embed(sp.csr_matrix(u), pulse.site, self.spec.n_sites),
                    sp.diags(mask),
                    format="csr",
                )
            )
        return sum(mats[1:], mats[0])

    # -- continuous evolution ----------------------------------------------

    def _field_eigh(self) -> tuple[np.ndarray, np.ndarray]:
        if self._field_eig is None:
            if self.field_dim > DENSITY_EVOLUTION_CAP:
                raise ResourceLimitError(
                    "field dimension too large for dense density evolution",
                    dimension=self.field_dim,
                    cap=DENSITY_EVOLUTION_CAP,
                )
            self._field_eig = eigh(self.h_field.toarray())
        return self._field_eig

    def evolve_free(
        self, state: QuantumState, dt: float, krylov_tol: float = 1e-11
    ) -> QuantumState:
        if dt == 0:
            return state
        if state.is_density:
            w, v = self._field_eigh()
            u_field = (v * np.exp(-1j * w * dt)) @ v.conj().T
            u_sensor = np.exp(-1j * self.sensor_energies * dt)
            rho = state.data.reshape(
                self.field_dim, self.sensor_dim, self.field_dim, self.sensor_dim
            )
            rho = np.einsum("ab,bscq->ascq", u_field, rho)
            rho = np.einsum("ascq,dc->asdq", rho, u_field.conj())
            rho = rho * u_sensor[None, :, None, None]
            rho = rho * u_sensor.conj()[None, None, None, :]
            return QuantumState(
                rho.reshape(self.dim, self.dim), self.field_dim, self.layout.n
            )
        psi = state.data.reshape(self.field_dim, self.sensor_dim)
        out = np.zeros_like(psi, dtype=complex)
        for s in range(self.sensor_dim):
            col = psi[:, s]
            if np.linalg.norm(col) < 1e-300:
                continue
            evolved = expm_multiply(self._h_field_shifted, col, dt, tol=krylov_tol)
            phase = np.exp(-1j * (self._field_shift + self.sensor_energies[s]) * dt)
            out[:, s] = phase * evolved
        return QuantumState(out.reshape(-1), self.field_dim, self.layout.n)

    # -- dephasing ----------------------------------------------------------

    def _pair_rates(self, noise: NoiseModel) -> np.ndarray:
        """Damping rate matrix over sensor coherences (units 1/T2)."""
        n = self.layout.n
        pops = _popcounts(n)
        if noise.kind is NoiseKind.GLOBAL_DEPHASING:
            return (pops[:, None] - pops[None, :]) ** 2 / noise.t2
        if noise.kind is NoiseKind.LOCAL_DEPHASING:
            s = np.arange(2**n)
            ham = np.array([[bin(a ^ b).count("1") for b in s] for a in s])
            return ham / noise.t2
        return np.zeros((2**n, 2**n))

    def dephase_density(
        self, state: QuantumState, noise: NoiseModel, duration: float
    ) -> QuantumState:
        if duration < 0:
            raise InvalidParameterError("dephasing duration must be >= 0")
        if noise.kind is NoiseKind.NONE or duration == 0:
            return state
        if not state.is_density:
            raise InvalidParameterError(
                "dephasing on a pure state requires the density representation"
            )
        factors = np.exp(-self._pair_rates(noise) * duration)
        rho = state.data.reshape(
            self.field_dim, self.sensor_dim, self.field_dim, self.sensor_dim
        )
        rho = rho * factors[None, :, None, :]
        return QuantumState(
            rho.reshape(self.dim, self.dim), self.field_dim, self.layout.n
        )

    # -- readout -------------------------------------------------------------

    def parity_expectation(self, state: QuantumState) -> float:
        comp = (self.sensor_dim - 1) ^ np.arange(self.sensor_dim)
        if state.is_density:
            rho = state.data.reshape(
                self.field_dim, self.sensor_dim, self.field_dim, self.sensor_dim
            )
            val = sum(
                np.trace(rho[:, comp[s], :, s]) for s in range(self.sensor_dim)
            )
        else:
            psi = state.data.reshape(self.field_dim, self.sensor_dim)
            val = sum(
                np.vdot(psi[:, s], psi[:, comp[s]]) for s in range(self.sensor_dim)
            )
        val = complex(val)
        if abs(val.imag) > 1e-10:
            raise InvalidParameterError(f"parity acquired imaginary part {val.imag}")
        return float(val.real)


def coherence_exponent(
    noise: NoiseModel, prep: SensorPreparation, layout: SensorLayout
) -> float:
    """Scaling prefactor f in the damping law exp(-f * duration / T2).

    GLOBAL: f = (excitation imbalance of the two branches)^2, i.e. n^2 for a
    GHZ pair and 0 for a balanced Neel pair.  LOCAL: f = Hamming distance of
    the branches, i.e. n for complementary pairs.
    """
    if noise.kind is NoiseKind.NONE:
        return 0.0
    b1, b2, _ = prep.branches(layout)
    if b1 == b2:
        return 0.0
    pc1, pc2 = bin(b1).count("1"), bin(b2).count("1")
    if noise.kind is NoiseKind.GLOBAL_DEPHASING:
        return float((pc1 - pc2) ** 2)
    return float(bin(b1 ^ b2).count("1"))


def prepare_joint_state(
    field_state: QuantumState, system: JointSystem, prep: SensorPreparation
) -> QuantumState:
    return system.prepare_joint_state(field_state, prep)


def evolve_schedule(
    state: QuantumState,
    system: JointSystem,
    schedule: SourceSchedule,
    noise: NoiseModel = NoiseModel(),
    krylov_tol: float = 1e-11,
) -> QuantumState:
    """Alternate free evolution with instantaneous kicks up to the readout time.

    With dephasing noise the state must be a density operator; the damping map
    commutes with every unitary piece here, so interleaving it per segment is
    exact.
    """
    use_generator = noise.kind is not NoiseKind.NONE
    if use_generator and not state.is_density:
        raise InvalidParameterError(
            "pure-state evolution with dephasing: promote to a density operator "
            "or use run_protocol's analytic damping"
        )
    current = state
    now = 0.0
    for pulse in schedule.pulses:
        dt = pulse.time - now
        current = system.evolve_free(current, dt, krylov_tol)
        if use_generator:
            current = system.dephase_density(current, noise, dt)
        current = system.apply_kick(current, pulse)
        now = pulse.time
    dt = schedule.readout_time - now
    current = system.evolve_free(current, dt, krylov_tol)
    if use_generator:
        current = system.dephase_density(current, noise, dt)
    return current


def parity_expectation(state: QuantumState, system: JointSystem) -> float:
    return system.parity_expectation(state)


def apply_dephasing(
    target: ParityRecord | QuantumState,
    noise: NoiseModel,
    duration: float,
    system: JointSystem | None = None,
    prep: SensorPreparation | None = None,
    layout: SensorLayout | None = None,
):
    """Damp a parity record (analytic law) or a density state (generator map)."""
    if duration < 0:
        raise InvalidParameterError("dephasing duration must be >= 0")
    if isinstance(target, ParityRecord):
        lay = layout if layout is not None else (system.layout if system else None)
        if lay is None:
            raise InvalidParameterError("layout needed to damp a parity record")
        if prep is None:
            prep = SensorPreparation(kind=target.prep_kind)
        f = coherence_exponent(noise, prep, lay)
        scale = math.exp(-f * duration / noise.t2) if noise.kind is not NoiseKind.NONE else 1.0
        return replace(target, value=target.value * scale, noise=noise)
    if system is None:
        raise InvalidParameterError("system required to dephase a state")
    return system.dephase_density(target, noise, duration)


@dataclass(frozen=True)
class FieldPreparation:
    kind: str = "vacuum"  # "vacuum" | "gibbs"
    beta: float | None = None

    def __post_init__(self):
        if self.kind not in ("vacuum", "gibbs"):
            raise InvalidParameterError(f"unknown field preparation {self.kind!r}")
        if self.kind == "gibbs" and (self.beta is None or self.beta <= 0):
            raise InvalidParameterError("gibbs preparation needs beta > 0")


def prepare_field_state(
    system: JointSystem, field_prep: FieldPreparation, tol: float = 1e-10
) -> QuantumState:
    if field_prep.kind == "vacuum":
        _, psi = ground_state(system.h_field, tol=tol)
        return psi
    return gibbs_state(system.h_field, beta=field_prep.beta)


def run_protocol(
    system: JointSystem,
    field_state: QuantumState | FieldPreparation,
    prep: SensorPreparation,
    schedule: SourceSchedule,
    noise: NoiseModel = NoiseModel(),
    krylov_tol: float = 1e-11,
    noise_method: str = "analytic",
) -> ParityRecord:
    """Prepare, evolve through the schedule, and read out the spin parity.

    ``noise_method='analytic'`` evolves without noise and applies the closed
    damping law to the parity (exact for the two-branch preparations used
    here); ``'generator'`` runs the density-operator dephasing map instead.
    """
    if isinstance(field_state, FieldPreparation):
        field_state = prepare_field_state(system, field_state)
    joint = system.prepare_joint_state(field_state, prep)
    if noise.kind is not NoiseKind.NONE and noise_method == "generator" and not joint.is_density:
        joint = QuantumState(
            np.outer(joint.data, joint.data.conj()), system.field_dim, system.layout.n
        )
    run_noise = noise if noise_method == "generator" else NoiseModel()
    evolved = evolve_schedule(joint, system, schedule, noise=run_noise, krylov_tol=krylov_tol)
    value = system.parity_expectation(evolved)
    if noise.kind is not NoiseKind.NONE and noise_method == "analytic":
        f = coherence_exponent(noise, prep, system.layout)
        value *= math.exp(-f * schedule.readout_time / noise.t2)
    tau = schedule.readout_time
    return ParityRecord(
        value=value,
        schedule_id=schedule.schedule_id,
        readout_time=tau,
        noise=noise,
        phase_reference=math.fmod(system.layout.n * system.layout.omega0 * tau, 2 * math.pi),
        n_sensors=system.layout.n,
        prep_kind=prep.kind,
        label=schedule.label,
    )
