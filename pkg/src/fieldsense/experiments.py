"""Declarative experiment configs, the run orchestrator, and result files.

A config picks a task (ground_state, propagator, protocol, mass,
noise_scaling, ion_map), the physical system (explicit couplings XOR an ion
block), and optional sweep axes.  ``run_experiment`` expands sweeps, executes
every run (parallel across sweep points), attaches oracle columns where an
exact route exists at the configured dimension, and returns rows that
serialize to a schema-versioned JSON document plus CSV tables.
"""

from __future__ import annotations

import hashlib
import itertools
import json
import math
import os
import tempfile
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Literal

import numpy as np
import yaml
from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from . import __version__
from .errors import FieldSenseError, InvalidParameterError, ResourceLimitError
from .estimator import (
    PropagatorEstimate,
    StencilPlan,
    StencilVariant,
    build_source_sets,
    combine_general,
    extract_mass,
    extract_propagator,
    readout_time_for_phase,
    richardson_extrapolate,
)
from .ions import (
    IonCrystalConfig,
    IonGeometry,
    effective_couplings,
    soft_mode_check,
    solve_equilibrium,
)
from .lattice import (
    Couplings,
    EigenOracle,
    FockBasis,
    LatticeSpec,
    QuantumState,
    build_hamiltonian,
    free_propagator_exact,
    gibbs_state,
    ground_state,
    phi_at,
)
from .sensors import (
    FieldPreparation,
    JointSystem,
    KickPulse,
    NoiseKind,
    NoiseModel,
    ParityRecord,
    PreparationKind,
    SensorLayout,
    SensorPreparation,
    SourceSchedule,
    coherence_exponent,
    prepare_field_state,
    run_protocol,
)

SCHEMA_VERSION = 1
DENSE_ORACLE_CAP = int(os.environ.get("FIELDSENSE_MAX_DENSE_DIM", 4096))


# --------------------------------------------------------------------------
# Config models


class _Base(BaseModel):
    model_config = ConfigDict(extra="forbid", populate_by_name=True)


class LatticeConfig(_Base):
    n_sites: int = 4
    boundary: Literal["periodic", "open"] = "periodic"
    spacing: float = 1.0


class CouplingsConfig(_Base):
    m0sq: float = 1.0
    lam: float = Field(0.0, alias="lambda")


class BasisConfig(_Base):
    n_max: int = 8
    local_freq: float | None = None


class IonBlockConfig(_Base):
    n_ions: int
    geometry: Literal["linear_chain", "ring", "subwavelength"] = "linear_chain"
    omega_x: float = 1.0
    omega_y: float = 50.0
    omega_z: float = 1.0
    mass: float = 1.0
    e0sq: float = 1.0
    spacing: float | None = None
    gradient_kernel: Literal["printed", "cubic"] = "printed"

    def to_config(self) -> IonCrystalConfig:
        return IonCrystalConfig(
            n_ions=self.n_ions,
            geometry=IonGeometry(self.geometry),
            omega_x=self.omega_x,
            omega_y=self.omega_y,
            omega_z=self.omega_z,
            mass=self.mass,
            e0sq=self.e0sq,
            spacing=self.spacing,
            gradient_kernel=self.gradient_kernel,
        )


class SensorConfig(_Base):
    omega0: float = 1.0


class NoiseConfig(_Base):
    kind: Literal["none", "global_dephasing", "local_dephasing"] = "none"
    t2: float | None = None

    def to_model(self) -> NoiseModel:
        if self.kind == "none":
            return NoiseModel()
        return NoiseModel(NoiseKind(self.kind), t2=self.t2)

    @model_validator(mode="after")
    def _needs_t2(self):
        if self.kind != "none" and (self.t2 is None or self.t2 <= 0):
            raise ValueError("noise.t2 must be positive when noise is enabled")
        return self


class FieldPrepConfig(_Base):
    kind: Literal["vacuum", "gibbs"] = "vacuum"
    beta: float | None = None

    def to_prep(self) -> FieldPreparation:
        return FieldPreparation(kind=self.kind, beta=self.beta)

    @model_validator(mode="after")
    def _needs_beta(self):
        if self.kind == "gibbs" and (self.beta is None or self.beta <= 0):
            raise ValueError("field_prep.beta must be positive for gibbs")
        return self


class PulseConfig(_Base):
    site: int
    time: float
    strength: float
    stagger_sign: int = 1
    coupling_form: Literal["ramsey_p", "dfs_sz"] = "ramsey_p"


class PlanConfig(_Base):
    """Task-specific knobs; unused fields are ignored by other tasks."""

    times: list[float] = Field(default_factory=lambda: [0.0, 0.5, 1.0, 1.5, 2.0, 2.5])
    sites: list[int] | None = None
    base_site: int = 0
    strength: float = 0.05
    richardson: bool = True
    variant: Literal["ghz_phased", "dfs"] = "ghz_phased"
    # protocol task
    pulses: list[PulseConfig] = Field(default_factory=list)
    readout_times: list[float] = Field(default_factory=lambda: [1.0])
    preparation: Literal["ghz", "neel_plus", "neel_minus", "product"] = "ghz"
    sensor_sites: list[int] | None = None
    # mass task
    mass_source: Literal["protocol", "oracle"] = "protocol"
    # noise_scaling task
    sensor_counts: list[int] = Field(default_factory=lambda: [1, 2, 3, 4])
    decay_cycles: int = 3


class SweepAxis(_Base):
    parameter: str
    values: list[float]


class ExperimentConfig(_Base):
    task: Literal[
        "ground_state", "propagator", "protocol", "mass", "noise_scaling", "ion_map"
    ] = "propagator"
    lattice: LatticeConfig = Field(default_factory=LatticeConfig)
    couplings: CouplingsConfig | None = None
    ion: IonBlockConfig | None = None
    basis: BasisConfig = Field(default_factory=BasisConfig)
    sensor: SensorConfig = Field(default_factory=SensorConfig)
    noise: NoiseConfig = Field(default_factory=NoiseConfig)
    field_prep: FieldPrepConfig = Field(default_factory=FieldPrepConfig)
    plan: PlanConfig = Field(default_factory=PlanConfig)
    sweep: list[SweepAxis] = Field(default_factory=list)
    output_dir: str = "results"
    prefix: str = "run"
    seed: int = 0
    max_dim: int | None = None

    @model_validator(mode="after")
    def _coupling_source(self):
        if self.couplings is not None and self.ion is not None:
            raise ValueError(
                "exactly one coupling source allowed: explicit couplings XOR ion block"
            )
        if self.task == "ion_map" and self.ion is None:
            raise ValueError("ion_map task requires the ion block")
        return self

    def resolved_couplings(self) -> Couplings:
        if self.ion is not None:
            cfg = self.ion.to_config()
            eff = effective_couplings(cfg, solve_equilibrium(cfg))
            return eff.to_couplings()
        block = self.couplings or CouplingsConfig()
        return Couplings(m0sq=block.m0sq, lam=block.lam)

    def config_hash(self) -> str:
        payload = json.dumps(self.model_dump(mode="json"), sort_keys=True)
        return hashlib.sha256(payload.encode()).hexdigest()[:16]


def parse_config(path: str | Path) -> ExperimentConfig:
    """Load and validate a YAML or JSON experiment description."""
    path = Path(path)
    if not path.exists():
        raise InvalidParameterError(f"config file not found: {path}")
    text = path.read_text()
    data = json.loads(text) if path.suffix == ".json" else yaml.safe_load(text)
    try:
        return ExperimentConfig.model_validate(data or {})
    except ValidationError as exc:
        locs = ", ".join(
            ".".join(str(p) for p in err["loc"]) or "<root>" for err in exc.errors()
        )
        raise InvalidParameterError(f"invalid config (keys: {locs}): {exc}") from exc


# --------------------------------------------------------------------------
# Result container


@dataclass
class ResultSet:
    rows: list[dict]
    meta: dict

    @property
    def partial(self) -> bool:
        return any(r.get("status") != "ok" for r in self.rows)

    def to_dict(self) -> dict:
        return {"meta": self.meta, "rows": self.rows}

    @classmethod
    def from_dict(cls, data: dict) -> "ResultSet":
        return cls(rows=data["rows"], meta=data["meta"])


def atomic_write(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=".tmp_", suffix=path.suffix)
    try:
        with os.fdopen(fd, "w") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


# --------------------------------------------------------------------------
# Two-point measurement engine


PREP_BY_NAME = {
    "ghz": PreparationKind.GHZ_SUBSET,
    "neel_plus": PreparationKind.NEEL_DFS_PLUS,
    "neel_minus": PreparationKind.NEEL_DFS_MINUS,
    "product": PreparationKind.PRODUCT_DOWN,
}


@dataclass
class ProtocolEngine:
    """Caches systems, field states, and parity values for one sweep point."""

    spec: LatticeSpec
    couplings: Couplings
    basis: FockBasis
    omega0: float
    field_prep: FieldPreparation
    noise: NoiseModel = field(default_factory=NoiseModel)
    krylov_tol: float = 1e-11
    max_dim: int | None = None
    _systems: dict = field(default_factory=dict)
    _field_states: dict = field(default_factory=dict)
    _parities: dict = field(default_factory=dict)
    runs: int = 0

    def system_for(self, sites: tuple[int, ...]) -> JointSystem:
        if sites not in self._systems:
            shared = next(iter(self._systems.values())).h_field if self._systems else None
            layout = SensorLayout(sites=sites, omega0=self.omega0)
            self._systems[sites] = JointSystem(
                self.spec,
                self.couplings,
                self.basis,
                layout,
                max_dim=self.max_dim,
                h_field=shared,
            )
        return self._systems[sites]

    def field_state(self, system: JointSystem) -> QuantumState:
        key = (self.field_prep.kind, self.field_prep.beta)
        if key not in self._field_states:
            self._field_states[key] = prepare_field_state(system, self.field_prep)
        return self._field_states[key]

    def parity(
        self,
        sites: tuple[int, ...],
        prep: SensorPreparation,
        schedule: SourceSchedule,
    ) -> ParityRecord:
        system = self.system_for(sites)
        prep_key = (prep.kind.value, prep.odd_sites, prep.even_sites,
                    round(prep.relative_phase, 12))
        key = (sites, prep_key, schedule.schedule_id)
        if key not in self._parities:
            state = self.field_state(system)
            self._parities[key] = run_protocol(
                system, state, prep, schedule, noise=self.noise,
                krylov_tol=self.krylov_tol,
            ).value
            self.runs += 1
        value = self._parities[key]
        tau = schedule.readout_time
        return ParityRecord(
            value=value,
            schedule_id=schedule.schedule_id,
            readout_time=tau,
            noise=self.noise,
            phase_reference=math.fmod(len(sites) * self.omega0 * tau, 2 * math.pi),
            n_sensors=len(sites),
            prep_kind=prep.kind,
            label=schedule.label,
        )

    def stencil_derivative(self, plan: StencilPlan) -> float:
        sites = plan.sensor_sites()
        prep = plan.preparation()
        records = [
            self.parity(sites, prep, sched) for sched in build_source_sets(plan)
        ]
        return combine_general(records, plan.strengths)

    def _phased_estimate(
        self, points, strength: float, min_time: float
    ) -> PropagatorEstimate:
        n = len(points)
        sites = tuple(dict.fromkeys(x for _, x in points))
        derivs = []
        for theta in (0.0, math.pi / 2.0):
            tau = readout_time_for_phase(theta, len(sites), self.omega0, min_time)
            plan = StencilPlan(
                points=points, strengths=(strength,) * n,
                variant=StencilVariant.GHZ_PHASED, readout_time=tau,
            )
            derivs.append((theta, self.stencil_derivative(plan)))
        return extract_propagator(derivs, StencilVariant.GHZ_PHASED, n=n, points=points)

    def _dfs_estimate(
        self, points, strength: float, min_time: float
    ) -> PropagatorEstimate:
        if len(points) != 2:
            raise InvalidParameterError("decoherence-free route supports n = 2")
        parts = []
        for variant in (StencilVariant.DFS_REAL, StencilVariant.DFS_IMAG):
            tau = readout_time_for_phase(0.0, 2, self.omega0, min_time)
            plan = StencilPlan(
                points=points, strengths=(strength, strength),
                variant=variant, readout_time=tau,
            )
            d = self.stencil_derivative(plan)
            quad = 0.0 if variant is StencilVariant.DFS_REAL else math.pi / 2.0
            parts.append(
                extract_propagator([(quad, d)], variant, n=2, points=points)
            )
        return PropagatorEstimate(
            value=parts[0].value + parts[1].value,
            diagnostics={"real_route": parts[0].diagnostics,
                         "imag_route": parts[1].diagnostics},
        )

    def estimate_npoint(
        self,
        points: tuple[tuple[float, int], ...],
        strength: float,
        variant: str = "ghz_phased",
        richardson: bool = True,
        min_time: float | None = None,
    ) -> PropagatorEstimate:
        """Full n-point measurement: stencils at two phases, optional
        strength-halving extrapolation."""
        if min_time is None:
            min_time = max(t for t, _ in points)
        route = self._phased_estimate if variant == "ghz_phased" else self._dfs_estimate
        coarse = route(points, strength, min_time)
        if not richardson:
            return coarse
        fine = route(points, strength / 2.0, min_time)
        return richardson_extrapolate(coarse, fine)


# --------------------------------------------------------------------------
# Task implementations


def _engine_for(config: ExperimentConfig) -> ProtocolEngine:
    couplings = config.resolved_couplings()
    spec = LatticeSpec(
        n_sites=config.lattice.n_sites,
        boundary=config.lattice.boundary,
        spacing=config.lattice.spacing,
    )
    if config.basis.local_freq is not None:
        basis = FockBasis(n_max=config.basis.n_max, local_freq=config.basis.local_freq)
    else:
        basis = FockBasis.for_couplings(couplings, n_max=config.basis.n_max)
    return ProtocolEngine(
        spec=spec,
        couplings=couplings,
        basis=basis,
        omega0=config.sensor.omega0,
        field_prep=config.field_prep.to_prep(),
        noise=config.noise.to_model(),
        max_dim=config.max_dim,
    )


def _oracle_for(engine: ProtocolEngine):
    """Exact-diagonalization reference, or None above the dense cap."""
    dim = engine.basis.site_dim**engine.spec.n_sites
    if dim > DENSE_ORACLE_CAP:
        return None
    system = engine.system_for((0,))
    oracle = EigenOracle(system.h_field, engine.spec, engine.basis)
    if engine.field_prep.kind == "gibbs":
        state = gibbs_state(system.h_field, beta=engine.field_prep.beta)
    else:
        _, state = oracle.ground()
    return oracle, state


def _oracle_two_point(engine: ProtocolEngine, oracle_pair, t: float, x: int, base: int):
    if engine.couplings.lam == 0 and engine.spec.boundary == "periodic" \
            and engine.field_prep.kind == "vacuum":
        return free_propagator_exact(engine.spec, engine.couplings.m0sq, t, x - base)
    if oracle_pair is None:
        return None
    oracle, state = oracle_pair
    return oracle.npoint(state, [(t, x), (0.0, base)])


def task_ground_state(config: ExperimentConfig) -> list[dict]:
    engine = _engine_for(config)
    h = engine.system_for((0,)).h_field
    e0, psi = ground_state(h)
    res = float(np.linalg.norm(h.matrix @ psi.data - e0 * psi.data))
    prev_basis = FockBasis(
        n_max=max(engine.basis.n_max - 1, 0), local_freq=engine.basis.local_freq
    )
    h_prev = build_hamiltonian(engine.spec, engine.couplings, prev_basis,
                               max_dim=config.max_dim)
    e0_prev, _ = ground_state(h_prev)
    return [
        {
            "e0": e0,
            "residual": res,
            "cutoff_convergence": abs(e0 - e0_prev),
            "dimension": h.dim,
            "m0sq": engine.couplings.m0sq,
            "lam": engine.couplings.lam,
        }
    ]


def task_propagator(config: ExperimentConfig) -> list[dict]:
    engine = _engine_for(config)
    plan = config.plan
    sites = plan.sites if plan.sites is not None else list(range(config.lattice.n_sites))
    grid = [(t, x) for t in plan.times for x in sites]
    min_time = max(t for t, _ in grid)
    oracle_pair = _oracle_for(engine)
    rows = []
    for t, x in grid:
        started = time.perf_counter()
        points = ((0.0, plan.base_site), (t, x))
        if plan.variant == "dfs" and x == plan.base_site:
            rows.append(
                {
                    "t": t,
                    "x": x,
                    "status": "skipped",
                    "error": "decoherence-free route needs two distinct probe sites",
                }
            )
            continue
        est = engine.estimate_npoint(
            points, plan.strength, variant=plan.variant,
            richardson=plan.richardson, min_time=min_time,
        )
        oracle_val = _oracle_two_point(engine, oracle_pair, t, x, plan.base_site)
        row = {
            "t": t,
            "x": x,
            "re_est": est.value.real,
            "im_est": est.value.imag,
            "bias_order": est.bias_order,
            "strength": plan.strength,
            "variant": plan.variant,
            "wall_time_s": time.perf_counter() - started,
        }
        if oracle_val is not None:
            row["re_oracle"] = oracle_val.real
            row["im_oracle"] = oracle_val.imag
            row["abs_error"] = abs(est.value - oracle_val)
        rows.append(row)
    return rows


def task_protocol(config: ExperimentConfig) -> list[dict]:
    engine = _engine_for(config)
    plan = config.plan
    if plan.sensor_sites is not None:
        sites = tuple(plan.sensor_sites)
    elif plan.pulses:
        sites = tuple(dict.fromkeys(p.site for p in plan.pulses))
    else:
        sites = (plan.base_site,)
    prep = SensorPreparation(kind=PREP_BY_NAME[plan.preparation])
    rows = []
    for tau in plan.readout_times:
        started = time.perf_counter()
        from .sensors import CouplingForm

        schedule = SourceSchedule(
            tuple(
                KickPulse(
                    site=p.site, time=p.time, strength=p.strength,
                    stagger_sign=p.stagger_sign,
                    coupling_form=CouplingForm(p.coupling_form),
                )
                for p in plan.pulses
            ),
            readout_time=tau,
        )
        rec = engine.parity(sites, prep, schedule)
        row = {
            "readout_time": tau,
            "parity": rec.value,
            "phase_reference": rec.phase_reference,
            "n_sensors": rec.n_sensors,
            "schedule_id": rec.schedule_id,
            "wall_time_s": time.perf_counter() - started,
        }
        if not plan.pulses and prep.kind is PreparationKind.GHZ_SUBSET:
            f = coherence_exponent(engine.noise, prep, engine.system_for(sites).layout)
            damp = (
                math.exp(-f * tau / engine.noise.t2)
                if engine.noise.kind is not NoiseKind.NONE
                else 1.0
            )
            row["oracle"] = math.cos(len(sites) * engine.omega0 * tau) * damp
        rows.append(row)
    return rows


def task_mass(config: ExperimentConfig) -> list[dict]:
    engine = _engine_for(config)
    plan = config.plan
    n_sites = config.lattice.n_sites
    times = np.asarray(plan.times, dtype=float)
    started = time.perf_counter()
    oracle_pair = _oracle_for(engine)
    series = []
    for t in times:
        if plan.mass_source == "oracle":
            if oracle_pair is None:
                raise ResourceLimitError("oracle mass source needs dense-cap dimension")
            oracle, state = oracle_pair
            val = sum(
                oracle.npoint(state, [(float(t), x), (0.0, 0)]) for x in range(n_sites)
            )
        else:
            val = sum(
                engine.estimate_npoint(
                    ((0.0, 0), (float(t), x)),
                    plan.strength,
                    variant="ghz_phased",
                    richardson=plan.richardson,
                    min_time=float(times.max()),
                ).value
                for x in range(n_sites)
            )
        series.append(val)
    m_est = extract_mass(times, np.asarray(series))
    row = {
        "m_est": m_est,
        "m0sq": engine.couplings.m0sq,
        "lam": engine.couplings.lam,
        "source": plan.mass_source,
        "n_samples": len(times),
        "wall_time_s": time.perf_counter() - started,
    }
    if oracle_pair is not None:
        oracle, state = oracle_pair
        gap = zero_momentum_gap(oracle, engine.spec)
        row["ed_gap"] = gap
        row["gap_error"] = abs(m_est - gap)
    return [row]


def zero_momentum_gap(oracle: EigenOracle, spec: LatticeSpec) -> float:
    """E1 - E0 restricted to states reachable by the momentum-zero field mode."""
    w = oracle.energies
    v = oracle.eigenvectors
    psi0 = v[:, 0]
    phi0 = sum(phi_at(spec, oracle.basis, x).toarray() for x in range(spec.n_sites))
    overlaps = np.abs(v.T @ (phi0 @ psi0))
    overlaps[0] = 0.0
    threshold = overlaps.max() * 1e-3
    idx = next(i for i in range(len(w)) if overlaps[i] > threshold)
    return float(w[idx] - w[0])


def task_noise_scaling(config: ExperimentConfig) -> list[dict]:
    engine = _engine_for(config)
    noise = engine.noise
    if noise.kind is NoiseKind.NONE:
        raise InvalidParameterError("noise_scaling task needs a dephasing noise model")
    plan = config.plan
    rows = []
    for n in plan.sensor_counts:
        started = time.perf_counter()
        if n > config.lattice.n_sites:
            rows.append({"n": n, "status": "skipped",
                         "error": "more sensors than lattice sites"})
            continue
        sites = tuple(range(n))
        prep = SensorPreparation(kind=PreparationKind.GHZ_SUBSET)
        taus, vals = [], []
        for r in range(1, plan.decay_cycles + 1):
            tau = 2.0 * math.pi * r / (n * engine.omega0)
            rec = engine.parity(sites, prep, SourceSchedule((), readout_time=tau))
            taus.append(tau)
            vals.append(rec.value)
        slope = float(np.polyfit(taus, np.log(np.abs(vals)), 1)[0])
        reference = (
            n**2 / noise.t2
            if noise.kind is NoiseKind.GLOBAL_DEPHASING
            else n / noise.t2
        )
        rows.append(
            {
                "n": n,
                "fitted_rate": -slope,
                "reference_rate": reference,
                "kind": noise.kind.value,
                "t2": noise.t2,
                "wall_time_s": time.perf_counter() - started,
            }
        )
    return rows


def task_ion_map(config: ExperimentConfig) -> list[dict]:
    ion = config.ion.to_config()
    eq = solve_equilibrium(ion)
    eff = effective_couplings(ion, eq)
    soft = soft_mode_check(ion, eq)
    rows = []
    for r in eff.rows():
        r.update(
            {
                "position": float(eq.positions[r["site"]]),
                "kappa": eff.kappa,
                "length_scale": eff.length_scale,
                "soft_mode_omega_sq": soft.omega_sq,
                "staggered_overlap": soft.staggered_overlap,
                "bulk_m0sq": eff.bulk_m0sq,
                "bulk_lambda": eff.bulk_lambda,
                "equilibrium_residual": eq.residual,
            }
        )
        rows.append(r)
    return rows


TASKS = {
    "ground_state": task_ground_state,
    "propagator": task_propagator,
    "protocol": task_protocol,
    "mass": task_mass,
    "noise_scaling": task_noise_scaling,
    "ion_map": task_ion_map,
}


# --------------------------------------------------------------------------
# Sweeps and the experiment runner


def _set_by_path(config: ExperimentConfig, dotted: str, value) -> ExperimentConfig:
    data = config.model_dump(by_alias=False)
    node = data
    parts = dotted.split(".")
    for p in parts[:-1]:
        if not isinstance(node, dict) or p not in node:
            raise InvalidParameterError(f"sweep parameter {dotted!r} does not exist")
        if node[p] is None:
            node[p] = {}  # optional block: instantiate its defaults
        node = node[p]
    leaf = parts[-1]
    if not isinstance(node, dict) or (node and leaf not in node):
        raise InvalidParameterError(f"sweep parameter {dotted!r} does not exist")
    node[leaf] = value
    try:
        return ExperimentConfig.model_validate(data)
    except ValidationError as exc:
        raise InvalidParameterError(
            f"sweep parameter {dotted!r} is not valid: {exc}"
        ) from exc


def expand_sweep(config: ExperimentConfig) -> list[tuple[dict, ExperimentConfig]]:
    if not config.sweep:
        return [({}, config)]
    axes = [(ax.parameter, ax.values) for ax in config.sweep]
    combos = itertools.product(*(vals for _, vals in axes))
    out = []
    for combo in combos:
        cfg = config
        params = {}
        for (name, _), value in zip(axes, combo):
            cfg = _set_by_path(cfg, name, value)
            params[name] = value
        out.append((params, cfg))
    return out


def run_experiment(config: ExperimentConfig) -> ResultSet:
    """Execute the configured task over every sweep point.

    Rows from failed sweep points are kept with their error message and the
    run continues; ``ResultSet.partial`` reflects whether anything was
    skipped.  With a fixed seed the output is deterministic up to the
    wall-time columns.
    """
    points = expand_sweep(config)
    task = TASKS[config.task]
    workers = int(os.environ.get("FIELDSENSE_MAX_WORKERS", "1"))

    def run_point(item):
        params, cfg = item
        try:
            rows = task(cfg)
        except ResourceLimitError as exc:
            return [{"status": "skipped", "error": str(exc), **params}]
        except FieldSenseError as exc:
            return [{"status": "error", "error": str(exc), **params}]
        out = []
        for r in rows:
            row = dict(params)
            row.update(r)
            row.setdefault("status", "ok")
            out.append(row)
        return out

    if workers > 1 and len(points) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            chunks = list(pool.map(run_point, points))
    else:
        chunks = [run_point(p) for p in points]
    rows = [row for chunk in chunks for row in chunk]
    meta = {
        "schema_version": SCHEMA_VERSION,
        "code_version": __version__,
        "config_hash": config.config_hash(),
        "config": config.model_dump(mode="json"),
        "task": config.task,
        "seed": config.seed,
    }
    return ResultSet(rows=rows, meta=meta)


def write_results(result: ResultSet, output_dir: str | Path, prefix: str) -> Path:
    path = Path(output_dir) / f"{prefix}_results.json"
    atomic_write(path, json.dumps(result.to_dict(), indent=2, sort_keys=True))
    return path


def load_results(path: str | Path) -> ResultSet:
    with open(path) as fh:
        return ResultSet.from_dict(json.load(fh))


# --------------------------------------------------------------------------
# Reporting


REPORT_COLUMNS = {
    "propagator_table": [
        "t", "x", "re_est", "im_est", "re_oracle", "im_oracle", "abs_error",
    ],
    "mass_curve": ["lam", "m_est", "ed_gap"],
    "noise_scaling": ["n", "fitted_rate", "reference_rate"],
}


def report(
    result: ResultSet, kind: str, output_dir: str | Path, prefix: str = "report"
) -> tuple[Path, Path]:
    """Emit a CSV table and a JSON sidecar for the requested report kind."""
    if kind not in REPORT_COLUMNS:
        raise InvalidParameterError(
            f"unknown report kind {kind!r}; choose from {sorted(REPORT_COLUMNS)}"
        )
    if not result.rows:
        raise InvalidParameterError("result set is empty")
    columns = REPORT_COLUMNS[kind]
    sweep_cols = sorted(
        {
            k
            for row in result.rows
            for k in row
            if "." in k  # swept parameters are dotted paths
        }
    )
    header = sweep_cols + columns
    lines = [",".join(header)]
    table_rows = []
    for row in result.rows:
        if row.get("status") != "ok":
            continue
        values = []
        record = {}
        for col in header:
            val = row.get(col, row.get(col.split(".")[-1], ""))
            record[col] = val
            values.append("" if val in (None, "") else f"{val}")
        lines.append(",".join(values))
        table_rows.append(record)
    csv_path = Path(output_dir) / f"{prefix}_{kind}.csv"
    atomic_write(csv_path, "\n".join(lines) + "\n")
    sidecar = {
        "schema_version": SCHEMA_VERSION,
        "kind": kind,
        "meta": result.meta,
        "columns": header,
        "rows": table_rows,
    }
    json_path = Path(output_dir) / f"{prefix}_{kind}.json"
    atomic_write(json_path, json.dumps(sidecar, indent=2, sort_keys=True))
    return csv_path, json_path
