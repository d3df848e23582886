"""Sensor protocol: preparation, sourced evolution, parity, dephasing."""

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fieldsense.errors import InvalidParameterError
from fieldsense.lattice import (
    Couplings,
    FockBasis,
    LatticeSpec,
    ground_state,
    phi_at,
)
from fieldsense.sensors import (
    CouplingForm,
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
    apply_dephasing,
    coherence_exponent,
    evolve_schedule,
    parity_expectation,
    prepare_joint_state,
    run_protocol,
)

import oracles


def make_joint(n_sites=2, m0sq=1.0, lam=0.0, n_max=8, sensor_sites=(0, 1), omega0=1.0):
    spec = LatticeSpec(n_sites=n_sites)
    coup = Couplings(m0sq=m0sq, lam=lam)
    basis = FockBasis.for_couplings(coup, n_max=n_max)
    layout = SensorLayout(sites=tuple(sensor_sites), omega0=omega0)
    return JointSystem(spec, coup, basis, layout)


GHZ = SensorPreparation(kind=PreparationKind.GHZ_SUBSET)
NEEL_PLUS = SensorPreparation(kind=PreparationKind.NEEL_DFS_PLUS)
NEEL_MINUS = SensorPreparation(kind=PreparationKind.NEEL_DFS_MINUS)
PRODUCT = SensorPreparation(kind=PreparationKind.PRODUCT_DOWN)


class TestPreparation:
    def test_single_sensor_ramsey_limit(self):
        system = make_joint(sensor_sites=(0,))
        chi = system.sensor_state(GHZ)
        assert np.allclose(chi, [1 / np.sqrt(2)] * 2)

    def test_epr_pair(self):
        system = make_joint()
        chi = system.sensor_state(GHZ)
        expected = np.zeros(4)
        expected[0] = expected[3] = 1 / np.sqrt(2)
        assert np.allclose(chi, expected)

    def test_neel_superposition(self):
        system = make_joint()
        chi = system.sensor_state(NEEL_PLUS)
        # Two single-excitation branches with equal + amplitudes.
        assert np.isclose(abs(chi[1]), 1 / np.sqrt(2))
        assert np.isclose(abs(chi[2]), 1 / np.sqrt(2))
        assert np.isclose(chi[1], chi[2])
        minus = system.sensor_state(NEEL_MINUS)
        assert np.isclose(minus[1], -minus[2])

    def test_neel_needs_even_count(self):
        system = make_joint(n_sites=3, sensor_sites=(0, 1, 2))
        with pytest.raises(InvalidParameterError):
            system.sensor_state(NEEL_PLUS)

    def test_partition_must_cover(self):
        system = make_joint()
        bad = SensorPreparation(
            kind=PreparationKind.NEEL_DFS_PLUS, odd_sites=(0,), even_sites=(0,)
        )
        with pytest.raises(InvalidParameterError):
            system.sensor_state(bad)

    def test_joint_norm(self):
        system = make_joint()
        _, psi = ground_state(system.h_field)
        joint = prepare_joint_state(psi, system, GHZ)
        joint.validate()


class TestEvolution:
    def test_stationary_state(self):
        system = make_joint(n_max=8)
        e0, psi = ground_state(system.h_field)
        joint = prepare_joint_state(psi, system, PRODUCT)
        tau = 1.3
        out = evolve_schedule(joint, system, SourceSchedule((), readout_time=tau))
        expected = np.exp(-1j * e0 * tau) * joint.data
        assert np.linalg.norm(out.data - expected) < 1e-9

    def test_zero_strength_kick_is_identity(self):
        system = make_joint()
        _, psi = ground_state(system.h_field)
        joint = prepare_joint_state(psi, system, GHZ)
        out = system.apply_kick(joint, KickPulse(site=0, time=0.0, strength=0.0))
        assert np.allclose(out.data, joint.data)

    @settings(max_examples=25, deadline=None)
    @given(
        j1=st.floats(-0.8, 0.8),
        j2=st.floats(-0.8, 0.8),
        form=st.sampled_from(list(CouplingForm)),
    )
    def test_kick_composition_exact(self, j1, j2, form):
        system = make_joint(n_max=5)
        _, psi = ground_state(system.h_field)
        joint = prepare_joint_state(psi, system, GHZ)
        a = system.apply_kick(
            joint, KickPulse(site=1, time=0.0, strength=j1, coupling_form=form)
        )
        a = system.apply_kick(
            a, KickPulse(site=1, time=0.0, strength=j2, coupling_form=form)
        )
        b = system.apply_kick(
            joint, KickPulse(site=1, time=0.0, strength=j1 + j2, coupling_form=form)
        )
        assert np.linalg.norm(a.data - b.data) < 1e-12

    def test_unitarity_with_pulses(self):
        system = make_joint()
        _, psi = ground_state(system.h_field)
        joint = prepare_joint_state(psi, system, GHZ)
        sched = SourceSchedule(
            (
                KickPulse(site=0, time=0.0, strength=0.4),
                KickPulse(site=1, time=0.9, strength=0.3),
            ),
            readout_time=2.0,
        )
        out = evolve_schedule(joint, system, sched)
        assert abs(np.linalg.norm(out.data) - 1.0) < 1e-10

    def test_linear_response_matches_commutator(self):
        # Kick the vacuum and watch <phi> on the projected branch: the slope
        # in J is -2 Im Delta(t, x - x0).
        system = make_joint(n_max=12, sensor_sites=(0,))
        _, psi = ground_state(system.h_field)
        joint = prepare_joint_state(psi, system, GHZ)
        j = 1e-3
        t = 0.8
        sched = SourceSchedule(
            (KickPulse(site=0, time=0.0, strength=j),), readout_time=t
        )
        out = evolve_schedule(joint, system, sched, krylov_tol=1e-13)
        branch = out.data.reshape(system.field_dim, 2)[:, 0]
        branch = branch / np.linalg.norm(branch)
        for x in (0, 1):
            val = np.real(
                np.vdot(branch, phi_at(system.spec, system.basis, x) @ branch)
            )
            want = -2.0 * j * oracles.free_two_point(2, 1.0, t, x).imag
            assert abs(val - want) < 5e-8, x

    def test_krylov_step_insensitivity(self):
        system = make_joint()
        _, psi = ground_state(system.h_field)
        sched = SourceSchedule(
            (KickPulse(site=0, time=0.0, strength=0.2),), readout_time=3.7
        )
        vals = []
        for tol in (1e-9, 1e-13):
            joint = prepare_joint_state(psi, system, GHZ)
            out = evolve_schedule(joint, system, sched, krylov_tol=tol)
            vals.append(parity_expectation(out, system))
        assert abs(vals[0] - vals[1]) < 1e-8

    def test_segment_halving_invariance(self):
        # Splitting a free-evolution stretch in two (via a zero-strength kick
        # at the midpoint) must leave the parity unchanged at converged
        # propagator settings.
        system = make_joint()
        _, psi = ground_state(system.h_field)
        whole = SourceSchedule(
            (KickPulse(site=0, time=0.0, strength=0.2),), readout_time=3.0
        )
        split = SourceSchedule(
            (
                KickPulse(site=0, time=0.0, strength=0.2),
                KickPulse(site=1, time=1.5, strength=0.0),
            ),
            readout_time=3.0,
        )
        vals = []
        for sched in (whole, split):
            joint = prepare_joint_state(psi, system, GHZ)
            out = evolve_schedule(joint, system, sched)
            vals.append(parity_expectation(out, system))
        assert abs(vals[0] - vals[1]) < 1e-8

    def test_pure_state_with_noise_rejected(self):
        system = make_joint()
        _, psi = ground_state(system.h_field)
        joint = prepare_joint_state(psi, system, GHZ)
        with pytest.raises(InvalidParameterError):
            evolve_schedule(
                joint,
                system,
                SourceSchedule((), readout_time=1.0),
                noise=NoiseModel(NoiseKind.GLOBAL_DEPHASING, t2=1.0),
            )


class TestParity:
    def test_ghz_initial_parity_is_one(self):
        system = make_joint()
        _, psi = ground_state(system.h_field)
        joint = prepare_joint_state(psi, system, GHZ)
        assert np.isclose(parity_expectation(joint, system), 1.0)

    def test_product_state_parity_vanishes(self):
        system = make_joint()
        _, psi = ground_state(system.h_field)
        joint = prepare_joint_state(psi, system, PRODUCT)
        assert abs(parity_expectation(joint, system)) < 1e-14

    @pytest.mark.parametrize("sites", [(0,), (0, 1)])
    def test_free_sensor_phase_accumulation(self, sites):
        omega0 = 0.83
        system = make_joint(sensor_sites=sites, omega0=omega0)
        _, psi = ground_state(system.h_field)
        n = len(sites)
        for tau in (0.0, 0.4, 1.9, 5.2):
            rec = run_protocol(
                system, psi, GHZ, SourceSchedule((), readout_time=tau)
            )
            assert abs(rec.value - math.cos(n * omega0 * tau)) < 1e-9

    def test_parity_encodes_generating_functional(self):
        # Two sizable kicks on the free vacuum: the parity must equal
        # Re[e^{i n w0 tau} Z[J]] with the Gaussian Z from the mode sum.
        system = make_joint(n_max=14, omega0=0.9)
        _, psi = ground_state(system.h_field)
        j1, j2, t2 = 0.3, 0.2, 0.7
        d00 = oracles.free_two_point(2, 1.0, 0.0, 0)
        d12 = oracles.free_two_point(2, 1.0, t2, 1)
        z = np.exp(-0.5 * (j1**2 * d00 + j2**2 * d00 + 2 * j1 * j2 * d12))
        sched_pulses = (
            KickPulse(site=0, time=0.0, strength=j1),
            KickPulse(site=1, time=t2, strength=j2),
        )
        for tau in (1.0, 1.7, 2.4):
            rec = run_protocol(
                system,
                psi,
                GHZ,
                SourceSchedule(sched_pulses, readout_time=tau),
                krylov_tol=1e-12,
            )
            want = (np.exp(1j * 2 * 0.9 * tau) * z).real
            assert abs(rec.value - want) < 2e-6, tau

    def test_z_zero_normalization_interacting(self):
        system = make_joint(lam=0.8, n_max=8)
        _, psi = ground_state(system.h_field)
        n, w0 = 2, 1.0
        tau = 2 * math.pi / (n * w0)  # phase winds back to 0
        rec = run_protocol(system, psi, GHZ, SourceSchedule((), readout_time=tau))
        assert abs(rec.value - 1.0) < 1e-8

    def test_neel_minus_parity_is_negated_plus(self):
        # The sigma^3-coupled staggered protocol gives P_- = -P_+ identically;
        # this is why the imaginary part needs the quadrature preparation.
        system = make_joint(n_max=10)
        _, psi = ground_state(system.h_field)
        pulses = (
            KickPulse(site=0, time=0.0, strength=0.3, stagger_sign=1,
                      coupling_form=CouplingForm.DFS_SZ),
            KickPulse(site=1, time=0.6, strength=0.25, stagger_sign=-1,
                      coupling_form=CouplingForm.DFS_SZ),
        )
        sched = SourceSchedule(pulses, readout_time=1.4)
        p_plus = run_protocol(system, psi, NEEL_PLUS, sched).value
        p_minus = run_protocol(system, psi, NEEL_MINUS, sched).value
        assert abs(p_plus + p_minus) < 1e-10

    def test_record_bounds(self):
        with pytest.raises(InvalidParameterError):
            ParityRecord(
                value=1.5,
                schedule_id="x",
                readout_time=1.0,
                noise=NoiseModel(),
                phase_reference=0.0,
                n_sensors=1,
                prep_kind=PreparationKind.GHZ_SUBSET,
            )


class TestDephasing:
    def test_formula_value(self):
        system = make_joint()
        noise = NoiseModel(NoiseKind.GLOBAL_DEPHASING, t2=1.0)
        rec = ParityRecord(
            value=1.0, schedule_id="s", readout_time=0.25, noise=NoiseModel(),
            phase_reference=0.0, n_sensors=2, prep_kind=PreparationKind.GHZ_SUBSET,
        )
        out = apply_dephasing(rec, noise, duration=0.25, system=system, prep=GHZ)
        assert np.isclose(out.value, math.exp(-1.0))

    def test_balanced_neel_immune_to_global(self):
        system = make_joint()
        noise = NoiseModel(NoiseKind.GLOBAL_DEPHASING, t2=0.01)
        assert coherence_exponent(noise, NEEL_PLUS, system.layout) == 0.0

    def test_local_noise_scales_with_n(self):
        system = make_joint(n_sites=3, sensor_sites=(0, 1, 2))
        noise = NoiseModel(NoiseKind.LOCAL_DEPHASING, t2=1.0)
        assert coherence_exponent(noise, GHZ, system.layout) == 3.0

    def test_none_is_identity(self):
        system = make_joint()
        rec = ParityRecord(
            value=0.7, schedule_id="s", readout_time=1.0, noise=NoiseModel(),
            phase_reference=0.0, n_sensors=2, prep_kind=PreparationKind.GHZ_SUBSET,
        )
        out = apply_dephasing(rec, NoiseModel(), duration=5.0, layout=system.layout)
        assert out.value == rec.value

    def test_negative_duration_rejected(self):
        system = make_joint()
        rec = ParityRecord(
            value=0.7, schedule_id="s", readout_time=1.0, noise=NoiseModel(),
            phase_reference=0.0, n_sensors=2, prep_kind=PreparationKind.GHZ_SUBSET,
        )
        with pytest.raises(InvalidParameterError):
            apply_dephasing(rec, NoiseModel(), duration=-1.0, layout=system.layout)

    @pytest.mark.parametrize("kind", [NoiseKind.GLOBAL_DEPHASING, NoiseKind.LOCAL_DEPHASING])
    @pytest.mark.parametrize("prep", [GHZ, NEEL_PLUS])
    def test_generator_matches_analytic(self, kind, prep):
        system = make_joint(n_max=5)
        _, psi = ground_state(system.h_field)
        noise = NoiseModel(kind, t2=2.5)
        sched = SourceSchedule(
            (KickPulse(site=0, time=0.0, strength=0.3),
             KickPulse(site=1, time=0.5, strength=0.2)),
            readout_time=1.2,
        )
        analytic = run_protocol(system, psi, prep, sched, noise=noise).value
        generator = run_protocol(
            system, psi, prep, sched, noise=noise, noise_method="generator"
        ).value
        assert abs(analytic - generator) < 1e-6

    def test_noise_scaling_law(self):
        # ln coherence vs duration slope = -n^2 / T2 for GLOBAL + GHZ.
        t2 = 3.0
        noise = NoiseModel(NoiseKind.GLOBAL_DEPHASING, t2=t2)
        for sites in [(0,), (0, 1), (0, 1, 2)]:
            system = make_joint(
                n_sites=max(2, len(sites)), sensor_sites=sites, n_max=3, omega0=1.0
            )
            _, psi = ground_state(system.h_field)
            n = len(sites)
            taus = np.array([2 * math.pi * r / (n * 1.0) for r in (1, 2, 3)])
            vals = []
            for tau in taus:
                rec = run_protocol(
                    system, psi, GHZ, SourceSchedule((), readout_time=float(tau)),
                    noise=noise,
                )
                vals.append(rec.value)
            slope = np.polyfit(taus, np.log(vals), 1)[0]
            assert abs(slope + n**2 / t2) < 0.01 * n**2 / t2


class TestGibbsProtocol:
    def test_cold_gibbs_matches_vacuum(self):
        system = make_joint(n_max=5)
        w = np.linalg.eigvalsh(system.h_field.toarray())
        gap = w[1] - w[0]
        sched = SourceSchedule(
            (KickPulse(site=0, time=0.0, strength=0.2),
             KickPulse(site=1, time=0.4, strength=0.2)),
            readout_time=1.0,
        )
        vac = run_protocol(system, FieldPreparation("vacuum"), GHZ, sched)
        cold = run_protocol(
            system, FieldPreparation("gibbs", beta=60.0 / gap), GHZ, sched
        )
        assert abs(vac.value - cold.value) < 1e-8

    def test_hot_gibbs_differs(self):
        system = make_joint(n_max=5)
        sched = SourceSchedule(
            (KickPulse(site=0, time=0.0, strength=0.4),), readout_time=1.0
        )
        vac = run_protocol(system, FieldPreparation("vacuum"), GHZ, sched)
        hot = run_protocol(system, FieldPreparation("gibbs", beta=0.5), GHZ, sched)
        assert abs(vac.value - hot.value) > 1e-4


class TestValidation:
    def test_layout_site_bounds(self):
        with pytest.raises(InvalidParameterError):
            make_joint(n_sites=2, sensor_sites=(0, 5))

    def test_readout_before_pulse_rejected(self):
        with pytest.raises(InvalidParameterError):
            SourceSchedule(
                (KickPulse(site=0, time=2.0, strength=0.1),), readout_time=1.0
            )

    def test_pulses_sorted(self):
        sched = SourceSchedule(
            (
                KickPulse(site=0, time=1.0, strength=0.1),
                KickPulse(site=1, time=0.5, strength=0.2),
            ),
            readout_time=2.0,
        )
        assert [p.time for p in sched.pulses] == [0.5, 1.0]

    def test_noise_validation(self):
        with pytest.raises(InvalidParameterError):
            NoiseModel(NoiseKind.GLOBAL_DEPHASING, t2=0.0)
