"""Ion-crystal equilibrium, zeta sums, effective couplings, soft mode."""

import math
import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fieldsense.errors import InvalidParameterError
from fieldsense.ions import (
    IonCrystalConfig,
    IonGeometry,
    critical_omega_x_from_couplings,
    critical_omega_x_from_soft_mode,
    effective_couplings,
    solve_equilibrium,
    soft_mode_check,
    zeta_sum,
)


def chain_config(n=5, omega_x=10.0, omega_z=1.0, omega_y=1000.0, **kw):
    return IonCrystalConfig(
        n_ions=n,
        geometry=IonGeometry.LINEAR_CHAIN,
        omega_x=omega_x,
        omega_y=omega_y,
        omega_z=omega_z,
        **kw,
    )


class TestEquilibrium:
    def test_two_ion_positions(self):
        eq = solve_equilibrium(chain_config(n=2))
        want = (0.25) ** (1.0 / 3.0)
        assert np.allclose(eq.positions, [-want, want], atol=1e-10)
        assert eq.residual < 1e-10

    def test_three_ion_center(self):
        eq = solve_equilibrium(chain_config(n=3))
        assert abs(eq.positions[1]) < 1e-12
        # Outer ions at (5/4)^(1/3), a textbook value.
        assert np.isclose(eq.positions[2], (1.25) ** (1.0 / 3.0), atol=1e-10)

    @pytest.mark.parametrize("n", [2, 4, 7, 12])
    def test_reflection_antisymmetry(self, n):
        eq = solve_equilibrium(chain_config(n=n))
        assert np.max(np.abs(eq.positions + eq.positions[::-1])) < 1e-9
        assert np.all(np.diff(eq.positions) > 0)
        assert eq.residual < 1e-10

    def test_gradient_matches_finite_difference(self):
        from fieldsense.ions import _chain_gradient, _chain_hessian, _chain_potential

        u = np.array([-1.7, -0.5, 0.6, 1.9])
        g = _chain_gradient(u)
        h = _chain_hessian(u)
        eps = 1e-6
        for i in range(4):
            d = np.zeros(4)
            d[i] = eps
            fd = (_chain_potential(u + d) - _chain_potential(u - d)) / (2 * eps)
            assert abs(fd - g[i]) < 1e-7
            fd_row = (_chain_gradient(u + d) - _chain_gradient(u - d)) / (2 * eps)
            assert np.allclose(fd_row, h[i], atol=1e-6)

    def test_ring_uniform(self):
        cfg = IonCrystalConfig(
            n_ions=6, geometry=IonGeometry.RING, spacing=2.0, omega_y=1000.0
        )
        eq = solve_equilibrium(cfg)
        assert eq.residual == 0.0
        # Chord distances: nearest-neighbour slightly below arc length 1.
        assert np.isclose(eq.distances[0, 1], (6 / math.pi) * math.sin(math.pi / 6))

    def test_ring_needs_even(self):
        with pytest.raises(InvalidParameterError):
            IonCrystalConfig(n_ions=5, geometry=IonGeometry.RING, spacing=1.0,
                             omega_y=1000.0)

    def test_quasi_1d_warning(self):
        with warnings.catch_warnings(record=True) as caught:
            warnings.simplefilter("always")
            chain_config(n=2, omega_x=1.0, omega_y=1.5)
        assert any("quasi-1d" in str(w.message) for w in caught)


class TestZetaSum:
    def test_unit_chain_hand_value(self):
        positions = np.array([0.0, 1.0, 2.0, 3.0])
        assert zeta_sum(positions, 2, 3) == pytest.approx(8.0)

    def test_same_parity_terms_vanish(self):
        # Two-site sublattice at even separations only contributes nothing.
        positions = np.array([0.0, 2.0, 4.0])
        # From site 0, sites at indices 1, 2 have parities odd, even:
        # index 1 (opposite parity) at distance 2 -> 4/8; index 2 same parity -> 0.
        assert zeta_sum(positions, 0, 3) == pytest.approx(4.0 / 8.0)

    def test_n5_leading_term(self):
        positions = np.array([0.0, 0.5, 10.0, 30.0])
        lead = 16.0 / 0.5**5
        assert zeta_sum(positions, 0, 5) == pytest.approx(lead, rel=1e-4)

    def test_nonnegative(self):
        eq = solve_equilibrium(chain_config(n=7))
        for i in range(7):
            assert zeta_sum(eq, i, 3) >= 0.0
            assert zeta_sum(eq, i, 5) >= 0.0

    @settings(max_examples=40, deadline=None)
    @given(
        gaps=st.lists(st.floats(0.2, 3.0), min_size=3, max_size=7),
        i=st.integers(0, 2),
        n=st.sampled_from([3, 5]),
    )
    def test_parity_structure_property(self, gaps, i, n):
        # Every term is 2^(n-1)/d^n for opposite-parity pairs and 0 otherwise.
        positions = np.concatenate([[0.0], np.cumsum(gaps)])
        got = zeta_sum(positions, i, n)
        want = sum(
            2 ** (n - 1) / abs(positions[i] - positions[l]) ** n
            for l in range(len(positions))
            if l != i and (l - i) % 2 == 1
        )
        assert got == pytest.approx(want, rel=1e-12)

    def test_coincident_rejected(self):
        with pytest.raises(InvalidParameterError):
            zeta_sum(np.array([0.0, 0.0, 1.0]), 0, 3)

    def test_bad_power_rejected(self):
        with pytest.raises(InvalidParameterError):
            zeta_sum(np.array([0.0, 1.0]), 0, 4)


class TestEffectiveCouplings:
    def test_stiff_trap_limit(self):
        # kappa -> 0: decoupled oscillators, k -> m w_x^2, u -> 0, m0sq > 0.
        cfg = chain_config(n=4, omega_x=500.0, omega_y=5000.0)
        eq = solve_equilibrium(cfg)
        eff = effective_couplings(cfg, eq)
        m_w2 = cfg.mass * cfg.omega_x**2
        assert np.allclose(eff.k, m_w2, rtol=1e-3)
        assert np.all(np.abs(eff.u) < 1e-2 * m_w2)
        assert np.all(eff.m0sq_lattice > 0)

    def test_ring_site_independent(self):
        cfg = IonCrystalConfig(
            n_ions=8, geometry=IonGeometry.RING, spacing=1.0,
            omega_x=10.0, omega_y=1000.0,
        )
        eff = effective_couplings(cfg, solve_equilibrium(cfg))
        for arr in (eff.k, eff.u, eff.k_tilde, eff.m0sq_lattice, eff.lambda_lattice):
            assert np.max(np.abs(arr - arr[0])) <= 1e-10 * max(1.0, abs(arr[0]))

    def test_subwavelength_site_independent(self):
        cfg = IonCrystalConfig(
            n_ions=6, geometry=IonGeometry.SUBWAVELENGTH, spacing=1.0,
            omega_x=10.0, omega_y=1000.0,
        )
        eff = effective_couplings(cfg, solve_equilibrium(cfg))
        assert np.max(np.abs(eff.m0sq_lattice - eff.m0sq_lattice[0])) < 1e-10

    def test_luttinger_unit_invariance(self):
        # K_L is dimensionless: rescale (mass, omegas, lengths) preserving
        # hbar = 1, i.e. m -> s m, omega -> omega / s, a -> a (e0sq -> e0sq/s).
        cfg1 = chain_config(n=4, omega_x=10.0)
        eq1 = solve_equilibrium(cfg1)
        eff1 = effective_couplings(cfg1, eq1)
        s = 7.3
        cfg2 = IonCrystalConfig(
            n_ions=4, geometry=IonGeometry.LINEAR_CHAIN,
            omega_x=10.0 / s, omega_y=1000.0 / s, omega_z=1.0 / s,
            mass=s, e0sq=1.0 / s,
        )
        eq2 = solve_equilibrium(cfg2)
        eff2 = effective_couplings(cfg2, eq2)
        assert np.allclose(eff1.k_luttinger, eff2.k_luttinger, rtol=1e-12)
        assert np.allclose(eff1.m0sq_lattice, eff2.m0sq_lattice, rtol=1e-12)
        assert np.allclose(eff1.lambda_lattice, eff2.lambda_lattice, rtol=1e-12)

    def test_instability_flag(self):
        cfg = chain_config(n=4, omega_x=0.8)  # deep in the zigzag regime
        eq = solve_equilibrium(cfg)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            eff = effective_couplings(cfg, eq)
        assert np.any(eff.m0sq_lattice < 0) or not np.all(eff.stable)

    def test_alternative_kernel_differs(self):
        cfg = chain_config(n=4)
        eq = solve_equilibrium(cfg)
        printed = effective_couplings(cfg, eq)
        cubic = effective_couplings(
            chain_config(n=4, gradient_kernel="cubic"), eq
        )
        assert not np.allclose(printed.k_tilde, cubic.k_tilde)

    def test_rows_table(self):
        cfg = chain_config(n=3)
        eff = effective_couplings(cfg, solve_equilibrium(cfg))
        rows = eff.rows()
        assert len(rows) == 3
        assert set(rows[0]) >= {"site", "k", "u", "k_tilde", "m0sq_lattice"}


class TestSoftMode:
    def test_stiff_limit_not_soft(self):
        cfg = chain_config(n=6, omega_x=50.0)
        rep = soft_mode_check(cfg, solve_equilibrium(cfg))
        assert rep.omega_sq > 0.5 * cfg.omega_x**2

    def test_two_ions_staggered(self):
        cfg = chain_config(n=2, omega_x=5.0)
        rep = soft_mode_check(cfg, solve_equilibrium(cfg))
        assert rep.staggered_overlap > 1.0 - 1e-12

    def test_crossing_agreement(self):
        # The couplings-route critical omega_x and the Hessian soft-mode
        # crossing agree within 5% for a moderate chain.
        cfg = chain_config(n=10, omega_x=10.0)
        a = critical_omega_x_from_couplings(cfg)
        b = critical_omega_x_from_soft_mode(cfg)
        assert abs(a - b) / b < 0.05

    def test_mass_sign_tracks_soft_mode(self):
        # Away from the critical window the effective mass sign agrees with
        # the staggered-mode frequency sign.
        base = chain_config(n=6, omega_x=10.0)
        w_crit = critical_omega_x_from_soft_mode(base)
        for factor in (1.3, 0.7):
            w = w_crit * factor
            cfg = chain_config(n=6, omega_x=w)
            eq = solve_equilibrium(cfg)
            with warnings.catch_warnings():
                warnings.simplefilter("ignore")
                eff = effective_couplings(cfg, eq)
                rep = soft_mode_check(cfg, eq)
            assert np.sign(np.min(eff.m0sq_lattice)) == np.sign(rep.omega_sq)

    def test_homogeneous_ring_crossings_coincide(self):
        cfg = IonCrystalConfig(
            n_ions=8, geometry=IonGeometry.RING, spacing=1.0,
            omega_x=10.0, omega_y=1000.0,
        )
        a = critical_omega_x_from_couplings(cfg)
        b = critical_omega_x_from_soft_mode(cfg)
        assert abs(a - b) / b < 1e-10


class TestToCouplings:
    def test_bulk_export(self):
        cfg = chain_config(n=6, omega_x=12.0)
        eff = effective_couplings(cfg, solve_equilibrium(cfg))
        c = eff.to_couplings()
        assert c.m0sq == pytest.approx(eff.bulk_m0sq)
        assert c.lam >= 0
