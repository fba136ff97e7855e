from context import errors, mech_trap, noise_budget
from scipy import constants
import numpy as np
import unittest


TWO_PI = 2 * np.pi


class TestImprecision(unittest.TestCase):
    def test_quantum_imprecision_of_detected_chain(self):
        s_q = noise_budget.imprecision_quantum(TWO_PI * 135e6, 0.05, TWO_PI)
        assert abs(s_q - 26.9e6) < 0.01 * 26.9e6
        eta_d = noise_budget.detection_efficiency(s_q, 0.61e12)
        assert abs(eta_d - 4.4e-5) < 0.02 * 4.4e-5

    def test_sideband_bracket_is_negligible_at_low_frequency(self):
        plain = noise_budget.imprecision_quantum(TWO_PI * 135e6, 0.05, TWO_PI)
        bracket = noise_budget.imprecision_quantum(TWO_PI * 135e6, 0.05, TWO_PI, TWO_PI * 140)
        assert bracket > plain
        assert bracket / plain - 1 < 1e-10

    def test_detection_efficiency_rejects_detected_below_quantum(self):
        with self.assertRaises(errors.UnphysicalInputError):
            noise_budget.detection_efficiency(2.0, 1.0)
        with self.assertRaises(errors.DomainError):
            noise_budget.imprecision_quantum(1.0, 0.0, 1.0)

    def test_imprecision_equals_ground_state_over_cooperativity(self):
        kappa, nr, g0 = TWO_PI * 23e6, 0.05, TWO_PI * 3e-3
        xzpf, linewidth, nth = 3.2e-15, 3.6e-5, 2.08e6
        s_imp = noise_budget.imprecision_quantum(kappa, nr, g0 / xzpf)
        cq = noise_budget.cooperativity(nr, g0, kappa, linewidth, nth)
        s_gs = noise_budget.ground_state_density(xzpf, linewidth, nth)
        assert abs(s_imp / (s_gs / (16 * cq)) - 1) < 1e-9

    def test_imprecision_back_action_product_is_quantum_limited(self):
        kappa, nr, G_Hz = TWO_PI * 135e6, 0.05, 0.16e12
        s_imp = noise_budget.imprecision_quantum(kappa, nr, TWO_PI * G_Hz)
        s_ff = noise_budget.back_action_force(noise_budget.BackActionInputs(
            G_Hz_per_m=G_Hz, nr=nr, kappa=kappa, mass=5.7e-9, frequency=TWO_PI * 140,
            linewidth=3.4e-5, effective_linewidth=75.0))
        assert abs(s_imp * s_ff / (constants.hbar**2 / 4) - 1) < 1e-9

    def test_ground_state_density_at_150_Hz(self):
        sphere = mech_trap.sphere_from_radius(50e-6)
        omega = TWO_PI * 150
        xzpf = mech_trap.zero_point_motion(sphere.mass, omega)
        nth = mech_trap.thermal_occupation(15e-3, omega)
        s_gs = noise_budget.ground_state_density(xzpf, omega / 2.6e7, nth)
        assert abs(np.sqrt(s_gs) - 0.72e-15) < 0.01e-15

    def test_susceptibility(self):
        mass, omega_m, gamma = 5.7e-9, TWO_PI * 140, 3.4e-5
        dc = noise_budget.susceptibility(0.0, mass, omega_m, gamma)
        assert dc.imag == 0
        assert np.isclose(dc.real, 1 / (mass * omega_m**2))
        peak = noise_budget.susceptibility(omega_m, mass, omega_m, gamma)
        assert np.isclose(abs(peak), 1 / (mass * gamma * omega_m))
        broad = noise_budget.susceptibility(omega_m, mass, omega_m, 100 * gamma)
        assert np.isclose(abs(broad) / abs(peak), 0.01)
        grid = noise_budget.susceptibility(np.array([0.0, omega_m]), mass, omega_m, gamma)
        assert grid.shape == (2,)
        with self.assertRaises(errors.DomainError):
            noise_budget.susceptibility(omega_m, 0.0, omega_m, gamma)

    def test_back_action_is_smaller_on_broadened_mode(self):
        inputs = noise_budget.BackActionInputs(
            G_Hz_per_m=0.16e12, nr=0.05, kappa=TWO_PI * 135e6, mass=5.7e-9,
            frequency=TWO_PI * 140, linewidth=3.4e-5, effective_linewidth=75.0)
        thermal, ground = noise_budget.back_action_densities(inputs)
        assert thermal > ground > 0
        assert np.isclose(thermal / ground, (75.0 / 3.4e-5)**2)

    def test_back_action_inputs_validation(self):
        with self.assertRaises(errors.DomainError):
            noise_budget.BackActionInputs(1.0, 0.05, 0.0, 1e-9, 1.0, 1.0, 1.0)


class TestEfficiency(unittest.TestCase):
    def test_cooperativity_of_first_generation_device(self):
        omega = TWO_PI * 140
        cq = noise_budget.cooperativity(
            0.05, TWO_PI * 0.425e-3, TWO_PI * 135e6, omega / 2.6e7,
            mech_trap.thermal_occupation(15e-3, omega))
        assert abs(cq - 2.23e-17) < 0.01e-17
        assert 0.1 < cq / 5e-17 < 10

    def test_min_phonons(self):
        assert noise_budget.min_phonons(1.0) == 0.0
        assert np.isclose(noise_budget.min_phonons(1 / 9), 1.0)
        with self.assertRaises(errors.DivergenceError):
            noise_budget.min_phonons(0.0)
        with self.assertRaises(errors.DomainError):
            noise_budget.min_phonons(1.5)

    def test_measurement_and_total_efficiency(self):
        assert np.isclose(noise_budget.measurement_efficiency(1.0), 0.5)
        assert np.isclose(noise_budget.total_efficiency(0.4, 0.5), 0.2)

    def test_efficiency_and_phonon_floor_are_monotone(self):
        cqs = np.logspace(-20, 6, 200)
        etas = [noise_budget.measurement_efficiency(c) for c in cqs]
        assert np.all(np.diff(etas) > 0)
        floors = [noise_budget.min_phonons(e) for e in np.linspace(1e-3, 1, 200)]
        assert np.all(np.diff(floors) < 0)

    def test_required_cooperativity_for_upgraded_chain(self):
        upgrade = noise_budget.budget_assemble(eta_cav=0.5, eta_cryo=0.81, eta_warm=0.99)
        assert np.isclose(upgrade.eta_d, 0.40095)
        cq = noise_budget.required_cooperativity(1 / 9, upgrade.eta_d)
        assert abs(cq - 0.38) < 0.05 * 0.38
        eta = noise_budget.total_efficiency(
            upgrade.eta_d, noise_budget.measurement_efficiency(cq))
        assert np.isclose(eta, 1 / 9)
        with self.assertRaises(errors.UnphysicalInputError):
            noise_budget.required_cooperativity(0.5, 0.4)

    def test_noise_photons_from_efficiency(self):
        assert np.isclose(noise_budget.noise_photons_from_efficiency(1 / 3), 1.0)
        with self.assertRaises(errors.DivergenceError):
            noise_budget.noise_photons_from_efficiency(0.0)

    def test_cavity_efficiency(self):
        assert abs(noise_budget.cavity_efficiency(110e6, 25e6) - 0.185) < 0.001
        with self.assertRaises(errors.DomainError):
            noise_budget.cavity_efficiency(0.0, 0.0)

    def test_budget_assemble_solves_missing_factor(self):
        budget = noise_budget.budget_assemble(eta_cav=0.19, eta_warm=1.3e-2, eta_d=4.3e-5)
        assert abs(budget.eta_cryo - 1.74e-2) < 0.01e-2
        assert np.isclose(budget.eta_d, budget.eta_cav * budget.eta_cryo * budget.eta_warm)

    def test_budget_assemble_errors(self):
        with self.assertRaises(ValueError):
            noise_budget.budget_assemble(eta_cav=0.5, eta_d=0.1)
        with self.assertRaises(errors.UnphysicalInputError):
            noise_budget.budget_assemble(eta_cav=0.1, eta_warm=0.1, eta_d=0.5)
        with self.assertRaises(errors.UnphysicalInputError):
            noise_budget.budget_assemble(eta_cav=0.5, eta_cryo=0.5, eta_warm=0.5, eta_d=0.5)
        with self.assertRaises(errors.UnphysicalInputError):
            noise_budget.budget_assemble(eta_cav=1.5, eta_cryo=0.5, eta_warm=0.5)

    def test_budget_with_measurement_and_amplifier(self):
        budget = noise_budget.budget_assemble(eta_cav=0.19, eta_warm=1.3e-2, eta_d=4.3e-5)
        budget = budget.with_measurement(2.23e-17).with_amplifier(12.11)
        data = budget.to_dict()
        assert np.isclose(data['eta'], 4.3e-5 * noise_budget.measurement_efficiency(2.23e-17))
        assert data['n_min_phonons'] > 1e10
        assert abs(data['transmissivity_dB'] - (-3.58)) < 0.05 * 3.58
        assert np.isclose(noise_budget.cryo_chain(12.11, data['transmissivity']),
                          budget.n_add_cryo)


class TestAmplifiers(unittest.TestCase):
    def test_db_conversions(self):
        assert np.isclose(noise_budget.db_to_linear(42), 10**4.2)
        self.assertAlmostEqual(noise_budget.linear_to_db(0.5), -3.0103, places=4)
        with self.assertRaises(errors.DomainError):
            noise_budget.linear_to_db(0.0)

    def test_friis_cascade(self):
        stages = [noise_budget.AmplifierStage(2.5, 42.0), noise_budget.AmplifierStage(300.0, 30.0)]
        assert abs(noise_budget.friis(stages) - 2.5189) < 1e-4
        assert noise_budget.friis(stages[:1]) == 2.5
        with self.assertRaises(ValueError):
            noise_budget.friis([])

    def test_noise_measure_orders_stages(self):
        quiet = noise_budget.AmplifierStage(2.5, 42.0)
        loud = noise_budget.AmplifierStage(300.0, 30.0)
        assert quiet.noise_measure < loud.noise_measure
        assert noise_budget.AmplifierStage(1.0, 0.0).noise_measure == np.inf

    def test_added_photons_of_hemt(self):
        n = noise_budget.added_photons(2.5, TWO_PI * 4.3e9)
        assert abs(n - 12.11) < 0.01

    def test_invert_loss_and_lossy_chain_round_trip(self):
        transmissivity = noise_budget.invert_loss(12.0, 28.0)
        self.assertAlmostEqual(noise_budget.linear_to_db(transmissivity), -3.58, places=2)
        assert np.isclose(noise_budget.cryo_chain(12.0, transmissivity), 28.0)
        with self.assertRaises(errors.UnphysicalInputError):
            noise_budget.invert_loss(12.0, 5.0)
        with self.assertRaises(errors.DivergenceError):
            noise_budget.cryo_chain(12.0, 0.0)

    def test_friis_appended_stage_adds_its_temperature_over_upstream_gain(self):
        rng = np.random.default_rng(17)
        for _ in range(20):
            chain = [noise_budget.AmplifierStage(rng.uniform(1, 300), rng.uniform(3, 40))
                     for _ in range(rng.integers(1, 5))]
            new = noise_budget.AmplifierStage(rng.uniform(1, 300), rng.uniform(3, 40))
            g = float(np.prod([s.gain for s in chain]))
            expected = noise_budget.friis(chain) + new.noise_temperature / g
            assert np.isclose(noise_budget.friis([*chain, new]), expected, rtol=1e-12, atol=0)

    def test_moving_quieter_first_stage_back_never_lowers_noise(self):
        rng = np.random.default_rng(29)
        for _ in range(100):
            chain = [noise_budget.AmplifierStage(rng.uniform(1, 300), rng.uniform(1, 40))
                     for _ in range(rng.integers(2, 6))]
            if chain[1].noise_measure < chain[0].noise_measure:
                chain[0], chain[1] = chain[1], chain[0]
            swapped = [chain[1], chain[0], *chain[2:]]
            assert noise_budget.friis(swapped) >= noise_budget.friis(chain) * (1 - 1e-12)

    def test_invert_loss_undoes_lossy_chain(self):
        for n_hemt in (0.0, 1.5, 12.11):
            for transmissivity in np.linspace(0.01, 1, 100)[1:]:
                n_add = noise_budget.cryo_chain(n_hemt, transmissivity)
                assert np.isclose(noise_budget.invert_loss(n_hemt, n_add), transmissivity,
                                  rtol=1e-12, atol=0)


class TestProjection(unittest.TestCase):
    def test_propagate_linear_function(self):
        result = noise_budget.propagate(
            lambda a, b: a + 2 * b,
            noise_budget.Measured(1.0, 0.3), noise_budget.Measured(2.0, 0.2))
        assert np.isclose(result.value, 5.0)
        assert np.isclose(result.sigma, np.sqrt(0.3**2 + 4 * 0.2**2), rtol=1e-6)

    def test_propagate_cryo_efficiency_uncertainty(self):
        result = noise_budget.propagate(
            lambda d: d / (0.19 * 1.3e-2), noise_budget.Measured(4.3e-5, 2.1e-5))
        assert abs(result.value - 1.74e-2) < 0.01e-2
        assert abs(result.sigma - 0.9e-2) < 0.1 * 0.9e-2

    def test_design_cooperativity_forms_differ_by_one_over_pi(self):
        design = noise_budget.design_cooperativity(
            mech_trap.TrapConfig(), mech_trap.sphere_from_radius(50e-6), 0.05,
            TWO_PI * 23e6, 1.7e9, 1.29e-3, 0.5)
        assert design.printed > 0
        assert np.isclose(design.ratio, 1 / np.pi, rtol=1e-9)
        with self.assertRaises(ValueError):
            noise_budget.design_cooperativity(
                mech_trap.TrapConfig(), mech_trap.sphere_from_radius(50e-6), 0.05,
                TWO_PI * 23e6, 1.7e9, 1.29e-3, 0.5, axis='w')

    def test_default_ledger_projection(self):
        cq, table = noise_budget.project(noise_budget.default_ledger())
        assert abs(cq - 5.7e4) < 0.01 * 5.7e4
        assert [row['name'] for row in table] == [
            'readout', 'positioning', 'transformer', 'slope', 'linewidth', 'current_switch']
        assert table[-1]['cumulative_cq'] == cq
        assert table[0]['cumulative_cq'] == 5e-17 * 200

    def test_ledger_validation(self):
        with self.assertRaises(ValueError):
            noise_budget.LedgerFactor('bad', 0.0)
        with self.assertRaises(errors.DomainError):
            noise_budget.ProjectionLedger(base_cq=0.0)
        empty = noise_budget.ProjectionLedger(base_cq=3.0)
        assert noise_budget.project(empty) == (3.0, [])


if __name__ == '__main__':
    unittest.main()
