from context import cavity_squid, errors, flux_geometry, interfaces, mech_trap
from genericpath import isfile
from scipy import optimize
import csv
import numpy as np
import os
import unittest


CSV_PATH = 'tests/temp_sensitivity_map.csv'
B = np.array([23.5, 24.2, -48.1])
RP = 50e-6


class TestFluxGeometry(unittest.TestCase):
    loop: flux_geometry.GradiometricLoop

    def setUp(self) -> None:
        self.loop = flux_geometry.GradiometricLoop(segments_per_side=16)

    def tearDown(self) -> None:
        if isfile(CSV_PATH):
            os.remove(CSV_PATH)

    def test_transformer_efficiency_of_default_chain(self):
        t = flux_geometry.TransformerParams()
        alpha = flux_geometry.transformer_efficiency(t)
        assert abs(alpha - 1.2919e-3) < 1e-7
        assert np.isclose(t.mutual_inductance, 0.1 * np.sqrt(0.12e-9 * 20.5e-9))

    def test_transformer_rejects_efficiency_at_or_above_one(self):
        with self.assertRaises(ValueError):
            flux_geometry.TransformerParams(
                squid_inductance=1e-3, input_coil_inductance=1e-9,
                twisted_pair_inductance=1e-12, pickup_inductance=1e-12, coupling=1.0)
        with self.assertRaises(errors.DomainError):
            flux_geometry.TransformerParams(pickup_inductance=0.0)

    def test_loop_validation(self):
        with self.assertRaises(ValueError):
            flux_geometry.GradiometricLoop(segments_per_side=4)
        with self.assertRaises(ValueError):
            flux_geometry.GradiometricLoop(center_separation=100e-6)
        with self.assertRaises(ValueError):
            flux_geometry.GradiometricLoop(winding=(1, 1))
        with self.assertRaises(TypeError):
            flux_geometry.GradiometricLoop(segments_per_side=16.0)

    def test_discretize_shapes_and_closure(self):
        mids, dls = self.loop.discretize()
        assert mids.shape == (8 * 16, 3)
        assert dls.shape == (8 * 16, 3)
        assert np.allclose(mids[:, 2], 0.0)
        half = 4 * 16
        tol = 1e-12 * self.loop.square_side
        assert np.allclose(dls[:half].sum(axis=0), 0.0, atol=tol)
        assert np.allclose(dls[half:].sum(axis=0), 0.0, atol=tol)
        perimeter = np.linalg.norm(dls, axis=1).sum()
        assert np.isclose(perimeter, 8 * self.loop.square_side)

    def test_with_offset_returns_new_loop(self):
        moved = self.loop.with_offset(np.array([1e-6, 2e-6, 3e-6]))
        assert moved.plane_offset == (1e-6, 2e-6, 3e-6)
        assert self.loop.plane_offset == (450e-6, 250e-6, 250e-6)
        assert moved.segments_per_side == self.loop.segments_per_side

    def test_gradiometer_rejects_uniform_field(self):
        field = np.array([0.1, 0.2, 0.3])
        flux = flux_geometry.loop_flux(self.loop, np.zeros(3), np.zeros(3), uniform_field=field)
        assert abs(flux) < 1e-12 * 0.3 * self.loop.area

    def test_induced_dipole_is_diamagnetic(self):
        r0 = np.array([1e-6, -2e-6, 3e-6])
        m = flux_geometry.induced_dipole(r0, B, RP)
        field = flux_geometry.quadrupole_field(r0, B)
        assert np.all(np.sign(m) == -np.sign(field))
        assert np.allclose(m, -(2 * np.pi / 1.25663706212e-6) * RP**3 * field, rtol=1e-9)
        assert np.allclose(flux_geometry.induced_dipole(np.zeros(3), B, RP), 0.0)

    def test_image_dipole_response_implements_protocol(self):
        response = flux_geometry.ImageDipoleResponse()
        assert isinstance(response, interfaces.DipoleResponseProtocol)
        grad = response.moment_gradient(B, RP)
        r0 = np.array([2e-6, 1e-6, -1e-6])
        assert np.allclose(grad @ r0, response.moment(r0, B, RP))

    def test_loop_flux_raises_on_path(self):
        mids, _ = self.loop.discretize()
        on_path = self.loop.with_offset(mids[3])
        with self.assertRaises(errors.SingularGeometryError):
            flux_geometry.loop_flux(on_path, np.array([0.0, 0.0, 1e-9]), np.zeros(3))
        with self.assertRaises(errors.SingularGeometryError):
            flux_geometry.flux_sensitivity(mids[3], B, RP, self.loop, 0.01)

    def test_kernel_chunking_does_not_change_result(self):
        rng = np.random.default_rng(3)
        points = rng.uniform(-300e-6, 300e-6, (25, 3))
        points[:, 2] = 100e-6 + np.abs(points[:, 2])
        whole = flux_geometry.loop_field_kernel(self.loop, points)
        chunked = flux_geometry.loop_field_kernel(self.loop, points, chunk=7)
        assert np.allclose(whole, chunked, rtol=1e-12, atol=0)
        single = flux_geometry.loop_field_kernel(self.loop, points[4])
        assert single.shape == (3,)
        assert np.allclose(single, whole[4], rtol=1e-12, atol=0)

    def test_flux_sensitivity_matches_finite_differences(self):
        rng = np.random.default_rng(7)
        h = 1e-9
        for _ in range(10):
            offset = np.array([*rng.uniform(-400e-6, 400e-6, 2), rng.uniform(150e-6, 400e-6)])
            loop = self.loop.with_offset(offset)
            sens = flux_geometry.flux_sensitivity(None, B, RP, loop, 1.0)
            for i in range(3):
                step = np.zeros(3)
                step[i] = h
                up = flux_geometry.loop_flux(
                    loop, flux_geometry.induced_dipole(step, B, RP), step)
                down = flux_geometry.loop_flux(
                    loop, flux_geometry.induced_dipole(-step, B, RP), -step)
                oracle = (up - down) / (2 * h)
                assert abs(sens.pickup[i] - oracle) <= 1e-6 * abs(sens.pickup[i]), \
                    (i, sens.pickup[i], oracle)

    def test_flux_sensitivity_scales_with_alpha(self):
        a = flux_geometry.flux_sensitivity(None, B, RP, self.loop, 0.5)
        b = flux_geometry.flux_sensitivity(None, B, RP, self.loop, 1.0)
        assert np.allclose(a.squid * 2, b.squid)
        assert np.allclose(a.pickup, b.pickup)
        assert np.allclose(a.squid_phi0_per_m, a.squid / flux_geometry.PHI0)
        with self.assertRaises(errors.DomainError):
            flux_geometry.flux_sensitivity(None, B, RP, self.loop, 1.5)

    def test_coupling_factor_is_nan_on_axis_without_gradient(self):
        sens = flux_geometry.flux_sensitivity(None, np.array([10.0, 10.0, 0.0]), RP,
                                              self.loop, 0.01)
        assert np.isnan(sens.coupling_factor[2])
        assert np.all(np.isfinite(sens.coupling_factor[:2]))

    def test_sensitivity_is_point_symmetric_in_magnitude(self):
        offset = np.array([300e-6, 120e-6, 200e-6])
        mirrored = np.array([-300e-6, -120e-6, 200e-6])
        a = flux_geometry.flux_sensitivity(offset, B, RP, self.loop, 1.0)
        b = flux_geometry.flux_sensitivity(mirrored, B, RP, self.loop, 1.0)
        assert np.allclose(np.abs(a.pickup), np.abs(b.pickup), rtol=1e-9)

    def test_g0_assembly_agrees_with_sensitivity_path(self):
        alpha = 1.2919e-3
        sens = flux_geometry.flux_sensitivity(None, B, RP, self.loop, alpha)
        for i in range(3):
            direct = flux_geometry.g0_from_sensitivity(1e9, sens.squid_phi0_per_m[i], 4.6e-15)
            assembled = flux_geometry.assemble_g0(
                1e9, alpha, sens.coupling_factor[i], B[i], RP, 4.6e-15)
            assert np.isclose(direct, assembled, rtol=1e-9)

    def test_g0_from_sensitivity_reference_values(self):
        g0 = [flux_geometry.g0_from_sensitivity(1e9, s, x)
              for s, x in zip((70, 800, 80), (4.6e-15, 4.6e-15, 3.2e-15))]
        assert abs(g0[0] - 0.32e-3) < 0.05 * 0.32e-3
        assert abs(g0[1] - 3.7e-3) < 0.05 * 3.7e-3
        assert abs(g0[2] - 0.26e-3) < 0.05 * 0.26e-3

    def test_mean_flux_rms_grows_with_occupation(self):
        ground = flux_geometry.mean_flux_rms(1e-3, 0.5, 48.1, RP, 3e-15, 0)
        excited = flux_geometry.mean_flux_rms(1e-3, 0.5, 48.1, RP, 3e-15, 4)
        assert np.isclose(excited / ground, 3.0)
        with self.assertRaises(errors.DomainError):
            flux_geometry.mean_flux_rms(1e-3, 0.5, 48.1, RP, 3e-15, -1)

    def test_sensitivity_map_shapes_and_csv(self):
        smap = flux_geometry.sensitivity_map(self.loop, B, RP, 250e-6, extent=50e-6,
                                             pitch=10e-6)
        assert smap.pickup.shape == (11, 11, 3)
        assert smap.coupling_factor.shape == (11, 11, 3)
        centre = flux_geometry.flux_sensitivity(np.array([0.0, 0.0, 250e-6]), B, RP,
                                                self.loop, 1.0)
        assert np.allclose(smap.pickup[5, 5], centre.pickup, rtol=1e-9)
        threaded = flux_geometry.sensitivity_map(self.loop, B, RP, 250e-6, extent=50e-6,
                                                 pitch=10e-6, workers=2)
        assert np.allclose(threaded.pickup, smap.pickup)
        smap.to_csv(CSV_PATH)
        with open(CSV_PATH, newline='') as f:
            rows = list(csv.reader(f))
        assert rows[0][0] == 'dx_m'
        assert len(rows) == 1 + 121

    def test_locate_pickup_recovers_planted_placement(self):
        truth = np.array([450e-6, 250e-6, 250e-6])
        alpha = 5e-3
        sens = flux_geometry.flux_sensitivity(truth, B, RP, self.loop, alpha)
        measured = np.abs(sens.squid_phi0_per_m)
        solutions = flux_geometry.locate_pickup(
            measured, B, RP, self.loop, dz_prior=250e-6, extent=600e-6, pitch=10e-6)
        assert len(solutions) >= 2
        assert len(solutions) % 2 == 0
        matches = [s for s in solutions
                   if np.linalg.norm(s.delta_r - truth) < 5e-6
                   and abs(s.alpha - alpha) < 0.02 * alpha]
        assert len(matches) >= 1
        best = matches[0]
        partner = solutions[best.symmetry_partner_index]
        assert np.allclose(partner.delta_r[:2], -best.delta_r[:2])
        assert np.isclose(partner.delta_r[2], best.delta_r[2])
        assert solutions[partner.symmetry_partner_index] is best
        residuals = [s.residual for s in solutions]
        assert residuals == sorted(residuals)

    def test_locate_pickup_returns_empty_for_zero_measurement(self):
        with self.assertLogs('levisquid.flux_geometry', level='WARNING'):
            solutions = flux_geometry.locate_pickup(
                np.zeros(3), B, RP, self.loop, dz_prior=250e-6, extent=50e-6, pitch=10e-6)
        assert solutions == []

    def test_placement_misfit_map_is_zero_near_truth(self):
        truth = np.array([40e-6, 20e-6, 250e-6])
        sens = flux_geometry.flux_sensitivity(truth, B, RP, self.loop, 1.0)
        xs, ys, misfit = flux_geometry.placement_misfit_map(
            sens.squid_phi0_per_m, B, RP, self.loop, 250e-6, extent=100e-6, pitch=20e-6)
        assert misfit.shape == (len(ys), len(xs))
        ix = int(np.argmin(np.abs(xs - 40e-6)))
        iy = int(np.argmin(np.abs(ys - 20e-6)))
        assert misfit[iy, ix] < 1e-9

    def test_quadrature_converges_at_second_order(self):
        offset = np.array([450e-6, 250e-6, 250e-6])
        values = []
        for n in (16, 32, 64, 128):
            loop = flux_geometry.GradiometricLoop(segments_per_side=n)
            values.append(flux_geometry.flux_sensitivity(offset, B, RP, loop, 1.0).pickup)
        coarse = np.linalg.norm(values[0] - values[1])
        fine = np.linalg.norm(values[1] - values[2])
        assert np.log2(coarse / fine) >= 1.9
        change = np.linalg.norm(values[3] - values[2]) / np.linalg.norm(values[3])
        assert change < 1e-4

    def test_rotation_senses_are_mirror_equivalent(self):
        plus = flux_geometry.GradiometricLoop(in_plane_rotation=np.pi / 4, segments_per_side=16)
        minus = flux_geometry.GradiometricLoop(in_plane_rotation=-np.pi / 4,
                                               segments_per_side=16)
        rng = np.random.default_rng(11)
        for _ in range(5):
            x, y = rng.uniform(-400e-6, 400e-6, 2)
            z = rng.uniform(150e-6, 350e-6)
            a = flux_geometry.flux_sensitivity(np.array([x, y, z]), B, RP, plus, 1.0)
            b = flux_geometry.flux_sensitivity(np.array([x, -y, z]), B, RP, minus, 1.0)
            assert np.allclose(np.abs(a.pickup), np.abs(b.pickup), rtol=1e-9, atol=0)

    def test_centred_perpendicular_dipole_gives_no_flux(self):
        moment = np.array([0.0, 0.0, 1e-9])
        centred = self.loop.with_offset(np.array([0.0, 0.0, 200e-6]))
        aside = self.loop.with_offset(np.array([100e-6, 0.0, 200e-6]))
        reference = abs(flux_geometry.loop_flux(aside, moment, np.zeros(3)))
        assert reference > 0
        assert abs(flux_geometry.loop_flux(centred, moment, np.zeros(3))) < 1e-10 * reference

    def test_g0_scales_as_square_root_of_radius(self):
        omega = 2 * np.pi * 140
        g0 = []
        for rp in (25e-6, 50e-6, 100e-6):
            mass = mech_trap.sphere_from_radius(rp).mass
            xzpf = mech_trap.zero_point_motion(mass, omega)
            g0.append(flux_geometry.assemble_g0(1e9, 1e-3, 6e-4, 48.1, rp, xzpf))
        assert np.isclose(g0[1] / g0[0], np.sqrt(2), rtol=1e-12)
        assert np.isclose(g0[2] / g0[1], np.sqrt(2), rtol=1e-12)

    def test_located_placement_sits_on_coupling_extremum(self):
        y, z, alpha = 250e-6, 250e-6, 5e-3

        def f_z(x: float) -> float:
            sens = flux_geometry.flux_sensitivity(np.array([x, y, z]), B, RP, self.loop, 1.0)
            return float(sens.coupling_factor[2])

        xs = np.arange(-600e-6, 600e-6 + 1e-9, 5e-6)
        magnitude = np.abs([f_z(x) for x in xs])
        x0 = float(xs[int(np.argmax(magnitude))])
        refined = optimize.minimize_scalar(lambda x: -abs(f_z(x)), bounds=(x0 - 5e-6, x0 + 5e-6),
                                           method='bounded', options={'xatol': 1e-12})
        truth = np.array([refined.x, y, z])
        h = 1e-7
        slope = (f_z(truth[0] + h) - f_z(truth[0] - h)) / (2 * h)
        assert abs(slope) * 1e-6 < 1e-3 * abs(f_z(truth[0]))

        sens = flux_geometry.flux_sensitivity(truth, B, RP, self.loop, alpha)
        solutions = flux_geometry.locate_pickup(
            np.abs(sens.squid_phi0_per_m), B, RP, self.loop, dz_prior=z,
            extent=600e-6, pitch=10e-6)
        located = min(solutions, key=lambda s: np.linalg.norm(s.delta_r - truth))
        assert np.linalg.norm(located.delta_r - truth) < 5e-6
        x = located.delta_r[0]
        y_loc, z_loc = located.delta_r[1], located.delta_r[2]

        def f_z_located(x: float) -> float:
            s = flux_geometry.flux_sensitivity(np.array([x, y_loc, z_loc]), B, RP,
                                               self.loop, 1.0)
            return float(s.coupling_factor[2])

        slope = (f_z_located(x + h) - f_z_located(x - h)) / (2 * h)
        assert abs(slope) * 1e-6 < 2e-2 * abs(f_z_located(x))

    def test_g0_is_proportional_to_flux_responsivity(self):
        model = cavity_squid.TuningModel.from_span(4.44e9, 4.1e9, 0.4)
        curve = cavity_squid.TuningCurve(model=model, phi_max=0.4)
        s1 = abs(cavity_squid.slope_at_bias(curve, 0.1))
        s2 = abs(cavity_squid.slope_at_bias(curve, 0.3))
        g1 = flux_geometry.assemble_g0(s1, 1.2919e-3, 6e-4, 48.1, RP, 3.2e-15)
        g2 = flux_geometry.assemble_g0(s2, 1.2919e-3, 6e-4, 48.1, RP, 3.2e-15)
        assert abs((g2 / g1) / (s2 / s1) - 1) < 1e-12


if __name__ == '__main__':
    unittest.main()
