"""
    Flux coupling between the levitated sphere and the gradiometric
    pickup loop (PUL), the flux-transformer chain to the SQUID, the
    single-photon coupling assembly, and the inversion of measured
    sensitivities into a pickup placement.

    The sphere responds to the local trap field as a perfect-diamagnet
    image dipole m = -(2 pi/mu0) rp^3 B(r0). Flux through the loop is
    the line integral of the dipole vector potential, evaluated with a
    midpoint rule. By reciprocity that integral equals m . W(s) where
    W(s) is the field of the loop at unit current, which is what
    `loop_field_kernel` computes.
"""

from __future__ import annotations
from .errors import SingularGeometryError, dert, tert, vert
from .interfaces import DipoleResponseProtocol
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from scipy import constants, ndimage, optimize
import csv
import logging
import numpy as np


logger = logging.getLogger(__name__)

PHI0 = constants.physical_constants['mag. flux quantum'][0]
MU0_OVER_4PI = constants.mu_0 / (4 * np.pi)
MIN_SEGMENTS_PER_SIDE = 8
SCAN_CHUNK = 1024


@dataclass
class GradiometricLoop:
    """Two squares wound in opposite senses. The plane_offset is the
        displacement of the trap centre from the pickup centre, with z
        the height of the trap centre above the pickup plane.
    """
    square_side: float = field(default=150e-6)
    center_separation: float = field(default=158e-6)
    in_plane_rotation: float = field(default=np.pi / 4)
    plane_offset: tuple[float, float, float] = field(default=(450e-6, 250e-6, 250e-6))
    winding: tuple[int, int] = field(default=(1, -1))
    segments_per_side: int = field(default=64)

    def __post_init__(self) -> None:
        tert(len(self.plane_offset) == 3, 'plane_offset must have three components')
        self.plane_offset = tuple(float(v) for v in self.plane_offset)
        dert(self.square_side > 0, 'square_side must be > 0')
        vert(self.center_separation >= self.square_side,
             'center_separation must be >= square_side (squares may not overlap)')
        vert(tuple(self.winding) in ((1, -1), (-1, 1)),
             'winding must be (+1, -1) or (-1, +1)')
        tert(type(self.segments_per_side) is int, 'segments_per_side must be int')
        vert(self.segments_per_side >= MIN_SEGMENTS_PER_SIDE,
             f'segments_per_side must be >= {MIN_SEGMENTS_PER_SIDE}')

    def with_offset(self, plane_offset: np.ndarray) -> GradiometricLoop:
        """Copy of the loop with another trap-centre displacement."""
        return GradiometricLoop(
            square_side=self.square_side,
            center_separation=self.center_separation,
            in_plane_rotation=self.in_plane_rotation,
            plane_offset=tuple(plane_offset),
            winding=self.winding,
            segments_per_side=self.segments_per_side,
        )

    def discretize(self) -> tuple[np.ndarray, np.ndarray]:
        """Return segment midpoints and oriented segment vectors, both of
            shape (8*segments_per_side, 3), in the pickup frame with trap
            axis orientation.
        """
        n = self.segments_per_side
        a = self.square_side / 2
        corners = np.array([[-a, -a], [a, -a], [a, a], [-a, a], [-a, -a]])
        steps = (np.arange(n) + 0.5) / n
        mids, dls = [], []
        for sign, orientation in zip((1, -1), self.winding):
            center = np.array([sign * self.center_separation / 2, 0.0])
            for start, end in zip(corners[:-1], corners[1:]):
                edge = end - start
                mids.append(center + start + steps[:, None] * edge)
                dls.append(np.tile(orientation * edge / n, (n, 1)))
        mids = np.concatenate(mids)
        dls = np.concatenate(dls)
        c, s = np.cos(self.in_plane_rotation), np.sin(self.in_plane_rotation)
        rot = np.array([[c, -s], [s, c]])
        zeros = np.zeros((len(mids), 1))
        return (np.hstack([mids @ rot.T, zeros]), np.hstack([dls @ rot.T, zeros]))

    @property
    def area(self) -> float:
        return self.square_side**2


@dataclass
class TransformerParams:
    """Inductance chain of the flux transformer (H)."""
    squid_inductance: float = field(default=0.12e-9)
    input_coil_inductance: float = field(default=20.5e-9)
    twisted_pair_inductance: float = field(default=100e-9)
    pickup_inductance: float = field(default=0.9e-9)
    coupling: float = field(default=0.1)

    def __post_init__(self) -> None:
        dert(all(v > 0 for v in (
            self.squid_inductance, self.input_coil_inductance,
            self.twisted_pair_inductance, self.pickup_inductance,
        )), 'inductances must be > 0')
        dert(0 <= self.coupling <= 1, 'coupling must lie in [0, 1]')
        vert(self.alpha < 1, f'transfer efficiency {self.alpha} must be < 1')

    @property
    def mutual_inductance(self) -> float:
        return self.coupling * np.sqrt(self.squid_inductance * self.input_coil_inductance)

    @property
    def alpha(self) -> float:
        return self.mutual_inductance / (
            self.input_coil_inductance + self.twisted_pair_inductance + self.pickup_inductance
        )


@dataclass
class SensitivityResult:
    """Flux gradients (Wb/m) on the pickup and SQUID side plus the
        geometric coupling factor F. F is nan on axes with zero gradient.
    """
    pickup: np.ndarray = field()
    squid: np.ndarray = field()
    coupling_factor: np.ndarray = field()
    alpha: float = field()

    @property
    def squid_phi0_per_m(self) -> np.ndarray:
        return self.squid / PHI0


@dataclass
class PlacementSolution:
    """A pickup placement consistent with measured sensitivities."""
    delta_r: np.ndarray = field()
    alpha: float = field()
    residual: float = field()
    symmetry_partner_index: int = field(default=-1)
    rank_deficient: bool = field(default=False)


@dataclass
class SensitivityMap:
    """Lateral scan of the flux sensitivities at a fixed height."""
    xs: np.ndarray = field()
    ys: np.ndarray = field()
    dz: float = field()
    pickup: np.ndarray = field()
    coupling_factor: np.ndarray = field()

    def to_csv(self, path: str) -> None:
        """Write one row per grid cell; lengths in metres."""
        with open(path, 'w', newline='') as f:
            writer = csv.writer(f)
            writer.writerow([
                'dx_m', 'dy_m', 'dz_m', 'F_x', 'F_y', 'F_z',
                'dPhi_pul_dx_Wb_per_m', 'dPhi_pul_dy_Wb_per_m', 'dPhi_pul_dz_Wb_per_m',
            ])
            for iy, y in enumerate(self.ys):
                for ix, x in enumerate(self.xs):
                    writer.writerow([
                        repr(float(x)), repr(float(y)), repr(float(self.dz)),
                        *[repr(float(v)) for v in self.coupling_factor[iy, ix]],
                        *[repr(float(v)) for v in self.pickup[iy, ix]],
                    ])


class ImageDipoleResponse:
    """Leading-order field response of a superconducting sphere: the
        image dipole of a perfect diamagnet in the local trap field.
    """
    def moment(self, r0: np.ndarray, b: np.ndarray, rp: float) -> np.ndarray:
        return induced_dipole(r0, b, rp)

    def moment_gradient(self, b: np.ndarray, rp: float) -> np.ndarray:
        dert(rp > 0, 'rp must be > 0')
        return -(2 * np.pi / constants.mu_0) * rp**3 * np.diag(np.asarray(b, dtype=float))


def quadrupole_field(r: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Linear trap field B(r) = (b_x x, b_y y, b_z z) in tesla."""
    return np.asarray(b, dtype=float) * np.asarray(r, dtype=float)

def induced_dipole(r0: np.ndarray, b: np.ndarray, rp: float) -> np.ndarray:
    """Image dipole moment (A m^2) of a sphere of radius rp at r0."""
    dert(rp > 0, 'rp must be > 0')
    return -(2 * np.pi / constants.mu_0) * rp**3 * quadrupole_field(r0, b)

def _distance_to_path(loop: GradiometricLoop, point: np.ndarray) -> float:
    mids, dls = loop.discretize()
    starts = mids - dls / 2
    rel = point[None, :] - starts
    t = np.clip(np.einsum('pk,pk->p', rel, dls) / np.einsum('pk,pk->p', dls, dls), 0, 1)
    return float(np.min(np.linalg.norm(rel - t[:, None] * dls, axis=1)))

def _check_off_path(loop: GradiometricLoop, point: np.ndarray) -> None:
    if _distance_to_path(loop, point) <= 1e-9 * loop.square_side:
        raise SingularGeometryError(f'source point {tuple(point)} lies on the pickup path')

def loop_field_kernel(loop: GradiometricLoop, points: np.ndarray,
                      chunk: int = SCAN_CHUNK) -> np.ndarray:
    """Flux per unit dipole moment W(s) (Wb per A m^2) for dipoles at the
        given points of the pickup frame. Accepts shape (3,) or (N, 3).
    """
    points = np.asarray(points, dtype=float)
    single = points.ndim == 1
    points = np.atleast_2d(points)
    mids, dls = loop.discretize()
    out = np.empty_like(points)
    for start in range(0, len(points), chunk):
        block = points[start:start + chunk]
        sep = mids[None, :, :] - block[:, None, :]
        inv_r3 = np.linalg.norm(sep, axis=2) ** -3
        out[start:start + chunk] = MU0_OVER_4PI * np.einsum(
            'npk,np->nk', np.cross(sep, dls[None, :, :]), inv_r3)
    return out[0] if single else out

def loop_flux(loop: GradiometricLoop, dipole: np.ndarray, r0: np.ndarray,
              uniform_field: np.ndarray|None = None) -> float:
    """Net flux (Wb) through the gradiometer from a dipole at r0 (trap
        frame, relative to the trap centre), plus an optional uniform
        background field. Raises SingularGeometryError if the dipole sits
        on the integration path.
    """
    position = np.asarray(loop.plane_offset) + np.asarray(r0, dtype=float)
    _check_off_path(loop, position)
    flux = float(np.dot(np.asarray(dipole, dtype=float), loop_field_kernel(loop, position)))
    if uniform_field is not None:
        mids, dls = loop.discretize()
        potential = 0.5 * np.cross(np.asarray(uniform_field, dtype=float)[None, :], mids)
        flux += float(np.einsum('pk,pk->', potential, dls))
    return flux

def _coupling_factor(pickup: np.ndarray, b: np.ndarray, rp: float) -> np.ndarray:
    b = np.asarray(b, dtype=float)
    with np.errstate(divide='ignore', invalid='ignore'):
        factor = pickup / (b * rp**2)
    return np.where(b == 0, np.nan, factor)

def flux_sensitivity(delta_r: np.ndarray|None, b: np.ndarray, rp: float,
                     loop: GradiometricLoop, alpha: float,
                     response: DipoleResponseProtocol|None = None) -> SensitivityResult:
    """Flux gradients for displacements of the sphere about the trap
        centre, where the induced moment vanishes and only the moment
        gradient contributes. delta_r defaults to loop.plane_offset.
    """
    response = response or ImageDipoleResponse()
    tert(isinstance(response, DipoleResponseProtocol),
         'response must implement DipoleResponseProtocol')
    dert(0 <= alpha <= 1, 'alpha must lie in [0, 1]')
    position = np.asarray(loop.plane_offset if delta_r is None else delta_r, dtype=float)
    _check_off_path(loop, position)
    kernel = loop_field_kernel(loop, position)
    pickup = response.moment_gradient(np.asarray(b, dtype=float), rp).T @ kernel
    return SensitivityResult(
        pickup=pickup,
        squid=alpha * pickup,
        coupling_factor=_coupling_factor(pickup, b, rp),
        alpha=alpha,
    )

def transformer_efficiency(t: TransformerParams) -> float:
    """Flux transfer efficiency alpha = M_i / (L_fc + L_tw + L_pul)."""
    return t.alpha

def assemble_g0(s_w: float, alpha: float, F: float, b: float, rp: float,
                xzpf: float) -> float:
    """Single-photon coupling g0/2pi (Hz) with s_w in Hz per flux quantum."""
    dert(s_w >= 0 and alpha >= 0 and rp > 0 and xzpf > 0,
         's_w, alpha must be >= 0 and rp, xzpf > 0')
    return s_w * alpha * abs(F) * abs(b) * rp**2 * xzpf / PHI0

def g0_from_sensitivity(s_w: float, sensitivity_phi0_per_m: float, xzpf: float) -> float:
    """g0/2pi (Hz) from the SQUID-side flux gradient in flux quanta per metre."""
    return s_w * abs(sensitivity_phi0_per_m) * xzpf

def mean_flux_rms(alpha: float, F: float, b: float, rp: float, xzpf: float,
                  nm: float) -> float:
    """rms flux (Wb) in the SQUID for a mode holding nm phonons."""
    dert(nm >= 0, 'nm must be >= 0')
    return alpha * abs(F) * abs(b) * rp**2 * xzpf * np.sqrt(2 * nm + 1)

def _scan_grid(extent: float, pitch: float) -> np.ndarray:
    dert(pitch > 0 and extent > 0, 'pitch and extent must be > 0')
    n = int(round(extent / pitch))
    return np.arange(-n, n + 1) * pitch

def _scan_sensitivities(loop: GradiometricLoop, b: np.ndarray, rp: float, dz: float,
                        xs: np.ndarray, ys: np.ndarray, response: DipoleResponseProtocol,
                        workers: int = 1) -> np.ndarray:
    """Pickup-side sensitivities of shape (len(ys), len(xs), 3)."""
    gx, gy = np.meshgrid(xs, ys)
    points = np.column_stack([gx.ravel(), gy.ravel(), np.full(gx.size, dz)])
    chunks = [points[i:i + SCAN_CHUNK] for i in range(0, len(points), SCAN_CHUNK)]
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            kernels = list(pool.map(lambda c: loop_field_kernel(loop, c), chunks))
    else:
        kernels = [loop_field_kernel(loop, c) for c in chunks]
    kernel = np.concatenate(kernels)
    gradient = response.moment_gradient(np.asarray(b, dtype=float), rp)
    return (kernel @ gradient).reshape(len(ys), len(xs), 3)

def sensitivity_map(loop: GradiometricLoop, b: np.ndarray, rp: float, dz: float,
                    extent: float = 600e-6, pitch: float = 5e-6,
                    response: DipoleResponseProtocol|None = None,
                    workers: int = 1) -> SensitivityMap:
    """Scan F and the pickup-side sensitivities over lateral placements."""
    response = response or ImageDipoleResponse()
    xs = ys = _scan_grid(extent, pitch)
    pickup = _scan_sensitivities(loop, b, rp, dz, xs, ys, response, workers)
    return SensitivityMap(xs=xs, ys=ys, dz=dz, pickup=pickup,
                          coupling_factor=_coupling_factor(pickup, b, rp))

def _ratio_misfit(model: np.ndarray, measured: np.ndarray) -> np.ndarray:
    """Largest relative deviation of the two independent sensitivity
        ratios, referenced to the strongest measured axis. alpha cancels.
    """
    ref = int(np.argmax(measured))
    others = [i for i in range(3) if i != ref]
    model = np.abs(model)
    with np.errstate(divide='ignore', invalid='ignore'):
        misfit = np.zeros(model.shape[:-1])
        for j in others:
            target = measured[j] / measured[ref]
            ratio = model[..., j] / model[..., ref]
            if target == 0:
                dev = np.where(ratio == 0, 0.0, np.inf)
            else:
                dev = np.abs(ratio / target - 1)
            misfit = np.maximum(misfit, np.nan_to_num(dev, nan=np.inf))
    return misfit

def placement_misfit_map(measured_phi0_per_m: np.ndarray, b: np.ndarray, rp: float,
                         loop: GradiometricLoop, dz: float, extent: float = 600e-6,
                         pitch: float = 5e-6, response: DipoleResponseProtocol|None = None,
                         workers: int = 1) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Ratio misfit over the lateral grid at height dz: (xs, ys, misfit)."""
    response = response or ImageDipoleResponse()
    measured = np.abs(np.asarray(measured_phi0_per_m, dtype=float))
    xs = ys = _scan_grid(extent, pitch)
    model = _scan_sensitivities(loop, b, rp, dz, xs, ys, response, workers)
    return xs, ys, _ratio_misfit(model, measured)

def _is_canonical(x: float, y: float) -> bool:
    return y > 0 or (y == 0 and x >= 0)

def _absolute_model(loop: GradiometricLoop, b: np.ndarray, rp: float,
                    response: DipoleResponseProtocol, delta_r: np.ndarray) -> np.ndarray:
    kernel = loop_field_kernel(loop, delta_r)
    return np.abs(response.moment_gradient(b, rp).T @ kernel) / PHI0

def locate_pickup(measured_phi0_per_m: np.ndarray, b: np.ndarray, rp: float,
                  loop: GradiometricLoop, dz_prior: float, ratio_tolerance: float = 0.1,
                  extent: float = 600e-6, pitch: float = 5e-6, dz_sigma: float = 50e-6,
                  response: DipoleResponseProtocol|None = None,
                  workers: int = 1) -> list[PlacementSolution]:
    """Find pickup placements (trap-centre displacements) consistent with
        the measured SQUID-side sensitivities (flux quanta per metre).
        A lateral scan at dz_prior keeps cells whose sensitivity ratios
        match within ratio_tolerance; each connected region is then
        refined in (dx, dy, dz, alpha) by least squares on the absolute
        sensitivities with a Gaussian prior on dz. Solutions come in
        point-symmetric pairs about the pickup centre, sorted by residual.
    """
    response = response or ImageDipoleResponse()
    measured = np.abs(np.asarray(measured_phi0_per_m, dtype=float))
    tert(measured.shape == (3,), 'measured sensitivities must have three components')
    dert(dz_prior > 0, 'dz_prior must be > 0')
    b = np.asarray(b, dtype=float)
    if not np.all(np.isfinite(measured)) or measured.max() == 0:
        logger.warning('placement_search_empty reason=degenerate_measurement measured=%s',
                       measured.tolist())
        return []

    xs = ys = _scan_grid(extent, pitch)
    model = _scan_sensitivities(loop, b, rp, dz_prior, xs, ys, response, workers)
    misfit = _ratio_misfit(model, measured)
    labels, count = ndimage.label(misfit <= ratio_tolerance, structure=np.ones((3, 3)))
    if count == 0:
        logger.warning('placement_search_empty reason=no_matching_locus tolerance=%s '
                       'best_misfit=%.3g', ratio_tolerance, float(np.min(misfit)))
        return []

    seeds = []
    for label in range(1, count + 1):
        flat = np.flatnonzero((labels == label).ravel())
        best = flat[np.argmin(misfit.ravel()[flat])]
        iy, ix = divmod(int(best), len(xs))
        x, y = xs[ix], ys[iy]
        if not _is_canonical(x, y):
            x, y = -x, -y
        seeds.append(np.array([x, y, dz_prior]))

    norm = np.linalg.norm(measured)
    # refined in micrometres
    lower = np.array([-2e6 * extent, -2e6 * extent, 0.1, 0.0])
    upper = np.array([2e6 * extent, 2e6 * extent, np.inf, np.inf])

    def evaluate(params: np.ndarray) -> np.ndarray:
        delta_r = params[:3] * 1e-6
        return params[3] * _absolute_model(loop, b, rp, response, delta_r)

    def residuals(params: np.ndarray) -> np.ndarray:
        data = (evaluate(params) - measured) / norm
        prior = (params[2] * 1e-6 - dz_prior) / dz_sigma
        return np.append(data, prior)

    solutions: list[PlacementSolution] = []
    for seed in seeds:
        unit = _absolute_model(loop, b, rp, response, seed)
        alpha0 = float(np.dot(unit, measured) / np.dot(unit, unit))
        start = np.append(seed * 1e6, alpha0)
        fit = optimize.least_squares(
            residuals, start, bounds=(lower, upper), method='trf',
            x_scale=np.array([10.0, 10.0, 10.0, max(alpha0, 1e-12)]),
            xtol=1e-12, ftol=1e-14, gtol=1e-14, max_nfev=400,
        )
        delta_r = fit.x[:3] * 1e-6
        if any(np.linalg.norm(delta_r - s.delta_r) < 1e-6 for s in solutions):
            continue
        rank_deficient = bool(np.linalg.matrix_rank(fit.jac) < 4)
        if rank_deficient:
            logger.warning('placement_rank_deficient delta_r_um=%s',
                           np.round(delta_r * 1e6, 2).tolist())
        residual = float(np.linalg.norm(evaluate(fit.x) - measured) / norm)
        mirrored = fit.x.copy()
        mirrored[:2] *= -1
        partner_residual = float(np.linalg.norm(evaluate(mirrored) - measured) / norm)
        solutions.append(PlacementSolution(delta_r, float(fit.x[3]), residual,
                                           rank_deficient=rank_deficient))
        solutions.append(PlacementSolution(mirrored[:3] * 1e-6, float(fit.x[3]),
                                           partner_residual, rank_deficient=rank_deficient))

    for i in range(0, len(solutions), 2):
        solutions[i].symmetry_partner_index = i + 1
        solutions[i + 1].symmetry_partner_index = i
    order = sorted(range(len(solutions)), key=lambda i: (
        solutions[i].residual, float(np.linalg.norm(solutions[i].delta_r)), i))
    position = {old: new for new, old in enumerate(order)}
    ranked = [solutions[i] for i in order]
    for s in ranked:
        s.symmetry_partner_index = position[s.symmetry_partner_index]
    logger.info('placement_search_done solutions=%d best_residual=%.3g',
                len(ranked), ranked[0].residual if ranked else float('nan'))
    return ranked
