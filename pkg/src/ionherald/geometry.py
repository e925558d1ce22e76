"""Ion-crystal and standing-wave geometry: spacings, coupling profiles, scan fits."""
from __future__ import annotations

import csv
import json
from dataclasses import asdict, dataclass

import numpy as np
from scipy import constants
from scipy.optimize import least_squares

# CODATA values via scipy.constants
ELEMENTARY_CHARGE = constants.e
EPSILON_0 = constants.epsilon_0
ATOMIC_MASS_UNIT = constants.atomic_mass
CA40_MASS = 39.962591 * ATOMIC_MASS_UNIT

LAMBDA_REPUMP = 866e-9
LAMBDA_RAMAN = 854e-9


@dataclass(frozen=True)
class TrapGeometry:
    omega_axial: float
    ion_mass: float = CA40_MASS
    ion_count: int = 2
    trap_tilt: float = np.deg2rad(4.0)
    piezo_tilt: float = np.deg2rad(5.0)

    def __post_init__(self):
        if not self.omega_axial > 0:
            raise ValueError("omega_axial must be positive")
        if not self.ion_mass > 0:
            raise ValueError("ion_mass must be positive")
        if self.ion_count != 2:
            raise ValueError("only two-ion crystals are supported")


@dataclass(frozen=True)
class CavityGeometry:
    lambda_repump: float = LAMBDA_REPUMP
    lambda_raman: float = LAMBDA_RAMAN
    waist: float = 10e-6
    node_offset: float = 0.0

    def __post_init__(self):
        if not (self.lambda_repump > 0 and self.lambda_raman > 0):
            raise ValueError("wavelengths must be positive")
        if not self.waist > 0:
            raise ValueError("waist must be positive")


@dataclass
class CouplingProfile:
    y_prime: np.ndarray
    intensity: np.ndarray  # shape (2, n)
    phases: np.ndarray  # phase of each ion's cos(2 k y' + phase) modulation
    waist: float
    phase_difference: float

    @property
    def amplitude(self) -> np.ndarray:
        return np.sqrt(self.intensity)


@dataclass
class StandingWaveFit:
    phases: np.ndarray
    amplitudes: np.ndarray
    contrasts: np.ndarray
    offsets: np.ndarray
    center: float
    waist: float
    k: float
    phase_difference: float
    cost: float
    success: bool
    message: str = ""

    def evaluate(self, y: np.ndarray) -> np.ndarray:
        y = np.asarray(y, dtype=float)
        env = np.exp(-2 * (y - self.center) ** 2 / self.waist ** 2)
        return np.array([
            a * env * (1 + v * np.cos(2 * self.k * y + p)) / 2 + b
            for a, v, p, b in zip(self.amplitudes, self.contrasts, self.phases, self.offsets)
        ])

    def to_dict(self) -> dict:
        d = asdict(self)
        for key in ("phases", "amplitudes", "contrasts", "offsets"):
            d[key] = [float(x) for x in d[key]]
        return d


class FitFailure(RuntimeError):
    pass


def ion_spacing(geom: TrapGeometry) -> float:
    """Equilibrium separation of two singly charged ions in a harmonic well."""
    return (ELEMENTARY_CHARGE ** 2
            / (2 * np.pi * EPSILON_0 * geom.ion_mass * geom.omega_axial ** 2)) ** (1 / 3)


def projected_spacing(d: float, trap_tilt: float) -> float:
    if d <= 0:
        raise ValueError("spacing must be positive")
    return d * np.sin(trap_tilt)


def fold_phase(phi: float) -> float:
    """Map an angle onto [0, pi] by ``min(phi mod 2pi, 2pi - phi mod 2pi)``."""
    m = float(np.mod(phi, 2 * np.pi))
    return min(m, 2 * np.pi - m)


def standing_wave_phase_difference(d_prime: float, wavelength: float) -> float:
    """Relative phase of the two ions' intensity modulation (period ``lambda/2``)."""
    if wavelength <= 0 or d_prime < 0:
        raise ValueError("wavelength must be positive and d_prime non-negative")
    return fold_phase(2 * np.pi * d_prime / (wavelength / 2))


def ion_positions(geom: TrapGeometry) -> tuple[np.ndarray, np.ndarray]:
    """Per-ion (axial-projected x, transverse z) offsets from the crystal center."""
    d = ion_spacing(geom)
    x = np.array([-0.5, 0.5]) * projected_spacing(d, geom.trap_tilt)
    z = np.array([-0.5, 0.5]) * d * np.cos(geom.trap_tilt)
    return x, z


def coupling_profile(geom: TrapGeometry, cavity: CavityGeometry, y_prime,
                     wavelength: float | None = None, phase0: float = 0.0) -> CouplingProfile:
    """Relative intensity seen by each ion while the cavity is translated along ``y'``.

    The cavity moves along ``y'``, tilted by ``geom.piezo_tilt`` from the cavity
    axis: the axial component sweeps the standing wave, the transverse component
    sweeps the Gaussian envelope.
    """
    y = np.atleast_1d(np.asarray(y_prime, dtype=float))
    if y.size == 0:
        raise ValueError("y_prime must contain at least one sample")
    lam = cavity.lambda_repump if wavelength is None else wavelength
    x, z = ion_positions(geom)
    phi = geom.piezo_tilt
    yy = y - cavity.node_offset
    out = np.empty((2, y.size))
    for i in range(2):
        r2 = (yy * np.cos(phi)) ** 2 + z[i] ** 2
        arg = 2 * np.pi * (yy * np.sin(phi) + x[i]) / lam + phase0
        out[i] = np.exp(-2 * r2 / cavity.waist ** 2) * np.cos(arg) ** 2
    # cos^2(a) = (1 + cos 2a)/2, so the modulation phase is 2 * (2 pi x_i / lam + phase0)
    phases = np.mod(4 * np.pi * x / lam + 2 * phase0 - 4 * np.pi * cavity.node_offset
                    * np.sin(phi) / lam, 2 * np.pi)
    return CouplingProfile(y_prime=y, intensity=out, phases=phases,
                           waist=cavity.waist / np.cos(phi),
                           phase_difference=fold_phase(phases[1] - phases[0]))


def peak_coupling(g_max: float, geom: TrapGeometry, cavity: CavityGeometry) -> float:
    """Coupling of an ion at a standing-wave antinode, reduced by its transverse offset."""
    _, z = ion_positions(geom)
    return g_max * float(np.exp(-(z[0] ** 2) / cavity.waist ** 2))


# ---------------------------------------------------------------------------
# fitting


def _design(y, center, width, k):
    env = np.exp(-2 * (y - center) ** 2 / width ** 2)
    return np.column_stack([env, env * np.cos(2 * k * y), env * np.sin(2 * k * y),
                            np.ones_like(y)])


def _solve_linear(x, data, w):
    coefs = []
    resid = []
    for di in data:
        xw = x * w[:, None]
        c, *_ = np.linalg.lstsq(xw, di * w, rcond=None)
        coefs.append(c)
        resid.append((x @ c - di) * w)
    return np.array(coefs), np.concatenate(resid)


def _envelope_guess(y, data):
    """Shared Gaussian envelope ``(center, width)`` of the ion-summed scan."""
    total = data.sum(axis=0)
    base = float(np.median(np.concatenate([total[: y.size // 10 + 1],
                                           total[-(y.size // 10 + 1):]])))
    lifted = np.clip(total - base, 0.0, None)
    if lifted.sum() <= 0:
        raise FitFailure("scan shows no fluorescence above background")
    c0 = float(np.sum(y * lifted) / lifted.sum())
    w0 = float(2 * np.sqrt(np.sum(lifted * (y - c0) ** 2) / lifted.sum()))

    def resid(p):
        c, w, a, b = p
        return a * np.exp(-2 * (y - c) ** 2 / w ** 2) + b - total

    res = least_squares(resid, [c0, w0, float(lifted.max()), base], method="lm")
    return float(res.x[0]), abs(float(res.x[1]))


def _initial_k(y, data, center, width):
    """Dominant spatial frequency of the envelope-normalized modulation.

    Only frequencies above the envelope bandwidth are searched, so slow
    leftovers of background or envelope mismatch cannot win.
    """
    from scipy.signal import lombscargle

    env = np.exp(-2 * (y - center) ** 2 / width ** 2)
    mask = env > 0.3
    ym = y[mask]
    spacing = np.min(np.diff(np.sort(ym)))
    lo = max(2 * np.pi / np.ptp(ym), 4.0 / width)
    freqs = np.linspace(lo, np.pi / spacing, 4000)
    power = np.zeros_like(freqs)
    for di in data:
        r = di[mask] / env[mask]
        trend = np.polyval(np.polyfit(ym, r, 2), ym)
        power += lombscargle(ym, r - trend, freqs)
    return 0.5 * freqs[np.argmax(power)]


def fit_standing_wave(y_prime, counts, sigma=None, k_guess: float | None = None,
                      calibration: float = 1.0) -> StandingWaveFit:
    """Fit ``A exp(-2 (y - y0)^2 / w^2) (1 + V cos(2 k y + phase)) / 2 + B`` per ion.

    Center, width and spatial frequency are shared between the ions and
    optimized by nonlinear least squares; all per-ion amplitudes enter
    linearly and are eliminated at every step (variable projection).

    Parameters
    ----------
    counts : array_like, shape (2, n)
        Fluorescence per ion; divided by ``calibration`` to obtain intensity.
    sigma : array_like, optional
        Per-point uncertainty (same for both ions); uniform weights if omitted.
    """
    y = np.asarray(y_prime, dtype=float)
    data = np.atleast_2d(np.asarray(counts, dtype=float)) / calibration
    if data.shape != (2, y.size):
        raise ValueError("counts must have shape (2, len(y_prime))")
    if y.size < 8:
        raise ValueError("at least 8 scan points are required")
    w = np.ones_like(y) if sigma is None else 1.0 / np.asarray(sigma, dtype=float)
    center0, width0 = _envelope_guess(y, data)
    if not width0 > 0:
        raise FitFailure("could not locate the fluorescence envelope")
    k0 = k_guess if k_guess is not None else _initial_k(y, data, center0, width0)
    if 2 * k0 * (y.max() - y.min()) < 2 * np.pi:
        raise ValueError("scan must span more than one modulation period")

    def residual(p):
        return _solve_linear(_design(y, *p), data, w)[1]

    best = None
    for k_start in (k0, 0.99 * k0, 1.01 * k0):
        try:
            res = least_squares(residual, [center0, width0, k_start], method="lm",
                                x_scale=[width0, width0, k0], xtol=1e-15, ftol=1e-15,
                                gtol=1e-15, max_nfev=5000)
        except (np.linalg.LinAlgError, ValueError) as exc:
            raise FitFailure(f"standing-wave fit failed: {exc}") from exc
        if best is None or res.cost < best.cost:
            best = res
    center, width, k = best.x
    width = abs(width)
    if k < 0:
        k = -k
    coefs, _ = _solve_linear(_design(y, center, width, k), data, w)
    amps, contrasts, phases, offsets = [], [], [], []
    for a, b, c, off in coefs:
        amp = 2 * a
        mod = np.hypot(b, c)
        amps.append(amp)
        contrasts.append(2 * mod / amp if amp != 0 else np.nan)
        # b cos + c sin = mod cos(2ky + phase) with phase = atan2(-c, b)
        phases.append(float(np.mod(np.arctan2(-c, b), 2 * np.pi)))
        offsets.append(off)
    phases = np.array(phases)
    return StandingWaveFit(phases=phases, amplitudes=np.array(amps),
                           contrasts=np.array(contrasts), offsets=np.array(offsets),
                           center=float(center), waist=float(width), k=float(k),
                           phase_difference=fold_phase(phases[1] - phases[0]),
                           cost=float(best.cost), success=bool(best.success),
                           message=str(best.message))


def synthetic_scan(geom: TrapGeometry, cavity: CavityGeometry, y_prime, noise: float = 0.0,
                   peak_counts: float = 1000.0, background: float = 0.0,
                   seed: int | None = None, phase0: float = 0.0) -> np.ndarray:
    """Fluorescence scan per ion with optional relative Gaussian noise."""
    prof = coupling_profile(geom, cavity, y_prime, phase0=phase0)
    clean = peak_counts * prof.intensity + background
    if noise <= 0:
        return clean
    rng = np.random.default_rng(seed)
    return clean + noise * peak_counts * rng.standard_normal(clean.shape)


# ---------------------------------------------------------------------------
# I/O

SCAN_HEADER = ("y_prime_m", "ion1_counts", "ion2_counts")


def write_scan_csv(path, y_prime, counts) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        wr = csv.writer(fh)
        wr.writerow(SCAN_HEADER)
        for y, c1, c2 in zip(y_prime, counts[0], counts[1]):
            wr.writerow([repr(float(y)), repr(float(c1)), repr(float(c2))])


def read_scan_csv(path) -> tuple[np.ndarray, np.ndarray]:
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    if not rows or tuple(h.strip() for h in rows[0]) != SCAN_HEADER:
        raise ValueError(f"{path}: expected header {','.join(SCAN_HEADER)}")
    vals = []
    for lineno, row in enumerate(rows[1:], 2):
        if not row:
            continue
        try:
            vals.append([float(v) for v in row])
        except ValueError as exc:
            raise ValueError(f"{path}:{lineno}: {exc}") from exc
        if len(vals[-1]) != 3:
            raise ValueError(f"{path}:{lineno}: expected 3 columns")
    a = np.array(vals)
    return a[:, 0], a[:, 1:].T


def write_profile_csv(path, profile: CouplingProfile) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        wr = csv.writer(fh)
        wr.writerow(["y_prime_m", "ion1_intensity", "ion2_intensity"])
        for y, a, b in zip(profile.y_prime, *profile.intensity):
            wr.writerow([repr(float(y)), repr(float(a)), repr(float(b))])


def write_fit_json(path, fit: StandingWaveFit) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(fit.to_dict(), fh, indent=2)
