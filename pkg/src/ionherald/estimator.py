"""Parity-based lower bound on the Bell-state fidelity of two ions.

The bound combines three measured quantities:

* the odd-population sum ``rho_SD,SD + rho_DS,DS`` (no analysis pulses),
* the two-pulse parity at ``phi = pi/2``, which equals
  ``2 Re(rho_SD,DS - rho_SS,DD)``,
* the contrast ``C`` of the one-pulse parity oscillation, ``C = 2 |rho_SS,DD|``,

as ``F >= (populations + P(pi/2) - C) / 2``.  Bright (fluorescing) ions are
those in S, so ``p_k`` is the probability that ``k`` ions are in S.
"""
from __future__ import annotations

import csv
import json
from dataclasses import asdict, dataclass, field

import numpy as np

from .model import bell_state, qubit_rotation
from .qops import DensityMatrix, HilbertSpace

QUBITS = HilbertSpace((2, 2))
SCHEMES = ("two_pulse", "one_pulse", "none")
SS, SD, DS, DD = range(4)
# number of bright ions for basis states SS, SD, DS, DD
_BRIGHT = np.array([2, 1, 1, 0])


@dataclass
class MeasurementRecord:
    phase: float
    scheme: str
    counts: tuple[int, int, int]
    probabilities: tuple[float, float, float] = field(init=False)
    uncertainties: tuple[float, float, float] = field(init=False)

    def __post_init__(self):
        if self.scheme not in SCHEMES:
            raise ValueError(f"unknown rotation scheme {self.scheme!r}")
        c = tuple(int(x) for x in self.counts)
        if len(c) != 3 or min(c) < 0 or sum(c) == 0:
            raise ValueError("counts must be three non-negative integers with a positive sum")
        self.counts = c
        n = sum(c)
        p = tuple(x / n for x in c)
        self.probabilities = p
        self.uncertainties = tuple(float(np.sqrt(q * (1 - q) / n)) for q in p)

    @property
    def shots(self) -> int:
        return sum(self.counts)

    @property
    def parity(self) -> float:
        return parity(*self.probabilities)

    @property
    def parity_sigma(self) -> float:
        # P = 1 - 2 p1; Laplace-smoothed p1 keeps the weight finite at p1 in {0, 1}
        n = self.shots
        q = (self.counts[1] + 1) / (n + 2)
        return float(2 * np.sqrt(q * (1 - q) / n))


@dataclass
class ParityCurve:
    phases: np.ndarray
    values: np.ndarray
    sigmas: np.ndarray
    amplitude: float
    phase: float
    offset: float
    covariance: np.ndarray  # over (A, B[, offset])
    with_offset: bool
    amplitude_sigma: float

    @property
    def coefficients(self) -> np.ndarray:
        return _coefs(self)

    def evaluate(self, phi):
        x = np.asarray(phi, dtype=float)
        out = _basis(np.atleast_1d(x), self.with_offset) @ self.coefficients
        return float(out[0]) if x.ndim == 0 else out

    def evaluate_with_error(self, phi: float) -> tuple[float, float]:
        g = _basis(np.array([phi]), self.with_offset)[0]
        return float(g @ self.coefficients), float(np.sqrt(g @ self.covariance @ g))


def _coefs(curve: ParityCurve) -> np.ndarray:
    a = curve.amplitude * np.cos(curve.phase)
    b = curve.amplitude * np.sin(curve.phase)
    return np.array([a, b, curve.offset]) if curve.with_offset else np.array([a, b])


@dataclass
class FidelityBound:
    population_sum: float
    population_sigma: float
    parity_half_pi: float
    parity_sigma: float
    contrast: float
    contrast_sigma: float
    lower_bound: float = field(init=False)
    sigma: float = field(init=False)

    def __post_init__(self):
        self.lower_bound = 0.5 * (self.population_sum + self.parity_half_pi - self.contrast)
        self.sigma = 0.5 * float(np.sqrt(self.population_sigma ** 2 + self.parity_sigma ** 2
                                         + self.contrast_sigma ** 2))

    def to_dict(self) -> dict:
        return {k: float(v) for k, v in asdict(self).items()} | {
            "lower_bound": float(self.lower_bound), "sigma": float(self.sigma)}


# ---------------------------------------------------------------------------


def parity(p0: float, p1: float, p2: float) -> float:
    s = p0 + p1 + p2
    if min(p0, p1, p2) < -1e-12 or abs(s - 1) > 1e-10:
        raise ValueError("probabilities must be non-negative and sum to 1")
    return p0 + p2 - p1


def _as_qubit_rho(rho) -> np.ndarray:
    m = rho.entries if isinstance(rho, DensityMatrix) else np.asarray(rho, dtype=complex)
    if m.shape != (4, 4):
        raise ValueError("expected a two-qubit density matrix")
    return m


def rotation_sequence(scheme: str, phi: float) -> np.ndarray:
    """Unitary applied before detection (both ions, pi/2 pulses)."""
    if scheme == "none":
        return np.eye(4, dtype=complex)
    r = qubit_rotation(np.pi / 2, phi)
    final = np.kron(r, r)
    if scheme == "one_pulse":
        return final
    if scheme == "two_pulse":
        r0 = qubit_rotation(np.pi / 2, 0.0)
        return final @ np.kron(r0, r0)
    raise ValueError(f"unknown rotation scheme {scheme!r}")


def ideal_probabilities(rho, scheme: str, phi: float) -> np.ndarray:
    """Exact ``(p0, p1, p2)`` after the scheme's rotations."""
    m = _as_qubit_rho(rho)
    u = rotation_sequence(scheme, phi)
    pops = np.real(np.diag(u @ m @ u.conj().T))
    pops = np.clip(pops, 0.0, None)
    p = np.bincount(_BRIGHT, weights=pops, minlength=3)
    return p / p.sum()


def ideal_parity(rho, scheme: str, phi: float) -> float:
    p = ideal_probabilities(rho, scheme, phi)
    return float(p[0] + p[2] - p[1])


def simulate_measurement(rho, scheme: str, phi: float, shots: int,
                         rng: np.random.Generator | int | None = None) -> MeasurementRecord:
    """Finite-shot detection of the number of bright ions."""
    if shots < 1:
        raise ValueError("shots must be >= 1")
    gen = rng if isinstance(rng, np.random.Generator) else np.random.default_rng(rng)
    counts = gen.multinomial(int(shots), ideal_probabilities(rho, scheme, phi))
    return MeasurementRecord(float(phi), scheme, tuple(int(c) for c in counts))


def _basis(phi: np.ndarray, with_offset: bool) -> np.ndarray:
    cols = [np.sin(2 * phi), np.cos(2 * phi)]
    if with_offset:
        cols.append(np.ones_like(phi))
    return np.column_stack(cols)


def fit_parity(points, model: str = "with_offset") -> ParityCurve:
    """Weighted least squares of ``P(phi) = A sin 2phi + B cos 2phi (+ offset)``.

    Parameters
    ----------
    points : iterable of (phi, P, sigma_P)
    model : {"with_offset", "zero_offset"}

    Returns
    -------
    ParityCurve
        ``amplitude = sqrt(A^2 + B^2)`` and ``phase = atan2(B, A)``, so that
        ``P = amplitude * sin(2 phi + phase) (+ offset)``.
    """
    if model not in ("with_offset", "zero_offset"):
        raise ValueError("model must be 'with_offset' or 'zero_offset'")
    pts = np.asarray(list(points), dtype=float)
    if pts.ndim != 2 or pts.shape[1] != 3 or pts.shape[0] < 5:
        raise ValueError("need at least 5 (phi, P, sigma) points")
    phi, val, sig = pts.T
    if np.ptp(phi) < np.pi / 2 - 1e-12:
        raise ValueError("phases must span at least half a period of 2*phi")
    if np.any(sig <= 0):
        raise ValueError("parity uncertainties must be positive")
    off = model == "with_offset"
    x = _basis(phi, off)
    w = 1.0 / sig ** 2
    normal = x.T @ (x * w[:, None])
    if np.linalg.cond(normal) > 1e12:
        raise np.linalg.LinAlgError("degenerate design matrix for parity fit")
    cov = np.linalg.inv(normal)
    coef = cov @ (x.T @ (w * val))
    a, b = coef[0], coef[1]
    amp = float(np.hypot(a, b))
    if amp > 0:
        grad = np.array([a, b]) / amp
        amp_sigma = float(np.sqrt(grad @ cov[:2, :2] @ grad))
    else:
        amp_sigma = float(np.sqrt(0.5 * np.trace(cov[:2, :2])))
    return ParityCurve(phases=phi, values=val, sigmas=sig, amplitude=amp,
                       phase=float(np.arctan2(b, a)), offset=float(coef[2]) if off else 0.0,
                       covariance=cov, with_offset=off, amplitude_sigma=amp_sigma)


def coherence_ceiling(p0: float, p2: float) -> float:
    """Largest ``|rho_SS,DD|`` allowed by positivity, ``sqrt(p0 p2)``."""
    if not (0 <= p0 <= 1 and 0 <= p2 <= 1):
        raise ValueError("p0 and p2 must lie in [0, 1]")
    return float(np.sqrt(p0 * p2))


def fidelity_bound(population_sum, parity_half_pi, contrast) -> FidelityBound:
    """Combine ``(value, sigma)`` pairs (or bare values) into the lower bound."""
    def split(x):
        if np.ndim(x) == 0:
            return float(x), 0.0
        v, e = x
        return float(v), float(e)

    (p, ep), (q, eq), (c, ec) = split(population_sum), split(parity_half_pi), split(contrast)
    if min(ep, eq, ec) < 0:
        raise ValueError("uncertainties must be non-negative")
    return FidelityBound(p, ep, q, eq, c, ec)


def exact_fidelity(rho) -> float:
    """``<Psi+|rho|Psi+>`` for a two-qubit density matrix."""
    m = _as_qubit_rho(rho)
    v = bell_state("psi+").amplitudes
    return float(np.real(v.conj() @ m @ v))


def default_phases(n: int = 25) -> np.ndarray:
    """Uniform grid over one period of ``2 phi``."""
    return np.linspace(0.0, np.pi, n, endpoint=False)


def bound_from_density_matrix(rho, phases: np.ndarray | None = None) -> tuple[float, FidelityBound]:
    """Exact fidelity and the infinite-shot value of the measured bound."""
    phases = default_phases() if phases is None else np.asarray(phases, dtype=float)
    pop = ideal_probabilities(rho, "none", 0.0)[1]
    two = [(ph, ideal_parity(rho, "two_pulse", ph), 1.0) for ph in phases]
    one = [(ph, ideal_parity(rho, "one_pulse", ph), 1.0) for ph in phases]
    p_half = fit_parity(two, "with_offset").evaluate(np.pi / 2)
    contrast = fit_parity(one, "zero_offset").amplitude
    return exact_fidelity(rho), fidelity_bound(pop, float(p_half), contrast)


@dataclass
class MeasurementSet:
    populations: MeasurementRecord
    two_pulse: list[MeasurementRecord]
    one_pulse: list[MeasurementRecord]


def simulate_measurement_set(rho, shots: int = 50, phases: np.ndarray | None = None,
                             population_shots: int | None = None,
                             seed: int | None = None) -> MeasurementSet:
    """All three datasets of a bound measurement, drawn from one stream."""
    phases = default_phases() if phases is None else np.asarray(phases, dtype=float)
    rng = np.random.default_rng(seed)
    n_pop = shots * len(phases) if population_shots is None else population_shots
    pop = simulate_measurement(rho, "none", 0.0, n_pop, rng)
    two = [simulate_measurement(rho, "two_pulse", ph, shots, rng) for ph in phases]
    one = [simulate_measurement(rho, "one_pulse", ph, shots, rng) for ph in phases]
    return MeasurementSet(pop, two, one)


def _reweighted_fit(records, model: str, iterations: int = 2) -> ParityCurve:
    """Parity fit with binomial weights taken from the fitted curve.

    Weights computed from each point's own counts correlate with its noise and
    bias the fit; after a first pass the variance ``(1 - P_fit^2) / N`` is used.
    """
    pts = [(r.phase, r.parity, r.parity_sigma) for r in records]
    curve = fit_parity(pts, model)
    shots = np.array([r.shots for r in records], dtype=float)
    for _ in range(iterations):
        pred = np.clip(curve.evaluate(curve.phases), -1.0, 1.0)
        floor = 1.0 / (shots + 2)
        var = np.maximum(1 - pred ** 2, 4 * floor * (1 - floor)) / shots
        curve = fit_parity(zip(curve.phases, curve.values, np.sqrt(var)), model)
    return curve


def _uniform_fit(records, model: str) -> ParityCurve:
    """Equal-weight fit; on a uniform grid over a full period the sinusoid is
    orthogonal to any constant, so a zero-offset fit stays unbiased."""
    sig = np.sqrt(np.mean([r.parity_sigma ** 2 for r in records]))
    return fit_parity([(r.phase, r.parity, sig) for r in records], model)


def bound_from_measurements(data: MeasurementSet) -> tuple[FidelityBound, ParityCurve, ParityCurve]:
    """Populations, both parity fits and the bound with propagated errors."""
    pop = data.populations
    n = pop.shots
    q = (pop.counts[1] + 1) / (n + 2)
    pop_sum = (pop.probabilities[1], float(np.sqrt(q * (1 - q) / n)))
    two = _reweighted_fit(data.two_pulse, "with_offset")
    one = _uniform_fit(data.one_pulse, "zero_offset")
    bound = fidelity_bound(pop_sum, two.evaluate_with_error(np.pi / 2),
                           (one.amplitude, one.amplitude_sigma))
    return bound, two, one


# ---------------------------------------------------------------------------
# I/O

MEASUREMENT_HEADER = ("phase_rad", "scheme", "eta0", "eta1", "eta2")


def write_measurements_csv(path, records) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        wr = csv.writer(fh)
        wr.writerow(MEASUREMENT_HEADER)
        for r in records:
            wr.writerow([repr(float(r.phase)), r.scheme, *r.counts])


def read_measurements_csv(path) -> list[MeasurementRecord]:
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    if not rows or tuple(h.strip() for h in rows[0]) != MEASUREMENT_HEADER:
        raise ValueError(f"{path}: expected header {','.join(MEASUREMENT_HEADER)}")
    out = []
    for lineno, row in enumerate(rows[1:], 2):
        if not row:
            continue
        try:
            if len(row) != 5:
                raise ValueError(f"expected 5 columns, got {len(row)}")
            out.append(MeasurementRecord(float(row[0]), row[1].strip(),
                                         (int(row[2]), int(row[3]), int(row[4]))))
        except ValueError as exc:
            raise ValueError(f"{path}:{lineno}: {exc}") from exc
    return out


def split_measurements(records) -> MeasurementSet:
    pops = [r for r in records if r.scheme == "none"]
    if not pops:
        raise ValueError("no population records (scheme 'none')")
    total = tuple(sum(r.counts[i] for r in pops) for i in range(3))
    return MeasurementSet(MeasurementRecord(0.0, "none", total),
                          [r for r in records if r.scheme == "two_pulse"],
                          [r for r in records if r.scheme == "one_pulse"])


def write_parity_csv(path, curve: ParityCurve, scheme: str) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        wr = csv.writer(fh)
        wr.writerow(["phase_rad", "scheme", "parity", "sigma", "fit"])
        for ph, v, s, f in zip(curve.phases, curve.values, curve.sigmas,
                               curve.evaluate(curve.phases)):
            wr.writerow([repr(float(ph)), scheme, repr(float(v)), repr(float(s)), repr(float(f))])


def write_bound_json(path, bound: FidelityBound, extra: dict | None = None) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(bound.to_dict() | (extra or {}), fh, indent=2, sort_keys=True)


def read_bound_json(path) -> FidelityBound:
    with open(path, encoding="utf-8") as fh:
        d = json.load(fh)
    return FidelityBound(d["population_sum"], d["population_sigma"], d["parity_half_pi"],
                         d["parity_sigma"], d["contrast"], d["contrast_sigma"])
