"""Heralded two-photon events, conditional ion states and the protocol rate model."""
from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from . import mcwf
from .model import (CAVITY_LABELS, SystemModel, bell_state, ground_state,
                    herald_subspace_indices, mapping_pulse, qubit_projector_indices)
from .qops import DensityMatrix, HilbertSpace, Operator, StateVector, reduced_state

ION_SPACE = HilbertSpace((5, 5))
LEAKAGE_LIMIT = 0.05
DEFAULT_BIN_EDGES = (0.0, 0.5e-6, 1e-6, 2e-6, 4e-6, 8e-6, 16e-6, 40e-6)
_POL = {"cavity_H": "H", "cavity_V": "V"}


class MissingSnapshotError(ValueError):
    pass


@dataclass
class HeraldEvent:
    """Two orthogonally polarized cavity photons at ``t1 < t2``.

    ``ion_state`` is the reduced state of both ions (all five levels each)
    right after the second photon.
    """
    t1: float
    t2: float
    pol1: str
    pol2: str
    ion_state: DensityMatrix
    scattering_flag: bool  # spontaneous emission before t2
    scattered_between: bool  # spontaneous emission between t1 and t2
    seed: int = 0
    index: int = 0

    def __post_init__(self):
        if not 0 <= self.t1 <= self.t2:
            raise ValueError("herald times must satisfy 0 <= t1 <= t2")
        if self.pol1 == self.pol2:
            raise ValueError("a herald needs orthogonal polarizations")

    @property
    def T(self) -> float:
        return self.t2 - self.t1

    @property
    def herald_leakage(self) -> float:
        """Population outside {S, D, D'} for both ions."""
        idx = herald_subspace_indices()
        return float(1 - np.real(np.trace(self.ion_state.entries[np.ix_(idx, idx)])))

    @property
    def conditional_state(self) -> DensityMatrix:
        """Ion state restricted to {S, D, D'}^2 and renormalized (9 x 9)."""
        idx = herald_subspace_indices()
        sub = self.ion_state.entries[np.ix_(idx, idx)]
        return DensityMatrix(HilbertSpace((3, 3)), sub / np.trace(sub))


@dataclass
class HeraldedQubit:
    rho: DensityMatrix
    leakage: float

    @property
    def flagged(self) -> bool:
        return self.leakage > LEAKAGE_LIMIT


@dataclass(frozen=True)
class SequenceTiming:
    prep: float = 1.7e-3
    raman_window: float = 40e-6
    max_retries: int = 10
    detection: float = 2e-3
    mapping: float = 10e-6
    rotation: float = 0.0

    def __post_init__(self):
        for name in ("prep", "raman_window", "detection", "mapping"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if self.rotation < 0:
            raise ValueError("rotation must be non-negative")
        if self.max_retries < 1:
            raise ValueError("max_retries must be >= 1")


@dataclass
class FidelityBin:
    low: float
    high: float
    mean: float
    stderr: float
    count: int


@dataclass
class HeraldRun:
    events: list[HeraldEvent]
    n_traj: int
    window: float
    records: list | None = field(default=None, repr=False)

    @property
    def probability(self) -> float:
        return len(self.events) / self.n_traj

    @property
    def probability_sigma(self) -> float:
        p = self.probability
        return float(np.sqrt(max(p * (1 - p), 1 / self.n_traj) / self.n_traj))


# ---------------------------------------------------------------------------


def extract_herald(record: mcwf.TrajectoryRecord, window: float | None = None) -> HeraldEvent | None:
    """Event from the first two cavity photons if they are H and V, else None."""
    if record.jump_states is None:
        raise MissingSnapshotError("trajectory record carries no post-jump states")
    limit = np.inf if window is None else window
    cav = [(k, t, c) for k, (t, c) in enumerate(record.jumps) if c in _POL and t <= limit]
    if len(cav) < 2:
        return None
    (_, t1, c1), (k2, t2, c2) = cav[0], cav[1]
    if c1 == c2:
        return None
    psi = StateVector(record.space, record.jump_states[k2])
    ions = reduced_state(psi, record.space, (0, 1))
    before = [t for t, c in record.jumps[:k2] if c.startswith("spont")]
    return HeraldEvent(t1=t1, t2=t2, pol1=_POL[c1], pol2=_POL[c2], ion_state=ions,
                       scattering_flag=bool(before),
                       scattered_between=any(t > t1 for t in before),
                       seed=record.seed, index=record.index)


def heralded_qubit_state(event: HeraldEvent | DensityMatrix,
                         mapping: Operator | None = None) -> HeraldedQubit:
    """Map D' to S, keep the {S, D}^2 block and renormalize it.

    ``event`` may also be a density matrix on the bare (5, 5) ion space.
    """
    rho = event.ion_state if isinstance(event, HeraldEvent) else event
    if rho.space != ION_SPACE:
        raise ValueError("expected a density matrix on the (5, 5) ion space")
    u = (mapping or mapping_pulse(ION_SPACE)).dense()
    m = u @ rho.entries @ u.conj().T
    idx = qubit_projector_indices()
    sub = m[np.ix_(idx, idx)]
    kept = float(np.real(np.trace(sub)))
    if kept <= 0:
        raise ValueError("no population left in the qubit subspace")
    total = float(np.real(np.trace(m)))
    return HeraldedQubit(DensityMatrix(HilbertSpace((2, 2)), sub / kept), total - kept)


def fidelity(rho: DensityMatrix | np.ndarray, target: StateVector) -> float:
    m = rho.entries if isinstance(rho, DensityMatrix) else np.asarray(rho)
    v = target.amplitudes
    if m.shape != (v.size, v.size):
        raise ValueError("state and target dimensions differ")
    return float(np.real(v.conj() @ m @ v))


def event_fidelity(event: HeraldEvent, target: StateVector | None = None) -> float:
    return fidelity(heralded_qubit_state(event).rho, target or bell_state("psi+"))


def event_coherence(event: HeraldEvent) -> float:
    """``Re <SD|rho|DS>`` of the mapped qubit state."""
    return float(np.real(heralded_qubit_state(event).rho.entries[1, 2]))


def fidelity_vs_T(events, bin_edges=DEFAULT_BIN_EDGES,
                  target: StateVector | None = None) -> list[FidelityBin]:
    """Mean fidelity per detection-interval bin.

    The first bin is closed on both sides, later bins are ``(low, high]``.
    Empty bins have ``count = 0`` and NaN statistics.
    """
    ev = list(events)
    if not ev:
        raise ValueError("no events")
    tgt = target or bell_state("psi+")
    T = np.array([e.T for e in ev])
    F = np.array([fidelity(heralded_qubit_state(e).rho, tgt) for e in ev])
    return bin_fidelities(T, F, bin_edges)


def bin_fidelities(T, F, bin_edges=DEFAULT_BIN_EDGES) -> list[FidelityBin]:
    """Per-bin mean and standard error of fidelities ``F`` at intervals ``T``."""
    edges = np.asarray(bin_edges, dtype=float)
    if edges.ndim != 1 or edges.size < 2 or np.any(np.diff(edges) <= 0):
        raise ValueError("bin edges must be strictly increasing")
    T = np.asarray(T, dtype=float)
    F = np.asarray(F, dtype=float)
    which = np.searchsorted(edges, T, side="left") - 1
    which[T == edges[0]] = 0
    out = []
    for b in range(edges.size - 1):
        f = F[which == b]
        n = f.size
        mean = float(f.mean()) if n else float("nan")
        err = float(f.std(ddof=1) / np.sqrt(n)) if n > 1 else (0.0 if n == 1 else float("nan"))
        out.append(FidelityBin(float(edges[b]), float(edges[b + 1]), mean, err, int(n)))
    return out


def sequence_rate(timing: SequenceTiming, p_herald: float, acceptance: float = 1.0) -> float:
    """Expected heralded events per second.

    A cycle is one preparation followed by up to ``max_retries`` Raman
    attempts; a successful cycle adds mapping, rotation and detection time.
    ``acceptance`` is the fraction of heralds kept by a post-selection filter.
    """
    if not 0 <= p_herald <= 1:
        raise ValueError("p_herald must lie in [0, 1]")
    if not 0 <= acceptance <= 1:
        raise ValueError("acceptance must lie in [0, 1]")
    n = timing.max_retries
    q = 1 - p_herald
    p_cycle = 1 - q ** n
    attempts = p_cycle / p_herald if p_herald > 0 else float(n)
    cycle = (timing.prep + attempts * timing.raman_window
             + p_cycle * (timing.mapping + timing.rotation + timing.detection))
    return acceptance * p_cycle / cycle


def detected_herald_probability(p_herald: float, efficiency: float) -> float:
    """Both photons of an emitted H/V pair detected with per-photon ``efficiency``."""
    if not 0 <= efficiency <= 1:
        raise ValueError("efficiency must lie in [0, 1]")
    return efficiency ** 2 * p_herald


def detect_clicks(record: mcwf.TrajectoryRecord, efficiency: float = 1.0,
                  dark_rate: float = 0.0, window: float | None = None,
                  rng: np.random.Generator | int | None = None) -> list[tuple[float, str, bool]]:
    """Detector clicks ``(t, polarization, is_dark)`` from one trajectory.

    Each cavity photon is kept with probability ``efficiency``; dark counts
    arrive as a Poisson process of rate ``dark_rate`` per detector.
    """
    gen = rng if isinstance(rng, np.random.Generator) else np.random.default_rng(rng)
    t_end = record.t_final if window is None else window
    clicks = [(t, _POL[c], False) for t, c in record.jumps
              if c in _POL and t <= t_end and gen.random() < efficiency]
    if dark_rate > 0:
        for pol in ("H", "V"):
            n = gen.poisson(dark_rate * t_end)
            clicks += [(float(t), pol, True) for t in gen.uniform(0, t_end, n)]
    return sorted(clicks)


def herald_from_clicks(clicks) -> tuple[float, float] | None:
    """``(t1, t2)`` if the first two clicks have orthogonal polarization."""
    if len(clicks) < 2 or clicks[0][1] == clicks[1][1]:
        return None
    return clicks[0][0], clicks[1][0]


def simulate_heralds(model: SystemModel, n_traj: int, seed: int, window: float = 40e-6,
                     dt: float = 1e-9, workers: int = 1, keep_records: bool = False,
                     first_index: int = 0) -> HeraldRun:
    """Run one Raman attempt per trajectory and collect the heralded events."""
    psi0 = ground_state(model.space)
    stop = mcwf.StopAfter(CAVITY_LABELS, 2)
    records = mcwf.run_records(model, psi0, window, dt, n_traj, seed, workers=workers,
                               first_index=first_index, store_jump_states=True, stop=stop)
    events = [e for e in (extract_herald(r, window) for r in records) if e is not None]
    return HeraldRun(events, n_traj, window, records if keep_records else None)


def herald_probability_curve(records, durations) -> np.ndarray:
    """Fraction of trajectories heralded within each pulse duration."""
    out = []
    for d in durations:
        out.append(sum(extract_herald(r, d) is not None for r in records) / len(records))
    return np.array(out)


# ---------------------------------------------------------------------------
# CSV

EVENT_HEADER = ("t1_s", "t2_s", "pol1", "pol2", "fidelity", "scattering_flag")
CURVE_HEADER = ("T_bin_low", "T_bin_high", "mean_fidelity", "stderr", "count")


def write_events_csv(path, events) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        wr = csv.writer(fh)
        wr.writerow(EVENT_HEADER)
        for e in events:
            wr.writerow([repr(e.t1), repr(e.t2), e.pol1, e.pol2,
                         repr(event_fidelity(e)), int(e.scattering_flag)])


def read_events_csv(path) -> list[dict]:
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    if not rows or tuple(h.strip() for h in rows[0]) != EVENT_HEADER:
        raise ValueError(f"{path}: expected header {','.join(EVENT_HEADER)}")
    out = []
    for lineno, row in enumerate(rows[1:], 2):
        if not row:
            continue
        try:
            if len(row) != 6:
                raise ValueError(f"expected 6 columns, got {len(row)}")
            out.append({"t1_s": float(row[0]), "t2_s": float(row[1]), "pol1": row[2],
                        "pol2": row[3], "fidelity": float(row[4]),
                        "scattering_flag": bool(int(row[5]))})
        except ValueError as exc:
            raise ValueError(f"{path}:{lineno}: {exc}") from exc
    return out


def write_curve_csv(path, curve) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        wr = csv.writer(fh)
        wr.writerow(CURVE_HEADER)
        for b in curve:
            wr.writerow([repr(b.low), repr(b.high), repr(b.mean), repr(b.stderr), b.count])


def read_curve_csv(path) -> list[FidelityBin]:
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    if not rows or tuple(h.strip() for h in rows[0]) != CURVE_HEADER:
        raise ValueError(f"{path}: expected header {','.join(CURVE_HEADER)}")
    out = []
    for lineno, row in enumerate(rows[1:], 2):
        try:
            out.append(FidelityBin(float(row[0]), float(row[1]), float(row[2]),
                                   float(row[3]), int(row[4])))
        except (ValueError, IndexError) as exc:
            raise ValueError(f"{path}:{lineno}: {exc}") from exc
    return out
