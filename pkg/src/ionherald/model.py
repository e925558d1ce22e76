"""Two ions, two cavity modes: Hamiltonian, collapse channels and protocol pulses.

Each ion carries five levels (S, P, D, D', D_aux).  A bichromatic Raman drive
couples S to P; the cavity closes the Raman transitions P -> D (H photon) and
P -> D' (V photon).  D_aux is an extra Zeeman level reached by a weak,
off-resonant cavity-assisted Raman process.

All rates and frequencies are angular (rad/s).
"""
from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Sequence

import numpy as np
import scipy.sparse as sp

from .qops import (
    HilbertSpace,
    Operator,
    StateVector,
    destroy,
    embed,
    projector,
    transition,
)

TWO_PI = 2.0 * np.pi

# level indices within one ion
S, P, D, DP, DAUX = range(5)
N_LEVELS = 5
LEVEL_NAMES = ("S", "P", "D", "D'", "D_aux")
ION1, ION2, MODE_H, MODE_V = range(4)

# drive/cavity values quoted for the experiment
KAPPA = TWO_PI * 50e3
GAMMA = TWO_PI * 11.5e6
G0 = TWO_PI * 1.4e6
G_MOTION = TWO_PI * 1.0e6
OMEGA_1 = TWO_PI * 47e6
OMEGA_2 = TWO_PI * 29e6
DELTA_RAMAN = TWO_PI * 400e6
LASER_LINEWIDTH = TWO_PI * 10e3
G_EFF_TARGET = TWO_PI * 37e3
GAMMA_EFF_TARGET = TWO_PI * 54e3


@dataclass(frozen=True)
class DriveField:
    """One tone of the bichromatic Raman field."""

    rabi: float
    detuning: float
    branch: str  # "D" or "D'"
    phase: float = 0.0
    linewidth: float = LASER_LINEWIDTH

    def __post_init__(self):
        if self.rabi < 0:
            raise ValueError("Rabi frequency must be non-negative")
        if self.branch not in ("D", "D'"):
            raise ValueError(f"drive branch must be 'D' or \"D'\", got {self.branch!r}")
        if not np.isfinite(self.detuning):
            raise ValueError("detuning must be finite")


def default_drives() -> tuple[DriveField, DriveField]:
    return (
        DriveField(OMEGA_1, DELTA_RAMAN, "D"),
        DriveField(OMEGA_2, DELTA_RAMAN, "D'"),
    )


def calibrate_cavity_cg(drives: Sequence[DriveField], g_ref: float = G0,
                        g_eff_target: float = G_EFF_TARGET) -> dict[str, float]:
    """Cavity Clebsch-Gordan factors giving equal branch couplings.

    The factors are chosen so both Raman branches have the same effective
    coupling (H and V photons equally likely) and their quadrature sum equals
    ``g_eff_target`` at reference coupling ``g_ref``.
    """
    per_branch = g_eff_target / np.sqrt(len(drives))
    out = {}
    for d in drives:
        if d.rabi == 0:
            raise ValueError("cannot calibrate against a drive with zero Rabi frequency")
        out[d.branch] = per_branch * 2 * abs(d.detuning) / (g_ref * d.rabi)
    return out


_DEFAULT_CG = calibrate_cavity_cg(default_drives())


@dataclass(frozen=True)
class SystemParams:
    kappa: float = KAPPA
    gamma: float = GAMMA
    g0: float = G0
    g_per_ion: tuple[float, float] = (G_MOTION, G_MOTION)
    # P3/2 decay branching into S, D and D'
    branching: tuple[tuple[str, float], ...] = (("S", 0.94), ("D", 0.006), ("D'", 0.054))
    cg_cavity: tuple[tuple[str, float], ...] = tuple(sorted(_DEFAULT_CG.items()))
    c_gamma: float = 1.0
    aux_detuning: float = TWO_PI * 10e6
    aux_cg_ratio: float = 0.1
    aux_mode: str = "H"
    raman_detuning: float = 0.0
    stark_compensation: bool = True
    dephasing: str = "collective"  # or "independent"

    def __post_init__(self):
        for name in ("kappa", "gamma", "g0", "c_gamma", "aux_cg_ratio"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative")
        object.__setattr__(self, "g_per_ion", tuple(float(g) for g in self.g_per_ion))
        if len(self.g_per_ion) != 2:
            raise ValueError("exactly two per-ion couplings are required")
        br = dict(self.branching)
        if set(br) != {"S", "D", "D'"}:
            raise ValueError("branching needs entries for S, D and D'")
        if any(v < 0 for v in br.values()) or abs(sum(br.values()) - 1.0) > 1e-12:
            raise ValueError(f"branching ratios must be >= 0 and sum to 1, got {br}")
        if self.aux_mode not in ("H", "V"):
            raise ValueError("aux_mode must be 'H' or 'V'")
        if self.dephasing not in ("collective", "independent"):
            raise ValueError("dephasing must be 'collective' or 'independent'")

    @property
    def branching_map(self) -> dict[str, float]:
        return dict(self.branching)

    @property
    def cg_map(self) -> dict[str, float]:
        return dict(self.cg_cavity)


def ideal_params(params: SystemParams | None = None) -> SystemParams:
    """No spontaneous emission, equal couplings, D_aux decoupled."""
    params = params or SystemParams()
    g = params.g_per_ion[0]
    return replace(params, gamma=0.0, g_per_ion=(g, g), aux_cg_ratio=0.0)


def ideal_drives(drives: Sequence[DriveField] | None = None) -> tuple[DriveField, ...]:
    return tuple(replace(d, linewidth=0.0) for d in (drives or default_drives()))


def effective_rates(drive: DriveField, params: SystemParams,
                    g: float | None = None) -> tuple[float, float]:
    """Effective Raman coupling and scattering rate of a single drive tone."""
    if drive.detuning == 0:
        raise ValueError("effective rates need a non-zero detuning")
    g = params.g0 if g is None else g
    c_g = params.cg_map[drive.branch]
    ratio = drive.rabi / (2 * abs(drive.detuning))
    return c_g * g * ratio, params.c_gamma * params.gamma * ratio ** 2


def combine_bichromatic(g1_eff: float, g2_eff: float, gamma1_eff: float,
                        gamma2_eff: float) -> tuple[float, float]:
    if min(g1_eff, g2_eff, gamma1_eff, gamma2_eff) < 0:
        raise ValueError("effective rates must be non-negative")
    return float(np.hypot(g1_eff, g2_eff)), float(gamma1_eff + gamma2_eff)


def cooperativity(g: float, kappa: float, gamma: float) -> float:
    return g ** 2 / (2 * kappa * gamma)


@dataclass(frozen=True)
class TimeDependence:
    """``static``: term used as is.  ``oscillatory``: ``O e^{-i nu t} + h.c.``."""

    kind: str = "static"
    frequency: float = 0.0

    def __post_init__(self):
        if self.kind not in ("static", "oscillatory"):
            raise ValueError(f"unknown time dependence {self.kind!r}")


STATIC = TimeDependence()


@dataclass(frozen=True)
class CollapseChannel:
    operator: Operator
    rate: float
    label: str
    ion: int | None = None

    @property
    def name(self) -> str:
        return self.label if self.ion is None else f"{self.label}[{self.ion + 1}]"

    def jump_operator(self) -> sp.csr_matrix:
        return self.operator.entries * np.sqrt(self.rate)


CAVITY_LABELS = ("cavity_H", "cavity_V")
SPONT_LABELS = ("spont_S", "spont_D", "spont_D'")


@dataclass(frozen=True)
class SystemModel:
    space: HilbertSpace
    hamiltonian_terms: tuple[tuple[Operator, TimeDependence], ...]
    collapse_channels: tuple[CollapseChannel, ...]

    def __post_init__(self):
        names = [c.name for c in self.collapse_channels]
        if len(set(names)) != len(names):
            raise ValueError(f"collapse channel names must be unique: {names}")
        for op, td in self.hamiltonian_terms:
            if op.space != self.space:
                raise ValueError("Hamiltonian term lives on a different space")
            if td.kind == "static" and not op.is_hermitian(1e-12 * max(1.0, _scale(op))):
                raise ValueError("static Hamiltonian term is not hermitian")
        for c in self.collapse_channels:
            if c.operator.entries.nnz == 0:
                raise ValueError(f"collapse channel {c.name} has a zero operator")

    @property
    def dim(self) -> int:
        return self.space.total_dim

    @property
    def is_static(self) -> bool:
        return all(td.kind == "static" for _, td in self.hamiltonian_terms)

    def static_hamiltonian(self) -> sp.csr_matrix:
        h = sp.csr_matrix((self.dim, self.dim), dtype=complex)
        for op, td in self.hamiltonian_terms:
            if td.kind == "static":
                h = h + op.entries
        return h.tocsr()

    def hamiltonian(self, t: float = 0.0) -> sp.csr_matrix:
        h = sp.csr_matrix((self.dim, self.dim), dtype=complex)
        for op, td in self.hamiltonian_terms:
            if td.kind == "static":
                h = h + op.entries
            else:
                ph = np.exp(-1j * td.frequency * t)
                h = h + op.entries * ph + op.entries.conj().T * np.conj(ph)
        return h.tocsr()

    def jump_operators(self) -> list[sp.csr_matrix]:
        return [c.jump_operator() for c in self.collapse_channels]

    def channel_names(self) -> list[str]:
        return [c.name for c in self.collapse_channels]

    def decay_operator(self) -> sp.csr_matrix:
        """``sum_k C_k^dagger C_k``."""
        out = sp.csr_matrix((self.dim, self.dim), dtype=complex)
        for c in self.jump_operators():
            out = out + c.conj().T @ c
        return out.tocsr()

    def effective_hamiltonian(self, t: float = 0.0) -> sp.csr_matrix:
        return (self.hamiltonian(t) - 0.5j * self.decay_operator()).tocsr()

    def without_channels(self) -> "SystemModel":
        return SystemModel(self.space, self.hamiltonian_terms, ())


def _scale(op: Operator) -> float:
    return float(np.max(np.abs(op.entries.data))) if op.entries.nnz else 0.0


def two_ion_space(cutoff: int = 2) -> HilbertSpace:
    if cutoff < 2:
        raise ValueError("photon-number cutoff must be >= 2")
    return HilbertSpace((N_LEVELS, N_LEVELS, cutoff + 1, cutoff + 1))


def _stark_shift(rabi: float, detuning: float) -> float:
    # dressed-S energy for H = -Delta |P><P| + Omega/2 (|P><S| + h.c.)
    return 0.5 * (-detuning + np.copysign(np.hypot(detuning, rabi), detuning))


def build_system(params: SystemParams | None = None,
                 drives: Sequence[DriveField] | None = None,
                 couplings: Sequence[float] | None = None,
                 cutoff: int = 2, rwa: bool = True,
                 zeeman_splitting: float = TWO_PI * 5e6) -> SystemModel:
    """Assemble the two-ion, two-mode model.

    Parameters
    ----------
    params : SystemParams
        Cavity/atomic rates and Clebsch-Gordan factors.
    drives : sequence of DriveField
        One tone for the D branch and one for the D' branch.
    couplings : sequence of float, optional
        Per-ion peak coupling; overrides ``params.g_per_ion``.
    cutoff : int
        Photon-number cutoff per mode.
    rwa : bool
        With the rotating-wave flag set the two tones are represented by one
        static S-P coupling of strength ``sqrt(Omega_1^2 + Omega_2^2)`` and the
        tone weights are folded into the branch-resolved cavity couplings, so
        each Raman branch keeps its effective coupling ``c_g g Omega_i / 2 Delta``
        and the bichromatic cross terms are dropped.  Without it each tone is
        kept separately, the D' tone oscillating at ``zeeman_splitting`` in the
        frame of the D tone.
    """
    params = params or SystemParams()
    drives = tuple(drives) if drives is not None else default_drives()
    by_branch = {d.branch: d for d in drives}
    if set(by_branch) != {"D", "D'"} or len(drives) != 2:
        raise ValueError("exactly one drive per Raman branch (D and D') is required")
    gs = tuple(params.g_per_ion if couplings is None else couplings)
    if len(gs) != 2:
        raise ValueError("two per-ion couplings are required")

    space = two_ion_space(cutoff)
    nph = cutoff + 1
    a_h = embed(destroy(nph), MODE_H, space)
    a_v = embed(destroy(nph), MODE_V, space)
    mode_op = {"H": a_h, "V": a_v}
    cg = params.cg_map
    br = params.branching_map
    d1, d2 = by_branch["D"], by_branch["D'"]
    if d1.detuning != d2.detuning and rwa:
        # the static representation needs a common intermediate detuning
        delta = 0.5 * (d1.detuning + d2.detuning)
    else:
        delta = d1.detuning
    rabi_tot = float(np.hypot(d1.rabi, d2.rabi))

    def ion_op(m: Operator, ion: int) -> Operator:
        return embed(m, ion, space)

    terms: list[tuple[Operator, TimeDependence]] = []
    zero = Operator(space, sp.csr_matrix((space.total_dim, space.total_dim), dtype=complex))
    for ion in (0, 1):
        g = gs[ion]
        diag = zero
        # frame: P sits at -Delta below the drive, Raman-resonant D/D' at the
        # light-shifted S energy
        shift = _stark_shift(rabi_tot, delta) if params.stark_compensation else 0.0
        e_d = shift + params.raman_detuning
        e_dp = e_d + (0.0 if rwa else zeeman_splitting)
        diag = diag + ion_op(projector(N_LEVELS, P), ion) * (-delta)
        diag = diag + ion_op(projector(N_LEVELS, D), ion) * e_d
        diag = diag + ion_op(projector(N_LEVELS, DP), ion) * e_dp
        diag = diag + ion_op(projector(N_LEVELS, DAUX), ion) * (e_d + params.aux_detuning)
        if diag.entries.nnz:
            terms.append((Operator(space, diag.entries, hermitian=True), STATIC))

        p_s = ion_op(transition(N_LEVELS, P, S), ion)
        if rwa:
            if rabi_tot > 0:
                w = {"D": d1.rabi / rabi_tot, "D'": d2.rabi / rabi_tot}
                drive = p_s * (0.5 * rabi_tot)
                terms.append((_herm(drive), STATIC))
            else:
                w = {"D": 0.0, "D'": 0.0}
            phases = {"D": d1.phase, "D'": d2.phase}
        else:
            w = {"D": 1.0, "D'": 1.0}
            phases = {"D": 0.0, "D'": 0.0}
            if d1.rabi > 0:
                terms.append((_herm(p_s * (0.5 * d1.rabi * np.exp(1j * d1.phase))), STATIC))
            if d2.rabi > 0:
                terms.append((p_s * (0.5 * d2.rabi * np.exp(1j * d2.phase)),
                              TimeDependence("oscillatory", zeeman_splitting)))

        # g_X (|P><X| a + a^dag |X><P|); the drive phase rides on the branch coupling
        for level, branch, mode in ((D, "D", "H"), (DP, "D'", "V")):
            gx = g * cg[branch] * w[branch] * np.exp(-1j * phases[branch])
            if gx != 0:
                op = ion_op(transition(N_LEVELS, P, level), ion) @ mode_op[mode]
                terms.append((_herm(op * gx), STATIC))
        if params.aux_cg_ratio > 0:
            gx = g * cg["D"] * w["D"] * params.aux_cg_ratio
            if gx != 0:
                op = ion_op(transition(N_LEVELS, P, DAUX), ion) @ mode_op[params.aux_mode]
                terms.append((_herm(op * gx), STATIC))

    channels: list[CollapseChannel] = []
    if params.kappa > 0:
        channels.append(CollapseChannel(a_h, 2 * params.kappa, "cavity_H"))
        channels.append(CollapseChannel(a_v, 2 * params.kappa, "cavity_V"))
    if params.gamma > 0:
        for ion in (0, 1):
            for level, label, key in ((S, "spont_S", "S"), (D, "spont_D", "D"),
                                      (DP, "spont_D'", "D'")):
                b = br[key]
                if b > 0:
                    channels.append(CollapseChannel(
                        ion_op(transition(N_LEVELS, level, P), ion),
                        2 * params.gamma * b, label, ion))
    linewidth = max(d.linewidth for d in drives)
    if linewidth > 0:
        if params.dephasing == "collective":
            op = ion_op(projector(N_LEVELS, S), 0) + ion_op(projector(N_LEVELS, S), 1)
            channels.append(CollapseChannel(op, 2 * linewidth, "laser_dephasing"))
        else:
            for ion in (0, 1):
                channels.append(CollapseChannel(ion_op(projector(N_LEVELS, S), ion),
                                                2 * linewidth, "laser_dephasing", ion))
    return SystemModel(space, tuple(terms), tuple(channels))


def _herm(op: Operator) -> Operator:
    m = op.entries + op.entries.conj().T
    return Operator(op.space, m, hermitian=True)


def ground_state(space: HilbertSpace) -> StateVector:
    """Both ions in S, both modes empty."""
    return StateVector.basis(space, (S, S, 0, 0))


def excitation_charges(space: HilbertSpace) -> tuple[sp.csr_matrix, sp.csr_matrix]:
    """Operators ``n_H - #D - #D_aux`` and ``n_V - #D'``.

    With ``aux_mode="H"`` both are conserved by the rotating-wave Hamiltonian.
    """
    nph = space.factors[MODE_H]
    num = destroy(nph).dense()
    num = num.conj().T @ num
    n_h = embed(num, MODE_H, space).entries
    n_v = embed(num, MODE_V, space).entries
    q_h, q_v = n_h.copy(), n_v.copy()
    for ion in (0, 1):
        q_h = q_h - embed(projector(N_LEVELS, D), ion, space).entries
        q_h = q_h - embed(projector(N_LEVELS, DAUX), ion, space).entries
        q_v = q_v - embed(projector(N_LEVELS, DP), ion, space).entries
    return q_h.tocsr(), q_v.tocsr()


# ---------------------------------------------------------------------------
# protocol pulses


def _pulse_on_ions(single: np.ndarray, space: HilbertSpace | None) -> Operator:
    """Apply the same single-ion unitary to both ion factors of ``space``."""
    if space is None:
        d = single.shape[0]
        space = HilbertSpace((d, d))
    u = embed(single, ION1, space) @ embed(single, ION2, space)
    return Operator(space, u.entries)


def mapping_pulse(space: HilbertSpace | None = None) -> Operator:
    """pi pulse on D' <-> S for both ions.

    Convention: ``|D'> -> |S>`` with amplitude +1 and ``|S> -> |D'>`` with
    amplitude -1; other levels untouched.  ``space`` may be the full model
    space or the bare two-ion space (default ``(5, 5)``).
    """
    u = np.eye(N_LEVELS, dtype=complex)
    u[S, S] = u[DP, DP] = 0
    u[S, DP] = 1.0
    u[DP, S] = -1.0
    if space is None:
        space = HilbertSpace((N_LEVELS, N_LEVELS))
    return _pulse_on_ions(u, space)


# Qubit basis order is (S, D).  The analysis-pulse phase is referenced a
# quarter period from the basis phase; with this choice the two-pulse parity
# at phi = pi/2 equals 2 Re(rho_SD,DS - rho_SS,DD).
ANALYSIS_PHASE_REFERENCE = np.pi / 2
QUBIT_S, QUBIT_D = 0, 1
_SX = np.array([[0, 1], [1, 0]], dtype=complex)
_SY = np.array([[0, -1j], [1j, 0]], dtype=complex)


def qubit_rotation(theta: float, phi: float,
                   phase_reference: float = ANALYSIS_PHASE_REFERENCE) -> np.ndarray:
    """Single-qubit ``exp(-i theta/2 sigma_phi)`` on the (S, D) basis."""
    ph = phi + phase_reference
    sig = np.cos(ph) * _SX + np.sin(ph) * _SY
    return np.cos(theta / 2) * np.eye(2) - 1j * np.sin(theta / 2) * sig


def analysis_rotation(theta: float, phi: float, space: HilbertSpace | None = None,
                      phase_reference: float = ANALYSIS_PHASE_REFERENCE) -> Operator:
    """Global rotation of both ions on their {S, D} qubit.

    ``space`` defaults to the two-qubit space; on a space with five-level ions
    the rotation acts on the S/D block and as identity on P, D', D_aux.
    """
    r = qubit_rotation(theta, phi, phase_reference)
    if space is None or space.factors[0] == 2:
        return _pulse_on_ions(r, space)
    u = np.eye(space.factors[0], dtype=complex)
    idx = [S, D]
    u[np.ix_(idx, idx)] = r
    return _pulse_on_ions(u, space)


def qubit_projector_indices() -> list[int]:
    """Flat indices of {S, D}^2 inside the bare (5, 5) two-ion space, in
    two-qubit order SS, SD, DS, DD."""
    sp_ = HilbertSpace((N_LEVELS, N_LEVELS))
    return [sp_.index((a, b)) for a in (S, D) for b in (S, D)]


def herald_subspace_indices() -> list[int]:
    """Flat indices of {S, D, D'}^2 inside the bare two-ion space."""
    sp_ = HilbertSpace((N_LEVELS, N_LEVELS))
    lv = (S, D, DP)
    return [sp_.index((a, b)) for a in lv for b in lv]


def bell_state(kind: str = "psi+") -> StateVector:
    """Two-qubit Bell states in the (S, D) basis."""
    s = 1 / np.sqrt(2)
    vecs = {
        "psi+": [0, s, s, 0],
        "psi-": [0, s, -s, 0],
        "phi+": [s, 0, 0, s],
        "phi-": [s, 0, 0, -s],
    }
    return StateVector(HilbertSpace((2, 2)), np.array(vecs[kind], dtype=complex), normalized=True)


def herald_target() -> StateVector:
    """sqrt(1/2)(|D D'> + |D' D>) on the bare two-ion space."""
    sp_ = HilbertSpace((N_LEVELS, N_LEVELS))
    v = np.zeros(sp_.total_dim, dtype=complex)
    v[sp_.index((D, DP))] = v[sp_.index((DP, D))] = 1 / np.sqrt(2)
    return StateVector(sp_, v, normalized=True)

