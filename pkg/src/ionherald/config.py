"""Run configuration: JSON file with SI keys carrying explicit unit suffixes.

Frequencies (``*_hz``) are ordinary frequencies and are multiplied by 2 pi on
load; lengths end in ``_m``, durations in ``_s``, angles in ``_rad``.
"""
from __future__ import annotations

import copy
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .geometry import CA40_MASS, CavityGeometry, TrapGeometry
from .herald import DEFAULT_BIN_EDGES, SequenceTiming
from .model import TWO_PI, DriveField, SystemParams, calibrate_cavity_cg

DEFAULT_DETECTION_EFFICIENCY = 0.075


class ConfigError(ValueError):
    def __init__(self, problems):
        self.problems = list(problems) if not isinstance(problems, str) else [problems]
        super().__init__("invalid configuration:\n  " + "\n  ".join(self.problems))


DEFAULTS: dict = {
    "cavity": {
        "kappa_hz": 50e3,
        "g0_hz": 1.4e6,
        "g_eff_target_hz": 37e3,
        "cutoff": 2,
        "waist_m": 10e-6,
        "lambda_repump_m": 866e-9,
        "lambda_raman_m": 854e-9,
        "node_offset_m": 0.0,
    },
    "ions": {
        "mass_kg": CA40_MASS,
        "coupling_hz": [1.0e6, 1.0e6],
        "gamma_hz": 11.5e6,
        "c_gamma": 1.0,
        "aux_detuning_hz": 10e6,
        "aux_cg_ratio": 0.1,
        "raman_detuning_hz": 0.0,
    },
    "drives": [
        {"branch": "D", "rabi_hz": 47e6, "detuning_hz": 400e6, "phase_rad": 0.0,
         "linewidth_hz": 10e3},
        {"branch": "D'", "rabi_hz": 29e6, "detuning_hz": 400e6, "phase_rad": 0.0,
         "linewidth_hz": 10e3},
    ],
    "branching": {"S": 0.94, "D": 0.006, "D'": 0.054},
    "simulation": {
        "n_traj": 1000,
        "dt_s": 1e-9,
        "t_max_s": 40e-6,
        "seed": None,
        "workers": 1,
        "rwa": True,
        "zeeman_splitting_hz": 5e6,
        "dephasing": "collective",
        "ideal": False,
        "save_trajectories": False,
    },
    "geometry": {
        "trap_frequency_hz": 1.09e6,
        "trap_tilt_rad": float(np.deg2rad(4.0)),
        "piezo_tilt_rad": float(np.deg2rad(5.0)),
        "scan_min_m": -40e-6,
        "scan_max_m": 40e-6,
        "scan_points": 401,
        "phase0_rad": 0.0,
        "calibration": 1.0,
        "scan_csv": None,
    },
    "analysis": {
        "bin_edges_s": list(DEFAULT_BIN_EDGES),
        "shots_per_phase": 50,
        "n_phases": 25,
        "population_shots": None,
        "measurements_csv": None,
        "events_csv": None,
    },
    "timing": {
        "prep_s": 1.7e-3,
        "raman_window_s": 40e-6,
        "max_retries": 10,
        "detection_s": 2e-3,
        "mapping_s": 10e-6,
        "rotation_s": 0.0,
        "detection_efficiency": DEFAULT_DETECTION_EFFICIENCY,
        "filter_T_s": 0.5e-6,
    },
    "readout": {
        "shots_csv": None,
        "edge_rule": "sqrt_count",
        "synthetic_means": [10.0, 110.0, 210.0],
        "synthetic_widths": [10.0, 15.0, 18.0],
        "synthetic_probabilities": [0.25, 0.5, 0.25],
        "synthetic_shots": 10000,
    },
    "output": {"dir": "out", "plots": True},
}

# keys that every config file must state explicitly (seeds are never implicit)
REQUIRED = {
    "geometry": [("ions", "mass_kg"), ("geometry", "trap_frequency_hz")],
    "simulate": [("simulation", "seed"), ("simulation", "n_traj")],
    "analyze": [("simulation", "seed")],
    "readout-fit": [("simulation", "seed")],
}

_DRIVE_KEYS = {"branch", "rabi_hz", "detuning_hz", "phase_rad", "linewidth_hz"}


@dataclass
class RunConfig:
    raw: dict
    params: SystemParams
    drives: tuple[DriveField, DriveField]
    trap: TrapGeometry
    cavity_geometry: CavityGeometry
    timing: SequenceTiming
    cutoff: int
    n_traj: int
    dt: float
    t_max: float
    seed: int | None
    workers: int
    rwa: bool
    zeeman_splitting: float
    ideal: bool
    save_trajectories: bool
    bin_edges: tuple[float, ...]
    shots_per_phase: int
    n_phases: int
    population_shots: int | None
    detection_efficiency: float
    filter_T: float
    output_dir: Path
    plots: bool
    source: Path | None = None
    extras: dict = field(default_factory=dict)

    @property
    def hash(self) -> str:
        return config_hash(self.raw)


def canonical_text(raw: dict) -> str:
    return json.dumps(raw, sort_keys=True, separators=(",", ":"), allow_nan=False)


def config_hash(raw: dict) -> str:
    return hashlib.sha256(canonical_text(raw).encode("utf-8")).hexdigest()


def _merge(user: dict, problems: list[str]) -> dict:
    out = copy.deepcopy(DEFAULTS)
    if not isinstance(user, dict):
        problems.append("top level must be a JSON object")
        return out
    for sec, val in user.items():
        if sec not in DEFAULTS:
            problems.append(f"unknown section '{sec}'")
            continue
        if sec == "drives":
            if not isinstance(val, list) or len(val) != 2:
                problems.append("'drives' must be a list of two drive objects")
                continue
            drives = []
            for i, d in enumerate(val):
                if not isinstance(d, dict):
                    problems.append(f"drives[{i}] must be an object")
                    continue
                for k in sorted(set(d) - _DRIVE_KEYS):
                    problems.append(f"unknown key 'drives[{i}].{k}'")
                for k in ("branch", "rabi_hz", "detuning_hz"):
                    if k not in d:
                        problems.append(f"missing key 'drives[{i}].{k}'")
                drives.append({"phase_rad": 0.0, "linewidth_hz": 0.0} | d)
            out["drives"] = drives
            continue
        if not isinstance(val, dict):
            problems.append(f"section '{sec}' must be an object")
            continue
        for key, v in val.items():
            if key not in DEFAULTS[sec]:
                problems.append(f"unknown key '{sec}.{key}'")
            else:
                out[sec][key] = v
    return out


def _num(raw, sec, key, problems, positive=False, nonneg=False, integer=False):
    v = raw[sec][key]
    name = f"{sec}.{key}"
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        problems.append(f"'{name}' must be a number, got {v!r}")
        return None
    if integer and int(v) != v:
        problems.append(f"'{name}' must be an integer")
        return None
    if positive and not v > 0:
        problems.append(f"'{name}' must be positive")
    if nonneg and v < 0:
        problems.append(f"'{name}' must be non-negative")
    return int(v) if integer else float(v)


def parse_config(user: dict, command: str | None = None, seed_override: int | None = None,
                 out_override: str | None = None, source: Path | None = None) -> RunConfig:
    """Validate ``user`` against the schema and build the typed configuration.

    Every problem found is reported in one :class:`ConfigError`.
    """
    problems: list[str] = []
    for sec, key in REQUIRED.get(command or "", []):
        if key == "seed" and seed_override is not None:
            continue
        if not isinstance(user, dict) or key not in (user.get(sec) or {}):
            problems.append(f"missing required key '{sec}.{key}'")
    raw = _merge(user, problems)
    if seed_override is not None:
        raw["simulation"]["seed"] = int(seed_override)
    if out_override is not None:
        raw["output"]["dir"] = str(out_override)

    c, io, sim, geo, an, tm = (raw[k] for k in ("cavity", "ions", "simulation", "geometry",
                                                "analysis", "timing"))
    kappa = _num(raw, "cavity", "kappa_hz", problems, nonneg=True)
    g0 = _num(raw, "cavity", "g0_hz", problems, positive=True)
    g_target = _num(raw, "cavity", "g_eff_target_hz", problems, positive=True)
    cutoff = _num(raw, "cavity", "cutoff", problems, integer=True)
    if cutoff is not None and cutoff < 2:
        problems.append("'cavity.cutoff' must be >= 2")
    gamma = _num(raw, "ions", "gamma_hz", problems, nonneg=True)
    mass = _num(raw, "ions", "mass_kg", problems, positive=True)
    couplings = io["coupling_hz"]
    if (not isinstance(couplings, list) or len(couplings) != 2
            or not all(isinstance(x, (int, float)) and x >= 0 for x in couplings)):
        problems.append("'ions.coupling_hz' must be a list of two non-negative numbers")
        couplings = [0.0, 0.0]

    drives = []
    for i, d in enumerate(raw["drives"]):
        try:
            drives.append(DriveField(rabi=TWO_PI * float(d["rabi_hz"]),
                                     detuning=TWO_PI * float(d["detuning_hz"]),
                                     branch=str(d["branch"]), phase=float(d["phase_rad"]),
                                     linewidth=TWO_PI * float(d["linewidth_hz"])))
        except (KeyError, TypeError, ValueError) as exc:
            problems.append(f"drives[{i}]: {exc}")
    br = raw["branching"]
    if not isinstance(br, dict) or set(br) != {"S", "D", "D'"}:
        problems.append("'branching' needs exactly the keys S, D, D'")

    if sim["dephasing"] not in ("collective", "independent"):
        problems.append("'simulation.dephasing' must be 'collective' or 'independent'")
    seed = sim["seed"]
    if seed is not None and (isinstance(seed, bool) or not isinstance(seed, int) or seed < 0):
        problems.append("'simulation.seed' must be a non-negative integer")
    for key in ("dt_s", "t_max_s"):
        _num(raw, "simulation", key, problems, positive=True)
    n_traj = _num(raw, "simulation", "n_traj", problems, integer=True)
    if n_traj is not None and n_traj < 1:
        problems.append("'simulation.n_traj' must be >= 1")
    workers = _num(raw, "simulation", "workers", problems, integer=True)
    for key in ("trap_frequency_hz",):
        _num(raw, "geometry", key, problems, positive=True)
    _num(raw, "geometry", "scan_points", problems, integer=True, positive=True)
    edges = an["bin_edges_s"]
    if (not isinstance(edges, list) or len(edges) < 2
            or np.any(np.diff(np.asarray(edges, dtype=float)) <= 0)):
        problems.append("'analysis.bin_edges_s' must be a strictly increasing list")
    eff = _num(raw, "timing", "detection_efficiency", problems, nonneg=True)
    if eff is not None and eff > 1:
        problems.append("'timing.detection_efficiency' must lie in [0, 1]")
    if raw["readout"]["edge_rule"] not in ("sqrt_count", "conventional"):
        problems.append("'readout.edge_rule' must be 'sqrt_count' or 'conventional'")
    if problems:
        raise ConfigError(problems)

    try:
        drives_t = tuple(drives)
        cg = calibrate_cavity_cg(drives_t, g_ref=TWO_PI * g0, g_eff_target=TWO_PI * g_target)
        params = SystemParams(
            kappa=TWO_PI * kappa, gamma=TWO_PI * gamma, g0=TWO_PI * g0,
            g_per_ion=tuple(TWO_PI * float(x) for x in couplings),
            branching=tuple((k, float(br[k])) for k in ("S", "D", "D'")),
            cg_cavity=tuple(sorted(cg.items())), c_gamma=float(io["c_gamma"]),
            aux_detuning=TWO_PI * float(io["aux_detuning_hz"]),
            aux_cg_ratio=float(io["aux_cg_ratio"]),
            raman_detuning=TWO_PI * float(io["raman_detuning_hz"]),
            dephasing=sim["dephasing"])
        trap = TrapGeometry(omega_axial=TWO_PI * float(geo["trap_frequency_hz"]), ion_mass=mass,
                            trap_tilt=float(geo["trap_tilt_rad"]),
                            piezo_tilt=float(geo["piezo_tilt_rad"]))
        cav = CavityGeometry(lambda_repump=float(c["lambda_repump_m"]),
                             lambda_raman=float(c["lambda_raman_m"]),
                             waist=float(c["waist_m"]), node_offset=float(c["node_offset_m"]))
        timing = SequenceTiming(prep=float(tm["prep_s"]), raman_window=float(tm["raman_window_s"]),
                                max_retries=int(tm["max_retries"]),
                                detection=float(tm["detection_s"]),
                                mapping=float(tm["mapping_s"]), rotation=float(tm["rotation_s"]))
    except (ValueError, TypeError) as exc:
        raise ConfigError([str(exc)]) from exc

    return RunConfig(
        raw=raw, params=params, drives=drives_t, trap=trap, cavity_geometry=cav, timing=timing,
        cutoff=cutoff, n_traj=n_traj, dt=float(sim["dt_s"]), t_max=float(sim["t_max_s"]),
        seed=seed, workers=max(1, workers), rwa=bool(sim["rwa"]),
        zeeman_splitting=TWO_PI * float(sim["zeeman_splitting_hz"]), ideal=bool(sim["ideal"]),
        save_trajectories=bool(sim["save_trajectories"]),
        bin_edges=tuple(float(x) for x in edges), shots_per_phase=int(an["shots_per_phase"]),
        n_phases=int(an["n_phases"]),
        population_shots=None if an["population_shots"] is None else int(an["population_shots"]),
        detection_efficiency=float(eff), filter_T=float(tm["filter_T_s"]),
        output_dir=Path(raw["output"]["dir"]), plots=bool(raw["output"]["plots"]), source=source)


def load_config(path, command: str | None = None, seed_override: int | None = None,
                out_override: str | None = None) -> RunConfig:
    """Read and validate a JSON config file."""
    p = Path(path)
    text = p.read_text(encoding="utf-8")
    try:
        user = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError([f"{p}: not valid JSON ({exc})"]) from exc
    cfg = parse_config(user, command, seed_override, out_override, source=p)
    # relative input paths resolve against the config file location
    for sec, key in (("geometry", "scan_csv"), ("analysis", "measurements_csv"),
                     ("analysis", "events_csv"), ("readout", "shots_csv")):
        v = cfg.raw[sec][key]
        if v is not None:
            cfg.extras[f"{sec}.{key}"] = (p.parent / v) if not Path(v).is_absolute() else Path(v)
    return cfg


def example_config() -> dict:
    """A complete config with every key at its default (seed set to 1)."""
    raw = copy.deepcopy(DEFAULTS)
    raw["simulation"]["seed"] = 1
    return raw
