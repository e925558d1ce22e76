"""Command-line entry point: ``ionherald {geometry,simulate,analyze,readout-fit}``."""
from __future__ import annotations

import argparse
import csv
import datetime as _dt
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import __version__, estimator, geometry, herald, mcwf, readout
from .config import ConfigError, RunConfig, example_config, load_config
from .model import bell_state, build_system, ideal_drives, ideal_params

EXIT_OK, EXIT_CONFIG, EXIT_NUMERICAL, EXIT_IO = 0, 2, 3, 4

log = logging.getLogger("ionherald")


class _Run:
    """Collects output files and writes the manifest last."""

    def __init__(self, cfg: RunConfig, command: str):
        self.cfg = cfg
        self.command = command
        self.out = cfg.output_dir
        self.out.mkdir(parents=True, exist_ok=True)
        self.files: list[str] = []
        self.started = _now()

    def path(self, name: str) -> Path:
        self.files.append(name)
        return self.out / name

    def write_json(self, name: str, obj) -> None:
        with open(self.path(name), "w", encoding="utf-8") as fh:
            json.dump(obj, fh, indent=2, sort_keys=True)

    def finish(self, seeds) -> None:
        manifest = {
            "command": self.command,
            "config_sha256": self.cfg.hash,
            "version": __version__,
            "seeds": list(seeds),
            "started": self.started,
            "finished": _now(),
            "files": sorted(self.files),
            "config": self.cfg.raw,
        }
        with open(self.out / "manifest.json", "w", encoding="utf-8") as fh:
            json.dump(manifest, fh, indent=2, sort_keys=True)


def _now() -> str:
    return _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds")


# ---------------------------------------------------------------------------


def cmd_geometry(cfg: RunConfig) -> int:
    run = _Run(cfg, "geometry")
    trap, cav = cfg.trap, cfg.cavity_geometry
    d = geometry.ion_spacing(trap)
    dp = geometry.projected_spacing(d, trap.trap_tilt)
    geo = cfg.raw["geometry"]
    y = np.linspace(geo["scan_min_m"], geo["scan_max_m"], int(geo["scan_points"]))
    prof = geometry.coupling_profile(trap, cav, y, phase0=float(geo["phase0_rad"]))
    report = {
        "trap_frequency_hz": geo["trap_frequency_hz"],
        "ion_spacing_m": d,
        "projected_spacing_m": dp,
        "phase_difference_rad": geometry.standing_wave_phase_difference(dp, cav.lambda_repump),
        "phase_difference_pi": geometry.standing_wave_phase_difference(dp, cav.lambda_repump)
        / np.pi,
        "phase_difference_raman_pi": geometry.standing_wave_phase_difference(
            dp, cav.lambda_raman) / np.pi,
        "peak_coupling_hz": geometry.peak_coupling(cfg.params.g0, trap, cav) / (2 * np.pi),
    }
    geometry.write_profile_csv(run.path("coupling_profile.csv"), prof)
    scan = fit = None
    scan_path = cfg.extras.get("geometry.scan_csv")
    if scan_path is not None:
        ys, counts = geometry.read_scan_csv(scan_path)
        fit = geometry.fit_standing_wave(ys, counts, calibration=float(geo["calibration"]))
        scan = (ys, counts / float(geo["calibration"]))
        geometry.write_fit_json(run.path("standing_wave_fit.json"), fit)
        report["fit_phase_difference_pi"] = fit.phase_difference / np.pi
    run.write_json("geometry.json", report)
    if cfg.plots:
        from .plotting import plot_profile
        plot_profile(run.path("coupling_profile.png"), prof, fit, scan)
    print(f"d = {d * 1e6:.3f} um, d' = {dp * 1e9:.1f} nm, "
          f"phase difference = {report['phase_difference_pi']:.3f} pi")
    run.finish([])
    return EXIT_OK


def _model(cfg: RunConfig):
    params, drives = cfg.params, cfg.drives
    if cfg.ideal:
        params, drives = ideal_params(params), ideal_drives(drives)
    return build_system(params, drives, cutoff=cfg.cutoff, rwa=cfg.rwa,
                        zeeman_splitting=cfg.zeeman_splitting)


def cmd_simulate(cfg: RunConfig) -> int:
    run = _Run(cfg, "simulate")
    model = _model(cfg)
    result = herald.simulate_heralds(model, cfg.n_traj, cfg.seed, window=cfg.t_max, dt=cfg.dt,
                                     workers=cfg.workers, keep_records=cfg.save_trajectories)
    events = result.events
    herald.write_events_csv(run.path("events.csv"), events)
    if cfg.save_trajectories:
        mcwf.write_records(run.path("trajectories.jsonl"), result.records, include_states=False)
    curve = herald.fidelity_vs_T(events, cfg.bin_edges) if events else []
    herald.write_curve_csv(run.path("fidelity_vs_T.csv"), curve)
    p = result.probability
    p_det = herald.detected_herald_probability(p, cfg.detection_efficiency)
    short = sum(e.T <= cfg.filter_T for e in events)
    frac = short / len(events) if events else 0.0
    rates = {
        "n_traj": cfg.n_traj,
        "n_heralds": len(events),
        "p_herald": p,
        "p_herald_sigma": result.probability_sigma,
        "detection_efficiency": cfg.detection_efficiency,
        "p_detected": p_det,
        "filter_T_s": cfg.filter_T,
        "filtered_fraction": frac,
        "rate_all_per_s": herald.sequence_rate(cfg.timing, p_det),
        "rate_filtered_per_s": herald.sequence_rate(cfg.timing, p_det, frac),
    }
    run.write_json("rates.json", rates)
    if cfg.plots and curve:
        from .plotting import plot_fidelity_curve
        plot_fidelity_curve(run.path("fidelity_vs_T.png"), curve)
    print(f"{len(events)} heralds from {cfg.n_traj} trajectories; "
          f"rate {rates['rate_all_per_s']:.2f}/s, filtered {rates['rate_filtered_per_s']:.3f}/s")
    run.finish([cfg.seed])
    return EXIT_OK


def _sniff_header(path: Path) -> tuple[str, ...]:
    with open(path, newline="", encoding="utf-8") as fh:
        row = next(csv.reader(fh), [])
    return tuple(h.strip() for h in row)


def _demo_state() -> np.ndarray:
    """A Psi+ state with some white noise, used when no data file is given."""
    psi = bell_state("psi+").dm().entries
    return 0.9 * psi + 0.1 * np.eye(4) / 4


def cmd_analyze(cfg: RunConfig, input_path: Path | None = None) -> int:
    run = _Run(cfg, "analyze")
    src = input_path or cfg.extras.get("analysis.measurements_csv") \
        or cfg.extras.get("analysis.events_csv")
    if src is not None and _sniff_header(Path(src)) == herald.EVENT_HEADER:
        rows = herald.read_events_csv(src)
        curve = herald.bin_fidelities([r["t2_s"] - r["t1_s"] for r in rows],
                                      [r["fidelity"] for r in rows], cfg.bin_edges)
        herald.write_curve_csv(run.path("fidelity_vs_T.csv"), curve)
        if cfg.plots:
            from .plotting import plot_fidelity_curve
            plot_fidelity_curve(run.path("fidelity_vs_T.png"), curve)
        run.finish([])
        return EXIT_OK
    if src is not None:
        data = estimator.split_measurements(estimator.read_measurements_csv(src))
        extra = {"source": str(src)}
    else:
        rho = _demo_state()
        data = estimator.simulate_measurement_set(
            rho, shots=cfg.shots_per_phase, phases=estimator.default_phases(cfg.n_phases),
            population_shots=cfg.population_shots, seed=cfg.seed)
        estimator.write_measurements_csv(run.path("measurements.csv"),
                                         [data.populations, *data.two_pulse, *data.one_pulse])
        exact, oracle = estimator.bound_from_density_matrix(rho)
        extra = {"source": "synthetic", "exact_fidelity": exact,
                 "infinite_shot_bound": oracle.lower_bound}
    bound, two, one = estimator.bound_from_measurements(data)
    estimator.write_bound_json(run.path("fidelity_bound.json"), bound, extra)
    estimator.write_parity_csv(run.path("parity_two_pulse.csv"), two, "two_pulse")
    estimator.write_parity_csv(run.path("parity_one_pulse.csv"), one, "one_pulse")
    if cfg.plots:
        from .plotting import plot_parity
        plot_parity(run.path("parity.png"), two, one)
    print(f"F >= {bound.lower_bound:.3f} +/- {bound.sigma:.3f}")
    run.finish([cfg.seed] if src is None else [])
    return EXIT_OK


def cmd_readout_fit(cfg: RunConfig, input_path: Path | None = None) -> int:
    run = _Run(cfg, "readout-fit")
    ro = cfg.raw["readout"]
    src = input_path or cfg.extras.get("readout.shots_csv")
    if src is not None:
        counts = readout.read_shots_csv(src)
        seeds = []
    else:
        truth = readout.MixtureModel(tuple(ro["synthetic_means"]), tuple(ro["synthetic_widths"]))
        counts, _ = truth.sample(int(ro["synthetic_shots"]), ro["synthetic_probabilities"],
                                 rng=cfg.seed)
        readout.write_shots_csv(run.path("shots.csv"), counts)
        seeds = [cfg.seed]
    model = readout.fit_mixture(counts)
    est = readout.estimate_probabilities(readout.classify(counts, model), ro["edge_rule"])
    readout.write_readout_json(run.path("readout.json"), model, est)
    if cfg.plots:
        from .plotting import plot_readout
        plot_readout(run.path("readout.png"), counts, model)
    print("p = " + ", ".join(f"{p:.4f} +/- {s:.4f}" for p, s in zip(est.p, est.sigma)))
    run.finish(seeds)
    return EXIT_OK


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="ionherald", description=__doc__)
    ap.add_argument("--version", action="version", version=__version__)
    sub = ap.add_subparsers(dest="command", required=True)
    for name, help_ in (("geometry", "ion spacing, standing-wave phases, coupling profile"),
                        ("simulate", "trajectory ensemble, heralds, fidelity vs T, rates"),
                        ("analyze", "parity fits and fidelity bound from measurement CSVs"),
                        ("readout-fit", "Gaussian-mixture fit of fluorescence counts"),
                        ("example-config", "print a complete config with defaults")):
        p = sub.add_parser(name, help=help_)
        if name == "example-config":
            continue
        p.add_argument("--config", required=True, help="JSON configuration file")
        p.add_argument("--out", help="output directory (overrides output.dir)")
        p.add_argument("--seed", type=int, help="run seed (overrides simulation.seed)")
        if name in ("analyze", "readout-fit"):
            p.add_argument("--input", type=Path, help="data file to analyze")
        p.add_argument("-v", "--verbose", action="store_true")
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.command == "example-config":
        json.dump(example_config(), sys.stdout, indent=2)
        print()
        return EXIT_OK
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    if args.seed is not None and not 0 <= args.seed < 2 ** 64:
        print("error: --seed must be an unsigned 64-bit integer", file=sys.stderr)
        return EXIT_CONFIG
    try:
        cfg = load_config(args.config, args.command, args.seed, args.out)
        if args.command == "geometry":
            return cmd_geometry(cfg)
        if args.command == "simulate":
            return cmd_simulate(cfg)
        if args.command == "analyze":
            return cmd_analyze(cfg, args.input)
        return cmd_readout_fit(cfg, args.input)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (mcwf.SimulationError, geometry.FitFailure, readout.MixtureFitError,
            np.linalg.LinAlgError, FloatingPointError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    except ValueError as exc:
        # malformed input files surface as ValueError with file:line context
        print(f"input error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
