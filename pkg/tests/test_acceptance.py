"""End-to-end acceptance checks, one test per criterion.

Each test records a PASS/FAIL line that is repeated in the terminal summary.
"""
import numpy as np
import pytest

from conftest import driven_cavity_atom, random_density_matrix, record_criterion
from ionherald import estimator as E
from ionherald import geometry as G
from ionherald import herald as Hd
from ionherald import mcwf
from ionherald import model as M
from ionherald import readout as R

TWO_PI = 2 * np.pi


def check(number, ok, detail):
    record_criterion(number, bool(ok), detail)
    assert ok, detail


def brute_two_pulse_parity(rho, phi):
    def rot(theta, ph):
        ph = ph + np.pi / 2
        sig = np.array([[0, np.exp(-1j * ph)], [np.exp(1j * ph), 0]])
        return np.cos(theta / 2) * np.eye(2) - 1j * np.sin(theta / 2) * sig
    first = np.kron(rot(np.pi / 2, 0), rot(np.pi / 2, 0))
    u = np.kron(rot(np.pi / 2, phi), rot(np.pi / 2, phi)) @ first
    pops = np.real(np.diag(u @ rho @ u.conj().T))
    return pops[0] + pops[3] - pops[1] - pops[2]


# -- fast golden numbers -----------------------------------------------------

def test_criterion_01_geometry_golden_numbers():
    tilt = np.deg2rad(4.0)
    got = []
    ok = True
    for freq, d_ref, dp_ref in ((450e3, 9.6e-6, 670e-9), (1.09e6, 5.3e-6, 370e-9)):
        d = G.ion_spacing(G.TrapGeometry(omega_axial=TWO_PI * freq))
        dp = G.projected_spacing(d, tilt)
        ok &= abs(d / d_ref - 1) < 0.02 and abs(dp / dp_ref - 1) < 0.01
        got.append(f"{freq / 1e3:.0f} kHz: d={d * 1e6:.2f} um, d'={dp * 1e9:.1f} nm")
    check(1, ok, "; ".join(got))


def test_criterion_02_bound_golden_number():
    b = E.fidelity_bound(1.00, 0.86, 0.02)
    check(2, abs(b.lower_bound - 0.920) < 0.005, f"bound {b.lower_bound:.4f}")


def test_criterion_03_bound_never_exceeds_fidelity():
    rng = np.random.default_rng(3)
    worst = -np.inf
    n = 10_000
    for i in range(n):
        rho = random_density_matrix(rng, rank=1 + i % 4)
        exact, b = E.bound_from_density_matrix(rho)
        worst = max(worst, b.lower_bound - exact)
    check(3, worst <= 1e-10, f"{n} states, max(bound - F) = {worst:.3e}")


def test_criterion_04_two_pulse_identity():
    rng = np.random.default_rng(4)
    err = 0.0
    for i in range(2000):
        rho = random_density_matrix(rng, rank=1 + i % 4)
        ref = 2 * np.real(rho[1, 2] - rho[0, 3])
        err = max(err, abs(brute_two_pulse_parity(rho, np.pi / 2) - ref),
                  abs(E.ideal_parity(rho, "two_pulse", np.pi / 2) - ref))
    check(4, err < 1e-10, f"2000 states, max deviation {err:.2e}")


# -- trajectory engine -------------------------------------------------------

def test_criterion_05_unraveling_matches_master_equation():
    model, psi0 = driven_cavity_atom()
    t_max, dt, every = 2e-6, 2e-9, 10
    _, rho = mcwf.master_equation(model, psi0.dm(), t_max, dt * every)
    ens = mcwf.run_ensemble(model, psi0, t_max, dt, 2000, seed=11, sample_every=every)
    dist = max(mcwf.trace_distance(a, b) for a, b in zip(ens.rho, rho))
    check(5, dist < 0.01, f"dim {model.space.total_dim}, 2000 trajectories, "
                          f"max trace distance {dist:.2e} over {len(rho)} points")


@pytest.fixture(scope="module")
def ideal_run():
    m = M.build_system(M.ideal_params(), M.ideal_drives())
    return Hd.simulate_heralds(m, 2000, seed=6, window=60e-6, keep_records=True)


IDEAL_DURATIONS = (5e-6, 10e-6, 20e-6, 40e-6, 60e-6)


def test_criterion_06_ideal_limit_herald(ideal_run):
    F = np.array([Hd.event_fidelity(e) for e in ideal_run.events])
    p = Hd.herald_probability_curve(ideal_run.records, IDEAL_DURATIONS)
    sigma = ideal_run.probability_sigma
    fid_ok = F.size > 0 and F.min() > 0.99
    mono_ok = bool(np.all(np.diff(p) >= 0))
    half_ok = abs(p[-1] - 0.5) < 3 * sigma
    check(6, fid_ok and mono_ok and half_ok,
          f"{F.size} heralds, min F {F.min():.6f}; p(duration) = "
          + ", ".join(f"{x:.3f}" for x in p)
          + f"; long-pulse limit {p[-1]:.3f} +/- {sigma:.3f} vs 0.5")


def test_ideal_herald_probability_saturates_at_one_third(ideal_run):
    # with one photon emitted the shared mode leaves the other ion no preferred
    # polarization, so HV, HH and VV end up equally likely
    p = Hd.herald_probability_curve(ideal_run.records, IDEAL_DURATIONS)
    assert abs(p[-1] - 1 / 3) < 3 * ideal_run.probability_sigma
    assert abs(p[-1] - p[-2]) < 0.01


# -- default-parameter ensemble ----------------------------------------------

@pytest.fixture(scope="module")
def default_run():
    return Hd.simulate_heralds(M.build_system(), 10_000, seed=2024, window=40e-6)


def test_criterion_07_fidelity_vs_T_shape(default_run):
    bins = [b for b in Hd.fidelity_vs_T(default_run.events) if b.count > 1]
    mono = all(b.mean <= a.mean + np.hypot(a.stderr, b.stderr) for a, b in zip(bins, bins[1:]))
    first, last = bins[0], bins[-1]
    ok = mono and first.high <= 0.5e-6 and first.mean > 0.85 and last.mean < 0.5
    check(7, ok, f"{len(default_run.events)} heralds; bins "
          + ", ".join(f"{b.mean:.3f}" for b in bins) + f"; monotone within 1 sigma: {mono}")


def test_criterion_08_negative_coherence(default_run):
    sel = [e for e in default_run.events if e.scattered_between and e.T > 4e-6]
    c = np.array([Hd.event_coherence(e) for e in sel])
    mean, err = c.mean(), c.std(ddof=1) / np.sqrt(c.size)
    check(8, c.size >= 100 and mean + 3 * err < 0,
          f"{c.size} events, Re<SD|rho|DS> = {mean:.4f} +/- {err:.4f}")


def test_criterion_11_rate_sanity(default_run):
    timing = Hd.SequenceTiming()
    p = Hd.detected_herald_probability(default_run.probability, 0.075)
    frac = np.mean([e.T <= 0.5e-6 for e in default_run.events])
    r_all = Hd.sequence_rate(timing, p)
    r_short = Hd.sequence_rate(timing, p, frac)
    ok = 4.3 / 2 <= r_all <= 4.3 * 2 and 0.2 / 2 <= r_short <= 0.2 * 2
    check(11, ok, f"p_herald {default_run.probability:.4f}, rates {r_all:.2f}/s all, "
                  f"{r_short:.3f}/s with T <= 0.5 us")


# -- estimators --------------------------------------------------------------

def test_criterion_09_estimator_end_to_end():
    psi = M.bell_state("psi+").dm().entries
    rho = 0.85 * psi + 0.1 * np.eye(4) / 4 + 0.05 * M.bell_state("phi+").dm().entries
    _, ref = E.bound_from_density_matrix(rho)
    hits = 0
    for i in range(100):
        data = E.simulate_measurement_set(rho, shots=50, phases=E.default_phases(25), seed=i)
        b, _, _ = E.bound_from_measurements(data)
        hits += abs(b.lower_bound - ref.lower_bound) <= 3 * b.sigma
    check(9, hits >= 90, f"{hits}/100 within 3 sigma of {ref.lower_bound:.4f}")


def test_criterion_10_readout_coverage():
    truth = R.MixtureModel((10.0, 110.0, 210.0), (10.0, 15.0, 18.0))
    p_true = np.array([0.2, 0.5, 0.3])
    covered = 0
    for i in range(500):
        counts, _ = truth.sample(1000, probabilities=p_true, rng=1000 + i)
        est = R.estimate_probabilities(R.classify(counts, R.fit_mixture(counts)))
        covered += bool(np.all(np.abs(est.p - p_true) <= 2 * (est.sigma_stat + est.sigma_proj)))
    check(10, covered >= 475, f"{covered}/500 repetitions cover all three probabilities")
