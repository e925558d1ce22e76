import numpy as np
import pytest
import scipy.sparse as sp
from scipy.integrate import trapezoid
from hypothesis import given, settings
from hypothesis import strategies as st

from ionherald import mcwf
from ionherald import model as M
from ionherald.qops import (HilbertSpace, Operator, StateVector, destroy, embed, projector,
                            transition)


@pytest.fixture(scope="module")
def default_model():
    return M.build_system()


def dense_hamiltonian(model):
    return model.static_hamiltonian().toarray()


# -- parameter types ---------------------------------------------------------

def test_drive_field_validation():
    with pytest.raises(ValueError):
        M.DriveField(-1.0, 1.0, "D")
    with pytest.raises(ValueError):
        M.DriveField(1.0, 1.0, "P")
    with pytest.raises(ValueError):
        M.DriveField(1.0, np.inf, "D")


def test_system_params_validation():
    with pytest.raises(ValueError):
        M.SystemParams(kappa=-1.0)
    with pytest.raises(ValueError):
        M.SystemParams(branching=(("S", 0.9), ("D", 0.05), ("D'", 0.06)))
    with pytest.raises(ValueError):
        M.SystemParams(g_per_ion=(1.0,))
    assert sum(M.SystemParams().branching_map.values()) == pytest.approx(1.0, abs=1e-12)


def test_effective_rates_zero_drive():
    d = M.DriveField(0.0, M.DELTA_RAMAN, "D")
    assert M.effective_rates(d, M.SystemParams()) == (0.0, 0.0)


def test_effective_rates_need_detuning():
    with pytest.raises(ValueError):
        M.effective_rates(M.DriveField(1.0, 0.0, "D"), M.SystemParams())


@settings(max_examples=30, deadline=None)
@given(st.floats(1e5, 1e9), st.floats(1e7, 1e10), st.floats(1e5, 1e7))
def test_effective_rates_scaling(rabi, detuning, g):
    params = M.SystemParams()
    d = M.DriveField(rabi, detuning, "D'")
    g_eff, gam_eff = M.effective_rates(d, params, g)
    ratio = rabi / (2 * detuning)
    assert g_eff == pytest.approx(params.cg_map["D'"] * g * ratio, rel=1e-12)
    assert gam_eff == pytest.approx(params.c_gamma * params.gamma * ratio ** 2, rel=1e-12)
    g2, gam2 = M.effective_rates(M.DriveField(2 * rabi, detuning, "D'"), params, g)
    assert g2 == pytest.approx(2 * g_eff, rel=1e-12)
    assert gam2 == pytest.approx(4 * gam_eff, rel=1e-12)


def test_combine_bichromatic():
    assert M.combine_bichromatic(3.0, 4.0, 1.0, 2.0) == (5.0, 3.0)
    assert M.combine_bichromatic(2.0, 0.0, 7.0, 0.0) == (2.0, 7.0)
    with pytest.raises(ValueError):
        M.combine_bichromatic(-1.0, 0.0, 0.0, 0.0)


def test_calibrated_couplings_hit_target():
    params = M.SystemParams()
    g = [M.effective_rates(d, params)[0] for d in M.default_drives()]
    g_tot, _ = M.combine_bichromatic(*g, 0.0, 0.0)
    assert g_tot == pytest.approx(M.G_EFF_TARGET, rel=1e-12)
    assert g[0] == pytest.approx(g[1], rel=1e-12)


def test_cooperativity():
    assert M.cooperativity(2.0, 1.0, 1.0) == 2.0


# -- model assembly ----------------------------------------------------------

def test_dimensions_and_channels(default_model):
    assert default_model.dim == 225
    assert default_model.space.factors == (5, 5, 3, 3)
    names = default_model.channel_names()
    assert len(names) == len(set(names))
    assert {"cavity_H", "cavity_V", "laser_dephasing"} <= set(names)
    assert "spont_D'[2]" in names


def test_every_static_term_is_hermitian(default_model):
    for op, td in default_model.hamiltonian_terms:
        assert td.kind == "static"
        assert op.is_hermitian(1e-12 * max(1.0, abs(op.entries).max()))


def test_collapse_operators_nonzero(default_model):
    for c in default_model.jump_operators():
        assert c.nnz > 0


def test_atomic_decay_bookkeeping(default_model):
    per_ion = {0: 0.0, 1: 0.0}
    for ch in default_model.collapse_channels:
        if ch.label.startswith("spont"):
            per_ion[ch.ion] += ch.rate
    assert per_ion[0] == pytest.approx(2 * M.GAMMA, rel=1e-12)
    assert per_ion[1] == pytest.approx(2 * M.GAMMA, rel=1e-12)
    kappas = [c.rate for c in default_model.collapse_channels if c.label.startswith("cavity")]
    assert kappas == [2 * M.KAPPA, 2 * M.KAPPA]


def test_independent_dephasing_option():
    m = M.build_system(M.SystemParams(dephasing="independent"))
    assert "laser_dephasing[1]" in m.channel_names()
    assert "laser_dephasing[2]" in m.channel_names()


def test_model_rejects_bad_terms():
    space = HilbertSpace((2,))
    bad = Operator.from_dense([[0, 1], [0, 0]], space)
    with pytest.raises(ValueError):
        M.SystemModel(space, ((bad, M.STATIC),), ())
    good = Operator.from_dense(np.eye(2), space)
    ch = M.CollapseChannel(good, 1.0, "x")
    with pytest.raises(ValueError):
        M.SystemModel(space, ((good, M.STATIC),), (ch, ch))
    zero = Operator.from_dense(np.zeros((2, 2)), space)
    with pytest.raises(ValueError):
        M.SystemModel(space, (), (M.CollapseChannel(zero, 1.0, "z"),))


def test_build_system_requires_both_branches():
    with pytest.raises(ValueError):
        M.build_system(drives=(M.DriveField(1e6, 1e9, "D"), M.DriveField(1e6, 1e9, "D")))


def test_excitation_charges_are_conserved(default_model):
    h = default_model.static_hamiltonian()
    for q in M.excitation_charges(default_model.space):
        comm = h @ q - q @ h
        assert (abs(comm).max() if comm.nnz else 0.0) < 1e-10 * abs(h).max()


def test_charges_conserved_with_vertical_aux_mode_not_assumed():
    # D_aux emitting into V breaks the H charge: the test guards the docstring claim
    m = M.build_system(M.SystemParams(aux_mode="V"))
    h = m.static_hamiltonian()
    q_h, _ = M.excitation_charges(m.space)
    assert abs(h @ q_h - q_h @ h).max() > 0


def test_drives_off_state_is_stationary():
    drives = (M.DriveField(0.0, M.DELTA_RAMAN, "D"), M.DriveField(0.0, M.DELTA_RAMAN, "D'"))
    m = M.build_system(drives=drives)
    h = dense_hamiltonian(m)
    assert np.count_nonzero(h - np.diag(np.diag(h))) == 0
    psi = M.ground_state(m.space).amplitudes
    assert np.allclose(h @ psi, (psi.conj() @ h @ psi) * psi)


def test_non_rwa_model_has_oscillatory_term():
    m = M.build_system(rwa=False)
    kinds = {td.kind for _, td in m.hamiltonian_terms}
    assert kinds == {"static", "oscillatory"}
    h0, h1 = m.hamiltonian(0.0), m.hamiltonian(3e-8)
    assert abs(h0 - h0.conj().T).max() < 1e-6
    assert abs(h0 - h1).max() > 0


def test_single_ion_emits_one_photon():
    """gamma = linewidth = 0, one ion, one mode: the Raman pulse ends in D with
    the photon gone; the master equation and the emitted flux agree."""
    space = HilbertSpace((3, 2))  # S, P, D x mode
    s, p, d = 0, 1, 2
    drive = M.default_drives()[0]
    g = M.G_MOTION * M.SystemParams().cg_map["D"]
    a = embed(destroy(2), 1, space)
    raw = (embed(transition(3, p, s), 0, space) * (0.5 * drive.rabi)
           + embed(transition(3, p, d), 0, space) @ a * g)
    shift = M._stark_shift(drive.rabi, drive.detuning)
    diag = (embed(projector(3, p), 0, space) * (-drive.detuning)
            + embed(projector(3, d), 0, space) * shift)
    h = Operator(space, (raw.entries + raw.entries.conj().T + diag.entries), hermitian=True)
    model = M.SystemModel(space, ((h, M.STATIC),),
                          (M.CollapseChannel(a, 2 * M.KAPPA, "cavity_H"),))
    rho0 = StateVector.basis(space, (s, 0)).dm()
    times, rho = mcwf.master_equation(model, rho0, 80e-6, 1e-6)
    final_d = np.real(rho[-1][space.index((d, 0)), space.index((d, 0))])
    n_ph = np.real(np.einsum("tij,ji->t", rho, (a.dag() @ a).dense()))
    emitted = trapezoid(2 * M.KAPPA * n_ph, times)
    assert final_d > 0.99
    assert emitted == pytest.approx(final_d, abs=5e-3)


def test_single_coupled_ion_trajectories_all_emit():
    params = M.ideal_params()
    m = M.build_system(params, M.ideal_drives(), couplings=(params.g_per_ion[0], 0.0))
    recs = mcwf.run_records(m, M.ground_state(m.space), 60e-6, 1e-9, 40, seed=5,
                            stop=mcwf.StopAfter(M.CAVITY_LABELS, 1))
    assert all(len(r.jumps) == 1 and r.jumps[0][1] in M.CAVITY_LABELS for r in recs)


# -- pulses ------------------------------------------------------------------

def test_mapping_pulse_examples():
    u = M.mapping_pulse()
    sp_ = u.space
    out = u @ StateVector.basis(sp_, (M.DP, M.D))
    assert np.allclose(out.amplitudes, StateVector.basis(sp_, (M.S, M.D)).amplitudes)
    mapped = u @ M.herald_target()
    ref = np.zeros(25, dtype=complex)
    ref[sp_.index((M.D, M.S))] = ref[sp_.index((M.S, M.D))] = 1 / np.sqrt(2)
    assert np.allclose(mapped.amplitudes, ref)


def test_mapping_pulse_twice():
    single = np.eye(5, dtype=complex)
    single[M.S, M.S] = single[M.DP, M.DP] = -1
    ref = np.kron(single, single)
    u = M.mapping_pulse().dense()
    assert np.allclose(u @ u, ref)


def test_mapping_pulse_on_full_space_is_unitary():
    u = M.mapping_pulse(M.two_ion_space())
    assert u.is_unitary(1e-12)


@settings(max_examples=30, deadline=None)
@given(st.floats(-2 * np.pi, 2 * np.pi), st.floats(-2 * np.pi, 2 * np.pi))
def test_analysis_rotation_unitary(theta, phi):
    assert M.analysis_rotation(theta, phi).is_unitary(1e-12)
    assert M.analysis_rotation(theta, phi, HilbertSpace((5, 5))).is_unitary(1e-12)


def test_zero_rotation_is_identity():
    assert np.allclose(M.analysis_rotation(0.0, 1.3).dense(), np.eye(4))


@settings(max_examples=20, deadline=None)
@given(st.floats(0, 2 * np.pi))
def test_pi_rotation_swaps_populations(phi):
    r = M.qubit_rotation(np.pi, phi)
    assert np.allclose(np.abs(r) ** 2, [[0, 1], [1, 0]], atol=1e-12)


def test_rotation_on_five_levels_leaves_other_levels():
    u = M.analysis_rotation(np.pi / 2, 0.4, HilbertSpace((5, 5))).dense()
    idx = HilbertSpace((5, 5)).index((M.P, M.DP))
    e = np.zeros(25)
    e[idx] = 1
    assert np.allclose(u @ e, e)


def test_index_helpers():
    assert M.qubit_projector_indices() == [0, 2, 10, 12]
    assert len(M.herald_subspace_indices()) == 9
    for kind in ("psi+", "psi-", "phi+", "phi-"):
        assert M.bell_state(kind).norm() == pytest.approx(1.0)
    assert M.herald_target().norm() == pytest.approx(1.0)


def test_two_ion_space_cutoff():
    assert M.two_ion_space(3).factors == (5, 5, 4, 4)
    with pytest.raises(ValueError):
        M.two_ion_space(1)


def test_decay_operator_matches_channels(default_model):
    ref = sum((c.conj().T @ c for c in default_model.jump_operators()),
              sp.csr_matrix((225, 225), dtype=complex))
    assert abs(default_model.decay_operator() - ref).max() < 1e-6
