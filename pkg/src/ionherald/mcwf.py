"""Quantum-jump trajectories and a dense Lindblad integrator used as their oracle.

Waiting-time unraveling: the unnormalized state evolves under
``H_eff = H - (i/2) sum_k C_k^dagger C_k`` until its squared norm falls below
a uniform threshold drawn in advance; a jump channel is then picked in
proportion to ``<C_k^dagger C_k>`` and a fresh threshold is drawn.

Two propagation schemes are available on the same fixed time grid:

``"expm"``
    For time-independent models.  ``H_eff`` is split into the connected
    blocks of its sparsity pattern and each block is propagated with exact
    matrix exponentials (coarse step ``dt`` and its dyadic fractions).
``"rk4"``
    Classical fourth-order Runge-Kutta on the full sparse ``H_eff(t)``; handles
    oscillatory Hamiltonian terms.

In both, the step that crosses the threshold is bisected dyadically down to
``dt / 128`` and the jump time is placed by linear interpolation of the
log-norm inside the final bracket.
"""
from __future__ import annotations

import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np
import scipy.sparse as sp
from scipy.linalg import expm
from scipy.sparse.csgraph import connected_components
from scipy.sparse.linalg import expm_multiply

from .model import SystemModel
from .qops import DensityMatrix, HilbertSpace, StateVector

BISECTION_LEVELS = 7  # jump times resolved to dt / 2**7 < dt / 100
CHUNK = 64
MAX_RATE_DT = 0.05
NORM_TOL = 1e-8
RECORD_FORMAT_VERSION = 1

__all__ = [
    "TrajectoryRecord",
    "EnsembleResult",
    "SimulationError",
    "StepSizeError",
    "NormIncreaseError",
    "TrajectoryError",
    "run_trajectory",
    "run_ensemble",
    "run_records",
    "master_equation",
    "trajectory_rng",
    "trace_distance",
    "write_records",
    "read_records",
]


class SimulationError(RuntimeError):
    pass


class StepSizeError(SimulationError):
    pass


class NormIncreaseError(SimulationError):
    pass


class TrajectoryError(SimulationError):
    def __init__(self, seed: int, index: int, cause: BaseException):
        super().__init__(f"trajectory {index} (seed {seed}) failed: {cause}")
        self.seed = seed
        self.index = index
        self.cause = cause


def trajectory_rng(seed: int, index: int) -> np.random.Generator:
    """Counter-based stream keyed by (run seed, trajectory index)."""
    key = ((int(seed) % 2 ** 64) << 64) | (int(index) % 2 ** 64)
    return np.random.Generator(np.random.Philox(key=key))


@dataclass
class TrajectoryRecord:
    seed: int
    index: int
    times: np.ndarray
    jumps: list[tuple[float, str]]
    space: HilbertSpace
    final_state: np.ndarray
    t_final: float
    samples: np.ndarray | None = None
    jump_states: list[np.ndarray] | None = None

    def snapshot(self, i: int) -> StateVector:
        if self.samples is None:
            raise ValueError("trajectory was run without sample snapshots")
        return StateVector(self.space, self.samples[i])

    def post_jump_state(self, k: int) -> StateVector:
        if self.jump_states is None:
            raise ValueError("trajectory was run without post-jump snapshots")
        return StateVector(self.space, self.jump_states[k])

    @property
    def jump_times(self) -> np.ndarray:
        return np.array([t for t, _ in self.jumps])

    @property
    def jump_channels(self) -> list[str]:
        return [c for _, c in self.jumps]


@dataclass
class EnsembleResult:
    n_traj: int
    times: np.ndarray
    rho: np.ndarray | None
    jump_counts: dict[str, int]
    jump_histograms: dict[str, np.ndarray]
    histogram_edges: np.ndarray
    space: HilbertSpace
    records: list[TrajectoryRecord] | None = None

    def density_matrix(self, i: int) -> DensityMatrix:
        return DensityMatrix(self.space, self.rho[i])


class StopAfter:
    """Stop a trajectory once ``count`` jumps with labels in ``channels`` occurred."""

    def __init__(self, channels: Iterable[str], count: int):
        self.channels = frozenset(channels)
        self.count = int(count)

    def __call__(self, jumps: Sequence[tuple[float, str]]) -> bool:
        return sum(1 for _, c in jumps if c in self.channels) >= self.count


# ---------------------------------------------------------------------------
# propagators


class _Blocks:
    """Exact block propagators of a static non-hermitian ``H_eff``."""

    def __init__(self, model: SystemModel, dt: float, levels: int, chunk: int):
        heff = model.effective_hamiltonian().tocsr()
        gam = model.decay_operator().tocsr()
        pattern = (abs(heff) + abs(gam)).tocsr()
        n, labels = connected_components(pattern, directed=False)
        self.labels = labels
        self.blocks = [np.flatnonzero(labels == b) for b in range(n)]
        self.heff = heff
        self.gam = gam
        self.dt = dt
        self.levels = levels
        self.chunk = chunk
        self._cache: dict[int, tuple] = {}

    def get(self, b: int):
        hit = self._cache.get(b)
        if hit is None:
            idx = self.blocks[b]
            hb = self.heff[idx][:, idx].toarray()
            gb = self.gam[idx][:, idx].toarray()
            ladder = [expm(-1j * hb * (self.dt / 2 ** j)) for j in range(self.levels + 1)]
            u = ladder[0]
            powers = np.empty((self.chunk,) + u.shape, dtype=complex)
            powers[0] = u
            for m in range(1, self.chunk):
                powers[m] = u @ powers[m - 1]
            hit = (idx, ladder, powers, gb)
            self._cache[b] = hit
        return hit

    def active(self, psi: np.ndarray) -> list[int]:
        nz = np.flatnonzero(np.abs(psi) > 0)
        return sorted(set(self.labels[nz].tolist()))


class _ChunkStates:
    """Lazily assembled full-space states of one chunk."""

    def __init__(self, parts, dim):
        self.parts = parts
        self.dim = dim

    def __getitem__(self, i):
        out = np.zeros(self.dim, dtype=complex)
        for idx, sub in self.parts:
            out[idx] = sub[i]
        return out


class _ExactStepper:
    def __init__(self, model: SystemModel, dt: float):
        self.blocks = _Blocks(model, dt, BISECTION_LEVELS, CHUNK)
        self.dt = dt

    def begin(self, psi):
        self._act = self.blocks.active(psi)

    def chunk(self, psi: np.ndarray, m: int, t: float):
        """States after 1..m coarse steps, their squared norms and total rates."""
        parts = []
        norms = np.zeros(m)
        gam_num = np.zeros(m)
        for b in self._act:
            idx, _, powers, gb = self.blocks.get(b)
            sub = powers[:m] @ psi[idx]
            sq = sub.real ** 2 + sub.imag ** 2
            norms += sq.sum(axis=1)
            if gb.any():
                gam_num += np.real(np.sum(sub.conj() * (sub @ gb.T), axis=1))
            parts.append((idx, sub))
        return _ChunkStates(parts, psi.shape[0]), norms, gam_num

    def step(self, psi: np.ndarray, level: int, t: float) -> np.ndarray:
        out = np.zeros_like(psi)
        for b in self._act:
            idx, ladder, _, _ = self.blocks.get(b)
            out[idx] = ladder[level] @ psi[idx]
        return out


class _RK4Stepper:
    def __init__(self, model: SystemModel, dt: float):
        self.dt = dt
        self.static = model.is_static
        self.model = model
        if self.static:
            self._heff = model.effective_hamiltonian().tocsr()
        self._gam = model.decay_operator().tocsr()
        self._decay = -0.5j * self._gam

    def begin(self, psi):
        pass

    def _heff_at(self, t):
        if self.static:
            return self._heff
        return self.model.hamiltonian(t) + self._decay

    def _rk4(self, psi, t, h):
        f = lambda tt, y: -1j * (self._heff_at(tt) @ y)  # noqa: E731
        k1 = f(t, psi)
        k2 = f(t + h / 2, psi + h / 2 * k1)
        k3 = f(t + h / 2, psi + h / 2 * k2)
        k4 = f(t + h, psi + h * k3)
        return psi + h / 6 * (k1 + 2 * k2 + 2 * k3 + k4)

    def chunk(self, psi, m, t):
        out = np.empty((m, psi.shape[0]), dtype=complex)
        cur = psi
        for i in range(m):
            cur = self._rk4(cur, t + i * self.dt, self.dt)
            out[i] = cur
        norms = np.einsum("mi,mi->m", out.conj(), out).real
        gam_num = np.einsum("mi,mi->m", out.conj(), (self._gam @ out.T).T).real
        return out, norms, gam_num

    def step(self, psi, level, t):
        return self._rk4(psi, t, self.dt / 2 ** level)


_STEPPER_CACHE: dict[tuple, object] = {}


def _stepper(model: SystemModel, dt: float, method: str):
    key = (id(model), float(dt), method)
    hit = _STEPPER_CACHE.get(key)
    if hit is not None and hit[0] is model:
        return hit[1]
    if method == "expm":
        if not model.is_static:
            raise ValueError("method 'expm' needs a time-independent model; use 'rk4'")
        st = _ExactStepper(model, dt)
    elif method == "rk4":
        st = _RK4Stepper(model, dt)
    else:
        raise ValueError(f"unknown integration method {method!r}")
    if len(_STEPPER_CACHE) > 8:
        _STEPPER_CACHE.clear()
    _STEPPER_CACHE[key] = (model, st)
    return st


class _JumpOps:
    def __init__(self, model: SystemModel):
        ops = model.jump_operators()
        self.names = model.channel_names()
        self.dim = model.dim
        self.n = len(ops)
        self.stacked = sp.vstack(ops).tocsr() if ops else None

    def apply_all(self, psi: np.ndarray) -> np.ndarray:
        return (self.stacked @ psi).reshape(self.n, self.dim)


_JUMP_CACHE: dict[int, tuple] = {}


def _jump_ops(model: SystemModel) -> _JumpOps:
    hit = _JUMP_CACHE.get(id(model))
    if hit is not None and hit[0] is model:
        return hit[1]
    j = _JumpOps(model)
    if len(_JUMP_CACHE) > 8:
        _JUMP_CACHE.clear()
    _JUMP_CACHE[id(model)] = (model, j)
    return j


# ---------------------------------------------------------------------------
# single trajectory


def _n_steps(t_max: float, dt: float) -> int:
    if dt <= 0 or t_max <= 0:
        raise ValueError("t_max and dt must be positive")
    n = int(round(t_max / dt))
    if n < 1 or abs(n * dt - t_max) > 1e-9 * t_max:
        raise ValueError("t_max must be an integer multiple of dt")
    return n


def run_trajectory(model: SystemModel, psi0, t_max: float, dt: float, seed: int,
                   index: int = 0, sample_every: int | None = None,
                   store_jump_states: bool = True,
                   stop: Callable[[Sequence[tuple[float, str]]], bool] | None = None,
                   method: str = "expm") -> TrajectoryRecord:
    """Evolve one stochastic wave function on the grid ``0, dt, ..., t_max``.

    Parameters
    ----------
    sample_every : int, optional
        Store the normalized state every ``sample_every`` grid steps
        (including ``t = 0``).
    stop : callable, optional
        Called with the jump list after every jump; returning True ends the
        trajectory at that jump.
    """
    amps = psi0.amplitudes if isinstance(psi0, StateVector) else np.asarray(psi0, dtype=complex)
    amps = np.array(amps, dtype=complex)
    if amps.shape[0] != model.dim:
        raise ValueError("initial state does not match the model dimension")
    if abs(np.vdot(amps, amps).real - 1.0) > 1e-10:
        raise ValueError("initial state must be normalized")
    n_steps = _n_steps(t_max, dt)
    stepper = _stepper(model, dt, method)
    jops = _jump_ops(model)
    rng = trajectory_rng(seed, index)
    L = BISECTION_LEVELS
    nf = 2 ** L
    h = dt / nf

    sample_idx = None
    samples = None
    if sample_every is not None:
        sample_every = int(sample_every)
        if sample_every < 1 or n_steps % sample_every:
            raise ValueError("sample_every must divide the number of steps")
        n_samp = n_steps // sample_every + 1
        samples = np.zeros((n_samp, model.dim), dtype=complex)
        samples[0] = amps
        sample_idx = sample_every
    times = dt * np.arange(0, n_steps + 1, sample_every or n_steps)

    jumps: list[tuple[float, str]] = []
    jump_states: list[np.ndarray] | None = [] if store_jump_states else None
    psi = amps
    r = rng.random()
    fine = 0
    end = n_steps * nf
    stepper.begin(psi)
    norm_now = 1.0

    def record_samples(k0: int, states: np.ndarray, norms: np.ndarray, upto: int):
        # states[i] sits on grid index k0 + i + 1
        if samples is None:
            return
        for i in range(upto):
            k = k0 + i + 1
            if k % sample_every == 0:
                samples[k // sample_every] = states[i] / np.sqrt(norms[i])

    def check(norms: np.ndarray, prev: float, gam: np.ndarray, t0: float):
        seq = np.concatenate(([prev], norms))
        if np.any(seq[1:] > seq[:-1] * (1 + NORM_TOL) + 1e-300):
            raise NormIncreaseError(f"squared norm increased during a step near t={t0:.3e}s")
        rates = gam / np.maximum(norms, 1e-300)
        if np.any(rates * dt >= MAX_RATE_DT):
            raise StepSizeError(
                f"total jump rate {rates.max():.3e}/s times dt={dt:.3e}s exceeds {MAX_RATE_DT}")

    def bisect(left, left_norm, fine_left, right, right_norm, size_level):
        # bracket of 2**size_level fine units; left >= r > right
        for lev in range(size_level - 1, -1, -1):
            mid = stepper.step(left, L - lev, fine_left * h)
            mid_norm = np.vdot(mid, mid).real
            if mid_norm > left_norm * (1 + NORM_TOL):
                raise NormIncreaseError("squared norm increased during bisection")
            if mid_norm >= r:
                left, left_norm, fine_left = mid, mid_norm, fine_left + 2 ** lev
            else:
                right, right_norm = mid, mid_norm
        return left_norm, fine_left, right, right_norm

    while fine < end:
        crossing = None
        if fine % nf == 0:
            k = fine // nf
            m = min(stepper_chunk(stepper), n_steps - k)
            states, norms, gam = stepper.chunk(psi, m, fine * h)
            check(norms, norm_now, gam, fine * h)
            below = np.flatnonzero(norms < r)
            if below.size == 0:
                record_samples(k, states, norms, m)
                psi, norm_now = states[-1], norms[-1]
                fine += m * nf
                continue
            i = int(below[0])
            record_samples(k, states, norms, i)
            left = states[i - 1] if i > 0 else psi
            left_norm = norms[i - 1] if i > 0 else norm_now
            crossing = (left, left_norm, (k + i) * nf, states[i], norms[i], L)
        else:
            # walk back onto the coarse grid in dyadic pieces
            rem = nf - fine % nf
            lev = rem.bit_length() - 1
            size = 2 ** lev
            cand = stepper.step(psi, L - lev, fine * h)
            cand_norm = np.vdot(cand, cand).real
            gam_c = np.vdot(cand, stepper_gamma(stepper, cand)).real
            check(np.array([cand_norm]), norm_now, np.array([gam_c]), fine * h)
            if cand_norm >= r:
                psi, norm_now = cand, cand_norm
                fine += size
                if samples is not None and fine % nf == 0 and (fine // nf) % sample_every == 0:
                    samples[fine // nf // sample_every] = psi / np.sqrt(norm_now)
                continue
            crossing = (psi, norm_now, fine, cand, cand_norm, lev)

        left, left_norm, fine_left, right, right_norm, lev = crossing
        left_norm, fine_left, right, right_norm = bisect(
            left, left_norm, fine_left, right, right_norm, lev)
        # jump time from the log-norm line through the final bracket
        la, lb, lr = math.log(left_norm), math.log(max(right_norm, 1e-300)), math.log(r)
        frac = (la - lr) / (la - lb) if la > lb else 1.0
        t_jump = (fine_left + min(max(frac, 0.0), 1.0)) * h
        fine = fine_left + 1
        cand = jops.apply_all(right)
        weights = np.einsum("ki,ki->k", cand.conj(), cand).real
        total = weights.sum()
        if total <= 0:
            raise SimulationError("threshold crossed with no available jump channel")
        c = int(np.searchsorted(np.cumsum(weights), rng.random() * total, side="right"))
        c = min(c, jops.n - 1)
        while weights[c] == 0:
            c -= 1
        psi = cand[c] / math.sqrt(weights[c])
        norm_now = 1.0
        r = rng.random()
        jumps.append((t_jump, jops.names[c]))
        if jump_states is not None:
            jump_states.append(psi.copy())
        stepper.begin(psi)
        if stop is not None and stop(jumps):
            break

    if fine >= end:
        t_final = n_steps * dt
    else:
        t_final = fine * h
    final = psi / math.sqrt(np.vdot(psi, psi).real)
    if samples is not None and fine < end:
        # trajectory stopped early: later samples hold the frozen final state
        k_done = fine // nf
        first = k_done // sample_every + 1
        samples[first:] = final
    return TrajectoryRecord(seed=int(seed), index=int(index), times=times, jumps=jumps,
                            space=model.space, final_state=final, t_final=t_final,
                            samples=samples, jump_states=jump_states)


def stepper_chunk(stepper) -> int:
    return CHUNK if isinstance(stepper, _ExactStepper) else 1


def stepper_gamma(stepper, psi):
    if isinstance(stepper, _ExactStepper):
        out = np.zeros_like(psi)
        for b in stepper._act:
            idx, _, _, gb = stepper.blocks.get(b)
            out[idx] = gb @ psi[idx]
        return out
    return stepper._gam @ psi


# ---------------------------------------------------------------------------
# ensembles

_WORKER: dict = {}


def _worker_init(model, psi0, t_max, dt, kwargs):
    _WORKER.update(model=model, psi0=psi0, t_max=t_max, dt=dt, kwargs=kwargs)


def _worker_run(args):
    seed, index = args
    w = _WORKER
    try:
        return run_trajectory(w["model"], w["psi0"], w["t_max"], w["dt"], seed, index,
                              **w["kwargs"])
    except Exception as exc:  # re-raised with the seed attached
        return TrajectoryError(seed, index, exc)


def run_records(model: SystemModel, psi0, t_max: float, dt: float, n_traj: int,
                seed: int, workers: int = 1, first_index: int = 0,
                **kwargs) -> list[TrajectoryRecord]:
    """Run trajectories ``first_index .. first_index + n_traj - 1`` in index order."""
    if n_traj < 1:
        raise ValueError("n_traj must be >= 1")
    amps = psi0.amplitudes if isinstance(psi0, StateVector) else np.asarray(psi0)
    jobs = [(seed, first_index + i) for i in range(n_traj)]
    if workers <= 1:
        _worker_init(model, amps, t_max, dt, kwargs)
        results = [_worker_run(j) for j in jobs]
    else:
        with ProcessPoolExecutor(max_workers=workers, initializer=_worker_init,
                                 initargs=(model, amps, t_max, dt, kwargs)) as ex:
            results = list(ex.map(_worker_run, jobs, chunksize=max(1, n_traj // (8 * workers))))
    for res in results:
        if isinstance(res, TrajectoryError):
            raise res
    return results


def run_ensemble(model: SystemModel, psi0, t_max: float, dt: float, n_traj: int,
                 seed: int, sample_every: int = 1, workers: int = 1,
                 histogram_bins: int = 50, keep_records: bool = False,
                 method: str = "expm", stop=None) -> EnsembleResult:
    """Average ``n_traj`` trajectories; deterministic for a given seed."""
    records = run_records(model, psi0, t_max, dt, n_traj, seed, workers=workers,
                          sample_every=sample_every, store_jump_states=keep_records,
                          method=method, stop=stop)
    times = records[0].times
    rho = np.zeros((len(times), model.dim, model.dim), dtype=complex)
    names = model.channel_names()
    counts = {n: 0 for n in names}
    edges = np.linspace(0.0, t_max, histogram_bins + 1)
    hists = {n: np.zeros(histogram_bins, dtype=int) for n in names}
    for rec in records:
        s = rec.samples
        rho += np.einsum("ti,tj->tij", s, s.conj())
        for t, c in rec.jumps:
            counts[c] += 1
        for n in names:
            ts = [t for t, c in rec.jumps if c == n]
            if ts:
                hists[n] += np.histogram(ts, bins=edges)[0]
    rho /= n_traj
    return EnsembleResult(n_traj=n_traj, times=times, rho=rho, jump_counts=counts,
                          jump_histograms=hists, histogram_edges=edges, space=model.space,
                          records=records if keep_records else None)


def trace_distance(a: np.ndarray, b: np.ndarray) -> float:
    d = np.asarray(a) - np.asarray(b)
    d = 0.5 * (d + d.conj().T)
    return 0.5 * float(np.sum(np.abs(np.linalg.eigvalsh(d))))


# ---------------------------------------------------------------------------
# master-equation oracle


def _liouvillian(h: sp.spmatrix, cops: Sequence[sp.spmatrix]) -> sp.csr_matrix:
    # row-major vec: vec(A rho B) = (A kron B^T) vec(rho)
    n = h.shape[0]
    eye = sp.identity(n, format="csr", dtype=complex)
    out = -1j * (sp.kron(h, eye) - sp.kron(eye, h.T))
    for c in cops:
        cdc = (c.conj().T @ c).tocsr()
        out = out + sp.kron(c, c.conj()) - 0.5 * sp.kron(cdc, eye) - 0.5 * sp.kron(eye, cdc.T)
    return out.tocsr()


def master_equation(model: SystemModel, rho0, t_max: float, dt: float,
                    max_dim: int = 400, rk4_substeps: int = 20,
                    trace_tol: float = 1e-8, eig_floor: float = -1e-7):
    """Lindblad evolution on the grid ``0, dt, ..., t_max``.

    Returns ``(times, rho)`` with ``rho`` of shape ``(n_times, dim, dim)``.
    Static models use the exact exponential of the Liouvillian; models with
    oscillatory terms use RK4 with ``rk4_substeps`` per grid step.
    """
    if model.dim > max_dim:
        raise ValueError(f"model dimension {model.dim} exceeds the dense limit {max_dim}")
    r0 = rho0.entries if isinstance(rho0, DensityMatrix) else np.asarray(rho0, dtype=complex)
    n = model.dim
    n_steps = _n_steps(t_max, dt)
    times = dt * np.arange(n_steps + 1)
    cops = model.jump_operators()
    if model.is_static:
        lv = _liouvillian(model.static_hamiltonian(), cops)
        vecs = expm_multiply(lv, r0.reshape(-1), start=0.0, stop=t_max,
                             num=n_steps + 1, endpoint=True)
        rho = vecs.reshape(n_steps + 1, n, n)
    else:
        cd = [(c, c.conj().T.tocsr(), (c.conj().T @ c).tocsr()) for c in cops]

        def f(t, r):
            hh = model.hamiltonian(t)
            out = -1j * (hh @ r - (hh.T @ r.T).T)
            for c, cdag, cdc in cd:
                out = out + c @ (cdag.T @ r.T).T - 0.5 * (cdc @ r + (cdc.T @ r.T).T)
            return out

        rho = np.empty((n_steps + 1, n, n), dtype=complex)
        rho[0] = r0
        cur = r0.copy()
        hstep = dt / rk4_substeps
        for k in range(n_steps):
            for s in range(rk4_substeps):
                t = k * dt + s * hstep
                k1 = f(t, cur)
                k2 = f(t + hstep / 2, cur + hstep / 2 * k1)
                k3 = f(t + hstep / 2, cur + hstep / 2 * k2)
                k4 = f(t + hstep, cur + hstep * k3)
                cur = cur + hstep / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
            rho[k + 1] = cur
    tr = np.einsum("tii->t", rho)
    if np.max(np.abs(tr - np.trace(r0))) > trace_tol:
        raise SimulationError("master-equation trace drift exceeds tolerance")
    for k in range(0, n_steps + 1, max(1, n_steps // 20)):
        m = 0.5 * (rho[k] + rho[k].conj().T)
        if np.linalg.eigvalsh(m)[0] < eig_floor:
            raise SimulationError(f"negative eigenvalue in rho at t={times[k]:.3e}s")
    return times, rho


# ---------------------------------------------------------------------------
# persistence (JSON lines, one trajectory per line)


def write_records(path, records: Iterable[TrajectoryRecord], include_states: bool = True) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for rec in records:
            obj = {
                "version": RECORD_FORMAT_VERSION,
                "seed": rec.seed,
                "index": rec.index,
                "factors": list(rec.space.factors),
                "t_final": rec.t_final,
                "jumps": [[t, c] for t, c in rec.jumps],
            }
            if include_states:
                obj["final_state"] = _flat(rec.final_state)
                if rec.jump_states is not None:
                    obj["jump_states"] = [_flat(s) for s in rec.jump_states]
                if rec.samples is not None:
                    obj["times"] = rec.times.tolist()
                    obj["samples"] = [_flat(s) for s in rec.samples]
            fh.write(json.dumps(obj) + "\n")


def read_records(path) -> list[TrajectoryRecord]:
    out = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            obj = json.loads(line)
            if obj.get("version") != RECORD_FORMAT_VERSION:
                raise ValueError(f"line {lineno}: unsupported record version {obj.get('version')}")
            space = HilbertSpace(tuple(obj["factors"]))
            final = _unflat(obj["final_state"]) if "final_state" in obj else np.zeros(0, complex)
            js = [_unflat(s) for s in obj["jump_states"]] if "jump_states" in obj else None
            samples = np.array([_unflat(s) for s in obj["samples"]]) if "samples" in obj else None
            out.append(TrajectoryRecord(
                seed=obj["seed"], index=obj["index"],
                times=np.array(obj.get("times", [])), jumps=[(t, c) for t, c in obj["jumps"]],
                space=space, final_state=final, t_final=obj["t_final"],
                samples=samples, jump_states=js))
    return out


def _flat(v: np.ndarray) -> list[float]:
    v = np.asarray(v, dtype=complex)
    return np.column_stack([v.real, v.imag]).reshape(-1).tolist()


def _unflat(x) -> np.ndarray:
    a = np.asarray(x, dtype=float).reshape(-1, 2)
    return a[:, 0] + 1j * a[:, 1]
