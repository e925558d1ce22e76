import numpy as np
import pytest

from ionherald.model import STATIC, CollapseChannel, SystemModel
from ionherald.qops import HilbertSpace, Operator, StateVector, destroy, embed, transition

TWO_PI = 2 * np.pi


def two_level(rabi=0.0, decay=0.0):
    """Qubit with ``H = rabi/2 sigma_x`` decaying from level 1 to 0 at ``decay``."""
    space = HilbertSpace((2,))
    sx = np.array([[0, 1], [1, 0]], dtype=complex)
    terms = ((Operator.from_dense(0.5 * rabi * sx, space, hermitian=True), STATIC),) if rabi else ()
    chans = (CollapseChannel(transition(2, 0, 1), decay, "decay"),) if decay else ()
    return SystemModel(space, terms, chans)


def driven_cavity_atom(drive=TWO_PI * 0.3e6, n_fock=6):
    """One two-level atom in one weakly driven, lossy cavity mode (dim 12)."""
    space = HilbertSpace((2, n_fock))
    g, kappa, gamma, det = TWO_PI * 1e6, TWO_PI * 1e6, TWO_PI * 0.5e6, TWO_PI * 0.3e6
    a = embed(destroy(n_fock), 1, space)
    sm = embed(transition(2, 0, 1), 0, space)
    h = (sm.dag() @ a) * g + (a.dag() @ sm) * g + (a + a.dag()) * drive + (a.dag() @ a) * det
    h = Operator(space, h.entries, hermitian=True)
    chans = (CollapseChannel(a, 2 * kappa, "cavity"), CollapseChannel(sm, 2 * gamma, "spont"))
    return SystemModel(space, ((h, STATIC),), chans), StateVector.basis(space, (0, 0))


@pytest.fixture(scope="session")
def cavity_atom():
    return driven_cavity_atom()


def random_density_matrix(rng, n=4, rank=None):
    """Ginibre-distributed density matrix of the given rank."""
    k = n if rank is None else rank
    a = rng.normal(size=(n, k)) + 1j * rng.normal(size=(n, k))
    m = a @ a.conj().T
    return m / np.trace(m).real


# acceptance results, printed as one line per criterion at the end of the run
ACCEPTANCE: dict[int, tuple[bool, str]] = {}


def record_criterion(number: int, ok: bool, detail: str) -> None:
    prev = ACCEPTANCE.get(number)
    ACCEPTANCE[number] = (ok and (prev is None or prev[0]),
                          detail if prev is None else f"{prev[1]}; {detail}")
    print(f"criterion {number}: {'PASS' if ok else 'FAIL'} ({detail})")


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[n]
        terminalreporter.write_line(f"criterion {n:2d}: {'PASS' if ok else 'FAIL'}  {detail}")
