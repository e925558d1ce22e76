"""Fluorescence readout of two ions: Gaussian-mixture model, classification, estimates.

Component ``n`` of the mixture holds shots with ``n`` bright ions.
"""
from __future__ import annotations

import csv
import json
from dataclasses import asdict, dataclass

import numpy as np
from scipy.stats import norm

N_CLASSES = 3


class MixtureFitError(RuntimeError):
    pass


@dataclass(frozen=True)
class MixtureModel:
    means: tuple[float, float, float]
    widths: tuple[float, float, float]
    weights: tuple[float, float, float] = (1 / 3, 1 / 3, 1 / 3)
    log_likelihood: float = float("nan")
    iterations: int = 0

    def __post_init__(self):
        m = tuple(float(x) for x in self.means)
        s = tuple(float(x) for x in self.widths)
        w = tuple(float(x) for x in self.weights)
        if len(m) != N_CLASSES or len(s) != N_CLASSES or len(w) != N_CLASSES:
            raise ValueError("a mixture has exactly three components")
        if min(s) <= 0:
            raise ValueError("component widths must be positive")
        if not (m[0] < m[1] < m[2]):
            raise ValueError("component means must be strictly increasing")
        object.__setattr__(self, "means", m)
        object.__setattr__(self, "widths", s)
        object.__setattr__(self, "weights", w)

    def component_densities(self, s) -> np.ndarray:
        """``g_n(s)`` (unweighted normal densities), shape ``(3, len(s))``."""
        s = np.atleast_1d(np.asarray(s, dtype=float))
        return np.array([norm.pdf(s, m, w) for m, w in zip(self.means, self.widths)])

    def sample(self, n: int, probabilities=None, rng=None) -> tuple[np.ndarray, np.ndarray]:
        """Draw ``n`` shots; returns (counts, true class)."""
        gen = rng if isinstance(rng, np.random.Generator) else np.random.default_rng(rng)
        p = self.weights if probabilities is None else probabilities
        cls = gen.choice(N_CLASSES, size=n, p=np.asarray(p) / np.sum(p))
        vals = gen.normal(np.take(self.means, cls), np.take(self.widths, cls))
        return vals, cls

    def to_dict(self) -> dict:
        return {k: (list(v) if isinstance(v, tuple) else v) for k, v in asdict(self).items()}


@dataclass(frozen=True)
class ShotClassification:
    counts: float
    assigned: int
    posterior: float  # g_n(s) / sum_i g_i(s) for the assigned n

    @property
    def misassignment(self) -> float:
        return 1.0 - self.posterior


@dataclass
class ProbabilityEstimate:
    counts: np.ndarray  # shots assigned to each class
    p: np.ndarray
    sigma_stat: np.ndarray
    sigma_proj: np.ndarray

    @property
    def sigma(self) -> np.ndarray:
        return self.sigma_stat + self.sigma_proj

    def to_dict(self) -> dict:
        return {"counts": self.counts.tolist(), "p": self.p.tolist(),
                "sigma_stat": self.sigma_stat.tolist(), "sigma_proj": self.sigma_proj.tolist(),
                "sigma": self.sigma.tolist()}


def _initial_means(s: np.ndarray) -> np.ndarray:
    return np.quantile(s, [1 / 6, 1 / 2, 5 / 6])


def fit_mixture(shots, initial_means=None, initial_widths=None, tol: float = 1e-9,
                max_iter: int = 5000, min_width: float | None = None) -> MixtureModel:
    """Maximum-likelihood three-component Gaussian mixture by expectation-maximization.

    Iterates until the per-shot log-likelihood changes by less than ``tol``.

    Raises
    ------
    MixtureFitError
        Too few shots, a collapsed or empty component, or no convergence.
    """
    s = np.asarray(shots, dtype=float).ravel()
    if s.size < 100:
        raise ValueError("at least 100 shots are required")
    spread = float(np.std(s))
    if spread == 0:
        raise MixtureFitError("all shots identical; mixture is degenerate")
    floor = 1e-3 * spread if min_width is None else min_width
    mu = np.sort(np.asarray(initial_means if initial_means is not None
                            else _initial_means(s), dtype=float))
    sig = (np.asarray(initial_widths, dtype=float) if initial_widths is not None
           else np.full(N_CLASSES, max(np.min(np.diff(mu)) / 4, spread / 10)))
    w = np.full(N_CLASSES, 1 / N_CLASSES)
    prev = -np.inf
    for it in range(1, max_iter + 1):
        logp = norm.logpdf(s[None, :], mu[:, None], sig[:, None]) + np.log(w)[:, None]
        top = logp.max(axis=0)
        lse = top + np.log(np.exp(logp - top).sum(axis=0))
        ll = float(lse.mean())
        resp = np.exp(logp - lse)
        nk = resp.sum(axis=1)
        if np.any(nk < 1e-6 * s.size):
            raise MixtureFitError(f"mixture component emptied (occupations {nk.round(3)})")
        w = nk / s.size
        mu = (resp @ s) / nk
        sig = np.sqrt(np.einsum("ki,ki->k", resp, (s[None, :] - mu[:, None]) ** 2) / nk)
        if np.any(sig < floor):
            raise MixtureFitError(f"mixture component collapsed (widths {sig})")
        if abs(ll - prev) < tol:
            order = np.argsort(mu)
            if np.any(np.diff(mu[order]) <= 0):
                raise MixtureFitError("two components converged to the same mean")
            return MixtureModel(tuple(mu[order]), tuple(sig[order]), tuple(w[order]),
                                log_likelihood=ll * s.size, iterations=it)
        prev = ll
    raise MixtureFitError(f"EM did not converge within {max_iter} iterations")


def classify(s, model: MixtureModel) -> ShotClassification | list[ShotClassification]:
    """Assign each count to the component with the largest density ``g_n(s)``.

    Ties go to the smaller ``n``.  The stored posterior is
    ``g_n(s) / sum_i g_i(s)`` for the assigned ``n``.
    """
    scalar = np.ndim(s) == 0
    vals = np.atleast_1d(np.asarray(s, dtype=float))
    # log densities keep far tails finite
    lg = np.array([norm.logpdf(vals, m, w) for m, w in zip(model.means, model.widths)])
    n = np.argmax(lg, axis=0)  # first maximum wins ties
    top = lg[n, np.arange(vals.size)]
    post = 1.0 / np.exp(lg - top).sum(axis=0)
    out = [ShotClassification(float(v), int(k), float(p)) for v, k, p in zip(vals, n, post)]
    return out[0] if scalar else out


def estimate_probabilities(classifications, edge_rule: str = "sqrt_count") -> ProbabilityEstimate:
    """Class frequencies with statistical and projection-noise uncertainties.

    ``sigma_stat[i] = sum of (1 - posterior) over shots assigned to i / N`` and
    ``sigma_proj[i] = sqrt(p_i (1 - p_i) / eta_i)``.  For ``p_i`` in {0, 1} that
    expression is undefined; ``edge_rule="sqrt_count"`` then uses ``sqrt(eta_i)``,
    ``edge_rule="conventional"`` uses the one-count rule ``1 / N``.
    """
    cl = list(classifications)
    if not cl:
        raise ValueError("no classifications given")
    if edge_rule not in ("sqrt_count", "conventional"):
        raise ValueError("edge_rule must be 'sqrt_count' or 'conventional'")
    total = len(cl)
    assigned = np.array([c.assigned for c in cl])
    miss = np.array([c.misassignment for c in cl])
    eta = np.bincount(assigned, minlength=N_CLASSES).astype(float)
    p = eta / total
    stat = np.bincount(assigned, weights=miss, minlength=N_CLASSES) / total
    proj = np.empty(N_CLASSES)
    for i in range(N_CLASSES):
        if 0 < p[i] < 1:
            proj[i] = np.sqrt(p[i] * (1 - p[i]) / eta[i])
        elif edge_rule == "sqrt_count":
            proj[i] = np.sqrt(eta[i])
        else:
            proj[i] = 1.0 / total
    return ProbabilityEstimate(counts=eta.astype(int), p=p, sigma_stat=stat, sigma_proj=proj)


# ---------------------------------------------------------------------------
# I/O

SHOT_HEADER = ("shot_id", "counts")


def write_shots_csv(path, counts) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        wr = csv.writer(fh)
        wr.writerow(SHOT_HEADER)
        for i, c in enumerate(counts):
            wr.writerow([i, repr(float(c))])


def read_shots_csv(path) -> np.ndarray:
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    if not rows or tuple(h.strip() for h in rows[0]) != SHOT_HEADER:
        raise ValueError(f"{path}: expected header {','.join(SHOT_HEADER)}")
    vals = []
    for lineno, row in enumerate(rows[1:], 2):
        if not row:
            continue
        if len(row) != 2:
            raise ValueError(f"{path}:{lineno}: expected 2 columns")
        try:
            vals.append(float(row[1]))
        except ValueError as exc:
            raise ValueError(f"{path}:{lineno}: {exc}") from exc
    return np.array(vals)


def write_readout_json(path, model: MixtureModel, estimate: ProbabilityEstimate) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump({"model": model.to_dict(), "estimate": estimate.to_dict()}, fh, indent=2)


def read_model_json(path) -> MixtureModel:
    with open(path, encoding="utf-8") as fh:
        d = json.load(fh)["model"]
    return MixtureModel(tuple(d["means"]), tuple(d["widths"]), tuple(d["weights"]),
                        d.get("log_likelihood", float("nan")), d.get("iterations", 0))
