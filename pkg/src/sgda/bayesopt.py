"""Gaussian-process Bayesian optimisation over encoded environments.

Each target (a specification, or a single property for the falsification
baselines) owns a :class:`GpSurrogate`.  Proposals maximise the GP-UCB
acquisition over a scrambled Sobol candidate set plus local perturbations
of the incumbent.
"""

from __future__ import annotations

import csv
import io
import itertools
import math
from dataclasses import dataclass
from typing import Hashable, Sequence

import numpy as np
from scipy.linalg import cho_solve, cholesky, solve_triangular
from scipy.stats import qmc

from .errors import InputError
from .metrics import dtw

LENGTH_GRID = tuple(float(v) for v in np.geomspace(0.1, 2.0, 6))
SIGNAL_GRID = (0.5, 1.0, 2.0)
JITTER = 1e-10


def se_kernel(a: np.ndarray, b: np.ndarray, length: float, signal: float) -> np.ndarray:
    """Squared-exponential kernel ``signal^2 * exp(-|a-b|^2 / (2 length^2))``."""
    d2 = (np.sum(a * a, axis=1)[:, None] + np.sum(b * b, axis=1)[None, :]
          - 2.0 * a @ b.T)
    return signal ** 2 * np.exp(-np.maximum(d2, 0.0) / (2.0 * length ** 2))


class GpSurrogate:
    """Exact GP regression with standardised targets.

    Targets are shifted by their mean and scaled by their standard
    deviation (1 when fewer than two distinct values) before fitting;
    predictions are mapped back.  The latent posterior is returned, so far
    from the data the variance tends to ``signal**2`` in the original units
    times the target scale squared.
    """

    def __init__(self, dim: int, length: float = 0.5, signal: float = 1.0,
                 noise: float = 0.01, refit_every: int = 10):
        self.dim = dim
        self.length = length
        self.signal = signal
        self.noise = noise
        self.refit_every = refit_every
        self.X = np.zeros((0, dim))
        self.y = np.zeros(0)
        self._chol = None
        self._alpha = None

    def __len__(self) -> int:
        return len(self.y)

    # normalisation
    def _scale(self) -> tuple[float, float]:
        if len(self.y) == 0:
            return 0.0, 1.0
        sd = float(np.std(self.y))
        return float(np.mean(self.y)), (sd if sd > 1e-12 else 1.0)

    def add(self, x: Sequence[float], y: float) -> None:
        x = np.asarray(x, dtype=float).reshape(1, self.dim)
        if not math.isfinite(float(y)) or not np.all(np.isfinite(x)):
            raise InputError("observations must be finite")
        self.X = np.vstack([self.X, x])
        self.y = np.append(self.y, float(y))
        if self.refit_every and len(self.y) % self.refit_every == 0:
            self.refit()
        self._factor()

    def _factor(self) -> None:
        mu, sd = self._scale()
        K = se_kernel(self.X, self.X, self.length, self.signal)
        K[np.diag_indices_from(K)] += self.noise ** 2 + JITTER
        self._chol = cholesky(K, lower=True)
        self._alpha = cho_solve((self._chol, True), (self.y - mu) / sd)

    def log_marginal_likelihood(self, length: float, signal: float) -> float:
        mu, sd = self._scale()
        z = (self.y - mu) / sd
        K = se_kernel(self.X, self.X, length, signal)
        K[np.diag_indices_from(K)] += self.noise ** 2 + JITTER
        try:
            L = cholesky(K, lower=True)
        except np.linalg.LinAlgError:
            return -np.inf
        alpha = cho_solve((L, True), z)
        return float(-0.5 * z @ alpha - np.log(np.diag(L)).sum() - 0.5 * len(z) * math.log(2 * math.pi))

    def refit(self) -> None:
        """Grid search over length-scale and signal amplitude."""
        best = (-np.inf, self.length, self.signal)
        for length, signal in itertools.product(LENGTH_GRID, SIGNAL_GRID):
            ll = self.log_marginal_likelihood(length, signal)
            if ll > best[0]:
                best = (ll, length, signal)
        _, self.length, self.signal = best

    def predict(self, Xs: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Posterior mean and latent variance at the rows of ``Xs``."""
        Xs = np.atleast_2d(np.asarray(Xs, dtype=float))
        mu, sd = self._scale()
        prior = np.full(len(Xs), self.signal ** 2 * sd ** 2)
        if len(self.y) == 0:
            return np.full(len(Xs), mu), prior
        Ks = se_kernel(Xs, self.X, self.length, self.signal)
        mean = Ks @ self._alpha
        v = solve_triangular(self._chol, Ks.T, lower=True)
        var = self.signal ** 2 - np.sum(v * v, axis=0)
        return mu + sd * mean, np.maximum(var, 0.0) * sd ** 2


def direct_posterior(X, y, Xs, length, signal, noise):
    """Reference posterior by dense solves (no factor caching); test oracle."""
    X, y, Xs = np.asarray(X, float), np.asarray(y, float), np.atleast_2d(np.asarray(Xs, float))
    mu = float(np.mean(y))
    sd = float(np.std(y))
    sd = sd if sd > 1e-12 else 1.0
    K = se_kernel(X, X, length, signal) + (noise ** 2 + JITTER) * np.eye(len(y))
    Ks = se_kernel(Xs, X, length, signal)
    mean = Ks @ np.linalg.solve(K, (y - mu) / sd)
    var = signal ** 2 - np.einsum("ij,ji->i", Ks, np.linalg.solve(K, Ks.T))
    return mu + sd * mean, np.maximum(var, 0.0) * sd ** 2


# --- targets -----------------------------------------------------------------


def diversity_bonus(features: np.ndarray, store: Sequence[np.ndarray], a: float,
                    d_cap: float = 10.0) -> float:
    """``a`` times the DTW distance to the nearest stored trajectory, with
    the distance capped at ``d_cap`` (an empty store counts as ``d_cap``)."""
    if not store:
        return a * d_cap
    return a * min(d_cap, min(dtw(features, s) for s in store))


def target_value(rho: float, satisfied: bool, features: np.ndarray,
                 store: Sequence[np.ndarray], a: float, d_cap: float = 10.0) -> float:
    """Robustness plus the diversity bonus, the bonus only when satisfied."""
    if not satisfied:
        return float(rho)
    return float(rho) + diversity_bonus(features, store, a, d_cap)


# --- sampler -----------------------------------------------------------------


@dataclass
class BoConfig:
    kappa: float = 2.0
    n_candidates: int = 512
    n_local: int = 64
    local_scale: float = 0.05
    n_min: int = 5
    length: float = 0.5
    signal: float = 1.0
    noise: float = 0.01
    refit_every: int = 10
    bonus_a: float = 0.1
    d_cap: float = 10.0


class Sampler:
    """One surrogate per target key, created on first use."""

    def __init__(self, dim: int, config: BoConfig = BoConfig()):
        self.dim = dim
        self.config = config
        self.surrogates: dict[Hashable, GpSurrogate] = {}
        self.log: list[tuple[Hashable, np.ndarray, float]] = []

    def surrogate(self, key: Hashable) -> GpSurrogate:
        if key not in self.surrogates:
            c = self.config
            self.surrogates[key] = GpSurrogate(self.dim, c.length, c.signal, c.noise, c.refit_every)
        return self.surrogates[key]

    def candidates(self, gp: GpSurrogate, rng: np.random.Generator) -> np.ndarray:
        c = self.config
        sobol = qmc.Sobol(self.dim, scramble=True, seed=rng)
        pts = sobol.random(c.n_candidates)
        if len(gp) and c.n_local:
            best = gp.X[int(np.argmax(gp.y))]
            local = np.clip(best + c.local_scale * rng.standard_normal((c.n_local, self.dim)), 0.0, 1.0)
            pts = np.vstack([pts, local])
        return pts

    def acquisition(self, gp: GpSurrogate, X: np.ndarray) -> np.ndarray:
        mean, var = gp.predict(X)
        return mean + self.config.kappa * np.sqrt(var)

    def propose(self, key: Hashable, rng: np.random.Generator) -> np.ndarray:
        """Encoded point to try next for ``key`` (uniform while cold)."""
        gp = self.surrogate(key)
        if len(gp) < self.config.n_min:
            return rng.uniform(0.0, 1.0, self.dim)
        pts = self.candidates(gp, rng)
        return pts[int(np.argmax(self.acquisition(gp, pts)))]

    def observe(self, key: Hashable, x: Sequence[float], target: float) -> None:
        if not math.isfinite(float(target)):
            raise InputError(f"non-finite target {target!r}")
        self.surrogate(key).add(x, target)
        self.log.append((key, np.asarray(x, dtype=float).copy(), float(target)))

    def log_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["key"] + [f"x{i}" for i in range(self.dim)] + ["target"])
        for key, x, t in self.log:
            w.writerow([key] + [repr(float(v)) for v in x] + [repr(t)])
        return buf.getvalue()
