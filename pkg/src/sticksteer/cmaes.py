"""Covariance matrix adaptation evolution strategy, (mu/mu_w, lambda) flavor.

Standard Hansen update rules with rank-one and rank-mu covariance
adaptation, default weights and learning rates. Bounds are handled by
resampling, so out-of-bounds candidates are never evaluated. Deterministic
for a fixed seed.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np


class DegenerateCovariance(RuntimeError):
    """Covariance decomposition failed; the optimizer restarts."""


def default_population(dim: int) -> int:
    return 4 + int(3 * math.log(dim))


@dataclass
class CmaEsState:
    """Search distribution and evolution paths of one run."""

    mean: np.ndarray
    sigma: float
    cov: np.ndarray
    p_sigma: np.ndarray
    p_c: np.ndarray
    lam: int
    generation: int = 0
    seed: int = 0

    @classmethod
    def fresh(cls, x0: np.ndarray, sigma0: float, lam: int | None = None, seed: int = 0):
        x0 = np.asarray(x0, dtype=float)
        n = x0.size
        lam = default_population(n) if lam is None else lam
        if lam < 4:
            raise ValueError("population size must be at least 4")
        if sigma0 <= 0:
            raise ValueError("sigma0 must be positive")
        return cls(
            mean=x0.copy(),
            sigma=float(sigma0),
            cov=np.eye(n),
            p_sigma=np.zeros(n),
            p_c=np.zeros(n),
            lam=lam,
            seed=seed,
        )

    def stds(self) -> np.ndarray:
        """Per-parameter standard deviation of the search distribution."""
        return self.sigma * np.sqrt(np.diag(self.cov))


@dataclass
class CmaEsResult:
    x_best: np.ndarray
    f_best: float
    stds: np.ndarray
    history: list = field(default_factory=list)
    generations: int = 0
    evaluations: int = 0
    restarts: int = 0


class _Params:
    """Fixed strategy constants for dimension n and population lam."""

    def __init__(self, n: int, lam: int):
        self.mu = lam // 2
        w = np.log((lam + 1) / 2) - np.log(np.arange(1, self.mu + 1))
        self.weights = w / w.sum()
        self.mueff = 1.0 / np.sum(self.weights**2)
        m = self.mueff
        self.c_sigma = (m + 2) / (n + m + 5)
        self.d_sigma = 1 + 2 * max(0.0, math.sqrt((m - 1) / (n + 1)) - 1) + self.c_sigma
        self.c_c = (4 + m / n) / (n + 4 + 2 * m / n)
        self.c_1 = 2 / ((n + 1.3) ** 2 + m)
        self.c_mu = min(1 - self.c_1, 2 * (m - 2 + 1 / m) / ((n + 2) ** 2 + m))
        self.chi_n = math.sqrt(n) * (1 - 1 / (4 * n) + 1 / (21 * n**2))


def _decompose(cov: np.ndarray):
    try:
        vals, vecs = np.linalg.eigh(cov)
    except np.linalg.LinAlgError as e:
        raise DegenerateCovariance(str(e)) from e
    if not np.all(np.isfinite(vals)) or vals.min() <= 0:
        raise DegenerateCovariance(f"eigenvalues {vals}")
    return np.sqrt(vals), vecs


def cma_es_minimize(
    objective,
    x0,
    sigma0: float,
    bounds=None,
    budget: int = 200,
    lam: int | None = None,
    seed: int = 0,
    f_target: float | None = None,
    tol_fun: float = 0.0,
    log=None,
) -> CmaEsResult:
    """Minimize `objective` over at most `budget` generations.

    `bounds` is an optional sequence of (lo, hi) per coordinate; candidates
    outside are resampled (up to 100 draws, then clipped). Returns the
    best-ever point, the final search distribution's per-parameter stds and
    a per-generation history of (best f, best-ever f, sigma).
    """
    x0 = np.asarray(x0, dtype=float)
    n = x0.size
    state = CmaEsState.fresh(x0, sigma0, lam, seed)
    par = _Params(n, state.lam)
    rng = np.random.default_rng(seed)
    lo = hi = None
    if bounds is not None:
        lo = np.array([b[0] for b in bounds], dtype=float)
        hi = np.array([b[1] for b in bounds], dtype=float)

    res = CmaEsResult(x_best=x0.copy(), f_best=math.inf, stds=state.stds())
    restarts = 0
    gen = 0
    while gen < budget:
        try:
            d, b_mat = _decompose(state.cov)
        except DegenerateCovariance:
            restarts += 1
            if log is not None:
                log(f"degenerate covariance at generation {gen}; "
                    f"restarting with doubled sigma")
            state = CmaEsState.fresh(
                res.x_best if np.isfinite(res.f_best) else x0,
                2.0 * state.sigma if np.isfinite(state.sigma) else 2.0 * sigma0,
                state.lam,
                seed,
            )
            continue

        xs = np.empty((state.lam, n))
        ys = np.empty((state.lam, n))
        for k in range(state.lam):
            for _ in range(100):
                z = rng.standard_normal(n)
                y = b_mat @ (d * z)
                x = state.mean + state.sigma * y
                if lo is None or (np.all(x >= lo) and np.all(x <= hi)):
                    break
            else:
                x = np.clip(x, lo, hi)
                y = (x - state.mean) / state.sigma
            xs[k] = x
            ys[k] = y
        fs = np.array([float(objective(x)) for x in xs])
        res.evaluations += state.lam

        order = np.argsort(fs, kind="stable")
        if fs[order[0]] < res.f_best:
            res.f_best = float(fs[order[0]])
            res.x_best = xs[order[0]].copy()

        y_w = par.weights @ ys[order[: par.mu]]
        state.mean = state.mean + state.sigma * y_w

        # step-size path in the isotropic coordinates
        inv_sqrt_y = b_mat @ ((b_mat.T @ y_w) / d)
        state.p_sigma = (1 - par.c_sigma) * state.p_sigma + math.sqrt(
            par.c_sigma * (2 - par.c_sigma) * par.mueff
        ) * inv_sqrt_y
        ps_norm = float(np.linalg.norm(state.p_sigma))
        h_sigma = ps_norm / math.sqrt(
            1 - (1 - par.c_sigma) ** (2 * (gen + 1))
        ) / par.chi_n < 1.4 + 2 / (n + 1)

        state.p_c = (1 - par.c_c) * state.p_c + (
            math.sqrt(par.c_c * (2 - par.c_c) * par.mueff) * y_w if h_sigma else 0.0
        )

        rank_mu = np.einsum(
            "k,ki,kj->ij", par.weights, ys[order[: par.mu]], ys[order[: par.mu]]
        )
        c1a = par.c_1 * (1 - (0 if h_sigma else 1) * par.c_c * (2 - par.c_c))
        state.cov = (
            (1 - c1a - par.c_mu) * state.cov
            + par.c_1 * np.outer(state.p_c, state.p_c)
            + par.c_mu * rank_mu
        )
        state.cov = 0.5 * (state.cov + state.cov.T)

        state.sigma *= math.exp(
            (par.c_sigma / par.d_sigma) * (ps_norm / par.chi_n - 1)
        )

        gen += 1
        state.generation = gen
        res.history.append((float(fs[order[0]]), res.f_best, state.sigma))
        res.stds = state.stds()
        res.generations = gen
        if f_target is not None and res.f_best <= f_target:
            break
        if tol_fun > 0 and fs[order[-1]] - fs[order[0]] < tol_fun and gen > 10:
            break

    res.restarts = restarts
    return res
