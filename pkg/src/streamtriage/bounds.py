"""Analytical detection-rate bounds for the four selection policies.

Static, random and the end-to-end cap are closed forms. The dynamic and
batch bounds are expectations over random waiting times / class counts and
are estimated by Monte Carlo; both return ``(value, standard_error)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import betainc, gammaln, xlog1py, xlogy

from .curves import CriticalCurveSet
from .nhpp import RateFunction
from .policies import capacity_for
from .scoredist import ScoreCdf, ScoreModel

METHODS = ("static", "static_optimal", "dynamic", "random", "batch", "upper")
BATCH_GRID = 2048


@dataclass(frozen=True)
class BoundCurve:
    method: str
    k_grid: np.ndarray
    values: np.ndarray
    mc_se: np.ndarray
    beta: float
    lambda_total: float
    reps: int = 0
    seed: int | None = None


def bound_static(model: ScoreModel, lambda_total: float, k: float, alpha: float, *,
                 asymptotic: bool = False) -> float:
    """(1 - F1(a)) * min((k - 1/Lambda) / (1 - FS(a)), 1), floored at 0.

    ``asymptotic=True`` drops the 1/Lambda correction.
    """
    if lambda_total <= 0:
        raise ValueError("lambda_total must be positive")
    tail_s = 1.0 - model.fs.cdf(alpha)
    if tail_s <= 0.0:
        return 0.0
    eff = k if asymptotic else k - 1.0 / lambda_total
    eff = max(eff, 0.0)
    return float((1.0 - model.f1.cdf(alpha)) * min(eff / tail_s, 1.0))


def optimal_static_threshold(model: ScoreModel, k: float) -> float:
    """alpha* = FS^{-1}(1 - k); the top of the score support when k = 0."""
    if not 0.0 <= k <= 1.0:
        raise ValueError("k must be in [0, 1]")
    if k == 0.0:
        return model.fs.support[1]
    return float(model.fs.quantile(1.0 - k))


def bound_static_optimal(model: ScoreModel, k: float) -> float:
    if k == 0.0:
        return 0.0
    return float(1.0 - model.f1.cdf(optimal_static_threshold(model, k)))


def bound_random(lambda_total: float, k: float) -> float:
    if lambda_total <= 0:
        raise ValueError("lambda_total must be positive")
    return max(k - 1.0 / lambda_total, 0.0)


def upper_bound(beta: float, k: float) -> float:
    """min(k / beta, 1): every positive found with the first n_k inspections."""
    if not 0.0 < beta < 1.0:
        raise ValueError("beta must be in (0, 1)")
    return min(k / beta, 1.0)


def bound_dynamic_mc(model: ScoreModel, rate: RateFunction, curves: CriticalCurveSet, k: float,
                     reps: int, rng: np.random.Generator) -> tuple[float, float]:
    """Monte Carlo estimate of the dynamic-threshold lower bound.

    Inspections happen one after another: with ``j`` inspections left the
    next one arrives at hazard ``(1 - FS(alpha_j(t))) * lambda(t)`` and is a
    positive with probability proportional to ``q_ratio(alpha_j(t))``. Waiting
    times are drawn by inverting the cumulative hazard (trapezoid rule on the
    curve grid); replications whose next inspection falls past the horizon
    stop contributing.
    """
    if reps < 1:
        raise ValueError("reps must be >= 1")
    lam_total = rate.total
    n_k = capacity_for(k, lam_total)
    if n_k == 0:
        return 0.0, 0.0
    if curves.n < n_k:
        raise ValueError(f"curves solved for n={curves.n} < n_k={n_k}")
    if not math.isclose(curves.horizon, rate.tau, rel_tol=1e-9):
        raise ValueError("curve horizon does not match the rate horizon")
    t = curves.grid_times
    alpha = curves.alpha[:n_k]
    hazard = (1.0 - model.fs.cdf(alpha)) * rate.intensity(t)
    dt = np.diff(t)
    cum = np.concatenate([np.zeros((n_k, 1)), np.cumsum(0.5 * (hazard[:, 1:] + hazard[:, :-1]) * dt, axis=1)],
                         axis=1)
    q = model.q_ratio(alpha)

    now = np.zeros(reps)
    alive = np.ones(reps, dtype=bool)
    acc = np.zeros(reps)
    for i in range(1, n_k + 1):
        j = n_k - i + 1
        idx = np.flatnonzero(alive)
        if idx.size == 0:
            break
        H = cum[j - 1]
        target = np.interp(now[idx], t, H) + rng.standard_exponential(idx.size)
        ok = target <= H[-1]
        alive[idx[~ok]] = False
        idx, target = idx[ok], target[ok]
        pos = np.clip(np.searchsorted(H, target, side="left"), 1, t.size - 1)
        lo_h, hi_h = H[pos - 1], H[pos]
        frac = np.where(hi_h > lo_h, (target - lo_h) / np.where(hi_h > lo_h, hi_h - lo_h, 1.0), 1.0)
        new_t = t[pos - 1] + np.clip(frac, 0.0, 1.0) * dt[pos - 1]
        now[idx] = new_t
        acc[idx] += np.interp(new_t, t, q[j - 1])
    per_rep = acc / lam_total
    se = float(per_rep.std(ddof=1) / math.sqrt(reps)) if reps > 1 else 0.0
    return float(per_rep.mean()), se


def _log_order_stat_coef(n: int, i) -> np.ndarray:
    """log(i * C(n, i)) = log(n! / ((i-1)! (n-i)!))."""
    i = np.asarray(i, dtype=float)
    return gammaln(n + 1.0) - gammaln(i) - gammaln(n - i + 1.0)


def order_stat_pdf(d: ScoreCdf, n: int, i: int):
    """Density of the i-th smallest of n i.i.d. draws from ``d``, evaluated in log space."""
    if not 1 <= i <= n:
        raise ValueError("need 1 <= i <= n")
    log_c = float(_log_order_stat_coef(n, i))

    def pdf(x):
        x_arr = np.asarray(x, dtype=float)
        F = np.clip(np.interp(x_arr, d.knot_scores, d.knot_probs), 0.0, 1.0)
        f = np.asarray(d.density(x_arr))
        with np.errstate(divide="ignore"):
            log_val = log_c + xlogy(i - 1, F) + xlog1py(n - i, -F) + np.log(f)
        out = np.where(f > 0, np.exp(log_val), 0.0)
        return float(out) if np.ndim(out) == 0 else out

    return pdf


class _BatchKernel:
    """P(j-th largest positive beats the (n_k-j+1)-th largest negative), for given class counts.

    The integral over the positive order statistic is taken in its quantile
    coordinate u = F1(s) on a midpoint grid, where the positive order-statistic
    density is a Beta density; the negative side enters through the exact CDF of
    its order statistic, a regularized incomplete beta in F0(F1^{-1}(u)).
    """

    def __init__(self, model: ScoreModel, grid: int):
        self.u = (np.arange(grid) + 0.5) / grid
        self.log_u = np.log(self.u)
        self.log_1mu = np.log1p(-self.u)
        self.x = np.clip(model.f0.cdf(model.f1.quantile(self.u)), 0.0, 1.0)
        self.cache: dict[tuple[int, int, int], float] = {}

    def total(self, n0: int, n1: int, n_k: int) -> float:
        key = (n0, n1, n_k)
        hit = self.cache.get(key)
        if hit is not None:
            return hit
        J = min(n_k, n1)
        if J == 0:
            self.cache[key] = 0.0
            return 0.0
        j = np.arange(1, J + 1)
        rho1 = n1 - j + 1
        rho0 = n0 - n_k + j
        certain = rho0 < 1
        val = float(np.count_nonzero(certain))
        live = ~certain
        if live.any():
            r1 = rho1[live].astype(float)[:, None]
            r0 = rho0[live].astype(float)[:, None]
            logw = _log_order_stat_coef(n1, r1) + (r1 - 1) * self.log_u + (n1 - r1) * self.log_1mu
            logw -= logw.max(axis=1, keepdims=True)
            keep = logw > -40.0
            w = np.where(keep, np.exp(logw), 0.0)
            w /= w.sum(axis=1, keepdims=True)
            rows, cols = np.nonzero(keep)
            cdf0 = betainc(r0[rows, 0], n0 - r0[rows, 0] + 1.0, self.x[cols])
            val += float(np.sum(w[rows, cols] * cdf0))
        self.cache[key] = val
        return val


def bound_batch_mc(model: ScoreModel, lambda_total: float, k: float, reps: int,
                   rng: np.random.Generator, grid: int = BATCH_GRID) -> tuple[float, float]:
    """Monte Carlo estimate of the batch (offline top-n_k) lower bound.

    Each replication draws the class counts N0 ~ Poisson((1-beta) Lambda),
    N1 ~ Poisson(beta Lambda) and sums, over the min(n_k, N1) largest positive
    scores, the exact probability that each one outranks the negative it has
    to beat; the sum is divided by beta * Lambda.
    """
    if reps < 1:
        raise ValueError("reps must be >= 1")
    if model.beta <= 0:
        raise ValueError("beta must be positive")
    n_k = capacity_for(k, lambda_total)
    n0s = rng.poisson((1.0 - model.beta) * lambda_total, size=reps)
    n1s = rng.poisson(model.beta * lambda_total, size=reps)
    if n_k == 0:
        return 0.0, 0.0
    kernel = _BatchKernel(model, grid)
    per_rep = np.array([kernel.total(int(a), int(b), n_k) for a, b in zip(n0s, n1s)])
    per_rep /= model.beta * lambda_total
    se = float(per_rep.std(ddof=1) / math.sqrt(reps)) if reps > 1 else 0.0
    return float(per_rep.mean()), se
