"""Classifier score distributions on [0, 1].

Every CDF here is continuous and piecewise linear, so densities are
piecewise constant and the tail integral ``phi(a) = E[max(S - a, 0)]`` is
piecewise quadratic with a closed form.
"""

from __future__ import annotations

import hashlib
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .nhpp import DomainError

logger = logging.getLogger(__name__)

#: Width (score units) given to a tied group of samples at the bottom of the support.
TIE_EPS = 1e-6


@dataclass(frozen=True)
class ScoreCdf:
    """Continuous piecewise-linear CDF.

    ``knot_probs`` starts at 0 and ends at 1; outside the knots the CDF is 0
    (below) or 1 (above).
    """

    knot_scores: np.ndarray
    knot_probs: np.ndarray
    _tail: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self) -> None:
        x = np.asarray(self.knot_scores, dtype=float)
        p = np.asarray(self.knot_probs, dtype=float)
        if x.ndim != 1 or x.shape != p.shape or x.size < 2:
            raise ValueError("need >= 2 knots with matching probabilities")
        if np.any(np.diff(x) <= 0):
            raise ValueError("knot_scores must be strictly increasing")
        if x[0] < 0 or x[-1] > 1:
            raise ValueError("knot_scores must lie in [0, 1]")
        if np.any(np.diff(p) < 0) or p[0] != 0.0 or p[-1] != 1.0:
            raise ValueError("knot_probs must rise monotonically from 0 to 1")
        x.setflags(write=False)
        p.setflags(write=False)
        object.__setattr__(self, "knot_scores", x)
        object.__setattr__(self, "knot_probs", p)
        # tail[i] = integral of (1 - F) from knot i to the top knot
        seg = np.diff(x) * (1.0 - 0.5 * (p[:-1] + p[1:]))
        tail = np.concatenate([np.cumsum(seg[::-1])[::-1], [0.0]])
        tail.setflags(write=False)
        object.__setattr__(self, "_tail", tail)

    @classmethod
    def uniform(cls, lo: float = 0.0, hi: float = 1.0) -> "ScoreCdf":
        return cls(np.array([lo, hi]), np.array([0.0, 1.0]))

    @property
    def support(self) -> tuple[float, float]:
        return float(self.knot_scores[0]), float(self.knot_scores[-1])

    def cdf(self, s):
        s_arr = np.asarray(s, dtype=float)
        if np.any(s_arr < 0) or np.any(s_arr > 1) or np.any(np.isnan(s_arr)):
            raise DomainError("score outside [0, 1]")
        return _unwrap(np.interp(s_arr, self.knot_scores, self.knot_probs))

    def density(self, s):
        """Piecewise-constant density; right-continuous at inner knots, left-continuous at the top."""
        s_arr = np.asarray(s, dtype=float)
        x, p = self.knot_scores, self.knot_probs
        idx = np.clip(np.searchsorted(x, s_arr, side="right") - 1, 0, x.size - 2)
        inside = (s_arr >= x[0]) & (s_arr <= x[-1])
        dens = (p[idx + 1] - p[idx]) / (x[idx + 1] - x[idx])
        return _unwrap(np.where(inside, dens, 0.0))

    def quantile(self, u):
        """Smallest score s with F(s) >= u."""
        u_arr = np.asarray(u, dtype=float)
        if np.any(u_arr < 0) or np.any(u_arr > 1) or np.any(np.isnan(u_arr)):
            raise DomainError("probability outside [0, 1]")
        x, p = self.knot_scores, self.knot_probs
        m = np.searchsorted(p, u_arr, side="left")
        seg = np.clip(m - 1, 0, x.size - 2)
        dp = p[seg + 1] - p[seg]
        with np.errstate(divide="ignore", invalid="ignore"):
            frac = np.where(dp > 0, (u_arr - p[seg]) / dp, 0.0)
        out = np.where(m == 0, x[0], x[seg] + np.clip(frac, 0.0, 1.0) * (x[seg + 1] - x[seg]))
        return _unwrap(out)

    def sample(self, rng: np.random.Generator, size=None):
        return self.quantile(rng.random(size))

    def partial_expectation(self, alpha):
        """phi(alpha) = integral_alpha^1 (1 - F(s)) ds, exact for the piecewise-linear CDF."""
        a = np.asarray(alpha, dtype=float)
        x, p = self.knot_scores, self.knot_probs
        lo, hi = x[0], x[-1]
        ac = np.clip(a, lo, hi)
        idx = np.clip(np.searchsorted(x, ac, side="right") - 1, 0, x.size - 2)
        f_a = np.interp(ac, x, p)
        within = (x[idx + 1] - ac) * (1.0 - 0.5 * (f_a + p[idx + 1])) + self._tail[idx + 1]
        # below the support the CDF is 0, so (1 - F) integrates to the gap width
        out = np.where(a < lo, within + (lo - a), within)
        return _unwrap(np.maximum(out, 0.0))

    def _phi_kernel(self):
        """Unchecked phi for arrays inside [0, 1], as per-segment quadratics; used in solver loops."""
        x, p = self.knot_scores, self.knot_probs
        if x[0] > 0:
            x, p = np.concatenate(([0.0], x)), np.concatenate(([0.0], p))
        if x[-1] < 1:
            x, p = np.concatenate((x, [1.0])), np.concatenate((p, [1.0]))
        m = np.diff(p) / np.diff(x)
        seg = np.diff(x) * (1.0 - 0.5 * (p[:-1] + p[1:]))
        tail = np.concatenate([np.cumsum(seg[::-1])[::-1], [0.0]])
        b = x[1:]
        lin = 1.0 - p[:-1] + m * x[:-1]
        c2 = 0.5 * m
        c1 = -lin
        c0 = lin * b - 0.5 * m * b * b + tail[1:]
        inner = x[1:-1]
        search = inner.searchsorted

        def phi(a: np.ndarray) -> np.ndarray:
            idx = search(a, side="right")
            return (c2[idx] * a + c1[idx]) * a + c0[idx]

        return phi

    def mean(self) -> float:
        return float(self.partial_expectation(0.0))

    def to_dict(self) -> dict:
        return {"knots": self.knot_scores.tolist(), "probs": self.knot_probs.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "ScoreCdf":
        return cls(np.asarray(d["knots"], float), np.asarray(d["probs"], float))


def _unwrap(a):
    return float(a) if np.ndim(a) == 0 else a


def fit_ecdf(samples: Sequence[float]) -> ScoreCdf:
    """Continuous ECDF through the sample plotting positions.

    The sorted sample ``x_(1) <= ... <= x_(n)`` is joined by straight lines
    through ``(x_(i), (i-1)/(n-1))``; a tied group keeps the value of its last
    member. If the lowest value is tied it is widened downwards by
    ``TIE_EPS`` (upwards when it sits at 0) so the CDF starts at 0.

    With ``m`` the size of the largest group of tied samples, ``G`` stays
    within ``m/(n-1)`` of the step ECDF on ``[x_(1), x_(n)]``, so ``phi``
    computed from ``G`` differs from the empirical mean of ``max(S - a, 0)``
    by at most ``(x_(n) - x_(1)) * m/(n-1) + TIE_EPS``.
    """
    s = np.sort(np.asarray(samples, dtype=float).ravel())
    if s.size < 2:
        raise ValueError("need at least 2 samples")
    if np.isnan(s).any() or s[0] < 0 or s[-1] > 1:
        raise ValueError("samples must lie in [0, 1]")
    n = s.size
    uniq, last_idx = _last_of_ties(s)
    probs = last_idx / (n - 1)
    knots = uniq
    if probs[0] > 0:
        if knots[0] - TIE_EPS >= 0:
            knots = np.concatenate([[knots[0] - TIE_EPS], knots])
            probs = np.concatenate([[0.0], probs])
        elif knots.size == 1 or knots[1] > knots[0] + TIE_EPS:
            knots = np.concatenate([[knots[0]], [knots[0] + TIE_EPS], knots[1:]])
            probs = np.concatenate([[0.0], probs])
        else:
            probs = probs.copy()
            probs[0] = 0.0
    if knots.size == 1:  # pragma: no cover - unreachable after widening
        raise ValueError("degenerate sample")
    probs[-1] = 1.0
    return ScoreCdf(knots, probs)


def _last_of_ties(sorted_vals: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    uniq, counts = np.unique(sorted_vals, return_counts=True)
    return uniq, np.cumsum(counts) - 1.0


def clamp_scores(scores: np.ndarray) -> tuple[np.ndarray, int]:
    """Clip scores into [0, 1]; returns the clipped array and how many moved."""
    scores = np.asarray(scores, dtype=float)
    bad = int(np.count_nonzero((scores < 0) | (scores > 1)))
    if bad:
        logger.warning("clamped %d score(s) into [0, 1]", bad)
    return np.clip(scores, 0.0, 1.0), bad


def mixture(f0: ScoreCdf, f1: ScoreCdf, beta: float) -> ScoreCdf:
    """(1 - beta) F0 + beta F1 on the union of both knot sets."""
    if not 0.0 <= beta <= 1.0:
        raise ValueError("beta must be in [0, 1]")
    knots = np.union1d(f0.knot_scores, f1.knot_scores)
    probs = (1.0 - beta) * np.interp(knots, f0.knot_scores, f0.knot_probs) + beta * np.interp(
        knots, f1.knot_scores, f1.knot_probs
    )
    probs[0], probs[-1] = 0.0, 1.0
    return ScoreCdf(knots, np.maximum.accumulate(probs))


def partial_expectation(d: ScoreCdf, alpha):
    return d.partial_expectation(alpha)


@dataclass(frozen=True)
class ScoreModel:
    """Class prior ``beta`` (fraction of positives) and the per-class score CDFs."""

    beta: float
    f0: ScoreCdf
    f1: ScoreCdf
    fs: ScoreCdf = field(init=False, compare=False)

    def __post_init__(self) -> None:
        if not 0.0 <= self.beta < 1.0:
            raise ValueError("beta must be in [0, 1)")
        if self.beta >= 0.5:
            logger.warning("beta=%.3g is not a minority-class prior", self.beta)
        object.__setattr__(self, "fs", mixture(self.f0, self.f1, self.beta))

    def q_ratio(self, alpha, *, scaled: bool = False, return_flag: bool = False):
        """(1 - F1(a)) / (1 - FS(a)): odds multiplier that an item above ``a`` is positive.

        ``scaled=True`` multiplies by beta, giving the probability that an
        arrival scoring above ``a`` is positive. Where FS(a) = 1 there is no
        mass above ``a`` and the value is 0; ``return_flag`` also returns a
        boolean mask of those points.
        """
        a = np.asarray(alpha, dtype=float)
        tail_s = 1.0 - np.asarray(self.fs.cdf(a))
        tail_1 = 1.0 - np.asarray(self.f1.cdf(a))
        exhausted = tail_s <= 0.0
        with np.errstate(divide="ignore", invalid="ignore"):
            q = np.where(exhausted, 0.0, tail_1 / np.where(exhausted, 1.0, tail_s))
        if scaled:
            q = np.minimum(self.beta * q, 1.0)
        q = _unwrap(q)
        if return_flag:
            return q, (exhausted if np.ndim(exhausted) else bool(exhausted))
        return q

    def to_dict(self) -> dict:
        return {"beta": self.beta, "f0": self.f0.to_dict(), "f1": self.f1.to_dict()}

    @classmethod
    def from_dict(cls, d: dict) -> "ScoreModel":
        return cls(float(d["beta"]), ScoreCdf.from_dict(d["f0"]), ScoreCdf.from_dict(d["f1"]))

    def digest(self) -> str:
        return hashlib.sha256(json.dumps(self.to_dict(), sort_keys=True).encode()).hexdigest()[:16]


def q_ratio(model: ScoreModel, alpha, **kwargs):
    return model.q_ratio(alpha, **kwargs)


def load_model(path: str | Path) -> ScoreModel:
    return ScoreModel.from_dict(json.loads(Path(path).read_text()))


def save_model(model: ScoreModel, path: str | Path) -> None:
    Path(path).write_text(json.dumps(model.to_dict(), indent=2) + "\n")


def beta_shaped_cdf(a: float, b: float, knots: int = 201) -> ScoreCdf:
    """Piecewise-linear approximation of a Beta(a, b) CDF on a uniform knot grid."""
    from scipy.special import betainc

    x = np.linspace(0.0, 1.0, knots)
    p = betainc(a, b, x)
    p[0], p[-1] = 0.0, 1.0
    return ScoreCdf(x, np.maximum.accumulate(p))
