"""Streaming selection policies and empirical detection rates.

Each policy sees one episode of time-ordered ``(t, score, label)`` records and
an inspection budget ``n_k``. Static, dynamic and random policies decide at
arrival time and never revisit a skipped record; batch looks at the whole
episode at once.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .curves import CriticalCurveSet
from .nhpp import RateFunction, simulate_arrivals
from .scoredist import ScoreModel


class UndefinedResultError(ValueError):
    """Raised when a detection rate has no fraud-bearing episode to average over."""


@dataclass(frozen=True)
class Episode:
    times: np.ndarray
    scores: np.ndarray
    labels: np.ndarray
    tau: float
    episode_id: str = ""

    def __post_init__(self) -> None:
        t = np.asarray(self.times, float)
        s = np.asarray(self.scores, float)
        y = np.asarray(self.labels, dtype=np.int8)
        if not (t.shape == s.shape == y.shape) or t.ndim != 1:
            raise ValueError("times, scores and labels must be 1-d and the same length")
        if t.size:
            if t[0] < 0 or t[-1] > self.tau or np.any(np.diff(t) < 0):
                raise ValueError("times must be sorted within [0, tau]")
            if s.min() < 0 or s.max() > 1:
                raise ValueError("scores must lie in [0, 1]")
            if np.any((y != 0) & (y != 1)):
                raise ValueError("labels must be 0 or 1")
        for a in (t, s, y):
            a.setflags(write=False)
        object.__setattr__(self, "times", t)
        object.__setattr__(self, "scores", s)
        object.__setattr__(self, "labels", y)

    def __len__(self) -> int:
        return int(self.times.size)

    @property
    def frauds(self) -> int:
        return int(self.labels.sum())


@dataclass(frozen=True)
class InspectionOutcome:
    selected: np.ndarray
    frauds_caught: int
    frauds_total: int
    capacity: int
    policy: str
    episode_id: str = ""
    k: float = math.nan

    @property
    def ratio(self) -> float:
        return self.frauds_caught / self.frauds_total if self.frauds_total else math.nan


@dataclass(frozen=True)
class TradeoffCurve:
    policy: str
    k_grid: np.ndarray
    psi_mean: np.ndarray
    psi_se: np.ndarray
    episodes_used: np.ndarray = field(default_factory=lambda: np.empty(0, int))


def capacity_for(k: float, lambda_total: float) -> int:
    """n_k = floor(k * Lambda(tau))."""
    if not 0.0 <= k <= 1.0:
        raise ValueError("k must be in [0, 1]")
    # guard against k*Lambda landing a hair under an integer
    return int(math.floor(k * lambda_total + 1e-9))


def _outcome(ep: Episode, selected: np.ndarray, n_k: int, policy: str, k: float) -> InspectionOutcome:
    selected = np.asarray(selected, dtype=np.int64)
    return InspectionOutcome(selected, int(ep.labels[selected].sum()), ep.frauds, n_k, policy, ep.episode_id, k)


def run_static(ep: Episode, alpha: float, n_k: int, *, k: float = math.nan) -> InspectionOutcome:
    """Take arrivals scoring at least ``alpha`` until the budget runs out."""
    if not 0.0 <= alpha <= 1.0 + 1e-12:
        raise ValueError("alpha must be in [0, 1]")
    sel = np.flatnonzero(ep.scores >= alpha)[: max(n_k, 0)]
    return _outcome(ep, sel, n_k, "static", k)


def run_dynamic(ep: Episode, curves: CriticalCurveSet, n_k: int, *, k: float = math.nan) -> InspectionOutcome:
    """Take an arrival iff its score is strictly above alpha_j(t), j = budget left."""
    if n_k <= 0 or len(ep) == 0:
        return _outcome(ep, np.empty(0, int), max(n_k, 0), "dynamic", k)
    if curves.n < n_k:
        raise ValueError(f"curves solved for n={curves.n} < n_k={n_k}")
    g, w = curves._locate(ep.times)
    a = curves.alpha
    lowest = a[n_k - 1, g] * (1.0 - w) + a[n_k - 1, g + 1] * w
    # alpha_j >= alpha_{n_k} for every j <= n_k, so nothing at or below the lowest curve is ever taken
    cand = np.flatnonzero(ep.scores > lowest)
    if cand.size == 0:
        return _outcome(ep, cand, n_k, "dynamic", k)
    # scalar walk: each step reads a single interpolated threshold
    a_rows = a[:n_k]
    gl, wl, sl = g[cand].tolist(), w[cand].tolist(), ep.scores[cand].tolist()
    picks, j = [], n_k
    for c, (gi, wi, si) in enumerate(zip(gl, wl, sl)):
        row = a_rows[j - 1]
        if si > row[gi] * (1.0 - wi) + row[gi + 1] * wi:
            picks.append(c)
            j -= 1
            if j == 0:
                break
    return _outcome(ep, cand[picks], n_k, "dynamic", k)


def run_random(ep: Episode, k: float, n_k: int, rng: np.random.Generator,
               rate: RateFunction | None = None) -> InspectionOutcome:
    """Score-blind selection at arrival time.

    With ``rate`` given, an arrival at ``t`` is taken with probability
    ``max(k, j / R(t))`` where ``j`` is the budget left and ``R(t)`` the
    expected number of arrivals still to come (probability 1 once
    ``R(t) <= j``). This spreads the budget over the horizon so that on
    average a fraction ``k`` of all arrivals is inspected. Without ``rate``
    each arrival is taken with probability ``k`` until the budget is spent,
    which under-uses the budget whenever an episode runs short.
    """
    if not 0.0 <= k <= 1.0:
        raise ValueError("k must be in [0, 1]")
    n = len(ep)
    if n_k <= 0 or k == 0.0 or n == 0:
        return _outcome(ep, np.empty(0, int), max(n_k, 0), "random", k)
    u = rng.random(n)
    if rate is None:
        return _outcome(ep, np.flatnonzero(u < k)[:n_k], n_k, "random", k)
    remaining = np.maximum(rate.total - rate.cumulative(ep.times), 0.0).tolist()
    picks, j = [], n_k
    for i, (ui, rem) in enumerate(zip(u.tolist(), remaining)):
        if rem <= j or ui < k or ui * rem < j:
            picks.append(i)
            j -= 1
            if j == 0:
                break
    return _outcome(ep, np.asarray(picks, dtype=np.int64), n_k, "random", k)


def run_batch(ep: Episode, n_k: int, *, k: float = math.nan) -> InspectionOutcome:
    """Offline: the n_k highest scores, earlier arrivals winning ties."""
    order = np.argsort(-ep.scores, kind="stable")
    return _outcome(ep, np.sort(order[: max(n_k, 0)]), n_k, "batch", k)


def synth_episode(rate: RateFunction, model: ScoreModel, rng: np.random.Generator,
                  episode_id: str = "") -> Episode:
    """One synthetic horizon: NHPP arrivals, Bernoulli(beta) labels, class-conditional scores."""
    t = simulate_arrivals(rate, rng).times
    labels = rng.random(t.size) < model.beta
    u = rng.random(t.size)
    scores = np.where(labels, model.f1.quantile(u), model.f0.quantile(u)) if t.size else np.empty(0)
    return Episode(t, scores, labels.astype(np.int8), rate.tau, episode_id)


def detection_rate(outcomes: Iterable[InspectionOutcome]) -> tuple[float, float]:
    """Mean and standard error of caught/total over episodes that contain frauds."""
    ratios = np.array([o.frauds_caught / o.frauds_total for o in outcomes if o.frauds_total > 0])
    if ratios.size == 0:
        raise UndefinedResultError("no episode contains a fraud")
    se = float(ratios.std(ddof=1) / math.sqrt(ratios.size)) if ratios.size > 1 else 0.0
    return float(ratios.mean()), se


def read_episodes(path: str | Path, tau: float) -> tuple[list[Episode], list[str]]:
    """Load ``episode_id,t_seconds,score,label`` records.

    Returns the episodes (sorted by id, records by time) and a list of
    warnings for rows that were skipped or had their score clamped.
    """
    rows: dict[str, list[tuple[float, float, int]]] = {}
    warnings: list[str] = []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        need = {"episode_id", "t_seconds", "score", "label"}
        if reader.fieldnames is None or not need <= set(reader.fieldnames):
            raise ValueError(f"{path}: expected header episode_id,t_seconds,score,label")
        for lineno, row in enumerate(reader, start=2):
            try:
                t = float(row["t_seconds"])
                s = float(row["score"])
                y = int(float(row["label"]))
                if y not in (0, 1) or not math.isfinite(t) or not math.isfinite(s):
                    raise ValueError
                if not 0.0 <= t <= tau:
                    raise ValueError
            except (TypeError, ValueError):
                warnings.append(f"line {lineno}: malformed row skipped")
                continue
            if not 0.0 <= s <= 1.0:
                warnings.append(f"line {lineno}: score {s} clamped into [0, 1]")
                s = min(max(s, 0.0), 1.0)
            rows.setdefault(row["episode_id"], []).append((t, s, y))
    episodes = []
    for eid in sorted(rows, key=_id_key):
        rec = sorted(rows[eid], key=lambda r: r[0])
        arr = np.array(rec, dtype=float).reshape(-1, 3)
        episodes.append(Episode(arr[:, 0], arr[:, 1], arr[:, 2].astype(np.int8), tau, eid))
    return episodes, warnings


def _id_key(eid: str):
    return (0, int(eid), "") if eid.lstrip("-").isdigit() else (1, 0, eid)


def write_episodes(episodes: Sequence[Episode], path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["episode_id", "t_seconds", "score", "label"])
        for ep in episodes:
            for t, s, y in zip(ep.times, ep.scores, ep.labels):
                w.writerow([ep.episode_id, repr(float(t)), repr(float(s)), int(y)])


def write_outcomes(outcomes: Iterable[InspectionOutcome], path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["policy", "k", "episode_id", "n_k", "selected", "frauds_caught", "frauds_total"])
        for o in outcomes:
            w.writerow([o.policy, repr(float(o.k)), o.episode_id, o.capacity, o.selected.size,
                        o.frauds_caught, o.frauds_total])


def write_tradeoff(curves: Iterable[TradeoffCurve], path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["policy", "k", "psi_mean", "psi_se", "episodes"])
        for c in curves:
            for i, k in enumerate(c.k_grid):
                w.writerow([c.policy, repr(float(k)), repr(float(c.psi_mean[i])), repr(float(c.psi_se[i])),
                            int(c.episodes_used[i])])
