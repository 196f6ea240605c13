"""Tradeoff sweeps: run policies over many episodes and evaluate bounds on a k grid."""

from __future__ import annotations

import csv
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from . import bounds
from .bounds import BoundCurve
from .curves import CriticalCurveSet
from .nhpp import RateFunction
from .policies import (
    Episode,
    InspectionOutcome,
    TradeoffCurve,
    UndefinedResultError,
    capacity_for,
    detection_rate,
    run_batch,
    run_dynamic,
    run_random,
    run_static,
    synth_episode,
)
from .scoredist import ScoreModel

POLICIES = ("static", "static_optimal", "dynamic", "random", "batch")
# dominance order checked by the sweep, best first
DOMINANCE = ("batch", "dynamic", "static_optimal", "random")


def make_episodes(rate: RateFunction, model: ScoreModel, count: int, seed: int) -> list[Episode]:
    """Synthetic episodes; episode ``i`` uses its own generator seeded ``seed + i``."""
    return [synth_episode(rate, model, np.random.default_rng(seed + i), str(i)) for i in range(count)]


@dataclass(frozen=True)
class _Task:
    episodes: Sequence[Episode]
    offset: int
    k_grid: tuple[float, ...]
    policies: tuple[str, ...]
    lambda_total: float
    model: ScoreModel
    rate: RateFunction
    curves: CriticalCurveSet | None
    alpha: float
    seed: int


def _run_chunk(task: _Task) -> list[InspectionOutcome]:
    out: list[InspectionOutcome] = []
    thresholds = {k: bounds.optimal_static_threshold(task.model, k) for k in task.k_grid}
    for e_off, ep in enumerate(task.episodes):
        e_idx = task.offset + e_off
        for k_idx, k in enumerate(task.k_grid):
            n_k = capacity_for(k, task.lambda_total)
            for policy in task.policies:
                if policy == "static":
                    o = run_static(ep, task.alpha, n_k, k=k)
                elif policy == "static_optimal":
                    o = run_static(ep, thresholds[k], n_k, k=k)
                    o = InspectionOutcome(o.selected, o.frauds_caught, o.frauds_total, n_k, policy, o.episode_id, k)
                elif policy == "dynamic":
                    o = run_dynamic(ep, task.curves, n_k, k=k)
                elif policy == "random":
                    rng = np.random.default_rng([task.seed + e_idx, 1 + k_idx])
                    o = run_random(ep, k, n_k, rng, rate=task.rate)
                elif policy == "batch":
                    o = run_batch(ep, n_k, k=k)
                else:
                    raise ValueError(f"unknown policy {policy!r}")
                out.append(o)
    return out


def run_policies(
    episodes: Sequence[Episode],
    model: ScoreModel,
    rate: RateFunction,
    k_grid: Sequence[float],
    policies: Sequence[str] = POLICIES,
    curves: CriticalCurveSet | None = None,
    *,
    alpha: float = 0.5,
    seed: int = 0,
    lambda_total: float | None = None,
    workers: int = 1,
) -> list[InspectionOutcome]:
    """Every (episode, k, policy) outcome, ordered by episode, then k, then policy.

    ``lambda_total`` sets the budget n_k = floor(k * Lambda); it defaults to
    the rate model's Lambda(tau). Output order does not depend on ``workers``.
    """
    lam = rate.total if lambda_total is None else lambda_total
    policies = tuple(policies)
    if "dynamic" in policies:
        need = capacity_for(max(k_grid), lam)
        if curves is None or curves.n < need:
            raise ValueError(f"dynamic policy needs curves solved for n >= {need}")
    chunk = max(1, math.ceil(len(episodes) / max(workers, 1)))
    tasks = [
        _Task(episodes[i:i + chunk], i, tuple(float(k) for k in k_grid), policies, lam, model, rate, curves, alpha,
              seed)
        for i in range(0, len(episodes), chunk)
    ]
    if workers <= 1 or len(tasks) == 1:
        results = [_run_chunk(t) for t in tasks]
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_run_chunk, tasks))
    return [o for r in results for o in r]


def summarize(outcomes: Iterable[InspectionOutcome], k_grid: Sequence[float],
              policies: Sequence[str]) -> list[TradeoffCurve]:
    """Collapse outcomes into one tradeoff curve per policy."""
    grouped: dict[tuple[str, float], list[InspectionOutcome]] = {}
    for o in outcomes:
        grouped.setdefault((o.policy, float(o.k)), []).append(o)
    curves = []
    for p in policies:
        means, ses, used = [], [], []
        for k in k_grid:
            outs = grouped.get((p, float(k)), [])
            try:
                m, s = detection_rate(outs)
            except UndefinedResultError:
                m, s = math.nan, math.nan
            means.append(m)
            ses.append(s)
            used.append(sum(1 for o in outs if o.frauds_total > 0))
        curves.append(TradeoffCurve(p, np.asarray(k_grid, float), np.array(means), np.array(ses), np.array(used)))
    return curves


def analytic_curves(
    model: ScoreModel,
    rate: RateFunction,
    k_grid: Sequence[float],
    methods: Sequence[str],
    curves: CriticalCurveSet | None = None,
    *,
    alpha: float = 0.5,
    reps: int = 1000,
    seed: int = 0,
) -> list[BoundCurve]:
    """Bound values for each requested method on ``k_grid``.

    Monte Carlo methods use a generator seeded from ``(seed, method, k index)``
    so each cell is reproducible on its own.
    """
    lam = rate.total
    out = []
    for method in methods:
        vals, ses = [], []
        for k_idx, k in enumerate(k_grid):
            se = 0.0
            if method == "static":
                v = bounds.bound_static(model, lam, k, alpha)
            elif method == "static_optimal":
                v = bounds.bound_static_optimal(model, k)
            elif method == "random":
                v = bounds.bound_random(lam, k)
            elif method == "upper":
                v = bounds.upper_bound(model.beta, k)
            elif method == "dynamic":
                if curves is None:
                    raise ValueError("dynamic bound needs solved curves")
                rng = np.random.default_rng([seed, 2, k_idx])
                v, se = bounds.bound_dynamic_mc(model, rate, curves, k, reps, rng)
            elif method == "batch":
                rng = np.random.default_rng([seed, 3, k_idx])
                v, se = bounds.bound_batch_mc(model, lam, k, reps, rng)
            else:
                raise ValueError(f"unknown method {method!r}")
            vals.append(min(max(v, 0.0), 1.0))
            ses.append(se)
        mc = method in ("dynamic", "batch")
        out.append(BoundCurve(method, np.asarray(k_grid, float), np.array(vals), np.array(ses), model.beta, lam,
                              reps if mc else 0, seed if mc else None))
    return out


def write_bounds(curves: Iterable[BoundCurve], path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["method", "k", "value", "mc_se", "reps", "seed"])
        for c in curves:
            for i, k in enumerate(c.k_grid):
                w.writerow([c.method, repr(float(k)), repr(float(c.values[i])), repr(float(c.mc_se[i])), c.reps,
                            "" if c.seed is None else c.seed])


def combined_rows(empirical: Sequence[TradeoffCurve], analytic: Sequence[BoundCurve]) -> list[tuple]:
    """Long-format ``(source, method, k, value, se)`` rows."""
    rows = []
    for c in empirical:
        rows += [("empirical", c.policy, float(k), float(c.psi_mean[i]), float(c.psi_se[i]))
                 for i, k in enumerate(c.k_grid)]
    for b in analytic:
        src = "upper" if b.method == "upper" else "analytic"
        rows += [(src, b.method, float(k), float(b.values[i]), float(b.mc_se[i])) for i, k in enumerate(b.k_grid)]
    return rows


def write_combined(rows: Iterable[tuple], path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["source", "method", "k", "value", "se"])
        for src, method, k, v, se in rows:
            w.writerow([src, method, repr(k), repr(v), repr(se)])


def self_checks(empirical: Sequence[TradeoffCurve], analytic: Sequence[BoundCurve], beta: float,
                n_se: float = 2.0) -> list[str]:
    """Invariant violations in a sweep: range, dominance order and the upper cap.

    Returns human-readable failure messages; an empty list means all passed.
    """
    failures = []
    emp = {c.policy: c for c in empirical}
    for c in empirical:
        bad = np.flatnonzero((c.psi_mean < 0) | (c.psi_mean > 1))
        failures += [f"{c.policy}: psi={c.psi_mean[i]:.4f} outside [0, 1] at k={c.k_grid[i]}" for i in bad]
    order = [p for p in DOMINANCE if p in emp]
    for hi, lo in zip(order, order[1:]):
        a, b = emp[hi], emp[lo]
        slack = n_se * np.hypot(a.psi_se, b.psi_se)
        for i in np.flatnonzero(a.psi_mean + slack < b.psi_mean):
            failures.append(f"dominance {hi} >= {lo} fails at k={a.k_grid[i]}: "
                            f"{a.psi_mean[i]:.4f} < {b.psi_mean[i]:.4f}")
    if 0 < beta < 1:
        for c in empirical:
            cap = np.minimum(c.k_grid / beta, 1.0)
            for i in np.flatnonzero(c.psi_mean > cap + n_se * c.psi_se):
                failures.append(f"{c.policy}: empirical {c.psi_mean[i]:.4f} above cap {cap[i]:.4f} at k={c.k_grid[i]}")
        for b in analytic:
            cap = np.minimum(b.k_grid / beta, 1.0)
            for i in np.flatnonzero(b.values > cap + n_se * b.mc_se + 1e-12):
                failures.append(f"{b.method}: bound {b.values[i]:.4f} above cap {cap[i]:.4f} at k={b.k_grid[i]}")
    return failures


def summary_table(empirical: Sequence[TradeoffCurve], analytic: Sequence[BoundCurve]) -> str:
    """Plain-text table of empirical and analytic values with DT-BP and ST-BP gaps."""
    emp = {c.policy: c for c in empirical}
    ana = {b.method: b for b in analytic}
    grid = next(iter(emp.values())).k_grid if emp else next(iter(ana.values())).k_grid
    cols = [p for p in POLICIES if p in emp]
    head = ["k"] + [f"emp:{p}" for p in cols] + [f"ana:{m}" for m in bounds.METHODS if m in ana]
    gaps = "batch" in emp and "dynamic" in emp
    sgap = "batch" in emp and "static_optimal" in emp
    if gaps:
        head.append("DT-BP")
    if sgap:
        head.append("ST-BP")
    lines = ["  ".join(f"{h:>16}" for h in head)]
    for i, k in enumerate(grid):
        row = [f"{k:16.4f}"]
        row += [f"{emp[p].psi_mean[i]:9.4f}±{emp[p].psi_se[i]:.4f}" for p in cols]
        row += [f"{ana[m].values[i]:16.4f}" for m in bounds.METHODS if m in ana]
        if gaps:
            row.append(f"{emp['dynamic'].psi_mean[i] - emp['batch'].psi_mean[i]:16.4f}")
        if sgap:
            row.append(f"{emp['static_optimal'].psi_mean[i] - emp['batch'].psi_mean[i]:16.4f}")
        lines.append("  ".join(r.rjust(16) for r in row))
    return "\n".join(lines)
