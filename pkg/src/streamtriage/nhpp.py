"""Non-homogeneous Poisson processes on a finite horizon [0, tau].

Intensities are piecewise linear (or piecewise constant in ``step`` mode), so
the cumulative intensity is piecewise quadratic and both it and its inverse
are evaluated in closed form.
"""

from __future__ import annotations

import csv
import hashlib
import json
import math
from collections import defaultdict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

#: Returned by :func:`sample_next_arrival` when no further event occurs before tau.
BEYOND_HORIZON = math.inf


class DomainError(ValueError):
    """Argument outside the domain of a function."""


@dataclass(frozen=True)
class RateFunction:
    """Intensity lambda(t) on [0, tau], linearly interpolated between knots.

    With ``step=True`` the rate at ``knot_times[i]`` is held constant on
    ``[knot_times[i], knot_times[i+1])`` and the last rate is ignored.
    """

    knot_times: np.ndarray
    knot_rates: np.ndarray
    step: bool = False
    _cum: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self) -> None:
        t = np.asarray(self.knot_times, dtype=float)
        r = np.asarray(self.knot_rates, dtype=float)
        if t.ndim != 1 or t.shape != r.shape or t.size < 2:
            raise ValueError("knot_times and knot_rates must be 1-d with >= 2 equal-length entries")
        if t[0] != 0.0:
            raise ValueError("first knot must be at t=0")
        if np.any(np.diff(t) <= 0):
            raise ValueError("knot_times must be strictly increasing")
        if np.any(r < 0) or not np.all(np.isfinite(r)):
            raise ValueError("rates must be finite and nonnegative")
        t.setflags(write=False)
        r.setflags(write=False)
        object.__setattr__(self, "knot_times", t)
        object.__setattr__(self, "knot_rates", r)
        a, b = self._segment_rates()
        cum = np.concatenate([[0.0], np.cumsum(0.5 * (a + b) * np.diff(t))])
        cum.setflags(write=False)
        object.__setattr__(self, "_cum", cum)

    @classmethod
    def constant(cls, rate: float, tau: float) -> "RateFunction":
        return cls(np.array([0.0, tau]), np.array([rate, rate]))

    @property
    def tau(self) -> float:
        return float(self.knot_times[-1])

    @property
    def total(self) -> float:
        """Lambda(tau), the expected number of arrivals over the horizon."""
        return float(self._cum[-1])

    def _segment_rates(self) -> tuple[np.ndarray, np.ndarray]:
        r = self.knot_rates
        if self.step:
            return r[:-1], r[:-1]
        return r[:-1], r[1:]

    def _check_times(self, t: np.ndarray) -> None:
        if np.any(t < 0) or np.any(t > self.tau) or np.any(np.isnan(t)):
            raise DomainError(f"time outside [0, {self.tau}]")

    def intensity(self, t):
        """lambda(t); vectorised over ``t``."""
        t_arr = np.asarray(t, dtype=float)
        self._check_times(t_arr)
        if self.step:
            idx = np.clip(np.searchsorted(self.knot_times, t_arr, side="right") - 1, 0, self.knot_times.size - 2)
            out = self.knot_rates[idx]
        else:
            out = np.interp(t_arr, self.knot_times, self.knot_rates)
        return float(out) if np.ndim(out) == 0 else out

    def cumulative(self, t):
        """Lambda(t) = integral of lambda over [0, t]; exact, vectorised."""
        t_arr = np.asarray(t, dtype=float)
        self._check_times(t_arr)
        kt = self.knot_times
        idx = np.clip(np.searchsorted(kt, t_arr, side="right") - 1, 0, kt.size - 2)
        a, b = self._segment_rates()
        h = kt[idx + 1] - kt[idx]
        s = t_arr - kt[idx]
        slope = (b[idx] - a[idx]) / h
        out = self._cum[idx] + a[idx] * s + 0.5 * slope * s * s
        return float(out) if np.ndim(out) == 0 else out

    def inverse_cumulative(self, u):
        """Smallest t with Lambda(t) >= u; vectorised.

        Flat (zero-rate) stretches resolve to their left endpoint.
        """
        u_arr = np.asarray(u, dtype=float)
        if np.any(u_arr < 0) or np.any(np.isnan(u_arr)):
            raise DomainError("u must be nonnegative")
        if np.any(u_arr > self.total * (1 + 1e-12) + 1e-300):
            raise DomainError(f"u exceeds Lambda(tau) = {self.total}")
        u_arr = np.minimum(u_arr, self.total)
        kt = self.knot_times
        m = np.searchsorted(self._cum, u_arr, side="left")
        seg = np.clip(m - 1, 0, kt.size - 2)
        a, b = self._segment_rates()
        h = kt[seg + 1] - kt[seg]
        slope = (b[seg] - a[seg]) / h
        v = u_arr - self._cum[seg]
        disc = np.maximum(a[seg] ** 2 + 2.0 * slope * v, 0.0)
        denom = a[seg] + np.sqrt(disc)
        with np.errstate(divide="ignore", invalid="ignore"):
            s = np.where(denom > 0, 2.0 * v / denom, 0.0)
        out = np.where(m == 0, 0.0, kt[seg] + np.clip(s, 0.0, h))
        return float(out) if np.ndim(out) == 0 else out

    def to_dict(self) -> dict:
        d = {"tau": self.tau, "knot_times": self.knot_times.tolist(), "knot_rates": self.knot_rates.tolist()}
        if self.step:
            d["interpolation"] = "step"
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "RateFunction":
        rate = cls(np.asarray(d["knot_times"], float), np.asarray(d["knot_rates"], float),
                   step=d.get("interpolation", "linear") == "step")
        if "tau" in d and not math.isclose(rate.tau, float(d["tau"])):
            raise ValueError("tau does not match the last knot time")
        return rate

    def digest(self) -> str:
        return hashlib.sha256(json.dumps(self.to_dict(), sort_keys=True).encode()).hexdigest()[:16]


@dataclass(frozen=True)
class ArrivalSequence:
    times: np.ndarray
    tau: float

    def __post_init__(self) -> None:
        t = np.asarray(self.times, dtype=float)
        if t.ndim != 1:
            raise ValueError("times must be 1-d")
        if t.size and (t[0] < 0 or t[-1] > self.tau or np.any(np.diff(t) < 0)):
            raise ValueError("arrival times must be sorted within [0, tau]")
        t.setflags(write=False)
        object.__setattr__(self, "times", t)

    def __len__(self) -> int:
        return int(self.times.size)


def cumulative(rate: RateFunction, t: float) -> float:
    return rate.cumulative(t)


def inverse_cumulative(rate: RateFunction, u: float) -> float:
    return rate.inverse_cumulative(u)


def simulate_arrivals(rate: RateFunction, rng: np.random.Generator) -> ArrivalSequence:
    """Arrival times by inversion of the cumulative intensity.

    Unit-rate exponential gaps are accumulated until they pass Lambda(tau) and
    the partial sums are mapped through the inverse cumulative intensity.
    """
    total = rate.total
    if total <= 0:
        return ArrivalSequence(np.empty(0), rate.tau)
    chunk = max(16, int(total + 6 * math.sqrt(total) + 16))
    points: list[np.ndarray] = []
    last = 0.0
    while True:
        s = last + np.cumsum(rng.standard_exponential(chunk))
        inside = s[s <= total]
        points.append(inside)
        if inside.size < s.size:
            break
        last = float(s[-1])
    u = np.concatenate(points)
    return ArrivalSequence(rate.inverse_cumulative(u), rate.tau)


def sample_next_arrival(rate: RateFunction, gamma: float, rng: np.random.Generator) -> float:
    """Waiting time from ``gamma`` until the next event, or ``BEYOND_HORIZON``."""
    if not 0.0 <= gamma < rate.tau:
        raise DomainError(f"gamma must lie in [0, {rate.tau})")
    target = rate.cumulative(gamma) + rng.standard_exponential()
    if target > rate.total:
        return BEYOND_HORIZON
    return rate.inverse_cumulative(target) - gamma


def split_thinning(
    arrivals: ArrivalSequence, p: float, rng: np.random.Generator
) -> tuple[ArrivalSequence, ArrivalSequence]:
    """Independently route each arrival to stream A with probability ``p``."""
    if not 0.0 <= p <= 1.0:
        raise ValueError("p must be a probability")
    mask = rng.random(len(arrivals)) < p
    return (ArrivalSequence(arrivals.times[mask], arrivals.tau),
            ArrivalSequence(arrivals.times[~mask], arrivals.tau))


def superpose(*streams: ArrivalSequence) -> ArrivalSequence:
    if not streams:
        raise ValueError("need at least one stream")
    tau = max(s.tau for s in streams)
    merged = np.concatenate([s.times for s in streams])
    return ArrivalSequence(np.sort(merged, kind="stable"), tau)


def estimate_rate(
    episodes: Sequence[ArrivalSequence], bins: int, *, piecewise_constant: bool = False
) -> RateFunction:
    """Histogram intensity estimate pooled over independent episodes.

    Bin rates are count / (episodes * bin width). By default the histogram is
    turned into a piecewise-linear rate with knots at the bin midpoints and the
    end values carried flat to 0 and tau; this moves the total mass by at most
    one bin's worth of curvature. ``piecewise_constant=True`` keeps the step
    function, whose total mass equals the mean episode count exactly.
    """
    if not episodes:
        raise ValueError("need at least one episode")
    if bins < 1:
        raise ValueError("bins must be >= 1")
    tau = episodes[0].tau
    if any(not math.isclose(e.tau, tau) for e in episodes):
        raise ValueError("episodes must share a horizon")
    edges = np.linspace(0.0, tau, bins + 1)
    counts = np.zeros(bins)
    for e in episodes:
        counts += np.histogram(e.times, bins=edges)[0]
    width = tau / bins
    rates = counts / (len(episodes) * width)
    if piecewise_constant:
        return RateFunction(edges, np.append(rates, rates[-1]), step=True)
    if bins == 1:
        return RateFunction(np.array([0.0, tau]), np.array([rates[0], rates[0]]))
    mids = 0.5 * (edges[:-1] + edges[1:])
    return RateFunction(np.concatenate([[0.0], mids, [tau]]),
                        np.concatenate([[rates[0]], rates, [rates[-1]]]))


def read_episode_times(path: str | Path, tau: float) -> list[ArrivalSequence]:
    """Load ``episode_id,t_seconds`` rows (extra columns ignored), one sequence per episode."""
    grouped: dict[str, list[float]] = defaultdict(list)
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or not {"episode_id", "t_seconds"} <= set(reader.fieldnames):
            raise ValueError(f"{path}: expected header with episode_id,t_seconds")
        for row in reader:
            grouped[row["episode_id"]].append(float(row["t_seconds"]))
    return [ArrivalSequence(np.sort(np.asarray(v)), tau) for _, v in sorted(grouped.items(), key=_episode_key)]


def _episode_key(item):
    key = item[0]
    return (0, int(key), "") if key.lstrip("-").isdigit() else (1, 0, key)


def load_rate(path: str | Path) -> RateFunction:
    return RateFunction.from_dict(json.loads(Path(path).read_text()))


def save_rate(rate: RateFunction, path: str | Path) -> None:
    Path(path).write_text(json.dumps(rate.to_dict(), indent=2) + "\n")


def sinusoidal_rate(mean_rate: float, amplitude: float, tau: float, knots: int = 97,
                    phase: float = 0.0) -> RateFunction:
    """Piecewise-linear approximation of mean*(1 + amplitude*sin(2*pi*t/tau + phase))."""
    if not 0 <= amplitude <= 1:
        raise ValueError("amplitude must be in [0, 1]")
    t = np.linspace(0.0, tau, knots)
    return RateFunction(t, mean_rate * (1 + amplitude * np.sin(2 * np.pi * t / tau + phase)))

