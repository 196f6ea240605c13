"""Critical curves for sequential selection with a fixed inspection budget.

With ``j`` inspections left at time ``t`` an arrival is taken iff its score
exceeds ``alpha_j(t)``. The curves solve the lower-triangular system

    d alpha_j / dt = -lambda(t) * (phi(alpha_j) - phi(alpha_{j-1})),
    phi(alpha_0) = 0,  alpha_j(T) = 0,

integrated backwards from ``T`` with classical RK4 on a uniform grid
(subdivided into equal substeps when a grid step would span more than
``MAX_STEP_MASS`` expected arrivals). All
curves are stepped together as one vector ODE; since every component only
reads lower-indexed components, curve ``j`` is identical whatever the total
budget, and a solve at the largest budget can be sliced for smaller ones.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .nhpp import RateFunction
from .scoredist import ScoreCdf

DEFAULT_GRID_SIZE = 4096
#: Largest expected arrival count per RK4 step (lambda * h).
MAX_STEP_MASS = 0.25


class SolverError(RuntimeError):
    pass


@dataclass(frozen=True)
class CriticalCurveSet:
    """``alpha[j-1, g]`` is the threshold with ``j`` inspections left at ``grid_times[g]``."""

    grid_times: np.ndarray
    alpha: np.ndarray
    rate_hash: str = ""
    model_hash: str = ""
    steps: int = 0

    def __post_init__(self) -> None:
        t = np.asarray(self.grid_times, float)
        a = np.asarray(self.alpha, float)
        if a.ndim != 2 or a.shape[1] != t.size or t.size < 2:
            raise ValueError("alpha must be (n, G) with G = len(grid_times) >= 2")
        t.setflags(write=False)
        a.setflags(write=False)
        object.__setattr__(self, "grid_times", t)
        object.__setattr__(self, "alpha", a)

    @property
    def n(self) -> int:
        return self.alpha.shape[0]

    @property
    def horizon(self) -> float:
        return float(self.grid_times[-1])

    @property
    def grid_size(self) -> int:
        return self.grid_times.size

    def truncated(self, n: int) -> "CriticalCurveSet":
        """Curves 1..n of this set (the solution for budget n)."""
        if not 0 <= n <= self.n:
            raise ValueError(f"budget {n} exceeds solved budget {self.n}")
        return CriticalCurveSet(self.grid_times, self.alpha[:n], self.rate_hash, self.model_hash, self.steps)

    def threshold_at(self, j: int, t):
        return threshold_at(self, j, t)

    def thresholds_for(self, t: np.ndarray) -> np.ndarray:
        """All n thresholds at each time in ``t``; shape (n, len(t))."""
        g, w = self._locate(np.asarray(t, float))
        return self.alpha[:, g] * (1.0 - w) + self.alpha[:, g + 1] * w

    def _locate(self, t: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        gt = self.grid_times
        if np.any(t < gt[0] - 1e-9 * gt[-1]) or np.any(t > gt[-1] * (1 + 1e-12)):
            raise ValueError("time outside the curve grid")
        g = np.clip(np.searchsorted(gt, t, side="right") - 1, 0, gt.size - 2)
        w = np.clip((t - gt[g]) / (gt[g + 1] - gt[g]), 0.0, 1.0)
        return g, w


def threshold_at(curves: CriticalCurveSet, j: int, t):
    """alpha_j(t) by linear interpolation on the grid."""
    if not 1 <= j <= curves.n:
        raise ValueError(f"j must be in 1..{curves.n}, got {j}")
    t_arr = np.asarray(t, float)
    g, w = curves._locate(t_arr)
    row = curves.alpha[j - 1]
    out = row[g] * (1.0 - w) + row[g + 1] * w
    return float(out) if np.ndim(out) == 0 else out


def solve_curves(
    rate: RateFunction,
    fs: ScoreCdf,
    n: int,
    grid_size: int = DEFAULT_GRID_SIZE,
    *,
    model_hash: str = "",
) -> CriticalCurveSet:
    """Integrate the critical-curve system backwards from ``rate.tau``.

    After every step each curve is clamped into [0, 1], kept from decreasing
    in backward time, and capped by its predecessor so that
    ``alpha_1 >= alpha_2 >= ... >= alpha_n`` holds exactly on the grid.
    """
    if n < 1:
        raise ValueError("budget n must be >= 1")
    if grid_size < 2:
        raise ValueError("grid_size must be >= 2")
    tau = rate.tau
    t = np.linspace(0.0, tau, grid_size)
    h_grid = t[1] - t[0]
    # substeps keep lambda*h small; the decay rate of each curve is at most lambda
    lam_max = float(np.max(rate.knot_rates))
    sub = max(1, int(np.ceil(lam_max * h_grid / MAX_STEP_MASS)))
    h = h_grid / sub
    fine = np.linspace(0.0, tau, (grid_size - 1) * sub + 1)
    lam = rate.intensity(fine)
    lam_mid = rate.intensity(np.clip(fine[:-1] + 0.5 * h, 0.0, tau))
    phi = fs._phi_kernel()
    zero = np.zeros(1)

    def rhs(lam_t: float, a: np.ndarray) -> np.ndarray:
        p = phi(a)
        return -lam_t * (p - np.concatenate((zero, p[:-1])))

    alpha = np.empty((n, grid_size))
    a = np.zeros(n)
    alpha[:, -1] = a
    for i in range(fine.size - 1, 0, -1):
        # step from fine[i] to fine[i-1]: dt = -h
        k1 = rhs(lam[i], a)
        k2 = rhs(lam_mid[i - 1], a - 0.5 * h * k1)
        k3 = rhs(lam_mid[i - 1], a - 0.5 * h * k2)
        k4 = rhs(lam[i - 1], a - h * k3)
        nxt = a - (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        if not np.all(np.isfinite(nxt)):
            j = int(np.flatnonzero(~np.isfinite(nxt))[0]) + 1
            raise SolverError(f"non-finite threshold for j={j} at t={fine[i - 1]:.6g}")
        a = np.minimum.accumulate(np.minimum(np.maximum(nxt, a), 1.0))
        if (i - 1) % sub == 0:
            alpha[:, (i - 1) // sub] = a
    return CriticalCurveSet(t, alpha, rate.digest(), model_hash, fine.size - 1)


def save_curves(curves: CriticalCurveSet, path: str | Path) -> None:
    """Write ``t,alpha_1..alpha_n`` CSV plus a ``.json`` provenance sidecar."""
    path = Path(path)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t"] + [f"alpha_{j}" for j in range(1, curves.n + 1)])
        for g, tg in enumerate(curves.grid_times):
            w.writerow([repr(float(tg))] + [repr(float(v)) for v in curves.alpha[:, g]])
    sidecar = {
        "n": curves.n,
        "grid_size": curves.grid_size,
        "tau": curves.horizon,
        "rate_hash": curves.rate_hash,
        "model_hash": curves.model_hash,
        "steps": curves.steps,
    }
    path.with_suffix(".json").write_text(json.dumps(sidecar, indent=2) + "\n")


def load_curves(path: str | Path) -> CriticalCurveSet:
    path = Path(path)
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    meta_path = path.with_suffix(".json")
    meta = json.loads(meta_path.read_text()) if meta_path.exists() else {}
    return CriticalCurveSet(data[:, 0], data[:, 1:].T.copy(), meta.get("rate_hash", ""),
                            meta.get("model_hash", ""), int(meta.get("steps", data.shape[0] - 1)))


class CurveCache:
    """On-disk store of solved curve sets keyed by (rate, score model, budget, grid)."""

    def __init__(self, directory: str | Path):
        self.directory = Path(directory)
        self.directory.mkdir(parents=True, exist_ok=True)

    def _path(self, rate_hash: str, model_hash: str, n: int, grid_size: int) -> Path:
        return self.directory / f"curves_{rate_hash}_{model_hash}_n{n}_g{grid_size}.csv"

    def get(self, rate: RateFunction, fs: ScoreCdf, n: int, grid_size: int = DEFAULT_GRID_SIZE,
            *, model_hash: str) -> CriticalCurveSet:
        """Return curves for budget ``n``, reusing any cached solve with a budget >= n."""
        rh = rate.digest()
        pattern = f"curves_{rh}_{model_hash}_n*_g{grid_size}.csv"
        best = None
        for p in self.directory.glob(pattern):
            stored_n = int(p.stem.rsplit("_n", 1)[1].split("_g")[0])
            if stored_n >= n and (best is None or stored_n < best[0]):
                best = (stored_n, p)
        if best is not None:
            return load_curves(best[1]).truncated(n)
        curves = solve_curves(rate, fs, n, grid_size, model_hash=model_hash)
        save_curves(curves, self._path(rh, model_hash, n, grid_size))
        return curves
