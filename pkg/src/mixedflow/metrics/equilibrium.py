"""Equilibrium (NE) detection and the Pareto check against a no-control run."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


class InsufficientDataError(ValueError):
    pass


@dataclass(frozen=True)
class NeCriteria:
    speed_threshold: float = 0.2
    spacing_threshold: float = 0.35
    hold: float = 20.0  # s the criteria must keep holding
    window: float = 20.0  # s spanned by the rolling std

    def __post_init__(self):
        if min(self.speed_threshold, self.spacing_threshold, self.hold, self.window) <= 0:
            raise ValueError("NE criteria must be positive")


def _as_2d(x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    return x[:, None] if x.ndim == 1 else x


def rolling_pooled_std(x, n_samples: int) -> np.ndarray:
    """Population std of all values in rows [k - n + 1, k]; NaN for k < n - 1."""
    x = _as_2d(x)
    T, m = x.shape
    out = np.full(T, np.nan)
    if T < n_samples:
        return out
    c1 = np.concatenate([[0.0], np.cumsum(x.sum(axis=1))])
    c2 = np.concatenate([[0.0], np.cumsum((x * x).sum(axis=1))])
    cnt = n_samples * m
    s1 = c1[n_samples:] - c1[:-n_samples]
    s2 = c2[n_samples:] - c2[:-n_samples]
    mean = s1 / cnt
    out[n_samples - 1:] = np.sqrt(np.clip(s2 / cnt - mean * mean, 0.0, None))
    return out


def standardize(x) -> np.ndarray:
    """Divide by the global mean so the series averages 1."""
    x = np.asarray(x, dtype=float)
    mu = x.mean()
    if not np.isfinite(mu) or mu == 0:
        raise ValueError("cannot standardise a series with zero mean")
    return x / mu


def detect_equilibrium(speeds, spacings, sample_dt: float, t0: float = 0.0,
                       criteria: NeCriteria = NeCriteria()) -> float | None:
    """Earliest time both rolling stds stay under threshold for ``criteria.hold`` seconds.

    ``speeds`` / ``spacings`` are (T,) or (T, n_vehicles) sampled every
    ``sample_dt`` from ``t0``. The reported time is the end of the first
    rolling window of the qualifying run.
    """
    u = _as_2d(speeds)
    g = _as_2d(spacings)
    if len(u) != len(g):
        raise ValueError("speed and spacing series must have the same length")
    w = int(round(criteria.window / sample_dt)) + 1  # samples spanning ``window`` seconds
    h = int(round(criteria.hold / sample_dt))
    if len(u) < max(w, h + 1):
        raise InsufficientDataError(f"{len(u)} samples cannot cover a {criteria.hold:g} s hold")
    su = rolling_pooled_std(standardize(u), w)
    sg = rolling_pooled_std(standardize(g), w)
    ok = (su < criteria.speed_threshold) & (sg < criteria.spacing_threshold)
    # run[k] = number of consecutive ok samples starting at k
    run = np.zeros(len(ok) + 1, dtype=int)
    for k in range(len(ok) - 1, -1, -1):
        run[k] = run[k + 1] + 1 if ok[k] else 0
    hits = np.flatnonzero(run[:-1] >= h + 1)
    if len(hits) == 0:
        return None
    return float(t0 + hits[0] * sample_dt)


@dataclass
class ParetoVerdict:
    tau: float
    per_class: dict = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return all(self.per_class.values())

    @property
    def failing(self) -> list[str]:
        return [c for c, ok in self.per_class.items() if not ok]

    def to_dict(self) -> dict:
        return {"tau": self.tau, "passed": self.passed, "per_class": dict(self.per_class), "failing": self.failing}


def pareto_check(u_drl: dict, u_nc: dict, tau: float) -> ParetoVerdict:
    """Class passes when u_drl >= (1 - tau) u_nc; classes missing from either side are skipped."""
    if not 0.0 <= tau <= 1.0:
        raise ValueError("tau must lie in [0, 1]")
    verdict = ParetoVerdict(tau)
    for cls in ("HV", "AV"):
        a, b = u_drl.get(cls), u_nc.get(cls)
        if a is None or b is None or not (np.isfinite(a) and np.isfinite(b)):
            continue
        verdict.per_class[cls] = bool(a >= (1.0 - tau) * b)
    return verdict
