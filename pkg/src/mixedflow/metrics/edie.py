"""Edie's generalised flow, density and speed over space-time regions of a ring."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..traffic import Trajectories

CLASS_LABELS = {1: "HV", 2: "AV"}


@dataclass(frozen=True)
class EdieRegion:
    x_start: float
    t_start: float
    dx: float = 250.0
    dt: float = 8.0
    lane: int | None = None  # None: all lanes, measures are per lane

    def __post_init__(self):
        if self.dx <= 0 or self.dt <= 0:
            raise ValueError("region must have positive extent")


@dataclass(frozen=True)
class MeasurementRecord:
    region_id: int
    t: float
    cls: str
    q_vph: float
    rho_vpkm: float
    u_mps: float  # NaN when nobody spent time in the region

    @property
    def empty(self) -> bool:
        return not np.isfinite(self.u_mps)


def _segments(traj: Trajectories):
    """Per-tick straight-line pieces: start time/pos, duration, speed, lane (all (T-1, n))."""
    t0 = traj.t[:-1, None]
    dur = np.diff(traj.t)[:, None] * np.ones((1, traj.pos.shape[1]))
    disp = (traj.pos[1:] - traj.pos[:-1]) % traj.ring_length
    with np.errstate(divide="ignore", invalid="ignore"):
        v = np.where(dur > 0, disp / dur, 0.0)
    return np.broadcast_to(t0, dur.shape), traj.pos[:-1], dur, v, traj.lane[1:]


def _totals(seg, region: EdieRegion, L: float, mask: np.ndarray) -> tuple[float, float]:
    """Total distance travelled and total time spent inside ``region``."""
    ts, xs, dur, v, _ = seg
    T0, T1 = region.t_start, region.t_start + region.dt
    ta = np.maximum(ts, T0)
    tb = np.minimum(ts + dur, T1)
    live = mask & (tb > ta)
    if not live.any():
        return 0.0, 0.0
    ta, tb, xs, v, ts = ta[live], tb[live], xs[live], v[live], ts[live]
    xa = (xs + v * (ta - ts)) % L
    xb = xa + v * (tb - ta)
    X0, X1 = region.x_start % L, region.x_start % L + region.dx
    overlap = np.zeros_like(xa)
    for m in (-1.0, 0.0, 1.0):
        overlap += np.clip(np.minimum(xb, X1 + m * L) - np.maximum(xa, X0 + m * L), 0.0, None)
    moving = v > 0
    inside = ((xa - X0) % L) < region.dx
    ttd = float(np.sum(overlap))
    with np.errstate(divide="ignore", invalid="ignore"):
        tts = float(np.sum(np.where(moving, overlap / np.where(moving, v, 1.0), (tb - ta) * inside)))
    return ttd, tts


def edie_measures(traj: Trajectories, region: EdieRegion, cls: int | None = None, region_id: int = 0,
                  _seg=None) -> MeasurementRecord:
    """q = TTD / |A|, rho = TTS / |A|, u = TTD / TTS for one region (per lane)."""
    seg = _seg if _seg is not None else _segments(traj)
    lanes = seg[4]
    mask = np.ones(lanes.shape, dtype=bool)
    if cls is not None:
        mask &= (traj.cls == cls)[None, :]
    if region.lane is not None:
        mask &= lanes == region.lane
    n_lanes = 1 if region.lane is not None else traj.n_lanes
    ttd, tts = _totals(seg, region, traj.ring_length, mask)
    area = region.dx * region.dt * n_lanes  # m * s
    u = ttd / tts if tts > 0 else float("nan")
    label = CLASS_LABELS.get(cls, "all")
    return MeasurementRecord(region_id, region.t_start, label, ttd / area * 3600.0, tts / area * 1000.0, u)


def edie_table(traj: Trajectories, dx: float = 250.0, dt: float = 8.0, t_from: float | None = None,
               t_to: float | None = None, classes=(1, 2)) -> list[MeasurementRecord]:
    """Records for every subsection x time window x class; windows start at ``t_from``."""
    t_from = traj.t[0] if t_from is None else t_from
    t_to = traj.t[-1] if t_to is None else t_to
    n_sec = int(round(traj.ring_length / dx))
    seg = _segments(traj)
    out = []
    t = t_from
    while t + dt <= t_to + 1e-9:
        # restrict to the ticks overlapping this window before the region loop
        k0 = max(int(np.searchsorted(traj.t, t, side="right")) - 1, 0)
        k1 = int(np.searchsorted(traj.t, t + dt, side="left"))
        sub = tuple(a[k0:k1] for a in seg)
        for r in range(n_sec):
            region = EdieRegion(r * dx, t, dx, dt)
            for c in classes:
                out.append(edie_measures(traj, region, c, r, _seg=sub))
        t += dt
    return out
