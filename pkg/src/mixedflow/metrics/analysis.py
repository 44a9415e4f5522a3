"""Lane-change frequency and fundamental-diagram aggregation."""
from __future__ import annotations

from collections import defaultdict
from dataclasses import dataclass

import numpy as np

from ..traffic import Trajectories
from .edie import MeasurementRecord


def lane_change_frequency(traj: Trajectories, cls: int | None = None, loading_time: float = 100.0) -> float:
    """Mean number of lane changes per vehicle after the loading period."""
    sel = np.ones(len(traj.cls), dtype=bool) if cls is None else traj.cls == cls
    if not sel.any():
        return float("nan")
    keep = traj.t > loading_time
    counts = traj.changed[keep][:, sel].sum(axis=0)
    return float(counts.mean())


def lane_change_counts(counts) -> float:
    """Average of per-vehicle change counts (already windowed)."""
    counts = np.asarray(counts, dtype=float)
    return float(counts.mean()) if counts.size else float("nan")


@dataclass
class FundamentalDiagram:
    rho: np.ndarray  # veh/km/lane, both classes summed
    q: np.ndarray  # veh/h/lane
    max_flow: float
    rho_at_max: float


def fundamental_diagram(records: list[MeasurementRecord]) -> FundamentalDiagram:
    """Sum per-class records that share (region, t) into total (rho, q) points."""
    acc: dict = defaultdict(lambda: [0.0, 0.0])
    for r in records:
        if r.cls == "all":
            continue
        cell = acc[(r.region_id, r.t)]
        cell[0] += r.rho_vpkm
        cell[1] += r.q_vph
    if not acc:
        return FundamentalDiagram(np.array([]), np.array([]), float("nan"), float("nan"))
    keys = sorted(acc)
    rho = np.array([acc[k][0] for k in keys])
    q = np.array([acc[k][1] for k in keys])
    k = int(np.argmax(q))
    return FundamentalDiagram(rho, q, float(q[k]), float(rho[k]))
