"""Platooning benefit, Hellinger distances and the spatial-organisation metric."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ..traffic import SimState, Trajectories

AV = 2


@dataclass(frozen=True)
class PlatoonPolicy:
    h_aa: float = 1.0
    d0: float = 1.0

    def __post_init__(self):
        if self.h_aa <= 0 or self.d0 <= 0:
            raise ValueError("platoon policy parameters must be positive")

    def max_spacing(self, u):
        return u * self.h_aa + self.d0


def platoon_partition(pos, lane, speed, cls, ring_length: float, n_lanes: int,
                      length=5.0, policy: PlatoonPolicy = PlatoonPolicy()) -> list[list[int]]:
    """Chains of consecutive same-lane AVs within the platoon spacing, leader first.

    A link joins follower f to its direct leader l when both are AVs and the
    bumper gap is at most u_f * h_AA + d0. Chains that wrap the ring merge;
    a lane made entirely of linked AVs is one platoon.
    """
    pos = np.asarray(pos, dtype=float)
    lane = np.asarray(lane)
    speed = np.asarray(speed, dtype=float)
    cls = np.asarray(cls)
    length = np.broadcast_to(np.asarray(length, dtype=float), pos.shape)
    out: list[list[int]] = []
    for ln in range(n_lanes):
        ids = np.flatnonzero(lane == ln)
        m = len(ids)
        if m < 2:
            continue
        order = ids[np.argsort(pos[ids], kind="stable")]
        lead = np.roll(order, -1)
        gap = (pos[lead] - pos[order]) % ring_length - length[lead]
        link = (cls[order] == AV) & (cls[lead] == AV) & (gap <= policy.max_spacing(speed[order]))
        if link.all():
            out.append([int(i) for i in order[::-1]])
            continue
        # start scanning just after a broken link so no chain straddles the start
        start = int(np.flatnonzero(~link)[0]) + 1
        chain: list[int] = []
        for k in range(start, start + m):
            j = k % m
            if link[j]:
                if not chain:
                    chain = [int(order[j])]
                chain.append(int(lead[j]))
            elif chain:
                out.append(chain[::-1])
                chain = []
        if chain:
            out.append(chain[::-1])
    return out


def state_platoons(state: SimState, policy: PlatoonPolicy = PlatoonPolicy()) -> list[list[int]]:
    return platoon_partition(state.pos, state.lane, state.speed, state.cls, state.ring_length, state.n_lanes,
                             state.length, policy)


@dataclass(frozen=True)
class PlatoonBenefit:
    p_e: float
    p_s: float
    b: float

    @property
    def defined(self) -> bool:
        return math.isfinite(self.b)


def platoon_benefit(platoons: list[list[int]], n_av: int) -> PlatoonBenefit:
    """P_e = AVs in platoons / N_AV, P_s = platoons / N_AV, B = P_e - P_s (NaN when N_AV = 0)."""
    if n_av <= 0:
        nan = float("nan")
        return PlatoonBenefit(nan, nan, nan)
    members = sum(len(p) for p in platoons)
    p_e = members / n_av
    p_s = len(platoons) / n_av
    return PlatoonBenefit(p_e, p_s, (members - len(platoons)) / n_av)


def _check_distribution(p: np.ndarray, name: str) -> None:
    if np.any(p < 0) or not np.all(np.isfinite(p)):
        raise ValueError(f"{name} has negative or non-finite entries")
    if abs(p.sum() - 1.0) > 1e-9:
        raise ValueError(f"{name} sums to {p.sum():.12g}, not 1")


def hellinger_1d(P, Q) -> float:
    P = np.asarray(P, dtype=float)
    Q = np.asarray(Q, dtype=float)
    if P.shape != Q.shape:
        raise ValueError("distributions must have the same shape")
    _check_distribution(P, "P")
    _check_distribution(Q, "Q")
    d = np.sqrt(P) - np.sqrt(Q)
    return float(min(1.0, math.sqrt(float(np.sum(d * d)) / 2.0)))


def hellinger_2d(P, Q) -> float:
    """Same formula over all N x M cells."""
    P = np.asarray(P, dtype=float)
    Q = np.asarray(Q, dtype=float)
    if P.ndim != 2:
        raise ValueError("expected N x M grids")
    return hellinger_1d(P.ravel(), Q.ravel())


@dataclass
class SpatialGrid:
    av: np.ndarray | None  # (N, M) proportions or None when the class is absent
    hv: np.ndarray | None

    @property
    def complete(self) -> bool:
        return self.av is not None and self.hv is not None


def _occupancy(lane, pos, ring_length, n_lanes, n_cells):
    cell = np.minimum((np.asarray(pos) / (ring_length / n_cells)).astype(int), n_cells - 1)
    grid = np.zeros((n_lanes, n_cells))
    np.add.at(grid, (np.asarray(lane, dtype=int), cell), 1.0)
    return grid / grid.sum()


def build_spatial_distribution(state: SimState, n_cells: int = 10) -> SpatialGrid:
    return spatial_distribution(state.pos, state.lane, state.cls, state.ring_length, state.n_lanes, n_cells)


def spatial_distribution(pos, lane, cls, ring_length, n_lanes, n_cells=10) -> SpatialGrid:
    pos, lane, cls = np.asarray(pos), np.asarray(lane), np.asarray(cls)
    parts = []
    for code in (2, 1):
        sel = cls == code
        parts.append(_occupancy(lane[sel], pos[sel], ring_length, n_lanes, n_cells) if sel.any() else None)
    return SpatialGrid(*parts)


def spatial_metric(B: float, H: float, a1: float = 0.5, a2: float = 1.0) -> float:
    return a1 * B + a2 * H


@dataclass
class SpatialSeries:
    t: np.ndarray
    B: np.ndarray
    H: np.ndarray
    M: np.ndarray


def spatial_series(traj: Trajectories, length=5.0, n_cells: int = 10, every: int = 1,
                   policy: PlatoonPolicy = PlatoonPolicy(), a1: float = 0.5, a2: float = 1.0) -> SpatialSeries:
    """B_t, H_t and M_t at every ``every``-th sample; H is NaN when a class is absent."""
    n_av = int(np.sum(traj.cls == AV))
    rows = []
    for k in range(0, len(traj.t), every):
        plats = platoon_partition(traj.pos[k], traj.lane[k], traj.speed[k], traj.cls, traj.ring_length,
                                  traj.n_lanes, length, policy)
        B = platoon_benefit(plats, n_av).b
        grid = spatial_distribution(traj.pos[k], traj.lane[k], traj.cls, traj.ring_length, traj.n_lanes, n_cells)
        H = hellinger_2d(grid.av, grid.hv) if grid.complete else float("nan")
        rows.append((traj.t[k], B, H, spatial_metric(B, H, a1, a2)))
    t, B, H, M = (np.array(c, dtype=float) for c in zip(*rows)) if rows else (np.array([]),) * 4
    return SpatialSeries(t, B, H, M)
