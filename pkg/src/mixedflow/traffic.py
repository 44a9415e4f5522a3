"""Multi-lane ring-road microsimulation.

IDM car-following with type-sensitive desired headways, a MOBIL-style
rule for HV lane changes and externally injected AV lane-change actions.
All per-vehicle state lives in flat numpy arrays indexed by vehicle id.

Lane 0 is the rightmost lane; "left" means lane + 1.
"""
from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field, replace
from enum import IntEnum
from pathlib import Path
from typing import NamedTuple

import numpy as np

from .config import IdmParams, LaneChangeParams, ScenarioConfig

log = logging.getLogger(__name__)

LANE_WIDTH = 3.2


class VehicleClass(IntEnum):
    HV = 1
    AV = 2


class Action(IntEnum):
    CHANGE_LEFT = 0
    CHANGE_RIGHT = 1
    KEEP = 2


LANE_OFFSET = {Action.CHANGE_LEFT: 1, Action.CHANGE_RIGHT: -1, Action.KEEP: 0}


class CollisionError(RuntimeError):
    """Bumper gap reached zero; carries a full state dump."""

    def __init__(self, message: str, follower: int, leader: int, dump: dict):
        super().__init__(message)
        self.follower = follower
        self.leader = leader
        self.dump = dump


class InfeasibleScenarioError(ValueError):
    pass


@dataclass(frozen=True)
class Vehicle:
    id: int
    cls: VehicleClass
    pos: float
    lane: int
    speed: float
    max_speed: float
    length: float
    lane_change_count: int


@dataclass
class SimState:
    time: float
    ring_length: float
    n_lanes: int
    cls: np.ndarray
    pos: np.ndarray
    lane: np.ndarray
    speed: np.ndarray
    max_speed: np.ndarray
    length: np.ndarray
    lane_change_count: np.ndarray
    last_change: np.ndarray
    changed: np.ndarray
    suppressed: np.ndarray
    rng_seed: int = 0

    @property
    def n(self) -> int:
        return len(self.pos)

    def copy(self) -> "SimState":
        return replace(self, **{k: v.copy() for k, v in self.__dict__.items() if isinstance(v, np.ndarray)})

    def vehicle(self, i: int) -> Vehicle:
        return Vehicle(int(i), VehicleClass(int(self.cls[i])), float(self.pos[i]), int(self.lane[i]),
                       float(self.speed[i]), float(self.max_speed[i]), float(self.length[i]),
                       int(self.lane_change_count[i]))

    def vehicles(self) -> list[Vehicle]:
        return [self.vehicle(i) for i in range(self.n)]

    def class_counts(self) -> dict[str, int]:
        return {"HV": int(np.sum(self.cls == VehicleClass.HV)), "AV": int(np.sum(self.cls == VehicleClass.AV))}

    def dump(self) -> dict:
        out = {"time": self.time, "ring_length": self.ring_length, "n_lanes": self.n_lanes}
        for k, v in self.__dict__.items():
            if isinstance(v, np.ndarray):
                out[k] = v.tolist()
        return out

    def fingerprint(self) -> bytes:
        """Raw bytes of every array; equal fingerprints mean bit-identical states."""
        parts = [np.float64(self.time).tobytes()]
        parts += [v.tobytes() for v in self.__dict__.values() if isinstance(v, np.ndarray)]
        return b"".join(parts)


def load_vehicles(cfg: ScenarioConfig, seed: int) -> SimState:
    """Random collision-free placement of the scenario's vehicles at rest.

    Each lane gets ``cfg.vehicles_per_lane`` vehicles, every bumper gap at
    least ``s0``. ``round(p * total)`` randomly chosen vehicles are AVs.
    """
    rng = np.random.default_rng(seed)
    n_lane = cfg.vehicles_per_lane
    n = n_lane * cfg.n_lanes
    L = cfg.ring_length
    slot = cfg.vehicle_length + cfg.idm.s0
    if n_lane * slot > L:
        raise InfeasibleScenarioError(
            f"{n_lane} vehicles/lane need {n_lane * slot:.1f} m but ring is {L:.1f} m")

    pos = np.empty(n)
    lane = np.repeat(np.arange(cfg.n_lanes), n_lane)
    free = L - n_lane * slot
    for k in range(cfg.n_lanes):
        u = np.sort(rng.uniform(0.0, free, n_lane))
        offset = rng.uniform(0.0, L)
        pos[k * n_lane:(k + 1) * n_lane] = (u + np.arange(n_lane) * slot + offset) % L

    cls = np.full(n, VehicleClass.HV, dtype=np.int8)
    if n:
        cls[rng.choice(n, cfg.n_avs, replace=False)] = VehicleClass.AV
    max_speed = np.where(
        cls == VehicleClass.AV,
        rng.uniform(*cfg.av_speed_range, n),
        rng.uniform(*cfg.hv_speed_range, n),
    )
    return SimState(
        time=0.0,
        ring_length=float(L),
        n_lanes=int(cfg.n_lanes),
        cls=cls,
        pos=pos,
        lane=lane.astype(np.int64),
        speed=np.zeros(n),
        max_speed=max_speed,
        length=np.full(n, float(cfg.vehicle_length)),
        lane_change_count=np.zeros(n, dtype=np.int64),
        last_change=np.full(n, -np.inf),
        changed=np.zeros(n, dtype=bool),
        suppressed=np.zeros(n, dtype=np.int64),
        rng_seed=int(seed),
    )


# --- geometry ----------------------------------------------------------------

def _lane_view(state: SimState, idx: np.ndarray, target: np.ndarray):
    """Nearest vehicle ahead of / behind each ``idx`` vehicle in lane ``target``.

    Returns (leader, fwd_dist, follower, back_dist); center-to-center
    circular distances, index -1 and inf when the lane holds nobody else.
    """
    L = state.ring_length
    fwd = (state.pos[None, :] - state.pos[idx, None]) % L
    back = (state.pos[idx, None] - state.pos[None, :]) % L
    mask = state.lane[None, :] == target[:, None]
    mask[np.arange(len(idx)), idx] = False
    fwd = np.where(mask, fwd, np.inf)
    back = np.where(mask, back, np.inf)
    leader = np.argmin(fwd, axis=1)
    follower = np.argmin(back, axis=1)
    rows = np.arange(len(idx))
    fd = fwd[rows, leader]
    bd = back[rows, follower]
    leader = np.where(np.isfinite(fd), leader, -1)
    follower = np.where(np.isfinite(bd), follower, -1)
    return leader, fd, follower, bd


def _own_leaders(state: SimState):
    """Leader index and bumper gap for every vehicle in its current lane (self-wrap if alone)."""
    n = state.n
    order = np.lexsort((state.pos, state.lane))
    lanes = state.lane[order]
    ar = np.arange(n)
    first = np.r_[True, lanes[1:] != lanes[:-1]] if n else np.zeros(0, bool)
    last = np.r_[lanes[1:] != lanes[:-1], True] if n else np.zeros(0, bool)
    group_first = np.maximum.accumulate(np.where(first, ar, 0))
    nxt = ar + 1
    nxt[last] = group_first[last]
    leader = np.empty(n, dtype=np.int64)
    leader[order] = order[nxt]
    dist = (state.pos[leader] - state.pos) % state.ring_length
    dist = np.where(leader == ar, state.ring_length, dist)
    return leader, dist - state.length[leader]


def find_neighbors(state: SimState, v: Vehicle, lane: int):
    """((leader, gap) | None, (follower, gap) | None) for ``v`` seen in ``lane``."""
    if not 0 <= lane < state.n_lanes:
        raise ValueError(f"lane {lane} outside [0, {state.n_lanes})")
    idx = np.array([v.id])
    leader, fd, follower, bd = _lane_view(state, idx, np.array([lane]))
    if leader[0] < 0:
        if lane != v.lane:
            return None, None
        # alone in its own lane: the wraparound image of itself leads and follows
        gap = state.ring_length - v.length
        return (v, gap), (v, gap)
    lead, foll = int(leader[0]), int(follower[0])
    return ((state.vehicle(lead), float(fd[0] - state.length[lead])),
            (state.vehicle(foll), float(bd[0] - v.length)))


class Sensed(NamedTuple):
    rel_x: float
    rel_y: float
    speed: float
    lane: int
    cls: int


def sense(state: SimState, v: Vehicle, radius: float = 100.0) -> list[Sensed]:
    """Vehicles within ``radius`` of circular longitudinal distance, nearest first."""
    if radius <= 0:
        raise ValueError("radius must be positive")
    rel = signed_distance(state.pos - v.pos, state.ring_length)
    ok = np.abs(rel) <= radius
    ok[v.id] = False
    ids = np.flatnonzero(ok)
    order = np.lexsort((ids, np.abs(rel[ids])))
    return [Sensed(float(rel[j]), float((state.lane[j] - v.lane) * LANE_WIDTH), float(state.speed[j]),
                   int(state.lane[j]), int(state.cls[j])) for j in ids[order]]


def signed_distance(d, L: float):
    """Map longitudinal differences onto (-L/2, L/2]."""
    return L / 2.0 - (L / 2.0 - np.asarray(d, dtype=float)) % L


# --- car following -----------------------------------------------------------

def idm_accel(u, u_max, gap, u_lead, h, p: IdmParams):
    """Vectorised IDM; ``gap = inf`` means no leader."""
    u = np.asarray(u, dtype=float)
    gap = np.asarray(gap, dtype=float)
    s_star = p.s0 + np.maximum(0.0, u * h + u * (u - u_lead) / (2.0 * np.sqrt(p.a_max * p.b_comf)))
    with np.errstate(divide="ignore", invalid="ignore"):
        inter = np.where(np.isfinite(gap), (s_star / np.maximum(gap, 1e-9)) ** 2, 0.0)
    acc = p.a_max * (1.0 - (u / u_max) ** p.delta - inter)
    return np.clip(acc, -p.b_emergency, p.a_max)


def idm_acceleration(v: Vehicle, gap: float, leader_speed: float, params: IdmParams, h_star: float) -> float:
    if gap <= 0:
        raise CollisionError(f"vehicle {v.id}: non-positive gap {gap}", v.id, -1, {})
    return float(idm_accel(v.speed, v.max_speed, gap, leader_speed, h_star, params))


def equilibrium_gap(u, u_max, h, p: IdmParams):
    """Bumper gap at which IDM acceleration vanishes for a leader at the same speed."""
    u = np.asarray(u, dtype=float)
    return (p.s0 + u * h) / np.sqrt(1.0 - (u / u_max) ** p.delta)


# --- lane changing -----------------------------------------------------------

@dataclass
class _Slot:
    """Neighbourhood of ``idx`` vehicles hypothetically moved into ``target`` lanes."""

    idx: np.ndarray
    target: np.ndarray
    leader: np.ndarray
    fwd: np.ndarray
    follower: np.ndarray
    back: np.ndarray
    safe: np.ndarray
    new_acc: np.ndarray
    fol_new: np.ndarray
    fol_old: np.ndarray


def _slot(state: SimState, idx: np.ndarray, target: np.ndarray, p: IdmParams, H: np.ndarray) -> _Slot:
    cls, u, umax, length = state.cls, state.speed, state.max_speed, state.length
    leader, fd, follower, bd = _lane_view(state, idx, target)
    has = leader >= 0
    li = np.where(has, leader, idx)
    fi = np.where(has, follower, idx)
    gap_f = np.where(has, fd - length[li], np.inf)
    gap_b = np.where(has, bd - length[idx], np.inf)
    new_acc = idm_accel(u[idx], umax[idx], gap_f, u[li], H[cls[idx], cls[li]], p)
    fol_new = idm_accel(u[fi], umax[fi], gap_b, u[idx], H[cls[fi], cls[idx]], p)
    # the follower's present leader in the target lane is ``leader``: i slots in between
    fol_old = idm_accel(u[fi], umax[fi], fd + bd - length[li], u[li], H[cls[fi], cls[li]], p)
    fol_new = np.where(has, fol_new, 0.0)
    fol_old = np.where(has, fol_old, 0.0)
    safe = ~has | ((gap_f > p.s0) & (gap_b > p.s0) & (fol_new >= -p.b_comf) & (new_acc >= -p.b_comf))
    return _Slot(idx, target, leader, fd, follower, bd, safe, new_acc, fol_new, fol_old)


def _current_acc(state: SimState, p: IdmParams, H: np.ndarray) -> np.ndarray:
    leader, gap = _own_leaders(state)
    acc = idm_accel(state.speed, state.max_speed, gap, state.speed[leader], H[state.cls, state.cls[leader]], p)
    # alone in a lane: the own image keeps gaps well defined but exerts no interaction
    alone = leader == np.arange(state.n)
    if alone.any():
        free = p.a_max * (1 - (state.speed[alone] / state.max_speed[alone]) ** p.delta)
        acc[alone] = np.clip(free, -p.b_emergency, p.a_max)
    return acc


def rule_lane_changes(state: SimState, cfg: ScenarioConfig, mask: np.ndarray) -> np.ndarray:
    """Desired lane per vehicle under the MOBIL-style rule (current lane when keeping).

    Change when safe and own gain minus politeness-weighted loss of the new
    follower exceeds the threshold; the better side wins, exact ties go right.
    """
    p, lc = cfg.idm, cfg.lane_change
    desired = state.lane.copy()
    idx = np.flatnonzero(mask)
    if len(idx) == 0:
        return desired
    H = p.headway_matrix()
    cur = _current_acc(state, p, H)[idx]
    both = np.concatenate([idx, idx])
    target = np.concatenate([state.lane[idx] - 1, state.lane[idx] + 1])
    legal = (target >= 0) & (target < state.n_lanes)
    sl = _slot(state, both, np.clip(target, 0, state.n_lanes - 1), p, H)
    incentive = (sl.new_acc - np.concatenate([cur, cur])) - lc.politeness * (sl.fol_old - sl.fol_new)
    ok = legal & sl.safe & (incentive > lc.threshold)
    score = np.where(ok, incentive, -np.inf).reshape(2, -1)
    go_left = score[1] > score[0]
    pick = np.where(go_left, score[1], score[0])
    chosen = np.where(go_left, target.reshape(2, -1)[1], target.reshape(2, -1)[0])
    move = np.isfinite(pick)
    desired[idx[move]] = chosen[move]
    return desired


def hv_lane_change_decision(state: SimState, v: Vehicle, cfg: ScenarioConfig) -> Action:
    if v.cls != VehicleClass.HV:
        raise ValueError("rule-based decision requested for a non-HV vehicle")
    mask = np.zeros(state.n, dtype=bool)
    mask[v.id] = True
    target = rule_lane_changes(state, cfg, mask)[v.id]
    return {1: Action.CHANGE_LEFT, -1: Action.CHANGE_RIGHT, 0: Action.KEEP}[int(target - v.lane)]


def change_is_safe(state: SimState, i: int, target_lane: int, p: IdmParams) -> bool:
    return bool(_slot(state, np.array([i]), np.array([target_lane]), p, p.headway_matrix()).safe[0])


def apply_lane_change(state: SimState, v: Vehicle, target_lane: int, p: IdmParams) -> SimState:
    """Move ``v`` sideways if safe; otherwise count a suppression and keep lane."""
    if abs(target_lane - v.lane) != 1 or not 0 <= target_lane < state.n_lanes:
        raise ValueError(f"lane change {v.lane} -> {target_lane} is not to an adjacent lane")
    out = state.copy()
    if change_is_safe(out, v.id, target_lane, p):
        _commit(out, v.id, target_lane)
    else:
        _suppress(out, v.id, target_lane)
    return out


def _commit(state: SimState, i: int, target: int) -> None:
    state.lane[i] = target
    state.lane_change_count[i] += 1
    state.last_change[i] = state.time
    state.changed[i] = True


def _suppress(state: SimState, i: int, target: int) -> None:
    state.suppressed[i] += 1
    log.debug("t=%.1f vehicle %d: unsafe change %d->%d suppressed", state.time, i, state.lane[i], target)


def _resolve_changes(state: SimState, desired: np.ndarray, injected: np.ndarray, p: IdmParams,
                     H: np.ndarray) -> None:
    """Apply desired changes in id order, each safe against the lanes as left by earlier ones.

    A candidate's verdict depends only on its nearest leader and follower in
    the target lane, so it is recomputed only when an earlier change in this
    tick entered that gap or removed one of those two vehicles.
    """
    cand = np.flatnonzero(desired != state.lane)
    if len(cand) == 0:
        return
    sl = _slot(state, cand, desired[cand], p, H)
    L = state.ring_length
    applied: list[tuple[int, int, int]] = []
    for k, i in enumerate(cand.tolist()):
        t = int(sl.target[k])
        stale = False
        for j, src, dst in applied:
            if dst == t:
                ahead = (state.pos[j] - state.pos[i]) % L
                behind = (state.pos[i] - state.pos[j]) % L
                if ahead < sl.fwd[k] or behind < sl.back[k]:
                    stale = True
            elif src == t and j in (sl.leader[k], sl.follower[k]):
                stale = True
        safe = change_is_safe(state, i, t, p) if stale else bool(sl.safe[k])
        if safe:
            applied.append((i, int(state.lane[i]), t))
            _commit(state, i, t)
        elif injected[i]:
            _suppress(state, i, t)


# --- integration -------------------------------------------------------------

def _check_gaps(state: SimState, leader: np.ndarray, gap: np.ndarray) -> None:
    bad = np.flatnonzero(gap <= 0)
    if len(bad):
        i = int(bad[0])
        raise CollisionError(
            f"t={state.time:.2f}: vehicle {i} hit vehicle {int(leader[i])} in lane {int(state.lane[i])} "
            f"(gap {gap[i]:.4f} m)", i, int(leader[i]), state.dump())


def step(state: SimState, av_actions: dict | None, dt: float, cfg: ScenarioConfig,
         rule_avs: bool = False) -> SimState:
    """Advance one tick.

    Order: lane changes (rule vehicles + injected AV actions, lower id first,
    each safety-checked against the configuration left by earlier changes),
    then IDM accelerations on the new configuration, then
    u <- clip(u + a dt, 0, u_max) and pos <- pos + u dt (mod L).
    ``rule_avs`` puts AVs under the HV rule (baseline / loading); injected
    actions are then ignored.
    """
    if dt <= 0:
        raise ValueError("dt must be positive")
    p = cfg.idm
    H = p.headway_matrix()
    s = state.copy()
    s.changed[:] = False
    av = s.cls == VehicleClass.AV

    rule_mask = (~av | rule_avs) & (s.time - s.last_change >= cfg.lane_change.cooldown)
    desired = rule_lane_changes(s, cfg, rule_mask)
    injected = np.zeros(s.n, dtype=bool)
    if not rule_avs:
        for vid, action in (av_actions or {}).items():
            offset = LANE_OFFSET[Action(action)]
            if not av[vid] or offset == 0:
                continue
            target = s.lane[vid] + offset
            if not 0 <= target < s.n_lanes:
                _suppress(s, vid, target)
                continue
            desired[vid] = target
            injected[vid] = True
    _resolve_changes(s, desired, injected, p, H)

    leader, gap = _own_leaders(s)
    _check_gaps(s, leader, gap)
    acc = _current_acc(s, p, H)
    s.speed = np.clip(s.speed + acc * dt, 0.0, s.max_speed)
    s.pos = (s.pos + s.speed * dt) % s.ring_length
    s.time = state.time + dt

    leader, gap = _own_leaders(s)
    _check_gaps(s, leader, gap)
    return s


def front_gaps(state: SimState) -> np.ndarray:
    return _own_leaders(state)[1]


# --- trajectories ------------------------------------------------------------

TRAJECTORY_HEADER = ["t", "veh_id", "class", "lane", "pos_m", "speed_mps", "lane_changed"]


@dataclass
class Trajectories:
    """Dense per-tick record: arrays of shape (T, n) plus constant per-vehicle info."""

    ring_length: float
    n_lanes: int
    cls: np.ndarray
    t: np.ndarray
    pos: np.ndarray
    lane: np.ndarray
    speed: np.ndarray
    changed: np.ndarray

    def window(self, t0: float, t1: float = np.inf) -> "Trajectories":
        keep = (self.t >= t0) & (self.t <= t1)
        return replace(self, t=self.t[keep], pos=self.pos[keep], lane=self.lane[keep], speed=self.speed[keep],
                       changed=self.changed[keep])


@dataclass
class TrajectoryRecorder:
    _rows: list = field(default_factory=list)
    _meta: tuple | None = None

    def record(self, state: SimState) -> None:
        if self._meta is None:
            self._meta = (state.ring_length, state.n_lanes, state.cls.copy())
        self._rows.append((state.time, state.pos.copy(), state.lane.copy(), state.speed.copy(),
                           state.changed.copy()))

    def result(self) -> Trajectories:
        L, n_lanes, cls = self._meta
        t, pos, lane, speed, changed = zip(*self._rows)
        return Trajectories(L, n_lanes, cls, np.array(t), np.array(pos), np.array(lane), np.array(speed),
                            np.array(changed))


def write_trajectory_csv(traj: Trajectories, path: str | Path, log_every: int = 1) -> None:
    labels = {1: "HV", 2: "AV"}
    cls = [labels[int(c)] for c in traj.cls]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(TRAJECTORY_HEADER)
        for k in range(0, len(traj.t), log_every):
            tk = repr(float(traj.t[k]))
            for i in range(len(cls)):
                w.writerow([tk, i, cls[i], int(traj.lane[k, i]), repr(float(traj.pos[k, i])),
                            repr(float(traj.speed[k, i])), int(traj.changed[k, i])])


def read_trajectory_csv(path: str | Path, ring_length: float, n_lanes: int) -> Trajectories:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    n = len({r["veh_id"] for r in rows})
    T = len(rows) // n if n else 0
    codes = {"HV": 1, "AV": 2}
    arr = lambda key, typ: np.array([typ(r[key]) for r in rows]).reshape(T, n)  # noqa: E731
    cls = np.array([codes[r["class"]] for r in rows[:n]], dtype=np.int8)
    return Trajectories(ring_length, n_lanes, cls, arr("t", float)[:, 0], arr("pos_m", float),
                        arr("lane", int), arr("speed_mps", float), arr("lane_changed", int).astype(bool))
