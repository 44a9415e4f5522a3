"""Observation encoding, reward, exploration schedule and action selection."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ..config import RewardWeights
from ..traffic import LANE_WIDTH, Action, Sensed, SimState, Vehicle, signed_distance

OBS_SIZE = 200
EGO_SLOTS = 4
NEIGHBOR_SLOTS = 5
MAX_NEIGHBORS = 28
DIST_SCALE = 100.0  # sensing radius
SPEED_SCALE = 30.0  # top AV speed


def _lane_scale(n_lanes: int) -> float:
    return float(max(n_lanes - 1, 1))


def encode_state(ego: Vehicle, sensed: list[Sensed], n_lanes: int, obs_size: int = OBS_SIZE) -> np.ndarray:
    """Ego block [x, y, u, l] then up to 28 nearest [x, y, u, l, c] blocks, zero padded.

    Positions are relative to the ego vehicle: x is the signed longitudinal
    distance / 100 m, y the lane offset / (n_lanes - 1). Ego x is therefore 0
    and ego y carries the absolute lane position.
    """
    ls = _lane_scale(n_lanes)
    obs = np.zeros(obs_size)
    obs[:EGO_SLOTS] = (0.0, ego.lane / ls, ego.speed / SPEED_SCALE, ego.lane / ls)
    for k, nb in enumerate(sensed[:MAX_NEIGHBORS]):
        o = EGO_SLOTS + NEIGHBOR_SLOTS * k
        obs[o:o + NEIGHBOR_SLOTS] = (nb.rel_x / DIST_SCALE, nb.rel_y / (LANE_WIDTH * ls), nb.speed / SPEED_SCALE,
                                     nb.lane / ls, float(nb.cls))
    return obs


def encode_all(state: SimState, ids: np.ndarray, radius: float = 100.0, obs_size: int = OBS_SIZE) -> np.ndarray:
    """Vectorised ``encode_state(sense(...))`` for the vehicles ``ids``; rows match exactly."""
    ids = np.asarray(ids, dtype=np.int64)
    ls = _lane_scale(state.n_lanes)
    out = np.zeros((len(ids), obs_size))
    if not len(ids):
        return out
    out[:, 1] = state.lane[ids] / ls
    out[:, 2] = state.speed[ids] / SPEED_SCALE
    out[:, 3] = state.lane[ids] / ls
    rel = signed_distance(state.pos[None, :] - state.pos[ids, None], state.ring_length)
    dist = np.abs(rel)
    ok = dist <= radius
    ok[np.arange(len(ids)), ids] = False
    key = np.where(ok, dist, np.inf)
    # stable sort on distance keeps vehicle-id order among ties
    order = np.argsort(key, axis=1, kind="stable")[:, :MAX_NEIGHBORS]
    rows = np.arange(len(ids))[:, None]
    valid = np.isfinite(key[rows, order])
    lanes = state.lane[order]
    feats = np.stack([
        rel[rows, order] / DIST_SCALE,
        ((lanes - state.lane[ids, None]) * LANE_WIDTH) / (LANE_WIDTH * ls),
        state.speed[order] / SPEED_SCALE,
        lanes / ls,
        state.cls[order].astype(float),
    ], axis=-1) * valid[..., None]
    k = order.shape[1]
    out[:, EGO_SLOTS:EGO_SLOTS + NEIGHBOR_SLOTS * k] = feats.reshape(len(ids), -1)
    return out


def reward(u: float, changed: bool, w: RewardWeights = RewardWeights()) -> float:
    if u < 0:
        raise ValueError("speed must be non-negative")
    return w.w_speed * u - w.w_lane_change * float(bool(changed))


@dataclass(frozen=True)
class EpsilonSchedule:
    eps_start: float = 1.0
    eps_end: float = 0.01
    r_decay: float = 300.0


def epsilon(epi: int, sched: EpsilonSchedule = EpsilonSchedule()) -> float:
    if epi < 0:
        raise ValueError("episode index must be non-negative")
    return sched.eps_end + (sched.eps_start - sched.eps_end) * math.exp(-epi / sched.r_decay)


def legal_mask(lanes, n_lanes: int) -> np.ndarray:
    """(k, 3) boolean mask over (CHANGE_LEFT, CHANGE_RIGHT, KEEP)."""
    lanes = np.atleast_1d(np.asarray(lanes))
    m = np.ones((len(lanes), 3), dtype=bool)
    m[:, Action.CHANGE_LEFT] = lanes < n_lanes - 1
    m[:, Action.CHANGE_RIGHT] = lanes > 0
    return m


def greedy(q: np.ndarray, legal: np.ndarray) -> np.ndarray:
    """Masked argmax; ties go to KEEP, then to the lower action index."""
    q = np.where(legal, np.atleast_2d(q), -np.inf)
    best = q.max(axis=1, keepdims=True)
    top = q == best
    return np.where(top[:, Action.KEEP], int(Action.KEEP), np.argmax(top, axis=1))


def select_actions(q: np.ndarray, eps: float, legal: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Epsilon-greedy over legal actions, one row per agent."""
    q = np.atleast_2d(q)
    acts = greedy(q, legal)
    if eps > 0:
        explore = rng.random(len(q)) < eps
        for k in np.flatnonzero(explore):
            acts[k] = rng.choice(np.flatnonzero(legal[k]))
    return acts


def select_action(net, obs, eps: float, legal, rng: np.random.Generator) -> Action:
    mask = np.zeros((1, 3), dtype=bool)
    mask[0, [int(a) for a in legal]] = True
    if not mask.any():
        raise ValueError("no legal action")
    q = net.forward(obs)
    return Action(int(select_actions(q[None, :], eps, mask, rng)[0]))
