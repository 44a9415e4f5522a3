"""Episode rollouts and the shared-policy DQN training loop."""
from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from ..config import ScenarioConfig, TrainConfig
from ..traffic import Action, CollisionError, SimState, TrajectoryRecorder, Trajectories, load_vehicles, step
from .dqn import save_checkpoint, sync_target, train_step
from .network import Adam, QNetwork
from .policy import EpsilonSchedule, encode_all, epsilon, legal_mask, select_actions
from .replay import ReplayBuffer

log = logging.getLogger(__name__)

TRAIN_STREAM, EVAL_STREAM, LEARNER_STREAM = 0, 1, 2
REWARD_HEADER = ["episode", "total_reward", "smoothed_reward", "epsilon", "lr"]


def episode_seeds(seed: int, stream: int, k: int) -> tuple[int, np.random.Generator]:
    """(vehicle-placement seed, action RNG) of episode ``k`` in ``stream``."""
    ss = np.random.SeedSequence([int(seed), stream, int(k)])
    place, act = ss.spawn(2)
    return int(place.generate_state(1, np.uint64)[0]), np.random.default_rng(act)


def make_network(tcfg: TrainConfig, seed: int) -> QNetwork:
    rng = np.random.default_rng(np.random.SeedSequence([int(seed), LEARNER_STREAM, 0]))
    return QNetwork((tcfg.obs_size, *tcfg.hidden, 3), rng)


@dataclass
class Learner:
    """Online/target networks, optimiser and replay memory shared by all AVs."""

    net: QNetwork
    tcfg: TrainConfig
    seed: int = 0
    target: QNetwork = None
    opt: Adam = field(default_factory=Adam)
    buffer: ReplayBuffer = None
    rng: np.random.Generator = None
    updates: int = 0
    lr: float = 0.0
    enabled: bool = True

    def __post_init__(self):
        self.target = self.net.copy() if self.target is None else self.target
        if self.buffer is None:
            self.buffer = ReplayBuffer(self.tcfg.buffer_capacity, self.tcfg.obs_size)
        if self.rng is None:
            self.rng = np.random.default_rng(np.random.SeedSequence([int(self.seed), LEARNER_STREAM, 1]))
        self.lr = self.tcfg.lr0

    def update(self) -> float | None:
        if not self.enabled or len(self.buffer) < self.tcfg.batch_size:
            return None
        batch = self.buffer.sample(self.tcfg.batch_size, self.rng)
        loss = train_step(self.net, self.target, batch, self.tcfg.gamma, self.opt, self.lr)
        self.updates += 1
        if self.updates % self.tcfg.target_sync == 0:
            sync_target(self.net, self.target)
        return loss


@dataclass
class EpisodeResult:
    total_reward: float = 0.0
    decisions: int = 0
    transitions: int = 0
    updates: int = 0
    policy_calls: int = 0
    collision: str | None = None
    suppressed: int = 0
    trajectories: Trajectories | None = None
    final_state: SimState | None = None


def run_episode(cfg: ScenarioConfig, tcfg: TrainConfig, place_seed: int, rng: np.random.Generator,
                net: QNetwork | None = None, eps: float = 0.0, learner: Learner | None = None,
                record: bool = False, length: float | None = None) -> EpisodeResult:
    """Loading under the rule model, then AV decisions every ``decision_interval``.

    ``net = None`` runs the no-control baseline (AVs follow the HV rule for
    the whole episode). With a ``learner`` every AV transition enters its
    buffer and one gradient step is taken per decision tick.
    """
    length = cfg.episode_length if length is None else length
    res = EpisodeResult()
    state = load_vehicles(cfg, place_seed)
    rec = TrajectoryRecorder() if record else None
    if rec:
        rec.record(state)
    n_ticks = int(round(length / cfg.dt))
    n_load = int(round(cfg.loading_time / cfg.dt))
    per_dec = max(int(round(tcfg.decision_interval / cfg.dt)), 1)
    avs = np.flatnonzero(state.cls == 2)
    w = cfg.reward

    pending = None  # (obs, actions) awaiting their successor observation
    tick = 0
    try:
        while tick < n_ticks:
            if net is None or tick < n_load or not len(avs):
                state = step(state, None, cfg.dt, cfg, rule_avs=True)
                tick += 1
                if rec:
                    rec.record(state)
                continue
            obs = encode_all(state, avs, cfg.sensing_radius, tcfg.obs_size)
            if pending is not None and learner is not None:
                learner.buffer.push(pending[0], pending[1], pending[2], obs, np.zeros(len(avs), bool))
                res.transitions += len(avs)
            q = net.forward(obs)
            res.policy_calls += 1
            acts = select_actions(q, eps, legal_mask(state.lane[avs], cfg.n_lanes), rng)
            speed_sum = np.zeros(len(avs))
            changed = np.zeros(len(avs), dtype=bool)
            supp0 = state.suppressed[avs].copy()
            pending = (obs, acts, None)
            k = 0  # ticks completed in this interval
            for j in range(per_dec):
                if tick >= n_ticks:
                    break
                actions = {int(v): Action(int(a)) for v, a in zip(avs, acts)} if j == 0 else None
                state = step(state, actions, cfg.dt, cfg)
                tick += 1
                if rec:
                    rec.record(state)
                if j == 0:
                    changed = state.changed[avs].copy()
                speed_sum += state.speed[avs]
                k += 1
            r = w.w_speed * speed_sum / max(k, 1) - w.w_lane_change * changed
            res.suppressed += int(np.sum(state.suppressed[avs] - supp0))
            pending = (obs, acts, r)
            res.total_reward += float(r.sum())
            res.decisions += 1
            if learner is not None and learner.update() is not None:
                res.updates += 1
    except CollisionError as exc:
        res.collision = str(exc)
        log.warning("collision, episode terminated: %s", exc)
        if pending is not None:
            # decision interval cut short: reward the ticks completed so far
            r = w.w_speed * speed_sum / max(k, 1) - w.w_lane_change * changed
            for vid in (exc.follower, exc.leader):
                r[avs == vid] = tcfg.collision_reward
            res.total_reward += float(r.sum())
            if learner is not None:
                learner.buffer.push(pending[0], pending[1], r, pending[0], np.ones(len(avs), bool))
                res.transitions += len(avs)
        pending = None
    if pending is not None and pending[2] is not None and learner is not None:
        # time-limit cut: bootstrap from the final observation
        obs = encode_all(state, avs, cfg.sensing_radius, tcfg.obs_size)
        learner.buffer.push(pending[0], pending[1], pending[2], obs, np.zeros(len(avs), bool))
        res.transitions += len(avs)
    if rec:
        res.trajectories = rec.result()
    res.final_state = state
    return res


def smooth(values, window: int) -> np.ndarray:
    """Trailing moving average (shorter window at the start)."""
    v = np.asarray(values, dtype=float)
    c = np.concatenate([[0.0], np.cumsum(v)])
    k = np.arange(1, len(v) + 1)
    lo = np.maximum(k - window, 0)
    return (c[k] - c[lo]) / (k - lo)


@dataclass
class TrainingResult:
    net: QNetwork
    rewards: np.ndarray
    smoothed: np.ndarray
    eps: np.ndarray
    lr: np.ndarray
    updates: np.ndarray
    weight_digests: list
    collisions: int
    seeds: list


def run_training(cfg: ScenarioConfig, tcfg: TrainConfig, seed: int = 0, out_dir: str | Path | None = None,
                 progress=None) -> TrainingResult:
    """Train one shared Q-network for a scenario; writes ``reward_curve.csv`` and ``model.qnet`` if asked."""
    cfg.validate()
    tcfg.validate()
    net = make_network(tcfg, seed)
    learner = Learner(net, tcfg, seed)
    sched = EpsilonSchedule(tcfg.eps_start, tcfg.eps_end, tcfg.eps_decay)
    rewards, eps_log, lr_log, upd, digests, seeds = [], [], [], [], [], []
    collisions = 0
    for epi in range(tcfg.episodes):
        warm = epi < tcfg.warmup_episodes
        eps = 1.0 if warm else epsilon(epi, sched)
        learner.lr = tcfg.lr0 * tcfg.lr_decay ** epi
        learner.enabled = not warm
        place, rng = episode_seeds(seed, TRAIN_STREAM, epi)
        res = run_episode(cfg, tcfg, place, rng, net, eps, learner)
        collisions += res.collision is not None
        rewards.append(res.total_reward)
        eps_log.append(eps)
        lr_log.append(learner.lr)
        upd.append(res.updates)
        digests.append(net.digest())
        seeds.append(place)
        if progress:
            progress(epi, res)
    rewards = np.array(rewards)
    result = TrainingResult(net, rewards, smooth(rewards, tcfg.smoothing_window), np.array(eps_log),
                            np.array(lr_log), np.array(upd), digests, collisions, seeds)
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        write_reward_curve(out / "reward_curve.csv", result)
        save_checkpoint(out / "model.qnet", net, tcfg.episodes, cfg.scenario_hash())
    return result


def write_reward_curve(path: str | Path, result: TrainingResult) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(REWARD_HEADER)
        for k in range(len(result.rewards)):
            w.writerow([k, repr(float(result.rewards[k])), repr(float(result.smoothed[k])),
                        repr(float(result.eps[k])), repr(float(result.lr[k]))])


def read_reward_curve(path: str | Path) -> dict[str, np.ndarray]:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    return {k: np.array([float(r[k]) for r in rows]) for k in REWARD_HEADER}


def evaluation_seeds(seed: int, n: int) -> list[int]:
    return [episode_seeds(seed, EVAL_STREAM, k)[0] for k in range(n)]


def training_seeds(seed: int, n: int) -> list[int]:
    return [episode_seeds(seed, TRAIN_STREAM, k)[0] for k in range(n)]


def with_length(cfg: ScenarioConfig, length: float) -> ScenarioConfig:
    return replace(cfg, episode_length=float(length))
