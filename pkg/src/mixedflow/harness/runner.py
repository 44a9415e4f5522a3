"""Train / evaluate / baseline runs and per-episode analysis."""
from __future__ import annotations

import logging
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ..agent.dqn import load_checkpoint
from ..agent.network import QNetwork
from ..agent.training import (
    EVAL_STREAM,
    episode_seeds,
    evaluation_seeds,
    run_episode,
    run_training,
    training_seeds,
)
from ..config import EvalConfig, ScenarioConfig, TrainConfig, to_dict
from ..metrics import (
    EdieRegion,
    MeasurementRecord,
    detect_equilibrium,
    edie_measures,
    edie_table,
    fundamental_diagram,
    lane_change_frequency,
    spatial_series,
)
from ..metrics.equilibrium import InsufficientDataError
from ..traffic import Trajectories, write_trajectory_csv
from . import io
from .plots import plot_reward_curve, plot_series

log = logging.getLogger(__name__)


def front_gap_series(traj: Trajectories, length: float) -> np.ndarray:
    """(T, n) bumper gap of every vehicle to its leader in the same lane."""
    T, n = traj.pos.shape
    out = np.empty((T, n))
    L = traj.ring_length
    for k in range(T):
        order = np.lexsort((traj.pos[k], traj.lane[k]))
        lanes = traj.lane[k][order]
        nxt = np.roll(order, -1)
        # wrap each lane's last vehicle onto that lane's first
        starts = np.r_[0, np.flatnonzero(lanes[1:] != lanes[:-1]) + 1]
        ends = np.r_[starts[1:], n] - 1
        nxt[ends] = order[starts]
        d = (traj.pos[k][nxt] - traj.pos[k][order]) % L
        d[nxt == order] = L
        out[k, order] = d - length
    return out


@dataclass
class EpisodeAnalysis:
    summary: dict
    records: list[MeasurementRecord]
    spatial: object


def analyze_episode(traj: Trajectories, cfg: ScenarioConfig, ecfg: EvalConfig) -> EpisodeAnalysis:
    post = traj.window(cfg.loading_time)
    t_ne = None
    try:
        t_ne = detect_equilibrium(post.speed, front_gap_series(post, cfg.vehicle_length), cfg.dt, post.t[0])
    except InsufficientDataError as exc:
        log.warning("NE detection skipped: %s", exc)
    t_end = float(traj.t[-1])
    w0 = t_ne if t_ne is not None else cfg.loading_time
    w1 = min(w0 + ecfg.post_ne_window, t_end)
    whole = EdieRegion(0.0, w0, cfg.ring_length, max(w1 - w0, 1e-9))
    speeds = {}
    for code, label in ((1, "HV"), (2, "AV")):
        speeds[label] = edie_measures(traj, whole, code).u_mps
    records = edie_table(traj, ecfg.edie_dx, ecfg.edie_dt, t_from=cfg.loading_time)
    every = max(int(round(1.0 / cfg.dt)), 1)
    sp = spatial_series(post, cfg.vehicle_length, ecfg.spatial_cells, every)
    in_win = (sp.t >= w0) & (sp.t <= w1)
    fd = fundamental_diagram(records)
    summary = {
        "t_ne": t_ne,
        "ne_detected": t_ne is not None,
        "window": [w0, w1],
        "speed_mps": speeds,
        "lane_change_frequency": {
            "HV": lane_change_frequency(traj, 1, cfg.loading_time),
            "AV": lane_change_frequency(traj, 2, cfg.loading_time),
        },
        "max_flow_vph": fd.max_flow,
        "mean_M_t": float(np.nanmean(sp.M[in_win])) if in_win.any() else float("nan"),
        "mean_B": float(np.nanmean(sp.B[in_win])) if in_win.any() else float("nan"),
        "mean_H": float(np.nanmean(sp.H[in_win])) if in_win.any() else float("nan"),
    }
    return EpisodeAnalysis(summary, records, sp)


def _aggregate(episodes: list[dict]) -> dict:
    def mean(get):
        vals = np.array([get(e) for e in episodes], dtype=float)
        return float(np.nanmean(vals)) if np.isfinite(vals).any() else float("nan")

    return {
        "speed_mps": {c: mean(lambda e, c=c: e["speed_mps"][c]) for c in ("HV", "AV")},
        "lane_change_frequency": {c: mean(lambda e, c=c: e["lane_change_frequency"][c]) for c in ("HV", "AV")},
        "lane_change_frequency_episodes": {c: [e["lane_change_frequency"][c] for e in episodes]
                                           for c in ("HV", "AV")},
        "max_flow_vph": mean(lambda e: e["max_flow_vph"]),
        "mean_M_t": mean(lambda e: e["mean_M_t"]),
        "t_ne": [e["t_ne"] for e in episodes],
        "ne_fraction": float(np.mean([e["ne_detected"] for e in episodes])) if episodes else 0.0,
    }


def cmd_train(cfg: ScenarioConfig, tcfg: TrainConfig, seed: int, out: str | Path, progress=None) -> Path:
    out = Path(out)
    start = time.perf_counter()
    with io.atomic_dir(out) as tmp:
        res = run_training(cfg, tcfg, seed, tmp, progress)
        plot_reward_curve(tmp / "reward_curve.svg", res.rewards, res.smoothed, tcfg.warmup_episodes)
        man = io.RunManifest(cfg.scenario_hash(), "train", [int(s) for s in res.seeds], scenario=to_dict(cfg),
                             extra={"train": to_dict(tcfg), "seed": seed, "collisions": res.collisions,
                                    "warmup_episodes": tcfg.warmup_episodes,
                                    "elapsed_s": time.perf_counter() - start})
        man.write(tmp)
    return out


def _run_eval(cfg, tcfg, ecfg, seed, out, net: QNetwork | None, n_episodes, length, log_every, mode,
              extra=None) -> dict:
    out = Path(out)
    n_episodes = ecfg.episodes if n_episodes is None else n_episodes
    length = ecfg.episode_length if length is None else length
    log_every = ecfg.log_every if log_every is None else log_every
    seeds = evaluation_seeds(seed, n_episodes)
    clash = set(seeds) & set(training_seeds(seed, tcfg.episodes))
    if clash:
        raise RuntimeError(f"evaluation seeds overlap training seeds: {sorted(clash)}")
    episodes = []
    start = time.perf_counter()
    with io.atomic_dir(out) as tmp:
        for k in range(n_episodes):
            place, rng = episode_seeds(seed, EVAL_STREAM, k)
            res = run_episode(cfg, tcfg, place, rng, net, eps=0.0, record=True, length=length)
            an = analyze_episode(res.trajectories, cfg, ecfg)
            an.summary.update({"episode": k, "seed": place, "policy_calls": res.policy_calls,
                               "suppressed": res.suppressed, "collision": res.collision})
            ep = tmp / f"episode_{k:02d}"
            ep.mkdir()
            write_trajectory_csv(res.trajectories, ep / "trajectory.csv", log_every)
            io.write_edie_csv(ep / "edie.csv", an.records)
            io.write_spatial_csv(ep / "spatial.csv", an.spatial)
            io.write_json(ep / "summary.json", an.summary)
            if k == 0:
                plot_series(ep / "M_t.svg", an.spatial.t, an.spatial.M, "t [s]", "M_t")
            episodes.append(an.summary)
        summary = {"mode": mode, "scenario": cfg.name, "density_vpm": cfg.density_vpm,
                   "av_penetration": cfg.av_penetration, "n_episodes": n_episodes, "episode_length": length,
                   **_aggregate(episodes), "episodes": episodes}
        io.write_json(tmp / "summary.json", summary)
        man = io.RunManifest(cfg.scenario_hash(), mode, seeds, scenario=to_dict(cfg),
                             extra={"seed": seed, "elapsed_s": time.perf_counter() - start, **(extra or {})})
        man.write(tmp)
    return summary


def cmd_evaluate(cfg: ScenarioConfig, tcfg: TrainConfig, ecfg: EvalConfig, checkpoint: str | Path, seed: int,
                 out: str | Path, n_episodes: int | None = None, length: float | None = None,
                 log_every: int | None = None) -> dict:
    ck = load_checkpoint(checkpoint, expect_hash=cfg.scenario_hash())
    return _run_eval(cfg, tcfg, ecfg, seed, out, ck.net, n_episodes, length, log_every, "evaluate",
                     {"checkpoint": str(checkpoint), "checkpoint_sha256": io.sha256_file(checkpoint)})


def cmd_baseline(cfg: ScenarioConfig, tcfg: TrainConfig, ecfg: EvalConfig, seed: int, out: str | Path,
                 n_episodes: int | None = None, length: float | None = None,
                 log_every: int | None = None) -> dict:
    return _run_eval(cfg, tcfg, ecfg, seed, out, None, n_episodes, length, log_every, "baseline")


def load_run_records(run_dir: str | Path) -> list[list[MeasurementRecord]]:
    """Edie records of every episode of an evaluate/baseline run."""
    return [io.read_edie_csv(p / "edie.csv") for p in sorted(Path(run_dir).glob("episode_*"))]
