"""Scenario-matrix dispatch over a bounded worker pool."""
from __future__ import annotations

import logging
import os
import traceback
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path

from ..config import Preset, ScenarioConfig
from . import io
from .compare import CompareReport, cmd_compare
from .runner import cmd_baseline, cmd_evaluate, cmd_train

log = logging.getLogger(__name__)

MODES = ("train", "evaluate", "baseline")


def worker_count(n_jobs: int, requested: int | None = None) -> int:
    cap = requested or int(os.environ.get("MIXEDFLOW_THREADS", "0") or 0) or (os.cpu_count() or 1)
    return max(1, min(cap, n_jobs))


def run_cell(cfg: ScenarioConfig, preset: Preset, seed: int, root: str | Path, modes=MODES) -> str:
    """All requested stages of one scenario into ``root/<scenario>/<mode>``."""
    cell = Path(root) / cfg.name
    if "train" in modes:
        log.info("%s: training %d episodes", cfg.name, preset.train.episodes)
        cmd_train(cfg, preset.train, seed, cell / "train")
    ecfg = preset.evaluate
    ev_cfg = replace(cfg, episode_length=ecfg.episode_length)
    if "evaluate" in modes:
        cmd_evaluate(ev_cfg, preset.train, ecfg, cell / "train" / "model.qnet", seed, cell / "evaluate")
    if "baseline" in modes:
        cmd_baseline(ev_cfg, preset.train, ecfg, seed, cell / "baseline")
    return cfg.name


def _safe_cell(args):
    cfg, preset, seed, root, modes = args
    try:
        return cfg.name, run_cell(cfg, preset, seed, root, modes), None
    except Exception as exc:  # one failed cell must not abort the rest
        return cfg.name, None, f"{type(exc).__name__}: {exc}\n{traceback.format_exc()}"


@dataclass
class MatrixResult:
    done: list = field(default_factory=list)
    failed: dict = field(default_factory=dict)
    report: CompareReport | None = None

    @property
    def ok(self) -> bool:
        return not self.failed


def cmd_matrix(preset: Preset, root: str | Path, mode: str = "all", densities=None, penetrations=None,
               seed: int = 0, workers: int | None = None, compare: bool = True) -> MatrixResult:
    scenarios = preset.scenarios(densities, penetrations)
    modes = MODES if mode == "all" else (mode,)
    root = Path(root)
    root.mkdir(parents=True, exist_ok=True)
    jobs = [(cfg, preset, seed, root, modes) for cfg in scenarios]
    n = worker_count(len(jobs), workers)
    result = MatrixResult()
    if n == 1:
        outcomes = [_safe_cell(j) for j in jobs]
    else:
        with ProcessPoolExecutor(max_workers=n) as pool:
            outcomes = list(pool.map(_safe_cell, jobs))
    for name, done, err in outcomes:
        if err is None:
            result.done.append(name)
        else:
            log.error("scenario %s failed: %s", name, err.splitlines()[0])
            result.failed[name] = err
    if compare and mode in ("all", "evaluate", "baseline"):
        ok_cfgs = [c for c in scenarios if c.name in result.done] or scenarios
        result.report = cmd_compare(root, ok_cfgs, root / "compare", taus=preset.evaluate.taus)
    io.write_json(root / "matrix.json", {"preset": preset.name, "mode": mode, "seed": seed,
                                         "scenarios": [c.name for c in scenarios], "done": result.done,
                                         "failed": {k: v.splitlines()[0] for k, v in result.failed.items()}})
    return result
