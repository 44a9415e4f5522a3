"""CSV / JSON writers and readers plus run manifests."""
from __future__ import annotations

import csv
import hashlib
import json
import math
import os
import shutil
import tempfile
from contextlib import contextmanager
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .. import __version__
from ..metrics import MeasurementRecord

EDIE_HEADER = ["region_id", "t", "class", "q_vph", "rho_vpkm", "u_mps"]
SPATIAL_HEADER = ["t", "B", "H", "M_t"]


def fmt(x) -> str:
    """Lossless float text ('' for NaN so missing cells stay visibly empty)."""
    if isinstance(x, (bool, np.bool_)):
        return str(int(x))
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    x = float(x)
    return "" if math.isnan(x) else repr(x)


def parse(s: str) -> float:
    return float("nan") if s == "" else float(s)


def write_csv(path: str | Path, header: list[str], rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for r in rows:
            w.writerow([v if isinstance(v, str) else fmt(v) for v in r])


def read_csv(path: str | Path) -> list[dict]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def write_edie_csv(path, records: list[MeasurementRecord]) -> None:
    write_csv(path, EDIE_HEADER, ((r.region_id, r.t, r.cls, r.q_vph, r.rho_vpkm, r.u_mps) for r in records))


def read_edie_csv(path) -> list[MeasurementRecord]:
    return [MeasurementRecord(int(r["region_id"]), float(r["t"]), r["class"], parse(r["q_vph"]),
                              parse(r["rho_vpkm"]), parse(r["u_mps"])) for r in read_csv(path)]


def write_spatial_csv(path, series) -> None:
    write_csv(path, SPATIAL_HEADER, zip(series.t, series.B, series.H, series.M))


def read_spatial_csv(path) -> dict[str, np.ndarray]:
    rows = read_csv(path)
    return {k: np.array([parse(r[k]) for r in rows]) for k in SPATIAL_HEADER}


def _json_default(o):
    if isinstance(o, np.generic):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(f"cannot serialise {type(o).__name__}")


def _clean(o):
    # JSON has no NaN; missing values become null
    if isinstance(o, float) and not math.isfinite(o):
        return None
    if isinstance(o, dict):
        return {k: _clean(v) for k, v in o.items()}
    if isinstance(o, (list, tuple)):
        return [_clean(v) for v in o]
    if isinstance(o, np.generic):
        return _clean(o.item())
    return o


def write_json(path, data) -> None:
    Path(path).write_text(json.dumps(_clean(data), indent=2, sort_keys=True, default=_json_default) + "\n")


def read_json(path):
    return json.loads(Path(path).read_text())


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


@dataclass
class RunManifest:
    scenario_hash: str
    mode: str
    seeds: list
    artifacts: dict = field(default_factory=dict)  # relative path -> sha256
    code_version: str = __version__
    scenario: dict = field(default_factory=dict)
    extra: dict = field(default_factory=dict)

    def add(self, root: Path, path: Path) -> None:
        self.artifacts[str(Path(path).relative_to(root))] = sha256_file(path)

    def write(self, root: Path) -> Path:
        for p in sorted(root.rglob("*")):
            if p.is_file() and p.name != "manifest.json":
                self.add(root, p)
        out = root / "manifest.json"
        write_json(out, self.__dict__)
        return out


def load_manifest(root) -> RunManifest:
    return RunManifest(**read_json(Path(root) / "manifest.json"))


def verify_manifest(root) -> list[str]:
    """Paths whose content no longer matches the recorded digest."""
    m = load_manifest(root)
    root = Path(root)
    return [p for p, h in m.artifacts.items() if not (root / p).exists() or sha256_file(root / p) != h]


@contextmanager
def atomic_dir(final: str | Path):
    """Write into a private temp dir next to ``final``; rename into place on success."""
    final = Path(final)
    final.parent.mkdir(parents=True, exist_ok=True)
    tmp = Path(tempfile.mkdtemp(prefix=f".{final.name}.", dir=final.parent))
    try:
        yield tmp
    except BaseException:
        shutil.rmtree(tmp, ignore_errors=True)
        raise
    if final.exists():
        shutil.rmtree(final)
    os.replace(tmp, final)
