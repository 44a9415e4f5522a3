"""DQN update, target sync and the checkpoint file format."""
from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .network import Adam, NonFiniteError, QNetwork

MAGIC = b"MXFQNET\0"
VERSION = 1


def td_targets(target: QNetwork, r, s2, done, gamma: float) -> np.ndarray:
    q_next = target.forward(s2).max(axis=1)
    return np.asarray(r, dtype=float) + gamma * (1.0 - np.asarray(done, dtype=float)) * q_next


def td_loss_and_grads(net: QNetwork, target: QNetwork, batch, gamma: float):
    """Mean squared TD error and its gradient with respect to ``net``'s parameters."""
    s, a, r, s2, done = batch
    a = np.asarray(a, dtype=np.int64)
    y = td_targets(target, r, s2, done, gamma)
    q, acts = net.forward(np.atleast_2d(s), cache=True)
    rows = np.arange(len(a))
    err = q[rows, a] - y
    loss = float(np.mean(err * err))
    d_out = np.zeros_like(q)
    d_out[rows, a] = 2.0 * err / len(a)
    return loss, net.backward(acts, d_out)


def train_step(net: QNetwork, target: QNetwork, batch, gamma: float, opt: Adam, lr: float) -> float:
    """One Adam step on the mean squared TD loss; ``target`` is read only."""
    if len(batch[1]) == 0:
        raise ValueError("empty batch")
    loss, grads = td_loss_and_grads(net, target, batch, gamma)
    if not np.isfinite(loss) or not all(np.all(np.isfinite(g)) for g in grads):
        raise NonFiniteError(
            f"non-finite TD loss {loss} at Adam step {opt.t}; rewards in [{np.min(batch[2])}, {np.max(batch[2])}]")
    opt.step(net.params(), grads, lr)
    return loss


def sync_target(net: QNetwork, target: QNetwork) -> QNetwork:
    target.W = [w.copy() for w in net.W]
    target.b = [b.copy() for b in net.b]
    target.sizes = net.sizes
    return target


# --- checkpoint --------------------------------------------------------------

@dataclass
class Checkpoint:
    net: QNetwork
    episodes: int
    scenario_hash: str


class CheckpointError(ValueError):
    pass


def save_checkpoint(path: str | Path, net: QNetwork, episodes: int, scenario_hash: str) -> None:
    """Header (magic, version, sizes, episodes, hash) then float64 LE weights and biases in layer order."""
    h = scenario_hash.encode("ascii")
    parts = [MAGIC, struct.pack("<II", VERSION, len(net.sizes)), struct.pack(f"<{len(net.sizes)}I", *net.sizes),
             struct.pack("<QI", episodes, len(h)), h]
    for W, b in zip(net.W, net.b):
        parts += [W.astype("<f8").tobytes(), b.astype("<f8").tobytes()]
    tmp = Path(str(path) + ".tmp")
    tmp.write_bytes(b"".join(parts))
    tmp.replace(path)


def load_checkpoint(path: str | Path, expect_hash: str | None = None) -> Checkpoint:
    data = Path(path).read_bytes()
    if not data.startswith(MAGIC):
        raise CheckpointError(f"{path}: not a checkpoint file")
    off = len(MAGIC)
    version, n_sizes = struct.unpack_from("<II", data, off)
    off += 8
    if version != VERSION:
        raise CheckpointError(f"{path}: unsupported version {version}")
    sizes = struct.unpack_from(f"<{n_sizes}I", data, off)
    off += 4 * n_sizes
    episodes, hlen = struct.unpack_from("<QI", data, off)
    off += 12
    shash = data[off:off + hlen].decode("ascii")
    off += hlen
    if expect_hash is not None and shash != expect_hash:
        raise CheckpointError(f"checkpoint scenario hash {shash} does not match scenario {expect_hash}")
    net = QNetwork(sizes, zero=True)
    for k, (fi, fo) in enumerate(zip(sizes[:-1], sizes[1:])):
        net.W[k] = np.frombuffer(data, "<f8", fi * fo, off).reshape(fi, fo).astype(float)
        off += 8 * fi * fo
        net.b[k] = np.frombuffer(data, "<f8", fo, off).astype(float)
        off += 8 * fo
    if off != len(data):
        raise CheckpointError(f"{path}: {len(data) - off} trailing bytes")
    net.check_finite()
    return Checkpoint(net, int(episodes), shash)
