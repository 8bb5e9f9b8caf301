"""Demonstration storage: packed per-step records, action normalization,
training windows, and a little-endian binary file format (magic "LDPD").

Costmaps and global-map crops are bit-packed both on disk and in memory;
at 84x84 cells a step costs 882 bytes instead of 7 KB.
"""

from __future__ import annotations

import os
import struct
from dataclasses import dataclass, field

import numpy as np

MAGIC = b"LDPD"
VERSION = 1

KIND_TAGS = {"static": 0, "dynamic": 1, "maze": 2, "zigzag": 3}
KIND_NAMES = {v: k for k, v in KIND_TAGS.items()}
PREF_TAGS = {"greedy": 0, "path": 1}
PREF_NAMES = {v: k for k, v in PREF_TAGS.items()}
OUTCOME_TAGS = {"success": 0, "collision": 1, "stuck": 2}
OUTCOME_NAMES = {v: k for k, v in OUTCOME_TAGS.items()}

FLAG_REACHED = 0x01
FLAG_COLLIDED = 0x02


class DatasetError(Exception):
    pass


class CorruptHeader(DatasetError):
    pass


class VersionMismatch(DatasetError):
    pass


class TruncatedFile(DatasetError):
    def __init__(self, record_index: int, msg: str):
        super().__init__(f"trajectory {record_index}: {msg}")
        self.record_index = record_index


class EmptyDataset(DatasetError):
    pass


def pack_maps(maps: np.ndarray) -> np.ndarray:
    """(S, H, W) bool -> (S, ceil(H*W/8)) uint8."""
    s = maps.shape[0]
    return np.packbits(maps.reshape(s, -1), axis=1)


def unpack_maps(bits: np.ndarray, h: int, w: int) -> np.ndarray:
    s = bits.shape[0]
    flat = np.unpackbits(bits, axis=1, count=h * w)
    return flat.reshape(s, h, w).astype(bool)


@dataclass
class Trajectory:
    """One expert episode, stored as arrays over steps."""

    preference: str                # "greedy" or "path"
    outcome: str                   # "success" / "collision" / "stuck"
    kind: str
    seed: int
    costmap_bits: np.ndarray       # (S, ceil(H*W/8)) uint8
    gm_bits: np.ndarray            # (S, ceil(d*d/8)) uint8
    goals: np.ndarray              # (S, 2) f32
    path_cond: np.ndarray          # (S, 2P) f32
    actions: np.ndarray            # (S, 2) f32, executed (v, steer)
    rewards: np.ndarray            # (S,) f32
    flags: np.ndarray              # (S,) uint8

    def __len__(self):
        return self.actions.shape[0]


@dataclass
class Dataset:
    trajectories: list
    costmap_shape: tuple = (84, 84)
    gm_dim: int = 32
    path_points: int = 16
    t_ep: int = 200
    kind: str = "static"
    master_seed: int = 0
    _stats: tuple | None = field(default=None, repr=False)

    def __len__(self):
        return len(self.trajectories)

    @property
    def n_steps(self) -> int:
        return sum(len(t) for t in self.trajectories)

    def action_stats(self):
        """Per-dimension (min, max) over every stored action."""
        if self._stats is None:
            if not self.trajectories or self.n_steps == 0:
                raise EmptyDataset("no actions to compute normalization stats from")
            acts = np.concatenate([t.actions for t in self.trajectories])
            self._stats = (acts.min(axis=0).astype(np.float64),
                           acts.max(axis=0).astype(np.float64))
        return self._stats


def normalize_actions(actions: np.ndarray, stats) -> np.ndarray:
    """Map per-dimension [min, max] to [-1, 1]; degenerate dims go to 0."""
    lo, hi = stats
    span = hi - lo
    safe = np.where(span < 1e-12, 1.0, span)
    out = 2.0 * (actions - lo) / safe - 1.0
    return np.where(span < 1e-12, 0.0, out)


def denormalize_actions(actions: np.ndarray, stats) -> np.ndarray:
    lo, hi = stats
    span = hi - lo
    return lo + (np.asarray(actions) + 1.0) / 2.0 * span


def window_indices(length: int, t: int, t_obs: int, horizon: int):
    """Observation rows [t-t_obs+1 .. t] and action rows [t .. t+horizon-1],
    clipped to the episode (repeat-first / repeat-last padding)."""
    obs = np.clip(np.arange(t - t_obs + 1, t + 1), 0, length - 1)
    act = np.clip(np.arange(t, t + horizon), 0, length - 1)
    return obs, act


@dataclass
class TrainingSample:
    costmaps: np.ndarray           # (T_o, H, W) bool
    rel_goal: np.ndarray           # (2,)
    path_cond: np.ndarray          # (2P,)
    global_map: np.ndarray         # (d, d) bool
    actions: np.ndarray            # (T, 2) normalized to [-1, 1]


def window(traj: Trajectory, t: int, stats, t_obs: int = 2, horizon: int = 8,
           costmap_shape=(84, 84), gm_dim: int = 32) -> TrainingSample:
    s = len(traj)
    if not 0 <= t < s:
        raise IndexError(f"window start {t} outside trajectory of length {s}")
    obs_idx, act_idx = window_indices(s, t, t_obs, horizon)
    maps = unpack_maps(traj.costmap_bits[obs_idx], *costmap_shape)
    gm = unpack_maps(traj.gm_bits[t:t + 1], gm_dim, gm_dim)[0]
    acts = normalize_actions(traj.actions[act_idx].astype(np.float64), stats)
    return TrainingSample(maps, traj.goals[t].astype(np.float64),
                          traj.path_cond[t].astype(np.float64), gm, acts)


def _step_dtype(cm_bytes: int, gm_bytes: int, path_len: int) -> np.dtype:
    return np.dtype([
        ("cm", "u1", (cm_bytes,)),
        ("gm", "u1", (gm_bytes,)),
        ("goal", "<f4", (2,)),
        ("pc", "<f4", (path_len,)),
        ("act", "<f4", (2,)),
        ("rew", "<f4"),
        ("flags", "u1"),
    ])


_HEADER = struct.Struct("<4sHIIHHHHHBQII")


def save(ds: Dataset, path: str) -> None:
    """Atomic write: header, stats, then trajectories in order."""
    h, w = ds.costmap_shape
    cm_bytes = (h * w + 7) // 8
    gm_bytes = (ds.gm_dim * ds.gm_dim + 7) // 8
    path_len = 2 * ds.path_points
    n_greedy = sum(t.preference == "greedy" for t in ds.trajectories)
    n_path = len(ds.trajectories) - n_greedy
    chunks = [_HEADER.pack(
        MAGIC, VERSION, len(ds.trajectories), ds.t_ep, h, w, 2, path_len,
        ds.gm_dim, KIND_TAGS[ds.kind], ds.master_seed & 0xFFFFFFFFFFFFFFFF,
        n_greedy, n_path,
    )]
    if ds.trajectories:
        lo, hi = ds.action_stats()
    else:
        lo = hi = np.zeros(2)
    chunks.append(np.stack([lo, hi]).astype("<f8").tobytes())

    dt = _step_dtype(cm_bytes, gm_bytes, path_len)
    for traj in ds.trajectories:
        s = len(traj)
        chunks.append(struct.pack(
            "<BBBQI", PREF_TAGS[traj.preference], OUTCOME_TAGS[traj.outcome],
            KIND_TAGS[traj.kind], traj.seed & 0xFFFFFFFFFFFFFFFF, s,
        ))
        rec = np.zeros(s, dtype=dt)
        rec["cm"] = traj.costmap_bits
        rec["gm"] = traj.gm_bits
        rec["goal"] = traj.goals
        rec["pc"] = traj.path_cond
        rec["act"] = traj.actions
        rec["rew"] = traj.rewards
        rec["flags"] = traj.flags
        chunks.append(rec.tobytes())

    tmp = path + ".tmp"
    with open(tmp, "wb") as f:
        f.write(b"".join(chunks))
        f.flush()
        os.fsync(f.fileno())
    os.replace(tmp, path)


def load(path: str) -> Dataset:
    with open(path, "rb") as f:
        blob = f.read()
    if len(blob) < _HEADER.size:
        raise CorruptHeader(f"file too short for header ({len(blob)} bytes)")
    (magic, version, n_traj, t_ep, h, w, act_dim, path_len, gm_dim, kind_tag,
     master_seed, n_greedy, n_path) = _HEADER.unpack_from(blob, 0)
    if magic != MAGIC:
        raise CorruptHeader(f"bad magic {magic!r}")
    if version != VERSION:
        raise VersionMismatch(f"file version {version}, reader supports {VERSION}")
    if act_dim != 2 or kind_tag not in KIND_NAMES or path_len % 2:
        raise CorruptHeader(
            f"implausible header fields (act_dim={act_dim}, kind={kind_tag}, path_len={path_len})")
    off = _HEADER.size
    if len(blob) < off + 32:
        raise CorruptHeader("missing normalization stats block")
    stats = np.frombuffer(blob, dtype="<f8", count=4, offset=off).reshape(2, 2)
    off += 32

    cm_bytes = (h * w + 7) // 8
    gm_bytes = (gm_dim * gm_dim + 7) // 8
    dt = _step_dtype(cm_bytes, gm_bytes, path_len)
    trajs = []
    for i in range(n_traj):
        if len(blob) < off + 15:
            raise TruncatedFile(i, "trajectory header past end of file")
        pref, outc, tkind, seed, s = struct.unpack_from("<BBBQI", blob, off)
        off += 15
        need = s * dt.itemsize
        if len(blob) < off + need:
            raise TruncatedFile(i, f"expected {need} step bytes, file ends early")
        if pref not in PREF_NAMES or outc not in OUTCOME_NAMES or tkind not in KIND_NAMES:
            raise TruncatedFile(i, f"bad trajectory tags ({pref}, {outc}, {tkind})")
        rec = np.frombuffer(blob, dtype=dt, count=s, offset=off)
        off += need
        trajs.append(Trajectory(
            PREF_NAMES[pref], OUTCOME_NAMES[outc], KIND_NAMES[tkind], seed,
            rec["cm"].copy(), rec["gm"].copy(), rec["goal"].copy(),
            rec["pc"].copy(), rec["act"].copy(), rec["rew"].copy(),
            rec["flags"].copy(),
        ))
    ds = Dataset(trajs, (h, w), gm_dim, path_len // 2, t_ep,
                 KIND_NAMES[kind_tag], master_seed)
    if trajs:
        ds._stats = (stats[0].copy(), stats[1].copy())
    return ds


def merge(datasets) -> Dataset:
    """Concatenate several datasets; shapes must agree and stats recompute."""
    datasets = list(datasets)
    if not datasets:
        raise EmptyDataset("nothing to merge")
    first = datasets[0]
    for d in datasets[1:]:
        if (d.costmap_shape, d.gm_dim, d.path_points) != (
                first.costmap_shape, first.gm_dim, first.path_points):
            raise DatasetError("datasets have mismatched observation shapes")
    trajs = [t for d in datasets for t in d.trajectories]
    return Dataset(trajs, first.costmap_shape, first.gm_dim, first.path_points,
                   first.t_ep, first.kind, first.master_seed)
