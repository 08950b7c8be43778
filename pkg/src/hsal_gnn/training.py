"""Mini-batch training loop, early stopping and checkpoint files."""

from __future__ import annotations

import json
import logging
import struct
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Callable

import numpy as np

from . import tensor_core as tc
from .data import Dataset, Split, leave_one_out
from .evaluation import EvalConfig, evaluate
from .graph import SequelAwareGraph, build_graph
from .model import ModelConfig, ModelParams, batch_loss, collate, init_params
from .sampling import SamplingConfig, sample_subgraph

log = logging.getLogger(__name__)

CHECKPOINT_MAGIC = b"HSALGNN-CKPT"
CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class TrainConfig:
    d: int = 50
    n_layers: int = 3
    m: int = 4
    recent_n: int = 50
    lr: float = 0.01
    batch_size: int = 50
    weight_decay: float = 1e-4
    epochs: int = 50
    patience: int = 5
    epochs_exact: bool = False
    fusion: str = "sum"
    positional: str = "sinusoidal"
    propagation: str = "hsal"
    use_sequels: bool = True
    init_std: float = 0.01
    seed: int = 0

    def model_config(self, n_users: int, n_items: int) -> ModelConfig:
        return ModelConfig(n_users=n_users, n_items=n_items, d=self.d, n_layers=self.n_layers,
                           max_order=self.recent_n, fusion=self.fusion, positional=self.positional,
                           propagation=self.propagation, init_std=self.init_std)

    def sampling_config(self) -> SamplingConfig:
        return SamplingConfig(m=self.m, recent_n=self.recent_n)


@dataclass
class TrainResult:
    params: ModelParams
    log: list[dict] = field(default_factory=list)
    best_epoch: int = 0
    stopped_early: bool = False
    diverged: bool = False


def training_points(split: Split) -> list[tuple[int, int, int]]:
    """(user, target item, t) for every train interaction that has a predecessor."""
    by_user: dict[int, list[tuple[int, int]]] = {}
    for u, i, t in split.train:
        by_user.setdefault(u, []).append((t, i))
    points = []
    for u in sorted(by_user):
        seq = sorted(by_user[u], key=lambda x: x[0])
        points.extend((u, i, t) for t, i in seq[1:] if t > seq[0][0])
    return points


def _prepare(dataset: Dataset, cfg: TrainConfig) -> Dataset:
    return dataset if cfg.use_sequels else dataset.without_series()


def train(dataset: Dataset, cfg: TrainConfig, split: Split | None = None,
          on_epoch: Callable[[dict], None] | None = None) -> TrainResult:
    """Fit parameters on the training part of a leave-one-out split.

    Each epoch visits every training target once in a seeded shuffled order,
    one Adam step per mini-batch. Training stops after ``patience`` epochs
    without a better validation Hit@10 unless ``epochs_exact`` is set; the
    best parameters seen are returned.
    """
    ds = _prepare(dataset, cfg)
    split = split or leave_one_out(ds)
    sampling = cfg.sampling_config()
    graph = build_graph(split.train, ds.series_catalog, n_users=ds.n_users, n_items=ds.n_items)
    points = training_points(split)
    if not points:
        raise ValueError("no training targets: every user needs two or more train interactions")
    subgraphs = [sample_subgraph(graph.snapshot(t), u, None, sampling) for u, _, t in points]
    targets = np.array([i for _, i, _ in points], dtype=np.int64)

    mcfg = cfg.model_config(ds.n_users, ds.n_items)
    params = init_params(mcfg, cfg.seed)
    opt = tc.Adam(list(params), lr=cfg.lr, weight_decay=cfg.weight_decay)
    rng = np.random.default_rng(cfg.seed)
    eval_cfg = EvalConfig(ks=(10,))
    val_graph = graph

    result = TrainResult(params=params.copy())
    best, since_best = -1.0, 0
    for epoch in range(1, cfg.epochs + 1):
        order = rng.permutation(len(points))
        losses = []
        snapshot = params.copy()
        for start in range(0, len(order), cfg.batch_size):
            idx = order[start : start + cfg.batch_size]
            batch = collate([subgraphs[k] for k in idx], graph, mcfg.max_order, targets[idx])
            opt.zero_grad()
            try:
                with tc.Tape() as tape:
                    value = batch_loss(batch, params)
                tc.backward(value, tape, list(params))
                opt.step()
            except tc.NumericError:
                result.diverged = True
                break
            losses.append(value.item())
        mean_loss = float(np.mean(losses)) if losses else float("nan")
        if result.diverged or not np.isfinite(mean_loss):
            result.diverged = True
            params = snapshot
            log.warning("epoch %d: non-finite loss, keeping the last good parameters", epoch)
            break
        val = evaluate(params, split, ds, sampling, eval_cfg, on="validation", graph=val_graph)
        entry = {"epoch": epoch, "loss": mean_loss, "val_hit@10": val.hit[10], "val_ndcg@10": val.ndcg[10]}
        result.log.append(entry)
        if on_epoch:
            on_epoch(entry)
        log.info("epoch %d loss %.5f val Hit@10 %.4f", epoch, mean_loss, val.hit[10])
        if val.hit[10] > best:
            best, since_best = val.hit[10], 0
            result.params = params.copy()
            result.best_epoch = epoch
        else:
            since_best += 1
            if not cfg.epochs_exact and since_best >= cfg.patience:
                result.stopped_early = True
                break
    if cfg.epochs_exact or not result.log:
        result.params = params.copy()
        result.best_epoch = len(result.log)
    return result


# ---------------------------------------------------------------------------
# checkpoints
#
# layout: magic, u32 version, u64 header length, UTF-8 JSON header
# (config, seed, tensor names/shapes in order), then every tensor as
# little-endian float64 in row-major order.


def save_checkpoint(path: str | Path, params: ModelParams, train_cfg: TrainConfig | None = None) -> None:
    header = {
        "model": asdict(params.cfg),
        "train": asdict(train_cfg) if train_cfg else None,
        "tensors": [[name, list(t.shape)] for name, t in params.tensors.items()],
    }
    blob = json.dumps(header, sort_keys=True).encode()
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<IQ", CHECKPOINT_VERSION, len(blob)))
        fh.write(blob)
        for t in params.tensors.values():
            fh.write(np.ascontiguousarray(t.values, dtype="<f8").tobytes())


def load_checkpoint(path: str | Path) -> tuple[ModelParams, TrainConfig | None]:
    raw = Path(path).read_bytes()
    if not raw.startswith(CHECKPOINT_MAGIC):
        raise ValueError(f"{path}: not a checkpoint file")
    off = len(CHECKPOINT_MAGIC)
    version, n = struct.unpack_from("<IQ", raw, off)
    if version != CHECKPOINT_VERSION:
        raise ValueError(f"{path}: unsupported checkpoint version {version}")
    off += struct.calcsize("<IQ")
    header = json.loads(raw[off : off + n])
    off += n
    mcfg = ModelConfig(**header["model"])
    tensors = {}
    for name, shape in header["tensors"]:
        size = int(np.prod(shape))
        arr = np.frombuffer(raw, dtype="<f8", count=size, offset=off).reshape(shape).astype(np.float64)
        off += 8 * size
        tensors[name] = tc.Tensor(arr, requires_grad=True, name=name)
    tcfg = TrainConfig(**header["train"]) if header["train"] else None
    return ModelParams(mcfg, tensors), tcfg


def write_log(path: str | Path, entries: list[dict]) -> None:
    with open(path, "w") as fh:
        for e in entries:
            fh.write(json.dumps(e, sort_keys=True) + "\n")
