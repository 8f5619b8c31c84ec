"""Batch training, early-stopped epoch training, and checkpoints."""

import csv
import hashlib
import json
import os
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .beam import batched_greedy
from .model import GruRetriever
from .seeding import rng_for
from .vocab import Vocabulary


@dataclass
class TrainConfig:
    batch_size: int = 32
    max_epochs: int = 200
    early_stop_window: int = 20     # epochs without improvement before stopping
    early_stop_delta: float = 0.01  # accuracy units that count as improvement
    seed: int = 0
    metrics_path: Optional[str] = None  # append per-epoch CSV rows when set

    def __post_init__(self):
        if self.early_stop_window < 1:
            raise ValueError("early_stop_window must be >= 1")
        if self.early_stop_delta < 0:
            raise ValueError("early_stop_delta must be >= 0")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")


@dataclass
class Checkpoint:
    params: dict
    vocab: Vocabulary
    epoch: int
    val_accuracy: float
    config_hash: str
    model_config: dict = field(default_factory=dict)

    def restore(self) -> GruRetriever:
        model = GruRetriever.from_config(self.vocab, self.model_config)
        model.load_snapshot(self.params)
        return model


def config_hash(train_cfg: TrainConfig, model_config: dict) -> str:
    blob = json.dumps({"train": {k: v for k, v in vars(train_cfg).items()
                                 if k != "metrics_path"},
                       "model": model_config}, sort_keys=True)
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


def train_batch(model, batch) -> float:
    """One gradient step on mean per-token cross-entropy; returns the
    pre-step loss.  The model's parameters are mutated."""
    if not batch:
        raise ValueError("empty batch")
    return model.train_step(batch)


def top1_accuracy(model, eval_pairs) -> float:
    """Fraction of pairs whose greedy (beam-1) decode equals the true docid."""
    if not eval_pairs:
        raise ValueError("empty evaluation set")
    max_len = model.vocab.max_docid_len
    decoded = batched_greedy(model, [p.query for p in eval_pairs], max_len)
    hits = sum(1 for text, pair in zip(decoded, eval_pairs)
               if text == pair.docid)
    return hits / len(eval_pairs)


def train_epochs(model, train, val, cfg: TrainConfig) -> Checkpoint:
    """Shuffled epoch training with validation-accuracy early stopping.

    Stops once no epoch in the trailing ``early_stop_window`` improved the
    best validation accuracy by at least ``early_stop_delta`` (or at
    ``max_epochs``), and returns the checkpoint with the highest validation
    accuracy observed.
    """
    if not train or not val:
        raise ValueError("train and val must be non-empty")
    chash = config_hash(cfg, model.config())
    best_acc = float("-inf")
    best_params = None
    best_epoch = 0
    last_improvement = 0
    writer = _EpochCsv(cfg.metrics_path)
    train = list(train)
    n = len(train)
    for epoch in range(1, cfg.max_epochs + 1):
        order = rng_for(cfg.seed, "shuffle", epoch).permutation(n)
        losses = []
        for start in range(0, n, cfg.batch_size):
            batch = [train[i] for i in order[start:start + cfg.batch_size]]
            losses.append(train_batch(model, batch))
        acc = top1_accuracy(model, val)
        writer.row(epoch, float(np.mean(losses)), acc)
        if acc >= best_acc + cfg.early_stop_delta:
            last_improvement = epoch
        if acc > best_acc:
            best_acc = acc
            best_params = model.snapshot()
            best_epoch = epoch
        if epoch - last_improvement >= cfg.early_stop_window:
            break
    writer.close()
    return Checkpoint(params=best_params, vocab=model.vocab, epoch=best_epoch,
                      val_accuracy=best_acc, config_hash=chash,
                      model_config=model.config())


class _EpochCsv:
    def __init__(self, path):
        self.fh = None
        if path:
            fresh = not os.path.exists(path)
            self.fh = open(path, "a", encoding="utf-8", newline="")
            self.writer = csv.writer(self.fh)
            if fresh:
                self.writer.writerow(["epoch", "train_loss", "val_top1"])

    def row(self, epoch, loss, acc):
        if self.fh:
            self.writer.writerow([epoch, repr(loss), repr(acc)])

    def close(self):
        if self.fh:
            self.fh.close()


def save_checkpoint(ckpt: Checkpoint, path):
    """Self-describing container: parameter arrays plus a JSON header."""
    meta = {
        "vocab": ckpt.vocab.to_dict(),
        "epoch": ckpt.epoch,
        "val_accuracy": ckpt.val_accuracy,
        "config_hash": ckpt.config_hash,
        "model_config": ckpt.model_config,
        "param_names": sorted(ckpt.params),
    }
    arrays = {f"param_{k}": v for k, v in ckpt.params.items()}
    np.savez_compressed(path, _meta=np.frombuffer(
        json.dumps(meta, sort_keys=True).encode(), dtype=np.uint8), **arrays)


def load_checkpoint(path) -> Checkpoint:
    with np.load(path) as data:
        meta = json.loads(bytes(data["_meta"]).decode())
        params = {k: data[f"param_{k}"].copy() for k in meta["param_names"]}
    return Checkpoint(params=params,
                      vocab=Vocabulary.from_dict(meta["vocab"]),
                      epoch=meta["epoch"],
                      val_accuracy=meta["val_accuracy"],
                      config_hash=meta["config_hash"],
                      model_config=meta["model_config"])
