"""Training loop with early stopping, transfer retraining, and evaluation.

Datasets are loaded fully into memory (everything here is desk scale).
The whole loop is deterministic given (manifest, config, seed): shuffles,
pairings, and parameter init all flow from seeded generators.
"""

from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from provnet.engine.adam import AdamHyper, AdamState, adam_step
from provnet.engine.checkpoint import load_checkpoint, save_checkpoint
from provnet.errors import ConfigError, DataError, TrainingAborted
from provnet.ingest import Manifest
from provnet.metrics import EvalReport, build_report
from provnet.models import (
    ConvNet,
    MultiFrameNet,
    StreamConfig,
    build_multiframe,
    freeze_backbone,
)
from provnet.preprocess import load_patch

log = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    lr: float = 1e-4
    weight_decay: float = 5e-5
    batch_size: int = 32
    max_epochs: int = 80
    early_stop_patience: int = 10
    seed: int = 0

    def validate(self):
        for name in ("lr", "weight_decay", "batch_size", "max_epochs", "early_stop_patience"):
            if getattr(self, name) < 0 or (name != "weight_decay" and getattr(self, name) == 0):
                raise ConfigError(f"TrainConfig.{name} must be positive")
        if self.early_stop_patience > self.max_epochs:
            raise ConfigError("patience must not exceed max_epochs")


@dataclass
class TrainResult:
    best_params: dict
    best_epoch: int
    best_val_acc: float
    history: list
    adam: AdamState
    meta: dict = field(default_factory=dict)

    def save_checkpoint(self, path):
        save_checkpoint(path, self.best_params, self.meta, adam=self.adam)

    def save_history(self, path):
        lines = [json.dumps(h, sort_keys=True) for h in self.history]
        Path(path).write_text("\n".join(lines) + "\n")


class StreamData:
    """In-memory patch arrays for one stream kind, per split."""

    def __init__(self, kind: str, splits: dict, class_names: list):
        self.kind = kind
        self.splits = splits  # split -> (X, y, video_ids, frame_indices)
        self.class_names = class_names

    @classmethod
    def from_manifest(cls, manifest: Manifest, kind: str) -> "StreamData":
        splits = {}
        for split in ("train", "val", "test"):
            entries = manifest.subset(kind, split)
            if not entries:
                splits[split] = None
                continue
            patches = [load_patch(e.patch_path) for e in entries]
            X = np.stack([p.tensor for p in patches]).astype(np.float32)
            y = np.array([e.label for e in entries], dtype=np.int64)
            vids = np.array([e.video_id for e in entries])
            fidx = np.array([e.frame_index for e in entries], dtype=np.int64)
            splits[split] = (X, y, vids, fidx)
        return cls(kind, splits, manifest.class_names)

    def require(self, split: str):
        if self.splits.get(split) is None:
            raise ConfigError(f"manifest has no {self.kind}-kind patches in split {split!r}")
        return self.splits[split]

    def epoch_batches(self, rng, batch_size: int):
        X, y, _, _ = self.require("train")
        perm = rng.permutation(len(y))
        for start in range(0, len(y), batch_size):
            idx = perm[start : start + batch_size]
            yield X[idx], y[idx]

    def eval_batches(self, split: str, batch_size: int):
        X, y, _, _ = self.require(split)
        for start in range(0, len(y), batch_size):
            yield X[start : start + batch_size], y[start : start + batch_size]


class PairedData:
    """I/P patch pairs for the fused model, re-paired each epoch by seed."""

    def __init__(self, i_data: StreamData, p_data: StreamData, class_names: list):
        self.i_data = i_data
        self.p_data = p_data
        self.class_names = class_names

    @classmethod
    def from_manifest(cls, manifest: Manifest) -> "PairedData":
        return cls(
            StreamData.from_manifest(manifest, "I"),
            StreamData.from_manifest(manifest, "P"),
            manifest.class_names,
        )

    def make_pairs(self, split: str, rng):
        """Pair every I-patch with a same-video P-patch of nearest frame index."""
        Xi, yi, vi, fi = self.i_data.require(split)
        Xp, _, vp, fp = self.p_data.require(split)
        p_by_video: dict[str, list[int]] = {}
        for j, vid in enumerate(vp):
            p_by_video.setdefault(vid, []).append(j)
        i_idx, p_idx = [], []
        for i in range(len(yi)):
            cands = p_by_video.get(vi[i])
            if not cands:
                continue
            dists = np.abs(fp[cands] - fi[i])
            best = dists.min()
            ties = [cands[t] for t in np.flatnonzero(dists == best)]
            p_idx.append(ties[rng.integers(len(ties))] if len(ties) > 1 else ties[0])
            i_idx.append(i)
        if not i_idx:
            raise DataError(f"no I/P pairs available in split {split!r}")
        i_idx = np.array(i_idx)
        p_idx = np.array(p_idx)
        return Xi[i_idx], Xp[p_idx], yi[i_idx]

    def epoch_batches(self, rng, batch_size: int):
        Xi, Xp, y = self.make_pairs("train", rng)
        perm = rng.permutation(len(y))
        for start in range(0, len(y), batch_size):
            idx = perm[start : start + batch_size]
            yield (Xi[idx], Xp[idx]), y[idx]

    def eval_batches(self, split: str, batch_size: int, seed: int = 0):
        rng = np.random.default_rng(seed)
        Xi, Xp, y = self.make_pairs(split, rng)
        for start in range(0, len(y), batch_size):
            yield (Xi[start : start + batch_size], Xp[start : start + batch_size]), y[
                start : start + batch_size
            ]


def _snapshot(model) -> dict:
    return {name: arr.copy() for name, arr in model.named_arrays().items()}


def _eval_accuracy(model, batches) -> float:
    correct = total = 0
    for x, y in batches:
        probs = model.predict_proba(x)
        correct += int((probs.argmax(axis=1) == y).sum())
        total += len(y)
    return correct / total


def _val_batches(data, cfg):
    if isinstance(data, PairedData):
        return data.eval_batches("val", cfg.batch_size, seed=cfg.seed)
    return data.eval_batches("val", cfg.batch_size)


def train(model, data, cfg: TrainConfig, meta: dict | None = None) -> TrainResult:
    """Train with per-epoch seeded shuffles and early stopping on val accuracy.

    Keeps the best-validation-accuracy snapshot (ties go to the earlier
    epoch) and restores it into the model before returning. A non-finite
    loss or gradient aborts with the last good snapshot attached.
    """
    cfg.validate()
    data.require("train") if isinstance(data, StreamData) else data.i_data.require("train")
    rng = np.random.default_rng(cfg.seed)
    hyper = AdamHyper(lr=cfg.lr, weight_decay=cfg.weight_decay)
    adam = AdamState.init(model.trainable_params(), hyper)

    history = []
    best = _snapshot(model)
    best_acc = -1.0
    best_epoch = 0
    stale = 0
    base_meta = dict(meta or {})
    base_meta.setdefault("fingerprint", model.fingerprint)
    base_meta.update(asdict(cfg))

    for epoch in range(1, cfg.max_epochs + 1):
        losses = []
        try:
            for x, y in data.epoch_batches(rng, cfg.batch_size):
                loss, grads, _ = model.training_step(x, y)
                if not np.isfinite(loss):
                    raise TrainingAborted(f"non-finite loss at epoch {epoch}")
                adam_step(model.trainable_params(), grads, adam)
                losses.append(loss)
        except TrainingAborted as exc:
            exc.checkpoint = {"params": best, "meta": {**base_meta, "epoch": best_epoch}}
            exc.history = history
            raise
        val_acc = _eval_accuracy(model, _val_batches(data, cfg))
        history.append(
            {"epoch": epoch, "train_loss": float(np.mean(losses)), "val_acc": val_acc}
        )
        log.info("epoch %d: loss %.4f val_acc %.4f", epoch, history[-1]["train_loss"], val_acc)
        if val_acc > best_acc:
            best_acc = val_acc
            best_epoch = epoch
            best = _snapshot(model)
            stale = 0
        else:
            stale += 1
            if stale >= cfg.early_stop_patience:
                break

    model.load_arrays(best)
    meta_out = {**base_meta, "epoch": best_epoch, "val_acc": best_acc}
    return TrainResult(
        best_params=best,
        best_epoch=best_epoch,
        best_val_acc=best_acc,
        history=history,
        adam=adam,
        meta=meta_out,
    )


def evaluate(model, data, split: str = "test", batch_size: int = 32, seed: int = 0) -> EvalReport:
    """Full-split evaluation: accuracy, macro OvR AUC, confusion matrix."""
    if isinstance(data, PairedData):
        batches = data.eval_batches(split, batch_size, seed=seed)
    else:
        batches = data.eval_batches(split, batch_size)
    all_probs, all_y = [], []
    for x, y in batches:
        all_probs.append(model.predict_proba(x))
        all_y.append(y)
    probs = np.concatenate(all_probs)
    y_true = np.concatenate(all_y)
    if probs.shape[1] != len(data.class_names):
        raise ConfigError("model classes do not match manifest classes")
    return build_report(y_true, probs, data.class_names)


def transfer_retrain(
    model: ConvNet,
    freeze_scope: str,
    data,
    cfg: TrainConfig,
    head_seed: int | None = None,
) -> tuple[TrainResult, EvalReport]:
    """Freeze the backbone, retrain only the head, then evaluate.

    If the new dataset's class count differs from the model head, the
    head is re-initialized at the new width (seeded).
    """
    freeze_backbone(model, freeze_scope)
    new_classes = len(data.class_names)
    if new_classes != model.cfg.num_classes:
        _reinit_head(model, new_classes, seed=head_seed if head_seed is not None else cfg.seed)
    before = model.backbone_hash()
    result = train(model, data, cfg, meta={"transfer": True})
    if model.backbone_hash() != before:
        raise ConfigError("frozen backbone changed during transfer retraining")
    eval_split = "test" if _has_split(data, "test") else "val"
    report = evaluate(model, data, split=eval_split, batch_size=cfg.batch_size, seed=cfg.seed)
    return result, report


def _has_split(data, split) -> bool:
    if isinstance(data, PairedData):
        return data.i_data.splits.get(split) is not None and data.p_data.splits.get(split) is not None
    return data.splits.get(split) is not None


def _reinit_head(model: ConvNet, num_classes: int, seed: int):
    from provnet.models import _he_uniform  # same init rule as construction

    rng = np.random.default_rng(seed)
    width = model.params["head.out.weight"].shape[1]
    model.params["head.out.weight"] = _he_uniform(
        rng, (num_classes, width), width, model.dtype
    )
    model.params["head.out.bias"] = np.zeros(num_classes, dtype=model.dtype)
    model.trainable["head.out.weight"] = True
    model.trainable["head.out.bias"] = True
    model.cfg = StreamConfig(**{**asdict(model.cfg), "num_classes": num_classes})


def train_multiframe_protocol(
    ind_ckpt_path,
    pred_ckpt_path,
    manifest: Manifest,
    cfg: TrainConfig,
    head_hidden=(512,),
) -> tuple[MultiFrameNet, TrainResult]:
    """Build the fused model from the two stream checkpoints and train its head."""
    ind = load_stream_checkpoint(ind_ckpt_path)
    pred = load_stream_checkpoint(pred_ckpt_path)
    if ind.cfg.kind != "I" or pred.cfg.kind != "P":
        raise ConfigError("checkpoints must be an I-stream and a P-stream")
    model = build_multiframe(ind, pred, head_hidden=head_hidden, seed=cfg.seed)
    data = PairedData.from_manifest(manifest)
    before = model.backbone_hash()
    result = train(model, data, cfg, meta={"model": "multi"})
    if model.backbone_hash() != before:
        raise ConfigError("frozen stream backbones changed during fused training")
    return model, result


def stream_config_from_dict(d: dict) -> StreamConfig:
    kwargs = dict(d)
    for k in ("channels", "kernels", "convs_per_block", "head_hidden"):
        kwargs[k] = tuple(kwargs[k])
    return StreamConfig(**kwargs)


def save_stream_checkpoint(path, model: ConvNet, result: TrainResult | None = None,
                           extra_meta: dict | None = None):
    meta = {
        "model": model.cfg.kind,
        "arch": asdict(model.cfg),
        "fingerprint": model.fingerprint,
        "bn": {"momentum": 0.1, "eps": 1e-5},
    }
    if result is not None:
        meta.update(result.meta)
        save_checkpoint(path, result.best_params, meta, adam=result.adam)
    else:
        meta.update(extra_meta or {})
        save_checkpoint(path, model.named_arrays(), meta)


def save_multiframe_checkpoint(path, model: MultiFrameNet, result: TrainResult):
    meta = dict(result.meta)
    meta.update(
        {
            "model": "multi",
            "ind_arch": asdict(model.ind.cfg),
            "pred_arch": asdict(model.pred.cfg),
            "head_hidden": list(model.head_hidden),
            "fingerprint": model.fingerprint,
        }
    )
    save_checkpoint(path, result.best_params, meta, adam=result.adam)


def load_multiframe_checkpoint(path) -> MultiFrameNet:
    params, meta, _ = load_checkpoint(path)
    ind = ConvNet(stream_config_from_dict(meta["ind_arch"]), seed=0)
    pred = ConvNet(stream_config_from_dict(meta["pred_arch"]), seed=0)
    model = MultiFrameNet(ind, pred, head_hidden=tuple(meta["head_hidden"]), seed=0)
    model.load_arrays(params)
    return model


def load_stream_checkpoint(path) -> ConvNet:
    params, meta, _ = load_checkpoint(path)
    cfg = stream_config_from_dict(meta["arch"])
    model = ConvNet(cfg, seed=0)
    model.load_arrays(params)
    return model


def infer_video(model, patches: np.ndarray, class_names: list, batch_size: int = 32) -> dict:
    """Per-class mean probabilities and majority-vote verdict for one video."""
    probs = []
    for start in range(0, len(patches), batch_size):
        probs.append(model.predict_proba(patches[start : start + batch_size]))
    probs = np.concatenate(probs)
    votes = probs.argmax(axis=1)
    counts = np.bincount(votes, minlength=len(class_names))
    verdict = int(counts.argmax())
    return {
        "class_probabilities": {
            name: float(p) for name, p in zip(class_names, probs.mean(axis=0))
        },
        "votes": {name: int(c) for name, c in zip(class_names, counts)},
        "verdict": class_names[verdict],
        "confidence": float(counts[verdict] / len(patches)),
    }
