"""End-to-end training, evaluation, and cross-validation.

Training updates the adapters, the graph network, the embedding and
positional tables, and the classifier head; the base attention and
feed-forward weights never move. The overfitting class is the positive
class everywhere. Batches are single records with an optional gradient
accumulation window. A non-finite loss aborts immediately.
"""

from __future__ import annotations

import json
import math
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import tensor as tt
from .attributes import ATTR_WIDTH, EntropyModel, encode
from .corpus import Label, PatchRecord, make_folds
from .errors import EmptyInput, InputError, NonFiniteLoss
from .gnn import GnnParams, GraphBatch, graph_features, init_gnn, make_graph_batch
from .graph import build_graph_for_record
from .model import (
    CLASS_OVERFITTING,
    HostConfig,
    HostModel,
    Vocab,
    build_prompt,
    forward,
    init_host,
    predict_label,
)
from .tensor import (
    OptimizerState,
    Rng,
    Tensor,
    load_checkpoint,
    optimizer_step,
    save_checkpoint,
)

MAX_DEFAULT_LR = 5e-5


@dataclass
class TrainConfig:
    epochs: int = 200
    batch_size: int = 1
    peak_lr: float = 5e-5
    seed: int = 0
    fusion: str = "attention"  # attention | weak | none
    attributes: str = "full"   # full | none
    drop_categories: frozenset[str] = frozenset()
    folds: int = 10
    include_ground_truth: bool = False
    warmup_steps: int = 100
    allow_high_lr: bool = False

    def validate(self):
        if self.fusion not in ("attention", "weak", "none"):
            raise InputError(f"fusion must be attention, weak, or none, got {self.fusion!r}")
        if self.attributes not in ("full", "none"):
            raise InputError(f"attributes must be full or none, got {self.attributes!r}")
        bad = set(self.drop_categories) - {"variable", "control", "context"}
        if bad:
            raise InputError(f"cannot drop node categories: {sorted(bad)}")
        if self.peak_lr <= 0:
            raise InputError("peak_lr must be positive")
        if self.peak_lr > MAX_DEFAULT_LR and not self.allow_high_lr:
            raise InputError(
                f"peak_lr {self.peak_lr} exceeds {MAX_DEFAULT_LR}; "
                "set allow_high_lr = true to override"
            )
        if self.epochs < 0 or self.batch_size < 1 or self.folds < 2:
            raise InputError("epochs must be >= 0, batch_size >= 1, folds >= 2")


# --- loss and metrics ---

_EPS = 1e-12


def loss(p: float, y: int) -> float:
    """Cross entropy against the overfitting probability, eps-clamped."""
    p = min(max(p, _EPS), 1.0 - _EPS)
    return -(y * math.log(p) + (1 - y) * math.log(1.0 - p))


def _clamp(x: Tensor, lo: float, hi: float) -> Tensor:
    inside = (x.data >= lo) & (x.data <= hi)

    def backward(g):
        if x.requires_grad:
            x._accumulate(g * inside)

    out = Tensor(np.clip(x.data, lo, hi), requires_grad=x.requires_grad)
    if out.requires_grad:
        out._parents = (x,)
        out._backward = backward
    return out


def loss_tensor(p_overfit: Tensor, y: int) -> Tensor:
    p = _clamp(p_overfit, _EPS, 1.0 - _EPS)
    if y == 1:
        return tt.scale(tt.log(p), -1.0)
    return tt.scale(tt.log(tt.add(tt.scale(p, -1.0), Tensor(1.0))), -1.0)


@dataclass
class Metrics:
    tp: int
    fp: int
    fn: int
    tn: int

    @property
    def accuracy(self) -> float | None:
        total = self.tp + self.fp + self.fn + self.tn
        return (self.tp + self.tn) / total if total else None

    @property
    def precision(self) -> float | None:
        denom = self.tp + self.fp
        return self.tp / denom if denom else None

    @property
    def recall(self) -> float | None:
        denom = self.tp + self.fn
        return self.tp / denom if denom else None

    @property
    def f1(self) -> float | None:
        p, r = self.precision, self.recall
        if p is None or r is None or p + r == 0:
            return None
        return 2 * p * r / (p + r)

    def to_dict(self) -> dict:
        return {
            "tp": self.tp, "fp": self.fp, "fn": self.fn, "tn": self.tn,
            "accuracy": self.accuracy, "precision": self.precision,
            "recall": self.recall, "f1": self.f1,
        }


def compute_metrics(predictions: list[Label], labels: list[Label]) -> Metrics:
    """Confusion counts with overfitting as the positive class."""
    if not predictions or len(predictions) != len(labels):
        raise EmptyInput("predictions and labels must be equal-length and non-empty")
    tp = fp = fn = tn = 0
    for pred, true in zip(predictions, labels):
        if pred is Label.OVERFITTING and true is Label.OVERFITTING:
            tp += 1
        elif pred is Label.OVERFITTING and true is Label.CORRECT:
            fp += 1
        elif pred is Label.CORRECT and true is Label.OVERFITTING:
            fn += 1
        else:
            tn += 1
    return Metrics(tp, fp, fn, tn)


# --- model bundle ---


@dataclass
class ModelBundle:
    host: HostModel
    gnn: GnnParams
    vocab: Vocab
    entropy: EntropyModel
    host_config: HostConfig
    train_config: TrainConfig

    def all_tensors(self) -> dict[str, Tensor]:
        out = dict(self.host.trainable())
        out.update(self.host.frozen())
        out.update(self.gnn.named())
        return out


@dataclass
class _Example:
    record: PatchRecord
    ids: list[int]
    batch: GraphBatch
    y: int


def _prepare(records, bundle: ModelBundle) -> list[_Example]:
    tc = bundle.train_config
    out = []
    for rec in records:
        apsg = build_graph_for_record(rec)
        encode(apsg, bundle.entropy, rec.buggy_lines, rec.patched_lines)
        batch = make_graph_batch(
            apsg, bundle.vocab,
            drop_categories=tc.drop_categories,
            use_attributes=tc.attributes == "full",
        )
        ids = build_prompt(rec, bundle.vocab, bundle.host_config.max_seq_len,
                           include_ground_truth=tc.include_ground_truth)
        out.append(_Example(rec, ids, batch, int(rec.label is Label.OVERFITTING)))
    return out


def _forward_example(bundle: ModelBundle, ex: _Example) -> Tensor:
    if bundle.train_config.fusion == "none":
        f_graph = None
    else:
        f_graph = graph_features(ex.batch, bundle.gnn, bundle.host.embedding)
    return forward(bundle.host, ex.ids, f_graph)


def train(records: list[PatchRecord], train_config: TrainConfig,
          host_config: HostConfig | None = None, *,
          track_accuracy: bool = False,
          stop_accuracy: float | None = None):
    """Train a fresh model on the given records.

    Returns (bundle, optimizer_state, log) where log has one entry per
    epoch: mean loss, rolling accuracy (predictions made just before each
    update), and, when tracked, exact training-set accuracy. With
    stop_accuracy set, training ends at the first epoch whose exact
    training accuracy reaches the threshold.
    """
    if not records:
        raise EmptyInput("training corpus is empty")
    train_config.validate()
    host_config = host_config or HostConfig()
    host_config.validate()

    entropy = EntropyModel.fit(records)
    vocab = Vocab.from_records(records)
    rng = Rng(train_config.seed)
    host = init_host(host_config, len(vocab), rng, train_config.fusion)
    gnn = init_gnn(rng, host_config.d_model, ATTR_WIDTH, host_config.gnn_width)
    bundle = ModelBundle(host, gnn, vocab, entropy, host_config, train_config)

    examples = _prepare(records, bundle)
    params = dict(host.trainable())
    params.update(gnn.named())
    opt = OptimizerState(peak_lr=train_config.peak_lr,
                         warmup_steps=train_config.warmup_steps)
    order_rng = Rng(train_config.seed + 0x5EED)

    log: list[dict] = []
    track = track_accuracy or stop_accuracy is not None
    for epoch in range(train_config.epochs):
        order = order_rng.permutation(len(examples))
        losses = []
        correct_before_update = 0
        window = 0
        for pos in order:
            ex = examples[int(pos)]
            probs = _forward_example(bundle, ex)
            p = tt.pick(probs, 0, CLASS_OVERFITTING)
            if predict_label(probs.data) is ex.record.label:
                correct_before_update += 1
            lt = loss_tensor(p, ex.y)
            val = lt.item()
            if not math.isfinite(val):
                raise NonFiniteLoss(
                    f"non-finite loss at epoch {epoch} on record {ex.record.id!r}"
                )
            losses.append(val)
            lt.backward()
            window += 1
            if window == train_config.batch_size:
                _step(params, opt, window)
                window = 0
        if window:
            _step(params, opt, window)

        entry = {
            "epoch": epoch,
            "mean_loss": float(np.mean(losses)),
            "rolling_accuracy": correct_before_update / len(examples),
        }
        if track:
            preds = [predict_label(_forward_example(bundle, ex).data) for ex in examples]
            exact = sum(p is ex.record.label for p, ex in zip(preds, examples)) / len(examples)
            entry["train_accuracy"] = exact
        log.append(entry)
        if stop_accuracy is not None and entry.get("train_accuracy", 0.0) >= stop_accuracy:
            break
    return bundle, opt, log


def _step(params: dict[str, Tensor], opt: OptimizerState, window: int):
    if window > 1:
        for p in params.values():
            if p.grad is not None:
                p.grad /= window
    optimizer_step(params, opt)
    for p in params.values():
        p.zero_grad()


def evaluate(bundle: ModelBundle, records: list[PatchRecord]):
    """Greedy predictions for records under a trained bundle."""
    examples = _prepare(records, bundle)
    preds = [predict_label(_forward_example(bundle, ex).data) for ex in examples]
    labels = [ex.record.label for ex in examples]
    return preds, labels


def predict(record: PatchRecord, apsg, bundle: ModelBundle) -> Label:
    """Classify one record whose graph is already assembled."""
    tc = bundle.train_config
    if apsg.A is None:
        encode(apsg, bundle.entropy, record.buggy_lines, record.patched_lines)
    batch = make_graph_batch(apsg, bundle.vocab, drop_categories=tc.drop_categories,
                             use_attributes=tc.attributes == "full")
    ids = build_prompt(record, bundle.vocab, bundle.host_config.max_seq_len,
                       include_ground_truth=tc.include_ground_truth)
    ex = _Example(record, ids, batch, int(record.label is Label.OVERFITTING))
    return predict_label(_forward_example(bundle, ex).data)


# --- cross-validation ---


def _mean_of(values: list[float | None]) -> float | None:
    defined = [v for v in values if v is not None]
    return sum(defined) / len(defined) if defined else None


def cross_validate(records: list[PatchRecord], train_config: TrainConfig,
                   host_config: HostConfig | None = None) -> dict:
    """k-fold cross-validation: per-fold metrics, their unweighted mean,
    and pooled confusion counts. Each fold fits its own vocabulary and
    entropy model on the training folds only."""
    plan = make_folds(records, train_config.folds, train_config.seed)
    by_id = {r.id: r for r in records}
    fold_reports = []
    pooled = Counter()
    means: dict[str, list] = {"accuracy": [], "precision": [], "recall": [], "f1": []}
    for i, fold in enumerate(plan.folds):
        test = [by_id[rid] for rid in sorted(fold)]
        train_recs = [r for r in records if r.id not in fold]
        bundle, _opt, _log = train(train_recs, train_config, host_config)
        preds, labels = evaluate(bundle, test)
        metrics = compute_metrics(preds, labels)
        fold_reports.append({"fold": i, "test_size": len(test), **metrics.to_dict()})
        for key in ("tp", "fp", "fn", "tn"):
            pooled[key] += getattr(metrics, key)
        for key in means:
            means[key].append(getattr(metrics, key))
    pooled_metrics = Metrics(pooled["tp"], pooled["fp"], pooled["fn"], pooled["tn"])
    return {
        "folds": fold_reports,
        "mean": {k: _mean_of(v) for k, v in means.items()},
        "pooled": pooled_metrics.to_dict(),
        "k": train_config.folds,
        "seed": train_config.seed,
    }


# --- persistence ---


def count_parameters(host_config: HostConfig) -> dict:
    """Parameter budget from configuration alone.

    The host total is computed at the configured vocab_size (the embedding
    capacity of the host this config describes); the trainable bucket in
    the reported ratio covers adapters, the graph network, and the
    classifier head. Embedding and positional tables also receive updates
    during fine-tuning but belong to the host, so they are reported
    separately and excluded from the ratio's numerator.
    """
    c = host_config
    d, ff = c.d_model, 4 * c.d_model
    embedding = c.vocab_size * d
    positional = c.max_seq_len * d
    per_layer = 4 * d * d + d * ff + ff + ff * d + d
    host_layers = c.layers * per_layer
    head = d * c.classes + c.classes
    host_total = embedding + positional + host_layers + head

    r, h, r_h = c.rank, c.heads, c.rank // c.heads
    per_adapter = (
        c.d_model                      # delta_m
        + d * r + r * c.d_model        # v_down, v_up
        + h * (c.gnn_width * r_h + 2 * c.d_model * r_h)  # w_q, w_k, w_v
        + r * r                        # w_o
    )
    adapters = 2 * c.layers * per_adapter

    d_in = d + 4 + ATTR_WIDTH
    gnn = (d_in * c.gnn_width + c.gnn_width
           + c.gnn_width * c.gnn_width
           + 2 * c.gnn_width * c.gnn_width + c.gnn_width
           + c.gnn_width * c.gnn_width)

    trainable = adapters + gnn + head
    return {
        "host_total": host_total,
        "host_embedding": embedding,
        "host_positional": positional,
        "host_layers": host_layers,
        "adapters": adapters,
        "gnn": gnn,
        "head": head,
        "trainable_adapter_gnn_head": trainable,
        "also_trained_embedding_positional": embedding + positional,
        "ratio": trainable / host_total,
    }


def save_bundle(bundle: ModelBundle, opt: OptimizerState | None, out_dir):
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    tensors = {name: t.data for name, t in bundle.all_tensors().items()}
    if opt is not None:
        for name in sorted(opt.m):
            tensors[f"opt/m/{name}"] = opt.m[name]
            tensors[f"opt/v/{name}"] = opt.v[name]
        tensors["opt/step"] = np.array([[float(opt.step_count)]])
    save_checkpoint(out / "model.ckpt", tensors)
    (out / "vocab.txt").write_text(bundle.vocab.dump(), encoding="utf-8")
    (out / "entropy.json").write_text(json.dumps({
        "counts": dict(sorted(bundle.entropy.counts.items())),
        "total": bundle.entropy.total,
        "smoothing": bundle.entropy.smoothing,
        "fit_record_ids": sorted(bundle.entropy.fit_record_ids),
    }, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    (out / "config.json").write_text(json.dumps({
        "host": _host_config_dict(bundle.host_config),
        "train": _train_config_dict(bundle.train_config),
    }, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def load_bundle(model_dir) -> ModelBundle:
    model_dir = Path(model_dir)
    cfg = json.loads((model_dir / "config.json").read_text(encoding="utf-8"))
    host_config = HostConfig(**cfg["host"])
    tcfg = dict(cfg["train"])
    tcfg["drop_categories"] = frozenset(tcfg.get("drop_categories", []))
    train_config = TrainConfig(**tcfg)
    vocab = Vocab.from_dump((model_dir / "vocab.txt").read_text(encoding="utf-8"))
    ej = json.loads((model_dir / "entropy.json").read_text(encoding="utf-8"))
    entropy = EntropyModel(counts=Counter(ej["counts"]), total=ej["total"],
                           smoothing=ej["smoothing"],
                           fit_record_ids=frozenset(ej["fit_record_ids"]))
    rng = Rng(train_config.seed)
    host = init_host(host_config, len(vocab), rng, train_config.fusion)
    gnn = init_gnn(rng, host_config.d_model, ATTR_WIDTH, host_config.gnn_width)
    bundle = ModelBundle(host, gnn, vocab, entropy, host_config, train_config)
    stored = load_checkpoint(model_dir / "model.ckpt")
    for name, t in bundle.all_tensors().items():
        if name not in stored:
            raise InputError(f"checkpoint is missing tensor {name!r}")
        if stored[name].shape != t.data.shape:
            raise InputError(
                f"checkpoint tensor {name!r} has shape {stored[name].shape}, "
                f"expected {t.data.shape}"
            )
        t.data[...] = stored[name]
    return bundle


def _host_config_dict(c: HostConfig) -> dict:
    return {"d_model": c.d_model, "layers": c.layers, "heads": c.heads,
            "max_seq_len": c.max_seq_len, "rank": c.rank, "gnn_width": c.gnn_width,
            "vocab_size": c.vocab_size, "classes": c.classes}


def _train_config_dict(c: TrainConfig) -> dict:
    return {"epochs": c.epochs, "batch_size": c.batch_size, "peak_lr": c.peak_lr,
            "seed": c.seed, "fusion": c.fusion, "attributes": c.attributes,
            "drop_categories": sorted(c.drop_categories), "folds": c.folds,
            "include_ground_truth": c.include_ground_truth,
            "warmup_steps": c.warmup_steps, "allow_high_lr": c.allow_high_lr}


# --- config file parsing ---

_TRAIN_KEYS = {
    "epochs": int, "batch_size": int, "peak_lr": float, "seed": int,
    "fusion": str, "attributes": str, "folds": int, "warmup_steps": int,
}
_TRAIN_BOOL_KEYS = {"include_ground_truth", "allow_high_lr"}
_HOST_KEYS = {
    "d_model": int, "layers": int, "heads": int, "max_seq_len": int,
    "rank": int, "gnn_width": int, "vocab_size": int,
}


def parse_config_text(text: str) -> tuple[TrainConfig, HostConfig]:
    """Parse a flat `key = value` config file."""
    tc = TrainConfig()
    hc = HostConfig()
    for lineno, raw in enumerate(text.split("\n"), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise InputError(f"config line {lineno}: expected 'key = value'")
        key, _, value = line.partition("=")
        key, value = key.strip(), value.strip()
        if key in _TRAIN_KEYS:
            setattr(tc, key, _TRAIN_KEYS[key](value))
        elif key in _TRAIN_BOOL_KEYS:
            setattr(tc, key, _parse_bool(value, key))
        elif key == "drop_categories":
            cats = [v.strip() for v in value.split(",") if v.strip()]
            tc.drop_categories = frozenset(cats)
        elif key in _HOST_KEYS:
            setattr(hc, key, _HOST_KEYS[key](value))
        else:
            raise InputError(f"config line {lineno}: unknown key {key!r}")
    tc.validate()
    hc.validate()
    return tc, hc


def _parse_bool(value: str, key: str) -> bool:
    if value.lower() in ("true", "yes", "1"):
        return True
    if value.lower() in ("false", "no", "0"):
        return False
    raise InputError(f"config key {key!r}: expected a boolean, got {value!r}")
