"""Optimization, evaluation, checkpointing, and feature export for the
IMAC network.

Determinism contract: a single master seed drives parameter initialization,
batch shuffling, dropout, and embedding-export sampling, so two runs with the
same seed and inputs produce byte-identical metrics JSON.
"""

from __future__ import annotations

import csv
import dataclasses
import json
import time
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from .corpus import (
    DEFAULT_ABSTRACT_MAX_LEN,
    DEFAULT_TITLE_MAX_LEN,
    PAD_ID,
    ArticleRecord,
    Normalizer,
    WhitespaceTokenizer,
    fit_normalizer,
    metadata_of,
    tokenize,
)
from .encoder import EncoderConfig
from .errors import DomainError, TrainingDivergedError, ValidationError
from .fusion import ImacModel, ModelConfig
from .losses import LossBatch, LossConfig, cross_entropy, supcon, total_loss

TASKS = ("journal_impact", "article_impact")
LABEL_TO_INDEX = {"others": 0, "high_impact": 1}
INDEX_TO_LABEL = {v: k for k, v in LABEL_TO_INDEX.items()}
METRIC_KEYS = ("accuracy", "precision", "recall", "f1")

PARAMS_FILE = "params.pt"
MANIFEST_FILE = "manifest.json"
PREPROCESS_FILE = "preprocess.json"


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 1e-4
    batch_size: int = 32
    epochs: int = 30
    seed: int = 0
    task: str = "journal_impact"
    num_runs: int = 5
    model: ModelConfig = ModelConfig()
    loss: LossConfig = LossConfig()
    title_max_len: int = DEFAULT_TITLE_MAX_LEN
    abstract_max_len: int = DEFAULT_ABSTRACT_MAX_LEN

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise DomainError(f"learning_rate must be positive, got {self.learning_rate}")
        if self.batch_size < 1 or self.epochs < 1 or self.num_runs < 1:
            raise DomainError("batch_size, epochs, and num_runs must be >= 1")
        if self.task not in TASKS:
            raise DomainError(f"task must be one of {TASKS}, got {self.task!r}")


@dataclass(frozen=True)
class EvalReport:
    """Confusion counts and the derived metrics; the positive class is
    high_impact.  A metric whose denominator is zero is None."""

    tp: int
    fp: int
    tn: int
    fn: int
    accuracy: float | None
    precision: float | None
    recall: float | None
    f1: float | None

    @classmethod
    def from_counts(cls, tp: int, fp: int, tn: int, fn: int) -> "EvalReport":
        total = tp + fp + tn + fn
        accuracy = (tp + tn) / total if total else None
        precision = tp / (tp + fp) if (tp + fp) else None
        recall = tp / (tp + fn) if (tp + fn) else None
        if precision is not None and recall is not None and (precision + recall) > 0:
            f1 = 2 * precision * recall / (precision + recall)
        elif precision == 0.0 or recall == 0.0:
            f1 = 0.0
        else:
            f1 = None
        return cls(tp, fp, tn, fn, accuracy, precision, recall, f1)

    @classmethod
    def from_predictions(cls, y_true, y_pred) -> "EvalReport":
        t = np.asarray(y_true, dtype=int)
        p = np.asarray(y_pred, dtype=int)
        if t.shape != p.shape or t.size == 0:
            raise DomainError("predictions and labels must be equal-length and nonempty")
        return cls.from_counts(
            tp=int(((p == 1) & (t == 1)).sum()),
            fp=int(((p == 1) & (t == 0)).sum()),
            tn=int(((p == 0) & (t == 0)).sum()),
            fn=int(((p == 0) & (t == 1)).sum()),
        )

    def metrics(self) -> dict:
        return {k: getattr(self, k) for k in METRIC_KEYS}

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


@dataclass
class RunManifest:
    """Everything needed to audit one training run; serialized next to every
    checkpoint."""

    config: dict
    seed: int
    train_losses: list[float] = field(default_factory=list)
    val_losses: list[float] = field(default_factory=list)
    train_accuracies: list[float] = field(default_factory=list)
    val_accuracies: list[float] = field(default_factory=list)
    best_epoch: int = -1
    reports: dict = field(default_factory=dict)
    wall_time_seconds: float = 0.0

    def to_json(self) -> str:
        return json.dumps(dataclasses.asdict(self), indent=2, sort_keys=True)


@dataclass
class EncodedSplit:
    """One split as tensors: padded token id matrices, normalized metadata,
    and integer labels (high_impact = 1)."""

    ids: list[str]
    title_ids: torch.Tensor
    abstract_ids: torch.Tensor
    metadata: torch.Tensor
    labels: torch.Tensor

    def __len__(self) -> int:
        return len(self.ids)

    def subset(self, indices) -> "EncodedSplit":
        idx = torch.as_tensor(np.asarray(indices), dtype=torch.long)
        return EncodedSplit(
            ids=[self.ids[int(i)] for i in idx],
            title_ids=self.title_ids[idx],
            abstract_ids=self.abstract_ids[idx],
            metadata=self.metadata[idx],
            labels=self.labels[idx],
        )


def label_index_of(record: ArticleRecord, task: str) -> int:
    label = record.journal_label if task == "journal_impact" else record.article_label
    if label is None:
        raise ValidationError(
            f"record {record.id!r} has no {task} label; run the labeling step first"
        )
    if label not in LABEL_TO_INDEX:
        raise ValidationError(f"record {record.id!r} has unknown label {label!r}")
    return LABEL_TO_INDEX[label]


def _pad(rows: list[tuple[int, ...]]) -> torch.Tensor:
    width = max(len(r) for r in rows)
    out = torch.full((len(rows), width), PAD_ID, dtype=torch.long)
    for i, r in enumerate(rows):
        out[i, : len(r)] = torch.tensor(r, dtype=torch.long)
    return out


def encode_records(
    records: list[ArticleRecord],
    tokenizer: WhitespaceTokenizer,
    normalizer: Normalizer,
    task: str,
    title_max_len: int = DEFAULT_TITLE_MAX_LEN,
    abstract_max_len: int = DEFAULT_ABSTRACT_MAX_LEN,
) -> EncodedSplit:
    if not records:
        raise DomainError("cannot encode an empty split")
    titles, abstracts, metadata, labels = [], [], [], []
    for rec in records:
        titles.append(tokenize(rec.title, title_max_len, tokenizer).ids)
        abstracts.append(tokenize(rec.abstract, abstract_max_len, tokenizer).ids)
        metadata.append(normalizer.transform(metadata_of(rec)).values)
        labels.append(label_index_of(rec, task))
    return EncodedSplit(
        ids=[rec.id for rec in records],
        title_ids=_pad(titles),
        abstract_ids=_pad(abstracts),
        metadata=torch.tensor(metadata, dtype=torch.float32),
        labels=torch.tensor(labels, dtype=torch.long),
    )


def prepare_splits(
    split_records: dict[str, list[ArticleRecord]],
    cfg: TrainConfig,
    vocab_size: int = 4096,
) -> tuple[dict[str, EncodedSplit], WhitespaceTokenizer, Normalizer]:
    """Fit the tokenizer and metadata normalizer on the train split only,
    then encode every split with them."""
    if "train" not in split_records or not split_records["train"]:
        raise DomainError("a nonempty train split is required")
    train = split_records["train"]
    tokenizer = WhitespaceTokenizer.fit(
        [r.title for r in train] + [r.abstract for r in train], vocab_size=vocab_size
    )
    normalizer = fit_normalizer(train)
    encoded = {
        name: encode_records(
            recs, tokenizer, normalizer, cfg.task, cfg.title_max_len, cfg.abstract_max_len
        )
        for name, recs in split_records.items()
        if recs
    }
    return encoded, tokenizer, normalizer


def _forward_batch(model: ImacModel, split: EncodedSplit, idx: torch.Tensor) -> LossBatch:
    trace = model(split.title_ids[idx], split.abstract_ids[idx], split.metadata[idx])
    return LossBatch(trace.F_u, split.labels[idx], trace.p)


def _objective(batch: LossBatch, loss_cfg: LossConfig) -> torch.Tensor:
    # A trailing batch of one element has no contrastive pairs; only the
    # cross-entropy term applies there.
    if loss_cfg.alpha == 0 or len(batch) < 2:
        return cross_entropy(batch, loss_cfg)
    return total_loss(batch, loss_cfg)


def mean_loss(model: ImacModel, split: EncodedSplit, loss_cfg: LossConfig) -> float:
    model.eval()
    with torch.no_grad():
        batch = _forward_batch(model, split, torch.arange(len(split)))
        return float(_objective(batch, loss_cfg))


def evaluate(model: ImacModel, split: EncodedSplit, batch_size: int = 256) -> EvalReport:
    if len(split) == 0:
        raise DomainError("cannot evaluate an empty split")
    model.eval()
    preds = []
    with torch.no_grad():
        for start in range(0, len(split), batch_size):
            idx = torch.arange(start, min(start + batch_size, len(split)))
            trace = model(
                split.title_ids[idx], split.abstract_ids[idx], split.metadata[idx]
            )
            preds.append(trace.p.argmax(dim=-1))
    return EvalReport.from_predictions(
        split.labels.numpy(), torch.cat(preds).numpy()
    )


def train(
    splits: dict[str, EncodedSplit], cfg: TrainConfig
) -> tuple[ImacModel, RunManifest]:
    """Mini-batch Adam on L_o; retains the parameters from the epoch with the
    best validation accuracy (earliest epoch wins ties)."""
    if "train" not in splits or len(splits["train"]) == 0:
        raise DomainError("a nonempty train split is required")
    train_split = splits["train"]
    val_split = splits.get("validation") or splits.get("val") or train_split

    start_time = time.perf_counter()
    torch.manual_seed(cfg.seed)
    model = ImacModel(cfg.model)
    optimizer = torch.optim.Adam(model.parameters(), lr=cfg.learning_rate)
    shuffle_gen = torch.Generator().manual_seed(cfg.seed)

    manifest = RunManifest(config=config_to_dict(cfg), seed=cfg.seed)
    best_accuracy = -1.0
    best_state = None
    n = len(train_split)
    for epoch in range(cfg.epochs):
        model.train()
        order = torch.randperm(n, generator=shuffle_gen)
        epoch_losses = []
        for start in range(0, n, cfg.batch_size):
            idx = order[start : start + cfg.batch_size]
            batch = _forward_batch(model, train_split, idx)
            loss = _objective(batch, cfg.loss)
            if not torch.isfinite(loss):
                raise TrainingDivergedError(
                    f"non-finite loss {float(loss.detach())} at epoch {epoch} "
                    f"batch starting at {start} "
                    f"(record ids {[train_split.ids[int(i)] for i in idx[:5]]}...)"
                )
            optimizer.zero_grad()
            loss.backward()
            optimizer.step()
            epoch_losses.append(float(loss.detach()))
        manifest.train_losses.append(float(np.mean(epoch_losses)))
        manifest.val_losses.append(mean_loss(model, val_split, cfg.loss))
        manifest.train_accuracies.append(evaluate(model, train_split).accuracy or 0.0)
        val_accuracy = evaluate(model, val_split).accuracy or 0.0
        manifest.val_accuracies.append(val_accuracy)
        if val_accuracy > best_accuracy:
            best_accuracy = val_accuracy
            best_state = {k: v.detach().clone() for k, v in model.state_dict().items()}
            manifest.best_epoch = epoch

    if best_state is not None:
        model.load_state_dict(best_state)
    model.eval()
    for name, split in splits.items():
        manifest.reports[name] = evaluate(model, split).to_dict()
    manifest.wall_time_seconds = time.perf_counter() - start_time
    return model, manifest


def run_repeated(
    splits: dict[str, EncodedSplit], cfg: TrainConfig
) -> dict:
    """Train with seeds seed, seed+1, ... seed+num_runs-1 and summarize the
    held-out metrics as mean and standard deviation per metric."""
    eval_split = "test" if "test" in splits else ("validation" if "validation" in splits else "train")
    run_metrics: list[dict] = []
    for i in range(cfg.num_runs):
        run_cfg = dataclasses.replace(cfg, seed=cfg.seed + i)
        _, manifest = train(splits, run_cfg)
        run_metrics.append(
            {k: manifest.reports[eval_split][k] for k in METRIC_KEYS}
        )
    summary = {
        "num_runs": cfg.num_runs,
        "eval_split": eval_split,
        "runs": run_metrics,
        "mean": {},
        "sd": {},
    }
    for key in METRIC_KEYS:
        values = [m[key] for m in run_metrics if m[key] is not None]
        summary["mean"][key] = float(np.mean(values)) if values else None
        summary["sd"][key] = float(np.std(values)) if values else None
    return summary


def export_embeddings(
    model: ImacModel,
    split: EncodedSplit,
    n_per_class: int,
    seed: int = 0,
    path: str | Path | None = None,
) -> list[tuple[str, int, float, float]]:
    """Sample up to n_per_class records per class, compute their fused
    features F_u, and project to 2-D along the principal components of the
    sampled features.  Rows come back as (id, label, x, y)."""
    if n_per_class < 1:
        raise DomainError(f"n_per_class must be >= 1, got {n_per_class}")
    rng = np.random.default_rng(seed)
    labels = split.labels.numpy()
    chosen: list[int] = []
    for cls in (0, 1):
        members = np.flatnonzero(labels == cls)
        if members.size == 0:
            warnings.warn(f"class {cls} absent from the split; exporting without it")
            continue
        take = min(n_per_class, members.size)
        chosen.extend(sorted(rng.choice(members, size=take, replace=False).tolist()))

    sampled = split.subset(chosen)
    model.eval()
    with torch.no_grad():
        trace = model(sampled.title_ids, sampled.abstract_ids, sampled.metadata)
        features = trace.F_u.double().numpy()

    centered = features - features.mean(axis=0, keepdims=True)
    _, _, vt = np.linalg.svd(centered, full_matrices=False)
    components = vt[:2]
    # Fix each component's sign so its largest-magnitude loading is positive,
    # making the projection reproducible across SVD implementations.
    for row in components:
        pivot = np.argmax(np.abs(row))
        if row[pivot] < 0:
            row *= -1.0
    coords = centered @ components.T
    if coords.shape[1] < 2:
        coords = np.hstack([coords, np.zeros((coords.shape[0], 2 - coords.shape[1]))])

    rows = [
        (sampled.ids[i], int(sampled.labels[i]), float(coords[i, 0]), float(coords[i, 1]))
        for i in range(len(sampled))
    ]
    if path is not None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["id", "label", "x", "y"])
            writer.writerows(rows)
    return rows


def config_to_dict(cfg: TrainConfig) -> dict:
    return dataclasses.asdict(cfg)


def train_config_from_dict(data: dict) -> TrainConfig:
    data = dict(data)
    model_data = dict(data.pop("model", {}))
    encoder_data = model_data.pop("encoder", {})
    model = ModelConfig(encoder=EncoderConfig(**encoder_data), **model_data)
    loss = LossConfig(**data.pop("loss", {}))
    return TrainConfig(model=model, loss=loss, **data)


def save_checkpoint(
    directory: str | Path,
    model: ImacModel,
    manifest: RunManifest,
    tokenizer: WhitespaceTokenizer,
    normalizer: Normalizer,
) -> Path:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    torch.save(model.state_dict(), directory / PARAMS_FILE)
    (directory / MANIFEST_FILE).write_text(manifest.to_json())
    preprocess = {"tokenizer": tokenizer.to_dict(), "normalizer": normalizer.to_dict()}
    (directory / PREPROCESS_FILE).write_text(json.dumps(preprocess, sort_keys=True))
    return directory


def load_checkpoint(
    directory: str | Path,
) -> tuple[ImacModel, dict, WhitespaceTokenizer, Normalizer]:
    directory = Path(directory)
    for name in (PARAMS_FILE, MANIFEST_FILE, PREPROCESS_FILE):
        if not (directory / name).exists():
            raise ValidationError(
                f"checkpoint at {directory} is missing {name}; "
                "produce one with the train command"
            )
    manifest = json.loads((directory / MANIFEST_FILE).read_text())
    cfg = train_config_from_dict(manifest["config"])
    model = ImacModel(cfg.model)
    model.load_state_dict(torch.load(directory / PARAMS_FILE, weights_only=True))
    model.eval()
    preprocess = json.loads((directory / PREPROCESS_FILE).read_text())
    tokenizer = WhitespaceTokenizer.from_dict(preprocess["tokenizer"])
    normalizer = Normalizer.from_dict(preprocess["normalizer"])
    return model, manifest, tokenizer, normalizer
