"""Masked training loop: random masking schedule, weighted BCE, early stopping."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import numerics as nm
from .data import Dataset, PredictorSchema, Sample, SplitAssignment, fit_standardizer, is_missing
from .masks import SubsetMask
from .model import (
    EncodedBatch,
    Model,
    ModelConfig,
    encode_samples,
    effective_visibility,
    forward_batch,
    init_params,
)

W_CAP = 100.0
SCORE_EPS = 1e-7


class TrainingDiverged(RuntimeError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 1e-3
    warmup_steps: int = 1000
    weight_decay: float = 0.01
    batch_size: int = 256
    max_epochs: int = 100
    patience: int = 10
    seed: int = 0
    per_batch_p: bool = False  # one masking probability per iteration instead of per sample

    def __post_init__(self):
        if min(self.lr, self.batch_size, self.max_epochs, self.patience) <= 0:
            raise ValueError("lr, batch_size, max_epochs, patience must be positive")

    def to_json(self) -> dict:
        return {k: getattr(self, k) for k in (
            "lr", "warmup_steps", "weight_decay", "batch_size", "max_epochs",
            "patience", "seed", "per_batch_p")}

    @classmethod
    def from_json(cls, obj: dict) -> "TrainConfig":
        return cls(**obj)


def desk_train_config(seed: int = 0, **overrides) -> TrainConfig:
    """Defaults sized so a full run takes seconds on a CPU."""
    kw = dict(lr=1e-3, warmup_steps=100, weight_decay=0.01, batch_size=64,
              max_epochs=50, patience=10, seed=seed)
    kw.update(overrides)
    return TrainConfig(**kw)


@dataclass
class TrainHistory:
    train_loss: list[float] = field(default_factory=list)
    val_auc: list[float] = field(default_factory=list)

    @property
    def best_epoch(self) -> int:
        return int(np.argmax(self.val_auc))

    def to_csv(self, path) -> None:
        with Path(path).open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["epoch", "train_loss", "val_auc"])
            for e, (tl, va) in enumerate(zip(self.train_loss, self.val_auc)):
                w.writerow([e, repr(tl), repr(va)])


def draw_mask(rng: np.random.Generator, p: float, sample: Sample,
              schema: PredictorSchema) -> SubsetMask:
    """Missing predictors are always hidden; available ones hide with prob p."""
    if not 0.0 <= p <= 1.0:
        raise ValueError(f"masking probability {p} outside [0, 1]")
    bits = []
    for spec in schema.predictors:
        if is_missing(sample.values[spec.name]):
            bits.append(False)
        else:
            bits.append(bool(rng.random() >= p))
    return SubsetMask(tuple(bits))


def _draw_visibility(rng: np.random.Generator, missing: np.ndarray,
                     per_batch_p: bool) -> np.ndarray:
    """Batched mask draws: per-row p by default, one shared p with the flag."""
    B, M = missing.shape
    if per_batch_p:
        p = rng.random()
        hide = rng.random((B, M)) < p
    else:
        p = rng.random((B, 1))
        hide = rng.random((B, M)) < p
    return ~hide & ~missing


def species_weights(train: Dataset) -> np.ndarray:
    """Positive-class weights: inverse presence frequency, capped at 100."""
    n = len(train.samples)
    if n == 0:
        raise ValueError("training split is empty")
    presences = np.zeros(train.n_species)
    for s in train.samples:
        for sp in s.labels:
            presences[sp] += 1
    return np.minimum(n / np.maximum(presences, 1.0), W_CAP)


def weighted_bce(scores: nm.Tensor, labels: np.ndarray, weights: np.ndarray) -> nm.Tensor:
    """Mean over (sample, species) of -[w_s*y*log s + (1-y)*log(1-s)]."""
    y = np.asarray(labels, dtype=np.float64)
    w = np.asarray(weights, dtype=np.float64)
    s = nm.clip(scores, SCORE_EPS, 1.0 - SCORE_EPS)
    pos = nm.mul(nm.Tensor(w * y), nm.log(s))
    negt = nm.mul(nm.Tensor(1.0 - y), nm.log(nm.sub(nm.Tensor(1.0), s)))
    return nm.neg(nm.mean(nm.add(pos, negt)))


def _val_mean_auc(model: Model, batch: EncodedBatch, labels: np.ndarray,
                  eligible: np.ndarray, mask: SubsetMask) -> float:
    from .evaluation import auc  # local import: evaluation depends on model

    scores = model.predict_encoded(batch, mask)
    per = []
    for sp in np.nonzero(eligible)[0]:
        y = labels[:, sp]
        if y.min() == y.max():
            continue
        per.append(auc(scores[:, sp], y))
    return float(np.mean(per)) if per else float("nan")


def train(dataset: Dataset, split: SplitAssignment, model_config: ModelConfig,
          train_config: TrainConfig, *, masking: bool = True,
          fixed_mask: SubsetMask | None = None,
          impute: str | None = None) -> tuple[Model, TrainHistory]:
    """Train a model and return the best-validation-AUC checkpoint.

    ``masking=True`` is the masked-training mode; a ``fixed_mask`` then caps
    visibility (its hidden predictors are never shown). Baseline/oracle modes
    pass ``masking=False`` with an optional ``fixed_mask`` (restricting
    training to one subset) and ``impute`` ("mean" or "median": fill missing
    values with train statistics instead of masking them).
    """
    if model_config.n_species != dataset.n_species:
        raise ValueError("model_config.n_species != dataset species count")
    train_idx = split.indices(dataset, "train")
    val_idx = split.indices(dataset, "val")
    if not train_idx or not val_idx:
        raise ValueError("train and val splits must be non-empty")

    schema = fit_standardizer(dataset, split)
    fitted = Dataset(schema, dataset.samples, dataset.species)

    if impute is not None:
        from .baselines import fit_imputer, impute_dataset  # avoids a module cycle

        imputer = fit_imputer(fitted.subset(train_idx), impute)
        fitted = impute_dataset(imputer, fitted)

    rng = np.random.default_rng(train_config.seed)
    params = init_params(model_config, schema, rng)
    model = Model(params, model_config, schema, list(dataset.species))

    tr_samples = [fitted.samples[i] for i in train_idx]
    tr_batch = encode_samples(tr_samples, schema)
    tr_labels = fitted.subset(train_idx).presence_matrix()
    va_batch = encode_samples([fitted.samples[i] for i in val_idx], schema)
    va_labels = fitted.subset(val_idx).presence_matrix()

    weights = species_weights(fitted.subset(train_idx))

    # validation: all available predictors visible; species need presences in every split
    te_idx = split.indices(dataset, "test")
    from .evaluation import eligible_species

    eligible = eligible_species(fitted, train_idx, val_idx, te_idx)
    val_mask = fixed_mask if fixed_mask is not None else SubsetMask.all_visible(schema.M)

    if fixed_mask is not None:
        fixed_vis = effective_visibility(fixed_mask, tr_batch.missing)

    opt = nm.AdamW(params.named(), lr=train_config.lr,
                   weight_decay=train_config.weight_decay,
                   warmup_steps=train_config.warmup_steps)

    history = TrainHistory()
    best_params = params.copy()
    best_auc = -np.inf
    epochs_since_best = 0
    n_train = len(train_idx)

    for epoch in range(train_config.max_epochs):
        order = rng.permutation(n_train)
        losses = []
        for lo in range(0, n_train, train_config.batch_size):
            rows = order[lo:lo + train_config.batch_size]
            sub = EncodedBatch([v[rows] for v in tr_batch.values],
                               tr_batch.missing[rows], len(rows))
            if masking:
                visible = _draw_visibility(rng, sub.missing, train_config.per_batch_p)
                if fixed_mask is not None:
                    visible &= fixed_vis[rows]
            elif fixed_mask is not None:
                visible = fixed_vis[rows]
            else:
                visible = ~sub.missing
            scores = forward_batch(params, schema, model_config, sub, visible,
                                   train=True, rng=rng)
            loss = weighted_bce(scores, tr_labels[rows], weights)
            if not np.isfinite(loss.item()):
                raise TrainingDiverged(
                    f"loss became non-finite at epoch {epoch}, step {lo // train_config.batch_size}")
            opt.zero_grad()
            nm.backward(loss)
            opt.step()
            losses.append(loss.item())

        val_auc = _val_mean_auc(model, va_batch, va_labels, eligible, val_mask)
        history.train_loss.append(float(np.mean(losses)))
        history.val_auc.append(val_auc)

        if val_auc > best_auc:
            best_auc = val_auc
            best_params = params.copy()
            epochs_since_best = 0
        else:
            epochs_since_best += 1
            if epochs_since_best >= train_config.patience:
                break

    return Model(best_params, model_config, schema, list(dataset.species)), history
