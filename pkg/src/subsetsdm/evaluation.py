"""AUC and report generation: subset grids, occurrence bins, oracle differences."""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from itertools import combinations
from pathlib import Path

import numpy as np
from scipy.stats import rankdata

from .data import Dataset, SplitAssignment
from .masks import SubsetMask

MAX_POWERSET_GROUPS = 16


class UndefinedAUC(ValueError):
    """Raised when a split holds only one class for a species."""


def auc(scores, labels) -> float:
    """Mann-Whitney rank statistic; ties contribute one half (midranks)."""
    scores = np.asarray(scores, dtype=float)
    labels = np.asarray(labels)
    pos = labels == 1
    n_pos = int(pos.sum())
    n_neg = labels.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise UndefinedAUC(f"need both classes, got {n_pos} positives / {n_neg} negatives")
    ranks = rankdata(scores)
    u = ranks[pos].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


def eligible_species(dataset: Dataset, train_idx, val_idx, test_idx) -> np.ndarray:
    """Species with at least one presence record in every split."""
    y = dataset.presence_matrix()
    out = np.ones(dataset.n_species, dtype=bool)
    for idx in (train_idx, val_idx, test_idx):
        out &= y[list(idx)].sum(axis=0) > 0
    return out


@dataclass
class EvalReport:
    subset: SubsetMask
    description: str
    per_species: dict  # species name -> AUC (eligible species only)
    mean_auc: float
    n_species: int

    def to_json(self) -> dict:
        return {
            "subset_bits": self.subset.bits_string(),
            "description": self.description,
            "mean_auc": self.mean_auc,
            "n_species": self.n_species,
            "per_species": self.per_species,
        }

    def save_json(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_json(), indent=2) + "\n")

    def save_csv(self, path) -> None:
        with Path(path).open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["species", "auc"])
            for name, value in self.per_species.items():
                w.writerow([name, repr(value)])
            w.writerow(["__mean__", repr(self.mean_auc)])


def mean_auc(model, dataset: Dataset, split: SplitAssignment, mask: SubsetMask,
             split_name: str = "test", description: str | None = None) -> EvalReport:
    """Per-species AUC on one split under a visibility mask.

    Species are eligible when they have a presence in every split; species
    with a single class in the evaluated split are skipped, never imputed.
    """
    tr = split.indices(dataset, "train")
    va = split.indices(dataset, "val")
    te = split.indices(dataset, "test")
    target = {"train": tr, "val": va, "test": te}[split_name]
    if not target:
        raise ValueError(f"{split_name} split is empty")
    eligible = eligible_species(dataset, tr, va, te)
    scores = model.predict_matrix(dataset, target, mask)
    y = dataset.presence_matrix()[target]
    per = {}
    for sp in np.nonzero(eligible)[0]:
        col = y[:, sp]
        if col.min() == col.max():
            continue
        per[dataset.species[sp]] = auc(scores[:, sp], col)
    mean = float(np.mean(list(per.values()))) if per else float("nan")
    return EvalReport(mask, description or mask.bits_string(), per, mean, len(per))


@dataclass
class SubsetGrid:
    entries: list  # (SubsetMask, group names, EvalReport)

    def save_csv(self, path) -> None:
        with Path(path).open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["subset_bits", "mean_auc", "n_species"])
            for mask, _, report in self.entries:
                w.writerow([mask.bits_string(), repr(report.mean_auc), report.n_species])

    def save_json(self, path) -> None:
        obj = [
            {"groups": names, "subset_bits": mask.bits_string(),
             "mean_auc": rep.mean_auc, "n_species": rep.n_species}
            for mask, names, rep in self.entries
        ]
        Path(path).write_text(json.dumps(obj, indent=2) + "\n")


def evaluate_group_powerset(model, dataset: Dataset, split: SplitAssignment,
                            groups: dict[str, list[int]] | None = None,
                            split_name: str = "test") -> SubsetGrid:
    """One report per non-empty union of predictor groups (2^G - 1 entries)."""
    schema = dataset.schema
    if groups is None:
        groups = schema.groups()
    G = len(groups)
    if G > MAX_POWERSET_GROUPS:
        raise ValueError(f"{G} groups would need 2^{G} evaluations; refusing above "
                         f"{MAX_POWERSET_GROUPS}")
    members = sorted({i for idx in groups.values() for i in idx})
    if members != list(range(schema.M)) or sum(len(v) for v in groups.values()) != schema.M:
        raise ValueError("groups must partition the schema")
    names = list(groups)
    entries = []
    for r in range(1, G + 1):
        for combo in combinations(names, r):
            indices = [i for g in combo for i in groups[g]]
            mask = SubsetMask.from_indices(schema.M, indices)
            rep = mean_auc(model, dataset, split, mask, split_name,
                           description="+".join(combo))
            entries.append((mask, list(combo), rep))
    return SubsetGrid(entries)


def occurrence_stratified_auc(model, dataset: Dataset, split: SplitAssignment,
                              bin_edges: list[float], mask: SubsetMask | None = None,
                              split_name: str = "test") -> list[dict]:
    """Mean AUC for species binned by training presence count; bins are (lo, hi].

    Empty bins are absent from the result, not reported as zero.
    """
    if list(bin_edges) != sorted(bin_edges) or len(bin_edges) < 2:
        raise ValueError("bin edges must be increasing and at least two")
    if mask is None:
        mask = SubsetMask.all_visible(dataset.schema.M)
    report = mean_auc(model, dataset, split, mask, split_name)
    tr = split.indices(dataset, "train")
    counts = dataset.presence_matrix()[tr].sum(axis=0)
    name_to_idx = {name: i for i, name in enumerate(dataset.species)}
    out = []
    for lo, hi in zip(bin_edges[:-1], bin_edges[1:]):
        values = [
            aucv for name, aucv in report.per_species.items()
            if lo < counts[name_to_idx[name]] <= hi
        ]
        if values:
            out.append({"bin": (lo, hi), "mean_auc": float(np.mean(values)),
                        "n_species": len(values)})
    return out


def mean_squared_pred_difference(model_a, model_b, dataset: Dataset,
                                 split: SplitAssignment, mask: SubsetMask,
                                 split_name: str = "test") -> float:
    """Mean over (sample, species) of squared prediction differences.

    Both arguments only need a ``predict_matrix(dataset, indices, mask)``
    method, so imputation-based predictors compare like models.
    """
    idx = split.indices(dataset, split_name)
    a = model_a.predict_matrix(dataset, idx, mask)
    b = model_b.predict_matrix(dataset, idx, mask)
    if a.shape != b.shape:
        raise ValueError(f"prediction shapes differ: {a.shape} vs {b.shape}")
    return float(np.mean((a - b) ** 2))
