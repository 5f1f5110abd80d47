"""Imputation baselines and the per-subset oracle protocol.

These are the comparison points for the masked model: fill hidden predictors
with point statistics, marginal draws, or conditional neighbors, or train a
dedicated model per subset (the oracle upper bound).
"""

from __future__ import annotations

import csv
import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .data import Dataset, Sample, is_missing
from .masks import SubsetMask
from .model import Model, ModelConfig
from .training import TrainConfig, train

IMPUTER_KINDS = ("mean", "median", "marginal", "conditional")
DEFAULT_M_MARGINAL = 100
DEFAULT_M_CONDITIONAL = 5


@dataclass
class ImputerModel:
    """Per-predictor training statistics; marginal/conditional kinds also keep
    the completed training matrix (scalar channels, train split only)."""

    kind: str
    stat: list  # per predictor: (dim,) statistic used for point fills
    train_matrix: np.ndarray | None  # (n_train, M) completed scalar values
    schema: object
    m: int

    def point_value(self, j: int):
        v = self.stat[j]
        return float(v[0]) if len(v) == 1 else np.array(v)


def fit_imputer(train_split: Dataset, kind: str,
                m: int | None = None) -> ImputerModel:
    """Fit on the training split only; mean and median over non-missing values."""
    if kind not in IMPUTER_KINDS:
        raise ValueError(f"unknown imputer kind {kind!r}")
    if not train_split.samples:
        raise ValueError("training split is empty")
    schema = train_split.schema
    stat = []
    reducer = np.median if kind == "median" else np.mean
    for spec in schema.predictors:
        vals = [
            np.atleast_1d(np.asarray(s.values[spec.name], dtype=float))
            for s in train_split.samples
            if not is_missing(s.values[spec.name])
        ]
        if not vals:
            raise ValueError(f"predictor {spec.name!r} has zero non-missing training values")
        stat.append(reducer(np.stack(vals), axis=0))

    train_matrix = None
    if kind in ("marginal", "conditional"):
        if any(p.dim != 1 for p in schema.predictors):
            raise ValueError(f"{kind} imputation supports scalar predictors only")
        train_matrix = np.empty((len(train_split.samples), schema.M))
        for i, s in enumerate(train_split.samples):
            for j, spec in enumerate(schema.predictors):
                v = s.values[spec.name]
                train_matrix[i, j] = float(stat[j][0]) if is_missing(v) else float(v)
    if m is None:
        m = DEFAULT_M_MARGINAL if kind == "marginal" else DEFAULT_M_CONDITIONAL
    return ImputerModel(kind, stat, train_matrix, schema, m)


def impute_point(imputer: ImputerModel, sample: Sample, mask: SubsetMask) -> Sample:
    """Fill hidden/missing predictors with the stored statistic; idempotent."""
    if imputer.kind not in ("mean", "median"):
        raise ValueError(f"impute_point needs a mean/median imputer, got {imputer.kind!r}")
    values = dict(sample.values)
    for j, spec in enumerate(imputer.schema.predictors):
        if not mask.bits[j] or is_missing(values[spec.name]):
            values[spec.name] = imputer.point_value(j)
    return Sample(sample.id, sample.lon, sample.lat, values, sample.labels)


def impute_dataset(imputer: ImputerModel, dataset: Dataset) -> Dataset:
    """Fill only MISSING cells (all predictors stay visible)."""
    full = SubsetMask.all_visible(dataset.schema.M)
    samples = [impute_point(imputer, s, full) for s in dataset.samples]
    return Dataset(dataset.schema, samples, dataset.species)


def _completed_scores(base_model: Model, filled_rows: np.ndarray) -> np.ndarray:
    """Scores for fully completed scalar rows (vectorized standardization)."""
    from .model import EncodedBatch

    schema = base_model.schema
    mu = np.array([spec.mean[0] for spec in schema.predictors])
    sd = np.array([spec.std[0] for spec in schema.predictors])
    std = (filled_rows - mu) / sd
    n = filled_rows.shape[0]
    batch = EncodedBatch([std[:, j] for j in range(schema.M)],
                         np.zeros((n, schema.M), dtype=bool), n)
    return base_model.predict_encoded(batch, SubsetMask.all_visible(schema.M))


def _raw_matrix(imputer: ImputerModel, samples: list[Sample]) -> tuple[np.ndarray, np.ndarray]:
    """(values, hidden-missing flags) with missing slots pre-filled by the statistic."""
    schema = imputer.schema
    vals = np.empty((len(samples), schema.M))
    miss = np.zeros((len(samples), schema.M), dtype=bool)
    for i, s in enumerate(samples):
        for j, spec in enumerate(schema.predictors):
            v = s.values[spec.name]
            if is_missing(v):
                miss[i, j] = True
                vals[i, j] = float(imputer.stat[j][0])
            else:
                vals[i, j] = float(v)
    return vals, miss


def marginal_completions(imputer: ImputerModel, samples: list[Sample],
                         mask: SubsetMask, m: int,
                         rng: np.random.Generator):
    """Yield m completed value matrices, hidden cells copied from random
    training rows (with replacement)."""
    if imputer.train_matrix is None:
        raise ValueError("imputer was not fitted with a retained training matrix")
    if m < 1:
        raise ValueError("m must be >= 1")
    vals, miss = _raw_matrix(imputer, samples)
    hidden = ~mask.as_array()[None, :] | miss
    n_train = imputer.train_matrix.shape[0]
    for _ in range(m):
        donors = imputer.train_matrix[rng.integers(0, n_train, size=len(samples))]
        yield np.where(hidden, donors, vals)


def impute_marginal_predict(imputer: ImputerModel, base_model: Model,
                            samples: list[Sample], mask: SubsetMask,
                            m: int | None = None,
                            rng: np.random.Generator | None = None) -> np.ndarray:
    """Average predictions over m completions drawn from random training rows
    (with replacement)."""
    m = m or imputer.m
    rng = rng or np.random.default_rng(0)
    acc = np.zeros((len(samples), base_model.config.n_species))
    for filled in marginal_completions(imputer, samples, mask, m, rng):
        acc += _completed_scores(base_model, filled)
    return acc / m


def conditional_completions(imputer: ImputerModel, samples: list[Sample],
                            mask: SubsetMask, m: int):
    """Yield m completed value matrices, hidden cells copied from the m nearest
    training neighbors.

    Distance is Euclidean over VISIBLE standardized predictors; ties break by
    training-row index (rows with nothing visible have all-zero distances, so
    the stable sort degenerates to training-row order).
    """
    if imputer.train_matrix is None:
        raise ValueError("imputer was not fitted with a retained training matrix")
    schema = imputer.schema
    vals, miss = _raw_matrix(imputer, samples)
    hidden = ~mask.as_array()[None, :] | miss
    n_train = imputer.train_matrix.shape[0]
    m = min(m, n_train)

    mu = np.array([spec.mean[0] for spec in schema.predictors])
    sd = np.array([spec.std[0] for spec in schema.predictors])
    train_std = (imputer.train_matrix - mu) / sd
    vals_std = (vals - mu) / sd

    orders = np.empty((len(samples), m), dtype=int)
    for i in range(len(samples)):
        vis = ~hidden[i]
        d = np.linalg.norm(train_std[:, vis] - vals_std[i, vis], axis=1)
        orders[i] = np.argsort(d, kind="stable")[:m]

    for rep in range(m):
        donor_rows = imputer.train_matrix[orders[:, rep]]
        yield np.where(hidden, donor_rows, vals)


def impute_conditional_predict(imputer: ImputerModel, base_model: Model,
                               samples: list[Sample], mask: SubsetMask,
                               m: int | None = None) -> np.ndarray:
    """Average predictions over the m nearest training neighbors."""
    m = m or imputer.m
    if mask.is_empty():
        warnings.warn("conditional imputation with no visible predictor; "
                      "falling back to marginal sampling")
        return impute_marginal_predict(imputer, base_model, samples, mask, m=m,
                                       rng=np.random.default_rng(0))
    m = min(m, imputer.train_matrix.shape[0])
    acc = np.zeros((len(samples), base_model.config.n_species))
    for filled in conditional_completions(imputer, samples, mask, m):
        acc += _completed_scores(base_model, filled)
    return acc / m


@dataclass
class OracleModel:
    """A model trained and evaluated exclusively on one predictor subset."""

    mask: SubsetMask
    model: Model

    def predict_matrix(self, dataset, indices, mask: SubsetMask) -> np.ndarray:
        if mask.bits != self.mask.bits:
            raise ValueError("oracle evaluated with a mask it was not trained for")
        return self.model.predict_matrix(self._eval_dataset(dataset), indices, mask)

    def _eval_dataset(self, dataset: Dataset) -> Dataset:
        # oracle inference mean-imputes missing values inside its subset, as in training
        if not hasattr(self, "_cache"):
            self._cache = {}
        key = id(dataset)
        if key not in self._cache:
            stat = [np.array(spec.mean) for spec in self.model.schema.predictors]
            imp = ImputerModel("mean", stat, None, self.model.schema, 1)
            self._cache[key] = impute_dataset(imp, Dataset(
                self.model.schema, dataset.samples, dataset.species))
        return self._cache[key]


def train_oracle(dataset: Dataset, split, mask: SubsetMask,
                 model_config: ModelConfig, train_config: TrainConfig) -> OracleModel:
    """Standard (non-masked) training restricted to one visible subset;
    missing-within-subset values are mean-imputed."""
    if mask.is_empty():
        raise ValueError("oracle subset must be non-empty")
    model, _ = train(dataset, split, model_config, train_config,
                     masking=False, fixed_mask=mask, impute="mean")
    return OracleModel(mask, model)


@dataclass
class ImputingPredictor:
    """Adapter giving the imputation strategies the shared prediction surface."""

    method: str  # mean | median | marginal | conditional
    imputer: ImputerModel
    base_model: Model
    seed: int = 0

    def predict_matrix(self, dataset: Dataset, indices, mask: SubsetMask) -> np.ndarray:
        samples = [dataset.samples[i] for i in indices]
        if self.method in ("mean", "median"):
            full = SubsetMask.all_visible(dataset.schema.M)
            completed = [impute_point(self.imputer, s, mask) for s in samples]
            return self.base_model.predict_samples(completed, full)
        if self.method == "marginal":
            rng = np.random.default_rng(self.seed)
            return impute_marginal_predict(self.imputer, self.base_model, samples,
                                           mask, rng=rng)
        if self.method == "conditional":
            return impute_conditional_predict(self.imputer, self.base_model, samples, mask)
        raise ValueError(f"unknown method {self.method!r}")


@dataclass
class BaselineComparison:
    rows: list  # dicts: method, subset_bits, mean_auc, msd_vs_oracle

    def save_csv(self, path) -> None:
        with Path(path).open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["method", "subset_bits", "mean_auc", "msd_vs_oracle"])
            for r in self.rows:
                w.writerow([r["method"], r["subset_bits"],
                            repr(r["mean_auc"]), repr(r["msd_vs_oracle"])])


def compare_baselines(dataset: Dataset, split, subsets: list[SubsetMask],
                      masked_model: Model, model_config: ModelConfig,
                      train_config: TrainConfig, seed: int = 0,
                      methods: tuple = ("mean", "median", "marginal", "conditional"),
                      split_name: str = "test") -> BaselineComparison:
    """Mean test AUC and squared difference to the per-subset oracle for the
    masked model and every imputation method, on each probe subset."""
    from .evaluation import mean_auc, mean_squared_pred_difference

    train_split = Dataset(masked_model.schema,
                          [dataset.samples[i] for i in split.indices(dataset, "train")],
                          dataset.species)

    need_mean = bool({"mean", "marginal", "conditional"} & set(methods))
    base_models: dict[str, Model] = {}
    for kind in ("mean", "median"):
        if (kind == "mean" and need_mean) or (kind == "median" and "median" in methods):
            cfg = TrainConfig(**{**train_config.to_json(), "seed": train_config.seed + 1})
            base_models[kind], _ = train(dataset, split, model_config, cfg,
                                         masking=False, impute=kind)

    imputers = {kind: fit_imputer(train_split, kind) for kind in set(methods)}

    rows = []
    for s_i, mask in enumerate(subsets):
        oracle = train_oracle(dataset, split, mask, model_config,
                              TrainConfig(**{**train_config.to_json(),
                                             "seed": train_config.seed + 100 + s_i}))
        bits = mask.bits_string()

        rep = mean_auc(oracle, dataset, split, mask, split_name)
        rows.append({"method": "oracle", "subset_bits": bits,
                     "mean_auc": rep.mean_auc, "msd_vs_oracle": 0.0})

        rep = mean_auc(masked_model, dataset, split, mask, split_name)
        msd = mean_squared_pred_difference(masked_model, oracle, dataset, split,
                                           mask, split_name)
        rows.append({"method": "masked", "subset_bits": bits,
                     "mean_auc": rep.mean_auc, "msd_vs_oracle": msd})

        for method in methods:
            base = base_models["median" if method == "median" else "mean"]
            pred = ImputingPredictor(method, imputers[method], base, seed=seed)
            rep = mean_auc(pred, dataset, split, mask, split_name)
            msd = mean_squared_pred_difference(pred, oracle, dataset, split,
                                               mask, split_name)
            rows.append({"method": method, "subset_bits": bits,
                         "mean_auc": rep.mean_auc, "msd_vs_oracle": msd})
    return BaselineComparison(rows)
