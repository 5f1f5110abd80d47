"""Predictor schema, datasets, spatial-block splits, and the synthetic generator.

Missing values are carried end-to-end as the MISSING sentinel; nothing in this
module (or in the model) ever fills them in. Only the imputation baselines are
allowed to replace them.
"""

from __future__ import annotations

import csv
import json
import warnings
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np


class _Missing:
    """Sentinel for an absent predictor value."""

    _instance = None

    def __new__(cls):
        if cls._instance is None:
            cls._instance = super().__new__(cls)
        return cls._instance

    def __repr__(self):
        return "MISSING"

    def __bool__(self):
        return False


MISSING = _Missing()


def is_missing(value) -> bool:
    return value is MISSING


class SchemaError(ValueError):
    """Dataset/schema mismatch or invalid schema definition."""


class ParseError(ValueError):
    """Malformed CSV content."""


@dataclass(frozen=True)
class PredictorSpec:
    """One predictor: a scalar channel or a precomputed embedding vector.

    ``dim == 1`` means scalar. ``mean``/``std`` are per-channel standardization
    statistics fitted on the training split only (None until fitted).
    """

    name: str
    group: str
    dim: int = 1
    mean: tuple[float, ...] | None = None
    std: tuple[float, ...] | None = None

    def __post_init__(self):
        if self.dim < 1:
            raise SchemaError(f"predictor {self.name!r}: dim must be >= 1, got {self.dim}")
        if (self.mean is None) != (self.std is None):
            raise SchemaError(f"predictor {self.name!r}: mean and std must be fitted together")
        if self.std is not None:
            if len(self.mean) != self.dim or len(self.std) != self.dim:
                raise SchemaError(f"predictor {self.name!r}: statistics length != dim")
            if any(s <= 0 for s in self.std):
                raise SchemaError(f"predictor {self.name!r}: std must be > 0")

    @property
    def is_vector(self) -> bool:
        return self.dim > 1

    @property
    def fitted(self) -> bool:
        return self.mean is not None

    def column_names(self) -> list[str]:
        """CSV column names: ``name`` for scalars, ``name_0 .. name_{dim-1}`` for vectors."""
        if self.dim == 1:
            return [self.name]
        return [f"{self.name}_{j}" for j in range(self.dim)]

    def to_json(self) -> dict:
        kind = "scalar" if self.dim == 1 else {"vector": self.dim}
        out = {"name": self.name, "kind": kind, "group": self.group}
        if self.fitted:
            out["mean"] = list(self.mean)
            out["std"] = list(self.std)
        return out

    @classmethod
    def from_json(cls, obj: dict) -> "PredictorSpec":
        kind = obj.get("kind", "scalar")
        dim = 1 if kind == "scalar" else int(kind["vector"])
        mean = tuple(obj["mean"]) if "mean" in obj else None
        std = tuple(obj["std"]) if "std" in obj else None
        return cls(name=obj["name"], group=obj["group"], dim=dim, mean=mean, std=std)


@dataclass(frozen=True)
class PredictorSchema:
    """Ordered predictor universe. Order is canonical and stable across save/load."""

    predictors: tuple[PredictorSpec, ...]

    def __post_init__(self):
        names = [p.name for p in self.predictors]
        if len(set(names)) != len(names):
            dupes = sorted({n for n in names if names.count(n) > 1})
            raise SchemaError(f"duplicate predictor names: {dupes}")

    @property
    def M(self) -> int:
        return len(self.predictors)

    @property
    def names(self) -> list[str]:
        return [p.name for p in self.predictors]

    def index_of(self, name: str) -> int:
        for i, p in enumerate(self.predictors):
            if p.name == name:
                return i
        raise SchemaError(f"unknown predictor {name!r}")

    def groups(self) -> dict[str, list[int]]:
        """Group name -> member predictor indices, in canonical order."""
        out: dict[str, list[int]] = {}
        for i, p in enumerate(self.predictors):
            out.setdefault(p.group, []).append(i)
        return out

    def with_statistics(self, means: list[tuple], stds: list[tuple]) -> "PredictorSchema":
        fitted = tuple(
            replace(p, mean=tuple(float(x) for x in m), std=tuple(float(x) for x in s))
            for p, m, s in zip(self.predictors, means, stds)
        )
        return PredictorSchema(fitted)

    def identity_hash(self) -> str:
        """Hash over names/kinds/groups (not statistics); guards checkpoint/dataset pairing."""
        import hashlib

        payload = json.dumps(
            [[p.name, p.dim, p.group] for p in self.predictors], separators=(",", ":")
        )
        return hashlib.sha256(payload.encode()).hexdigest()[:16]

    def to_json(self) -> dict:
        return {"predictors": [p.to_json() for p in self.predictors]}

    @classmethod
    def from_json(cls, obj: dict) -> "PredictorSchema":
        return cls(tuple(PredictorSpec.from_json(p) for p in obj["predictors"]))

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_json(), indent=2) + "\n")

    @classmethod
    def load(cls, path) -> "PredictorSchema":
        return cls.from_json(json.loads(Path(path).read_text()))


@dataclass(frozen=True)
class Sample:
    """One observation plot: coordinates, per-predictor values, present species."""

    id: str
    lon: float
    lat: float
    values: dict  # predictor name -> float | np.ndarray | MISSING
    labels: frozenset  # indices of species present; all others are absences

    def value(self, name: str):
        return self.values[name]


@dataclass
class Dataset:
    schema: PredictorSchema
    samples: list[Sample]
    species: list[str]

    @property
    def n_species(self) -> int:
        return len(self.species)

    def __len__(self) -> int:
        return len(self.samples)

    def validate(self) -> None:
        n_sp = len(self.species)
        for s in self.samples:
            for p in self.schema.predictors:
                if p.name not in s.values:
                    raise SchemaError(f"sample {s.id}: missing predictor {p.name!r}")
                v = s.values[p.name]
                if is_missing(v):
                    continue
                arr = np.atleast_1d(np.asarray(v, dtype=float))
                if arr.shape != (p.dim,):
                    raise SchemaError(
                        f"sample {s.id}: predictor {p.name!r} has shape {arr.shape}, want ({p.dim},)"
                    )
                if not np.all(np.isfinite(arr)):
                    raise SchemaError(f"sample {s.id}: non-finite value for {p.name!r}")
            if s.labels and (min(s.labels) < 0 or max(s.labels) >= n_sp):
                raise SchemaError(f"sample {s.id}: species index out of range")

    def subset(self, indices) -> "Dataset":
        return Dataset(self.schema, [self.samples[i] for i in indices], self.species)

    def presence_matrix(self) -> np.ndarray:
        """Dense (n_samples, n_species) presence/absence matrix."""
        y = np.zeros((len(self.samples), len(self.species)), dtype=np.float64)
        for i, s in enumerate(self.samples):
            for sp in s.labels:
                y[i, sp] = 1.0
        return y


SPLIT_NAMES = ("train", "val", "test")


@dataclass
class SplitAssignment:
    """Block-level split assignment; every sample of a block shares its split."""

    block_of_sample: dict  # sample id -> (bx, by)
    split_of_block: dict  # (bx, by) -> "train" | "val" | "test"
    block_size_deg: float

    def split_of_sample(self, sample_id: str) -> str:
        return self.split_of_block[self.block_of_sample[sample_id]]

    def indices(self, dataset: Dataset, split: str) -> list[int]:
        if split not in SPLIT_NAMES:
            raise ValueError(f"unknown split {split!r}")
        return [
            i for i, s in enumerate(dataset.samples) if self.split_of_sample(s.id) == split
        ]

    def save(self, path) -> None:
        lines = [f"# block_size_deg {self.block_size_deg!r}"]
        for (bx, by), split in sorted(self.split_of_block.items()):
            lines.append(f"{bx} {by} {split}")
        Path(path).write_text("\n".join(lines) + "\n")

    @classmethod
    def load(cls, path, dataset: Dataset) -> "SplitAssignment":
        text = Path(path).read_text().strip().splitlines()
        block_size = None
        split_of_block = {}
        for line in text:
            if line.startswith("#"):
                parts = line[1:].split()
                if parts and parts[0] == "block_size_deg":
                    block_size = float(parts[1])
                continue
            bx, by, split = line.split()
            split_of_block[(int(bx), int(by))] = split
        if block_size is None:
            raise ParseError("split file lacks '# block_size_deg' header")
        block_of_sample = {
            s.id: _block_id(s.lon, s.lat, block_size) for s in dataset.samples
        }
        missing = {b for b in block_of_sample.values() if b not in split_of_block}
        if missing:
            raise SchemaError(f"split file lacks assignment for blocks: {sorted(missing)[:5]}")
        return cls(block_of_sample, split_of_block, block_size)


def _block_id(lon: float, lat: float, block_size_deg: float) -> tuple[int, int]:
    return (int(np.floor(lon / block_size_deg)), int(np.floor(lat / block_size_deg)))


def load_csv(path, schema: PredictorSchema, label_column: str = "species",
             label_delimiter: str = ";") -> Dataset:
    """Read a dataset CSV. Empty cells and the literal ``NA`` are MISSING.

    Expected columns: ``id`` (optional; row number used otherwise), ``lon``,
    ``lat``, one column per scalar predictor (or ``name_j`` per vector
    channel), and a label column holding a delimiter-separated species list.
    """
    path = Path(path)
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None:
            raise ParseError(f"{path}: empty file, expected a header row")
        known = {"id", "lon", "lat", label_column}
        col_of: dict[str, tuple[str, int]] = {}
        for p in schema.predictors:
            for j, col in enumerate(p.column_names()):
                col_of[col] = (p.name, j)
        unknown = [c for c in reader.fieldnames if c not in known and c not in col_of]
        if unknown:
            raise SchemaError(f"{path}: column(s) not in schema: {unknown}")
        absent = [c for c in col_of if c not in reader.fieldnames]
        if absent:
            raise SchemaError(f"{path}: schema predictor column(s) absent: {absent}")

        species: list[str] = []
        species_index: dict[str, int] = {}
        samples: list[Sample] = []
        for rownum, row in enumerate(reader, start=2):
            values = {}
            for p in schema.predictors:
                cells = [row[c] for c in p.column_names()]
                if any(c is None or c.strip() in ("", "NA") for c in cells):
                    values[p.name] = MISSING
                    continue
                try:
                    nums = [float(c) for c in cells]
                except ValueError as exc:
                    raise ParseError(
                        f"{path}:{rownum}: non-numeric value for {p.name!r}: {exc}"
                    ) from None
                values[p.name] = nums[0] if p.dim == 1 else np.array(nums, dtype=float)
            labels = set()
            raw = (row.get(label_column) or "").strip()
            if raw:
                for sp in raw.split(label_delimiter):
                    sp = sp.strip()
                    if not sp:
                        continue
                    if sp not in species_index:
                        species_index[sp] = len(species)
                        species.append(sp)
                    labels.add(species_index[sp])
            try:
                lon, lat = float(row["lon"]), float(row["lat"])
            except (KeyError, TypeError, ValueError):
                raise ParseError(f"{path}:{rownum}: bad or absent lon/lat") from None
            sid = (row.get("id") or "").strip() or f"row{rownum}"
            samples.append(Sample(sid, lon, lat, values, frozenset(labels)))

    ds = Dataset(schema, samples, species)
    ds.validate()
    return ds


def write_csv(dataset: Dataset, path, label_column: str = "species",
              label_delimiter: str = ";") -> None:
    cols = ["id", "lon", "lat"]
    for p in dataset.schema.predictors:
        cols.extend(p.column_names())
    cols.append(label_column)
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(cols)
        for s in dataset.samples:
            row = [s.id, repr(s.lon), repr(s.lat)]
            for p in dataset.schema.predictors:
                v = s.values[p.name]
                if is_missing(v):
                    row.extend([""] * p.dim)
                elif p.dim == 1:
                    row.append(repr(float(v)))
                else:
                    row.extend(repr(float(x)) for x in np.asarray(v))
            row.append(label_delimiter.join(dataset.species[i] for i in sorted(s.labels)))
            writer.writerow(row)


def fit_standardizer(dataset: Dataset, split: SplitAssignment) -> PredictorSchema:
    """Per-channel mean/std over TRAIN non-missing values (population std).

    Raises on constant columns (std = 0) and on predictors with fewer than two
    non-missing training values.
    """
    train_idx = split.indices(dataset, "train")
    if not train_idx:
        raise SchemaError("training split is empty")
    means, stds = [], []
    for p in dataset.schema.predictors:
        vals = []
        for i in train_idx:
            v = dataset.samples[i].values[p.name]
            if not is_missing(v):
                vals.append(np.atleast_1d(np.asarray(v, dtype=float)))
        if len(vals) < 2:
            raise SchemaError(f"predictor {p.name!r}: fewer than 2 non-missing training values")
        mat = np.stack(vals)  # (n, dim)
        mean = mat.mean(axis=0)
        std = mat.std(axis=0)  # population std
        if np.any(std == 0):
            raise SchemaError(f"constant predictor {p.name!r} (std = 0) cannot be standardized")
        means.append(tuple(mean))
        stds.append(tuple(std))
    return dataset.schema.with_statistics(means, stds)


def standardize_value(spec: PredictorSpec, value):
    if not spec.fitted:
        raise SchemaError(f"predictor {spec.name!r}: statistics not fitted")
    arr = np.atleast_1d(np.asarray(value, dtype=float))
    out = (arr - np.array(spec.mean)) / np.array(spec.std)
    return float(out[0]) if spec.dim == 1 else out


def destandardize_value(spec: PredictorSpec, value):
    arr = np.atleast_1d(np.asarray(value, dtype=float))
    out = arr * np.array(spec.std) + np.array(spec.mean)
    return float(out[0]) if spec.dim == 1 else out


def assign_spatial_blocks(dataset: Dataset, block_size_deg: float,
                          ratios: tuple[float, float, float],
                          seed: int) -> SplitAssignment:
    """Group samples into lon/lat blocks and split whole blocks train/val/test.

    Blocks are shuffled with ``seed`` and assigned greedily to whichever split
    is most under-filled by sample count, which tracks the requested ratios
    even when block occupancy is heavy-tailed.
    """
    if block_size_deg <= 0:
        raise ValueError("block_size_deg must be > 0")
    if abs(sum(ratios) - 1.0) > 1e-9:
        raise ValueError(f"ratios must sum to 1, got {ratios}")

    block_of_sample = {}
    counts: dict[tuple[int, int], int] = {}
    for s in dataset.samples:
        b = _block_id(s.lon, s.lat, block_size_deg)
        block_of_sample[s.id] = b
        counts[b] = counts.get(b, 0) + 1

    blocks = sorted(counts)  # canonical order, independent of sample order
    rng = np.random.default_rng(seed)
    order = rng.permutation(len(blocks))

    total = len(dataset.samples)
    assigned = {name: 0 for name in SPLIT_NAMES}
    split_of_block = {}
    for k in order:
        b = blocks[int(k)]
        # most under-filled split in absolute sample terms
        deficits = [ratios[j] * total - assigned[SPLIT_NAMES[j]] for j in range(3)]
        target = SPLIT_NAMES[int(np.argmax(deficits))]
        split_of_block[b] = target
        assigned[target] += counts[b]

    if len(blocks) == 1:
        warnings.warn("single spatial block: every sample assigned to train")
        split_of_block[blocks[0]] = "train"

    return SplitAssignment(block_of_sample, split_of_block, block_size_deg)


@dataclass
class SpeciesResponse:
    """Ground-truth logistic response of one synthetic species."""

    active: list[int]
    coef: list[float]
    interactions: list[tuple[int, int, float]]
    intercept: float


@dataclass
class SyntheticTruth:
    """Generative ground truth attached to a synthetic dataset."""

    responses: list[SpeciesResponse]
    correlation: np.ndarray = field(repr=False)

    def to_json(self) -> dict:
        return {
            "responses": [
                {
                    "active": r.active,
                    "coef": r.coef,
                    "interactions": [[i, j, w] for i, j, w in r.interactions],
                    "intercept": r.intercept,
                }
                for r in self.responses
            ],
            "correlation": self.correlation.tolist(),
        }

    @classmethod
    def from_json(cls, obj: dict) -> "SyntheticTruth":
        responses = [
            SpeciesResponse(
                active=list(r["active"]),
                coef=list(r["coef"]),
                interactions=[(int(i), int(j), float(w)) for i, j, w in r["interactions"]],
                intercept=float(r["intercept"]),
            )
            for r in obj["responses"]
        ]
        return cls(responses, np.array(obj["correlation"], dtype=float))

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_json()) + "\n")

    @classmethod
    def load(cls, path) -> "SyntheticTruth":
        return cls.from_json(json.loads(Path(path).read_text()))

    def logits(self, x: np.ndarray) -> np.ndarray:
        """True logits for a value matrix (n, M) -> (n, n_species)."""
        n = x.shape[0]
        out = np.empty((n, len(self.responses)))
        for s, r in enumerate(self.responses):
            z = np.full(n, r.intercept)
            for idx, c in zip(r.active, r.coef):
                z += c * x[:, idx]
            for i, j, w in r.interactions:
                z += w * x[:, i] * x[:, j]
            out[:, s] = z
        return out


_SYNTH_GROUPS = ("climate", "soil", "metadata")


def synthetic_schema(n_predictors: int) -> PredictorSchema:
    """Scalar predictors x0..x{P-1} split into three contiguous groups."""
    cuts = [int(round(n_predictors * f)) for f in (0.375, 0.75)]
    specs = []
    for i in range(n_predictors):
        g = _SYNTH_GROUPS[0] if i < cuts[0] else _SYNTH_GROUPS[1] if i < cuts[1] else _SYNTH_GROUPS[2]
        specs.append(PredictorSpec(name=f"x{i}", group=g))
    return PredictorSchema(tuple(specs))


def generate_synthetic(n_samples: int, n_predictors: int, n_species: int,
                       correlation_strength: float, missing_rate: float,
                       seed: int) -> tuple[Dataset, SyntheticTruth]:
    """Desk-scale dataset with known logistic ground truth.

    Predictor values come from an equicorrelated Gaussian copula; each species
    responds through 2-4 active predictors with pairwise interaction terms, so
    the responses are measurably non-linear. Coordinates lie on a jittered grid
    spanning several 1-degree blocks; only metadata-group cells go missing.
    """
    if min(n_samples, n_predictors, n_species) < 1:
        raise ValueError("counts must be positive")
    if not (0 <= correlation_strength < 1):
        raise ValueError("correlation_strength must be in [0, 1)")
    if not (0 <= missing_rate < 1):
        raise ValueError("missing_rate must be in [0, 1)")

    rng = np.random.default_rng(seed)
    schema = synthetic_schema(n_predictors)

    rho = correlation_strength
    corr = np.full((n_predictors, n_predictors), rho)
    np.fill_diagonal(corr, 1.0)
    chol = np.linalg.cholesky(corr)
    x = rng.standard_normal((n_samples, n_predictors)) @ chol.T

    responses = []
    for _ in range(n_species):
        size = int(rng.integers(2, 5))
        active = sorted(
            int(a) for a in rng.choice(n_predictors, size=min(size, n_predictors),
                                       replace=False))
        coef = (rng.uniform(1.5, 3.0, size=len(active)) * rng.choice([-1.0, 1.0], size=len(active)))
        n_inter = int(rng.integers(1, len(active))) if len(active) > 1 else 0
        pairs = []
        if n_inter:
            combos = [(a, b) for ai, a in enumerate(active) for b in active[ai + 1:]]
            chosen = rng.choice(len(combos), size=min(n_inter, len(combos)), replace=False)
            for c in chosen:
                i, j = combos[int(c)]
                pairs.append((i, j, float(rng.uniform(0.5, 1.2) * rng.choice([-1.0, 1.0]))))
        intercept = float(rng.normal(-0.5, 0.75))
        responses.append(SpeciesResponse(active, [float(c) for c in coef],
                                         pairs, intercept))
    truth = SyntheticTruth(responses, corr)

    probs = 1.0 / (1.0 + np.exp(-truth.logits(x)))
    presence = rng.random((n_samples, n_species)) < probs

    # jittered grid over a 10x10 degree region so 1-degree blocks are meaningful
    side = int(np.ceil(np.sqrt(n_samples)))
    cells = rng.permutation(side * side)[:n_samples]
    lon = (cells % side + rng.uniform(0.05, 0.95, n_samples)) * (10.0 / side)
    lat = 40.0 + (cells // side + rng.uniform(0.05, 0.95, n_samples)) * (10.0 / side)

    meta_idx = [i for i, p in enumerate(schema.predictors) if p.group == "metadata"]
    miss = np.zeros((n_samples, n_predictors), dtype=bool)
    if missing_rate > 0 and meta_idx:
        miss[:, meta_idx] = rng.random((n_samples, len(meta_idx))) < missing_rate

    samples = []
    for i in range(n_samples):
        values = {}
        for j, p in enumerate(schema.predictors):
            values[p.name] = MISSING if miss[i, j] else float(x[i, j])
        labels = frozenset(int(s) for s in np.nonzero(presence[i])[0])
        samples.append(Sample(f"s{i:05d}", float(lon[i]), float(lat[i]), values, labels))

    return Dataset(schema, samples, [f"sp{k:03d}" for k in range(n_species)]), truth
