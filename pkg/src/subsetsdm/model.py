"""The masked-input tabular transformer: tokenizers, mask token, encoder, head.

Identity of each predictor is carried solely by its dedicated tokenizer; there
are no positional encodings, so the encoder is a set function of the tokens.
Any hidden or missing predictor contributes the single shared mask token, which
makes the forward pass a function of visible values only.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field

import numpy as np

from . import numerics as nm
from .data import Dataset, PredictorSchema, Sample, is_missing, standardize_value
from .masks import SubsetMask

TWO_PI = 2.0 * np.pi

CHECKPOINT_MAGIC = b"MSDMCKPT"
CHECKPOINT_VERSION = 1


class CheckpointError(RuntimeError):
    pass


class NotACheckpointError(CheckpointError):
    pass


class CheckpointVersionError(CheckpointError):
    pass


class CheckpointCorruptError(CheckpointError):
    pass


class SchemaMismatchError(CheckpointError):
    pass


@dataclass(frozen=True)
class ModelConfig:
    """Architecture hyperparameters. Defaults follow the full-scale setup;
    ``desk_config`` gives the small configuration used by tests."""

    n_species: int
    d: int = 192
    n_blocks: int = 7
    n_heads: int = 8
    ff_mult: int = 4
    dropout: float = 0.1
    n_frequencies: int = 48

    def __post_init__(self):
        if self.d % self.n_heads != 0:
            raise ValueError(f"token size {self.d} not divisible by {self.n_heads} heads")
        if self.n_species < 1 or self.n_blocks < 1 or self.n_frequencies < 1:
            raise ValueError("config counts must be positive")

    def to_json(self) -> dict:
        return {
            "n_species": self.n_species, "d": self.d, "n_blocks": self.n_blocks,
            "n_heads": self.n_heads, "ff_mult": self.ff_mult,
            "dropout": self.dropout, "n_frequencies": self.n_frequencies,
        }

    @classmethod
    def from_json(cls, obj: dict) -> "ModelConfig":
        return cls(**obj)


def desk_config(n_species: int, **overrides) -> ModelConfig:
    """Small architecture that trains in seconds on a CPU."""
    kw = dict(n_species=n_species, d=32, n_blocks=2, n_heads=4, ff_mult=2,
              dropout=0.1, n_frequencies=8)
    kw.update(overrides)
    return ModelConfig(**kw)


class ModelParams:
    """All trainable tensors, addressable by stable names for checkpointing."""

    def __init__(self, tensors: dict[str, nm.Tensor]):
        self.tensors = tensors

    def __getitem__(self, name: str) -> nm.Tensor:
        return self.tensors[name]

    def named(self) -> dict[str, nm.Tensor]:
        return self.tensors

    def copy(self) -> "ModelParams":
        out = {}
        for k, t in self.tensors.items():
            out[k] = nm.parameter(t.data.copy())
        return ModelParams(out)

    def all_finite(self) -> bool:
        return all(np.all(np.isfinite(t.data)) for t in self.tensors.values())


def _glorot(rng: np.random.Generator, fan_in: int, fan_out: int) -> np.ndarray:
    scale = np.sqrt(2.0 / (fan_in + fan_out))
    return rng.normal(0.0, scale, size=(fan_in, fan_out))


def init_params(config: ModelConfig, schema: PredictorSchema,
                rng: np.random.Generator) -> ModelParams:
    d, k = config.d, config.n_frequencies
    t: dict[str, nm.Tensor] = {}
    for i, spec in enumerate(schema.predictors):
        if spec.dim == 1:
            # small frequency scale keeps sin/cos near-linear at init
            t[f"tok.{i}.freq"] = nm.parameter(rng.normal(0.0, 0.12, size=k))
            t[f"tok.{i}.W"] = nm.parameter(_glorot(rng, 2 * k, d))
            t[f"tok.{i}.b"] = nm.parameter(np.zeros(d))
        else:
            t[f"tok.{i}.W"] = nm.parameter(_glorot(rng, spec.dim, d))
            t[f"tok.{i}.b"] = nm.parameter(np.zeros(d))
    t["mask_token"] = nm.parameter(rng.normal(0.0, 0.02, size=d))
    for b in range(config.n_blocks):
        p = f"block.{b}."
        t[p + "ln1.g"] = nm.parameter(np.ones(d))
        t[p + "ln1.b"] = nm.parameter(np.zeros(d))
        for w in ("q", "k", "v", "o"):
            t[p + f"attn.W{w}"] = nm.parameter(_glorot(rng, d, d))
            t[p + f"attn.b{w}"] = nm.parameter(np.zeros(d))
        t[p + "ln2.g"] = nm.parameter(np.ones(d))
        t[p + "ln2.b"] = nm.parameter(np.zeros(d))
        t[p + "ff.W1"] = nm.parameter(_glorot(rng, d, config.ff_mult * d))
        t[p + "ff.b1"] = nm.parameter(np.zeros(config.ff_mult * d))
        t[p + "ff.W2"] = nm.parameter(_glorot(rng, config.ff_mult * d, d))
        t[p + "ff.b2"] = nm.parameter(np.zeros(d))
    t["head.W"] = nm.parameter(_glorot(rng, d, config.n_species))
    t["head.b"] = nm.parameter(np.zeros(config.n_species))
    return ModelParams(t)


def periodic_features(x: np.ndarray, freq: np.ndarray) -> np.ndarray:
    """concat[sin(v), cos(v)] with v_j = 2*pi*c_j*x; values lie in [-1, 1]."""
    v = TWO_PI * np.multiply.outer(np.asarray(x, dtype=float), freq)
    return np.concatenate([np.sin(v), np.cos(v)], axis=-1)


def tokenize_scalar(x: float, freq: np.ndarray, W: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Token for one standardized scalar value (inference path, no tape)."""
    feats = periodic_features(np.array([x]), freq)
    return np.maximum(feats @ W + b, 0.0)[0]


@dataclass
class EncodedBatch:
    """Standardized per-predictor value arrays plus the missingness matrix.

    Missing slots hold 0.0; they are never consumed because the visibility
    mask routes them to the mask token.
    """

    values: list  # per predictor: (B,) for scalars, (B, dim) for vectors
    missing: np.ndarray  # (B, M) bool
    n: int


def encode_samples(samples: list[Sample], schema: PredictorSchema) -> EncodedBatch:
    n = len(samples)
    values = []
    missing = np.zeros((n, schema.M), dtype=bool)
    for j, spec in enumerate(schema.predictors):
        if spec.dim == 1:
            col = np.zeros(n)
        else:
            col = np.zeros((n, spec.dim))
        for i, s in enumerate(samples):
            v = s.values[spec.name]
            if is_missing(v):
                missing[i, j] = True
            else:
                col[i] = standardize_value(spec, v)
        values.append(col)
    return EncodedBatch(values, missing, n)


def _token_sequence(params: ModelParams, schema: PredictorSchema, config: ModelConfig,
                    batch: EncodedBatch, visible: np.ndarray) -> nm.Tensor:
    tokens = []
    for i, spec in enumerate(schema.predictors):
        col = nm.Tensor(batch.values[i])
        if spec.dim == 1:
            x = nm.reshape(col, (batch.n, 1))
            v = nm.mul(x, nm.reshape(params[f"tok.{i}.freq"], (1, config.n_frequencies)))
            v = nm.mul(v, nm.Tensor(TWO_PI))
            feats = nm.concat([nm.sin(v), nm.cos(v)], axis=-1)
            tok = nm.relu(nm.add(nm.matmul(feats, params[f"tok.{i}.W"]), params[f"tok.{i}.b"]))
        else:
            tok = nm.add(nm.matmul(col, params[f"tok.{i}.W"]), params[f"tok.{i}.b"])
        tokens.append(tok)
    seq = nm.stack(tokens, axis=1)  # (B, M, d)
    cond = visible[:, :, None]
    return nm.where_mask(cond, seq, params["mask_token"])


def _encoder(params: ModelParams, config: ModelConfig, h: nm.Tensor, *,
             train: bool, rng: np.random.Generator | None) -> nm.Tensor:
    B, M, d = h.shape
    H = config.n_heads
    dk = d // H
    scale = nm.Tensor(1.0 / np.sqrt(dk))
    p_drop = config.dropout if train else 0.0

    def drop(t):
        if p_drop > 0:
            return nm.dropout(t, p_drop, rng)
        return t

    for b in range(config.n_blocks):
        pre = f"block.{b}."
        a = nm.layer_norm(h, params[pre + "ln1.g"], params[pre + "ln1.b"])

        def heads(name):
            proj = nm.add(nm.matmul(a, params[pre + f"attn.W{name}"]),
                          params[pre + f"attn.b{name}"])
            return nm.transpose(nm.reshape(proj, (B, M, H, dk)), (0, 2, 1, 3))

        q, k, v = heads("q"), heads("k"), heads("v")
        scores = nm.mul(nm.matmul(q, nm.transpose(k, (0, 1, 3, 2))), scale)
        attn = nm.softmax(scores)
        ctx = nm.matmul(attn, v)  # (B, H, M, dk)
        ctx = nm.reshape(nm.transpose(ctx, (0, 2, 1, 3)), (B, M, d))
        ctx = nm.add(nm.matmul(ctx, params[pre + "attn.Wo"]), params[pre + "attn.bo"])
        h = nm.add(h, drop(ctx))

        f = nm.layer_norm(h, params[pre + "ln2.g"], params[pre + "ln2.b"])
        f = nm.gelu(nm.add(nm.matmul(f, params[pre + "ff.W1"]), params[pre + "ff.b1"]))
        f = nm.add(nm.matmul(f, params[pre + "ff.W2"]), params[pre + "ff.b2"])
        h = nm.add(h, drop(f))
    return h


def forward_batch(params: ModelParams, schema: PredictorSchema, config: ModelConfig,
                  batch: EncodedBatch, visible: np.ndarray, *,
                  train: bool = False, rng: np.random.Generator | None = None) -> nm.Tensor:
    """Suitability scores (B, n_species) in (0, 1).

    ``visible`` is the effective visibility (already ANDed with ~missing by
    callers using ``effective_visibility``).
    """
    seq = _token_sequence(params, schema, config, batch, visible)
    h = _encoder(params, config, seq, train=train, rng=rng)
    pooled = nm.mean_pool(h, axis=1)
    logits = nm.add(nm.matmul(pooled, params["head.W"]), params["head.b"])
    return nm.sigmoid(logits)


def effective_visibility(mask: SubsetMask, missing: np.ndarray) -> np.ndarray:
    """Missingness dominates: a predictor is used only if visible and present."""
    return mask.as_array()[None, :] & ~missing


@dataclass
class Model:
    """A trained model bundle: weights plus everything needed to apply them."""

    params: ModelParams
    config: ModelConfig
    schema: PredictorSchema  # statistics fitted on the training split
    species: list[str]
    _encode_cache: dict = field(default_factory=dict, repr=False, compare=False)

    def build_tokens(self, sample: Sample, mask: SubsetMask) -> np.ndarray:
        """Token sequence (M, d) for one sample; hidden/missing -> mask token."""
        batch = encode_samples([sample], self.schema)
        visible = effective_visibility(mask, batch.missing)
        with nm.no_grad():
            seq = _token_sequence(self.params, self.schema, self.config, batch, visible)
        return seq.data[0]

    def forward(self, sample: Sample, mask: SubsetMask) -> np.ndarray:
        """Per-species scores for one sample (dropout off, deterministic)."""
        return self.predict_samples([sample], mask)[0]

    def predict_samples(self, samples: list[Sample], mask: SubsetMask) -> np.ndarray:
        batch = encode_samples(samples, self.schema)
        return self.predict_encoded(batch, mask)

    def predict_encoded(self, batch: EncodedBatch, mask: SubsetMask,
                        chunk: int = 1024) -> np.ndarray:
        visible = effective_visibility(mask, batch.missing)
        out = np.empty((batch.n, self.config.n_species))
        with nm.no_grad():
            for lo in range(0, batch.n, chunk):
                hi = min(lo + chunk, batch.n)
                sub = EncodedBatch(
                    [v[lo:hi] for v in batch.values], batch.missing[lo:hi], hi - lo)
                out[lo:hi] = forward_batch(
                    self.params, self.schema, self.config, sub, visible[lo:hi]).data
        return out

    def encoded_split(self, dataset: Dataset, indices: list[int]) -> EncodedBatch:
        """Memoized encoding of a dataset subset (hot path for Shapley loops)."""
        key = (id(dataset), tuple(indices))
        if key not in self._encode_cache:
            self._encode_cache[key] = encode_samples(
                [dataset.samples[i] for i in indices], self.schema)
        return self._encode_cache[key]

    def predict_matrix(self, dataset: Dataset, indices: list[int],
                       mask: SubsetMask) -> np.ndarray:
        """Scores (len(indices), n_species) — the shared surface for reports."""
        return self.predict_encoded(self.encoded_split(dataset, indices), mask)


def save_checkpoint(model: Model, path, dtype: str = "<f4") -> None:
    """Binary checkpoint: magic, version, length-prefixed JSON manifest, payload.

    Default payload is little-endian float32 per the file contract; "<f8"
    preserves float64 exactly.
    """
    if dtype not in ("<f4", "<f8"):
        raise CheckpointError(f"unsupported payload dtype {dtype!r}")
    directory = []
    chunks = []
    offset = 0
    for name, t in model.params.named().items():
        raw = np.ascontiguousarray(t.data, dtype=np.dtype(dtype)).tobytes()
        directory.append({"name": name, "shape": list(t.data.shape),
                          "offset": offset, "dtype": dtype})
        chunks.append(raw)
        offset += len(raw)
    manifest = {
        "config": model.config.to_json(),
        "schema": model.schema.to_json(),
        "species": model.species,
        "schema_hash": model.schema.identity_hash(),
        "tensors": directory,
    }
    blob = json.dumps(manifest).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<I", CHECKPOINT_VERSION))
        fh.write(struct.pack("<Q", len(blob)))
        fh.write(blob)
        for raw in chunks:
            fh.write(raw)


def load_checkpoint(path) -> Model:
    with open(path, "rb") as fh:
        magic = fh.read(8)
        if magic != CHECKPOINT_MAGIC:
            raise NotACheckpointError(f"{path}: not a checkpoint (bad magic {magic!r})")
        (version,) = struct.unpack("<I", fh.read(4))
        if version != CHECKPOINT_VERSION:
            raise CheckpointVersionError(f"{path}: unsupported version {version}")
        (mlen,) = struct.unpack("<Q", fh.read(8))
        blob = fh.read(mlen)
        if len(blob) != mlen:
            raise CheckpointCorruptError(f"{path}: truncated manifest")
        try:
            manifest = json.loads(blob.decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError) as exc:
            raise CheckpointCorruptError(f"{path}: bad manifest: {exc}") from None
        payload = fh.read()

    config = ModelConfig.from_json(manifest["config"])
    schema = PredictorSchema.from_json(manifest["schema"])
    species = list(manifest["species"])

    tensors: dict[str, nm.Tensor] = {}
    for entry in manifest["tensors"]:
        dt = np.dtype(entry.get("dtype", "<f4"))
        shape = tuple(entry["shape"])
        count = int(np.prod(shape)) if shape else 1
        start = entry["offset"]
        end = start + count * dt.itemsize
        if end > len(payload):
            raise CheckpointCorruptError(f"{path}: truncated payload at {entry['name']}")
        arr = np.frombuffer(payload[start:end], dtype=dt).reshape(shape)
        tensors[entry["name"]] = nm.parameter(arr.astype(np.float64))

    # validate the tensor directory against the architecture it claims
    expected = init_params(config, schema, np.random.default_rng(0))
    exp_named = expected.named()
    if set(tensors) != set(exp_named):
        raise CheckpointCorruptError(f"{path}: tensor directory does not match config")
    for name, t in tensors.items():
        if t.data.shape != exp_named[name].data.shape:
            raise CheckpointCorruptError(
                f"{path}: tensor {name} has shape {t.data.shape}, "
                f"config implies {exp_named[name].data.shape}")

    return Model(ModelParams(tensors), config, schema, species)


def check_schema_compatible(model: Model, dataset: Dataset) -> None:
    """Raise if the checkpointed schema cannot serve this dataset."""
    if model.schema.identity_hash() != dataset.schema.identity_hash():
        raise SchemaMismatchError(
            "checkpoint schema hash differs from dataset schema "
            f"({model.schema.identity_hash()} != {dataset.schema.identity_hash()})")
    if model.species != dataset.species:
        raise SchemaMismatchError("checkpoint species list differs from dataset")
