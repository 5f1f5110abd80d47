"""Coalitions: which predictors are visible to the model at one evaluation."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import PredictorSchema, SchemaError


@dataclass(frozen=True)
class SubsetMask:
    """Bitset over the schema's predictors; True = predictor visible."""

    bits: tuple[bool, ...]

    @property
    def M(self) -> int:
        return len(self.bits)

    @classmethod
    def all_visible(cls, M: int) -> "SubsetMask":
        return cls(tuple([True] * M))

    @classmethod
    def none_visible(cls, M: int) -> "SubsetMask":
        return cls(tuple([False] * M))

    @classmethod
    def from_indices(cls, M: int, indices) -> "SubsetMask":
        bits = [False] * M
        for i in indices:
            if not 0 <= i < M:
                raise ValueError(f"predictor index {i} out of range for M={M}")
            bits[i] = True
        return cls(tuple(bits))

    @classmethod
    def parse(cls, schema: PredictorSchema, spec: str) -> "SubsetMask":
        """Parse a comma-separated list of predictor and/or group names.

        ``all`` and ``none`` are keywords; names may mix groups and predictors.
        """
        spec = spec.strip()
        if spec == "all":
            return cls.all_visible(schema.M)
        if spec == "none" or spec == "":
            return cls.none_visible(schema.M)
        groups = schema.groups()
        indices: set[int] = set()
        for token in spec.split(","):
            token = token.strip()
            if not token:
                continue
            if token in groups:
                indices.update(groups[token])
            else:
                indices.add(schema.index_of(token))  # raises SchemaError if unknown
        return cls.from_indices(schema.M, indices)

    def to_names(self, schema: PredictorSchema) -> list[str]:
        return [schema.predictors[i].name for i in self.visible_indices()]

    def visible_indices(self) -> list[int]:
        return [i for i, b in enumerate(self.bits) if b]

    def count(self) -> int:
        return sum(self.bits)

    def is_empty(self) -> bool:
        return not any(self.bits)

    def is_full(self) -> bool:
        return all(self.bits)

    def union(self, other: "SubsetMask") -> "SubsetMask":
        return SubsetMask(tuple(a or b for a, b in zip(self.bits, other.bits)))

    def intersect(self, other: "SubsetMask") -> "SubsetMask":
        return SubsetMask(tuple(a and b for a, b in zip(self.bits, other.bits)))

    def with_visible(self, index: int) -> "SubsetMask":
        bits = list(self.bits)
        bits[index] = True
        return SubsetMask(tuple(bits))

    def as_array(self) -> np.ndarray:
        return np.array(self.bits, dtype=bool)

    def bits_string(self) -> str:
        """Canonical `subset_bits` form for reports: '1' visible, '0' hidden."""
        return "".join("1" if b else "0" for b in self.bits)

    @classmethod
    def from_bits_string(cls, s: str) -> "SubsetMask":
        if set(s) - {"0", "1"}:
            raise ValueError(f"bad bits string {s!r}")
        return cls(tuple(c == "1" for c in s))


def group_masks(schema: PredictorSchema, group_names: list[str] | None = None
                ) -> dict[str, SubsetMask]:
    """One mask per group, each covering exactly its member predictors."""
    groups = schema.groups()
    if group_names is None:
        group_names = list(groups)
    out = {}
    for g in group_names:
        if g not in groups:
            raise SchemaError(f"unknown group {g!r}")
        out[g] = SubsetMask.from_indices(schema.M, groups[g])
    return out
