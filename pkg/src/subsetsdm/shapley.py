"""Coalition value functions and three Shapley estimators.

Estimators: exact enumeration over all coalitions, uniform Monte Carlo over
subset terms (the high-variance baseline), and stratified Monte Carlo that
reads player insertion orders off random Latin squares so every player visits
every insertion position exactly once per square. Marginal contributions along
a row telescope, costing one value evaluation per insertion.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .data import Dataset, Sample, SplitAssignment
from .masks import SubsetMask

MAX_EXACT_PLAYERS = 20


class TooManyPlayers(ValueError):
    pass


class ValueFunction:
    """A pure coalition-to-score mapping over declared players.

    Players are predictors or predictor groups; a coalition is a frozenset of
    player indices. Only the empty coalition is transparently cached (the
    estimators' evaluation accounting depends on every other call hitting the
    evaluator). The full-coalition value is memoized for reporting.
    """

    def __init__(self, evaluator, players: list[str]):
        self._evaluator = evaluator
        self.players = list(players)
        self.n_evaluations = 0
        self._empty = None
        self._full = None

    @property
    def M(self) -> int:
        return len(self.players)

    def evaluate(self, coalition: frozenset) -> float:
        if not coalition:
            if self._empty is None:
                self.n_evaluations += 1
                self._empty = float(self._evaluator(frozenset()))
            return self._empty
        self.n_evaluations += 1
        value = float(self._evaluator(coalition))
        if len(coalition) == self.M:
            self._full = value
        return value

    def empty_value(self) -> float:
        return self.evaluate(frozenset())

    def full_value(self) -> float:
        if self._full is None:
            self.evaluate(frozenset(range(self.M)))
        return self._full

    @classmethod
    def from_game(cls, fn, players) -> "ValueFunction":
        """Wrap a plain callable(frozenset) -> float (constructed test games)."""
        if isinstance(players, int):
            players = [f"p{i}" for i in range(players)]
        return cls(fn, players)


def _player_groups(schema, groups: dict[str, list[int]] | None):
    """(names, member index lists); default: each predictor is its own player."""
    if groups is None:
        return list(schema.names), [[i] for i in range(schema.M)]
    return list(groups.keys()), [list(v) for v in groups.values()]


def coalition_mask(M: int, members: list[list[int]], coalition: frozenset) -> SubsetMask:
    indices = [i for p in coalition for i in members[p]]
    return SubsetMask.from_indices(M, indices)


def performance_value_function(model, dataset: Dataset, split: SplitAssignment,
                               groups: dict[str, list[int]] | None = None,
                               split_name: str = "test",
                               species: str | None = None) -> ValueFunction:
    """f(S) = mean AUC on the split under mask S; f(empty) = 0.5 exactly.

    The empty-coalition value is the all-tie midrank convention, not a model
    run. ``species`` restricts the metric to a single species' AUC.
    """
    from .evaluation import mean_auc

    names, members = _player_groups(model.schema, groups)

    def evaluator(coalition: frozenset) -> float:
        if not coalition:
            return 0.5
        mask = coalition_mask(model.schema.M, members, coalition)
        report = mean_auc(model, dataset, split, mask, split_name)
        if species is not None:
            return report.per_species[species]
        return report.mean_auc

    return ValueFunction(evaluator, names)


def prediction_value_function(model, sample: Sample, species: str | int,
                              groups: dict[str, list[int]] | None = None) -> ValueFunction:
    """f(S) = model score for one species at one sample under mask S."""
    from .model import encode_samples

    sp = model.species.index(species) if isinstance(species, str) else int(species)
    names, members = _player_groups(model.schema, groups)
    batch = encode_samples([sample], model.schema)

    def evaluator(coalition: frozenset) -> float:
        mask = coalition_mask(model.schema.M, members, coalition)
        return float(model.predict_encoded(batch, mask)[0, sp])

    return ValueFunction(evaluator, names)


@dataclass
class ShapleyEstimate:
    players: list[str]
    values: np.ndarray
    estimator: str  # exact | stratified | uniform
    n_value_evaluations: int
    baseline_value: float  # f(empty)
    full_value: float | None = None
    n_squares: int | None = None
    n_samples: int | None = None
    trace: np.ndarray | None = None  # partial estimates per square/sample

    def to_json(self) -> dict:
        out = {
            "players": self.players,
            "values": [float(v) for v in self.values],
            "estimator": self.estimator,
            "n_value_evaluations": self.n_value_evaluations,
            "baseline_value": self.baseline_value,
        }
        if self.full_value is not None:
            out["full_value"] = self.full_value
        if self.n_squares is not None:
            out["n_squares"] = self.n_squares
        if self.n_samples is not None:
            out["n_samples"] = self.n_samples
        if self.trace is not None:
            out["trace"] = [[float(v) for v in row] for row in self.trace]
        return out

    def save_json(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_json(), indent=2) + "\n")


def shapley_weight(coalition_size: int, n_players: int) -> float:
    """|S|! (M - |S| - 1)! / M!"""
    return (math.factorial(coalition_size) * math.factorial(n_players - coalition_size - 1)
            / math.factorial(n_players))


def exact_shapley(f: ValueFunction) -> ShapleyEstimate:
    """Exact weighted sum over all 2^M coalitions."""
    M = f.M
    if M > MAX_EXACT_PLAYERS:
        raise TooManyPlayers(
            f"{M} players means 2^{M} evaluations; use stratified_mc_shapley instead")
    values = np.empty(1 << M)
    for bits in range(1 << M):
        coalition = frozenset(i for i in range(M) if bits >> i & 1)
        values[bits] = f.evaluate(coalition)
    phi = np.zeros(M)
    for bits in range(1 << M):
        size = bin(bits).count("1")
        if size == M:
            continue
        w = shapley_weight(size, M)
        for i in range(M):
            if not bits >> i & 1:
                phi[i] += w * (values[bits | 1 << i] - values[bits])
    return ShapleyEstimate(f.players, phi, "exact", f.n_evaluations,
                           baseline_value=values[0], full_value=values[(1 << M) - 1])


def exact_shapley_table(values: np.ndarray, M: int) -> np.ndarray:
    """Exact Shapley from precomputed coalition values.

    ``values[..., bits]`` indexes coalitions by bitmask; extra leading axes are
    carried through (vectorized over e.g. map locations).
    """
    if values.shape[-1] != (1 << M):
        raise ValueError(f"need 2^{M} coalition values, got {values.shape[-1]}")
    phi = np.zeros(values.shape[:-1] + (M,))
    for bits in range(1 << M):
        size = bin(bits).count("1")
        if size == M:
            continue
        w = shapley_weight(size, M)
        for i in range(M):
            if not bits >> i & 1:
                phi[..., i] += w * (values[..., bits | 1 << i] - values[..., bits])
    return phi


def random_latin_square(M: int, rng: np.random.Generator) -> np.ndarray:
    """Random M x M Latin square of player indices 0..M-1.

    Built from the cyclic square by shuffling rows, shuffling columns, and
    relabeling symbols. Not uniform over all Latin squares; the estimator only
    needs validity plus randomization.
    """
    if M < 1:
        raise ValueError("M must be >= 1")
    base = (np.arange(M)[:, None] + np.arange(M)[None, :]) % M
    base = base[rng.permutation(M)][:, rng.permutation(M)]
    return rng.permutation(M)[base]


def is_latin_square(square: np.ndarray) -> bool:
    """Each of M distinct symbols appears exactly once per row and column."""
    square = np.asarray(square)
    if square.ndim != 2 or square.shape[0] != square.shape[1]:
        return False
    M = square.shape[0]
    symbols = np.unique(square)
    if symbols.size != M:
        return False
    if not np.array_equal(np.sort(square, axis=1), np.broadcast_to(symbols, (M, M))):
        return False
    return np.array_equal(np.sort(square, axis=0),
                          np.broadcast_to(symbols[:, None], (M, M)))


def stratified_mc_shapley(f: ValueFunction, n_squares: int,
                          rng: np.random.Generator) -> ShapleyEstimate:
    """Latin-square stratified estimator.

    Each row of each square is an insertion order; marginal contributions
    telescope with exactly one new evaluation per insertion, and the empty-set
    value is computed once. Per square, every player occupies every insertion
    position exactly once, so each row sums to f(F) - f(empty) and efficiency
    holds for every N.
    """
    if n_squares < 1:
        raise ValueError("n_squares must be >= 1")
    M = f.M
    phi = np.zeros(M)
    f_empty = f.evaluate(frozenset())
    trace = np.empty((n_squares, M))
    for n in range(n_squares):
        square = random_latin_square(M, rng)
        for r in range(M):
            coalition = set()
            f_prev = f_empty
            for j in range(M):
                i = int(square[r, j])
                coalition.add(i)
                f_curr = f.evaluate(frozenset(coalition))
                phi[i] += f_curr - f_prev
                f_prev = f_curr
        trace[n] = phi / ((n + 1) * M)
    return ShapleyEstimate(f.players, phi / (n_squares * M), "stratified",
                           f.n_evaluations, baseline_value=f_empty,
                           full_value=f.full_value(), n_squares=n_squares, trace=trace)


def uniform_mc_shapley(f: ValueFunction, n_samples: int,
                       rng: np.random.Generator) -> ShapleyEstimate:
    """Uniform Monte Carlo over coalition terms.

    For each player, coalitions S of the remaining players are drawn uniformly
    (each subset equally likely) and the weighted marginal term is importance
    corrected by 2^(M-1). Unbiased, but the weight correction makes rare
    empty-set draws dominate the variance.
    """
    if n_samples < 1:
        raise ValueError("n_samples must be >= 1")
    M = f.M
    correction = float(2 ** (M - 1))
    sums = np.zeros(M)
    trace = np.empty((n_samples, M))
    others = [np.array([j for j in range(M) if j != i]) for i in range(M)]
    for t in range(n_samples):
        for i in range(M):
            take = rng.random(M - 1) < 0.5
            coalition = frozenset(int(j) for j in others[i][take])
            w = shapley_weight(len(coalition), M)
            term = f.evaluate(coalition | {i}) - f.evaluate(coalition)
            sums[i] += correction * w * term
        trace[t] = sums / (t + 1)
    return ShapleyEstimate(f.players, sums / n_samples, "uniform", f.n_evaluations,
                           baseline_value=f.empty_value(), n_samples=n_samples,
                           trace=trace)


@dataclass
class ShapleyMap:
    """Prediction-level group attributions at every grid location."""

    lon: np.ndarray
    lat: np.ndarray
    groups: list[str]
    species: str
    values: np.ndarray  # (n_locations, n_groups)
    baseline: np.ndarray  # (n_locations,) empty-coalition prediction
    prediction: np.ndarray  # (n_locations,) full-coalition prediction

    def save_csv(self, path) -> None:
        with Path(path).open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["lon", "lat", "group", "species", "value"])
            for i in range(len(self.lon)):
                for g, name in enumerate(self.groups):
                    w.writerow([repr(float(self.lon[i])), repr(float(self.lat[i])),
                                name, self.species, repr(float(self.values[i, g]))])


def shapley_map(model, samples: list[Sample], groups: dict[str, list[int]],
                species: str | int, mode: str = "exact") -> ShapleyMap:
    """Exact grouped Shapley of the prediction value function at every sample.

    All samples share the same 2^G coalition masks, so each coalition is one
    batched forward pass; the per-location attribution then reuses the exact
    weighted sum. Matches per-sample exact_shapley on the prediction value
    function bit for bit.
    """
    from .model import encode_samples

    if mode != "exact":
        raise ValueError(f"unsupported map mode {mode!r}")
    G = len(groups)
    if G > 12:
        raise TooManyPlayers(f"{G} groups exceeds the exact-map limit of 12")
    names, members = _player_groups(model.schema, groups)
    sp = model.species.index(species) if isinstance(species, str) else int(species)
    batch = encode_samples(samples, model.schema)

    values = np.empty((len(samples), 1 << G))
    for bits in range(1 << G):
        coalition = frozenset(i for i in range(G) if bits >> i & 1)
        mask = coalition_mask(model.schema.M, members, coalition)
        values[:, bits] = model.predict_encoded(batch, mask)[:, sp]

    phi = exact_shapley_table(values, G)
    return ShapleyMap(
        lon=np.array([s.lon for s in samples]),
        lat=np.array([s.lat for s in samples]),
        groups=names,
        species=model.species[sp],
        values=phi,
        baseline=values[:, 0],
        prediction=values[:, (1 << G) - 1],
    )
