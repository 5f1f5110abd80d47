"""Shared fixtures: synthetic bundles and small trained models.

Training is the expensive part of the suite, so trained models are cached per
(seed, flavor) and shared across test modules; the acceptance module reuses
the same builders for its multi-seed runs.
"""

from __future__ import annotations

import numpy as np
import pytest

from subsetsdm.data import Dataset, Sample, assign_spatial_blocks, generate_synthetic
from subsetsdm.model import desk_config
from subsetsdm.training import desk_train_config, train

E2E_N_SAMPLES = 2000
E2E_N_PREDICTORS = 8
E2E_N_SPECIES = 20
E2E_CORRELATION = 0.6
E2E_MISSING_RATE = 0.1

_cache: dict = {}


def e2e_dataset(seed: int):
    """The acceptance-sized synthetic bundle: dataset, split, generative truth."""
    key = ("data", seed)
    if key not in _cache:
        ds, truth = generate_synthetic(E2E_N_SAMPLES, E2E_N_PREDICTORS, E2E_N_SPECIES,
                                       E2E_CORRELATION, E2E_MISSING_RATE, seed=seed)
        split = assign_spatial_blocks(ds, 1.0, (0.7, 0.15, 0.15), seed=seed + 1)
        _cache[key] = (ds, split, truth)
    return _cache[key]


def e2e_masked_model(seed: int):
    """Masked model trained 30 epochs on the e2e bundle (cached)."""
    key = ("masked", seed)
    if key not in _cache:
        ds, split, _ = e2e_dataset(seed)
        cfg = desk_config(ds.n_species)
        tc = desk_train_config(seed=seed, max_epochs=30, patience=30)
        _cache[key] = train(ds, split, cfg, tc)
    return _cache[key]


E2E_PROBES = [
    [0, 1],          # climate pair
    [3, 4],          # soil pair
    [0, 3, 6],       # one predictor per group
    [1, 2, 4, 5],    # four predictors
    list(range(8)),  # everything
]


def e2e_comparison(seed: int):
    """Oracle/imputation comparison on the probe subsets (cached per seed)."""
    key = ("comparison", seed)
    if key not in _cache:
        from subsetsdm.baselines import compare_baselines
        from subsetsdm.masks import SubsetMask

        ds, split, _ = e2e_dataset(seed)
        model, _ = e2e_masked_model(seed)
        probes = [SubsetMask.from_indices(8, p) for p in E2E_PROBES]
        comp = compare_baselines(
            ds, split, probes, model, model.config,
            desk_train_config(seed=seed, max_epochs=25, patience=6), seed=seed)
        by: dict = {}
        for r in comp.rows:
            by.setdefault(r["subset_bits"], {})[r["method"]] = r
        _cache[key] = (probes, by)
    return _cache[key]


def tiny_bundle():
    """Small bundle for wiring tests: 300 samples, 6 predictors, 8 species."""
    key = "tiny"
    if key not in _cache:
        ds, truth = generate_synthetic(300, 6, 8, 0.3, 0.1, seed=11)
        split = assign_spatial_blocks(ds, 1.0, (0.7, 0.15, 0.15), seed=12)
        cfg = desk_config(ds.n_species, d=16, n_heads=2, n_frequencies=4)
        tc = desk_train_config(seed=5, max_epochs=10, patience=10)
        model, history = train(ds, split, cfg, tc)
        _cache[key] = (ds, split, truth, model, history)
    return _cache[key]


def group_pure_dataset(seed: int = 21, group: str = "climate",
                       n_samples: int = 2000) -> tuple[Dataset, object, list[int]]:
    """Synthetic dataset whose every species responds only to one group.

    Reuses the generator's values/coordinates and rewrites the labels from
    handcrafted logistic responses on the group's predictors.
    """
    key = ("pure", seed, group, n_samples)
    if key not in _cache:
        ds, truth = generate_synthetic(n_samples, 8, 6, 0.0, 0.0, seed=seed)
        rng = np.random.default_rng(seed + 1)
        members = ds.schema.groups()[group]
        x = np.array([[s.values[p.name] for p in ds.schema.predictors]
                      for s in ds.samples])
        logits = np.zeros((len(ds), ds.n_species))
        for sp in range(ds.n_species):
            active = rng.choice(members, size=2, replace=False)
            coef = rng.uniform(1.0, 2.0, size=2) * rng.choice([-1.0, 1.0], size=2)
            inter = rng.uniform(0.4, 0.8) * rng.choice([-1.0, 1.0])
            logits[:, sp] = (coef[0] * x[:, active[0]] + coef[1] * x[:, active[1]]
                             + inter * x[:, active[0]] * x[:, active[1]]
                             + rng.normal(-0.3, 0.3))
        presence = rng.random(logits.shape) < 1.0 / (1.0 + np.exp(-logits))
        samples = [
            Sample(s.id, s.lon, s.lat, s.values,
                   frozenset(int(j) for j in np.nonzero(presence[i])[0]))
            for i, s in enumerate(ds.samples)
        ]
        _cache[key] = (Dataset(ds.schema, samples, ds.species), members)
    return _cache[key]


def group_pure_model(seed: int = 21, group: str = "climate"):
    key = ("pure-model", seed, group)
    if key not in _cache:
        ds, _ = group_pure_dataset(seed, group)
        split = assign_spatial_blocks(ds, 1.0, (0.7, 0.15, 0.15), seed=seed + 2)
        cfg = desk_config(ds.n_species)
        tc = desk_train_config(seed=seed, max_epochs=25, patience=25)
        model, _ = train(ds, split, cfg, tc)
        _cache[key] = (ds, split, model)
    return _cache[key]


@pytest.fixture(scope="session")
def tiny():
    return tiny_bundle()


@pytest.fixture(scope="session")
def e2e_seed0():
    ds, split, truth = e2e_dataset(0)
    model, history = e2e_masked_model(0)
    return ds, split, truth, model, history
