import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from subsetsdm.data import assign_spatial_blocks, generate_synthetic
from subsetsdm.evaluation import (
    UndefinedAUC,
    auc,
    evaluate_group_powerset,
    mean_auc,
    mean_squared_pred_difference,
    occurrence_stratified_auc,
)
from subsetsdm.masks import SubsetMask
from subsetsdm.model import Model, desk_config, init_params

from conftest import group_pure_model


def auc_bruteforce(scores, labels):
    """Independent oracle: count correctly ordered positive-negative pairs."""
    scores = np.asarray(scores, dtype=float)
    labels = np.asarray(labels)
    pos = scores[labels == 1]
    neg = scores[labels == 0]
    wins = 0.0
    for p in pos:
        for n in neg:
            if p > n:
                wins += 1.0
            elif p == n:
                wins += 0.5
    return wins / (len(pos) * len(neg))


class TestAuc:
    def test_perfect_ranking(self):
        assert auc([0.9, 0.1], [1, 0]) == 1.0

    def test_tie_rule_half(self):
        assert auc([0.5, 0.5], [1, 0]) == 0.5

    def test_pair_counting_example(self):
        # brute force: 3 of 4 positive-negative pairs correctly ordered
        scores = [0.5, 0.4, 0.3, 0.8]
        labels = [0, 1, 0, 1]
        assert auc_bruteforce(scores, labels) == 0.75
        assert auc(scores, labels) == 0.75

    def test_single_class_rejected(self):
        with pytest.raises(UndefinedAUC):
            auc([0.1, 0.2], [1, 1])
        with pytest.raises(UndefinedAUC):
            auc([0.1, 0.2], [0, 0])

    def test_matches_bruteforce_randomized(self):
        rng = np.random.default_rng(0)
        for _ in range(300):
            n = int(rng.integers(2, 60))
            scores = rng.choice([0.1, 0.25, 0.5, 0.8], size=n)  # force ties
            labels = rng.integers(0, 2, size=n)
            if labels.min() == labels.max():
                continue
            assert auc(scores, labels) == pytest.approx(
                auc_bruteforce(scores, labels), abs=1e-12)

    @given(st.integers(0, 2**31 - 1))
    @settings(max_examples=30, deadline=None)
    def test_monotone_transform_invariance(self, seed):
        rng = np.random.default_rng(seed)
        scores = rng.normal(size=30)
        labels = np.r_[np.ones(10), np.zeros(20)].astype(int)
        base = auc(scores, labels)
        assert auc(np.exp(scores), labels) == pytest.approx(base, abs=1e-12)
        assert auc(3.0 * scores + 11.0, labels) == pytest.approx(base, abs=1e-12)

    def test_flip_symmetry_tie_free(self):
        rng = np.random.default_rng(1)
        scores = rng.permutation(np.linspace(0, 1, 40))
        labels = rng.integers(0, 2, size=40)
        labels[0] = 1
        labels[1] = 0
        assert auc(scores, labels) + auc(-scores, labels) == pytest.approx(1.0, abs=1e-12)


class TestMeanAuc:
    def test_empty_mask_is_half_per_species(self, tiny):
        ds, split, _, model, _ = tiny
        rep = mean_auc(model, ds, split, SubsetMask.none_visible(ds.schema.M))
        for v in rep.per_species.values():
            assert v == 0.5
        assert rep.mean_auc == 0.5

    def test_trained_beats_empty(self, tiny):
        ds, split, _, model, _ = tiny
        full = mean_auc(model, ds, split, SubsetMask.all_visible(ds.schema.M))
        assert full.mean_auc > 0.5 + 0.02

    def test_mask_of_allmissing_predictor_is_noop(self, tiny):
        # hiding a predictor that is MISSING everywhere changes nothing: build
        # a mask hiding the most-missing metadata predictor after wiping it
        from subsetsdm.data import MISSING, Dataset, Sample

        ds, split, _, model, _ = tiny
        name = ds.schema.names[-1]
        wiped = Dataset(
            ds.schema,
            [Sample(s.id, s.lon, s.lat, {**s.values, name: MISSING}, s.labels)
             for s in ds.samples],
            ds.species,
        )
        all_vis = SubsetMask.all_visible(ds.schema.M)
        without = SubsetMask(tuple(i != ds.schema.M - 1 for i in range(ds.schema.M)))
        a = mean_auc(model, wiped, split, all_vis)
        b = mean_auc(model, wiped, split, without)
        assert a.per_species == b.per_species

    def test_random_weights_near_half(self):
        ds, _ = generate_synthetic(1500, 6, 12, 0.3, 0.0, seed=31)
        split = assign_spatial_blocks(ds, 1.0, (0.7, 0.15, 0.15), seed=32)
        from subsetsdm.data import fit_standardizer

        schema = fit_standardizer(ds, split)
        cfg = desk_config(12, d=16, n_heads=2, n_frequencies=4)
        params = init_params(cfg, schema, np.random.default_rng(33))
        model = Model(params, cfg, schema, ds.species)
        rep = mean_auc(model, ds, split, SubsetMask.all_visible(6))
        assert 0.45 <= rep.mean_auc <= 0.55

    def test_empty_split_rejected(self, tiny):
        ds, split, _, model, _ = tiny
        import copy

        broken = copy.deepcopy(split)
        for b in broken.split_of_block:
            if broken.split_of_block[b] == "test":
                broken.split_of_block[b] = "train"
        with pytest.raises(ValueError, match="empty"):
            mean_auc(model, ds, broken, SubsetMask.all_visible(ds.schema.M))


class TestGroupPowerset:
    def test_single_group_equals_mean_auc(self, tiny):
        ds, split, _, model, _ = tiny
        groups = {"everything": list(range(ds.schema.M))}
        grid = evaluate_group_powerset(model, ds, split, groups)
        assert len(grid.entries) == 1
        mask, names, rep = grid.entries[0]
        direct = mean_auc(model, ds, split, SubsetMask.all_visible(ds.schema.M))
        assert rep.mean_auc == direct.mean_auc

    def test_three_groups_give_seven_entries(self, tiny):
        ds, split, _, model, _ = tiny
        grid = evaluate_group_powerset(model, ds, split)
        assert len(grid.entries) == 7
        assert len({m.bits_string() for m, _, _ in grid.entries}) == 7

    def test_irrelevant_group_adds_little(self):
        # species driven only by the climate group: adding others barely moves AUC
        ds, split, model = group_pure_model()
        grid = evaluate_group_powerset(model, ds, split)
        by_names = {tuple(sorted(n)): r.mean_auc for _, n, r in grid.entries}
        a = by_names[("climate",)]
        ab = by_names[("climate", "soil")]
        assert abs(ab - a) < 0.02

    def test_partition_required(self, tiny):
        ds, split, _, model, _ = tiny
        with pytest.raises(ValueError, match="partition"):
            evaluate_group_powerset(model, ds, split, {"partial": [0, 1]})

    def test_guard_on_group_count(self, tiny):
        ds, split, _, model, _ = tiny
        groups = {f"g{i}": [i] for i in range(ds.schema.M)}
        # 6 groups is fine; fake 17 groups must refuse before evaluating
        import subsetsdm.evaluation as ev

        fake = {f"g{i}": [i % ds.schema.M] for i in range(17)}
        with pytest.raises(ValueError, match="refusing"):
            ev.evaluate_group_powerset(model, ds, split, fake)

    def test_csv_flat_table(self, tiny, tmp_path):
        ds, split, _, model, _ = tiny
        grid = evaluate_group_powerset(model, ds, split)
        path = tmp_path / "grid.csv"
        grid.save_csv(path)
        lines = path.read_text().strip().splitlines()
        assert lines[0] == "subset_bits,mean_auc,n_species"
        assert len(lines) == 8


class TestOccurrenceBins:
    def test_single_bin_equals_overall(self, tiny):
        ds, split, _, model, _ = tiny
        rows = occurrence_stratified_auc(model, ds, split, [0, 10**9])
        overall = mean_auc(model, ds, split, SubsetMask.all_visible(ds.schema.M))
        assert len(rows) == 1
        assert rows[0]["mean_auc"] == pytest.approx(overall.mean_auc, abs=1e-12)
        assert rows[0]["n_species"] == overall.n_species

    def test_bins_partition_species(self, tiny):
        ds, split, _, model, _ = tiny
        rows = occurrence_stratified_auc(model, ds, split, [0, 50, 100, 10**9])
        overall = mean_auc(model, ds, split, SubsetMask.all_visible(ds.schema.M))
        assert sum(r["n_species"] for r in rows) == overall.n_species

    def test_empty_bin_absent(self, tiny):
        ds, split, _, model, _ = tiny
        rows = occurrence_stratified_auc(model, ds, split, [10**6, 10**9])
        assert rows == []

    def test_trend_high_occurrence_at_least_low(self):
        # statistical trend over seeds: more presences -> easier species
        highs, lows = [], []
        for seed in range(5):
            ds, _ = generate_synthetic(900, 6, 14, 0.4, 0.0, seed=40 + seed)
            split = assign_spatial_blocks(ds, 1.0, (0.7, 0.15, 0.15), seed=50 + seed)
            from subsetsdm.model import desk_config
            from subsetsdm.training import desk_train_config, train

            cfg = desk_config(14, d=16, n_heads=2, n_frequencies=4)
            tc = desk_train_config(seed=seed, max_epochs=12, patience=12)
            model, _ = train(ds, split, cfg, tc)
            tr = split.indices(ds, "train")
            counts = ds.presence_matrix()[tr].sum(axis=0)
            median = float(np.median(counts))
            rows = occurrence_stratified_auc(model, ds, split, [0, median, 10**9])
            if len(rows) == 2:
                lows.append(rows[0]["mean_auc"])
                highs.append(rows[1]["mean_auc"])
        assert np.mean(highs) >= np.mean(lows)


class TestMsd:
    def test_self_difference_zero(self, tiny):
        ds, split, _, model, _ = tiny
        mask = SubsetMask.all_visible(ds.schema.M)
        assert mean_squared_pred_difference(model, model, ds, split, mask) == 0.0

    def test_constant_zero_vs_one(self, tiny):
        ds, split, _, model, _ = tiny

        class Const:
            def __init__(self, v):
                self.v = v

            def predict_matrix(self, dataset, indices, mask):
                return np.full((len(indices), dataset.n_species), self.v)

        mask = SubsetMask.all_visible(ds.schema.M)
        assert mean_squared_pred_difference(Const(0.0), Const(1.0), ds, split, mask) == 1.0
