import numpy as np
import pytest

from subsetsdm.data import (
    MISSING,
    PredictorSchema,
    PredictorSpec,
    Sample,
    generate_synthetic,
)
from subsetsdm.masks import SubsetMask
from subsetsdm.model import (
    CheckpointCorruptError,
    Model,
    ModelConfig,
    NotACheckpointError,
    SchemaMismatchError,
    check_schema_compatible,
    desk_config,
    encode_samples,
    init_params,
    load_checkpoint,
    periodic_features,
    save_checkpoint,
    tokenize_scalar,
)
from subsetsdm import numerics as nm


def fitted_schema(names, group="g"):
    specs = tuple(PredictorSpec(n, group, mean=(0.0,), std=(1.0,)) for n in names)
    return PredictorSchema(specs)


def make_model(schema, n_species=3, seed=0, **cfg):
    config = desk_config(n_species, d=16, n_heads=2, n_frequencies=4, **cfg)
    params = init_params(config, schema, np.random.default_rng(seed))
    return Model(params, config, schema, [f"sp{i}" for i in range(n_species)])


def sample_of(schema, values, sid="s0"):
    return Sample(sid, 0.5, 0.5, dict(zip(schema.names, values)), frozenset())


class TestTokenizer:
    def test_zero_input_gives_zeros_and_ones(self):
        feats = periodic_features(np.array([0.0]), np.array([0.3, 1.2, -0.7]))
        assert np.array_equal(feats[0], [0, 0, 0, 1, 1, 1])

    def test_k1_half_frequency_at_one(self):
        # c=0.5, x=1 -> v=pi -> [sin pi, cos pi] = [0, -1]
        feats = periodic_features(np.array([1.0]), np.array([0.5]))
        assert feats[0] == pytest.approx([0.0, -1.0], abs=1e-12)

    def test_matches_direct_formula(self):
        # independent evaluation of concat[sin(2*pi*c*x), cos(2*pi*c*x)]
        rng = np.random.default_rng(3)
        c = rng.normal(size=3)
        x = 0.77
        feats = periodic_features(np.array([x]), c)
        direct = np.concatenate([np.sin(2 * np.pi * c * x), np.cos(2 * np.pi * c * x)])
        assert np.allclose(feats[0], direct, atol=1e-15)
        W, b = rng.normal(size=(6, 5)), rng.normal(size=5)
        tok = tokenize_scalar(x, c, W, b)
        assert np.allclose(tok, np.maximum(direct @ W + b, 0.0), atol=1e-15)

    def test_pre_projection_range(self):
        feats = periodic_features(np.linspace(-50, 50, 101), np.array([0.1, 3.0]))
        assert feats.shape == (101, 4)
        assert np.all(feats >= -1.0) and np.all(feats <= 1.0)


class TestBuildTokens:
    def test_all_hidden_every_token_is_mask(self):
        schema = fitted_schema(["a", "b", "c"])
        model = make_model(schema)
        seq = model.build_tokens(sample_of(schema, [1.0, 2.0, 3.0]),
                                 SubsetMask.none_visible(3))
        mask_tok = model.params["mask_token"].data
        for row in seq:
            assert np.array_equal(row, mask_tok)

    def test_missing_dominates_visible_mask(self):
        schema = fitted_schema(["a", "b"])
        model = make_model(schema)
        seq = model.build_tokens(sample_of(schema, [1.0, MISSING]),
                                 SubsetMask.all_visible(2))
        assert np.array_equal(seq[1], model.params["mask_token"].data)
        assert not np.array_equal(seq[0], model.params["mask_token"].data)

    def test_hidden_substitution_identical_sequences(self):
        schema = fitted_schema(["a", "b"])
        model = make_model(schema)
        mask = SubsetMask.from_indices(2, [0])
        s1 = model.build_tokens(sample_of(schema, [1.0, 5.0]), mask)
        s2 = model.build_tokens(sample_of(schema, [1.0, -123.0]), mask)
        assert np.array_equal(s1, s2)

    def test_vector_predictor_projects_linearly(self):
        schema = PredictorSchema((
            PredictorSpec("a", "g", mean=(0.0,), std=(1.0,)),
            PredictorSpec("emb", "sat", dim=3, mean=(0.0, 0.0, 0.0), std=(1.0, 1.0, 1.0)),
        ))
        model = make_model(schema)
        v = np.array([0.3, -0.4, 0.9])
        seq = model.build_tokens(sample_of(schema, [1.0, v]), SubsetMask.all_visible(2))
        W = model.params["tok.1.W"].data
        b = model.params["tok.1.b"].data
        assert np.allclose(seq[1], v @ W + b, atol=1e-12)


class TestForward:
    def test_scores_in_open_interval(self):
        schema = fitted_schema(["a", "b", "c"])
        model = make_model(schema)
        rng = np.random.default_rng(0)
        for _ in range(20):
            s = sample_of(schema, rng.normal(size=3))
            out = model.forward(s, SubsetMask.all_visible(3))
            assert np.all(out > 0) and np.all(out < 1)

    def test_all_masked_is_constant_function(self):
        schema = fitted_schema(["a", "b", "c"])
        model = make_model(schema)
        out1 = model.forward(sample_of(schema, [1.0, 2.0, 3.0]), SubsetMask.none_visible(3))
        out2 = model.forward(sample_of(schema, [-9.0, 0.1, 77.0]), SubsetMask.none_visible(3))
        assert np.array_equal(out1, out2)

    def test_hidden_perturbation_bit_identical(self):
        schema = fitted_schema(["a", "b", "c", "d"])
        model = make_model(schema)
        mask = SubsetMask.from_indices(4, [0, 2])
        base = model.forward(sample_of(schema, [1.0, 2.0, 3.0, 4.0]), mask)
        pert = model.forward(sample_of(schema, [1.0, -50.0, 3.0, 1e6]), mask)
        assert np.array_equal(base, pert)

    def test_randomized_metamorphic_invariance(self):
        schema = fitted_schema(["a", "b", "c", "d", "e"])
        model = make_model(schema, seed=4)
        rng = np.random.default_rng(5)
        for trial in range(100):
            vals = rng.normal(size=5)
            mask = SubsetMask(tuple(bool(b) for b in rng.random(5) < 0.6))
            pert = vals.copy()
            hidden = [i for i in range(5) if not mask.bits[i]]
            for i in hidden:
                pert[i] = rng.normal() * 100
            a = model.forward(sample_of(schema, vals), mask)
            b = model.forward(sample_of(schema, pert), mask)
            assert np.array_equal(a, b)

    def test_permutation_consistency_of_encoder(self):
        # the architecture is set-like: permuting tokens leaves pooling unchanged
        schema = fitted_schema(["a", "b", "c", "d"])
        model = make_model(schema, seed=7)
        batch = encode_samples([sample_of(schema, [0.3, -1.2, 0.8, 2.0])], schema)
        visible = ~batch.missing
        from subsetsdm.model import _encoder, _token_sequence

        with nm.no_grad():
            seq = _token_sequence(model.params, schema, model.config, batch, visible)
            perm = np.random.default_rng(0).permutation(4)
            seq_p = nm.Tensor(seq.data[:, perm, :])
            out = nm.mean_pool(_encoder(model.params, model.config, seq,
                                        train=False, rng=None), axis=1)
            out_p = nm.mean_pool(_encoder(model.params, model.config, seq_p,
                                          train=False, rng=None), axis=1)
        assert np.allclose(out.data, out_p.data, atol=1e-6)

    def test_batch_matches_single_sample(self):
        schema = fitted_schema(["a", "b", "c"])
        model = make_model(schema)
        rng = np.random.default_rng(1)
        samples = [sample_of(schema, rng.normal(size=3), sid=f"s{i}") for i in range(7)]
        mask = SubsetMask.from_indices(3, [0, 1])
        batch_scores = model.predict_samples(samples, mask)
        for i, s in enumerate(samples):
            assert np.allclose(model.forward(s, mask), batch_scores[i], atol=1e-12)

    def test_dropout_off_at_inference_deterministic(self):
        schema = fitted_schema(["a", "b"])
        model = make_model(schema)
        s = sample_of(schema, [0.5, -0.5])
        a = model.forward(s, SubsetMask.all_visible(2))
        b = model.forward(s, SubsetMask.all_visible(2))
        assert np.array_equal(a, b)

    def test_d_not_divisible_by_heads_rejected(self):
        with pytest.raises(ValueError, match="divisible"):
            ModelConfig(n_species=2, d=30, n_heads=4)


class TestPaperScaleConfig:
    def test_full_scale_forward_runs(self):
        # the 192/7/8/48 configuration behind --paper-scale
        schema = fitted_schema(["a", "b", "c"])
        config = ModelConfig(n_species=4)
        assert (config.d, config.n_blocks, config.n_heads,
                config.n_frequencies) == (192, 7, 8, 48)
        params = init_params(config, schema, np.random.default_rng(0))
        model = Model(params, config, schema, [f"sp{i}" for i in range(4)])
        out = model.predict_samples(
            [sample_of(schema, [0.1, -0.2, 0.3]), sample_of(schema, [1.0, 0.0, -1.0])],
            SubsetMask.from_indices(3, [0, 2]))
        assert out.shape == (2, 4)
        assert np.all(np.isfinite(out)) and np.all((out > 0) & (out < 1))


class TestCheckpoint:
    def _model(self, tmp_path, dtype="<f4"):
        ds, _ = generate_synthetic(40, 5, 4, 0.3, 0.1, seed=2)
        from subsetsdm.data import assign_spatial_blocks, fit_standardizer

        split = assign_spatial_blocks(ds, 1.0, (0.7, 0.15, 0.15), seed=0)
        schema = fit_standardizer(ds, split)
        config = desk_config(4, d=16, n_heads=2, n_frequencies=4)
        params = init_params(config, schema, np.random.default_rng(1))
        model = Model(params, config, schema, ds.species)
        path = tmp_path / "ckpt.msdm"
        save_checkpoint(model, path, dtype=dtype)
        return ds, model, path

    def test_f32_roundtrip_bit_identical_on_f32_domain(self, tmp_path):
        ds, model, path = self._model(tmp_path)
        once = load_checkpoint(path)
        save_checkpoint(once, tmp_path / "again.msdm")
        twice = load_checkpoint(tmp_path / "again.msdm")
        for name, t in once.params.named().items():
            assert np.array_equal(t.data, twice.params[name].data)
        s = ds.samples[0]
        mask = SubsetMask.all_visible(ds.schema.M)
        assert np.array_equal(once.forward(s, mask), twice.forward(s, mask))

    def test_f8_roundtrip_exact(self, tmp_path):
        ds, model, path = self._model(tmp_path, dtype="<f8")
        back = load_checkpoint(path)
        for name, t in model.params.named().items():
            assert np.array_equal(t.data, back.params[name].data)
        s = ds.samples[0]
        mask = SubsetMask.from_indices(ds.schema.M, [0, 2])
        assert np.array_equal(model.forward(s, mask), back.forward(s, mask))
        assert back.species == model.species

    def test_bad_magic_rejected(self, tmp_path):
        p = tmp_path / "junk.msdm"
        p.write_bytes(b"NOTMAGIC" + b"\x00" * 64)
        with pytest.raises(NotACheckpointError, match="not a checkpoint"):
            load_checkpoint(p)

    def test_truncated_payload_rejected(self, tmp_path):
        _, _, path = self._model(tmp_path)
        raw = path.read_bytes()
        path.write_bytes(raw[: len(raw) - 200])
        with pytest.raises(CheckpointCorruptError, match="truncated"):
            load_checkpoint(path)

    def test_schema_hash_mismatch_detected(self, tmp_path):
        ds, model, path = self._model(tmp_path)
        other, _ = generate_synthetic(30, 6, 4, 0.3, 0.1, seed=9)
        loaded = load_checkpoint(path)
        with pytest.raises(SchemaMismatchError, match="schema hash"):
            check_schema_compatible(loaded, other)

    def test_compatible_dataset_accepted(self, tmp_path):
        ds, model, path = self._model(tmp_path)
        check_schema_compatible(load_checkpoint(path), ds)


class TestOutputNormalization:
    def test_scores_finite_in_unit_interval_bulk(self):
        # module invariant: large randomized sweep through the forward pass
        schema = fitted_schema(["a", "b"])
        config = desk_config(2, d=8, n_blocks=1, n_heads=2, n_frequencies=2)
        params = init_params(config, schema, np.random.default_rng(9))
        model = Model(params, config, schema, ["sp0", "sp1"])
        rng = np.random.default_rng(10)
        total = 1_000_000
        chunk = 100_000
        from subsetsdm.model import EncodedBatch

        for _ in range(total // chunk):
            values = [rng.normal(scale=3.0, size=chunk) for _ in range(2)]
            missing = rng.random((chunk, 2)) < 0.2
            batch = EncodedBatch(values, missing, chunk)
            scores = model.predict_encoded(batch, SubsetMask.all_visible(2), chunk=8192)
            assert np.all(np.isfinite(scores))
            assert np.all(scores > 0.0) and np.all(scores < 1.0)
