import math

import numpy as np
import pytest

from setmetric.errors import (
    DimensionMismatch,
    EmptySet,
    InvalidConfig,
    InvalidLabel,
    NonFinite,
    ShapeNotFactorable,
)
from setmetric.features import (
    AttentionParams,
    Model,
    ModelConfig,
    embed,
    encode_frame,
    frame_feature,
    gap,
    new_model,
    nonlocal_attention,
    reduced_channels,
    set_features,
    softmax_xent,
)


def identity_model(dim: int, classes: int = 2) -> Model:
    """Model whose encoder is the identity on a 1x1xdim grid."""
    cfg = ModelConfig(pixel_dim=dim, enc_dim=dim, emb_dim=dim, classes=classes,
                      grid=(1, 1, dim), use_attention=False)
    model = new_model(cfg)
    model.encoder = np.eye(dim)
    model.embedding = np.eye(dim)
    return model


class TestModelConfig:
    def test_default_grid_prefers_4x4(self):
        assert ModelConfig(pixel_dim=32, enc_dim=32, emb_dim=2, classes=2).grid \
            == (4, 4, 2)
        assert ModelConfig(pixel_dim=12, enc_dim=12, emb_dim=3, classes=2).grid \
            == (2, 2, 3)
        assert ModelConfig(pixel_dim=7, enc_dim=7, emb_dim=7, classes=2).grid \
            == (1, 1, 7)

    def test_grid_must_factor(self):
        with pytest.raises(ShapeNotFactorable):
            ModelConfig(pixel_dim=10, enc_dim=10, emb_dim=1, classes=2,
                        grid=(4, 4, 1))

    def test_embedding_bounded_by_channels(self):
        with pytest.raises(InvalidConfig):
            ModelConfig(pixel_dim=16, enc_dim=16, emb_dim=2, classes=2,
                        grid=(4, 4, 1))

    def test_projection_cannot_expand(self):
        with pytest.raises(InvalidConfig):
            ModelConfig(pixel_dim=4, enc_dim=8, emb_dim=1, classes=2)


class TestNewModel:
    def test_encoder_rows_orthonormal(self):
        model = new_model(ModelConfig(pixel_dim=24, enc_dim=16, emb_dim=1,
                                      classes=3, seed=9))
        gram = model.encoder @ model.encoder.T
        assert np.max(np.abs(gram - np.eye(16))) <= 1e-10

    def test_attention_starts_as_identity(self, rng):
        model = new_model(ModelConfig(pixel_dim=16, enc_dim=16, emb_dim=1,
                                      classes=2, seed=3))
        fmap = rng.standard_normal(model.config.grid)
        assert np.array_equal(nonlocal_attention(fmap, model.attention), fmap)

    def test_head_starts_at_zero_uniform_loss(self, rng):
        model = new_model(ModelConfig(pixel_dim=8, enc_dim=8, emb_dim=2,
                                      classes=4, grid=(2, 2, 2)))
        z = rng.standard_normal(2)
        loss, *_ = softmax_xent(z, 1, model)
        assert abs(loss - math.log(4)) <= 1e-12

    def test_deterministic_given_seed(self):
        cfg = ModelConfig(pixel_dim=16, enc_dim=16, emb_dim=1, classes=2, seed=5)
        a, b = new_model(cfg), new_model(cfg)
        assert np.array_equal(a.encoder, b.encoder)
        assert np.array_equal(a.embedding, b.embedding)
        assert np.array_equal(a.attention.query, b.attention.query)

    def test_check_finite(self):
        model = identity_model(3)
        model.embedding = model.embedding.copy()
        model.embedding[0, 0] = np.nan
        with pytest.raises(NonFinite):
            model.check_finite()


class TestEncodeFrame:
    def test_zero_pixels_zero_map(self):
        model = new_model(ModelConfig(pixel_dim=16, enc_dim=16, emb_dim=1,
                                      classes=2))
        fmap = encode_frame(np.zeros(16), model)
        assert fmap.shape == (4, 4, 1)
        assert np.all(fmap == 0.0)

    def test_identity_encoder_roundtrip(self, rng):
        model = identity_model(6)
        p = rng.standard_normal(6)
        assert np.array_equal(encode_frame(p, model).ravel(), p)

    def test_matches_direct_multiply(self, rng):
        model = new_model(ModelConfig(pixel_dim=20, enc_dim=16, emb_dim=1,
                                      classes=2, seed=2))
        p = rng.standard_normal(20)
        assert np.array_equal(encode_frame(p, model).ravel(), model.encoder @ p)

    def test_length_check(self):
        model = identity_model(4)
        with pytest.raises(DimensionMismatch):
            encode_frame(np.zeros(5), model)


class TestAttention:
    def test_zero_output_projection_is_identity(self, rng):
        c = 3
        cp = reduced_channels(c)
        params = AttentionParams(query=rng.standard_normal((cp, c)),
                                 key=rng.standard_normal((cp, c)),
                                 value=rng.standard_normal((cp, c)),
                                 output=np.zeros((c, cp)))
        fmap = rng.standard_normal((2, 3, c))
        assert np.array_equal(nonlocal_attention(fmap, params), fmap)

    def test_permutation_equivariant_exact(self, rng):
        c = 4
        cp = reduced_channels(c)
        params = AttentionParams(query=rng.standard_normal((cp, c)),
                                 key=rng.standard_normal((cp, c)),
                                 value=rng.standard_normal((cp, c)),
                                 output=rng.standard_normal((c, cp)))
        fmap = rng.standard_normal((3, 4, c))
        perm = rng.permutation(12)
        flat = fmap.reshape(12, c)
        out = nonlocal_attention(fmap, params).reshape(12, c)
        out_p = nonlocal_attention(flat[perm].reshape(3, 4, c), params)
        assert np.array_equal(out[perm], out_p.reshape(12, c))

    def test_two_position_hand_computed(self):
        # 1x2x1 map with entries (1, 2), every projection the scalar 1.
        # Scores s_ij = x_i * x_j; softmax over j; residual output.
        one = np.array([[1.0]])
        params = AttentionParams(query=one, key=one, value=one, output=one)
        fmap = np.array([1.0, 2.0]).reshape(1, 2, 1)
        e = math.e
        expect_1 = 1.0 + (1.0 + 2.0 * e) / (1.0 + e)
        expect_2 = 2.0 + (1.0 + 2.0 * e * e) / (1.0 + e * e)
        out = nonlocal_attention(fmap, params).ravel()
        assert abs(out[0] - expect_1) <= 1e-12
        assert abs(out[1] - expect_2) <= 1e-12

    def test_shape_preserved(self, rng):
        for shape in [(1, 1, 1), (2, 5, 3), (4, 1, 2)]:
            c = shape[2]
            cp = reduced_channels(c)
            params = AttentionParams(query=rng.standard_normal((cp, c)),
                                     key=rng.standard_normal((cp, c)),
                                     value=rng.standard_normal((cp, c)),
                                     output=rng.standard_normal((c, cp)))
            fmap = rng.standard_normal(shape)
            assert nonlocal_attention(fmap, params).shape == shape

    def test_channel_mismatch(self, rng):
        params = AttentionParams(query=np.ones((1, 2)), key=np.ones((1, 2)),
                                 value=np.ones((1, 2)), output=np.ones((2, 1)))
        with pytest.raises(DimensionMismatch):
            nonlocal_attention(rng.standard_normal((2, 2, 3)), params)

    def test_inconsistent_projections(self):
        with pytest.raises(DimensionMismatch):
            AttentionParams(query=np.ones((1, 2)), key=np.ones((1, 3)),
                            value=np.ones((1, 2)), output=np.ones((2, 1)))


class TestGap:
    def test_constant_map(self):
        fmap = np.full((3, 2, 4), 2.5)
        assert np.array_equal(gap(fmap), np.full(4, 2.5))

    def test_single_position(self, rng):
        v = rng.standard_normal(5)
        assert np.array_equal(gap(v.reshape(1, 1, 5)), v)

    def test_arithmetic_mean(self):
        fmap = np.array([1.0, 2.0, 3.0, 6.0]).reshape(2, 2, 1)
        assert gap(fmap).tolist() == [3.0]

    def test_permutation_invariant_exact(self, rng):
        fmap = rng.standard_normal((4, 3, 2))
        perm = rng.permutation(12)
        permuted = fmap.reshape(12, 2)[perm].reshape(4, 3, 2)
        assert np.array_equal(gap(fmap), gap(permuted))


class TestEmbed:
    def test_identity(self, rng):
        model = identity_model(4)
        z = rng.standard_normal(4)
        assert np.array_equal(embed(z, model), z)

    def test_zero(self, rng):
        model = identity_model(4)
        model.embedding = np.zeros((4, 4))
        assert np.array_equal(embed(rng.standard_normal(4), model), np.zeros(4))

    def test_matches_direct_multiply(self, rng):
        model = identity_model(5)
        model.embedding = rng.standard_normal((3, 5))
        z = rng.standard_normal(5)
        assert np.array_equal(embed(z, model), model.embedding @ z)

    def test_length_check(self):
        with pytest.raises(DimensionMismatch):
            embed(np.zeros(3), identity_model(4))


class TestSoftmaxXent:
    def test_uniform_logits(self):
        model = identity_model(3, classes=2)
        loss, _, _, _ = softmax_xent(np.zeros(3), 0, model)
        assert abs(loss - math.log(2)) <= 1e-12

    def test_saturated_true_class(self):
        model = identity_model(2, classes=2)
        model.head_weight = np.array([[50.0, 0.0], [0.0, 0.0]])
        loss, *_ = softmax_xent(np.array([1.0, 0.0]), 0, model)
        assert loss <= 1e-20

    def test_invalid_label(self):
        model = identity_model(2, classes=2)
        with pytest.raises(InvalidLabel):
            softmax_xent(np.zeros(2), 2, model)
        with pytest.raises(InvalidLabel):
            softmax_xent(np.zeros(2), -1, model)

    def test_gradients_match_finite_differences(self, rng):
        step = 1e-5
        for _ in range(10):
            k, d = int(rng.integers(2, 5)), int(rng.integers(2, 5))
            model = identity_model(d, classes=k)
            model.head_weight = rng.standard_normal((k, d))
            model.head_bias = rng.standard_normal(k)
            z = rng.standard_normal(d)
            label = int(rng.integers(k))
            _, g_head, g_bias, g_in = softmax_xent(z, label, model)
            for r in range(k):
                for c in range(d):
                    up, dn = model.copy(), model.copy()
                    up.head_weight[r, c] += step
                    dn.head_weight[r, c] -= step
                    fd = (softmax_xent(z, label, up)[0]
                          - softmax_xent(z, label, dn)[0]) / (2 * step)
                    assert g_head[r, c] == pytest.approx(fd, rel=1e-4, abs=1e-8)
            for c in range(d):
                zp, zm = z.copy(), z.copy()
                zp[c] += step
                zm[c] -= step
                fd = (softmax_xent(zp, label, model)[0]
                      - softmax_xent(zm, label, model)[0]) / (2 * step)
                assert g_in[c] == pytest.approx(fd, rel=1e-4, abs=1e-8)


class TestSetFeatures:
    def test_single_frame_composition(self, rng):
        model = new_model(ModelConfig(pixel_dim=16, enc_dim=16, emb_dim=2,
                                      classes=2, grid=(2, 2, 4), seed=8))
        frame = rng.standard_normal(16)
        out = set_features([frame], model)
        expect = embed(frame_feature(frame, model), model)
        assert out.shape == (2, 1)
        assert np.array_equal(out[:, 0], expect)

    def test_duplicated_frames_duplicate_columns(self, rng):
        model = identity_model(4)
        frame = rng.standard_normal(4)
        out = set_features([frame, frame], model)
        assert np.array_equal(out[:, 0], out[:, 1])

    def test_per_frame_oracle(self, rng):
        model = new_model(ModelConfig(pixel_dim=12, enc_dim=12, emb_dim=3,
                                      classes=2, grid=(2, 2, 3), seed=4))
        frames = [rng.standard_normal(12) for _ in range(3)]
        out = set_features(frames, model)
        for j, fr in enumerate(frames):
            assert np.array_equal(out[:, j], embed(frame_feature(fr, model), model))

    def test_permuted_frames_permute_columns(self, rng):
        model = identity_model(5)
        frames = [rng.standard_normal(5) for _ in range(4)]
        base = set_features(frames, model)
        order = [2, 0, 3, 1]
        permuted = set_features([frames[i] for i in order], model)
        assert np.array_equal(permuted, base[:, order])

    def test_empty_and_ragged(self, rng):
        model = identity_model(4)
        with pytest.raises(EmptySet):
            set_features([], model)
        with pytest.raises(DimensionMismatch):
            set_features([np.zeros(4), np.zeros(3)], model)
