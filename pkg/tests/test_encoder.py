"""Text-encoder unit tests: token/position embedding wiring, masked pooling,
the two-layer projection with exact gelu, and the composed text feature."""

import math

import numpy as np
import pytest
import torch

from imac.corpus import PAD_ID, WhitespaceTokenizer, tokenize
from imac.encoder import (
    EncoderConfig,
    Projection,
    SmallTransformerEncoder,
    encode_text,
    encode_tokens,
    gelu,
    masked_mean,
    masked_softmax,
    pool,
    sequence_tensor,
)
from imac.errors import DomainError


def small_config(**overrides) -> EncoderConfig:
    base = dict(d=8, vocab_size=32, max_positions=16, num_layers=2, num_heads=2)
    base.update(overrides)
    return EncoderConfig(**base)


def make_encoder(seed=0, **overrides) -> SmallTransformerEncoder:
    torch.manual_seed(seed)
    return SmallTransformerEncoder(small_config(**overrides))


class TestEncoderConfig:
    def test_defaults(self):
        cfg = EncoderConfig()
        assert cfg.d == 768 and cfg.pooling == "mean"
        assert cfg.encoder_kind == "small_trainable"

    def test_validation(self):
        with pytest.raises(DomainError):
            EncoderConfig(d=0)
        with pytest.raises(DomainError):
            EncoderConfig(encoder_kind="word2vec")
        with pytest.raises(DomainError):
            EncoderConfig(pooling="max")
        with pytest.raises(DomainError):
            EncoderConfig(d=10, num_heads=4)


class TestMaskedOps:
    def test_softmax_rows_are_distributions(self):
        rng = np.random.default_rng(42)
        scores = torch.tensor(rng.normal(size=(5, 7)))
        mask = torch.tensor(rng.random((5, 7)) > 0.3)
        mask[:, 0] = True  # keep every row nonempty
        weights = masked_softmax(scores, mask)
        np.testing.assert_allclose(weights.sum(-1).numpy(), np.ones(5), atol=1e-6)
        assert torch.all(weights[~mask] == 0.0)

    def test_softmax_without_mask_matches_torch(self):
        scores = torch.tensor([[1.0, 2.0, 3.0]])
        np.testing.assert_allclose(
            masked_softmax(scores).numpy(), torch.softmax(scores, -1).numpy(), atol=1e-7
        )

    def test_mean_ignores_masked_positions(self):
        x = torch.tensor([[[1.0, 2.0], [3.0, 4.0], [100.0, 100.0]]])
        mask = torch.tensor([[True, True, False]])
        np.testing.assert_allclose(masked_mean(x, mask).numpy(), [[2.0, 3.0]], atol=1e-7)

    def test_mean_without_mask_is_plain_mean(self):
        x = torch.arange(12.0).reshape(1, 4, 3)
        np.testing.assert_allclose(
            masked_mean(x).numpy(), x.mean(dim=1).numpy(), atol=1e-7
        )


class TestSmallTransformerEncoder:
    def test_output_shape(self):
        encoder = make_encoder()
        ids = torch.tensor([[1, 5, 6, 2], [1, 7, 2, PAD_ID]])
        out = encoder(ids)
        assert out.shape == (2, 4, 8)

    def test_deterministic_in_eval_and_train(self):
        """No dropout anywhere, so repeated passes agree exactly."""
        encoder = make_encoder()
        ids = torch.tensor([[1, 5, 6, 2]])
        encoder.train()
        first = encoder(ids)
        second = encoder(ids)
        encoder.eval()
        third = encoder(ids)
        np.testing.assert_allclose(first.detach().numpy(), second.detach().numpy())
        np.testing.assert_allclose(first.detach().numpy(), third.detach().numpy())

    def test_position_sensitivity(self):
        """Swapping two tokens changes their rows: position embeddings are live."""
        encoder = make_encoder()
        a = encoder(torch.tensor([[1, 5, 6, 2]]))
        b = encoder(torch.tensor([[1, 6, 5, 2]]))
        assert not torch.allclose(a, b)

    def test_pad_embedding_row_is_zero(self):
        encoder = make_encoder()
        assert torch.all(encoder.token_embedding.weight[PAD_ID] == 0.0)

    def test_id_range_enforced(self):
        encoder = make_encoder()
        with pytest.raises(DomainError):
            encoder(torch.tensor([[1, 32, 2]]))
        with pytest.raises(DomainError):
            encoder(torch.tensor([[-1]]))

    def test_max_positions_enforced(self):
        encoder = make_encoder()
        with pytest.raises(DomainError):
            encoder(torch.ones(1, 17, dtype=torch.long))

    def test_mask_shields_real_tokens_from_padding(self):
        """With a key mask, extending a sequence by PAD positions leaves the
        original token rows unchanged."""
        encoder = make_encoder()
        short = torch.tensor([[1, 5, 6, 2]])
        long = torch.tensor([[1, 5, 6, 2, PAD_ID, PAD_ID]])
        out_short = encoder(short, short != PAD_ID)
        out_long = encoder(long, long != PAD_ID)
        np.testing.assert_allclose(
            out_short.detach().numpy(), out_long[:, :4].detach().numpy(), atol=1e-6
        )

    def test_seeded_construction_reproducible(self):
        ids = torch.tensor([[1, 5, 2]])
        a = make_encoder(seed=3)(ids)
        b = make_encoder(seed=3)(ids)
        np.testing.assert_allclose(a.detach().numpy(), b.detach().numpy())


class TestGelu:
    def test_known_values(self):
        np.testing.assert_allclose(gelu(torch.tensor(0.0)).item(), 0.0, atol=1e-12)
        np.testing.assert_allclose(gelu(torch.tensor(1.0)).item(), 0.8413447, atol=1e-6)
        np.testing.assert_allclose(gelu(torch.tensor(10.0)).item(), 10.0, atol=1e-6)

    def test_matches_normal_cdf(self):
        rng = np.random.default_rng(42)
        x = rng.normal(size=50)
        expected = x * 0.5 * (1.0 + np.array([math.erf(v / math.sqrt(2)) for v in x]))
        np.testing.assert_allclose(
            gelu(torch.tensor(x)).numpy(), expected, atol=1e-12
        )

    def test_monotone_on_nonnegative_axis(self):
        x = torch.linspace(0, 5, 200)
        assert torch.all(gelu(x)[1:] > gelu(x)[:-1])


class TestProjection:
    def test_zero_maps_to_zero(self):
        torch.manual_seed(0)
        proj = Projection(d=6)
        np.testing.assert_allclose(
            proj(torch.zeros(6)).detach().numpy(), np.zeros(6), atol=1e-12
        )

    def test_hand_computed_scalar_chain(self):
        """With L2 = I and L1 = 2I in d=1, the map is v -> 2*gelu(v)."""
        proj = Projection(d=1)
        with torch.no_grad():
            proj.L2.copy_(torch.eye(1))
            proj.L1.copy_(2.0 * torch.eye(1))
        out = proj(torch.tensor([1.0]))
        np.testing.assert_allclose(out.item(), 2 * 0.8413447, atol=1e-6)
        np.testing.assert_allclose(out.item(), 1.6826895, atol=1e-6)

    def test_identity_activation_hook_makes_map_linear(self):
        torch.manual_seed(1)
        proj = Projection(d=5)
        proj.activation = lambda x: x
        v1, v2 = torch.randn(5), torch.randn(5)
        combined = proj(2.0 * v1 + 3.0 * v2)
        parts = 2.0 * proj(v1) + 3.0 * proj(v2)
        np.testing.assert_allclose(
            combined.detach().numpy(), parts.detach().numpy(), atol=1e-5
        )
        expected = proj.L1 @ (proj.L2 @ v1)
        np.testing.assert_allclose(
            proj(v1).detach().numpy(), expected.detach().numpy(), atol=1e-6
        )

    def test_dimension_mismatch_rejected(self):
        torch.manual_seed(0)
        with pytest.raises(DomainError):
            Projection(d=4)(torch.zeros(5))

    def test_batched_input_supported(self):
        torch.manual_seed(0)
        proj = Projection(d=3)
        batch = torch.randn(7, 3)
        rows = torch.stack([proj(batch[i]) for i in range(7)])
        np.testing.assert_allclose(
            proj(batch).detach().numpy(), rows.detach().numpy(), atol=1e-6
        )


class TestPool:
    def test_mean_is_column_average(self):
        matrix = torch.tensor([[1.0, 2.0], [3.0, 4.0], [5.0, 6.0]])
        np.testing.assert_allclose(pool(matrix, "mean").numpy(), [3.0, 4.0], atol=1e-7)

    def test_first_token_selects_row_zero(self):
        matrix = torch.tensor([[1.0, 2.0], [3.0, 4.0]])
        np.testing.assert_allclose(pool(matrix, "first_token").numpy(), [1.0, 2.0])

    def test_single_row_modes_agree(self):
        matrix = torch.tensor([[7.0, -2.0, 0.5]])
        np.testing.assert_allclose(
            pool(matrix, "mean").numpy(), pool(matrix, "first_token").numpy()
        )

    def test_batched(self):
        matrix = torch.arange(12.0).reshape(2, 3, 2)
        assert pool(matrix, "mean").shape == (2, 2)

    def test_empty_rejected(self):
        with pytest.raises(DomainError):
            pool(torch.zeros(0, 4))

    def test_unknown_mode_rejected(self):
        with pytest.raises(DomainError):
            pool(torch.zeros(2, 2), "max")


class TestEncodeText:
    def _pieces(self, pooling="mean"):
        tok = WhitespaceTokenizer.fit(["alpha beta gamma delta"], vocab_size=32)
        seq = tokenize("alpha beta gamma", max_len=8, tokenizer=tok)
        encoder = make_encoder()
        torch.manual_seed(1)
        proj = Projection(d=8)
        return seq, encoder, proj

    def test_composition_matches_manual_chain(self):
        seq, encoder, proj = self._pieces()
        vector, tokens = encode_text(seq, encoder, proj, pooling="mean")
        manual_tokens = encoder(sequence_tensor(seq)).squeeze(0)
        np.testing.assert_allclose(
            tokens.detach().numpy(), manual_tokens.detach().numpy(), atol=1e-6
        )
        manual_vector = proj(manual_tokens.mean(dim=0))
        np.testing.assert_allclose(
            vector.detach().numpy(), manual_vector.detach().numpy(), atol=1e-6
        )

    def test_first_token_pooling_reads_bos_row(self):
        seq, encoder, proj = self._pieces()
        vector, tokens = encode_text(seq, encoder, proj, pooling="first_token")
        np.testing.assert_allclose(
            vector.detach().numpy(), proj(tokens[0]).detach().numpy(), atol=1e-6
        )

    def test_token_matrix_shape(self):
        seq, encoder, proj = self._pieces()
        _, tokens = encode_text(seq, encoder, proj)
        assert tokens.shape == (len(seq), 8)

    def test_encode_tokens_unbatches(self):
        seq, encoder, _ = self._pieces()
        assert encode_tokens(seq, encoder).shape == (len(seq), 8)
