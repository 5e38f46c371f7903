import numpy as np
import pytest
import torch

from xlkd.evaluation import (
    EmbeddingSet,
    EvaluationError,
    cluster_stats,
    embed_sentences,
    export_embeddings,
    project_2d,
    retrieval_accuracy,
)
from xlkd.model import EncoderConfig, init_encoder

from oracles import pca_2d_oracle


def embedding_set(matrix, groups=None, langs=None):
    matrix = np.asarray(matrix, dtype=np.float64)
    n = matrix.shape[0]
    groups = groups or [str(i) for i in range(n)]
    langs = langs or ["x"] * n
    return EmbeddingSet(matrix=matrix, labels=tuple(zip(groups, langs)))


class TestEmbeddingSet:
    def test_label_row_mismatch_rejected(self):
        with pytest.raises(EvaluationError):
            EmbeddingSet(matrix=np.zeros((3, 4)), labels=(("0", "x"),))

    def test_non_2d_rejected(self):
        with pytest.raises(EvaluationError):
            EmbeddingSet(matrix=np.zeros(3), labels=(("0", "x"),) * 3)


@pytest.fixture(scope="module")
def encoder_and_vocab(tiny_vocabs):
    teacher_vocab, _ = tiny_vocabs
    enc = init_encoder(
        EncoderConfig(
            vocab_size=len(teacher_vocab), layers=2, hidden_dim=16, heads=2,
            ffn_dim=32, seed=2,
        )
    )
    return enc, teacher_vocab


class TestEmbedSentences:
    def test_shape_and_determinism(self, encoder_and_vocab, tiny_corpus):
        enc, vocab = encoder_and_vocab
        sentences = [p.source for p in tiny_corpus["syn1"][:7]]
        a = embed_sentences(enc, sentences, vocab)
        b = embed_sentences(enc, sentences, vocab, batch_size=3)
        assert a.matrix.shape == (7, 16)
        assert np.allclose(a.matrix, b.matrix, atol=1e-6)

    def test_batching_matches_single(self, encoder_and_vocab, tiny_corpus):
        # padded batch rows must equal one-at-a-time encodings
        enc, vocab = encoder_and_vocab
        sentences = [p.source for p in tiny_corpus["syn1"][:5]]
        batched = embed_sentences(enc, sentences, vocab).matrix
        single = np.vstack(
            [embed_sentences(enc, [s], vocab).matrix for s in sentences]
        )
        assert np.allclose(batched, single, atol=1e-5)

    def test_train_mode_restored(self, encoder_and_vocab, tiny_corpus):
        enc, vocab = encoder_and_vocab
        enc.train()
        embed_sentences(enc, [tiny_corpus["syn1"][0].source], vocab)
        assert enc.training
        enc.eval()

    def test_custom_labels(self, encoder_and_vocab, tiny_corpus):
        enc, vocab = encoder_and_vocab
        labels = (("0", "syn1"), ("1", "syn1"))
        out = embed_sentences(
            enc, [p.source for p in tiny_corpus["syn1"][:2]], vocab, labels=labels
        )
        assert out.labels == labels


class TestRetrievalAccuracy:
    def test_identical_sets_are_perfect(self):
        m = np.random.default_rng(0).normal(size=(10, 6))
        src, tgt = embedding_set(m), embedding_set(m.copy())
        assert retrieval_accuracy(src, tgt) == (1.0, 1.0)

    def test_reversed_orthonormal_rows_score_zero(self):
        eye = np.eye(4)
        assert retrieval_accuracy(embedding_set(eye), embedding_set(eye[::-1])) == (0.0, 0.0)

    def test_random_unrelated_sets_score_near_chance(self):
        rng = np.random.default_rng(1)
        src = embedding_set(rng.normal(size=(200, 8)))
        tgt = embedding_set(rng.normal(size=(200, 8)))
        fwd, bwd = retrieval_accuracy(src, tgt)
        assert fwd <= 0.05 and bwd <= 0.05

    def test_cosine_ignores_scale(self):
        m = np.random.default_rng(2).normal(size=(6, 4))
        assert retrieval_accuracy(embedding_set(m), embedding_set(3.5 * m)) == (1.0, 1.0)

    def test_tie_breaks_toward_lower_index(self):
        # target rows 0 and 1 identical: row 1's true mate ties with row 0
        src = np.eye(3)
        tgt = src.copy()
        tgt[1] = tgt[0]
        fwd, _ = retrieval_accuracy(embedding_set(src), embedding_set(tgt))
        assert fwd == pytest.approx(2 / 3)

    def test_shape_mismatch_rejected(self):
        with pytest.raises(EvaluationError):
            retrieval_accuracy(embedding_set(np.eye(3)), embedding_set(np.eye(4)))


class TestClusterStats:
    def test_tight_groups_far_apart(self):
        rows = [[1.0, 0.0], [1.0, 0.0], [0.0, 1.0], [0.0, 1.0]]
        intra, inter, ratio = cluster_stats(
            embedding_set(rows, groups=["a", "a", "b", "b"])
        )
        assert intra == 0.0
        assert inter == pytest.approx(1.0)
        assert ratio == 0.0

    def test_frozen_mixed_instance(self):
        # group a: (1,0) and (0,1); group b: twice (1,1)/sqrt2
        s = np.sqrt(0.5)
        rows = [[1.0, 0.0], [0.0, 1.0], [s, s], [s, s]]
        intra, inter, ratio = cluster_stats(
            embedding_set(rows, groups=["a", "a", "b", "b"])
        )
        assert intra == pytest.approx(0.5)  # (1.0 + 0.0) / 2
        assert inter == pytest.approx(1.0 - s)
        assert ratio == pytest.approx(0.5 / (1.0 - s))

    def test_all_identical_rows_degenerate_to_zero_ratio(self):
        rows = [[1.0, 0.0]] * 4  # unit rows, so cosine distances are exact zeros
        intra, inter, ratio = cluster_stats(
            embedding_set(rows, groups=["a", "a", "b", "b"])
        )
        assert (intra, inter, ratio) == (0.0, 0.0, 0.0)

    def test_spread_inside_identical_across_gives_inf(self):
        rows = [[1.0, 0.0], [0.0, 1.0], [1.0, 0.0], [0.0, 1.0]]
        intra, inter, ratio = cluster_stats(
            embedding_set(rows, groups=["a", "a", "b", "b"])
        )
        assert intra == pytest.approx(1.0)
        assert inter == pytest.approx(0.5)  # pairs (0,2),(0,3),(1,2),(1,3): 0,1,1,0
        assert ratio == pytest.approx(2.0)

    def test_single_group_rejected(self):
        with pytest.raises(EvaluationError):
            cluster_stats(embedding_set(np.eye(3), groups=["a", "a", "a"]))

    def test_singleton_group_rejected(self):
        with pytest.raises(EvaluationError):
            cluster_stats(embedding_set(np.eye(3), groups=["a", "a", "b"]))


class TestProject2d:
    def test_matches_eigendecomposition_oracle(self):
        x = np.random.default_rng(3).normal(size=(12, 5))
        got = project_2d(embedding_set(x))
        want = pca_2d_oracle(x)
        assert np.allclose(got, want, atol=1e-9)

    def test_variance_ordering(self):
        x = np.random.default_rng(4).normal(size=(30, 6))
        coords = project_2d(embedding_set(x))
        assert coords[:, 0].var() >= coords[:, 1].var()

    def test_sign_convention_deterministic(self):
        # dominant axis loading is positive, so x spreads along +v1
        x = np.zeros((4, 3))
        x[:, 0] = [-2.0, -1.0, 1.0, 2.0]
        coords = project_2d(embedding_set(x))
        assert np.allclose(coords[:, 0], [-2.0, -1.0, 1.0, 2.0], atol=1e-12)

    def test_rank_one_pads_second_column(self):
        x = np.outer([1.0, 2.0, 3.0], [1.0, 1.0, 0.0])
        coords = project_2d(embedding_set(x))
        assert coords.shape == (3, 2)
        assert np.all(coords[:, 1] == 0.0)

    def test_zero_variance_rejected(self):
        with pytest.raises(EvaluationError):
            project_2d(embedding_set(np.ones((4, 3))))


class TestExport:
    def test_round_trip_layout(self, tmp_path):
        es = embedding_set(
            [[1.0, 2.0], [3.0, 0.123456789123]],
            groups=["0", "1"], langs=["syn1", "syn2"],
        )
        path = tmp_path / "emb.tsv"
        export_embeddings(es, path)
        lines = path.read_text().splitlines()
        assert lines[0] == "group\tlang\tv1\tv2"
        assert lines[1] == "0\tsyn1\t1\t2"
        assert lines[2].split("\t")[3] == "0.123456789"  # 9 significant digits

    def test_coordinates_override(self, tmp_path):
        es = embedding_set(np.ones((2, 5)), groups=["0", "1"])
        coords = np.array([[1.5, -2.5], [0.0, 4.0]])
        path = tmp_path / "coords.tsv"
        export_embeddings(es, path, coordinates=coords)
        lines = path.read_text().splitlines()
        assert lines[0] == "group\tlang\tv1\tv2"
        assert lines[1].split("\t")[2:] == ["1.5", "-2.5"]

    def test_row_mismatch_rejected(self, tmp_path):
        es = embedding_set(np.ones((2, 3)))
        with pytest.raises(EvaluationError):
            export_embeddings(es, tmp_path / "x.tsv", coordinates=np.ones((3, 2)))
