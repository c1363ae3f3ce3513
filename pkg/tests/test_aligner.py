import numpy as np
import pytest

from alignkit import tensor as T
from alignkit.aligner import (
    AlignmentSet,
    SentencePair,
    align_pair,
    align_states,
    encode_pair,
    extract_subword_alignment,
    merge_to_words,
    similarity,
    to_pharaoh,
)
from alignkit.encoder import EncoderConfig, EncoderModel
from alignkit.errors import DataError, ShapeError

from oracles import extract_links_loops, merge_links_loops


def tiny_model(seed=0):
    cfg = EncoderConfig(
        num_layers=2, hidden_dim=16, num_heads=2, ffn_dim=32, adapter_dim=4,
        vocab_size=50, max_positions=24, cls_id=1, sep_id=2, extract_layer=2,
    )
    return EncoderModel.random(cfg, seed=seed)


class TestAlignmentSet:
    def test_sure_must_be_subset(self):
        with pytest.raises(DataError):
            AlignmentSet(frozenset({(0, 0)}), frozenset({(1, 1)}))

    def test_of_defaults_sure_to_all(self):
        a = AlignmentSet.of({(0, 1), (1, 0)})
        assert a.sure == a.links == {(0, 1), (1, 0)}

    def test_negative_index_rejected(self):
        with pytest.raises(DataError):
            AlignmentSet.of({(-1, 0)})


class TestSentencePair:
    def test_word_map_length_mismatch(self):
        with pytest.raises(DataError, match="word map"):
            SentencePair(("a", "b"), ("c",), (0,), (0,))

    def test_word_map_must_be_contiguous(self):
        with pytest.raises(DataError, match="jumps"):
            SentencePair(("a", "b"), ("c",), (0, 2), (0,))

    def test_word_map_must_start_at_zero(self):
        with pytest.raises(DataError, match="jumps"):
            SentencePair(("a",), ("c",), (1,), (0,))

    def test_ids_length_mismatch(self):
        with pytest.raises(DataError, match="token ids"):
            SentencePair(("a",), ("c",), (0,), (0,), src_ids=(3, 4))

    def test_word_counts(self):
        p = SentencePair(("a", "##b", "c"), ("d",), (0, 0, 1), (0,))
        assert p.n_src_words == 2 and p.n_tgt_words == 1


class TestSimilarity:
    def test_orthogonal(self):
        S = similarity(T.Tensor(np.array([[1.0, 0.0]], np.float32)),
                       T.Tensor(np.array([[0.0, 1.0]], np.float32)))
        assert S.tolist() == [[0.0]]

    def test_hand_dot(self):
        S = similarity(T.Tensor(np.array([[1.0, 2.0]], np.float32)),
                       T.Tensor(np.array([[3.0, 4.0]], np.float32)))
        assert S.tolist() == [[11.0]]

    def test_gram_symmetric(self):
        rng = np.random.default_rng(0)
        h = T.Tensor(rng.standard_normal((4, 8)).astype(np.float32))
        S = similarity(h, h).data
        assert np.allclose(S, S.T, atol=1e-5)

    def test_dim_mismatch(self):
        with pytest.raises(ShapeError):
            similarity(T.Tensor(np.zeros((2, 3), np.float32)),
                       T.Tensor(np.zeros((2, 4), np.float32)))


class TestExtraction:
    def test_hand_example(self):
        S = np.array([[0.9, 0.1], [0.2, 0.8]], np.float32)
        A = extract_subword_alignment(S, 0.4)
        assert A.tolist() == [[True, False], [False, True]]

    def test_1x1_always_aligns(self):
        for c in (0.0, 0.1, 0.999):
            assert extract_subword_alignment(np.array([[5.0]], np.float32), c).all()

    def test_threshold_range(self):
        S = np.ones((2, 2), np.float32)
        with pytest.raises(DataError):
            extract_subword_alignment(S, 1.0)
        with pytest.raises(DataError):
            extract_subword_alignment(S, -0.1)

    def test_matches_loop_oracle(self):
        rng = np.random.default_rng(1)
        for _ in range(300):
            n, m = rng.integers(1, 7, size=2)
            S = (rng.standard_normal((n, m)) * rng.uniform(0.5, 4)).astype(np.float32)
            for c in (0.0, 0.1, 0.4, 0.9):
                got = extract_subword_alignment(S, c)
                want = extract_links_loops(S, c)
                assert np.array_equal(got, want), (S, c)

    def test_swap_symmetry(self):
        rng = np.random.default_rng(2)
        for _ in range(100):
            n, m = rng.integers(1, 7, size=2)
            S = rng.standard_normal((n, m)).astype(np.float32)
            a = extract_subword_alignment(S.T.copy(), 0.1)
            b = extract_subword_alignment(S, 0.1).T
            assert np.array_equal(a, b)

    def test_monotone_in_threshold(self):
        rng = np.random.default_rng(3)
        for _ in range(100):
            S = rng.standard_normal((5, 4)).astype(np.float32)
            prev = extract_subword_alignment(S, 0.0)
            for c in (0.05, 0.1, 0.3, 0.6, 0.9):
                cur = extract_subword_alignment(S, c)
                assert not (cur & ~prev).any()  # cur ⊆ prev
                prev = cur

    def test_global_shift_invariance(self):
        rng = np.random.default_rng(4)
        S = rng.standard_normal((4, 5)).astype(np.float32)
        base = extract_subword_alignment(S, 0.1)
        shifted = extract_subword_alignment(S + np.float32(3.0), 0.1)
        assert np.array_equal(base, shifted)

    def test_row_shift_keeps_row_ranking(self):
        rng = np.random.default_rng(5)
        S = rng.standard_normal((4, 5)).astype(np.float32)
        S2 = S.copy()
        S2[1] += 2.5
        a = T.row_softmax(T.Tensor(S)).data
        b = T.row_softmax(T.Tensor(S2)).data
        assert np.array_equal(np.argsort(a[1]), np.argsort(b[1]))


class TestMerge:
    def test_identity_maps(self):
        A = np.array([[1, 0], [0, 1]], bool)
        out = merge_to_words(A, [0, 1], [0, 1])
        assert out.links == {(0, 0), (1, 1)}

    def test_shared_word_dedupes(self):
        A = np.array([[1], [1]], bool)
        out = merge_to_words(A, [0, 0], [0])
        assert out.links == {(0, 0)}

    def test_empty(self):
        out = merge_to_words(np.zeros((2, 2), bool), [0, 1], [0, 1])
        assert out.links == frozenset()

    def test_size_bound_and_oracle(self):
        rng = np.random.default_rng(6)
        for _ in range(200):
            n, m = rng.integers(1, 7, size=2)
            A = rng.random((n, m)) < 0.4
            smap = np.cumsum(rng.integers(0, 2, n))
            smap -= smap[0]
            tmap = np.cumsum(rng.integers(0, 2, m))
            tmap -= tmap[0]
            got = merge_to_words(A, list(smap), list(tmap))
            assert len(got) <= int(A.sum())
            assert got.links == merge_links_loops(A, list(smap), list(tmap))

    def test_map_length_mismatch(self):
        with pytest.raises(DataError):
            merge_to_words(np.ones((2, 2), bool), [0], [0, 1])


def word_pair(src, tgt, model, rng):
    """Build a pair with one subword per word and random in-vocab ids."""
    lo = max(model.config.cls_id, model.config.sep_id) + 1
    ids = rng.integers(lo, model.config.vocab_size, size=len(src) + len(tgt))
    return SentencePair(
        tuple(src), tuple(tgt),
        tuple(range(len(src))), tuple(range(len(tgt))),
        src_ids=tuple(int(i) for i in ids[: len(src)]),
        tgt_ids=tuple(int(i) for i in ids[len(src):]),
    )


class TestAlignPair:
    def test_single_word_pair_aligns(self):
        model = tiny_model(seed=7)
        pair = SentencePair(("hi",), ("ho",), (0,), (0,),
                            src_ids=(5,), tgt_ids=(6,))
        out = align_pair(model, pair, c=0.1)
        assert out.links == {(0, 0)}

    def test_empty_side_rejected(self):
        model = tiny_model(seed=8)
        pair = SentencePair(("a",), (), (0,), (), src_ids=(5,), tgt_ids=())
        with pytest.raises(DataError, match="empty sentence"):
            align_pair(model, pair)

    def test_equals_manual_composition(self):
        model = tiny_model(seed=9)
        rng = np.random.default_rng(10)
        pair = word_pair(["a", "b", "c"], ["d", "e"], model, rng)
        got = align_pair(model, pair, layer=1, c=0.1)

        hx, hy = encode_pair(model, pair, layer=1)
        S = similarity(hx, hy)
        A = extract_subword_alignment(S, 0.1)
        want = merge_to_words(A, pair.src_word_map, pair.tgt_word_map)
        assert got.links == want.links

    def test_layer_out_of_range(self):
        model = tiny_model(seed=11)
        pair = word_pair(["a"], ["b"], model, np.random.default_rng(0))
        with pytest.raises(DataError, match="layer"):
            align_pair(model, pair, layer=9)

    def test_missing_ids_rejected(self):
        model = tiny_model(seed=12)
        pair = SentencePair(("a",), ("b",), (0,), (0,))
        with pytest.raises(DataError, match="token ids"):
            align_pair(model, pair)

    def test_align_states_checks_coverage(self):
        h = T.Tensor(np.zeros((3, 4), np.float32))
        with pytest.raises(DataError):
            align_states(h, h, [0, 1], [0, 1, 2], 0.1)


class TestPharaoh:
    def test_sorted_and_marked(self):
        a = AlignmentSet.of({(2, 0), (0, 1), (1, 1)}, sure={(0, 1), (2, 0)})
        assert to_pharaoh(a) == "0-1 1?1 2-0"

    def test_empty(self):
        assert to_pharaoh(AlignmentSet.empty()) == ""
