import numpy as np
import pytest

from alignkit import tensor as T
from alignkit.aligner import AlignmentSet, SentencePair, encode_pair, similarity
from alignkit.aligner import extract_subword_alignment
from alignkit.encoder import EncoderConfig, EncoderModel
from alignkit.errors import DataError
from alignkit.trainer import (
    TrainConfig,
    alignment_loss,
    gold_to_subword,
    make_pseudo_labels,
    read_loss_log,
    train,
    write_loss_log,
)

from oracles import loss_loops


def tiny_model(seed=0, num_layers=2):
    cfg = EncoderConfig(
        num_layers=num_layers, hidden_dim=16, num_heads=2, ffn_dim=32,
        adapter_dim=4, vocab_size=50, max_positions=24,
        cls_id=1, sep_id=2, extract_layer=num_layers,
    )
    return EncoderModel.random(cfg, seed=seed)


def copy_pairs(model, n_pairs, rng, length=(2, 5)):
    """Pairs whose target repeats the source ids, gold = diagonal."""
    lo = max(model.config.cls_id, model.config.sep_id) + 1
    out = []
    for k in range(n_pairs):
        n = int(rng.integers(*length))
        ids = tuple(int(i) for i in rng.integers(lo, model.config.vocab_size, n))
        toks = tuple(f"t{i}" for i in ids)
        wmap = tuple(range(n))
        out.append(SentencePair(
            toks, toks, wmap, wmap, src_ids=ids, tgt_ids=ids,
            id=f"pair{k}",
            gold=AlignmentSet.of({(i, i) for i in range(n)}),
        ))
    return out


class TestTrainConfig:
    def test_defaults(self):
        cfg = TrainConfig()
        assert cfg.learning_rate == 1e-4
        assert cfg.batch_size == 40
        assert cfg.max_steps == 1500
        assert cfg.threshold == 0.1
        assert cfg.extract_layer == 6

    @pytest.mark.parametrize("kw", [
        {"learning_rate": 0.0},
        {"batch_size": 0},
        {"max_steps": -1},
        {"mode": "unsupervised"},
        {"threshold": 1.0},
        {"extract_layer": -1},
    ])
    def test_rejects(self, kw):
        with pytest.raises(DataError):
            TrainConfig(**kw)


class TestGoldToSubword:
    def test_identity_maps_copy(self):
        gold = AlignmentSet.of({(0, 1), (1, 0)})
        A = gold_to_subword(gold, [0, 1], [0, 1])
        assert A.tolist() == [[False, True], [True, False]]

    def test_split_word_expands(self):
        gold = AlignmentSet.of({(0, 0)})
        A = gold_to_subword(gold, [0, 0], [0])
        assert A.sum() == 2 and A.shape == (2, 1)

    def test_empty_gold(self):
        A = gold_to_subword(AlignmentSet.empty(), [0, 1], [0])
        assert not A.any()

    def test_out_of_range_link(self):
        with pytest.raises(DataError, match="outside"):
            gold_to_subword(AlignmentSet.of({(3, 0)}), [0, 1], [0])

    def test_possible_links_included(self):
        gold = AlignmentSet.of({(0, 0), (1, 0)}, sure={(0, 0)})
        A = gold_to_subword(gold, [0, 1], [0])
        assert A.sum() == 2


class TestAlignmentLoss:
    def test_perfect_one_hot(self):
        eye = T.Tensor(np.eye(2, dtype=np.float32))
        labels = np.eye(2, dtype=bool)
        loss = alignment_loss(eye, eye, labels)
        assert loss.item() == 1.0

    def test_zero_labels(self):
        rng = np.random.default_rng(0)
        S = T.Tensor(rng.random((3, 4)).astype(np.float32))
        assert alignment_loss(S, S, np.zeros((3, 4), bool)).item() == 0.0

    def test_matches_loop_oracle(self):
        rng = np.random.default_rng(1)
        for _ in range(100):
            n, m = rng.integers(1, 6, size=2)
            S = T.Tensor(rng.standard_normal((n, m)).astype(np.float32))
            Sxy, SyxT = T.row_softmax(S), T.col_softmax(S)
            labels = rng.random((n, m)) < 0.4
            got = alignment_loss(Sxy, SyxT, labels).item()
            want = loss_loops(Sxy.data, SyxT.data, labels)
            assert abs(got - want) < 1e-6

    def test_shape_mismatch(self):
        S = T.Tensor(np.ones((2, 2), np.float32))
        with pytest.raises(DataError):
            alignment_loss(S, S, np.ones((2, 3), bool))

    def test_upper_bound(self):
        rng = np.random.default_rng(2)
        for _ in range(200):
            n, m = rng.integers(1, 6, size=2)
            S = T.Tensor(rng.standard_normal((n, m)).astype(np.float32))
            labels = rng.random((n, m)) < 0.5
            val = alignment_loss(T.row_softmax(S), T.col_softmax(S), labels).item()
            bound = labels.sum() * 0.5 * (1 / n + 1 / m)
            assert 0.0 <= val <= bound + 1e-6

    def test_two_sided_symmetry(self):
        # scoring the pair from the other side (swap roles, transpose
        # everything) must give the same number
        rng = np.random.default_rng(3)
        for _ in range(50):
            n, m = rng.integers(1, 6, size=2)
            S = T.Tensor(rng.standard_normal((n, m)).astype(np.float32))
            labels = rng.random((n, m)) < 0.4
            a = alignment_loss(T.row_softmax(S), T.col_softmax(S), labels).item()
            St = T.Tensor(S.data.T.copy())
            b = alignment_loss(T.row_softmax(St), T.col_softmax(St), labels.T).item()
            assert abs(a - b) < 1e-6


class TestPseudoLabels:
    def test_zero_init_adapters_match_no_adapter_run(self):
        model = tiny_model(seed=4)
        pair = copy_pairs(model, 1, np.random.default_rng(5))[0]
        lab = make_pseudo_labels(model, pair, 0.1, layer=2)
        hx, hy = encode_pair(model, pair, layer=2, apply_adapters=False)
        ref = extract_subword_alignment(similarity(hx, hy), 0.1)
        assert np.array_equal(lab, ref)

    def test_deterministic(self):
        model = tiny_model(seed=6)
        pair = copy_pairs(model, 1, np.random.default_rng(7))[0]
        a = make_pseudo_labels(model, pair, 0.1, layer=1)
        b = make_pseudo_labels(model, pair, 0.1, layer=1)
        assert np.array_equal(a, b)


class TestTrain:
    def test_zero_steps_is_identity(self):
        model = tiny_model(seed=8)
        pairs = copy_pairs(model, 3, np.random.default_rng(9))
        cfg = TrainConfig(max_steps=0, extract_layer=2)
        out, state = train(model, pairs, cfg)
        assert state.step == 0 and state.losses == []
        for n in model.adapters:
            assert np.array_equal(out.adapters[n].data, model.adapters[n].data)

    def test_smoke_updates_adapters_not_frozen(self):
        model = tiny_model(seed=10)
        pairs = copy_pairs(model, 4, np.random.default_rng(11))
        cfg = TrainConfig(max_steps=8, batch_size=2, extract_layer=2,
                          learning_rate=1e-3, seed=1)
        out, state = train(model, pairs, cfg)
        assert len(state.losses) == 8
        for n, w in model.frozen.items():
            assert np.array_equal(out.frozen[n].data, w.data), n
        changed = sum(
            not np.array_equal(out.adapters[n].data, model.adapters[n].data)
            for n in model.adapters
        )
        assert changed > 0

    def test_deterministic_given_seed(self):
        model = tiny_model(seed=12)
        pairs = copy_pairs(model, 4, np.random.default_rng(13))
        cfg = TrainConfig(max_steps=5, batch_size=3, extract_layer=2, seed=7)
        out1, s1 = train(model, pairs, cfg)
        out2, s2 = train(model, pairs, cfg)
        assert s1.losses == s2.losses
        for n in out1.adapters:
            assert np.array_equal(out1.adapters[n].data, out2.adapters[n].data)

    def test_self_supervised_runs(self):
        model = tiny_model(seed=14)
        pairs = [
            SentencePair(p.src_subwords, p.tgt_subwords, p.src_word_map,
                         p.tgt_word_map, src_ids=p.src_ids, tgt_ids=p.tgt_ids,
                         id=p.id)
            for p in copy_pairs(model, 3, np.random.default_rng(15))
        ]
        cfg = TrainConfig(max_steps=3, batch_size=2, extract_layer=2,
                          mode="self_supervised", seed=3)
        out, state = train(model, pairs, cfg)
        assert len(state.losses) == 3

    def test_supervised_needs_gold(self):
        model = tiny_model(seed=16)
        p = copy_pairs(model, 1, np.random.default_rng(17))[0]
        bare = SentencePair(p.src_subwords, p.tgt_subwords, p.src_word_map,
                            p.tgt_word_map, src_ids=p.src_ids, tgt_ids=p.tgt_ids,
                            id="x")
        with pytest.raises(DataError, match="gold"):
            train(model, [bare], TrainConfig(extract_layer=2))

    def test_empty_corpus(self):
        with pytest.raises(DataError, match="empty"):
            train(tiny_model(seed=18), [], TrainConfig(extract_layer=2))

    def test_validation_selection_runs(self):
        model = tiny_model(seed=19)
        rng = np.random.default_rng(20)
        pairs = copy_pairs(model, 4, rng)
        val = copy_pairs(model, 2, rng)
        cfg = TrainConfig(max_steps=4, batch_size=2, extract_layer=2, seed=2)
        out, state = train(model, pairs, cfg, val_corpus=val, val_every=2)
        assert state.step == 4

    def test_adapters_above_extract_layer_untouched(self):
        model = tiny_model(seed=21)
        pairs = copy_pairs(model, 3, np.random.default_rng(22))
        cfg = TrainConfig(max_steps=5, batch_size=2, extract_layer=1,
                          learning_rate=1e-3, seed=4)
        out, _ = train(model, pairs, cfg)
        for n in model.adapters:
            if n.startswith("layer.1."):
                assert np.array_equal(out.adapters[n].data, model.adapters[n].data)


class TestLossLog:
    def test_roundtrip(self, tmp_path):
        p = tmp_path / "loss.csv"
        write_loss_log(p, [-0.5, -0.75, -1.0])
        assert read_loss_log(p) == [-0.5, -0.75, -1.0]
        assert p.read_text().splitlines()[0] == "step,loss"

    def test_bad_header(self, tmp_path):
        p = tmp_path / "loss.csv"
        p.write_text("nope\n1,2\n")
        with pytest.raises(DataError):
            read_loss_log(p)
