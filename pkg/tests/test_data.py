"""Dataset containers, file formats, and the synthetic task generator."""

import numpy as np
import pytest

from xdistil.data import (LabeledSet, TransferSet, read_corpus, read_labeled,
                          read_ner, read_pairs, write_labeled, write_pairs)
from xdistil.errors import ContractError, DataError
from xdistil.synthetic import (generate_examples, generate_ner, generate_task,
                               token_topic, vocab_tokens)
from xdistil.transformer import Vocab


class TestLabeledSet:
    def test_build_shapes(self, toy_vocab, toy_examples):
        ls = LabeledSet.build(toy_examples, toy_vocab, max_len=12, num_classes=3)
        n = len(toy_examples)
        assert ls.ids.shape == (n, 12)
        assert ls.labels.shape == (n,)

    def test_label_out_of_range(self, toy_vocab):
        with pytest.raises(ContractError):
            LabeledSet.build([("w000", None, 7)], toy_vocab, 12, num_classes=3)

    def test_empty_rejected(self, toy_vocab):
        with pytest.raises(DataError):
            LabeledSet.build([], toy_vocab, 12, num_classes=3)

    def test_validation_split_is_deterministic_tail(self, toy_vocab, toy_examples):
        ls = LabeledSet.build(toy_examples, toy_vocab, 12, 3)
        train, val = ls.split_validation(0.1)
        assert len(val) == round(len(ls) * 0.1)
        assert np.array_equal(val.ids, ls.ids[len(train):])
        train2, val2 = ls.split_validation(0.1)
        assert np.array_equal(val.ids, val2.ids)

    def test_batches_cover_everything_once(self, toy_vocab, toy_examples):
        ls = LabeledSet.build(toy_examples, toy_vocab, 12, 3)
        seen = sum(b.size for b in ls.batches(batch_size=7))
        assert seen == len(ls)

    def test_shuffled_batches_deterministic_under_seed(self, toy_vocab, toy_examples):
        ls = LabeledSet.build(toy_examples, toy_vocab, 12, 3)
        a = [b.ids.tobytes() for b in ls.batches(8, rng=np.random.default_rng(5))]
        b = [b.ids.tobytes() for b in ls.batches(8, rng=np.random.default_rng(5))]
        assert a == b


class TestTransferSet:
    def test_from_labeled_strips_labels(self, toy_vocab, toy_examples):
        ls = LabeledSet.build(toy_examples, toy_vocab, 12, 3)
        ts = TransferSet.from_labeled(ls)
        assert len(ts) == len(ls)
        assert ts.teacher_logits is None

    def test_concat(self, toy_vocab, toy_examples):
        ls = LabeledSet.build(toy_examples, toy_vocab, 12, 3)
        ts = TransferSet.from_labeled(ls)
        both = TransferSet.concat(ts, ts)
        assert len(both) == 2 * len(ts)


class TestFileFormats:
    def test_labeled_round_trip(self, tmp_path):
        examples = [("a b", "c d", 0), ("e", None, 2)]
        path = str(tmp_path / "l.tsv")
        write_labeled(path, examples)
        assert read_labeled(path) == examples

    def test_pairs_round_trip(self, tmp_path):
        pairs = [("a b", "c"), ("d", "e f")]
        path = str(tmp_path / "p.tsv")
        write_pairs(path, pairs)
        assert read_pairs(path) == pairs

    def test_bad_labeled_line(self, tmp_path):
        path = str(tmp_path / "bad.tsv")
        with open(path, "w") as f:
            f.write("only one column\n")
        with pytest.raises(DataError, match="bad.tsv:1"):
            read_labeled(path)

    def test_ner_format(self, tmp_path):
        path = str(tmp_path / "ner.tsv")
        with open(path, "w") as f:
            f.write("w000\tB-ENT\nw001\tO\n\nw002\tO\n")
        sentences = read_ner(path)
        assert sentences == [(["w000", "w001"], ["B-ENT", "O"]), (["w002"], ["O"])]

    def test_corpus_skips_blank_lines(self, tmp_path):
        path = str(tmp_path / "c.txt")
        with open(path, "w") as f:
            f.write("a\n\nb\n")
        assert read_corpus(path) == ["a", "b"]


class TestSyntheticTask:
    def test_deterministic(self):
        assert generate_examples(0, 30) == generate_examples(0, 30)

    def test_balanced_labels(self):
        labels = [y for _, _, y in generate_examples(1, 90)]
        assert labels.count(0) == labels.count(1) == labels.count(2) == 30

    def test_label_rule_holds(self):
        # the strict-majority topic of each side determines the label
        for s1, s2, label in generate_examples(3, 150):
            def majority(s):
                topics = [token_topic(int(t[1:])) for t in s.split()]
                return max(set(topics), key=topics.count)
            assert (majority(s2) - majority(s1)) % 3 == label

    def test_task_files(self, tmp_path):
        paths = generate_task(str(tmp_path), seed=0, n_labeled=30, n_transfer=40,
                              n_eval=10, n_tokens=24)
        vocab = Vocab.from_file(paths["vocab"])
        assert len(vocab) == 24 + 4
        assert len(read_labeled(paths["train"])) == 30
        assert len(read_pairs(paths["transfer_pairs"])) == 40
        assert len(read_corpus(paths["corpus"])) == 80

    def test_ner_file_parses(self, tmp_path):
        path = generate_ner(str(tmp_path / "ner.tsv"), seed=0, n_sentences=20)
        sentences = read_ner(path)
        assert len(sentences) == 20
        tags = {t for _, ts in sentences for t in ts}
        assert tags == {"B-ENT", "O"}
