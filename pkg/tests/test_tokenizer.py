import string

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from condseq import tokenizer as tk
from condseq.errors import InputError, ParseError

CORPUS = [
    "a b ab abc",
    "the cat sat on the mat",
    "abc abc cab",
    "a a a b b c",
]

ALPHABET = sorted({ch for line in CORPUS for ch in line if ch != " "})


@pytest.fixture(scope="module")
def model():
    return tk.train_bpe(CORPUS, num_merges=20)


def _replay_merges(merges, word):
    """Independent re-application of the merge list to one word."""
    syms = list(word) + [tk.EOW]
    for a, b in merges:
        out = []
        i = 0
        while i < len(syms):
            if i + 1 < len(syms) and syms[i] == a and syms[i + 1] == b:
                out.append(a + b)
                i += 2
            else:
                out.append(syms[i])
                i += 1
        syms = out
    return syms


class TestTrain:
    def test_zero_merges_gives_character_vocab(self):
        m = tk.train_bpe(["ab ba"], num_merges=0)
        assert m.merges == ()
        assert set(m.vocab) == {tk.SOS, tk.EOS, tk.UNK, "a", "b", tk.EOW}

    def test_specials_have_fixed_ids(self, model):
        assert model.vocab[tk.SOS] == 0
        assert model.vocab[tk.EOS] == 1
        assert model.vocab[tk.UNK] == 2

    def test_first_merge_is_most_frequent_pair(self):
        # pair counts by hand: ("a","a") appears 3 times, the maximum
        m = tk.train_bpe(["aaab", "aab"], num_merges=1)
        assert m.merges == (("a", "a"),)

    def test_retraining_is_deterministic(self):
        a = tk.train_bpe(CORPUS, num_merges=12)
        b = tk.train_bpe(CORPUS, num_merges=12)
        assert a.merges == b.merges and a.vocab == b.vocab

    def test_empty_corpus_rejected(self):
        with pytest.raises(InputError):
            tk.train_bpe([], num_merges=1)

    def test_vocab_ids_dense(self, model):
        ids = sorted(model.vocab.values())
        assert ids == list(range(len(model.vocab)))


class TestEncodeDecode:
    def test_empty_string(self, model):
        assert tk.encode(model, "") == []
        assert tk.decode(model, []) == ""

    def test_unknown_character_maps_to_unk(self, model):
        ids = tk.encode(model, "#")
        assert tk.UNK_ID in ids
        assert tk.UNK_GLYPH in tk.decode(model, ids)

    def test_out_of_range_id_rejected(self, model):
        with pytest.raises(InputError):
            tk.decode(model, [model.vocab_size])

    def test_specials_stripped(self, model):
        ids = [tk.SOS_ID] + tk.encode(model, "cat") + [tk.EOS_ID]
        assert tk.decode(model, ids) == "cat"

    def test_merge_replay_oracle_on_held_out_text(self, model):
        for word in ["abcabc", "tama", "bbbb", "onon"]:
            expected = [
                model.vocab.get(s, tk.UNK_ID) for s in _replay_merges(model.merges, word)
            ]
            assert tk.encode(model, word) == expected

    @settings(max_examples=200, deadline=None)
    @given(st.text(alphabet=ALPHABET + [" "], max_size=30))
    def test_round_trip_over_training_alphabet(self, s):
        m = tk.train_bpe(CORPUS, num_merges=10)
        assert tk.decode(m, tk.encode(m, s)) == s

    def test_monotonicity_in_num_merges(self):
        lengths = []
        for n in range(0, 24, 4):
            m = tk.train_bpe(CORPUS, num_merges=n)
            lengths.append([len(tk.encode(m, line)) for line in CORPUS])
        for prev, cur in zip(lengths, lengths[1:]):
            assert all(c <= p for p, c in zip(prev, cur))


class TestSerialization:
    def test_round_trip(self, model, tmp_path):
        path = tmp_path / "bpe.model"
        tk.save_model(model, path)
        loaded = tk.load_model(path)
        assert loaded.merges == model.merges
        assert loaded.vocab == model.vocab
        for line in CORPUS:
            assert tk.encode(loaded, line) == tk.encode(model, line)

    def test_header_validated(self, tmp_path):
        path = tmp_path / "bad.model"
        path.write_text("not a header\n")
        with pytest.raises(ParseError, match="line 1"):
            tk.load_model(path)

    def test_truncated_body_detected(self, model, tmp_path):
        path = tmp_path / "trunc.model"
        tk.save_model(model, path)
        lines = path.read_text().split("\n")
        path.write_text("\n".join(lines[:-3]) + "\n")
        with pytest.raises(ParseError):
            tk.load_model(path)
