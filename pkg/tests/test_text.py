import io

import numpy as np
import pytest
from hypothesis import given, strategies as st

from artzsl.errors import DataError, EmptySequenceError
from artzsl.text import (
    EmbeddingTable,
    embed_tokens,
    load_embeddings,
    load_stopwords,
    remove_stopwords,
    tokenize,
)


def embedding_stream(entries, dim):
    lines = []
    for word, vec in entries:
        lines.append(word + " " + " ".join(repr(float(v)) for v in vec) + "\n")
    return io.StringIO("".join(lines))


def make_table(words, dim=4, scale=1.0):
    entries = [(w, np.arange(dim, dtype=float) + i * scale) for i, w in enumerate(words)]
    return load_embeddings(embedding_stream(entries, dim), dim=dim)


class TestTokenize:
    def test_plain_words(self):
        assert tokenize("architecture birds branch") == ["architecture", "birds", "branch"]

    def test_empty_input(self):
        assert tokenize("") == []

    def test_punctuation_and_case(self):
        assert tokenize("Farm, at Watendlath!") == ["farm", "at", "watendlath"]

    def test_interior_hyphen_kept(self):
        assert tokenize("man-made object") == ["man-made", "object"]

    def test_pure_punctuation_dropped(self):
        assert tokenize("-- ... !!") == []

    @given(st.text())
    def test_tokens_are_lowercase_and_nonempty(self, raw):
        for token in tokenize(raw):
            assert token
            assert token == token.lower()
            assert not token[0].isspace() and not token[-1].isspace()

    @given(st.text())
    def test_retokenizing_is_idempotent(self, raw):
        tokens = tokenize(raw)
        assert tokenize(" ".join(tokens)) == tokens


class TestRemoveStopwords:
    def test_paper_examples_all_removed(self):
        assert remove_stopwords(["the", "a", "an"], load_stopwords()) == []

    def test_empty(self):
        assert remove_stopwords([], {"the"}) == []

    def test_order_preserved(self):
        assert remove_stopwords(["farm", "the", "hill"], {"the", "a", "an"}) == ["farm", "hill"]

    @given(st.lists(st.sampled_from(["oak", "the", "a", "tree", "an", "hill"])))
    def test_output_disjoint_from_stoplist_and_no_longer(self, tokens):
        stoplist = {"the", "a", "an"}
        out = remove_stopwords(tokens, stoplist)
        assert len(out) <= len(tokens)
        assert not set(out) & stoplist


class TestLoadStopwords:
    def test_bundled_list(self):
        words = load_stopwords()
        assert {"the", "a", "an"} <= words
        assert 150 <= len(words) <= 200

    def test_custom_file(self, tmp_path):
        path = tmp_path / "stop.txt"
        path.write_text("alpha\nbeta\n", encoding="utf-8")
        assert load_stopwords(path) == {"alpha", "beta"}


class TestLoadEmbeddings:
    def test_two_wellformed_lines(self):
        rows = [("oak", np.linspace(0, 1, 100)), ("hill", np.linspace(1, 2, 100))]
        table = load_embeddings(embedding_stream(rows, 100), dim=100)
        assert len(table) == 2
        assert table.dim == 100
        assert "oak" in table and "pine" not in table

    def test_empty_stream_is_valid(self):
        table = load_embeddings(io.StringIO(""), dim=100)
        assert len(table) == 0
        assert table.get("anything") is None

    def test_wrong_component_count_names_line(self):
        rows = [("ok", np.zeros(100)), ("bad", np.zeros(99))]
        with pytest.raises(DataError, match="line 2"):
            load_embeddings(embedding_stream(rows, 100), dim=100)

    def test_bad_float_names_line(self):
        stream = io.StringIO("oak 0.5 oops\n")
        with pytest.raises(DataError, match="line 1"):
            load_embeddings(stream, dim=2)

    def test_duplicate_word(self):
        rows = [("oak", np.zeros(3)), ("oak", np.ones(3))]
        with pytest.raises(DataError, match="duplicate"):
            load_embeddings(embedding_stream(rows, 3), dim=3)

    def test_non_finite_rejected(self):
        stream = io.StringIO("oak 1.0 inf\n")
        with pytest.raises(DataError, match="non-finite"):
            load_embeddings(stream, dim=2)

    def test_roundtrip_preserves_count_and_values(self):
        rng = np.random.default_rng(7)
        rows = [(f"w{i}", rng.normal(size=6)) for i in range(20)]
        table = load_embeddings(embedding_stream(rows, 6), dim=6)
        # serialize back at full precision and reload
        again = [(w, table[w]) for w in table.words()]
        table2 = load_embeddings(embedding_stream(again, 6), dim=6)
        assert len(table2) == len(table) == 20
        for word, vec in rows:
            assert np.array_equal(table2[word], vec)

    def test_vectors_are_immutable(self):
        table = make_table(["oak"])
        with pytest.raises(ValueError):
            table["oak"][0] = 99.0


class TestEmbedTokens:
    def test_padding_and_mask(self):
        table = make_table(["a", "b", "c"])
        seq = embed_tokens(["a", "b", "c"], table, max_len=5)
        assert seq.matrix.shape == (5, 4)
        assert seq.mask.tolist() == [True, True, True, False, False]
        assert np.array_equal(seq.matrix[3:], np.zeros((2, 4)))

    def test_truncation(self):
        words = [f"w{i}" for i in range(30)]
        table = make_table(words)
        seq = embed_tokens(words, table, max_len=25)
        assert seq.tokens == words[:25]
        assert seq.mask.all()

    def test_oov_dropped(self):
        table = make_table(["known"])
        seq = embed_tokens(["known", "mystery", "known"], table, max_len=4)
        assert seq.tokens == ["known", "known"]
        assert seq.length == 2

    def test_all_oov_raises(self):
        table = make_table(["known"])
        with pytest.raises(EmptySequenceError):
            embed_tokens(["mystery", "riddle"], table, max_len=4)

    def test_rows_bit_equal_to_table(self):
        rng = np.random.default_rng(3)
        entries = [(f"w{i}", rng.normal(size=8)) for i in range(6)]
        table = load_embeddings(embedding_stream(entries, 8), dim=8)
        tokens = ["w3", "w0", "w5"]
        seq = embed_tokens(tokens, table, max_len=6)
        for i, token in enumerate(tokens):
            assert np.array_equal(seq.matrix[i], table[token])
        assert not seq.matrix[3:].any()

    def test_max_len_validation(self):
        with pytest.raises(ValueError):
            embed_tokens(["a"], make_table(["a"]), max_len=0)
