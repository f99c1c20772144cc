import pytest
import torch

from tagprompt.errors import TokenizerError
from tagprompt.tokenizer import EOS, PAD, UNK, WordTokenizer


@pytest.fixture
def tok():
    return WordTokenizer.build(["Graph nodes graph", "text nodes"], min_freq=1, max_seq_len=128)


def test_empty_text_is_eos(tok):
    assert tok.encode("") == [EOS]


def test_long_text_truncated_to_max_len(tok):
    ids = tok.encode(" ".join(["graph"] * 200))
    assert len(ids) == 128
    assert ids[-1] == EOS


def test_deterministic_and_case_folded(tok):
    assert tok.encode("Graph TEXT") == tok.encode("graph text")


def test_oov_maps_to_unk(tok):
    assert tok.encode("zebra") == [UNK, EOS]


def test_vocab_is_dense_and_frequency_ordered(tok):
    vocab = tok.vocab
    assert sorted(vocab.values()) == list(range(tok.vocab_size))
    assert vocab["graph"] < vocab["text"]


def test_min_freq_and_extra_words():
    tok = WordTokenizer.build(["a a b"], min_freq=2, extra_words=["paper of"])
    assert "b" not in tok.vocab
    assert {"a", "paper", "of"} <= set(tok.vocab)


def test_reserve_shrinks_budget(tok):
    ids = tok.encode(" ".join(["graph"] * 200), reserve=16)
    assert len(ids) == 112
    with pytest.raises(TokenizerError):
        tok.encode("graph", reserve=128)


def test_pad_batch(tok):
    batch = tok.encode_batch(["graph", "graph text nodes"])
    assert batch.shape == (2, 4)
    assert batch[0, 2:].tolist() == [PAD, PAD]


def test_bag_of_words_rows_are_unit_or_zero(tok):
    bow = tok.bag_of_words(["graph graph nodes", "zebra"]).to_dense()
    assert torch.allclose(bow[0].norm(), torch.tensor(1.0, dtype=torch.float64))
    assert bow[1].abs().sum() == 0
