import pytest

from dedsi.corpus import Corpus
from dedsi.synthetic import synthetic_corpus
from dedsi.vocab import Q_PAD, Q_UNK, Vocabulary, build_vocab


def test_id_tokens_cover_alphabet():
    corpus = Corpus({"D31": ["a"], "D32": ["b"]})
    vocab = build_vocab(corpus)
    assert set("D312") <= set(vocab.id_tokens)
    assert vocab.id_tokens == sorted(vocab.id_tokens)


def test_magnet_alphabet():
    from dedsi.corpus import assign_magnet_links
    corpus = assign_magnet_links(synthetic_corpus(40, 3, seed=0), seed=1)
    vocab = build_vocab(corpus)
    assert set(vocab.id_tokens) <= set("0123456789abcdef")


def test_docid_roundtrip():
    corpus = synthetic_corpus(10, 4, seed=1)
    vocab = build_vocab(corpus)
    for docid in corpus.docs:
        assert vocab.decode_output(vocab.encode_docid(docid)) == docid


def test_decode_stops_at_eos():
    vocab = build_vocab(Corpus({"AB": ["q"]}))
    ids = vocab.encode_docid("AB") + [vocab.eos_index] + vocab.encode_docid("A")
    assert vocab.decode_output(ids) == "AB"


def test_empty_corpus_rejected():
    with pytest.raises(ValueError):
        build_vocab(Corpus({}))


def test_query_encoding_word_hit():
    corpus = Corpus({"D1": ["spider solitaire"]})
    vocab = build_vocab(corpus)
    ids = vocab.encode_query("spider solitaire")
    assert len(ids) == 2
    assert all(i >= 2 for i in ids)


def test_query_oov_falls_back_to_chars():
    corpus = Corpus({"D1": ["spider solitaire"]})
    vocab = build_vocab(corpus)
    ids = vocab.encode_query("spidersolitaire")
    # unseen word, but every character was seen in training words
    assert len(ids) == len("spidersolitaire")
    assert Q_UNK not in ids


def test_unknown_char_is_unk():
    corpus = Corpus({"D1": ["abc"]})
    vocab = build_vocab(corpus)
    assert vocab.encode_query("zzz") == [Q_UNK] * 3
    assert vocab.encode_query("") == [Q_UNK]


def test_vocab_frozen_from_train_pairs():
    corpus = synthetic_corpus(5, 10, seed=3)
    from dedsi.corpus import SplitSpec, make_splits
    train, val, test = make_splits(corpus, SplitSpec(4, 3, 3))
    vocab = build_vocab(corpus, train_pairs=train)
    train_words = {w for p in train for w in p.query.split()}
    vocab_words = {t for t in vocab.query_tokens if len(t) > 1}
    assert vocab_words <= train_words | {w for w in train_words}


def test_serialization_roundtrip():
    corpus = synthetic_corpus(6, 5, seed=4)
    vocab = build_vocab(corpus)
    clone = Vocabulary.from_dict(vocab.to_dict())
    assert clone.query_tokens == vocab.query_tokens
    assert clone.id_tokens == vocab.id_tokens
    assert clone.max_docid_len == vocab.max_docid_len
    q = corpus.pairs()[0].query
    assert clone.encode_query(q) == vocab.encode_query(q)


def test_index_spaces():
    vocab = build_vocab(Corpus({"AB": ["q"], "CD": ["r"]}))
    assert vocab.num_id_chars == 4
    assert vocab.eos_index == 4
    assert vocab.num_output_tokens == 5
    assert vocab.bos_index == 4          # input space
    assert vocab.id_pad_index == 5
    assert Q_PAD == 0 and Q_UNK == 1
