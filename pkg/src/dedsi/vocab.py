"""Vocabulary: query-side tokens and the identifier-side character alphabet.

Query tokenization is whitespace words with a per-character fallback for
out-of-vocabulary words, frozen from the training pairs.  The identifier side
is always per-character and must cover every docid in the corpus so that
encoding/decoding is lossless.
"""

from dataclasses import dataclass, field

PAD = "<pad>"
BOS = "<bos>"
EOS = "<eos>"
UNK = "<unk>"

# query-side fixed indices
Q_PAD = 0
Q_UNK = 1


@dataclass
class Vocabulary:
    query_tokens: "list[str]"          # words and fallback characters
    id_tokens: "list[str]"             # identifier characters, sorted
    max_docid_len: int
    specials: "tuple[str, str, str, str]" = (PAD, BOS, EOS, UNK)
    _q_index: dict = field(init=False, repr=False)
    _id_index: dict = field(init=False, repr=False)

    def __post_init__(self):
        if len(set(self.id_tokens)) != len(self.id_tokens):
            raise ValueError("id_tokens contains duplicates")
        self._q_index = {t: i + 2 for i, t in enumerate(self.query_tokens)}
        self._id_index = {c: i for i, c in enumerate(self.id_tokens)}

    # identifier side: decoder OUTPUT space is chars + EOS, decoder INPUT
    # space is chars + BOS + PAD
    @property
    def num_query_tokens(self) -> int:
        return len(self.query_tokens) + 2

    @property
    def num_id_chars(self) -> int:
        return len(self.id_tokens)

    @property
    def eos_index(self) -> int:
        return self.num_id_chars

    @property
    def num_output_tokens(self) -> int:
        return self.num_id_chars + 1

    @property
    def bos_index(self) -> int:
        return self.num_id_chars

    @property
    def id_pad_index(self) -> int:
        return self.num_id_chars + 1

    @property
    def num_id_input_tokens(self) -> int:
        return self.num_id_chars + 2

    def encode_query(self, query: str) -> "list[int]":
        """Whitespace tokens; OOV words fall back to characters, and truly
        unseen characters map to UNK."""
        ids = []
        for word in query.split():
            if word in self._q_index:
                ids.append(self._q_index[word])
            else:
                ids.extend(self._q_index.get(c, Q_UNK) for c in word)
        return ids or [Q_UNK]

    def encode_docid(self, docid: str) -> "list[int]":
        try:
            return [self._id_index[c] for c in docid]
        except KeyError as exc:
            # the alphabet is built from the corpus, so this is a defect
            raise ValueError(f"docid {docid!r} has character outside the "
                             f"identifier alphabet: {exc}") from exc

    def decode_output(self, indices) -> str:
        """Output indices back to an identifier string, stopping at EOS."""
        chars = []
        for i in indices:
            if i == self.eos_index:
                break
            chars.append(self.id_tokens[i])
        return "".join(chars)

    def to_dict(self) -> dict:
        return {
            "query_tokens": self.query_tokens,
            "id_tokens": self.id_tokens,
            "max_docid_len": self.max_docid_len,
        }

    @classmethod
    def from_dict(cls, d) -> "Vocabulary":
        return cls(query_tokens=list(d["query_tokens"]),
                   id_tokens=list(d["id_tokens"]),
                   max_docid_len=int(d["max_docid_len"]))


def build_vocab(corpus, train_pairs=None) -> Vocabulary:
    """Vocabulary for a corpus.

    The identifier alphabet always covers every docid of the corpus.  The
    query side is frozen from ``train_pairs`` when given (the honest setting
    for unseen-query evaluation), otherwise from all corpus queries.
    """
    if corpus.num_docs == 0:
        raise ValueError("cannot build a vocabulary from an empty corpus")
    id_tokens = corpus.id_alphabet()
    if train_pairs is not None:
        queries = [p.query for p in train_pairs]
    else:
        queries = [q for qs in corpus.docs.values() for q in qs]
    words: set = set()
    chars: set = set()
    for q in queries:
        for w in q.split():
            words.add(w)
            chars.update(w)
    return Vocabulary(query_tokens=sorted(words | chars),
                      id_tokens=id_tokens,
                      max_docid_len=corpus.max_docid_len())
