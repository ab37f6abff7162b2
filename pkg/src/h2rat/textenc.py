"""Reminder text -> sentence vector: one-hot word embedding and an LSTM scan."""

import string
from dataclasses import dataclass

import numpy as np

from h2rat import numerics as nx
from h2rat.errors import DimensionError, EmptyInputError

PAD, UNK = 0, 1
PAD_TOKEN, UNK_TOKEN = "<pad>", "<unk>"
MAX_LEN = 15

_STRIP_PUNCT = str.maketrans("", "", string.punctuation)


class Vocabulary:
    """Dense token <-> index map with PAD=0 and UNK=1 reserved."""

    def __init__(self, words=()):
        self.itos = [PAD_TOKEN, UNK_TOKEN]
        self.stoi = {PAD_TOKEN: PAD, UNK_TOKEN: UNK}
        for w in words:
            self.add(w)

    @classmethod
    def build(cls, texts):
        """Vocabulary over the normalised words of ``texts``, in sorted order."""
        words = set()
        for text in texts:
            words.update(normalize(text))
        return cls(sorted(words))

    @classmethod
    def from_list(cls, itos):
        if list(itos[:2]) != [PAD_TOKEN, UNK_TOKEN]:
            raise ValueError("vocabulary list must start with the reserved tokens")
        return cls(itos[2:])

    def add(self, word):
        if word not in self.stoi:
            self.stoi[word] = len(self.itos)
            self.itos.append(word)
        return self.stoi[word]

    def index(self, word):
        return self.stoi.get(word, UNK)

    def to_list(self):
        return list(self.itos)

    def __len__(self):
        return len(self.itos)

    def __contains__(self, word):
        return word in self.stoi

    def __eq__(self, other):
        return isinstance(other, Vocabulary) and self.itos == other.itos


@dataclass(frozen=True)
class Reminder:
    raw_text: str
    tokens: tuple

    @property
    def length(self):
        return len(self.tokens)


def normalize(text):
    """Lowercase, drop ASCII punctuation, split on whitespace."""
    return text.lower().translate(_STRIP_PUNCT).split()


def tokenize(text, vocab, max_len=MAX_LEN):
    words = normalize(text)
    if not words:
        raise EmptyInputError(f"reminder {text!r} is empty after normalisation")
    return Reminder(text, tuple(vocab.index(w) for w in words[:max_len]))


def embed(reminder, embedding):
    """Column ``r_i`` of the m x |V| embedding matrix for every token.

    Multiplying by a one-hot vector selects a column, so that is what we do.
    """
    tokens = reminder.tokens if isinstance(reminder, Reminder) else reminder
    vocab_size = embedding.cols
    for t in tokens:
        if not 0 <= t < vocab_size:
            raise DimensionError(f"token index {t} outside vocabulary of size {vocab_size}")
    return [nx.column(embedding, t) for t in tokens]


@dataclass
class LstmCellParams:
    """Fused gate weights, gate order (input, forget, output, candidate).

    w_x: 4m x m, w_h: 4m x m, b: 4m x 1.
    """

    w_x: nx.Tensor
    w_h: nx.Tensor
    b: nx.Tensor

    @property
    def hidden(self):
        return self.w_x.rows // 4

    def check(self):
        m = self.hidden
        if self.w_x.shape != (4 * m, m) or self.w_h.shape != (4 * m, m) or self.b.shape != (4 * m, 1):
            raise DimensionError(
                f"inconsistent LSTM shapes w_x={self.w_x.shape} w_h={self.w_h.shape} b={self.b.shape}"
            )


def lstm_step(x, h, c, params):
    m = params.hidden
    z = nx.add(nx.add(nx.matmul(params.w_x, x), nx.matmul(params.w_h, h)), params.b)
    gates = nx.sigmoid_elem(nx.row_slice(z, 0, 3 * m))
    i = nx.row_slice(gates, 0, m)
    f = nx.row_slice(gates, m, 2 * m)
    o = nx.row_slice(gates, 2 * m, 3 * m)
    g = nx.tanh_elem(nx.row_slice(z, 3 * m, 4 * m))
    c = nx.add(nx.mul(f, c), nx.mul(i, g))
    h = nx.mul(o, nx.tanh_elem(c))
    return h, c


def encode_reminder(seq, params):
    """Run the LSTM from a zero state; the last hidden state encodes the reminder."""
    if len(seq) == 0:
        raise EmptyInputError("cannot encode an empty reminder")
    params.check()
    m = params.hidden
    h = nx.Tensor(np.zeros((m, 1)))
    c = nx.Tensor(np.zeros((m, 1)))
    for x in seq:
        if x.shape != (m, 1):
            raise DimensionError(f"word vector shape {x.shape}, expected ({m}, 1)")
        h, c = lstm_step(x, h, c, params)
    return h
