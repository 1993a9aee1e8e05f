"""Subword vocabulary (BPE-style merges, ``##`` continuations), encoding and MLM masking."""

from __future__ import annotations

import heapq
from collections import Counter
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .corpus import normalize_tweet

PAD, UNK, CLS, SEP, MASK = "[PAD]", "[UNK]", "[CLS]", "[SEP]", "[MASK]"
SPECIALS = (PAD, UNK, CLS, SEP, MASK)
PAD_ID, UNK_ID, CLS_ID, SEP_ID, MASK_ID = range(5)
NUM_SPECIAL = len(SPECIALS)
CONT = "##"
NOT_MASKED = -100

DEFAULT_VOCAB_SIZE = 8000
DEFAULT_MAX_LEN = 64


class CapacityError(ValueError):
    pass


class VocabFormatError(ValueError):
    pass


class Vocab:
    """Immutable token <-> id bijection with the five specials at ids 0-4."""

    def __init__(self, tokens: Sequence[str]):
        tokens = tuple(tokens)
        if tokens[:NUM_SPECIAL] != SPECIALS:
            raise VocabFormatError(f"first tokens must be {SPECIALS}")
        id_of = {}
        for i, tok in enumerate(tokens):
            if not tok or any(ch.isspace() for ch in tok):
                raise VocabFormatError(f"invalid token {tok!r} at id {i}")
            if tok in id_of:
                raise VocabFormatError(f"duplicate token {tok!r}")
            id_of[tok] = i
        self.tokens = tokens
        self.id_of = id_of
        self._max_piece = max((len(t) - (2 if t.startswith(CONT) else 0)
                               for t in tokens[NUM_SPECIAL:]), default=0)

    def __len__(self):
        return len(self.tokens)

    def __contains__(self, token):
        return token in self.id_of

    def __eq__(self, other):
        return isinstance(other, Vocab) and self.tokens == other.tokens

    def __hash__(self):
        return hash(self.tokens)

    def __repr__(self):
        return f"Vocab(size={len(self)})"

    def save(self, path) -> None:
        Path(path).write_text("".join(t + "\n" for t in self.tokens), encoding="utf-8")

    @classmethod
    def load(cls, path) -> "Vocab":
        text = Path(path).read_text(encoding="utf-8")
        lines = text.split("\n")
        if lines and lines[-1] == "":
            lines.pop()
        return cls(lines)

    def segment(self, word: str) -> list[str]:
        """Greedy longest-match split of one word; ``[UNK]`` if any residue fails."""
        pieces = []
        start = 0
        while start < len(word):
            end = min(len(word), start + self._max_piece)
            found = None
            while end > start:
                piece = word[start:end] if start == 0 else CONT + word[start:end]
                if piece in self.id_of:
                    found = piece
                    break
                end -= 1
            if found is None:
                return [UNK]
            pieces.append(found)
            start = end
        return pieces

    def tokenize(self, text: str) -> list[str]:
        out = []
        for word in text.split():
            out.extend(self.segment(word))
        return out


def _merged(a: str, b: str) -> str:
    return a + b[len(CONT):]


def _pairs(symbols):
    return zip(symbols, symbols[1:])


def build_vocab(corpus: Iterable[str], max_size: int = DEFAULT_VOCAB_SIZE,
                min_freq: int = 2) -> Vocab:
    """Train a BPE-style subword vocabulary.

    Every corpus character gets both a word-initial token ``c`` and a
    continuation token ``##c``. The remaining slots are filled by repeatedly
    merging the most frequent adjacent symbol pair (counted over word
    frequencies); ties go to the lexicographically smallest merged token,
    then to the smallest pair. Merging stops when the vocabulary is full or
    the best pair occurs fewer than ``min_freq`` times.
    """
    word_freq = Counter(w for text in corpus for w in text.split())
    chars = sorted({ch for w in word_freq for ch in w})
    needed = NUM_SPECIAL + 2 * len(chars)
    if max_size < needed:
        raise CapacityError(f"max_size {max_size} cannot hold the {NUM_SPECIAL} specials "
                            f"and {len(chars)} characters in both forms ({needed})")
    tokens = list(SPECIALS)
    for ch in chars:
        tokens += [ch, CONT + ch]
    known = set(tokens)

    words = sorted(word_freq)
    freqs = [word_freq[w] for w in words]
    symbols = [[w[0]] + [CONT + ch for ch in w[1:]] for w in words]

    counts: Counter = Counter()
    where: dict[tuple[str, str], set[int]] = {}
    for wi, syms in enumerate(symbols):
        for p in _pairs(syms):
            counts[p] += freqs[wi]
            where.setdefault(p, set()).add(wi)
    heap = [(-c, _merged(*p), p) for p, c in counts.items()]
    heapq.heapify(heap)

    while len(tokens) < max_size and heap:
        negc, merged, pair = heapq.heappop(heap)
        if counts.get(pair, 0) != -negc or negc == 0:
            continue  # stale entry
        if -negc < min_freq:
            break
        touched: set[tuple[str, str]] = set()
        for wi in sorted(where.pop(pair, ())):
            syms = symbols[wi]
            f = freqs[wi]
            for p in _pairs(syms):
                counts[p] -= f
                touched.add(p)
            new = []
            i = 0
            while i < len(syms):
                if i + 1 < len(syms) and (syms[i], syms[i + 1]) == pair:
                    new.append(merged)
                    i += 2
                else:
                    new.append(syms[i])
                    i += 1
            symbols[wi] = new
            for p in _pairs(new):
                counts[p] += f
                touched.add(p)
                where.setdefault(p, set()).add(wi)
        for p in touched:
            c = counts[p]
            if c <= 0:
                del counts[p]
                where.pop(p, None)
            else:
                heapq.heappush(heap, (-c, _merged(*p), p))
        if merged not in known:
            known.add(merged)
            tokens.append(merged)
    return Vocab(tokens)


@dataclass(frozen=True)
class TokenSequence:
    ids: tuple[int, ...]
    segment_ids: tuple[int, ...]
    attention_mask: tuple[int, ...]
    special_positions: frozenset

    def __len__(self):
        return len(self.ids)


def encode(vocab: Vocab, text: str, pair: str | None = None,
           max_len: int = DEFAULT_MAX_LEN, pad: bool = True) -> TokenSequence:
    """Pack ``[CLS] text [SEP]`` (segment 0) and optionally ``pair [SEP]`` (segment 1).

    When the packed length exceeds ``max_len`` the longer segment loses its
    last token first (the pair segment on ties).
    """
    if max_len < 4:
        raise ValueError("max_len must be at least 4")
    a = [vocab.id_of[t] for t in vocab.tokenize(text)]
    b = [vocab.id_of[t] for t in vocab.tokenize(pair)] if pair is not None else []
    budget = max_len - (3 if pair is not None else 2)
    while len(a) + len(b) > budget:
        if len(a) > len(b):
            a.pop()
        else:
            b.pop()

    ids = [CLS_ID] + a + [SEP_ID]
    segs = [0] * len(ids)
    specials = {0, len(ids) - 1}
    if pair is not None:
        ids += b + [SEP_ID]
        segs += [1] * (len(b) + 1)
        specials.add(len(ids) - 1)
    mask = [1] * len(ids)
    if pad:
        n_pad = max_len - len(ids)
        ids += [PAD_ID] * n_pad
        segs += [0] * n_pad
        mask += [0] * n_pad
    return TokenSequence(tuple(ids), tuple(segs), tuple(mask), frozenset(specials))


def decode(vocab: Vocab, ids: Iterable[int]) -> str:
    words: list[str] = []
    for i in ids:
        i = int(i)
        if not 0 <= i < len(vocab):
            raise IndexError(f"token id {i} outside vocabulary of size {len(vocab)}")
        if i < NUM_SPECIAL:
            continue
        tok = vocab.tokens[i]
        if tok.startswith(CONT) and words:
            words[-1] += tok[len(CONT):]
        else:
            words.append(tok)
    return " ".join(words)


@dataclass(frozen=True)
class MaskedBatch:
    inputs: tuple[TokenSequence, ...]
    mlm_labels: tuple[tuple[int, ...], ...]

    @property
    def n_masked(self) -> int:
        return sum(lab != NOT_MASKED for row in self.mlm_labels for lab in row)


def apply_mlm_mask(batch: Sequence[TokenSequence], rate: float, seed: int,
                   random_replace: bool = False, vocab_size: int | None = None) -> MaskedBatch:
    """Select each real, non-special position with probability ``rate``.

    Selected inputs become ``[MASK]`` and their original id is kept as the
    label. With ``random_replace`` the 80/10/10 mask/random/keep variant is
    used instead, which needs ``vocab_size``.
    """
    if not 0.0 <= rate <= 1.0:
        raise ValueError("rate must lie in [0, 1]")
    if random_replace and (vocab_size is None or vocab_size <= NUM_SPECIAL):
        raise ValueError("random_replace needs a vocab_size larger than the specials")
    rng = np.random.default_rng(seed)
    inputs, labels = [], []
    for seq in batch:
        n = len(seq.ids)
        ids = np.array(seq.ids, dtype=np.int64)
        eligible = np.array(seq.attention_mask, dtype=bool)
        for p in seq.special_positions:
            eligible[p] = False
        chosen = eligible & (rng.random(n) < rate)
        lab = np.full(n, NOT_MASKED, dtype=np.int64)
        lab[chosen] = ids[chosen]
        if random_replace:
            action = rng.random(n)
            rand_ids = rng.integers(NUM_SPECIAL, vocab_size, n)
            new = np.where(action < 0.8, MASK_ID, np.where(action < 0.9, rand_ids, ids))
            ids = np.where(chosen, new, ids)
        else:
            ids[chosen] = MASK_ID
        inputs.append(TokenSequence(tuple(int(x) for x in ids), seq.segment_ids,
                                    seq.attention_mask, seq.special_positions))
        labels.append(tuple(int(x) for x in lab))
    return MaskedBatch(tuple(inputs), tuple(labels))


def stack_sequences(seqs: Sequence[TokenSequence], trim: bool = True):
    """Stack equal-length sequences into (ids, segment_ids, attention_mask) arrays.

    With ``trim`` the trailing columns that are padding in every row are dropped.
    """
    lengths = {len(s) for s in seqs}
    if len(lengths) != 1:
        raise ValueError(f"sequences must share one padded length, got {sorted(lengths)}")
    ids = np.array([s.ids for s in seqs], dtype=np.int64)
    segs = np.array([s.segment_ids for s in seqs], dtype=np.int64)
    mask = np.array([s.attention_mask for s in seqs], dtype=np.int64)
    if trim:
        real = np.flatnonzero(mask.any(axis=0))
        width = int(real[-1]) + 1 if real.size else 1
        ids, segs, mask = ids[:, :width], segs[:, :width], mask[:, :width]
    return ids, segs, mask


@dataclass(frozen=True)
class TextEncoder:
    """Turns LabeledTweets into TokenSequences: tweet as segment 0, topic as segment 1."""

    vocab: Vocab
    max_len: int = DEFAULT_MAX_LEN
    use_topic: bool = True
    lowercase: bool = True

    def encode_example(self, ex) -> TokenSequence:
        pair = None
        if self.use_topic and ex.topic is not None:
            pair = normalize_tweet(ex.topic, self.lowercase)
        return encode(self.vocab, ex.norm_text, pair, self.max_len)

    def encode_dataset(self, ds) -> list[TokenSequence]:
        return [self.encode_example(ex) for ex in ds.examples]
